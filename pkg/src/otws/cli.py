"""Command-line surface: reproducible experiments as CSV and binary files.

Every command writes a run manifest next to its outputs recording the
resolved configuration, seed, and content hashes of its inputs;
``otws rerun MANIFEST`` replays the recorded invocation.  Randomized
commands derive and print a seed when none is given.  Worker parallelism
is capped by the OTWS_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import secrets
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from .barycenter import BarycenterConfig, barycenter_descent
from .exact import solve_exact, verify_certificate
from .measures import GridGeometry, build_cost, marginal_constraint_violation
from .models import Approximator, ApproximatorConfig, Generator, GeneratorConfig
from .sinkhorn import SinkhornConfig, sinkhorn_run, warm_start_vector
from .train import TrainConfig, train_loop

__all__ = ["main"]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, subcommand, argv, config, seed, inputs, outputs):
    manifest = {
        "subcommand": subcommand,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "input_hashes": {p: _sha256(p) for p in inputs},
        "outputs": [os.path.abspath(p) for p in outputs],
        "created_ns": time.time_ns(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _resolve_seed(args):
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed: {args.seed}")
    return args.seed


def _args_config(args):
    """The resolved configuration of a run, as plain JSON-safe values."""
    return {k: v for k, v in vars(args).items() if k not in ("func", "needs_out")}


def _parse_dataset_spec(text):
    kind, _, rest = text.partition(":")
    fields = {}
    for item in rest.split(","):
        if not item:
            continue
        key, _, value = item.partition("=")
        fields[key.strip()] = value.strip()
    count = int(fields.get("count", 1))
    if "n" in fields:
        n = int(fields["n"])
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise ValueError(f"dataset size n={n} is not a square grid")
        rows = cols = side
    else:
        rows = int(fields.get("rows", 0))
        cols = int(fields.get("cols", 0))
    spec = data_mod.DatasetSpec(
        kind=kind,
        count=count,
        rows=rows,
        cols=cols,
        delta=float(fields.get("delta", data_mod.DEFAULT_DELTA)),
        seed=int(fields.get("seed", 0)),
    )
    return spec


def _load_dataset(arg):
    """Measures from a file path or an inline spec like random_r3:count=4,n=64,seed=1.

    Returns (measures, input_paths) where input_paths feeds manifest hashing.
    """
    if os.path.exists(arg):
        with open(arg, "rb") as fh:
            magic = fh.read(4)
        if magic == data_mod.RAW_GRID_MAGIC:
            return data_mod.load_raw_grid(arg), [arg]
        return data_mod.load_idx_images(arg), [arg]
    spec = _parse_dataset_spec(arg)
    if spec.kind != "random_r3":
        raise ValueError(f"inline specs support only random_r3, got {spec.kind!r}")
    return data_mod.gen_random_r3(spec), []


def _pair_up(measures):
    if len(measures) < 2:
        raise ValueError("need at least two measures to form a pair")
    return [(measures[2 * k], measures[2 * k + 1]) for k in range(len(measures) // 2)]


def _cost_for(measures, power):
    g = measures[0].geometry
    geometry = GridGeometry.regular(g.rows, g.cols)
    return build_cost(geometry, geometry, power)


def _load_model(path):
    _, approx, header = data_mod.load_checkpoint(path)
    return approx, header


def _cmd_gen_data(args, argv):
    seed = _resolve_seed(args)
    side = int(round(np.sqrt(args.n)))
    if side * side != args.n:
        raise ValueError(f"--n {args.n} is not a square grid size")
    spec = data_mod.DatasetSpec(
        kind=args.kind, count=args.count, rows=side, cols=side, delta=args.delta, seed=seed
    )
    measures = data_mod.gen_random_r3(spec)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "dataset.otg")
    data_mod.save_raw_grid(measures, out_path)
    _write_manifest(
        args.out, "gen-data", argv, _args_config(args) | {"spec": spec.__dict__}, seed, [], [out_path]
    )
    print(f"wrote {len(measures)} measures to {out_path}")
    return 0


def _cmd_solve(args, argv):
    measures, inputs = _load_dataset(args.dataset)
    mu, nu = _pair_up(measures)[args.pair]
    cost = _cost_for(measures, args.power)
    sol = solve_exact(mu, nu, cost)
    report = verify_certificate(sol, mu, nu, cost)
    print(f"primal value: {sol.primal_value!r}")
    print(f"duality gap:  {sol.gap!r}")
    print(f"certificate:  {'ok' if report.all_ok else 'FAILED'}")
    outputs = []
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if args.dump_plan:
            path = os.path.join(args.out, "plan.csv")
            data_mod.matrix_to_csv(sol.plan.entries, path)
            outputs.append(path)
        if args.dump_duals:
            path = os.path.join(args.out, "duals.csv")
            with open(path, "w") as fh:
                fh.write("side,index,value\n")
                for i, v in enumerate(sol.duals.f):
                    fh.write(f"f,{i},{v!r}\n")
                for j, v in enumerate(sol.duals.g):
                    fh.write(f"g,{j},{v!r}\n")
            outputs.append(path)
        _write_manifest(args.out, "solve", argv, _args_config(args), args.seed, inputs, outputs)
    return 0 if report.all_ok else 1


def _sinkhorn_cfg(args):
    return SinkhornConfig(
        eps=args.eps,
        max_iters=args.max_iters,
        check_every=args.check_every,
        stop_mcv=args.stop_mcv,
        domain=args.domain,
    )


def _cmd_sinkhorn(args, argv):
    measures, inputs = _load_dataset(args.dataset)
    mu, nu = _pair_up(measures)[args.pair]
    cost = _cost_for(measures, args.power)
    cfg = _sinkhorn_cfg(args)
    if args.init == "net":
        if not args.model:
            raise ValueError("--init net needs --model")
        approx, _ = _load_model(args.model)
        inputs = inputs + [args.model]
        f_pred = approx.predict_potential(mu.weights, nu.weights)
        v0 = warm_start_vector(f_pred, cost, cfg)
    else:
        v0 = None
    trace = sinkhorn_run(mu, nu, cost, cfg, v0=v0)
    final_mcv = float(trace.mcv[-1])
    plan_mcv = marginal_constraint_violation(trace.plan)
    print(f"iterations: {int(trace.iterations[-1])}")
    print(f"final mcv:  {final_mcv!r} (plan check {plan_mcv!r})")
    print(f"converged:  {trace.converged}")
    outputs = []
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "trace.csv")
        rows = [
            (args.pair, args.init, int(trace.iterations[k]), float(trace.mcv[k]), 0.0,
             int(trace.wall_time_ns[k]))
            for k in range(trace.iterations.shape[0])
        ]
        bench_mod.write_trace_csv(rows, path)
        outputs.append(path)
        _write_manifest(args.out, "sinkhorn", argv, _args_config(args), args.seed, inputs, outputs)
    return 0


def _cmd_train(args, argv):
    seed = _resolve_seed(args)
    side = int(round(np.sqrt(args.n)))
    if side * side != args.n:
        raise ValueError(f"--n {args.n} is not a square grid size")
    gcfg = GeneratorConfig(latent_dim=args.latent, n=args.n)
    acfg = ApproximatorConfig(n=args.n)
    rng = np.random.default_rng(seed)
    gen = Generator(gcfg, rng)
    approx = Approximator(acfg, rng)
    geometry = GridGeometry.regular(side, side)
    cost = build_cost(geometry, geometry, 2.0)
    cfg = TrainConfig(
        total_unique_samples=args.samples,
        seed=seed,
        batch_size=args.batch,
        minibatch_size=args.minibatch,
        inner_epochs=args.epochs,
        lr_approximator=args.lr_approx,
        lr_generator=args.lr_gen,
        lr_decay=args.decay,
        checkpoint_every=args.checkpoint_every,
    )
    os.makedirs(args.out, exist_ok=True)
    log = train_loop(gen, approx, cost, cfg, checkpoint_dir=args.out)
    model_path = os.path.join(args.out, "model.otck")
    data_mod.save_checkpoint(
        gen,
        approx,
        model_path,
        seed=seed,
        outer_iterations=len(log.rows),
        samples_consumed=args.samples,
    )
    log_path = os.path.join(args.out, "trainlog.csv")
    log.to_csv(log_path)
    _write_manifest(args.out, "train", argv, _args_config(args), seed, [], [model_path, log_path])
    print(f"trained on {args.samples} samples; model at {model_path}")
    return 0


def _cmd_bench(args, argv):
    measures, inputs = _load_dataset(args.dataset)
    pairs = _pair_up(measures)
    cost = _cost_for(measures, args.power)
    cfg = _sinkhorn_cfg(args)
    inits = args.init or ["ones"]
    model = None
    if "net" in inits:
        if not args.model:
            raise ValueError("--init net needs --model")
        model, _ = _load_model(args.model)
        inputs = inputs + [args.model]
    result = bench_mod.run_benchmark(
        pairs,
        cost,
        cfg,
        inits=inits,
        model=model,
        thresholds=tuple(args.threshold),
        dataset_name=args.dataset,
    )
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")
    summary_path = os.path.join(args.out, "summary.csv")
    bench_mod.write_trace_csv(result.trace_rows, trace_path)
    bench_mod.write_summary_csv(result.summary_rows, summary_path)
    _write_manifest(
        args.out, "bench", argv, _args_config(args), args.seed, inputs, [trace_path, summary_path]
    )
    for dataset, init, thr, mean, ci95, samples in result.summary_rows:
        print(f"{dataset} init={init} mcv<={thr:g}: {mean:.1f} +- {ci95:.1f} (n={samples})")
    return 0


def _cmd_barycenter(args, argv):
    measures, inputs = _load_dataset(args.dataset)
    cost = _cost_for(measures, args.power)
    approx = None
    if args.source == "approximator":
        if not args.model:
            raise ValueError("--source approximator needs --model")
        approx, _ = _load_model(args.model)
        inputs = inputs + [args.model]
    cfg = BarycenterConfig(
        step_size=args.step_size,
        max_steps=args.steps,
        source=args.source,
        simplex=args.simplex,
    )
    center, objectives = barycenter_descent(measures, cost, cfg, approximator=approx)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "barycenter.otg")
    data_mod.save_raw_grid([center], out_path)
    outputs = [out_path]
    if args.pgm:
        pgm_path = os.path.join(args.out, "barycenter.pgm")
        data_mod.save_pgm(center, pgm_path)
        outputs.append(pgm_path)
    obj_path = os.path.join(args.out, "objective.csv")
    with open(obj_path, "w") as fh:
        fh.write("step,objective\n")
        for k, v in enumerate(objectives):
            fh.write(f"{k},{v!r}\n")
    outputs.append(obj_path)
    _write_manifest(args.out, "barycenter", argv, _args_config(args), args.seed, inputs, outputs)
    print(f"final objective: {objectives[-1]!r} after {len(objectives)} steps")
    return 0


def _cmd_rerun(args, argv):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    return main(manifest["argv"])


def _apply_config_file(argv):
    """Inject values from --config FILE (JSON, keys = long flag names)."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2 :]
    with open(path) as fh:
        config = json.load(fh)
    for key, value in config.items():
        flag = f"--{key}"
        if flag in rest:
            continue
        if isinstance(value, bool):
            if value:
                rest.append(flag)
        elif isinstance(value, list):
            for item in value:
                rest.extend([flag, str(item)])
        else:
            rest.extend([flag, str(value)])
    return rest


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="otws",
        description="Discrete optimal transport with learned scaling-iteration warm starts",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, seed=True):
        p.add_argument("--out", default=None, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate a dataset file")
    p.add_argument("--kind", default="random_r3", choices=["random_r3"])
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n", type=int, required=True, help="grid cells per measure (square)")
    p.add_argument("--delta", type=float, default=data_mod.DEFAULT_DELTA)
    common(p)
    p.set_defaults(func=_cmd_gen_data, needs_out=True)

    p = sub.add_parser("solve", help="exact transport solve with certificate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--power", type=float, default=2.0)
    p.add_argument("--dump-plan", action="store_true")
    p.add_argument("--dump-duals", action="store_true")
    common(p)
    p.set_defaults(func=_cmd_solve, needs_out=False)

    def sinkhorn_flags(p):
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--max-iters", type=int, default=1000)
        p.add_argument("--check-every", type=int, default=25)
        p.add_argument("--stop-mcv", type=float, default=None)
        p.add_argument("--domain", default="log", choices=["log", "linear"])
        p.add_argument("--model", default=None)
        p.add_argument("--power", type=float, default=2.0)

    p = sub.add_parser("sinkhorn", help="one scaling-iteration run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--init", default="ones", choices=["ones", "net"])
    sinkhorn_flags(p)
    common(p)
    p.set_defaults(func=_cmd_sinkhorn, needs_out=False)

    p = sub.add_parser("train", help="adversarial training on exact potentials")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, required=True, help="total unique samples")
    p.add_argument("--latent", type=int, default=98)
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--minibatch", type=int, default=100)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr-approx", type=float, default=2.352)
    p.add_argument("--lr-gen", type=float, default=0.2352)
    p.add_argument("--decay", type=float, default=0.99)
    p.add_argument("--checkpoint-every", type=int, default=0)
    common(p)
    p.set_defaults(func=_cmd_train, needs_out=True)

    p = sub.add_parser("bench", help="warm-start benchmark over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--init", action="append", choices=["ones", "net"])
    p.add_argument("--threshold", type=float, action="append", default=None)
    sinkhorn_flags(p)
    common(p)
    p.set_defaults(func=_cmd_bench, needs_out=True)

    p = sub.add_parser("barycenter", help="dual-potential barycenter descent")
    p.add_argument("--dataset", required=True)
    p.add_argument("--source", default="exact", choices=["exact", "approximator"])
    p.add_argument("--model", default=None)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--simplex", default="euclidean_project",
                   choices=["euclidean_project", "softmax_reparam"])
    p.add_argument("--power", type=float, default=2.0)
    p.add_argument("--pgm", action="store_true")
    common(p)
    p.set_defaults(func=_cmd_barycenter, needs_out=True)

    p = sub.add_parser("rerun", help="replay a recorded manifest")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_rerun, needs_out=False)

    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    try:
        argv = _apply_config_file(argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 1
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.needs_out and not args.out:
        parser.error(f"{args.subcommand} requires --out")
    if getattr(args, "threshold", None) is None and args.subcommand == "bench":
        args.threshold = [1e-2, 1e-3]
    try:
        return args.func(args, argv)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
