"""Warm-start benchmark: scaling iterations per initialization, as CSV.

For every instance (a measure pair) and every requested initialization,
the scaling iteration runs under one shared configuration; checkpoints
land in a trace table and iterations-to-MCV-threshold statistics (mean
with a normal-approximation 95% confidence interval) land in a summary
table.  Thresholds are resolved at checkpoint granularity; instances that
never reach a threshold count as ``max_iters`` and are logged.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .exact import solve_exact
from .sinkhorn import relative_distance_error, sinkhorn_run, warm_start_vector
from .train import resolve_workers

logger = logging.getLogger(__name__)

__all__ = [
    "BenchResult",
    "run_benchmark",
    "write_trace_csv",
    "write_summary_csv",
    "summarize_traces",
    "iterations_to_threshold",
    "TRACE_FIELDS",
    "SUMMARY_FIELDS",
]

TRACE_FIELDS = ("instance_id", "init", "iteration", "mcv", "rel_err", "wall_time_ns")
SUMMARY_FIELDS = ("dataset", "init", "threshold", "mean_iters", "ci95", "samples")


@dataclass
class BenchResult:
    trace_rows: list = field(default_factory=list)
    summary_rows: list = field(default_factory=list)
    exact_values: list = field(default_factory=list)


def iterations_to_threshold(iterations, mcv, threshold, max_iters):
    """First checkpoint iteration with mcv <= threshold, else max_iters."""
    hits = np.nonzero(mcv <= threshold)[0]
    if hits.size == 0:
        return max_iters, False
    return int(iterations[hits[0]]), True


def _bench_instance(args):
    instance_id, mu, nu, cost, cfg, inits, model = args
    exact_value = solve_exact(mu, nu, cost).primal_value
    out_rows = []
    reach = {}
    for init in inits:
        if init == "ones":
            v0 = None
            construction_ns = 0
        elif init == "net":
            t0 = time.monotonic_ns()
            f_pred = model.predict_potential(mu.weights, nu.weights)
            v0 = warm_start_vector(f_pred, cost, cfg)
            construction_ns = time.monotonic_ns() - t0
        else:
            raise ValueError(f"unknown initialization {init!r}")
        trace = sinkhorn_run(mu, nu, cost, cfg, v0=v0, extra_time_ns=construction_ns)
        rel = relative_distance_error(trace, exact_value)
        for k in range(trace.iterations.shape[0]):
            out_rows.append(
                (
                    instance_id,
                    init,
                    int(trace.iterations[k]),
                    float(trace.mcv[k]),
                    float(rel[k]),
                    int(trace.wall_time_ns[k]),
                )
            )
        reach[init] = (trace.iterations, trace.mcv)
    return instance_id, exact_value, out_rows, reach


def run_benchmark(
    pairs,
    cost,
    cfg,
    inits=("ones",),
    model=None,
    thresholds=(1e-2, 1e-3),
    dataset_name="dataset",
    workers=None,
):
    """Benchmark every (mu, nu) pair under every initialization.

    ``model`` (an approximator) is required when "net" is among the
    initializations; its prediction time is charged to the run's wall
    clock.  Instances fan out across ``workers`` processes (default: the
    OTWS_THREADS environment variable, then the CPU count).
    """
    if "net" in inits and model is None:
        raise ValueError("initialization 'net' needs a model")
    jobs = [
        (k, mu, nu, cost, cfg, tuple(inits), model) for k, (mu, nu) in enumerate(pairs)
    ]
    workers = resolve_workers(workers)
    if workers <= 1 or len(jobs) <= 1:
        per_instance = [_bench_instance(job) for job in jobs]
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(workers) as pool:
            per_instance = pool.map(_bench_instance, jobs)

    result = BenchResult()
    hit_table = {(init, thr): [] for init in inits for thr in thresholds}
    for _, exact_value, rows, reach in per_instance:
        result.exact_values.append(exact_value)
        result.trace_rows.extend(rows)
        for init in inits:
            iters, mcv = reach[init]
            for thr in thresholds:
                it, reached = iterations_to_threshold(iters, mcv, thr, cfg.max_iters)
                if not reached:
                    logger.warning(
                        "instance did not reach MCV threshold %g within %d iterations (init=%s)",
                        thr,
                        cfg.max_iters,
                        init,
                    )
                hit_table[(init, thr)].append(it)

    for init in inits:
        for thr in thresholds:
            values = np.asarray(hit_table[(init, thr)], dtype=np.float64)
            mean = float(values.mean())
            ci95 = (
                float(1.96 * values.std(ddof=1) / np.sqrt(values.size))
                if values.size > 1
                else 0.0
            )
            result.summary_rows.append(
                (dataset_name, init, thr, mean, ci95, int(values.size))
            )
    return result


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for row in rows:
            writer.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4]), row[5]])


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for dataset, init, thr, mean, ci95, samples in rows:
            writer.writerow([dataset, init, repr(thr), repr(mean), repr(ci95), samples])


def summarize_traces(trace_rows, thresholds, max_iters, dataset_name="dataset"):
    """Recompute summary rows from raw trace rows (independent of run state)."""
    by_key = {}
    for instance_id, init, iteration, mcv, _, _ in trace_rows:
        by_key.setdefault((instance_id, init), []).append((iteration, mcv))
    inits = sorted({init for _, init in by_key})
    rows = []
    for init in inits:
        for thr in thresholds:
            values = []
            for (instance_id, row_init), recs in sorted(by_key.items()):
                if row_init != init:
                    continue
                recs = sorted(recs)
                iters = np.asarray([r[0] for r in recs])
                mcv = np.asarray([r[1] for r in recs])
                it, _ = iterations_to_threshold(iters, mcv, thr, max_iters)
                values.append(it)
            values = np.asarray(values, dtype=np.float64)
            mean = float(values.mean())
            ci95 = (
                float(1.96 * values.std(ddof=1) / np.sqrt(values.size))
                if values.size > 1
                else 0.0
            )
            rows.append((dataset_name, init, thr, mean, ci95, int(values.size)))
    return rows
