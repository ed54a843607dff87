"""Adversarial training loop on supervised dual-potential targets.

Each outer iteration samples a latent batch, generates measure pairs,
computes their exact dual potentials (the dominant cost, parallelized
across workers), centers them to zero sum, then runs several inner epochs
of approximator descent over shuffled minibatches - once per minibatch on
the (mu, nu) ordering against f and once on the swapped (nu, mu) ordering
against the conjugate of f.  Finally the generator takes one ascent step
on the approximator's error, with the target held constant and the
approximator frozen.  Both learning rates decay geometrically per outer
iteration.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailure
from .exact import solve_exact
from .measures import CTransformDirection, DiscreteMeasure, c_transform
from .nn import Adam, mse, mse_grad

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainLogRow",
    "train_loop",
    "generator_step",
    "alt_loss_ws",
    "run_loss_comparison",
    "heldout_potential_mse",
    "resolve_workers",
]


def resolve_workers(explicit=None):
    """Worker count for parallel maps: explicit > OTWS_THREADS > cpu count."""
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get("OTWS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the adversarial loop.

    Defaults follow the published recipe: batches of 500 split into
    minibatches of 100, 5 inner epochs, initial learning rates 2.352
    (approximator) and 0.2352 (generator), both decayed by 0.99 per outer
    iteration.  Training stops once ``total_unique_samples`` latents have
    been consumed.
    """

    total_unique_samples: int
    seed: int
    batch_size: int = 500
    minibatch_size: int = 100
    inner_epochs: int = 5
    lr_approximator: float = 2.352
    lr_generator: float = 0.2352
    lr_decay: float = 0.99
    checkpoint_every: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.batch_size % self.minibatch_size != 0:
            raise ValueError("minibatch_size must divide batch_size")
        if self.total_unique_samples % self.batch_size != 0:
            raise ValueError("total_unique_samples must be a multiple of batch_size")
        if self.lr_approximator <= 0.0 or self.lr_generator <= 0.0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass(frozen=True)
class TrainLogRow:
    outer: int
    samples_consumed: int
    lr_approximator: float
    lr_generator: float
    loss_pre: float
    loss_post: float
    generator_objective: float
    dropped: int
    target_wall_ns: int
    rng_digest: str


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    FIELDS = (
        "outer",
        "samples_consumed",
        "lr_approximator",
        "lr_generator",
        "loss_pre",
        "loss_post",
        "generator_objective",
        "dropped",
        "target_wall_ns",
        "rng_digest",
    )

    #: columns that vary run to run even under a fixed seed
    WALL_TIME_FIELDS = ("target_wall_ns",)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for row in self.rows:
                writer.writerow([repr(getattr(row, f)) if isinstance(getattr(row, f), float)
                                 else getattr(row, f) for f in self.FIELDS])


def _rng_digest(rng):
    state = repr(rng.bit_generator.state).encode()
    return hashlib.sha256(state).hexdigest()[:16]


# worker-process state for parallel ground-truth solves
_worker_cost = None
_worker_geometry = None


def _init_worker(cost, geometry):
    global _worker_cost, _worker_geometry
    _worker_cost = cost
    _worker_geometry = geometry


def _solve_one(args):
    mu_w, nu_w = args
    try:
        mu = DiscreteMeasure(mu_w, _worker_geometry)
        nu = DiscreteMeasure(nu_w, _worker_geometry)
        return solve_exact(mu, nu, _worker_cost).duals.f
    except (SolverFailure, ValueError) as exc:  # pragma: no cover - defensive
        logger.warning("dropping sample: %s", exc)
        return None


def compute_targets(mu_batch, nu_batch, cost, geometry, workers=1):
    """Exact zero-sum potentials for a batch of pairs; None marks a failure."""
    jobs = [(mu_batch[k], nu_batch[k]) for k in range(mu_batch.shape[0])]
    if workers <= 1:
        _init_worker(cost, geometry)
        return [_solve_one(job) for job in jobs]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(workers, initializer=_init_worker, initargs=(cost, geometry)) as pool:
        return pool.map(_solve_one, jobs)


def _conjugate_rows(targets, cost):
    """Row-wise hard-minimum conjugate of a (B, m) target matrix."""
    out = np.empty_like(targets)
    for k in range(targets.shape[0]):
        out[k] = c_transform(targets[k], cost, CTransformDirection.ROWS_TO_COLS)
    return out


def _epoch_rng(seed, outer, epoch):
    return np.random.default_rng([seed, outer, epoch])


def generator_step(gen, approx, z_batch, targets, lr, optimizer=None):
    """One ascent step on the generator against fixed targets.

    Runs a fresh generator forward on ``z_batch``, evaluates the
    approximator's MSE against ``targets`` (held constant), and moves the
    generator parameters up the gradient.  The approximator is used in
    train mode but its parameters, gradients, and running statistics are
    left untouched.  With ``optimizer=None`` this is a plain gradient
    ascent step of size ``lr``; passing an :class:`~otws.nn.Adam` bound to
    the generator's parameters uses that instead.

    Returns the objective value before the step.
    """
    mu_b, nu_b = gen.forward(z_batch)
    pred = approx.forward(mu_b, nu_b, train=True, update_running=False)
    objective = mse(pred, targets)
    dmu, dnu = approx.backward(mse_grad(pred, targets))
    approx.zero_grad()
    gen.zero_grad()
    gen.backward_params(dmu, dnu)
    if optimizer is None:
        for _, value, grad in gen.params():
            value += lr * grad
    else:
        optimizer.step(lr, maximize=True)
    gen.zero_grad()
    return objective


def train_loop(gen, approx, cost, cfg, checkpoint_dir=None):
    """Run the full adversarial loop; mutates both models, returns a TrainLog.

    Ground-truth solves that fail are dropped from the batch with a
    warning; a batch losing half or more of its samples aborts the run.
    """
    from .measures import GridGeometry

    n = gen.config.n
    side = int(round(np.sqrt(n)))
    geometry = GridGeometry.regular(side, side)
    if cost.shape != (n, n):
        raise ValueError("cost dimensions disagree with the generator output")

    rng = np.random.default_rng(cfg.seed)
    adam_phi = Adam(approx.params())
    adam_theta = Adam(gen.params())
    workers = resolve_workers(cfg.workers)
    log = TrainLog()
    outer_total = cfg.total_unique_samples // cfg.batch_size

    for outer in range(outer_total):
        lr_a = cfg.lr_approximator * cfg.lr_decay**outer
        lr_g = cfg.lr_generator * cfg.lr_decay**outer
        digest = _rng_digest(rng)

        z = rng.standard_normal((cfg.batch_size, gen.config.latent_dim))
        mu_b, nu_b = gen.forward(z)

        t0 = time.monotonic_ns()
        raw_targets = compute_targets(mu_b, nu_b, cost, geometry, workers)
        target_wall_ns = time.monotonic_ns() - t0

        keep = [k for k, f in enumerate(raw_targets) if f is not None]
        dropped = cfg.batch_size - len(keep)
        if dropped * 2 >= cfg.batch_size:
            raise SolverFailure(
                f"{dropped}/{cfg.batch_size} ground-truth solves failed in outer "
                f"iteration {outer + 1}"
            )
        if dropped:
            logger.warning("outer %d: dropped %d samples", outer + 1, dropped)
            z = z[keep]
            mu_b = mu_b[keep]
            nu_b = nu_b[keep]
        targets = np.stack([raw_targets[k] for k in keep])
        targets_swapped = _conjugate_rows(targets, cost)

        batch = targets.shape[0]
        loss_pre = mse(approx.forward(mu_b, nu_b, train=True, update_running=False), targets)

        last_idx = None
        for epoch in range(cfg.inner_epochs):
            perm = _epoch_rng(cfg.seed, outer, epoch).permutation(batch)
            for start in range(0, batch, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                approx.zero_grad()
                pred = approx.forward(mu_b[idx], nu_b[idx], train=True)
                approx.backward(mse_grad(pred, targets[idx]))
                adam_phi.step(lr_a)
                approx.zero_grad()
                pred_sw = approx.forward(nu_b[idx], mu_b[idx], train=True)
                approx.backward(mse_grad(pred_sw, targets_swapped[idx]))
                adam_phi.step(lr_a)
                last_idx = idx

        loss_post = mse(approx.forward(mu_b, nu_b, train=True, update_running=False), targets)
        gen_objective = generator_step(
            gen, approx, z[last_idx], targets[last_idx], lr_g, optimizer=adam_theta
        )

        log.rows.append(
            TrainLogRow(
                outer=outer + 1,
                samples_consumed=(outer + 1) * cfg.batch_size,
                lr_approximator=lr_a,
                lr_generator=lr_g,
                loss_pre=loss_pre,
                loss_post=loss_post,
                generator_objective=gen_objective,
                dropped=dropped,
                target_wall_ns=target_wall_ns,
                rng_digest=digest,
            )
        )

        if checkpoint_dir is not None and cfg.checkpoint_every > 0:
            if (outer + 1) % cfg.checkpoint_every == 0:
                from .data import save_checkpoint

                save_checkpoint(
                    gen,
                    approx,
                    os.path.join(checkpoint_dir, f"checkpoint_{outer + 1:05d}.otck"),
                    seed=cfg.seed,
                    outer_iterations=outer + 1,
                    samples_consumed=(outer + 1) * cfg.batch_size,
                )

    return log


def alt_loss_ws(approx, mu, nu, cost):
    """Dual-ascent loss -(<f, mu> + <f^C, nu>) at the eval-mode prediction.

    By weak duality this is bounded below by minus the exact transport
    cost, with equality at an optimal potential.
    """
    f = approx.predict_potential(mu.weights, nu.weights)
    g = c_transform(f, cost, CTransformDirection.ROWS_TO_COLS)
    return float(-(np.sum(f * mu.weights) + np.sum(g * nu.weights)))


def _ws_loss_grad_batch(preds, mu_b, nu_b, cost):
    """Value and d/df of the dual-ascent loss, summed over a batch.

    The conjugate's hard minimum is subdifferentiated by routing each
    column's gradient to its argmin row (ties to the smallest index).
    """
    batch = preds.shape[0]
    grad = np.empty_like(preds)
    total = 0.0
    C = cost.entries
    for k in range(batch):
        diff = C - preds[k][:, None]
        arg = np.argmin(diff, axis=0)
        gvals = diff[arg, np.arange(C.shape[1])]
        total += -(np.sum(preds[k] * mu_b[k]) + np.sum(gvals * nu_b[k]))
        gk = -mu_b[k].copy()
        np.add.at(gk, arg, nu_b[k])
        grad[k] = gk
    return total / batch, grad / batch


def heldout_potential_mse(approx, mu_batch, nu_batch, targets, center=True):
    """Eval-mode MSE against exact potentials.

    Predictions are re-centered to zero sum by default so that methods
    trained with a shift-invariant loss are compared fairly against the
    zero-sum targets.
    """
    pred = approx.forward(mu_batch, nu_batch, train=False)
    if center:
        pred = pred - pred.mean(axis=1, keepdims=True)
    return mse(pred, targets)


def run_loss_comparison(gen, approx_factory, cost, cfg, heldout):
    """Train two identically seeded approximators, one per loss function.

    Both see the exact same sample stream from the (frozen) generator and
    take the same number of optimizer steps per minibatch - the supervised
    run descends the MSE against exact potentials (both input orderings),
    the alternative descends the dual-ascent loss on the same orderings.
    Returns held-out potential MSE for (supervised, alternative, untrained).

    ``approx_factory()`` must build a freshly initialized approximator;
    ``heldout`` is a (mu_batch, nu_batch, targets) triple.
    """
    from .measures import GridGeometry

    n = gen.config.n
    side = int(round(np.sqrt(n)))
    geometry = GridGeometry.regular(side, side)
    mu_h, nu_h, f_h = heldout

    approx_pot = approx_factory()
    approx_ws = approx_factory()
    base = heldout_potential_mse(approx_pot, mu_h, nu_h, f_h)

    adam_pot = Adam(approx_pot.params())
    adam_ws = Adam(approx_ws.params())
    rng = np.random.default_rng(cfg.seed)
    workers = resolve_workers(cfg.workers)
    outer_total = cfg.total_unique_samples // cfg.batch_size

    for outer in range(outer_total):
        lr_a = cfg.lr_approximator * cfg.lr_decay**outer
        z = rng.standard_normal((cfg.batch_size, gen.config.latent_dim))
        mu_b, nu_b = gen.forward(z)
        raw_targets = compute_targets(mu_b, nu_b, cost, geometry, workers)
        keep = [k for k, f in enumerate(raw_targets) if f is not None]
        mu_b, nu_b = mu_b[keep], nu_b[keep]
        targets = np.stack([raw_targets[k] for k in keep])
        targets_swapped = _conjugate_rows(targets, cost)
        batch = targets.shape[0]

        for epoch in range(cfg.inner_epochs):
            perm = _epoch_rng(cfg.seed, outer, epoch).permutation(batch)
            for start in range(0, batch, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                for ordering in range(2):
                    a = (mu_b, nu_b, targets) if ordering == 0 else (nu_b, mu_b, targets_swapped)
                    x1, x2, tgt = a

                    approx_pot.zero_grad()
                    pred = approx_pot.forward(x1[idx], x2[idx], train=True)
                    approx_pot.backward(mse_grad(pred, tgt[idx]))
                    adam_pot.step(lr_a)

                    approx_ws.zero_grad()
                    pred = approx_ws.forward(x1[idx], x2[idx], train=True)
                    _, grad = _ws_loss_grad_batch(pred, x1[idx], x2[idx], cost)
                    approx_ws.backward(grad)
                    adam_ws.step(lr_a)

    return (
        heldout_potential_mse(approx_pot, mu_h, nu_h, f_h),
        heldout_potential_mse(approx_ws, mu_h, nu_h, f_h),
        base,
    )
