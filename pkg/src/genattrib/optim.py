"""Adam, reduce-on-plateau scheduling and multi-start minimization.

The workhorse is :func:`descend`, which runs Adam on ``R`` independent
rows in lockstep.  Rows never interact (Adam is elementwise and the
objective is evaluated row by row), so a batch of restarts, or of
restarts for many probes at once, behaves exactly like running each row
on its own.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import NumericError, OptimizationFailure, UsageError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=0.01, **kw):
        p = np.asarray(params, dtype=np.float64)
        return cls(np.zeros_like(p), np.zeros_like(p), 0, lr, **kw)


def _adam_update(state: AdamState, params, grads, lr=None):
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    return params - (state.lr if lr is None else lr) * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update.

    Returns ``(new_params, state)``; ``state`` is advanced in place.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise UsageError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    bad = np.flatnonzero(~np.isfinite(grads.ravel()))
    if bad.size:
        raise NumericError(f"non-finite gradient at index {int(bad[0])}")
    return _adam_update(state, params, grads), state


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` stale steps.

    A step counts as an improvement when the loss drops below
    ``best * (1 - threshold)``.
    """

    factor: float = 0.5
    patience: int = 30
    threshold: float = 1e-4
    best: float = float("inf")
    num_bad: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise UsageError("plateau factor must lie in (0, 1)")
        if self.patience < 1:
            raise UsageError("plateau patience must be >= 1")

    def update(self, current_loss: float, current_lr: float) -> float:
        if current_loss < self.best * (1.0 - self.threshold):
            self.best = current_loss
            self.num_bad = 0
            return current_lr
        self.num_bad += 1
        if self.num_bad >= self.patience:
            self.num_bad = 0
            return current_lr * self.factor
        return current_lr

    def fresh(self) -> "PlateauScheduler":
        return PlateauScheduler(self.factor, self.patience, self.threshold)


def plateau_update(sched: PlateauScheduler, current_loss: float, current_lr: float) -> float:
    if not np.isfinite(current_loss):
        raise UsageError("plateau_update needs a finite loss")
    return sched.update(current_loss, current_lr)


class _PlateauBank:
    """Vectorized :class:`PlateauScheduler` over many rows."""

    def __init__(self, proto: PlateauScheduler, n: int):
        self.factor, self.patience, self.threshold = proto.factor, proto.patience, proto.threshold
        self.best = np.full(n, np.inf)
        self.num_bad = np.zeros(n, dtype=np.int64)

    def update(self, losses, lr, active):
        better = losses < self.best * (1.0 - self.threshold)
        self.best = np.where(better & active, losses, self.best)
        self.num_bad = np.where(better, 0, self.num_bad + 1)
        shrink = (self.num_bad >= self.patience) & active
        self.num_bad[shrink] = 0
        return np.where(shrink, lr * self.factor, lr)


# ---------------------------------------------------------------------------
# batched descent
# ---------------------------------------------------------------------------

@dataclass
class DescentOutcome:
    x: np.ndarray             # (R, d) final iterates
    final_loss: np.ndarray    # (R,) loss at x; inf for rows that never had a finite loss
    history: np.ndarray       # (n_recorded, R); NaN where a row had stopped
    steps_run: np.ndarray     # (R,) Adam steps actually applied
    failed: np.ndarray        # (R,) True when the starting point was non-finite


def descend(objective: Callable, x0, steps: int, lr: float,
            scheduler: Optional[PlateauScheduler] = None, record_stride: int = 1,
            betas=(0.9, 0.999), eps=1e-8) -> DescentOutcome:
    """Run Adam for ``steps`` iterations on every row of ``x0``.

    ``objective(X)`` maps an ``(R, d)`` array to ``(losses (R,), grads (R, d))``
    and must treat rows independently.  A row whose loss or gradient turns
    non-finite is frozen at its last finite iterate.
    """
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if lr <= 0:
        raise UsageError("learning rate must be positive")
    x = np.array(x0, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise UsageError("descend expects a 2-D array of starting points")
    r = x.shape[0]
    state = AdamState(np.zeros_like(x), np.zeros_like(x), 0, lr, betas[0], betas[1], eps)
    lrs = np.full((r, 1), float(lr))
    bank = _PlateauBank(scheduler, r) if scheduler is not None else None
    active = np.ones(r, dtype=bool)
    failed = np.zeros(r, dtype=bool)
    last_loss = np.full(r, np.inf)
    steps_run = np.zeros(r, dtype=np.int64)
    history = []
    prev_x = x

    for step in range(steps + 1):
        losses, grads = objective(x)
        losses = np.asarray(losses, dtype=np.float64)
        ok = np.isfinite(losses) & np.all(np.isfinite(grads), axis=1)
        newly_bad = active & ~ok
        if newly_bad.any():
            if step == 0:
                failed |= newly_bad
            else:
                # roll back to the previous (finite) iterate
                x[newly_bad] = prev_x[newly_bad]
            active &= ~newly_bad
        last_loss = np.where(active, losses, last_loss)
        if step % record_stride == 0 or step == steps:
            history.append(np.where(active, losses, np.nan))
        if step == steps or not active.any():
            break
        if bank is not None:
            lrs[:, 0] = bank.update(losses, lrs[:, 0], active)
        prev_x = x.copy()
        g = np.where(active[:, None], grads, 0.0)
        x_new = _adam_update(state, x, g, lr=lrs)
        x = np.where(active[:, None], x_new, x)
        steps_run += active

    return DescentOutcome(x, last_loss, np.array(history), steps_run, failed)


# ---------------------------------------------------------------------------
# multi-start
# ---------------------------------------------------------------------------

@dataclass
class RestartTrace:
    index: int
    seed: object
    losses: np.ndarray
    final_loss: float
    x: np.ndarray
    failed: bool = False


@dataclass
class MultistartResult:
    x: np.ndarray
    loss: float
    traces: list = field(default_factory=list)
    best_index: int = 0


def restart_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed for restart ``index``; independent of how many restarts run."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


class NormalSampler:
    """i.i.d. standard-normal starting points, one seed stream per restart."""

    def __init__(self, dim: int, master_seed=0, scale: float = 1.0, loc: float = 0.0):
        self.dim, self.master_seed, self.scale, self.loc = dim, master_seed, scale, loc

    def seed_for(self, index):
        return (self.master_seed, index)

    def __call__(self, index: int) -> np.ndarray:
        rng = np.random.default_rng(restart_seed(self.master_seed, index))
        return self.loc + self.scale * rng.standard_normal(self.dim)


class UniformSampler(NormalSampler):
    """i.i.d. uniform starting points on ``[low, high]^dim``."""

    def __init__(self, low, high, dim=1, master_seed=0):
        super().__init__(dim, master_seed)
        self.low, self.high = low, high

    def __call__(self, index):
        rng = np.random.default_rng(restart_seed(self.master_seed, index))
        return rng.uniform(self.low, self.high, self.dim)


def build_traces(outcome: DescentOutcome, seeds, record_stride=1, offset=0) -> list:
    traces = []
    for k in range(outcome.x.shape[0]):
        h = outcome.history[:, k]
        h = h[np.isfinite(h)]
        fl = outcome.final_loss[k]
        if np.isfinite(fl) and (h.size == 0 or h[-1] != fl):
            h = np.append(h, fl)
        traces.append(RestartTrace(
            index=k - offset if offset else k, seed=seeds[k], losses=h,
            final_loss=float(outcome.final_loss[k]), x=outcome.x[k].copy(),
            failed=bool(outcome.failed[k])))
    return traces


def pick_best(traces) -> int:
    """Index of the restart with the lowest final loss; ties go to the first."""
    finals = np.array([np.inf if t.failed else t.final_loss for t in traces])
    if not np.isfinite(finals).any():
        return -1
    return int(np.argmin(finals))


def multistart_minimize(objective: Callable, init_sampler: Callable, restarts: int = 10,
                        steps: int = 1000, lr: float = 0.01,
                        scheduler: Optional[PlateauScheduler] = None,
                        record_stride: int = 1, vectorized: bool = False) -> MultistartResult:
    """Minimize ``objective`` from ``restarts`` random starts with Adam.

    ``objective(x)`` returns ``(loss, grad)`` for a 1-D ``x``; with
    ``vectorized=True`` it instead takes an ``(R, d)`` array and returns
    per-row losses and gradients.  ``init_sampler(k)`` yields the start of
    restart ``k``.
    """
    if restarts < 1:
        raise UsageError("restarts must be >= 1")
    x0 = np.stack([np.atleast_1d(np.asarray(init_sampler(k), dtype=np.float64))
                   for k in range(restarts)])
    if vectorized:
        batch_obj = objective
    else:
        def batch_obj(X):
            ls, gs = zip(*(objective(row) for row in X))
            return np.array(ls, dtype=np.float64), np.stack([np.atleast_1d(g) for g in gs])
    outcome = descend(batch_obj, x0, steps, lr, scheduler, record_stride)
    seed_for = getattr(init_sampler, "seed_for", lambda k: k)
    traces = build_traces(outcome, [seed_for(k) for k in range(restarts)])
    best = pick_best(traces)
    if best < 0:
        raise OptimizationFailure("objective was non-finite at every starting point", traces)
    return MultistartResult(traces[best].x.copy(), traces[best].final_loss, traces, best)


def copy_scheduler(s: Optional[PlateauScheduler]):
    return None if s is None else copy.copy(s).fresh()
