"""Generator inversion and source attribution.

For a probe ``I`` and generator ``G`` the inversion minimizes the per-value
reconstruction loss ``mean((I - G(z))**2)`` over the latent ``z`` from
several random starts.  Attribution picks the generator with the smallest
minimum loss and summarizes confidence with the contrast scores
``(L_other - L_i) / (L_other + L_i)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import AttributionError, InversionFailure, ShapeError, UsageError
from .network import (LOSS_KINDS, ImageTensor, MlpGenerator, as_image_rows, backprop_input,
                      forward_trace)
from .optim import (NormalSampler, PlateauScheduler, UniformSampler, build_traces, descend,
                    pick_best)


@dataclass
class InversionConfig:
    restarts: int = 10
    steps: int = 1000
    learning_rate: float = 0.01
    loss_kind: str = "L2"
    scheduler: Optional[PlateauScheduler] = None
    master_seed: int = 0
    record_stride: int = 1
    # starting-point prior; "uniform" covers [init_low, init_high]^d,
    # "normal" is N(init_loc, init_scale^2) per coordinate
    init: str = "uniform"
    init_low: float = 0.0
    init_high: float = 1.0
    init_loc: float = 0.0
    init_scale: float = 1.0
    zero_start: bool = False          # extra control restart at z = 0
    confidence_floor: float = 0.5
    residual_ceiling: Optional[float] = None

    def validate(self):
        if self.restarts < 1:
            raise UsageError("restarts must be >= 1")
        if self.steps < 1:
            raise UsageError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise UsageError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.record_stride < 1:
            raise UsageError("record_stride must be >= 1")
        if self.init not in ("uniform", "normal"):
            raise UsageError("init must be 'uniform' or 'normal'")
        if self.init == "uniform" and not self.init_high > self.init_low:
            raise UsageError("init_high must exceed init_low")
        return self

    def sampler(self, dim, seed):
        if self.init == "uniform":
            return UniformSampler(self.init_low, self.init_high, dim, seed)
        return NormalSampler(dim, seed, self.init_scale, self.init_loc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheduler"] = None if self.scheduler is None else {
            "factor": self.scheduler.factor, "patience": self.scheduler.patience,
            "threshold": self.scheduler.threshold}
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class InversionResult:
    z_hat: np.ndarray
    l_min: float
    reconstruction: np.ndarray
    traces: list
    generator_id: str
    best_restart: int = 0
    failed: bool = False
    seed: object = None


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def row_losses(gen: MlpGenerator, targets: np.ndarray, z: np.ndarray, loss_kind="L2",
               with_grad=True):
    """Per-row loss of ``G(z[k])`` against ``targets[k]`` and ``d loss / d z``."""
    outs = forward_trace(gen, z)
    r = outs[-1] - targets
    n = r.shape[1]
    if loss_kind == "L2":
        losses = np.mean(r * r, axis=1)
        g_out = (2.0 / n) * r
    elif loss_kind == "L1":
        losses = np.mean(np.abs(r), axis=1)
        g_out = np.sign(r) / n
    else:
        raise UsageError(f"unknown loss kind {loss_kind!r}")
    if not with_grad:
        return losses, None
    with np.errstate(invalid="ignore", over="ignore"):
        return losses, backprop_input(gen, outs, g_out, check=False)


def _check_shapes(gen: MlpGenerator, probe):
    rows, single = as_image_rows(probe, gen.output_dim)
    return rows, single


def reconstruction_loss(probe, gen: MlpGenerator, z, kind="L2") -> float:
    """Mean squared (``L2``) or absolute (``L1``) error between probe and ``G(z)``."""
    p = np.asarray(probe.data if isinstance(probe, ImageTensor) else probe, dtype=np.float64).ravel()
    if p.size != gen.output_dim:
        raise ShapeError(f"probe has {p.size} values, generator outputs {gen.output_dim}")
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != gen.input_dim:
        raise ShapeError(f"latent has {z.shape[1]} values, generator expects {gen.input_dim}")
    return float(row_losses(gen, p[None, :], z, kind, with_grad=False)[0][0])


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

def _starts(gen, cfg, seed):
    sampler = cfg.sampler(gen.input_dim, seed)
    x0 = [sampler(k) for k in range(cfg.restarts)]
    seeds = [sampler.seed_for(k) for k in range(cfg.restarts)]
    if cfg.zero_start:
        x0.insert(0, np.zeros(gen.input_dim))
        seeds.insert(0, None)
    return np.stack(x0), seeds


def invert_many(gen: MlpGenerator, probes, cfg: InversionConfig, seeds=None,
                block: int = 128, raise_on_failure=True) -> list:
    """Invert ``gen`` against every probe; rows are solved in lockstep.

    Each probe gets the restart set drawn from its own seed (default: the
    config's master seed), so the result for one probe does not depend on
    which other probes share the batch.
    """
    cfg.validate()
    rows, _ = _check_shapes(gen, probes)
    n = rows.shape[0]
    if seeds is None:
        seeds = [cfg.master_seed] * n
    if len(seeds) != n:
        raise UsageError(f"{len(seeds)} seeds for {n} probes")
    results = []
    for start in range(0, n, block):
        stop = min(n, start + block)
        x0s, seed_lists = zip(*(_starts(gen, cfg, seeds[p]) for p in range(start, stop)))
        k = x0s[0].shape[0]
        x0 = np.concatenate(x0s)
        targets = np.repeat(rows[start:stop], k, axis=0)

        def objective(z, targets=targets):
            return row_losses(gen, targets, z, cfg.loss_kind)

        outcome = descend(objective, x0, cfg.steps, cfg.learning_rate, cfg.scheduler,
                          cfg.record_stride)
        for p in range(stop - start):
            sl = slice(p * k, (p + 1) * k)
            sub = type(outcome)(outcome.x[sl], outcome.final_loss[sl], outcome.history[:, sl],
                                outcome.steps_run[sl], outcome.failed[sl])
            traces = build_traces(sub, seed_lists[p], cfg.record_stride)
            best = pick_best(traces)
            if best < 0:
                if raise_on_failure:
                    raise InversionFailure(
                        f"every restart diverged inverting {gen.id} on probe {start + p}", traces)
                results.append(InversionResult(
                    np.full(gen.input_dim, np.nan), math.inf, np.full(gen.output_dim, np.nan),
                    traces, gen.id, -1, True, seeds[start + p]))
                continue
            z_hat = traces[best].x
            recon = forward_trace(gen, z_hat[None, :])[-1][0]
            results.append(InversionResult(z_hat, traces[best].final_loss, recon, traces,
                                           gen.id, best, False, seeds[start + p]))
    return results


def invert(gen: MlpGenerator, probe, cfg: Optional[InversionConfig] = None, seed=None) -> InversionResult:
    """Best latent for one probe by multi-start Adam on the reconstruction loss."""
    cfg = cfg or InversionConfig()
    rows, single = _check_shapes(gen, probe)
    if rows.shape[0] != 1:
        raise ShapeError("invert takes a single probe; use invert_many for batches")
    return invert_many(gen, rows, cfg, seeds=[cfg.master_seed if seed is None else seed])[0]


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def pair_score(l_i: float, l_j: float) -> float:
    """Contrast ``(l_j - l_i) / (l_j + l_i)``; positive favours generator ``i``.

    Both zero gives 0.  An infinite loss (failed inversion) loses against
    any finite one with score magnitude 1.
    """
    l_i, l_j = float(l_i), float(l_j)
    if l_i < 0 or l_j < 0 or math.isnan(l_i) or math.isnan(l_j):
        raise UsageError("losses must be non-negative numbers")
    if math.isinf(l_i) or math.isinf(l_j):
        if l_i == l_j:
            return 0.0
        return 1.0 if math.isinf(l_j) else -1.0
    total = l_j + l_i
    if total == 0.0:
        return 0.0
    return (l_j - l_i) / total


def one_vs_rest_score(losses: Sequence[float], i: int) -> float:
    """``S_i``: generator ``i`` against the best of the others."""
    losses = [float(l) for l in losses]
    if len(losses) < 2:
        raise UsageError("one-vs-rest scoring needs at least two generators")
    if not 0 <= i < len(losses):
        raise UsageError(f"generator index {i} out of range")
    best_other = min(l for j, l in enumerate(losses) if j != i)
    return pair_score(losses[i], best_other)


def all_scores(losses) -> list:
    return [one_vs_rest_score(losses, i) for i in range(len(losses))]


# ---------------------------------------------------------------------------
# attribution
# ---------------------------------------------------------------------------

@dataclass
class AttributionReport:
    probe_id: str
    results: list
    chosen: int
    scores: list                       # S_i per generator
    pair_score: Optional[float] = None  # S with generator 0 as "i" when there are two
    low_confidence: bool = False
    label: Optional[int] = None         # true source index, when known
    seed: object = None
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def losses(self) -> list:
        return [r.l_min for r in self.results]

    @property
    def failed(self) -> list:
        return [r.failed for r in self.results]

    def to_record(self) -> dict:
        rec = {
            "probe_id": self.probe_id,
            "generators": [r.generator_id for r in self.results],
            "l_min": [None if r.failed else r.l_min for r in self.results],
            "failed": self.failed,
            "chosen": self.chosen,
            "S": self.pair_score,
            "S_i": self.scores,
            "low_confidence": self.low_confidence,
            "label": self.label,
            "seed": self.seed,
            "best_restart": [r.best_restart for r in self.results],
            "config_hash": self.config_hash,
        }
        rec.update(self.extra)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


def build_report(probe_id, results, cfg: InversionConfig, label=None, seed=None) -> AttributionReport:
    losses = [math.inf if r.failed else r.l_min for r in results]
    if all(r.failed for r in results):
        raise AttributionError(f"every generator failed to invert probe {probe_id}")
    chosen = int(np.argmin(losses))
    scores = all_scores(losses)
    s = pair_score(losses[0], losses[1]) if len(losses) == 2 else None
    low = max(scores) < cfg.confidence_floor
    if cfg.residual_ceiling is not None and losses[chosen] > cfg.residual_ceiling:
        low = True
    return AttributionReport(str(probe_id), results, chosen, scores, s, low, label, seed,
                             cfg.config_hash())


def _validate_generators(gens, n_values):
    if len(gens) < 2:
        raise UsageError("attribution needs at least two generators")
    for g in gens:
        if g.output_dim != n_values:
            raise ShapeError(f"generator {g.id} outputs {g.output_dim} values, probe has {n_values}")


def attribute_many(probes, gens: Sequence[MlpGenerator], cfg: Optional[InversionConfig] = None,
                   probe_ids=None, seeds=None, labels=None) -> list:
    cfg = (cfg or InversionConfig()).validate()
    rows, _ = as_image_rows(probes, gens[0].output_dim if gens else 0)
    _validate_generators(gens, rows.shape[1])
    n = rows.shape[0]
    probe_ids = list(probe_ids) if probe_ids is not None else [str(k) for k in range(n)]
    seeds = list(seeds) if seeds is not None else [cfg.master_seed] * n
    per_gen = [invert_many(g, rows, cfg, seeds, raise_on_failure=False) for g in gens]
    return [build_report(probe_ids[p], [per_gen[g][p] for g in range(len(gens))], cfg,
                         None if labels is None else int(labels[p]), seeds[p])
            for p in range(n)]


def attribute(probe, gens: Sequence[MlpGenerator], cfg: Optional[InversionConfig] = None,
              probe_id="probe", seed=None) -> AttributionReport:
    """Invert every generator on ``probe`` and pick the best reconstruction."""
    cfg = cfg or InversionConfig()
    rows, _ = as_image_rows(probe, gens[0].output_dim if gens else 0)
    if rows.shape[0] != 1:
        raise ShapeError("attribute takes a single probe; use attribute_many for batches")
    return attribute_many(rows, gens, cfg, [probe_id],
                          [cfg.master_seed if seed is None else seed])[0]


def write_reports(reports, path):
    from .train import atomic_write
    atomic_write(path, "".join(r.to_json() + "\n" for r in reports), mode="w")


def read_reports(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
