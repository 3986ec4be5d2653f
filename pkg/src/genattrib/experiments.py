"""End-to-end MNIST attribution experiments.

Each trial trains a pair of autoencoders, turns held-out test digits into
probes by encoding and decoding them with each generator, saves them as
8-bit images (optionally JPEG-compressed), attributes every probe between
the two decoders and summarizes the pairwise scores with an ROC curve.
Generator 0 of each pair is the target.

Kinds:

``odd_even``        generator 0 on even digits, generator 1 on odd digits
``shuffle``         same subset, different order and initial weights
``same_order``      same subset and order, different initial weights
``compression``     trial 0 pair of ``shuffle`` under a JPEG quality sweep
``random_control``  probes from an untrained random decoder
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .attribution import InversionConfig, attribute_many, invert_many, write_reports
from .data import (RNG_ALGORITHM, LabeledDataset, filter_parity, find_idx_pair, load_mnist,
                   permutation, shuffle_take)
from .evaluation import format_curve, format_histogram, histogram, roc
from .exceptions import ConfigError, GenAttribError, UsageError
from .network import forward
from .optim import PlateauScheduler
from .perturb import CompressionConfig, apply_compression
from .train import (Autoencoder, TrainConfig, atomic_write, canonical_json, generator_bytes,
                    manifest_hash, read_generator_file, save_generator, train_autoencoder,
                    weight_init)

KINDS = ("odd_even", "shuffle", "same_order", "compression", "random_control")
# kinds that re-use the generator pairs of another kind
PAIR_SOURCE = {"compression": "shuffle", "random_control": "shuffle"}
SEED_NAMES = ("subset", "init_a", "init_b", "order_a", "order_b", "probes", "inversion", "random_decoder")


@dataclass
class ExperimentSettings:
    kind: str
    trials: int = 5
    probes_per_generator: int = 500
    subset_size: int = 30000
    train_steps: int = 20000
    batch_size: int = 256
    train_lr: float = 0.01
    hidden: tuple = (64, 32)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    qualities: tuple = (90, 70, 50)
    master_seed: int = 0
    hist_bins: int = 30
    confident_threshold: float = 0.9

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.probes_per_generator < 1:
            raise ConfigError("probes_per_generator must be >= 1")
        for q in self.qualities:
            CompressionConfig("jpeg", q)
        self.inversion.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["qualities"] = list(self.qualities)
        d["inversion"] = self.inversion.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSettings":
        d = dict(d)
        inv = dict(d.pop("inversion", {}))
        sched = inv.pop("scheduler", None)
        inv_cfg = InversionConfig(**inv, scheduler=PlateauScheduler(**sched) if sched else None)
        d["hidden"] = tuple(d.get("hidden", (64, 32)))
        d["qualities"] = tuple(d.get("qualities", (90, 70, 50)))
        return cls(inversion=inv_cfg, **d)

    def train_config(self, init_seed, order_seed) -> TrainConfig:
        return TrainConfig(steps=self.train_steps, batch_size=self.batch_size,
                           learning_rate=self.train_lr, weight_init_seed=int(init_seed),
                           data_order_seed=int(order_seed), hidden=tuple(self.hidden))


PRESETS = {
    "paper": dict(trials=5, probes_per_generator=500, train_steps=20000,
                  inversion=dict(restarts=10, steps=1000)),
    "fast": dict(trials=5, probes_per_generator=100, train_steps=5000,
                 inversion=dict(restarts=5, steps=300)),
}


def settings_for(kind: str, preset: str = "paper", **overrides) -> ExperimentSettings:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    p = dict(PRESETS[preset])
    inv = dict(p.pop("inversion"))
    inv.update(overrides.pop("inversion", {}) or {})
    p.update(overrides)
    if kind == "compression" and "trials" not in overrides:
        p["trials"] = 1
    inv.setdefault("record_stride", 10)
    return ExperimentSettings(kind=kind, inversion=InversionConfig(**inv), **p).validate()


def trial_seeds(master_seed: int, kind: str, trial: int) -> dict:
    src = PAIR_SOURCE.get(kind, kind)
    state = np.random.SeedSequence([master_seed, KINDS.index(src), trial]).generate_state(
        len(SEED_NAMES), dtype=np.uint32)
    seeds = dict(zip(SEED_NAMES, (int(s) for s in state)))
    if src == "same_order":
        seeds["order_b"] = seeds["order_a"]
    return seeds


# ---------------------------------------------------------------------------
# data and training
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _load_split(data_dir: str, split: str) -> LabeledDataset:
    ds = load_mnist(data_dir, split)
    img_path = find_idx_pair(data_dir, split)[0]
    with open(img_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()[:12]
    return LabeledDataset(ds.images, ds.labels, ds.shape, (f"mnist:{split}@{digest}",))


def training_sets(kind, settings, seeds, data_dir):
    train = _load_split(str(data_dir), "train")
    if PAIR_SOURCE.get(kind, kind) == "odd_even":
        return filter_parity(train, "even"), filter_parity(train, "odd")
    n = min(settings.subset_size, len(train))
    sub = shuffle_take(train, seeds["subset"], n)
    return sub, sub


def probe_pools(kind, data_dir):
    test = _load_split(str(data_dir), "test")
    if PAIR_SOURCE.get(kind, kind) == "odd_even":
        return filter_parity(test, "even"), filter_parity(test, "odd")
    return test, test


def _cache_key(ds: LabeledDataset, cfg: TrainConfig) -> str:
    blob = canonical_json({"dataset": ds.description, "n": len(ds), "cfg": {
        k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}})
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def train_cached(ds: LabeledDataset, cfg: TrainConfig, cache_dir=None) -> Autoencoder:
    """Train, or load a previous training with identical data and config."""
    if cache_dir is None:
        return train_autoencoder(ds, cfg)
    key = _cache_key(ds, cfg)
    enc_p = Path(cache_dir) / f"{key}.encoder.mlpgen"
    dec_p = Path(cache_dir) / f"{key}.decoder.mlpgen"
    if enc_p.exists() and dec_p.exists():
        enc, manifest = read_generator_file(enc_p)
        dec, _ = read_generator_file(dec_p)
        return Autoencoder(enc, dec, manifest)
    ae = train_autoencoder(ds, cfg)
    save_generator(ae.encoder, enc_p, ae.manifest, sidecar=False)
    save_generator(ae.decoder, dec_p, ae.manifest, sidecar=False)
    return ae


def train_pair(kind, settings, seeds, data_dir, cache_dir=None):
    ds_a, ds_b = training_sets(kind, settings, seeds, data_dir)
    ae_a = train_cached(ds_a, settings.train_config(seeds["init_a"], seeds["order_a"]), cache_dir)
    ae_b = train_cached(ds_b, settings.train_config(seeds["init_b"], seeds["order_b"]), cache_dir)
    return ae_a, ae_b


def make_probes(aes, pools, n, probe_seed):
    """Encode/decode held-out digits with each generator.

    Returns ``(raw_probes, labels, source_indices)``; generator ``g`` uses
    entries ``g*n .. (g+1)*n`` of a seeded permutation of its pool.
    """
    raw, labels, src = [], [], []
    for g, (ae, pool) in enumerate(zip(aes, pools)):
        perm = permutation(probe_seed, len(pool))
        if (g + 1) * n > len(pool):
            raise UsageError(f"probe pool of {len(pool)} digits is too small for {n} probes")
        idx = perm[g * n:(g + 1) * n]
        z = forward(ae.encoder, pool.images[idx])
        raw.append(forward(ae.decoder, z))
        labels += [g] * n
        src += idx.tolist()
    return np.concatenate(raw), np.array(labels), np.array(src)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    trial: int
    seeds: dict
    generator_ids: list
    generator_sha256: list
    reports: dict        # condition -> list of AttributionReport
    curves: dict         # condition -> RocCurve
    summary: dict


def conditions_for(settings: ExperimentSettings) -> list:
    conds = [CompressionConfig("png8")]
    if settings.kind == "compression":
        conds += [CompressionConfig("jpeg", q) for q in settings.qualities]
    return conds


def _inv_seeds(seed, n):
    return [[seed, p] for p in range(n)]


def _confident_correct(reports, threshold):
    hits = [r.pair_score is not None and abs(r.pair_score) > threshold
            and (r.pair_score > 0) == (r.label == 0) for r in reports]
    return float(np.mean(hits))


def run_trial(settings: ExperimentSettings, trial: int, data_dir, out_dir=None,
              cache_dir=None) -> TrialResult:
    kind = settings.kind
    seeds = trial_seeds(settings.master_seed, kind, trial)
    ae_a, ae_b = train_pair(kind, settings, seeds, data_dir, cache_dir)
    gens = [ae_a.decoder.with_id("gen_a"), ae_b.decoder.with_id("gen_b")]
    gen_bytes = [generator_bytes(g, ae.manifest) for g, ae in zip(gens, (ae_a, ae_b))]
    shas = [hashlib.sha256(b).hexdigest() for b in gen_bytes]
    n = settings.probes_per_generator
    cfg = settings.inversion
    tdir = None if out_dir is None else Path(out_dir) / f"trial_{trial}"
    if tdir is not None:
        for name, g, ae in zip(("gen_a", "gen_b"), gens, (ae_a, ae_b)):
            save_generator(g, tdir / f"{name}.mlpgen", ae.manifest)
            save_generator(ae.encoder, tdir / f"{name}.encoder.mlpgen")

    reports, curves, summary = {}, {}, {}
    if kind == "random_control":
        reports, summary = _random_control(settings, seeds, gens, (ae_a, ae_b), data_dir, n)
    else:
        raw, labels, src = make_probes((ae_a, ae_b), probe_pools(kind, data_dir), n, seeds["probes"])
        ids = [f"g{l}_{s}" for l, s in zip(labels, src)]
        for cond in conditions_for(settings):
            probes = apply_compression(raw, cond)
            reps = attribute_many(probes, gens, cfg, ids, _inv_seeds(seeds["inversion"], len(ids)), labels)
            for r in reps:
                r.extra["condition"] = cond.label
            curve = roc([r.pair_score for r in reps], labels == 0, label=cond.label)
            reports[cond.label], curves[cond.label] = reps, curve
            own = [r.losses[r.label] for r in reps]
            summary[cond.label] = {
                "auc": curve.auc,
                "accuracy": float(np.mean([r.chosen == r.label for r in reps])),
                "confident_correct": _confident_correct(reps, settings.confident_threshold),
                "median_own_l_min": float(np.median(own)),
            }

    result = TrialResult(trial, seeds, [g.id for g in gens], shas, reports, curves, summary)
    if tdir is not None:
        _write_trial(result, settings, tdir)
    return result


def _random_control(settings, seeds, gens, aes, data_dir, n):
    cfg = settings.inversion
    rand = weight_init([gens[0].input_dim] + list(settings.hidden[::-1][1:]) + [gens[0].output_dim],
                       seeds["random_decoder"], id="random_decoder")
    rng = np.random.default_rng(seeds["probes"])
    z = rng.uniform(cfg.init_low, cfg.init_high, size=(n, rand.input_dim))
    rand_probes = apply_compression(forward(rand, z), CompressionConfig("png8"))
    raw, labels, src = make_probes(aes, probe_pools("shuffle", data_dir), n, seeds["probes"])
    own = apply_compression(raw[labels == 0], CompressionConfig("png8"))
    seeds_r = _inv_seeds(seeds["inversion"], n)
    reps = attribute_many(rand_probes, gens, cfg, [f"rand_{k}" for k in range(n)], seeds_r)
    for r in reps:
        r.extra["condition"] = "random_decoder"
    self_res = invert_many(gens[0], own, cfg, seeds_r)
    rand_min = np.array([min(r.losses) for r in reps])
    self_l = np.array([r.l_min for r in self_res])
    summary = {"random_decoder": {
        "median_l_min": float(np.median(rand_min)),
        "median_self_l_min": float(np.median(self_l)),
        "ratio": float(np.median(rand_min) / np.median(self_l)),
        "low_confidence_fraction": float(np.mean([r.low_confidence for r in reps])),
    }}
    return {"random_decoder": reps}, summary


def _write_trial(result: TrialResult, settings, tdir: Path):
    for cond, reps in result.reports.items():
        write_reports(reps, tdir / f"reports_{cond}.jsonl")
        if cond in result.curves:
            atomic_write(tdir / f"roc_{cond}.txt", format_curve(result.curves[cond]), mode="w")
            own = [r.losses[r.label] for r in reps]
            edges, counts = histogram(own, settings.hist_bins)
            atomic_write(tdir / f"hist_lmin_{cond}.txt", format_histogram(edges, counts, f"own l_min {cond}"), mode="w")
            edges, counts = histogram([r.pair_score for r in reps], settings.hist_bins, (-1.0, 1.0))
            atomic_write(tdir / f"hist_S_{cond}.txt", format_histogram(edges, counts, f"S {cond}"), mode="w")
        else:
            lm = [min(r.losses) for r in reps]
            edges, counts = histogram(lm, settings.hist_bins)
            atomic_write(tdir / f"hist_lmin_{cond}.txt", format_histogram(edges, counts, f"l_min {cond}"), mode="w")
    atomic_write(tdir / "summary.json", json.dumps(result.summary, indent=2, sort_keys=True) + "\n", mode="w")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    settings: ExperimentSettings
    trials: list
    manifest: dict

    def aucs(self, condition="png") -> list:
        return [t.summary[condition]["auc"] for t in self.trials]


def _trial_job(args):
    settings_d, trial, data_dir, out_dir, cache_dir = args
    return run_trial(ExperimentSettings.from_dict(settings_d), trial, data_dir, out_dir, cache_dir)


def build_manifest(settings, trials, data_dir) -> dict:
    return {
        "package": f"genattrib {__version__}",
        "kind": settings.kind,
        "settings": settings.to_dict(),
        "settings_hash": manifest_hash(settings.to_dict())[:16],
        "inversion_config_hash": settings.inversion.config_hash(),
        "rng": RNG_ALGORITHM,
        "data_dir": str(data_dir),
        "datasets": {
            "train": _load_split(str(data_dir), "train").description,
            "test": _load_split(str(data_dir), "test").description,
        },
        "target_generator": 0,
        "trials": [{
            "trial": t.trial, "seeds": t.seeds, "generators": t.generator_ids,
            "generator_sha256": t.generator_sha256, "summary": t.summary,
        } for t in trials],
    }


def run_experiment(kind: str, settings: Optional[ExperimentSettings] = None, data_dir="data/mnist",
                   out_dir=None, cache_dir=None, jobs: int = 1) -> ExperimentResult:
    """Run every trial of an experiment and (optionally) write its files."""
    settings = (settings or settings_for(kind)).validate()
    if settings.kind != kind:
        settings = replace(settings, kind=kind).validate()
    if not Path(data_dir).is_dir():
        raise FileNotFoundError(f"MNIST directory {data_dir} does not exist")
    args = [(settings.to_dict(), t, str(data_dir), out_dir, cache_dir) for t in range(settings.trials)]
    if jobs > 1 and settings.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_trial_job, args))
    else:
        trials = [_trial_job(a) for a in args]
    manifest = build_manifest(settings, trials, data_dir)
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n", mode="w")
        atomic_write(out / "settings.json", json.dumps(settings.to_dict(), indent=2, sort_keys=True) + "\n", mode="w")
    return ExperimentResult(settings, trials, manifest)


def run_from_manifest(manifest_path, out_dir=None, data_dir=None, cache_dir=None, jobs=1) -> ExperimentResult:
    """Re-run an experiment from its manifest and check the seeds agree."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    settings = ExperimentSettings.from_dict(manifest["settings"])
    result = run_experiment(settings.kind, settings, data_dir or manifest["data_dir"], out_dir,
                            cache_dir, jobs)
    for old, new in zip(manifest["trials"], result.trials):
        if old["seeds"] != new.seeds:
            raise GenAttribError(f"trial {new.trial} seeds differ from the manifest")
    return result
