"""``genattrib`` command line."""

from __future__ import annotations

import argparse
import json
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import InversionConfig, attribute_many, write_reports
from .config import CliConfig, resolve
from .data import MNIST_FILES, load_mnist
from .evaluation import parse_curve, parse_histogram
from .exceptions import DataError, GenAttribError, NumericError, UsageError
from .experiments import (KINDS, run_experiment, run_from_manifest, settings_for, train_pair,
                          trial_seeds)
from .network import forward
from .perturb import CompressionConfig, apply_compression, read_image, write_png
from .render import render_chart, render_grid, render_hist, roc_chart
from .train import atomic_write, file_sha256, read_generator_file, save_generator

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _write_json(path, obj):
    atomic_write(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n", mode="w")


def _write_resolved(cfg: CliConfig, out: Path, command: str, extra=None):
    _write_json(out / f"{command}.config.json", {"command": command, "version": __version__,
                                                 "config": cfg.to_dict(), **(extra or {})})


def _inversion_config(cfg: CliConfig) -> InversionConfig:
    s = settings_for("shuffle", cfg.preset, **cfg.experiment_overrides())
    return s.inversion


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: CliConfig, args) -> int:
    if args.kind not in ("odd_even", "shuffle", "same_order"):
        raise UsageError("train --kind must be odd_even, shuffle or same_order")
    if not Path(cfg.data_dir).is_dir():
        raise FileNotFoundError(f"MNIST directory {cfg.data_dir} does not exist")
    settings = settings_for(args.kind, cfg.preset, **cfg.experiment_overrides())
    seeds = trial_seeds(settings.master_seed, args.kind, args.trial)
    aes = train_pair(args.kind, settings, seeds, cfg.data_dir, cfg.cache_dir)
    names = ("even", "odd") if args.kind == "odd_even" else ("a", "b")
    out = Path(cfg.out)
    files = {}
    for name, ae in zip(names, aes):
        p = save_generator(ae.decoder, out / f"gen_{name}.mlpgen", ae.manifest)
        save_generator(ae.encoder, out / f"enc_{name}.mlpgen", ae.manifest)
        files[p.name] = file_sha256(p)
        print(f"{p}  loss={ae.manifest['final_loss']:.6g}")
    _write_resolved(cfg, out, "train", {"kind": args.kind, "trial": args.trial, "seeds": seeds,
                                        "files": files})
    return EXIT_OK


def _latents(gen, count, seed, init_low=0.0, init_high=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(init_low, init_high, size=(count, gen.input_dim))


def cmd_generate(cfg: CliConfig, args) -> int:
    gen, _ = read_generator_file(args.generator)
    out = Path(cfg.out)
    if args.latents:
        with open(args.latents) as fh:
            side = json.load(fh)
        z = np.array(side["latents"], dtype=np.float64)
        seed = side.get("seed")
    else:
        seed = cfg.seed
        z = _latents(gen, args.count, seed)
    images = apply_compression(forward(gen, z), CompressionConfig("png8"))
    names = []
    for k, img in enumerate(images):
        names.append(f"probe_{k:04d}.png")
        write_png(out / names[-1], img)
        for q in (cfg.qualities if args.jpeg else ()):
            write_png(out / f"probe_{k:04d}_q{q}.png", apply_compression(img, CompressionConfig("jpeg", q)))
    _write_json(out / "latents.json", {
        "generator": str(args.generator), "generator_sha256": file_sha256(args.generator),
        "seed": seed, "files": names, "latents": z.tolist()})
    _write_resolved(cfg, out, "generate")
    print(f"wrote {len(names)} probes to {out}")
    return EXIT_OK


def _probe_files(paths):
    files = []
    for p in map(Path, paths):
        files += sorted(p.glob("*.png")) if p.is_dir() else [p]
    if not files:
        raise DataError("no probe images found")
    return files


def cmd_attribute(cfg: CliConfig, args) -> int:
    gens = [read_generator_file(p)[0].with_id(Path(p).stem) for p in args.generators]
    files = _probe_files(args.inputs)
    probes = np.stack([read_image(f).ravel() for f in files])
    inv = _inversion_config(cfg)
    reports = attribute_many(probes, gens, inv, [f.name for f in files])
    out = Path(cfg.out)
    write_reports(reports, out / "reports.jsonl")
    recon = np.stack([[r.reconstruction for r in rep.results] for rep in reports])
    np.savez_compressed(out / "reconstructions.npz", probes=probes, reconstructions=recon,
                        generators=np.array([g.id for g in gens]))
    for f, probe, rec in zip(files, probes, recon):
        render_grid([probe, *rec], 1, out / f"{f.stem}_side_by_side.png", scale=2)
    for rep in reports:
        print(rep.to_json())
    _write_resolved(cfg, out, "attribute", {"generators": [str(g) for g in args.generators],
                                            "inversion_config": inv.to_dict()})
    return EXIT_OK


def cmd_experiment(cfg: CliConfig, args) -> int:
    out = Path(cfg.out)
    if args.manifest:
        result = run_from_manifest(args.manifest, out, cfg.data_dir, cfg.cache_dir, cfg.jobs)
    else:
        settings = settings_for(args.kind, cfg.preset, **cfg.experiment_overrides())
        result = run_experiment(args.kind, settings, cfg.data_dir, out, cfg.cache_dir, cfg.jobs)
    _write_resolved(cfg, out, "experiment", {"kind": result.settings.kind})
    for t in result.trials:
        print(f"trial {t.trial}: {json.dumps(t.summary, sort_keys=True)}")
    return EXIT_OK


def cmd_plot(cfg: CliConfig, args) -> int:
    out = Path(cfg.out)
    curves = []
    for f in map(Path, args.files):
        text = f.read_text() if f.suffix in (".txt", ".dat") else None
        if text is not None and text.startswith("# roc"):
            curves.append(parse_curve(text, label="" if len(args.files) == 1 else f.stem))
        elif text is not None and text.startswith("# histogram"):
            edges, counts = parse_histogram(text)
            print(render_hist(edges, counts, out / f"{f.stem}.png", f.stem))
        elif f.suffix == ".npz":
            data = np.load(f)
            probes, recon = data["probes"], data["reconstructions"]
            n = min(len(probes), args.max_images)
            rows = [probes[:n]] + [recon[:n, g] for g in range(recon.shape[1])]
            labels = ["probe"] + [str(g) for g in data["generators"]]
            print(render_grid(np.concatenate(rows), len(rows), out / f"{f.stem}_grid.png", labels, scale=2))
        else:
            raise DataError(f"do not know how to plot {f}")
    if curves:
        print(render_chart(roc_chart(curves, args.title), out / "roc.png"))
    return EXIT_OK


def cmd_fetch(cfg: CliConfig, args) -> int:
    target = Path(cfg.data_dir)
    target.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        for name in MNIST_FILES[split]:
            dest = target / f"{name}.gz"
            if dest.exists():
                continue
            url = f"{args.url.rstrip('/')}/{name}.gz"
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=120) as resp:
                atomic_write(dest, resp.read())
    for split in ("train", "test"):
        print(f"{split}: {load_mnist(target, split).description}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of config keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=("paper", "fast"))
    common.add_argument("--jobs", type=int)
    common.add_argument("--quality", dest="qualities", help="comma-separated JPEG qualities")
    common.add_argument("--out")
    common.add_argument("--data-dir", dest="data_dir")
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--restarts", type=int)
    common.add_argument("--inversion-steps", dest="inversion_steps", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--probes", type=int)
    common.add_argument("--train-steps", dest="train_steps", type=int)

    parser = argparse.ArgumentParser(prog="genattrib", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an autoencoder pair")
    p.add_argument("--kind", default="shuffle")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="write probe images from a generator")
    p.add_argument("generator")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--latents", help="re-create probes from a latents.json sidecar")
    p.add_argument("--jpeg", action="store_true", help="also write JPEG-distorted copies")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("attribute", parents=[common], help="attribute probe images")
    p.add_argument("inputs", nargs="+", help="image files or directories of PNGs")
    p.add_argument("--generators", nargs="+", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("experiment", parents=[common], help="run an MNIST experiment")
    p.add_argument("kind", nargs="?", choices=KINDS)
    p.add_argument("--manifest", help="re-run the experiment recorded in a manifest")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", parents=[common], help="render curve, histogram or grid files")
    p.add_argument("files", nargs="+")
    p.add_argument("--title", default="ROC")
    p.add_argument("--max-images", dest="max_images", type=int, default=10)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("fetch", parents=[common], help="download the MNIST IDX files")
    p.add_argument("--url", default="https://storage.googleapis.com/cvdf-datasets/mnist")
    p.set_defaults(func=cmd_fetch)
    return parser


FLAG_KEYS = ("seed", "preset", "jobs", "qualities", "out", "data_dir", "cache_dir", "restarts",
             "inversion_steps", "trials", "probes", "train_steps")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "experiment" and not (args.kind or args.manifest):
            raise UsageError("experiment needs a kind or --manifest")
        cfg = resolve(args.config, {k: getattr(args, k, None) for k in FLAG_KEYS})
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"genattrib: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"genattrib: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"genattrib: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GenAttribError as exc:
        print(f"genattrib: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
