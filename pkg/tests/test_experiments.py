import json

import pytest

from genattrib.evaluation import parse_curve, parse_histogram
from genattrib.exceptions import ConfigError
from genattrib.experiments import (ExperimentSettings, run_experiment, run_from_manifest,
                                   settings_for, trial_seeds)


def tiny(kind, **kw):
    over = dict(trials=2, probes_per_generator=4, train_steps=20, subset_size=600,
                inversion={"restarts": 2, "steps": 10})
    over.update(kw)
    return settings_for(kind, "fast", **over)


def test_presets():
    fast, paper = settings_for("shuffle", "fast"), settings_for("shuffle", "paper")
    assert (fast.train_steps, fast.probes_per_generator, fast.inversion.restarts, fast.inversion.steps) == (5000, 100, 5, 300)
    assert (paper.train_steps, paper.probes_per_generator, paper.inversion.restarts, paper.inversion.steps) == (20000, 500, 10, 1000)
    assert paper.trials == 5 and settings_for("compression").trials == 1
    with pytest.raises(ConfigError):
        settings_for("shuffle", "huge")
    with pytest.raises(ConfigError):
        settings_for("bogus")


def test_settings_round_trip():
    s = tiny("compression", qualities=(80, 40))
    assert ExperimentSettings.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_trial_seeds():
    a = trial_seeds(0, "shuffle", 0)
    assert a == trial_seeds(0, "shuffle", 0)
    assert a != trial_seeds(0, "shuffle", 1)
    assert trial_seeds(0, "compression", 0) == a
    so = trial_seeds(0, "same_order", 0)
    assert so["order_a"] == so["order_b"] and so["init_a"] != so["init_b"]


def test_odd_even_outputs(mnist_dir, tmp_path):
    res = run_experiment("odd_even", tiny("odd_even"), mnist_dir, tmp_path)
    assert len(res.trials) == 2
    for t in (0, 1):
        d = tmp_path / f"trial_{t}"
        for name in ("reports_png.jsonl", "roc_png.txt", "hist_lmin_png.txt", "hist_S_png.txt",
                     "gen_a.mlpgen", "gen_b.mlpgen", "summary.json"):
            assert (d / name).exists(), name
        recs = [json.loads(l) for l in (d / "reports_png.jsonl").read_text().splitlines()]
        assert len(recs) == 8 and [r["label"] for r in recs] == [0] * 4 + [1] * 4
        curve = parse_curve((d / "roc_png.txt").read_text())
        assert curve.auc == res.trials[t].curves["png"].auc
        assert parse_histogram((d / "hist_lmin_png.txt").read_text())[1].sum() == 8
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["kind"] == "odd_even" and len(man["trials"]) == 2
    assert all(len(t["generator_sha256"]) == 2 for t in man["trials"])
    gen_a = json.loads((tmp_path / "trial_0" / "gen_a.mlpgen.manifest.json").read_text())
    gen_b = json.loads((tmp_path / "trial_0" / "gen_b.mlpgen.manifest.json").read_text())
    assert gen_a["dataset"].endswith("parity=even") and gen_b["dataset"].endswith("parity=odd")


def test_compression_conditions(mnist_dir, tmp_path):
    res = run_experiment("compression", tiny("compression", trials=1), mnist_dir, tmp_path)
    assert set(res.trials[0].curves) == {"png", "jpeg_q90", "jpeg_q70", "jpeg_q50"}
    assert len(list(tmp_path.glob("trial_0/roc_*.txt"))) == 4


def test_random_control(mnist_dir):
    res = run_experiment("random_control", tiny("random_control", trials=1), mnist_dir)
    s = res.trials[0].summary["random_decoder"]
    assert s["median_l_min"] > 0 and s["ratio"] == s["median_l_min"] / s["median_self_l_min"]


def test_rerun_from_manifest_is_byte_identical(mnist_dir, tmp_path):
    cache = tmp_path / "cache"
    run_experiment("same_order", tiny("same_order", trials=1), mnist_dir, tmp_path / "a", cache)
    run_from_manifest(tmp_path / "a" / "manifest.json", tmp_path / "b")
    for f in sorted((tmp_path / "a" / "trial_0").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "trial_0" / f.name).read_bytes(), f.name


def test_parallel_matches_serial(mnist_dir, tmp_path):
    s = tiny("shuffle")
    serial = run_experiment("shuffle", s, mnist_dir)
    parallel = run_experiment("shuffle", s, mnist_dir, jobs=2)
    assert serial.aucs() == parallel.aucs()
    assert [t.generator_sha256 for t in serial.trials] == [t.generator_sha256 for t in parallel.trials]


def test_missing_data(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_experiment("shuffle", tiny("shuffle"), tmp_path / "nope")
