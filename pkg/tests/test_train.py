import json

import numpy as np
import pytest

from conftest import random_network
from genattrib.data import LabeledDataset
from genattrib.exceptions import (ChecksumError, FormatError, TruncationError, UsageError,
                                  VersionError)
from genattrib.network import forward
from genattrib.train import (MAGIC, TrainConfig, extract_decoder, generator_bytes, load_generator,
                             parse_generator_bytes, read_generator_file, save_generator,
                             train_autoencoder, weight_init)


def _single_image_ds(n=16):
    img = np.random.default_rng(3).uniform(size=n)
    return LabeledDataset(np.tile(img, (8, 1)), np.zeros(8, dtype=int), (4, 4))


@pytest.fixture(scope="module")
def tiny_ae():
    cfg = TrainConfig(steps=200, batch_size=4, hidden=(8, 4), learning_rate=0.05)
    return train_autoencoder(_single_image_ds(), cfg)


class TestTraining:
    def test_memorizes_single_image(self, tiny_ae):
        assert tiny_ae.manifest["final_loss"] < 0.01

    def test_loss_trend_decreases(self, tiny_ae):
        curve = tiny_ae.manifest["loss_curve"]
        assert curve[-1][1] < curve[0][1]

    def test_zero_steps_rejected(self):
        with pytest.raises(UsageError):
            train_autoencoder(_single_image_ds(), TrainConfig(steps=0))

    def test_bit_identical_rerun(self, tiny_ae):
        cfg = TrainConfig(steps=200, batch_size=4, hidden=(8, 4), learning_rate=0.05)
        again = train_autoencoder(_single_image_ds(), cfg)
        assert again.decoder.equals(tiny_ae.decoder) and again.encoder.equals(tiny_ae.encoder)
        assert generator_bytes(again.decoder, again.manifest) == generator_bytes(tiny_ae.decoder, tiny_ae.manifest)

    def test_init_seed_changes_decoder(self):
        base = dict(steps=20, batch_size=4, hidden=(8, 4))
        a = train_autoencoder(_single_image_ds(), TrainConfig(weight_init_seed=0, **base))
        b = train_autoencoder(_single_image_ds(), TrainConfig(weight_init_seed=1, **base))
        assert np.max(np.abs(a.decoder.flat_params() - b.decoder.flat_params())) > 1e-6

    def test_manifest_contents(self, tiny_ae):
        m = tiny_ae.manifest
        assert m["dims"] == [16, 8, 4, 8, 16]
        assert m["config"]["steps"] == 200
        assert m["rng"]


class TestWeightInit:
    def test_same_seed(self):
        assert weight_init([5, 3], 4).equals(weight_init([5, 3], 4))

    def test_pinned_seed_pair_differs(self):
        assert not weight_init([5, 3], 0).equals(weight_init([5, 3], 1))

    def test_glorot_bound(self):
        g = weight_init([784, 64], 0)
        bound = np.sqrt(6 / 848)
        assert round(bound, 4) == 0.0841
        assert np.max(np.abs(g.layers[0].weight)) <= bound
        assert np.max(np.abs(g.layers[0].weight)) > 0.95 * bound
        assert np.all(g.layers[0].bias == 0)


class TestDecoder:
    def test_composition(self, tiny_ae):
        x = _single_image_ds().images[:3]
        dec = extract_decoder(tiny_ae)
        np.testing.assert_array_equal(forward(dec, forward(tiny_ae.encoder, x)), tiny_ae.reconstruct(x))

    def test_input_dim(self, tiny_ae):
        assert extract_decoder(tiny_ae).input_dim == 4

    def test_isolated_from_autoencoder(self, tiny_ae):
        dec = extract_decoder(tiny_ae)
        before = dec.flat_params().copy()
        with pytest.raises(ValueError):
            tiny_ae.decoder.layers[0].weight[0, 0] = 5.0
        tiny_ae.manifest["final_loss"] = -1.0
        assert np.array_equal(dec.flat_params(), before)


class TestWeightFiles:
    def test_round_trip(self, tmp_path, rng):
        g = random_network(rng, [4, 6, 3], id="g")
        save_generator(g, tmp_path / "g.mlpgen", {"note": "x"})
        back, manifest = read_generator_file(tmp_path / "g.mlpgen")
        assert back.equals(g) and back.id == "g"
        assert manifest == {"note": "x"}
        assert json.loads((tmp_path / "g.mlpgen.manifest.json").read_text()) == {"note": "x"}

    def test_magic(self, rng):
        raw = generator_bytes(random_network(rng, [2, 2]))
        assert raw.startswith(MAGIC)
        with pytest.raises(FormatError):
            parse_generator_bytes(b"XXXXXX" + raw[6:])

    def test_corrupted_byte(self, rng):
        raw = bytearray(generator_bytes(random_network(rng, [3, 3])))
        raw[-20] ^= 0xFF
        with pytest.raises(ChecksumError):
            parse_generator_bytes(bytes(raw))

    def test_unknown_version(self, rng):
        raw = bytearray(generator_bytes(random_network(rng, [3, 3])))
        raw[6] = 99
        with pytest.raises(VersionError):
            parse_generator_bytes(bytes(raw))

    def test_truncated(self, rng):
        raw = generator_bytes(random_network(rng, [3, 3]))
        for cut in (4, len(raw) // 2, len(raw) - 1):
            with pytest.raises(TruncationError):
                parse_generator_bytes(raw[:cut])

    def test_load_generator(self, tmp_path, rng):
        g = random_network(rng, [2, 5])
        save_generator(g, tmp_path / "a.mlpgen")
        assert load_generator(tmp_path / "a.mlpgen").equals(g)
        assert not (tmp_path / "a.mlpgen.manifest.json").exists()
