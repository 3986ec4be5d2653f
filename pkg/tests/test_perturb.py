import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.fft import dctn

from genattrib.data import load_mnist
from genattrib.exceptions import DataError, UsageError
from genattrib.perturb import (LUMA_BASE_TABLE, CompressionConfig, apply_compression,
                               block_dct, dct_matrix, jpeg_coefficients, jpeg_quant_table,
                               jpeg_roundtrip, quantize_png8, read_image, round_half_away,
                               write_png)

images = arrays(np.float64, (28, 28), elements=st.floats(0, 1))


@pytest.fixture(scope="module")
def digits(mnist_dir):
    return load_mnist(mnist_dir, "test").images[:20]


class TestPng:
    def test_endpoints(self):
        assert quantize_png8(np.array([0.0, 1.0])).tolist() == [0.0, 1.0]

    def test_half_rounds_away(self):
        assert quantize_png8(0.5) == 128 / 255
        assert round_half_away(-2.5) == -3.0 and round_half_away(2.5) == 3.0

    @given(images)
    def test_idempotent_and_close(self, img):
        q = quantize_png8(img)
        assert np.array_equal(quantize_png8(q), q)
        assert np.max(np.abs(q - img)) <= 1 / 510 + 1e-15

    def test_file_round_trip(self, tmp_path):
        img = quantize_png8(np.random.default_rng(0).uniform(size=784))
        write_png(tmp_path / "p.png", img)
        np.testing.assert_array_equal(read_image(tmp_path / "p.png").ravel(), img)

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(DataError):
            read_image(tmp_path / "x.png")


class TestQuantTable:
    def test_q50_is_base(self):
        assert np.array_equal(jpeg_quant_table(50), LUMA_BASE_TABLE)

    def test_q100_all_ones(self):
        assert np.all(jpeg_quant_table(100) == 1)

    def test_q75_dc(self):
        assert jpeg_quant_table(75)[0, 0] == 8

    def test_low_quality_scale(self):
        # q=10 -> scale 500
        assert jpeg_quant_table(10)[0, 0] == (16 * 500 + 50) // 100

    @pytest.mark.parametrize("q", [0, 101, 50.5, True])
    def test_out_of_range(self, q):
        with pytest.raises(UsageError):
            jpeg_quant_table(q)


class TestRoundtrip:
    def test_dct_orthonormal_and_matches_scipy(self):
        c = dct_matrix()
        np.testing.assert_allclose(c @ c.T, np.eye(8), atol=1e-15)
        x = np.random.default_rng(1).standard_normal((1, 16, 24))
        ref = np.stack([[dctn(x[0, i:i + 8, j:j + 8], norm="ortho") for j in range(0, 24, 8)]
                        for i in range(0, 16, 8)])
        got = block_dct(x)[0].reshape(2, 8, 3, 8).transpose(0, 2, 1, 3)
        np.testing.assert_allclose(got, ref, atol=1e-12)

    @pytest.mark.parametrize("q", [10, 50, 90])
    @pytest.mark.parametrize("v", [0.0, 0.3, 0.77, 1.0])
    def test_constant_image(self, q, v):
        out = jpeg_roundtrip(np.full((28, 28), v), q)
        assert np.ptp(out) < 1e-12
        assert np.max(np.abs(out - v)) < jpeg_quant_table(q)[0, 0] / 2 / 255

    def test_quality_monotone_on_digit(self, digits):
        d = digits[0]
        mse = lambda q: np.mean((jpeg_roundtrip(d, q) - d) ** 2)
        assert mse(10) > mse(100)

    def test_energy_sweep(self, digits):
        qs = [10, 30, 50, 70, 90]
        mse = np.array([[np.mean((jpeg_roundtrip(d, q) - d) ** 2) for q in qs] for d in digits])
        violations = sum(int(m[k + 1] > m[k]) for m in mse for k in range(len(qs) - 1))
        assert violations <= 0.05 * mse.size
        assert np.all(np.diff(mse.mean(axis=0)) < 0)

    @pytest.mark.parametrize("q", [10, 30, 50, 75, 90, 100])
    def test_recompression_fixed_point(self, q):
        # 8-aligned and away from the clamp: nothing moves by more than one step
        x = np.clip(0.5 + 0.1 * np.random.default_rng(0).standard_normal((10, 32, 32)), 0, 1)
        once = jpeg_roundtrip(x, q, (32, 32))
        twice = jpeg_roundtrip(once, q, (32, 32))
        diff = jpeg_coefficients(twice, q, (32, 32)) - jpeg_coefficients(once, q, (32, 32))
        assert np.max(np.abs(diff)) <= 1

    def test_recompression_moves_digits_less(self, digits):
        # padding and clamping perturb saturated 28x28 digits, but far less than the first pass
        for q in (10, 50, 90):
            once = jpeg_roundtrip(digits, q)
            twice = jpeg_roundtrip(once, q)
            assert np.mean((twice - once) ** 2) < 0.2 * np.mean((once - digits) ** 2)

    def test_layouts_preserved(self, digits):
        assert jpeg_roundtrip(digits[0], 50).shape == (784,)
        assert jpeg_roundtrip(digits[:3], 50).shape == (3, 784)
        assert jpeg_roundtrip(digits[0].reshape(28, 28), 50).shape == (28, 28)
        stack = jpeg_roundtrip(digits[:2].reshape(2, 28, 28), 50)
        assert stack.shape == (2, 28, 28)
        np.testing.assert_array_equal(stack.reshape(2, -1), jpeg_roundtrip(digits[:2], 50))

    @settings(max_examples=30, deadline=None)
    @given(images, st.integers(1, 100))
    def test_outputs_in_range(self, img, q):
        out = jpeg_roundtrip(img, q)
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1

    def test_deterministic(self, digits):
        assert np.array_equal(jpeg_roundtrip(digits, 40), jpeg_roundtrip(digits, 40))

    def test_odd_sizes_padded(self):
        img = np.random.default_rng(2).uniform(size=(13, 10))
        assert jpeg_roundtrip(img, 80, shape=(13, 10)).shape == (13, 10)


class TestCompressionConfig:
    def test_labels(self):
        assert CompressionConfig().label == "png"
        assert CompressionConfig("jpeg", 70).label == "jpeg_q70"

    def test_invalid(self):
        with pytest.raises(UsageError):
            CompressionConfig("webp")
        with pytest.raises(UsageError):
            CompressionConfig("jpeg", 0)

    def test_apply_yields_8bit_values(self, digits):
        out = apply_compression(digits, CompressionConfig("jpeg", 50))
        np.testing.assert_array_equal(out, quantize_png8(out))
        assert np.array_equal(apply_compression(digits, CompressionConfig()), digits)
