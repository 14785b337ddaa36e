import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saeno.errors import InvalidArgumentError
from saeno.numerics import (
    Spectrum,
    band_limited_resample,
    circular_convolve,
    circular_correlate,
    dft_forward,
    dft_inverse,
    half_length,
    irdft,
    mode_mask,
    rdft,
    resample_half_spectrum,
    truncate_modes,
    zero_pad,
)

from oracles import direct_convolve, direct_correlate, direct_dft, trig_interpolant


class TestDft:
    @pytest.mark.parametrize("m", [1, 2, 3, 8, 15, 64])
    def test_matches_direct_sum(self, m):
        x = np.random.default_rng(m).standard_normal(m)
        spec = dft_forward(x)
        np.testing.assert_allclose(spec.coeffs, direct_dft(x)[: half_length(m)], atol=1e-12)

    @pytest.mark.parametrize("m", [1, 2, 7, 16, 33])
    def test_round_trip(self, m):
        x = np.random.default_rng(m).standard_normal(m)
        np.testing.assert_allclose(dft_inverse(dft_forward(x)), x, atol=1e-13)

    def test_delta_is_flat(self):
        x = np.zeros(16)
        x[0] = 1.0
        np.testing.assert_allclose(dft_forward(x).coeffs, np.ones(9))

    def test_length_one(self):
        np.testing.assert_allclose(dft_forward([2.5]).coeffs, [2.5])

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dft_forward([])

    def test_wrong_coefficient_count(self):
        with pytest.raises(InvalidArgumentError):
            Spectrum(np.zeros(4, complex), 8)

    def test_non_hermitian_dc_rejected(self):
        spec = Spectrum(np.array([1 + 1j, 0, 0]), 4)
        with pytest.raises(InvalidArgumentError, match="DC"):
            dft_inverse(spec)

    def test_non_hermitian_nyquist_rejected(self):
        spec = Spectrum(np.array([1, 0, 2j]), 4)
        with pytest.raises(InvalidArgumentError, match="Nyquist"):
            dft_inverse(spec)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 2**31 - 1))
    def test_parseval(self, m, seed):
        x = np.random.default_rng(seed).standard_normal(m)
        full = np.fft.fft(x)
        np.testing.assert_allclose(np.sum(np.abs(full) ** 2) / m, np.sum(x * x), rtol=1e-10)


class TestConvolution:
    @pytest.mark.parametrize("m", [2, 5, 16, 31])
    def test_convolve_oracle(self, m):
        rng = np.random.default_rng(m)
        a, b = rng.standard_normal((2, m))
        np.testing.assert_allclose(circular_convolve(a, b), direct_convolve(a, b), atol=1e-12)

    @pytest.mark.parametrize("m", [2, 5, 16, 31])
    def test_correlate_oracle(self, m):
        rng = np.random.default_rng(100 + m)
        a, b = rng.standard_normal((2, m))
        np.testing.assert_allclose(circular_correlate(a, b), direct_correlate(a, b), atol=1e-12)

    def test_delta_is_identity(self):
        a = np.random.default_rng(0).standard_normal(12)
        delta = np.zeros(12)
        delta[0] = 1.0
        np.testing.assert_allclose(circular_convolve(a, delta), a, atol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError, match="mismatch"):
            circular_convolve(np.ones(4), np.ones(5))

    def test_broadcasts_over_leading_axes(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 1, 10))
        b = rng.standard_normal((1, 4, 10))
        out = circular_convolve(a, b)
        assert out.shape == (3, 4, 10)
        np.testing.assert_allclose(out[2, 3], direct_convolve(a[2, 0], b[0, 3]), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 24), st.integers(0, 2**31 - 1))
    def test_commutative(self, m, seed):
        a, b = np.random.default_rng(seed).standard_normal((2, m))
        np.testing.assert_allclose(circular_convolve(a, b), circular_convolve(b, a), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 24), st.integers(0, 2**31 - 1))
    def test_correlation_is_adjoint_of_convolution(self, m, seed):
        a, b, c = np.random.default_rng(seed).standard_normal((3, m))
        lhs = np.dot(circular_convolve(a, b), c)
        rhs = np.dot(b, circular_correlate(c, a))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestModes:
    def test_zero_pad(self):
        out = zero_pad(np.array([[1.0, 2.0]]), 5)
        np.testing.assert_array_equal(out, [[1, 2, 0, 0, 0]])

    def test_zero_pad_too_long(self):
        with pytest.raises(InvalidArgumentError):
            zero_pad(np.ones(6), 5)

    def test_mask_counts(self):
        assert mode_mask(32, 4).sum() == 4
        assert mode_mask(32, 17).all()

    @pytest.mark.parametrize("k", [0, 18])
    def test_mask_out_of_range(self, k):
        with pytest.raises(InvalidArgumentError):
            mode_mask(32, k)

    def test_full_truncation_is_identity(self):
        x = np.random.default_rng(3).standard_normal(32)
        spec = dft_forward(x)
        np.testing.assert_array_equal(truncate_modes(spec, 17).coeffs, spec.coeffs)

    def test_keep_dc_gives_mean(self):
        x = np.random.default_rng(4).standard_normal(32)
        out = dft_inverse(truncate_modes(dft_forward(x), 1))
        np.testing.assert_allclose(out, np.full(32, x.mean()), atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 40), st.data())
    def test_truncation_idempotent(self, m, data):
        k = data.draw(st.integers(1, half_length(m)))
        x = np.random.default_rng(m).standard_normal(m)
        once = truncate_modes(dft_forward(x), k)
        np.testing.assert_array_equal(truncate_modes(once, k).coeffs, once.coeffs)


class TestResampling:
    @pytest.mark.parametrize("m,r", [(8, 2), (9, 3), (16, 4), (7, 8)])
    def test_matches_trig_interpolant(self, m, r):
        x = np.random.default_rng(m * r).standard_normal(m)
        np.testing.assert_allclose(band_limited_resample(x, r), trig_interpolant(x, r), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 32), st.sampled_from([1, 2, 3, 4, 8]), st.integers(0, 2**31 - 1))
    def test_preserves_grid_values(self, m, r, seed):
        x = np.random.default_rng(seed).standard_normal(m)
        np.testing.assert_allclose(band_limited_resample(x, r)[::r], x, atol=1e-12)

    def test_factor_one_is_copy(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(band_limited_resample(x, 1), x)

    @pytest.mark.parametrize("r", [0, 1.5, -2])
    def test_bad_factor(self, r):
        with pytest.raises(InvalidArgumentError):
            band_limited_resample(np.ones(4), r)

    def test_half_spectrum_zeroes_new_modes(self):
        c = rdft(np.random.default_rng(0).standard_normal(9))
        out = resample_half_spectrum(c, 9, 36)
        np.testing.assert_array_equal(out[:5], c)
        assert np.all(out[5:] == 0)

    def test_downsampling_rejected(self):
        with pytest.raises(InvalidArgumentError):
            resample_half_spectrum(np.zeros(5), 8, 4)

    def test_irdft_of_resampled_is_interpolant_over_r(self):
        x = np.random.default_rng(5).standard_normal(16)
        up = irdft(resample_half_spectrum(rdft(x), 16, 64), 64)
        np.testing.assert_allclose(4 * up, trig_interpolant(x, 4), atol=1e-12)
