import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saeno.architectures import ConvSAE, DenseSAE, EncoderConfig, decode, encode
from saeno.errors import InvalidArgumentError, NumericDivergenceError
from saeno.genmodel import ConvModelSpec, DenseModelSpec, generate_dataset
from saeno.numerics import circular_correlate
from saeno.training import (
    ArchConfig,
    TrainConfig,
    TrainState,
    build_model,
    finite_difference_check,
    fit,
    grad_step_conv,
    grad_step_dense,
    grad_step_spectral,
    init_from_truth,
    loss_gradient,
    make_lifting,
    model_for_dataset,
    update_direction,
)


def _dense_problem(seed=0, m=10, p=15, lifted=False):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((m, p))
    lifting = make_lifting(m + 3, m, seed, "gaussian") if lifted else None
    model = build_model("dense", D, EncoderConfig(), lifting=lifting)
    x = rng.standard_normal(m)
    z = rng.standard_normal(p) * (rng.random(p) < 0.4)
    return model, x, z


def _conv_problem(seed=0, regime="conv", lifted=False, modes_kept=None, norm="inv_sqrt"):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((2, 2, 5))
    lifting = make_lifting(3, 2, seed, "gaussian") if lifted else None
    model = build_model(regime, K, EncoderConfig(), resolution=12, modes_kept=modes_kept,
                        decoder_norm=norm, lifting=lifting)
    x = rng.standard_normal((2, 12))
    z = rng.standard_normal((2, 12)) * (rng.random((2, 12)) < 0.3)
    return model, x, z


class TestInit:
    def test_zero_noise_copies(self):
        D = np.random.default_rng(0).standard_normal((4, 6))
        out = init_from_truth(D, 0.0, 1)
        np.testing.assert_array_equal(out, D)
        assert out is not D

    def test_noise_std(self):
        out = init_from_truth(np.zeros((100, 100)), 0.02, 3)
        assert abs(out.std() / 0.02 - 1.0) < 0.05

    def test_negative_sigma(self):
        with pytest.raises(InvalidArgumentError):
            init_from_truth(np.zeros(3), -1.0, 0)

    def test_fno_init_is_transform_of_noisy_kernels(self):
        data = generate_dataset(ConvModelSpec(2, 16, 2, 16, seed=1), 2)
        model = model_for_dataset(data, ArchConfig(family="fno"), EncoderConfig(), 0.05, 4)
        noisy = init_from_truth(data.dictionary, 0.05, 4)
        np.testing.assert_allclose(model.spatial_kernels(), noisy, atol=1e-14)


class TestDenseStep:
    def test_zero_residual(self):
        rng = np.random.default_rng(0)
        D = rng.standard_normal((5, 8))
        z = rng.standard_normal(8)
        model = DenseSAE(D.copy(), EncoderConfig())
        grad_step_dense(model, D @ z, z, 0.1)
        np.testing.assert_array_equal(model.dictionary, D)

    def test_inactive_columns_unchanged(self):
        model, x, z = _dense_problem()
        z[3] = 0.0
        before = model.dictionary.copy()
        grad_step_dense(model, x, z, 0.01)
        np.testing.assert_array_equal(model.dictionary[:, 3], before[:, 3])

    def test_rule(self):
        model, x, z = _dense_problem(1)
        D = model.dictionary.copy()
        grad_step_dense(model, x, z, 0.03)
        np.testing.assert_allclose(model.dictionary, D + 0.03 * np.outer(x - D @ z, z), atol=1e-14)

    def test_lifted_with_projection_update(self):
        model, x, z = _dense_problem(2, lifted=True)
        D, P = model.dictionary.copy(), model.lifting.P.copy()
        r = x - P @ D @ z
        grad_step_dense(model, x, z, 0.01, train_lifting=True)
        np.testing.assert_allclose(model.dictionary, D + 0.01 * np.outer(P.T @ r, z), atol=1e-14)
        np.testing.assert_allclose(model.lifting.P, P + 0.01 * np.outer(r, D @ z), atol=1e-14)
        np.testing.assert_array_equal(model.lifting.L, model.lifting.P.T)

    def test_non_finite_update(self):
        model, x, z = _dense_problem()
        with pytest.raises(NumericDivergenceError):
            grad_step_dense(model, x, z, np.inf)


class TestConvStep:
    def test_single_spike_window(self):
        rng = np.random.default_rng(0)
        K = rng.standard_normal((1, 2, 4))
        x = rng.standard_normal((2, 12))
        z = np.zeros((1, 12))
        z[0, 9] = 1.5
        model = ConvSAE(K.copy(), EncoderConfig())
        r = x - decode(model, z)
        grad_step_conv(model, x, z, 0.1)
        window = r[:, [(9 + j) % 12 for j in range(4)]]
        np.testing.assert_allclose(model.kernels[0], K[0] + 0.1 * 1.5 * window, atol=1e-13)

    def test_zero_residual(self):
        model, _, z = _conv_problem()
        K = model.kernels.copy()
        grad_step_conv(model, decode(model, z), z, 0.5)
        np.testing.assert_allclose(model.kernels, K, atol=1e-14)


class TestSpectralStep:
    def test_full_mode_image_is_scaled_correlation(self):
        model, x, z = _conv_problem(3, "fno")
        r = x - decode(model, z)
        before = model.spatial_kernels()
        grad_step_spectral(model, x, z, 0.2)
        want = 0.2 / 12 * circular_correlate(r[None], z[:, None, :])
        np.testing.assert_allclose(model.spatial_kernels() - before, want, atol=1e-12)

    def test_truncated_modes_stay_zero(self):
        model, x, z = _conv_problem(4, "fno", modes_kept=3)
        for _ in range(5):
            grad_step_spectral(model, x, z, 0.3)
        assert np.all(model.weights[..., 3:] == 0)

    def test_support_projection(self):
        model, x, z = _conv_problem(5, "fno")
        before = model.spatial_kernels()
        grad_step_spectral(model, x, z, 0.2, support=5)
        delta = model.spatial_kernels() - before
        assert np.max(np.abs(delta[..., 5:])) < 1e-13
        assert np.max(np.abs(delta[..., :5])) > 1e-6

    def test_wrong_resolution(self):
        model, x, _ = _conv_problem(6, "fno")
        with pytest.raises(InvalidArgumentError):
            update_direction(model, np.zeros((2, 24)), np.zeros((2, 24)))


class TestFiniteDifferences:
    @pytest.mark.parametrize("lifted", [False, True])
    def test_dense(self, lifted):
        model, x, z = _dense_problem(7, lifted=lifted)
        assert finite_difference_check(model, x, z, train_lifting=lifted) < 1e-5

    @pytest.mark.parametrize("lifted", [False, True])
    def test_conv(self, lifted):
        model, x, z = _conv_problem(8, lifted=lifted)
        assert finite_difference_check(model, x, z, train_lifting=lifted) < 1e-5

    @pytest.mark.parametrize("modes_kept,norm", [(None, "inv_sqrt"), (3, "inv_sqrt"), (7, "unit")])
    def test_spectral(self, modes_kept, norm):
        model, x, z = _conv_problem(9, "fno", modes_kept=modes_kept, norm=norm)
        assert finite_difference_check(model, x, z) < 1e-5

    def test_lifted_spectral(self):
        model, x, z = _conv_problem(10, "fno", lifted=True, modes_kept=4)
        assert finite_difference_check(model, x, z, train_lifting=True) < 1e-5

    def test_zero_residual_is_zero(self):
        model, _, z = _dense_problem(11)
        assert finite_difference_check(model, decode(model, z), z) < 1e-8

    def test_bad_eps(self):
        model, x, z = _dense_problem()
        with pytest.raises(InvalidArgumentError):
            finite_difference_check(model, x, z, eps=0.0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradient_is_minus_direction(self, seed):
        model, x, z = _dense_problem(seed, m=4, p=6)
        grad = loss_gradient(model, x, z)["dictionary"]
        np.testing.assert_allclose(grad, -update_direction(model, x, z)["dictionary"])


class TestFit:
    def _data(self):
        return generate_dataset(DenseModelSpec(8, 12, 2, seed=3), 20)

    def test_zero_lr_is_flat(self):
        data = self._data()
        model = build_model("dense", init_from_truth(data.dictionary, 0.05, 0), EncoderConfig())
        D = model.dictionary.copy()
        report = fit(TrainState(model), data, TrainConfig(lr=0.0, epochs=3))
        np.testing.assert_array_equal(model.dictionary, D)
        assert len(set(report.dict_err)) == 1
        assert len(report) == 3

    def test_one_sample_equals_one_step(self):
        data = self._data().subset(1)
        init = init_from_truth(data.dictionary, 0.05, 0)
        a = build_model("dense", init, EncoderConfig())
        b = build_model("dense", init, EncoderConfig())
        fit(TrainState(a), data, TrainConfig(lr=1e-3, epochs=1))
        x = data.samples[0]
        grad_step_dense(b, x, encode(b, x), 1e-3)
        np.testing.assert_array_equal(a.dictionary, b.dictionary)

    def test_batch_mean(self):
        data = self._data().subset(4)
        init = init_from_truth(data.dictionary, 0.05, 0)
        a = build_model("dense", init, EncoderConfig())
        fit(TrainState(a), data, TrainConfig(lr=1e-3, epochs=1, batch_size=4))
        b = build_model("dense", init, EncoderConfig())
        steps = [update_direction(b, x, encode(b, x))["dictionary"] for x in data.samples]
        np.testing.assert_allclose(a.dictionary, init + 1e-3 * np.mean(steps, axis=0), atol=1e-15)

    def test_report_lengths_and_lifting_column(self):
        data = self._data()
        arch = ArchConfig(d_lift=10)
        model = model_for_dataset(data, arch, EncoderConfig(), 0.02, 0)
        state = TrainState(model)
        report = fit(state, data, TrainConfig(epochs=2))
        report.validate()
        assert state.epoch == 2 and len(report) == 2
        assert all(v is not None for v in report.l_orth)

    def test_divergence_location(self):
        data = self._data()
        model = build_model("dense", data.dictionary, EncoderConfig(step=50.0, depth=400))
        with pytest.raises(NumericDivergenceError) as info:
            fit(TrainState(model), data, TrainConfig(epochs=1))
        assert info.value.epoch == 1 and info.value.sample == 0

    def test_normalize_atoms(self):
        data = self._data()
        model = build_model("dense", init_from_truth(data.dictionary, 0.1, 0), EncoderConfig())
        fit(TrainState(model), data, TrainConfig(epochs=1, normalize_atoms=True))
        np.testing.assert_allclose(np.linalg.norm(model.dictionary, axis=0), 1.0, atol=1e-14)

    def test_spectral_fit_matches_conv_when_scaled(self):
        data = generate_dataset(ConvModelSpec(2, 16, 2, 16, seed=5), 6)
        init = init_from_truth(data.dictionary, 0.05, 1)
        enc = EncoderConfig(depth=20, step=0.2, threshold=0.5)
        conv = build_model("conv", init, enc)
        fno = build_model("fno", init, enc, resolution=16)
        fit(TrainState(conv), data, TrainConfig(lr=1e-3, epochs=2))
        fit(TrainState(fno), data, TrainConfig(lr=16e-3, epochs=2))
        np.testing.assert_allclose(fno.spatial_kernels(), conv.kernels, atol=1e-10)

    @pytest.mark.parametrize("kw", [{"lr": -1.0}, {"epochs": -1}, {"batch_size": 0},
                                    {"init_noise": -0.1}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**kw).validate()

    def test_arch_family_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ArchConfig(family="fno").resolve_family("dense")
