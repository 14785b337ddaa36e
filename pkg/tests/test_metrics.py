import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saeno.architectures import DenseSAE, EncoderConfig
from saeno.errors import DegenerateAtomError, InvalidArgumentError
from saeno.genmodel import DenseModelSpec, generate_dataset
from saeno.metrics import (
    RecoveryReport,
    dictionary_error,
    gram_orthogonality_loss,
    greedy_assignment,
    reconstruction_mse,
    relative_error,
    support_f1,
)


def _unit_cols(a):
    return a / np.linalg.norm(a, axis=0)


class TestDictionaryError:
    def test_truth_is_zero(self):
        D = _unit_cols(np.random.default_rng(0).standard_normal((6, 9)))
        assert dictionary_error(D, D) < 1e-15

    def test_scale_and_sign_invariant(self):
        D = _unit_cols(np.random.default_rng(1).standard_normal((6, 9)))
        learned = D * np.array([3.0, -2.0, 1.0, -1.0, 0.5, 7.0, -0.1, 2.0, 1.0])
        assert dictionary_error(learned, D) < 1e-15

    def test_sign_flip_counts_without_alignment(self):
        D = _unit_cols(np.random.default_rng(2).standard_normal((4, 3)))
        learned = D.copy()
        learned[:, 0] *= -1
        np.testing.assert_allclose(dictionary_error(learned, D, align="none"), 2.0 / 3.0)

    def test_hand_value(self):
        truth = np.eye(2)
        learned = np.array([[1.0, 1.0], [0.0, 1.0]])
        want = (0.0 + np.sqrt(2.0 - np.sqrt(2.0))) / 2.0
        np.testing.assert_allclose(dictionary_error(learned, truth), want, rtol=1e-14)

    def test_greedy_assignment_recovers_permutation(self):
        D = _unit_cols(np.random.default_rng(3).standard_normal((8, 5)))
        perm = np.array([3, 0, 4, 1, 2])
        learned = D[:, perm]
        assert dictionary_error(learned, D) > 0.1
        assert dictionary_error(learned, D, assignment="greedy") < 1e-15
        np.testing.assert_array_equal(learned[:, greedy_assignment(learned, D)], D)

    def test_shift_alignment_on_kernels(self):
        K = np.random.default_rng(4).standard_normal((2, 3, 6))
        K /= np.sqrt(np.sum(K**2, axis=(1, 2), keepdims=True))
        shifted = np.roll(K, 2, axis=-1)
        assert dictionary_error(shifted, K) > 0.1
        assert dictionary_error(shifted, K, align="sign+shift") < 1e-15

    def test_degenerate_atom(self):
        learned = np.eye(3)
        learned[:, 1] = 0.0
        with pytest.raises(DegenerateAtomError) as info:
            dictionary_error(learned, np.eye(3))
        assert info.value.atom == 1

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            dictionary_error(np.eye(3), np.eye(4))

    def test_unknown_options(self):
        with pytest.raises(InvalidArgumentError):
            dictionary_error(np.eye(3), np.eye(3), align="rotate")
        with pytest.raises(InvalidArgumentError):
            dictionary_error(np.eye(3), np.eye(3), assignment="hungarian")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounded_by_sqrt_two(self, seed):
        rng = np.random.default_rng(seed)
        truth = _unit_cols(rng.standard_normal((5, 7)))
        err = dictionary_error(rng.standard_normal((5, 7)), truth)
        assert 0.0 <= err <= np.sqrt(2.0) + 1e-12


class TestGram:
    def test_orthonormal_is_zero(self):
        Q = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 4)))[0]
        assert gram_orthogonality_loss(Q) < 1e-15

    def test_hand_value(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        c = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(gram_orthogonality_loss(A), np.sqrt(2 * c * c) / 2, rtol=1e-14)

    def test_scale_invariant(self):
        A = np.random.default_rng(1).standard_normal((5, 3))
        np.testing.assert_allclose(gram_orthogonality_loss(A * [1, 4, 9]), gram_orthogonality_loss(A))


class TestSupportF1:
    def test_exact_match(self):
        z = np.zeros((2, 10))
        z[0, 3] = 1.0
        z[1, 7] = 2.0
        assert support_f1(z, z) == 1.0

    def test_both_empty(self):
        assert support_f1(np.zeros(5), np.zeros(5)) == 1.0

    def test_one_empty(self):
        z = np.zeros(5)
        z[1] = 1.0
        assert support_f1(np.zeros(5), z) == 0.0
        assert support_f1(z, np.zeros(5)) == 0.0

    def test_half_precision(self):
        truth = np.zeros(10)
        truth[2] = 1.0
        code = np.zeros(10)
        code[[2, 6]] = 1.0
        np.testing.assert_allclose(support_f1(code, truth), 2 * 0.5 / 1.5)

    def test_wrong_map_misses(self):
        truth = np.zeros((2, 8))
        truth[0, 3] = 1.0
        code = np.zeros((2, 8))
        code[1, 3] = 1.0
        assert support_f1(code, truth) == 0.0

    def test_upsampled_with_wraparound_tolerance(self):
        truth = np.zeros((1, 8))
        truth[0, 0] = 1.0
        code = np.zeros((1, 32))
        code[0, 31] = 1.0
        assert support_f1(code, truth, upsample_factor=4, tolerance=0) == 0.0
        assert support_f1(code, truth, upsample_factor=4, tolerance=1) == 1.0

    def test_bad_factor(self):
        with pytest.raises(InvalidArgumentError):
            support_f1(np.zeros(4), np.zeros(4), upsample_factor=0)


class TestRelativeError:
    def test_values(self):
        assert relative_error([3.0, 4.0], [3.0, 4.0]) == 0.0
        np.testing.assert_allclose(relative_error([3.0, 4.0], [0.0, 0.0]), 1.0)

    def test_zero_reference(self):
        assert relative_error([0.0], [0.0]) == 0.0
        assert relative_error([0.0], [1.0]) == np.inf


class TestReconstruction:
    def test_zero_model(self):
        data = generate_dataset(DenseModelSpec(6, 8, 2, seed=1), 4)
        model = DenseSAE(data.dictionary, EncoderConfig(threshold=1e6))
        want = np.mean([np.sum(x * x) / 6 for x in data.samples])
        np.testing.assert_allclose(reconstruction_mse(model, data), want)

    def test_empty(self):
        model = DenseSAE(np.eye(3), EncoderConfig())
        with pytest.raises(InvalidArgumentError):
            reconstruction_mse(model, np.zeros((0, 3)))


class TestReport:
    def _report(self, errs):
        rep = RecoveryReport()
        for e in errs:
            rep.append(e, 0.1, 0.2, None, 0.0)
        return rep

    def test_epochs_to(self):
        rep = self._report([0.3, 0.06, 0.04, 0.01])
        assert rep.epochs_to(0.05) == 3
        assert rep.epochs_to(0.001) is None

    def test_validate_lengths(self):
        rep = self._report([0.3])
        rep.recon_mse.append(0.1)
        with pytest.raises(InvalidArgumentError):
            rep.validate()

    def test_validate_negative(self):
        rep = self._report([0.3, -0.1])
        with pytest.raises(InvalidArgumentError):
            rep.validate()

    def test_final_of_empty_uses_initial(self):
        rep = RecoveryReport(initial_dict_err=0.4)
        assert rep.final() == {"dict_err": 0.4}
