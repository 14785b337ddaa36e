"""Analytic-gradient dictionary training.

Codes come from the encoder and are held fixed when the dictionary
gradient is taken. For the loss ``0.5 * ||x - decode(z)||^2`` with residual
``r = x - decode(z)`` and ``r' = P^T r`` (``r' = r`` without lifting) the
updates are

dense   ``D += lr * r' z^T``
conv    ``D_c += lr * (r' ⋆ z_c)`` restricted to the kernel support
fno     ``W_c += lr * nu * F(r') conj(F z_c)`` on retained modes

and, with ``train_lifting``, ``P += lr * r y_hat^T`` where ``y_hat`` is the
lifted reconstruction (``L`` stays tied to ``P^T``). The spectral rule is
``M`` times the Euclidean gradient of the full-spectrum weights, so its
spatial image is ``lr * nu**2 * (r' ⋆ z_c)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .architectures import (
    ConvSAE,
    DenseSAE,
    EncoderConfig,
    FnoSAE,
    LiftingPair,
    decode,
    decode_lifted,
    effective_atoms,
    encode,
    orthonormal_lift,
)
from .errors import InvalidArgumentError, NumericDivergenceError
from .metrics import RecoveryReport, dictionary_error, gram_orthogonality_loss
from .numerics import circular_correlate, half_length, irdft, rdft, zero_pad


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 1
    init_noise: float = 0.02
    seed: int = 0
    normalize_atoms: bool = False
    train_lifting: bool = False
    lifting_lr_scale: float = 1.0

    def validate(self):
        if not self.lr >= 0:
            raise InvalidArgumentError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.init_noise < 0:
            raise InvalidArgumentError("init_noise must be >= 0")
        if self.lifting_lr_scale < 0:
            raise InvalidArgumentError("lifting_lr_scale must be >= 0")


@dataclass
class TrainState:
    model: object
    epoch: int = 0
    report: RecoveryReport = field(default_factory=RecoveryReport)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    step: int = 0


def init_from_truth(truth, sigma, seed):
    """Ground truth plus i.i.d. ``N(0, sigma^2)`` noise."""
    truth = np.asarray(truth, dtype=np.float64)
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return truth.copy()
    return truth + np.random.default_rng([int(seed), 7]).normal(0.0, sigma, truth.shape)


def build_model(regime, dictionary, encoder: EncoderConfig, *, resolution=None,
                modes_kept=None, decoder_norm="inv_sqrt", lifting: Optional[LiftingPair] = None):
    """Wrap an original-space dictionary in a model, lifting it as ``L D`` when asked.

    With a tied orthonormal lifting ``P L D = D`` so the lifted model starts
    from the same effective dictionary as the unlifted one.
    """
    d = np.asarray(dictionary, dtype=np.float64)
    if regime == "dense":
        inner = d if lifting is None else lifting.L @ d
        return DenseSAE(inner, encoder, lifting)
    inner = d if lifting is None else np.einsum("dm,cmh->cdh", lifting.L, d)
    if regime == "conv":
        return ConvSAE(inner, encoder, lifting)
    if regime == "fno":
        if resolution is None:
            raise InvalidArgumentError("spectral model needs a resolution")
        return FnoSAE.from_kernels(inner, resolution, modes_kept, encoder, decoder_norm, lifting)
    raise InvalidArgumentError(f"unknown regime {regime!r}")


def make_lifting(d_lift, m_in, seed, kind="orthonormal"):
    rng = np.random.default_rng([int(seed), 11])
    if kind == "orthonormal":
        L = orthonormal_lift(d_lift, m_in, rng)
    elif kind == "gaussian":
        L = rng.standard_normal((d_lift, m_in)) / np.sqrt(d_lift)
    elif kind == "identity":
        L = np.eye(d_lift, m_in)
    else:
        raise InvalidArgumentError(f"unknown lifting kind {kind!r}")
    return LiftingPair.tied_to(L)


def _residual(model, x, z):
    y_hat = decode_lifted(model, z)
    x_hat = decode(model, z)
    return np.asarray(x, dtype=np.float64) - x_hat, y_hat


def _lifted_residual(model, r):
    return r if model.lifting is None else model.lifting.P.T @ r


def update_direction(model, x, z, train_lifting=False, support=None):
    """Per-parameter update directions; the step adds ``lr`` times each entry.

    ``support`` (spectral models only) projects the spatial image of the
    weight update onto the first ``support`` samples.
    """
    return _update_with_residual(model, x, z, train_lifting, support)[0]


def _update_with_residual(model, x, z, train_lifting=False, support=None):
    r, y_hat = _residual(model, x, z)
    rl = _lifted_residual(model, r)
    z = np.asarray(z, dtype=np.float64)
    out = {}
    if model.regime == "dense":
        out["dictionary"] = np.outer(rl, z)
    elif model.regime == "conv":
        corr = circular_correlate(rl[None, :, :], z[:, None, :])
        out["kernels"] = corr[..., : model.support]
    else:
        resolution = z.shape[-1]
        if resolution != model.resolution:
            raise InvalidArgumentError("spectral training must run at the model resolution")
        step = model.nu * rdft(rl)[None, :, :] * np.conj(rdft(z))[:, None, :]
        step[..., ~model.mask] = 0.0
        if support is not None:
            image = irdft(step, resolution)
            step = rdft(zero_pad(image[..., :support], resolution))
            step[..., ~model.mask] = 0.0
        out["weights"] = step
    if train_lifting:
        if model.lifting is None:
            raise InvalidArgumentError("train_lifting requires a lifted model")
        out["P"] = r.reshape(r.shape[0], -1) @ y_hat.reshape(y_hat.shape[0], -1).T
    return out, r


def loss_gradient(model, x, z, train_lifting=False):
    """Euclidean gradient of ``0.5 * ||x - decode(z)||^2`` with codes held fixed.

    Spectral weights use the full-spectrum convention (each half-spectrum
    entry stands for itself only), which makes the spectral update ``-M``
    times this gradient.
    """
    direction = update_direction(model, x, z, train_lifting)
    grads = {k: -v for k, v in direction.items()}
    if model.regime == "fno":
        grads["weights"] = grads["weights"] / model.resolution
    return grads


def apply_update(model, direction, lr, lifting_lr=None):
    lifting_lr = lr if lifting_lr is None else lifting_lr
    if not np.isfinite(lr) or not np.isfinite(lifting_lr):
        raise NumericDivergenceError("non-finite learning rate")
    for name, step in direction.items():
        if not np.all(np.isfinite(step)):
            raise NumericDivergenceError(f"non-finite update for {name}")
    if "dictionary" in direction:
        model.dictionary = model.dictionary + lr * direction["dictionary"]
    if "kernels" in direction:
        model.kernels = model.kernels + lr * direction["kernels"]
    if "weights" in direction:
        model.weights = model.weights + lr * direction["weights"]
    if "P" in direction:
        model.lifting.set_projection(model.lifting.P + lifting_lr * direction["P"])
    return model


def grad_step_dense(model: DenseSAE, x, z, lr, train_lifting=False):
    return apply_update(model, update_direction(model, x, z, train_lifting), lr)


def grad_step_conv(model: ConvSAE, x, z, lr, train_lifting=False):
    return apply_update(model, update_direction(model, x, z, train_lifting), lr)


def grad_step_spectral(model: FnoSAE, x, z, lr, train_lifting=False, support=None):
    return apply_update(model, update_direction(model, x, z, train_lifting, support), lr)


def grad_step(model, x, z, lr, train_lifting=False):
    return apply_update(model, update_direction(model, x, z, train_lifting), lr)


def _parameter_views(model, train_lifting):
    """(name, getter, setter) for every real parameter array to perturb."""
    views = []
    if model.regime == "dense":
        views.append("dictionary")
    elif model.regime == "conv":
        views.append("kernels")
    else:
        views.append("weights")
    if train_lifting:
        views.append("P")
    return views


def _get(model, name):
    return model.lifting.P if name == "P" else getattr(model, name)


def _set(model, name, value):
    if name == "P":
        model.lifting.set_projection(value)
    else:
        setattr(model, name, value)


def _loss(model, x, z):
    r = np.asarray(x) - decode(model, z)
    return 0.5 * float(np.sum(r * r))


def finite_difference_check(model, x, z, eps=1e-5, train_lifting=False):
    """Max normwise relative deviation between central differences and :func:`loss_gradient`.

    Spectral weights are perturbed in their real and imaginary parts on
    retained modes only. Interior modes stand for a conjugate pair, so their
    numerical derivative is halved before comparison.
    """
    if not eps > 0:
        raise InvalidArgumentError("eps must be > 0")
    analytic = loss_gradient(model, x, z, train_lifting)
    probe = model.copy()
    worst = 0.0
    for name in _parameter_views(probe, train_lifting):
        base = _get(probe, name).copy()
        an = analytic[name]
        if name == "weights":
            fd = np.zeros_like(base)
            n_half = half_length(probe.resolution)
            mult = np.full(n_half, 2.0)
            mult[0] = 1.0
            if probe.resolution % 2 == 0:
                mult[-1] = 1.0
            for idx in np.ndindex(base.shape):
                if not probe.mask[idx[-1]]:
                    continue
                parts = [1.0]
                if mult[idx[-1]] == 2.0:
                    parts.append(1j)
                for unit in parts:
                    vals = []
                    for sgn in (1.0, -1.0):
                        trial = base.copy()
                        trial[idx] += sgn * eps * unit
                        _set(probe, name, trial)
                        vals.append(_loss(probe, x, z))
                    fd[idx] += unit * (vals[0] - vals[1]) / (2 * eps)
                fd[idx] /= mult[idx[-1]]
            an = np.where(probe.mask, an, 0.0)
        else:
            fd = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                vals = []
                for sgn in (1.0, -1.0):
                    trial = base.copy()
                    trial[idx] += sgn * eps
                    _set(probe, name, trial)
                    vals.append(_loss(probe, x, z))
                fd[idx] = (vals[0] - vals[1]) / (2 * eps)
        _set(probe, name, base)
        # floor the scale at eps so rounding noise on a vanishing gradient does not count
        scale = max(np.max(np.abs(an)), np.max(np.abs(fd)), eps)
        worst = max(worst, float(np.max(np.abs(fd - an)) / scale))
    return worst


def normalize_model_atoms(model):
    """Rescale each atom (in the model's own space) to unit norm."""
    if model.regime == "dense":
        model.dictionary = model.dictionary / np.linalg.norm(model.dictionary, axis=0)
    elif model.regime == "conv":
        norms = np.sqrt(np.sum(model.kernels**2, axis=(1, 2), keepdims=True))
        model.kernels = model.kernels / norms
    else:
        k = model.spatial_kernels()
        model.set_spatial_kernels(k / np.sqrt(np.sum(k**2, axis=(1, 2), keepdims=True)))
    return model


def comparable_truth(model, truth):
    """Zero-pad truth kernels to the length of the model's effective atoms."""
    atoms = effective_atoms(model)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim == 3 and atoms.shape[-1] != truth.shape[-1]:
        truth = zero_pad(truth, atoms.shape[-1])
    return atoms, truth


def model_dict_err(model, truth, align="sign"):
    atoms, truth = comparable_truth(model, truth)
    return dictionary_error(atoms, truth, align)


def fit(state: TrainState, data, config: TrainConfig, truth=None, align="sign",
        on_epoch=None) -> RecoveryReport:
    """Per-sample (or mini-batch) SGD: encode, then take the analytic step.

    Each epoch appends the dictionary error against ``truth`` (defaults to
    the dataset's ground truth), the mean training reconstruction MSE
    (residuals measured before each step), the Gram orthogonality loss of
    the effective dictionary, that of ``L`` when lifted, and wall time.
    """
    config.validate()
    model = state.model
    truth = data.dictionary if truth is None else truth
    report = state.report
    if report.initial_dict_err is None:
        report.initial_dict_err = model_dict_err(model, truth, align)
    samples = data.samples
    n = len(samples)
    for _ in range(config.epochs):
        t0 = time.perf_counter()
        sq_err = 0.0
        for start in range(0, n, config.batch_size):
            batch = samples[start:start + config.batch_size]
            acc = None
            for offset, x in enumerate(batch):
                try:
                    z = encode(model, x)
                    direction, r = _update_with_residual(model, x, z, config.train_lifting)
                except NumericDivergenceError as exc:
                    raise NumericDivergenceError(
                        f"divergence at epoch {state.epoch + 1}, sample {start + offset}: {exc}",
                        iteration=exc.iteration, epoch=state.epoch + 1, sample=start + offset,
                    ) from exc
                sq_err += float(np.sum(r * r)) / r.size
                if acc is None:
                    acc = direction
                else:
                    for key in acc:
                        acc[key] = acc[key] + direction[key]
            if len(batch) > 1:
                acc = {k: v / len(batch) for k, v in acc.items()}
            try:
                apply_update(model, acc, config.lr, config.lr * config.lifting_lr_scale)
            except NumericDivergenceError as exc:
                raise NumericDivergenceError(
                    f"divergence at epoch {state.epoch + 1}, sample {start}: {exc}",
                    epoch=state.epoch + 1, sample=start,
                ) from exc
            state.step += 1
        if config.normalize_atoms:
            normalize_model_atoms(model)
        state.epoch += 1
        atoms = effective_atoms(model)
        l_orth = None if model.lifting is None else gram_orthogonality_loss(model.lifting.L)
        report.append(
            model_dict_err(model, truth, align),
            sq_err / n,
            gram_orthogonality_loss(atoms),
            l_orth,
            time.perf_counter() - t0,
        )
        if on_epoch is not None:
            on_epoch(state)
    return report


@dataclass
class ArchConfig:
    """Which model family to train on a dataset and how to build it.

    ``family`` defaults to ``dense`` for dense data and ``conv`` for
    convolutional data; ``fno`` selects the spectral model.
    """

    family: Optional[str] = None
    d_lift: Optional[int] = None
    lifting: str = "orthonormal"
    modes_kept: Optional[int] = None
    decoder_norm: str = "inv_sqrt"

    def resolve_family(self, regime):
        family = self.family or regime
        allowed = ("dense",) if regime == "dense" else ("conv", "fno")
        if family not in allowed:
            raise InvalidArgumentError(f"architecture {family!r} cannot train on {regime} data")
        return family


def model_for_dataset(data, arch: ArchConfig, encoder: EncoderConfig, init_noise, seed):
    """Model initialized at the dataset's ground truth plus ``init_noise``."""
    spec = data.model_spec
    family = arch.resolve_family(spec.regime)
    lifting = None
    if arch.d_lift:
        width = spec.m if spec.regime == "dense" else spec.channels
        lifting = make_lifting(arch.d_lift, width, seed, arch.lifting)
    init = init_from_truth(data.dictionary, init_noise, seed)
    resolution = None if spec.regime == "dense" else spec.resolution
    return build_model(family, init, encoder, resolution=resolution, modes_kept=arch.modes_kept,
                       decoder_norm=arch.decoder_norm, lifting=lifting)
