"""Numerical checks of the lifting and conv/spectral equivalences.

Two kinds of statement are checked:

* exact algebraic identities, which hold for every input up to rounding,
  e.g. ``P dD_L = lr (P P^T)(x - P D_L z) z^T`` for the dense lifted update;
* conditional equivalences, which need hypotheses such as a tied
  orthonormal lifting with ``D_L = L D_0`` or spectral weights that are the
  transform of spatial kernels with all modes kept.

Each check returns an :class:`EquivalenceReport` recording the largest
deviations it saw and which hypotheses held.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from .architectures import (
    ConvSAE,
    DenseSAE,
    EncoderConfig,
    FnoSAE,
    LiftingPair,
    decode,
    effective_atoms,
    encode,
    unlifted,
)
from .errors import HypothesisViolationError, InvalidArgumentError, SingularPreconditionerError
from .genmodel import synthesize
from .numerics import circular_correlate, irdft, rdft, zero_pad
from .training import make_lifting, update_direction, apply_update

HYPOTHESIS_TOL = 1e-10

DEFAULT_INSTANCES = {
    "dense": {"m": 20, "p": 30, "k": 3, "d_lift": 24, "depth": 10},
    "conv": {"channels": 4, "resolution": 32, "num_kernels": 3, "support": 5, "d_lift": 6,
             "depth": 10},
    "fno": {"channels": 4, "resolution": 32, "num_kernels": 3, "support": 5, "d_lift": 6,
            "depth": 10},
}


@dataclass
class EquivalenceReport:
    max_abs_iterate_dev: float = 0.0
    max_abs_update_dev: float = 0.0
    steps_compared: int = 0
    hypothesis_flags: Dict[str, bool] = field(default_factory=dict)
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def passed(self, tol):
        return self.max_abs_iterate_dev <= tol and self.max_abs_update_dev <= tol


def resolve_instance(regime, instance):
    if regime not in DEFAULT_INSTANCES:
        raise InvalidArgumentError(f"unknown regime {regime!r}")
    cfg = dict(DEFAULT_INSTANCES[regime])
    cfg.update(instance or {})
    return cfg


def _unit(a, axes):
    return a / np.sqrt(np.sum(a * a, axis=axes, keepdims=True))


def _random_dictionary(regime, cfg, rng):
    if regime == "dense":
        return _unit(rng.standard_normal((cfg["m"], cfg["p"])), 0)
    shape = (cfg["num_kernels"], cfg["channels"], cfg["support"])
    return _unit(rng.standard_normal(shape), (1, 2))


def _random_code(regime, cfg, rng, amplitude=15.0):
    if regime == "dense":
        z = np.zeros(cfg["p"])
        idx = rng.choice(cfg["p"], size=cfg["k"], replace=False)
        z[idx] = amplitude + rng.standard_normal(cfg["k"])
        return z
    z = np.zeros((cfg["num_kernels"], cfg["resolution"]))
    c = rng.integers(cfg["num_kernels"])
    z[c, rng.integers(cfg["resolution"])] = amplitude + rng.standard_normal()
    return z


def _operator_norm_sq(regime, atoms, resolution=None):
    if regime == "dense":
        return float(np.linalg.norm(atoms, 2) ** 2)
    F = rdft(zero_pad(atoms, resolution))
    gram = np.einsum("cdk,edk->kce", F, np.conj(F))
    return float(max(np.linalg.eigvalsh(g).max() for g in gram))


def _encoder_for(regime, atoms, cfg, threshold=0.5):
    lip = _operator_norm_sq(regime, atoms, cfg.get("resolution"))
    return EncoderConfig(depth=cfg["depth"], step=0.9 / lip, threshold=threshold)


def _wrap(regime, inner, encoder, lifting, cfg, decoder_norm="inv_sqrt", modes_kept=None):
    if regime == "dense":
        return DenseSAE(inner, encoder, lifting)
    if regime == "conv":
        return ConvSAE(inner, encoder, lifting)
    return FnoSAE.from_kernels(inner, cfg["resolution"], modes_kept, encoder, decoder_norm,
                               lifting)


def _project_dictionary(regime, P, D_L):
    if regime == "dense":
        return P @ D_L
    return np.einsum("md,cdh->cmh", P, D_L)


def _shared_encoder(regime, pair, D_L, cfg):
    """Encoder step that is stable for both the lifted and the projected dictionary."""
    res = cfg.get("resolution")
    lip = max(_operator_norm_sq(regime, D_L, res),
              _operator_norm_sq(regime, _project_dictionary(regime, pair.P, D_L), res))
    return EncoderConfig(depth=cfg["depth"], step=0.9 / lip, threshold=0.5)


def _lift_dictionary(regime, L, D0):
    if regime == "dense":
        return L @ D0
    return np.einsum("dm,cmh->cdh", L, D0)


def lifting_flags(pair: LiftingPair, lifted_dictionary=None, regime="dense"):
    L = pair.L
    flags = {
        "tied": bool(np.array_equal(pair.P, L.T)),
        "orthonormal_columns": bool(np.linalg.norm(L.T @ L - np.eye(L.shape[1])) <= HYPOTHESIS_TOL),
    }
    if lifted_dictionary is not None:
        D = np.asarray(lifted_dictionary)
        if regime == "dense":
            back = L @ (L.T @ D)
        else:
            back = np.einsum("dm,cmh->cdh", L, np.einsum("dm,cdh->cmh", L, D))
        scale = max(1.0, float(np.max(np.abs(D))))
        flags["range_condition"] = bool(np.max(np.abs(back - D)) <= HYPOTHESIS_TOL * scale)
    return flags


def _max_trace_dev(trace_a, trace_b):
    return max(float(np.max(np.abs(a - b))) for a, b in zip(trace_a, trace_b))


def check_arch_equiv_lifted(regime, instance=None, seed=0, lifting_kind="orthonormal",
                            range_condition=True, report_only=False):
    """Compare encoder iterates of a lifted model (input ``L x``) with the
    unlifted model whose dictionary is ``P D_L``.

    Raises :class:`HypothesisViolationError` when the tied / orthonormal /
    range hypotheses fail, unless ``report_only`` is set.
    """
    cfg = resolve_instance(regime, instance)
    rng = np.random.default_rng([int(seed), 101])
    width = cfg["m"] if regime == "dense" else cfg["channels"]
    pair = make_lifting(cfg["d_lift"], width, seed, lifting_kind)
    D0 = _random_dictionary(regime, cfg, rng)
    if range_condition:
        D_L = _lift_dictionary(regime, pair.L, D0)
    else:
        shape = (cfg["d_lift"], cfg["p"]) if regime == "dense" else \
            (cfg["num_kernels"], cfg["d_lift"], cfg["support"])
        D_L = _unit(rng.standard_normal(shape), 0 if regime == "dense" else (1, 2))
    flags = lifting_flags(pair, D_L, "dense" if regime == "dense" else "conv")
    if regime == "fno":
        flags["full_modes"] = True
    if not report_only and not all(flags.values()):
        failed = [k for k, v in flags.items() if not v]
        raise HypothesisViolationError(f"hypotheses violated: {', '.join(failed)}")

    encoder = _shared_encoder(regime, pair, D_L, cfg)
    lifted_model = _wrap(regime, D_L, encoder, pair, cfg)
    plain_model = unlifted(lifted_model)
    x = synthesize(_random_code(regime, cfg, rng), _project_dictionary(regime, pair.P, D_L))
    _, trace_lifted = encode(lifted_model, x, trace=True)
    _, trace_plain = encode(plain_model, x, trace=True)
    iterate_dev = _max_trace_dev(trace_lifted, trace_plain)
    out_dev = float(np.max(np.abs(decode(lifted_model, trace_lifted[-1])
                                  - decode(plain_model, trace_plain[-1]))))
    return EquivalenceReport(
        max_abs_iterate_dev=iterate_dev,
        max_abs_update_dev=0.0,
        steps_compared=cfg["depth"],
        hypothesis_flags=flags,
        details={"max_abs_output_dev": out_dev, "regime": regime, "lifting": lifting_kind},
    )


def lifted_update_identity(model, x, z, lr):
    """Deviation of ``P * (lifted update)`` from ``lr (P P^T) r ⋆ z`` in original space.

    Works for every regime; spectral updates are compared through their
    spatial image ``nu F^-1``. The identity is exact for any projection.
    """
    if model.lifting is None:
        raise InvalidArgumentError("model has no lifting")
    P = model.lifting.P
    direction = update_direction(model, x, z)
    r = np.asarray(x) - decode(model, z)
    pre = P @ P.T
    if model.regime == "dense":
        got = lr * P @ direction["dictionary"]
        want = lr * pre @ np.outer(r, z)
    elif model.regime == "conv":
        got = lr * np.einsum("md,cdh->cmh", P, direction["kernels"])
        want = lr * circular_correlate((pre @ r)[None], np.asarray(z)[:, None, :])[..., : model.support]
    else:
        image = model.nu * irdft(lr * direction["weights"], model.resolution)
        got = np.einsum("md,cdh->cmh", P, image)
        want = lr * model.nu ** 2 * circular_correlate((pre @ r)[None], np.asarray(z)[:, None, :])
        if not model.full_modes:
            want = irdft(np.where(model.mask, rdft(want), 0.0), model.resolution)
    return float(np.max(np.abs(got - want)))


def check_train_equiv_lifted(regime, instance=None, steps=5, seed=0, lr=1e-3,
                             lifting_kind="orthonormal"):
    """Run a lifted and an unlifted trainer side by side from ``D_L = L D_0``.

    ``max_abs_update_dev`` is the largest deviation of the exact
    preconditioned identity over all steps. When ``L^T L = I`` the
    effective lifted trajectory is also compared with the plain trainer
    (``details['max_abs_plain_dev']``).
    """
    cfg = resolve_instance(regime, instance)
    rng = np.random.default_rng([int(seed), 202])
    width = cfg["m"] if regime == "dense" else cfg["channels"]
    pair = make_lifting(cfg["d_lift"], width, seed, lifting_kind)
    if not np.array_equal(pair.P, pair.L.T):
        raise HypothesisViolationError("projection must be tied to the lifting")
    truth = _random_dictionary(regime, cfg, rng)
    D0 = truth + 0.05 * rng.standard_normal(truth.shape)
    D_L = _lift_dictionary(regime, pair.L, D0)
    encoder = _shared_encoder(regime, pair, D_L, cfg)
    lifted_model = _wrap(regime, D_L, encoder, pair, cfg)
    plain_model = unlifted(lifted_model)
    flags = lifting_flags(pair, D_L, "dense" if regime == "dense" else "conv")
    compare_plain = flags["orthonormal_columns"]

    identity_dev = 0.0
    plain_dev = 0.0
    iterate_dev = 0.0
    per_step = []
    for _ in range(steps):
        x = synthesize(_random_code(regime, cfg, rng), truth)
        z_l, trace_l = encode(lifted_model, x, trace=True)
        identity_dev = max(identity_dev, lifted_update_identity(lifted_model, x, z_l, lr))
        apply_update(lifted_model, update_direction(lifted_model, x, z_l), lr)
        if compare_plain:
            z_p, trace_p = encode(plain_model, x, trace=True)
            iterate_dev = max(iterate_dev, _max_trace_dev(trace_l, trace_p))
            apply_update(plain_model, update_direction(plain_model, x, z_p), lr)
            dev = float(np.max(np.abs(effective_atoms(lifted_model) - effective_atoms(plain_model))))
            plain_dev = max(plain_dev, dev)
            per_step.append(dev)
    details = {"regime": regime, "lifting": lifting_kind, "identity_dev": identity_dev}
    if compare_plain:
        details["max_abs_plain_dev"] = plain_dev
        details["per_step_plain_dev"] = per_step
    return EquivalenceReport(
        max_abs_iterate_dev=iterate_dev,
        max_abs_update_dev=identity_dev,
        steps_compared=steps,
        hypothesis_flags=flags,
        details=details,
    )


class ConvFnoPair:
    """A conv SAE and a spectral SAE stepped in lockstep.

    The spectral weights start at ``F D_0 / nu`` so both models share the
    same spatial dictionary; the spectral learning rate is ``M`` times the
    conv one when ``nu = 1/sqrt(M)`` (``1/nu**2`` in general).
    """

    def __init__(self, kernels, resolution, encoder, lr_conv, decoder_norm="inv_sqrt",
                 support_matched=False):
        self.conv = ConvSAE(kernels, encoder)
        self.fno = FnoSAE.from_kernels(kernels, resolution, None, encoder, decoder_norm)
        if not self.fno.full_modes:
            raise HypothesisViolationError("conv/spectral equivalence needs all modes kept")
        self.resolution = resolution
        self.lr_conv = lr_conv
        self.lr_fno = lr_conv / self.fno.nu ** 2
        self.support_matched = support_matched
        self.steps = 0

    def dictionary_dev(self):
        return float(np.max(np.abs(self.fno.spatial_kernels()
                                   - zero_pad(self.conv.kernels, self.resolution))))

    def step(self, x):
        z_c, trace_c = encode(self.conv, x, trace=True)
        z_f, trace_f = encode(self.fno, x, trace=True)
        iterate_dev = _max_trace_dev(trace_c, trace_f)
        apply_update(self.conv, update_direction(self.conv, x, z_c), self.lr_conv)
        support = self.conv.support if self.support_matched else None
        apply_update(self.fno, update_direction(self.fno, x, z_f, support=support), self.lr_fno)
        self.steps += 1
        return iterate_dev, self.dictionary_dev()


def check_equiv_conv_fno(instance=None, steps=5, seed=0, support_matched=False, lr_conv=2e-3,
                         decoder_norm="inv_sqrt", modes_kept=None):
    cfg = resolve_instance("conv", {"channels": 2, "support": 32, **(instance or {})})
    M = cfg["resolution"]
    if modes_kept is not None and modes_kept != M // 2 + 1:
        raise HypothesisViolationError("conv/spectral equivalence needs all modes kept")
    rng = np.random.default_rng([int(seed), 303])
    truth = _random_dictionary("conv", cfg, rng)
    D0 = truth + 0.05 * rng.standard_normal(truth.shape)
    encoder = _encoder_for("conv", D0, cfg)
    pair = ConvFnoPair(D0, M, encoder, lr_conv, decoder_norm, support_matched)
    iterate_dev = 0.0
    update_dev = pair.dictionary_dev()
    per_step = [update_dev]
    for _ in range(steps):
        x = synthesize(_random_code("conv", cfg, rng), truth)
        it, dd = pair.step(x)
        iterate_dev = max(iterate_dev, it)
        update_dev = max(update_dev, dd)
        per_step.append(dd)
    flags = {
        "full_modes": True,
        "inv_sqrt_norm": decoder_norm == "inv_sqrt",
        "weights_are_transform": True,
        "support_matched": bool(support_matched or cfg["support"] == M),
    }
    return EquivalenceReport(
        max_abs_iterate_dev=iterate_dev,
        max_abs_update_dev=update_dev,
        steps_compared=steps,
        hypothesis_flags=flags,
        details={"per_step_dict_dev": per_step, "lr_conv": lr_conv, "lr_fno": pair.lr_fno},
    )


def check_lifted_fno(instance=None, steps=5, seed=0, lr=1e-2, lifting_kind="orthonormal",
                     modes_kept=None):
    """Lifted spectral trainer against the preconditioned spatial identity
    (and, for orthonormal ``L``, against a plain spectral trainer)."""
    cfg = resolve_instance("fno", instance)
    rng = np.random.default_rng([int(seed), 404])
    pair = make_lifting(cfg["d_lift"], cfg["channels"], seed, lifting_kind)
    truth = _random_dictionary("fno", cfg, rng)
    D0 = truth + 0.05 * rng.standard_normal(truth.shape)
    D_L = _lift_dictionary("fno", pair.L, D0)
    encoder = _shared_encoder("fno", pair, D_L, cfg)
    lifted_model = _wrap("fno", D_L, encoder, pair, cfg, modes_kept=modes_kept)
    plain_model = unlifted(lifted_model)
    flags = lifting_flags(pair, D_L, "conv")
    flags["full_modes"] = lifted_model.full_modes
    compare_plain = flags["orthonormal_columns"]
    identity_dev = plain_dev = iterate_dev = 0.0
    for _ in range(steps):
        x = synthesize(_random_code("fno", cfg, rng), truth)
        z_l, trace_l = encode(lifted_model, x, trace=True)
        identity_dev = max(identity_dev, lifted_update_identity(lifted_model, x, z_l, lr))
        apply_update(lifted_model, update_direction(lifted_model, x, z_l), lr)
        if compare_plain:
            z_p, trace_p = encode(plain_model, x, trace=True)
            iterate_dev = max(iterate_dev, _max_trace_dev(trace_l, trace_p))
            apply_update(plain_model, update_direction(plain_model, x, z_p), lr)
            plain_dev = max(plain_dev, float(np.max(np.abs(
                effective_atoms(lifted_model) - effective_atoms(plain_model)))))
    details = {"identity_dev": identity_dev, "lifting": lifting_kind}
    if compare_plain:
        details["max_abs_plain_dev"] = plain_dev
    return EquivalenceReport(iterate_dev, identity_dev, steps, flags, details)


def _power(apply, n, rng, max_iter=20000, tol=1e-14):
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(max_iter):
        w = apply(v)
        new_value = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        if abs(new_value - value) <= tol * abs(new_value):
            return new_value
        value = new_value
    return value


def preconditioner_diagnostics(L, seed=0):
    """Condition number of ``L^T L`` (power / inverse-power iteration) and
    its Frobenius distance from the identity."""
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.size == 0:
        raise InvalidArgumentError("lifting must be a non-empty matrix")
    G = L.T @ L
    n = G.shape[0]
    try:
        factor = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise SingularPreconditionerError("L^T L is not positive definite") from exc
    rng = np.random.default_rng(seed)
    lam_max = _power(lambda v: G @ v, n, rng)
    inv_max = _power(lambda v: scipy.linalg.cho_solve(factor, v), n, rng)
    if inv_max <= 0 or lam_max <= 0 or 1.0 / inv_max <= 1e-12 * lam_max:
        raise SingularPreconditionerError("L^T L is numerically singular")
    lam_min = 1.0 / inv_max
    return {
        "condition_number": lam_max / lam_min,
        "lambda_max": lam_max,
        "lambda_min": lam_min,
        "identity_deviation": float(np.linalg.norm(G - np.eye(n))),
    }
