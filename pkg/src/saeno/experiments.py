"""Desk-scale versions of the four recovery studies.

Every runner takes an :class:`ExperimentSpec`, builds one dataset and one
noisy initialization, and trains each arm from copies of them so the arms
differ only in architecture. Results come back as an
:class:`ExperimentResult` holding a :class:`RecoveryReport` per arm, extra
curves, a summary with verdicts, and any warnings.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .architectures import ConvSAE, EncoderConfig, FnoSAE, decode, effective_atoms, encode
from .equivalence import ConvFnoPair, EquivalenceReport
from .errors import HypothesisViolationError, InvalidArgumentError
from .genmodel import ModelSpec, generate_dataset
from .metrics import RecoveryReport, gram_orthogonality_loss, relative_error, support_f1
from .numerics import band_limited_resample, half_length, zero_pad
from .training import (
    ArchConfig,
    TrainConfig,
    TrainState,
    apply_update,
    build_model,
    fit,
    init_from_truth,
    make_lifting,
    model_dict_err,
    update_direction,
)

EXPERIMENT_IDS = ("lifting_accel", "smooth_recovery", "full_mode_equiv", "resolution_robustness")

REQUIRED_SWEEPS = {
    "lifting_accel": ("arms",),
    "smooth_recovery": ("smoothness", "modes_kept"),
    "full_mode_equiv": ("support_matched",),
    "resolution_robustness": ("factors",),
}

DEFAULT_SWEEPS = {
    "lifting_accel": {"arms": ["sae", "lsae_learned", "lsae_fixed"]},
    "smooth_recovery": {"smoothness": [0.1], "modes_kept": [8]},
    "full_mode_equiv": {"support_matched": [True]},
    "resolution_robustness": {"factors": [1, 2, 4, 8]},
}


@dataclass
class ExperimentSpec:
    id: str
    model: ModelSpec
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    n_samples: int = 1000
    sweep: Dict[str, list] = field(default_factory=dict)
    seed: int = 0
    threshold: float = 0.05
    eval_samples: int = 50
    reinterpolate_arm: bool = False
    cross_check_steps: int = 20
    fno_lr: Optional[float] = None

    def __post_init__(self):
        merged = dict(DEFAULT_SWEEPS.get(self.id, {}))
        merged.update(self.sweep or {})
        self.sweep = merged

    def validate(self):
        if self.id not in EXPERIMENT_IDS:
            raise InvalidArgumentError(f"unknown experiment id {self.id!r}")
        for key in REQUIRED_SWEEPS[self.id]:
            values = self.sweep.get(key)
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise InvalidArgumentError(f"sweep {key!r} must be a nonempty list")
        if self.n_samples < 1:
            raise InvalidArgumentError("n_samples must be >= 1")
        self.model.validate()
        self.encoder.validate()
        self.train.validate()
        wants_conv = self.id != "lifting_accel"
        if wants_conv and self.model.regime != "conv":
            raise InvalidArgumentError(f"{self.id} needs a convolutional model spec")

    def seeded_model(self):
        return dataclasses.replace(self.model, seed=self.seed)

    def to_dict(self):
        return {
            "id": self.id,
            "model": self.model.to_dict(),
            "encoder": dataclasses.asdict(self.encoder),
            "train": dataclasses.asdict(self.train),
            "arch": dataclasses.asdict(self.arch),
            "n_samples": self.n_samples,
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "seed": self.seed,
            "threshold": self.threshold,
            "eval_samples": self.eval_samples,
            "reinterpolate_arm": self.reinterpolate_arm,
            "cross_check_steps": self.cross_check_steps,
            "fno_lr": self.fno_lr,
        }


@dataclass
class ExperimentResult:
    id: str
    reports: Dict[str, RecoveryReport] = field(default_factory=dict)
    curves: Dict[str, list] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    equivalence: Optional[EquivalenceReport] = None


def _train(model, data, train: TrainConfig, truth=None):
    state = TrainState(model)
    fit(state, data, train, truth=truth)
    return state.report


def _arm_summary(report: RecoveryReport, threshold):
    out = dict(report.final())
    out["initial_dict_err"] = report.initial_dict_err
    out["epochs_to_threshold"] = report.epochs_to(threshold)
    return out


def compare_trainers(model_a, model_b, samples, lr_a, lr_b=None):
    """Step two models on the same samples; largest effective-dictionary gap per step."""
    lr_b = lr_a if lr_b is None else lr_b
    devs = []
    for x in samples:
        apply_update(model_a, update_direction(model_a, x, encode(model_a, x)), lr_a)
        apply_update(model_b, update_direction(model_b, x, encode(model_b, x)), lr_b)
        devs.append(float(np.max(np.abs(effective_atoms(model_a) - effective_atoms(model_b)))))
    return devs


def run_lifting_acceleration(spec: ExperimentSpec) -> ExperimentResult:
    """SAE against lifted SAEs (learned ``L`` and fixed orthonormal ``L``)."""
    spec.validate()
    model_spec = spec.seeded_model()
    if not spec.arch.d_lift:
        raise InvalidArgumentError("lifting_accel needs arch.d_lift")
    data = generate_dataset(model_spec, spec.n_samples)
    init = init_from_truth(data.dictionary, spec.train.init_noise, spec.seed)
    regime = model_spec.regime
    width = model_spec.m if regime == "dense" else model_spec.channels
    resolution = None if regime == "dense" else model_spec.resolution

    def build(lifted):
        lifting = make_lifting(spec.arch.d_lift, width, spec.seed, spec.arch.lifting) \
            if lifted else None
        return build_model(regime, init, spec.encoder, resolution=resolution, lifting=lifting)

    arms = {
        "sae": (False, False),
        "lsae_learned": (True, True),
        "lsae_fixed": (True, False),
    }
    result = ExperimentResult(spec.id)
    for name in spec.sweep["arms"]:
        if name not in arms:
            raise InvalidArgumentError(f"unknown arm {name!r}")
        lifted, learn_l = arms[name]
        train = dataclasses.replace(spec.train, train_lifting=learn_l)
        result.reports[name] = _train(build(lifted), data, train)
        result.summary[name] = _arm_summary(result.reports[name], spec.threshold)

    steps = min(spec.cross_check_steps, len(data))
    if steps:
        devs = compare_trainers(build(True), build(False), data.samples[:steps], spec.train.lr)
        result.curves["fixed_vs_sae_step_dev"] = devs
        result.summary["fixed_vs_sae_max_step_dev"] = max(devs)
    if "sae" in result.reports and "lsae_learned" in result.reports:
        e_sae = result.reports["sae"].epochs_to(spec.threshold)
        e_learned = result.reports["lsae_learned"].epochs_to(spec.threshold)
        result.summary["verdict_learned_not_slower"] = bool(
            e_learned is not None and (e_sae is None or e_learned <= e_sae))
    return result


def _conv_arms(spec, data, modes_kept, init):
    model_spec = data.model_spec
    cnn = ConvSAE(init, spec.encoder)
    fno = FnoSAE.from_kernels(init, model_spec.resolution, modes_kept, spec.encoder,
                              spec.arch.decoder_norm)
    fno_lr = spec.fno_lr if spec.fno_lr is not None else spec.train.lr / fno.nu ** 2
    return cnn, fno, fno_lr


def run_smooth_recovery(spec: ExperimentSpec) -> ExperimentResult:
    """SAE-CNN against mode-truncated SAE-FNO per smoothness level."""
    spec.validate()
    result = ExperimentResult(spec.id)
    levels = []
    for smoothness in spec.sweep["smoothness"]:
        level = None if smoothness is None or smoothness >= 1.0 else float(smoothness)
        model_spec = dataclasses.replace(spec.seeded_model(), smoothness=level)
        data = generate_dataset(model_spec, spec.n_samples)
        init = init_from_truth(data.dictionary, spec.train.init_noise, spec.seed)
        cnn_key = f"cnn@s={smoothness}"
        result.reports[cnn_key] = _train(ConvSAE(init, spec.encoder), data, spec.train)
        for modes_kept in spec.sweep["modes_kept"]:
            modes_kept = half_length(model_spec.resolution) if modes_kept is None else int(modes_kept)
            if modes_kept - 1 < model_spec.cutoff_mode:
                result.warnings.append(
                    f"modes_kept={modes_kept} keeps indices below {modes_kept}, under the kernel "
                    f"bandwidth (cutoff index {model_spec.cutoff_mode}) at smoothness {smoothness}"
                )
            _, fno, fno_lr = _conv_arms(spec, data, modes_kept, init)
            fno_key = f"fno@s={smoothness},mk={modes_kept}"
            train = dataclasses.replace(spec.train, lr=fno_lr)
            result.reports[fno_key] = _train(fno, data, train)
            cnn_final = result.reports[cnn_key].final()["dict_err"]
            fno_final = result.reports[fno_key].final()["dict_err"]
            levels.append({
                "smoothness": smoothness,
                "modes_kept": modes_kept,
                "cnn_final_dict_err": cnn_final,
                "fno_final_dict_err": fno_final,
                "fno_not_worse": bool(fno_final <= cnn_final),
                "claim_applies": level is not None,
            })
    result.summary["levels"] = levels
    result.summary["verdict_fno_not_worse"] = all(
        lv["fno_not_worse"] for lv in levels if lv["claim_applies"])
    return result


def _epoch_row(report, model, truth, sq_err, n, t0):
    report.append(model_dict_err(model, truth), sq_err / n,
                  gram_orthogonality_loss(effective_atoms(model)), None, time.perf_counter() - t0)


def run_full_mode_equivalence(spec: ExperimentSpec) -> ExperimentResult:
    """Train SAE-CNN and full-mode SAE-FNO in lockstep; per-epoch dictionary gap."""
    spec.validate()
    model_spec = spec.seeded_model()
    data = generate_dataset(model_spec, spec.n_samples)
    init = init_from_truth(data.dictionary, spec.train.init_noise, spec.seed)
    resolution = model_spec.resolution
    if spec.arch.modes_kept not in (None, half_length(resolution)):
        raise HypothesisViolationError("full-mode equivalence needs all modes kept")
    result = ExperimentResult(spec.id)
    for matched in spec.sweep["support_matched"]:
        pair = ConvFnoPair(init, resolution, spec.encoder, spec.train.lr,
                           spec.arch.decoder_norm, support_matched=bool(matched))
        reports = {"cnn": RecoveryReport(), "fno": RecoveryReport()}
        for arm, model in (("cnn", pair.conv), ("fno", pair.fno)):
            reports[arm].initial_dict_err = model_dict_err(model, data.dictionary)
        dev_curve = [pair.dictionary_dev()]
        iterate_dev = 0.0
        for _ in range(spec.train.epochs):
            t0 = time.perf_counter()
            sq = {"cnn": 0.0, "fno": 0.0}
            for x in data.samples:
                for arm, model in (("cnn", pair.conv), ("fno", pair.fno)):
                    r = x - decode(model, encode(model, x))
                    sq[arm] += float(np.sum(r * r)) / r.size
                it, _ = pair.step(x)
                iterate_dev = max(iterate_dev, it)
            for arm, model in (("cnn", pair.conv), ("fno", pair.fno)):
                _epoch_row(reports[arm], model, data.dictionary, sq[arm], len(data), t0)
            dev_curve.append(pair.dictionary_dev())
        tag = "matched" if matched else "unmatched"
        for arm in reports:
            result.reports[f"{arm}@{tag}"] = reports[arm]
        result.curves[f"dict_dev@{tag}"] = dev_curve
        eq = EquivalenceReport(
            max_abs_iterate_dev=iterate_dev,
            max_abs_update_dev=max(dev_curve),
            steps_compared=pair.steps,
            hypothesis_flags={
                "full_modes": pair.fno.full_modes,
                "inv_sqrt_norm": spec.arch.decoder_norm == "inv_sqrt",
                "weights_are_transform": True,
                "support_matched": bool(matched or model_spec.support == resolution),
            },
            details={"per_epoch_dict_dev": dev_curve, "lr_conv": pair.lr_conv,
                     "lr_fno": pair.lr_fno},
        )
        result.summary[tag] = eq.to_dict()
        if result.equivalence is None:
            result.equivalence = eq
    return result


def _resample_kernels(kernels, resolution, factor):
    """Spatial kernels re-interpolated to a ``factor`` times finer grid (sum-preserving)."""
    return band_limited_resample(zero_pad(kernels, resolution), factor) / factor


def evaluate_at_resolution(model, samples, codes, factor, tolerance=None):
    """Mean support F1 and relative reconstruction error on upsampled inputs."""
    tolerance = factor // 2 if tolerance is None else tolerance
    f1, err = [], []
    for x, z_true in zip(samples, codes):
        x_r = band_limited_resample(x, factor)
        z = encode(model, x_r)
        f1.append(support_f1(z, z_true, factor, tolerance))
        err.append(relative_error(x_r, decode(model, z)))
    return {"support_f1": float(np.mean(f1)), "relative_error": float(np.mean(err))}


def run_resolution_robustness(spec: ExperimentSpec) -> ExperimentResult:
    """Train at the base grid, then infer on band-limited upsampled inputs."""
    spec.validate()
    model_spec = spec.seeded_model()
    full = generate_dataset(model_spec, spec.n_samples + spec.eval_samples)
    data = full.subset(spec.n_samples)
    eval_x = full.samples[spec.n_samples:]
    eval_z = full.codes[spec.n_samples:]
    init = init_from_truth(full.dictionary, spec.train.init_noise, spec.seed)
    resolution = model_spec.resolution
    cnn, fno, fno_lr = _conv_arms(spec, data, spec.arch.modes_kept, init)
    result = ExperimentResult(spec.id)
    result.reports["cnn"] = _train(cnn, data, spec.train)
    result.reports["fno"] = _train(fno, data, dataclasses.replace(spec.train, lr=fno_lr))
    arms = {"cnn": cnn, "fno": fno}
    rows = []
    for factor in spec.sweep["factors"]:
        factor = int(factor)
        models = dict(arms)
        if spec.reinterpolate_arm:
            models["cnn_reinterp"] = ConvSAE(_resample_kernels(cnn.kernels, resolution, factor),
                                             spec.encoder)
        row = {"factor": factor}
        for name, model in models.items():
            row[name] = evaluate_at_resolution(model, eval_x, eval_z, factor)
        rows.append(row)
    result.summary["factors"] = rows
    upsampled = [r for r in rows if r["factor"] > 1]
    result.summary["verdict_fno_f1"] = all(r["fno"]["support_f1"] >= 0.95 for r in upsampled)
    result.summary["verdict_fno_error_not_worse"] = all(
        r["fno"]["relative_error"] <= r["cnn"]["relative_error"] for r in upsampled)
    return result


RUNNERS = {
    "lifting_accel": run_lifting_acceleration,
    "smooth_recovery": run_smooth_recovery,
    "full_mode_equiv": run_full_mode_equivalence,
    "resolution_robustness": run_resolution_robustness,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    spec.validate()
    return RUNNERS[spec.id](spec)


def preset(name) -> ExperimentSpec:
    """Experiment spec from a bundled preset file, e.g. ``preset('smooth_recovery_desk')``."""
    from .config import load_preset

    cfg = load_preset(name)
    if cfg.experiment is None:
        raise InvalidArgumentError(f"preset {name!r} has no experiment section")
    return cfg.experiment
