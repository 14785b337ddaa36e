"""Command-line entry point: ``saeno {gen,train,eval,equiv,exp}``.

Every command reads a TOML config (a file or a bundled ``--preset``) and
accepts dotted overrides such as ``--train.lr=0.04``. Outputs go to
``--out``, else ``paths.output``, else ``$SAENO_OUTPUT_ROOT/<command>``.

Exit codes: 0 success, 1 configuration or input error, 2 numeric
divergence, 3 failed equivalence check under ``--assert``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import equivalence as eq
from .architectures import encode
from .config import load_preset, parse_config, preset_names
from .errors import (
    ConfigError,
    FormatError,
    HypothesisViolationError,
    InvalidArgumentError,
    NumericDivergenceError,
    ResourceLimitError,
    SingularPreconditionerError,
)
from .experiments import evaluate_at_resolution, run_experiment
from .genmodel import generate_dataset
from .metrics import reconstruction_mse, support_f1
from .persistence import (
    default_output_root,
    emit_reports,
    load_dataset,
    read_checkpoint,
    save_checkpoint,
    save_dataset,
    write_curves,
)
from .training import TrainState, fit, make_lifting, model_dict_err, model_for_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_EQUIV_FAILED = 0, 1, 2, 3
DATASET_FILE = "dataset.bin"
CHECKPOINT_FILE = "model.ckpt"

log = logging.getLogger("saeno")


def _parser():
    parser = argparse.ArgumentParser(prog="saeno", description=__doc__.splitlines()[0])
    parser.add_argument("--list-presets", action="store_true", help="print bundled presets and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("config", nargs="?", help="TOML config file")
        p.add_argument("--preset", help="bundled preset name instead of a config file")
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("gen", help="generate a synthetic dataset"))
    p = common(sub.add_parser("train", help="train a model on a dataset"))
    p.add_argument("--data", help="dataset file (defaults to paths.input)")
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset"))
    p.add_argument("--data", help="dataset file (defaults to paths.input)")
    p.add_argument("--checkpoint", help="checkpoint file (defaults to paths.checkpoint)")
    p.add_argument("--factor", type=int, default=1, help="upsampling factor for conv data")
    p = common(sub.add_parser("equiv", help="run an equivalence check"))
    p.add_argument("--assert", dest="strict", action="store_true",
                   help="enforce hypotheses and exit 3 when a deviation exceeds the tolerance")
    common(sub.add_parser("exp", help="run an experiment"))
    return parser


def _split_overrides(extra, parser):
    overrides = []
    for item in extra:
        if item.startswith("--") and "=" in item and "." in item.split("=", 1)[0]:
            overrides.append(item[2:])
        else:
            parser.error(f"unrecognized argument {item!r}")
    return overrides


def _load(args, overrides):
    if args.preset and args.config:
        raise ConfigError("give either a config file or --preset, not both")
    if args.preset:
        cfg = load_preset(args.preset, overrides)
    elif args.config:
        cfg = parse_config(args.config, overrides)
    else:
        raise ConfigError("a config file or --preset is required")
    if cfg.command is not None and cfg.command != args.command:
        log.warning("config declares command %r, running %r", cfg.command, args.command)
    return cfg


def _out_dir(args, cfg):
    if args.out:
        return Path(args.out)
    if cfg.paths.get("output"):
        return Path(cfg.paths["output"])
    return default_output_root() / args.command


def _existing(path, what):
    if not path:
        raise ConfigError(f"no {what} path given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _echo(cfg):
    return cfg.raw


def cmd_gen(args, cfg):
    if cfg.model is None:
        raise ConfigError("gen needs a [model] table")
    data = generate_dataset(cfg.model, cfg.n_samples, cfg.max_elements)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / DATASET_FILE)
    emit_reports(None, out, config=_echo(cfg),
                 extra={"dataset": str(out / DATASET_FILE), "n_samples": len(data)})
    print(out / DATASET_FILE)
    return EXIT_OK


def cmd_train(args, cfg):
    data = load_dataset(_existing(args.data or cfg.paths.get("input"), "dataset"))
    model = model_for_dataset(data, cfg.arch, cfg.encoder, cfg.train.init_noise, cfg.seed)
    state = TrainState(model, rng=np.random.default_rng(cfg.seed))
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    try:
        fit(state, data, cfg.train)
    except NumericDivergenceError as exc:
        emit_reports(state.report, out, config=_echo(cfg), record_wall_time=cfg.record_wall_time,
                     extra={"divergence": {"message": str(exc), "epoch": exc.epoch,
                                           "sample": exc.sample, "iteration": exc.iteration}})
        raise
    save_checkpoint(model, out / CHECKPOINT_FILE, step=state.step, epoch=state.epoch, rng=state.rng)
    emit_reports(state.report, out, config=_echo(cfg), record_wall_time=cfg.record_wall_time,
                 extra={"checkpoint": str(out / CHECKPOINT_FILE), "architecture": model.regime})
    print(out / CHECKPOINT_FILE)
    return EXIT_OK


def cmd_eval(args, cfg):
    data = load_dataset(_existing(args.data or cfg.paths.get("input"), "dataset"))
    ckpt = read_checkpoint(_existing(args.checkpoint or cfg.paths.get("checkpoint"), "checkpoint"))
    model = ckpt.model
    metrics = {"dict_err": model_dict_err(model, data.dictionary)}
    if args.factor == 1:
        metrics["recon_mse"] = reconstruction_mse(model, data)
        f1 = [support_f1(encode(model, x), z) for x, z in zip(data.samples, data.codes)]
        metrics["support_f1"] = float(np.mean(f1))
    else:
        if data.regime != "conv":
            raise ConfigError("--factor needs convolutional data")
        metrics.update(evaluate_at_resolution(model, data.samples, data.codes, args.factor))
    metrics["factor"] = args.factor
    out = _out_dir(args, cfg)
    emit_reports(None, out, config=_echo(cfg), extra={"metrics": metrics})
    for k, v in metrics.items():
        print(f"{k}: {v}")
    return EXIT_OK


def run_equiv(settings, seed, strict):
    check = settings["check"]
    instance = settings.get("instance") or None
    lr = settings.get("lr")
    if check == "arch_lifted":
        return eq.check_arch_equiv_lifted(settings["regime"], instance, seed, settings["lifting"],
                                          settings["range_condition"],
                                          report_only=not strict or settings["report_only"])
    if check == "train_lifted":
        return eq.check_train_equiv_lifted(settings["regime"], instance, settings["steps"], seed,
                                           1e-3 if lr is None else lr, settings["lifting"])
    if check == "conv_fno":
        return eq.check_equiv_conv_fno(instance, settings["steps"], seed,
                                       settings["support_matched"],
                                       2e-3 if lr is None else lr)
    if check == "lifted_fno":
        return eq.check_lifted_fno(instance, settings["steps"], seed,
                                   1e-2 if lr is None else lr, settings["lifting"])
    if check == "preconditioner":
        cfg = eq.resolve_instance(settings["regime"], instance)
        width = cfg["m"] if settings["regime"] == "dense" else cfg["channels"]
        pair = make_lifting(cfg["d_lift"], width, seed, settings["lifting"])
        return eq.EquivalenceReport(0.0, 0.0, 0, eq.lifting_flags(pair),
                                    eq.preconditioner_diagnostics(pair.L, seed))
    raise ConfigError(f"unknown equivalence check {check!r}")


def cmd_equiv(args, cfg):
    out = _out_dir(args, cfg)
    settings = cfg.equiv
    try:
        report = run_equiv(settings, cfg.seed, args.strict)
    except HypothesisViolationError as exc:
        emit_reports(None, out, config=_echo(cfg), verdicts={"passed": False},
                     extra={"error": str(exc), "max_abs_update_dev": None,
                            "max_abs_iterate_dev": None})
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_EQUIV_FAILED if args.strict else EXIT_CONFIG
    tol = settings["tolerance"]
    passed = report.passed(tol)
    payload = report.to_dict()
    flags = payload.pop("hypothesis_flags")
    emit_reports(None, out, config=_echo(cfg), flags=flags,
                 verdicts={"passed": passed, "tolerance": tol}, extra=payload)
    print(f"max_abs_iterate_dev={report.max_abs_iterate_dev:.3e} "
          f"max_abs_update_dev={report.max_abs_update_dev:.3e} passed={passed}")
    if args.strict and not passed:
        return EXIT_EQUIV_FAILED
    return EXIT_OK


def cmd_exp(args, cfg):
    if cfg.experiment is None:
        raise ConfigError("exp needs an [experiment] table")
    spec = cfg.experiment
    out = _out_dir(args, cfg)
    result = run_experiment(spec)
    verdicts = {k: v for k, v in result.summary.items() if k.startswith("verdict")}
    details = {k: v for k, v in result.summary.items() if not k.startswith("verdict")}
    flags = result.equivalence.hypothesis_flags if result.equivalence else {}
    extra = {"experiment": spec.id, "details": details, "warnings": result.warnings}
    if result.equivalence is not None:
        extra["max_abs_update_dev"] = result.equivalence.max_abs_update_dev
        extra["max_abs_iterate_dev"] = result.equivalence.max_abs_iterate_dev
    emit_reports(result.reports, out, config=_echo(cfg), flags=flags, verdicts=verdicts,
                 extra=extra, record_wall_time=cfg.record_wall_time)
    if result.curves:
        write_curves(result.curves, out)
    for k, v in verdicts.items():
        print(f"{k}: {v}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


COMMAND_TABLE = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "equiv": cmd_equiv,
                 "exp": cmd_exp}


def main(argv=None):
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    overrides = _split_overrides(extra, parser)
    try:
        cfg = _load(args, overrides)
        logging.basicConfig(level=cfg.log_level.upper(), format="%(levelname)s %(message)s")
        return COMMAND_TABLE[args.command](args, cfg)
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidArgumentError, FormatError, ResourceLimitError,
            SingularPreconditionerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
