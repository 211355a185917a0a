"""Command-line entry point.

Subcommands::

    gen       simulate a system and write a MAGD dataset
    train     fit an interaction model on a dataset
    retune    re-fit only the wrapper of a checkpoint on one long sequence
    eval      roll a checkpoint out on a test set and write the error CSV
    baseline  fit (mlp, lstm) and/or evaluate (linear, mlp, lstm) a baseline
    inspect   print a checkpoint's parameter counts

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
Config files are UTF-8 JSON objects; unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields

import numpy as np

from .baselines import LinearMotion, build_lstm_baseline, build_mlp_baseline
from .io import read_checkpoint, read_dataset, write_checkpoint, write_dataset
from .model import ArchConfig, SECOND_ORDER, build_model, count_params, init_wrapper_from_pretrained
from .preprocessing import TVConfig, add_observation_noise, prepare_noisy_states
from .systems import KURAMOTO, POINT_MASS, PREDATOR_SWARM, generate_dataset, make_spec
from .training import (FULL, METRIC_CHANNELS, WRAPPER_ONLY, TrainConfig, core_digest,
                       evaluate_rollout, monitor_and_trigger, retune_wrapper, train_single_step)

log = logging.getLogger("magnet")

SYSTEM_FLAGS = {"pm": POINT_MASS, "kuramoto": KURAMOTO, "swarm": PREDATOR_SWARM}
DEFAULT_ORIGIN = 3  # leaves four observed states, enough for every predictor's history

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
EXTRA_TRAIN_KEYS = {"model_seed", "noise_scale", "noise_seed", "tv_alpha", "tv_iterations",
                    "tv_epsilon"}
RETUNE_KEYS = {"threshold", "window"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def load_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}; allowed: {sorted(allowed)}")
    return cfg


def _split_config(cfg: dict) -> tuple[dict, dict]:
    return ({k: v for k, v in cfg.items() if k in TRAIN_KEYS},
            {k: v for k, v in cfg.items() if k not in TRAIN_KEYS})


def _tv_config(extra: dict) -> TVConfig:
    base = TVConfig()
    return TVConfig(alpha=extra.get("tv_alpha", base.alpha),
                    iterations=extra.get("tv_iterations", base.iterations),
                    epsilon=extra.get("tv_epsilon", base.epsilon))


def _training_states(dataset, extra: dict) -> np.ndarray:
    """Clean states, or noisy positions with TV velocities if noise is configured."""
    scale = extra.get("noise_scale", 0.0)
    if scale == 0:
        return dataset.states
    if dataset.system != POINT_MASS:
        raise ValueError("noisy training is only defined for the point-mass system")
    noisy = add_observation_noise(dataset.states[..., :2], scale, extra.get("noise_seed", 0))
    return prepare_noisy_states(noisy, dataset.dt, _tv_config(extra))


def cmd_gen(args) -> int:
    system = SYSTEM_FLAGS[args.system]
    # for the swarm, --n counts every agent including the predator
    n = args.n - 1 if system == PREDATOR_SWARM else args.n
    if n < 1:
        raise ValueError("agent count too small")
    spec = make_spec(system, n, seed=args.seed, dt=args.dt)
    dataset = generate_dataset(spec, args.m, args.l, seed=args.seed)
    write_dataset(args.out, dataset)
    print(f"wrote {args.out}: system={system} N={dataset.n_agents} M={args.m} L={args.l}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, TRAIN_KEYS | EXTRA_TRAIN_KEYS)
    train_cfg, extra = _split_config(cfg)
    config = TrainConfig(**train_cfg)
    if config.mode != FULL:
        raise ValueError("train runs in full mode; use retune for wrapper-only fitting")
    dataset = read_dataset(args.data)
    states = _training_states(dataset, extra)
    model = build_model(ArchConfig.for_system(dataset.system), dataset.n_agents,
                        seed=extra.get("model_seed", 0), dt=dataset.dt, system=dataset.system)
    result = train_single_step(model, states, config)
    write_checkpoint(args.out, model)
    for epoch, (tr, va) in enumerate(zip(result.train_losses, result.val_losses[1:])):
        print(f"epoch {epoch} train {tr!r} val {va!r}")
    print(f"wrote {args.out}: validation loss {model.validation_loss!r}")
    return 0


def cmd_retune(args) -> int:
    cfg = load_config(args.config, TRAIN_KEYS | RETUNE_KEYS)
    train_cfg, extra = _split_config(cfg)
    config = TrainConfig.retune_defaults(**train_cfg)
    if config.mode != WRAPPER_ONLY:
        raise ValueError("retune only supports mode 'wrapper-only'")
    pretrained = read_checkpoint(args.ckpt)
    if pretrained.kind != "magnet":
        raise ValueError("retune needs an interaction-model checkpoint")
    dataset = read_dataset(args.data)
    if dataset.n_agents != pretrained.n_agents:
        model = init_wrapper_from_pretrained(pretrained, dataset.n_agents)
    else:
        model = copy.deepcopy(pretrained)
        model.core_frozen = True
    stream = dataset.states
    if stream.shape[0] != 1:
        raise ValueError(f"retune consumes one sequence, {args.data} holds {stream.shape[0]}")
    event = monitor_and_trigger(stream[0], model, extra.get("threshold"),
                                extra.get("window", 50))
    if event is None:
        print("monitor: threshold never crossed")
    else:
        print(f"monitor: triggered at step {event.trigger_step} "
              f"(rolling error {event.rolling_error!r})")
    digest = core_digest(model)
    result = retune_wrapper(model, stream, config)
    if core_digest(model) != digest:
        raise RuntimeError("core tensors changed during wrapper-only re-tuning")
    write_checkpoint(args.out, model)
    print(f"validation loss {result.val_losses[0]!r} -> {model.validation_loss!r}")
    print(f"wrote {args.out}")
    return 0


def _evaluate(predictor, dataset, args) -> None:
    channels = METRIC_CHANNELS[dataset.system]
    if args.noisy:
        if dataset.system != POINT_MASS:
            raise ValueError("--noisy evaluation is only defined for the point-mass system")
        if args.prefix < 3:
            raise ValueError("--prefix must be at least 3 observations")
        noisy = add_observation_noise(dataset.states[:, :args.prefix, :, :2],
                                      args.noise_scale, args.noise_seed)
        initial = prepare_noisy_states(noisy, dataset.dt)[:, -1]
        report = evaluate_rollout(predictor, dataset.states, args.horizon, channels,
                                  origin=args.prefix - 1, initial_states=initial)
    else:
        report = evaluate_rollout(predictor, dataset.states, args.horizon, channels,
                                  origin=args.origin)
    report.to_csv(args.out_csv)
    print(f"wrote {args.out_csv}: step {args.horizon} mse {report.at(args.horizon)!r}")


def cmd_eval(args) -> int:
    model = read_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    _evaluate(model, dataset, args)
    return 0


def cmd_baseline(args) -> int:
    if args.kind == "linear":
        if args.test is None or args.out_csv is None:
            raise UsageError("the linear baseline needs --test and --out-csv")
        _evaluate(LinearMotion(), read_dataset(args.test), args)
        return 0
    if args.data is None or args.out is None:
        raise UsageError(f"the {args.kind} baseline needs --data and --out")
    cfg = load_config(args.config, TRAIN_KEYS | EXTRA_TRAIN_KEYS)
    train_cfg, extra = _split_config(cfg)
    config = TrainConfig(**train_cfg)
    dataset = read_dataset(args.data)
    build = build_mlp_baseline if args.kind == "mlp" else build_lstm_baseline
    model = build(dataset.n_agents, dataset.states.shape[-1], seed=extra.get("model_seed", 0),
                  dt=dataset.dt)
    train_single_step(model, _training_states(dataset, extra), config)
    write_checkpoint(args.out, model)
    print(f"wrote {args.out}: validation loss {model.validation_loss!r}")
    if args.test is not None:
        if args.out_csv is None:
            raise UsageError("--test needs --out-csv")
        _evaluate(model, read_dataset(args.test), args)
    return 0


def cmd_inspect(args) -> int:
    model = read_checkpoint(args.ckpt)
    if model.kind == "magnet":
        core, wrapper = count_params(model)
        print(f"kind=magnet N={model.n_agents} order={model.order} dt={model.dt!r}")
        print(f"core={core}")
        print(f"wrapper={wrapper}")
    else:
        total = sum(t.data.size for t in model.parameters())
        print(f"kind={model.kind} N={model.n_agents}")
        print(f"params={total}")
    print(f"validation_loss={model.validation_loss!r}")
    return 0


def _add_eval_flags(p, required: bool) -> None:
    p.add_argument("--horizon", type=int, required=required, default=100)
    p.add_argument("--out-csv", required=required)
    p.add_argument("--origin", type=int, default=DEFAULT_ORIGIN,
                   help="index of the last observed state (clean evaluation)")
    p.add_argument("--noisy", action="store_true",
                   help="start from TV-denoised noisy observations of the prefix")
    p.add_argument("--prefix", type=int, default=16)
    p.add_argument("--noise-scale", type=float, default=0.01)
    p.add_argument("--noise-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="magnet", description="Multi-agent dynamics learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="simulate a dataset")
    p.add_argument("--system", choices=sorted(SYSTEM_FLAGS), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train an interaction model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retune", help="wrapper-only re-tuning on one sequence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retune)

    p = sub.add_parser("eval", help="rollout error of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    _add_eval_flags(p, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="train and/or evaluate a baseline")
    p.add_argument("--kind", choices=["linear", "mlp", "lstm"], required=True)
    p.add_argument("--data", help="training dataset (mlp, lstm)")
    p.add_argument("--config")
    p.add_argument("--out", help="checkpoint path (mlp, lstm)")
    p.add_argument("--test", help="dataset to evaluate on")
    _add_eval_flags(p, required=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("inspect", help="print parameter counts")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "horizon", 1) < 1:
        parser.print_usage(sys.stderr)
        print("magnet: error: --horizon must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"magnet: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError, TypeError) as exc:
        print(f"magnet: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
