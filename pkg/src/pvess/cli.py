"""Command-line entry point (``pvess``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .env import SeriesError, save_series, synth_series
from .harness import (
    METHODS,
    Lab,
    ReportSchemaError,
    emit_report,
    load_model,
    lr_ablation,
    make_report,
    policy_fn,
    run_case,
)
from .ppo import LR_SCHEDULES, ActorCritic
from .proto import PrototypeSet, explain
from .storage import ContractViolation


def _method(name: str) -> str:
    name = name.replace("-", "_")
    if name not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def _parse_obs(text: str) -> np.ndarray:
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"--obs must be four comma-separated numbers, got {text!r}") from exc
    if len(values) != 4 or not np.all(np.isfinite(values)):
        raise ValueError(f"--obs must be four finite numbers (price,pv,soc,loh), got {text!r}")
    return np.array(values)


def cmd_synth_data(args) -> None:
    save_series(synth_series(args.days, args.seed), args.out)
    print(f"wrote {args.days * 24} hours to {args.out}")


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    lab = Lab(cfg)
    net, curve = lab.train_blackbox(args.case, args.lr_schedule, args.steps)
    net.save(args.out, meta={"kind": "blackbox", "case_id": args.case, "curve": asdict(curve)})
    curve.to_csv(Path(args.out).with_suffix(".curve.csv"))
    print(f"saved black box to {args.out} (final training loss {curve.loss[-1]:.6g})")


def _blackbox(lab: Lab, args) -> ActorCritic:
    if args.ckpt:
        model = load_model(args.ckpt)
        if not isinstance(model, ActorCritic):
            raise ValueError(f"{args.ckpt}: expected a black-box checkpoint")
        return model
    return lab.train_blackbox(args.case)[0]


def cmd_distill(args) -> None:
    cfg = _load_config(args.config)
    lab = Lab(cfg)
    if args.method == "blackbox":
        raise ValueError("distill needs an interpretable method")
    net = _blackbox(lab, args)
    obs, targets = lab.dataset(net, args.case)
    model, details = lab.fit_method(args.method, net, obs, targets)
    model.save(args.out)
    print(json.dumps({k: v for k, v in details.items() if k != "epoch_mse"}, indent=2))


def cmd_eval(args) -> None:
    cfg = _load_config(args.config)
    lab = Lab(cfg)
    net = _blackbox(lab, args)
    if args.method == "blackbox":
        model = net
    elif args.pset:
        model = load_model(args.pset)
    else:
        model, _ = lab.fit_method(args.method, net, *lab.dataset(net, args.case))
    bb_rewards, _ = lab.evaluate(net.mean, net.mean, args.case)
    rewards, mses = lab.evaluate(policy_fn(model), net.mean, args.case)
    emit_report(make_report(lab, args.case, args.method, rewards, mses, np.mean(bb_rewards)), args.report)
    print(f"wrote {args.report}")


def cmd_explain(args) -> None:
    cfg = _load_config(args.config)
    pset = PrototypeSet.load(args.pset)
    obs = _parse_obs(args.obs)
    if not pset.box.contains(obs):
        raise ValueError(f"observation {obs.tolist()} lies outside the training box {pset.box}")
    print(explain(obs, pset, cfg.plant).to_json())


def cmd_run_case(args) -> None:
    cfg = _load_config(args.config)
    methods = METHODS if args.all_methods else (args.method or ["blackbox"])
    reports = run_case(cfg, args.case, methods, lab=Lab(cfg, args.cache))
    out = args.report or f"case{args.case}-report.json"
    emit_report(reports, out)
    for r in reports:
        print(f"case {r.case_id} {r.method:>13}: reward {r.reward_mean:9.3f} +- {r.reward_se:.3f}  mse {r.mse_mean:.5f}")
    print(f"wrote {out}")


def cmd_ablate_lr(args) -> None:
    cfg = _load_config(args.config)
    result = lr_ablation(cfg, args.schedules or LR_SCHEDULES, args.case, Lab(cfg, args.cache), args.steps)
    out = args.report or "lr-ablation.json"
    emit_report(result, out)
    for s in result.schedules:
        print(f"{s:>12}: final reward {result.final_reward[s]:.3f}")
    print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvess", description="PV + storage scheduling experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic hourly price/PV CSV")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the black-box actor-critic")
    p.add_argument("--config")
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES)
    p.add_argument("--steps", type=int, help="override total training steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="fit an interpretable policy to a black box")
    p.add_argument("--config")
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--ckpt", help="black-box checkpoint (trained in-run when omitted)")
    p.add_argument("--method", type=_method, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="evaluate one method over trials x simulations")
    p.add_argument("--config")
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--method", type=_method, required=True)
    p.add_argument("--ckpt")
    p.add_argument("--pset", help="saved interpretable policy")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="similarity breakdown of one decision")
    p.add_argument("--config")
    p.add_argument("--pset", required=True)
    p.add_argument("--obs", required=True, help='"price,pv,soc,loh"')
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run-case", help="train, distill and evaluate every method for one case")
    p.add_argument("--config")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--all-methods", action="store_true")
    p.add_argument("--method", type=_method, action="append")
    p.add_argument("--cache", help="directory for reusable black-box checkpoints")
    p.add_argument("--report")
    p.set_defaults(func=cmd_run_case)

    p = sub.add_parser("ablate-lr", help="compare learning-rate schedules on one case")
    p.add_argument("--config")
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--schedules", nargs="+", choices=LR_SCHEDULES)
    p.add_argument("--steps", type=int, help="override total training steps")
    p.add_argument("--cache")
    p.add_argument("--report")
    p.set_defaults(func=cmd_ablate_lr)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, SeriesError, ReportSchemaError, ContractViolation, ValueError, OSError) as exc:
        print(f"pvess {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
