"""Train, distill and evaluate every method on all four cases; print a results table."""

import argparse
from pathlib import Path

from pvess import ExperimentConfig, Lab, emit_report, run_case
from pvess.config import CASES


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="experiment config JSON (defaults when omitted)")
    parser.add_argument("--cache", default="runs/cache", help="black-box checkpoint directory")
    parser.add_argument("--out", default="runs", help="report directory")
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    lab = Lab(cfg, args.cache)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'case':>4} {'method':>13} {'reward':>10} {'se':>7} {'mse':>9}")
    for case_id in CASES:
        reports = run_case(cfg, case_id, lab=lab)
        emit_report(reports, out / f"case{case_id}.json")
        for r in reports:
            print(f"{case_id:>4} {r.method:>13} {r.reward_mean:10.3f} {r.reward_se:7.3f} {r.mse_mean:9.5f}")


if __name__ == "__main__":
    main()
