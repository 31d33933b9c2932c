"""Compare the four learning-rate schedules on case 1 and write curves as JSON + CSV."""

import argparse

from pvess import ExperimentConfig, Lab, emit_report, lr_ablation
from pvess.ppo import LR_SCHEDULES


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config")
    parser.add_argument("--steps", type=int, help="override total training steps")
    parser.add_argument("--cache", default="runs/cache")
    parser.add_argument("--out", default="runs/lr-ablation.json")
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    result = lr_ablation(cfg, LR_SCHEDULES, 1, Lab(cfg, args.cache), args.steps)
    emit_report(result, args.out)
    for s in result.schedules:
        curve = result.curves[s]
        print(f"{s:>12}: final eval reward {result.final_reward[s]:8.3f}   last training reward {curve[-1]:8.3f}")


if __name__ == "__main__":
    main()
