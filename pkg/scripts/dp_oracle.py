"""Solve the gridded one-day problem by value iteration and compare with a trained black box."""

import argparse

import numpy as np

from pvess import ExperimentConfig, Lab
from pvess.dp import greedy_rollout, value_iteration


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config")
    parser.add_argument("--case", type=int, default=1)
    parser.add_argument("--starts", type=int, nargs="+", default=[0, 24, 48])
    parser.add_argument("--soc", type=float, default=0.5)
    parser.add_argument("--loh", type=float, default=20.0)
    parser.add_argument("--cache", default="runs/cache")
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    lab = Lab(cfg, args.cache)
    case = lab.case(args.case)
    net, _ = lab.train_blackbox(args.case)
    env = lab.env(args.case)
    print(f"{'start':>5} {'DP':>9} {'greedy':>9} {'black box':>9} {'share':>6}")
    for start in args.starts:
        dp = value_iteration(lab.series, start, args.soc, args.loh, lab.plant, cfg.episode, case)
        greedy = greedy_rollout(dp, lab.series, start, args.soc, args.loh, lab.plant, cfg.episode, case)
        obs = env.reset(np.random.default_rng(0), start=start, soc=args.soc, loh=args.loh)
        total, done = 0.0, False
        while not done:
            obs, r, done = env.step(net.mean(obs))
            total += r
        print(f"{start:>5} {dp.optimum:9.2f} {greedy:9.2f} {total:9.2f} {total / dp.optimum:6.1%}")


if __name__ == "__main__":
    main()
