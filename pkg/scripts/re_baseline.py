#!/usr/bin/env python3
"""Reward-engineering baseline: train policies on the task reward minus
torque/energy penalties and report success rates for comparison with the
reward-model fine-tuning route.
"""

import argparse
import json

from prefloop.experiments import reward_engineering_baseline, train_original
from prefloop.envs import make_env_spec
from prefloop.policy import PpoConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tasks", nargs="+", default=["REACH3", "PUSH3"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--updates", type=int, default=300)
    ap.add_argument("--num-envs", type=int, default=128)
    args = ap.parse_args()
    ppo = PpoConfig(num_envs=args.num_envs, desired_kl=0.03)
    for task in args.tasks:
        spec = make_env_spec(task, alpha_balance=12.0)
        re = reward_engineering_baseline(task, ppo, args.seeds, args.updates)
        orig = [train_original(spec, ppo, s, args.updates)[1] for s in args.seeds]
        print(f"== {task} ==")
        print(json.dumps({"re_mean_best": re["mean_best"],
                          "original_mean_best": float(sum(orig) / len(orig))},
                         indent=1))


if __name__ == "__main__":
    main()
