#!/usr/bin/env python3
"""Fine-tuning objective ablations on one task:

1. combined reward (task + alpha*c*rm) versus the KL-anchored rm-only
   objective (which trades task completion for reward-model score), and
2. adaptive scale c with alpha=0.2 versus fixed c=1 with alpha=1.0.

Requires a trained reward model (for example from oracle_recovery.py saved
via RewardModel.save, or a pipeline run's rm/iterK.json).
"""

import argparse
import json

from prefloop.experiments import kl_vs_combined, scaling_ablation, train_original
from prefloop.policy import PpoConfig
from prefloop.reward_model import RewardModel
from prefloop.envs import make_env_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("rm_path", help="reward-model checkpoint file")
    ap.add_argument("--task", default="REACH3")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--base-updates", type=int, default=300)
    ap.add_argument("--finetune-updates", type=int, default=100)
    ap.add_argument("--num-envs", type=int, default=128)
    ap.add_argument("--beta", type=float, default=20.0)
    args = ap.parse_args()
    model = RewardModel.load(args.rm_path)
    ppo = PpoConfig(num_envs=args.num_envs, desired_kl=0.03)
    spec = make_env_spec(args.task, alpha_balance=12.0)
    base = [train_original(spec, ppo, seed, args.base_updates)[0]
            for seed in args.seeds]
    kl = kl_vs_combined(args.task, base, model, ppo, args.finetune_updates,
                        seed=11, beta=args.beta)
    print("== combined vs KL objective ==")
    print(json.dumps(kl, indent=1))
    scale = scaling_ablation(args.task, base, model, ppo,
                             args.finetune_updates, seed=13)
    print("== scaling ==")
    print(json.dumps(scale, indent=1))


if __name__ == "__main__":
    main()
