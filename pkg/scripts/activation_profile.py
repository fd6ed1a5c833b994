"""Per-subnetwork activation of each participant's data, before and after warmup.

Uses fixed disjoint masks (N=2) and prints, at a few checkpoints, the summed
hidden activations of each participant's training data split by which
subnetwork the neurons belong to.

    python scripts/activation_profile.py --warmup 50 --rounds 150
"""
import argparse

import numpy as np

from fedpews.federation import ExperimentConfig, init_experiment, run_round
from fedpews.masking import fixed_partition_masks
from fedpews.metrics import activation_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rounds", type=int, default=150)
    ap.add_argument("--warmup", type=int, default=50)
    ap.add_argument("--every", type=int, default=25)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig(algorithm="fedpews_fixed", rounds=args.rounds, warmup_rounds=args.warmup,
                           lr_global=1.0, seed=args.seed)
    fed = init_experiment(cfg)
    parts = fixed_partition_masks(fed.spec, cfg.n_clients)
    print(f"{'round':>5} {'client':>6} " + " ".join(f"{'sub' + str(j + 1):>10}" for j in range(len(parts))))
    for t in range(1, cfg.rounds + 1):
        run_round(fed, t)
        if t % args.every and t != args.warmup:
            continue
        for c in fed.clients:
            batch = fed.train.features[c.shard.indices]
            prof = activation_profile(fed.spec, fed.server.params, None, batch) / len(batch)
            print(f"{t:>5} {c.id:>6} " + " ".join(f"{prof[p > 0].sum():10.2f}" for p in parts))


if __name__ == "__main__":
    main()
