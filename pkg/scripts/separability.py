"""How separable is the synthetic data?

Prints the Bayes-optimal test accuracy of the 16-cluster mixture for a few
cluster widths, then trains the full MLP centrally on Synthetic-32K and
reports accuracy per epoch.

    python scripts/separability.py --epochs 30
"""
import argparse

import numpy as np
from scipy.special import logsumexp

from fedpews import data as D
from fedpews.federation import ExperimentConfig, run_experiment


def bayes_accuracy(std, n=200_000, seed=0):
    ds = D.gen_synthetic(n - n % 16, seed, std)
    centers, classes = D.cluster_centers()
    xy = ds.features[:, :2]
    logp = -((xy[:, None, :] - centers[None]) ** 2).sum(-1) / (2 * std ** 2)
    per_class = np.stack([logsumexp(logp[:, classes == c], axis=1) for c in range(D.N_CLASSES)], axis=1)
    return float(np.mean(per_class.argmax(axis=1) == ds.labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--cluster-std", type=float, default=D.DEFAULT_CLUSTER_STD)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    for std in (0.2, 0.25, 0.3, 0.35, 0.4):
        print(f"cluster std {std:.2f}: Bayes accuracy {100 * bayes_accuracy(std):.3f}%")

    # one client owning everything, one epoch per round, eta_g = 1: plain minibatch SGD
    cfg = ExperimentConfig(dataset="synthetic-32k", partition="iid", n_clients=1,
                           batch_size=args.batch_size, lr_local=args.lr,
                           local_steps=-(-32000 // args.batch_size), rounds=args.epochs,
                           lr_global=1.0, cluster_std=args.cluster_std, seed=args.seed)
    log = run_experiment(cfg)
    for r in log.records:
        print(f"epoch {r.round:3d}  acc {r.accuracy:6.2f}%  loss {r.loss:.4f}")


if __name__ == "__main__":
    main()
