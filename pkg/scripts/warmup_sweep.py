"""Final accuracy over a grid of diversity weight lambda and warmup fraction tau.

Column tau = 0 is plain FedAvg. A row "fixed" uses server-assigned disjoint masks.

    python scripts/warmup_sweep.py --rounds 250 --clients 4 --partition per-class
"""
import argparse

import numpy as np

from fedpews.federation import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rounds", type=int, default=250)
    ap.add_argument("--clients", type=int, default=2)
    ap.add_argument("--partition", default="even-odd")
    ap.add_argument("--lr-global", type=float, default=1.0)
    ap.add_argument("--local-steps", type=int, default=10)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.5, 2.0, 5.0])
    ap.add_argument("--taus", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.4])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    base = ExperimentConfig(rounds=args.rounds, n_clients=args.clients, partition=args.partition,
                            lr_global=args.lr_global, local_steps=args.local_steps,
                            eval_every=args.rounds)

    def cell(**kw):
        accs = [run_experiment(base.replace(seed=s, **kw)).final_accuracy for s in args.seeds]
        return f"{np.mean(accs):6.2f}±{np.std(accs, ddof=1) if len(accs) > 1 else 0:5.2f}"

    print("lambda \\ tau " + "".join(f"{t:>14}" for t in args.taus))
    fedavg = cell(algorithm="fedavg")
    for lam in args.lambdas:
        row = [fedavg if t == 0 else cell(algorithm="fedpews", diversity=lam,
                                          warmup_rounds=round(t * args.rounds))
               for t in args.taus]
        print(f"{lam:>12} " + "".join(f"{c:>14}" for c in row), flush=True)
    row = [fedavg if t == 0 else cell(algorithm="fedpews_fixed", warmup_rounds=round(t * args.rounds))
           for t in args.taus]
    print(f"{'fixed':>12} " + "".join(f"{c:>14}" for c in row))


if __name__ == "__main__":
    main()
