"""Rounds-to-target and final accuracy as the number of local steps K grows.

The N=2 Synthetic-3.2K setting with eta_g = 0.1 moves the global model by about
one local step per round at K = 10, so the round budget is what limits it.

    python scripts/local_steps_sweep.py --steps 10 50 200
"""
import argparse

from fedpews.federation import ExperimentConfig, run_experiment
from fedpews.metrics import summarize_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[10, 50, 200])
    ap.add_argument("--rounds", type=int, default=400)
    ap.add_argument("--target", type=float, default=99.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    base = ExperimentConfig(rounds=args.rounds, lr_global=0.1, diversity=2.0,
                            warmup_rounds=round(0.1 * args.rounds), target_accuracy=args.target)
    print(f"{'K':>5} {'algorithm':>9} {'rounds-to-target':>18} {'final':>14}")
    for k in args.steps:
        for alg in ("fedavg", "fedpews"):
            logs = [run_experiment(base.replace(algorithm=alg, local_steps=k, seed=s)) for s in args.seeds]
            s = summarize_seeds([l.accuracies for l in logs], args.target)
            print(f"{k:>5} {alg:>9} {s.rounds_text():>18} {s.final_text():>14}", flush=True)


if __name__ == "__main__":
    main()
