"""Rounds-to-target and final accuracy for four N=2 even/odd settings.

Each column is {dataset, batch, eta_g / lambda / tau, target}; both FedAvg and
FedPeWS run on the same seeds. The 32K columns take a while on one core.

    python scripts/convergence_table.py --columns 3.2k
"""
import argparse

from fedpews.federation import ExperimentConfig, run_experiment
from fedpews.metrics import summarize_seeds

COLUMNS = {
    "32k-1.0": dict(dataset="synthetic-32k", batch_size=32, lr_local=0.001, rounds=200,
                    lr_global=1.0, diversity=5.0, tau=0.125, target_accuracy=99.0),
    "32k-0.5": dict(dataset="synthetic-32k", batch_size=32, lr_local=0.001, rounds=250,
                    lr_global=0.5, diversity=2.0, tau=0.2, target_accuracy=90.0),
    "32k-0.25": dict(dataset="synthetic-32k", batch_size=32, lr_local=0.001, rounds=400,
                     lr_global=0.25, diversity=1.0, tau=0.1875, target_accuracy=75.0),
    "3.2k": dict(dataset="synthetic-3.2k", batch_size=8, lr_local=0.01, rounds=400,
                 lr_global=0.1, diversity=2.0, tau=0.1, target_accuracy=99.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--columns", nargs="+", choices=sorted(COLUMNS), default=sorted(COLUMNS))
    ap.add_argument("--base", choices=["fedavg", "fedprox"], default="fedavg")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    print(f"{'column':>9} {'algorithm':>9} {'rounds-to-target':>18} {'final':>14}")
    for name in args.columns:
        kw = dict(COLUMNS[name])
        tau = kw.pop("tau")
        base = ExperimentConfig(**kw, warmup_rounds=round(tau * kw["rounds"]), base_optimizer=args.base)
        for alg in (args.base, "fedpews"):
            logs = [run_experiment(base.replace(algorithm=alg, seed=s)) for s in args.seeds]
            s = summarize_seeds([l.accuracies for l in logs], base.target_accuracy)
            print(f"{name:>9} {alg:>9} {s.rounds_text():>18} {s.final_text():>14}", flush=True)


if __name__ == "__main__":
    main()
