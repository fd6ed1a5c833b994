"""Command line driver.

    fedpews run CONFIG [--no-timing] [--parallel | --jobs N]
    fedpews gen-data --n 3200 --seed 0 --out data.pews
    fedpews report DIR --target 99

Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from xml.sax.saxutils import escape

from fedpews import data as D
from fedpews.federation import ConfigError, ExperimentConfig, load_train_set, make_shards, run_experiment
from fedpews.metrics import RunLog, summarize_seeds

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3
CSV_HEADER = ["round", "acc", "loss", "elapsed_ms", "warmup"]

# config-file spellings that differ from ExperimentConfig field names
ALIASES = {
    "T": "rounds", "W": "warmup_rounds", "K": "local_steps",
    "eta_l": "lr_local", "eta_g": "lr_global", "eta_s": "lr_mask",
    "lambda": "diversity", "mu": "prox_mu", "N": "n_clients",
    "target": "target_accuracy",
}
RUN_KEYS = {"seeds", "out", "tau"}


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunPlan:
    configs: dict[str, list[ExperimentConfig]]   # algorithm -> one config per seed
    out: Path
    target: float


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.replace(",", " ").split() if p.strip()]


def _converter(annotation: str):
    if annotation.startswith("tuple[int"):
        return lambda v: tuple(int(p) for p in _split(v))
    if annotation.startswith("tuple[float"):
        return lambda v: None if v.lower() == "none" else tuple(float(p) for p in _split(v))
    return {"int": int, "float": float, "str": str, "bool": _parse_bool}[annotation]


FIELD_TYPES = {f.name: _converter(f.type) for f in dataclasses.fields(ExperimentConfig)}


def read_config_text(text: str) -> dict[str, str]:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line.split()[0], f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in FIELD_TYPES and key not in RUN_KEYS:
            raise ConfigError(key, f"line {lineno}: unknown key")
        entries[key] = value
    return entries


def plan_from_text(text: str, default_out: Path) -> RunPlan:
    entries = read_config_text(text)
    kwargs = {}
    for key, value in entries.items():
        if key in RUN_KEYS or key == "algorithm":
            continue
        try:
            kwargs[key] = FIELD_TYPES[key](value)
        except ValueError as e:
            raise ConfigError(key, f"bad value {value!r} ({e})") from None
    try:
        seeds = [int(s) for s in _split(entries.get("seeds", "1 2 3"))]
    except ValueError:
        raise ConfigError("seeds", "must be a list of integers") from None
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    if "tau" in entries:
        if "warmup_rounds" in entries:
            raise ConfigError("tau", "give either tau or warmup_rounds, not both")
        try:
            tau = float(entries["tau"])
        except ValueError:
            raise ConfigError("tau", f"bad value {entries['tau']!r}") from None
        if not 0 <= tau <= 1:
            raise ConfigError("tau", "must be in [0, 1]")
        kwargs["warmup_rounds"] = round(tau * kwargs.get("rounds", ExperimentConfig.rounds))
    algorithms = _split(entries.get("algorithm", "fedavg"))
    configs = {}
    for alg in algorithms:
        configs[alg] = [ExperimentConfig(**{**kwargs, "algorithm": alg, "seed": s}) for s in seeds]
    out = Path(entries["out"]) if "out" in entries else default_out
    target = next(iter(configs.values()))[0].target_accuracy
    return RunPlan(configs, out, target)


def load_plan(path: Path) -> RunPlan:
    return plan_from_text(path.read_text(), Path("runs") / path.stem)


def format_float(x: float) -> str:
    return f"{x:.6g}"


def write_csv(log: RunLog, path: Path, timing: bool = True) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in log.records:
            w.writerow([r.round, format_float(r.accuracy), format_float(r.loss),
                        format_float(r.elapsed_ms if timing else 0.0), int(r.warmup)])


def read_csv_accuracies(path: Path) -> list[float]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if rows and "acc" not in rows[0]:
        raise ValueError(f"{path}: no 'acc' column")
    return [float(r["acc"]) for r in rows]


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def convergence_svg(series: dict[str, dict[int, list[float]]], width=720, height=420) -> str:
    """Accuracy-vs-round chart, one polyline per (algorithm, seed)."""
    left, right, top, bottom = 60, 170, 20, 45
    pw, ph = width - left - right, height - top - bottom
    t_max = max((len(c) for runs in series.values() for c in runs.values()), default=1)
    t_max = max(t_max, 1)

    def sx(t):
        return left + pw * (t - 1) / max(t_max - 1, 1)

    def sy(acc):
        return top + ph * (1 - acc / 100.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for acc in range(0, 101, 20):
        y = sy(acc)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{acc}</text>')
    for t in sorted({1, t_max, *range(0, t_max + 1, max(t_max // 5, 1))} - {0}):
        parts.append(f'<text x="{sx(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">round</text>')
    parts.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
                 f'text-anchor="middle">test accuracy (%)</text>')
    legend_y = top + 10
    for i, (name, runs) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        for seed, curve in sorted(runs.items()):
            pts = " ".join(f"{sx(t):.1f},{sy(a):.1f}" for t, a in enumerate(curve, start=1))
            parts.append(f'<polyline data-series="{escape(name)}/{seed}" fill="none" stroke="{color}" '
                         f'stroke-width="1.2" stroke-opacity="0.8" points="{pts}"/>')
        parts.append(f'<line x1="{left + pw + 12}" y1="{legend_y}" x2="{left + pw + 32}" y2="{legend_y}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 38}" y="{legend_y + 4}">{escape(name)}</text>')
        legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def summary_lines(results: dict[str, list[list[float]]], target: float) -> list[str]:
    lines = [f"target accuracy: {format_float(target)}%",
             f"{'algorithm':<16} {'rounds-to-target':>18} {'final accuracy':>16} {'reached':>8}"]
    for name, curves in results.items():
        s = summarize_seeds(curves, target)
        lines.append(f"{name:<16} {s.rounds_text():>18} {s.final_text():>16} {s.n_reached:>4}/{s.n_seeds}")
    return lines


def _run_all(configs: list[ExperimentConfig], jobs: int) -> list[RunLog]:
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_experiment, configs))
    return [run_experiment(c) for c in configs]


def cmd_run(args) -> int:
    try:
        plan = load_plan(Path(args.config))
        if args.out:
            plan.out = Path(args.out)
        first = next(iter(plan.configs.values()))[0]
        make_shards(first, load_train_set(first))   # bad dataset or partition fails before any run starts
    except ConfigError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: cannot read input: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:   # a dataset file that is not in PEWS format
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    flat = [c for cfgs in plan.configs.values() for c in cfgs]
    jobs = args.jobs or (os.cpu_count() or 1 if args.parallel else 1)
    logs = iter(_run_all(flat, jobs))
    results: dict[str, dict[int, RunLog]] = {}
    for alg, cfgs in plan.configs.items():
        results[alg] = {c.seed: next(logs) for c in cfgs}

    multi = len(results) > 1
    try:
        plan.out.mkdir(parents=True, exist_ok=True)
        for alg, by_seed in results.items():
            d = plan.out / alg if multi else plan.out
            d.mkdir(parents=True, exist_ok=True)
            (d / "meta.json").write_text(json.dumps(
                {"algorithm": alg, "config": plan.configs[alg][0].as_dict()}, indent=1, default=list) + "\n")
            for seed, log in by_seed.items():
                write_csv(log, d / f"{seed}.csv", timing=not args.no_timing)
        curves = {alg: [log.accuracies for log in by_seed.values()] for alg, by_seed in results.items()}
        lines = summary_lines(curves, plan.target)
        (plan.out / "summary.txt").write_text("\n".join(lines) + "\n")
        svg = convergence_svg({alg: {s: l.accuracies for s, l in by_seed.items()} for alg, by_seed in results.items()})
        (plan.out / "convergence.svg").write_text(svg)
    except OSError as e:
        print(f"error: cannot write results: {e}", file=sys.stderr)
        return EXIT_IO
    print("\n".join(lines))
    print(f"results in {plan.out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        ds = D.gen_synthetic(args.n, args.seed, args.cluster_std)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        D.save_dataset(ds, args.out)
    except OSError as e:
        print(f"error: cannot write {args.out}: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def _group_label(directory: Path, root: Path) -> str:
    meta = directory / "meta.json"
    if meta.exists():
        try:
            return json.loads(meta.read_text())["algorithm"]
        except (ValueError, KeyError):
            pass
    return directory.name if directory != root else root.name


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    if not 0 < args.target <= 100:
        print("error: --target must be in (0, 100]", file=sys.stderr)
        return EXIT_USAGE
    files = sorted(root.rglob("*.csv"))
    if not files:
        print(f"error: no CSV files under {root}", file=sys.stderr)
        return EXIT_USAGE
    groups: dict[str, list[list[float]]] = {}
    try:
        for f in files:
            curve = read_csv_accuracies(f)
            if curve:
                groups.setdefault(_group_label(f.parent, root), []).append(curve)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"error: malformed CSV: {e}", file=sys.stderr)
        return EXIT_USAGE
    if not groups:
        print(f"error: CSV files under {root} hold no rounds", file=sys.stderr)
        return EXIT_USAGE
    print("\n".join(summary_lines(groups, args.target)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedpews", description=__doc__.split("\n")[0] or None)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the seeded experiments described by a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config's 'out')")
    r.add_argument("--no-timing", action="store_true", help="write elapsed_ms as 0 so CSVs are reproducible")
    par = r.add_mutually_exclusive_group()
    par.add_argument("--parallel", action="store_true", help="run seeds in parallel, one process per core")
    par.add_argument("--jobs", type=int, help="run seeds in this many worker processes")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-data", help="write a synthetic dataset in the PEWS binary format")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--cluster-std", type=float, default=D.DEFAULT_CLUSTER_STD)
    g.set_defaults(func=cmd_gen_data)

    rep = sub.add_parser("report", help="tabulate rounds-to-target and final accuracy from run CSVs")
    rep.add_argument("dir")
    rep.add_argument("--target", type=float, required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
