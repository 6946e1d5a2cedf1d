"""Command line entry point: ``ceib {generate,train,evaluate,sweep,report}``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from .data import mask_x2, write_csv
from .experiment import (REPORT_VERSION, ConfigError, ExperimentConfig, checkpoint_path, evaluate_one,
                         load_data, next_version_dir, run_name, summary_rows, train_one)
from .generators import true_ace
from .objective import TrainingDivergence

log = logging.getLogger("ceib")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _setup_logging(out: Path, verbose: bool) -> list[logging.Handler]:
    # timestamps go only to the sidecar log so artifacts stay byte-reproducible
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    fh = logging.FileHandler(out / "run.log", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(fh)
    if verbose:
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        root.addHandler(sh)
    return root.handlers[-2 if verbose else -1:]


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    for rep, seed in cfg.runs():
        if rep in seen:
            continue
        seen.add(rep)
        ds = load_data(cfg, rep)
        masked = mask_x2(ds, cfg.mask_fraction, rep)
        write_csv(masked, out / f"rep{rep}.csv", out / f"rep{rep}_mask.csv")
        line = f"rep {rep}: n={ds.n} treated={int(ds.t.sum())} control={int((1 - ds.t).sum())}"
        if ds.ground_truth is not None:
            line += f" true_ace={true_ace(ds):.4f}"
        print(line)
    return EXIT_OK


def _train_job(job):
    cfg, rep, seed, out, resume = job
    torch.set_num_threads(1)
    return str(train_one(cfg, rep, seed, out, resume))


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    jobs = [(cfg, rep, seed, out, args.resume) for rep, seed in cfg.runs()]
    for path in _map(_train_job, jobs, args.workers):
        print(path)
    return EXIT_OK


def _eval_job(job):
    cfg, rep, seed, ck = job
    torch.set_num_threads(1)
    return evaluate_one(cfg, rep, seed, ck)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    jobs = []
    for rep, seed in cfg.runs():
        ck = checkpoint_path(out, rep, seed)
        if not ck.exists():
            raise ConfigError(f"missing checkpoint {ck}; run train first")
        jobs.append((cfg, rep, seed, ck))
    results = sorted(_map(_eval_job, jobs, args.workers), key=lambda r: (r["replicate"], r["seed"]))
    rows = [row for r in results for row in r["rows"]]
    summary = summary_rows(rows)
    report = {
        "format_version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "overrides": args.set,
        "rows": rows,
        "summary": summary,
        "clusters": {run_name(r["replicate"], r["seed"]): r["clusters"] for r in results},
        "checkpoints": {run_name(r["replicate"], r["seed"]): r["checkpoint"] for r in results},
    }
    dest = next_version_dir(out / "reports")
    (dest / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True), encoding="utf-8")
    _write_rows(dest / "estimates.csv", rows)
    if summary:
        _write_rows(dest / "summary.csv", summary)
    _print_summary(summary)
    print(dest)
    return EXIT_OK


def _print_summary(summary: list[dict]) -> None:
    for s in summary:
        print(f"{s['method']:<14}{s['metric']:<12}{s['mean']:.3f} ± {s['stderr']:.3f}  (runs={s['runs']})")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    from .info import sweep, write_curve_csv

    lams = _floats(args.lambdas) if args.lambdas else [cfg.train_config(0).lam]
    if args.k_grid:
        dims = [{"k1": k, "k2": k} for k in _ints(args.k_grid)]
    elif args.d_grid:
        dims = [{"d1": d, "d2": d} for d in _ints(args.d_grid)]
    else:
        dims = [{}]
    base_train = cfg.train_config(0)
    points = []
    for rep, seed in cfg.runs():
        ds = load_data(cfg, rep)
        points += sweep(ds, dict(cfg.model), base_train, lams, dims, [seed],
                        split=cfg.split_spec(seed), workers=args.workers)
    dest = next_version_dir(Path(cfg.output_dir) / "sweeps")
    write_curve_csv(points, dest / "curve.csv")
    (dest / "sweep.json").write_text(json.dumps({
        "format_version": REPORT_VERSION, "config": cfg.to_dict(), "config_hash": cfg.digest(),
        "overrides": args.set, "lambdas": lams, "dims": dims}, indent=1, sort_keys=True), encoding="utf-8")
    failed = sum(p.failed for p in points)
    if failed:
        log.warning("%d sweep points diverged", failed)
    print(dest / "curve.csv")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    base = Path(cfg.output_dir) / "reports"
    versions = sorted(p for p in base.glob("v[0-9][0-9][0-9]") if (p / "report.json").exists())
    if not versions:
        raise ConfigError(f"no reports under {base}")
    chosen = base / args.version if args.version else versions[-1]
    report = json.loads((chosen / "report.json").read_text(encoding="utf-8"))
    if report.get("format_version") != REPORT_VERSION:
        raise ConfigError(f"unsupported report version {report.get('format_version')}")
    if report["config_hash"] != cfg.digest():
        print(f"note: report {chosen.name} was produced from a different config", file=sys.stderr)
    _print_summary(report["summary"])
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ceib", description="Cause-effect information bottleneck experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.lam=50 (repeatable)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            sp.add_argument("--resume", action="store_true", help="skip runs whose outputs exist")
        if name == "sweep":
            sp.add_argument("--lambdas", help="comma-separated lambda grid")
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--k-grid", help="comma-separated component counts (k1 = k2)")
            g.add_argument("--d-grid", help="comma-separated latent sizes (d1 = d2)")
        if name == "report":
            sp.add_argument("--version", help="report subdirectory, default latest")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    handlers = []
    try:
        cfg, _ = ExperimentConfig.load(args.config, args.set)
        handlers = _setup_logging(Path(cfg.output_dir), args.verbose)
        log.info("%s config_hash=%s overrides=%s", args.command, cfg.digest(), args.set)
        return COMMANDS[args.command](cfg, args)
    except TrainingDivergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # ConfigError and DataError are ValueErrors; missing or unwritable paths are OSErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        for h in handlers:
            logging.getLogger().removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
