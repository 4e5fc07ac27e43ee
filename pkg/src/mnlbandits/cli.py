"""Command-line entry point for simulation runs and the reports built from them.

Exit codes: 0 success, 1 invalid config or input, 2 a run failed, 3 an
invariant check failed. ``MNLBANDITS_OUT_ROOT`` relocates relative output
directories.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, config_hash, grid_cells, load_config, parse_sections, read_sections,
                     resolved_sections, to_ini)
from .harness.experiments import AggregateTable, SeedFailure, aggregate, run_experiment, successful
from .trace import TRACE_COLUMNS, RegretTrace
from .verify import SUITES, report as verify_report, run_suite

log = logging.getLogger("mnlbandits")

OUT_ROOT_ENV = "MNLBANDITS_OUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_INVARIANT = 0, 1, 2, 3


def _out_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _write_csv(path: Path, header, rows, manifest_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# manifest_hash="):
            raise ValueError(f"{path}: missing manifest_hash line")
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: no header")
    return first.strip().split("=", 1)[1], rows[0], rows[1:]


# ---------------------------------------------------------------- run

def execute(cfg, out: Path, jobs: int = 1) -> int:
    """Run every horizon of ``cfg`` into ``out``; returns an exit code."""
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    sections = resolved_sections(cfg)
    derived, status = {}, {"failed_seeds": "", "partial": "false"}
    failed = []
    for T in cfg.T:
        tdir = out / f"T{T}"
        tdir.mkdir(exist_ok=True)
        results = run_experiment(cfg.algorithm, cfg.environment, T, cfg.algo, cfg.n_seeds,
                                 cfg.master_seed, cfg.algo.M, jobs)
        for r in results:
            if isinstance(r, SeedFailure):
                failed.append(f"T{T}:seed{r.seed}")
                continue
            _write_csv(tdir / f"trace_seed{r.seed:03d}.csv", TRACE_COLUMNS, r.rows(), h)
        traces = successful(results)
        if traces:
            d = traces[0].diagnostics
            derived[f"T{T}.lambda"] = d["lam"]
            derived[f"T{T}.gamma"] = d["gamma"]
            derived[f"T{T}.kappa_hat"] = d["kappa"]
            agg = aggregate(traces)
            _write_csv(tdir / "aggregate.csv", agg.COLUMNS, agg.rows(), h)
    if failed:
        status = {"failed_seeds": ", ".join(failed), "partial": "true"}
    sections["derived"] = dict(manifest_hash=h, **derived)
    sections["status"] = status
    (out / "manifest.ini").write_text(to_ini(sections))
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = _out_dir(args.out or cfg.out)
    code = execute(cfg, out, args.jobs)
    print(f"wrote {out}" + (" (some seeds failed; see manifest)" if code else ""))
    return code


def cmd_sweep(args) -> int:
    sections = read_sections(args.config)
    base = parse_sections(sections)
    cells = grid_cells(base, sections)
    parsed = [(label, parse_sections(secs)) for label, secs in cells]  # validate all before running
    root = _out_dir(args.out or base.out)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    worst = EXIT_OK
    for i, (label, cfg) in enumerate(parsed):
        if args.seed is not None:
            cfg.master_seed = args.seed
        name = f"cell{i:03d}_{label}"
        try:
            code = execute(cfg, root / name, args.jobs)
        except Exception as err:  # a broken cell must not stop its siblings
            log.error("cell %s failed: %s", name, err)
            code = EXIT_RUNTIME
        worst = max(worst, code)
        index.append((i, name, label, cfg.algorithm, " ".join(map(str, cfg.T)),
                      "ok" if code == EXIT_OK else "failed"))
    _write_csv(root / "index.csv", ("cell", "directory", "label", "algorithm", "T", "status"), index,
               config_hash(base))
    print(f"wrote {len(index)} cells under {root}")
    return worst


# ---------------------------------------------------------------- report

def load_run(run_dir: Path) -> dict:
    """``{T: [traces]}`` for one run directory, rebuilt from its trace CSVs."""
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.ini").exists():
        raise FileNotFoundError(f"{run_dir}: no manifest.ini")
    out = {}
    for tdir in sorted(run_dir.glob("T*"), key=lambda p: int(p.name[1:])):
        traces = []
        for f in sorted(tdir.glob("trace_seed*.csv")):
            _, header, rows = _read_csv(f)
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"{f}: unexpected header {header}")
            try:
                m = np.array(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
            except ValueError as err:
                raise ValueError(f"{f}: corrupt row ({err})") from err
            col = TRACE_COLUMNS.index
            n = m.shape[0]
            traces.append(RegretTrace("csv", int(m[0, col("seed")]) if n else 0,
                                      m[:, col("arm_index")].astype(int), m[:, col("outcome")].astype(int),
                                      m[:, col("inst_regret")], m[:, col("is_switch")].astype(bool),
                                      m[:, col("logdet_h")], np.zeros((n, 0))))
        if not traces:
            raise FileNotFoundError(f"{tdir}: no trace CSVs")
        out[int(tdir.name[1:])] = traces
    if not out:
        raise FileNotFoundError(f"{run_dir}: no T* directories")
    return out


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = []
    for d in args.runs:
        by_T = load_run(Path(d))
        manifest = read_sections(Path(d) / "manifest.ini")
        runs.append((Path(d).name, manifest["experiment"]["algorithm"], by_T,
                     manifest.get("derived", {}).get("manifest_hash", "")))
    out = _out_dir(args.out or "report")
    out.mkdir(parents=True, exist_ok=True)

    curve_rows, final_rows = [], []
    fig_r, ax_r = plt.subplots(figsize=(6, 4))
    fig_s, ax_s = plt.subplots(figsize=(6, 4))
    for name, algo, by_T, _ in runs:
        for T, traces in by_T.items():
            agg = aggregate(traces, [T])
            final_rows.append((name, algo, T, agg.n_traces, agg.regret_mean[0], agg.regret_std[0],
                               agg.switches_mean[0], agg.switches_std[0]))
        T = max(by_T)
        agg = aggregate(by_T[T])
        for row in agg.rows():
            curve_rows.append((name, algo, T) + row)
        label = f"{algo} ({name})"
        for ax, mean, band in ((ax_r, agg.regret_mean, agg.regret_band),
                               (ax_s, agg.switches_mean, agg.switches_band)):
            ax.plot(agg.rounds, mean, label=label)
            ax.fill_between(agg.rounds, band[0], band[1], alpha=0.2)
    for fig, ax, ylabel, fname in ((fig_r, ax_r, "cumulative regret", "regret.png"),
                                   (fig_s, ax_s, "policy switches", "switches.png")):
        ax.set_xlabel("round t")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / fname, dpi=120)
        plt.close(fig)
    tag = hashlib.sha256(" ".join(h for _, _, _, h in runs).encode()).hexdigest()[:16]
    _write_csv(out / "curves.csv", ("run", "algorithm", "T") + AggregateTable.COLUMNS, curve_rows, tag)
    _write_csv(out / "comparison.csv", ("run", "algorithm", "T", "n", "regret_mean", "regret_std",
                                        "switches_mean", "switches_std"), final_rows, tag)
    print(f"wrote charts and CSVs to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    kw = {} if args.switch_threshold is None else dict(switch_threshold=args.switch_threshold)
    checks = run_suite(args.suite, args.seed or 0, **kw)
    rep = verify_report(checks)
    text = json.dumps(rep, indent=2)
    if args.out:
        path = _out_dir(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    print(text)
    return EXIT_OK if rep["passed"] else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mnlbandits", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the cross product of a [grid] section")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="charts and CSVs from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="invariant checks at desk scale")
    p.add_argument("--suite", default="all", choices=SUITES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--switch-threshold", type=float, help=argparse.SUPPRESS)  # fault injection
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
