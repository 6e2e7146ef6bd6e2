"""Command-line experiment harness.

Verbs: run (execute a configured experiment per seed), compare (align
completed runs into tables and SVG curves), genmazes (write a maze corpus
with a train/test manifest), verify-bounds (the labeling-cost theorem
harness), serve (start the human-expert HTTP service).

HIERG_DATA_DIR sets the default output root.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import __version__, maze
from .algorithms import (METRIC_COLUMNS, RunConfig, run_algorithm,
                         trailing_success)
from .config import ConfigError, config_hash, load_config

EXIT_CONFIG = 2
EXIT_RUN = 3


def _data_dir() -> str:
    return os.environ.get("HIERG_DATA_DIR", ".")


@click.group()
@click.version_option(__version__)
def main():
    """Hierarchically guided imitation/RL experiment harness."""


def _meta_line(cfg_hash: str, seed) -> str:
    return f"config_hash={cfg_hash} seed={seed} version={__version__}"


@main.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=False), help="TOML experiment config")
@click.option("--out", "out_dir", default=None, help="output directory")
def cli_run(config_path, out_dir):
    """Execute the configured algorithm once per seed; write metrics CSV,
    ledger CSV, checkpoint and summary JSON. Identical config+seed produce
    byte-identical outputs."""
    try:
        with open(config_path) as f:
            text = f.read()
    except OSError as exc:
        click.echo(f"config unreadable: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        parsed = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    cfg_hash = config_hash(text)
    out_dir = out_dir or parsed["output_dir"] or os.path.join(
        _data_dir(), f"run_{cfg_hash}")
    os.makedirs(out_dir, exist_ok=True)
    summary = {"config_hash": cfg_hash, "version": __version__,
               "algorithm": parsed["run"].get("algorithm", "hg_dagger"),
               "environment": parsed["run"].get("environment", "maze"),
               "seeds": parsed["seeds"], "per_seed": {}}
    try:
        for seed in parsed["seeds"]:
            cfg = RunConfig(seed=seed, **parsed["run"])
            result = run_algorithm(cfg)
            meta = _meta_line(cfg_hash, seed)
            result.metrics.write_csv(
                os.path.join(out_dir, f"metrics_{seed}.csv"), meta)
            _write_ledger_csv(
                os.path.join(out_dir, f"ledger_{seed}.csv"), result.ledger, meta)
            with open(os.path.join(out_dir, f"checkpoint_{seed}.json"), "w") as f:
                json.dump({"meta": meta, **result.checkpoint_jsonable()}, f)
            success = result.metrics.column("success")
            trail = trailing_success(success) if len(success) else np.array([0.0])
            summary["per_seed"][str(seed)] = {
                "episodes": len(success),
                "final_trailing_success": float(trail[-1]),
                "total_cost": result.ledger.total_cost,
                "hi_label_cost": result.ledger.total_for("label", "hi"),
                "lo_label_cost": result.ledger.total_for("label", "lo"),
                "full_label_cost": result.ledger.total_for("label", "full"),
                **{k: v for k, v in result.extras.items()
                   if isinstance(v, (int, float))},
            }
    except Exception as exc:    # noqa: BLE001 - surface as run failure
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(EXIT_RUN)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    click.echo(f"wrote {out_dir}")


def _write_ledger_csv(path, ledger, meta: str):
    with open(path, "w") as f:
        f.write(f"# {meta}\n")
        f.write("episode,op_kind,level,count,cost,cumulative_cost\n")
        for row in ledger.csv_rows():
            f.write(",".join(repr(v) if isinstance(v, float) else str(v)
                             for v in row) + "\n")


class IncompatibleRuns(Exception):
    pass


def _load_run_dir(run_dir):
    with open(os.path.join(run_dir, "summary.json")) as f:
        summary = json.load(f)
    curves = {}
    for seed in summary["seeds"]:
        path = os.path.join(run_dir, f"metrics_{seed}.csv")
        rows = np.genfromtxt(path, delimiter=",", names=True,
                             comments="#", deep=False)
        curves[seed] = rows
    return summary, curves


@main.command("compare")
@click.argument("run_dirs", nargs=-1, required=True)
@click.option("--out", "out_dir", default=None)
@click.option("--force", is_flag=True, help="allow mixed config hashes")
def cli_compare(run_dirs, out_dir, force):
    """Align two or more completed runs: success-vs-episode and
    success-vs-cost tables plus SVG learning curves (median and min-max
    across seeds)."""
    if len(run_dirs) < 2:
        click.echo("need at least two run directories", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        loaded = [(d, *_load_run_dir(d)) for d in run_dirs]
    except OSError as exc:
        click.echo(f"cannot read run dir: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    envs = {summary["environment"] for _d, summary, _c in loaded}
    if len(envs) > 1:
        click.echo(f"IncompatibleRuns: environments differ: {sorted(envs)}",
                   err=True)
        sys.exit(EXIT_RUN)
    hashes = {summary["config_hash"] for _d, summary, _c in loaded}
    if len(hashes) > 1 and not force:
        click.echo("IncompatibleRuns: mixed config hashes (use --force)",
                   err=True)
        sys.exit(EXIT_RUN)
    out_dir = out_dir or os.path.join(_data_dir(), "compare")
    os.makedirs(out_dir, exist_ok=True)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    table_lines = ["run,algorithm,seeds,median_final_trailing,"
                   "median_total_cost,median_lo_label_cost"]
    for run_dir, summary, curves in loaded:
        label = summary["algorithm"]
        series = []
        costs = []
        for seed, rows in curves.items():
            tr = trailing_success(rows["success"])
            series.append(tr)
            costs.append(rows["total_cost_cum"])
        n = min(len(s) for s in series)
        stack = np.vstack([s[:n] for s in series])
        med = np.median(stack, axis=0)
        axes[0].plot(np.arange(n), med, label=label)
        axes[0].fill_between(np.arange(n), stack.min(axis=0), stack.max(axis=0),
                             alpha=0.2)
        cstack = np.vstack([c[:n] for c in costs])
        cmed = np.median(cstack, axis=0)
        order = np.argsort(cmed)
        axes[1].plot(cmed[order], med[order], label=label)
        finals = [v["final_trailing_success"] for v in summary["per_seed"].values()]
        totals = [v["total_cost"] for v in summary["per_seed"].values()]
        lo = [v["lo_label_cost"] for v in summary["per_seed"].values()]
        table_lines.append(
            f"{run_dir},{label},{len(finals)},{np.median(finals):.3f},"
            f"{np.median(totals):.1f},{np.median(lo):.1f}")
    axes[0].set_xlabel("episode")
    axes[0].set_ylabel("trailing success")
    axes[0].legend()
    axes[1].set_xlabel("cumulative expert cost")
    axes[1].set_ylabel("trailing success")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "curves.svg"), format="svg")
    table = "\n".join(table_lines) + "\n"
    with open(os.path.join(out_dir, "comparison.csv"), "w") as f:
        f.write(table)
    click.echo(table)
    click.echo(f"wrote {out_dir}")


@main.command("genmazes")
@click.option("--count", type=int, required=True)
@click.option("--seed0", type=int, default=0)
@click.option("--out", "out_dir", required=True)
@click.option("--min-dist", type=int, default=maze.MIN_DIST_DEFAULT)
def cli_genmazes(count, seed0, out_dir, min_dist):
    """Write `count` maze files plus a manifest splitting the first half
    (rounded up) into training and the rest into test."""
    if count < 1:
        click.echo("count must be >= 1", err=True)
        sys.exit(EXIT_CONFIG)
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(count):
        spec = maze.generate_maze(seed0 + i, min_dist)
        name = f"maze_{seed0 + i}.txt"
        with open(os.path.join(out_dir, name), "w") as f:
            f.write(maze.to_text(spec))
        names.append(name)
    n_train = (count + 1) // 2
    manifest = {"seed0": seed0, "count": count, "min_dist": min_dist,
                "version": __version__,
                "train": names[:n_train], "test": names[n_train:]}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    click.echo(f"wrote {count} mazes to {out_dir} "
               f"({n_train} train / {count - n_train} test)")


@main.command("verify-bounds")
@click.option("--instances", type=int, default=50)
@click.option("--seed0", type=int, default=1000)
@click.option("--out", "out_path", default=None)
def cli_verify_bounds(instances, seed0, out_path):
    """Run the halving-learner cost-bound verification sweep."""
    from .theory import BoundViolated, random_instance, verify_bounds
    lines = []
    violations = 0
    for i in range(instances):
        inst = random_instance(seed0 + i)
        try:
            report = verify_bounds(inst, strict=True)
        except BoundViolated as exc:
            violations += 1
            lines.append(str(exc))
            continue
        lines.append(report.summary())
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    click.echo(text)
    if violations:
        click.echo(f"{violations} violations", err=True)
        sys.exit(EXIT_RUN)
    click.echo(f"{instances} instances verified, zero violations")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
@click.option("--data-dir", default=None)
def cli_serve(host, port, data_dir):
    """Start the human-expert HTTP session service."""
    import uvicorn

    from .service import create_app
    app = create_app(data_dir or os.path.join(_data_dir(), "sessions"))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
