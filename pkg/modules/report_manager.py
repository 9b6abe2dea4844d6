"""
Run artifact writers - metrics/eval/sweep CSVs, config snapshots and summary tables
"""

import os

import numpy as np
import pandas as pd
from rich import print
from rich.console import Console
from rich.table import Table

from modules.run_config import snapshot
from modules.utils import format_size

console = Console()

METRICS_FILE = "metrics.csv"
EVAL_FILE = "eval.csv"
SWEEP_FILE = "sweep_summary.csv"
SNAPSHOT_FILE = "resolved_config.json"
CHECKPOINT_FILE = "model.dmck"


def _write_csv(df, path, label):
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    print(f"[cyan]✓ {label} saved: {path} ({format_size(path)})[/cyan]")
    return path


def save_metrics_csv(metrics, run_dir):
    """Training curve with header step,loss,grad_norm,lr."""
    return _write_csv(metrics, os.path.join(run_dir, METRICS_FILE), "Metrics")


def save_eval_csv(returns, run_dir, normalized=None):
    """One row per episode with header episode,return,normalized."""
    returns = np.asarray(returns, dtype=np.float64)
    df = pd.DataFrame(
        {
            "episode": np.arange(len(returns)),
            "return": returns,
            "normalized": normalized if normalized is not None else np.full(len(returns), np.nan),
        }
    )
    return _write_csv(df, os.path.join(run_dir, EVAL_FILE), "Eval results")


def save_sweep_summary(rows, path):
    df = pd.DataFrame(rows, columns=["key", "value", "run_dir", "mean_return", "std_return", "normalized"])
    return _write_csv(df, path, "Sweep summary")


def save_snapshot(config, run_dir):
    """Resolved config next to the checkpoint; usable again as --config."""
    path = os.path.join(run_dir, SNAPSHOT_FILE)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(snapshot(config))
    print(f"[cyan]✓ Config snapshot saved: {path}[/cyan]")
    return path


def display_return_summary(returns, title="Episode Returns"):
    """Count/mean/std/min/max table of episode returns."""
    returns = np.asarray(returns, dtype=np.float64)
    table = Table(title=title, show_header=True, header_style="bold cyan")
    for column in ("Episodes", "Mean", "Std", "Min", "Max"):
        table.add_column(column, justify="right")
    if returns.size:
        table.add_row(
            str(returns.size),
            f"{returns.mean():.4f}",
            f"{returns.std():.4f}",
            f"{returns.min():.4f}",
            f"{returns.max():.4f}",
        )
    else:
        table.add_row("0", "-", "-", "-", "-")
    console.print(table)
    return table


def display_eval_summary(summary, random=None, expert=None):
    table = Table(title="Evaluation", show_header=False)
    table.add_column("Field", style="green")
    table.add_column("Value", style="cyan", justify="right")
    table.add_row("Target RTG", f"{summary.target_rtg:g}")
    table.add_row("Episodes", str(summary.episodes))
    table.add_row("Return", f"{summary.mean:.4f} ± {summary.std:.4f}")
    if random is not None:
        table.add_row("Random baseline", f"{random:.4f}")
    if expert is not None:
        table.add_row("Expert baseline", f"{expert:.4f}")
    if summary.normalized is not None:
        table.add_row("Normalized score", f"{summary.normalized:.1f}")
    console.print(table)
    return table


def display_sweep(rows, key):
    table = Table(title=f"Sweep over {key}", show_header=True, header_style="bold cyan")
    table.add_column(key, style="green")
    table.add_column("Mean return", justify="right")
    table.add_column("Std", justify="right")
    table.add_column("Normalized", justify="right")
    table.add_column("Run", style="dim")
    for row in rows:
        normalized = row["normalized"]
        table.add_row(
            str(row["value"]),
            f"{row['mean_return']:.4f}",
            f"{row['std_return']:.4f}",
            "-" if normalized is None else f"{normalized:.1f}",
            row["run_dir"],
        )
    console.print(table)
    return table
