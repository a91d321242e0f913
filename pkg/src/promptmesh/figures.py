"""Figure rendering for run reports.

Renders the accuracy trajectory, training losses, and communication curves
to PNG files next to the delimited exports.  Uses the Agg backend
unconditionally: report generation must work headless and produce the same
bytes every time.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .comms import CommLedger, CommTable
from .metrics import ConvergenceSeries, RoundMetrics

_DPI = 120


def save_convergence_figure(series: ConvergenceSeries, path: str) -> None:
    """Mean accuracy with a +/- one-std band, per evaluation round."""
    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = np.asarray(series.rounds)
    means = np.asarray(series.means)
    stds = np.asarray(series.stds)
    ax.plot(rounds, means, marker="o", lw=1.5, label="mean accuracy")
    ax.fill_between(rounds, means - stds, means + stds, alpha=0.25, label="+/- 1 std")
    ax.set_xlabel("round")
    ax.set_ylabel("zero-shot accuracy (unseen classes)")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_loss_figure(round_metrics: list[RoundMetrics], path: str) -> None:
    """Per-client training loss over rounds, one thin line per client."""
    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = [m.round for m in round_metrics]
    client_ids = sorted(round_metrics[0].per_client_loss) if round_metrics else []
    for c in client_ids:
        ax.plot(rounds, [m.per_client_loss[c] for m in round_metrics], lw=0.8, alpha=0.7)
    ax.set_xlabel("round")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_comm_figure(table: CommTable, path: str) -> None:
    """Cumulative traffic of the baseline and the three exchange regimes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = {
        "fedtpg_cum_bytes": "centralized baseline",
        "zerodfl_worst_cum_bytes": "exchange, broadcast",
        "zerodfl_s5_cum_bytes": "exchange, S=5",
        "zerodfl_best_cum_bytes": "exchange, single prompt",
    }
    positive = False
    for column, label in labels.items():
        series = getattr(table, column)
        positive = positive or any(v > 0 for v in series)
        ax.plot(table.rounds, series, lw=1.5, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative bytes")
    if positive:  # a zero-round table has nothing to log-scale
        ax.set_yscale("log")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_ledger_figure(ledger: CommLedger, path: str) -> None:
    """Per-round and cumulative bytes actually sent by a simulation."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(ledger.rounds, ledger.per_round_bytes, alpha=0.4, label="per round")
    ax.plot(ledger.rounds, ledger.cumulative_series(), lw=1.5, color="C1", label="cumulative")
    ax.set_xlabel("round")
    ax.set_ylabel("bytes")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_sweep_figure(
    values: list, means: list[float], stds: list[float], param: str, path: str
) -> None:
    """Final accuracy against the swept parameter, error bars of one std."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(values))
    ax.errorbar(x, means, yerr=stds, marker="o", capsize=4, lw=1.5)
    ax.set_xticks(x, [str(v) for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("final mean accuracy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
