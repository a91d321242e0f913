"""Evaluation, convergence tracking, and delimited/JSON export.

Evaluation is strictly read-only: it embeds each domain's held-out unseen
classes under every client's current prompts and reports zero-shot
accuracy per client, plus mean/std aggregates overall and per domain.
Exports quantise floats to nine significant digits; importing an exported
file reproduces the exported values exactly.  Every file carries the full
generating configuration so no result can be orphaned from its settings.
No plotting happens here -- figure rendering sits in a separate module on
top of these tables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .comms import COMM_TABLE_COLUMNS, CommLedger, CommTable
from .core import ClientId, ClientState, FederationConfig, config_to_dict
from .data import Scenario
from .learner import zero_shot_eval


@dataclass
class RoundMetrics:
    """What one round cost: training loss per client, traffic totals."""

    round: int
    per_client_loss: dict[ClientId, float]
    messages_sent: int
    round_bytes: int


@dataclass
class DomainStats:
    """Accuracy aggregate for the clients of one domain.

    ``std`` is None for single-client domains, where spread is undefined
    rather than zero.
    """

    domain_id: int
    client_ids: list[ClientId]
    mean: float
    std: float | None


@dataclass
class EvalReport:
    """Zero-shot accuracy snapshot of the whole federation at one round."""

    round_of_eval: int
    per_client_accuracy: dict[ClientId, float]
    mean_accuracy: float
    std_accuracy: float
    per_domain: dict[int, DomainStats] = field(default_factory=dict)


def evaluate_federation(
    federation: list[ClientState], scenario: Scenario, cfg: FederationConfig
) -> EvalReport:
    """Score every client on its domain's unseen classes.

    Reads prompts and datasets, writes nothing: running an evaluation twice
    in a row yields identical reports and leaves no trace in the state.
    """
    accs: dict[ClientId, float] = {}
    for st in federation:
        dom = scenario.domain_of(st.id)
        accs[st.id] = zero_shot_eval(
            st.active_prompts,
            dom.test_features,
            dom.test_labels,
            dom.unseen_class_ids,
            dom.encoder,
            cfg.temperature,
        )
    accs = dict(sorted(accs.items()))
    values = np.array(list(accs.values()))

    per_domain: dict[int, DomainStats] = {}
    for dom in scenario.domains:
        ids = [st.id for st in federation if scenario.client_domain[st.id] == dom.domain_id]
        if not ids:
            continue
        dvals = np.array([accs[i] for i in ids])
        per_domain[dom.domain_id] = DomainStats(
            domain_id=dom.domain_id,
            client_ids=sorted(ids),
            mean=float(dvals.mean()),
            std=float(dvals.std()) if len(ids) > 1 else None,
        )
    return EvalReport(
        round_of_eval=-1,  # caller stamps the round
        per_client_accuracy=accs,
        mean_accuracy=float(values.mean()),
        std_accuracy=float(values.std()),
        per_domain=per_domain,
    )


@dataclass
class ConvergenceSeries:
    """Mean/std accuracy trajectory across the evaluation rounds of a run."""

    rounds: list[int]
    means: list[float]
    stds: list[float]
    per_client: list[dict[ClientId, float]]

    @property
    def first_std(self) -> float:
        return self.stds[0]

    @property
    def final_std(self) -> float:
        return self.stds[-1]


def convergence_series(reports: list[EvalReport]) -> ConvergenceSeries:
    """Stack evaluation reports into a trajectory, earliest round first."""
    if not reports:
        raise ValueError("cannot build a series from zero reports")
    ordered = sorted(reports, key=lambda r: r.round_of_eval)
    return ConvergenceSeries(
        rounds=[r.round_of_eval for r in ordered],
        means=[r.mean_accuracy for r in ordered],
        stds=[r.std_accuracy for r in ordered],
        per_client=[dict(r.per_client_accuracy) for r in ordered],
    )


# ---------------------------------------------------------------------------
# export / import
#
# Floats are quantised through round9() on the way out; re-importing yields
# exactly the quantised values.  CSV carries the config as a leading '#'
# comment line, JSON as a top-level object.
# ---------------------------------------------------------------------------


def round9(x: float) -> float:
    """Quantise to nine significant digits, the precision of all exports."""
    return float(f"{x:.9g}")


def _config_comment(cfg: FederationConfig) -> str:
    return "# config " + json.dumps(config_to_dict(cfg), sort_keys=True)


def _write_csv(path: str, cfg: FederationConfig, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_config_comment(cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: str) -> tuple[dict[str, Any], list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# config "):
            raise ValueError(f"{path} is missing its config comment line")
        cfg_raw = json.loads(first[len("# config ") :])
        reader = csv.reader(fh)
        header = next(reader)
        return cfg_raw, header, [row for row in reader if row]


def _cell(x: Any) -> Any:
    if isinstance(x, float):
        return round9(x)
    return x


def export(
    obj: EvalReport | ConvergenceSeries | CommLedger | CommTable,
    path: str,
    fmt: str,
    cfg: FederationConfig,
) -> None:
    """Write a report, series, ledger, or cost table to ``path``.

    ``fmt`` is ``"csv"`` or ``"json"``; anything else is an error.  Output
    is deterministic: keys sorted, floats at nine significant digits, no
    timestamps.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}; use 'csv' or 'json'")
    if isinstance(obj, EvalReport):
        _export_report(obj, path, fmt, cfg)
    elif isinstance(obj, ConvergenceSeries):
        _export_series(obj, path, fmt, cfg)
    elif isinstance(obj, CommLedger):
        _export_ledger(obj, path, fmt, cfg)
    elif isinstance(obj, CommTable):
        _export_comm_table(obj, path, fmt, cfg)
    else:
        raise TypeError(f"cannot export object of type {type(obj).__name__}")


def _export_report(report: EvalReport, path: str, fmt: str, cfg: FederationConfig) -> None:
    if fmt == "json":
        payload = {
            "config": config_to_dict(cfg),
            "kind": "eval_report",
            "round_of_eval": report.round_of_eval,
            "per_client_accuracy": {str(k): round9(v) for k, v in report.per_client_accuracy.items()},
            "mean_accuracy": round9(report.mean_accuracy),
            "std_accuracy": round9(report.std_accuracy),
            "per_domain": {
                str(d): {
                    "client_ids": s.client_ids,
                    "mean": round9(s.mean),
                    "std": None if s.std is None else round9(s.std),
                }
                for d, s in report.per_domain.items()
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        domain_of = {c: d for d, s in report.per_domain.items() for c in s.client_ids}
        rows = [
            [report.round_of_eval, c, domain_of.get(c, 0), _cell(a)]
            for c, a in sorted(report.per_client_accuracy.items())
        ]
        _write_csv(path, cfg, ["round_of_eval", "client_id", "domain_id", "accuracy"], rows)


def import_report(path: str) -> EvalReport:
    """Rebuild an EvalReport from either export format.

    CSV stores per-client rows only; aggregates are recomputed from the
    quantised accuracies, which keeps the mean-consistency invariant true
    on the imported object.
    """
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        per_domain = {
            int(d): DomainStats(
                domain_id=int(d),
                client_ids=[int(c) for c in s["client_ids"]],
                mean=s["mean"],
                std=s["std"],
            )
            for d, s in raw["per_domain"].items()
        }
        return EvalReport(
            round_of_eval=raw["round_of_eval"],
            per_client_accuracy={int(k): v for k, v in raw["per_client_accuracy"].items()},
            mean_accuracy=raw["mean_accuracy"],
            std_accuracy=raw["std_accuracy"],
            per_domain=per_domain,
        )
    _, header, rows = _read_csv(path)
    if header != ["round_of_eval", "client_id", "domain_id", "accuracy"]:
        raise ValueError(f"{path} does not look like an evaluation report")
    accs = {int(r[1]): float(r[3]) for r in rows}
    by_domain: dict[int, list[int]] = {}
    for r in rows:
        by_domain.setdefault(int(r[2]), []).append(int(r[1]))
    per_domain = {}
    for d, ids in by_domain.items():
        vals = np.array([accs[i] for i in ids])
        per_domain[d] = DomainStats(
            domain_id=d,
            client_ids=sorted(ids),
            mean=float(vals.mean()),
            std=float(vals.std()) if len(ids) > 1 else None,
        )
    values = np.array(list(accs.values()))
    return EvalReport(
        round_of_eval=int(rows[0][0]),
        per_client_accuracy=dict(sorted(accs.items())),
        mean_accuracy=float(values.mean()),
        std_accuracy=float(values.std()),
        per_domain=per_domain,
    )


def _export_series(series: ConvergenceSeries, path: str, fmt: str, cfg: FederationConfig) -> None:
    client_ids = sorted(series.per_client[0]) if series.per_client else []
    if fmt == "json":
        payload = {
            "config": config_to_dict(cfg),
            "kind": "convergence_series",
            "rounds": series.rounds,
            "means": [round9(m) for m in series.means],
            "stds": [round9(s) for s in series.stds],
            "per_client": [
                {str(c): round9(v) for c, v in snap.items()} for snap in series.per_client
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        header = ["round", "mean_accuracy", "std_accuracy"] + [f"acc_{c}" for c in client_ids]
        rows = []
        for r, m, s, snap in zip(series.rounds, series.means, series.stds, series.per_client):
            rows.append([r, _cell(m), _cell(s)] + [_cell(snap[c]) for c in client_ids])
        _write_csv(path, cfg, header, rows)


def import_series(path: str) -> ConvergenceSeries:
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return ConvergenceSeries(
            rounds=[int(r) for r in raw["rounds"]],
            means=[float(m) for m in raw["means"]],
            stds=[float(s) for s in raw["stds"]],
            per_client=[{int(c): float(v) for c, v in snap.items()} for snap in raw["per_client"]],
        )
    _, header, rows = _read_csv(path)
    if header[:3] != ["round", "mean_accuracy", "std_accuracy"]:
        raise ValueError(f"{path} does not look like a convergence series")
    client_ids = [int(h.removeprefix("acc_")) for h in header[3:]]
    return ConvergenceSeries(
        rounds=[int(r[0]) for r in rows],
        means=[float(r[1]) for r in rows],
        stds=[float(r[2]) for r in rows],
        per_client=[
            {c: float(v) for c, v in zip(client_ids, r[3:])} for r in rows
        ],
    )


def _export_ledger(ledger: CommLedger, path: str, fmt: str, cfg: FederationConfig) -> None:
    cum = ledger.cumulative_series()
    if fmt == "json":
        payload = {
            "config": config_to_dict(cfg),
            "kind": "comm_ledger",
            "rounds": ledger.rounds,
            "per_round_bytes": ledger.per_round_bytes,
            "per_round_messages": ledger.per_round_messages,
            "cumulative_bytes": ledger.cumulative_bytes,
            "message_count": ledger.message_count,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        rows = [
            [r, b, m, c]
            for r, b, m, c in zip(
                ledger.rounds, ledger.per_round_bytes, ledger.per_round_messages, cum
            )
        ]
        _write_csv(path, cfg, ["round", "bytes", "messages", "cumulative_bytes"], rows)


def import_ledger(path: str) -> CommLedger:
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return CommLedger(
            rounds=[int(r) for r in raw["rounds"]],
            per_round_bytes=[int(b) for b in raw["per_round_bytes"]],
            per_round_messages=[int(m) for m in raw["per_round_messages"]],
        )
    _, header, rows = _read_csv(path)
    if header != ["round", "bytes", "messages", "cumulative_bytes"]:
        raise ValueError(f"{path} does not look like a communication ledger")
    return CommLedger(
        rounds=[int(r[0]) for r in rows],
        per_round_bytes=[int(r[1]) for r in rows],
        per_round_messages=[int(r[2]) for r in rows],
    )


def _export_comm_table(table: CommTable, path: str, fmt: str, cfg: FederationConfig) -> None:
    if fmt == "json":
        payload = {
            "config": config_to_dict(cfg),
            "kind": "comm_table",
            "num_clients": table.num_clients,
            "columns": list(COMM_TABLE_COLUMNS),
            "rows": [
                [r, round9(f), w, s5, b]
                for r, f, w, s5, b in zip(
                    table.rounds,
                    table.fedtpg_cum_bytes,
                    table.zerodfl_worst_cum_bytes,
                    table.zerodfl_s5_cum_bytes,
                    table.zerodfl_best_cum_bytes,
                )
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        rows = [
            [r, _cell(f), w, s5, b]
            for r, f, w, s5, b in zip(
                table.rounds,
                table.fedtpg_cum_bytes,
                table.zerodfl_worst_cum_bytes,
                table.zerodfl_s5_cum_bytes,
                table.zerodfl_best_cum_bytes,
            )
        ]
        _write_csv(path, cfg, list(COMM_TABLE_COLUMNS), rows)


def import_comm_table(path: str) -> CommTable:
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        rows = raw["rows"]
        return CommTable(
            num_clients=int(raw["num_clients"]),
            rounds=[int(r[0]) for r in rows],
            fedtpg_cum_bytes=[float(r[1]) for r in rows],
            zerodfl_worst_cum_bytes=[int(r[2]) for r in rows],
            zerodfl_s5_cum_bytes=[int(r[3]) for r in rows],
            zerodfl_best_cum_bytes=[int(r[4]) for r in rows],
        )
    cfg_raw, header, rows = _read_csv(path)
    if header != list(COMM_TABLE_COLUMNS):
        raise ValueError(f"{path} does not match the cost-table schema")
    return CommTable(
        num_clients=int(cfg_raw.get("num_clients", 0)),
        rounds=[int(r[0]) for r in rows],
        fedtpg_cum_bytes=[float(r[1]) for r in rows],
        zerodfl_worst_cum_bytes=[int(r[2]) for r in rows],
        zerodfl_s5_cum_bytes=[int(r[3]) for r in rows],
        zerodfl_best_cum_bytes=[int(r[4]) for r in rows],
    )
