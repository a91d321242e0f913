"""Command-line interface: run one federation, sweep a knob, or price traffic.

``run`` simulates a single configuration and writes a report directory:
delimited exports (CSV + JSON), a summary, optional message trace, and
rendered figures.  ``sweep`` repeats a run across values of one config
field and tabulates final accuracy against cost.  ``comm`` prices the
exchange against the centralized baseline without simulating any learning.

All outputs are deterministic: rerunning a command with the same inputs
yields byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any

from .comms import CommModelError, comm_table, reduction_factor, zerodfl_total, fedtpg_total
from .core import (
    REFERENCE_CLIENTS,
    REFERENCE_ROUNDS,
    ConfigError,
    FederationConfig,
    config_from_dict,
    config_from_profile,
    config_to_dict,
    require_valid,
    validate_config,
)
from .data import HOMOGENEOUS, SCENARIO_KINDS, ScenarioError, build_scenario
from .figures import (
    save_comm_figure,
    save_convergence_figure,
    save_ledger_figure,
    save_loss_figure,
    save_sweep_figure,
)
from .metrics import convergence_series, export, round9
from .simulation import SimulationResult, eval_rounds, run_simulation

_SPEC_KEYS = {"config", "scenario", "sweep", "baselines"}
_SWEEP_KEYS = {"param", "values", "seeds"}

#: Config fields that reshape the synthetic task itself; sweeping one of
#: these forces a scenario rebuild per value instead of sharing one task.
_SCENARIO_FIELDS = frozenset(
    {
        "num_clients",
        "prompts_per_client",
        "prompt_dim",
        "embed_dim",
        "image_dim",
        "classes_per_client",
        "shots_per_class",
        "noise_std",
        "context_std",
        "prompt_gain",
        "num_domains",
        "test_shots_per_class",
        "seed",
    }
)

_BASELINES = {
    "isolation": {"shared_prompts": 0},
    "broadcast": {"recipients_per_round": "broadcast"},
}


class SpecError(ValueError):
    """The experiment spec file cannot be used as given."""


@dataclasses.dataclass
class ExperimentSpec:
    """Resolved contents of a spec file merged over the chosen profile."""

    config: FederationConfig
    scenario: str = HOMOGENEOUS
    sweep: dict[str, Any] | None = None
    baselines: list[str] = dataclasses.field(default_factory=list)


def load_spec(path: str | None, profile: str) -> ExperimentSpec:
    base = config_from_profile(profile)
    if path is None:
        return ExperimentSpec(config=base)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SpecError(f"spec file {path} must hold a JSON object")
    unknown = sorted(set(raw) - _SPEC_KEYS)
    if unknown:
        raise SpecError(f"unknown spec keys: {', '.join(unknown)}")
    cfg = config_from_dict(raw.get("config", {}), base=base)
    scenario = raw.get("scenario", HOMOGENEOUS)
    if scenario not in SCENARIO_KINDS:
        raise SpecError(f"unknown scenario {scenario!r}; choose from {SCENARIO_KINDS}")
    sweep = raw.get("sweep")
    if sweep is not None:
        bad = sorted(set(sweep) - _SWEEP_KEYS)
        if bad:
            raise SpecError(f"unknown sweep keys: {', '.join(bad)}")
        if "param" not in sweep or "values" not in sweep:
            raise SpecError("sweep needs both 'param' and 'values'")
    baselines = raw.get("baselines", [])
    bad = sorted(set(baselines) - set(_BASELINES))
    if bad:
        raise SpecError(f"unknown baselines: {', '.join(bad)}; choose from {sorted(_BASELINES)}")
    return ExperimentSpec(config=cfg, scenario=scenario, sweep=sweep, baselines=list(baselines))


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


class _OutputDir:
    """Tracks written files so a failed command can clean up after itself."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[Path] = []

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def discard_all(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary_of(result: SimulationResult) -> dict[str, Any]:
    final = result.final_report
    model = result.config.comm_model
    try:
        reduction = round9(
            fedtpg_total(model, result.config, result.config.rounds)
            / max(result.ledger.cumulative_bytes, 1)
        )
    except CommModelError:
        reduction = None
    return {
        "scenario": result.scenario_kind,
        "eval_rounds": [r.round_of_eval for r in result.reports],
        "first_eval": {
            "round": result.reports[0].round_of_eval,
            "mean_accuracy": round9(result.reports[0].mean_accuracy),
            "std_accuracy": round9(result.reports[0].std_accuracy),
        },
        "final_eval": {
            "round": final.round_of_eval,
            "mean_accuracy": round9(final.mean_accuracy),
            "std_accuracy": round9(final.std_accuracy),
            "per_client_accuracy": {
                str(c): round9(a) for c, a in final.per_client_accuracy.items()
            },
        },
        "traffic": {
            "total_bytes": result.ledger.cumulative_bytes,
            "total_messages": result.ledger.message_count,
        },
        "reduction_vs_centralized": reduction,
    }


def _write_run_outputs(out: _OutputDir, result: SimulationResult, prefix: str = "") -> dict[str, Any]:
    cfg = result.config
    series = convergence_series(result.reports)
    export(result.final_report, str(out.path(prefix, "report.csv")), "csv", cfg)
    export(result.final_report, str(out.path(prefix, "report.json")), "json", cfg)
    export(series, str(out.path(prefix, "series.csv")), "csv", cfg)
    export(series, str(out.path(prefix, "series.json")), "json", cfg)
    export(result.ledger, str(out.path(prefix, "ledger.csv")), "csv", cfg)
    export(result.ledger, str(out.path(prefix, "ledger.json")), "json", cfg)
    save_convergence_figure(series, str(out.path(prefix, "convergence.png")))
    save_loss_figure(result.round_metrics, str(out.path(prefix, "losses.png")))
    save_ledger_figure(result.ledger, str(out.path(prefix, "traffic.png")))
    summary = _summary_of(result)
    _write_json(out.path(prefix, "config.json"), config_to_dict(cfg))
    return summary


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(spec: ExperimentSpec, out_dir: str, trace: bool) -> int:
    cfg = spec.config
    violations = validate_config(cfg)
    if violations:
        print("invalid configuration:", file=sys.stderr)
        for v in violations:
            print(f"  {v}", file=sys.stderr)
        return 2

    out = _OutputDir(Path(out_dir))
    try:
        scenario = build_scenario(spec.scenario, cfg)
        trace_rows: list[dict[str, Any]] = []
        sink = None
        if trace:
            def sink(msg):  # noqa: E306
                trace_rows.append(
                    {
                        "round": msg.round,
                        "sender": msg.sender,
                        "recipient": msg.recipient,
                        "m_s": int(msg.prompts.shape[0]),
                        "bytes": msg.payload_bytes,
                    }
                )

        result = run_simulation(cfg, scenario=scenario, trace=sink)
        summary = _write_run_outputs(out, result)
        if trace:
            with open(out.path("trace.jsonl"), "w", encoding="utf-8") as fh:
                for row in trace_rows:
                    fh.write(json.dumps(row) + "\n")

        baselines: dict[str, Any] = {}
        for name in spec.baselines:
            bcfg = dataclasses.replace(cfg, **_BASELINES[name])
            bres = run_simulation(bcfg, scenario=scenario)
            baselines[name] = _write_run_outputs(out, bres, prefix=f"baselines/{name}")
        if baselines:
            summary["baselines"] = {
                name: {
                    "final_mean_accuracy": b["final_eval"]["mean_accuracy"],
                    "total_bytes": b["traffic"]["total_bytes"],
                }
                for name, b in baselines.items()
            }
        summary["config"] = config_to_dict(cfg)
        _write_json(out.path("summary.json"), summary)
    except (ConfigError, ScenarioError) as exc:
        out.discard_all()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        out.discard_all()
        raise
    print(f"run complete: {out.root}")
    print(
        f"  final mean accuracy {result.final_report.mean_accuracy:.4f} "
        f"(std {result.final_report.std_accuracy:.4f}) over "
        f"{cfg.num_clients} clients, {cfg.rounds} rounds"
    )
    print(f"  total traffic {result.ledger.cumulative_bytes} bytes "
          f"in {result.ledger.message_count} messages")
    return 0


def cmd_sweep(spec: ExperimentSpec, out_dir: str) -> int:
    if spec.sweep is None:
        print("error: spec file has no 'sweep' section", file=sys.stderr)
        return 2
    param = spec.sweep["param"]
    values = spec.sweep["values"]
    seeds = spec.sweep.get("seeds", [spec.config.seed])
    field_names = {f.name for f in dataclasses.fields(FederationConfig)}
    if param not in field_names:
        print(f"error: sweep param {param!r} is not a config field", file=sys.stderr)
        return 2

    out = _OutputDir(Path(out_dir))
    rows: list[dict[str, Any]] = []
    shared_scenarios: dict[int, Any] = {}
    for value in values:
        for seed in seeds:
            cell: dict[str, Any] = {"param": param, "value": value, "seed": seed}
            if param == "shared_prompts" and value == 0:
                cell["note"] = "isolation baseline"
            else:
                cell["note"] = ""
            try:
                # the swept field wins over the seed list if someone sweeps the seed
                cfg = dataclasses.replace(spec.config, **({"seed": seed} | {param: value}))
                require_valid(cfg)
                if param in _SCENARIO_FIELDS:
                    scenario = build_scenario(spec.scenario, cfg)
                else:
                    if seed not in shared_scenarios:
                        base = dataclasses.replace(spec.config, seed=seed)
                        shared_scenarios[seed] = build_scenario(spec.scenario, base)
                    scenario = shared_scenarios[seed]
                result = run_simulation(cfg, scenario=scenario)
                cell.update(
                    status="ok",
                    final_mean_accuracy=round9(result.final_report.mean_accuracy),
                    final_std_accuracy=round9(result.final_report.std_accuracy),
                    total_bytes=result.ledger.cumulative_bytes,
                    total_messages=result.ledger.message_count,
                )
            except (ConfigError, ScenarioError) as exc:
                cell.update(
                    status=f"error: {exc}",
                    final_mean_accuracy=None,
                    final_std_accuracy=None,
                    total_bytes=None,
                    total_messages=None,
                )
            rows.append(cell)

    header = [
        "param",
        "value",
        "seed",
        "status",
        "final_mean_accuracy",
        "final_std_accuracy",
        "total_bytes",
        "total_messages",
        "note",
    ]
    csv_path = out.path("sweep.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# config " + json.dumps(config_to_dict(spec.config), sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([("" if row.get(h) is None else row.get(h)) for h in header])

    # aggregate per value over the seeds that succeeded
    agg_values, agg_means, agg_stds = [], [], []
    for value in values:
        ok = [r for r in rows if r["value"] == value and r["status"] == "ok"]
        if not ok:
            continue
        accs = [r["final_mean_accuracy"] for r in ok]
        agg_values.append(value)
        agg_means.append(sum(accs) / len(accs))
        agg_stds.append(
            (sum((a - agg_means[-1]) ** 2 for a in accs) / len(accs)) ** 0.5
        )
    _write_json(
        out.path("sweep_summary.json"),
        {
            "config": config_to_dict(spec.config),
            "param": param,
            "seeds": seeds,
            "cells": rows,
            "aggregate": [
                {"value": v, "mean": round9(m), "std": round9(s)}
                for v, m, s in zip(agg_values, agg_means, agg_stds)
            ],
        },
    )
    if agg_values:
        save_sweep_figure(agg_values, agg_means, agg_stds, param, str(out.path("sweep.png")))
    print(f"sweep complete: {len(rows)} cells -> {out.root}")
    return 0


def cmd_comm(spec: ExperimentSpec, out_dir: str) -> int:
    cfg = spec.config
    model = cfg.comm_model
    out = _OutputDir(Path(out_dir))

    ref_cfg = dataclasses.replace(
        cfg,
        num_clients=REFERENCE_CLIENTS,
        rounds=REFERENCE_ROUNDS,
        shared_prompts=cfg.prompts_per_client,
        recipients_per_round=5,
    )
    ref_table = comm_table(
        model, REFERENCE_CLIENTS, REFERENCE_ROUNDS, cfg.prompts_per_client, cfg.prompt_dim
    )
    own_table = comm_table(
        model, cfg.num_clients, cfg.rounds, cfg.prompts_per_client, cfg.prompt_dim
    )
    export(ref_table, str(out.path("comm_reference.csv")), "csv", ref_cfg)
    export(ref_table, str(out.path("comm_reference.json")), "json", ref_cfg)
    export(own_table, str(out.path("comm_config.csv")), "csv", cfg)
    export(own_table, str(out.path("comm_config.json")), "json", cfg)
    save_comm_figure(ref_table, str(out.path("comm_reference.png")))
    save_comm_figure(own_table, str(out.path("comm_config.png")))

    def _reductions(table) -> dict[str, Any]:
        central = table.final("fedtpg_cum_bytes")
        entry: dict[str, Any] = {"fedtpg_total_bytes": round9(float(central))}
        for col in ("zerodfl_worst_cum_bytes", "zerodfl_s5_cum_bytes", "zerodfl_best_cum_bytes"):
            total = table.final(col)
            entry[f"{col.removesuffix('_cum_bytes')}_total_bytes"] = total
            key = f"{col.removesuffix('_cum_bytes')}_reduction"
            if model.mode != "calibrated" or total == 0:
                entry[key] = None if model.mode != "calibrated" else float("inf")
            else:
                entry[key] = round9(central / total)
        return entry

    summary = {
        "config": config_to_dict(cfg),
        "mode": model.mode,
        "reference": {"num_clients": REFERENCE_CLIENTS, "rounds": REFERENCE_ROUNDS}
        | _reductions(ref_table),
        "configured": {"num_clients": cfg.num_clients, "rounds": cfg.rounds}
        | _reductions(own_table),
    }
    try:
        summary["configured"]["zerodfl_configured_total_bytes"] = zerodfl_total(
            model, cfg, cfg.rounds
        )
        summary["configured"]["configured_reduction"] = (
            round9(reduction_factor(model, cfg, cfg.rounds))
            if zerodfl_total(model, cfg, cfg.rounds) > 0
            else None
        )
    except CommModelError:
        summary["configured"]["configured_reduction"] = None
    _write_json(out.path("comm_summary.json"), summary)
    print(f"traffic tables written to {out.root}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptmesh",
        description="Simulate decentralized prompt exchange and price its traffic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--spec", default=None, help="experiment spec JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--profile",
            default="desk",
            choices=["desk", "paper"],
            help="base configuration profile the spec overrides",
        )

    p_run = sub.add_parser("run", help="simulate one federation and write a report")
    common(p_run)
    p_run.add_argument(
        "--trace", action="store_true", help="also write a per-message trace.jsonl"
    )

    p_sweep = sub.add_parser("sweep", help="rerun across values of one config field")
    common(p_sweep)

    p_comm = sub.add_parser("comm", help="price traffic without simulating learning")
    common(p_comm)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.spec, args.profile)
    except (SpecError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        return cmd_run(spec, args.out, args.trace)
    if args.command == "sweep":
        return cmd_sweep(spec, args.out)
    if args.command == "comm":
        return cmd_comm(spec, args.out)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
