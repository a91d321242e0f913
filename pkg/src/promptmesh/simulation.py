"""End-to-end simulation driver.

Builds the federation over a scenario, advances it round by round, runs
zero-shot evaluations on a fixed cadence (always after the first and the
last round), and accumulates the communication ledger.  Everything is a
pure function of the configuration: two calls with equal configs produce
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .comms import CommLedger
from .core import ClientState, FederationConfig, require_valid
from .data import Scenario, build_scenario
from .metrics import EvalReport, RoundMetrics, evaluate_federation
from .protocol import PromptMessage, init_federation, run_round

TraceSink = Callable[[PromptMessage], None]


@dataclass
class SimulationResult:
    """Everything a finished run produced, ready for export."""

    config: FederationConfig
    scenario_kind: str
    reports: list[EvalReport]
    round_metrics: list[RoundMetrics]
    ledger: CommLedger
    federation: list[ClientState] = field(repr=False, default_factory=list)

    @property
    def final_report(self) -> EvalReport:
        return self.reports[-1]


def eval_rounds(cfg: FederationConfig) -> list[int]:
    """Rounds (1-based) after which evaluation runs: first, cadence, last."""
    marks = {1, cfg.rounds}
    marks.update(range(cfg.eval_every, cfg.rounds + 1, cfg.eval_every))
    return sorted(marks)


def run_simulation(
    cfg: FederationConfig,
    scenario: Scenario | None = None,
    scenario_kind: str = "homogeneous",
    trace: TraceSink | None = None,
) -> SimulationResult:
    """Run the full federation for ``cfg.rounds`` rounds.

    A prebuilt scenario can be passed to share one task across several
    configurations (sweeps do this); otherwise one is generated from the
    config.  ``trace`` receives every message in delivery order, after the
    round it was sent in.
    """
    require_valid(cfg)
    if scenario is None:
        scenario = build_scenario(scenario_kind, cfg)
    federation = init_federation(cfg, scenario)
    encoders = scenario.encoders

    ledger = CommLedger()
    reports: list[EvalReport] = []
    round_metrics: list[RoundMetrics] = []
    marks = set(eval_rounds(cfg))

    for r in range(cfg.rounds):
        federation, metrics, messages = run_round(federation, encoders, cfg, r)
        ledger.record(r, messages)
        round_metrics.append(metrics)
        if trace is not None:
            for msg in messages:
                trace(msg)
        if (r + 1) in marks:
            report = evaluate_federation(federation, scenario, cfg)
            report.round_of_eval = r + 1
            reports.append(report)

    return SimulationResult(
        config=cfg,
        scenario_kind=scenario.kind,
        reports=reports,
        round_metrics=round_metrics,
        ledger=ledger,
        federation=federation,
    )
