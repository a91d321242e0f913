"""Byte-level accounting for the exchange protocol and baselines.

Totals are computed in exact integer arithmetic from an integer
per-message size, so a ledger accumulated round by round agrees with the
closed-form product bit for bit.  The calibrated mode prices messages
against a reference deployment (see :mod:`promptmesh.core`) instead of the
simulated prompt dimension, which is what makes small desk-scale runs
reproduce full-scale cost curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .core import CommModel, FederationConfig

if TYPE_CHECKING:  # pragma: no cover
    from .protocol import PromptMessage


class CommModelError(ValueError):
    """The requested quantity is not defined under this accounting mode."""


class LedgerError(RuntimeError):
    """The ledger was fed inconsistent round records."""


def message_bytes(model: CommModel, m_s: int, m: int, d: int) -> int:
    """Size of one message carrying ``m_s`` of ``m`` prompt vectors.

    Calibrated mode scales the fitted full-set price by m_s/m and rounds to
    a whole byte; raw mode counts the scalars actually shipped.  Sending
    nothing costs nothing in both modes.
    """
    if m_s == 0:
        return 0
    if not 0 < m_s <= m:
        raise ValueError(f"m_s must satisfy 0 <= m_s <= m, got m_s={m_s} m={m}")
    if model.mode == "raw":
        return m_s * d * model.bytes_per_scalar
    if model.mode == "calibrated":
        return round(model.prompt_set_bytes * m_s / m)
    raise CommModelError(f"unknown accounting mode {model.mode!r}")


def zerodfl_round_bytes(model: CommModel, cfg: FederationConfig) -> int:
    """Bytes the whole federation sends in one exchange round."""
    per_message = message_bytes(
        model, cfg.shared_prompts, cfg.prompts_per_client, cfg.prompt_dim
    )
    return cfg.num_clients * cfg.resolved_recipients * per_message


def zerodfl_total(model: CommModel, cfg: FederationConfig, rounds: int) -> int:
    """Exact total bytes for ``rounds`` rounds of decentralized exchange."""
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    return rounds * zerodfl_round_bytes(model, cfg)


def fedtpg_round_bytes(model: CommModel, cfg: FederationConfig) -> float:
    """Per-round cost of the centralized prompt-generator baseline.

    Only defined in calibrated mode: the baseline ships a full generator
    network whose size is not expressible in simulated prompt scalars.
    """
    if model.mode != "calibrated":
        raise CommModelError(
            "the centralized baseline is only priced by the calibrated model"
        )
    return cfg.num_clients * model.fedtpg_round_bytes


def fedtpg_total(model: CommModel, cfg: FederationConfig, rounds: int) -> float:
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    return rounds * fedtpg_round_bytes(model, cfg)


def reduction_factor(model: CommModel, cfg: FederationConfig, rounds: int = 1) -> float:
    """How many times cheaper the exchange is than the centralized baseline.

    A silent federation (M_s = 0) yields ``inf``: the reduction is not a
    number, and pretending otherwise would poison downstream statistics.
    """
    dfl = zerodfl_total(model, cfg, rounds)
    central = fedtpg_total(model, cfg, rounds)
    if dfl == 0:
        return float("inf")
    return central / dfl


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


@dataclass
class CommLedger:
    """Per-round byte and message record accumulated by the simulation."""

    rounds: list[int] = field(default_factory=list)
    per_round_bytes: list[int] = field(default_factory=list)
    per_round_messages: list[int] = field(default_factory=list)

    def record(self, round_: int, messages: list["PromptMessage"]) -> "CommLedger":
        if round_ in self.rounds:
            raise LedgerError(f"round {round_} was already recorded")
        self.rounds.append(round_)
        self.per_round_bytes.append(sum(m.payload_bytes for m in messages))
        self.per_round_messages.append(len(messages))
        return self

    @property
    def cumulative_bytes(self) -> int:
        return sum(self.per_round_bytes)

    @property
    def message_count(self) -> int:
        return sum(self.per_round_messages)

    def cumulative_series(self) -> list[int]:
        total = 0
        out = []
        for b in self.per_round_bytes:
            total += b
            out.append(total)
        return out


# ---------------------------------------------------------------------------
# cost-curve table
# ---------------------------------------------------------------------------

COMM_TABLE_COLUMNS = (
    "round",
    "fedtpg_cum_bytes",
    "zerodfl_worst_cum_bytes",
    "zerodfl_s5_cum_bytes",
    "zerodfl_best_cum_bytes",
)


@dataclass
class CommTable:
    """Cumulative cost curves for the baseline and three exchange regimes.

    Row r holds the bytes accumulated after r rounds (row 0 is all zero):
    the centralized baseline, worst-case broadcast (S = C-1, full set),
    a balanced fan-out (S = 5 where the federation is big enough), and the
    minimal single-prompt split (each client ships one of its M prompts to
    M peers).
    """

    num_clients: int
    rounds: list[int]
    fedtpg_cum_bytes: list[float]
    zerodfl_worst_cum_bytes: list[int]
    zerodfl_s5_cum_bytes: list[int]
    zerodfl_best_cum_bytes: list[int]

    def final(self, column: str) -> float:
        return getattr(self, column)[-1]


def comm_table(
    model: CommModel,
    num_clients: int,
    rounds: int,
    m: int,
    d: int,
    mid_fanout: int = 5,
) -> CommTable:
    """Build the four cumulative cost curves for a federation geometry."""
    if num_clients < 2:
        raise ValueError(f"num_clients must be >= 2, got {num_clients}")
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    full_set = message_bytes(model, m, m, d)
    one_prompt = message_bytes(model, 1, m, d)
    worst_pr = num_clients * (num_clients - 1) * full_set
    mid_pr = num_clients * min(mid_fanout, num_clients - 1) * full_set
    best_pr = num_clients * m * one_prompt
    central_pr = num_clients * model.fedtpg_round_bytes if model.mode == "calibrated" else 0.0

    rr = list(range(rounds + 1))
    return CommTable(
        num_clients=num_clients,
        rounds=rr,
        fedtpg_cum_bytes=[r * central_pr for r in rr],
        zerodfl_worst_cum_bytes=[r * worst_pr for r in rr],
        zerodfl_s5_cum_bytes=[r * mid_pr for r in rr],
        zerodfl_best_cum_bytes=[r * best_pr for r in rr],
    )
