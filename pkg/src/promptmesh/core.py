"""Shared types, configuration, and deterministic randomness.

Every random draw in the simulator comes from a stream derived through
:func:`derive_rng`, keyed by ``(seed, lane, step, purpose)``.  Streams are
counter-keyed rather than shared, so the order in which clients execute
within a round cannot leak into results: client 3's batch order in round 7
is the same whether it runs first or last.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, annotations only
    from .data import ClientDataset

ClientId = int

#: Sentinel accepted for ``recipients_per_round``: send to every peer.
BROADCAST = "broadcast"

# ---------------------------------------------------------------------------
# purpose tags for derive_rng
#
# Protocol tags are keyed per (client, round).  Generation tags reuse the
# same slots for (domain, class index) so that the synthetic task for a
# given seed is identical regardless of how clients are laid over it.
# ---------------------------------------------------------------------------
TAG_PROMPT_INIT = 1
TAG_POOL_SAMPLE = 2
TAG_BATCH_ORDER = 3
TAG_RECIPIENT_SELECT = 4

TAG_DOMAIN_ENCODER = 101
TAG_DOMAIN_CONTEXT = 102
TAG_DOMAIN_TOKENS = 103
TAG_TRAIN_SAMPLES = 104
TAG_TEST_SAMPLES = 105

_U64 = 0xFFFFFFFFFFFFFFFF


def derive_rng(seed: int, lane: int, step: int, purpose: int) -> np.random.Generator:
    """Derive an independent random stream keyed by (seed, lane, step, purpose).

    Identical keys yield identical streams; keys differing in any component
    yield statistically independent streams.  ``lane`` is a client id for
    protocol draws and a domain id for data generation; ``step`` is a round
    index or a class index respectively.
    """
    ss = np.random.SeedSequence([seed & _U64, lane & _U64, step & _U64, purpose & _U64])
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# communication-cost model
# ---------------------------------------------------------------------------

#: Reference deployment used to fit the calibrated byte constants:
#: 59 clients exchanging full 4-prompt sets for 500 rounds totals ~807 MB
#: per unit of fan-out, while a centralized prompt-generator baseline
#: (FedTPG-style, model up/down each round) totals ~467 GB.
REFERENCE_CLIENTS = 59
REFERENCE_ROUNDS = 500
ZERODFL_BYTES_PER_UNIT_FANOUT = 807e6
FEDTPG_TOTAL_BYTES = 467e9


@dataclass(frozen=True)
class CommModel:
    """Byte accounting for prompt exchange.

    ``raw`` mode counts the scalars actually shipped per message
    (``M_s * d * bytes_per_scalar``).  ``calibrated`` mode uses per-message
    constants fitted to the reference deployment above, and is the mode that
    reproduces the published cost curves independent of the simulated
    prompt dimension.
    """

    mode: str = "calibrated"
    bytes_per_scalar: int = 4
    prompt_set_bytes: float = ZERODFL_BYTES_PER_UNIT_FANOUT / (REFERENCE_CLIENTS * REFERENCE_ROUNDS)
    fedtpg_round_bytes: float = FEDTPG_TOTAL_BYTES / (REFERENCE_CLIENTS * REFERENCE_ROUNDS)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FederationConfig:
    """Every knob of the simulator.  Defaults are the fast desk-scale profile.

    ``shared_prompts`` (M_s) is the length of the fixed slot prefix that is
    both sent to peers and replaced by received prompts; slots at index
    M_s and above never leave the client.  ``recipients_per_round`` is an
    integer S in [1, C-1] or the string ``"broadcast"`` meaning C-1.
    """

    num_clients: int = 8
    prompts_per_client: int = 4
    shared_prompts: int = 4
    recipients_per_round: int | str = 3
    prompt_dim: int = 16
    embed_dim: int = 16
    image_dim: int = 32
    rounds: int = 50
    local_epochs: int = 1
    classes_per_client: int = 5
    shots_per_class: int = 8
    temperature: float = 0.07
    learning_rate: float = 0.05
    selection_epsilon: float = 1e-6
    seed: int = 0
    comm_model: CommModel = field(default_factory=CommModel)
    batch_size: int = 32
    init_std: float = 0.02
    retention_rounds: int = 1
    noise_std: float = 0.1
    context_std: float = 0.2
    prompt_gain: float = 4.0
    num_domains: int = 2
    test_shots_per_class: int = 20
    eval_every: int = 5

    @property
    def resolved_recipients(self) -> int:
        """Fan-out S as a plain integer (broadcast resolves to C - 1)."""
        if self.recipients_per_round == BROADCAST:
            return self.num_clients - 1
        return int(self.recipients_per_round)


#: Named profiles selectable from the CLI.  ``desk`` is the dataclass
#: defaults; ``paper`` is the full-scale deployment geometry (30 clients,
#: 512-dim prompts, 500 rounds) and is expensive to simulate.
PROFILES: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "num_clients": 30,
        "prompts_per_client": 4,
        "shared_prompts": 4,
        "recipients_per_round": 5,
        "prompt_dim": 512,
        "embed_dim": 512,
        "image_dim": 768,
        "rounds": 500,
        "local_epochs": 1,
        "classes_per_client": 20,
        "shots_per_class": 8,
        "eval_every": 25,
    },
}


class ConfigError(ValueError):
    """Raised when a configuration cannot be built or fails validation."""


def validate_config(cfg: FederationConfig) -> list[str]:
    """Return a list of violated invariants, empty when the config is usable.

    Each entry names the offending field so callers can surface the full
    list at once instead of failing on the first problem.
    """
    v: list[str] = []
    if cfg.num_clients < 2:
        v.append(f"num_clients must be >= 2 for an exchange federation, got {cfg.num_clients}")
    if cfg.prompts_per_client < 1:
        v.append(f"prompts_per_client must be >= 1, got {cfg.prompts_per_client}")
    if not 0 <= cfg.shared_prompts <= cfg.prompts_per_client:
        v.append(
            "shared_prompts must satisfy 0 <= M_s <= prompts_per_client, "
            f"got M_s={cfg.shared_prompts} with M={cfg.prompts_per_client}"
        )
    if cfg.recipients_per_round != BROADCAST:
        s = cfg.recipients_per_round
        if not isinstance(s, int) or isinstance(s, bool):
            v.append(f"recipients_per_round must be an integer or '{BROADCAST}', got {s!r}")
        elif not 1 <= s <= cfg.num_clients - 1:
            v.append(
                "recipients_per_round must satisfy 1 <= S <= num_clients - 1, "
                f"got S={s} with C={cfg.num_clients}"
            )
    for name in ("prompt_dim", "embed_dim", "image_dim"):
        if getattr(cfg, name) < 1:
            v.append(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.image_dim < cfg.embed_dim:
        v.append(
            "image_dim must be >= embed_dim so image features determine their "
            f"embedding exactly, got image_dim={cfg.image_dim} embed_dim={cfg.embed_dim}"
        )
    if cfg.rounds < 1:
        v.append(f"rounds must be >= 1, got {cfg.rounds}")
    if cfg.local_epochs < 1:
        v.append(f"local_epochs must be >= 1, got {cfg.local_epochs}")
    if cfg.classes_per_client < 1:
        v.append(f"classes_per_client must be >= 1, got {cfg.classes_per_client}")
    if cfg.shots_per_class < 1:
        v.append(f"shots_per_class must be >= 1, got {cfg.shots_per_class}")
    if not cfg.temperature > 0:
        v.append(f"temperature must be > 0, got {cfg.temperature}")
    if cfg.learning_rate < 0:
        v.append(f"learning_rate must be >= 0, got {cfg.learning_rate}")
    if not cfg.selection_epsilon > 0:
        v.append(f"selection_epsilon must be > 0, got {cfg.selection_epsilon}")
    if cfg.batch_size < 1:
        v.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.init_std < 0:
        v.append(f"init_std must be >= 0, got {cfg.init_std}")
    if cfg.retention_rounds < 1:
        v.append(f"retention_rounds must be >= 1, got {cfg.retention_rounds}")
    if cfg.noise_std < 0:
        v.append(f"noise_std must be >= 0, got {cfg.noise_std}")
    if not cfg.context_std > 0:
        v.append(f"context_std must be > 0, got {cfg.context_std}")
    if not cfg.prompt_gain > 0:
        v.append(f"prompt_gain must be > 0, got {cfg.prompt_gain}")
    if cfg.num_domains < 1:
        v.append(f"num_domains must be >= 1, got {cfg.num_domains}")
    if cfg.test_shots_per_class < 1:
        v.append(f"test_shots_per_class must be >= 1, got {cfg.test_shots_per_class}")
    if cfg.eval_every < 1:
        v.append(f"eval_every must be >= 1, got {cfg.eval_every}")
    if cfg.comm_model.mode not in ("raw", "calibrated"):
        v.append(f"comm_model.mode must be 'raw' or 'calibrated', got {cfg.comm_model.mode!r}")
    if cfg.comm_model.bytes_per_scalar < 1:
        v.append(f"comm_model.bytes_per_scalar must be >= 1, got {cfg.comm_model.bytes_per_scalar}")
    if not cfg.comm_model.prompt_set_bytes > 0:
        v.append(f"comm_model.prompt_set_bytes must be > 0, got {cfg.comm_model.prompt_set_bytes}")
    if not cfg.comm_model.fedtpg_round_bytes > 0:
        v.append(f"comm_model.fedtpg_round_bytes must be > 0, got {cfg.comm_model.fedtpg_round_bytes}")
    return v


def require_valid(cfg: FederationConfig) -> None:
    """Raise :class:`ConfigError` listing every violation, or return quietly."""
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(violations))


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(FederationConfig)}
_COMM_FIELDS = {f.name for f in dataclasses.fields(CommModel)}


def config_from_dict(raw: dict[str, Any], base: FederationConfig | None = None) -> FederationConfig:
    """Build a config from a JSON-style dict whose keys mirror field names.

    Unknown keys are an error, not a warning: a typoed knob silently falling
    back to its default is the worst failure mode a reproduction can have.
    """
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = dict(raw)
    if "comm_model" in kwargs:
        cm = kwargs["comm_model"]
        if isinstance(cm, dict):
            bad = sorted(set(cm) - _COMM_FIELDS)
            if bad:
                raise ConfigError(f"unknown comm_model keys: {', '.join(bad)}")
            kwargs["comm_model"] = CommModel(**cm)
        elif not isinstance(cm, CommModel):
            raise ConfigError(f"comm_model must be an object, got {type(cm).__name__}")
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return FederationConfig(**kwargs)


def config_from_profile(name: str) -> FederationConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return FederationConfig(**PROFILES[name])


def config_to_dict(cfg: FederationConfig) -> dict[str, Any]:
    """Plain-JSON view of a config, inverse of :func:`config_from_dict`."""
    d = dataclasses.asdict(cfg)
    return d


def load_config(path: str, base: FederationConfig | None = None) -> FederationConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(raw, base=base)


# ---------------------------------------------------------------------------
# runtime state containers
# ---------------------------------------------------------------------------


@dataclass
class PromptSet:
    """The M learnable prompt vectors a client currently trains.

    ``sources[k]`` records which client the vector in slot k was last
    received from (the owner's own id for never-replaced slots), so that
    mixing across the federation stays observable.
    """

    vectors: np.ndarray
    sources: list[ClientId]

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"prompt vectors must be 2-D (M, d), got shape {self.vectors.shape}")
        if len(self.sources) != self.vectors.shape[0]:
            raise ValueError(
                f"{len(self.sources)} sources for {self.vectors.shape[0]} prompt slots"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("prompt vectors must be finite")

    def copy(self) -> "PromptSet":
        return PromptSet(self.vectors.copy(), list(self.sources))


@dataclass
class PoolEntry:
    """One prompt vector sitting in a client's received pool."""

    vector: np.ndarray
    source: ClientId
    received_round: int


@dataclass
class SelectionHistory:
    """Running count of how often this client picked each peer as recipient."""

    owner: ClientId
    counts: np.ndarray  # (C,) int64; the owner's own slot stays zero

    @classmethod
    def fresh(cls, owner: ClientId, num_clients: int) -> "SelectionHistory":
        return cls(owner=owner, counts=np.zeros(num_clients, dtype=np.int64))

    def increment(self, recipient: ClientId) -> None:
        if recipient == self.owner:
            raise ValueError(f"client {self.owner} cannot select itself")
        self.counts[recipient] += 1

    def peer_counts(self) -> dict[ClientId, int]:
        """Counts keyed by peer id, the owner's own slot excluded."""
        return {j: int(self.counts[j]) for j in range(len(self.counts)) if j != self.owner}


@dataclass
class ClientState:
    """One federation member: shard, active prompts, pool, selection history."""

    id: ClientId
    domain_id: int
    dataset: "ClientDataset"
    active_prompts: PromptSet
    pool: list[PoolEntry]
    history: SelectionHistory
