"""Peer-to-peer prompt exchange: who sends what to whom, and when.

One federation round is, for every client: refresh the active prompt stack
from the received pool, adapt locally, then pick S distinct recipients and
send them the first M_s prompt slots.  Recipient choice weights each peer
by the inverse of how often it was chosen before (+epsilon), so coverage
stays near-uniform over time without any coordination.  Delivery is
synchronous: everything sent in round r becomes visible to pool sampling
in round r+1, never earlier.

Every stochastic step draws from a stream keyed by (seed, client, round,
purpose), which makes the round function invariant to client execution
order; a test permutes the order and asserts bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comms import message_bytes
from .core import (
    TAG_BATCH_ORDER,
    TAG_POOL_SAMPLE,
    TAG_PROMPT_INIT,
    TAG_RECIPIENT_SELECT,
    ClientId,
    ClientState,
    FederationConfig,
    PoolEntry,
    PromptSet,
    SelectionHistory,
    derive_rng,
)
from .data import Scenario
from .learner import SurrogateEncoder, local_adapt
from .metrics import RoundMetrics


class ProtocolError(RuntimeError):
    """A message that violates the exchange contract; the run must abort."""


@dataclass
class PromptMessage:
    """One prompt shipment: the sender's first M_s slots, stamped and sized."""

    sender: ClientId
    recipient: ClientId
    round: int
    prompts: np.ndarray  # (M_s, d)
    payload_bytes: int


@dataclass
class SelectionWeights:
    """Inverse-frequency recipient weights for one client over its peers.

    ``weights[k] == 1 / (counts[peer_ids[k]] + epsilon)`` exactly, and
    ``probabilities`` is their normalisation.
    """

    owner: ClientId
    peer_ids: np.ndarray
    weights: np.ndarray
    probabilities: np.ndarray

    def as_weight_dict(self) -> dict[ClientId, float]:
        return {int(j): float(w) for j, w in zip(self.peer_ids, self.weights)}

    def as_probability_dict(self) -> dict[ClientId, float]:
        return {int(j): float(p) for j, p in zip(self.peer_ids, self.probabilities)}


def compute_weights(history: SelectionHistory, epsilon: float) -> SelectionWeights:
    """Weight every peer by 1/(times chosen + epsilon), normalised to sum 1.

    The epsilon keeps never-chosen peers finite-weighted while still making
    them overwhelmingly more likely than anyone already chosen.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    c = len(history.counts)
    peer_ids = np.array([j for j in range(c) if j != history.owner], dtype=np.int64)
    if len(peer_ids) == 0:
        raise ValueError(f"client {history.owner} has no peers")
    weights = 1.0 / (history.counts[peer_ids].astype(np.float64) + epsilon)
    return SelectionWeights(
        owner=history.owner,
        peer_ids=peer_ids,
        weights=weights,
        probabilities=weights / weights.sum(),
    )


def select_recipients(
    weights: SelectionWeights, s: int, rng: np.random.Generator
) -> list[ClientId]:
    """Draw S distinct recipients by successive weighted sampling.

    Each draw removes the chosen peer and renormalises the remainder, so
    low-count peers dominate early draws.  Asking for more recipients than
    peers is a configuration fault, not a sampling edge case.
    """
    if s < 1 or s > len(weights.peer_ids):
        raise ValueError(
            f"cannot select {s} recipients from {len(weights.peer_ids)} peers"
        )
    ids = weights.peer_ids.copy()
    w = weights.weights.copy()
    out: list[ClientId] = []
    for _ in range(s):
        cum = np.cumsum(w)
        u = rng.random() * cum[-1]
        k = int(np.searchsorted(cum, u, side="right"))
        k = min(k, len(ids) - 1)
        out.append(int(ids[k]))
        ids = np.delete(ids, k)
        w = np.delete(w, k)
    return out


def dispatch(
    client: ClientState,
    recipients: list[ClientId],
    m_s: int,
    round_: int,
    cfg: FederationConfig,
) -> list[PromptMessage]:
    """Build one message per recipient carrying the first M_s prompt slots.

    Every recipient gets the same slot values (fresh copies, so later local
    training cannot reach into a peer's pool).  Selection counts increment
    once per recipient; with M_s = 0 nothing is sent and counts stay put.
    """
    if m_s == 0:
        return []
    payload = message_bytes(cfg.comm_model, m_s, cfg.prompts_per_client, cfg.prompt_dim)
    shared = client.active_prompts.vectors[:m_s]
    messages = []
    for r in recipients:
        client.history.increment(r)
        messages.append(
            PromptMessage(
                sender=client.id,
                recipient=r,
                round=round_,
                prompts=shared.copy(),
                payload_bytes=payload,
            )
        )
    return messages


def receive(client: ClientState, messages: list[PromptMessage], round_: int) -> None:
    """Append delivered prompt vectors to the client's pool.

    Messages are folded in sender order so pool contents do not depend on
    arrival order.  A misaddressed, stale, or wrongly shaped message means
    the transport itself broke; that is corruption and the run aborts.
    """
    d = client.active_prompts.vectors.shape[1]
    for msg in sorted(messages, key=lambda m: m.sender):
        if msg.recipient != client.id:
            raise ProtocolError(
                f"client {client.id} received a message addressed to {msg.recipient}"
            )
        if msg.round != round_:
            raise ProtocolError(
                f"round {round_} delivery saw a message stamped round {msg.round}"
            )
        if msg.prompts.ndim != 2 or msg.prompts.shape[1] != d:
            raise ProtocolError(
                f"prompt dimension mismatch: expected (*, {d}), got {msg.prompts.shape}"
            )
        for vec in msg.prompts:
            client.pool.append(
                PoolEntry(vector=vec.copy(), source=msg.sender, received_round=msg.round)
            )


def sample_pool(
    client: ClientState, cfg: FederationConfig, round_: int, rng: np.random.Generator
) -> PromptSet:
    """Refresh the shared slots from the received pool, favouring variety.

    Stale pool entries (older than ``retention_rounds``) are dropped first.
    Slots [0, M_s) are then refilled: one uniformly chosen vector from each
    distinct source, sources visited in random order, and only if slots
    remain after every source contributed once do leftover entries compete
    uniformly.  Slots at M_s and above never change here -- they are the
    client's private prompts.  With an empty pool the stack is returned
    unchanged (as a copy).
    """
    keep_from = round_ - cfg.retention_rounds
    client.pool = [e for e in client.pool if e.received_round >= keep_from]
    refreshed = client.active_prompts.copy()
    m_s = cfg.shared_prompts
    pool = client.pool
    if m_s == 0 or not pool:
        return refreshed

    sources = sorted({e.source for e in pool})
    rng.shuffle(sources)
    by_source: dict[ClientId, list[int]] = {s: [] for s in sources}
    for idx, entry in enumerate(pool):
        by_source[entry.source].append(idx)

    chosen: list[int] = []
    taken: set[int] = set()
    for s in sources:
        if len(chosen) == m_s:
            break
        candidates = by_source[s]
        pick = candidates[int(rng.integers(len(candidates)))]
        chosen.append(pick)
        taken.add(pick)
    leftovers = [i for i in range(len(pool)) if i not in taken]
    while len(chosen) < m_s and leftovers:
        k = int(rng.integers(len(leftovers)))
        chosen.append(leftovers.pop(k))

    for slot, idx in enumerate(chosen):
        refreshed.vectors[slot] = pool[idx].vector.copy()
        refreshed.sources[slot] = pool[idx].source
    return refreshed


# ---------------------------------------------------------------------------
# round driver
# ---------------------------------------------------------------------------


def init_federation(cfg: FederationConfig, scenario: Scenario) -> list[ClientState]:
    """Fresh clients: seeded prompt stacks, empty pools, zero histories."""
    federation = []
    for ds in scenario.client_datasets:
        rng = derive_rng(cfg.seed, ds.client_id, 0, TAG_PROMPT_INIT)
        vectors = rng.normal(0.0, cfg.init_std, size=(cfg.prompts_per_client, cfg.prompt_dim))
        federation.append(
            ClientState(
                id=ds.client_id,
                domain_id=ds.domain_id,
                dataset=ds,
                active_prompts=PromptSet(vectors, sources=[ds.client_id] * cfg.prompts_per_client),
                pool=[],
                history=SelectionHistory.fresh(ds.client_id, cfg.num_clients),
            )
        )
    return federation


def run_round(
    federation: list[ClientState],
    encoders: dict[int, SurrogateEncoder],
    cfg: FederationConfig,
    round_: int,
    client_order: list[int] | None = None,
) -> tuple[list[ClientState], RoundMetrics, list[PromptMessage]]:
    """Advance the federation by one synchronous round.

    Per client: pool refresh, local adaptation, recipient selection and
    dispatch.  All messages cross the round barrier together and are folded
    into recipient pools afterwards, so nothing sent in round r can
    influence anyone else's round-r training.  ``client_order`` only
    reorders execution; results are bit-identical for any permutation.
    """
    order = list(range(len(federation))) if client_order is None else list(client_order)
    outbox: list[PromptMessage] = []
    losses: dict[ClientId, float] = {}
    for i in order:
        st = federation[i]
        pool_rng = derive_rng(cfg.seed, st.id, round_, TAG_POOL_SAMPLE)
        st.active_prompts = sample_pool(st, cfg, round_, pool_rng)
        batch_rng = derive_rng(cfg.seed, st.id, round_, TAG_BATCH_ORDER)
        st.active_prompts, epoch_losses = local_adapt(st, encoders[st.domain_id], cfg, batch_rng)
        losses[st.id] = epoch_losses[-1] if epoch_losses else float("nan")
        if cfg.shared_prompts > 0:
            weights = compute_weights(st.history, cfg.selection_epsilon)
            sel_rng = derive_rng(cfg.seed, st.id, round_, TAG_RECIPIENT_SELECT)
            recipients = select_recipients(weights, cfg.resolved_recipients, sel_rng)
            outbox.extend(dispatch(st, recipients, cfg.shared_prompts, round_, cfg))

    # synchronous delivery barrier
    inbox: dict[ClientId, list[PromptMessage]] = {}
    for msg in outbox:
        inbox.setdefault(msg.recipient, []).append(msg)
    for st in federation:
        receive(st, inbox.get(st.id, []), round_)

    metrics = RoundMetrics(
        round=round_,
        per_client_loss=dict(sorted(losses.items())),
        messages_sent=len(outbox),
        round_bytes=sum(m.payload_bytes for m in outbox),
    )
    return federation, metrics, outbox
