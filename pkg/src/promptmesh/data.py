"""Synthetic planted-context classification tasks and federation shards.

Each domain hides a "context" -- a stack of M prompt-shaped vectors v* --
and every class prototype is the text embedding of that context with the
class token.  Image features are lifted from the prototype back into
feature space through the pseudo-inverse of the image map, plus Gaussian
noise.  A prompt learner that recovers something functionally close to v*
therefore classifies *unseen* classes of the same domain well: that is the
signal the federation is trying to spread.

Half of each domain's classes are seen (sharded across clients for
training), half are held out for zero-shot evaluation.  Sample draws are
keyed by (domain, class) rather than by client, so reshaping the client
grid over the same seed leaves the task itself bit-identical.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    TAG_DOMAIN_CONTEXT,
    TAG_DOMAIN_ENCODER,
    TAG_DOMAIN_TOKENS,
    TAG_TEST_SAMPLES,
    TAG_TRAIN_SAMPLES,
    ClientId,
    FederationConfig,
    PromptSet,
    derive_rng,
)
from .learner import SurrogateEncoder, encode_classes

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"
SCENARIO_KINDS = (HOMOGENEOUS, HETEROGENEOUS)


class ScenarioError(ValueError):
    """Scenario construction failed (bad kind or infeasible arithmetic)."""


@dataclass
class ClassSpec:
    """One synthetic class: its token and its planted prototype embedding."""

    class_id: int
    domain_id: int
    token: np.ndarray
    prototype: np.ndarray


@dataclass
class ClientDataset:
    """A client's private shard: K shots for each of its N classes."""

    client_id: ClientId
    domain_id: int
    class_ids: list[int]
    features: np.ndarray  # (N*K, image_dim)
    labels: np.ndarray  # (N*K,) global class ids


@dataclass
class Domain:
    """One planted domain with its frozen encoder and class split."""

    domain_id: int
    encoder: SurrogateEncoder
    classes: list[ClassSpec]
    seen_class_ids: list[int]
    unseen_class_ids: list[int]
    test_features: np.ndarray
    test_labels: np.ndarray


@dataclass
class Scenario:
    """A full federation task: domains, client shards, and the hidden truth.

    ``hidden_contexts`` maps domain id to the planted v* stack.  It exists
    for oracle checks in tests only and is excluded from exports unless
    explicitly requested; nothing in the simulator reads it.
    """

    kind: str
    client_domain: list[int]
    domains: list[Domain]
    client_datasets: list[ClientDataset]
    hidden_contexts: dict[int, np.ndarray] = field(default_factory=dict)

    def domain_of(self, client_id: ClientId) -> Domain:
        return self.domains[self.client_domain[client_id]]

    @property
    def encoders(self) -> dict[int, SurrogateEncoder]:
        return {d.domain_id: d.encoder for d in self.domains}


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def plant_domain(
    domain_id: int,
    num_classes: int,
    cfg: FederationConfig,
    start_class_id: int = 0,
) -> tuple[SurrogateEncoder, list[ClassSpec], np.ndarray]:
    """Draw a domain's frozen encoder, hidden context, and class prototypes.

    Class ids are ``start_class_id .. start_class_id + num_classes - 1`` so
    ids stay globally unique when several domains coexist.  All draws come
    from streams keyed by the domain id, never by client layout.
    """
    m, d, e = cfg.prompts_per_client, cfg.prompt_dim, cfg.embed_dim
    enc_rng = derive_rng(cfg.seed, domain_id, 0, TAG_DOMAIN_ENCODER)
    text_map = enc_rng.normal(0.0, 1.0 / np.sqrt((m + 1) * d), size=(e, (m + 1) * d))
    # prompt_gain sets how strongly the encoder reacts to prompt movement
    # relative to the class token; it is the task's learnability dial
    text_map[:, : m * d] *= cfg.prompt_gain
    image_map = enc_rng.normal(0.0, 1.0 / np.sqrt(cfg.image_dim), size=(e, cfg.image_dim))

    ctx_rng = derive_rng(cfg.seed, domain_id, 0, TAG_DOMAIN_CONTEXT)
    context = ctx_rng.normal(0.0, cfg.context_std, size=(m, d))

    tok_rng = derive_rng(cfg.seed, domain_id, 0, TAG_DOMAIN_TOKENS)
    tokens = tok_rng.normal(0.0, 1.0, size=(num_classes, d))

    class_ids = list(range(start_class_id, start_class_id + num_classes))
    encoder = SurrogateEncoder(
        text_map=text_map,
        image_map=image_map,
        class_tokens={q: tokens[k] for k, q in enumerate(class_ids)},
    )
    context_prompts = PromptSet(context.copy(), sources=[-1] * m)
    prototypes = encode_classes(context_prompts, class_ids, encoder)
    classes = [
        ClassSpec(class_id=q, domain_id=domain_id, token=tokens[k], prototype=prototypes[k])
        for k, q in enumerate(class_ids)
    ]
    return encoder, classes, context


def sample_class_features(
    spec: ClassSpec,
    lift: np.ndarray,
    count: int,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw image features whose clean embedding is exactly the prototype.

    ``lift`` is the pseudo-inverse of the domain's image map; because the
    feature space is at least as wide as the embedding space, the clean
    lifted point maps back to the prototype up to floating-point error.
    """
    base = lift @ spec.prototype
    return base[None, :] + noise_std * rng.normal(size=(count, len(base)))


def build_scenario(kind: str, cfg: FederationConfig) -> Scenario:
    """Construct a full task for ``cfg``: domains, shards, and test splits.

    ``homogeneous`` puts every client in a single domain; ``heterogeneous``
    splits clients evenly over ``cfg.num_domains`` independently planted
    domains.  Per domain the seen-class count is (clients in domain) * N and
    an equally sized unseen set is planted alongside for zero-shot tests.
    """
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; choose from {SCENARIO_KINDS}")
    c = cfg.num_clients
    if kind == HOMOGENEOUS:
        num_domains = 1
    else:
        num_domains = cfg.num_domains
        if num_domains < 2:
            raise ScenarioError(
                f"heterogeneous scenario needs num_domains >= 2, got {num_domains}"
            )
    if c % num_domains != 0:
        raise ScenarioError(
            f"cannot split {c} clients evenly over {num_domains} domains "
            f"(remainder {c % num_domains})"
        )
    clients_per_domain = c // num_domains
    n, k = cfg.classes_per_client, cfg.shots_per_class

    domains: list[Domain] = []
    client_datasets: list[ClientDataset] = []
    client_domain: list[int] = []
    hidden: dict[int, np.ndarray] = {}
    next_class_id = 0
    for did in range(num_domains):
        seen_count = clients_per_domain * n
        total = 2 * seen_count  # 50/50 seen/unseen split, exact by construction
        encoder, classes, context = plant_domain(did, total, cfg, start_class_id=next_class_id)
        next_class_id += total
        hidden[did] = context
        lift = np.linalg.pinv(encoder.image_map)

        seen = classes[:seen_count]
        unseen = classes[seen_count:]

        # train shards: class index within the domain keys the draw, so the
        # same seed yields the same samples under any client layout
        per_class_train = {}
        for local_idx, spec in enumerate(seen):
            rng = derive_rng(cfg.seed, did, local_idx, TAG_TRAIN_SAMPLES)
            per_class_train[spec.class_id] = sample_class_features(
                spec, lift, k, cfg.noise_std, rng
            )

        test_feats = []
        test_labels = []
        for local_idx, spec in enumerate(unseen):
            rng = derive_rng(cfg.seed, did, seen_count + local_idx, TAG_TEST_SAMPLES)
            feats = sample_class_features(spec, lift, cfg.test_shots_per_class, cfg.noise_std, rng)
            test_feats.append(feats)
            test_labels.append(np.full(cfg.test_shots_per_class, spec.class_id, dtype=np.int64))

        domain = Domain(
            domain_id=did,
            encoder=encoder,
            classes=classes,
            seen_class_ids=[s.class_id for s in seen],
            unseen_class_ids=[s.class_id for s in unseen],
            test_features=np.concatenate(test_feats, axis=0),
            test_labels=np.concatenate(test_labels),
        )
        domains.append(domain)

        for j in range(clients_per_domain):
            cid = did * clients_per_domain + j
            shard = seen[j * n : (j + 1) * n]
            feats = np.concatenate([per_class_train[s.class_id] for s in shard], axis=0)
            labels = np.concatenate(
                [np.full(k, s.class_id, dtype=np.int64) for s in shard]
            )
            client_datasets.append(
                ClientDataset(
                    client_id=cid,
                    domain_id=did,
                    class_ids=[s.class_id for s in shard],
                    features=feats,
                    labels=labels,
                )
            )
            client_domain.append(did)

    return Scenario(
        kind=kind,
        client_domain=client_domain,
        domains=domains,
        client_datasets=client_datasets,
        hidden_contexts=hidden,
    )


def shrink_clients(
    cfg: FederationConfig, new_classes_per_client: int, kind: str = HOMOGENEOUS
) -> FederationConfig:
    """Re-shard the same class universe over more clients with fewer classes.

    Keeps (clients per domain) * N constant, so with the same seed the
    planted classes, their samples, and the test splits are unchanged; only
    the client grid over them moves.  The new N must divide the per-domain
    seen-class count exactly.
    """
    if new_classes_per_client < 1:
        raise ScenarioError(f"classes_per_client must be >= 1, got {new_classes_per_client}")
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; choose from {SCENARIO_KINDS}")
    num_domains = 1 if kind == HOMOGENEOUS else cfg.num_domains
    if cfg.num_clients % num_domains != 0:
        raise ScenarioError(
            f"cannot split {cfg.num_clients} clients evenly over {num_domains} domains"
        )
    per_domain = (cfg.num_clients // num_domains) * cfg.classes_per_client
    if per_domain % new_classes_per_client != 0:
        raise ScenarioError(
            f"cannot re-shard {per_domain} seen classes per domain into shards of "
            f"{new_classes_per_client} (remainder {per_domain % new_classes_per_client})"
        )
    new_clients_per_domain = per_domain // new_classes_per_client
    return dataclasses.replace(
        cfg,
        num_clients=new_clients_per_domain * num_domains,
        classes_per_client=new_classes_per_client,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario, include_hidden: bool = False) -> dict[str, Any]:
    """JSON-ready view of a scenario.

    The planted contexts are withheld unless ``include_hidden`` is set:
    exported tasks must not hand the answer key to whatever consumes them.
    """
    out: dict[str, Any] = {
        "kind": scenario.kind,
        "client_domain": list(scenario.client_domain),
        "domains": [
            {
                "domain_id": d.domain_id,
                "text_map": d.encoder.text_map.tolist(),
                "image_map": d.encoder.image_map.tolist(),
                "classes": [
                    {
                        "class_id": s.class_id,
                        "token": s.token.tolist(),
                        "prototype": s.prototype.tolist(),
                    }
                    for s in d.classes
                ],
                "seen_class_ids": list(d.seen_class_ids),
                "unseen_class_ids": list(d.unseen_class_ids),
                "test_features": d.test_features.tolist(),
                "test_labels": d.test_labels.tolist(),
            }
            for d in scenario.domains
        ],
        "clients": [
            {
                "client_id": ds.client_id,
                "domain_id": ds.domain_id,
                "class_ids": list(ds.class_ids),
                "features": ds.features.tolist(),
                "labels": ds.labels.tolist(),
            }
            for ds in scenario.client_datasets
        ],
    }
    if include_hidden:
        out["hidden_contexts"] = {
            str(did): ctx.tolist() for did, ctx in scenario.hidden_contexts.items()
        }
    return out


def scenario_from_dict(raw: dict[str, Any]) -> Scenario:
    domains = []
    for d in raw["domains"]:
        classes = [
            ClassSpec(
                class_id=int(s["class_id"]),
                domain_id=int(d["domain_id"]),
                token=np.asarray(s["token"], dtype=np.float64),
                prototype=np.asarray(s["prototype"], dtype=np.float64),
            )
            for s in d["classes"]
        ]
        encoder = SurrogateEncoder(
            text_map=np.asarray(d["text_map"], dtype=np.float64),
            image_map=np.asarray(d["image_map"], dtype=np.float64),
            class_tokens={s.class_id: s.token for s in classes},
        )
        domains.append(
            Domain(
                domain_id=int(d["domain_id"]),
                encoder=encoder,
                classes=classes,
                seen_class_ids=[int(q) for q in d["seen_class_ids"]],
                unseen_class_ids=[int(q) for q in d["unseen_class_ids"]],
                test_features=np.asarray(d["test_features"], dtype=np.float64),
                test_labels=np.asarray(d["test_labels"], dtype=np.int64),
            )
        )
    clients = [
        ClientDataset(
            client_id=int(c["client_id"]),
            domain_id=int(c["domain_id"]),
            class_ids=[int(q) for q in c["class_ids"]],
            features=np.asarray(c["features"], dtype=np.float64),
            labels=np.asarray(c["labels"], dtype=np.int64),
        )
        for c in raw["clients"]
    ]
    hidden = {
        int(did): np.asarray(ctx, dtype=np.float64)
        for did, ctx in raw.get("hidden_contexts", {}).items()
    }
    return Scenario(
        kind=raw["kind"],
        client_domain=[int(x) for x in raw["client_domain"]],
        domains=domains,
        client_datasets=clients,
        hidden_contexts=hidden,
    )


def save_scenario(scenario: Scenario, path: str, include_hidden: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario, include_hidden=include_hidden), fh)


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
