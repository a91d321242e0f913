"""Frozen-encoder classification head and local prompt optimisation.

A fixed random tanh map stands in for a large text encoder and a fixed
random linear map for the image encoder; the only learnable state anywhere
is the stack of M prompt vectors prepended to each class token.  Scoring is
cosine similarity between unit-normalised embeddings, turned into class
probabilities by a temperature softmax.

All gradients are analytic.  For one sample with similarities ``s`` and
label ``y`` the chain is::

    dL/ds_q = (p_q - [q == y]) / tau
    dL/dh_q = dL/ds_q * (f - s_q g_q) / ||h_q||      (through normalisation)
    dL/du_q = dL/dh_q * (1 - h_q**2)                 (through tanh)
    dL/dP   = sum_q  first M*d rows of  T^T dL/du_q

with ``u_q = T [P; t_q]``, ``h = tanh(u)``, ``g = h/||h||``.  The test
suite checks this against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClientState, FederationConfig, PromptSet

_TINY = np.finfo(np.float64).tiny


class UnknownClassError(KeyError):
    """A class id with no token in the encoder's vocabulary."""


class DegenerateEmbeddingError(ValueError):
    """An embedding collapsed to the zero vector and cannot be normalised."""


@dataclass(frozen=True)
class SurrogateEncoder:
    """Frozen text and image encoders plus the class-token vocabulary.

    ``text_map`` has shape (e, (M+1)*d) and acts on the concatenation of the
    flattened prompt stack with one class token; ``image_map`` has shape
    (e, image_dim).  Both are drawn once when the domain is planted and are
    never updated -- training moves prompts only.
    """

    text_map: np.ndarray
    image_map: np.ndarray
    class_tokens: dict[int, np.ndarray]

    def token(self, class_id: int) -> np.ndarray:
        try:
            return self.class_tokens[class_id]
        except KeyError:
            raise UnknownClassError(class_id) from None


def _unit(x: np.ndarray) -> np.ndarray:
    """Normalise rows (or a single vector) to unit Euclidean norm."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("zero-norm embedding cannot be normalised")
    return x / norms


def _text_forward(
    prompts: PromptSet, class_ids: list[int], enc: SurrogateEncoder
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (unit embeddings g, tanh activations h, pre-norm lengths)."""
    flat = prompts.vectors.reshape(-1)
    tokens = np.stack([enc.token(q) for q in class_ids])
    z = np.concatenate([np.tile(flat, (len(class_ids), 1)), tokens], axis=1)
    h = np.tanh(z @ enc.text_map.T)
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("zero-norm text embedding")
    return h / norms[:, None], h, norms


def encode_classes(
    prompts: PromptSet, class_ids: list[int], enc: SurrogateEncoder
) -> np.ndarray:
    """Embed several classes under the same prompt stack; rows are unit norm."""
    g, _, _ = _text_forward(prompts, class_ids, enc)
    return g


def encode_text(prompts: PromptSet, class_id: int, enc: SurrogateEncoder) -> np.ndarray:
    """Embed one class: tanh(text_map @ [prompts; token]), unit-normalised."""
    return encode_classes(prompts, [class_id], enc)[0]


def embed_images(features: np.ndarray, enc: SurrogateEncoder) -> np.ndarray:
    """Unit-normalised image embeddings, one row per feature vector."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return _unit(feats @ enc.image_map.T)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@dataclass
class ClassLogits:
    """Cosine scores and their softmax for one image against Q classes."""

    similarities: np.ndarray
    probabilities: np.ndarray


def softmax_over_classes(similarities: np.ndarray, temperature: float) -> np.ndarray:
    """Numerically stable softmax of ``similarities / temperature`` rows."""
    logits = np.atleast_2d(similarities) / temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    return p.reshape(np.shape(similarities))


def class_probabilities(
    image_embedding: np.ndarray, text_embeddings: np.ndarray, temperature: float
) -> ClassLogits:
    """Score one unit image embedding against a (Q, e) stack of class embeddings."""
    sims = text_embeddings @ image_embedding
    return ClassLogits(similarities=sims, probabilities=softmax_over_classes(sims, temperature))


def nll_loss(probabilities: np.ndarray, label_index: int) -> float:
    """Negative log likelihood of the true class, floored away from -inf."""
    p = probabilities[label_index]
    return float(-np.log(max(p, _TINY)))


def _mean_nll(prob_matrix: np.ndarray, label_indices: np.ndarray) -> float:
    picked = prob_matrix[np.arange(len(label_indices)), label_indices]
    return float(-np.log(np.maximum(picked, _TINY)).mean())


# ---------------------------------------------------------------------------
# gradient and local training
# ---------------------------------------------------------------------------


def _loss_and_gradient(
    prompts: PromptSet,
    features: np.ndarray,
    label_indices: np.ndarray,
    class_ids: list[int],
    enc: SurrogateEncoder,
    temperature: float,
) -> tuple[float, np.ndarray]:
    g, h, hnorm = _text_forward(prompts, class_ids, enc)
    f = embed_images(features, enc)
    sims = f @ g.T  # (B, Q)
    probs = softmax_over_classes(sims, temperature)
    loss = _mean_nll(probs, label_indices)

    batch = len(label_indices)
    coeff = probs.copy()
    coeff[np.arange(batch), label_indices] -= 1.0
    coeff /= temperature * batch  # mean loss over the batch

    # backprop through the cosine score and the normalisation of g:
    # dL/dh_q = (sum_b coeff[b,q] f_b - (sum_b coeff[b,q] s_bq) g_q) / ||h_q||
    a = coeff.T @ f  # (Q, e)
    c = (coeff * sims).sum(axis=0)  # (Q,)
    dh = (a - c[:, None] * g) / hnorm[:, None]
    du = dh * (1.0 - h * h)
    dz = du @ enc.text_map  # (Q, (M+1)*d)
    m, d = prompts.vectors.shape
    grad = dz[:, : m * d].sum(axis=0).reshape(m, d)
    return loss, grad


def prompt_gradient(
    prompts: PromptSet,
    features: np.ndarray,
    labels: np.ndarray,
    class_ids: list[int],
    enc: SurrogateEncoder,
    temperature: float,
) -> np.ndarray:
    """Analytic gradient of the mean batch loss with respect to the prompts.

    ``labels`` hold global class ids drawn from ``class_ids``; the softmax
    runs over exactly the ``class_ids`` given, in the order given.
    """
    index_of = {q: k for k, q in enumerate(class_ids)}
    try:
        label_indices = np.array([index_of[int(y)] for y in labels], dtype=np.int64)
    except KeyError as exc:
        raise UnknownClassError(exc.args[0]) from None
    _, grad = _loss_and_gradient(prompts, features, label_indices, class_ids, enc, temperature)
    return grad


def batch_loss(
    prompts: PromptSet,
    features: np.ndarray,
    labels: np.ndarray,
    class_ids: list[int],
    enc: SurrogateEncoder,
    temperature: float,
) -> float:
    """Mean negative log likelihood of a batch under the current prompts."""
    index_of = {q: k for k, q in enumerate(class_ids)}
    label_indices = np.array([index_of[int(y)] for y in labels], dtype=np.int64)
    g = encode_classes(prompts, class_ids, enc)
    f = embed_images(features, enc)
    probs = softmax_over_classes(f @ g.T, temperature)
    return _mean_nll(probs, label_indices)


def local_adapt(
    client: ClientState,
    enc: SurrogateEncoder,
    cfg: FederationConfig,
    rng: np.random.Generator,
) -> tuple[PromptSet, list[float]]:
    """Run E epochs of plain SGD on the client's shard, prompts only.

    Returns the adapted prompt set (the input set is not modified) and the
    mean training loss of each epoch, measured at the parameters current
    when each batch was visited.  Slot provenance is preserved: adapting a
    vector does not change which peer it last arrived from.
    """
    data = client.dataset
    n = len(data.labels)
    prompts = client.active_prompts.copy()
    if n == 0:
        raise ValueError(f"client {client.id} has an empty shard")
    batch = min(cfg.batch_size, n)
    index_of = {q: k for k, q in enumerate(data.class_ids)}
    label_indices = np.array([index_of[int(y)] for y in data.labels], dtype=np.int64)

    epoch_losses: list[float] = []
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        seen = 0.0
        for start in range(0, n, batch):
            take = order[start : start + batch]
            loss, grad = _loss_and_gradient(
                prompts, data.features[take], label_indices[take], data.class_ids, enc, cfg.temperature
            )
            prompts.vectors -= cfg.learning_rate * grad
            seen += loss * len(take)
        epoch_losses.append(seen / n)
    return prompts, epoch_losses


def zero_shot_eval(
    prompts: PromptSet,
    features: np.ndarray,
    labels: np.ndarray,
    class_ids: list[int],
    enc: SurrogateEncoder,
    temperature: float,
) -> float:
    """Accuracy on held-out classes the prompts never trained on.

    Candidates are scored over ``class_ids`` sorted ascending, so argmax
    ties resolve to the lowest class id.  The temperature cannot change the
    argmax; it is accepted to mirror the scoring used in training.
    """
    del temperature  # softmax is monotone in the similarities
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    ids = sorted(class_ids)
    g = encode_classes(prompts, ids, enc)
    f = embed_images(features, enc)
    pred = np.asarray(ids)[np.argmax(f @ g.T, axis=1)]
    return float(np.mean(pred == np.asarray(labels)))
