"""Home of `pretrain_transe`.

Translational pre-training of the entity and relation tables on background
triplets, used to initialize the few-shot model.
"""

from typing import Any, Callable, NamedTuple, Optional
import logging
import arrow
import numpy as np
from .errors import DataError, EmptyGraphError
from .kg import KnowledgeGraph
from .params import transe_init
from .relation import margin_loss, transe_score
from .tensor import Tensor, backward, derive_rng, ops
from .util import humanize_elapsed


class PretrainedTables(NamedTuple):
    """Embedding tables produced by `pretrain_transe`."""

    entity: np.ndarray
    """(E, d) entity table."""
    relation: np.ndarray
    """(2R, d) relation table; inverse rows are the negated forward rows."""


def _renormalize(table: np.ndarray):
    norms = np.linalg.norm(table, axis=1, keepdims=True)
    np.divide(table, np.maximum(norms, 1.0), out=table)


def corrupt_triplets(
    heads: np.ndarray,
    tails: np.ndarray,
    num_entities: int,
    rng: np.random.Generator,
    /,
) -> tuple[np.ndarray, np.ndarray]:
    """Replace the head or the tail (each with probability 1/2) of every triplet.

    The replacement is uniform over the other ``num_entities - 1`` entities, so it
    never equals the entity it replaces.

    Raises:
        DataError: If there are fewer than two entities.
    """
    if num_entities < 2:
        raise DataError(f"Cannot corrupt triplets with {num_entities} entities")
    corrupt_head = rng.random(len(heads)) < 0.5
    original = np.where(corrupt_head, heads, tails)
    replacement = (original + rng.integers(1, num_entities, size=len(heads))) % num_entities
    return (
        np.where(corrupt_head, replacement, heads),
        np.where(corrupt_head, tails, replacement),
    )


def pretrain_transe(
    g: KnowledgeGraph,
    dim: int,
    epochs: int,
    lr: float,
    seed: int,
    /,
    *,
    margin: float = 1.0,
    batch_size: int = 128,
    logger: Optional[Callable[[str], Any]] = None,
) -> PretrainedTables:
    """Train TransE tables on the background triplets of *g*.

    Each epoch visits the triplets in a seeded random order; every positive is paired
    with a corruption of its head or tail (see `corrupt_triplets`). The loss is the
    mean margin loss with plain SGD, after which entity rows are projected back into
    the unit ball.

    Args:
        g: The graph. Few-shot task triplets are not used.
        dim: Embedding size.
        epochs: Passes over the background triplets.
        lr: SGD learning rate.
        seed: Seed of the init, shuffling and corruption streams.
        margin: Margin of the ranking loss.
        batch_size: Triplets per update.
        logger: Function receiving progress messages.

    Raises:
        EmptyGraphError: If there are no background triplets.
        DataError: If the graph has fewer than two entities.
    """
    log = logger or logging.getLogger(__name__).info
    triplets = np.array(
        [t for t in g.triplets if t.relation not in g.few_shot], dtype=np.intp
    ).reshape(-1, 3)
    if len(triplets) == 0:
        raise EmptyGraphError("empty graph: no background triplets to pre-train on")
    entity = Tensor(
        transe_init(derive_rng(seed, "pretrain", "entity"), g.num_entities, dim),
        requires_grad=True,
    )
    relation = Tensor(
        transe_init(derive_rng(seed, "pretrain", "relation"), g.num_relation_ids, dim),
        requires_grad=True,
    )
    start = arrow.utcnow()
    for epoch in range(epochs):
        rng = derive_rng(seed, "pretrain", "epoch", epoch)
        order = rng.permutation(len(triplets))
        epoch_loss = 0.0
        for begin in range(0, len(order), batch_size):
            batch = triplets[order[begin:begin + batch_size]]
            heads, relations, tails = batch[:, 0], batch[:, 1], batch[:, 2]
            negative_heads, negative_tails = corrupt_triplets(
                heads, tails, g.num_entities, rng
            )
            r = ops.take_rows(relation, relations)
            positive = transe_score(
                ops.take_rows(entity, heads), r, ops.take_rows(entity, tails)
            )
            negative = transe_score(
                ops.take_rows(entity, negative_heads),
                r,
                ops.take_rows(entity, negative_tails),
            )
            loss = ops.mul(margin_loss(positive, negative, margin), 1.0 / len(batch))
            grads = backward(loss, inputs=[entity, relation])
            entity.data -= lr * grads[entity].data
            relation.data -= lr * grads[relation].data
            _renormalize(entity.data)
            epoch_loss += loss.item() * len(batch)
        if (epoch + 1) % max(1, epochs // 10) == 0 or epoch + 1 == epochs:
            log(
                f"Pre-training epoch {epoch + 1}/{epochs}:"
                f" mean loss {epoch_loss / len(triplets):.4f}"
            )
    relation_table = relation.numpy()
    for r in g.background_relations:
        relation_table[g.inverse(r)] = -relation_table[r]
    log(f"Pre-training finished in {humanize_elapsed(start)}")
    return PretrainedTables(entity=entity.numpy(), relation=relation_table)


__all__ = (
    "PretrainedTables",
    "corrupt_triplets",
    "pretrain_transe",
)
