"""Home of `encode_context` and `contrastive_loss`.

A triplet's context is the set of (relation, entity) tuples around its head and
tail. Each tuple is encoded as ``relation ⊕ entity``, refined by self-attention,
scored by a learned vector and pooled with softmax weights into one context
embedding. The contrastive loss pulls the anchor ``head ⊕ tail`` towards its true
context and away from corrupted ones.
"""

from typing import Mapping
from dataclasses import dataclass
from .layers import as_row, as_vector, attention
from .tasks import TripletContext
from .tensor import Tensor, ops


@dataclass(frozen=True)
class ContextEmbedding:
    """Pooled context vector and its attention weights."""

    vector: Tensor
    """Context embedding of size 2d."""
    attention: Tensor
    """Softmax weight per tuple."""


@dataclass(frozen=True)
class ContrastiveBatch:
    """An anchor with its true context and N false contexts."""

    anchor: Tensor
    positive: Tensor
    negatives: tuple[Tensor, ...]
    temperature: float = 0.5

    def __post_init__(self):
        if not self.negatives:
            raise ValueError("A contrastive batch needs at least one false context")
        if self.temperature <= 0:
            raise ValueError(f"Temperature must be positive, got {self.temperature}")
        for other in (self.positive, *self.negatives):
            if other.shape != self.anchor.shape:
                raise ValueError(
                    f"Embedding shape {other.shape} does not match anchor"
                    f" {self.anchor.shape}"
                )


def tuple_encodings(ctx: TripletContext, params: Mapping[str, Tensor], /) -> Tensor:
    """The ``relation ⊕ entity`` rows of a context, shape (tuples, 2d)."""
    if not ctx.tuples:
        raise ValueError(f"Empty context for anchor {tuple(ctx.anchor)}")
    relations = [r for r, _ in ctx.tuples]
    entities = [e for _, e in ctx.tuples]
    return ops.concat(
        [
            ops.take_rows(params["relation"], relations),
            ops.take_rows(params["entity"], entities),
        ],
        axis=1,
    )


def encode_context(ctx: TripletContext, params: Mapping[str, Tensor], /) -> ContextEmbedding:
    """Encode a context into a `ContextEmbedding`.

    The weighted sum is taken over the original tuple encodings, not the
    attention-refined ones.

    Raises:
        ValueError: If the context is empty or embedding sizes disagree.
    """
    encoded = tuple_encodings(ctx, params)
    score = params["context.score"]
    if score.shape != (encoded.shape[1],):
        raise ValueError(
            f"Context score vector {score.shape} does not match tuple encodings"
            f" {encoded.shape}"
        )
    refined = attention(
        encoded,
        params["context.query"],
        params["context.key"],
        params["context.value"],
    )
    logits = as_vector(ops.matmul(refined, ops.reshape(score, (-1, 1))))
    alpha = ops.softmax(logits)
    vector = as_vector(ops.matmul(as_row(alpha), encoded))
    return ContextEmbedding(vector=vector, attention=alpha)


def anchor_embedding(params: Mapping[str, Tensor], head: int, tail: int, /) -> Tensor:
    """``head ⊕ tail`` from the raw entity table."""
    return as_vector(ops.take_rows(params["entity"], [head, tail]))


def contrastive_loss(batch: ContrastiveBatch, /) -> Tensor:
    """InfoNCE over cosine similarities, the positive term included in the denominator.

    Raises:
        NumericalError: If any embedding has zero norm.
    """
    stacked = ops.stack_rows([batch.positive, *batch.negatives])
    logits = ops.mul(
        ops.cosine_similarity(batch.anchor, stacked), 1.0 / batch.temperature
    )
    return ops.neg(ops.index(ops.log_softmax(logits), 0))


__all__ = (
    "ContextEmbedding",
    "ContrastiveBatch",
    "tuple_encodings",
    "encode_context",
    "anchor_embedding",
    "contrastive_loss",
)
