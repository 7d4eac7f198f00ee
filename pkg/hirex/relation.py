"""Home of `MetaRelation`, the set attention block and translational scoring.

The meta representation of a relation is learned from its reference pairs: each pair
becomes a row ``head ⊕ tail``, a set attention block lets rows interact, a two-layer
MLP maps every row to the embedding size and the rows are averaged. A hyper-network
turns the result into the task projection vector used by the projected score.
"""

from typing import Mapping, Optional
from dataclasses import dataclass, replace
import numpy as np
from .layers import as_row, as_vector, attention, linear
from .tensor import Tensor, ops


@dataclass(frozen=True)
class MetaRelation:
    """A task's relation vector and projection vector, before and after refinement."""

    relation: Tensor
    """The meta representation R (size d)."""
    projection: Optional[Tensor] = None
    """Task projection vector r_p (size d); None when scoring without projections."""
    refined_relation: Optional[Tensor] = None
    """R after the inner update."""
    refined_projection: Optional[Tensor] = None
    """r_p after the inner update."""

    @property
    def is_refined(self) -> bool:
        """If an inner update has been applied."""
        return self.refined_relation is not None

    @property
    def translation(self) -> Tensor:
        """The relation vector to score with: refined if available."""
        return self.refined_relation if self.is_refined else self.relation

    @property
    def task_projection(self) -> Optional[Tensor]:
        """The projection vector to score with: refined if available."""
        return self.refined_projection if self.is_refined else self.projection

    def refine(
        self, relation: Tensor, projection: Optional[Tensor] = None, /
    ) -> "MetaRelation":
        """A copy carrying refined values."""
        return replace(self, refined_relation=relation, refined_projection=projection)


@dataclass(frozen=True)
class SabWeights:
    """Weights of one single-head set attention block over rows of size 2d."""

    query: Tensor
    key: Tensor
    value: Tensor
    output: Tensor
    norm1_gamma: Tensor
    norm1_beta: Tensor
    ff1_weight: Tensor
    ff1_bias: Tensor
    ff2_weight: Tensor
    ff2_bias: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    drop_path: float = 0.0
    """Probability of dropping each residual branch during training."""

    @classmethod
    def from_params(
        cls,
        params: Mapping[str, Tensor],
        /,
        prefix: str = "mrl",
        *,
        drop_path: float = 0.0,
    ) -> "SabWeights":
        """Collect the weights stored under *prefix* in a parameter mapping."""
        if not 0 <= drop_path < 1:
            raise ValueError(f"Drop-path rate must be in [0, 1), got {drop_path}")
        return cls(
            **{
                name: params[f"{prefix}.{name.replace('_', '.', 1)}"]
                for name in (
                    "query",
                    "key",
                    "value",
                    "output",
                    "norm1_gamma",
                    "norm1_beta",
                    "ff1_weight",
                    "ff1_bias",
                    "ff2_weight",
                    "ff2_bias",
                    "norm2_gamma",
                    "norm2_beta",
                )
            },
            drop_path=drop_path,
        )


def set_attention_block(
    x: Tensor,
    weights: SabWeights,
    /,
    *,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Apply a set attention block to the rows of *x*.

    Attention sublayer with residual and layer norm, then a row-wise feed-forward
    sublayer with residual and layer norm. With an *rng*, each residual branch is
    dropped as a whole with probability ``weights.drop_path`` (scaled to keep its
    expectation); without one (evaluation) nothing is dropped.
    """
    if x.ndim != 2 or x.shape[1] != weights.query.shape[0]:
        raise ValueError(
            f"Set attention input {x.shape} does not match weights"
            f" {weights.query.shape}"
        )
    mixed = linear(attention(x, weights.query, weights.key, weights.value), weights.output)
    mixed = ops.mul(mixed, ops.dropout_mask((), weights.drop_path, rng))
    hidden = ops.layer_norm(ops.add(x, mixed), weights.norm1_gamma, weights.norm1_beta)
    ff = linear(
        ops.relu(linear(hidden, weights.ff1_weight, weights.ff1_bias)),
        weights.ff2_weight,
        weights.ff2_bias,
    )
    ff = ops.mul(ff, ops.dropout_mask((), weights.drop_path, rng))
    return ops.layer_norm(ops.add(hidden, ff), weights.norm2_gamma, weights.norm2_beta)


def reference_matrix(params: Mapping[str, Tensor], pairs, /) -> Tensor:
    """Rows ``head ⊕ tail`` for (head, tail) *pairs*, shape (K, 2d)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("Empty reference set")
    entity = params["entity"]
    return ops.concat(
        [
            ops.take_rows(entity, [h for h, _ in pairs]),
            ops.take_rows(entity, [t for _, t in pairs]),
        ],
        axis=1,
    )


def mlp(x: Tensor, params: Mapping[str, Tensor], /) -> Tensor:
    """Two-layer row-wise MLP, 2d to 2d with relu, then 2d to d."""
    hidden = ops.relu(linear(x, params["mlp.hidden.weight"], params["mlp.hidden.bias"]))
    return linear(hidden, params["mlp.output.weight"], params["mlp.output.bias"])


def hyper_projection(relation: Tensor, params: Mapping[str, Tensor], /) -> Tensor:
    """Task projection vector r_p generated from a meta representation."""
    return as_vector(
        linear(as_row(relation), params["hyper.weight"], params["hyper.bias"])
    )


def meta_representation(
    x: Tensor,
    params: Mapping[str, Tensor],
    /,
    *,
    drop_path: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    use_sab: bool = True,
    with_projection: bool = True,
) -> MetaRelation:
    """The `MetaRelation` of a reference matrix *x* (see `reference_matrix`).

    Args:
        x: Reference rows, shape (K, 2d), K >= 1.
        params: Parameter mapping.
        drop_path: Drop-path rate of the set attention block.
        rng: Drop-path stream; None disables drop-path.
        use_sab: Let references interact through the set attention block. When
            False, the MLP is applied to the plain mean of the rows.
        with_projection: Generate the task projection vector.

    Raises:
        ValueError: If *x* is empty or sizes disagree.
    """
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"Expected a non-empty (K, 2d) reference matrix, got {x.shape}")
    if use_sab:
        weights = SabWeights.from_params(params, drop_path=drop_path)
        rows = set_attention_block(x, weights, rng=rng)
    else:
        rows = ops.mean(x, axis=0, keepdims=True)
    relation = ops.mean(mlp(rows, params), axis=0)
    projection = hyper_projection(relation, params) if with_projection else None
    return MetaRelation(relation=relation, projection=projection)


def _check_same(*tensors: Tensor):
    shapes = [t.shape for t in tensors]
    if len({s[-1:] for s in shapes}) != 1:
        raise ValueError(f"Dimension mismatch: {shapes}")


def mtransd_project(e: Tensor, p_e: Tensor, r_p: Tensor, /) -> Tensor:
    """``r_p (p_e . e) + e``, row-wise when *e* and *p_e* are matrices."""
    _check_same(e, p_e, r_p)
    if e.shape != p_e.shape:
        raise ValueError(f"Dimension mismatch: {e.shape} and {p_e.shape}")
    dot = ops.sum(ops.mul(p_e, e), axis=-1, keepdims=True)
    return ops.add(ops.mul(dot, r_p), e)


def mtransd_score(h: Tensor, relation: Tensor, t: Tensor, /) -> Tensor:
    """``||h + relation - t||``; lower is better. Row-wise for matrices."""
    _check_same(h, relation, t)
    return ops.l2_norm(ops.sub(ops.add(h, relation), t), axis=-1)


def transe_score(h: Tensor, relation: Tensor, t: Tensor, /) -> Tensor:
    """The unprojected translational score ``||h + relation - t||``."""
    return mtransd_score(h, relation, t)


def margin_loss(positive: Tensor, negative: Tensor, gamma: float = 1.0, /) -> Tensor:
    """``sum(max(0, positive + gamma - negative))`` over paired scores.

    Raises:
        ValueError: If the score counts differ or *gamma* is not positive.
    """
    if positive.shape != negative.shape:
        raise ValueError(
            f"Positive scores {positive.shape} and negative scores {negative.shape}"
            " must pair up"
        )
    if gamma <= 0:
        raise ValueError(f"Margin must be positive, got {gamma}")
    return ops.sum(ops.relu(ops.sub(ops.add(positive, gamma), negative)))


__all__ = (
    "MetaRelation",
    "SabWeights",
    "set_attention_block",
    "reference_matrix",
    "mlp",
    "hyper_projection",
    "meta_representation",
    "mtransd_project",
    "mtransd_score",
    "transe_score",
    "margin_loss",
)
