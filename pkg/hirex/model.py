"""Home of the per-task objective: inner update, query loss and total loss.

One task goes through these stages:

1. `meta_representation` of the reference pairs gives R and r_p.
2. The reference margin loss is differentiated with respect to R, r_p and task-local
   copies of the reference entities' projection vectors, and one gradient step
   refines them (`inner_update`).
3. Queries are scored with the refined R and r_p and the shared projection table
   (`query_loss`).
4. The contrastive loss over the reference triplets' contexts is added with weight
   lambda (`total_loss`).

In ``first`` order mode the inner gradients are constants; in ``full`` mode they
carry their own graph so the outer gradient flows through them.
"""

from typing import Mapping, NamedTuple, Optional, Sequence
from dataclasses import dataclass
import numpy as np
from .config import TrainConfig
from .context import ContrastiveBatch, anchor_embedding, contrastive_loss, encode_context
from .kg import KnowledgeGraph, Triplet
from .relation import (
    MetaRelation,
    margin_loss,
    meta_representation,
    mtransd_project,
    mtransd_score,
    reference_matrix,
    transe_score,
)
from .tasks import FewShotTask, build_context, synthesize_false_contexts
from .tensor import Tensor, derive_rng, grad, no_grad, ops


@dataclass(frozen=True)
class TaskProjections:
    """Projection vectors seen by one task.

    Entities of the reference pairs use task-local copies (refined by the inner
    update) while the references are scored. Queries and candidates always read the
    shared table, even for entities that are also references.
    """

    table: Tensor
    """The shared (E, d) projection table."""
    ids: tuple[int, ...]
    """Entities with task-local copies, sorted."""
    local: Tensor
    """Task-local copies, one row per id."""

    @classmethod
    def for_references(
        cls, table: Tensor, references: Sequence[tuple[int, int]], /
    ) -> "TaskProjections":
        """Copies for every head and tail of *references*."""
        ids = tuple(sorted({e for pair in references for e in pair}))
        return cls(table=table, ids=ids, local=ops.take_rows(table, ids))

    def with_local(self, local: Tensor, /) -> "TaskProjections":
        """The same projections with replaced local copies."""
        assert local.shape == self.local.shape
        return TaskProjections(table=self.table, ids=self.ids, local=local)

    def lookup(self, entities: Sequence[int], /, *, local: bool = True) -> Tensor:
        """Projection rows for *entities*, shape (n, d).

        With *local* False every row comes from the shared table.
        """
        if not local:
            return ops.take_rows(self.table, list(entities))
        position = {e: i for i, e in enumerate(self.ids)}
        others = sorted({e for e in entities if e not in position})
        for i, e in enumerate(others):
            position[e] = len(self.ids) + i
        combined = self.local
        if others:
            combined = ops.concat([self.local, ops.take_rows(self.table, others)])
        return ops.take_rows(combined, [position[e] for e in entities])


class TaskLoss(NamedTuple):
    """Loss terms of one task."""

    total: Tensor
    query: Tensor
    contrastive: Tensor
    reference: Tensor
    """Reference loss before the inner update."""


def _embed(params: Mapping[str, Tensor], entities: Sequence[int]) -> Tensor:
    return ops.take_rows(params["entity"], list(entities))


def score_pairs(
    params: Mapping[str, Tensor],
    meta: MetaRelation,
    projections: Optional[TaskProjections],
    heads: Sequence[int],
    tails: Sequence[int],
    /,
    *,
    local: bool = True,
) -> Tensor:
    """Scores of (head, tail) pairs under *meta*; projected unless *projections* is None.

    Uses the refined values of *meta* when present. *local* selects the task-local
    projection copies of reference entities (see `TaskProjections.lookup`).
    """
    h, t = _embed(params, heads), _embed(params, tails)
    relation = meta.translation
    if projections is None:
        return transe_score(h, relation, t)
    r_p = meta.task_projection
    h = mtransd_project(h, projections.lookup(heads, local=local), r_p)
    t = mtransd_project(t, projections.lookup(tails, local=local), r_p)
    return mtransd_score(h, relation, t)


def reference_loss(
    task: FewShotTask,
    meta: MetaRelation,
    params: Mapping[str, Tensor],
    projections: Optional[TaskProjections],
    margin: float,
    /,
) -> Tensor:
    """Margin loss over the references and their negatives."""
    heads = [h for h, _ in task.references]
    tails = [t for _, t in task.references]
    positive = score_pairs(params, meta, projections, heads, tails)
    negative = score_pairs(params, meta, projections, heads, task.reference_negatives)
    return margin_loss(positive, negative, margin)


def inner_update(
    task: FewShotTask,
    meta: MetaRelation,
    params: Mapping[str, Tensor],
    projections: Optional[TaskProjections],
    inner_lr: float,
    /,
    *,
    margin: float = 1.0,
    order: str = "first",
) -> tuple[MetaRelation, Optional[TaskProjections], Tensor]:
    """One gradient step on the reference loss.

    Refines R, r_p and the task-local projection copies (only R when *projections*
    is None). Returns the refined meta relation, the refined projections and the
    reference loss before the step.

    Raises:
        NumericalError: If an inner gradient is not finite.
    """
    loss = reference_loss(task, meta, params, projections, margin)
    if projections is None:
        inputs = [meta.relation]
    else:
        inputs = [meta.relation, meta.projection, projections.local]
    needs_grad = any(t.requires_grad for t in inputs)
    if inner_lr == 0 or not needs_grad:
        return meta.refine(meta.relation, meta.projection), projections, loss
    grads = grad(loss, inputs, create_graph=order == "full")
    relation = ops.sub(meta.relation, ops.mul(grads[0], inner_lr))
    if projections is None:
        return meta.refine(relation, None), None, loss
    projection = ops.sub(meta.projection, ops.mul(grads[1], inner_lr))
    local = ops.sub(projections.local, ops.mul(grads[2], inner_lr))
    return meta.refine(relation, projection), projections.with_local(local), loss


def query_loss(
    task: FewShotTask,
    meta: MetaRelation,
    params: Mapping[str, Tensor],
    projections: Optional[TaskProjections],
    margin: float,
    /,
) -> Tensor:
    """Margin loss over the queries and their negatives, with the refined R and r_p.

    Query projection vectors come from the shared table.

    Raises:
        ValueError: If *meta* has not been refined.
    """
    if not meta.is_refined:
        raise ValueError("query_loss needs a refined meta relation")
    heads = [h for h, _ in task.queries]
    tails = [t for _, t in task.queries]
    positive = score_pairs(params, meta, projections, heads, tails, local=False)
    negative = score_pairs(
        params, meta, projections, heads, task.query_negatives, local=False
    )
    return margin_loss(positive, negative, margin)


def total_loss(l_q: Tensor, l_c: Tensor, weight: float, /) -> Tensor:
    """``l_q + weight * l_c``; exactly *l_q* when *weight* is 0."""
    if weight < 0:
        raise ValueError(f"Contrastive weight must be non-negative, got {weight}")
    if weight == 0:
        return l_q
    return ops.add(l_q, ops.mul(l_c, weight))


def contrastive_term(
    g: KnowledgeGraph,
    task: FewShotTask,
    params: Mapping[str, Tensor],
    config: TrainConfig,
    /,
    *,
    stream: tuple = (),
) -> Tensor:
    """Mean contrastive loss over the reference triplets with non-empty contexts.

    Anchors whose context is empty are skipped; with no usable anchor the term is 0.
    """
    losses = []
    for index, (h, t) in enumerate(task.references):
        anchor = Triplet(h, task.relation, t)
        ctx = build_context(g, anchor, config.neighbor_cap)
        if not ctx.tuples:
            continue
        false = synthesize_false_contexts(
            g, ctx, config.false_contexts, config.seed, stream=(*stream, index)
        )
        batch = ContrastiveBatch(
            anchor=anchor_embedding(params, h, t),
            positive=encode_context(ctx, params).vector,
            negatives=tuple(encode_context(c, params).vector for c in false),
            temperature=config.temperature,
        )
        losses.append(contrastive_loss(batch))
    if not losses:
        return Tensor(0.0)
    return ops.mean(ops.concat([ops.reshape(x, (1,)) for x in losses]))


def adapt(
    task: FewShotTask,
    params: Mapping[str, Tensor],
    config: TrainConfig,
    /,
    *,
    rng: Optional[np.random.Generator] = None,
) -> tuple[MetaRelation, Optional[TaskProjections], Tensor]:
    """Meta representation of the references followed by the inner update.

    *rng* drives drop-path and is None outside training.
    """
    x = reference_matrix(params, task.references)
    meta = meta_representation(
        x,
        params,
        drop_path=config.drop_path if rng is not None else 0.0,
        rng=rng,
        use_sab=not config.no_mrl,
        with_projection=not config.no_mtransd,
    )
    projections = None
    if not config.no_mtransd:
        projections = TaskProjections.for_references(params["projection"], task.references)
    return inner_update(
        task,
        meta,
        params,
        projections,
        config.inner_lr,
        margin=config.margin,
        order=config.maml_order,
    )


def task_loss(
    g: KnowledgeGraph,
    task: FewShotTask,
    params: Mapping[str, Tensor],
    config: TrainConfig,
    /,
    *,
    stream: tuple = (),
    training: bool = True,
) -> TaskLoss:
    """Every loss term of one task.

    Args:
        g: The graph, for contexts.
        task: The task.
        params: Parameter mapping.
        config: Hyperparameters and ablations.
        stream: Tags identifying the task within the run (step and position), used
            for drop-path and false-context draws.
        training: Enable drop-path.
    """
    rng = derive_rng(config.seed, "drop-path", *stream) if training else None
    meta, projections, l_s = adapt(task, params, config, rng=rng)
    l_q = query_loss(task, meta, params, projections, config.margin)
    if config.no_context:
        l_c = Tensor(0.0)
    else:
        l_c = contrastive_term(g, task, params, config, stream=stream)
    total = total_loss(l_q, l_c, config.effective_contrastive_weight)
    return TaskLoss(total=total, query=l_q, contrastive=l_c, reference=l_s)


def score_candidates(
    meta: MetaRelation,
    params: Mapping[str, Tensor],
    projections: Optional[TaskProjections],
    head: int,
    candidates: Sequence[int],
    /,
) -> np.ndarray:
    """Scores of (head, c) for every candidate c, as an array."""
    with no_grad():
        scores = score_pairs(
            params,
            meta,
            projections,
            [head] * len(candidates),
            list(candidates),
            local=False,
        )
    return scores.numpy()


__all__ = (
    "TaskProjections",
    "TaskLoss",
    "score_pairs",
    "reference_loss",
    "inner_update",
    "query_loss",
    "total_loss",
    "contrastive_term",
    "adapt",
    "task_loss",
    "score_candidates",
)
