"""Home of `train`, the outer meta-training loop.

Each outer step draws ``tasks_per_step`` tasks from the training relations, computes
every task's loss and gradients (optionally on a thread pool), averages them in task
order and applies one Adam step. Every ``eval_interval`` steps the model is ranked on
the validation tasks; the checkpoint with the best validation MRR (earliest on ties)
is returned.
"""

from typing import Any, Callable, Mapping, Optional, Sequence, TextIO
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
import logging
import math
import arrow
import numpy as np
from .config import TrainConfig
from .errors import DataError, NumericalError, TrainingDivergedError
from .evaluation import MetricsReport, evaluate
from .kg import KnowledgeGraph
from .model import task_loss
from .params import Checkpoint, ParameterStore, vocabulary_digest
from .tasks import FewShotTask, TaskSampler, evaluation_tasks
from .tensor import AdamState, Tensor, adam_step, backward
from .util import humanize_elapsed, tsv_row


LOG_COLUMNS = (
    "step",
    "loss",
    "query_loss",
    "contrastive_loss",
    "reference_loss",
    "valid_mrr",
    "valid_hits@1",
    "valid_hits@5",
    "valid_hits@10",
)
"""Columns of the training log."""


def _task_gradients(g, params, config, step, index, task):
    out = task_loss(g, task, params, config, stream=("train", step, index))
    grads = backward(out.total, inputs=list(params.tensors.values()))
    terms = (out.total.item(), out.query.item(), out.contrastive.item(), out.reference.item())
    return terms, grads


def graph_meta(g: KnowledgeGraph, config: TrainConfig, /, **extra) -> dict[str, Any]:
    """Checkpoint metadata tying parameters to a vocabulary and a config."""
    return dict(
        fingerprint=config.fingerprint(),
        entity_digest=vocabulary_digest(g.entities.names),
        relation_digest=vocabulary_digest(g.relations.names),
        num_entities=g.num_entities,
        num_relations=g.num_relations,
    ) | extra


def train(
    g: KnowledgeGraph,
    relations: Sequence[int],
    config: TrainConfig,
    /,
    *,
    params: Optional[ParameterStore] = None,
    valid_tasks: Optional[Sequence[FewShotTask]] = None,
    log_file: Optional[TextIO] = None,
    meta: Optional[Mapping[str, Any]] = None,
    logger: Optional[Callable[[str], Any]] = None,
) -> Checkpoint:
    """Meta-train on the tasks of *relations*.

    Args:
        g: The graph.
        relations: Training relation ids.
        config: Hyperparameters.
        params: Initial parameters (e.g. from pre-training); fresh ones by default.
            Updated in place.
        valid_tasks: Validation tasks; by default built from the ``valid`` split.
        log_file: Receives the tab-separated training log (`LOG_COLUMNS`).
        meta: Extra checkpoint metadata.
        logger: Function receiving progress messages.

    Returns:
        The checkpoint with the best validation MRR, or the last one when there are
        no validation tasks.

    Raises:
        DataError: If *relations* is empty or overlaps the test split.
        TrainingDivergedError: If a loss or gradient becomes non-finite.
    """
    log = logger or logging.getLogger(__name__).info
    relations = tuple(relations)
    if not relations:
        raise DataError("Empty task list: no training relations")
    leaked = set(relations) & set(g.splits["test"])
    if leaked:
        names = sorted(g.relations.name(r) for r in leaked)
        raise DataError(f"Training relations overlap the test split: {names}")
    config.validate()
    if params is None:
        params = ParameterStore.initialize(
            g.num_entities, g.num_relation_ids, config.dim, config.seed
        )
    if valid_tasks is None:
        valid_tasks = []
        if g.splits["valid"]:
            valid_tasks = evaluation_tasks(
                g,
                "valid",
                config.k,
                config.candidate_size,
                config.seed,
                m=config.eval_queries or None,
            )
    sampler = TaskSampler(
        g,
        relations,
        k=config.k,
        m=config.m,
        candidate_size=config.candidate_size,
        seed=config.seed,
    )
    state = AdamState.for_params(params.tensors)
    names = {id(t): name for name, t in params.items()}
    checkpoint_meta = graph_meta(g, config) | dict(meta or dict())
    history: list[tuple[int, float]] = []
    best: Optional[Checkpoint] = None
    best_mrr = -math.inf
    if log_file is not None:
        log_file.write(tsv_row(LOG_COLUMNS))
    start = arrow.utcnow()
    log(
        f"Training {config.fingerprint()} on {len(relations)} relations"
        f" for {config.max_steps} steps"
    )

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            params=params.snapshot(),
            optimizer=deepcopy(state),
            step=step,
            history=list(history),
            config=config.to_dict(),
            meta=dict(checkpoint_meta),
        )

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for step in range(1, config.max_steps + 1):
            tasks = sampler.sample(step, config.tasks_per_step)
            jobs = [(g, params, config, step, i, task) for i, task in enumerate(tasks)]
            totals = np.zeros(4)
            summed: dict[str, np.ndarray] = dict()
            try:
                if pool is None:
                    results = (_task_gradients(*job) for job in jobs)
                else:
                    results = pool.map(lambda job: _task_gradients(*job), jobs)
                for terms, grads in results:
                    totals += terms
                    for tensor, gradient in grads.items():
                        name = names[id(tensor)]
                        if name in summed:
                            summed[name] += gradient.data
                        else:
                            summed[name] = gradient.data.copy()
                averaged = {k: Tensor(v / len(tasks)) for k, v in summed.items()}
                losses = totals / len(tasks)
                if not np.isfinite(losses).all():
                    raise NumericalError("non-finite training loss", op="total_loss")
                adam_step(params.tensors, averaged, state, config.lr)
            except NumericalError as err:
                raise TrainingDivergedError(step, err) from err
            report: Optional[MetricsReport] = None
            if step % config.eval_interval == 0 or step == config.max_steps:
                if valid_tasks:
                    report = evaluate(params, g, valid_tasks, config)
                    history.append((step, report.mrr))
                    log(
                        f"Step {step}: loss {losses[0]:.4f},"
                        f" valid MRR {report.mrr:.4f}, Hits@10 {report.hits_at_10:.4f}"
                    )
                    if report.mrr > best_mrr:
                        best_mrr = report.mrr
                        best = snapshot(step)
                else:
                    log(f"Step {step}: loss {losses[0]:.4f}")
            if log_file is not None:
                valid = [None] * 4
                if report is not None:
                    valid = list(report.summary().values())
                log_file.write(tsv_row([step, *map(float, losses), *valid]))
    finally:
        if pool is not None:
            pool.shutdown()
    if best is None:
        best = snapshot(config.max_steps)
    else:
        best.history = list(history)
    log(
        f"Training finished in {humanize_elapsed(start)};"
        f" best step {best.step} (valid MRR {best.best_mrr})"
    )
    return best


__all__ = (
    "LOG_COLUMNS",
    "graph_meta",
    "train",
)
