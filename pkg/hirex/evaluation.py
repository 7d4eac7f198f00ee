"""Home of `rank_candidates`, `MetricsReport` and `evaluate`.

Ranking follows the few-shot protocol: each query's candidate list is taken as
given and, in the filtered setting (the default), candidates that form another
known true triplet with the query's head are removed first. Lower scores rank
higher; ties are broken by candidate id.
"""

from typing import Mapping, NamedTuple, Optional, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
import math
from .config import TrainConfig
from .errors import NumericalError
from .kg import KnowledgeGraph
from .model import adapt, score_candidates
from .tasks import FewShotTask
from .tensor import Tensor, grad_mode


HITS_AT = (1, 5, 10)
"""Cutoffs of the Hits@n metrics."""


def rank_candidates(scores: Mapping[int, float], true_tail: int, /) -> int:
    """1-based rank of *true_tail* among scored candidates (lower score is better).

    Candidates scoring strictly lower, or equal with a smaller id, rank above it.

    Raises:
        ValueError: If *true_tail* is not among the candidates.
    """
    if true_tail not in scores:
        raise ValueError(f"True tail {true_tail} is missing from the candidates")
    target = scores[true_tail]
    better = sum(
        1
        for c, s in scores.items()
        if c != true_tail and (s < target or (s == target and c < true_tail))
    )
    return 1 + better


class TaskMetrics(NamedTuple):
    """Metrics of the queries of one relation."""

    relation: str
    queries: int
    mrr: float
    hits_at_1: float
    hits_at_5: float
    hits_at_10: float


def _metrics(ranks: Sequence[int]) -> tuple[float, float, float, float]:
    n = len(ranks)
    mrr = math.fsum(1.0 / r for r in ranks) / n
    return (mrr, *(sum(1 for r in ranks if r <= k) / n for k in HITS_AT))


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate and per-relation ranking metrics."""

    mrr: float
    hits_at_1: float
    hits_at_5: float
    hits_at_10: float
    per_task: tuple[TaskMetrics, ...]
    query_count: int
    fingerprint: str = ""
    """Fingerprint of the configuration that produced the scores."""
    filtered: bool = True

    @classmethod
    def from_ranks(
        cls,
        ranks: Mapping[str, Sequence[int]],
        /,
        *,
        fingerprint: str = "",
        filtered: bool = True,
    ) -> "MetricsReport":
        """Aggregate the ranks of every query, grouped by relation name.

        Raises:
            ValueError: If there are no queries.
        """
        per_task = tuple(
            TaskMetrics(name, len(rs), *_metrics(rs)) for name, rs in ranks.items() if rs
        )
        everything = [r for rs in ranks.values() for r in rs]
        if not everything:
            raise ValueError("No queries to evaluate")
        report = cls(
            *_metrics(everything),
            per_task=per_task,
            query_count=len(everything),
            fingerprint=fingerprint,
            filtered=filtered,
        )
        return report.validate()

    def validate(self) -> "MetricsReport":
        """Return self if the metric bounds hold.

        Raises:
            NumericalError: If Hits@1 <= Hits@5 <= Hits@10 <= 1, 0 < MRR <= 1 or
                Hits@1 <= MRR fails.
        """
        ok = (
            self.hits_at_1 <= self.hits_at_5 <= self.hits_at_10 <= 1
            and 0 < self.mrr <= 1
            and self.hits_at_1 <= self.mrr
        )
        if not ok:
            raise NumericalError(f"Metric bounds violated: {self.summary()}", op="metrics")
        return self

    def summary(self) -> dict[str, float]:
        """The four headline metrics by name."""
        return {
            "mrr": self.mrr,
            "hits@1": self.hits_at_1,
            "hits@5": self.hits_at_5,
            "hits@10": self.hits_at_10,
        }

    def to_text(self) -> str:
        """The report as tab-separated text: headline metrics, then one row per task."""
        lines = [
            f"fingerprint\t{self.fingerprint}",
            f"ranking\t{'filtered' if self.filtered else 'raw'}",
            f"queries\t{self.query_count}",
        ]
        lines.extend(f"{name}\t{value:.6f}" for name, value in self.summary().items())
        lines.append("")
        lines.append("relation\tqueries\tmrr\thits@1\thits@5\thits@10")
        for task in self.per_task:
            lines.append(
                f"{task.relation}\t{task.queries}\t{task.mrr:.6f}\t{task.hits_at_1:.6f}"
                f"\t{task.hits_at_5:.6f}\t{task.hits_at_10:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path, /):
        """Write `to_text` to *path*."""
        Path(path).write_text(self.to_text(), encoding="utf-8")


def task_ranks(
    g: KnowledgeGraph,
    task: FewShotTask,
    params: Mapping[str, Tensor],
    config: TrainConfig,
    /,
    *,
    filtered: bool = True,
) -> list[int]:
    """Rank of every query of *task* after adapting to its references."""
    with grad_mode(True):
        meta, projections, _ = adapt(task, params, config)
    ranks = []
    for (head, tail), candidates in zip(task.queries, task.candidates):
        kept = [
            c
            for c in candidates
            if c == tail or not (filtered and g.is_true(head, task.relation, c))
        ]
        scores = score_candidates(meta, params, projections, head, kept)
        ranks.append(rank_candidates(dict(zip(kept, scores.tolist())), tail))
    return ranks


def evaluate(
    params: Mapping[str, Tensor],
    g: KnowledgeGraph,
    tasks: Sequence[FewShotTask],
    config: TrainConfig,
    /,
    *,
    filtered: bool = True,
    workers: Optional[int] = None,
) -> MetricsReport:
    """Rank every query of *tasks* and aggregate the metrics.

    Each task runs the full pipeline: meta representation of the references, the
    inner update, then scoring of every candidate. Tasks may run on *workers* threads
    (default ``config.workers``); results are gathered in task order.
    """
    workers = workers or config.workers

    def run(task):
        return task_ranks(g, task, params, config, filtered=filtered)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_ranks = list(pool.map(run, tasks))
    else:
        all_ranks = [run(task) for task in tasks]
    ranks: dict[str, list[int]] = dict()
    for task, found in zip(tasks, all_ranks):
        ranks.setdefault(g.relations.name(task.relation), []).extend(found)
    return MetricsReport.from_ranks(
        ranks, fingerprint=config.fingerprint(), filtered=filtered
    )


__all__ = (
    "HITS_AT",
    "rank_candidates",
    "TaskMetrics",
    "MetricsReport",
    "task_ranks",
    "evaluate",
)
