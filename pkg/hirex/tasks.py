"""Home of `FewShotTask`, `TripletContext` and the samplers that build them.

Everything here is a pure function of an immutable `KnowledgeGraph` and a seed, so
tasks can be built on any thread. Randomness comes from streams derived with
`derive_rng`, tagged with the purpose and the ids involved.
"""

from typing import Mapping, Optional, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
import json
import logging
from .errors import DataError, InsufficientTripletsError, UnknownEntityError
from .kg import KnowledgeGraph, Triplet, neighbors
from .tensor.rng import derive_rng


logger = logging.getLogger(__name__)

Pair = tuple[int, int]
CandidateCache = dict[tuple[int, int, int], tuple[int, ...]]


@dataclass(frozen=True)
class FewShotTask:
    """One relation's reference and query pairs with candidates and negatives."""

    relation: int
    """Few-shot relation id."""
    references: tuple[Pair, ...]
    """The K reference (head, tail) pairs."""
    queries: tuple[Pair, ...]
    """The M query (head, true tail) pairs."""
    candidates: tuple[tuple[int, ...], ...]
    """Candidate tails per query, each containing the true tail."""
    reference_candidates: tuple[tuple[int, ...], ...]
    """Candidate tails per reference, the pool of reference negatives."""
    reference_negatives: tuple[int, ...]
    """One negative tail per reference."""
    query_negatives: tuple[int, ...]
    """One negative tail per query."""

    @property
    def k(self) -> int:
        """Number of references."""
        return len(self.references)

    @property
    def m(self) -> int:
        """Number of queries."""
        return len(self.queries)


@dataclass(frozen=True)
class TripletContext:
    """The neighbor tuples of an anchor triplet's head and tail."""

    anchor: Triplet
    tuples: tuple[Pair, ...]
    """(relation id, entity id) tuples."""
    is_corrupted: bool = False

    def __len__(self) -> int:
        return len(self.tuples)


def draw_candidates(
    g: KnowledgeGraph,
    head: int,
    relation: int,
    tail: int,
    size: int,
    seed: int,
    /,
) -> tuple[int, ...]:
    """Candidate tails for the pair (*head*, *tail*) of *relation*, sorted by id.

    Released candidate lists are used when the graph has them (for the (head,
    relation) key, else for the relation). Otherwise distractors are drawn from the
    tails of the background relations that also end in *tail*, padded with uniform
    entities; known true tails of (head, relation) are never distractors.

    Raises:
        DataError: If the graph has fewer eligible entities than requested.
    """
    given = g.candidates.get((head, relation))
    if given is None:
        given = g.relation_candidates.get(relation)
    if given is not None:
        return tuple(sorted(set(given) | {tail}))
    need = size - 1
    excluded = set(g.true_tails(head, relation)) | {tail}
    if g.num_entities - len(excluded) < need:
        raise DataError(
            f"Candidate pool of {g.num_entities - len(excluded)} entities is smaller"
            f" than the {need} distractors requested"
        )
    signature = sorted(
        {e for r in g.incoming_relations(tail) for e in g.tails_of(r)} - excluded
    )
    rng = derive_rng(seed, "candidates", relation, head, tail)
    if len(signature) >= need:
        picked = [signature[i] for i in rng.choice(len(signature), need, replace=False)]
    else:
        picked = list(signature)
        taken = excluded | set(picked)
        rest = [e for e in range(g.num_entities) if e not in taken]
        extra = rng.choice(len(rest), need - len(picked), replace=False)
        picked.extend(rest[i] for i in extra)
    return tuple(sorted(picked + [tail]))


def _cached_candidates(g, head, relation, tail, size, seed, cache):
    if cache is None:
        return draw_candidates(g, head, relation, tail, size, seed)
    key = (head, relation, tail)
    if key not in cache:
        cache[key] = draw_candidates(g, head, relation, tail, size, seed)
    return cache[key]


def sample_negative(
    g: KnowledgeGraph,
    h: int,
    r: int,
    candidates: Sequence[int],
    seed: int,
    /,
    *,
    stream: tuple = (),
) -> int:
    """A tail t' from *candidates* with (h, r, t') not in the graph, drawn uniformly.

    Raises:
        DataError: If every candidate is a true tail.
    """
    eligible = [c for c in candidates if not g.is_true(h, r, c)]
    if not eligible:
        raise DataError(
            f"No eligible negative for head {g.entities.name(h)!r} of relation"
            f" {g.relation_name(r)!r}: every candidate is a true tail"
        )
    rng = derive_rng(seed, "negative", h, r, *stream)
    return eligible[int(rng.integers(len(eligible)))]


def _negatives(g, relation, pairs, candidates, seed, stream, label):
    return tuple(
        sample_negative(g, h, relation, cs, seed, stream=(*stream, label, i))
        for i, ((h, _), cs) in enumerate(zip(pairs, candidates))
    )


def assemble_task(
    g: KnowledgeGraph,
    relation: int,
    references: Sequence[Pair],
    queries: Sequence[Pair],
    candidate_size: int,
    seed: int,
    /,
    *,
    stream: tuple = (),
    cache: Optional[CandidateCache] = None,
) -> FewShotTask:
    """A task from an explicit split, drawing candidates and negatives."""
    references, queries = tuple(references), tuple(queries)
    reference_candidates = tuple(
        _cached_candidates(g, h, relation, t, candidate_size, seed, cache)
        for h, t in references
    )
    candidates = tuple(
        _cached_candidates(g, h, relation, t, candidate_size, seed, cache)
        for h, t in queries
    )
    return FewShotTask(
        relation=relation,
        references=references,
        queries=queries,
        candidates=candidates,
        reference_candidates=reference_candidates,
        reference_negatives=_negatives(
            g, relation, references, reference_candidates, seed, stream, "reference"
        ),
        query_negatives=_negatives(
            g, relation, queries, candidates, seed, stream, "query"
        ),
    )


def build_task(
    g: KnowledgeGraph,
    r: int,
    k: int,
    m: Optional[int],
    candidate_size: int,
    seed: int,
    /,
    *,
    stream: tuple = (),
    cache: Optional[CandidateCache] = None,
) -> FewShotTask:
    """Split relation *r*'s triplets into K references and M queries.

    Args:
        g: The graph.
        r: Relation id.
        k: Number of references.
        m: Number of queries, or None for all remaining triplets.
        candidate_size: Candidates per pair, the true tail included.
        seed: Run seed.
        stream: Extra tags for the split and negative streams (e.g. the step).
        cache: Optional memo of candidate sets shared between calls.

    Raises:
        InsufficientTripletsError: If *r* has fewer than K+M triplets (K+1 when *m*
            is None).
        ValueError: If K < 1, M < 1 or *candidate_size* < 2.
    """
    if k < 1 or (m is not None and m < 1):
        raise ValueError(f"K and M must be at least 1, got K={k} M={m}")
    if candidate_size < 2:
        raise ValueError(f"Candidate size must be at least 2, got {candidate_size}")
    triplets = g.relation_triplets(r)
    needed = k + (1 if m is None else m)
    if len(triplets) < needed:
        raise InsufficientTripletsError(
            f"Relation {g.relation_name(r)!r} has {len(triplets)} triplets,"
            f" {needed} needed"
        )
    order = derive_rng(seed, "task", r, *stream).permutation(len(triplets))
    chosen = order[k:] if m is None else order[k:k + m]
    return assemble_task(
        g,
        r,
        [(triplets[i].head, triplets[i].tail) for i in order[:k]],
        [(triplets[i].head, triplets[i].tail) for i in chosen],
        candidate_size,
        seed,
        stream=stream,
        cache=cache,
    )


def evaluation_tasks(
    g: KnowledgeGraph,
    split: str,
    k: int,
    candidate_size: int,
    seed: int,
    /,
    *,
    m: Optional[int] = None,
) -> list[FewShotTask]:
    """One task per relation of *split*: K references and the rest (or M) as queries."""
    return [
        build_task(g, r, k, m, candidate_size, seed, stream=("eval", split))
        for r in g.split_relations(split)
    ]


class TaskSampler:
    """Draws the meta-tasks of each outer training step.

    Relations are drawn uniformly with replacement; candidate sets are memoized since
    they depend only on the pair and the seed.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        relations: Sequence[int],
        *,
        k: int,
        m: int,
        candidate_size: int,
        seed: int,
    ):
        """Initialize the sampler.

        Raises:
            DataError: If *relations* is empty.
            InsufficientTripletsError: If a relation has fewer than K+M triplets.
        """
        if not relations:
            raise DataError("No training task relations")
        for r in relations:
            if len(g.relation_triplets(r)) < k + m:
                raise InsufficientTripletsError(
                    f"Relation {g.relation_name(r)!r} has"
                    f" {len(g.relation_triplets(r))} triplets, {k + m} needed"
                )
        self.g = g
        self.relations = tuple(relations)
        self.k = k
        self.m = m
        self.candidate_size = candidate_size
        self.seed = seed
        self._cache: CandidateCache = dict()

    def sample(self, step: int, count: int, /) -> list[FewShotTask]:
        """The *count* tasks of outer step *step*."""
        rng = derive_rng(self.seed, "train-relations", step)
        picks = rng.integers(len(self.relations), size=count)
        return [
            build_task(
                self.g,
                self.relations[int(p)],
                self.k,
                self.m,
                self.candidate_size,
                self.seed,
                stream=("train", step, i),
                cache=self._cache,
            )
            for i, p in enumerate(picks)
        ]


def build_context(
    g: KnowledgeGraph,
    anchor: Triplet,
    cap: int,
    /,
) -> TripletContext:
    """The union of the (capped) neighbor tuples of the anchor's head and tail."""
    tuples = list(neighbors(g, anchor.head, cap))
    seen = set(tuples)
    for pair in neighbors(g, anchor.tail, cap):
        if pair not in seen:
            seen.add(pair)
            tuples.append(pair)
    return TripletContext(anchor=Triplet(*anchor), tuples=tuple(tuples))


def synthesize_false_contexts(
    g: KnowledgeGraph,
    ctx: TripletContext,
    n: int,
    seed: int,
    /,
    *,
    stream: tuple = (),
) -> list[TripletContext]:
    """*n* corrupted copies of *ctx*.

    Every tuple of every copy is corrupted: with probability 1/2 its relation,
    otherwise its entity, is replaced by a uniform draw different from the original
    and from the anchor's own head, relation and tail. When only one side can be
    corrupted, that side is used.

    Raises:
        ValueError: If *ctx* is already corrupted or *n* < 1.
        DataError: If the vocabulary is too small to corrupt a tuple.
    """
    if ctx.is_corrupted:
        raise ValueError("Cannot corrupt an already corrupted context")
    if n < 1:
        raise ValueError(f"Number of false contexts must be at least 1, got {n}")
    h, r, t = ctx.anchor
    relation_pool = g.context_relations
    contexts = []
    for index in range(n):
        rng = derive_rng(seed, "false-context", h, r, t, *stream, index)
        corrupted = []
        for relation, entity in ctx.tuples:
            relations = [x for x in relation_pool if x != relation and x != r]
            entity_excluded = {entity, h, t}
            entities_left = g.num_entities - len(entity_excluded)
            if not relations and entities_left < 1:
                raise DataError("Vocabulary too small to corrupt a context tuple")
            corrupt_relation = rng.random() < 0.5
            if corrupt_relation and not relations:
                corrupt_relation = False
            elif not corrupt_relation and entities_left < 1:
                corrupt_relation = True
            if corrupt_relation:
                corrupted.append((relations[int(rng.integers(len(relations)))], entity))
                continue
            while True:
                candidate = int(rng.integers(g.num_entities))
                if candidate not in entity_excluded:
                    break
            corrupted.append((relation, candidate))
        contexts.append(replace(ctx, tuples=tuple(corrupted), is_corrupted=True))
    return contexts


def task_dump(g: KnowledgeGraph, tasks: Sequence[FewShotTask], path, /):
    """Write *tasks* as a gmatching task file, references first, then queries."""
    data = dict()
    for task in tasks:
        name = g.relations.name(task.relation)
        data[name] = [
            [g.entities.name(h), name, g.entities.name(t)]
            for h, t in task.references + task.queries
        ]
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        json.dump(data, file, indent=1, ensure_ascii=False)
        file.write("\n")


def load_tasks(
    g: KnowledgeGraph,
    path,
    k: int,
    candidate_size: int,
    seed: int,
    /,
) -> list[FewShotTask]:
    """Read a gmatching task file: the first K triplets of each relation are references.

    Raises:
        DataError: If the file is malformed, names unknown relations or entities, or
            lists fewer than K+1 triplets for a relation.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as file:
            data: Mapping = json.load(file)
    except FileNotFoundError:
        raise DataError(f"No such task file: {str(path)!r}") from None
    except json.JSONDecodeError as err:
        raise DataError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from err
    tasks = []
    for name, triplets in data.items():
        if name not in g.relations:
            raise DataError(f"{path}: unknown relation {name!r}")
        relation = g.relations.id(name)
        pairs = []
        for head, _, tail in triplets:
            if head not in g.entities or tail not in g.entities:
                raise UnknownEntityError(f"{path}: unknown entity in {[head, tail]!r}")
            pairs.append((g.entities.id(head), g.entities.id(tail)))
        if len(pairs) < k + 1:
            raise InsufficientTripletsError(
                f"{path}: relation {name!r} lists {len(pairs)} triplets, {k + 1} needed"
            )
        tasks.append(
            assemble_task(
                g, relation, pairs[:k], pairs[k:], candidate_size, seed,
                stream=("eval", "file"),
            )
        )
    return tasks


__all__ = (
    "FewShotTask",
    "TripletContext",
    "TaskSampler",
    "draw_candidates",
    "sample_negative",
    "assemble_task",
    "build_task",
    "evaluation_tasks",
    "build_context",
    "synthesize_false_contexts",
    "task_dump",
    "load_tasks",
)
