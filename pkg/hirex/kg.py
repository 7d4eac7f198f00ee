"""Home of `KnowledgeGraph`, `load_kg`, `save_kg` and `neighbors`.

A `KnowledgeGraph` is immutable once built. Relations that own few-shot tasks are
flagged and kept out of the neighbor index so their triplets never leak into
contexts. Every named relation ``r`` also owns an inverse id (named ``r_inv``) used
to mark tail-side neighbors: ids ``[0, R)`` are the named relations and
``[R, 2R)`` their inverses.

Two on-disk layouts are supported:

- ``tsv``: a single triplet file (everything is background), or a directory with
  ``background.tsv`` and optional ``train_tasks.tsv``, ``valid_tasks.tsv`` and
  ``test_tasks.tsv``.
- ``gmatching-json``: a directory with ``path_graph`` (TSV background),
  ``train_tasks.json``, ``dev_tasks.json``, ``test_tasks.json`` and optional
  ``candidates.json`` (``"head relation"`` to entity list) and
  ``rel2candidates.json`` (relation to entity list).
"""

from typing import Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence
from pathlib import Path
import json
import logging
from .errors import (
    DataError,
    EmptyGraphError,
    MalformedLineError,
    UnknownEntityError,
)
from .tensor.rng import derive_rng


logger = logging.getLogger(__name__)

INVERSE_SUFFIX = "_inv"
SPLITS = ("train", "valid", "test")
FORMATS = ("tsv", "gmatching-json")
_GMATCHING_TASK_FILES = dict(
    train="train_tasks.json",
    valid="dev_tasks.json",
    test="test_tasks.json",
)


class Triplet(NamedTuple):
    """A (head, relation, tail) fact by id."""

    head: int
    relation: int
    tail: int


NamedTriplet = tuple[str, str, str]


class Vocabulary:
    """Bidirectional mapping between names and dense ids."""

    def __init__(self, names: Iterable[str] = ()):
        """Initialize the vocabulary, assigning ids in order of first appearance."""
        self._names: list[str] = []
        self._ids: dict[str, int] = dict()
        for name in names:
            self.add(name)

    def add(self, name: str, /) -> int:
        """Id of *name*, adding it if new."""
        index = self._ids.get(name)
        if index is None:
            index = len(self._names)
            self._names.append(name)
            self._ids[name] = index
        return index

    def id(self, name: str, /) -> int:
        """Id of a known *name*. Raises `KeyError` otherwise."""
        return self._ids[name]

    def name(self, index: int, /) -> str:
        """Name of id *index*."""
        return self._names[index]

    @property
    def names(self) -> tuple[str, ...]:
        """All names in id order."""
        return tuple(self._names)

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __repr__(self):
        """Object repr."""
        return f"<{self.__class__.__qualname__} {len(self)} names>"


class KnowledgeGraph:
    """Entities, relations and triplets, with task splits and a neighbor index."""

    def __init__(
        self,
        background: Sequence[NamedTriplet],
        tasks: Optional[Mapping[str, Mapping[str, Sequence[NamedTriplet]]]] = None,
        *,
        candidates: Optional[Mapping[tuple[str, str], Sequence[str]]] = None,
        relation_candidates: Optional[Mapping[str, Sequence[str]]] = None,
        seed: int = 0,
    ):
        """Build a graph from named triplets.

        Duplicate triplets are dropped with a warning.

        Args:
            background: Background triplets.
            tasks: Split name (one of `SPLITS`) to relation name to task triplets.
            candidates: Candidate tails keyed by (head name, relation name).
            relation_candidates: Candidate tails keyed by relation name.
            seed: Seed of the neighbor-sampling streams.

        Raises:
            EmptyGraphError: If there are no triplets at all.
            UnknownEntityError: If a candidate entity is not in the graph.
            DataError: If a relation is both background and few-shot, or appears in
                more than one split.
        """
        tasks = tasks or dict()
        self.seed = seed
        self.entities = Vocabulary()
        self.relations = Vocabulary()
        seen: set[NamedTriplet] = set()
        named: list[tuple[NamedTriplet, bool]] = []

        def accept(triplet: NamedTriplet, few_shot: bool):
            if triplet in seen:
                logger.warning(f"Dropping duplicate triplet {triplet!r}")
                return
            seen.add(triplet)
            named.append((triplet, few_shot))

        for triplet in background:
            accept(tuple(triplet), False)
        split_of: dict[str, str] = dict()
        for split in SPLITS:
            for relation, triplets in tasks.get(split, dict()).items():
                if relation in split_of:
                    raise DataError(
                        f"Relation {relation!r} appears in both the"
                        f" {split_of[relation]!r} and {split!r} splits"
                    )
                split_of[relation] = split
                for triplet in triplets:
                    accept(tuple(triplet), True)
        unknown = set(tasks) - set(SPLITS)
        if unknown:
            raise DataError(f"Unknown task splits: {sorted(unknown)}")
        if not named:
            raise EmptyGraphError()

        background_names = {t[1] for t, few_shot in named if not few_shot}
        for relation in split_of:
            if relation in background_names:
                raise DataError(
                    f"Few-shot relation {relation!r} also appears in the background"
                )
        triplets = []
        for (h, r, t), few_shot in named:
            triplets.append(
                Triplet(self.entities.add(h), self.relations.add(r), self.entities.add(t))
            )
        for relation in split_of:
            self.relations.add(relation)
        self.triplets: tuple[Triplet, ...] = tuple(triplets)
        self.few_shot: frozenset[int] = frozenset(
            self.relations.id(r) for r in split_of
        )
        self.splits: dict[str, tuple[int, ...]] = {
            split: tuple(
                self.relations.id(r) for r, s in split_of.items() if s == split
            )
            for split in SPLITS
        }
        self.candidates: dict[tuple[int, int], tuple[int, ...]] = {
            (self._entity_id(h, "candidates"), self._relation_id(r)): tuple(
                self._entity_id(c, "candidates") for c in values
            )
            for (h, r), values in (candidates or dict()).items()
        }
        self.relation_candidates: dict[int, tuple[int, ...]] = {
            self._relation_id(r): tuple(
                self._entity_id(c, "relation candidates") for c in values
            )
            for r, values in (relation_candidates or dict()).items()
        }
        self._build_indexes()

    def _entity_id(self, name: str, source: str) -> int:
        try:
            return self.entities.id(name)
        except KeyError:
            raise UnknownEntityError(f"Unknown entity {name!r} in {source}") from None

    def _relation_id(self, name: str) -> int:
        try:
            return self.relations.id(name)
        except KeyError:
            raise DataError(f"Unknown relation {name!r}") from None

    def _build_indexes(self):
        n_relations = len(self.relations)
        neighbors: dict[int, set[tuple[int, int]]] = dict()
        by_relation: dict[int, list[Triplet]] = dict()
        true_tails: dict[tuple[int, int], set[int]] = dict()
        tails_of: dict[int, set[int]] = dict()
        incoming: dict[int, set[int]] = dict()
        for triplet in self.triplets:
            h, r, t = triplet
            by_relation.setdefault(r, []).append(triplet)
            true_tails.setdefault((h, r), set()).add(t)
            if r in self.few_shot:
                continue
            neighbors.setdefault(h, set()).add((r, t))
            neighbors.setdefault(t, set()).add((r + n_relations, h))
            tails_of.setdefault(r, set()).add(t)
            incoming.setdefault(t, set()).add(r)
        self._neighbors = {e: tuple(sorted(v)) for e, v in neighbors.items()}
        self._by_relation = {r: tuple(sorted(v)) for r, v in by_relation.items()}
        self._true_tails = {k: frozenset(v) for k, v in true_tails.items()}
        self._tails_of = {r: tuple(sorted(v)) for r, v in tails_of.items()}
        self._incoming = {e: tuple(sorted(v)) for e, v in incoming.items()}

    @property
    def num_entities(self) -> int:
        """Number of entities."""
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        """Number of named relations (inverse ids not included)."""
        return len(self.relations)

    @property
    def num_relation_ids(self) -> int:
        """Size of the relation id space, inverse ids included."""
        return 2 * len(self.relations)

    @property
    def background_relations(self) -> tuple[int, ...]:
        """Ids of named relations that are not few-shot."""
        return tuple(r for r in range(self.num_relations) if r not in self.few_shot)

    @property
    def context_relations(self) -> tuple[int, ...]:
        """Relation ids that may appear in a neighbor tuple."""
        background = self.background_relations
        return background + tuple(r + self.num_relations for r in background)

    def inverse(self, relation: int, /) -> int:
        """The inverse id of a named relation id, or the reverse."""
        n = self.num_relations
        return relation + n if relation < n else relation - n

    def relation_name(self, relation: int, /) -> str:
        """Name of any relation id, inverse ids included."""
        n = self.num_relations
        if relation < n:
            return self.relations.name(relation)
        return self.relations.name(relation - n) + INVERSE_SUFFIX

    def relation_triplets(self, relation: int, /) -> tuple[Triplet, ...]:
        """Triplets of *relation* in canonical (sorted) order."""
        return self._by_relation.get(relation, ())

    def true_tails(self, head: int, relation: int, /) -> frozenset[int]:
        """Tails t with (head, relation, t) in the graph."""
        return self._true_tails.get((head, relation), frozenset())

    def is_true(self, head: int, relation: int, tail: int, /) -> bool:
        """If (head, relation, tail) is a known triplet."""
        return tail in self._true_tails.get((head, relation), ())

    def tails_of(self, relation: int, /) -> tuple[int, ...]:
        """Entities that are tails of a background *relation*."""
        return self._tails_of.get(relation, ())

    def incoming_relations(self, entity: int, /) -> tuple[int, ...]:
        """Background relations of which *entity* is a tail."""
        return self._incoming.get(entity, ())

    def all_neighbors(self, entity: int, /) -> tuple[tuple[int, int], ...]:
        """Uncapped neighbor tuples of *entity* in canonical order."""
        if not 0 <= entity < self.num_entities:
            raise UnknownEntityError(f"Unknown entity id {entity}")
        return self._neighbors.get(entity, ())

    def split_relations(self, split: str, /) -> tuple[int, ...]:
        """Few-shot relation ids of *split*."""
        if split not in SPLITS:
            raise DataError(f"Unknown split {split!r}, expected one of {SPLITS}")
        return self.splits[split]

    def named_triplets(self, triplets: Optional[Iterable[Triplet]] = None, /):
        """Triplets as (head, relation, tail) names."""
        if triplets is None:
            triplets = self.triplets
        return [
            (self.entities.name(h), self.relations.name(r), self.entities.name(t))
            for h, r, t in triplets
        ]

    def summary(self) -> dict[str, int]:
        """Counts of entities, relations, triplets and tasks per split."""
        background = sum(1 for t in self.triplets if t.relation not in self.few_shot)
        counts = dict(
            entities=self.num_entities,
            relations=self.num_relations,
            triplets=len(self.triplets),
            background_triplets=background,
        )
        for split in SPLITS:
            relations = self.splits[split]
            counts[f"{split}_tasks"] = len(relations)
            counts[f"{split}_triplets"] = sum(
                len(self.relation_triplets(r)) for r in relations
            )
        return counts

    def _canonical(self):
        names = self.entities.name
        return (
            set(self.entities),
            set(self.relations),
            set(self.named_triplets()),
            {self.relations.name(r) for r in self.few_shot},
            {s: {self.relations.name(r) for r in rs} for s, rs in self.splits.items()},
            {
                (names(h), self.relations.name(r)): tuple(sorted(names(c) for c in cs))
                for (h, r), cs in self.candidates.items()
            },
            {
                self.relations.name(r): tuple(sorted(names(c) for c in cs))
                for r, cs in self.relation_candidates.items()
            },
        )

    def __eq__(self, other) -> bool:
        """Graphs are equal when names, triplets, flags and candidates agree."""
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._canonical() == other._canonical()

    __hash__ = None

    def __repr__(self):
        """Object repr."""
        return (
            f"<{self.__class__.__qualname__} {self.num_entities} entities,"
            f" {self.num_relations} relations, {len(self.triplets)} triplets,"
            f" {len(self.few_shot)} few-shot>"
        )


def neighbors(
    g: KnowledgeGraph,
    e: int,
    cap: int,
    /,
    seed: Optional[int] = None,
) -> list[tuple[int, int]]:
    """Neighbor tuples (relation id, entity id) of entity *e*, at most *cap* of them.

    When more than *cap* exist, a uniform sample without replacement is taken from
    the canonical order using the stream derived from (seed, e). The sample keeps
    canonical order.

    Raises:
        UnknownEntityError: If *e* is not an entity id.
        ValueError: If *cap* < 1.
    """
    if cap < 1:
        raise ValueError(f"Neighbor cap must be at least 1, got {cap}")
    tuples = g.all_neighbors(e)
    if len(tuples) <= cap:
        return list(tuples)
    rng = derive_rng(g.seed if seed is None else seed, "neighbors", e)
    chosen = sorted(rng.choice(len(tuples), size=cap, replace=False))
    return [tuples[i] for i in chosen]


# Reading


def _read_tsv(path: Path) -> list[NamedTriplet]:
    triplets = []
    with open(path, encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            stripped = line.rstrip("\r\n")
            if not stripped.strip():
                continue
            fields = stripped.split("\t")
            if len(fields) != 3 or not all(f.strip() for f in fields):
                raise MalformedLineError(str(path), number, stripped)
            triplets.append(tuple(f.strip() for f in fields))
    return triplets


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as file:
            return json.load(file)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from err


def _read_task_json(path: Path) -> dict[str, list[NamedTriplet]]:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected an object of relation to triplets")
    tasks = dict()
    for relation, triplets in data.items():
        parsed = []
        for triplet in triplets:
            if (
                not isinstance(triplet, list)
                or len(triplet) != 3
                or not all(isinstance(x, str) for x in triplet)
            ):
                raise DataError(f"{path}: malformed triplet {triplet!r}")
            if triplet[1] != relation:
                raise DataError(
                    f"{path}: triplet {triplet!r} listed under relation {relation!r}"
                )
            parsed.append(tuple(triplet))
        tasks[relation] = parsed
    return tasks


def _read_candidates(path: Path) -> dict[tuple[str, str], list[str]]:
    data = _read_json(path)
    candidates = dict()
    for key, values in data.items():
        head, _, relation = key.rpartition(" ")
        if not head or not relation:
            raise DataError(f"{path}: malformed candidate key {key!r}")
        candidates[(head, relation)] = list(values)
    return candidates


def detect_format(path, /) -> str:
    """The layout of *path*.

    ``gmatching-json`` for a directory holding ``path_graph``, ``tsv`` otherwise.
    """
    path = Path(path)
    if path.is_dir() and (path / "path_graph").is_file():
        return "gmatching-json"
    return "tsv"


def load_kg(
    path, format: Optional[str] = None, /, *, seed: int = 0  # noqa: A002
) -> KnowledgeGraph:
    """Load a graph from *path*.

    Args:
        path: A TSV file or a directory in one of the layouts described in the module
            documentation.
        format: One of `FORMATS`; None picks it with `detect_format`.
        seed: Seed of the neighbor-sampling streams.

    Raises:
        DataError: If files are missing or malformed. Malformed TSV lines raise
            `MalformedLineError` carrying the line number; unknown candidate entities
            raise `UnknownEntityError`; an empty graph raises `EmptyGraphError`.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"No such file or directory: {str(path)!r}")
    if format is None:
        format = detect_format(path)
    if format == "tsv":
        if path.is_file():
            return KnowledgeGraph(_read_tsv(path), seed=seed)
        background_file = path / "background.tsv"
        if not background_file.is_file():
            raise DataError(f"Missing {str(background_file)!r}")
        tasks = dict()
        for split in SPLITS:
            task_file = path / f"{split}_tasks.tsv"
            if task_file.is_file():
                grouped: dict[str, list[NamedTriplet]] = dict()
                for triplet in _read_tsv(task_file):
                    grouped.setdefault(triplet[1], []).append(triplet)
                tasks[split] = grouped
        background = _read_tsv(background_file)
    elif format == "gmatching-json":
        if not path.is_dir():
            raise DataError(f"gmatching-json data must be a directory: {str(path)!r}")
        background_file = path / "path_graph"
        if not background_file.is_file():
            raise DataError(f"Missing {str(background_file)!r}")
        background = _read_tsv(background_file)
        tasks = dict()
        for split, filename in _GMATCHING_TASK_FILES.items():
            if (path / filename).is_file():
                tasks[split] = _read_task_json(path / filename)
    else:
        raise DataError(f"Unknown format {format!r}, expected one of {FORMATS}")
    candidates = None
    if (path / "candidates.json").is_file():
        candidates = _read_candidates(path / "candidates.json")
    relation_candidates = None
    if (path / "rel2candidates.json").is_file():
        relation_candidates = _read_json(path / "rel2candidates.json")
    graph = KnowledgeGraph(
        background,
        tasks,
        candidates=candidates,
        relation_candidates=relation_candidates,
        seed=seed,
    )
    logger.debug(f"Loaded {graph!r} from {str(path)!r}")
    return graph


# Writing


def _write_tsv(path: Path, triplets: Iterable[NamedTriplet]):
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        for triplet in triplets:
            file.write("\t".join(triplet) + "\n")


def _write_json(path: Path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        json.dump(data, file, indent=1, ensure_ascii=False)
        file.write("\n")


def save_kg(g: KnowledgeGraph, path, format: str = "tsv", /):  # noqa: A002
    """Write *g* to the directory *path* in the layout of *format*.

    `load_kg` of the written directory returns a graph equal to *g*.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    background = g.named_triplets(
        t for t in g.triplets if t.relation not in g.few_shot
    )
    tasks = {
        split: {
            g.relations.name(r): g.named_triplets(g.relation_triplets(r))
            for r in g.splits[split]
        }
        for split in SPLITS
    }
    if format == "tsv":
        _write_tsv(path / "background.tsv", background)
        for split, by_relation in tasks.items():
            if by_relation:
                _write_tsv(
                    path / f"{split}_tasks.tsv",
                    (t for triplets in by_relation.values() for t in triplets),
                )
    elif format == "gmatching-json":
        _write_tsv(path / "path_graph", background)
        for split, filename in _GMATCHING_TASK_FILES.items():
            _write_json(
                path / filename,
                {r: [list(t) for t in ts] for r, ts in tasks[split].items()},
            )
    else:
        raise DataError(f"Unknown format {format!r}, expected one of {FORMATS}")
    names = g.entities.name
    if g.candidates:
        _write_json(
            path / "candidates.json",
            {
                f"{names(h)} {g.relations.name(r)}": [names(c) for c in cs]
                for (h, r), cs in g.candidates.items()
            },
        )
    if g.relation_candidates:
        _write_json(
            path / "rel2candidates.json",
            {
                g.relations.name(r): [names(c) for c in cs]
                for r, cs in g.relation_candidates.items()
            },
        )


__all__ = (
    "Triplet",
    "Vocabulary",
    "KnowledgeGraph",
    "detect_format",
    "load_kg",
    "save_kg",
    "neighbors",
    "INVERSE_SUFFIX",
    "SPLITS",
    "FORMATS",
)
