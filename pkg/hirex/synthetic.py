"""Home of `SyntheticSpec` and `generate_synthetic`.

A synthetic benchmark plants composition rules over a random background graph. Each
planted relation ``target`` is defined by two atoms, ``target(x, y) <= a(x, z) and
b(z, y)``, where an atom is a background relation name optionally suffixed with
``^-1`` to read it backwards. The planted relation's triplets are exactly the rule
closure over the sampled background, so a model that can learn composition from a
few references can be checked against a brute-force oracle.
"""

from typing import NamedTuple
from dataclasses import dataclass
import itertools
import logging
import numpy as np
from .errors import InfeasibleSpecError
from .kg import KnowledgeGraph, NamedTriplet, SPLITS
from .tasks import draw_candidates
from .tensor.rng import derive_rng


logger = logging.getLogger(__name__)

INVERSE_ATOM = "^-1"


@dataclass
class SyntheticSpec:
    """Parameters of a synthetic benchmark."""

    entities: int = 200
    """Number of entities."""
    background_relations: int = 2
    """Number of background relations, named ``bg0``, ``bg1``, ..."""
    rules: tuple[str, ...] = ()
    """Planted rules as ``"target = atom.atom"``. Empty to enumerate them."""
    density: float = 1.0
    """Background triplets per entity per background relation."""
    train_relations: int = 10
    valid_relations: int = 2
    test_relations: int = 3
    min_instances: int = 15
    """Closure instances each planted relation needs (K+M)."""
    candidate_size: int = 50
    """Candidates per (head, planted relation), true tails included."""
    retries: int = 10
    """Background resamples allowed before generation gives up."""
    seed: int = 7

    @property
    def planted_relations(self) -> int:
        """Total number of planted relations."""
        return self.train_relations + self.valid_relations + self.test_relations


class Rule(NamedTuple):
    """A planted composition rule."""

    target: str
    first: str
    second: str

    def __str__(self):
        return f"{self.target} = {self.first}.{self.second}"


class SyntheticBenchmark(NamedTuple):
    """Output of `generate_synthetic`."""

    graph: KnowledgeGraph
    rules: tuple[Rule, ...]
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]


def background_names(spec: SyntheticSpec, /) -> tuple[str, ...]:
    """Names of the background relations of *spec*."""
    return tuple(f"bg{i}" for i in range(spec.background_relations))


def parse_rule(text: str, /) -> Rule:
    """Parse ``"target = atom.atom"``.

    Raises:
        InfeasibleSpecError: If the text does not parse.
    """
    target, sep, body = text.partition("=")
    atoms = body.strip().split(".")
    if not sep or not target.strip() or len(atoms) != 2 or not all(atoms):
        raise InfeasibleSpecError(f"Malformed rule {text!r}, expected 'target = a.b'")
    return Rule(target.strip(), atoms[0].strip(), atoms[1].strip())


def enumerate_rules(spec: SyntheticSpec, /) -> tuple[Rule, ...]:
    """Rules over every ordered pair of signed background atoms, as many as needed."""
    names = background_names(spec)
    atoms = [a for name in names for a in (name, name + INVERSE_ATOM)]
    pairs = list(itertools.product(atoms, repeat=2))
    if len(pairs) < spec.planted_relations:
        raise InfeasibleSpecError(
            f"{spec.background_relations} background relations give {len(pairs)}"
            f" distinct compositions, {spec.planted_relations} planted relations"
            " requested"
        )
    return tuple(
        Rule(f"rule{i}", a, b) for i, (a, b) in enumerate(pairs[:spec.planted_relations])
    )


def atom_pairs(
    background: dict[str, set[tuple[int, int]]], atom: str, /
) -> set[tuple[int, int]]:
    """The (x, y) pairs an atom holds for."""
    if atom.endswith(INVERSE_ATOM):
        return {(y, x) for x, y in background[atom.removesuffix(INVERSE_ATOM)]}
    return set(background[atom])


def rule_closure(
    background: dict[str, set[tuple[int, int]]], rule: Rule, /
) -> set[tuple[int, int]]:
    """{(x, y) : some z has first(x, z) and second(z, y)}."""
    by_source: dict[int, set[int]] = dict()
    for z, y in atom_pairs(background, rule.second):
        by_source.setdefault(z, set()).add(y)
    return {
        (x, y)
        for x, z in atom_pairs(background, rule.first)
        for y in by_source.get(z, ())
    }


def _validate(spec: SyntheticSpec, rules: tuple[Rule, ...]):
    if spec.entities < 2 or spec.background_relations < 1:
        raise InfeasibleSpecError("Need at least 2 entities and 1 background relation")
    if min(spec.train_relations, spec.valid_relations, spec.test_relations) < 0:
        raise InfeasibleSpecError("Split sizes must be non-negative")
    if spec.entities ** 2 < spec.min_instances:
        raise InfeasibleSpecError(
            f"{spec.entities} entities allow at most {spec.entities ** 2} pairs,"
            f" {spec.min_instances} closure instances required"
        )
    per_relation = round(spec.density * spec.entities)
    if not 1 <= per_relation <= spec.entities ** 2:
        raise InfeasibleSpecError(
            f"Density {spec.density} gives {per_relation} triplets per relation"
        )
    if len(rules) != spec.planted_relations:
        raise InfeasibleSpecError(
            f"{len(rules)} rules given for {spec.planted_relations} planted relations"
        )
    names = set(background_names(spec))
    targets = set()
    for rule in rules:
        for atom in (rule.first, rule.second):
            if atom.removesuffix(INVERSE_ATOM) not in names:
                raise InfeasibleSpecError(f"Unknown atom {atom!r} in rule {str(rule)!r}")
        if rule.target in names or rule.target in targets:
            raise InfeasibleSpecError(f"Duplicate relation name {rule.target!r}")
        targets.add(rule.target)


def _sample_background(spec: SyntheticSpec, attempt: int) -> dict[str, set]:
    n = spec.entities
    per_relation = round(spec.density * n)
    background = dict()
    for name in background_names(spec):
        rng = derive_rng(spec.seed, "synthetic", "background", attempt, name)
        flat = rng.choice(n * n, size=per_relation, replace=False)
        background[name] = {(int(i) // n, int(i) % n) for i in np.sort(flat)}
    return background


def generate_synthetic(spec: SyntheticSpec, /) -> SyntheticBenchmark:
    """Generate a benchmark: a random background plus planted rule relations.

    Planted relations are assigned to the train, valid and test splits in rule
    order. The background is resampled (up to ``spec.retries`` times) until every
    planted relation has at least ``spec.min_instances`` closure instances.

    Raises:
        InfeasibleSpecError: If *spec* is inconsistent or the retry budget runs out.
    """
    rules = tuple(parse_rule(r) for r in spec.rules) or enumerate_rules(spec)
    _validate(spec, rules)
    for attempt in range(spec.retries + 1):
        background = _sample_background(spec, attempt)
        closures = [rule_closure(background, rule) for rule in rules]
        short = [
            rule.target
            for rule, closure in zip(rules, closures)
            if len(closure) < spec.min_instances
        ]
        if not short:
            break
        logger.debug(f"Attempt {attempt}: too few closure instances for {short}")
    else:
        raise InfeasibleSpecError(
            f"Planted relations {short} have fewer than {spec.min_instances} closure"
            f" instances after {spec.retries + 1} attempts"
        )
    entity = [f"e{i}" for i in range(spec.entities)]
    background_triplets: list[NamedTriplet] = [
        (entity[x], name, entity[y])
        for name, pairs in background.items()
        for x, y in sorted(pairs)
    ]
    bounds = np.cumsum(
        [0, spec.train_relations, spec.valid_relations, spec.test_relations]
    )
    tasks = dict()
    split_names = dict()
    for split, start, stop in zip(SPLITS, bounds[:-1], bounds[1:]):
        chosen = range(int(start), int(stop))
        split_names[split] = tuple(rules[i].target for i in chosen)
        tasks[split] = {
            rules[i].target: [
                (entity[x], rules[i].target, entity[y])
                for x, y in sorted(closures[i])
            ]
            for i in chosen
        }
    graph = KnowledgeGraph(background_triplets, tasks, seed=spec.seed)
    candidates = dict()
    for r in sorted(graph.few_shot):
        heads = sorted({h for h, _, _ in graph.relation_triplets(r)})
        for h in heads:
            tails = graph.true_tails(h, r)
            drawn = draw_candidates(
                graph, h, r, min(tails), spec.candidate_size, spec.seed
            )
            key = (graph.entities.name(h), graph.relations.name(r))
            candidates[key] = [graph.entities.name(c) for c in sorted(set(drawn) | tails)]
    graph = KnowledgeGraph(
        background_triplets, tasks, candidates=candidates, seed=spec.seed
    )
    return SyntheticBenchmark(
        graph=graph,
        rules=rules,
        train=split_names["train"],
        valid=split_names["valid"],
        test=split_names["test"],
    )


__all__ = (
    "SyntheticSpec",
    "SyntheticBenchmark",
    "Rule",
    "parse_rule",
    "enumerate_rules",
    "background_names",
    "atom_pairs",
    "rule_closure",
    "generate_synthetic",
)
