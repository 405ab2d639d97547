"""
Synthetic knowledge bases with planted composition rules.

A rule `head := r_a . r_b (. r_c)` labels every pair joined by a directed
simple path following the body relations. The head relation is never written
to the KB, so the label can only be recovered from the path.
"""
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..errors import OutputError, SynthSpecError
from ..graph.query import Query
from ..kb.knowledge_base import KnowledgeBase
from ..kb.loader import dump_kb, dump_queries
from ..logging_config import logger
from ..schemas import SynthSpec


@dataclass(frozen=True)
class Rule:
    head: str
    body: Tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.head} := {' . '.join(self.body)}"


@dataclass
class SynthDataset:
    kb: KnowledgeBase
    train: List[Query]
    test: List[Query]
    rules: List[Rule]


def role_types(rule_index: int) -> Tuple[str, str]:
    """Type names marking the source and target role of a rule instance."""
    return f"role/c{rule_index}/source", f"role/c{rule_index}/target"


# ==================== Rule matching ====================

def _body_ids(kb: KnowledgeBase, rule: Rule) -> Optional[List[int]]:
    if any(r not in kb.relations for r in rule.body):
        return None
    return [kb.relations.lookup(r) for r in rule.body]


def _walk_ends(kb: KnowledgeBase, start: int, relations: Sequence[int]) -> Iterator[int]:
    """End nodes of directed simple paths from `start` following `relations` in order."""
    def walk(node: int, depth: int, visited: frozenset) -> Iterator[int]:
        if depth == len(relations):
            yield node
            return
        for fact_id in kb.as_source(node):
            fact = kb.facts[fact_id]
            if fact.relation == relations[depth] and fact.target not in visited:
                yield from walk(fact.target, depth + 1, visited | {fact.target})

    yield from walk(start, 0, frozenset((start,)))


def oracle_label(kb: KnowledgeBase, e_s: int, e_t: int, rules: Sequence[Rule]) -> Optional[str]:
    """Head of the first rule witnessed by a path e_s -> e_t, or None."""
    for rule in rules:
        relations = _body_ids(kb, rule)
        if relations is not None and any(end == e_t for end in _walk_ends(kb, e_s, relations)):
            return rule.head
    return None


def rule_instances(kb: KnowledgeBase, rules: Sequence[Rule]) -> List[Tuple[int, int, str]]:
    """Every (e_s, e_t, head) the rules produce, labelled by the first matching rule."""
    labels: Dict[Tuple[int, int], str] = {}
    for rule in rules:
        relations = _body_ids(kb, rule)
        if relations is None:
            continue
        for start in range(kb.num_entities):
            for end in _walk_ends(kb, start, relations):
                labels.setdefault((start, end), rule.head)
    return [(s, t, head) for (s, t), head in sorted(labels.items())]


def _two_hop_pairs(kb: KnowledgeBase) -> List[Tuple[int, int]]:
    """Ordered pairs of distinct entities joined by an undirected path of two facts."""
    pairs: Set[Tuple[int, int]] = set()
    for v in range(kb.num_entities):
        around = sorted({w for _, w in kb.neighbours(v) if w != v})
        for a in around:
            for b in around:
                if a != b:
                    pairs.add((a, b))
    return sorted(pairs)


# ==================== Generation ====================

def plant_rules(spec: SynthSpec, rng: np.random.Generator) -> List[Rule]:
    base = [f"rel/r{i}" for i in range(spec.base_relations)]
    if spec.rules > len(base) ** spec.rule_length:
        raise SynthSpecError(
            f"{spec.rules} distinct rules of length {spec.rule_length} need more than {len(base)} base relations"
        )
    bodies: List[Tuple[str, ...]] = []
    while len(bodies) < spec.rules:
        body = tuple(base[i] for i in rng.integers(0, len(base), size=spec.rule_length))
        if body not in bodies:
            bodies.append(body)
    return [Rule(head=f"goal/c{c}", body=body) for c, body in enumerate(bodies)]


def _split(items: List[Query], fraction: float, rng: np.random.Generator) -> Tuple[List[Query], List[Query]]:
    order = rng.permutation(len(items))
    n_test = int(round(fraction * len(items)))
    test = [items[i] for i in order[:n_test]]
    train = [items[i] for i in order[n_test:]]
    return train, test


def generate(spec: SynthSpec) -> SynthDataset:
    """
    Sample base facts, plant rules and derive labelled queries.

    Positives are every pair a rule applies to. Negatives are pairs joined by
    a two-fact path that no rule labels; each is assigned to a random rule's
    pool. Both polarities are split into train and test with the same
    fraction. Deterministic under `spec.seed`.

    Raises:
        SynthSpecError: no rule instance was sampled, or L is shorter than the rules
    """
    if spec.max_path_length < spec.rule_length:
        raise SynthSpecError(
            f"max path length {spec.max_path_length} cannot hold rules of length {spec.rule_length}"
        )
    rng = np.random.default_rng(spec.seed)
    rules = plant_rules(spec, rng)

    n = spec.entities
    n_facts = max(1, int(round(spec.density * n * (n - 1))))
    sources = rng.integers(0, n, size=n_facts)
    targets = (sources + 1 + rng.integers(0, n - 1, size=n_facts)) % n
    relations = rng.integers(0, spec.base_relations, size=n_facts)

    kb = KnowledgeBase()
    for s, r, t in zip(sources, relations, targets):
        kb.add_fact(f"ent/{s}", f"rel/r{r}", f"ent/{t}")

    instances = rule_instances(kb, rules)
    if not instances:
        raise SynthSpecError("no rule instances were sampled; raise the density or the entity count")

    background = rng.integers(0, spec.types, size=n)
    for e in range(n):
        kb.add_types(f"ent/{e}", [f"type/t{background[e]}"])
    if spec.typed:
        rule_index = {rule.head: c for c, rule in enumerate(rules)}
        for s, t, head in instances:
            source_role, target_role = role_types(rule_index[head])
            kb.add_types(kb.entities.name(s), [source_role])
            kb.add_types(kb.entities.name(t), [target_role])
    kb.freeze()

    positives = [Query(s, t, head, True) for s, t, head in instances]
    labelled = {(s, t) for s, t, _ in instances}
    candidates = [p for p in _two_hop_pairs(kb) if p not in labelled]
    n_neg = min(len(candidates), int(round(spec.negative_ratio * len(positives))))
    picked = rng.choice(len(candidates), size=n_neg, replace=False) if n_neg else []
    pools = rng.integers(0, len(rules), size=n_neg)
    negatives = [
        Query(candidates[i][0], candidates[i][1], rules[c].head, False)
        for i, c in zip(picked, pools)
    ]

    pos_train, pos_test = _split(positives, spec.test_fraction, rng)
    neg_train, neg_test = _split(negatives, spec.test_fraction, rng)
    dataset = SynthDataset(kb=kb, train=pos_train + neg_train, test=pos_test + neg_test, rules=rules)
    logger.info(
        "Generated synthetic knowledge base",
        facts=len(kb.facts),
        rules=len(rules),
        positives=len(positives),
        negatives=len(negatives),
        train=len(dataset.train),
        test=len(dataset.test),
    )
    return dataset


def write_dataset(dataset: SynthDataset, out_dir: str) -> Dict[str, str]:
    """Write facts, types, query splits and rules in the loader formats."""
    paths = {name: os.path.join(out_dir, f"{name}.tsv") for name in ("facts", "types", "train", "test", "rules")}
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(paths["facts"], "w", encoding="utf-8") as facts, open(paths["types"], "w", encoding="utf-8") as types:
            dump_kb(dataset.kb, facts, types)
        for split in ("train", "test"):
            with open(paths[split], "w", encoding="utf-8") as f:
                dump_queries(getattr(dataset, split), dataset.kb, f)
        with open(paths["rules"], "w", encoding="utf-8") as f:
            for rule in dataset.rules:
                f.write(f"{rule.head}\t{','.join(rule.body)}\n")
    except OSError as e:
        raise OutputError(f"cannot write dataset to {out_dir}: {e.strerror}") from None
    return paths
