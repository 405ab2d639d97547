from collections import defaultdict

import pytest

from conftest import make_kb
from kglinker.errors import SynthSpecError
from kglinker.graph.query_graph import extract_subgraph
from kglinker.kb import load_kb_files, load_queries_file
from kglinker.schemas import SynthSpec
from kglinker.services.synth_service import Rule, generate, oracle_label, role_types, rule_instances, write_dataset


@pytest.fixture(scope="module")
def dataset():
    return generate(SynthSpec(entities=300, seed=7))


def _brute_force_pairs(kb, rules):
    """Pairs joined by a two-fact directed chain following some rule body; first rule wins."""
    by_source = defaultdict(list)
    for fact in kb.facts:
        by_source[fact.source].append(fact)
    labels = {}
    for rule in rules:
        if any(r not in kb.relations for r in rule.body):
            continue
        first, second = (kb.relations.lookup(r) for r in rule.body)
        for f1 in kb.facts:
            if f1.relation != first:
                continue
            for f2 in by_source[f1.target]:
                if f2.relation == second and f2.target != f1.source:
                    labels.setdefault((f1.source, f2.target), rule.head)
    return labels


def test_three_entity_chain_has_one_instance():
    kb = make_kb([("LHR", "locatedIn", "London"), ("London", "capitalOf", "England")])
    rule = Rule("countryOfAirport", ("locatedIn", "capitalOf"))
    lhr, england = kb.entities.lookup("LHR"), kb.entities.lookup("England")
    assert rule_instances(kb, [rule]) == [(lhr, england, "countryOfAirport")]
    assert oracle_label(kb, lhr, england, [rule]) == "countryOfAirport"
    assert oracle_label(kb, england, lhr, [rule]) is None
    assert str(rule) == "countryOfAirport := locatedIn . capitalOf"


def test_rules_follow_fact_direction_only():
    kb = make_kb([("a", "r", "b"), ("c", "s", "b")])
    assert rule_instances(kb, [Rule("h", ("r", "s"))]) == []


def test_first_matching_rule_labels_the_pair():
    kb = make_kb([("a", "r", "b"), ("b", "s", "c"), ("a", "t", "c")])
    rules = [Rule("h0", ("r", "s")), Rule("h1", ("r", "s")), Rule("h2", ("t", "r"))]
    a, c = kb.entities.lookup("a"), kb.entities.lookup("c")
    assert rule_instances(kb, rules) == [(a, c, "h0")]


def test_positive_count_matches_brute_force(dataset):
    positives = [q for q in dataset.train + dataset.test if q.positive]
    expected = _brute_force_pairs(dataset.kb, dataset.rules)
    assert len(positives) == len(expected)
    assert {(q.source, q.target): q.relation for q in positives} == expected


def test_oracle_agrees_with_every_query(dataset):
    for q in dataset.train + dataset.test:
        label = oracle_label(dataset.kb, q.source, q.target, dataset.rules)
        if q.positive:
            assert label == q.relation
        else:
            assert label is None
            assert q.relation in {r.head for r in dataset.rules}


def test_negatives_are_two_hop_pairs(dataset):
    negatives = [q for q in dataset.train + dataset.test if not q.positive]
    assert negatives
    for q in negatives[:50]:
        assert extract_subgraph(dataset.kb, q.source, q.target, 2).num_edges >= 3


def test_generation_is_deterministic(dataset):
    again = generate(SynthSpec(entities=300, seed=7))
    assert again.kb.facts == dataset.kb.facts
    assert again.train == dataset.train
    assert again.test == dataset.test
    assert again.rules == dataset.rules
    other = generate(SynthSpec(entities=300, seed=8))
    assert other.kb.facts != dataset.kb.facts


def test_heads_never_enter_the_knowledge_base(dataset):
    for rule in dataset.rules:
        assert rule.head not in dataset.kb.relations
        assert all(r in dataset.kb.relations for r in rule.body)


def test_role_types_mark_rule_instances(dataset):
    types = dataset.kb.types
    index = {rule.head: c for c, rule in enumerate(dataset.rules)}
    for q in dataset.train + dataset.test:
        if not q.positive:
            continue
        source_role, target_role = role_types(index[q.relation])
        assert types.lookup(source_role) in dataset.kb.entity_types(q.source)
        assert types.lookup(target_role) in dataset.kb.entity_types(q.target)
    names = [name for c in range(len(dataset.rules)) for name in role_types(c)]
    assert len(set(names)) == len(names)


def test_untyped_mode_keeps_background_types_only():
    data = generate(SynthSpec(entities=300, seed=7, typed=False))
    assert all(name.startswith("type/") for name in data.kb.types)
    assert all(len(data.kb.entity_types(e)) == 1 for e in range(data.kb.num_entities))


def test_split_respects_test_fraction(dataset):
    for positive in (True, False):
        total = sum(q.positive == positive for q in dataset.train + dataset.test)
        held_out = sum(q.positive == positive for q in dataset.test)
        assert held_out == round(0.2 * total)


@pytest.mark.parametrize(
    "spec",
    [
        SynthSpec(entities=3, density=0.01),
        SynthSpec(rule_length=3, max_path_length=2),
        SynthSpec(base_relations=2, rules=5),
    ],
)
def test_impossible_specs_are_rejected(spec):
    with pytest.raises(SynthSpecError):
        generate(spec)


def test_written_dataset_loads_back(tmp_path, dataset):
    paths = write_dataset(dataset, str(tmp_path / "synth"))
    kb = load_kb_files(paths["facts"], paths["types"])
    assert len(kb.facts) == len(dataset.kb.facts)
    assert list(kb.entities) == list(dataset.kb.entities)
    train = load_queries_file(paths["train"], kb)
    assert [(q.source, q.target, q.relation, q.positive) for q in train] == list(dataset.train)
    rules = (tmp_path / "synth" / "rules.tsv").read_text().splitlines()
    assert rules[0] == f"{dataset.rules[0].head}\t{','.join(dataset.rules[0].body)}"


def test_positives_have_a_witness_path_inside_their_subgraph(dataset):
    index = {rule.head: rule for rule in dataset.rules}
    positives = [q for q in dataset.test if q.positive]
    assert positives
    for q in positives:
        qg = extract_subgraph(dataset.kb, q.source, q.target, 2)
        kept = {dataset.kb.relations.name(r) for _, r, _ in qg.edges[1:]}
        assert set(index[q.relation].body) <= kept
