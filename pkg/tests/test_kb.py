import io

import pytest
from hypothesis import given, strategies as st

from conftest import make_kb
from kglinker.errors import InputFormatError, UnknownEntityError
from kglinker.kb import KnowledgeBase, dump_kb, dump_queries, load_kb, load_queries, strip_inverse


names = st.text(
    alphabet=st.characters(exclude_categories=("Cs", "Cc", "Zs", "Zl", "Zp"), exclude_characters="_,#"),
    min_size=1,
    max_size=12,
)
marked_names = st.tuples(st.booleans(), names).map(lambda p: ("_" if p[0] else "") + p[1])


def test_intern_relation_folds_inverse_marker():
    kb = KnowledgeBase()
    rid, inverted = kb.intern_relation("/location/location/contains")
    assert (rid, inverted) == (0, False)
    assert kb.intern_relation("_/location/location/contains") == (rid, True)
    assert kb.num_relations == 1


def test_intern_relation_rejects_empty_name():
    kb = KnowledgeBase()
    with pytest.raises(InputFormatError):
        kb.intern_relation("")
    with pytest.raises(InputFormatError):
        kb.intern_relation("_")
    with pytest.raises(InputFormatError):
        kb.intern_relation("__x")


def test_toy_vocabulary_folding_matches_hand_count():
    bases = ["a", "b", "c", "d", "e"]
    kb = KnowledgeBase()
    for name in bases + ["_" + b for b in bases]:
        kb.intern_relation(name)
    assert kb.num_relations == 5
    assert kb.stats()["raw_relation_names"] == 10


@given(st.lists(marked_names, min_size=1, max_size=20))
def test_interning_is_idempotent_and_dense(relation_names):
    kb = KnowledgeBase()
    first = [kb.intern_relation(n)[0] for n in relation_names]
    second = [kb.intern_relation(n)[0] for n in relation_names]
    assert first == second
    canonical = {strip_inverse(n)[0] for n in relation_names}
    assert sorted(set(first)) == list(range(len(canonical)))


@given(marked_names)
def test_folding_twice_changes_nothing(name):
    kb = KnowledgeBase()
    rid, _ = kb.intern_relation(name)
    folded = strip_inverse(name)[0]
    assert kb.intern_relation(folded) == (rid, False)
    assert strip_inverse(folded) == (folded, False)


def test_add_fact_stores_inverse_reversed():
    kb = KnowledgeBase()
    fid = kb.add_fact("London", "_capitalOf", "England")
    fact = kb.facts[fid]
    assert kb.entities.name(fact.source) == "England"
    assert kb.relations.name(fact.relation) == "capitalOf"
    assert kb.entities.name(fact.target) == "London"


def test_parallel_facts_are_kept():
    kb = KnowledgeBase()
    a = kb.add_fact("LHR", "serves", "London")
    b = kb.add_fact("LHR", "serves", "London")
    assert a != b
    assert len(kb.facts) == 2
    assert kb.as_source(kb.entities.lookup("LHR")) == [a, b]


def test_load_kb_counts_and_dedupes_types():
    facts = "a\tr\tb\nb\ts\tc\n# comment\n\nc\tr\ta\n"
    types = "a\tx,y\na\ty\n"
    kb = load_kb(io.StringIO(facts), io.StringIO(types))
    assert len(kb.facts) == 3
    a = kb.entities.lookup("a")
    assert [kb.types.name(t) for t in kb.entity_types(a)] == ["x", "y"]


def test_entity_types_of_typed_and_untyped(airport_kb):
    ba = airport_kb.entities.lookup("BA")
    assert sorted(airport_kb.types.name(t) for t in airport_kb.entity_types(ba)) == ["airline", "company"]
    untyped = make_kb([("u", "r", "v")])
    assert untyped.entity_types(0) == []


def test_entity_types_rejects_invalid_id(airport_kb):
    with pytest.raises(UnknownEntityError):
        airport_kb.entity_types(airport_kb.num_entities)
    with pytest.raises(UnknownEntityError):
        airport_kb.entity_types(-1)


def test_malformed_line_reports_line_number():
    with pytest.raises(InputFormatError) as err:
        load_kb(io.StringIO("a\tr\tb\nbroken line\n"), facts_source="facts.tsv")
    assert err.value.line_number == 2
    assert "facts.tsv:2" in err.value.detail


def test_frozen_kb_rejects_new_facts(airport_kb):
    with pytest.raises(RuntimeError):
        airport_kb.add_fact("x", "r", "y")


def test_round_trip_reproduces_vocabularies_and_facts(airport_kb):
    facts, types = io.StringIO(), io.StringIO()
    dump_kb(airport_kb, facts, types)
    again = load_kb(io.StringIO(facts.getvalue()), io.StringIO(types.getvalue()))

    assert list(again.entities) == list(airport_kb.entities)
    assert list(again.relations) == list(airport_kb.relations)
    assert list(again.types) == list(airport_kb.types)
    assert again.facts == airport_kb.facts
    for e in range(airport_kb.num_entities):
        assert again.entity_types(e) == airport_kb.entity_types(e)


def test_stats(airport_kb):
    stats = airport_kb.stats()
    assert stats["facts"] == 4
    assert stats["entities"] == 5
    assert stats["relations"] == 3
    assert stats["untyped_entities"] == 0
    assert stats["mt"] == 2


def test_load_queries(airport_kb):
    text = "LHR\tEngland\tcountryOfAirport\t+\nLGW\tBA\tcountryOfAirport\t-\n"
    queries = load_queries(io.StringIO(text), airport_kb)
    assert [q.positive for q in queries] == [True, False]
    assert queries[0].source == airport_kb.entities.lookup("LHR")
    assert queries[1].relation == "countryOfAirport"

    out = io.StringIO()
    dump_queries(queries, airport_kb, out)
    assert out.getvalue() == text


def test_load_queries_errors(airport_kb):
    with pytest.raises(InputFormatError):
        load_queries(io.StringIO("LHR\tEngland\tr\t?\n"), airport_kb)
    with pytest.raises(UnknownEntityError) as err:
        load_queries(io.StringIO("LHR\tEngland\tr\t+\nLHR\tParis\tr\t-\n"), airport_kb)
    assert err.value.line_number == 2


@given(st.lists(st.tuples(names, marked_names, names), min_size=1, max_size=15))
def test_dumped_kb_reloads_with_marked_relations(triples):
    kb = KnowledgeBase()
    for s, r, t in triples:
        kb.add_fact(s, r, t)
    kb.freeze()
    facts, types = io.StringIO(), io.StringIO()
    dump_kb(kb, facts, types)
    again = load_kb(io.StringIO(facts.getvalue()), io.StringIO(types.getvalue()))
    assert list(again.relations) == list(kb.relations)
    assert [(f.source, f.relation, f.target) for f in again.facts] == [(f.source, f.relation, f.target) for f in kb.facts]
