"""
Readers and writers for the tab-separated KB, type and query files.

Facts:   source<TAB>relation<TAB>target
Types:   entity<TAB>type1,type2,...
Queries: source<TAB>target<TAB>target_relation<TAB>{+,-}

Blank lines and lines starting with '#' are ignored.
"""
import os
from typing import Iterable, Iterator, List, Optional, TextIO, Tuple

from ..errors import InputFormatError, KGLinkerError, MissingFileError
from ..graph.query import Query
from ..logging_config import logger
from .knowledge_base import KnowledgeBase


def _records(stream: Iterable[str], source: str, width: int) -> Iterator[Tuple[int, List[str]]]:
    for line_number, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != width:
            raise InputFormatError(
                f"expected {width} tab-separated fields, got {len(fields)}",
                line_number=line_number,
                source=source,
            )
        yield line_number, [f.strip() for f in fields]


def _open(path: str) -> TextIO:
    if not os.path.isfile(path):
        raise MissingFileError(f"file not found: {path}")
    return open(path, "r", encoding="utf-8")


def load_kb(
    facts_stream: Iterable[str],
    types_stream: Optional[Iterable[str]] = None,
    facts_source: str = "<facts>",
    types_source: str = "<types>",
) -> KnowledgeBase:
    """
    Build a frozen KnowledgeBase from a facts stream and an optional types stream.

    Entities are interned in first-sighting order (facts first, canonical
    orientation), so reloading a dumped KB reproduces every id.

    Raises:
        InputFormatError: on a malformed line, with its line number
    """
    kb = KnowledgeBase()

    for line_number, (source, relation, target) in _records(facts_stream, facts_source, 3):
        try:
            kb.add_fact(source, relation, target)
        except KGLinkerError as e:
            raise InputFormatError(e.detail, line_number=line_number, source=facts_source) from e

    if types_stream is not None:
        for line_number, (entity, type_list) in _records(types_stream, types_source, 2):
            try:
                kb.add_types(entity, [t.strip() for t in type_list.split(",")])
            except KGLinkerError as e:
                raise InputFormatError(e.detail, line_number=line_number, source=types_source) from e

    kb.freeze()
    logger.info("Loaded knowledge base", **kb.stats())
    return kb


def load_kb_files(facts_path: str, types_path: Optional[str] = None) -> KnowledgeBase:
    with _open(facts_path) as facts:
        if types_path is None:
            return load_kb(facts, None, facts_source=facts_path)
        with _open(types_path) as types:
            return load_kb(facts, types, facts_source=facts_path, types_source=types_path)


def dump_kb(kb: KnowledgeBase, facts_out: TextIO, types_out: TextIO):
    """Write `kb` in canonical form; `load_kb` on the output yields identical ids."""
    for fact in kb.facts:
        facts_out.write(
            f"{kb.entities.name(fact.source)}\t{kb.relations.name(fact.relation)}\t{kb.entities.name(fact.target)}\n"
        )
    for entity in kb.typed_entities():
        names = ",".join(kb.types.name(t) for t in kb.entity_types(entity))
        types_out.write(f"{kb.entities.name(entity)}\t{names}\n")


def load_queries(stream: Iterable[str], kb: KnowledgeBase, source: str = "<queries>") -> List[Query]:
    """
    Parse a query file against `kb`.

    Raises:
        InputFormatError: malformed line or polarity marker
        UnknownEntityError: entity absent from the KB
    """
    queries: List[Query] = []
    for line_number, (e_s, e_t, relation, polarity) in _records(stream, source, 4):
        if polarity not in ("+", "-"):
            raise InputFormatError(f"polarity must be '+' or '-', got {polarity!r}", line_number, source)
        try:
            s, t = kb.entities.lookup(e_s), kb.entities.lookup(e_t)
        except KGLinkerError as e:
            raise type(e)(e.detail, line_number=line_number, source=source) from e
        queries.append(Query(s, t, relation or None, polarity == "+"))

    positives = sum(1 for q in queries if q.positive)
    logger.info("Loaded queries", source=source, positives=positives, negatives=len(queries) - positives)
    return queries


def load_queries_file(path: str, kb: KnowledgeBase) -> List[Query]:
    with _open(path) as stream:
        return load_queries(stream, kb, source=path)


def dump_queries(queries: Iterable[Query], kb: KnowledgeBase, out: TextIO):
    for q in queries:
        out.write(f"{kb.entities.name(q.source)}\t{kb.entities.name(q.target)}\t{q.relation or ''}\t{q.polarity}\n")
