"""
In-memory knowledge base: interned entities, relations and entity types,
a fact list in canonical orientation and per-entity incidence lists.

Inverse relations ("_capitalOf") are folded into their canonical relation
at insertion time by swapping the fact's endpoints.
"""
from typing import Dict, Iterable, Iterator, List, NamedTuple, Tuple

from ..errors import InputFormatError, UnknownEntityError

INVERSE_MARKER = "_"


class Fact(NamedTuple):
    """A directed relational fact stored in canonical (non-inverse) orientation."""
    id: int
    source: int
    relation: int
    target: int


def strip_inverse(name: str) -> Tuple[str, bool]:
    """Return the canonical relation name and whether `name` was inverse-marked."""
    if name.startswith(INVERSE_MARKER):
        return name[len(INVERSE_MARKER):], True
    return name, False


class Vocab:
    """Injective name -> dense id mapping, ids assigned by first sighting."""

    def __init__(self, kind: str):
        self.kind = kind
        self._ids: Dict[str, int] = {}
        self._names: List[str] = []

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def lookup(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownEntityError(f"unknown {self.kind} '{name}'") from None

    def name(self, idx: int) -> str:
        if not 0 <= idx < len(self._names):
            raise UnknownEntityError(f"{self.kind} id {idx} out of range [0, {len(self._names)})")
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)


class KnowledgeBase:
    """
    The (entities, types, facts, relations) store.

    Construction is single-writer; call `freeze()` once loading is done.
    A frozen KB is read-only and can be shared between threads.
    """

    def __init__(self):
        self.entities = Vocab("entity")
        self.relations = Vocab("relation")
        self.types = Vocab("type")
        self.facts: List[Fact] = []
        self._as_source: List[List[int]] = []
        self._as_target: List[List[int]] = []
        # insertion order = order entities were first typed; dump_kb relies on it
        self._entity_types: Dict[int, List[int]] = {}
        self._raw_relation_names: set = set()
        self._frozen = False

    # ==================== Interning ====================

    def intern_entity(self, name: str) -> int:
        if not name:
            raise InputFormatError("empty entity name")
        self._check_mutable()
        idx = self.entities.intern(name)
        while len(self._as_source) <= idx:
            self._as_source.append([])
            self._as_target.append([])
        return idx

    def intern_relation(self, name: str) -> Tuple[int, bool]:
        """
        Intern a relation name, folding the inverse marker.

        Returns:
            (relation id, inverted) where `inverted` is True for "_"-prefixed names

        Raises:
            InputFormatError: empty name, or a name starting with a doubled marker
        """
        canonical, inverted = strip_inverse(name or "")
        if not canonical:
            raise InputFormatError(f"empty relation name {name!r}")
        # a folded name never carries the marker, so folding is idempotent
        if canonical.startswith(INVERSE_MARKER):
            raise InputFormatError(f"relation name {name!r} has more than one inverse marker")
        self._raw_relation_names.add(name)
        if canonical not in self.relations:
            self._check_mutable()
        return self.relations.intern(canonical), inverted

    # ==================== Mutation ====================

    def add_fact(self, source_name: str, relation_name: str, target_name: str) -> int:
        """
        Add one fact; an inverse-marked relation is stored reversed.

        Identical triples are kept as distinct parallel facts.
        """
        self._check_mutable()
        relation, inverted = self.intern_relation(relation_name)
        if inverted:
            source_name, target_name = target_name, source_name
        source = self.intern_entity(source_name)
        target = self.intern_entity(target_name)

        fact_id = len(self.facts)
        self.facts.append(Fact(fact_id, source, relation, target))
        self._as_source[source].append(fact_id)
        self._as_target[target].append(fact_id)
        return fact_id

    def add_types(self, entity_name: str, type_names: Iterable[str]) -> int:
        """Attach types to an entity; repeated assignments are deduplicated."""
        entity = self.intern_entity(entity_name)
        current = self._entity_types.setdefault(entity, [])
        for type_name in type_names:
            if not type_name:
                continue
            type_id = self.types.intern(type_name)
            if type_id not in current:
                current.append(type_id)
        return entity

    def freeze(self) -> "KnowledgeBase":
        self._frozen = True
        return self

    def _check_mutable(self):
        if self._frozen:
            raise RuntimeError("knowledge base is frozen after load")

    # ==================== Queries ====================

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def mt(self) -> int:
        """Maximum number of types carried by any entity."""
        return max((len(t) for t in self._entity_types.values()), default=0)

    def entity_types(self, entity: int) -> List[int]:
        self._check_entity(entity)
        return list(self._entity_types.get(entity, ()))

    def typed_entities(self) -> List[int]:
        return list(self._entity_types)

    def as_source(self, entity: int) -> List[int]:
        self._check_entity(entity)
        return self._as_source[entity]

    def as_target(self, entity: int) -> List[int]:
        self._check_entity(entity)
        return self._as_target[entity]

    def neighbours(self, entity: int) -> Iterator[Tuple[int, int]]:
        """Yield (fact id, other endpoint) over incident facts in either direction."""
        for fact_id in self._as_source[entity]:
            yield fact_id, self.facts[fact_id].target
        for fact_id in self._as_target[entity]:
            yield fact_id, self.facts[fact_id].source

    def _check_entity(self, entity: int):
        if not 0 <= entity < len(self.entities):
            raise UnknownEntityError(f"entity id {entity} out of range [0, {len(self.entities)})")

    def stats(self) -> Dict[str, int]:
        untyped = sum(1 for e in range(self.num_entities) if not self._entity_types.get(e))
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "raw_relation_names": len(self._raw_relation_names),
            "types": self.num_types,
            "facts": len(self.facts),
            "untyped_entities": untyped,
            "mt": self.mt,
        }
