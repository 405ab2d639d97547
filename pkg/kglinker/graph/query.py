"""Query records and the class vocabulary they are labelled with."""
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

from ..errors import LabelError

NULL_LABEL = "<null>"
NULL_CLASS = 0
# separators of the joined label list in checkpoint configs and report summaries
RESERVED_LABEL_CHARACTERS = ",|"


class Query(NamedTuple):
    """
    A link-prediction instance.

    `relation` names the target relation whose pool the query belongs to;
    negative queries keep it for per-relation statistics but are labelled
    with the null class.
    """
    source: int
    target: int
    relation: Optional[str]
    positive: bool

    @property
    def polarity(self) -> str:
        return "+" if self.positive else "-"


class LabelSet:
    """Class 0 is the null relation; target relations follow in first-sighting order."""

    def __init__(self, relations: Sequence[str]):
        for name in relations:
            reserved = sorted(set(name) & set(RESERVED_LABEL_CHARACTERS))
            if reserved:
                raise LabelError(f"target relation '{name}' contains reserved character '{reserved[0]}'")
        self.names: Tuple[str, ...] = (NULL_LABEL, *relations)
        self._index: Dict[str, int] = {name: i for i, name in enumerate(self.names)}

    @classmethod
    def from_queries(cls, queries: Iterable[Query]) -> "LabelSet":
        seen: Dict[str, None] = {}
        for q in queries:
            if q.relation:
                seen.setdefault(q.relation)
        # negative pools count as classes too
        return cls(list(seen))

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "LabelSet":
        if not names or names[0] != NULL_LABEL:
            raise LabelError(f"label vocabulary must start with {NULL_LABEL}")
        return cls(list(names[1:]))

    def __len__(self) -> int:
        return len(self.names)

    def label(self, query: Query) -> int:
        if not query.positive:
            return NULL_CLASS
        try:
            return self._index[query.relation]
        except KeyError:
            raise LabelError(f"relation '{query.relation}' is not in the label vocabulary") from None

    def name(self, cls_id: int) -> str:
        return self.names[cls_id]
