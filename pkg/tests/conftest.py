"""
Shared fixtures: small knowledge bases built from inline text and the
--runslow switch for desk-scale training runs.
"""
import io
from typing import Dict, Iterable, Optional, Sequence, Tuple

import pytest

from kglinker.kb import KnowledgeBase, load_kb


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_kb(
    facts: Iterable[Tuple[str, str, str]],
    types: Optional[Dict[str, Sequence[str]]] = None,
) -> KnowledgeBase:
    """Frozen KB from (source, relation, target) triples and an entity -> types map."""
    facts_text = "".join(f"{s}\t{r}\t{t}\n" for s, r, t in facts)
    types_text = "".join(f"{e}\t{','.join(ts)}\n" for e, ts in (types or {}).items())
    return load_kb(io.StringIO(facts_text), io.StringIO(types_text))


@pytest.fixture
def airport_kb() -> KnowledgeBase:
    return make_kb(
        [
            ("LHR", "locatedIn", "London"),
            ("London", "_capitalOf", "England"),
            ("LGW", "locatedIn", "London"),
            ("BA", "hub", "LHR"),
        ],
        {
            "LHR": ["airport"],
            "LGW": ["airport"],
            "London": ["city"],
            "England": ["country"],
            "BA": ["airline", "company"],
        },
    )
