"""Knowledge-base package."""
from .knowledge_base import INVERSE_MARKER, Fact, KnowledgeBase, Vocab, strip_inverse
from .loader import dump_kb, dump_queries, load_kb, load_kb_files, load_queries, load_queries_file

__all__ = [
    "INVERSE_MARKER",
    "Fact",
    "KnowledgeBase",
    "Vocab",
    "strip_inverse",
    "dump_kb",
    "dump_queries",
    "load_kb",
    "load_kb_files",
    "load_queries",
    "load_queries_file",
]
