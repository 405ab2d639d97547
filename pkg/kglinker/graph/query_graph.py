"""
Per-query minimal subgraphs.

For a pair (e_s, e_t) the query graph holds every KB fact lying on some
simple undirected path e_s -> e_t of at most L edges, preceded by the fake
fact e_s -> e_t at edge index 0. Facts are traversable in both directions
because inverse relations were folded at load time.
"""
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from ..errors import ConfigError, NoSubgraphError
from ..kb.knowledge_base import KnowledgeBase
from ..tensor.ops import PAD

# gather_rows turns PAD into a zero row, which is the fake fact's initial embedding
FAKE_RELATION = PAD

Edge = Tuple[int, int, int]  # (local source, relation id or FAKE_RELATION, local target)


@dataclass(frozen=True)
class QueryGraph:
    source: int
    target: int
    max_path_length: int
    nodes: Tuple[int, ...]
    edges: Tuple[Edge, ...]
    fact_ids: Tuple[Optional[int], ...]
    # per-node type ids, parallel to `nodes`; empty means every node is untyped
    node_types: Tuple[Tuple[int, ...], ...] = ()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def local(self, entity: int) -> int:
        return self.nodes.index(entity)

    @property
    def edge_relations(self) -> np.ndarray:
        return np.array([r for _, r, _ in self.edges], dtype=np.int64)

    def real_fact_ids(self) -> Set[int]:
        return {f for f in self.fact_ids if f is not None}

    def types_of(self, local: int) -> Tuple[int, ...]:
        return self.node_types[local] if self.node_types else ()


@dataclass(frozen=True)
class BatchedGraph:
    """Block-diagonal union of query graphs; instance b's fake edge is row `fake_rows[b]`."""
    graphs: Tuple[QueryGraph, ...]
    S: np.ndarray
    T: np.ndarray
    node_offsets: np.ndarray
    edge_offsets: np.ndarray

    @property
    def size(self) -> int:
        return len(self.graphs)

    @property
    def fake_rows(self) -> np.ndarray:
        return self.edge_offsets[:-1]

    @property
    def entities(self) -> np.ndarray:
        return np.array([e for g in self.graphs for e in g.nodes], dtype=np.int64)

    @property
    def edge_relations(self) -> np.ndarray:
        return np.concatenate([g.edge_relations for g in self.graphs])

    def type_segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Flattened type ids and, for each, the batch-level node it belongs to."""
        flat: List[int] = []
        segments: List[int] = []
        for b, g in enumerate(self.graphs):
            base = int(self.node_offsets[b])
            for local in range(g.num_nodes):
                for type_id in g.types_of(local):
                    flat.append(type_id)
                    segments.append(base + local)
        return np.array(flat, dtype=np.int64), np.array(segments, dtype=np.int64)

    def unbatch(self, rows: np.ndarray) -> List[np.ndarray]:
        """Split a per-instance (B x k) array back into B rows."""
        return [rows[b] for b in range(self.size)]


# ==================== Extraction ====================

def _distances(kb: KnowledgeBase, start: int, limit: int) -> Dict[int, int]:
    dist = {start: 0}
    frontier = deque([start])
    while frontier:
        u = frontier.popleft()
        if dist[u] == limit:
            continue
        for _, w in kb.neighbours(u):
            if w not in dist:
                dist[w] = dist[u] + 1
                frontier.append(w)
    return dist


def _adjacency(kb: KnowledgeBase, candidates: Set[int]) -> Dict[int, List[int]]:
    """Simple undirected adjacency restricted to candidates; self-loops dropped."""
    adj: Dict[int, List[int]] = {}
    for u in candidates:
        seen: Dict[int, None] = {}
        for _, w in kb.neighbours(u):
            if w != u and w in candidates:
                seen.setdefault(w)
        adj[u] = list(seen)
    return adj


def _pairs_on_simple_paths(
    adj: Dict[int, List[int]], dist_t: Dict[int, int], source: int, target: int, max_len: int
) -> Set[frozenset]:
    """Node pairs adjacent on at least one simple source->target path of <= max_len edges."""
    marked: Set[frozenset] = set()
    path = [source]
    on_path = {source}

    def walk(u: int, depth: int):
        for w in adj[u]:
            if w in on_path or depth + 1 + dist_t.get(w, max_len + 1) > max_len:
                continue
            if w == target:
                nodes = path + [w]
                marked.update(frozenset(p) for p in zip(nodes, nodes[1:]))
                continue
            path.append(w)
            on_path.add(w)
            walk(w, depth + 1)
            on_path.discard(w)
            path.pop()

    walk(source, 0)
    return marked


def extract_subgraph(kb: KnowledgeBase, e_s: int, e_t: int, max_path_length: int) -> QueryGraph:
    """
    Extract the minimal subgraph holding all simple e_s->e_t paths of <= L edges.

    Candidate nodes satisfy d(e_s, v) + d(v, e_t) <= L; an exact pruning walk
    then keeps only facts that sit on a qualifying simple path. Parallel facts
    between a kept pair are all kept.

    Raises:
        NoSubgraphError: e_s == e_t, or no path of length <= L exists
    """
    if max_path_length < 1:
        raise ConfigError(f"max path length must be >= 1, got {max_path_length}")
    if e_s == e_t:
        raise NoSubgraphError(f"degenerate query: source and target are both entity {e_s}")

    dist_s = _distances(kb, e_s, max_path_length)
    if e_t not in dist_s:
        raise NoSubgraphError(f"no path of length <= {max_path_length} between {e_s} and {e_t}")
    dist_t = _distances(kb, e_t, max_path_length)
    candidates = {v for v, d in dist_s.items() if v in dist_t and d + dist_t[v] <= max_path_length}

    adj = _adjacency(kb, candidates)
    marked = _pairs_on_simple_paths(adj, dist_t, e_s, e_t, max_path_length)

    # BFS over the kept subgraph fixes node and edge order
    order: Dict[int, int] = {e_s: 0}
    fact_ids: List[int] = []
    taken: Set[int] = set()
    frontier = deque([e_s])
    while frontier:
        u = frontier.popleft()
        for fact_id, w in sorted(kb.neighbours(u)):
            if fact_id in taken or w == u or frozenset((u, w)) not in marked:
                continue
            taken.add(fact_id)
            fact_ids.append(fact_id)
            if w not in order:
                order[w] = len(order)
                frontier.append(w)

    nodes = tuple(order)
    edges: List[Edge] = [(order[e_s], FAKE_RELATION, order[e_t])]
    for fact_id in fact_ids:
        fact = kb.facts[fact_id]
        edges.append((order[fact.source], fact.relation, order[fact.target]))

    return QueryGraph(
        source=e_s,
        target=e_t,
        max_path_length=max_path_length,
        nodes=nodes,
        edges=tuple(edges),
        fact_ids=(None, *fact_ids),
        node_types=tuple(tuple(kb.entity_types(v)) for v in nodes),
    )


# ==================== Incidence & batching ====================

def build_incidence(qg: QueryGraph, dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
    """
    Binary fact-by-entity incidence: S[i, j] = 1 iff edge i starts at node j,
    T[i, j] = 1 iff edge i ends at node j. Row 0 is the fake edge.
    """
    S = np.zeros((qg.num_edges, qg.num_nodes), dtype=dtype)
    T = np.zeros((qg.num_edges, qg.num_nodes), dtype=dtype)
    for i, (src, _, tgt) in enumerate(qg.edges):
        S[i, src] = 1
        T[i, tgt] = 1
    return S, T


def batch_graphs(graphs: Sequence[QueryGraph], dtype=np.float64) -> BatchedGraph:
    if not graphs:
        raise ValueError("cannot batch an empty list of query graphs")

    node_offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edge_offsets = np.cumsum([0] + [g.num_edges for g in graphs])
    S = np.zeros((edge_offsets[-1], node_offsets[-1]), dtype=dtype)
    T = np.zeros_like(S)
    for b, g in enumerate(graphs):
        s, t = build_incidence(g, dtype)
        rows = slice(edge_offsets[b], edge_offsets[b + 1])
        cols = slice(node_offsets[b], node_offsets[b + 1])
        S[rows, cols] = s
        T[rows, cols] = t

    return BatchedGraph(
        graphs=tuple(graphs),
        S=S,
        T=T,
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
    )


# ==================== Path statistics ====================

def path_statistics(qg: QueryGraph, max_paths: int = 100_000) -> Tuple[int, float]:
    """
    Count simple e_s->e_t paths in the query graph and their mean length.

    The fake edge is excluded; parallel facts give distinct paths. Enumeration
    stops after `max_paths` paths.
    """
    g = nx.MultiGraph()
    g.add_nodes_from(range(qg.num_nodes))
    for key, (src, _, tgt) in enumerate(qg.edges[1:], start=1):
        g.add_edge(src, tgt, key=key)

    count = 0
    total = 0
    paths = nx.all_simple_edge_paths(g, qg.local(qg.source), qg.local(qg.target), cutoff=qg.max_path_length)
    for path in paths:
        count += 1
        total += len(path)
        if count >= max_paths:
            break
    return count, (total / count if count else 0.0)
