"""
Graph neural relation predictor.

Entities and facts of a query graph carry embeddings that are the hidden
states of two LSTMs. Each round, entities aggregate messages from incident
facts (through S^T and T^T) and facts aggregate messages from their endpoint
entities (through S and T). After t_max rounds the fake fact's embedding is
decoded by the vote MLP into C logits.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..graph.query_graph import BatchedGraph, QueryGraph, batch_graphs
from ..schemas import ModelConfig
from ..tensor import Tensor, ops
from .layers import ln_lstm_cell, mlp
from .params import ModelParams

Graph = Union[QueryGraph, BatchedGraph]


@dataclass
class Incidence:
    S: Tensor
    T: Tensor
    S_t: Tensor
    T_t: Tensor

    @classmethod
    def of(cls, graph: BatchedGraph, dtype) -> "Incidence":
        S = graph.S.astype(dtype, copy=False)
        T = graph.T.astype(dtype, copy=False)
        return cls(Tensor(S), Tensor(T), Tensor(S.T), Tensor(T.T))


@dataclass
class RoundState:
    E: Tensor
    E_c: Tensor
    F: Tensor
    F_c: Tensor


@dataclass
class ForwardTrace:
    """Per-round embeddings; E[t] is nodes x d and F[t] is edges x d."""
    E: List[Tensor] = field(default_factory=list)
    F: List[Tensor] = field(default_factory=list)
    E_h: Optional[Tensor] = None
    F_h: Optional[Tensor] = None
    logits: Optional[Tensor] = None


def _as_batch(graph: Graph, dtype) -> BatchedGraph:
    if isinstance(graph, QueryGraph):
        return batch_graphs([graph], dtype=dtype)
    return graph


def init_embeddings(graph: Graph, params: ModelParams, config: ModelConfig) -> Tuple[Tensor, Tensor]:
    """
    Initial entity and fact embeddings from the lookup tables.

    The fake fact (relation FAKE_RELATION) gathers a zero row. Untyped
    entities start at zero in the mean and sum variants.
    """
    batch = _as_batch(graph, params.dtype)
    num_nodes = int(batch.node_offsets[-1])

    # edge 0 of every graph carries FAKE_RELATION and starts at zero
    F = ops.gather_rows(params["rel_emb"], batch.edge_relations)

    if config.variant == "relation":
        # every entity reads the single shared row
        E = ops.gather_rows(params["entity_vec"], np.zeros(num_nodes, dtype=np.int64))
    else:
        type_ids, segments = batch.type_segments()
        rows = ops.gather_rows(params["type_emb"], type_ids)
        reduce = ops.mean_rows if config.variant == "mean" else ops.sum_rows
        E = reduce(rows, segments=segments, num_segments=num_nodes)
    return E, F


def message_round(
    state: RoundState, inc: Incidence, params: ModelParams, config: ModelConfig
) -> RoundState:
    """
    One refinement of entities from facts and facts from entities.

    Jacobi order: both halves read the round's incoming E and F.
    Gauss-Seidel order: facts read the freshly refined entities.
    """
    E, F = state.E, state.F

    to_entities = ops.concat([
        ops.matmul(inc.S_t, mlp(F, params, "msg_es")),
        ops.matmul(inc.T_t, mlp(F, params, "msg_et")),
    ], axis=1)
    E_next, E_c = ln_lstm_cell(to_entities, E, state.E_c, params, "upd_e")

    # the only difference between the two orders
    senders = E_next if config.update_order == "gauss_seidel" else E
    to_facts = ops.concat([
        ops.matmul(inc.S, mlp(senders, params, "msg_se")),
        ops.matmul(inc.T, mlp(senders, params, "msg_te")),
    ], axis=1)
    F_next, F_c = ln_lstm_cell(to_facts, F, state.F_c, params, "upd_f")

    return RoundState(E_next, E_c, F_next, F_c)


def run(graph: Graph, params: ModelParams, config: ModelConfig, keep_trace: bool = False) -> ForwardTrace:
    batch = _as_batch(graph, params.dtype)
    inc = Incidence.of(batch, params.dtype)

    E, F = init_embeddings(batch, params, config)
    state = RoundState(
        E=E,
        E_c=Tensor(np.zeros(E.shape, dtype=params.dtype)),
        F=F,
        F_c=Tensor(np.zeros(F.shape, dtype=params.dtype)),
    )
    trace = ForwardTrace()
    if keep_trace:
        trace.E.append(state.E)
        trace.F.append(state.F)

    for _ in range(config.t_max):
        state = message_round(state, inc, params, config)
        if keep_trace:
            trace.E.append(state.E)
            trace.F.append(state.F)

    # one fake fact per graph, at each graph's edge offset
    fake = ops.gather_rows(state.F, batch.fake_rows)
    trace.E_h, trace.F_h = state.E, state.F
    trace.logits = mlp(fake, params, "vote")
    return trace


def forward(graph: Graph, params: ModelParams, config: ModelConfig) -> Tensor:
    """Logits of shape B x C, one row per query graph in the batch."""
    return run(graph, params, config).logits


def predict(logits: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Rank classes by descending logit, ties broken by ascending class index.

    Returns:
        (ranking, argmax class)
    """
    logits = np.asarray(logits).reshape(-1)
    ranking = np.argsort(-logits, kind="stable")
    return ranking, int(ranking[0])


def loss(logits: Tensor, labels: Sequence[int]) -> Tensor:
    return ops.softmax_cross_entropy(logits, ops.one_hot(labels, logits.shape[1], dtype=logits.dtype))
