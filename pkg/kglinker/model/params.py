"""
Trainable parameters of the relation predictor.

Canonical tensor names (also the checkpoint entry names):

    rel_emb                          relation lookup table, |R| x d
    type_emb                         entity-type lookup table, |T| x d (mean/sum variants)
    entity_vec                       shared entity vector, 1 x d (relation variant)
    msg_es.W{k} / msg_es.b{k}        fact -> entity-as-source message MLP
    msg_et.W{k} / msg_et.b{k}        fact -> entity-as-target message MLP
    msg_se.W{k} / msg_se.b{k}        source entity -> fact message MLP
    msg_te.W{k} / msg_te.b{k}        target entity -> fact message MLP
    upd_e.W_{g}, upd_e.ln_{g}.gain, upd_e.ln_{g}.bias   entity LSTM, gate g in i,f,o,u
    upd_f.W_{g}, upd_f.ln_{g}.gain, upd_f.ln_{g}.bias   fact LSTM
    vote.W{k} / vote.b{k}            vote MLP, last layer has C outputs
"""
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from ..errors import CheckpointError
from ..schemas import ModelConfig
from ..tensor import Tensor

MESSAGE_MLPS = ("msg_es", "msg_et", "msg_se", "msg_te")
UPDATE_CELLS = ("upd_e", "upd_f")
GATES = ("i", "f", "o", "u")


def _mlp_sizes(in_dim: int, layers: Tuple[int, ...]) -> List[Tuple[int, int]]:
    sizes = []
    for out_dim in layers:
        sizes.append((in_dim, out_dim))
        in_dim = out_dim
    return sizes


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d = config.dim
    shapes: Dict[str, Tuple[int, ...]] = {"rel_emb": (config.num_relations, d)}
    if config.variant == "relation":
        shapes["entity_vec"] = (1, d)
    else:
        shapes["type_emb"] = (config.num_types, d)

    for prefix in MESSAGE_MLPS:
        for k, (fan_in, fan_out) in enumerate(_mlp_sizes(d, config.msg_layers)):
            shapes[f"{prefix}.W{k}"] = (fan_in, fan_out)
            shapes[f"{prefix}.b{k}"] = (fan_out,)

    cell_in = 2 * config.msg_layers[-1] + d
    for prefix in UPDATE_CELLS:
        for g in GATES:
            shapes[f"{prefix}.W_{g}"] = (cell_in, d)
            shapes[f"{prefix}.ln_{g}.gain"] = (d,)
            shapes[f"{prefix}.ln_{g}.bias"] = (d,)

    for k, (fan_in, fan_out) in enumerate(_mlp_sizes(d, tuple(config.vote_layers) + (config.num_classes,))):
        shapes[f"vote.W{k}"] = (fan_in, fan_out)
        shapes[f"vote.b{k}"] = (fan_out,)
    return shapes


class ModelParams:
    """Named parameter tensors, all of the configured precision."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor]):
        self.config = config
        self._tensors = tensors

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """
        Tables ~ U(-1/sqrt(d), 1/sqrt(d)); weights Glorot-uniform; biases 0;
        layer-norm gains 1, biases 0 except the forget gate at `forget_bias`.
        """
        rng = np.random.default_rng(seed)
        dtype = np.dtype(config.precision)
        table_limit = 1.0 / np.sqrt(config.dim)
        tensors: Dict[str, Tensor] = {}

        for name, shape in expected_shapes(config).items():
            if name in ("rel_emb", "type_emb", "entity_vec"):
                value = rng.uniform(-table_limit, table_limit, size=shape)
            elif ".ln_" in name:
                # LN bias is the gate bias; only the forget gate starts open
                fill = config.forget_bias if name.endswith("ln_f.bias") else (1.0 if name.endswith("gain") else 0.0)
                value = np.full(shape, fill)
            elif len(shape) == 1:
                value = np.zeros(shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                value = rng.uniform(-limit, limit, size=shape)
            tensors[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def dtype(self):
        return np.dtype(self.config.precision)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        """
        Rebuild parameters from checkpoint arrays.

        Raises:
            CheckpointError: missing tensors or shapes that disagree with `config`
        """
        dtype = np.dtype(config.precision)
        tensors: Dict[str, Tensor] = {}
        for name, shape in expected_shapes(config).items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint lacks tensor '{name}' required by the config")
            value = arrays[name]
            if tuple(value.shape) != shape:
                raise CheckpointError(f"tensor '{name}' has shape {tuple(value.shape)}, config expects {shape}")
            tensors[name] = Tensor(value.astype(dtype, copy=True), requires_grad=True, name=name)
        return cls(config, tensors)
