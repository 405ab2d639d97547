"""
Building blocks: dense MLPs and a layer-normalised LSTM cell.
"""
from typing import Tuple

from ..tensor import Tensor, ops
from .params import GATES, ModelParams


def mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """ReLU on every layer but the last, which is linear."""
    k = 0
    while f"{prefix}.W{k + 1}" in params:
        x = ops.relu(ops.add(ops.matmul(x, params[f"{prefix}.W{k}"]), params[f"{prefix}.b{k}"]))
        k += 1
    return ops.add(ops.matmul(x, params[f"{prefix}.W{k}"]), params[f"{prefix}.b{k}"])


def ln_lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: ModelParams, prefix: str) -> Tuple[Tensor, Tensor]:
    """
    One LSTM step with layer normalisation on every gate pre-activation.

        z_g = LN_g([x, h] W_g)              g in i, f, o, u
        c'  = sigmoid(z_f) * c + sigmoid(z_i) * relu(z_u)
        h'  = sigmoid(z_o) * relu(c')

    The layer-norm bias doubles as the gate bias.
    """
    xh = ops.concat([x, h], axis=1)
    z = {}
    for g in GATES:
        z[g] = ops.layer_norm(
            ops.matmul(xh, params[f"{prefix}.W_{g}"]),
            params[f"{prefix}.ln_{g}.gain"],
            params[f"{prefix}.ln_{g}.bias"],
        )
    # relu instead of tanh on the candidate and the output
    c_next = ops.add(
        ops.mul(ops.sigmoid(z["f"]), c),
        ops.mul(ops.sigmoid(z["i"]), ops.relu(z["u"])),
    )
    h_next = ops.mul(ops.sigmoid(z["o"]), ops.relu(c_next))
    return h_next, c_next
