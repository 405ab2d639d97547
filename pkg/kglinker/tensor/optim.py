"""
Adam with bias correction, plus optional global-norm clipping and L2 weight decay.
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Flatten into named arrays for the checkpoint container."""
        arrays = {"adam.step": np.array([self.step], dtype=np.int64)}
        for name in self.m:
            arrays[f"adam.m.{name}"] = self.m[name]
            arrays[f"adam.v.{name}"] = self.v[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        if "adam.step" in arrays:
            state.step = int(arrays["adam.step"][0])
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                state.m[key[len("adam.m."):]] = value.copy()
            elif key.startswith("adam.v."):
                state.v[key[len("adam.v."):]] = value.copy()
        return state


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine annealing from `base_lr` at step 0 towards 0 at `total_steps`."""
    if total_steps <= 0:
        return base_lr
    progress = min(step, total_steps) / total_steps
    return float(0.5 * base_lr * (1.0 + np.cos(np.pi * progress)))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    weight_decay: float = 0.0,
    clip_norm: Optional[float] = None,
):
    """
    Apply one Adam update in place.

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    grads = dict(grads)
    if clip_norm is not None:
        grads = clip_by_global_norm(grads, clip_norm)

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        if weight_decay:
            g = g + weight_decay * p.data

        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]

        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
