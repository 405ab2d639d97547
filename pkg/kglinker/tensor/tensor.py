"""
Tensor and Tape.

A Tensor wraps a contiguous numpy array. Operations executed while a Tape
is active (``with Tape() as tape:``) append a record holding the output,
its inputs and a vector-Jacobian product; ``tape.backward(loss)`` replays
the records once in reverse order and accumulates gradients additively.

The active tape is held in a context variable, so each thread records onto
its own tape.
"""
from contextvars import ContextVar
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..errors import GradientError, NumericError

DEFAULT_DTYPE = np.float64

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active: ContextVar[Optional["Tape"]] = ContextVar("kglinker_active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "grad")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class _Record(NamedTuple):
    op: str
    out: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: VJP


def active_tape() -> Optional["Tape"]:
    return _active.get()


class Tape:
    """
    Records differentiable operations for one forward/backward pass.

    Args:
        checked: raise NumericError as soon as an op produces NaN/Inf
    """

    def __init__(self, checked: bool = False):
        self.checked = checked
        self.records: List[_Record] = []
        self._params: Dict[str, Tensor] = {}
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.reset(self._token)
        self._token = None

    def watch(self, params: Mapping[str, Tensor]) -> "Tape":
        """Register parameters whose gradients `backward` must report."""
        for name, p in params.items():
            p.requires_grad = True
            self._params[name] = p
        return self

    def record(self, op: str, out: Tensor, inputs: Tuple[Tensor, ...], vjp: VJP):
        if self.checked and not np.all(np.isfinite(out.data)):
            raise NumericError(f"{op} produced non-finite values")
        if out.requires_grad:
            self.records.append(_Record(op, out, inputs, vjp))

    def reset(self):
        self.records.clear()
        self._consumed = False
        for p in self._params.values():
            p.grad = None

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """
        Propagate d(loss)/d(.) to every watched parameter.

        Parameters unreachable from `loss` get zero gradients.

        Raises:
            GradientError: non-scalar loss, or a second call without reset()
        """
        if self._consumed:
            raise GradientError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise GradientError(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        result: Dict[str, np.ndarray] = {}
        for name, p in self._params.items():
            g = grads.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else g.reshape(p.shape)
            result[name] = p.grad
        return result
