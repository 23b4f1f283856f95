"""Dense-array arithmetic and attention primitives shared by the fusion heads.

Every public operation takes and returns immutable ``Tensor`` values,
refuses broadcasting, and validates shapes eagerly. Arrays are held in
float64; the 32-bit on-disk representation lives in :mod:`msfk.tensorio`.
A central-difference gradient oracle (``finite_diff_grad``) is provided
for verifying the analytic gradients in :mod:`msfk.gradcheck`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "matmul",
    "transpose",
    "add",
    "add_bias",
    "concat_rows",
    "reshape",
    "softmax_rows",
    "scaled_dot_attention",
    "layer_norm",
    "elementwise_max",
    "sigmoid",
    "relu",
    "finite_diff_grad",
    "grad_sum_fusion",
    "grad_concat_fusion",
    "grad_elementwise_max",
    "grad_affinity",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Immutable dense array with an explicit, non-empty shape.

    Construction rejects empty shapes, non-positive dimensions, and
    non-finite values, so any value that survives an operation chain is
    guaranteed finite. The backing ndarray is marked read-only and safe
    to share across threads.
    """

    __slots__ = ("_array",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        array = np.asarray(values, dtype=np.float64)
        if shape is not None:
            array = array.reshape(tuple(int(d) for d in shape))
        if array.ndim == 0:
            raise ShapeError("tensor shape must be non-empty; got a scalar")
        if any(d < 1 for d in array.shape):
            raise ShapeError(f"tensor dimensions must be >= 1; got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("tensor values must be finite (no NaN/Inf)")
        array = np.ascontiguousarray(array)
        array.setflags(write=False)
        self._array = array

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def size(self) -> int:
        return int(self._array.size)

    @property
    def data(self) -> list[float]:
        """Row-major flat view of the values."""
        return self._array.reshape(-1).tolist()

    def tolist(self):
        return self._array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _require_2d(t: Tensor, op: str) -> None:
    if len(t.shape) != 2:
        raise ShapeError(f"{op}: expected a 2-D tensor, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor(a.array @ b.array)


def transpose(m: Tensor) -> Tensor:
    _require_2d(m, "transpose")
    return Tensor(m.array.T)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    return Tensor(a.array + b.array)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1-D bias to every row of a 2-D tensor (explicit, checked)."""
    _require_2d(x, "add_bias")
    if len(bias.shape) != 1 or bias.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: bias shape {bias.shape} does not match rows of {x.shape}")
    return Tensor(x.array + bias.array[None, :])


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two 2-D tensors vertically; widths must match."""
    _require_2d(a, "concat_rows")
    _require_2d(b, "concat_rows")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: widths differ: {a.shape} vs {b.shape}")
    return Tensor(np.concatenate([a.array, b.array], axis=0))


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    target = tuple(int(d) for d in shape)
    if int(np.prod(target)) != t.size:
        raise ShapeError(f"reshape: cannot view {t.shape} as {target}")
    return Tensor(t.array, shape=target)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    _require_2d(m, "softmax_rows")
    shifted = m.array - m.array.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Tensor(e / e.sum(axis=1, keepdims=True))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v, composed from matmul and softmax_rows.

    Single-head; ``q`` and ``k`` share the inner width d, ``k`` and ``v``
    share the row count.
    """
    _require_2d(q, "scaled_dot_attention")
    _require_2d(k, "scaled_dot_attention")
    _require_2d(v, "scaled_dot_attention")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"scaled_dot_attention: q/k widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"scaled_dot_attention: k/v row counts differ: {k.shape} vs {v.shape}")
    logits = matmul(q, transpose(k))
    scaled = Tensor(logits.array / math.sqrt(q.shape[1]))
    return matmul(softmax_rows(scaled), v)


def layer_norm(
    x: Tensor,
    eps: float = 1e-6,
    gain: Tensor | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    """Normalize each row to zero mean and unit variance (population).

    Unit gain and zero bias unless 1-D ``gain``/``bias`` of matching
    width are supplied.
    """
    _require_2d(x, "layer_norm")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mean = x.array.mean(axis=1, keepdims=True)
    var = x.array.var(axis=1, keepdims=True)
    out = (x.array - mean) / np.sqrt(var + eps)
    if gain is not None:
        if len(gain.shape) != 1 or gain.shape[0] != x.shape[1]:
            raise ShapeError(f"layer_norm: gain shape {gain.shape} does not match {x.shape}")
        out = out * gain.array[None, :]
    if bias is not None:
        if len(bias.shape) != 1 or bias.shape[0] != x.shape[1]:
            raise ShapeError(f"layer_norm: bias shape {bias.shape} does not match {x.shape}")
        out = out + bias.array[None, :]
    return Tensor(out)


def elementwise_max(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Elementwise maximum of two same-shape tensors.

    Returns ``(values, winner_mask)`` where the mask is 1.0 where the
    second operand strictly won and 0.0 otherwise, so ties resolve to
    the first operand. The mask makes the max subgradient deterministic.
    """
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_max: shapes differ: {a.shape} vs {b.shape}")
    mask = (b.array > a.array).astype(np.float64)
    return Tensor(np.maximum(a.array, b.array)), Tensor(mask)


def sigmoid(x: Tensor) -> Tensor:
    return Tensor(1.0 / (1.0 + np.exp(-x.array)))


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.array, 0.0))


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-3) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Test oracle only; O(2n) evaluations of ``f``.
    """
    if not (1e-5 <= h <= 1e-3):
        raise ValueError(f"finite_diff_grad: h must lie in [1e-5, 1e-3], got {h}")
    base = x.array
    grad = np.zeros(base.shape, dtype=np.float64)
    flat_grad = grad.reshape(-1)
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = float(f(Tensor(plus, shape=base.shape)))
        fm = float(f(Tensor(minus, shape=base.shape)))
        flat_grad[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad)


def grad_sum_fusion(upstream: Tensor) -> tuple[Tensor, Tensor]:
    """Input gradients of (a + b): the upstream gradient flows to both."""
    return upstream, upstream


def grad_concat_fusion(upstream: Tensor, first_rows: int) -> tuple[Tensor, Tensor]:
    """Input gradients of a row concatenation, split at ``first_rows``."""
    _require_2d(upstream, "grad_concat_fusion")
    if not (0 < first_rows < upstream.shape[0]):
        raise ShapeError(
            f"grad_concat_fusion: split {first_rows} outside rows of {upstream.shape}"
        )
    return Tensor(upstream.array[:first_rows]), Tensor(upstream.array[first_rows:])


def grad_elementwise_max(winner_mask: Tensor, upstream: Tensor) -> tuple[Tensor, Tensor]:
    """Route the upstream gradient to whichever operand won the max."""
    if winner_mask.shape != upstream.shape:
        raise ShapeError(
            f"grad_elementwise_max: shapes differ: {winner_mask.shape} vs {upstream.shape}"
        )
    return (
        Tensor(upstream.array * (1.0 - winner_mask.array)),
        Tensor(upstream.array * winner_mask.array),
    )


def grad_affinity(f: Tensor, t: Tensor, upstream: Tensor) -> tuple[Tensor, Tensor]:
    """Input gradients of the similarity map S = f t^T."""
    _require_2d(f, "grad_affinity")
    _require_2d(t, "grad_affinity")
    if upstream.shape != (f.shape[0], t.shape[0]):
        raise ShapeError(
            f"grad_affinity: upstream shape {upstream.shape} does not match "
            f"{(f.shape[0], t.shape[0])}"
        )
    return matmul(upstream, t), matmul(transpose(upstream), f)
