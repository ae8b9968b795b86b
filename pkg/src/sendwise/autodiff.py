"""Dense f64 tensor kernel with tape-based reverse-mode differentiation.

The op set is exactly what the slot-CTR network needs: matrix products
(plain and leading-axis batched), a scaled softmax, rotary pairwise row
rotation, row-wise l2 normalization, and a handful of elementwise
primitives. Tensors are immutable values; a ComputationTape records every
primitive applied so the forward pass can be replayed bit-identically and
differentiated in one reverse sweep.

A tape is confined to a single thread for its lifetime. Tensors may be
shared freely across threads.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import NonFiniteInputError, ShapeMismatchError

__all__ = ["Tensor", "ComputationTape"]


def _as_value(values, *, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim > 3:
        raise ShapeMismatchError(f"{what}: at most 3 extents supported, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{what}: input contains NaN or Inf")
    return arr


# ---------------------------------------------------------------------------
# forward kernels
#
# Each op has a single forward function used both when recording and when
# replaying a tape, so replay is bit-identical by construction.
# ---------------------------------------------------------------------------

def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _fw_matmul(vals, **_):
    return np.matmul(vals[0], vals[1])


def _fw_add(vals, **_):
    return vals[0] + vals[1]


def _fw_mul(vals, **_):
    return vals[0] * vals[1]


def _fw_add_row(vals, **_):
    return vals[0] + vals[1]


def _fw_scale(vals, *, factor, **_):
    return vals[0] * factor


def _fw_sigmoid(vals, **_):
    return expit(vals[0])


def _fw_relu(vals, **_):
    return np.maximum(vals[0], 0.0)


def _fw_transpose(vals, **_):
    return np.ascontiguousarray(_swap(vals[0]))


def _fw_concat(vals, *, axis, **_):
    return np.concatenate(vals, axis=axis)


def _fw_softmax_scaled(vals, *, scale, **_):
    z = vals[0] * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _rope_angles(n_rows: int, width: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    pair = np.arange(width // 2, dtype=np.float64)
    freq = base ** (-2.0 * pair / width)
    theta = np.arange(n_rows, dtype=np.float64)[:, None] * freq[None, :]
    return np.cos(theta), np.sin(theta)


def _fw_rope_rotate(vals, *, base, **_):
    x = vals[0]
    d = x.shape[-1]
    cos, sin = _rope_angles(x.shape[-2], d, base)
    xe, xo = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos
    return out


def _fw_l2_normalize_rows(vals, *, eps, **_):
    x = vals[0]
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, eps)


def _fw_mean_bce(vals, *, clip, **_):
    p = np.clip(vals[0], clip, 1.0 - clip)
    y = vals[1]
    return np.asarray(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _fw_sum_all(vals, **_):
    return np.asarray(vals[0].sum())


def _fw_reshape(vals, *, shape, **_):
    return np.ascontiguousarray(vals[0].reshape(shape))


_FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "mul": _fw_mul,
    "add_row": _fw_add_row,
    "scale": _fw_scale,
    "sigmoid": _fw_sigmoid,
    "relu": _fw_relu,
    "transpose": _fw_transpose,
    "concat": _fw_concat,
    "softmax_scaled": _fw_softmax_scaled,
    "rope_rotate": _fw_rope_rotate,
    "l2_normalize_rows": _fw_l2_normalize_rows,
    "mean_bce": _fw_mean_bce,
    "sum_all": _fw_sum_all,
    "reshape": _fw_reshape,
}


# ---------------------------------------------------------------------------
# backward kernels: grad wrt output -> grads wrt each parent (None = skip)
# ---------------------------------------------------------------------------

def _bw_matmul(g, out, vals, **_):
    a, b = vals
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 3 and b.ndim == 2:
        return g @ b.T, np.einsum("nij,nik->jk", a, g)
    # batched @ batched
    return g @ _swap(b), _swap(a) @ g


def _bw_add(g, out, vals, **_):
    return g, g


def _bw_mul(g, out, vals, **_):
    return g * vals[1], g * vals[0]


def _bw_add_row(g, out, vals, **_):
    return g, g.sum(axis=tuple(range(g.ndim - 1)))


def _bw_scale(g, out, vals, *, factor, **_):
    return (g * factor,)


def _bw_sigmoid(g, out, vals, **_):
    return (g * out * (1.0 - out),)


def _bw_relu(g, out, vals, **_):
    return (g * (vals[0] > 0.0),)


def _bw_transpose(g, out, vals, **_):
    return (_swap(g),)


def _bw_concat(g, out, vals, *, axis, **_):
    sizes = np.cumsum([v.shape[axis] for v in vals[:-1]])
    return tuple(np.ascontiguousarray(p) for p in np.split(g, sizes, axis=axis))


def _bw_softmax_scaled(g, out, vals, *, scale, **_):
    inner = (g * out).sum(axis=-1, keepdims=True)
    return (scale * out * (g - inner),)


def _bw_rope_rotate(g, out, vals, *, base, **_):
    d = g.shape[-1]
    cos, sin = _rope_angles(g.shape[-2], d, base)
    ge, go = g[..., 0::2], g[..., 1::2]
    gx = np.empty_like(g)
    gx[..., 0::2] = ge * cos + go * sin
    gx[..., 1::2] = -ge * sin + go * cos
    return (gx,)


def _bw_l2_normalize_rows(g, out, vals, *, eps, **_):
    x = vals[0]
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    inv = 1.0 / denom
    live = norm > eps  # below eps the map is x/eps, a plain scaling
    proj = (g * x).sum(axis=-1, keepdims=True) * inv**3
    return (g * inv - live * x * proj,)


def _bw_mean_bce(g, out, vals, *, clip, **_):
    p, y = vals
    pc = np.clip(p, clip, 1.0 - clip)
    inside = (p > clip) & (p < 1.0 - clip)
    gp = g * inside * (pc - y) / (pc * (1.0 - pc)) / p.size
    return gp, None


def _bw_sum_all(g, out, vals, **_):
    return (np.broadcast_to(g, vals[0].shape).copy(),)


def _bw_reshape(g, out, vals, **_):
    return (np.ascontiguousarray(g.reshape(vals[0].shape)),)


_BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "mul": _bw_mul,
    "add_row": _bw_add_row,
    "scale": _bw_scale,
    "sigmoid": _bw_sigmoid,
    "relu": _bw_relu,
    "transpose": _bw_transpose,
    "concat": _bw_concat,
    "softmax_scaled": _bw_softmax_scaled,
    "rope_rotate": _bw_rope_rotate,
    "l2_normalize_rows": _bw_l2_normalize_rows,
    "mean_bce": _bw_mean_bce,
    "sum_all": _bw_sum_all,
    "reshape": _bw_reshape,
}


class _Node:
    __slots__ = ("op", "parents", "value", "kwargs", "requires_grad", "param_name")

    def __init__(self, op, parents, value, kwargs, requires_grad, param_name=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.kwargs = kwargs
        self.requires_grad = requires_grad
        self.param_name = param_name


class Tensor:
    """Immutable f64 value produced on a tape.

    Supports ``@``, ``+`` and ``*`` against tensors of the same tape.
    """

    __slots__ = ("_tape", "_idx")

    def __init__(self, tape: "ComputationTape", idx: int):
        self._tape = tape
        self._idx = idx

    @property
    def data(self) -> np.ndarray:
        return self._tape._nodes[self._idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self._tape.matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return self._tape.add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return self._tape.mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self._idx})"


class ComputationTape:
    """Ordered record of primitive ops; supports replay and reverse sweep.

    Appending ops already yields a topological order, so the backward pass
    is a single reverse iteration that touches each node exactly once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[str, int] = {}

    # -- leaves ------------------------------------------------------------

    def parameter(self, name: str, values) -> Tensor:
        """Register a trainable leaf. The array is copied: later external
        mutation cannot corrupt the recorded forward."""
        if name in self._params:
            raise ShapeMismatchError(f"parameter {name!r} registered twice")
        value = _as_value(values, what=f"parameter {name!r}")
        self._nodes.append(_Node("leaf", (), value.copy(), {}, True, param_name=name))
        self._params[name] = len(self._nodes) - 1
        return Tensor(self, len(self._nodes) - 1)

    def constant(self, values) -> Tensor:
        value = _as_value(values, what="constant")
        self._nodes.append(_Node("leaf", (), value, {}, False))
        return Tensor(self, len(self._nodes) - 1)

    # -- op recording --------------------------------------------------------

    def _record(self, op: str, parents: tuple[Tensor, ...], **kwargs) -> Tensor:
        for p in parents:
            if p._tape is not self:
                raise ShapeMismatchError("operands belong to different tapes")
        vals = [p.data for p in parents]
        value = _FORWARD[op](vals, **kwargs)
        rg = any(self._nodes[p._idx].requires_grad for p in parents)
        self._nodes.append(_Node(op, tuple(p._idx for p in parents), value, kwargs, rg))
        return Tensor(self, len(self._nodes) - 1)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        sa, sb = a.shape, b.shape
        ok = (
            (a.ndim == 2 and b.ndim == 2 and sa[1] == sb[0])
            or (a.ndim == 3 and b.ndim == 2 and sa[2] == sb[0])
            or (a.ndim == 3 and b.ndim == 3 and sa[0] == sb[0] and sa[2] == sb[1])
        )
        if not ok:
            raise ShapeMismatchError(f"matmul: incompatible shapes {sa} x {sb}")
        return self._record("matmul", (a, b))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"add: shape {a.shape} != {b.shape}")
        return self._record("add", (a, b))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"mul: shape {a.shape} != {b.shape}")
        return self._record("mul", (a, b))

    def add_row(self, a: Tensor, row: Tensor) -> Tensor:
        """Broadcast-add a length-d row vector to the last axis of a."""
        if row.ndim != 1 or a.shape[-1] != row.shape[0]:
            raise ShapeMismatchError(f"add_row: row {row.shape} does not fit {a.shape}")
        return self._record("add_row", (a, row))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        return self._record("scale", (a,), factor=float(factor))

    def sigmoid(self, a: Tensor) -> Tensor:
        return self._record("sigmoid", (a,))

    def relu(self, a: Tensor) -> Tensor:
        return self._record("relu", (a,))

    def transpose(self, a: Tensor) -> Tensor:
        """Swap the last two axes."""
        if a.ndim < 2:
            raise ShapeMismatchError("transpose needs at least 2 extents")
        return self._record("transpose", (a,))

    def concat(self, parts: list[Tensor], axis: int = -1) -> Tensor:
        if len(parts) < 2:
            raise ShapeMismatchError("concat needs at least two tensors")
        return self._record("concat", tuple(parts), axis=axis)

    def softmax_scaled(self, a: Tensor, scale: float) -> Tensor:
        """Row-wise softmax of (scale * a) along the last axis, max-subtracted."""
        if scale <= 0:
            raise ShapeMismatchError("softmax_scaled: scale must be positive")
        return self._record("softmax_scaled", (a,), scale=float(scale))

    def rope_rotate(self, a: Tensor, base: float = 10000.0) -> Tensor:
        """Rotate consecutive value pairs of each row; row index is the position.

        Pair j of row i turns by angle i * base**(-2j/d). Per-pair Euclidean
        norms are preserved, and inner products between rotated rows depend
        on positions only through their difference.
        """
        if a.ndim < 2:
            raise ShapeMismatchError("rope_rotate needs at least 2 extents")
        if a.shape[-1] % 2 != 0:
            raise ShapeMismatchError(f"rope_rotate: last extent must be even, got {a.shape[-1]}")
        if base <= 0:
            raise ShapeMismatchError("rope_rotate: base must be positive")
        return self._record("rope_rotate", (a,), base=float(base))

    def l2_normalize_rows(self, a: Tensor, eps: float = 1e-12) -> Tensor:
        """Divide each row by max(its l2 norm, eps); zero rows stay zero."""
        return self._record("l2_normalize_rows", (a,), eps=float(eps))

    def mean_bce(self, pred: Tensor, target: Tensor, clip: float = 1e-12) -> Tensor:
        """Mean binary cross-entropy over every element of pred."""
        if pred.shape != target.shape:
            raise ShapeMismatchError(f"mean_bce: shape {pred.shape} != {target.shape}")
        return self._record("mean_bce", (pred, target), clip=float(clip))

    def sum_all(self, a: Tensor) -> Tensor:
        return self._record("sum_all", (a,))

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        if int(np.prod(shape)) != a.data.size:
            raise ShapeMismatchError(f"reshape: {a.shape} does not hold {shape}")
        if len(shape) > 3:
            raise ShapeMismatchError("reshape: at most 3 extents")
        return self._record("reshape", (a,), shape=tuple(int(s) for s in shape))

    # -- differentiation and replay -----------------------------------------

    def gradients(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar loss.

        Returns d(loss)/d(param) for every registered parameter; parameters
        the loss does not reach get a zero gradient.
        """
        if loss._tape is not self:
            raise ShapeMismatchError("loss tensor belongs to a different tape")
        if loss.data.ndim != 0:
            raise ShapeMismatchError(f"loss must be scalar, got shape {loss.data.shape}")
        adj: dict[int, np.ndarray] = {loss._idx: np.asarray(1.0)}
        for idx in range(loss._idx, -1, -1):
            g = adj.pop(idx, None)
            if g is None:
                continue
            node = self._nodes[idx]
            if node.op == "leaf" or not node.requires_grad:
                if node.param_name is not None:
                    adj[idx] = g  # keep parameter grads around
                continue
            vals = [self._nodes[p].value for p in node.parents]
            parent_grads = _BACKWARD[node.op](g, node.value, vals, **node.kwargs)
            for p_idx, pg in zip(node.parents, parent_grads):
                if pg is None or not self._nodes[p_idx].requires_grad:
                    continue
                if p_idx in adj:
                    adj[p_idx] = adj[p_idx] + pg
                else:
                    adj[p_idx] = pg
        out = {}
        for name, idx in self._params.items():
            g = adj.get(idx)
            node = self._nodes[idx]
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g)
        return out

    def replay(self) -> bool:
        """Recompute every recorded op from the leaves.

        Returns True iff each node's recomputed value equals the recorded
        one bit-for-bit.
        """
        recomputed: list[np.ndarray] = []
        for node in self._nodes:
            if node.op == "leaf":
                recomputed.append(node.value)
                continue
            vals = [recomputed[p] for p in node.parents]
            recomputed.append(_FORWARD[node.op](vals, **node.kwargs))
        return all(np.array_equal(a.value, b) for a, b in zip(self._nodes, recomputed))

    @property
    def parameter_names(self) -> list[str]:
        return list(self._params)

    def __len__(self) -> int:
        return len(self._nodes)
