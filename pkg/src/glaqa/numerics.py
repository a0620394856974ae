"""Dense float64 tensors with reverse-mode gradient recording.

Every model quantity lives in a :class:`Tensor`. While a :class:`Tape` is
active, differentiable operations append records to it; ``Tape.backward``
replays the records in reverse and accumulates ``grad`` on every tensor
that requires it. With no active tape the same functions run forward-only,
which is the inference path.

Broadcasting is deliberately restricted to scalar-with-tensor: explicit
shapes catch most wiring bugs at the call site instead of three layers up.
"""

from __future__ import annotations

import numpy as np

# Guard against division by a numerically-zero norm.
NORM_EPS = 1e-12


class Tensor:
    """A named, dense, float64 array that can carry a gradient."""

    __slots__ = ("value", "requires_grad", "grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag}, requires_grad={self.requires_grad})"

    # Small operator sugar; everything routes through the module functions
    # so recording stays in one place.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value, name=None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value, name=None) -> Tensor:
    return Tensor(value, requires_grad=False, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives; a context manager.

    Records are appended in execution order, so the list itself is a
    topological order of the subgraph and one reverse sweep visits each
    record exactly once.
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every recorded tensor reachable from ``loss``."""
        if loss.value.size != 1:
            raise ValueError(
                f"backward: loss must be scalar, got shape {loss.value.shape}"
            )
        loss.grad = np.ones_like(loss.value)
        for out, inputs, backfn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for t, gt in zip(inputs, backfn(g)):
                if gt is None:
                    continue
                t.grad = gt if t.grad is None else t.grad + gt


def backward(tape: Tape, loss: Tensor):
    tape.backward(loss)


def _rec(out: Tensor, inputs, backfn):
    out.requires_grad = True
    _ACTIVE[-1]._records.append((out, inputs, backfn))


def _tracing(*tensors) -> bool:
    return bool(_ACTIVE) and any(t.requires_grad for t in tensors)


def _scalar_or_same(op, a, b):
    if a.value.shape != b.value.shape and a.value.ndim != 0 and b.value.ndim != 0:
        raise ValueError(f"{op}: incompatible shapes {a.value.shape} and {b.value.shape}")


def _unbroadcast(g, shape):
    # Only scalar broadcasting is allowed, so a mismatch means the operand
    # was a scalar and its gradient is the total.
    if g.shape != shape:
        return np.asarray(np.sum(g), dtype=np.float64).reshape(shape)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("add", a, b)
    out = Tensor(a.value + b.value)
    if _tracing(a, b):
        sa, sb = a.value.shape, b.value.shape
        _rec(out, (a, b), lambda g: (
            _unbroadcast(g, sa) if a.requires_grad else None,
            _unbroadcast(g, sb) if b.requires_grad else None,
        ))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("sub", a, b)
    out = Tensor(a.value - b.value)
    if _tracing(a, b):
        sa, sb = a.value.shape, b.value.shape
        _rec(out, (a, b), lambda g: (
            _unbroadcast(g, sa) if a.requires_grad else None,
            _unbroadcast(-g, sb) if b.requires_grad else None,
        ))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("mul", a, b)
    out = Tensor(a.value * b.value)
    if _tracing(a, b):
        av, bv = a.value, b.value
        _rec(out, (a, b), lambda g: (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        ))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("div", a, b)
    out = Tensor(a.value / b.value)
    if _tracing(a, b):
        av, bv = a.value, b.value
        _rec(out, (a, b), lambda g: (
            _unbroadcast(g / bv, av.shape) if a.requires_grad else None,
            _unbroadcast(-g * av / (bv * bv), bv.shape) if b.requires_grad else None,
        ))
    return out


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.value * c)
    if _tracing(x):
        _rec(out, (x,), lambda g: (g * c,))
    return out


def mul_const(x, arr) -> Tensor:
    """Elementwise product with a fixed array (e.g. a dropout mask)."""
    x = as_tensor(x)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != x.value.shape:
        raise ValueError(f"mul_const: incompatible shapes {x.value.shape} and {arr.shape}")
    out = Tensor(x.value * arr)
    if _tracing(x):
        _rec(out, (x,), lambda g: (g * arr,))
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ValueError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = Tensor(av @ bv)
    if _tracing(a, b):
        def backfn(g):
            ga = gb = None
            if a.requires_grad:
                if av.ndim == 2 and bv.ndim == 2:
                    ga = g @ bv.T
                elif av.ndim == 2:  # (p,q) @ (q,) -> (p,)
                    ga = np.outer(g, bv)
                elif bv.ndim == 2:  # (p,) @ (p,r) -> (r,)
                    ga = bv @ g
                else:  # (n,) @ (n,) -> scalar
                    ga = g * bv
            if b.requires_grad:
                if av.ndim == 2 and bv.ndim == 2:
                    gb = av.T @ g
                elif av.ndim == 2:
                    gb = av.T @ g
                elif bv.ndim == 2:
                    gb = np.outer(av, g)
                else:
                    gb = g * av
            return ga, gb
        _rec(out, (a, b), backfn)
    return out


def dot(u, v) -> Tensor:
    u, v = as_tensor(u), as_tensor(v)
    if u.value.ndim != 1 or v.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ValueError(f"dot: incompatible shapes {u.value.shape} and {v.value.shape}")
    return matmul(u, v)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.tanh(x.value))
    if _tracing(x):
        ov = out.value
        _rec(out, (x,), lambda g: ((1.0 - ov * ov) * g,))
    return out


def _sigmoid_values(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(_sigmoid_values(np.asarray(x.value)))
    if _tracing(x):
        ov = out.value
        _rec(out, (x,), lambda g: (ov * (1.0 - ov) * g,))
    return out


def relu(x) -> Tensor:
    # Subgradient at 0 is taken as 0.
    x = as_tensor(x)
    out = Tensor(np.maximum(x.value, 0.0))
    if _tracing(x):
        mask = (x.value > 0.0).astype(np.float64)
        _rec(out, (x,), lambda g: (mask * g,))
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: empty input")
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis))
    if bool(_ACTIVE) and any(p.requires_grad for p in parts):
        sizes = [p.value.shape[axis] for p in parts]
        offsets = np.cumsum(sizes)[:-1]
        def backfn(g):
            pieces = np.split(g, offsets, axis=axis)
            return tuple(
                pieces[i] if parts[i].requires_grad else None
                for i in range(len(parts))
            )
        _rec(out, tuple(parts), backfn)
    return out


def sum(x, axis=None) -> Tensor:  # noqa: A001 - numpy-style reduction name
    x = as_tensor(x)
    out = Tensor(np.sum(x.value, axis=axis))
    if _tracing(x):
        shape = x.value.shape
        def backfn(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(np.float64, copy=True),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(np.float64, copy=True),)
        _rec(out, (x,), backfn)
    return out


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / n)


def rowmax(x) -> Tensor:
    """Coordinate-wise maximum over the rows of a 2-D array."""
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ValueError(f"rowmax: expected 2-D input, got shape {x.value.shape}")
    idx = np.argmax(x.value, axis=0)
    out = Tensor(x.value[idx, np.arange(x.value.shape[1])])
    if _tracing(x):
        shape = x.value.shape
        def backfn(g):
            gx = np.zeros(shape)
            gx[idx, np.arange(shape[1])] = g
            return (gx,)
        _rec(out, (x,), backfn)
    return out


def softmax(x) -> Tensor:
    """Exp-normalization of a vector, with max-subtraction for overflow safety."""
    x = as_tensor(x)
    if x.value.ndim != 1 or x.value.size == 0:
        raise ValueError(f"softmax: expected a non-empty vector, got shape {x.value.shape}")
    shifted = x.value - np.max(x.value)
    e = np.exp(shifted)
    out = Tensor(e / np.sum(e))
    if _tracing(x):
        s = out.value
        _rec(out, (x,), lambda g: (s * (g - np.dot(g, s)),))
    return out


def l2norm(x) -> Tensor:
    x = as_tensor(x)
    n = float(np.linalg.norm(x.value))
    out = Tensor(n)
    if _tracing(x):
        xv = x.value
        safe = max(n, NORM_EPS)
        _rec(out, (x,), lambda g: (float(g) * xv / safe,))
    return out


def rownorms(x) -> Tensor:
    """Euclidean norm of each row of a 2-D array."""
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ValueError(f"rownorms: expected 2-D input, got shape {x.value.shape}")
    n = np.linalg.norm(x.value, axis=1)
    out = Tensor(n)
    if _tracing(x):
        xv = x.value
        safe = np.maximum(n, NORM_EPS)
        _rec(out, (x,), lambda g: ((g / safe)[:, None] * xv,))
    return out


def rowscale(x, s) -> Tensor:
    """Scale row i of a 2-D array by the i-th entry of a vector."""
    x, s = as_tensor(x), as_tensor(s)
    if x.value.ndim != 2 or s.value.shape != (x.value.shape[0],):
        raise ValueError(f"rowscale: incompatible shapes {x.value.shape} and {s.value.shape}")
    out = Tensor(x.value * s.value[:, None])
    if _tracing(x, s):
        xv, sv = x.value, s.value
        _rec(out, (x, s), lambda g: (
            g * sv[:, None] if x.requires_grad else None,
            np.sum(g * xv, axis=1) if s.requires_grad else None,
        ))
    return out


def norm_scale(x, target: float) -> Tensor:
    """Rescale a vector to Euclidean norm ``target``.

    A numerically-zero vector passes through unchanged and its gradient is
    the identity; there is no direction to normalize.
    """
    x = as_tensor(x)
    if x.value.ndim != 1:
        raise ValueError(f"norm_scale: expected a vector, got shape {x.value.shape}")
    n = float(np.linalg.norm(x.value))
    if n <= NORM_EPS:
        out = Tensor(x.value.copy())
        if _tracing(x):
            _rec(out, (x,), lambda g: (g.copy(),))
        return out
    s = float(target) / n
    out = Tensor(x.value * s)
    if _tracing(x):
        unit = x.value / n
        _rec(out, (x,), lambda g: (s * (g - np.dot(g, unit) * unit),))
    return out


def norm_scale_rows(x, target: float) -> Tensor:
    """Rescale every row of a 2-D array to Euclidean norm ``target``.

    Zero rows pass through with identity gradient, as in :func:`norm_scale`.
    """
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ValueError(f"norm_scale_rows: expected 2-D input, got shape {x.value.shape}")
    n = np.linalg.norm(x.value, axis=1)
    live = n > NORM_EPS
    s = np.ones_like(n)
    s[live] = float(target) / n[live]
    out = Tensor(x.value * s[:, None])
    if _tracing(x):
        units = np.zeros_like(x.value)
        units[live] = x.value[live] / n[live, None]
        def backfn(g):
            proj = np.sum(g * units, axis=1)
            return (s[:, None] * (g - proj[:, None] * units),)
        _rec(out, (x,), backfn)
    return out


def tile_rows(v, n: int) -> Tensor:
    """Stack ``n`` copies of a vector as rows."""
    v = as_tensor(v)
    if v.value.ndim != 1:
        raise ValueError(f"tile_rows: expected a vector, got shape {v.value.shape}")
    out = Tensor(np.tile(v.value, (n, 1)))
    if _tracing(v):
        _rec(out, (v,), lambda g: (np.sum(g, axis=0),))
    return out


def gather_rows(m, ids) -> Tensor:
    """Select rows of a 2-D array by index (embedding-style lookup)."""
    m = as_tensor(m)
    ids = np.asarray(ids, dtype=np.intp)
    if m.value.ndim != 2:
        raise ValueError(f"gather_rows: expected 2-D input, got shape {m.value.shape}")
    out = Tensor(m.value[ids])
    if _tracing(m):
        shape = m.value.shape
        def backfn(g):
            gm = np.zeros(shape)
            np.add.at(gm, ids, g)
            return (gm,)
        _rec(out, (m,), backfn)
    return out


def cosine_sim(u, v) -> Tensor:
    """Cosine similarity of two vectors; errors on degenerate (near-zero) input."""
    u, v = as_tensor(u), as_tensor(v)
    if u.value.ndim != 1 or v.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ValueError(
            f"cosine_sim: dimension mismatch {u.value.shape} and {v.value.shape}"
        )
    if np.linalg.norm(u.value) <= NORM_EPS or np.linalg.norm(v.value) <= NORM_EPS:
        raise ValueError("degenerate vector in cosine")
    return div(dot(u, v), mul(l2norm(u), l2norm(v)))


def _loss_value(f) -> float:
    out = f()
    return float(out.value) if isinstance(out, Tensor) else float(out)


def grad_check(f, params, h: float = 1e-5) -> dict:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must be a pure scalar function of the current values of ``params``
    (a sequence of Tensors). Values are perturbed in place one coordinate at
    a time. Returns the max relative error per parameter, keyed by tensor
    name (or a positional key when unnamed); relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [
        np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params
    ]
    errors = {}
    for k, p in enumerate(params):
        flat = p.value.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _loss_value(f)
            flat[i] = orig - h
            fm = _loss_value(f)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
        a = analytic[k].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        key = p.name if p.name is not None else f"param{k}"
        errors[key] = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
    return errors
