"""Dense float64 tensors with a reverse-mode gradient tape.

Everything in the package that needs gradients goes through this module.
Tensors are thin wrappers around numpy arrays; operations record backward
closures on the active tape (define-by-run, one tape per training example).
When no tape is active the same functions run as plain numpy, which is what
evaluation-mode code paths use.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


class UsageError(RuntimeError):
    """An operation was called outside its contract."""


class Rng:
    """Seeded random source; identical seeds give identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)

    def random(self, shape=None):
        return self._gen.random(shape)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None):
        return int(self._gen.integers(low, high))

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, seq, p=None):
        idx = self._gen.choice(len(seq), p=p)
        return seq[int(idx)]

    def fork(self) -> "Rng":
        """Derive an independent child stream (consumes one draw)."""
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


_ACTIVE_TAPES: list["Tape"] = []


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    __slots__ = ("values", "grad", "requires")

    def __init__(self, values, requires: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires = requires

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires={self.requires})"


class Tape:
    """Ordered record of operations; backward replays them in reverse."""

    def __init__(self):
        self.nodes = []    # (output, backward_fn)
        self.touched = []  # every tensor that participated, for grad zeroing

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def register(self, out: Tensor, inputs, fn):
        self.nodes.append((out, fn))
        self.touched.append(out)
        self.touched.extend(inputs)

    def zero_grads(self):
        for t in self.touched:
            t.grad = None

    def backward(self, loss: Tensor):
        """Accumulate gradients of `loss` into every tensor on the tape.

        Gradient slots are cleared first, so repeated calls on the same tape
        (e.g. for per-output sensitivity analysis) do not mix results.
        """
        if loss.values.size != 1:
            raise UsageError("backward requires a scalar loss")
        self.zero_grads()
        loss.grad = np.ones_like(loss.values)
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)


def _accumulate(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=float)
    else:
        t.grad += g


def _record(out: Tensor, inputs, fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires for t in inputs):
        out.requires = True
        tape.register(out, inputs, fn)
    return out


def constant(values) -> Tensor:
    return Tensor(values)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul needs 1-D/2-D operands, got {av.shape} x {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
    out = Tensor(av @ bv)

    def fn(g):
        g2 = g.reshape(1 if av.ndim == 1 else av.shape[0],
                       1 if bv.ndim == 1 else bv.shape[-1])
        if a.requires:
            ga = g2 @ (bv.reshape(bv.shape[0], -1)).T
            _accumulate(a, ga.reshape(av.shape))
        if b.requires:
            gb = (av.reshape(-1, av.shape[-1])).T @ g2
            _accumulate(b, gb.reshape(bv.shape))

    return _record(out, (a, b), fn)


def _broadcast_row(av, bv):
    # (m, n) + (n,) row broadcast is the one broadcast we allow
    return av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.shape != bv.shape and not _broadcast_row(av, bv):
        raise ShapeError(f"add shapes disagree: {av.shape} vs {bv.shape}")
    out = Tensor(av + bv)

    def fn(g):
        if a.requires:
            _accumulate(a, g)
        if b.requires:
            _accumulate(b, g.sum(axis=0) if bv.shape != av.shape else g)

    return _record(out, (a, b), fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.shape != bv.shape and not _broadcast_row(av, bv):
        raise ShapeError(f"sub shapes disagree: {av.shape} vs {bv.shape}")
    out = Tensor(av - bv)

    def fn(g):
        if a.requires:
            _accumulate(a, g)
        if b.requires:
            _accumulate(b, -(g.sum(axis=0) if bv.shape != av.shape else g))

    return _record(out, (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"mul shapes disagree: {av.shape} vs {bv.shape}")
    out = Tensor(av * bv)

    def fn(g):
        if a.requires:
            _accumulate(a, g * bv)
        if b.requires:
            _accumulate(b, g * av)

    return _record(out, (a, b), fn)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values * c)

    def fn(g):
        if a.requires:
            _accumulate(a, g * c)

    return _record(out, (a,), fn)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0  # subgradient 0 at exactly 0
    out = Tensor(np.where(mask, a.values, 0.0))

    def fn(g):
        if a.requires:
            _accumulate(a, g * mask)

    return _record(out, (a,), fn)


def tanh(a: Tensor) -> Tensor:
    tv = np.tanh(a.values)
    out = Tensor(tv)

    def fn(g):
        if a.requires:
            _accumulate(a, g * (1.0 - tv * tv))

    return _record(out, (a,), fn)


def sigmoid(a: Tensor) -> Tensor:
    sv = 1.0 / (1.0 + np.exp(-a.values))
    out = Tensor(sv)

    def fn(g):
        if a.requires:
            _accumulate(a, g * sv * (1.0 - sv))

    return _record(out, (a,), fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    base = list(tensors[0].values.shape)
    for t in tensors[1:]:
        s = list(t.values.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(
                f"concat shapes disagree off axis {axis}: "
                f"{tensors[0].values.shape} vs {t.values.shape}")
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _record(out, tuple(tensors), fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.values.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) outside axis {axis} of {a.values.shape}")
    sl = [slice(None)] * a.values.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(a.values[sl])

    def fn(g):
        if a.requires:
            full = np.zeros_like(a.values)
            full[sl] = g
            _accumulate(a, full)

    return _record(out, (a,), fn)


def split(a: Tensor, sizes, axis: int = 0):
    if sum(sizes) != a.values.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis {axis} of {a.values.shape}")
    parts = []
    off = 0
    for s in sizes:
        parts.append(narrow(a, axis, off, s))
        off += s
    return parts


def rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.values[idx])

    def fn(g):
        if a.requires:
            if a.grad is None:
                a.grad = np.zeros_like(a.values)
            np.add.at(a.grad, idx, g)

    return _record(out, (a,), fn)


def pick_sum(a: Tensor, entries) -> Tensor:
    """Weighted sum of individual entries of a 2-D tensor.

    `entries` is a list of (row, col, coefficient) triples; the result is a
    scalar.  This is the sparse hook the structured losses use: their
    gradient w.r.t. the score table is +/-1 on a handful of cells.
    """
    if a.values.ndim != 2:
        raise ShapeError(f"pick_sum needs a 2-D tensor, got {a.values.shape}")
    ri = np.asarray([e[0] for e in entries], dtype=np.intp)
    ci = np.asarray([e[1] for e in entries], dtype=np.intp)
    co = np.asarray([e[2] for e in entries], dtype=np.float64)
    out = Tensor((a.values[ri, ci] * co).sum() if entries else 0.0)

    def fn(g):
        if a.requires and len(co):
            if a.grad is None:
                a.grad = np.zeros_like(a.values)
            np.add.at(a.grad, (ri, ci), g * co)

    return _record(out, (a,), fn)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.values.sum())

    def fn(g):
        if a.requires:
            _accumulate(a, np.full_like(a.values, float(g)))

    return _record(out, (a,), fn)


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values + c)

    def fn(g):
        if a.requires:
            _accumulate(a, g)

    return _record(out, (a,), fn)


def dropout(x: Tensor, p: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: train-time scaling by 1/(1-p), identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.values.shape) >= p) / (1.0 - p)
    out = Tensor(x.values * mask)

    def fn(g):
        if x.requires:
            _accumulate(x, g * mask)

    return _record(out, (x,), fn)
