"""Trainable parameters, LSTM primitives, Adam, gradient checking, and the
on-disk parameter container."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .tensor import (
    ConfigError,
    Rng,
    Tape,
    Tensor,
    UsageError,
    _accumulate,
    active_tape,
    dropout,
)


class SerializationError(RuntimeError):
    pass


class Parameter:
    """A named tensor plus its Adam moment accumulators."""

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.tensor = Tensor(values, requires=True)
        self.m = np.zeros_like(self.tensor.values)
        self.v = np.zeros_like(self.tensor.values)
        self.steps = 0

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad


def uniform_init(shape, fan_in: int, rng: Rng) -> np.ndarray:
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class ParameterStore:
    """Insertion-ordered collection of parameters, keyed by unique name."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        p = Parameter(name, np.asarray(values, dtype=np.float64))
        self._params[name] = p
        return p

    def uniform(self, name: str, shape, fan_in: int, rng: Rng) -> Parameter:
        return self.add(name, uniform_init(shape, fan_in, rng))

    def zeros(self, name: str, shape) -> Parameter:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.values.copy() for p in self}

    def restore(self, snap: dict[str, np.ndarray]):
        for p in self:
            p.tensor.values = snap[p.name].copy()

    def checksum(self) -> float:
        return float(sum(np.abs(p.values).sum() for p in self))


class LstmWeights:
    """One direction of one LSTM layer.  Gate order in the 4h block: i,f,g,o.

    Forget-gate bias starts at 1.0; matrices are uniform in
    [-sqrt(3/fan_in), +sqrt(3/fan_in)].
    """

    def __init__(self, store: ParameterStore, prefix: str, input_dim: int,
                 hidden_dim: int, rng: Rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.wx = store.uniform(f"{prefix}.wx", (input_dim, 4 * hidden_dim), input_dim, rng)
        self.wh = store.uniform(f"{prefix}.wh", (hidden_dim, 4 * hidden_dim), hidden_dim, rng)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0
        self.b = store.add(f"{prefix}.b", b)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, w: LstmWeights):
    """One standard LSTM cell update over a batch of rows.

    The whole cell is a single tape node: per-sentence training spends most
    of its time here, and fusing the ~14 primitive ops into one closed-form
    backward pass removes most of that overhead.
    """
    hd = w.hidden_dim
    wx, wh, b = w.wx.tensor, w.wh.tensor, w.b.tensor
    z = x.values @ wx.values + h_prev.values @ wh.values + b.values
    i = _sigmoid_np(z[:, :hd])
    f = _sigmoid_np(z[:, hd:2 * hd])
    g = np.tanh(z[:, 2 * hd:3 * hd])
    o = _sigmoid_np(z[:, 3 * hd:])
    cv = f * c_prev.values + i * g
    th = np.tanh(cv)
    h_out = Tensor(o * th)
    c_out = Tensor(cv)

    tape = active_tape()
    inputs = (x, h_prev, c_prev, wx, wh, b)
    if tape is None or not any(t.requires for t in inputs):
        return h_out, c_out
    h_out.requires = True
    c_out.requires = True

    def run(gh, gc):
        dc = gh * (o * (1.0 - th * th))
        if gc is not None:
            dc += gc
        dz = np.concatenate([
            (dc * g) * (i * (1.0 - i)),
            (dc * c_prev.values) * (f * (1.0 - f)),
            (dc * i) * (1.0 - g * g),
            (gh * th) * (o * (1.0 - o)),
        ], axis=1)
        if x.requires:
            _accumulate(x, dz @ wx.values.T)
        if h_prev.requires:
            _accumulate(h_prev, dz @ wh.values.T)
        if c_prev.requires:
            _accumulate(c_prev, dc * f)
        if wx.requires:
            _accumulate(wx, x.values.T @ dz)
        if wh.requires:
            _accumulate(wh, h_prev.values.T @ dz)
        if b.requires:
            _accumulate(b, dz.sum(axis=0))

    # Two nodes share one backward: in reverse order the h node fires first
    # and folds in c_out.grad; the c node only acts in the rare case where
    # the cell state is read downstream but the hidden state is not.
    zero_h = np.zeros_like(h_out.values)
    tape.register(c_out, inputs,
                  lambda gc: run(zero_h, gc) if h_out.grad is None else None)
    tape.register(h_out, inputs, lambda gh: run(gh, c_out.grad))
    return h_out, c_out


def _sigmoid_np(z):
    return 1.0 / (1.0 + np.exp(-z))


def run_lstm_layer(xs, w: LstmWeights, p: float, rng: Rng, training: bool,
                   h0: Tensor | None = None, c0: Tensor | None = None):
    """Run one direction over a step list of (B, d) tensors.

    Dropout is applied to the input and the recurrent hidden state at every
    step.  Returns the list of hidden states, one per step.
    """
    batch = xs[0].values.shape[0]
    if h0 is None:
        h0 = Tensor(np.zeros((batch, w.hidden_dim)))
    if c0 is None:
        c0 = Tensor(np.zeros((batch, w.hidden_dim)))
    h, c = h0, c0
    outs = []
    for x in xs:
        x = dropout(x, p, rng, training)
        h_in = dropout(h, p, rng, training)
        h, c = lstm_step(x, h_in, c, w)
        outs.append(h)
    return outs


def run_lstm_stack(xs, layers, p: float, rng: Rng, training: bool,
                   c0s=None):
    """Stacked unidirectional LSTM; layer n+1 consumes layer n's outputs."""
    outs = xs
    for li, w in enumerate(layers):
        c0 = c0s[li] if c0s is not None else None
        outs = run_lstm_layer(outs, w, p, rng, training, c0=c0)
    return outs


class Adam:
    """Adam with bias correction; paper-default hyperparameters."""

    def __init__(self, store: ParameterStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._buffers: dict[str, np.ndarray] = {}

    def step(self):
        if all(p.grad is None for p in self.store):
            raise UsageError("adam step with no gradients; run a backward pass first")
        for p in self.store:
            g = p.grad
            p.steps += 1
            if g is None:
                if not np.any(p.m):
                    continue  # zero gradient and zero momentum: exact no-op
                p.m *= self.beta1
                p.v *= self.beta2
            else:
                scratch = self._scratch(p)
                p.m *= self.beta1
                np.multiply(g, 1 - self.beta1, out=scratch)
                p.m += scratch
                p.v *= self.beta2
                np.multiply(g, g, out=scratch)
                scratch *= 1 - self.beta2
                p.v += scratch
            scratch = self._scratch(p)
            np.divide(p.v, 1 - self.beta2 ** p.steps, out=scratch)
            np.sqrt(scratch, out=scratch)
            scratch += self.eps
            denom = scratch
            update = np.divide(p.m, 1 - self.beta1 ** p.steps)
            update /= denom
            update *= self.lr
            p.tensor.values = p.values - update
            p.tensor.grad = None

    def _scratch(self, p) -> np.ndarray:
        buf = self._buffers.get(p.name)
        if buf is None or buf.shape != p.values.shape:
            buf = np.empty_like(p.values)
            self._buffers[p.name] = buf
        return buf


def grad_check(f, params, h: float = 1e-5) -> float:
    """Compare tape gradients of scalar-valued `f` against central finite
    differences over every component of `params`.

    Returns the worst per-parameter relative error
    ||analytic - numeric|| / max(||analytic||, ||numeric||).
    """
    params = list(params)
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {p.name: (p.grad.copy() if p.grad is not None
                         else np.zeros_like(p.values)) for p in params}
    for p in params:
        p.tensor.grad = None

    worst = 0.0
    for p in params:
        flat = p.tensor.values.reshape(-1)
        numeric = np.zeros_like(flat)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(f().values)
            flat[idx] = orig - h
            fm = float(f().values)
            flat[idx] = orig
            numeric[idx] = (fp - fm) / (2 * h)
        a = analytic[p.name].reshape(-1)
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if denom > 0:
            worst = max(worst, np.linalg.norm(a - numeric) / denom)
    return worst


MAGIC = b"SPNC1\x00"


def save_container(path: str, arrays: dict[str, np.ndarray], extra: dict):
    """Write a manifest + flat little-endian float64 container atomically."""
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    header = json.dumps({"manifest": manifest, "extra": extra}).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_container(path: str):
    """Read a container; returns (arrays, extra)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise SerializationError(f"{path}: not a parameter container")
        raw = fh.read(8)
        if len(raw) != 8:
            raise SerializationError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<Q", raw)
        hraw = fh.read(hlen)
        if len(hraw) != hlen:
            raise SerializationError(f"{path}: truncated header")
        try:
            header = json.loads(hraw.decode("utf-8"))
        except ValueError as e:
            raise SerializationError(f"{path}: bad header json: {e}") from e
        arrays = {}
        for entry in header["manifest"]:
            name = entry["name"]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(8 * count)
            if len(data) != 8 * count:
                raise SerializationError(
                    f"{path}: truncated array for parameter '{name}'")
            arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return arrays, header["extra"]
