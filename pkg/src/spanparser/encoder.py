"""Fencepost encoders: full bidirectional LSTM over the sentence, truncated
windows, shuffled far context, and a feedforward window variant.

All variants produce the same FencepostEncoding interface, so the scorer and
decoder never branch on which one is in use.  The windowed variants batch all
fenceposts of a sentence through the LSTM at once (the batch axis is the
fencepost), which keeps the O(n) passes per sentence affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LstmWeights, ParameterStore, run_lstm_stack
from .tensor import ConfigError, Rng, Tensor, UsageError

MAX_POSITION = 60  # position-indexed initializations clamp here


@dataclass
class EncoderVariant:
    kind: str = "full"  # full | truncated | shuffled | feedforward
    k: int = 3
    layers: int = 1     # feedforward only
    mult: int = 1       # feedforward only

    def __post_init__(self):
        if self.kind not in ("full", "truncated", "shuffled", "feedforward"):
            raise ConfigError(f"unknown encoder variant '{self.kind}'")
        if self.kind != "full" and self.k < 1:
            raise ConfigError(f"window size k must be >= 1, got {self.k}")
        if self.kind == "feedforward":
            if self.layers not in (1, 2, 3):
                raise ConfigError(f"feedforward layers must be 1-3, got {self.layers}")
            if self.mult not in (1, 2, 4):
                raise ConfigError(f"feedforward width multiplier must be 1, 2 or 4, "
                                  f"got {self.mult}")


@dataclass
class FencepostEncoding:
    """Forward/backward vectors per fencepost, (n+1, hidden) each."""
    f: Tensor
    b: Tensor
    n: int


def span_repr(enc: FencepostEncoding, i: int, j: int) -> Tensor:
    """r_ij = [f_j - f_i, b_i - b_j], shape (1, 2*hidden)."""
    if not 0 <= i < j <= enc.n:
        raise UsageError(f"invalid span ({i}, {j}) for {enc.n} words")
    fd = T.sub(T.rows(enc.f, [j]), T.rows(enc.f, [i]))
    bd = T.sub(T.rows(enc.b, [i]), T.rows(enc.b, [j]))
    return T.concat([fd, bd], axis=1)


def enumerate_spans(n: int):
    return [(i, j) for i in range(n) for j in range(i + 1, n + 1)]


def all_span_matrix(enc: FencepostEncoding):
    """Representations of every span stacked into one matrix.

    Returns (spans, R) where R has one r_ij row per span, built from a single
    constant difference matrix so the whole scorer runs as two matmuls.
    """
    spans = enumerate_spans(enc.n)
    diff = np.zeros((len(spans), enc.n + 1))
    for row, (i, j) in enumerate(spans):
        diff[row, j] = 1.0
        diff[row, i] = -1.0
    d = Tensor(diff)
    fd = T.matmul(d, enc.f)
    bd = T.scale(T.matmul(d, enc.b), -1.0)
    return spans, T.concat([fd, bd], axis=1)


class SentenceEncoder:
    """Owns the sentence-level encoder parameters for one variant."""

    def __init__(self, store: ParameterStore, input_dim: int, hidden: int,
                 num_layers: int, variant: EncoderVariant, rng: Rng,
                 dropout_p: float = 0.0, pos_dim: int = 50):
        self.input_dim = input_dim
        self.hidden = hidden
        self.num_layers = num_layers
        self.variant = variant
        self.dropout_p = dropout_p
        self.pos_dim = pos_dim
        if variant.kind == "feedforward":
            width = variant.mult * hidden
            self.ff_pos = store.uniform("encoder.ff_pos",
                                        (MAX_POSITION + 1, pos_dim), pos_dim, rng)
            in_dim = 2 * variant.k * input_dim + pos_dim
            self.ff_w = []
            self.ff_b = []
            for li in range(variant.layers):
                self.ff_w.append(store.uniform(f"encoder.ff_w{li}",
                                               (in_dim, width), in_dim, rng))
                self.ff_b.append(store.zeros(f"encoder.ff_b{li}", (width,)))
                in_dim = width
            self.ff_out_w = store.uniform("encoder.ff_out_w",
                                          (in_dim, 2 * hidden), in_dim, rng)
            self.ff_out_b = store.zeros("encoder.ff_out_b", (2 * hidden,))
            return
        self.fwd = []
        self.bwd = []
        for li in range(num_layers):
            d = input_dim if li == 0 else hidden
            self.fwd.append(LstmWeights(store, f"encoder.fwd{li}", d, hidden, rng))
            self.bwd.append(LstmWeights(store, f"encoder.bwd{li}", d, hidden, rng))
        if variant.kind == "truncated":
            self.pos_fwd = []
            self.pos_bwd = []
            for li in range(num_layers):
                self.pos_fwd.append(store.uniform(
                    f"encoder.pos_fwd{li}", (MAX_POSITION + 1, hidden), hidden, rng))
                self.pos_bwd.append(store.uniform(
                    f"encoder.pos_bwd{li}", (MAX_POSITION + 1, hidden), hidden, rng))

    # -- shared helpers ----------------------------------------------------

    def _n_from(self, x: Tensor) -> int:
        n = x.values.shape[0] - 2
        if n < 1:
            raise UsageError("cannot encode an empty sentence")
        return n

    def encode(self, x: Tensor, training: bool = False,
               rng: Rng | None = None) -> FencepostEncoding:
        kind = self.variant.kind
        if kind == "full":
            return self.encode_full(x, training, rng)
        if kind == "truncated":
            return self.encode_truncated(x, self.variant.k, training, rng)
        if kind == "shuffled":
            return self.encode_shuffled(x, self.variant.k, rng, training)
        return self.encode_feedforward(x, self.variant.k, self.variant.layers,
                                       self.variant.mult, training, rng)

    # -- full --------------------------------------------------------------

    def encode_full(self, x: Tensor, training: bool = False,
                    rng: Rng | None = None) -> FencepostEncoding:
        """f_i follows the forward pass through token i; b_i follows the
        backward pass down through token i+1 (padded tokens included)."""
        n = self._n_from(x)
        m = n + 2
        xs = [T.rows(x, [t]) for t in range(m)]
        p = self.dropout_p if training else 0.0
        fouts = run_lstm_stack(xs, self.fwd, p, rng, training)
        bouts = run_lstm_stack(list(reversed(xs)), self.bwd, p, rng, training)
        f = T.concat([fouts[i] for i in range(n + 1)], axis=0)
        b = T.concat([bouts[n - i] for i in range(n + 1)], axis=0)
        return FencepostEncoding(f, b, n)

    # -- truncated ---------------------------------------------------------

    def _assemble(self, per_fencepost, n: int) -> Tensor:
        return T.concat([per_fencepost[p] for p in range(n + 1)], axis=0)

    def _run_windows(self, x: Tensor, jobs, weights, pos_tables,
                     training: bool, rng: Rng | None):
        """Run batched window LSTMs.  `jobs[p]` is the ordered list of token
        indices fencepost p consumes; the window start position indexes the
        learned initial cell state.  Returns final hidden rows per fencepost.
        """
        p_drop = self.dropout_p if training else 0.0
        by_len: dict[int, list[int]] = {}
        for fp, idxs in enumerate(jobs):
            by_len.setdefault(len(idxs), []).append(fp)
        final: dict[int, Tensor] = {}
        for length, fps in sorted(by_len.items()):
            xs = [T.rows(x, [jobs[fp][t] for fp in fps]) for t in range(length)]
            starts = [min(jobs[fp][0], MAX_POSITION) for fp in fps]
            c0s = [T.rows(tbl.tensor, starts) for tbl in pos_tables]
            outs = run_lstm_stack(xs, weights, p_drop, rng, training, c0s=c0s)
            last = outs[-1]
            for row, fp in enumerate(fps):
                final[fp] = T.rows(last, [row])
        return final

    def encode_truncated(self, x: Tensor, k: int, training: bool = False,
                         rng: Rng | None = None) -> FencepostEncoding:
        n = self._n_from(x)
        fwd_jobs = [list(range(max(0, p - k + 1), p + 1)) for p in range(n + 1)]
        bwd_jobs = [list(range(min(n + 1, p + k), p, -1)) for p in range(n + 1)]
        f = self._run_windows(x, fwd_jobs, self.fwd, self.pos_fwd, training, rng)
        b = self._run_windows(x, bwd_jobs, self.bwd, self.pos_bwd, training, rng)
        return FencepostEncoding(self._assemble(f, n), self._assemble(b, n), n)

    # -- shuffled ----------------------------------------------------------

    def encode_shuffled(self, x: Tensor, k: int, rng: Rng,
                        training: bool = False) -> FencepostEncoding:
        """Full-sentence pass per fencepost with far words permuted.

        Words more than k away from the fencepost are shuffled among
        themselves, left and right sides separately; <START>/<STOP> never
        move.  With no word outside any window this is exactly the full
        encoder, so we delegate to it.
        """
        n = self._n_from(x)
        if rng is None:
            # evaluation still shuffles far context; a fixed stream keeps
            # repeated parses of the same sentence identical
            rng = Rng(0)
        if k >= n:
            return self.encode_full(x, training, rng)
        m = n + 2
        order = np.tile(np.arange(m), (n + 1, 1))
        for p in range(n + 1):
            left = [t for t in range(1, n + 1) if t <= p - k]
            right = [t for t in range(1, n + 1) if t >= p + k + 1]
            for slots in (left, right):
                if len(slots) > 1:
                    perm = rng.permutation(len(slots))
                    order[p, slots] = [slots[q] for q in perm]
        p_drop = self.dropout_p if training else 0.0
        xs = [T.rows(x, order[:, t]) for t in range(m)]
        fouts = run_lstm_stack(xs, self.fwd, p_drop, rng, training)
        bouts = run_lstm_stack(list(reversed(xs)), self.bwd, p_drop, rng, training)
        f = self._assemble({p: T.rows(fouts[p], [p]) for p in range(n + 1)}, n)
        b = self._assemble({p: T.rows(bouts[n - p], [p]) for p in range(n + 1)}, n)
        return FencepostEncoding(f, b, n)

    # -- feedforward -------------------------------------------------------

    def encode_feedforward(self, x: Tensor, k: int, layers: int, mult: int,
                           training: bool = False,
                           rng: Rng | None = None) -> FencepostEncoding:
        """Window word vectors plus a fencepost position embedding through a
        ReLU network; the output halves stand in for f_p and -b_p."""
        n = self._n_from(x)
        p_drop = self.dropout_p if training else 0.0
        cols = []
        for off in range(-k + 1, k + 1):
            idx = [min(max(p + off, 0), n + 1) for p in range(n + 1)]
            cols.append(T.rows(x, idx))
        cols.append(T.rows(self.ff_pos.tensor,
                           [min(p, MAX_POSITION) for p in range(n + 1)]))
        h = T.concat(cols, axis=1)
        for w, bias in zip(self.ff_w, self.ff_b):
            h = T.dropout(h, p_drop, rng, training)
            h = T.relu(T.add(T.matmul(h, w.tensor), bias.tensor))
        out = T.add(T.matmul(h, self.ff_out_w.tensor), self.ff_out_b.tensor)
        f = T.narrow(out, 1, 0, self.hidden)
        b = T.scale(T.narrow(out, 1, self.hidden, self.hidden), -1.0)
        return FencepostEncoding(f, b, n)
