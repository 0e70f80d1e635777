"""Diagnostic experiments over a trained parser: parent-label probing,
word-feature probing on the character LSTM, derivative-by-distance analysis
of the sentence LSTM, and context/ablation training grids.

Probes always train fresh heads on frozen base representations; the base
model's parameters are never touched.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import os
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderVariant
from .lexical import LexicalMode
from .nn import Adam, ParameterStore
from .parser import ParserConfig, ParserModel, build_model, train
from .tensor import ConfigError, Rng, Tape, Tensor
from .treebank import EMPTY, ParseTree, Sentence

TOP = "<top>"  # parent target for root spans


# ---------------------------------------------------------------------------
# shared small-classifier machinery
# ---------------------------------------------------------------------------

@dataclass
class ProbeHead:
    """One-hidden-layer scorer trained on frozen representations."""
    store: ParameterStore
    w1: object
    b1: object
    w2: object
    b2: object

    @classmethod
    def create(cls, in_dim: int, hidden: int, classes: int, rng: Rng):
        store = ParameterStore()
        return cls(store,
                   store.uniform("probe.w1", (in_dim, hidden), in_dim, rng),
                   store.zeros("probe.b1", (hidden,)),
                   store.uniform("probe.w2", (hidden, classes), hidden, rng),
                   store.zeros("probe.b2", (classes,)))

    def scores(self, x: Tensor) -> Tensor:
        h = T.relu(T.add(T.matmul(x, self.w1.tensor), self.b1.tensor))
        return T.add(T.matmul(h, self.w2.tensor), self.b2.tensor)

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1.values + self.b1.values, 0.0)
        return np.argmax(h @ self.w2.values + self.b2.values, axis=1)


def train_probe(x: np.ndarray, y: np.ndarray, classes: int, seed: int,
                hidden: int = 64, epochs: int = 10, batch: int = 32,
                lr: float = 1e-3) -> ProbeHead:
    """Multiclass margin training (margin 1) with Adam defaults."""
    rng = Rng(seed)
    head = ProbeHead.create(x.shape[1], hidden, classes, rng)
    opt = Adam(head.store, lr=lr)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = order[lo:lo + batch]
            xb, yb = x[sel], y[sel]
            with Tape() as tape:
                s = head.scores(Tensor(xb))
                a = s.values.copy()
                rows = np.arange(len(sel))
                a[rows, yb] = -np.inf
                rival = np.argmax(a, axis=1)
                margin = 1.0 + s.values[rows, rival] - s.values[rows, yb]
                entries = []
                for r in rows[margin > 0]:
                    entries.append((int(r), int(rival[r]), 1.0))
                    entries.append((int(r), int(yb[r]), -1.0))
                if entries:
                    tape.backward(T.pick_sum(s, entries))
                    opt.step()
    return head


# ---------------------------------------------------------------------------
# parent-label probe
# ---------------------------------------------------------------------------

def parent_pairs(tree: ParseTree):
    """(child span, child label, parent label) for every gold constituent;
    the root's parent is the distinguished TOP class."""
    out = [((tree.start, tree.end), tree.label, TOP)]

    def walk(node: ParseTree):
        for ch in node.children:
            if isinstance(ch, ParseTree):
                out.append(((ch.start, ch.end), ch.label, node.label))
                walk(ch)

    walk(tree)
    return out


def span_representations(model: ParserModel, sentence: Sentence,
                         spans) -> np.ndarray:
    from .encoder import span_repr
    x = model.lexical.represent_sentence(sentence.words, sentence.tags)
    enc = model.encoder.encode(x)
    return np.concatenate([span_repr(enc, i, j).values for (i, j) in spans])


def _parent_dataset(model: ParserModel, corpus, target_index):
    xs, ys = [], []
    for s in corpus:
        pairs = parent_pairs(s.tree)
        xs.append(span_representations(model, s, [sp for sp, _, _ in pairs]))
        ys.extend(target_index[parent] for (_, _, parent) in pairs)
    return np.concatenate(xs), np.array(ys)


def parent_probe(model: ParserModel, train_corpus, dev_corpus,
                 seed: int = 0, epochs: int = 10, lr: float = 1e-3) -> dict:
    """Train a fresh scorer to predict each gold span's parent label from
    the frozen span representation; report train/dev accuracy."""
    before = model.store.checksum()
    targets = sorted({parent for s in train_corpus
                      for (_, _, parent) in parent_pairs(s.tree)} | {TOP})
    index = {t: i for i, t in enumerate(targets)}
    xtr, ytr = _parent_dataset(model, train_corpus, index)
    head = train_probe(xtr, ytr, len(targets), seed,
                       hidden=model.config.ffn_hidden, epochs=epochs, lr=lr)
    xdv, ydv = _parent_dataset(model, dev_corpus, index)
    result = {
        "train_accuracy": float(np.mean(head.predict(xtr) == ytr)),
        "dev_accuracy": float(np.mean(head.predict(xdv) == ydv)),
        "num_targets": len(targets),
    }
    assert model.store.checksum() == before, "probe mutated base parameters"
    return result


def majority_baseline(train_corpus, dev_corpus) -> float:
    """Predict each span's parent as the most frequent parent of its own
    label in training data; ties break toward the lowest label index."""
    counts: dict[str, Counter] = {}
    overall: Counter = Counter()
    for s in train_corpus:
        for (_, child, parent) in parent_pairs(s.tree):
            counts.setdefault(child, Counter())[parent] += 1
            overall[parent] += 1

    def top(counter: Counter) -> str:
        return max(sorted(counter), key=lambda k: counter[k])

    table = {child: top(c) for child, c in counts.items()}
    fallback = top(overall)
    hit = total = 0
    for s in dev_corpus:
        for (_, child, parent) in parent_pairs(s.tree):
            hit += table.get(child, fallback) == parent
            total += 1
    return hit / total if total else 0.0


# ---------------------------------------------------------------------------
# word features
# ---------------------------------------------------------------------------

@dataclass
class WordFeature:
    name: str
    fn: object

    def __call__(self, word: str) -> bool:
        return bool(self.fn(word))


_LETTERS = set(string.ascii_letters)
_LOWER = set(string.ascii_lowercase)
_UPPER = set(string.ascii_uppercase)
_DIGITS = set(string.digits)
_PUNCT = set(string.punctuation)

SUFFIXES = ["s", "ed", "ing", "ion", "er", "est", "ly", "ity", "y", "al",
            "ble", "e"]


def word_features() -> list[WordFeature]:
    """The 13 word-shape predicates and 12 case-sensitive suffix tests."""
    feats = []
    for all_name, has_name, chars in (
            ("all-letters", "has-letter", _LETTERS),
            ("all-lowercase", "has-lowercase", _LOWER),
            ("all-uppercase", "has-uppercase", _UPPER),
            ("all-digits", "has-digit", _DIGITS),
            ("all-punctuation", "has-punctuation", _PUNCT)):
        feats.append(WordFeature(all_name,
                                 lambda w, cs=chars: all(c in cs for c in w)))
        feats.append(WordFeature(has_name,
                                 lambda w, cs=chars: any(c in cs for c in w)))
    for name, ch in (("dash", "-"), ("period", "."), ("comma", ",")):
        feats.append(WordFeature(f"has-{name}", lambda w, c=ch: c in w))
    for suf in SUFFIXES:
        feats.append(WordFeature(f"suffix-{suf}",
                                 lambda w, s=suf: w.endswith(s)))
    return feats


def generate_feature_vocabulary(count: int, seed: int,
                                alphabet: set[str]) -> list[str]:
    """Distinct word types drawn only from `alphabet`, shaped so that every
    word-feature predicate has both positive and negative examples."""
    rng = Rng(seed)
    lower = sorted(_LOWER & alphabet)
    upper = sorted(_UPPER & alphabet)
    digits = sorted(_DIGITS & alphabet)
    if not lower or not upper or not digits:
        raise ConfigError("alphabet lacks lowercase, uppercase, or digits")
    hyphen = "-" in alphabet
    vowels = [c for c in "aeiou" if c in lower] or lower

    def stem(lo=2, hi=6):
        k = rng.integers(lo, hi + 1)
        return "".join(rng.choice(lower) if i % 2 == 0 else rng.choice(vowels)
                       for i in range(k))

    out: set[str] = set()
    makers = []
    makers.append(lambda: stem())                                  # plain
    # suffixed words get most slots so each of the 12 suffix predicates has
    # enough positives to learn from after the train/test split
    for _ in range(5):
        makers.append(lambda: stem() + rng.choice(SUFFIXES))
    makers.append(lambda: stem().capitalize())                     # Name
    makers.append(lambda: "".join(rng.choice(upper)
                                  for _ in range(rng.integers(2, 5))))
    makers.append(lambda: "".join(rng.choice(digits)
                                  for _ in range(rng.integers(1, 6))))
    if "." in alphabet:
        makers.append(lambda: "".join(rng.choice(digits)
                                      for _ in range(rng.integers(1, 3)))
                      + "." + "".join(rng.choice(digits)
                                      for _ in range(rng.integers(1, 3))))
        makers.append(lambda: rng.choice(upper) + ".")
    if "," in alphabet:
        makers.append(lambda: "".join(rng.choice(digits)
                                      for _ in range(rng.integers(1, 3)))
                      + "," + "".join(rng.choice(digits) for _ in range(3)))
    if hyphen:
        makers.append(lambda: stem() + "-" + stem())
        punct = sorted(_PUNCT & alphabet)
        makers.append(lambda: "".join(rng.choice(punct)
                                      for _ in range(rng.integers(1, 3))))
    while len(out) < count:
        out.add(makers[rng.integers(0, len(makers))]())
    return sorted(out)


def word_feature_probe(model: ParserModel, words: list[str],
                       seed: int = 0, epochs: int = 10,
                       hidden: int = 64) -> list[dict]:
    """80/20 type-level split; one binary margin classifier per feature on
    frozen character-LSTM word encodings.  Returns one report row per
    feature with the probe and majority-class accuracies."""
    if not model.config.lexical.mode.uses_chars:
        raise ConfigError("word-feature probe requires a character LSTM")
    before = model.store.checksum()
    reps = np.concatenate([model.lexical.char_encode(w).values for w in words])
    rng = Rng(seed)
    order = rng.permutation(len(words))
    cut = int(0.8 * len(words))
    tr, te = order[:cut], order[cut:]
    rows = []
    for fi, feat in enumerate(word_features()):
        y = np.array([int(feat(w)) for w in words])
        maj = int(np.argmax(np.bincount(y[tr], minlength=2)))
        maj_acc = float(np.mean(y[te] == maj))
        if len(np.unique(y[tr])) == 1:
            # degenerate constant feature: majority is the classifier
            rows.append({"feature": feat.name, "majority": maj_acc,
                         "probe": maj_acc})
            continue
        head = train_probe(reps[tr], y[tr], 2, seed * 1000 + fi,
                           hidden=hidden, epochs=epochs)
        acc = float(np.mean(head.predict(reps[te]) == y[te]))
        rows.append({"feature": feat.name, "majority": maj_acc, "probe": acc})
    assert model.store.checksum() == before, "probe mutated base parameters"
    return rows


# ---------------------------------------------------------------------------
# derivative analysis
# ---------------------------------------------------------------------------

def derivative_by_distance(model: ParserModel, corpus, seed: int = 0,
                           max_distance: int = 40) -> list[dict]:
    """Average gradient norm of sampled encoder outputs with respect to the
    input word vectors, bucketed by word distance.

    For each fencepost we sample one component of the concatenated
    (forward, backward) output and backpropagate it; the most recently
    consumed word counts as distance 1.
    """
    if model.config.encoder.kind != "full":
        raise ConfigError("derivative analysis requires the full encoder")
    hidden = model.config.hidden
    rng = Rng(seed)
    sums = np.zeros(max_distance + 1)
    counts = np.zeros(max_distance + 1)
    for s in corpus:
        n = len(s.words)
        with Tape() as tape:
            x = model.lexical.represent_sentence(s.words, s.tags)
            enc = model.encoder.encode(x)
            for i in range(n + 1):
                c = rng.integers(0, 2 * hidden)
                side = enc.f if c < hidden else enc.b
                tape.backward(T.pick_sum(side, [(i, c % hidden, 1.0)]))
                g = x.grad
                for t in range(1, n + 1):  # padded word rows
                    if c < hidden:
                        d = i - t + 1  # forward pass consumed words 1..i
                    else:
                        d = t - i      # backward pass consumed words i+1..n
                    if 1 <= d <= max_distance:
                        sums[d] += np.linalg.norm(g[t])
                        counts[d] += 1
    return [{"distance": d,
             "average": float(sums[d] / counts[d]) if counts[d] else 0.0,
             "count": int(counts[d])}
            for d in range(1, max_distance + 1)]


# ---------------------------------------------------------------------------
# training grids
# ---------------------------------------------------------------------------

def _train_cell(args):
    base_config, variant, train_corpus, dev_corpus, epochs = args
    config = dataclasses.replace(base_config, encoder=variant)
    model = build_model(config, train_corpus)
    _, best = train(model, train_corpus, dev_corpus, epochs=epochs)
    return best


DEFAULT_GRID_KS = (2, 3, 5, 10, 20, 30)
DEFAULT_FF_CONFIGS = tuple((3, layers, mult) for layers in (1, 2, 3)
                           for mult in (1, 2, 4))


def context_experiment(base_config: ParserConfig, train_corpus, dev_corpus,
                       ks=DEFAULT_GRID_KS, ff_configs=DEFAULT_FF_CONFIGS,
                       epochs: int | None = None, jobs: int = 1) -> list[dict]:
    """Train one parser per encoder-variant grid cell with shared data and
    seed; returns (variant, k, layers, mult, F1) rows."""
    cells = []
    for k in ks:
        cells.append(EncoderVariant("truncated", k=k))
        cells.append(EncoderVariant("shuffled", k=k))
    for (k, layers, mult) in ff_configs:
        cells.append(EncoderVariant("feedforward", k=k, layers=layers,
                                    mult=mult))
    args = [(base_config, v, train_corpus, dev_corpus, epochs) for v in cells]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_train_cell, args))
    else:
        scores = [_train_cell(a) for a in args]
    return [{"variant": v.kind, "k": v.k, "layers": v.layers, "mult": v.mult,
             "f1": f1} for v, f1 in zip(cells, scores)]


def lexical_ablation(base_config: ParserConfig, train_corpus, dev_corpus,
                     epochs: int | None = None, jobs: int = 1) -> list[dict]:
    """Train the five lexical-representation modes on shared data."""
    modes = list(LexicalMode)
    args = []
    for mode in modes:
        lex = dataclasses.replace(base_config.lexical, mode=mode)
        args.append((dataclasses.replace(base_config, lexical=lex),
                     base_config.encoder, train_corpus, dev_corpus, epochs))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_train_cell, args))
    else:
        scores = [_train_cell(a) for a in args]
    return [{"mode": m.value, "f1": f1} for m, f1 in zip(modes, scores)]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def write_csv(path: str, rows: list[dict]):
    """Atomic CSV dump; the header comes from the first row's keys."""
    if not rows:
        raise ConfigError("refusing to write an empty report")
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)
