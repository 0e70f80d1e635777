"""Span-scoring constituency parser: model assembly, CKY decoding,
margin training, and serialization.

A tree's score is the sum of its labeled span scores.  One auxiliary label
with a fixed score of zero marks spans that are present in the binarized
derivation but absent from the output tree, which lets exact CKY search
over n-ary trees run on a binary chart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import (EncoderVariant, FencepostEncoding, SentenceEncoder,
                      all_span_matrix)
from .lexical import (CharVocab, LexicalConfig, LexicalMode, LexicalRepresenter,
                      TagVocab)
from .nn import Adam, ParameterStore, load_container, save_container
from .tensor import ConfigError, Rng, Tape, Tensor, UsageError
from .treebank import (EMPTY, LabeledSpan, ParseTree, Sentence, Vocabulary,
                       binarize_with_empty, bracket_f1, check_valid_bracketing,
                       gold_label_map, tree_spans)


@dataclass
class ParserConfig:
    lexical: LexicalConfig = field(default_factory=LexicalConfig)
    encoder: EncoderVariant = field(default_factory=EncoderVariant)
    hidden: int = 250        # sentence LSTM, per direction
    num_layers: int = 2
    ffn_hidden: int = 250    # label scorer hidden layer
    dropout: float = 0.4
    epochs: int = 40
    evals_per_epoch: int = 4
    lr: float = 1e-3
    seed: int = 0

    def to_dict(self) -> dict:
        lex = self.lexical
        enc = self.encoder
        return {
            "lexical": {"mode": lex.mode.value, "word_dim": lex.word_dim,
                        "char_dim": lex.char_dim, "char_hidden": lex.char_hidden,
                        "char_only_hidden": lex.char_only_hidden,
                        "tag_dim": lex.tag_dim},
            "encoder": {"kind": enc.kind, "k": enc.k, "layers": enc.layers,
                        "mult": enc.mult},
            "hidden": self.hidden, "num_layers": self.num_layers,
            "ffn_hidden": self.ffn_hidden, "dropout": self.dropout,
            "epochs": self.epochs, "evals_per_epoch": self.evals_per_epoch,
            "lr": self.lr, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParserConfig":
        lex = d["lexical"]
        enc = d["encoder"]
        return cls(
            lexical=LexicalConfig(mode=LexicalMode(lex["mode"]),
                                  word_dim=lex["word_dim"],
                                  char_dim=lex["char_dim"],
                                  char_hidden=lex["char_hidden"],
                                  char_only_hidden=lex["char_only_hidden"],
                                  tag_dim=lex["tag_dim"]),
            encoder=EncoderVariant(kind=enc["kind"], k=enc["k"],
                                   layers=enc["layers"], mult=enc["mult"]),
            hidden=d["hidden"], num_layers=d["num_layers"],
            ffn_hidden=d["ffn_hidden"], dropout=d["dropout"],
            epochs=d["epochs"], evals_per_epoch=d["evals_per_epoch"],
            lr=d["lr"], seed=d["seed"])


@dataclass
class DecodeResult:
    tree: ParseTree
    score: float
    spans: set          # LabeledSpan set of the output tree
    derivation: list    # (i, j, label) triples incl. auxiliary empties


def corpus_labels(sentences) -> list[str]:
    labels = set()
    for s in sentences:
        labels.update(n.label for n in s.tree.internal_nodes())
    labels.discard(EMPTY)
    return sorted(labels)


class ParserModel:
    """Lexical representation + fencepost encoder + span label scorer."""

    def __init__(self, config: ParserConfig, labels: list[str],
                 vocab: Vocabulary, char_vocab: CharVocab,
                 tag_vocab: TagVocab, init_rng: Rng | None = None):
        if EMPTY in labels:
            raise ConfigError("the auxiliary empty label cannot be scored")
        if not labels:
            raise ConfigError("need at least one output label")
        self.config = config
        self.labels = list(labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.vocab = vocab
        self.char_vocab = char_vocab
        self.tag_vocab = tag_vocab
        rng = init_rng if init_rng is not None else Rng(config.seed)
        self.store = ParameterStore()
        self.lexical = LexicalRepresenter(self.store, config.lexical, vocab,
                                          char_vocab, tag_vocab, rng,
                                          dropout_p=config.dropout)
        self.encoder = SentenceEncoder(self.store, config.lexical.output_dim(),
                                       config.hidden, config.num_layers,
                                       config.encoder, rng,
                                       dropout_p=config.dropout)
        span_dim = 2 * config.hidden
        self.w1 = self.store.uniform("scorer.w1", (span_dim, config.ffn_hidden),
                                     span_dim, rng)
        self.b1 = self.store.zeros("scorer.b1", (config.ffn_hidden,))
        self.w2 = self.store.uniform("scorer.w2",
                                     (config.ffn_hidden, len(self.labels)),
                                     config.ffn_hidden, rng)
        self.b2 = self.store.zeros("scorer.b2", (len(self.labels),))

    # -- forward -------------------------------------------------------------

    def score_spans(self, words, tags=None, training: bool = False,
                    rng: Rng | None = None):
        """Score every span of the sentence for every non-empty label.

        Returns (spans, scores) where scores is a (num_spans, L) tensor with
        rows aligned to the span list.
        """
        x = self.lexical.represent_sentence(words, tags, training, rng)
        enc = self.encoder.encode(x, training, rng)
        spans, r = all_span_matrix(enc)
        h = T.relu(T.add(T.matmul(r, self.w1.tensor), self.b1.tensor))
        h = T.dropout(h, self.config.dropout if training else 0.0, rng, training)
        scores = T.add(T.matmul(h, self.w2.tensor), self.b2.tensor)
        return spans, scores

    # -- decoding ------------------------------------------------------------

    def _chart(self, score_array: np.ndarray, spans, n: int):
        """Exact bottom-up search.  Returns (best_score, choices) where
        choices[(i, j)] = (label, split or None).

        The auxiliary empty label scores zero and is searched everywhere
        except the full-sentence span; ties prefer the lowest label index
        (real labels before empty) and then the lowest split point.
        """
        row = {span: idx for idx, span in enumerate(spans)}
        best: dict[tuple[int, int], float] = {}
        choice: dict[tuple[int, int], tuple[str, int | None]] = {}
        for length in range(1, n + 1):
            for i in range(n - length + 1):
                j = i + length
                scores = score_array[row[(i, j)]]
                li = int(np.argmax(scores))
                lab_score, lab = scores[li], self.labels[li]
                if (i, j) != (0, n) and 0.0 > lab_score:
                    lab_score, lab = 0.0, EMPTY
                if length == 1:
                    best[(i, j)] = lab_score
                    choice[(i, j)] = (lab, None)
                    continue
                split_score, split = None, None
                for k in range(i + 1, j):
                    s = best[(i, k)] + best[(k, j)]
                    if split_score is None or s > split_score:
                        split_score, split = s, k
                best[(i, j)] = lab_score + split_score
                choice[(i, j)] = (lab, split)
        return best[(0, n)], choice

    def _reconstruct(self, choice, i: int, j: int, derivation: list):
        lab, split = choice[(i, j)]
        derivation.append((i, j, lab))
        if split is None:
            kids: list = [i]
        else:
            kids = self._reconstruct(choice, i, split, derivation) + \
                   self._reconstruct(choice, split, j, derivation)
        if lab == EMPTY:
            return kids
        return [ParseTree(lab, kids, i, j)]

    def decode(self, score_array: np.ndarray, spans, n: int) -> DecodeResult:
        if n < 1:
            raise UsageError("cannot decode an empty sentence")
        score, choice = self._chart(score_array, spans, n)
        derivation: list = []
        roots = self._reconstruct(choice, 0, n, derivation)
        tree = roots[0]
        return DecodeResult(tree=tree, score=float(score),
                            spans=tree_spans(tree), derivation=derivation)

    def parse(self, words, tags=None) -> DecodeResult:
        spans, scores = self.score_spans(words, tags, training=False)
        return self.decode(scores.values, spans, len(words))

    def independent_spans(self, words, tags=None):
        """Keep each span independently iff its best label score is positive.

        Returns (labeled_spans, is_valid_bracketing).
        """
        spans, scores = self.score_spans(words, tags, training=False)
        a = scores.values
        picked = []
        for idx, (i, j) in enumerate(spans):
            li = int(np.argmax(a[idx]))
            if a[idx, li] > 0.0:
                picked.append(LabeledSpan(i, j, self.labels[li]))
        return picked, check_valid_bracketing(picked, len(words))

    def loss_augmented_decode(self, score_array: np.ndarray, spans,
                              gold: ParseTree):
        """Decode under scores raised by 1 for every wrong span label.

        The +1 applies to the auxiliary empty label too.  Returns
        (derivation, augmented_score, raw_score, delta).
        """
        n = gold.end
        gold_map = gold_label_map(gold)
        aug = score_array + 1.0
        row = {span: idx for idx, span in enumerate(spans)}
        empty_bonus = np.ones(len(spans))
        for (i, j), lab in gold_map.items():
            aug[row[(i, j)], self.label_index[lab]] -= 1.0
            empty_bonus[row[(i, j)]] = 1.0  # empty is wrong here; bonus stays
        for idx, span in enumerate(spans):
            if span not in gold_map:
                empty_bonus[idx] = 0.0
        result = self._decode_augmented(aug, empty_bonus, spans, n)
        derivation, aug_score = result
        raw = sum(score_array[row[(i, j)], self.label_index[lab]]
                  for (i, j, lab) in derivation if lab != EMPTY)
        delta = sum(1 for (i, j, lab) in derivation
                    if lab != gold_map.get((i, j), EMPTY))
        return derivation, float(aug_score), float(raw), int(delta)

    def _decode_augmented(self, aug: np.ndarray, empty_scores: np.ndarray,
                          spans, n: int):
        row = {span: idx for idx, span in enumerate(spans)}
        best: dict[tuple[int, int], float] = {}
        choice: dict[tuple[int, int], tuple[str, int | None]] = {}
        for length in range(1, n + 1):
            for i in range(n - length + 1):
                j = i + length
                idx = row[(i, j)]
                li = int(np.argmax(aug[idx]))
                lab_score, lab = aug[idx, li], self.labels[li]
                if (i, j) != (0, n) and empty_scores[idx] > lab_score:
                    lab_score, lab = empty_scores[idx], EMPTY
                if length == 1:
                    best[(i, j)] = lab_score
                    choice[(i, j)] = (lab, None)
                    continue
                split_score, split = None, None
                for k in range(i + 1, j):
                    s = best[(i, k)] + best[(k, j)]
                    if split_score is None or s > split_score:
                        split_score, split = s, k
                best[(i, j)] = lab_score + split_score
                choice[(i, j)] = (lab, split)
        derivation: list = []
        self._reconstruct(choice, 0, n, derivation)
        return derivation, best[(0, n)]

    # -- training ------------------------------------------------------------

    def gold_derivation(self, tree: ParseTree):
        bin_tree = binarize_with_empty(tree)
        return [(nd.start, nd.end, nd.label) for nd in bin_tree.internal_nodes()]

    def hinge_loss(self, sentence: Sentence, rng: Rng,
                   tape: Tape) -> tuple[float, Tensor | None]:
        """Structured margin loss for one sentence.

        Returns (loss_value, loss_tensor); the tensor is None when the
        margin is already satisfied and no update is needed.
        """
        spans, scores = self.score_spans(sentence.words, sentence.tags,
                                         training=True, rng=rng)
        a = scores.values
        row = {span: idx for idx, span in enumerate(spans)}
        gold_deriv = self.gold_derivation(sentence.tree)
        gold_score = sum(a[row[(i, j)], self.label_index[lab]]
                         for (i, j, lab) in gold_deriv if lab != EMPTY)
        pred_deriv, _, pred_raw, delta = self.loss_augmented_decode(
            a, spans, sentence.tree)
        hinge = pred_raw + delta - gold_score
        if hinge <= 0.0:
            return 0.0, None
        # sparse +/-1 picks with the argmax structure frozen; overlapping
        # entries cancel through coefficient accumulation
        entries = [(row[(i, j)], self.label_index[lab], 1.0)
                   for (i, j, lab) in pred_deriv if lab != EMPTY]
        entries += [(row[(i, j)], self.label_index[lab], -1.0)
                    for (i, j, lab) in gold_deriv if lab != EMPTY]
        return float(hinge), T.pick_sum(scores, entries)

    def evaluate(self, sentences) -> tuple[float, float, float]:
        preds = [self.parse(s.words, s.tags).spans for s in sentences]
        return bracket_f1([s.tree for s in sentences], preds)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str):
        extra = {
            "config": self.config.to_dict(),
            "labels": self.labels,
            "vocab_counts": self.vocab.counts,
            "chars": self.char_vocab.chars(),
            "tags": self.tag_vocab.tags(),
        }
        save_container(path, {p.name: p.values for p in self.store}, extra)

    @classmethod
    def load(cls, path: str) -> "ParserModel":
        arrays, extra = load_container(path)
        config = ParserConfig.from_dict(extra["config"])
        model = cls(config, extra["labels"],
                    Vocabulary(extra["vocab_counts"]),
                    CharVocab(extra["chars"]), TagVocab(extra["tags"]))
        missing = set(model.store.names()) ^ set(arrays)
        if missing:
            raise ConfigError(f"parameter set mismatch on load: {sorted(missing)}")
        model.store.restore(arrays)
        return model


@dataclass
class TrainLogRow:
    epoch: float
    train_loss: float
    dev_p: float
    dev_r: float
    dev_f1: float

    def tsv(self) -> str:
        return (f"{self.epoch:.2f}\t{self.train_loss:.6f}\t"
                f"{self.dev_p:.4f}\t{self.dev_r:.4f}\t{self.dev_f1:.4f}")


def train(model: ParserModel, train_sentences, dev_sentences,
          epochs: int | None = None, seed: int | None = None,
          log_fn=None, time_budget: float | None = None,
          target_f1: float | None = None):
    """Margin-train with per-sentence updates, evaluating on dev several
    times per epoch and keeping the best checkpoint.

    Stops early once the wall-clock budget is spent or dev F1 reaches
    `target_f1`.  Returns (log_rows, best_f1).  The model is left holding
    the best parameters seen.
    """
    if not train_sentences:
        raise UsageError("empty training set")
    epochs = model.config.epochs if epochs is None else epochs
    seed = model.config.seed if seed is None else seed
    rng = Rng(seed)
    opt = Adam(model.store, lr=model.config.lr)
    evals = max(1, model.config.evals_per_epoch)
    rows: list[TrainLogRow] = []
    best_snap = model.store.snapshot()
    best_f1 = -1.0
    start = time.monotonic()
    stop = False
    for epoch in range(epochs):
        order = rng.permutation(len(train_sentences))
        marks = {round((q + 1) * len(order) / evals) - 1 for q in range(evals)}
        losses: list[float] = []
        for pos, si in enumerate(order):
            sent = train_sentences[int(si)]
            with Tape() as tape:
                value, loss = model.hinge_loss(sent, rng, tape)
                if loss is not None:
                    tape.backward(loss)
                    opt.step()
            losses.append(value)
            if pos in marks:
                p, r, f1 = model.evaluate(dev_sentences)
                frac = epoch + (pos + 1) / len(order)
                row = TrainLogRow(frac, float(np.mean(losses)), p, r, f1)
                rows.append(row)
                if log_fn is not None:
                    log_fn(row)
                losses = []
                # >= keeps the latest of equally good checkpoints: later
                # ones have seen more margin updates and score spans with
                # better-calibrated absolute values
                if f1 >= best_f1:
                    best_f1 = f1
                    best_snap = model.store.snapshot()
                if target_f1 is not None and best_f1 >= target_f1:
                    stop = True
                    break
                if time_budget is not None and \
                        time.monotonic() - start > time_budget:
                    stop = True
                    break
        if stop:
            break
    model.store.restore(best_snap)
    return rows, best_f1


def build_model(config: ParserConfig, train_sentences) -> ParserModel:
    """Assemble a model whose vocabularies and label set come from the
    training corpus."""
    return ParserModel(
        config,
        corpus_labels(train_sentences),
        Vocabulary.from_corpus(train_sentences),
        CharVocab.from_corpus(train_sentences),
        TagVocab.from_corpus(train_sentences),
        Rng(config.seed))
