"""Per-word input vectors under the five lexical representation modes."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LstmWeights, ParameterStore, run_lstm_layer
from .tensor import ConfigError, Rng, Tensor, UsageError
from .treebank import SPECIALS, START, STOP, Vocabulary


class LexicalMode(str, enum.Enum):
    WORD_ONLY = "word_only"
    WORD_CHAR = "word_char"
    WORD_TAG = "word_tag"
    WORD_TAG_CHAR = "word_tag_char"
    CHAR_ONLY = "char_only"

    @property
    def uses_words(self) -> bool:
        return self is not LexicalMode.CHAR_ONLY

    @property
    def uses_chars(self) -> bool:
        return self in (LexicalMode.WORD_CHAR, LexicalMode.WORD_TAG_CHAR,
                        LexicalMode.CHAR_ONLY)

    @property
    def uses_tags(self) -> bool:
        return self in (LexicalMode.WORD_TAG, LexicalMode.WORD_TAG_CHAR)


@dataclass
class LexicalConfig:
    mode: LexicalMode = LexicalMode.WORD_CHAR
    word_dim: int = 100
    char_dim: int = 50
    char_hidden: int = 100       # per direction
    char_only_hidden: int = 125  # retuned size when no word embeddings
    tag_dim: int = 50

    def effective_char_hidden(self) -> int:
        if self.mode is LexicalMode.CHAR_ONLY:
            return self.char_only_hidden
        return self.char_hidden

    def output_dim(self) -> int:
        dim = 0
        if self.mode.uses_words:
            dim += self.word_dim
        if self.mode.uses_chars:
            dim += 2 * self.effective_char_hidden()
        if self.mode.uses_tags:
            dim += self.tag_dim
        return dim


UNK_CHAR = "<unkchar>"
UNK_TAG = "<unktag>"


class CharVocab:
    def __init__(self, chars):
        self.index = {UNK_CHAR: 0}
        for ch in sorted(set(chars)):
            if ch not in self.index:
                self.index[ch] = len(self.index)

    @classmethod
    def from_corpus(cls, sentences) -> "CharVocab":
        chars = set()
        for s in sentences:
            for w in s.words:
                chars.update(w)
        for tok in (START, STOP):
            chars.update(tok)
        return cls(chars)

    def lookup(self, ch: str) -> int:
        return self.index.get(ch, 0)

    def __len__(self):
        return len(self.index)

    def chars(self):
        return list(self.index.keys())


class TagVocab:
    def __init__(self, tags):
        self.index = {START: 0, STOP: 1, UNK_TAG: 2}
        for t in sorted(set(tags)):
            if t not in self.index:
                self.index[t] = len(self.index)

    @classmethod
    def from_corpus(cls, sentences) -> "TagVocab":
        tags = set()
        for s in sentences:
            tags.update(s.tags)
        return cls(tags)

    def lookup(self, tag: str) -> int:
        # tags come from external taggers; unseen ones share one embedding
        return self.index.get(tag, self.index[UNK_TAG])

    def __len__(self):
        return len(self.index)

    def tags(self):
        return list(self.index.keys())


class LexicalRepresenter:
    """Owns the embedding tables and the character bi-LSTM."""

    def __init__(self, store: ParameterStore, config: LexicalConfig,
                 vocab: Vocabulary, char_vocab: CharVocab,
                 tag_vocab: TagVocab, rng: Rng, dropout_p: float = 0.0):
        self.config = config
        self.vocab = vocab
        self.char_vocab = char_vocab
        self.tag_vocab = tag_vocab
        self.dropout_p = dropout_p
        mode = config.mode
        if mode.uses_words:
            self.word_emb = store.uniform(
                "lexical.word_emb", (len(vocab), config.word_dim),
                config.word_dim, rng)
        if mode.uses_chars:
            hidden = config.effective_char_hidden()
            self.char_emb = store.uniform(
                "lexical.char_emb", (len(char_vocab), config.char_dim),
                config.char_dim, rng)
            self.char_fwd = LstmWeights(store, "lexical.char_fwd",
                                        config.char_dim, hidden, rng)
            self.char_bwd = LstmWeights(store, "lexical.char_bwd",
                                        config.char_dim, hidden, rng)
        if mode.uses_tags:
            self.tag_emb = store.uniform(
                "lexical.tag_emb", (len(tag_vocab), config.tag_dim),
                config.tag_dim, rng)

    def char_encode(self, word: str, training: bool = False,
                    rng: Rng | None = None) -> Tensor:
        """Concatenated final forward and backward char-LSTM outputs, (1, 2h)."""
        if not word:
            raise UsageError("char_encode of an empty word")
        idx = [self.char_vocab.lookup(ch) for ch in word]
        xs = [T.rows(self.char_emb.tensor, [i]) for i in idx]
        p = self.dropout_p if training else 0.0
        fwd = run_lstm_layer(xs, self.char_fwd, p, rng, training)
        bwd = run_lstm_layer(list(reversed(xs)), self.char_bwd, p, rng, training)
        return T.concat([fwd[-1], bwd[-1]], axis=1)

    def char_encode_batch(self, words: list[str], training: bool = False,
                          rng: Rng | None = None) -> Tensor:
        """char_encode for many words at once, (len(words), 2h).

        Words of equal length run through the LSTM as one batch, which is
        what makes sentence encoding affordable.
        """
        by_len: dict[int, list[int]] = {}
        for wi, w in enumerate(words):
            if not w:
                raise UsageError("char_encode of an empty word")
            by_len.setdefault(len(w), []).append(wi)
        p = self.dropout_p if training else 0.0
        emb = self.char_emb.tensor
        blocks = []
        order = []
        for length, group in sorted(by_len.items()):
            xs = [T.rows(emb, [self.char_vocab.lookup(words[wi][t])
                               for wi in group]) for t in range(length)]
            fwd = run_lstm_layer(xs, self.char_fwd, p, rng, training)
            bwd = run_lstm_layer(list(reversed(xs)), self.char_bwd, p, rng,
                                 training)
            blocks.append(T.concat([fwd[-1], bwd[-1]], axis=1))
            order.extend(group)
        stacked = blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=0)
        inverse = np.argsort(order)
        return T.rows(stacked, inverse)

    def _word_index(self, word: str, training: bool, rng: Rng | None) -> int:
        idx = self.vocab.lookup(word)
        if training and word not in SPECIALS and idx != 0:
            # replace by <UNK> with probability 1/(1+freq(w)), resampled per visit
            if rng.random() < 1.0 / (1.0 + self.vocab.freq(word)):
                return 0
        return idx

    def represent_word(self, word: str, tag: str | None = None,
                       training: bool = False, rng: Rng | None = None) -> Tensor:
        """Mode-dependent concatenation of word, char-LSTM, and tag vectors."""
        mode = self.config.mode
        parts = []
        if mode.uses_words:
            idx = self._word_index(word, training, rng)
            parts.append(T.rows(self.word_emb.tensor, [idx]))
        if mode.uses_chars:
            # char channel always reads the original form, even after UNK
            parts.append(self.char_encode(word, training, rng))
        if mode.uses_tags:
            if tag is None:
                raise ConfigError(
                    f"mode {mode.value} requires a tag for word '{word}'")
            parts.append(T.rows(self.tag_emb.tensor, [self.tag_vocab.lookup(tag)]))
        return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)

    def represent_sentence(self, words: list[str], tags: list[str] | None,
                           training: bool = False,
                           rng: Rng | None = None) -> Tensor:
        """Stacked rows for <START>, the words, and <STOP>: (n+2, D)."""
        mode = self.config.mode
        if mode.uses_tags and tags is None:
            raise ConfigError(f"mode {mode.value} requires tags")
        padded = [START] + list(words) + [STOP]
        parts = []
        if mode.uses_words:
            idx = [self._word_index(w, training, rng) for w in padded]
            parts.append(T.rows(self.word_emb.tensor, idx))
        if mode.uses_chars:
            # char channel always reads the original forms, even after UNK
            parts.append(self.char_encode_batch(padded, training, rng))
        if mode.uses_tags:
            tidx = [self.tag_vocab.lookup(t) for t in [START] + list(tags)
                    + [STOP]]
            parts.append(T.rows(self.tag_emb.tensor, tidx))
        return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
