"""Bracketed-tree I/O, tree normalization, evaluation metrics, and the
synthetic corpus generator used in place of licensed treebank data.

Trees are normalized on read: the part-of-speech level is stripped into a
separate tag sequence, and unary chains are collapsed into single atomic
labels joined by "+".
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

from .tensor import Rng, UsageError

EMPTY = "<empty>"
CHAIN_SEP = "+"

_BRACKET_ESCAPES = {"-LRB-": "(", "-RRB-": ")"}
_BRACKET_UNESCAPES = {"(": "-LRB-", ")": "-RRB-"}


class TreebankError(ValueError):
    pass


class LabeledSpan(NamedTuple):
    i: int
    j: int
    label: str


@dataclass
class ParseTree:
    """Normalized n-ary tree node.  Children are ParseTree nodes or integer
    leaf (word) indices; spans are fencepost pairs."""
    label: str
    children: list
    start: int
    end: int

    def internal_nodes(self):
        yield self
        for c in self.children:
            if isinstance(c, ParseTree):
                yield from c.internal_nodes()


@dataclass
class Sentence:
    tree: ParseTree
    words: list[str]
    tags: list[str]


# ---------------------------------------------------------------------------
# Reading and writing


def _tokenize(line: str):
    toks = []
    cur = []
    for ch in line:
        if ch in "()":
            if cur:
                toks.append("".join(cur))
                cur = []
            toks.append(ch)
        elif ch.isspace():
            if cur:
                toks.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
    if cur:
        toks.append("".join(cur))
    return toks


def _parse_raw(toks):
    """Parse one bracketed expression into (label, children) nests; leaves
    are plain strings."""
    pos = 0

    def node():
        nonlocal pos
        if toks[pos] != "(":
            raise TreebankError("expected '('")
        pos += 1
        label = ""
        if pos < len(toks) and toks[pos] not in "()":
            label = toks[pos]
            pos += 1
        children = []
        while pos < len(toks) and toks[pos] != ")":
            if toks[pos] == "(":
                children.append(node())
            else:
                children.append(toks[pos])
                pos += 1
        if pos >= len(toks):
            raise TreebankError("unbalanced brackets")
        pos += 1
        if not children:
            raise TreebankError(f"empty constituent under label '{label}'")
        return (label, children)

    if not toks:
        raise TreebankError("empty tree")
    root = node()
    if pos != len(toks):
        raise TreebankError("trailing tokens after tree")
    return root


def _normalize(raw):
    """Strip preterminals and collapse unary chains; returns
    (ParseTree, words, tags)."""
    words: list[str] = []
    tags: list[str] = []

    def build(node):
        label, children = node
        if CHAIN_SEP in label:
            raise TreebankError(f"label '{label}' contains reserved '{CHAIN_SEP}'")
        if len(children) == 1 and isinstance(children[0], str):
            # preterminal: record word and tag, return a bare leaf index
            word = _BRACKET_ESCAPES.get(children[0], children[0])
            idx = len(words)
            words.append(word)
            tags.append(label)
            return idx
        kids = []
        for c in children:
            if isinstance(c, str):
                raise TreebankError(
                    f"bare word '{c}' without a part-of-speech bracket")
            kids.append(build(c))
        start = kids[0].start if isinstance(kids[0], ParseTree) else kids[0]
        last = kids[-1]
        end = last.end if isinstance(last, ParseTree) else last + 1
        if len(kids) == 1 and isinstance(kids[0], ParseTree):
            child = kids[0]
            return ParseTree(label + CHAIN_SEP + child.label, child.children,
                             child.start, child.end)
        return ParseTree(label, kids, start, end)

    label, children = raw
    if label == "" and len(children) == 1:
        raw = children[0]  # unlabeled wrapper, e.g. "( (S ...) )"
    tree = build(raw)
    if not isinstance(tree, ParseTree):
        raise TreebankError("tree has no phrasal structure above the tags")
    return tree, words, tags


def read_bracketed(text: str) -> list[tuple[ParseTree, list[str], list[str]]]:
    """Parse one bracketed tree per nonempty line."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = _parse_raw(_tokenize(line))
            out.append(_normalize(raw))
        except TreebankError as e:
            raise TreebankError(f"line {lineno}: {e}") from e
    return out


def write_bracketed(tree: ParseTree, words: list[str], tags: list[str]) -> str:
    """Re-serialize a normalized tree, re-expanding unary chains and
    reinserting the part-of-speech level."""

    def leaf(idx: int) -> str:
        word = _BRACKET_UNESCAPES.get(words[idx], words[idx])
        return f"({tags[idx]} {word})"

    def render(node) -> str:
        if isinstance(node, int):
            return leaf(node)
        inner = " ".join(render(c) for c in node.children)
        parts = node.label.split(CHAIN_SEP)
        for lab in reversed(parts):
            inner = f"({lab} {inner})"
        return inner

    return render(tree)


# ---------------------------------------------------------------------------
# Structure manipulation


def binarize_with_empty(tree: ParseTree) -> ParseTree:
    """Left-branching binarization; introduced nodes carry EMPTY."""

    def span_of(c):
        return (c.start, c.end) if isinstance(c, ParseTree) else (c, c + 1)

    def binarize(node):
        if isinstance(node, int):
            return node
        kids = [binarize(c) for c in node.children]
        while len(kids) > 2:
            left, right = kids[0], kids[1]
            s = span_of(left)[0]
            e = span_of(right)[1]
            kids = [ParseTree(EMPTY, [left, right], s, e)] + kids[2:]
        return ParseTree(node.label, kids, node.start, node.end)

    return binarize(tree)


def strip_empty(tree: ParseTree) -> ParseTree:
    """Remove EMPTY nodes, splicing their children into the parent."""

    def expand(node):
        if isinstance(node, int):
            return [node]
        kids = []
        for c in node.children:
            kids.extend(expand(c))
        if node.label == EMPTY:
            return kids
        return [ParseTree(node.label, kids, node.start, node.end)]

    out = expand(tree)
    if len(out) != 1 or not isinstance(out[0], ParseTree):
        raise UsageError("root of tree is EMPTY; cannot strip")
    return out[0]


def tree_spans(tree: ParseTree) -> set[LabeledSpan]:
    """One LabeledSpan per non-EMPTY internal node."""
    return {LabeledSpan(n.start, n.end, n.label)
            for n in tree.internal_nodes() if n.label != EMPTY}


def gold_label_map(tree: ParseTree) -> dict[tuple[int, int], str]:
    return {(n.start, n.end): n.label
            for n in tree.internal_nodes() if n.label != EMPTY}


def hamming_delta(candidate, gold: ParseTree) -> int:
    """Count candidate derivation spans whose label differs from the gold
    label of that span (EMPTY for gold non-constituents).

    `candidate` is an iterable of (i, j, label) covering one binarized
    derivation, including its EMPTY-labeled nodes.
    """
    gold_map = gold_label_map(gold)
    return sum(1 for (i, j, lab) in candidate
               if lab != gold_map.get((i, j), EMPTY))


def expand_chain_brackets(spans) -> Counter:
    """Expand collapsed unary chains into per-component brackets."""
    out: Counter = Counter()
    for (i, j, label) in spans:
        if label == EMPTY:
            continue
        for part in label.split(CHAIN_SEP):
            out[(i, j, part)] += 1
    return out


def bracket_f1(gold_trees, predicted_span_sets):
    """Micro-averaged labeled-bracket precision/recall/F1."""
    if len(gold_trees) != len(predicted_span_sets):
        raise UsageError(
            f"gold/predicted counts differ: {len(gold_trees)} vs "
            f"{len(predicted_span_sets)}")
    match = gold_total = pred_total = 0
    for tree, pred in zip(gold_trees, predicted_span_sets):
        gc = expand_chain_brackets(tree_spans(tree))
        pc = expand_chain_brackets(pred)
        match += sum((gc & pc).values())
        gold_total += sum(gc.values())
        pred_total += sum(pc.values())
    p = match / pred_total if pred_total else 0.0
    r = match / gold_total if gold_total else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def check_valid_bracketing(spans, n: int) -> bool:
    """True iff no two spans cross; nesting and shared endpoints allowed."""
    pairs = sorted({(s[0], s[1]) for s in spans})
    for a in range(len(pairs)):
        i1, j1 = pairs[a]
        for b in range(a + 1, len(pairs)):
            i2, j2 = pairs[b]
            if i2 >= j1:
                break
            if i1 < i2 < j1 < j2:
                return False  # crossing
    return True


# ---------------------------------------------------------------------------
# Vocabulary

UNK = "<UNK>"
START = "<START>"
STOP = "<STOP>"
SPECIALS = (UNK, START, STOP)


class Vocabulary:
    """Word -> (index, training frequency) with reserved special tokens."""

    def __init__(self, counts: dict[str, int]):
        self.counts = dict(counts)
        self.index = {UNK: 0, START: 1, STOP: 2}
        for w in sorted(counts):
            self.index[w] = len(self.index)

    @classmethod
    def from_corpus(cls, sentences) -> "Vocabulary":
        counts: Counter = Counter()
        for s in sentences:
            counts.update(s.words)
        return cls(counts)

    def lookup(self, word: str) -> int:
        return self.index.get(word, 0)

    def freq(self, word: str) -> int:
        return self.counts.get(word, 0)

    def __len__(self):
        return len(self.index)

    def words(self):
        return list(self.index.keys())


# ---------------------------------------------------------------------------
# Synthetic corpus generator
#
# A fixed PCFG over a small core lexicon plus productive morphology.  Two
# properties matter for the experiments downstream:
#   * a clause-initial adverb marker decides, via its suffix ("-wise" vs
#     "-ward"), whether the clause-final PP attaches inside the VP or at the
#     clause level -- a long-distance agreement that windowed encoders lose;
#   * open-class words are often novel suffix-bearing forms, so the correct
#     analysis of unseen words is recoverable from characters or supplied
#     tags but not from word identity alone.

_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "hy", "ja", "ke", "li", "mo",
    "nu", "pe", "qui", "ro", "sa", "te", "vo", "wi", "xa", "ze",
    "bra", "dru", "fle", "gli", "kro", "pla", "sme", "tri",
]

_DETS = ["the", "a", "every", "some"]
_NOUNS = ["cat", "dog", "park", "ball", "girl", "boy", "tree", "house",
          "bird", "fish"]
_VERBS = ["saw", "liked", "chased", "found", "took", "made"]
_ADJS = ["big", "small", "red", "old", "green"]
_PREPS = ["in", "on", "near", "with", "under"]
_PRONOUNS = ["he", "she", "it", "they"]
_NAMES = ["Kim", "Ben", "Mira", "Polo"]
_MARKERS_LOW = ["belwise", "drowise"]     # PP attaches inside the VP
_MARKERS_HIGH = ["tamward", "kesward"]    # PP attaches at the clause level
_NOUN_SUFFIXES = ["tion", "ness"]
_VERB_SUFFIXES = ["ize", "ate"]
_ADJ_SUFFIXES = ["ous", "ful"]

TAG_MARKER_LOW = "RB"
TAG_MARKER_HIGH = "RP"


def _stem(rng: Rng) -> str:
    n = 1 + rng.integers(2)
    return "".join(rng.choice(_SYLLABLES) for _ in range(n))


class _Grammar:
    def __init__(self, rng: Rng):
        self.rng = rng

    def noun(self):
        r = self.rng.random()
        if r < 0.55:
            return self.rng.choice(_NOUNS), "NN"
        return _stem(self.rng) + self.rng.choice(_NOUN_SUFFIXES), "NN"

    def plural_noun(self):
        word, _ = self.noun()
        return word + "s", "NNS"

    def verb(self):
        if self.rng.random() < 0.55:
            return self.rng.choice(_VERBS), "VB"
        return _stem(self.rng) + self.rng.choice(_VERB_SUFFIXES), "VB"

    def adjective(self):
        r = self.rng.random()
        if r < 0.45:
            return self.rng.choice(_ADJS), "JJ"
        if r < 0.75:
            return _stem(self.rng) + self.rng.choice(_ADJ_SUFFIXES), "JJ"
        return _stem(self.rng) + "-" + self.rng.choice(_ADJ_SUFFIXES), "JJ"

    def name(self):
        r = self.rng.random()
        if r < 0.4:
            return self.rng.choice(_NAMES), "NNP"
        if r < 0.6:
            return chr(ord("A") + self.rng.integers(26)) + ".", "NNP"
        return _stem(self.rng).capitalize(), "NNP"

    def acronym(self):
        n = 3 + self.rng.integers(3)
        return "".join(chr(ord("A") + self.rng.integers(26)) for _ in range(n)), "NNP"

    def number(self):
        r = self.rng.random()
        if r < 0.3:
            return str(self.rng.integers(2, 100)), "CD"
        if r < 0.65:
            return f"{self.rng.integers(1, 100)}.{self.rng.integers(100)}", "CD"
        return f"{self.rng.integers(1, 100)},{self.rng.integers(100, 1000)}", "CD"

    def marker(self):
        r = self.rng.random()
        if r < 0.25:
            return self.rng.choice(_MARKERS_LOW), TAG_MARKER_LOW, "low"
        if r < 0.5:
            return self.rng.choice(_MARKERS_HIGH), TAG_MARKER_HIGH, "high"
        if r < 0.75:
            return _stem(self.rng) + "wise", TAG_MARKER_LOW, "low"
        return _stem(self.rng) + "ward", TAG_MARKER_HIGH, "high"

    def _pre(self, tag, word):
        return (tag, [word])

    def _pre_wt(self, word_tag):
        word, tag = word_tag
        return (tag, [word])

    def np(self, depth: int):
        r = self.rng.random()
        if r < 0.40:
            w1 = self._pre("DT", self.rng.choice(_DETS))
            n, nt = self.noun()
            return ("NP", [w1, self._pre(nt, n)])
        if r < 0.58:
            w1 = self._pre("DT", self.rng.choice(_DETS))
            adjs = [self._pre_wt(self.adjective())]
            while self.rng.random() < 0.35 and len(adjs) < 3:
                adjs.append(self._pre_wt(self.adjective()))
            n, nt = self.noun()
            return ("NP", [w1, ("ADJP", adjs), self._pre(nt, n)])
        if r < 0.66 and depth < 2:
            w1 = self._pre("DT", self.rng.choice(_DETS))
            n, nt = self.noun()
            sbar = ("SBAR", [self._pre("WDT", "that"), self.vp_simple(depth + 1)])
            return ("NP", [w1, self._pre(nt, n), sbar])
        if r < 0.76:
            return ("NP", [self._pre_wt(self.name())])
        if r < 0.85:
            return ("NP", [self._pre_wt(self.acronym())])
        if r < 0.89:
            return ("NP", [self._pre_wt(self.plural_noun())])
        if r < 0.97:
            n, nt = self.noun()
            return ("NP", [self._pre_wt(self.number()), self._pre(nt, n + "s")])
        return ("NP", [self._pre("PRP", self.rng.choice(_PRONOUNS))])

    def pp(self, depth: int):
        return ("PP", [self._pre("IN", self.rng.choice(_PREPS)),
                       self.np(depth + 1)])

    def vp_simple(self, depth: int):
        return ("VP", [self._pre_wt(self.verb()), self.np(depth + 1)])

    def clause(self, depth: int):
        r = self.rng.random()
        if r < 0.6:
            word, tag, kind = self.marker()
            advp = ("ADVP", [self._pre(tag, word)])
            subj = self.np(depth)
            verb = self._pre_wt(self.verb())
            obj = self.np(depth)
            pp = self.pp(depth)
            if kind == "low":
                return ("S", [advp, subj, ("VP", [verb, obj, pp])])
            return ("S", [advp, subj, ("VP", [verb, obj]), pp])
        if r < 0.8:
            return ("S", [self.np(depth), self.vp_simple(depth)])
        vp = [self._pre_wt(self.verb()), self.np(depth)]
        if self.rng.random() < 0.3:
            vp.append(self.pp(depth))
        return ("S", [("VP", vp)])

    def sentence(self):
        clauses = [self.clause(0)]
        while self.rng.random() < 0.22 and len(clauses) < 3:
            clauses.append(self.clause(0))
        if len(clauses) == 1:
            # often hang a sentence adverb above the clause, so spans that
            # reach (almost) from edge to edge occur as internal nodes too
            if self.rng.random() < 0.35:
                word, tag, _ = self.marker()
                return ("S", [("ADVP", [self._pre(tag, word)]), clauses[0]])
            return clauses[0]
        kids = [clauses[0]]
        for c in clauses[1:]:
            kids.append(self._pre("CC", "and"))
            kids.append(c)
        return ("S", kids)


def _render_raw(node) -> str:
    label, children = node
    parts = []
    for clabel, ckids in children:
        if len(ckids) == 1 and isinstance(ckids[0], str):
            parts.append(f"({clabel} {ckids[0]})")
        else:
            parts.append(_render_raw((clabel, ckids)))
    return f"({label} {' '.join(parts)})"


def generate_synthetic(count: int, seed: int,
                       min_len: int = 3, max_len: int = 40) -> list[Sentence]:
    """Sample `count` sentences from the built-in grammar; deterministic
    given `seed`.  Sentences outside [min_len, max_len] are resampled."""
    if count < 1:
        raise UsageError("count must be >= 1")
    rng = Rng(seed)
    grammar = _Grammar(rng)
    out = []
    while len(out) < count:
        raw = grammar.sentence()
        text = _render_raw(raw)
        (tree, words, tags), = read_bracketed(text)
        if min_len <= len(words) <= max_len:
            out.append(Sentence(tree, words, tags))
    return out


def format_metrics(p: float, r: float, f1: float) -> str:
    return f"{p:.2f} {r:.2f} {f1:.2f}"
