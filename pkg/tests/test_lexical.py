import numpy as np
import pytest

from spanparser.lexical import (
    CharVocab,
    LexicalConfig,
    LexicalMode,
    LexicalRepresenter,
    TagVocab,
)
from spanparser.nn import ParameterStore, grad_check
from spanparser.tensor import ConfigError, Rng, Tape, UsageError, sum_all, mul
from spanparser.treebank import Vocabulary, generate_synthetic


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(50, 11)


def make_representer(corpus, mode, **kw):
    store = ParameterStore()
    config = LexicalConfig(mode=mode, **kw)
    rep = LexicalRepresenter(
        store, config,
        Vocabulary.from_corpus(corpus),
        CharVocab.from_corpus(corpus),
        TagVocab.from_corpus(corpus),
        Rng(0))
    return rep, store


EXPECTED_DIMS = {
    LexicalMode.WORD_ONLY: 100,
    LexicalMode.WORD_CHAR: 100 + 2 * 100,
    LexicalMode.WORD_TAG: 100 + 50,
    LexicalMode.WORD_TAG_CHAR: 100 + 50 + 2 * 100,
    LexicalMode.CHAR_ONLY: 2 * 125,
}


@pytest.mark.parametrize("mode", list(LexicalMode))
def test_output_dim_per_mode(corpus, mode):
    rep, _ = make_representer(corpus, mode)
    assert rep.config.output_dim() == EXPECTED_DIMS[mode]
    word = corpus[0].words[0]
    tag = corpus[0].tags[0]
    vec = rep.represent_word(word, tag)
    assert vec.shape == (1, EXPECTED_DIMS[mode])


def test_mode_parameter_presence(corpus):
    _, store = make_representer(corpus, LexicalMode.CHAR_ONLY)
    assert "lexical.word_emb" not in store
    _, store = make_representer(corpus, LexicalMode.WORD_ONLY)
    assert "lexical.char_emb" not in store


def test_tag_required_but_missing(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_TAG)
    with pytest.raises(ConfigError):
        rep.represent_word("cat", None)


def test_eval_mode_deterministic(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_CHAR)
    word = corpus[0].words[0]
    a = rep.represent_word(word, training=False)
    b = rep.represent_word(word, training=False)
    assert np.array_equal(a.values, b.values)


def test_unk_replacement_probability_one_half():
    corpus = generate_synthetic(50, 11)
    rep, _ = make_representer(corpus, LexicalMode.WORD_ONLY)
    freq1 = [w for w, c in rep.vocab.counts.items() if c == 1][0]
    rng = Rng(3)
    hits = sum(rep._word_index(freq1, training=True, rng=rng) == 0
               for _ in range(20000))
    assert abs(hits / 20000 - 0.5) < 0.02


def test_unk_replacement_disabled_matches_eval(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_CHAR)
    word = corpus[0].words[0]
    train_vec = rep.represent_word(word, training=False)
    eval_vec = rep.represent_word(word, training=False)
    assert np.array_equal(train_vec.values, eval_vec.values)


def test_char_encode_one_char_word(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_CHAR)
    vec = rep.char_encode("a")
    assert vec.shape == (1, 200)
    assert np.all(np.isfinite(vec.values))


def test_char_encode_rejects_empty(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_CHAR)
    with pytest.raises(UsageError):
        rep.char_encode("")


def test_char_encode_distinguishes_related_words(corpus):
    rep, _ = make_representer(corpus, LexicalMode.WORD_CHAR)
    a = rep.char_encode("cat")
    b = rep.char_encode("cats")
    assert not np.array_equal(a.values, b.values)


def test_char_encode_gradients():
    corpus = generate_synthetic(10, 5)
    store = ParameterStore()
    config = LexicalConfig(mode=LexicalMode.WORD_CHAR, char_dim=6, char_hidden=5)
    rep = LexicalRepresenter(
        store, config, Vocabulary.from_corpus(corpus),
        CharVocab.from_corpus(corpus), TagVocab.from_corpus(corpus), Rng(1))
    params = [store["lexical.char_emb"],
              store["lexical.char_fwd.wx"], store["lexical.char_fwd.wh"],
              store["lexical.char_fwd.b"], store["lexical.char_bwd.wx"],
              store["lexical.char_bwd.wh"], store["lexical.char_bwd.b"]]

    def build():
        v = rep.char_encode("cats")
        return sum_all(mul(v, v))

    assert grad_check(build, params) < 1e-4


def test_unseen_char_maps_to_unk_char(corpus):
    cv = CharVocab.from_corpus(corpus)
    assert cv.lookup("é") == 0
