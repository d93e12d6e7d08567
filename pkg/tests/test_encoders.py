import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssje.data import WordVectors
from dssje.encoders import EncoderSpec, ImageEncoder, build_text_encoder, one_hot
from dssje.errors import ConfigError, ContractError, EmptyCaptionError, UnsupportedEncoderError
from dssje.gradcheck import encoder_gradcheck
from dssje.tensor import no_grad
from dssje.text import Alphabet, Vocabulary, tokenize

from oracles import conv1d_loops, matmul_loops, maxpool_scan

VOCAB = Vocabulary.build(["this bird has a red crown , blue wings and a yellow belly"])


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _enc(family, level="word", table=None, word_vectors=None, attr_dim=None, **kw):
    spec = EncoderSpec(family=family, level=level, **kw)
    if table is None and family != "attributes":
        table = VOCAB if level == "word" else Alphabet()
    return build_text_encoder(spec, table, word_vectors, attr_dim)


def _small(family, level="word", **kw):
    base = dict(embed_dim=6, token_embed_dim=5, hidden_size=7)
    if family in ("cnn", "cnn-rnn"):
        base["conv_channels"] = [4] * (2 if level == "word" else 3)
    base.update(kw)
    return _enc(family, level, **base)


def _p(enc, name):
    return enc.params["text." + name].data


# -- bag of words -------------------------------------------------------------

def test_bow_empty_caption_gives_zero():
    enc = _small("bow")
    ids = np.zeros((1, 30), dtype=int)
    with no_grad():
        assert not np.any(enc.encode((ids, np.array([0]))).data)


def test_bow_counts_presence_once():
    enc = _small("bow")
    once = tokenize("red bird", "word", VOCAB)
    twice = tokenize("red red red bird", "word", VOCAB)
    np.testing.assert_array_equal(enc.encode(once).data, enc.encode(twice).data)


def test_bow_matches_indicator_oracle(rng):
    enc = _small("bow")
    words = [w for w in VOCAB.words[2:]]
    for _ in range(5):
        cap = " ".join(rng.choice(words, size=rng.integers(1, 12)))
        ind = np.zeros(len(VOCAB))
        for w in cap.split():
            ind[VOCAB.id_of(w)] = 1.0
        expected = matmul_loops(ind[None, :], _p(enc, "bow.weight").T)
        np.testing.assert_allclose(enc.encode(tokenize(cap, "word", VOCAB)).data, expected, atol=1e-12)


def test_bow_char_level_rejected():
    with pytest.raises(ContractError):
        _enc("bow", "char")


# -- word-vector average ----------------------------------------------------------

def _wv():
    return WordVectors({"red": np.array([1.0, 2.0, 3.0]), "crown": np.array([-1.0, -2.0, -3.0]),
                        "bird": np.array([0.5, 0.0, 2.0])})


def test_wordvec_single_word_is_projected_vector():
    enc = _enc("wordvec-avg", embed_dim=4, word_vectors=_wv())
    out = enc.encode(tokenize("bird", "word", VOCAB)).data[0]
    np.testing.assert_allclose(out, _p(enc, "wordvec.weight") @ np.array([0.5, 0.0, 2.0]), atol=1e-14)


def test_wordvec_opposite_vectors_average_to_zero():
    enc = _enc("wordvec-avg", embed_dim=4, word_vectors=_wv())
    assert not np.any(enc.encode(tokenize("red crown", "word", VOCAB)).data)


def test_wordvec_matches_mean_oracle(rng):
    wv = WordVectors({w: rng.normal(size=3) for w in VOCAB.words[2:]})
    enc = _enc("wordvec-avg", embed_dim=4, word_vectors=wv)
    words = VOCAB.words[2:]
    for _ in range(5):
        toks = list(rng.choice(words, size=rng.integers(1, 10)))
        acc = np.zeros(3)
        for w in toks:
            acc += wv.lookup(w)
        expected = _p(enc, "wordvec.weight") @ (acc / len(toks))
        np.testing.assert_allclose(enc.encode(tokenize(" ".join(toks), "word", VOCAB)).data[0], expected,
                                   atol=1e-12)


def test_wordvec_all_unknown_warns(caplog):
    enc = _enc("wordvec-avg", embed_dim=4, word_vectors=_wv())
    with caplog.at_level(logging.WARNING):
        out = enc.encode(tokenize("yellow belly", "word", VOCAB)).data
    assert not np.any(out)
    assert "no word" in caplog.text


def test_wordvec_needs_vectors():
    with pytest.raises(UnsupportedEncoderError):
        _enc("wordvec-avg", embed_dim=4)


# -- attributes ------------------------------------------------------------------

def test_attributes_linear(rng):
    enc = _enc("attributes", embed_dim=5, attr_dim=7)
    a = rng.normal(size=(3, 7))
    assert not np.any(enc.encode(np.zeros(7)).data)
    np.testing.assert_allclose(enc.encode(2.5 * a).data, 2.5 * enc.encode(a).data, atol=1e-12)
    np.testing.assert_allclose(enc.encode(a).data, matmul_loops(a, _p(enc, "attr.weight").T), atol=1e-12)


def test_attributes_missing():
    with pytest.raises(UnsupportedEncoderError):
        _enc("attributes", embed_dim=5, attr_dim=None)


# -- CNN ----------------------------------------------------------------------

def _conv_front_oracle(enc, ids):
    x = one_hot(ids[None, :], enc.n_symbols)[0]
    for i, (_, _, pool) in enumerate(enc.conv):
        h = conv1d_loops(x, _p(enc, f"conv{i}.kernel")) + _p(enc, f"conv{i}.bias")[:, None]
        x, _ = maxpool_scan(np.maximum(h, 0.0), pool)
    return x


def _perturb(enc, rng, scale=0.1):
    for p in enc.params.values():
        p.data += scale * rng.uniform(-1, 1, p.shape)


def test_cnn_composition_oracle(rng):
    abc = Alphabet("abcde")
    enc = _enc("cnn", "char", abc, embed_dim=3, max_len=8, conv_channels=[4, 3], kernel_widths=[3, 2],
               pool_windows=[2, 1], fc_hidden=[5])
    _perturb(enc, rng)
    seq = tokenize("abcdeab", "char", abc, 8, "abcde")
    x = _conv_front_oracle(enc, seq.token_ids).reshape(-1)
    h = np.maximum(_p(enc, "fc0.weight") @ x + _p(enc, "fc0.bias"), 0.0)
    expected = _p(enc, "fc1.weight") @ h + _p(enc, "fc1.bias")
    np.testing.assert_allclose(enc.encode(seq).data[0], expected, atol=1e-12)


def test_cnn_all_padding_is_constant():
    enc = _small("cnn", fc_hidden=[5])
    ids = np.zeros((2, 30), dtype=int)
    out = enc.encode((ids, np.array([0, 0]))).data
    np.testing.assert_array_equal(out[0], out[1])
    # zero-initialized biases propagate to a zero embedding
    assert not np.any(out)


def test_cnn_bad_pool_is_config_error():
    with pytest.raises(ConfigError):
        _enc("cnn", "word", embed_dim=4, conv_channels=[4, 4], kernel_widths=[3, 3], pool_windows=[10, 10])


def test_cnn_bad_kernel_is_config_error():
    with pytest.raises(ConfigError):
        _enc("cnn", "word", embed_dim=4, max_len=5, conv_channels=[4], kernel_widths=[9], pool_windows=[1])


def test_default_char_front_reaches_eight_steps():
    enc = _enc("cnn-rnn", "char", embed_dim=8, conv_channels=[2, 2, 2])
    assert enc.feature_length == 8
    enc = _enc("cnn-rnn", "word", embed_dim=8, conv_channels=[2, 2])
    assert enc.feature_length == 8


# -- LSTM --------------------------------------------------------------------------

def _lstm_oracle(enc, ids, n):
    E = _p(enc, "embedding")
    wx, wh, b = _p(enc, "rnn.w_x"), _p(enc, "rnn.w_h"), _p(enc, "rnn.bias")
    H = wh.shape[1]
    h, c = np.zeros(H), np.zeros(H)
    hs = []
    for t in range(n):
        z = wx @ E[ids[t]] + wh @ h + b
        i, f, o, g = _sig(z[:H]), _sig(z[H:2 * H]), _sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    m = np.mean(hs, axis=0)
    if "text.out.weight" in enc.params:
        m = _p(enc, "out.weight") @ m + _p(enc, "out.bias")
    return m


def test_lstm_hand_unrolled_oracle(rng):
    enc = _small("lstm")
    _perturb(enc, rng, 0.3)
    seq = tokenize("red crown blue", "word", VOCAB)
    np.testing.assert_allclose(enc.encode(seq).data[0], _lstm_oracle(enc, seq.token_ids, 3), atol=1e-12)


def test_lstm_single_step_is_first_hidden_state(rng):
    enc = _small("lstm", hidden_size=6)
    _perturb(enc, rng)
    seq = tokenize("red", "word", VOCAB)
    assert "text.out.weight" not in enc.params
    np.testing.assert_allclose(enc.encode(seq).data[0], _lstm_oracle(enc, seq.token_ids, 1), atol=1e-14)


def test_lstm_zero_weights_give_zero():
    enc = _small("lstm", hidden_size=6)
    for name in ("rnn.w_x", "rnn.w_h", "rnn.bias"):
        enc.params["text." + name].data[...] = 0.0
    assert not np.any(enc.encode(tokenize("red crown", "word", VOCAB)).data)


def test_lstm_empty_caption():
    enc = _small("lstm")
    with pytest.raises(EmptyCaptionError):
        enc.encode((np.zeros((1, 30), dtype=int), np.array([0])))


# -- CNN-RNN ---------------------------------------------------------------------

def test_cnn_rnn_composition_oracle(rng):
    abc = Alphabet("abcde")
    for cell in ("vanilla", "lstm"):
        enc = _enc("cnn-rnn", "char", abc, embed_dim=4, max_len=16, conv_channels=[3, 5], kernel_widths=[5, 5],
                   pool_windows=[1, 1], rnn_cell=cell, hidden_size=6, alphabet="abcde")
        _perturb(enc, rng, 0.3)
        seq = tokenize("abcdeedcbaab", "char", abc, 16, "abcde")
        fmap = _conv_front_oracle(enc, seq.token_ids)
        assert fmap.shape == (5, 8)
        wx, wh, b = _p(enc, "rnn.w_x"), _p(enc, "rnn.w_h"), _p(enc, "rnn.bias")
        h = c = np.zeros(6)
        hs = []
        for t in range(8):
            z = wx @ fmap[:, t] + wh @ h + b
            if cell == "vanilla":
                h = np.tanh(z)
            else:
                i, f, o, g = _sig(z[:6]), _sig(z[6:12]), _sig(z[12:18]), np.tanh(z[18:])
                c = f * c + i * g
                h = o * np.tanh(c)
            hs.append(h)
        expected = _p(enc, "out.weight") @ np.mean(hs, axis=0) + _p(enc, "out.bias")
        np.testing.assert_allclose(enc.encode(seq).data[0], expected, atol=1e-12)


def test_cnn_rnn_single_step(rng):
    abc = Alphabet("abc")
    enc = _enc("cnn-rnn", "char", abc, embed_dim=3, max_len=4, conv_channels=[3], kernel_widths=[2],
               pool_windows=[3], rnn_steps=1, alphabet="abc")
    _perturb(enc, rng)
    seq = tokenize("abca", "char", abc, 4, "abc")
    fmap = _conv_front_oracle(enc, seq.token_ids)
    expected = np.tanh(_p(enc, "rnn.w_x") @ fmap[:, 0] + _p(enc, "rnn.bias"))
    np.testing.assert_allclose(enc.encode(seq).data[0], expected, atol=1e-14)


def test_cnn_rnn_constant_frames_approach_fixed_point(rng):
    enc = _small("cnn-rnn", hidden_size=6)
    _perturb(enc, rng)
    enc.params["text.rnn.w_h"].data *= 0.1
    frames = [np.ones((1, 4))] * 60
    from dssje.tensor import Tensor
    hs = enc.run([Tensor(f) for f in frames])
    assert np.allclose(hs[-1].data, hs[-2].data, atol=1e-12)


def test_cnn_rnn_step_mismatch():
    with pytest.raises(ConfigError, match="rnn_steps"):
        _enc("cnn-rnn", "word", embed_dim=4, conv_channels=[4, 4], rnn_steps=9)


def test_level_mismatch_rejected():
    enc = _small("lstm")
    with pytest.raises(ContractError):
        enc.encode(tokenize("abc", "char", Alphabet()))


def test_spec_round_trip():
    spec = EncoderSpec(family="cnn", level="char", fc_hidden=[3]).resolved()
    assert EncoderSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        EncoderSpec.from_dict({"family": "cnn", "bogus": 1})
    with pytest.raises(ConfigError):
        EncoderSpec(family="gru").resolved()


# -- image encoder -------------------------------------------------------------------

def test_image_identity_and_projection(rng):
    ident = ImageEncoder(4, 4)
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(ident.encode(x).data, x)
    assert not np.any(ident.encode(np.zeros(4)).data)
    proj = ImageEncoder(5, 3, "linear-projection", seed=2)
    x = rng.normal(size=(2, 5))
    np.testing.assert_allclose(proj.encode(x).data, matmul_loops(x, proj.proj.data.T), atol=1e-12)
    with pytest.raises(ConfigError):
        ImageEncoder(5, 3)


def test_glorot_bounds_logged():
    enc = _small("cnn-rnn")
    for name, rec in enc.init_log.items():
        p = enc.params[name].data
        if rec["init"] == "zeros":
            assert not np.any(p)
        else:
            assert np.all(np.abs(p) <= rec["bound"])


# -- padding invariance, determinism, dimension (property tests) ---------------------

CASES = [("bow", "word", "vanilla"), ("wordvec-avg", "word", "vanilla"), ("cnn", "word", "vanilla"),
         ("cnn", "char", "vanilla"), ("lstm", "word", "vanilla"), ("lstm", "char", "vanilla"),
         ("cnn-rnn", "word", "vanilla"), ("cnn-rnn", "char", "lstm")]
_ENCODERS = {}


def _cached(family, level, cell):
    key = (family, level, cell)
    if key not in _ENCODERS:
        wv = WordVectors({w: np.full(3, float(i)) for i, w in enumerate(VOCAB.words[2:])})
        enc = _small(family, level, rnn_cell=cell, word_vectors=wv, fc_hidden=[5] if family == "cnn" else [])
        _perturb(enc, np.random.default_rng(7), 0.2)
        _ENCODERS[key] = enc
    return _ENCODERS[key]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(CASES), st.integers(1, 40), st.integers(0, 2 ** 31 - 1))
def test_padding_invariance_determinism_dimension(case, n_tok, seed):
    enc = _cached(*case)
    r = np.random.default_rng(seed)
    n_sym = len(VOCAB) if case[1] == "word" else len(Alphabet())
    L = enc.spec.max_len
    n = min(n_tok, L)
    ids = np.zeros((1, L), dtype=int)
    ids[0, :n] = r.integers(1, n_sym, n)
    garbage = ids.copy()
    garbage[0, n:] = r.integers(1, n_sym, L - n)
    with no_grad():
        a = enc.encode((ids, np.array([n]))).data
        b = enc.encode((garbage, np.array([n]))).data
        c = enc.encode((ids, np.array([n]))).data
    assert a.shape == (1, enc.embed_dim)
    np.testing.assert_array_equal(a, c)
    np.testing.assert_array_equal(a, b)


def test_cnn_padding_matches_truncated_one_hot(rng):
    enc = _cached("cnn", "char", "vanilla")
    seq = tokenize("a small bird", "char", Alphabet())
    x = one_hot(seq.token_ids[None, :], enc.n_symbols)[0]
    x_short = x[:, :seq.true_length]
    padded = np.concatenate([x_short, np.zeros((x.shape[0], x.shape[1] - seq.true_length))], axis=1)
    np.testing.assert_array_equal(padded, x)
    assert np.abs(enc.encode(seq).data).max() > 0


@pytest.mark.parametrize("family,level,cell", [("bow", "word", "vanilla"), ("cnn", "char", "vanilla"),
                                               ("lstm", "word", "vanilla"), ("cnn-rnn", "word", "lstm")])
def test_encoder_gradcheck(family, level, cell):
    res = encoder_gradcheck(family, level, cell, seed=0, n_coords=30)
    assert res.passed(1e-4), res
