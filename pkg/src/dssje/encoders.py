"""Text encoders phi(t) and the image encoder theta(v).

All text encoders map a batch to a [B x embed_dim] tensor.  Sequence
families take ``(ids, lengths)`` arrays (see :func:`dssje.text.stack_sequences`)
or a list of :class:`~dssje.text.TextSequence`; the attribute family takes a
[B x D_attr] array of class attribute vectors.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import WordVectors
from .errors import ConfigError, ContractError, EmptyCaptionError, ShapeError, UnsupportedEncoderError
from .tensor import Tensor
from .text import DEFAULT_ALPHABET, DEFAULT_MAX_LEN, PAD_ID, Alphabet, TextSequence, Vocabulary, stack_sequences

log = logging.getLogger(__name__)

FAMILIES = ("bow", "wordvec-avg", "attributes", "cnn", "lstm", "cnn-rnn")
NEURAL = ("cnn", "lstm", "cnn-rnn")

_CNN_DEFAULTS = {
    # 201 -conv7-> 195 -pool3-> 65 -conv7-> 59 -pool3-> 19 -conv3-> 17 -pool2-> 8
    "char": dict(conv_channels=[64, 64, 64], kernel_widths=[7, 7, 3], pool_windows=[3, 3, 2]),
    # 30 -conv3-> 28 -pool1-> 28 -conv3-> 26 -pool3-> 8
    "word": dict(conv_channels=[128, 128], kernel_widths=[3, 3], pool_windows=[1, 3]),
}


@dataclass
class EncoderSpec:
    family: str = "cnn-rnn"
    level: str = "word"
    embed_dim: int = 1024
    max_len: int | None = None
    conv_channels: list[int] | None = None
    kernel_widths: list[int] | None = None
    pool_windows: list[int] | None = None
    conv_stride: int = 1
    fc_hidden: list[int] = field(default_factory=list)
    token_embed_dim: int = 128
    hidden_size: int | None = None
    rnn_cell: str = "vanilla"
    rnn_steps: int = 8
    bias: bool = False
    alphabet: str = DEFAULT_ALPHABET
    seed: int = 0

    def resolved(self) -> "EncoderSpec":
        """Copy with every level-dependent default filled in."""
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown encoder family {self.family!r}; expected one of {FAMILIES}")
        if self.level not in ("word", "char"):
            raise ConfigError(f"unknown level {self.level!r}")
        if self.rnn_cell not in ("vanilla", "lstm"):
            raise ConfigError(f"unknown rnn_cell {self.rnn_cell!r}")
        out = replace(self, fc_hidden=list(self.fc_hidden))
        if out.max_len is None:
            out.max_len = DEFAULT_MAX_LEN[out.level]
        for key, val in _CNN_DEFAULTS[out.level].items():
            if getattr(out, key) is None:
                setattr(out, key, list(val))
        if out.hidden_size is None:
            out.hidden_size = out.embed_dim
        if not (len(out.conv_channels) == len(out.kernel_widths) == len(out.pool_windows)):
            raise ConfigError("conv_channels, kernel_widths and pool_windows must have equal length")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown encoder fields {sorted(extra)}")
        return cls(**d)


class _Module:
    def __init__(self, seed: int, prefix: str):
        self.params: dict[str, Tensor] = {}
        self.init_log: dict[str, dict] = {}
        self._rng = np.random.default_rng(seed)
        self._prefix = prefix

    def _weight(self, name: str, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
        full = self._prefix + name
        bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
        p = T.parameter(T.glorot_uniform(self._rng, shape, fan_in, fan_out), name=full)
        self.params[full] = p
        self.init_log[full] = {"init": "uniform", "bound": bound, "fan_in": fan_in, "fan_out": fan_out}
        return p

    def _bias(self, name: str, n: int) -> Tensor:
        full = self._prefix + name
        p = T.parameter(np.zeros(n), name=full)
        self.params[full] = p
        self.init_log[full] = {"init": "zeros"}
        return p

    def _linear(self, name: str, n_in: int, n_out: int, bias: bool = True):
        w = self._weight(name + ".weight", (n_out, n_in), n_in, n_out)
        b = self._bias(name + ".bias", n_out) if bias else None
        return w, b

    @staticmethod
    def _apply(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
        y = T.matmul(x, T.transpose(w))
        return y if b is None else y + b


# -- image side -------------------------------------------------------------

class ImageEncoder(_Module):
    """theta(v): identity on fixed features, or a trainable [d x D_img] projection."""

    def __init__(self, feature_dim: int, embed_dim: int, mode: str = "identity", seed: int = 0):
        super().__init__(seed, "image.")
        if mode not in ("identity", "linear-projection"):
            raise ConfigError(f"unknown image encoder mode {mode!r}")
        if mode == "identity" and feature_dim != embed_dim:
            raise ConfigError(f"identity image encoder needs feature_dim == embed_dim, got {feature_dim} != {embed_dim}")
        self.mode = mode
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.proj = None
        if mode == "linear-projection":
            self.proj = self._weight("proj", (embed_dim, feature_dim), feature_dim, embed_dim)

    def encode(self, features) -> Tensor:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ShapeError(f"image features have dimension {x.shape[1]}, expected {self.feature_dim}")
        if self.proj is None:
            return Tensor(x)
        return T.matmul(Tensor(x), T.transpose(self.proj))


# -- text side ----------------------------------------------------------------

class TextEncoder(_Module):
    input_kind = "sequence"

    def __init__(self, spec: EncoderSpec):
        super().__init__(spec.seed, "text.")
        self.spec = spec

    @property
    def embed_dim(self) -> int:
        return self.spec.embed_dim

    def encode(self, inputs) -> Tensor:
        raise NotImplementedError

    def _batch(self, inputs) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(inputs, TextSequence):
            inputs = [inputs]
        if isinstance(inputs, (list, tuple)) and inputs and isinstance(inputs[0], TextSequence):
            if any(s.level != self.spec.level for s in inputs):
                raise ContractError(f"{self.spec.family} encoder expects {self.spec.level}-level sequences")
            inputs = stack_sequences(inputs)
        ids, lengths = inputs
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
        if ids.shape[1] != self.spec.max_len:
            raise ShapeError(f"sequences have length {ids.shape[1]}, encoder expects {self.spec.max_len}")
        if lengths.shape != (len(ids),) or np.any(lengths < 0) or np.any(lengths > ids.shape[1]):
            raise ShapeError("lengths must give one value in [0, max_len] per sequence")
        # anything past true_length is treated as padding
        ids = np.where(np.arange(ids.shape[1])[None, :] < lengths[:, None], ids, PAD_ID)
        return ids, lengths


class BowEncoder(TextEncoder):
    """phi(t) = W I(t) with I(t) the word presence indicator (padding and UNK excluded)."""

    def __init__(self, spec: EncoderSpec, vocab: Vocabulary):
        if spec.level != "word":
            raise ContractError("bag-of-words encoder is word level only")
        super().__init__(spec)
        self.vocab_size = len(vocab)
        self.unk_id = vocab.unk_id
        self.w, self.b = self._linear("bow", self.vocab_size, spec.embed_dim, bias=spec.bias)

    def indicator(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        ind = np.zeros((len(ids), self.vocab_size))
        for row, (seq, n) in enumerate(zip(ids, lengths)):
            ind[row, seq[:n]] = 1.0
        ind[:, PAD_ID] = 0.0
        ind[:, self.unk_id] = 0.0
        return ind

    def encode(self, inputs) -> Tensor:
        ids, lengths = self._batch(inputs)
        return self._apply(Tensor(self.indicator(ids, lengths)), self.w, self.b)


class WordVecAvgEncoder(TextEncoder):
    """Mean of fixed word vectors over the caption, then a trainable linear map."""

    def __init__(self, spec: EncoderSpec, vocab: Vocabulary, word_vectors: WordVectors | None):
        if spec.level != "word":
            raise ContractError("word-vector encoder is word level only")
        if word_vectors is None or word_vectors.dim == 0:
            raise UnsupportedEncoderError("wordvec-avg encoder needs pretrained word vectors")
        super().__init__(spec)
        self.table = np.stack([np.zeros(word_vectors.dim) if i == PAD_ID else word_vectors.lookup(w)
                               for i, w in enumerate(vocab.words)])
        self.known = np.array([w in word_vectors for w in vocab.words])
        self.w, self.b = self._linear("wordvec", word_vectors.dim, spec.embed_dim, bias=spec.bias)

    def average(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        out = np.zeros((len(ids), self.table.shape[1]))
        for row, (seq, n) in enumerate(zip(ids, lengths)):
            if n < 1:
                raise EmptyCaptionError("empty caption")
            if not self.known[seq[:n]].any():
                log.warning("caption has no word with a pretrained vector; using the zero average")
            out[row] = self.table[seq[:n]].mean(axis=0)
        return out

    def encode(self, inputs) -> Tensor:
        ids, lengths = self._batch(inputs)
        return self._apply(Tensor(self.average(ids, lengths)), self.w, self.b)


class AttributeEncoder(TextEncoder):
    """Single-layer linear map from class attribute vectors to the embedding."""

    input_kind = "attributes"

    def __init__(self, spec: EncoderSpec, attr_dim: int | None):
        if not attr_dim:
            raise UnsupportedEncoderError("dataset has no attribute vectors")
        super().__init__(spec)
        self.attr_dim = attr_dim
        self.w, self.b = self._linear("attr", attr_dim, spec.embed_dim, bias=spec.bias)

    def encode(self, inputs) -> Tensor:
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if x.shape[1] != self.attr_dim:
            raise ShapeError(f"attribute vectors have dimension {x.shape[1]}, expected {self.attr_dim}")
        return self._apply(Tensor(x), self.w, self.b)


def one_hot(ids: np.ndarray, n: int) -> np.ndarray:
    """[B x L] ids -> [B x n x L] one-hot; the padding id gives an all-zero column."""
    B, L = ids.shape
    out = np.zeros((B, n, L))
    out[np.arange(B)[:, None], ids, np.arange(L)[None, :]] = 1.0
    out[:, PAD_ID, :] = 0.0
    return out


class _ConvFront:
    """Stack of conv1d -> relu -> maxpool blocks over a one-hot sequence."""

    def _build_conv(self, n_symbols: int) -> int:
        spec = self.spec
        self.n_symbols = n_symbols
        self.conv = []
        length, channels = spec.max_len, n_symbols
        for i, (out_ch, width, pool) in enumerate(zip(spec.conv_channels, spec.kernel_widths, spec.pool_windows)):
            if width > length:
                raise ConfigError(f"conv block {i}: kernel width {width} exceeds remaining length {length}")
            length = (length - width) // spec.conv_stride + 1
            if pool > length:
                raise ConfigError(f"conv block {i}: pool window {pool} exceeds remaining length {length}")
            length //= pool
            k = self._weight(f"conv{i}.kernel", (out_ch, channels, width), channels * width, out_ch * width)
            b = self._bias(f"conv{i}.bias", out_ch)
            self.conv.append((k, b, pool))
            channels = out_ch
        self.feature_channels, self.feature_length = channels, length
        return length

    def feature_map(self, ids: np.ndarray) -> Tensor:
        h = Tensor(one_hot(ids, self.n_symbols))
        for k, b, pool in self.conv:
            h = T.conv1d_temporal(h, k, self.spec.conv_stride) + T.reshape(b, (-1, 1))
            h = T.maxpool1d(T.relu(h), pool)
        return h


class CnnEncoder(_ConvFront, TextEncoder):
    """Temporal CNN followed by fully-connected layers to the embedding."""

    def __init__(self, spec: EncoderSpec, n_symbols: int):
        super().__init__(spec)
        self._build_conv(n_symbols)
        self.fc = []
        n_in = self.feature_channels * self.feature_length
        for i, n_out in enumerate(list(spec.fc_hidden) + [spec.embed_dim]):
            self.fc.append(self._linear(f"fc{i}", n_in, n_out))
            n_in = n_out

    def encode(self, inputs) -> Tensor:
        ids, _ = self._batch(inputs)
        h = self.feature_map(ids)
        h = T.reshape(h, (len(ids), -1))
        for i, (w, b) in enumerate(self.fc):
            h = self._apply(h, w, b)
            if i < len(self.fc) - 1:
                h = T.relu(h)
        return h


class _Recurrent:
    """Vanilla tanh or LSTM recurrence over [B x n_in] frames."""

    def _build_cell(self, kind: str, n_in: int, hidden: int) -> None:
        gates = 4 if kind == "lstm" else 1
        self.cell_kind = kind
        self.hidden = hidden
        self.w_x = self._weight("rnn.w_x", (gates * hidden, n_in), n_in, gates * hidden)
        self.w_h = self._weight("rnn.w_h", (gates * hidden, hidden), hidden, gates * hidden)
        self.b_rnn = self._bias("rnn.bias", gates * hidden)

    def run(self, frames: Sequence[Tensor]) -> list[Tensor]:
        B = frames[0].shape[0]
        wx, wh = T.transpose(self.w_x), T.transpose(self.w_h)
        H = self.hidden
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        hs = []
        for x in frames:
            z = T.matmul(x, wx) + T.matmul(h, wh) + self.b_rnn
            if self.cell_kind == "vanilla":
                h = T.tanh(z)
            else:
                i = T.sigmoid(z[:, :H])
                f = T.sigmoid(z[:, H:2 * H])
                o = T.sigmoid(z[:, 2 * H:3 * H])
                g = T.tanh(z[:, 3 * H:])
                c = f * c + i * g
                h = o * T.tanh(c)
            hs.append(h)
        return hs

    def _build_output(self, hidden: int, embed_dim: int) -> None:
        self.out = self._linear("out", hidden, embed_dim) if hidden != embed_dim else None

    def _project(self, h: Tensor) -> Tensor:
        return h if self.out is None else self._apply(h, *self.out)


class LstmEncoder(_Recurrent, TextEncoder):
    """Token embedding -> LSTM over the true length -> mean of hidden states."""

    def __init__(self, spec: EncoderSpec, n_symbols: int):
        super().__init__(spec)
        self.embedding = self._weight("embedding", (n_symbols, spec.token_embed_dim), n_symbols, spec.token_embed_dim)
        self._build_cell("lstm", spec.token_embed_dim, spec.hidden_size)
        self._build_output(spec.hidden_size, spec.embed_dim)

    def encode(self, inputs) -> Tensor:
        ids, lengths = self._batch(inputs)
        if np.any(lengths < 1):
            raise EmptyCaptionError("LSTM encoder got a zero-length caption")
        steps = int(lengths.max())
        frames = [T.take_rows(self.embedding, ids[:, t]) for t in range(steps)]
        hs = self.run(frames)
        return self._project(T.temporal_mean(hs, lengths))


class CnnRnnEncoder(_ConvFront, _Recurrent, TextEncoder):
    """Temporal CNN down to ``rnn_steps`` frames, a recurrent net over them, then the mean hidden state."""

    def __init__(self, spec: EncoderSpec, n_symbols: int):
        super().__init__(spec)
        length = self._build_conv(n_symbols)
        if length != spec.rnn_steps:
            raise ConfigError(f"CNN front reduces length {spec.max_len} to {length}, expected rnn_steps={spec.rnn_steps}")
        self._build_cell(spec.rnn_cell, self.feature_channels, spec.hidden_size)
        self._build_output(spec.hidden_size, spec.embed_dim)

    def encode(self, inputs) -> Tensor:
        ids, _ = self._batch(inputs)
        fmap = self.feature_map(ids)
        frames = [fmap[:, :, t] for t in range(self.feature_length)]
        hs = self.run(frames)
        return self._project(T.temporal_mean(hs))


def build_text_encoder(spec: EncoderSpec, table: Vocabulary | Alphabet | None = None,
                       word_vectors: WordVectors | None = None, attr_dim: int | None = None) -> TextEncoder:
    spec = spec.resolved()
    if spec.family == "attributes":
        return AttributeEncoder(spec, attr_dim)
    if table is None:
        raise ConfigError(f"{spec.family} encoder needs a {spec.level} table")
    expected = Vocabulary if spec.level == "word" else Alphabet
    if not isinstance(table, expected):
        raise ContractError(f"{spec.level}-level encoder needs a {expected.__name__}")
    if spec.family == "bow":
        return BowEncoder(spec, table)
    if spec.family == "wordvec-avg":
        return WordVecAvgEncoder(spec, table, word_vectors)
    if spec.family == "cnn":
        return CnnEncoder(spec, len(table))
    if spec.family == "lstm":
        return LstmEncoder(spec, len(table))
    return CnnRnnEncoder(spec, len(table))
