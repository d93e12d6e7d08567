"""Compatibility model F(v, t) = theta(v) . phi(t), structured hinge losses and classifiers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import ClassSplitDataset
from .encoders import EncoderSpec, ImageEncoder, TextEncoder, build_text_encoder
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor
from .text import Alphabet, Vocabulary, stack_sequences, tokenize

OBJECTIVES = ("DS-SJE", "DA-SJE-image", "DA-SJE-text")


@dataclass(frozen=True)
class MiniBatch:
    """One sampled image and one of its captions for each of a set of distinct classes."""

    class_ids: np.ndarray
    image_indices: np.ndarray
    caption_indices: np.ndarray

    def __post_init__(self):
        if len(set(self.class_ids.tolist())) != len(self.class_ids):
            raise ContractError("minibatch classes must be distinct")

    def __len__(self) -> int:
        return len(self.class_ids)


class CaptionInputs:
    """Encoder-ready inputs for every caption of a dataset, computed once."""

    def __init__(self, model: "JointModel", dataset: ClassSplitDataset):
        self.kind = model.text_encoder.input_kind
        if self.kind == "attributes":
            if dataset.attributes is None:
                raise ConfigError("attribute encoder needs a dataset with attributes")
            self.attrs = np.stack([dataset.attributes[c.class_id] for c in dataset.captions])
        else:
            spec = model.text_encoder.spec
            seqs = [tokenize(c.raw_text, spec.level, model.table, spec.max_len, spec.alphabet)
                    for c in dataset.captions]
            self.ids, self.lengths = stack_sequences(seqs)

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if self.kind == "attributes":
            return self.attrs[indices]
        return self.ids[indices], self.lengths[indices]


class JointModel:
    """Image encoder and text encoder sharing one embedding space."""

    def __init__(self, image_encoder: ImageEncoder, text_encoder: TextEncoder,
                 table: Vocabulary | Alphabet | None = None):
        if image_encoder.embed_dim != text_encoder.embed_dim:
            raise ConfigError(f"image embedding dim {image_encoder.embed_dim} != text embedding dim {text_encoder.embed_dim}")
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self.table = table

    @classmethod
    def build(cls, spec: EncoderSpec, dataset: ClassSplitDataset, image_mode: str = "identity") -> "JointModel":
        """Build encoders for ``dataset``; word/char tables come from its training captions."""
        spec = spec.resolved()
        table = None
        if spec.family != "attributes":
            train = set(dataset.splits["train"])
            texts = [c.raw_text for c in dataset.captions if c.class_id in train]
            table = Vocabulary.build(texts, spec.alphabet) if spec.level == "word" else Alphabet(spec.alphabet)
        attr_dim = len(next(iter(dataset.attributes.values()))) if dataset.attributes else None
        text = build_text_encoder(spec, table, dataset.word_vectors, attr_dim)
        image = ImageEncoder(dataset.feature_dim, spec.embed_dim, image_mode, seed=spec.seed + 1)
        return cls(image, text, table)

    @property
    def params(self) -> dict[str, Tensor]:
        return {**self.image_encoder.params, **self.text_encoder.params}

    @property
    def init_log(self) -> dict[str, dict]:
        return {**self.image_encoder.init_log, **self.text_encoder.init_log}

    def embed_images(self, features) -> Tensor:
        return self.image_encoder.encode(features)

    def embed_text(self, inputs) -> Tensor:
        return self.text_encoder.encode(inputs)

    def embed_batch(self, batch: MiniBatch, dataset: ClassSplitDataset, inputs: CaptionInputs):
        v = self.embed_images(dataset.features(batch.image_indices))
        t = self.embed_text(inputs.take(batch.caption_indices))
        return v, t


# -- scores and losses ------------------------------------------------------

def compatibility(v, t) -> float:
    v, t = np.asarray(v, dtype=np.float64), np.asarray(t, dtype=np.float64)
    if v.shape != t.shape or v.ndim != 1:
        raise ShapeError(f"compatibility needs equal-length vectors, got {v.shape} and {t.shape}")
    return float(v @ t)


def zero_one_loss(y1, y2) -> float:
    return 0.0 if y1 == y2 else 1.0


def score_matrix(img_emb: Tensor, txt_emb: Tensor) -> Tensor:
    """S[n, m] = F(v_n, t_m)."""
    return T.matmul(img_emb, T.transpose(txt_emb))


def _hinge(scores: Tensor, labels: np.ndarray) -> Tensor:
    # per anchor n: max_m max(0, delta(y_n, y_m) + scores[n, m] - scores[n, n])
    labels = np.asarray(labels)
    delta = (labels[:, None] != labels[None, :]).astype(np.float64)
    margin = scores - T.reshape(T.diagonal(scores), (-1, 1)) + delta
    return T.tmean(T.tmax(T.relu(margin), axis=1))


def image_side_loss(img_emb: Tensor, txt_emb: Tensor, labels) -> Tensor:
    """Mean over anchors of max_y [delta + F(v_n, t_y) - F(v_n, t_n)]_+ ."""
    return _hinge(score_matrix(img_emb, txt_emb), labels)


def text_side_loss(img_emb: Tensor, txt_emb: Tensor, labels) -> Tensor:
    """Mean over anchors of max_y [delta + F(v_y, t_n) - F(v_n, t_n)]_+ ."""
    return _hinge(score_matrix(txt_emb, img_emb), labels)


def objective_from_embeddings(img_emb: Tensor, txt_emb: Tensor, labels, objective: str = "DS-SJE") -> Tensor:
    if objective == "DS-SJE":
        return image_side_loss(img_emb, txt_emb, labels) + text_side_loss(img_emb, txt_emb, labels)
    if objective == "DA-SJE-image":
        return image_side_loss(img_emb, txt_emb, labels)
    if objective == "DA-SJE-text":
        return text_side_loss(img_emb, txt_emb, labels)
    raise ConfigError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")


def loss_image_side(batch: MiniBatch, model: JointModel, dataset: ClassSplitDataset, inputs: CaptionInputs) -> Tensor:
    v, t = model.embed_batch(batch, dataset, inputs)
    return image_side_loss(v, t, batch.class_ids)


def loss_text_side(batch: MiniBatch, model: JointModel, dataset: ClassSplitDataset, inputs: CaptionInputs) -> Tensor:
    v, t = model.embed_batch(batch, dataset, inputs)
    return text_side_loss(v, t, batch.class_ids)


def objective(batch: MiniBatch, model: JointModel, dataset: ClassSplitDataset, inputs: CaptionInputs,
              kind: str = "DS-SJE") -> Tensor:
    v, t = model.embed_batch(batch, dataset, inputs)
    return objective_from_embeddings(v, t, batch.class_ids, kind)


# -- inference ----------------------------------------------------------------

def class_text_embedding(embeddings) -> np.ndarray:
    """Mean of a class's caption embeddings ([k x d] -> [d])."""
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if e.shape[0] == 0:
        raise ValueError("class text embedding needs at least one caption")
    return e.mean(axis=0)


def _argmax_by_class(scores: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
    # ties go to the smallest class id
    order = np.argsort(np.asarray(class_ids), kind="stable")
    ids = np.asarray(class_ids)[order]
    return ids[np.argmax(scores[..., order], axis=-1)]


def classify_image(v, class_embeddings: dict[int, np.ndarray]):
    """argmax_y theta(v) . E_t[phi(t)] for one or more image embeddings."""
    if not class_embeddings:
        raise ValueError("no candidate classes")
    ids = list(class_embeddings)
    E = np.stack([class_embeddings[c] for c in ids])
    out = _argmax_by_class(np.asarray(v, dtype=np.float64) @ E.T, ids)
    return out.item() if out.ndim == 0 else out


def classify_text(t, class_image_embeddings: dict[int, np.ndarray]):
    """argmax_y E_v[theta(v)] . phi(t); mirror of :func:`classify_image`."""
    return classify_image(t, class_image_embeddings)
