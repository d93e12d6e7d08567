"""Desk-scale stand-in for a fine-grained image/description dataset.

Each class owns a distinct latent binary attribute vector ``a``.  Image
features are ``M @ a + noise`` for one fixed random projection ``M``.
Captions name every active attribute with a fixed two-word phrase
("crimson crest"), shuffled per caption, with one phrase dropped at random.
Unseen classes are new combinations of phrases seen in training, so
zero-shot transfer is possible in principle.
"""
from __future__ import annotations

import numpy as np

from .data import Caption, ClassSplitDataset, ImageFeature, WordVectors
from .errors import ConfigError
from .text import normalize_text

PARTS = ["crest", "wing", "tail", "beak", "breast", "belly", "throat", "nape",
         "crown", "eye", "leg", "back", "rump", "cheek", "flank", "collar"]
COLORS = ["crimson", "blue", "yellow", "black", "white", "brown", "grey", "olive",
          "orange", "green", "buff", "rufous", "violet", "pink", "scarlet", "tan"]


def attribute_phrases(n_attributes: int) -> list[str]:
    if n_attributes > len(PARTS) * len(COLORS):
        raise ConfigError(f"at most {len(PARTS) * len(COLORS)} attributes supported")
    phrases = []
    for k in range(n_attributes):
        part = PARTS[k % len(PARTS)]
        color = COLORS[(k + k // len(PARTS)) % len(COLORS)]
        phrases.append(f"{color} {part}")
    assert len(set(phrases)) == len(phrases)
    return phrases


def _distinct_codes(rng: np.random.Generator, n_classes: int, n_attributes: int) -> np.ndarray:
    if n_attributes <= 20:
        codes = rng.choice(2 ** n_attributes, size=n_classes, replace=False)
        bits = (codes[:, None] >> np.arange(n_attributes)) & 1
        return bits.astype(np.float64)
    rows: list[tuple[int, ...]] = []
    seen = set()
    while len(rows) < n_classes:
        row = tuple(int(b) for b in rng.integers(0, 2, size=n_attributes))
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return np.array(rows, dtype=np.float64)


def compose_caption(phrases: list[str]) -> str:
    if not phrases:
        return "this bird is plain"
    if len(phrases) == 1:
        return f"this bird has {phrases[0]}"
    return "this bird has " + ", ".join(phrases[:-1]) + " and " + phrases[-1]


def generate_synthetic(n_classes: int = 10, n_train_classes: int = 5, images_per_class: int = 10,
                       captions_per_image: int = 10, n_attributes: int = 8, feature_dim: int = 64,
                       noise_sigma: float = 0.1, seed: int = 0, n_val_classes: int = 0,
                       phrase_dropout: bool = True, word_vector_dim: int = 16) -> ClassSplitDataset:
    if not 0 < n_train_classes < n_classes:
        raise ConfigError("need 0 < n_train_classes < n_classes")
    if n_train_classes + n_val_classes > n_classes:
        raise ConfigError("train + val classes exceed n_classes")
    if min(images_per_class, captions_per_image, n_attributes, feature_dim) < 1:
        raise ConfigError("all counts must be >= 1")
    if n_classes > 2 ** n_attributes:
        raise ConfigError(f"{n_classes} classes cannot have distinct codes over {n_attributes} attributes")

    rng = np.random.default_rng(seed)
    codes = _distinct_codes(rng, n_classes, n_attributes)
    projection = rng.standard_normal((feature_dim, n_attributes))
    phrases = attribute_phrases(n_attributes)
    order = rng.permutation(n_classes)
    n_test = n_classes - n_train_classes - n_val_classes
    splits = {
        "train": sorted(int(c) for c in order[:n_train_classes]),
        "val": sorted(int(c) for c in order[n_train_classes:n_train_classes + n_val_classes]),
        "test": sorted(int(c) for c in order[n_classes - n_test:]),
    }

    images, captions = [], []
    for c in range(n_classes):
        active = [phrases[k] for k in np.flatnonzero(codes[c])]
        clean = projection @ codes[c]
        for j in range(images_per_class):
            image_id = f"c{c:03d}_i{j:03d}"
            v = clean + noise_sigma * rng.standard_normal(feature_dim) if noise_sigma > 0 else clean.copy()
            images.append(ImageFeature(v, image_id, c))
            for _ in range(captions_per_image):
                chosen = [active[k] for k in rng.permutation(len(active))]
                if phrase_dropout and len(chosen) >= 2:
                    del chosen[int(rng.integers(len(chosen)))]
                captions.append(Caption(compose_caption(chosen), image_id, c))

    word_vectors = None
    if word_vector_dim > 0:
        words = sorted({w for cap in captions for w in normalize_text(cap.raw_text, "word").split()})
        wv_rng = np.random.default_rng([seed, 1])
        word_vectors = WordVectors({w: wv_rng.standard_normal(word_vector_dim) for w in words})

    meta = {"generator": dict(n_classes=n_classes, n_train_classes=n_train_classes,
                              n_val_classes=n_val_classes, images_per_class=images_per_class,
                              captions_per_image=captions_per_image, n_attributes=n_attributes,
                              feature_dim=feature_dim, noise_sigma=noise_sigma, seed=seed,
                              phrase_dropout=phrase_dropout, word_vector_dim=word_vector_dim)}
    attributes = {c: codes[c].copy() for c in range(n_classes)}
    return ClassSplitDataset(images, captions, splits, attributes, word_vectors, meta)
