"""Datasets of fixed image features and captions split by class.

On-disk layout of a dataset directory::

    features.csv    image_id,class_id,f0,...,f{D-1}
    captions.tsv    image_id<TAB>class_id<TAB>raw text
    splits.json     {"train": [...], "val": [...], "test": [...]}
    attributes.csv  class_id,a0,...   (optional)
    wordvecs.txt    word f0 f1 ...    (optional)

Header rows are written and skipped on load when present.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DatasetError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ImageFeature:
    vector: np.ndarray
    image_id: str
    class_id: int


@dataclass(frozen=True)
class Caption:
    raw_text: str
    image_id: str
    class_id: int


class WordVectors:
    """Fixed word -> vector lookup; unknown words map to the zero vector."""

    def __init__(self, table: dict[str, np.ndarray] | None = None, dim: int | None = None):
        self.table = dict(table or {})
        dims = {len(v) for v in self.table.values()}
        if len(dims) > 1:
            raise DatasetError(f"inconsistent word vector dimensions: {sorted(dims)}")
        self.dim = dims.pop() if dims else (dim or 0)

    def __len__(self) -> int:
        return len(self.table)

    def __contains__(self, word: str) -> bool:
        return word in self.table

    def lookup(self, word: str) -> np.ndarray:
        v = self.table.get(word)
        return np.zeros(self.dim) if v is None else v

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w in sorted(self.table):
                f.write(w + " " + " ".join(repr(float(x)) for x in self.table[w]) + "\n")


def load_word_vectors(path: str | Path) -> WordVectors:
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DatasetError(f"{path}:{lineno}: expected {dim} values for {parts[0]!r}, got {len(vec)}")
            table[parts[0]] = vec
    return WordVectors(table)


@dataclass
class ClassSplitDataset:
    images: list[ImageFeature]
    captions: list[Caption]
    splits: dict[str, list[int]]
    attributes: dict[int, np.ndarray] | None = None
    word_vectors: WordVectors | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # -- invariants --------------------------------------------------------
    def validate(self) -> None:
        for name in SPLITS:
            self.splits.setdefault(name, [])
        sets = {k: set(v) for k, v in self.splits.items()}
        for i, a in enumerate(SPLITS):
            if len(sets[a]) != len(self.splits[a]):
                raise DatasetError(f"split {a!r} lists a class twice")
            for b in SPLITS[i + 1:]:
                common = sets[a] & sets[b]
                if common:
                    raise DatasetError(f"splits {a!r} and {b!r} share classes {sorted(common)}")
        if not self.images:
            raise DatasetError("dataset has no images")
        dims = {len(im.vector) for im in self.images}
        if len(dims) != 1:
            raise DatasetError(f"image features have mixed dimensions {sorted(dims)}")
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate image ids")
        image_class = {im.image_id: im.class_id for im in self.images}
        for cap in self.captions:
            if cap.image_id not in image_class:
                raise DatasetError(f"caption refers to unknown image {cap.image_id!r}")
            if image_class[cap.image_id] != cap.class_id:
                raise DatasetError(
                    f"caption for image {cap.image_id!r} has class {cap.class_id}, "
                    f"image has class {image_class[cap.image_id]}")
        img_classes = set(image_class.values())
        cap_classes = {c.class_id for c in self.captions}
        if img_classes != cap_classes:
            raise DatasetError(
                f"classes without captions: {sorted(img_classes - cap_classes)}; "
                f"classes without images: {sorted(cap_classes - img_classes)}")
        listed = set().union(*sets.values())
        if listed - img_classes:
            raise DatasetError(f"split lists classes with no data: {sorted(listed - img_classes)}")
        if self.attributes is not None:
            adims = {len(a) for a in self.attributes.values()}
            if len(adims) > 1:
                raise DatasetError(f"attribute vectors have mixed dimensions {sorted(adims)}")
            missing = img_classes - set(self.attributes)
            if missing:
                raise DatasetError(f"classes without attribute vectors: {sorted(missing)}")

    # -- views -------------------------------------------------------------
    @property
    def feature_dim(self) -> int:
        return len(self.images[0].vector)

    @cached_property
    def _by_class(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for i, im in enumerate(self.images):
            out[im.class_id].append(i)
        return dict(out)

    @cached_property
    def _captions_by_image(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = defaultdict(list)
        for i, c in enumerate(self.captions):
            out[c.image_id].append(i)
        return dict(out)

    @cached_property
    def _image_index(self) -> dict[str, int]:
        return {im.image_id: i for i, im in enumerate(self.images)}

    def classes(self, split: str) -> list[int]:
        return list(self.splits[split])

    def image_indices(self, class_id: int) -> list[int]:
        return self._by_class.get(class_id, [])

    def caption_indices_of_image(self, image_index: int) -> list[int]:
        return self._captions_by_image.get(self.images[image_index].image_id, [])

    def caption_indices_of_class(self, class_id: int) -> list[int]:
        return [c for i in self.image_indices(class_id) for c in self.caption_indices_of_image(i)]

    def image_indices_of_split(self, split: str) -> list[int]:
        return [i for c in sorted(self.splits[split]) for i in self.image_indices(c)]

    def features(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = range(len(self.images))
        return np.stack([self.images[i].vector for i in indices])

    def labels(self, indices) -> np.ndarray:
        return np.array([self.images[i].class_id for i in indices], dtype=np.int64)

    def with_captions_per_image(self, k: int) -> "ClassSplitDataset":
        """Copy keeping only the first ``k`` captions of every image."""
        keep = []
        for i in range(len(self.images)):
            keep.extend(self.caption_indices_of_image(i)[:k])
        return ClassSplitDataset(self.images, [self.captions[j] for j in sorted(keep)],
                                 {k_: list(v) for k_, v in self.splits.items()},
                                 self.attributes, self.word_vectors, dict(self.meta))


# -- disk I/O --------------------------------------------------------------

def _rows(path: Path, delimiter: str):
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.reader(f, delimiter=delimiter):
            if row:
                yield row


def load_dataset(root: str | Path) -> ClassSplitDataset:
    root = Path(root)
    for name in ("features.csv", "captions.tsv", "splits.json"):
        if not (root / name).exists():
            raise DatasetError(f"{root} is missing {name}")
    images = []
    for lineno, row in enumerate(_rows(root / "features.csv", ","), 1):
        if lineno == 1 and row[0] == "image_id":
            continue
        try:
            images.append(ImageFeature(np.array([float(x) for x in row[2:]]), row[0], int(row[1])))
        except (ValueError, IndexError) as e:
            raise DatasetError(f"features.csv line {lineno}: {e}") from None
    captions = []
    for lineno, row in enumerate(_rows(root / "captions.tsv", "\t"), 1):
        if lineno == 1 and row[0] == "image_id":
            continue
        if len(row) != 3:
            raise DatasetError(f"captions.tsv line {lineno}: expected 3 fields, got {len(row)}")
        captions.append(Caption(row[2], row[0], int(row[1])))
    with open(root / "splits.json", encoding="utf-8") as f:
        splits = {k: [int(c) for c in v] for k, v in json.load(f).items()}
    unknown = set(splits) - set(SPLITS)
    if unknown:
        raise DatasetError(f"splits.json has unknown keys {sorted(unknown)}")
    attributes = None
    if (root / "attributes.csv").exists():
        attributes = {}
        for lineno, row in enumerate(_rows(root / "attributes.csv", ","), 1):
            if lineno == 1 and row[0] == "class_id":
                continue
            attributes[int(row[0])] = np.array([float(x) for x in row[1:]])
    word_vectors = None
    if (root / "wordvecs.txt").exists():
        word_vectors = load_word_vectors(root / "wordvecs.txt")
    meta = {}
    if (root / "meta.json").exists():
        meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    return ClassSplitDataset(images, captions, splits, attributes, word_vectors, meta)


def save_dataset(ds: ClassSplitDataset, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "features.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image_id", "class_id"] + [f"f{i}" for i in range(ds.feature_dim)])
        for im in ds.images:
            w.writerow([im.image_id, im.class_id] + [repr(float(x)) for x in im.vector])
    with open(root / "captions.tsv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["image_id", "class_id", "text"])
        for c in ds.captions:
            w.writerow([c.image_id, c.class_id, c.raw_text])
    with open(root / "splits.json", "w", encoding="utf-8") as f:
        json.dump({k: ds.splits[k] for k in SPLITS}, f, indent=1)
        f.write("\n")
    if ds.attributes is not None:
        dim = len(next(iter(ds.attributes.values())))
        with open(root / "attributes.csv", "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["class_id"] + [f"a{i}" for i in range(dim)])
            for c in sorted(ds.attributes):
                w.writerow([c] + [repr(float(x)) for x in ds.attributes[c]])
    if ds.word_vectors is not None:
        ds.word_vectors.save(root / "wordvecs.txt")
    if ds.meta:
        (root / "meta.json").write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
