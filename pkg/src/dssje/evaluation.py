"""Zero-shot classification, text-based retrieval and caption-count sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import ClassSplitDataset
from .model import CaptionInputs, JointModel, class_text_embedding, classify_image
from .tensor import no_grad

log = logging.getLogger(__name__)

AP_WINDOW = 50


@dataclass
class RetrievalRanking:
    query_class: int
    image_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.image_ids) != len(self.scores) or len(self.scores) != len(self.labels):
            raise ValueError("ranking fields have different lengths")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError("ranking scores must be non-increasing")


def rank_images(query_class: int, query: np.ndarray, image_emb: np.ndarray,
                image_ids: Sequence[str], labels: np.ndarray) -> RetrievalRanking:
    """Sort images by descending compatibility; ties are ordered by image id."""
    scores = image_emb @ query
    order = np.lexsort((np.asarray(image_ids), -scores))
    return RetrievalRanking(query_class, [image_ids[i] for i in order], scores[order], np.asarray(labels)[order])


def ap_at_50(ranking: RetrievalRanking, k: int = AP_WINDOW) -> float:
    """Percent of the top-k ranked images whose class matches the query.

    The window shrinks to the pool size when fewer than ``k`` images exist.
    """
    if len(ranking.labels) == 0:
        raise ValueError("empty ranking")
    k = min(k, len(ranking.labels))
    hits = int(np.count_nonzero(ranking.labels[:k] == ranking.query_class))
    return 100.0 * hits / k


# -- embedding helpers --------------------------------------------------------

def embed_captions(model: JointModel, inputs: CaptionInputs, indices: Sequence[int], chunk: int = 256) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty((len(indices), model.text_encoder.embed_dim))
    with no_grad():
        for start in range(0, len(indices), chunk):
            sl = indices[start:start + chunk]
            out[start:start + len(sl)] = model.embed_text(inputs.take(sl)).data
    return out


def embed_images(model: JointModel, dataset: ClassSplitDataset, indices: Sequence[int]) -> np.ndarray:
    with no_grad():
        return model.embed_images(dataset.features(indices)).data


class SplitEmbeddings:
    """All image and caption embeddings of one split, computed once."""

    def __init__(self, model: JointModel, dataset: ClassSplitDataset, split: str = "test",
                 inputs: CaptionInputs | None = None):
        self.classes = sorted(dataset.splits[split])
        if not self.classes:
            raise ValueError(f"split {split!r} has no classes")
        self.image_indices = dataset.image_indices_of_split(split)
        self.image_ids = [dataset.images[i].image_id for i in self.image_indices]
        self.labels = dataset.labels(self.image_indices)
        self.image_emb = embed_images(model, dataset, self.image_indices)
        inputs = inputs or CaptionInputs(model, dataset)
        self.caption_rows: dict[int, np.ndarray] = {}
        all_caps = [dataset.caption_indices_of_class(c) for c in self.classes]
        flat = [i for caps in all_caps for i in caps]
        emb = embed_captions(model, inputs, flat)
        pos = 0
        self.caption_emb = emb
        for c, caps in zip(self.classes, all_caps):
            self.caption_rows[c] = np.arange(pos, pos + len(caps))
            pos += len(caps)

    def class_embeddings(self, captions_per_class: int | str = "all", seed: int = 0) -> dict[int, np.ndarray]:
        """Per-class mean caption embedding from ``captions_per_class`` seeded samples."""
        rng = np.random.default_rng(seed)
        out = {}
        for c in self.classes:
            rows = self.caption_rows[c]
            if captions_per_class != "all":
                k = int(captions_per_class)
                if k > len(rows):
                    log.warning("class %d has %d captions, fewer than the %d requested; using all", c, len(rows), k)
                else:
                    rows = rng.choice(rows, size=k, replace=False)
            out[c] = class_text_embedding(self.caption_emb[rows])
        return out


# -- metrics ------------------------------------------------------------------

@dataclass
class ClassificationResult:
    top1: float
    per_class: dict[int, float]


@dataclass
class RetrievalResult:
    ap_at_50: float
    per_class: dict[int, float]
    k: int


def per_class_accuracy(predicted: np.ndarray, labels: np.ndarray, classes: Sequence[int]) -> ClassificationResult:
    per_class = {}
    for c in classes:
        mask = labels == c
        per_class[int(c)] = 100.0 * float(np.mean(predicted[mask] == c)) if mask.any() else 0.0
    return ClassificationResult(float(np.mean(list(per_class.values()))), per_class)


def classification_from_embeddings(emb: SplitEmbeddings, class_emb: dict[int, np.ndarray]) -> ClassificationResult:
    predicted = classify_image(emb.image_emb, class_emb)
    return per_class_accuracy(np.atleast_1d(predicted), emb.labels, emb.classes)


def retrieval_from_embeddings(emb: SplitEmbeddings, class_emb: dict[int, np.ndarray],
                              k: int = AP_WINDOW) -> RetrievalResult:
    per_class = {}
    for c in emb.classes:
        ranking = rank_images(c, class_emb[c], emb.image_emb, emb.image_ids, emb.labels)
        per_class[c] = ap_at_50(ranking, k)
    return RetrievalResult(float(np.mean(list(per_class.values()))), per_class, min(k, len(emb.labels)))


def zero_shot_accuracy(model: JointModel, dataset: ClassSplitDataset, captions_per_class: int | str = "all",
                       seed: int = 0, split: str = "test") -> ClassificationResult:
    emb = SplitEmbeddings(model, dataset, split)
    return classification_from_embeddings(emb, emb.class_embeddings(captions_per_class, seed))


def retrieval_eval(model: JointModel, dataset: ClassSplitDataset, captions_per_class: int | str = "all",
                   seed: int = 0, split: str = "test") -> RetrievalResult:
    emb = SplitEmbeddings(model, dataset, split)
    return retrieval_from_embeddings(emb, emb.class_embeddings(captions_per_class, seed))


# -- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    top1_per_class_accuracy: float
    ap_at_50: float
    per_class: dict[int, dict[str, float]]
    ap_window: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = [{"class_id": c, **v} for c, v in sorted(self.per_class.items())]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        per_class = {int(r["class_id"]): {"top1": r["top1"], "ap_at_50": r["ap_at_50"]} for r in d["per_class"]}
        return cls(d["top1_per_class_accuracy"], d["ap_at_50"], per_class, d["ap_window"], d.get("config", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'class':>8}  {'top1 %':>8}  {'AP@' + str(self.ap_window) + ' %':>9}"]
        for c, v in sorted(self.per_class.items()):
            lines.append(f"{c:>8}  {v['top1']:>8.2f}  {v['ap_at_50']:>9.2f}")
        lines.append(f"{'mean':>8}  {self.top1_per_class_accuracy:>8.2f}  {self.ap_at_50:>9.2f}")
        for k in sorted(self.config):
            lines.append(f"# {k}: {self.config[k]}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | Path, stem: str = "report") -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        (out_dir / f"{stem}.txt").write_text(self.to_text(), encoding="utf-8")


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate(model: JointModel, dataset: ClassSplitDataset, captions_per_class: int | str = "all",
             seed: int = 0, split: str = "test", config: dict | None = None,
             embeddings: SplitEmbeddings | None = None) -> EvalReport:
    emb = embeddings or SplitEmbeddings(model, dataset, split)
    class_emb = emb.class_embeddings(captions_per_class, seed)
    cls = classification_from_embeddings(emb, class_emb)
    ret = retrieval_from_embeddings(emb, class_emb)
    per_class = {c: {"top1": cls.per_class[c], "ap_at_50": ret.per_class[c]} for c in emb.classes}
    echo = {"captions_per_class": captions_per_class, "seed": seed, "split": split,
            "encoder": model.text_encoder.spec.family, "level": model.text_encoder.spec.level}
    echo.update(config or {})
    return EvalReport(cls.top1, ret.ap_at_50, per_class, ret.k, echo)


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepRow:
    axis: str
    count: int | str
    repeat: int
    top1: float
    ap50: float


def caption_sweep(dataset: ClassSplitDataset, axis: str, counts: Sequence[int | str], repeats: int = 10,
                  model: JointModel | None = None,
                  fit: Callable[[ClassSplitDataset, int], JointModel] | None = None,
                  split: str = "test") -> list[SweepRow]:
    """Vary the number of captions at test time (reusing ``model``) or at
    training time (calling ``fit(truncated_dataset, repeat)`` per cell).

    Test-axis repeat r samples captions with seed r; the ``all`` count is
    deterministic, so it is evaluated once and repeated.
    """
    rows = []
    if axis == "test":
        if model is None:
            raise ValueError("test-axis sweep needs a trained model")
        emb = SplitEmbeddings(model, dataset, split)
        for count in counts:
            for r in range(repeats):
                if count == "all" and r > 0:
                    prev = rows[-1]
                    rows.append(SweepRow(axis, count, r, prev.top1, prev.ap50))
                    continue
                class_emb = emb.class_embeddings(count, seed=r)
                cls = classification_from_embeddings(emb, class_emb)
                ret = retrieval_from_embeddings(emb, class_emb)
                rows.append(SweepRow(axis, count, r, cls.top1, ret.ap_at_50))
    elif axis == "train":
        if fit is None:
            raise ValueError("train-axis sweep needs a fit function")
        for count in counts:
            subset = dataset if count == "all" else dataset.with_captions_per_image(int(count))
            for r in range(repeats):
                trained = fit(subset, r)
                emb = SplitEmbeddings(trained, dataset, split)
                class_emb = emb.class_embeddings("all")
                cls = classification_from_embeddings(emb, class_emb)
                ret = retrieval_from_embeddings(emb, class_emb)
                rows.append(SweepRow(axis, count, r, cls.top1, ret.ap_at_50))
    else:
        raise ValueError(f"axis must be 'train' or 'test', got {axis!r}")
    return rows


def summarize_sweep(rows: Sequence[SweepRow]) -> dict:
    """count -> {top1_mean, top1_std, ap50_mean, ap50_std} (population std)."""
    out: dict = {}
    for count in dict.fromkeys(r.count for r in rows):
        sel = [r for r in rows if r.count == count]
        top1 = np.array([r.top1 for r in sel])
        ap = np.array([r.ap50 for r in sel])
        out[count] = {"top1_mean": float(top1.mean()), "top1_std": float(top1.std()),
                      "ap50_mean": float(ap.mean()), "ap50_std": float(ap.std())}
    return out


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "count", "repeat", "top1", "ap50"])
    for r in rows:
        w.writerow([r.axis, r.count, r.repeat, repr(r.top1), repr(r.ap50)])
    return buf.getvalue()


def sweep_from_csv(text: str) -> list[SweepRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        count = rec["count"] if rec["count"] == "all" else int(rec["count"])
        rows.append(SweepRow(rec["axis"], count, int(rec["repeat"]), float(rec["top1"]), float(rec["ap50"])))
    return rows
