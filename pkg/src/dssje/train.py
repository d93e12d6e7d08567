"""Minibatch sampling, the RMSprop training loop and checkpoints."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .data import ClassSplitDataset, WordVectors
from .encoders import EncoderSpec, ImageEncoder, WordVecAvgEncoder, build_text_encoder
from .errors import ConfigError, NonFiniteLossError
from .model import OBJECTIVES, CaptionInputs, JointModel, MiniBatch, objective
from .optim import RmsPropState, rmsprop_step
from .tensor import backward
from .text import Alphabet, Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainingConfig:
    objective: str = "DS-SJE"
    learning_rate: float = 0.0007
    minibatch_classes: int = 40
    epochs: int = 10
    # None -> ceil(#train images / minibatch_classes)
    batches_per_epoch: int | None = None
    seed: int = 0
    rmsprop_decay: float = 0.95
    rmsprop_epsilon: float = 1e-6
    clip_norm: float | None = None
    image_mode: str = "identity"
    checkpoint_every: int = 0
    early_stop_patience: int | None = None
    early_stop_every: int = 5

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.minibatch_classes < 1 or self.epochs < 0:
            raise ConfigError("minibatch_classes must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown training fields {sorted(extra)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: JointModel
    state: RmsPropState
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    steps: int = 0
    minibatch_classes: int = 0
    stopped_early: bool = False


def sample_minibatch(dataset: ClassSplitDataset, classes: np.ndarray, rng: np.random.Generator) -> MiniBatch:
    """For each class: one random image, then one random caption of that image."""
    images, caps = [], []
    for c in classes:
        pool = dataset.image_indices(int(c))
        img = pool[int(rng.integers(len(pool)))]
        cap_pool = dataset.caption_indices_of_image(img)
        images.append(img)
        caps.append(cap_pool[int(rng.integers(len(cap_pool)))])
    return MiniBatch(np.asarray(classes, dtype=np.int64), np.array(images), np.array(caps))


def iterate_minibatches(dataset: ClassSplitDataset, batch_classes: int, n_batches: int, rng: np.random.Generator):
    train = np.array(sorted(dataset.splits["train"]))
    for _ in range(n_batches):
        yield sample_minibatch(dataset, rng.choice(train, size=batch_classes, replace=False), rng)


def train(dataset: ClassSplitDataset, model: JointModel, config: TrainingConfig,
          state: RmsPropState | None = None,
          callback: Callable[[int, float, JointModel], bool] | None = None,
          checkpoint_dir: str | Path | None = None) -> TrainResult:
    """Train ``model`` in place.

    ``callback(epoch, mean_loss, model)`` runs after every epoch; returning
    True stops training.  Non-finite losses abort with the offending batch.
    """
    train_classes = dataset.splits["train"]
    if not train_classes:
        raise ConfigError("dataset has no training classes")
    batch_classes = config.minibatch_classes
    if batch_classes > len(train_classes):
        log.warning("minibatch_classes=%d exceeds %d training classes; using %d",
                    batch_classes, len(train_classes), len(train_classes))
        batch_classes = len(train_classes)
    n_batches = config.batches_per_epoch
    if n_batches is None:
        n_images = len(dataset.image_indices_of_split("train"))
        n_batches = max(1, math.ceil(n_images / batch_classes))

    if state is None:
        state = RmsPropState(config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon, config.clip_norm)
    params = model.params
    inputs = CaptionInputs(model, dataset)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model, state, minibatch_classes=batch_classes)

    best_val, since_best, best_params = -1.0, 0, None
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for b, batch in enumerate(iterate_minibatches(dataset, batch_classes, n_batches, rng)):
            loss = objective(batch, model, dataset, inputs, config.objective)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b}, classes {batch.class_ids.tolist()}")
            total += value
            backward(loss)
            rmsprop_step(params, state)
            result.steps += 1
        mean_loss = total / n_batches
        result.loss_curve.append((epoch, mean_loss))
        log.info("epoch %d  loss %.6f", epoch, mean_loss)

        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_epoch{epoch:04d}.npz", model, state, config)

        if config.early_stop_patience is not None and dataset.splits["val"] and epoch % config.early_stop_every == 0:
            from .evaluation import zero_shot_accuracy

            acc = zero_shot_accuracy(model, dataset, split="val").top1
            if acc > best_val:
                best_val, since_best = acc, 0
                best_params = {k: p.data.copy() for k, p in params.items()}
            else:
                since_best += 1
                if since_best >= config.early_stop_patience:
                    for k, p in params.items():
                        p.data[...] = best_params[k]
                    result.stopped_early = True
                    break

        if callback is not None and callback(epoch, mean_loss, model):
            result.stopped_early = True
            break
    return result


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path: str | Path, model: JointModel, state: RmsPropState | None = None,
                    config: TrainingConfig | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = model.text_encoder
    meta = {
        "version": CHECKPOINT_VERSION,
        "encoder_spec": text.spec.to_dict(),
        "image_encoder": {"mode": model.image_encoder.mode, "feature_dim": model.image_encoder.feature_dim},
        "training": config.to_dict() if config else None,
        "table": ({"kind": "vocabulary", "words": model.table.to_list()} if isinstance(model.table, Vocabulary)
                  else {"kind": "alphabet", "chars": model.table.chars} if isinstance(model.table, Alphabet)
                  else None),
        "attr_dim": getattr(text, "attr_dim", None),
        "init": model.init_log,
        "params": {k: list(p.shape) for k, p in model.params.items()},
        "optimizer": (None if state is None else
                      {"learning_rate": state.learning_rate, "decay": state.decay,
                       "epsilon": state.epsilon, "clip_norm": state.clip_norm}),
    }
    arrays = {f"param/{k}": p.data for k, p in model.params.items()}
    if state is not None:
        arrays.update({f"rmsprop/{k}": v for k, v in state.accumulators.items()})
    if isinstance(text, WordVecAvgEncoder):
        arrays["fixed/wordvec_table"] = text.table
        arrays["fixed/wordvec_known"] = text.known
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[JointModel, RmsPropState | None, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
    spec = EncoderSpec.from_dict(meta["encoder_spec"])
    table_meta = meta["table"]
    table = None
    if table_meta is not None:
        table = Vocabulary(table_meta["words"]) if table_meta["kind"] == "vocabulary" else Alphabet(table_meta["chars"])
    word_vectors = None
    if "fixed/wordvec_table" in arrays:
        tab, known = arrays["fixed/wordvec_table"], arrays["fixed/wordvec_known"]
        word_vectors = WordVectors({w: tab[i] for i, w in enumerate(table.words) if known[i]}, dim=tab.shape[1])
    text = build_text_encoder(spec, table, word_vectors, meta["attr_dim"])
    img_meta = meta["image_encoder"]
    image = ImageEncoder(img_meta["feature_dim"], spec.embed_dim, img_meta["mode"], seed=spec.seed + 1)
    model = JointModel(image, text, table)
    for k, p in model.params.items():
        p.data[...] = arrays[f"param/{k}"]
    state = None
    if meta["optimizer"] is not None:
        o = meta["optimizer"]
        state = RmsPropState(o["learning_rate"], o["decay"], o["epsilon"], o["clip_norm"],
                             {k[len("rmsprop/"):]: v.copy() for k, v in arrays.items() if k.startswith("rmsprop/")})
    return model, state, meta
