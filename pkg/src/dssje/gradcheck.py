"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward

# |analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR); the floor keeps
# coordinates with (near-)zero gradient from turning rounding noise into a
# spurious relative error.
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    worst: tuple[str, int] | None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    n_coords: int = 50, h: float = 1e-5,
                    rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare backprop against central differences on random coordinates.

    ``loss_fn`` must rebuild the scalar loss from the current parameter
    values on every call.  Coordinates are sampled uniformly over all
    parameter entries without replacement (or all of them if fewer exist).
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.grad = None

    index = [(name, i) for name, p in params.items() for i in range(p.size)]
    if len(index) > n_coords:
        picks = rng.choice(len(index), size=n_coords, replace=False)
        index = [index[j] for j in sorted(picks)]

    worst, worst_err = None, 0.0
    for name, i in index:
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn().item()
        flat[i] = orig - h
        fm = loss_fn().item()
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        err = relative_error(analytic[name].reshape(-1)[i], numeric)
        if err >= worst_err:
            worst, worst_err = (name, i), err
    return GradCheckResult(worst_err, len(index), worst)


# -- encoder suites -------------------------------------------------------------

def _suite_spec(family: str, level: str, rnn_cell: str, seed: int, embed_dim: int):
    from .encoders import EncoderSpec

    narrow = {"char": [6, 6, 6], "word": [6, 6]}[level]
    return EncoderSpec(family=family, level=level, embed_dim=embed_dim, conv_channels=narrow,
                       token_embed_dim=5, hidden_size=embed_dim + 3, fc_hidden=[7] if family == "cnn" else [],
                       rnn_cell=rnn_cell, seed=seed)


def encoder_gradcheck(family: str, level: str = "word", rnn_cell: str = "vanilla", seed: int = 0,
                      n_coords: int = 50, embed_dim: int = 8, objective: str | None = None) -> GradCheckResult:
    """Finite-difference check of one encoder family at the default sequence length.

    With ``objective`` unset the loss is a fixed random projection of the
    text embeddings of a small caption batch; otherwise it is the named
    structured objective over a sampled minibatch, with a trainable image
    projection so image-side parameters are covered too.
    """
    from .model import CaptionInputs, JointModel, objective_from_embeddings
    from .synthetic import generate_synthetic
    from .train import sample_minibatch

    ds = generate_synthetic(n_classes=6, n_train_classes=4, images_per_class=2, captions_per_image=2,
                            n_attributes=8, feature_dim=5, noise_sigma=0.3, seed=seed, word_vector_dim=8)
    spec = _suite_spec(family, level, rnn_cell, seed, embed_dim)
    model = JointModel.build(spec, ds, image_mode="linear-projection")
    rng = np.random.default_rng(seed)
    inputs = CaptionInputs(model, ds)
    batch = sample_minibatch(ds, np.array(ds.splits["train"]), rng)
    for p in model.params.values():
        # move parameters off the initial draw so biases are not all zero
        p.data += 0.1 * rng.uniform(-1.0, 1.0, size=p.shape)
    feats = ds.features(batch.image_indices)
    text_in = inputs.take(batch.caption_indices)

    if objective is None:
        weights = rng.uniform(-1.0, 1.0, size=(len(batch), embed_dim))
        params = model.text_encoder.params

        def loss_fn():
            return (model.embed_text(text_in) * weights).sum()
    else:
        params = model.params

        def loss_fn():
            return objective_from_embeddings(model.embed_images(feats), model.embed_text(text_in),
                                             batch.class_ids, objective)

    return check_gradients(loss_fn, params, n_coords=n_coords, rng=rng)
