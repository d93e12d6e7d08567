from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssje.encoders import EncoderSpec
from dssje.evaluation import (RetrievalRanking, SplitEmbeddings, SweepRow, ap_at_50, caption_sweep,
                              classification_from_embeddings, evaluate, load_report, rank_images,
                              retrieval_from_embeddings, summarize_sweep, sweep_from_csv, sweep_to_csv,
                              zero_shot_accuracy)
from dssje.model import JointModel
from dssje.train import TrainingConfig, train

from oracles import precision_at_k_count

SPEC = dict(family="bow", embed_dim=16)


def _fake(image_emb, labels):
    labels = np.asarray(labels)
    return SimpleNamespace(image_emb=np.asarray(image_emb, dtype=float), labels=labels,
                           classes=sorted(set(labels.tolist())), image_ids=[f"img{i:04d}" for i in range(len(labels))])


# -- AP@50 ------------------------------------------------------------------------

def test_ap_matches_counting_oracle():
    r = np.random.default_rng(0)
    for _ in range(100):
        n = int(r.integers(1, 120))
        labels = r.integers(0, 4, n)
        scores = r.normal(size=n).round(1)
        ids = [f"i{j:03d}" for j in range(n)]
        ranking = rank_images(0, np.array([1.0]), scores[:, None], ids, labels)
        order = sorted(range(n), key=lambda j: (-scores[j], ids[j]))
        assert ap_at_50(ranking) == precision_at_k_count([labels[j] for j in order], 0, 50)


def test_ap_extremes():
    assert ap_at_50(RetrievalRanking(1, ["a"] * 60, np.zeros(60), np.ones(60, dtype=int))) == 100.0
    assert ap_at_50(RetrievalRanking(1, ["a"] * 60, np.zeros(60), np.zeros(60, dtype=int))) == 0.0
    # window shrinks to the pool
    assert ap_at_50(RetrievalRanking(1, ["a", "b"], np.zeros(2), np.array([1, 0]))) == 50.0


def test_ranking_must_be_sorted():
    with pytest.raises(ValueError):
        RetrievalRanking(0, ["a", "b"], np.array([0.0, 1.0]), np.array([0, 0]))


def test_rank_ties_by_image_id():
    rk = rank_images(0, np.array([1.0]), np.zeros((3, 1)), ["c", "a", "b"], np.array([0, 1, 2]))
    assert rk.image_ids == ["a", "b", "c"]


# -- classification --------------------------------------------------------------

def test_degenerate_classifier_gives_one_over_c():
    C = 5
    emb = _fake(np.random.default_rng(1).normal(size=(20, 3)), np.repeat(np.arange(C), 4))
    class_emb = {c: np.ones(3) for c in range(C)}
    assert classification_from_embeddings(emb, class_emb).top1 == pytest.approx(100.0 / C)


def test_perfect_embeddings():
    labels = np.repeat(np.arange(4), 50)
    emb = _fake(np.eye(4)[labels], labels)
    class_emb = {c: np.eye(4)[c] for c in range(4)}
    assert classification_from_embeddings(emb, class_emb).top1 == 100.0
    assert retrieval_from_embeddings(emb, class_emb).ap_at_50 == 100.0
    # a pool smaller than the window caps precision at relevant / pool size
    small = _fake(np.eye(4)[labels[::10]], labels[::10])
    res = retrieval_from_embeddings(small, class_emb)
    assert res.k == 20 and res.ap_at_50 == 25.0


def test_random_embeddings_are_at_chance():
    r = np.random.default_rng(3)
    C = 10
    labels = np.repeat(np.arange(C), 20)
    accs = [classification_from_embeddings(_fake(r.normal(size=(200, 8)), labels),
                                           {c: r.normal(size=8) for c in range(C)}).top1 for _ in range(300)]
    assert abs(np.mean(accs) - 100.0 / C) < 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_metrics_invariant_to_image_order(seed):
    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(4), 5)
    X = r.normal(size=(20, 3))
    class_emb = {c: r.normal(size=3) for c in range(4)}
    a = _fake(X, labels)
    perm = r.permutation(20)
    b = _fake(X[perm], labels[perm])
    b.image_ids = [a.image_ids[i] for i in perm]
    assert classification_from_embeddings(a, class_emb).per_class == classification_from_embeddings(b, class_emb).per_class
    assert retrieval_from_embeddings(a, class_emb).ap_at_50 == retrieval_from_embeddings(b, class_emb).ap_at_50


# -- on a trained model ----------------------------------------------------------

@pytest.fixture(scope="module")
def trained(small_ds):
    model = JointModel.build(EncoderSpec(**SPEC), small_ds)
    train(small_ds, model, TrainingConfig(epochs=15, minibatch_classes=5, learning_rate=0.003))
    return model


def test_headline_is_mean_of_per_class(trained, small_ds):
    rep = evaluate(trained, small_ds)
    assert abs(rep.top1_per_class_accuracy - np.mean([v["top1"] for v in rep.per_class.values()])) < 1e-12
    assert abs(rep.ap_at_50 - np.mean([v["ap_at_50"] for v in rep.per_class.values()])) < 1e-12
    assert set(rep.per_class) == set(small_ds.splits["test"])


def test_all_captions_is_deterministic(trained, small_ds):
    a = zero_shot_accuracy(trained, small_ds, "all", seed=0)
    b = zero_shot_accuracy(trained, small_ds, "all", seed=99)
    assert a == b


def test_too_many_captions_clamped(trained, small_ds, caplog):
    emb = SplitEmbeddings(trained, small_ds)
    many = emb.class_embeddings(10_000)
    all_ = emb.class_embeddings("all")
    for c in all_:
        np.testing.assert_array_equal(many[c], all_[c])
    assert "fewer" in caplog.text


def test_report_round_trip(trained, small_ds, tmp_path):
    rep = evaluate(trained, small_ds, captions_per_class=2, seed=1, config={"run": "x"})
    rep.save(tmp_path)
    back = load_report(tmp_path / "report.json")
    assert back == rep
    text = (tmp_path / "report.txt").read_text()
    assert "mean" in text and f"{rep.top1_per_class_accuracy:.2f}" in text


def test_test_sweep_shape_and_csv(trained, small_ds):
    rows = caption_sweep(small_ds, "test", [1, 2, "all"], repeats=4, model=trained)
    assert len(rows) == 12
    summary = summarize_sweep(rows)
    assert summary["all"]["top1_std"] == 0.0
    assert sweep_from_csv(sweep_to_csv(rows)) == rows


def test_degenerate_sweep_is_a_single_evaluation(trained, small_ds):
    rows = caption_sweep(small_ds, "test", ["all"], repeats=1, model=trained)
    rep = evaluate(trained, small_ds)
    assert len(rows) == 1
    assert (rows[0].top1, rows[0].ap50) == (rep.top1_per_class_accuracy, rep.ap_at_50)


def test_train_axis_sweep(small_ds):
    def fit(ds, r):
        m = JointModel.build(EncoderSpec(**SPEC), ds)
        train(ds, m, TrainingConfig(epochs=10, minibatch_classes=5, seed=r, learning_rate=0.003))
        return m

    rows = caption_sweep(small_ds, "train", [1, 3], repeats=2, fit=fit)
    assert [(r.count, r.repeat) for r in rows] == [(1, 0), (1, 1), (3, 0), (3, 1)]
    assert all(0.0 <= r.top1 <= 100.0 for r in rows)


def test_bad_axis(small_ds):
    with pytest.raises(ValueError):
        caption_sweep(small_ds, "val", [1])


def test_sweep_row_csv_keeps_precision():
    rows = [SweepRow("test", 1, 0, 1 / 3, 2 / 3)]
    assert sweep_from_csv(sweep_to_csv(rows)) == rows
