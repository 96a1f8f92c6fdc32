import math

import numpy as np
import pytest

from csvae_lab.data import TEST, TRAIN, VALID, LabeledDataset, split
from csvae_lab.errors import DataError
from csvae_lab.evaluation import (AccuracyReport, default_candidates, empirical_label_entropy,
                                  encode_z_means, eval_identity_mse, eval_switch_accuracy,
                                  fit_classifier, identity_pairs, linear_probe_accuracy,
                                  mi_probe, probe_mi_from_features, train_attr_classifier)
from csvae_lab.models import ModelSpec, build_model, reconstruct, train
from csvae_lab.optim import LrSchedule


def _spec(kind, d=2, **kw):
    base = dict(x_shape=(d,), z_dim=2, k=1, w_dim_per_attr=2,
                enc_hidden=(16,), dec_hidden=(16,), adv_hidden=(16,))
    base.update(kw)
    return ModelSpec(kind=kind, **base)


def _separable_dataset(n=300, seed=0, separation=6.0, d=2):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.uint8)
    x = rng.normal(0, 0.8, (n, d)) + separation * y[:, None]
    ds = LabeledDataset(x.astype(np.float32), y.reshape(-1, 1), ("a",),
                        np.zeros(n, dtype=np.uint8))
    return split(ds, (0.6, 0.2, 0.2), seed=seed)


def _paired_vector_dataset(n_groups=240, seed=0, offset=4.0):
    """Positional identity pairs in R^2: sibling = base + offset on attr-on."""
    rng = np.random.default_rng(seed)
    base = rng.normal(0, 1.0, (n_groups, 2))
    x = np.empty((2 * n_groups, 2), dtype=np.float32)
    y = np.empty((2 * n_groups, 1), dtype=np.uint8)
    x[0::2] = base
    x[1::2] = base + np.array([offset, 0.0])
    y[0::2, 0] = 0
    y[1::2, 0] = 1
    ds = LabeledDataset(x, y, ("a",), np.zeros(2 * n_groups, dtype=np.uint8))
    return split(ds, (0.6, 0.2, 0.2), seed=seed, group_size=2)


# -- classifier -----------------------------------------------------------------

def test_classifier_separable_data_perfect():
    ds = _separable_dataset(seed=1)
    clf = train_attr_classifier(ds, seed=0, max_epochs=60)
    te = ds.indices(TEST)
    assert clf.usable
    assert clf.accuracy(ds.x[te], ds.y[te]) == 1.0


def test_classifier_label_permuted_near_majority():
    ds = _separable_dataset(seed=2)
    rng = np.random.default_rng(0)
    y_perm = ds.y[rng.permutation(ds.n)]
    clf = fit_classifier(ds.x, y_perm.astype(np.float64), ds.split_tags, seed=0,
                         max_epochs=40)
    te = ds.indices(TEST)
    acc = clf.accuracy(ds.x[te], y_perm[te])
    maj = max(y_perm[te].mean(), 1 - y_perm[te].mean())
    assert abs(acc - maj) < 0.05
    assert not clf.usable or clf.val_accuracy - clf.majority_rate < 0.05


def test_fit_classifier_needs_splits():
    ds = _separable_dataset()
    with pytest.raises(DataError):
        fit_classifier(ds.x, ds.y.astype(float), np.zeros(ds.n, dtype=np.uint8), seed=0)


def test_linear_probe_on_separable_features():
    ds = _separable_dataset(seed=3)
    acc = linear_probe_accuracy(ds.x, ds.y, ds.split_tags, seed=1)
    assert acc > 0.95


# -- switch accuracy -----------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_world():
    """Small separable dataset, a usable classifier, and a trained csvae."""
    ds = _separable_dataset(n=400, seed=4)
    clf = train_attr_classifier(ds, seed=0, max_epochs=60)
    model = build_model(_spec("csvae"), seed=0)
    train(model, ds, epochs=120, seed=0, batch_size=64,
          schedule=LrSchedule(initial_lr=2e-3, milestones=(80,), gamma=0.5))
    return ds, clf, model


def test_identity_policy_equals_reconstruction_accuracy(trained_world):
    ds, clf, model = trained_world
    report = eval_switch_accuracy(model, clf, ds, policy="identity")
    te = ds.indices(TEST)
    recon = reconstruct(model, ds.x[te], ds.y[te].astype(np.float64))
    manual = float((clf.predict(recon)[:, 0] == ds.y[te, 0]).mean())
    assert report.overall == pytest.approx(manual, abs=1e-12)
    assert report.policy == "identity"


def test_untrained_model_near_chance():
    ds = _separable_dataset(n=400, seed=5)
    clf = train_attr_classifier(ds, seed=0, max_epochs=60)
    model = build_model(_spec("csvae"), seed=9)  # untrained
    report = eval_switch_accuracy(model, clf, ds)
    assert 0.2 <= report.overall <= 0.8


def test_switch_accuracy_trained_csvae_beats_chance(trained_world):
    ds, clf, model = trained_world
    report = eval_switch_accuracy(model, clf, ds)
    assert report.overall > 0.8
    assert report.policy == "empirical-w-mean"
    # report invariants: overall is the example-weighted mean of the breakdown
    hits = sum(v[0] for v in report.counts.values())
    total = sum(v[1] for v in report.counts.values())
    assert report.overall == pytest.approx(hits / total, rel=1e-12)
    for acc in list(report.per_attr.values()) + list(report.per_target.values()):
        assert 0.0 <= acc <= 1.0
    assert "overall" in report.table()


def test_switch_accuracy_threads_deterministic(trained_world):
    ds, clf, model = trained_world
    a = eval_switch_accuracy(model, clf, ds, threads=1)
    b = eval_switch_accuracy(model, clf, ds, threads=4)
    assert a.overall == b.overall and a.counts == b.counts


def test_unusable_classifier_rejected(trained_world):
    ds, clf, model = trained_world
    rng = np.random.default_rng(1)
    y_perm = ds.y[rng.permutation(ds.n)].astype(np.float64)
    bad = fit_classifier(ds.x, y_perm, ds.split_tags, seed=0, max_epochs=15)
    if not bad.usable:
        with pytest.raises(DataError):
            eval_switch_accuracy(model, bad, ds)


# -- identity-paired MSE ------------------------------------------------------------------

@pytest.fixture(scope="module")
def paired_world():
    ds = _paired_vector_dataset(seed=6)
    models = {}
    sched = LrSchedule(initial_lr=2e-3, milestones=(80,), gamma=0.5)
    for kind in ("vae", "condvae", "csvae"):
        m = build_model(_spec(kind), seed=1)
        train(m, ds, epochs=100, seed=1, batch_size=64, schedule=sched)
        models[kind] = m
    return ds, models


def test_identity_pairs_both_directions():
    ds = _paired_vector_dataset(n_groups=10, seed=0)
    pairs = identity_pairs(ds, 2, TRAIN)
    # every group contributes one pair per direction
    srcs = {(s % 2, t % 2) for _, s, t in pairs}
    assert srcs == {(0, 1), (1, 0)}


def test_mse_target_vs_itself_zero(paired_world):
    ds, models = paired_world
    report = eval_identity_mse(models["csvae"], ds)
    pairs = identity_pairs(ds, 2, TEST)
    for a, src, tgt in pairs[:3]:
        d = ds.x[tgt].astype(np.float64) - ds.x[tgt].astype(np.float64)
        assert float((d ** 2).mean()) == 0.0
    assert report.l1 >= 0.0


def test_mse_third_column_model_independent(paired_world):
    ds, models = paired_world
    reports = {k: eval_identity_mse(m, ds) for k, m in models.items()}
    vals = [r.target_vs_original for r in reports.values()]
    assert vals[0] == vals[1] == vals[2]


def test_mse_chosen_is_exhaustive_minimizer(paired_world):
    ds, models = paired_world
    model = models["condvae"]
    cands = default_candidates(model)
    report = eval_identity_mse(model, ds, candidates=cands)
    # brute-force sweep over the candidate set on the validation split
    from csvae_lab.evaluation import _pair_mse
    pairs = identity_pairs(ds, 2, VALID)
    for key, cand_list in cands.items():
        scores = [float(np.mean(_pair_mse(model, ds, pairs, key, c, None)))
                  for c in cand_list]
        assert report.chosen[key] == cand_list[int(np.argmin(scores))]


def test_mse_l1_matches_bruteforce_double_loop(paired_world):
    ds, models = paired_world
    model = models["csvae"]
    report = eval_identity_mse(model, ds)
    from csvae_lab.evaluation import _switch_with_candidate
    errs = []
    for a, src, tgt in identity_pairs(ds, 2, TEST):
        s = int(ds.y[tgt, a])
        out = _switch_with_candidate(model, ds.x[src:src + 1],
                                     ds.y[src:src + 1].astype(np.float64), a, s,
                                     report.chosen[(a, s)], None)
        diff = ds.x[tgt].astype(np.float64).reshape(-1) - out.reshape(-1)
        errs.append(float((diff ** 2).mean()))
    assert report.l1 == pytest.approx(float(np.mean(errs)), abs=1e-9)


def test_mse_requires_pairs():
    ds = _separable_dataset(n=100, seed=7)
    model = build_model(_spec("vae"), seed=0)
    with pytest.raises(DataError):
        eval_identity_mse(model, ds, group_size=2)


# -- MI probe -------------------------------------------------------------------------------

def _tags(n, seed):
    ds = LabeledDataset(np.zeros((n, 1), dtype=np.float32),
                        np.zeros((n, 1), dtype=np.uint8), ("a",),
                        np.zeros(n, dtype=np.uint8))
    return split(ds, (0.7, 0.1, 0.2), seed=seed).split_tags


def test_mi_probe_noise_control_near_zero():
    n = 12_000
    rng = np.random.default_rng(8)
    z = rng.standard_normal((n, 2))
    y = (rng.random(n) < 0.5).astype(np.float64).reshape(-1, 1)
    est = probe_mi_from_features(z, y, _tags(n, 1), seed=0)
    assert est.mi <= 0.02
    assert est.mi_raw <= 0.02


def test_mi_probe_label_embedded_recovers_entropy():
    n = 12_000
    rng = np.random.default_rng(9)
    y = (rng.random(n) < 0.5).astype(np.float64).reshape(-1, 1)
    z = np.concatenate([2.0 * y - 1.0, rng.standard_normal((n, 1))], axis=1)
    est = probe_mi_from_features(z, y, _tags(n, 2), seed=0)
    assert abs(est.mi - est.h_y) <= 0.02
    assert est.probe_accuracy > 0.99


def test_label_entropy_closed_form():
    y = np.array([[1], [1], [0], [0]], dtype=np.float64)
    assert empirical_label_entropy(y) == pytest.approx(math.log(2), rel=1e-12)
    y2 = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=np.float64)
    assert empirical_label_entropy(y2) == pytest.approx(2 * math.log(2), rel=1e-12)


def test_mi_probe_runs_on_model(trained_world):
    ds, _, model = trained_world
    est = mi_probe(model, ds, seed=0)
    assert est.h_y > 0
    assert 0.0 <= est.mi <= est.h_y + 0.02
    z = encode_z_means(model, ds)
    assert z.shape == (ds.n, 2)
