import numpy as np
import pytest

from csvae_lab.checkpoint import (checkpoint_from_bytes, checkpoint_to_bytes,
                                  load_classifier, load_model, model_spec_from_config,
                                  save_classifier, save_model)
from csvae_lab.config import RunConfig, parse_config
from csvae_lab.data import LabeledDataset, split
from csvae_lab.errors import (DataError, DatasetChecksumError, DatasetMagicError,
                              DatasetTruncatedError, DatasetVersionError)
from csvae_lab.evaluation import train_attr_classifier
from csvae_lab.models import ModelSpec, TrainState, build_model, reconstruct, train


def _cfg(kind="csvae"):
    cfg = parse_config(f"model.kind = {kind}\nmodel.x_shape = 3\nmodel.k = 1\n"
                       "model.enc_hidden = 8\nmodel.dec_hidden = 8\nmodel.adv_hidden = 8")
    return cfg


def _dataset(n=90, seed=0):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.uint8)
    x = rng.normal(0, 1, (n, 3)) + 3.0 * y[:, None]
    ds = LabeledDataset(x.astype(np.float32), y.reshape(-1, 1), ("a",),
                        np.zeros(n, dtype=np.uint8))
    return split(ds, (0.6, 0.2, 0.2), seed=seed)


def test_model_roundtrip_outputs_bit_identical(tmp_path):
    cfg = _cfg()
    model = build_model(model_spec_from_config(cfg), seed=0)
    ds = _dataset()
    train(model, ds, epochs=2, seed=0)
    p1 = tmp_path / "a.csvc"
    save_model(p1, model, cfg)
    m1, cfg1, state1 = load_model(p1)
    assert state1 is None

    # float32 storage: a loaded model round-trips bit-exactly
    p2 = tmp_path / "b.csvc"
    save_model(p2, m1, cfg1)
    assert p1.read_bytes() == p2.read_bytes()
    m2, _, _ = load_model(p2)
    x = ds.x[:16]
    y = ds.y[:16].astype(np.float64)
    np.testing.assert_array_equal(reconstruct(m1, x, y), reconstruct(m2, x, y))


def test_resume_state_roundtrip(tmp_path):
    cfg = _cfg()
    ds = _dataset()
    model = build_model(model_spec_from_config(cfg), seed=0)
    res = train(model, ds, epochs=3, seed=0)
    path = tmp_path / "ck.csvc"
    save_model(path, model, cfg, res.state)
    m2, cfg2, state2 = load_model(path)
    assert state2 is not None
    assert state2.epoch == 3
    assert state2.adam_main.step == res.state.adam_main.step
    assert state2.adam_adv.step == res.state.adam_adv.step
    for a, b in zip(res.state.adam_main.m, state2.adam_main.m):
        np.testing.assert_allclose(a.astype(np.float32), b, rtol=1e-6)


def test_corrupt_checkpoint_detected(tmp_path):
    cfg = _cfg("vae")
    model = build_model(model_spec_from_config(cfg), seed=0)
    path = tmp_path / "ck.csvc"
    save_model(path, model, cfg)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(DatasetChecksumError):
        checkpoint_from_bytes(bytes(blob))


def test_checkpoint_format_errors():
    blob = checkpoint_to_bytes("vae", "model.kind = vae\n", [("t", np.zeros(3))])
    with pytest.raises(DatasetMagicError):
        checkpoint_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DatasetTruncatedError):
        checkpoint_from_bytes(blob[:-6])
    bad_version = bytearray(blob)
    bad_version[4] = 9
    with pytest.raises(DatasetVersionError):
        checkpoint_from_bytes(bytes(bad_version))


def test_tensor_count_matches_parameter_groups(tmp_path):
    cfg = _cfg()
    model = build_model(model_spec_from_config(cfg), seed=0)
    path = tmp_path / "ck.csvc"
    save_model(path, model, cfg)
    data = checkpoint_from_bytes(path.read_bytes())
    assert len(data.tensors) == len(model.named_params())
    names = {n for n, _ in data.tensors}
    assert names == {n for n, _ in model.named_params()}


def test_missing_tensor_rejected(tmp_path):
    cfg = _cfg("vae")
    model = build_model(model_spec_from_config(cfg), seed=0)
    tensors = [(n, p.data) for n, p in model.named_params()][:-1]
    from csvae_lab.checkpoint import checkpoint_to_bytes as ctb
    from csvae_lab.config import serialize_config
    blob = ctb("vae", serialize_config(cfg), tensors)
    path = tmp_path / "ck.csvc"
    path.write_bytes(blob)
    with pytest.raises(DataError):
        load_model(path)


def test_classifier_roundtrip(tmp_path):
    ds = _dataset(n=200, seed=3)
    clf = train_attr_classifier(ds, seed=0, max_epochs=30, hidden=(8,))
    cfg = RunConfig()
    cfg.model.kind = "classifier"
    cfg.model.x_shape = (3,)
    cfg.model.k = 1
    cfg.model.adv_hidden = (8,)
    cfg.data.attributes = ("a",)
    path = tmp_path / "clf.csvc"
    save_classifier(path, clf, cfg)
    loaded, _ = load_classifier(path)
    np.testing.assert_array_equal(loaded.predict(ds.x[:20]),
                                  clf.predict(ds.x[:20]))
    assert loaded.attr_names == ("a",)
    assert loaded.val_accuracy == pytest.approx(clf.val_accuracy, abs=1e-7)

    with pytest.raises(DataError):
        load_model(path)
    model_path = tmp_path / "m.csvc"
    save_model(model_path, build_model(model_spec_from_config(_cfg()), seed=0), _cfg())
    with pytest.raises(DataError):
        load_classifier(model_path)
