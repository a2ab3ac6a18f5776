import struct

import numpy as np
import pytest

from vqc.artifacts import (MAGIC, load_checkpoint, load_dataset, load_dump, read_artifact,
                           save_checkpoint, save_dataset, save_dump, write_artifact)
from vqc.diagnostics import evaluate
from vqc.errors import ArtifactError
from vqc.synthdata import MixtureSpec, generate
from vqc.vqvae import TrainConfig, pretrain_then_finetune


@pytest.fixture(scope="module")
def trained():
    ds = generate(MixtureSpec(dim=2, points_per_cluster=40, seed=2))
    model, _, _ = pretrain_then_finetune(ds, TrainConfig(seed=0, codebook_size=16, epochs=3,
                                                          pretrain_epochs=2))
    return model, ds


def test_header_layout(tmp_path):
    write_artifact(tmp_path / "a.vqc", b"DUMP", {"x": np.arange(3.0)})
    raw = (tmp_path / "a.vqc").read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<II", raw[4:12]) == (1, 0x01020304)
    assert raw[12:16] == b"DUMP"


def test_generic_round_trip(tmp_path):
    sections = {"meta": {"a": 1, "b": [1.5]}, "f": np.linspace(0, 1, 6).reshape(2, 3),
                "i": np.array([3, -1, 7]), "empty": np.zeros((0, 2))}
    write_artifact(tmp_path / "x.vqc", b"DUMP", sections)
    kind, got = read_artifact(tmp_path / "x.vqc")
    assert kind == b"DUMP" and got["meta"] == sections["meta"]
    for k in ("f", "i", "empty"):
        np.testing.assert_array_equal(got[k], sections[k])
        assert got[k].dtype == (np.int64 if k == "i" else np.float64)


def test_checkpoint_round_trip(tmp_path, trained):
    model, ds = trained
    save_checkpoint(tmp_path / "c.vqc", model, {"note": "x"})
    back, meta = load_checkpoint(tmp_path / "c.vqc")
    assert meta == {"note": "x"}
    for a, b in zip(model.encoder.params(), back.encoder.params()):
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
    assert back.encoder.step == model.encoder.step
    np.testing.assert_array_equal(back.codebook.ema_sum, model.codebook.ema_sum)
    r1, r2 = evaluate(model, ds), evaluate(back, ds)
    for k, v in r1.scalars().items():
        assert r2.scalars()[k] == pytest.approx(v, abs=1e-12)


def test_dataset_round_trip(tmp_path, trained):
    _, ds = trained
    save_dataset(tmp_path / "d.vqc", ds)
    back = load_dataset(tmp_path / "d.vqc")
    np.testing.assert_array_equal(back.samples, ds.samples)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.cluster_means, ds.cluster_means)
    np.testing.assert_array_equal(back.scaler.std, ds.scaler.std)
    assert back.spec.seed == ds.spec.seed


def test_dump_round_trip(tmp_path):
    save_dump(tmp_path / "u.vqc", np.ones((4, 1)), np.zeros((2, 1)), np.array([[0], [1], [1], [0]]))
    d = load_dump(tmp_path / "u.vqc")
    assert d["assignment"].ravel().tolist() == [0, 1, 1, 0]


def test_wrong_kind_and_corruption(tmp_path, trained):
    save_dump(tmp_path / "u.vqc", np.ones((1, 1)), np.ones((1, 1)), np.zeros(1, dtype=int))
    with pytest.raises(ArtifactError):
        load_checkpoint(tmp_path / "u.vqc")
    (tmp_path / "bad.vqc").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ArtifactError):
        read_artifact(tmp_path / "bad.vqc")
    raw = (tmp_path / "u.vqc").read_bytes()
    (tmp_path / "trunc.vqc").write_bytes(raw[:-5])
    with pytest.raises(ArtifactError):
        read_artifact(tmp_path / "trunc.vqc")
    with pytest.raises(ArtifactError):
        read_artifact(tmp_path / "missing.vqc")
