from __future__ import annotations

import numpy as np
import pytest

from defstream.attacks import make_spec
from defstream.data import (
    CIFAR_RECORD_BYTES,
    DataFormatError,
    class_template,
    generate_synthetic,
    load_cifar10_batch,
    load_dataset,
    materialize_attack_set,
    save_dataset,
)
from defstream.model import Classifier
from defstream.rng import stream
from oracles import least_squares_probe


def test_synthetic_counts_and_balance():
    ds = generate_synthetic(10, 100, seed=0)
    assert len(ds) == 1000
    counts = np.bincount(ds.y, minlength=10)
    assert (counts == 100).all()
    assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0


def test_synthetic_deterministic():
    a = generate_synthetic(10, 20, seed=5)
    b = generate_synthetic(10, 20, seed=5)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate_synthetic(10, 20, seed=6)
    assert not np.array_equal(a.x, c.x)


def test_zero_noise_reproduces_templates():
    ds = generate_synthetic(4, 3, seed=1, noise=0.0)
    for row, label in zip(ds.x, ds.y):
        np.testing.assert_array_equal(row, class_template(int(label), (8, 8)))


def test_train_test_splits_are_disjoint_draws():
    train = generate_synthetic(10, 50, seed=3, split="train")
    test = generate_synthetic(10, 50, seed=3, split="test")
    assert not np.array_equal(train.x, test.x)


def test_linear_probe_certifies_separability():
    train = generate_synthetic(10, 100, seed=7, split="train")
    test = generate_synthetic(10, 100, seed=7, split="test")
    assert least_squares_probe(train.x, train.y, test.x, test.y) >= 0.95


def test_dataset_round_trip_bit_exact(tmp_path):
    ds = generate_synthetic(5, 12, seed=9)
    path = tmp_path / "toy.ds"
    save_dataset(ds, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.x, ds.x)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.num_classes == 5
    assert back.feature_shape == (8, 8)
    assert back.seed == 9
    save_dataset(back, tmp_path / "again.ds")
    assert (tmp_path / "again.ds").read_bytes() == path.read_bytes()


def test_dataset_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ds"
    path.write_bytes(b"nope" + b"\x00" * 64)
    with pytest.raises(DataFormatError):
        load_dataset(path)


# --------------------------------------------------------------- cifar batch

def _record(label, value=0):
    return bytes([label]) + bytes([value]) * 3072


def test_cifar_record_arithmetic(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_record(3) + _record(7))
    ds = load_cifar10_batch(path)
    assert len(ds) == 2
    assert ds.y.tolist() == [3, 7]
    assert ds.feature_shape == (3, 32, 32)


def test_cifar_zero_record_is_black_label_zero(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_record(0, 0))
    ds = load_cifar10_batch(path)
    assert ds.y[0] == 0
    assert (ds.x[0] == 0.0).all()


def test_cifar_full_byte_scales_to_one(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_record(1, 255))
    ds = load_cifar10_batch(path)
    assert (ds.x[0] == 1.0).all()


def test_cifar_truncated_rejected_with_offset(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_record(0) + b"\x01\x02\x03")
    with pytest.raises(DataFormatError) as exc:
        load_cifar10_batch(path)
    assert str(CIFAR_RECORD_BYTES) in str(exc.value)


def test_cifar_bad_label_rejected_with_offset(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_record(0) + _record(10))
    with pytest.raises(DataFormatError) as exc:
        load_cifar10_batch(path)
    assert str(CIFAR_RECORD_BYTES) in str(exc.value)


# ----------------------------------------------------------- attack data sets

def _victim(seed=0):
    return Classifier.init([64, 32, 10], stream(seed, "victim")).snapshot(0)


def test_materialize_zero_budget_equals_base():
    base = generate_synthetic(10, 10, seed=11)
    adv = materialize_attack_set(make_spec("pgd", 0.0), _victim(), base,
                                 seed=1, name="adv")
    np.testing.assert_array_equal(adv.x, base.x)


def test_materialized_set_respects_ball_and_range():
    base = generate_synthetic(10, 10, seed=12)
    for family in ("fgsm", "pgd", "mim"):
        adv = materialize_attack_set(make_spec(family, 8 / 255, alpha=2 / 255),
                                     _victim(), base, seed=2, name="adv")
        assert np.abs(adv.x - base.x).max() <= 8 / 255 + 1e-12
        assert adv.x.min() >= 0.0 and adv.x.max() <= 1.0
        np.testing.assert_array_equal(adv.y, base.y)


def test_materialization_deterministic(tmp_path):
    base = generate_synthetic(10, 10, seed=13)
    spec = make_spec("pgd", 8 / 255, alpha=2 / 255)
    a = materialize_attack_set(spec, _victim(), base, seed=3, name="adv")
    b = materialize_attack_set(spec, _victim(), base, seed=3, name="adv")
    pa, pb = tmp_path / "a.ds", tmp_path / "b.ds"
    save_dataset(a, pa)
    save_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_materialize_requires_frozen_victim():
    base = generate_synthetic(10, 5, seed=14)
    thawed = Classifier.init([64, 32, 10], stream(0, "victim"))
    with pytest.raises(ValueError):
        materialize_attack_set(make_spec("fgsm", 0.1), thawed, base,
                               seed=4, name="adv")


def test_surrogate_hash_differs_from_defense_inits():
    surrogate = Classifier.init([64, 32, 10], stream(0, "surrogate-init"))
    defense = Classifier.init([64, 32, 10], stream(0, "init"))
    assert surrogate.param_hash() != defense.param_hash()
