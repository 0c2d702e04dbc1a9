import numpy as np
import pytest

from roskd.data import (MULTI, SINGLE, generate, inject_noise, load_dataset, save_dataset,
                        train_val_test_split)
from roskd.nn import ModelSpec, OptimState, forward
from roskd.teachers import train_teacher


def test_sizes_and_determinism():
    a = generate(8, 5, 125, 3.0, seed=4)
    b = generate(8, 5, 125, 3.0, seed=4)
    assert len(a) == 1000
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.clean_labels, b.clean_labels)
    assert a.clean_labels.max() < 8


def test_separable_two_class_linear_fit():
    ds = generate(2, 4, 100, 12.0, seed=1)
    spec = ModelSpec((4, 2), 0)
    params, _ = train_teacher(spec, ds, np.arange(len(ds)), OptimState(), epochs=5, batch=32, seed=0)
    acc = np.mean(forward(params, ds.features).argmax(1) == ds.clean_labels)
    assert acc >= 0.99


@pytest.mark.parametrize("kwargs", [dict(n_classes=1), dict(dim=1), dict(per_class=0), dict(separation=-1.0)])
def test_generate_rejects_bad_arguments(kwargs):
    args = dict(n_classes=3, dim=2, per_class=5, separation=1.0, seed=0) | kwargs
    with pytest.raises(ValueError):
        generate(**args)


def test_zero_separation_allowed():
    ds = generate(3, 2, 10, 0.0, seed=0)
    assert len(ds) == 30


def test_noise_zero_is_noop():
    ds = inject_noise(generate(4, 3, 50, 2.0, 0), 0.0, seed=1)
    assert np.array_equal(ds.noisy_labels, ds.clean_labels)


def test_noise_one_flips_everything():
    ds = inject_noise(generate(4, 3, 50, 2.0, 0), 1.0, seed=1)
    assert np.all(ds.noisy_labels != ds.clean_labels)


def test_noise_rate_statistics():
    ds = inject_noise(generate(8, 2, 12500, 1.0, 0), 0.3, seed=7)
    assert len(ds) == 100_000
    assert abs(ds.flip_fraction() - 0.3) <= 0.01
    flipped = ds.noisy_labels[ds.noisy_labels != ds.clean_labels]
    # flips land uniformly on the other classes
    counts = np.bincount(flipped, minlength=8)
    assert counts.min() > 0.8 * counts.mean()


def test_clean_labels_never_mutated():
    base = generate(4, 3, 50, 2.0, 0)
    before = base.clean_labels.copy()
    noisy = inject_noise(base, 0.5, seed=2)
    assert np.array_equal(noisy.clean_labels, before)
    assert np.array_equal(base.noisy_labels, before)
    with pytest.raises(ValueError):
        noisy.clean_labels[0] = 1


@pytest.mark.parametrize("eta", [-0.1, 1.5])
def test_noise_rate_range(eta):
    with pytest.raises(ValueError):
        inject_noise(generate(3, 2, 5, 1.0, 0), eta, seed=0)


def test_asymmetric_noise_follows_transition():
    ds = inject_noise(generate(4, 3, 200, 2.0, 0), 0.4, seed=3, kind="asymmetric")
    flipped = ds.noisy_labels != ds.clean_labels
    assert np.all(ds.noisy_labels[flipped] == (ds.clean_labels[flipped] + 1) % 4)


def test_multilabel_masks_and_bit_noise():
    ds = generate(8, 6, 200, 2.0, seed=3, task_mode=MULTI)
    assert ds.clean_labels.shape == (1600, 8)
    own = np.repeat(np.arange(8), 200)
    assert np.all(ds.clean_labels[np.arange(1600), own] == 1)
    assert ds.clean_labels.sum(1).mean() > 1.0
    noisy = inject_noise(ds, 0.2, seed=4)
    assert abs(noisy.flip_fraction() - 0.2) < 0.01


def test_split_is_disjoint_70_10_20():
    sp = train_val_test_split(2000, seed=0)
    assert (len(sp.train), len(sp.val), len(sp.test)) == (1400, 200, 400)
    all_idx = np.concatenate([sp.train, sp.val, sp.test])
    assert len(np.unique(all_idx)) == 2000


@pytest.mark.parametrize("mode", [SINGLE, MULTI])
def test_csv_roundtrip(tmp_path, mode):
    ds = inject_noise(generate(3, 4, 10, 2.0, 5, task_mode=mode), 0.3, seed=6)
    csv_path, sidecar = save_dataset(ds, tmp_path / "d.csv")
    header = csv_path.read_text().splitlines()[0]
    assert header.startswith("feat_0,feat_1,feat_2,feat_3")
    if mode == SINGLE:
        assert header.endswith("clean,noisy")
    back = load_dataset(csv_path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.clean_labels, ds.clean_labels)
    assert np.array_equal(back.noisy_labels, ds.noisy_labels)
    assert back.task_mode == mode and back.noise_rate == 0.3
