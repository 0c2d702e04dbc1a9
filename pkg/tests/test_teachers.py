from dataclasses import replace

import numpy as np
import pytest

from roskd.data import generate, inject_noise
from roskd.nn import ModelSpec, OptimState, forward, init_model
from roskd.partition import PartitionSpec, make_partition
from roskd.teachers import TeacherEnsemble, accuracy, teacher_logits, train_ensemble, train_teacher


def test_separable_subset_is_learned():
    ds = generate(3, 4, 60, 8.0, seed=0)
    params, hist = train_teacher(ModelSpec((4, 16, 3), 0), ds, np.arange(len(ds)), OptimState(),
                                 epochs=10, batch=32, seed=1)
    assert accuracy(forward(params, ds.features), ds.clean_labels, ds.task_mode) >= 0.95
    assert len(hist) == 10 and hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_zero_epochs_returns_init():
    ds = generate(3, 4, 10, 2.0, seed=0)
    spec = ModelSpec((4, 5, 3), 7)
    params, hist = train_teacher(spec, ds, np.arange(30), OptimState(), epochs=0)
    assert params.equals(init_model(spec)) and hist == []


def test_training_is_deterministic():
    ds = inject_noise(generate(3, 4, 20, 2.0, seed=0), 0.3, seed=1)
    args = (ModelSpec((4, 5, 3), 2), ds, np.arange(0, 60, 2), OptimState())
    a, _ = train_teacher(*args, epochs=3, batch=8, seed=4)
    b, _ = train_teacher(*args, epochs=3, batch=8, seed=4)
    c, _ = train_teacher(*args, epochs=3, batch=8, seed=5)
    assert a.equals(b) and not a.equals(c)


def test_only_subset_samples_are_read():
    ds = inject_noise(generate(3, 4, 20, 2.0, seed=0), 0.3, seed=1)
    subset = np.arange(0, 60, 3)
    # poison every sample outside the subset; any access would turn the weights into NaN
    feats = np.full(ds.features.shape, np.nan)
    feats[subset] = ds.features[subset]
    poisoned = replace(ds, features=feats)
    a, _ = train_teacher(ModelSpec((4, 5, 3), 2), poisoned, subset, OptimState(), epochs=3, batch=8, seed=0)
    b, _ = train_teacher(ModelSpec((4, 5, 3), 2), ds, subset, OptimState(), epochs=3, batch=8, seed=0)
    assert np.all(np.isfinite(a.values)) and a.equals(b)


def test_noisy_labels_are_the_targets():
    ds = inject_noise(generate(3, 4, 20, 2.0, seed=0), 0.5, seed=1)
    clean_only = replace(ds, noisy_labels=ds.clean_labels.copy())
    a, _ = train_teacher(ModelSpec((4, 5, 3), 2), ds, np.arange(60), OptimState(), epochs=2, batch=8)
    b, _ = train_teacher(ModelSpec((4, 5, 3), 2), clean_only, np.arange(60), OptimState(), epochs=2, batch=8)
    assert not a.equals(b)


def test_empty_subset_rejected():
    ds = generate(3, 4, 10, 2.0, seed=0)
    with pytest.raises(ValueError):
        train_teacher(ModelSpec((4, 3), 0), ds, [], OptimState())


@pytest.fixture(scope="module")
def ensemble_and_data():
    ds = inject_noise(generate(8, 6, 40, 2.5, seed=0), 0.3, seed=1)
    part = make_partition(len(ds), PartitionSpec(5, 0.4, seed=2))
    specs = [ModelSpec((6, 12, 8), i) for i in range(5)]
    return ds, part, specs, train_ensemble(specs, ds, part, OptimState(), epochs=3, batch=32, seed=3)


def test_teacher_logits_shape(ensemble_and_data):
    ds, _, _, ens = ensemble_and_data
    assert teacher_logits(ens, ds.features[:64]).shape == (5, 64, 8)


def test_teachers_are_diverse(ensemble_and_data):
    ds, _, _, ens = ensemble_and_data
    t = teacher_logits(ens, ds.features)
    assert not np.allclose(t[0], t[1])


def test_parallel_matches_serial(ensemble_and_data):
    ds, part, specs, ens = ensemble_and_data
    par = train_ensemble(specs, ds, part, OptimState(), epochs=3, batch=32, seed=3, jobs=2)
    assert all(a.equals(b) for a, b in zip(ens.teachers, par.teachers))
    assert par.subset_ids == ens.subset_ids


def test_duplicate_teachers_are_allowed():
    ds = generate(3, 4, 10, 2.0, seed=0)
    p = init_model(ModelSpec((4, 3), 0))
    ens = TeacherEnsemble((p, p), (0, 0))
    t = teacher_logits(ens, ds.features)
    assert np.array_equal(t[0], t[1])


def test_select_and_spec_mismatch(ensemble_and_data):
    _, part, specs, ens = ensemble_and_data
    sub = ens.select([3])
    assert len(sub) == 1 and sub.teachers[0].equals(ens.teachers[3])
    with pytest.raises(ValueError):
        train_ensemble(specs[:4], ensemble_and_data[0], part, OptimState(), epochs=1)
    with pytest.raises(ValueError):
        TeacherEnsemble((), ())
