import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, max_relative_error
from roskd.losses import cross_entropy
from roskd.nn import (ModelSpec, OptimState, ParamVector, backward, forward, init_model, input_gradient,
                      load_checkpoint, lr_at_epoch, save_checkpoint, scale, sgd_step)


def test_zero_bias_init_and_determinism():
    spec = ModelSpec((2, 1), init_seed=11)
    p = init_model(spec)
    (W, b), = list(p.layers())
    assert np.all(b == 0.0)
    assert init_model(spec).equals(p)
    assert not init_model(ModelSpec((2, 1), init_seed=12)).equals(p)


def test_param_count():
    # 4*8 + 8 + 8*3 + 3
    assert ModelSpec((4, 8, 3)).n_params == 67
    assert init_model(ModelSpec((4, 8, 3))).values.size == 67


def test_init_scale_matches_fan_in():
    p = init_model(ModelSpec((400, 300, 2), init_seed=0))
    W1, _ = next(p.layers())
    assert W1.std() == pytest.approx(1 / np.sqrt(400), rel=0.02)


@pytest.mark.parametrize("widths", [(3,), (0, 2), (2, 0), (-1, 3)])
def test_invalid_spec_rejected(widths):
    with pytest.raises(ValueError):
        ModelSpec(widths)


def test_forward_zero_map_and_scalar():
    spec = ModelSpec((3, 2))
    zero = ParamVector(np.zeros(spec.n_params), spec)
    assert np.all(forward(zero, np.random.default_rng(0).standard_normal((5, 3))) == 0.0)
    one = ModelSpec((1, 1))
    p = ParamVector(np.array([2.0, 1.0]), one)
    assert forward(p, [[3.0]])[0, 0] == 7.0


def test_forward_batch_shape_and_mismatch():
    p = init_model(ModelSpec((4, 5, 3), 1))
    assert forward(p, np.ones((7, 4))).shape == (7, 3)
    with pytest.raises(ValueError):
        forward(p, np.ones((7, 5)))


def test_backward_zero_upstream():
    p = init_model(ModelSpec((4, 5, 3), 1))
    g = backward(p, np.ones((2, 4)), np.zeros((2, 3)))
    assert np.all(g.values == 0.0)


def test_backward_shape_mismatch():
    p = init_model(ModelSpec((4, 5, 3), 1))
    with pytest.raises(ValueError):
        backward(p, np.ones((2, 4)), np.zeros((3, 3)))


def test_backward_replay_is_deterministic():
    p = init_model(ModelSpec((4, 6, 3), 2))
    x = np.random.default_rng(1).standard_normal((5, 4))
    dz = np.random.default_rng(2).standard_normal((5, 3))
    assert np.array_equal(backward(p, x, dz).values, backward(p, x, dz).values)


def _ce_param_check(seed):
    rng = np.random.default_rng(seed)
    widths = (int(rng.integers(2, 5)), *rng.integers(2, 6, size=rng.integers(0, 3)), int(rng.integers(2, 4)))
    spec = ModelSpec(widths, seed)
    p = ParamVector(init_model(spec).values + 0.1 * rng.standard_normal(spec.n_params), spec)
    x = rng.standard_normal((3, widths[0]))
    y = rng.integers(0, widths[-1], 3)
    _, dz = cross_entropy(forward(p, x), y)
    analytic = backward(p, x, dz).values
    numeric = central_difference(lambda v: cross_entropy(forward(ParamVector(v, spec), x), y)[0], p.values)
    return max_relative_error(analytic, numeric)


@pytest.mark.parametrize("seed", range(10))
def test_param_gradient_matches_finite_differences(seed):
    assert _ce_param_check(seed) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    spec = ModelSpec((3, 7, 4), 5)
    p = init_model(spec)
    x = rng.standard_normal((2, 3))
    y = np.array([1, 3])
    _, dz = cross_entropy(forward(p, x), y, reduction="sum")
    analytic = input_gradient(p, x, dz)
    numeric = central_difference(lambda v: cross_entropy(forward(p, v), y, reduction="sum")[0], x)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_lr_schedule():
    opt = OptimState()
    assert lr_at_epoch(opt, 0) == 0.1
    assert lr_at_epoch(opt, 24) == 0.1
    assert lr_at_epoch(opt, 25) == pytest.approx(0.01)
    assert lr_at_epoch(opt, 39) == pytest.approx(0.01)
    assert lr_at_epoch(opt, 40) == pytest.approx(0.001)
    with pytest.raises(ValueError):
        lr_at_epoch(opt, -1)


def test_sgd_fixed_point():
    spec = ModelSpec((1, 1))
    p = ParamVector(np.array([0.3, -0.2]), spec)
    opt = OptimState(momentum=0.9, weight_decay=0.0)
    out = sgd_step(p, ParamVector(np.zeros(2), spec), opt, 0)
    assert out.equals(p)


def test_sgd_scalar_step():
    spec = ModelSpec((1, 1))
    p = ParamVector(np.array([1.0, 1.0]), spec)
    opt = OptimState(momentum=0.0, weight_decay=0.0, base_lr=0.1)
    out = sgd_step(p, ParamVector(np.ones(2), spec), opt, 0)
    assert out.values == pytest.approx([0.9, 0.9], abs=1e-15)


def test_sgd_momentum_accumulates():
    spec = ModelSpec((1, 1))
    p = ParamVector(np.zeros(2), spec)
    g = ParamVector(np.array([2.0, -1.0]), spec)
    opt = OptimState(momentum=0.9, weight_decay=0.0)
    p = sgd_step(p, g, opt, 0)
    p = sgd_step(p, g, opt, 0)
    assert opt.momentum_buffers == pytest.approx(1.9 * g.values)


def test_sgd_weight_decay_enters_buffer():
    spec = ModelSpec((1, 1))
    p = ParamVector(np.array([2.0, 0.0]), spec)
    opt = OptimState(momentum=0.0, weight_decay=0.5, base_lr=1.0)
    out = sgd_step(p, ParamVector(np.zeros(2), spec), opt, 0)
    assert out.values.tolist() == [1.0, 0.0]


@pytest.mark.parametrize("kwargs", [{"momentum": 1.0}, {"momentum": -0.1}, {"weight_decay": -1e-4},
                                    {"base_lr": 0.0}])
def test_optim_state_invariants(kwargs):
    with pytest.raises(ValueError):
        OptimState(**kwargs)


vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=7, max_size=7)


@settings(max_examples=50, deadline=None)
@given(vectors, vectors, vectors)
def test_param_vector_algebra(a, b, c):
    spec = ModelSpec((1, 2, 1))
    pa, pb, pc = (ParamVector(np.array(v), spec) for v in (a, b, c))
    lhs = ((pa + pb) + pc).values
    rhs = (pa + (pb + pc)).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)
    assert scale(1.0, pa).equals(pa)
    mix = 0.25 * pa + 0.75 * pb
    assert mix.values.size == spec.n_params


def test_param_vector_spec_mismatch():
    with pytest.raises(ValueError):
        init_model(ModelSpec((2, 2))) + init_model(ModelSpec((2, 3)))
    with pytest.raises(ValueError):
        ParamVector(np.zeros(5), ModelSpec((2, 2)))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    p = init_model(ModelSpec((3, 5, 2), 9))
    p = ParamVector(p.values * np.pi, p.spec)
    save_checkpoint(tmp_path / "m.ckpt", p, run_id="abc")
    q, run_id = load_checkpoint(tmp_path / "m.ckpt")
    assert q.equals(p)
    assert q.spec == p.spec
    assert run_id == "abc"


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.ckpt").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.ckpt")
