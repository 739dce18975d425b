import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choice_policy.numerics import (
    AdamState,
    MlpParams,
    ShapeError,
    TrainingError,
    adam_step,
    config_hash,
    dumps_reals,
    init_mlp,
    load_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    save_mlp,
)
from oracles import central_difference, loop_mlp, max_rel_error


def random_mlp(rng, max_hidden=2, max_width=16):
    dims = [int(rng.integers(1, max_width + 1)) for _ in range(int(rng.integers(0, max_hidden + 1)) + 2)]
    return init_mlp(dims, rng)


def test_forward_matches_scalar_loop():
    rng = make_rng(0, "t")
    for _ in range(20):
        p = random_mlp(rng)
        x = rng.standard_normal(p.in_dim)
        np.testing.assert_allclose(mlp_forward(p, x), loop_mlp(p.weights, p.biases, x), rtol=1e-12, atol=1e-12)


def test_batched_forward_equals_rowwise():
    rng = make_rng(1, "t")
    p = init_mlp([3, 7, 5, 2], rng)
    x = rng.standard_normal((6, 3))
    rows = np.stack([mlp_forward(p, r) for r in x])
    np.testing.assert_allclose(mlp_forward(p, x), rows, rtol=0, atol=1e-14)


def test_init_bounds_and_shapes():
    p = init_mlp([4, 9, 3], make_rng(2))
    assert [w.shape for w in p.weights] == [(9, 4), (3, 9)]
    assert np.abs(p.weights[0]).max() <= np.sqrt(1 / 4)
    assert np.abs(p.weights[1]).max() <= np.sqrt(1 / 9)
    assert p.num_params() == 4 * 9 + 9 + 9 * 3 + 3


def test_gradients_match_finite_differences():
    rng = make_rng(3, "grad")
    worst = 0.0
    for _ in range(30):
        p = random_mlp(rng)
        x = rng.standard_normal((3, p.in_dim))
        w_out = rng.standard_normal((3, p.out_dim))
        grads, gx = mlp_backward(p, x, w_out)
        arrays = p.arrays()
        num = central_difference(lambda: float((mlp_forward(p, x) * w_out).sum()), {**arrays, "x": x})
        worst = max(worst, max_rel_error({**grads.arrays(), "x": gx}, num))
    assert worst < 1e-4


def test_shape_errors():
    p = init_mlp([3, 4, 2], make_rng(0))
    with pytest.raises(ShapeError):
        mlp_forward(p, np.zeros(4))
    with pytest.raises(ShapeError):
        mlp_backward(p, np.zeros(3), np.zeros(3))
    with pytest.raises(ShapeError):
        MlpParams([3, 2], [np.zeros((3, 2))], [np.zeros(2)])


def test_adam_first_step_moves_by_lr_times_sign():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}
    adam_step(AdamState(lr=1e-3), params, grads)
    # first bias-corrected step is lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - 1e-3 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(params["w"], expect, rtol=0, atol=1e-15)


def test_adam_rejects_nonfinite_and_names_tensor():
    with pytest.raises(TrainingError, match="bad"):
        adam_step(AdamState(), {"bad": np.zeros(2)}, {"bad": np.array([np.nan, 0.0])})


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(5, "encoder").random(4)
    assert np.array_equal(a, make_rng(5, "encoder").random(4))
    assert not np.array_equal(a, make_rng(5, "score_head").random(4))
    assert not np.array_equal(a, make_rng(6, "encoder").random(4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=8))
def test_reals_round_trip_exactly(values):
    assert json.loads(dumps_reals(values)) == values


def test_mlp_save_load_round_trip(tmp_path):
    p = init_mlp([2, 5, 3], make_rng(4))
    save_mlp(tmp_path / "m.json", p, {"note": "x"})
    q, cfg = load_mlp(tmp_path / "m.json")
    assert cfg == {"note": "x"}
    for a, b in zip(p.arrays().values(), q.arrays().values()):
        assert np.array_equal(a, b)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
