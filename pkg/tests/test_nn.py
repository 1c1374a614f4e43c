import numpy as np
import pytest

import binn.nn as nn
from binn.nn import (
    AdagradState,
    ClstmParams,
    adagrad_update,
    affine_backward,
    affine_forward,
    average_pool,
    biclstm_backprop,
    biclstm_forward,
    biclstm_run,
    clstm_backprop,
    clstm_forward,
    clstm_run,
    dropout,
    load_checkpoint,
    max_relative_error,
    mse_grad,
    mse_loss,
    numerical_gradient,
    save_checkpoint,
)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def cell_oracle(a, v, b, h, c, full=False):
    """The cell written out gate by gate from the named matrices."""
    peep = (lambda g, x: a[f"W_c{g}"] @ x) if full else (lambda g, x: a[f"W_c{g}"] * x)
    pre = {g: a[f"W_v{g}"] @ v + a[f"W_h{g}"] @ h + a[f"W_b{g}"] @ b + a[f"b_{g}"] for g in "ifco"}
    i = _sig(pre["i"] + peep("i", c))
    f = _sig(pre["f"] + peep("f", c))
    c_new = f * c + i * np.tanh(pre["c"])
    o = _sig(pre["o"] + peep("o", c_new))
    return o * np.tanh(c_new), c_new


def _params(rng, d=4, nb=3, H=5, full=False):
    p = ClstmParams.init(d, nb, H, rng, full)
    for k in p.arrays:
        p.arrays[k] = p.arrays[k] + rng.normal(scale=0.3, size=p.arrays[k].shape)
    return p


@pytest.fixture(params=[True, False], ids=["compiled", "array"])
def compiled(request):
    old = nn.USE_COMPILED
    nn.USE_COMPILED = request.param
    yield request.param
    nn.USE_COMPILED = old


@pytest.mark.parametrize("full", [False, True])
def test_forward_matches_cell_oracle(full, compiled, rng):
    p = _params(rng, full=full)
    inputs = [(rng.normal(size=4), np.eye(3)[rng.integers(3)]) for _ in range(6)]
    states = clstm_forward(p, inputs)
    h, c = np.zeros(5), np.zeros(5)
    for (v, b), s in zip(inputs, states):
        h, c = cell_oracle(p.arrays, v, b, h, c, full)
        np.testing.assert_allclose(s.h, h, atol=1e-13)
        np.testing.assert_allclose(s.c, c, atol=1e-13)


def test_masked_steps_equal_later_start(compiled, rng):
    p = _params(rng)
    X = rng.normal(size=(1, 7, 4))
    Bv = np.eye(3)[rng.integers(0, 3, (1, 7))]
    mask = np.ones((1, 7))
    mask[0, :3] = 0
    H_masked, _ = clstm_run(p, X, Bv, mask)
    H_short, _ = clstm_run(p, X[:, 3:], Bv[:, 3:])
    np.testing.assert_allclose(H_masked[0, 3:], H_short[0], atol=1e-14)
    assert np.all(H_masked[0, :3] == 0)


def test_compiled_and_array_paths_agree(rng):
    p = _params(rng)
    X = rng.normal(size=(3, 6, 4))
    Bv = np.eye(3)[rng.integers(0, 3, (3, 6))]
    mask = np.ones((3, 6))
    mask[1, :2] = 0
    mask[2, :4] = 0
    mask[0, 4:] = 0
    R = rng.normal(size=(3, 6, 5))
    out = {}
    for flag in (True, False):
        nn.USE_COMPILED = flag
        try:
            H, cache = clstm_run(p, X, Bv, mask)
            g, dX = clstm_backprop(cache, R)
        finally:
            nn.USE_COMPILED = True
        out[flag] = (H, g, dX)
    np.testing.assert_allclose(out[True][0], out[False][0], atol=1e-13)
    np.testing.assert_allclose(out[True][2], out[False][2], atol=1e-13)
    for k in p.arrays:
        np.testing.assert_allclose(out[True][1].arrays[k], out[False][1].arrays[k], atol=1e-13)


@pytest.mark.parametrize("full", [False, True])
def test_clstm_gradients_match_finite_differences(full, compiled, rng):
    p = _params(rng, full=full)
    X = rng.normal(size=(2, 5, 4))
    Bv = np.eye(3)[rng.integers(0, 3, (2, 5))]
    mask = np.ones((2, 5))
    mask[1, :2] = 0
    R = rng.normal(size=(2, 5, 5))
    _, cache = clstm_run(p, X, Bv, mask)
    grads, dX = clstm_backprop(cache, R)
    f = lambda: float((clstm_run(p, X, Bv, mask)[0] * R).sum())
    num = numerical_gradient(f, p.arrays, h=1e-5)
    assert max_relative_error(grads.arrays, num) < 1e-5
    num_x = numerical_gradient(f, {"X": X}, h=1e-5)["X"]
    np.testing.assert_allclose(dX * mask[:, :, None], num_x, atol=1e-8)


def test_biclstm_alignment_and_gradients(rng):
    fwd, bwd = _params(rng), _params(rng)
    inputs = [(rng.normal(size=4), np.eye(3)[rng.integers(3)]) for _ in range(4)]
    states = biclstm_forward(fwd, bwd, inputs)
    f_states = clstm_forward(fwd, inputs)
    b_states = clstm_forward(bwd, inputs[::-1])[::-1]
    for s, a, b in zip(states, f_states, b_states):
        np.testing.assert_allclose(s, np.concatenate([a.h, b.h]), atol=1e-14)

    X = np.stack([v for v, _ in inputs])[None]
    Bv = np.stack([b for _, b in inputs])[None]
    R = rng.normal(size=(1, 4, 10))
    Hcat, caches = biclstm_run(fwd, bwd, X, Bv)
    gf, gb, _ = biclstm_backprop(caches, R)
    f = lambda: float((biclstm_run(fwd, bwd, X, Bv)[0] * R).sum())
    assert max_relative_error(gf.arrays, numerical_gradient(f, fwd.arrays, 1e-5)) < 1e-5
    assert max_relative_error(gb.arrays, numerical_gradient(f, bwd.arrays, 1e-5)) < 1e-5


def test_mask_must_be_binary(rng):
    p = _params(rng)
    with pytest.raises(ValueError):
        clstm_run(p, np.zeros((1, 2, 4)), np.zeros((1, 2, 3)), np.array([[0.5, 1.0]]))


def test_shape_errors(rng):
    with pytest.raises(ValueError):
        average_pool([])
    with pytest.raises(ValueError):
        affine_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(4))
    with pytest.raises(ValueError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_affine_and_mse_by_hand(rng):
    W, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=(2, 4))
    np.testing.assert_allclose(affine_forward(W, b, x), np.array([W @ r + b for r in x]))
    dy = rng.normal(size=(2, 3))
    dW, db, dx = affine_backward(W, x, dy)
    np.testing.assert_allclose(dW, sum(np.outer(dy[r], x[r]) for r in range(2)))
    np.testing.assert_allclose(db, dy.sum(0))
    np.testing.assert_allclose(dx, dy @ W)
    assert mse_loss([1.0, 2.0], [0.0, 4.0]) == pytest.approx(2.5)
    np.testing.assert_allclose(mse_grad(np.array([1.0, 2.0]), np.array([0.0, 4.0])), [1.0, -2.0])


def test_dropout_is_inverted_and_identity_at_inference(rng):
    x = np.ones(200_000)
    y, keep = dropout(x, 0.25, True, rng)
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert y.mean() == pytest.approx(1.0, abs=0.01)
    z, none = dropout(x, 0.25, False, rng)
    assert none is None and np.array_equal(z, x)
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, rng)


def test_adagrad_accumulates_elementwise():
    theta = {"w": np.array([1.0, -2.0])}
    state = AdagradState(lr=0.5, eps=0.0)
    adagrad_update(theta, {"w": np.array([2.0, 0.5])}, state)
    np.testing.assert_allclose(theta["w"], [1.0 - 0.5, -2.0 - 0.5])
    adagrad_update(theta, {"w": np.array([1.0, 1.0])}, state)
    np.testing.assert_allclose(state.accum["w"], [5.0, 1.25])
    np.testing.assert_allclose(theta["w"], [0.5 - 0.5 / np.sqrt(5), -2.5 - 0.5 / np.sqrt(1.25)])
    with pytest.raises(ValueError):
        adagrad_update(theta, {"w": np.zeros(3)}, state)


def test_checkpoint_round_trip_and_bytes(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    save_checkpoint(tmp_path / "x.npz", arrays, {"hidden": 3})
    save_checkpoint(tmp_path / "y.npz", arrays, {"hidden": 3})
    assert (tmp_path / "x.npz").read_bytes() == (tmp_path / "y.npz").read_bytes()
    back, cfg = load_checkpoint(tmp_path / "x.npz")
    assert cfg == {"hidden": 3}
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])
    np.savez(tmp_path / "other.npz", a=np.zeros(2), __meta__=np.frombuffer(b'{"format": "x"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "other.npz")
