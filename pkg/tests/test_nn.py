"""Blocks, gradients, RMSProp, target sync and checkpoint IO."""

import math

import numpy as np
import pytest

from goalmix.agents import RecurrentQNet
from goalmix.autodiff import Tensor, relu
from goalmix.nn import (
    ConfigurationError,
    GRUCell,
    NonFiniteGradientError,
    ParamSet,
    RMSProp,
    affine,
    as_tensors,
    clip_grads_global,
    gradient,
    linear_params,
    load_checkpoint,
    save_checkpoint,
    sync_targets,
    uniform_init,
)
from goalmix.oracles import finite_diff_grad
from tests.conftest import assert_grads_close, make_nets, make_paramset, zero_params

# frozen on the first correct run (seed 42, input [0.5, -1, 2])
TWO_LAYER_GOLDEN = [0.2520150121511014, 0.10127670374834144]


def test_affine_identity():
    p = {"l.w": np.eye(2), "l.b": np.zeros(2)}
    out = affine(p, "l", np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_affine_dimension_mismatch_is_configuration_error():
    p = {"l.w": np.eye(2), "l.b": np.zeros(2)}
    with pytest.raises(ConfigurationError):
        affine(p, "l", np.ones((1, 3)))


def test_gru_zero_params_zero_hidden_gives_zero():
    cell = GRUCell(3, 3)
    params = zero_params(cell.init_params(np.random.default_rng(0)))
    h = cell.step(params, np.random.default_rng(1).normal(size=(2, 3)), np.zeros((2, 3)))
    np.testing.assert_array_equal(h, np.zeros((2, 3)))


def test_two_layer_block_golden_value():
    rng = np.random.default_rng(42)
    p = linear_params(rng, 3, 4, "l1")
    p.update(linear_params(rng, 4, 2, "l2"))
    out = affine(p, "l2", relu(affine(p, "l1", np.array([[0.5, -1.0, 2.0]]))))
    np.testing.assert_allclose(out[0], TWO_LAYER_GOLDEN, rtol=0, atol=1e-15)


def test_evaluation_is_deterministic():
    rng = np.random.default_rng(3)
    qnet = RecurrentQNet(4, 3, 8)
    params = qnet.init_params(rng)
    obs = rng.normal(size=(2, 5, 4))
    np.testing.assert_array_equal(qnet.unroll(params, obs), qnet.unroll(params, obs))


def test_uniform_init_bounds():
    rng = np.random.default_rng(0)
    w = uniform_init(rng, 16, (16, 64))
    assert np.all(np.abs(w) <= 1 / 4)


# -- gradient ----------------------------------------------------------------


def test_gradient_square():
    p = Tensor(3.0)
    grads = gradient(p * p, {"p": p})
    assert grads["p"] == pytest.approx(6.0)


def test_gradient_constant_in_param_is_zero():
    p = Tensor(np.ones(3))
    other = Tensor(1.5)
    grads = gradient(other * other, {"p": p, "other": other})
    assert np.all(grads["p"] == 0.0)


def test_gradient_non_scalar_rejected():
    p = Tensor(np.ones(3))
    with pytest.raises(ConfigurationError):
        gradient(p * p, {"p": p})


def test_small_network_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    qnet = RecurrentQNet(3, 2, 4)
    params = qnet.init_params(rng)
    obs = rng.normal(size=(2, 4, 3))
    w = rng.normal(size=(2, 4, 2))

    def loss_fn(p):
        q = qnet.unroll(p, obs)
        return float((q * q * w).sum())

    tensors = as_tensors(params)
    q = qnet.unroll(tensors, obs)
    grads = gradient((q * q * w).sum(), tensors)
    fd = finite_diff_grad(loss_fn, params, step=1e-5)
    assert_grads_close(grads, fd)


# -- RMSProp -------------------------------------------------------------------


def test_rmsprop_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    opt = RMSProp()
    opt.step([("p", p)], {"p": np.zeros(2)})
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_rmsprop_symmetry():
    p = np.array([0.7, 0.7])
    opt = RMSProp(lr=0.01)
    opt.step([("p", p)], {"p": np.array([0.3, 0.3])})
    assert p[0] == p[1]


def test_rmsprop_single_step_hand_evaluated():
    # p=1, g=1, fresh accumulator, lr=0.0005: evaluate the recurrence once
    s = 0.99 * 0.0 + 0.01 * 1.0 * 1.0
    expected = 1.0 - 0.0005 * 1.0 / (math.sqrt(s) + 1e-5)
    assert expected == pytest.approx(0.995000499950005, abs=1e-15)
    p = np.array([1.0])
    opt = RMSProp(lr=0.0005, decay=0.99, eps=1e-5)
    opt.step([("p", p)], {"p": np.array([1.0])})
    assert p[0] == pytest.approx(expected, abs=1e-15)


def test_rmsprop_accumulator_persists():
    p1 = np.array([1.0])
    opt1 = RMSProp(lr=0.1)
    opt1.step([("p", p1)], {"p": np.array([1.0])})
    after_one = p1.copy()
    opt1.step([("p", p1)], {"p": np.array([1.0])})
    # a fresh optimiser applied to the one-step value gives a different result
    p2 = after_one.copy()
    opt2 = RMSProp(lr=0.1)
    opt2.step([("p", p2)], {"p": np.array([1.0])})
    assert p1[0] != p2[0]


def test_rmsprop_rejects_non_finite_and_leaves_params_untouched():
    p = np.array([1.0, 2.0])
    q = np.array([3.0])
    opt = RMSProp()
    with pytest.raises(NonFiniteGradientError):
        opt.step([("p", p), ("q", q)], {"p": np.array([0.1, 0.1]),
                                        "q": np.array([np.nan])})
    np.testing.assert_array_equal(p, [1.0, 2.0])
    np.testing.assert_array_equal(q, [3.0])


def test_clip_grads_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    clipped = clip_grads_global(grads, 1.0)
    total = np.sqrt(sum(float((g ** 2).sum()) for g in clipped.values()))
    assert total == pytest.approx(1.0)
    np.testing.assert_allclose(clipped["a"] / clipped["b"][0], [0.75, 0.0])
    same = clip_grads_global(grads, 100.0)
    np.testing.assert_array_equal(same["a"], grads["a"])


# -- target sync ----------------------------------------------------------------


def test_sync_targets_exact_and_idempotent(rng):
    qnet, mixer, repr_net = make_nets()
    ps = make_paramset(rng, qnet, mixer, repr_net)
    ps.agents[0]["in.w"] += 1.0
    sync_targets(ps)
    for i in range(2):
        for k in ps.agents[i]:
            np.testing.assert_array_equal(ps.agents[i][k], ps.target_agents[i][k])
    snap = {k: v.copy() for k, v in ps.target_agents[0].items()}
    sync_targets(ps)
    for k in snap:
        np.testing.assert_array_equal(snap[k], ps.target_agents[0][k])


def test_targets_follow_online_after_step_then_sync(rng):
    qnet, mixer, repr_net = make_nets()
    ps = make_paramset(rng, qnet, mixer, repr_net)
    opt = RMSProp(lr=0.01)
    grads = {name: np.ones_like(arr) for name, arr in ps.named_online()}
    opt.step(ps.named_online(), grads)
    # targets stale now, equal again after sync
    assert not np.array_equal(ps.agents[0]["in.w"], ps.target_agents[0]["in.w"])
    sync_targets(ps)
    np.testing.assert_array_equal(ps.agents[0]["in.w"], ps.target_agents[0]["in.w"])


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path, rng):
    qnet, mixer, repr_net = make_nets()
    ps = make_paramset(rng, qnet, mixer, repr_net)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, ps, meta={"note": "test", "n": 3})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "test", "n": 3}
    orig = dict(ps.named_all())
    new = dict(loaded.named_all())
    assert orig.keys() == new.keys()
    for k in orig:
        np.testing.assert_array_equal(orig[k], new[k])


def test_checkpoint_version_guard(tmp_path, rng):
    qnet, mixer, repr_net = make_nets()
    ps = make_paramset(rng, qnet, mixer, repr_net)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, ps)
    import json
    import zipfile

    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(bytes(arrays["header"]).decode())
    header["version"] = 999
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_paramset_copy_is_deep(rng):
    qnet, mixer, repr_net = make_nets()
    ps = make_paramset(rng, qnet, mixer, repr_net)
    cp = ps.copy()
    cp.agents[0]["in.w"] += 5.0
    assert not np.array_equal(cp.agents[0]["in.w"], ps.agents[0]["in.w"])
