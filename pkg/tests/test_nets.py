import math

import numpy as np
import pytest

from pdsac import nets
from pdsac.errors import CheckpointError

import oracles


def make_mlp(rng, sizes, final_scale=1.0):
    params = nets.init_mlp_params(rng, sizes, final_scale=final_scale)
    return nets.MLP(sizes, params)


# ---- forward ----


def test_forward_zero_weights_returns_output_bias():
    sizes = (4, 8, 2)
    params = nets.init_mlp_params(np.random.default_rng(0), sizes)
    for t in params.tensors():
        t[...] = 0.0
    params.get("b1")[...] = np.array([0.7, -0.3])
    mlp = nets.MLP(sizes, params)
    y = mlp.forward(np.array([1.0, -2.0, 3.0, 0.25]))
    assert np.array_equal(y, np.array([0.7, -0.3]))


def test_forward_identity_network_hand_value():
    # relu(x + [0.5, -1, 0]) @ [1, 2, 3] + 0.25 with x = [1, -2, 0.5]
    sizes = (3, 3, 1)
    params = nets.init_mlp_params(np.random.default_rng(0), sizes)
    params.get("w0")[...] = np.eye(3)
    params.get("b0")[...] = np.array([0.5, -1.0, 0.0])
    params.get("w1")[...] = np.array([[1.0], [2.0], [3.0]])
    params.get("b1")[...] = np.array([0.25])
    mlp = nets.MLP(sizes, params)
    y = mlp.forward(np.array([1.0, -2.0, 0.5]))
    assert y.shape == (1,)
    assert y[0] == pytest.approx(3.25, abs=0.0)


def test_forward_matches_direct_matrix_arithmetic():
    rng = np.random.default_rng(7)
    sizes = (5, 11, 9, 3)
    mlp = make_mlp(rng, sizes)
    x = rng.standard_normal((6, 5))
    p = mlp.params
    h = np.maximum(x @ p.get("w0") + p.get("b0"), 0.0)
    h = np.maximum(h @ p.get("w1") + p.get("b1"), 0.0)
    want = h @ p.get("w2") + p.get("b2")
    got = mlp.forward(x)
    assert np.allclose(got, want, rtol=0.0, atol=1e-14)


def test_forward_is_pure():
    rng = np.random.default_rng(3)
    mlp = make_mlp(rng, (4, 6, 2))
    before = [t.copy() for t in mlp.params.tensors()]
    v0 = mlp.params.version
    x = rng.standard_normal((3, 4))
    y1 = mlp.forward(x)
    y2 = mlp.forward(x)
    assert np.array_equal(y1, y2)
    assert mlp.params.version == v0
    for t, b in zip(mlp.params.tensors(), before):
        assert np.array_equal(t, b)


def test_init_fan_in_bounds_and_final_scale():
    rng = np.random.default_rng(11)
    sizes = (26, 256, 256, 256, 6)
    params = nets.init_mlp_params(rng, sizes, final_scale=1e-3)
    w0 = params.get("w0")
    assert np.abs(w0).max() <= 1.0 / math.sqrt(26)
    w_last = params.get("w3")
    assert np.abs(w_last).max() <= 1e-3 / math.sqrt(256)
    assert np.abs(w_last).max() > 0.0


# ---- backward ----


def probe_loss(mlp, x, proj):
    def fn():
        return float(np.sum(mlp.forward(x) * proj))

    return fn


def test_backward_matches_finite_differences_small():
    rng = np.random.default_rng(21)
    sizes = (5, 12, 10, 2)
    mlp = make_mlp(rng, sizes)
    x = rng.standard_normal((4, 5))
    proj = rng.standard_normal((4, 2))
    y, cache = mlp.forward_cached(x)
    grads, dx = mlp.backward(cache, proj)
    fd = oracles.finite_difference_grads(probe_loss(mlp, x, proj), [mlp.params])[0]
    for g, f in zip(grads.tensors(), fd):
        assert oracles.rel_error(g, f).max() < 1e-6
    fd_x = oracles.finite_difference_wrt_array(probe_loss(mlp, x, proj), x)
    assert oracles.rel_error(dx, fd_x).max() < 1e-6


def test_backward_full_size_net_finite_differences():
    # every parameter of a 26 -> 256 -> 256 -> 256 -> 1 net, h = 1e-5
    rng = np.random.default_rng(5)
    sizes = (26, 256, 256, 256, 1)
    mlp = make_mlp(rng, sizes)
    x = rng.standard_normal((1, 26))
    proj = np.ones((1, 1))
    _, cache = mlp.forward_cached(x)
    grads, _ = mlp.backward(cache, proj)
    fd = oracles.finite_difference_grads(probe_loss(mlp, x, proj), [mlp.params])[0]
    worst = 0.0
    for g, f in zip(grads.tensors(), fd):
        worst = max(worst, float(oracles.rel_error(g, f).max()))
    assert worst < 1e-4


def test_backward_does_not_touch_params():
    rng = np.random.default_rng(2)
    mlp = make_mlp(rng, (3, 7, 2))
    x = rng.standard_normal((5, 3))
    before = [t.copy() for t in mlp.params.tensors()]
    _, cache = mlp.forward_cached(x)
    mlp.backward(cache, np.ones((5, 2)))
    for t, b in zip(mlp.params.tensors(), before):
        assert np.array_equal(t, b)


# ---- policy head ----


def test_policy_log_std_clamped():
    rng = np.random.default_rng(4)
    policy = nets.PolicyNet(6, 3, rng=rng)
    # blow up the log_std half of the output layer bias
    b_last = policy.mlp.params.get("b3")
    b_last[3:] = np.array([100.0, -100.0, 0.5])
    out = policy.forward(rng.standard_normal((2, 6)))
    assert np.all(out.log_std <= 2.0)
    assert np.all(out.log_std >= -20.0)
    assert out.log_std[0, 0] == 2.0
    assert out.log_std[0, 1] == -20.0


def test_policy_sample_frozen_logprob_at_origin():
    # 3 iid dims, mean 0, sigma 1, noise 0: logp = -1.5 * ln(2*pi)
    out = nets.PolicyOutput(mean=np.zeros(3), log_std=np.zeros(3))
    action, logp = nets.policy_sample(out, np.zeros(3))
    assert np.array_equal(action, np.zeros(3))
    assert logp == pytest.approx(-2.756815599614018, abs=1e-12)


def test_policy_sample_matches_naive_reference():
    rng = np.random.default_rng(9)
    for _ in range(200):
        mean = rng.uniform(-1.5, 1.5, 3)
        log_std = rng.uniform(-2.0, 0.5, 3)
        noise = rng.standard_normal(3)
        action, logp = nets.policy_sample(
            nets.PolicyOutput(mean=mean, log_std=log_std), noise
        )
        want = oracles.squashed_logprob_reference(action, mean, log_std)
        assert logp == pytest.approx(want, abs=1e-9)


def test_policy_sample_strictly_inside_and_finite():
    for u in [0.0, 1.0, 10.0, 20.0, 50.0, 700.0]:
        out = nets.PolicyOutput(mean=np.array([u, -u, 0.0]), log_std=np.zeros(3))
        action, logp = nets.policy_sample(out, np.zeros(3))
        assert np.all(action < 1.0)
        assert np.all(action > -1.0)
        assert math.isfinite(logp)


def test_policy_density_integrates_to_one():
    rng = np.random.default_rng(31)
    for _ in range(5):
        mean = float(rng.uniform(-1.0, 1.0))
        log_std = float(rng.uniform(-1.0, 0.4))

        def logp_of_action(a):
            u = math.atanh(a)
            eps = (u - mean) / math.exp(log_std)
            return float(
                nets.squashed_log_prob(
                    np.array([u]), np.array([eps]), np.array([log_std])
                )
            )

        integral = oracles.squashed_density_integral(logp_of_action, mean, log_std)
        assert integral == pytest.approx(1.0, abs=1e-8)


def test_tanh_correction_identity():
    # log(1 - tanh(u)^2) == 2 * (log 2 - u - softplus(-2u))
    u = np.linspace(-5.0, 5.0, 501)
    direct = np.log1p(-np.tanh(u) ** 2)
    stable = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    assert np.abs(direct - stable).max() < 1e-12


def test_policy_batch_sample_shapes():
    rng = np.random.default_rng(12)
    policy = nets.PolicyNet(26, 3, rng=rng)
    x = rng.standard_normal((8, 26))
    out = policy.forward(x)
    noise = rng.standard_normal((8, 3))
    action, logp = nets.policy_sample(out, noise)
    assert action.shape == (8, 3)
    assert logp.shape == (8,)
    assert np.all(np.abs(action) < 1.0)


# ---- optimizer ----


def test_adam_single_step_frozen():
    params = nets.ParamSet([("w", np.zeros(1))])
    grads = nets.ParamSet([("w", np.ones(1))])
    state = nets.AdamState.for_params(params)
    nets.adam_step(params, grads, state, lr=1e-3)
    want = -1e-3 * (1.0 / (math.sqrt(1.0) + 1e-8))
    assert params.get("w")[0] == pytest.approx(want, abs=1e-15)


def test_adam_matches_scalar_reference_sequence():
    rng = np.random.default_rng(17)
    gs = rng.standard_normal(100)
    params = nets.ParamSet([("w", np.array([0.37]))])
    state = nets.AdamState.for_params(params)
    got = []
    for g in gs:
        nets.adam_step(params, nets.ParamSet([("w", np.array([g]))]), state, lr=3e-4)
        got.append(float(params.get("w")[0]))
    want = oracles.adam_reference(0.37, gs, lr=3e-4)
    assert np.allclose(got, want, rtol=0.0, atol=1e-14)


def test_adam_bumps_version():
    params = nets.ParamSet([("w", np.zeros(3))])
    state = nets.AdamState.for_params(params)
    v0 = params.version
    nets.adam_step(params, nets.ParamSet([("w", np.ones(3))]), state, lr=1e-3)
    nets.adam_step(params, nets.ParamSet([("w", np.ones(3))]), state, lr=1e-3)
    assert params.version == v0 + 2


def test_adam_rejects_nonfinite_grads():
    params = nets.ParamSet([("w", np.zeros(2))])
    state = nets.AdamState.for_params(params)
    with pytest.raises(ValueError):
        nets.adam_step(
            params, nets.ParamSet([("w", np.array([1.0, np.nan]))]), state, lr=1e-3
        )


# ---- soft update ----


def test_soft_update_mixes():
    target = nets.ParamSet([("w", np.zeros(4))])
    online = nets.ParamSet([("w", np.ones(4))])
    nets.soft_update(target, online, tau=0.005)
    assert np.allclose(target.get("w"), 0.005, rtol=0.0, atol=1e-16)
    v = target.version
    nets.soft_update(target, online, tau=1.0)
    assert np.array_equal(target.get("w"), np.ones(4))
    assert target.version == v + 1


def test_soft_update_leaves_online_untouched():
    target = nets.ParamSet([("w", np.zeros(4))])
    online = nets.ParamSet([("w", np.full(4, 2.0))])
    v_online = online.version
    nets.soft_update(target, online, tau=0.1)
    assert np.array_equal(online.get("w"), np.full(4, 2.0))
    assert online.version == v_online


# ---- checkpoints ----


def test_checkpoint_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(23)
    sets = {
        "policy": nets.init_mlp_params(rng, (26, 16, 6)),
        "q1": nets.init_mlp_params(rng, (29, 16, 1)),
    }
    sets["policy"].bump_version()
    sets["policy"].bump_version()
    meta = {"variant": "pdsac-p", "config_hash": "ab" * 32}
    path = tmp_path / "net.ckpt"
    nets.save_checkpoint(path, sets, meta)
    loaded, got_meta = nets.load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == {"policy", "q1"}
    for name, ps in sets.items():
        lp = loaded[name]
        assert lp.version == ps.version
        assert lp.names == ps.names
        for a, b in zip(lp.tensors(), ps.tensors()):
            assert a.tobytes() == b.tobytes()


def test_checkpoint_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(29)
    sets = {"policy": nets.init_mlp_params(rng, (4, 8, 2))}
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    nets.save_checkpoint(p1, sets, {"k": "v"})
    nets.save_checkpoint(p2, sets, {"k": "v"})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_truncated_raises(tmp_path):
    rng = np.random.default_rng(13)
    sets = {"policy": nets.init_mlp_params(rng, (4, 8, 2))}
    path = tmp_path / "net.ckpt"
    nets.save_checkpoint(path, sets, {})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 9])
    with pytest.raises(CheckpointError):
        nets.load_checkpoint(path)


def test_checkpoint_bad_magic_raises(tmp_path):
    path = tmp_path / "net.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        nets.load_checkpoint(path)


def test_load_params_shape_mismatch_raises():
    rng = np.random.default_rng(19)
    mlp = make_mlp(rng, (4, 8, 2))
    other = nets.init_mlp_params(rng, (4, 9, 2))
    with pytest.raises(CheckpointError):
        mlp.load_params(other)


def test_paramset_rejects_nonfinite():
    with pytest.raises(ValueError):
        nets.ParamSet([("w", np.array([1.0, np.inf]))])
