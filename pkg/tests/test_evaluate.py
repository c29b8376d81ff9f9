import json
import math

import numpy as np
import pytest

from pdsac import config, evaluate, sac, world
from pdsac.errors import LayoutError


def tiny_nets(seed=0, obs_dim=26):
    return sac.build_sac(np.random.default_rng(seed), obs_dim, 3,
                         hidden=(16, 16))


def tiny_cfg(env_id=1, **kw):
    return config.default_config("sac", env_id, hidden=(16, 16), **kw)


def fake_episode(ti, trial, reward, outcome, target=None):
    return {
        "target_index": ti,
        "target": target or [1.0 * ti, 0.0, 1.0],
        "trial": trial,
        "reward": reward,
        "outcome": outcome,
        "path": [(0, 0.0, 0.0, 1.0, 0.0, 0.0), (1, 0.1, 0.0, 1.0, 0.0, reward)],
    }


def test_summarize_all_arrivals_is_200_flat():
    eps = [fake_episode(ti, k, 200.0, world.ARRIVED)
           for ti in range(4) for k in range(25)]
    s = evaluate.summarize(eps)
    assert s["n_trials"] == 100
    assert s["success_rate"] == 100.0
    assert s["mean_reward"] == 200.0
    assert s["reward_std"] == 0.0
    assert all(t["successes"] == 25 for t in s["per_target"])


def test_summarize_all_collisions():
    eps = [fake_episode(ti, k, -20.0, world.COLLIDED)
           for ti in range(4) for k in range(25)]
    s = evaluate.summarize(eps)
    assert s["success_rate"] == 0.0
    assert s["mean_reward"] == -20.0
    assert s["reward_std"] == 0.0


def test_summarize_mixed_counts():
    eps = ([fake_episode(0, k, 200.0, world.ARRIVED) for k in range(3)]
           + [fake_episode(1, k, 0.0, world.TIMEOUT) for k in range(1)])
    s = evaluate.summarize(eps)
    assert s["n_trials"] == 4
    assert s["successes"] == 3
    assert s["success_rate"] == 75.0
    assert s["per_target"][0]["successes"] == 3
    assert s["per_target"][1]["successes"] == 0
    ref = np.array([200.0, 200.0, 200.0, 0.0])
    assert s["mean_reward"] == pytest.approx(ref.mean())
    assert s["reward_std"] == pytest.approx(ref.std(ddof=0))


def test_protocol_is_deterministic_and_counts_trials():
    nets = tiny_nets()
    cfg = tiny_cfg()
    s1, eps1 = evaluate.run_protocol(nets, cfg, trials_per_target=2)
    s2, eps2 = evaluate.run_protocol(nets, cfg, trials_per_target=2)
    assert s1 == s2
    assert [e["reward"] for e in eps1] == [e["reward"] for e in eps2]
    assert len(eps1) == 8
    assert [t["trials"] for t in s1["per_target"]] == [2, 2, 2, 2]


def test_protocol_start_noise_bounds():
    nets = tiny_nets()
    cfg = tiny_cfg()
    _, eps = evaluate.run_protocol(nets, cfg, trials_per_target=3)
    starts = [e["path"][0] for e in eps]
    xs = {s[1] for s in starts}
    assert len(xs) > 1
    for (_, x, y, z, yaw, r0) in starts:
        assert abs(x) <= evaluate.START_NOISE_XY + 1e-12
        assert abs(y) <= evaluate.START_NOISE_XY + 1e-12
        assert z == evaluate.START_Z
        assert -math.pi <= yaw <= math.pi
        assert r0 == 0.0


def test_protocol_uses_layout_targets():
    nets = tiny_nets()
    cfg = tiny_cfg(env_id=2)
    s, _ = evaluate.run_protocol(nets, cfg, trials_per_target=1)
    env = world.make_environment(2, seed=0)
    got = [t["target"] for t in s["per_target"]]
    want = [[float(v) for v in t] for t in env.config.eval_targets]
    assert got == want


def test_protocol_accepts_custom_targets():
    nets = tiny_nets()
    cfg = tiny_cfg()
    s, eps = evaluate.run_protocol(nets, cfg, targets=[[2.0, 2.0, 1.0]],
                                   trials_per_target=2)
    assert s["n_trials"] == 2
    assert s["per_target"][0]["target"] == [2.0, 2.0, 1.0]


def test_artifacts_recompute_to_the_last_digit(tmp_path):
    nets = tiny_nets(seed=4)
    cfg = tiny_cfg()
    summary, episodes = evaluate.run_protocol(nets, cfg, trials_per_target=2)
    spath, tpaths = evaluate.write_artifacts(tmp_path, cfg, "1", summary,
                                             episodes)
    assert len(tpaths) == 8
    doc = json.loads(open(spath).read())
    assert doc["config_hash"] == config.config_hash(cfg)
    assert doc["env_id"] == 1
    assert doc["layout_version"] == "1"
    recomputed = evaluate.summary_from_trajectories(tpaths)
    for key in ("n_trials", "successes", "success_rate", "mean_reward",
                "reward_std"):
        assert recomputed[key] == summary[key], key
    assert [t["mean_reward"] for t in recomputed["per_target"]] == \
        [t["mean_reward"] for t in summary["per_target"]]


def test_artifact_hash_override(tmp_path):
    nets = tiny_nets()
    cfg = tiny_cfg()
    summary, episodes = evaluate.run_protocol(nets, cfg, trials_per_target=1)
    spath, tpaths = evaluate.write_artifacts(tmp_path, cfg, "1", summary,
                                             episodes, chash="cafe0123feed")
    assert json.loads(open(spath).read())["config_hash"] == "cafe0123feed"
    comments, _ = evaluate.read_trajectory(tpaths[0])
    assert comments["config_hash"] == "cafe0123feed"


def test_trajectory_file_round_trip(tmp_path):
    nets = tiny_nets()
    cfg = tiny_cfg()
    _, episodes = evaluate.run_protocol(nets, cfg, trials_per_target=1)
    _, tpaths = evaluate.write_artifacts(
        tmp_path, cfg, "1", evaluate.summarize(episodes), episodes)
    comments, rows = evaluate.read_trajectory(tpaths[0])
    path = episodes[0]["path"]
    assert rows.shape == (len(path), 6)
    assert comments["outcome"] == episodes[0]["outcome"]
    for i, (t, x, y, z, yaw, r) in enumerate(path):
        assert rows[i, 0] == t
        assert rows[i, 1] == x
        assert rows[i, 5] == r


def test_read_trajectory_missing_comments(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x,y,z,yaw,reward\n0,0,0,1,0,0\n")
    with pytest.raises(LayoutError, match="missing protocol comments"):
        evaluate.read_trajectory(p)
