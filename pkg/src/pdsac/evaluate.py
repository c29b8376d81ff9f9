"""Fixed-target scoring: 25 deterministic-policy trials against each of the
four frozen targets, start pose jittered per trial, plus the JSON/CSV
artifacts that make the numbers recomputable after the fact.
"""

import json
import math
import os

import numpy as np

from . import world as world_mod
from .config import config_hash
from .errors import LayoutError
from .features import feature_scale
from .orchestrator import ActorHandle, EVALUATE, run_eval_episode

EVAL_SEED = 1_000_003
TRIALS_PER_TARGET = 25
START_NOISE_XY = 0.5
START_Z = 1.0


def _trial_start(base_start, rng):
    dx, dy = rng.uniform(-START_NOISE_XY, START_NOISE_XY, 2)
    yaw = rng.uniform(-math.pi, math.pi)
    return (base_start[0] + dx, base_start[1] + dy, START_Z, yaw)


def run_protocol(nets, cfg, targets=None, trials_per_target=None,
                 eval_seed=EVAL_SEED):
    """Score a policy on the fixed-target grid.

    Returns (summary dict, episode list); episodes carry the full pose trace
    so trajectories can be written or plotted. Trial starts depend only on
    eval_seed, so scores are comparable across variants and checkpoints.
    """
    env = world_mod.make_environment(cfg.env_id, seed=0, **cfg.world)
    if targets is None:
        targets = [np.asarray(t, dtype=np.float64)
                   for t in env.config.eval_targets]
    else:
        targets = [np.asarray(t, dtype=np.float64) for t in targets]
    k = TRIALS_PER_TARGET if trials_per_target is None else trials_per_target
    handle = ActorHandle(actor_id=0, role=EVALUATE, env=env,
                         policy=nets.policy, rng=np.random.default_rng(0),
                         feat_scale=feature_scale(env.config))
    children = np.random.SeedSequence(eval_seed).spawn(len(targets) * k)
    episodes = []
    for ti, target in enumerate(targets):
        for trial in range(k):
            rng = np.random.default_rng(children[ti * k + trial])
            start = _trial_start(env.config.start, rng)
            reward, outcome, path = run_eval_episode(handle, goal=target,
                                                     start=start)
            episodes.append({
                "target_index": ti,
                "target": [float(v) for v in target],
                "trial": trial,
                "reward": reward,
                "outcome": outcome,
                "path": path,
            })
    return summarize(episodes), episodes


def summarize(episodes):
    """Aggregate episode records into the protocol summary."""
    rewards = np.array([e["reward"] for e in episodes], dtype=np.float64)
    hits = np.array([e["outcome"] == world_mod.ARRIVED for e in episodes])
    per_target = []
    for ti in sorted({e["target_index"] for e in episodes}):
        rows = [e for e in episodes if e["target_index"] == ti]
        t_rewards = np.array([e["reward"] for e in rows])
        t_hits = sum(e["outcome"] == world_mod.ARRIVED for e in rows)
        per_target.append({
            "target": rows[0]["target"],
            "trials": len(rows),
            "successes": int(t_hits),
            "mean_reward": float(t_rewards.mean()),
        })
    return {
        "n_trials": len(episodes),
        "successes": int(hits.sum()),
        "success_rate": 100.0 * float(hits.sum()) / len(episodes),
        "mean_reward": float(rewards.mean()),
        "reward_std": float(rewards.std(ddof=0)),
        "per_target": per_target,
    }


def write_artifacts(out_dir, cfg, layout_version, summary, episodes,
                    chash=None):
    """summary.json plus one trajectory CSV per episode; returns the paths.

    chash defaults to the hash of cfg; pass the recorded hash instead when
    replaying a checkpoint whose producing config is not reconstructable.
    """
    os.makedirs(out_dir, exist_ok=True)
    if chash is None:
        chash = config_hash(cfg)
    doc = dict(summary)
    doc["config_hash"] = chash
    doc["env_id"] = cfg.env_id
    doc["variant"] = cfg.variant
    doc["layout_version"] = layout_version
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    traj_paths = []
    for e in episodes:
        name = f"traj_t{e['target_index']}_k{e['trial']:02d}.csv"
        path = os.path.join(out_dir, name)
        target = ",".join(repr(float(v)) for v in e["target"])
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# config_hash={chash}\n")
            f.write(f"# layout_version={layout_version}\n")
            f.write(f"# env_id={cfg.env_id}\n")
            f.write(f"# target={target}\n")
            f.write(f"# outcome={e['outcome']}\n")
            f.write("t,x,y,z,yaw,reward\n")
            for (t, x, y, z, yaw, r) in e["path"]:
                f.write(f"{t},{x!r},{y!r},{z!r},{yaw!r},{r!r}\n")
        traj_paths.append(path)
    return summary_path, traj_paths


def read_trajectory(path):
    """Parse one trajectory CSV back into (comments dict, rows array)."""
    comments = {}
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                comments[key] = val
            elif not line.startswith("t,"):
                rows.append([float(v) for v in line.split(",")])
    if "outcome" not in comments or "target" not in comments:
        raise LayoutError(f"trajectory {path} missing protocol comments")
    return comments, np.array(rows, dtype=np.float64)


def summary_from_trajectories(paths):
    """Recompute the protocol summary from trajectory files alone."""
    episodes = []
    target_order = {}
    for path in sorted(paths):
        comments, rows = read_trajectory(path)
        target = [float(v) for v in comments["target"].split(",")]
        key = tuple(target)
        target_order.setdefault(key, len(target_order))
        total = 0.0
        for r in rows[:, 5]:
            total += float(r)
        episodes.append({
            "target_index": target_order[key],
            "target": target,
            "trial": len([e for e in episodes
                          if e["target_index"] == target_order[key]]),
            "reward": total,
            "outcome": comments["outcome"],
            "path": None,
        })
    return summarize(episodes)
