"""Actor/learner topology: K exploration actors plus one evaluator feed a
single learner through in-process channels, and the learner answers with
policy snapshots. A strictly single-threaded serial mode replays the same
roles on a fixed schedule (K explorer steps, one update) for reproducibility.

The learner is the only parameter writer. Actors act on read-only snapshots
refreshed by non-blocking polls, so a slow learner never stalls collection
and a slow actor only means staler weights, never blocked updates.
"""

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsac
from . import sac
from . import world as world_mod
from .checkpoint import save_checkpoint
from .config import config_hash
from .errors import TrainingFault
from .features import feature_scale, featurize
from .nets import PolicyNet
from .replay import ReplayBuffer, Transition

EXPLORE = sac.EXPLORE
EVALUATE = sac.EVALUATE
ACT_DIM = 3

METRICS_COLUMNS = ("learner_step", "wall_ms", "variant", "policy_loss",
                   "critic_loss", "value_loss", "eval_reward_ma",
                   "eval_success_ma")


# ---------------------------------------------------------------- channels

class ExperienceChannel:
    """Many-producer, one-consumer FIFO of ExperienceMessage."""

    def __init__(self):
        self._items = []
        self._lock = threading.Lock()
        self._closed = False

    def put(self, msg):
        """Append one message; returns False once the channel is closed."""
        with self._lock:
            if self._closed:
                return False
            self._items.append(msg)
            return True

    def drain(self):
        with self._lock:
            items = self._items
            self._items = []
            return items

    def close(self):
        with self._lock:
            self._closed = True

    @property
    def closed(self):
        return self._closed


class WeightCell:
    """Latest-value weight mailbox: one writer, many polling readers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._broadcast = None
        self._closed = False

    def publish(self, params, version):
        with self._lock:
            if self._closed:
                return False
            if self._broadcast is not None and version <= self._broadcast.version:
                raise ValueError(
                    f"broadcast version {version} not above "
                    f"{self._broadcast.version}")
            self._broadcast = WeightBroadcast(params=params.copy(),
                                              version=int(version))
            return True

    def poll(self, last_seen):
        """Newest broadcast if it is newer than last_seen, else None."""
        with self._lock:
            bc = self._broadcast
        if bc is not None and bc.version > last_seen:
            return bc
        return None

    def close(self):
        with self._lock:
            self._closed = True

    @property
    def closed(self):
        return self._closed


@dataclass
class WeightBroadcast:
    params: object  # frozen ParamSet snapshot; readers must not mutate
    version: int


@dataclass
class ExperienceMessage:
    transitions: tuple
    actor_id: int
    weight_version: int

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("empty experience message")


@dataclass
class EvalRecord:
    learner_step: int
    episode_reward: float
    outcome: str
    weight_version: int


class EvalAccumulator:
    """Thread-safe record list with tail moving averages."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records = []

    def append(self, rec):
        with self._lock:
            self._records.append(rec)

    def snapshot(self):
        with self._lock:
            return list(self._records)

    def tail_ma(self, window):
        """(mean reward, success fraction) over the last `window` records;
        NaNs before the first record lands."""
        with self._lock:
            tail = self._records[-window:]
        if not tail:
            return float("nan"), float("nan")
        rewards = [r.episode_reward for r in tail]
        hits = [1.0 if r.outcome == world_mod.ARRIVED else 0.0 for r in tail]
        return sum(rewards) / len(tail), sum(hits) / len(tail)


class Channels:
    """Everything shared between the learner and its actors."""

    def __init__(self):
        self.experience = ExperienceChannel()
        self.weights = WeightCell()
        self.stop = threading.Event()
        self.eval_records = EvalAccumulator()
        self._lock = threading.Lock()
        self._learner_step = 0

    def learner_step(self):
        with self._lock:
            return self._learner_step

    def set_learner_step(self, step):
        with self._lock:
            self._learner_step = step

    def close(self):
        self.stop.set()
        self.experience.close()
        self.weights.close()


# ------------------------------------------------------------------ actors

@dataclass
class ActorStats:
    steps: int = 0
    produced: int = 0
    episodes: int = 0
    reward_sum: float = 0.0
    versions: list = field(default_factory=list)


@dataclass
class ActorHandle:
    actor_id: int
    role: str
    env: world_mod.World
    policy: PolicyNet
    rng: np.random.Generator
    feat_scale: np.ndarray | None = None
    version: int = 0
    step_cap: int = 0
    stats: ActorStats = field(default_factory=ActorStats)
    # in-flight episode state, owned by the actor's thread
    cur_vec: np.ndarray | None = None
    ep_reward: float = 0.0
    buf: list = field(default_factory=list)

    @property
    def act_dim(self):
        return self.policy.act_dim

    def featurize(self, obs):
        return featurize(obs, self.feat_scale)


def make_actor(actor_id, role, cfg, policy_params, seed_seq):
    """Build an actor with its own environment and rng stream."""
    env_ss, act_ss = seed_seq.spawn(2)
    env = world_mod.make_environment(cfg.env_id, seed=env_ss, **cfg.world)
    policy = PolicyNet(obs_dim_of(env.config), ACT_DIM,
                       params=policy_params.copy(), hidden=cfg.hidden)
    return ActorHandle(actor_id=actor_id, role=role, env=env, policy=policy,
                       rng=np.random.default_rng(act_ss),
                       feat_scale=feature_scale(env.config))


def obs_dim_of(world_cfg):
    return world_cfg.n_beams + 3


def _poll_weights(handle, channels):
    bc = channels.weights.poll(handle.version)
    if bc is not None:
        handle.policy.load_params(bc.params)
        handle.version = bc.version
        handle.stats.versions.append(bc.version)


def _flush(handle, channels):
    if not handle.buf:
        return
    msg = ExperienceMessage(transitions=tuple(handle.buf),
                            actor_id=handle.actor_id,
                            weight_version=handle.version)
    if channels.experience.put(msg):
        handle.stats.produced += len(handle.buf)
    handle.buf = []


def _actor_step(handle, channels, cfg):
    """One exploration step: act, record the transition, flush on cadence."""
    env = handle.env
    if handle.cur_vec is None:
        handle.cur_vec = env.reset().vector()
        handle.ep_reward = 0.0
    raw = sac.select_action(handle, handle.cur_vec, EXPLORE, handle.rng)
    action = world_mod.Action.from_raw(raw, env.config)
    obs, reward, done, outcome = env.step(action)
    nvec = obs.vector()
    terminal = outcome in (world_mod.ARRIVED, world_mod.COLLIDED)
    handle.buf.append(Transition(obs=handle.cur_vec, action=raw,
                                 reward=reward, next_obs=nvec, done=terminal))
    handle.ep_reward += reward
    handle.stats.steps += 1
    if done:
        handle.stats.episodes += 1
        handle.stats.reward_sum += handle.ep_reward
        handle.cur_vec = None
    else:
        handle.cur_vec = nvec
    if done or len(handle.buf) >= cfg.flush_interval:
        _flush(handle, channels)


def run_actor(handle, channels, config):
    """Explore until stopped or capped; stale weights never block progress."""
    while True:
        _poll_weights(handle, channels)
        capped = handle.step_cap and handle.stats.steps >= handle.step_cap
        if channels.stop.is_set() or channels.weights.closed or capped:
            _flush(handle, channels)
            return
        _actor_step(handle, channels, config)


def run_eval_episode(handle, goal=None, start=None):
    """One deterministic-policy episode; returns (reward, outcome, path).

    path rows are (t, x, y, z, yaw, reward) per step, starting at t=0 with
    the reset pose.
    """
    env = handle.env
    obs = env.reset(goal=goal, start=start)
    vec = obs.vector()
    p = env.state.pose
    path = [(0, p.x, p.y, p.z, p.yaw, 0.0)]
    total = 0.0
    t = 0
    while True:
        raw = sac.select_action(handle, vec, EVALUATE)
        action = world_mod.Action.from_raw(raw, env.config)
        obs, reward, done, outcome = env.step(action)
        vec = obs.vector()
        total += reward
        t += 1
        p = env.state.pose
        path.append((t, p.x, p.y, p.z, p.yaw, reward))
        if done:
            return total, outcome, path


def run_evaluator(handle, channels, config):
    """Score the current policy on fresh random-goal episodes, forever.

    Emits EvalRecords tagged with the learner step; never touches replay.
    """
    while not (channels.stop.is_set() or channels.weights.closed):
        _poll_weights(handle, channels)
        step_tag = channels.learner_step()
        reward, outcome, _ = run_eval_episode(handle)
        channels.eval_records.append(
            EvalRecord(learner_step=step_tag, episode_reward=reward,
                       outcome=outcome, weight_version=handle.version))
        handle.stats.episodes += 1
        handle.stats.reward_sum += reward


# ----------------------------------------------------------------- learner

def build_learner(cfg, rng, obs_dim):
    """Variant dispatch: nets, optimizer, and the per-batch update function."""
    scale = feature_scale(
        world_mod.make_environment(cfg.env_id, seed=0, **cfg.world).config)
    if cfg.distributional:
        support = dsac.make_support(cfg.atoms, cfg.v_min, cfg.v_max)
        nets = dsac.build_dsac(rng, obs_dim, ACT_DIM, hidden=cfg.hidden,
                               alpha=cfg.alpha, gamma=cfg.gamma,
                               support=support, feat_scale=scale)
        opt = dsac.build_dsac_opt(nets, lr=cfg.lr, tau=cfg.tau)
        return nets, opt, dsac.dsac_update
    nets = sac.build_sac(rng, obs_dim, ACT_DIM, hidden=cfg.hidden,
                         alpha=cfg.alpha, gamma=cfg.gamma, feat_scale=scale)
    opt = sac.build_sac_opt(nets, lr=cfg.lr, tau=cfg.tau)
    return nets, opt, sac.sac_update


def drain_into(replay, channels):
    """Move every queued transition into replay; returns the count."""
    n = 0
    for msg in channels.experience.drain():
        for t in msg.transitions:
            replay.push(t)
            n += 1
    return n


def _beta(cfg, updates):
    frac = min(1.0, updates / cfg.updates_budget)
    return cfg.per_beta0 + (1.0 - cfg.per_beta0) * frac


def _learner_update(nets, opt, update_fn, replay, cfg, rng, updates):
    """Sample, update, and refresh priorities; returns the loss report."""
    if cfg.prioritized:
        batch = replay.sample_prioritized(cfg.batch_size, _beta(cfg, updates),
                                          rng)
    else:
        batch = replay.sample_uniform(cfg.batch_size, rng)
    report = update_fn(nets, batch, opt, rng)
    if cfg.prioritized:
        replay.update_priorities(batch.indices, report.td_errors)
    return report


class MetricsLog:
    """Append-only CSV tagged with the producing config hash."""

    def __init__(self, path, cfg):
        self.path = path
        self._f = open(path, "w", encoding="utf-8")
        self._f.write(f"# config_hash={config_hash(cfg)}\n")
        self._f.write(",".join(METRICS_COLUMNS) + "\n")

    def append(self, learner_step, wall_ms, variant, policy_loss, critic_loss,
               value_loss, eval_reward_ma, eval_success_ma):
        row = (str(int(learner_step)), str(int(wall_ms)), variant,
               repr(float(policy_loss)), repr(float(critic_loss)),
               repr(float(value_loss)), repr(float(eval_reward_ma)),
               repr(float(eval_success_ma)))
        self._f.write(",".join(row) + "\n")

    def close(self):
        self._f.close()


def run_learner(nets, opt, update_fn, replay, channels, config, rng,
                metrics=None, ckpt_dir=None, layout_version="", t0=None):
    """Drain, sample, update, broadcast, repeat; returns updates performed.

    A non-finite loss saves a diagnostic checkpoint and re-raises so the
    caller can halt the run.
    """
    updates = 0
    try:
        while updates < config.updates_budget and not channels.stop.is_set():
            drain_into(replay, channels)
            if replay.size < max(config.warmup, config.batch_size):
                time.sleep(0.0005)
                continue
            report = _learner_update(nets, opt, update_fn, replay, config,
                                     rng, updates)
            updates += 1
            channels.set_learner_step(updates)
            if updates % config.broadcast_interval == 0:
                channels.weights.publish(nets.policy.params, updates)
            if metrics is not None:
                wall = 0 if t0 is None else (time.monotonic() - t0) * 1000.0
                r_ma, s_ma = channels.eval_records.tail_ma(config.ma_window)
                metrics.append(updates, wall, config.variant,
                               report.policy_loss, report.critic_loss,
                               report.value_loss, r_ma, s_ma)
            if ckpt_dir and updates % config.checkpoint_interval == 0:
                save_checkpoint(f"{ckpt_dir}/ckpt_{updates:09d}.npz", nets,
                                config, updates, layout_version)
    except TrainingFault:
        if ckpt_dir:
            save_checkpoint(f"{ckpt_dir}/fault.npz", nets, config,
                            updates, layout_version)
        raise
    return updates


# ------------------------------------------------------------ run toplevel

@dataclass
class RunResult:
    updates: int
    produced: int
    inserted: int
    explorers: list
    evaluator: ActorHandle
    eval_records: list
    stopped_early: bool = False
    metrics_path: str = ""
    final_checkpoint: str = ""
    final_eval: object = None


def _spawn_tree(cfg):
    master = np.random.SeedSequence(cfg.seed)
    children = master.spawn(2 + cfg.n_explorers)
    return children[0], children[1], children[2:]


def _build_run(cfg):
    learner_ss, eval_ss, actor_sss = _spawn_tree(cfg)
    probe = world_mod.make_environment(cfg.env_id, seed=0, **cfg.world)
    obs_dim = obs_dim_of(probe.config)
    nets, opt, update_fn = build_learner(
        cfg, np.random.default_rng(learner_ss.spawn(1)[0]), obs_dim)
    learner_rng = np.random.default_rng(learner_ss.spawn(1)[0])
    replay = ReplayBuffer(cfg.replay_capacity, obs_dim, ACT_DIM,
                          alpha=cfg.per_alpha, eps=cfg.per_eps)
    explorers = [make_actor(i, EXPLORE, cfg, nets.policy.params, ss)
                 for i, ss in enumerate(actor_sss)]
    evaluator = make_actor(len(explorers), EVALUATE, cfg, nets.policy.params,
                           eval_ss)
    return nets, opt, update_fn, learner_rng, replay, explorers, evaluator, \
        probe.config.layout_version


def run_parallel(cfg, out_dir=None, step_cap=0):
    """Threaded topology; returns a RunResult once every role has stopped.

    step_cap > 0 bounds each explorer's environment steps (capped runs stop
    the learner once collection finishes, budget permitting or not).
    """
    (nets, opt, update_fn, learner_rng, replay, explorers, evaluator,
     layout_version) = _build_run(cfg)
    for h in explorers:
        h.step_cap = step_cap
    channels = Channels()
    metrics = MetricsLog(f"{out_dir}/metrics.csv", cfg) if out_dir else None
    t0 = time.monotonic()

    box = {}

    def learner_main():
        try:
            box["updates"] = run_learner(nets, opt, update_fn, replay,
                                         channels, cfg, learner_rng,
                                         metrics=metrics, ckpt_dir=out_dir,
                                         layout_version=layout_version, t0=t0)
        except BaseException as exc:
            box["error"] = exc
        finally:
            channels.stop.set()

    threads = [threading.Thread(target=run_actor, args=(h, channels, cfg),
                                name=f"explorer-{h.actor_id}")
               for h in explorers]
    threads.append(threading.Thread(target=run_evaluator,
                                    args=(evaluator, channels, cfg),
                                    name="evaluator"))
    learner_thread = threading.Thread(target=learner_main, name="learner")
    for t in threads:
        t.start()
    learner_thread.start()

    if step_cap:
        for t in threads[:-1]:
            t.join()
        channels.stop.set()
    learner_thread.join()
    channels.stop.set()
    for t in threads:
        t.join()
    drain_into(replay, channels)
    channels.close()

    final_ckpt = ""
    if out_dir and "error" not in box:
        final_ckpt = f"{out_dir}/final.npz"
        save_checkpoint(final_ckpt, nets, cfg, box.get("updates", 0),
                        layout_version)
    if metrics is not None:
        metrics.close()
    if "error" in box:
        raise box["error"]
    return RunResult(updates=box.get("updates", 0),
                     produced=sum(h.stats.produced for h in explorers),
                     inserted=replay.inserted,
                     explorers=explorers,
                     evaluator=evaluator,
                     eval_records=channels.eval_records.snapshot(),
                     metrics_path=metrics.path if metrics else "",
                     final_checkpoint=final_ckpt)


def run_serial(cfg, out_dir=None, stop_check=None):
    """Single-thread schedule: K explorer steps, one update, repeating.

    Bitwise reproducible for a fixed config and seed; wall_ms is pinned to 0
    so metrics files from identical runs are identical. stop_check, when
    given, is called every stop_check_interval updates with the live nets
    and returns True to end the run early (used for success-gated training).
    """
    (nets, opt, update_fn, learner_rng, replay, explorers, evaluator,
     layout_version) = _build_run(cfg)
    channels = Channels()
    metrics = MetricsLog(f"{out_dir}/metrics.csv", cfg) if out_dir else None

    def explorer_block():
        for h in explorers:
            _poll_weights(h, channels)
            _actor_step(h, channels, cfg)

    while replay.size < max(cfg.warmup, cfg.batch_size):
        explorer_block()
        drain_into(replay, channels)

    updates = 0
    stopped_early = False
    final_eval = None
    try:
        while updates < cfg.updates_budget:
            explorer_block()
            drain_into(replay, channels)
            report = _learner_update(nets, opt, update_fn, replay, cfg,
                                     learner_rng, updates)
            updates += 1
            channels.set_learner_step(updates)
            if updates % cfg.broadcast_interval == 0:
                channels.weights.publish(nets.policy.params, updates)
            if updates % cfg.eval_interval == 0:
                _poll_weights(evaluator, channels)
                reward, outcome, _ = run_eval_episode(evaluator)
                channels.eval_records.append(EvalRecord(
                    learner_step=updates, episode_reward=reward,
                    outcome=outcome, weight_version=evaluator.version))
            if metrics is not None:
                r_ma, s_ma = channels.eval_records.tail_ma(cfg.ma_window)
                metrics.append(updates, 0, cfg.variant, report.policy_loss,
                               report.critic_loss, report.value_loss,
                               r_ma, s_ma)
            if out_dir and updates % cfg.checkpoint_interval == 0:
                save_checkpoint(f"{out_dir}/ckpt_{updates:09d}.npz", nets,
                                cfg, updates, layout_version)
            if (stop_check is not None
                    and updates % cfg.stop_check_interval == 0):
                verdict = stop_check(nets, updates)
                if verdict:
                    stopped_early = True
                    final_eval = verdict
                    break
    except TrainingFault:
        if out_dir:
            save_checkpoint(f"{out_dir}/fault.npz", nets, cfg, updates,
                            layout_version)
        if metrics is not None:
            metrics.close()
        raise
    for h in explorers:
        _flush(h, channels)
    drain_into(replay, channels)
    final_ckpt = ""
    if out_dir:
        final_ckpt = f"{out_dir}/final.npz"
        save_checkpoint(final_ckpt, nets, cfg, updates, layout_version)
    if metrics is not None:
        metrics.close()
    channels.close()
    return RunResult(updates=updates,
                     produced=sum(h.stats.produced for h in explorers),
                     inserted=replay.inserted,
                     explorers=explorers,
                     evaluator=evaluator,
                     eval_records=channels.eval_records.snapshot(),
                     stopped_early=stopped_early,
                     metrics_path=metrics.path if metrics else "",
                     final_checkpoint=final_ckpt,
                     final_eval=final_eval)
