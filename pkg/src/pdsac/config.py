"""Run configuration: JSON in, validated dataclass out, defaults written back.

Every knob any module exposes lives here so a run is fully described by one
file. Loading materializes derived defaults (explorer count by variant, update
budget by environment), so the saved copy always has every field populated.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError

VARIANTS = ("sac", "sac-p", "pdsac", "pdsac-p")
DEFAULT_BUDGETS = {1: 200_000, 2: 400_000, 3: 600_000}

# physical knobs of the world that a run may override; layout geometry
# (boxes, start, targets) stays in the layout file
WORLD_OVERRIDE_KEYS = frozenset({
    "n_beams", "fov", "max_range", "dt", "max_steps",
    "v_lin_scale", "v_yaw_scale", "v_alt_scale",
    "z_min", "z_max", "c_d", "c_o",
    "r_arrive", "r_collide", "r_idle", "goal_z_range",
})


@dataclass
class RunConfig:
    variant: str
    env_id: int
    seed: int = 0
    out_dir: str = "runs/out"
    # networks and updates
    hidden: tuple = (256, 256, 256)
    lr: float = 3e-4
    tau: float = 0.005
    gamma: float = 0.99
    alpha: float = 0.2
    batch_size: int = 256
    # replay
    replay_capacity: int = 2 ** 20
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_eps: float = 1e-6
    # categorical critic support
    atoms: int = 51
    v_min: float = -40.0
    v_max: float = 250.0
    # orchestration
    n_explorers: int = 0  # 0 = derive from variant at load
    flush_interval: int = 50
    broadcast_interval: int = 100
    warmup: int = 5000
    updates_budget: int = 0  # 0 = derive from env_id at load
    eval_interval: int = 500
    checkpoint_interval: int = 10_000
    ma_window: int = 100
    # optional early stop on the fixed-target protocol
    stop_success_threshold: float = 0.0  # percent; 0 disables
    stop_check_interval: int = 2500
    eval_trials_per_target: int = 25
    # physical world overrides
    world: dict = field(default_factory=dict)

    @property
    def prioritized(self):
        return self.variant.endswith("-p")

    @property
    def distributional(self):
        return self.variant.startswith("pdsac")


def materialize(cfg):
    """Fill derived defaults so every field is concrete."""
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}, "
                          f"expected one of {VARIANTS}")
    if cfg.env_id not in DEFAULT_BUDGETS:
        raise ConfigError(f"env_id must be 1, 2 or 3, got {cfg.env_id!r}")
    out = cfg
    if out.n_explorers == 0:
        out = replace(out, n_explorers=4 if out.distributional else 1)
    if out.updates_budget == 0:
        out = replace(out, updates_budget=DEFAULT_BUDGETS[out.env_id])
    return out


def validate(cfg):
    if not 0.0 < cfg.gamma < 1.0:
        raise ConfigError(f"gamma must be in (0,1), got {cfg.gamma}")
    if cfg.alpha < 0.0:
        raise ConfigError(f"alpha must be >= 0, got {cfg.alpha}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.atoms < 2 or not cfg.v_min < cfg.v_max:
        raise ConfigError("need atoms >= 2 and v_min < v_max, got "
                          f"{cfg.atoms} on [{cfg.v_min}, {cfg.v_max}]")
    if cfg.replay_capacity < cfg.batch_size:
        raise ConfigError("replay_capacity smaller than batch_size")
    if cfg.n_explorers < 1:
        raise ConfigError(f"n_explorers must be >= 1, got {cfg.n_explorers}")
    if cfg.updates_budget < 1:
        raise ConfigError("updates_budget must be >= 1")
    if cfg.warmup < cfg.batch_size:
        raise ConfigError("warmup must cover at least one batch")
    for k in (cfg.flush_interval, cfg.broadcast_interval, cfg.eval_interval,
              cfg.checkpoint_interval, cfg.ma_window,
              cfg.stop_check_interval, cfg.eval_trials_per_target):
        if k < 1:
            raise ConfigError("interval and window fields must be >= 1")
    bad = set(cfg.world) - WORLD_OVERRIDE_KEYS
    if bad:
        raise ConfigError(f"unknown world override keys {sorted(bad)}")
    return cfg


def from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    missing = {"variant", "env_id"} - set(d)
    if missing:
        raise ConfigError(f"missing required config keys {sorted(missing)}")
    d = dict(d)
    if "hidden" in d:
        d["hidden"] = tuple(int(h) for h in d["hidden"])
    if "world" in d and isinstance(d["world"], dict):
        w = dict(d["world"])
        if "goal_z_range" in w:
            w["goal_z_range"] = tuple(float(v) for v in w["goal_z_range"])
        d["world"] = w
    try:
        cfg = RunConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return validate(materialize(cfg))


def to_dict(cfg):
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    w = dict(d["world"])
    if "goal_z_range" in w:
        w["goal_z_range"] = list(w["goal_z_range"])
    d["world"] = w
    return d


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return from_dict(raw)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg):
    """Short stable digest identifying a fully materialized config."""
    blob = json.dumps(to_dict(cfg), sort_keys=True,
                      separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def default_config(variant, env_id, **kw):
    return validate(materialize(RunConfig(variant=variant, env_id=int(env_id),
                                          **kw)))
