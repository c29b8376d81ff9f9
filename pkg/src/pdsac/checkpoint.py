"""Checkpoint serialization with reproducible bytes.

np.savez stamps each zip entry with the wall clock, so two identical runs
would disagree at the byte level. This writer pins the zip metadata instead;
files stay np.load compatible.
"""

import io
import json
import zipfile

import numpy as np

from .config import config_hash
from .errors import CheckpointError
from .nets import MLP, ParamSet, PolicyNet
from . import dsac
from . import sac

_EPOCH = (1980, 1, 1, 0, 0, 0)
META_KEY = "__meta__"


def _write_npz(path, arrays):
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(arrays[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())


def save_checkpoint(path, nets, cfg, learner_step, layout_version):
    meta = {
        "kind": "dsac" if hasattr(nets, "support") else "sac",
        "variant": cfg.variant,
        "env_id": cfg.env_id,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "learner_step": int(learner_step),
        "layout_version": layout_version,
        "obs_dim": nets.obs_dim,
        "act_dim": nets.act_dim,
        "alpha": nets.alpha,
        "gamma": nets.gamma,
        "hidden": [int(h) for h in nets.policy.mlp.sizes[1:-1]],
    }
    if meta["kind"] == "dsac":
        meta["atoms"] = nets.support.n
        meta["v_min"] = nets.support.v_min
        meta["v_max"] = nets.support.v_max
    blob = json.dumps(meta, sort_keys=True).encode()
    arrays = {META_KEY: np.frombuffer(blob, dtype=np.uint8)}
    if nets.feat_scale is not None:
        arrays["feat_scale"] = nets.feat_scale
    for set_name, ps in nets.param_sets().items():
        for tensor_name, tensor in ps.items():
            arrays[f"{set_name}.{tensor_name}"] = tensor
    _write_npz(path, arrays)


def load_checkpoint(path):
    """Read a checkpoint into (meta dict, array dict)."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if META_KEY not in arrays:
        raise CheckpointError(f"checkpoint {path} has no metadata entry")
    try:
        meta = json.loads(arrays.pop(META_KEY).tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata in {path}: {exc}") from exc
    return meta, arrays


def _mlp_params(arrays, prefix):
    entries = []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        for leaf in (f"w{i}", f"b{i}"):
            key = f"{prefix}.{leaf}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing tensor {key!r}")
            entries.append((leaf, arrays[key]))
        i += 1
    if not entries:
        raise CheckpointError(f"checkpoint missing parameter set {prefix!r}")
    return ParamSet(entries)


def build_nets(meta, arrays):
    """Reconstruct the network bundle a checkpoint was saved from."""
    for key in ("kind", "obs_dim", "act_dim", "alpha", "gamma", "hidden"):
        if key not in meta:
            raise CheckpointError(f"checkpoint metadata missing {key!r}")
    obs_dim = int(meta["obs_dim"])
    act_dim = int(meta["act_dim"])
    hidden = tuple(int(h) for h in meta["hidden"])
    feat_scale = arrays.get("feat_scale")
    policy = PolicyNet(obs_dim, act_dim,
                       params=_mlp_params(arrays, "policy"), hidden=hidden)
    if meta["kind"] == "sac":
        critic_sizes = (obs_dim + act_dim, *hidden, 1)
        value_sizes = (obs_dim, *hidden, 1)
        return sac.SacNets(
            policy=policy,
            q1=MLP(critic_sizes, _mlp_params(arrays, "q1")),
            q2=MLP(critic_sizes, _mlp_params(arrays, "q2")),
            value=MLP(value_sizes, _mlp_params(arrays, "value")),
            target_value=MLP(value_sizes, _mlp_params(arrays, "target_value")),
            alpha=float(meta["alpha"]),
            gamma=float(meta["gamma"]),
            obs_dim=obs_dim,
            act_dim=act_dim,
            feat_scale=feat_scale,
        )
    if meta["kind"] == "dsac":
        support = dsac.AtomSupport(int(meta["atoms"]), float(meta["v_min"]),
                                   float(meta["v_max"]))
        critic_sizes = (obs_dim + act_dim, *hidden, support.n)
        value_sizes = (obs_dim, *hidden, 1)
        return dsac.DsacNets(
            policy=policy,
            z1=MLP(critic_sizes, _mlp_params(arrays, "z1")),
            z2=MLP(critic_sizes, _mlp_params(arrays, "z2")),
            target_z1=MLP(critic_sizes, _mlp_params(arrays, "target_z1")),
            target_z2=MLP(critic_sizes, _mlp_params(arrays, "target_z2")),
            value=MLP(value_sizes, _mlp_params(arrays, "value")),
            support=support,
            alpha=float(meta["alpha"]),
            gamma=float(meta["gamma"]),
            obs_dim=obs_dim,
            act_dim=act_dim,
            feat_scale=feat_scale,
        )
    raise CheckpointError(f"unknown checkpoint kind {meta['kind']!r}")


def load_nets(path):
    meta, arrays = load_checkpoint(path)
    return build_nets(meta, arrays), meta
