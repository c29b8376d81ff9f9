"""Fixed-topology MLP function approximators.

Everything runs on float64 numpy with hand-written reverse-mode gradients:
the topologies used here (dense ReLU stacks with a linear head) are small
and fixed, and exact, dependency-free gradients keep training bitwise
reproducible. Checkpoints use a little-endian binary tensor format that
round-trips exactly.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

# keep squashed actions strictly inside (-1, 1) even when tanh saturates
ACTION_EPS = 1e-12

CKPT_MAGIC = b"PDSACNET"
CKPT_LAYOUT_VERSION = 1

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ParamSet:
    """Ordered, named float64 tensors plus a version counter."""

    def __init__(self, entries, version=0):
        names = []
        tensors = []
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in parameter {name!r}")
            names.append(str(name))
            tensors.append(arr)
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self._names = tuple(names)
        self._tensors = tensors
        self.version = int(version)

    @property
    def names(self):
        return self._names

    def tensors(self):
        return self._tensors

    def get(self, name):
        return self._tensors[self._names.index(name)]

    def items(self):
        return list(zip(self._names, self._tensors))

    def copy(self):
        return ParamSet(
            [(n, t.copy()) for n, t in self.items()], version=self.version
        )

    def zeros_like(self):
        return ParamSet([(n, np.zeros_like(t)) for n, t in self.items()])

    def bump_version(self):
        self.version += 1

    def shapes(self):
        return tuple(t.shape for t in self._tensors)


def init_mlp_params(rng, sizes, final_scale=1.0):
    """Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
    and biases; the output layer is additionally scaled by final_scale."""
    entries = []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in = sizes[i]
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
        b = rng.uniform(-bound, bound, size=(sizes[i + 1],))
        if i == n_layers - 1:
            w *= final_scale
            b *= final_scale
        entries.append((f"w{i}", w))
        entries.append((f"b{i}", b))
    return ParamSet(entries)


class MLP:
    """Dense ReLU stack with a linear output layer."""

    def __init__(self, sizes, params):
        self.sizes = tuple(int(s) for s in sizes)
        self._check_params(params)
        self.params = params

    def _check_params(self, params):
        want = []
        for i in range(len(self.sizes) - 1):
            want.append((f"w{i}", (self.sizes[i], self.sizes[i + 1])))
            want.append((f"b{i}", (self.sizes[i + 1],)))
        got = [(n, t.shape) for n, t in params.items()]
        if got != want:
            raise CheckpointError(
                f"parameter layout mismatch: expected {want}, got {got}"
            )

    def load_params(self, params):
        self._check_params(params)
        self.params = params

    def _layers(self):
        n = len(self.sizes) - 1
        p = self.params
        return [(p.get(f"w{i}"), p.get(f"b{i}")) for i in range(n)]

    def forward(self, x):
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        acts = [h]
        layers = self._layers()
        for i, (w, b) in enumerate(layers):
            z = h @ w + b
            if i < len(layers) - 1:
                z = np.maximum(z, 0.0)
            h = z
            acts.append(h)
        y = acts[-1][0] if squeeze else acts[-1]
        return y, (acts, squeeze)

    def backward(self, cache, dy):
        """Exact reverse-mode gradients for the cached forward pass.

        Returns (grads ParamSet matching self.params, d_input).
        """
        acts, squeeze = cache
        d = np.atleast_2d(np.asarray(dy, dtype=np.float64))
        layers = self._layers()
        gws = [None] * len(layers)
        gbs = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            a_in = acts[i]
            gws[i] = a_in.T @ d
            gbs[i] = d.sum(axis=0)
            d = d @ w.T
            if i > 0:
                d = d * (a_in > 0.0)
        entries = []
        for i in range(len(layers)):
            entries.append((f"w{i}", gws[i]))
            entries.append((f"b{i}", gbs[i]))
        dx = d[0] if squeeze else d
        return ParamSet(entries), dx


@dataclass
class PolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray


class PolicyNet:
    """Gaussian policy head: an MLP emitting (mean, log_std) per action dim,
    log_std clamped to [LOG_STD_MIN, LOG_STD_MAX]."""

    def __init__(self, obs_dim, act_dim, params=None, rng=None,
                 hidden=(256, 256, 256), final_scale=1e-3):
        sizes = (obs_dim,) + tuple(hidden) + (2 * act_dim,)
        if params is None:
            params = init_mlp_params(rng, sizes, final_scale=final_scale)
        self.act_dim = act_dim
        self.mlp = MLP(sizes, params)

    @property
    def params(self):
        return self.mlp.params

    def load_params(self, params):
        self.mlp.load_params(params)

    def forward(self, x):
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x):
        raw, cache = self.mlp.forward_cached(x)
        d = self.act_dim
        mean = raw[..., :d]
        raw_log_std = raw[..., d:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        mask = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        return PolicyOutput(mean=mean, log_std=log_std), (cache, mask)

    def backward(self, head_cache, d_mean, d_log_std):
        cache, mask = head_cache
        d_raw = np.concatenate(
            [np.atleast_2d(d_mean), np.atleast_2d(d_log_std) * mask], axis=-1
        )
        return self.mlp.backward(cache, d_raw)


def tanh_squash(u):
    return np.clip(np.tanh(u), -1.0 + ACTION_EPS, 1.0 - ACTION_EPS)


def squashed_log_prob(u, noise, log_std):
    """Log density of a = tanh(u), u = mean + exp(log_std) * noise.

    Uses log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), which stays
    finite for any u.
    """
    base = -0.5 * noise**2 - log_std - HALF_LOG_2PI
    corr = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return np.sum(base - corr, axis=-1)


def policy_sample(out, noise):
    """Reparameterized tanh-Gaussian sample: (action in (-1,1)^d, log_prob)."""
    noise = np.asarray(noise, dtype=np.float64)
    std = np.exp(out.log_std)
    u = out.mean + std * noise
    action = tanh_squash(u)
    return action, squashed_log_prob(u, noise, out.log_std)


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, m, v, t=0):
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def for_params(cls, params):
        return cls(
            [np.zeros_like(x) for x in params.tensors()],
            [np.zeros_like(x) for x in params.tensors()],
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step with bias correction, applied in place."""
    if grads.names != params.names:
        raise ValueError("gradient names do not match parameters")
    for g in grads.tensors():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params.tensors(), grads.tensors(), state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    params.bump_version()


def soft_update(target, online, tau):
    """target <- tau * online + (1 - tau) * target, in place on target."""
    if target.names != online.names:
        raise ValueError("target/online parameter names do not match")
    for t, o in zip(target.tensors(), online.tensors()):
        t *= 1.0 - tau
        t += tau * o
    target.bump_version()


# ---- checkpoint io ----


def _write_tensor(fh, name, arr):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f8").tobytes(order="C"))


def save_checkpoint(path, sets, meta=None):
    """Write named ParamSets (and string metadata) to a binary checkpoint.

    Format, all little-endian: 8-byte magic, uint32 layout version, uint32
    tensor count; then per tensor: uint16 name length, utf-8 name, uint8
    rank, uint32 dims, float64 payload in C order. ParamSet versions ride
    as rank-0 tensors, metadata strings as byte-valued rank-1 tensors.
    """
    records = []
    for set_name in sorted(sets):
        ps = sets[set_name]
        for n, t in ps.items():
            records.append((f"{set_name}/{n}", t))
        records.append((f"{set_name}/__version__", np.float64(ps.version)))
    for key in sorted(meta or {}):
        payload = np.frombuffer(str(meta[key]).encode("utf-8"), dtype=np.uint8)
        records.append((f"meta/{key}", payload.astype(np.float64)))
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_LAYOUT_VERSION))
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_tensor(fh, name, arr)


def _read_exact(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns ({set_name: ParamSet}, meta)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CKPT_MAGIC), "magic")
        if magic != CKPT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        (layout_version,) = struct.unpack("<I", _read_exact(fh, 4, "layout version"))
        if layout_version != CKPT_LAYOUT_VERSION:
            raise CheckpointError(f"unsupported checkpoint layout {layout_version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        raw = {}
        order = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = [
                struct.unpack("<I", _read_exact(fh, 4, "dims"))[0]
                for _ in range(rank)
            ]
            n_items = 1
            for d in dims:
                n_items *= d
            payload = _read_exact(fh, 8 * n_items, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(dims)
            raw[name] = arr.copy()
            order.append(name)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    sets = {}
    meta = {}
    grouped = {}
    for name in order:
        if "/" not in name:
            raise CheckpointError(f"malformed tensor name {name!r}")
        group, rest = name.split("/", 1)
        if group == "meta":
            meta[rest] = bytes(raw[name].astype(np.uint8)).decode("utf-8")
        else:
            grouped.setdefault(group, []).append((rest, raw[name]))
    for group, entries in grouped.items():
        version = 0
        tensors = []
        for n, t in entries:
            if n == "__version__":
                version = int(t.reshape(-1)[0])
            else:
                tensors.append((n, t))
        sets[group] = ParamSet(tensors, version=version)
    return sets, meta
