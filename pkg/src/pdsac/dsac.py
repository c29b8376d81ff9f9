"""Distributional soft actor-critic learner.

The twin scalar critics become twin categorical heads over a fixed atom
support; each emits N logits and a softmax turns them into probability
masses.  Critic regression is a KL divergence against the Bellman-projected
masses of the slower target critics, the policy climbs the expected value
of the per-sample minimum-mean critic, and a state-value network regresses
to the soft value for use as a baseline.  Per-sample KL doubles as the
priority signal.

The temperature enters through the policy and value objectives only; the
critic recursion shifts atoms by r + gamma * z with no entropy term.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TrainingFault
from .features import featurize
from .nets import (
    MLP,
    AdamState,
    PolicyNet,
    adam_step,
    init_mlp_params,
    soft_update,
    squashed_log_prob,
    tanh_squash,
)
from .sac import LossReport

KL_CLAMP = 1e-10


class AtomSupport:
    """Evenly spaced return atoms on [v_min, v_max]."""

    def __init__(self, n, v_min, v_max):
        n = int(n)
        if n < 2:
            raise ValueError(f"need at least 2 atoms, got {n}")
        if not v_min < v_max:
            raise ValueError(f"need v_min < v_max, got [{v_min}, {v_max}]")
        self.n = n
        self.v_min = float(v_min)
        self.v_max = float(v_max)
        self.atoms = np.linspace(self.v_min, self.v_max, n)
        self.dz = (self.v_max - self.v_min) / (n - 1)


def make_support(n=51, v_min=-40.0, v_max=250.0):
    return AtomSupport(n, v_min, v_max)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def expected_q(masses, support):
    """Mean of a categorical return distribution; batched or single row."""
    return np.asarray(masses, dtype=np.float64) @ support.atoms


def project_target(support, rewards, dones, gamma, next_masses):
    """Categorical Bellman projection onto the fixed support.

    Each next-state atom moves to r + gamma * (1 - done) * z_j, gets clipped
    into [v_min, v_max], and its mass splits linearly between the two
    bracketing atoms (all of it on one atom when the shift lands exactly).
    Rows come back renormalized.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    masses = np.asarray(next_masses, dtype=np.float64)
    b, n = masses.shape
    z = support.atoms
    tz = rewards[:, None] + gamma * (1.0 - dones)[:, None] * z[None, :]
    np.clip(tz, support.v_min, support.v_max, out=tz)
    pos = np.clip((tz - support.v_min) / support.dz, 0.0, n - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.ceil(pos).astype(np.int64)
    on_atom = lo == hi
    w_lo = np.where(on_atom, 1.0, hi - pos)
    w_hi = pos - lo
    out = np.zeros((b, n), dtype=np.float64)
    rows = np.repeat(np.arange(b), n)
    np.add.at(out, (rows, lo.reshape(-1)), (masses * w_lo).reshape(-1))
    np.add.at(out, (rows, hi.reshape(-1)), (masses * w_hi).reshape(-1))
    out /= out.sum(axis=1, keepdims=True)
    return out


def kl_loss(pred, target, is_weights):
    """Is-weighted mean KL(target || pred) and the per-sample divergences."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    q = np.maximum(pred, KL_CLAMP)
    t_safe = np.where(target > 0.0, target, 1.0)
    per = np.sum(np.where(target > 0.0, target * (np.log(t_safe) - np.log(q)),
                          0.0), axis=1)
    loss = float(np.sum(is_weights * per) / per.size)
    return loss, per


def _kl_grad_logits(q, target):
    """d(KL)/d(logits) through the softmax, honoring the floor clamp."""
    active = q > KL_CLAMP
    t_act = target * active
    return q * t_act.sum(axis=1, keepdims=True) - t_act


@dataclass
class DsacNets:
    policy: PolicyNet
    z1: MLP
    z2: MLP
    target_z1: MLP
    target_z2: MLP
    value: MLP
    support: AtomSupport
    alpha: float
    gamma: float
    obs_dim: int
    act_dim: int
    feat_scale: np.ndarray | None = None

    def featurize(self, obs):
        return featurize(obs, self.feat_scale)

    def param_sets(self):
        return {
            "policy": self.policy.params,
            "z1": self.z1.params,
            "z2": self.z2.params,
            "target_z1": self.target_z1.params,
            "target_z2": self.target_z2.params,
            "value": self.value.params,
        }


@dataclass
class DsacOpt:
    policy: AdamState
    z1: AdamState
    z2: AdamState
    value: AdamState
    lr: float
    tau: float


def build_dsac(rng, obs_dim, act_dim, hidden=(256, 256, 256), alpha=0.2,
               gamma=0.99, support=None, feat_scale=None):
    if support is None:
        support = make_support()
    critic_sizes = (obs_dim + act_dim, *hidden, support.n)
    value_sizes = (obs_dim, *hidden, 1)
    policy = PolicyNet(obs_dim, act_dim, rng=rng, hidden=hidden)
    z1 = MLP(critic_sizes, init_mlp_params(rng, critic_sizes))
    z2 = MLP(critic_sizes, init_mlp_params(rng, critic_sizes))
    value = MLP(value_sizes, init_mlp_params(rng, value_sizes))
    target_z1 = MLP(critic_sizes, z1.params.copy())
    target_z2 = MLP(critic_sizes, z2.params.copy())
    return DsacNets(policy=policy, z1=z1, z2=z2, target_z1=target_z1,
                    target_z2=target_z2, value=value, support=support,
                    alpha=alpha, gamma=gamma, obs_dim=obs_dim,
                    act_dim=act_dim, feat_scale=feat_scale)


def build_dsac_opt(nets, lr=3e-4, tau=0.005):
    return DsacOpt(
        policy=AdamState.for_params(nets.policy.params),
        z1=AdamState.for_params(nets.z1.params),
        z2=AdamState.for_params(nets.z2.params),
        value=AdamState.for_params(nets.value.params),
        lr=lr,
        tau=tau,
    )


def dsac_losses_and_grads(nets, batch, noise_next, noise_cur,
                          with_grads=True):
    """Losses (and gradients) for one batch at the current parameters.

    noise_next drives the fresh action at s' inside the Bellman target;
    noise_cur drives the fresh action at s shared by the policy and value
    objectives.  Nothing is mutated.
    """
    b = len(batch)
    w = batch.is_weights / b
    sup = nets.support
    z = sup.atoms
    s = nets.featurize(batch.obs)
    s2 = nets.featurize(batch.next_obs)

    # Bellman target from the slow critics at a fresh next action.
    out2 = nets.policy.forward(s2)
    std2 = np.exp(out2.log_std)
    a2 = tanh_squash(out2.mean + std2 * noise_next)
    x2 = np.concatenate([s2, a2], axis=1)
    m1 = softmax(nets.target_z1.forward(x2))
    m2 = softmax(nets.target_z2.forward(x2))
    pick1_next = expected_q(m1, sup) <= expected_q(m2, sup)
    next_masses = np.where(pick1_next[:, None], m1, m2)
    target = project_target(sup, batch.rewards, batch.dones, nets.gamma,
                            next_masses)

    # Twin KL regressions; per-sample KL doubles as the priority signal.
    x_sa = np.concatenate([s, batch.actions], axis=1)
    logits1, cache1 = nets.z1.forward_cached(x_sa)
    logits2, cache2 = nets.z2.forward_cached(x_sa)
    q1m = softmax(logits1)
    q2m = softmax(logits2)
    q1_loss, kl1 = kl_loss(q1m, target, batch.is_weights)
    q2_loss, kl2 = kl_loss(q2m, target, batch.is_weights)
    td_errors = 0.5 * (kl1 + kl2)

    # Fresh action at s, shared by the policy and value objectives.
    pol_out, cache_pol = nets.policy.forward_cached(s)
    std = np.exp(pol_out.log_std)
    u = pol_out.mean + std * noise_cur
    action = tanh_squash(u)
    logp = squashed_log_prob(u, noise_cur, pol_out.log_std)

    x_spi = np.concatenate([s, action], axis=1)
    lp1, cache_p1 = nets.z1.forward_cached(x_spi)
    lp2, cache_p2 = nets.z2.forward_cached(x_spi)
    p1 = softmax(lp1)
    p2 = softmax(lp2)
    e1 = expected_q(p1, sup)
    e2 = expected_q(p2, sup)
    take1 = e1 <= e2
    q_min = np.where(take1, e1, e2)

    v_pred, cache_v = nets.value.forward_cached(s)
    v_pred = v_pred[:, 0]

    # Baseline is the value net, detached: it recenters the loss, not the
    # gradient, under reparameterized actions.
    policy_loss = float(np.sum(w * (nets.alpha * logp - (q_min - v_pred))))

    # Soft state value from the slow critics at the same fresh action.
    mt1 = softmax(nets.target_z1.forward(x_spi))
    mt2 = softmax(nets.target_z2.forward(x_spi))
    et1 = expected_q(mt1, sup)
    et2 = expected_q(mt2, sup)
    vt = np.minimum(et1, et2) - nets.alpha * logp
    value_loss = float(np.sum(w * 0.5 * (v_pred - vt) ** 2))

    report = LossReport(policy_loss=policy_loss, q1_loss=q1_loss,
                        q2_loss=q2_loss, value_loss=value_loss,
                        td_errors=td_errors)
    if not with_grads:
        return report, None

    g_z1, _ = nets.z1.backward(cache1, w[:, None] * _kl_grad_logits(q1m, target))
    g_z2, _ = nets.z2.backward(cache2, w[:, None] * _kl_grad_logits(q2m, target))
    g_value, _ = nets.value.backward(cache_v, (w * (v_pred - vt))[:, None])

    # Policy path: -E[Z] of the picked critic, through its logits
    # (dE/dlogit_j = p_j (z_j - E)) back to the action inputs, then the
    # same squash assembly as the scalar learner.
    d_log1 = (-(w * take1))[:, None] * p1 * (z[None, :] - e1[:, None])
    d_log2 = (-(w * ~take1))[:, None] * p2 * (z[None, :] - e2[:, None])
    _, dx1 = nets.z1.backward(cache_p1, d_log1)
    _, dx2 = nets.z2.backward(cache_p2, d_log2)
    dl_da = (dx1 + dx2)[:, nets.obs_dim:]

    tanh_u = np.tanh(u)
    wa = w[:, None] * nets.alpha
    d_mean = wa * 2.0 * tanh_u + dl_da * (1.0 - action ** 2)
    d_log_std = (wa * (-1.0 + 2.0 * tanh_u * std * noise_cur)
                 + dl_da * (1.0 - action ** 2) * std * noise_cur)
    g_policy, _ = nets.policy.backward(cache_pol, d_mean, d_log_std)

    grads = {"policy": g_policy, "z1": g_z1, "z2": g_z2, "value": g_value}
    return report, grads


def _draw_noises(nets, batch, rng):
    noise_next = rng.standard_normal((len(batch), nets.act_dim))
    noise_cur = rng.standard_normal((len(batch), nets.act_dim))
    return noise_next, noise_cur


def dsac_update(nets, batch, opt, rng):
    """One full learner step: twin KL critics, policy, value, target mix."""
    noise_next, noise_cur = _draw_noises(nets, batch, rng)
    try:
        report, grads = dsac_losses_and_grads(nets, batch, noise_next,
                                              noise_cur)
    except ValueError as exc:
        raise TrainingFault(str(exc)) from exc
    if not report.finite():
        raise TrainingFault(
            f"non-finite loss: policy={report.policy_loss} "
            f"q1={report.q1_loss} q2={report.q2_loss} "
            f"value={report.value_loss}")
    try:
        adam_step(nets.policy.params, grads["policy"], opt.policy, opt.lr)
        adam_step(nets.z1.params, grads["z1"], opt.z1, opt.lr)
        adam_step(nets.z2.params, grads["z2"], opt.z2, opt.lr)
        adam_step(nets.value.params, grads["value"], opt.value, opt.lr)
    except ValueError as exc:
        raise TrainingFault(str(exc)) from exc
    soft_update(nets.target_z1.params, nets.z1.params, opt.tau)
    soft_update(nets.target_z2.params, nets.z2.params, opt.tau)
    return report


def dsac_policy_update(nets, batch, opt, rng):
    """Policy objective and a single Adam step on the policy alone."""
    noise_next, noise_cur = _draw_noises(nets, batch, rng)
    try:
        report, grads = dsac_losses_and_grads(nets, batch, noise_next,
                                              noise_cur)
    except ValueError as exc:
        raise TrainingFault(str(exc)) from exc
    if not report.finite():
        raise TrainingFault(f"non-finite policy loss {report.policy_loss}")
    adam_step(nets.policy.params, grads["policy"], opt.policy, opt.lr)
    return report


def dsac_value_update(nets, batch, rng, opt=None):
    """Value regression loss; applies one Adam step when opt is given."""
    noise_next, noise_cur = _draw_noises(nets, batch, rng)
    report, grads = dsac_losses_and_grads(nets, batch, noise_next, noise_cur,
                                          with_grads=opt is not None)
    if opt is not None:
        adam_step(nets.value.params, grads["value"], opt.value, opt.lr)
    return report.value_loss
