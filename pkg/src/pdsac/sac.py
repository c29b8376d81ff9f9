"""Scalar soft actor-critic learner.

One policy network, twin state-action critics, a state-value network and a
slowly tracking copy of it.  Every gradient is assembled by hand from the
network backward passes, so an update is a pure float64 computation with no
autograd in the loop.  All losses for a batch are computed from the same
parameter snapshot; the four Adam steps and the target mix-in happen at the
end, which keeps two learners fed identical inputs bitwise identical.
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
    policy_sample,
    soft_update,
    squashed_log_prob,
    tanh_squash,
)

EXPLORE = "explore"
EVALUATE = "evaluate"


@dataclass
class SacNets:
    policy: PolicyNet
    q1: MLP
    q2: MLP
    value: MLP
    target_value: MLP
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
            "q1": self.q1.params,
            "q2": self.q2.params,
            "value": self.value.params,
            "target_value": self.target_value.params,
        }


@dataclass
class SacOpt:
    policy: AdamState
    q1: AdamState
    q2: AdamState
    value: AdamState
    lr: float
    tau: float


@dataclass
class LossReport:
    policy_loss: float
    q1_loss: float
    q2_loss: float
    value_loss: float
    td_errors: np.ndarray

    @property
    def critic_loss(self):
        return 0.5 * (self.q1_loss + self.q2_loss)

    def finite(self):
        return bool(
            np.isfinite(self.policy_loss)
            and np.isfinite(self.q1_loss)
            and np.isfinite(self.q2_loss)
            and np.isfinite(self.value_loss)
            and np.all(np.isfinite(self.td_errors))
        )


def build_sac(rng, obs_dim, act_dim, hidden=(256, 256, 256),
              alpha=0.2, gamma=0.99, feat_scale=None):
    critic_sizes = (obs_dim + act_dim, *hidden, 1)
    value_sizes = (obs_dim, *hidden, 1)
    policy = PolicyNet(obs_dim, act_dim, rng=rng, hidden=hidden)
    q1 = MLP(critic_sizes, init_mlp_params(rng, critic_sizes))
    q2 = MLP(critic_sizes, init_mlp_params(rng, critic_sizes))
    value = MLP(value_sizes, init_mlp_params(rng, value_sizes))
    target_value = MLP(value_sizes, value.params.copy())
    return SacNets(policy=policy, q1=q1, q2=q2, value=value,
                   target_value=target_value, alpha=alpha, gamma=gamma,
                   obs_dim=obs_dim, act_dim=act_dim, feat_scale=feat_scale)


def build_sac_opt(nets, lr=3e-4, tau=0.005):
    return SacOpt(
        policy=AdamState.for_params(nets.policy.params),
        q1=AdamState.for_params(nets.q1.params),
        q2=AdamState.for_params(nets.q2.params),
        value=AdamState.for_params(nets.value.params),
        lr=lr,
        tau=tau,
    )


def select_action(nets, obs_vec, mode, rng=None):
    """Map one raw observation vector to a raw action in [-1, 1]^act_dim."""
    feats = nets.featurize(obs_vec)
    out = nets.policy.forward(feats[None, :])
    if mode == EVALUATE:
        return tanh_squash(out.mean[0])
    if mode != EXPLORE:
        raise ValueError(f"unknown action mode {mode!r}")
    noise = rng.standard_normal(nets.act_dim)[None, :]
    action, _ = policy_sample(out, noise)
    return action[0]


def q_target(nets, batch):
    """r + gamma * (1 - done) * V_target(s')."""
    s2 = nets.featurize(batch.next_obs)
    v_next = nets.target_value.forward(s2)[:, 0]
    return batch.rewards + nets.gamma * (1.0 - batch.dones) * v_next


def value_target(nets, batch, noise):
    """min(Q1, Q2)(s, a') - alpha * log pi(a'|s) for a fresh sample a'."""
    s = nets.featurize(batch.obs)
    out = nets.policy.forward(s)
    action, logp = policy_sample(out, noise)
    x = np.concatenate([s, action], axis=1)
    q1 = nets.q1.forward(x)[:, 0]
    q2 = nets.q2.forward(x)[:, 0]
    return np.minimum(q1, q2) - nets.alpha * logp


def sac_losses_and_grads(nets, batch, noise, with_grads=True):
    """Losses (and parameter gradients) for one batch at the current params.

    `noise` is the standard-normal draw for the fresh policy sample, shape
    (B, act_dim).  Everything is evaluated at the parameters as passed in;
    nothing is mutated.
    """
    b = len(batch)
    w = batch.is_weights / b
    s = nets.featurize(batch.obs)
    s2 = nets.featurize(batch.next_obs)

    # Critic regression toward the frozen value bootstrap.
    v_next = nets.target_value.forward(s2)[:, 0]
    qt = batch.rewards + nets.gamma * (1.0 - batch.dones) * v_next

    x_sa = np.concatenate([s, batch.actions], axis=1)
    q1_pred, cache_q1 = nets.q1.forward_cached(x_sa)
    q2_pred, cache_q2 = nets.q2.forward_cached(x_sa)
    q1_pred = q1_pred[:, 0]
    q2_pred = q2_pred[:, 0]
    td_errors = qt - np.minimum(q1_pred, q2_pred)
    q1_loss = float(np.sum(w * 0.5 * (q1_pred - qt) ** 2))
    q2_loss = float(np.sum(w * 0.5 * (q2_pred - qt) ** 2))

    # Fresh action; shared by the policy loss and the value regression.
    pol_out, cache_pol = nets.policy.forward_cached(s)
    std = np.exp(pol_out.log_std)
    u = pol_out.mean + std * noise
    action = tanh_squash(u)
    logp = squashed_log_prob(u, noise, pol_out.log_std)

    x_spi = np.concatenate([s, action], axis=1)
    q1_pi, cache_q1pi = nets.q1.forward_cached(x_spi)
    q2_pi, cache_q2pi = nets.q2.forward_cached(x_spi)
    q1_pi = q1_pi[:, 0]
    q2_pi = q2_pi[:, 0]
    take_q1 = q1_pi <= q2_pi
    q_min = np.where(take_q1, q1_pi, q2_pi)

    policy_loss = float(np.sum(w * (nets.alpha * logp - q_min)))

    vt = q_min - nets.alpha * logp
    v_pred, cache_v = nets.value.forward_cached(s)
    v_pred = v_pred[:, 0]
    value_loss = float(np.sum(w * 0.5 * (v_pred - vt) ** 2))

    report = LossReport(policy_loss=policy_loss, q1_loss=q1_loss,
                        q2_loss=q2_loss, value_loss=value_loss,
                        td_errors=td_errors)
    if not with_grads:
        return report, None

    g_q1, _ = nets.q1.backward(cache_q1, (w * (q1_pred - qt))[:, None])
    g_q2, _ = nets.q2.backward(cache_q2, (w * (q2_pred - qt))[:, None])
    g_value, _ = nets.value.backward(cache_v, (w * (v_pred - vt))[:, None])

    # Policy gradient: the -q_min path flows through whichever critic was
    # the per-sample minimum, back to its action inputs, then through the
    # squash into the policy head; the entropy path is analytic.
    _, dx1 = nets.q1.backward(cache_q1pi, -(w * take_q1)[:, None])
    _, dx2 = nets.q2.backward(cache_q2pi, -(w * ~take_q1)[:, None])
    dl_da = (dx1 + dx2)[:, nets.obs_dim:]

    tanh_u = np.tanh(u)
    one_m_a2 = 1.0 - action ** 2
    wa = w[:, None] * nets.alpha
    d_mean = wa * 2.0 * tanh_u + dl_da * one_m_a2
    d_log_std = (wa * (-1.0 + 2.0 * tanh_u * std * noise)
                 + dl_da * one_m_a2 * std * noise)
    g_policy, _ = nets.policy.backward(cache_pol, d_mean, d_log_std)

    grads = {"policy": g_policy, "q1": g_q1, "q2": g_q2, "value": g_value}
    return report, grads


def sac_update(nets, batch, opt, rng):
    """One full learner step: losses, four Adam steps, target mix-in.

    Returns the LossReport; td_errors in it are measured before any
    parameter moved and feed the replay priorities.
    """
    noise = rng.standard_normal((len(batch), nets.act_dim))
    try:
        report, grads = sac_losses_and_grads(nets, batch, noise)
    except ValueError as exc:
        raise TrainingFault(str(exc)) from exc
    if not report.finite():
        raise TrainingFault(
            f"non-finite loss: policy={report.policy_loss} "
            f"q1={report.q1_loss} q2={report.q2_loss} "
            f"value={report.value_loss}")
    try:
        adam_step(nets.policy.params, grads["policy"], opt.policy, opt.lr)
        adam_step(nets.q1.params, grads["q1"], opt.q1, opt.lr)
        adam_step(nets.q2.params, grads["q2"], opt.q2, opt.lr)
        adam_step(nets.value.params, grads["value"], opt.value, opt.lr)
    except ValueError as exc:
        raise TrainingFault(str(exc)) from exc
    soft_update(nets.target_value.params, nets.value.params, opt.tau)
    return report
