"""Reward design: actionable distance, representation nets and shaped rewards.

The actionable distance between two observations is one minus the
cosine similarity of their Q-vectors under the block snapshot. Each
agent's representation net phi is trained so the Euclidean distance
between two embedded observations matches that actionable distance.
The intrinsic reward is the negative embedded distance to the agent's
subgoal observation; the proxy reward adds the averaged intrinsic
rewards to the extrinsic reward, and individual rewards split the
proxy reward by a softmax over the agents' snapshot max-Q values.

All distance targets, credit weights and reward scalars are computed
from the frozen block snapshot and enter the TD losses as constants.
"""

from __future__ import annotations

import numpy as np

from .autodiff import relu, sqrt
from .nn import affine, linear_params
from .subgoals import snapshot_q_seq


class ReprNet:
    """Observation -> action-dimensional embedding (one hidden layer)."""

    def __init__(self, obs_dim, n_actions, hidden_dim=128):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim

    def init_params(self, rng):
        p = linear_params(rng, self.obs_dim, self.hidden_dim, "h")
        p.update(linear_params(rng, self.hidden_dim, self.n_actions, "out"))
        return p

    def forward(self, params, obs):
        return affine(params, "out", relu(affine(params, "h", obs)))


class IdentityRepr:
    """Ablation stand-in: the embedding is the raw observation."""

    def __init__(self, obs_dim):
        self.obs_dim = obs_dim
        self.n_actions = obs_dim

    def init_params(self, rng):
        return {}

    def forward(self, params, obs):
        return obs


# ---------------------------------------------------------------------------
# actionable distance
# ---------------------------------------------------------------------------


def actionable_distance(q_a, q_b):
    """1 - cosine similarity of two Q-vectors, clipped to [0, 2].

    A zero-norm vector is treated as orthogonal to everything
    (distance 1); this only occurs at degenerate initialisation.
    """
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    na = np.linalg.norm(q_a)
    nb = np.linalg.norm(q_b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    cos = np.clip(np.dot(q_a, q_b) / (na * nb), -1.0, 1.0)
    return float(1.0 - cos)


def actionable_distance_obs(snapshot, qnet, agent, o_a, o_b):
    """Distance between two bare observations for one agent, each evaluated
    single-step from a zero hidden state under the snapshot."""
    params = snapshot.agent_params[agent]
    h = qnet.initial_hidden(1)
    q_a, _ = qnet.step(params, np.asarray(o_a, dtype=np.float64)[None], h)
    q_b, _ = qnet.step(params, np.asarray(o_b, dtype=np.float64)[None], h)
    return actionable_distance(q_a[0], q_b[0])


def distance_targets(snapshot, qnet, episode, assignment):
    """D_Q between every valid step and the subgoal step, per agent: (N, T).

    Both Q-vectors come from the same snapshot unroll of the episode, so
    hidden states are consistent. Padded steps get 0 (they carry no loss).
    """
    q_seq = snapshot_q_seq(snapshot, qnet, episode)  # (N, T, U)
    n, t_len, _ = q_seq.shape
    out = np.zeros((n, t_len))
    for i in range(n):
        q_goal = q_seq[i, assignment.t_star[i]]
        for t in range(episode.length):
            out[i, t] = actionable_distance(q_seq[i, t], q_goal)
    return out


# ---------------------------------------------------------------------------
# representation loss (differentiable)
# ---------------------------------------------------------------------------


def embedding_distances(repr_net, params, obs, goal_obs):
    """||phi(o_t) - phi(o_g)||_2 for a batch of observations.

    obs: (B, obs_dim), goal_obs: (obs_dim,) -> (B,). Differentiable when
    ``params`` are Tensors.
    """
    emb = repr_net.forward(params, obs)
    emb_g = repr_net.forward(params, np.asarray(goal_obs)[None, :])
    diff = emb - emb_g  # broadcast over batch
    return sqrt((diff * diff).sum(axis=-1))


def repr_loss(repr_net, params, obs, goal_obs, dq_targets, weights=None):
    """Mean over the batch of (||phi(o_t)-phi(o_g)||_2 - D_Q)^2.

    ``dq_targets`` are precomputed snapshot constants; no gradient flows
    through them. ``weights`` replaces the uniform 1/B mean when given
    (the trainer passes validity-mask weights).
    """
    dist = embedding_distances(repr_net, params, obs, goal_obs)
    dq = np.asarray(dq_targets, dtype=np.float64)
    delta = dist - dq
    sq = delta * delta
    if weights is None:
        b = obs.shape[0]
        return sq.sum() * (1.0 / b)
    return (sq * np.asarray(weights, dtype=np.float64)).sum()


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def intrinsic_reward(repr_net, params, o_t, o_g):
    """Negative embedded distance to the subgoal observation (always <= 0)."""
    phi_t = repr_net.forward(params, np.asarray(o_t, dtype=np.float64)[None])[0]
    phi_g = repr_net.forward(params, np.asarray(o_g, dtype=np.float64)[None])[0]
    return -float(np.linalg.norm(phi_t - phi_g))


def intrinsic_rewards_seq(repr_net, params, obs_seq, goal_obs):
    """Vectorised intrinsic rewards over one agent's episode: (T,)."""
    emb = repr_net.forward(params, obs_seq)
    emb_g = repr_net.forward(params, np.asarray(goal_obs)[None, :])
    return -np.linalg.norm(emb - emb_g, axis=-1)


def proxy_reward(r_ex, intrinsics, lam):
    """R_t = r_ex + lam * mean_i r_int_i (trains the mixer)."""
    intrinsics = np.asarray(intrinsics, dtype=np.float64)
    return float(r_ex) + lam * float(intrinsics.mean())


def softmax_credit(q_max_per_agent):
    """Softmax over agents of their max-Q values; positive, sums to 1."""
    q = np.asarray(q_max_per_agent, dtype=np.float64)
    z = np.exp(q - q.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def individual_rewards(q_max_per_agent, r_proxy, intrinsics, lam):
    """r_t^i = softmax_i(max Q_i) * R_t + lam * r_int_i, per agent."""
    w = softmax_credit(q_max_per_agent)
    return w * float(r_proxy) + lam * np.asarray(intrinsics, dtype=np.float64)
