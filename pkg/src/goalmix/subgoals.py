"""Subgoal selection from replayed episodes.

At the start of each training block the utility and mixer parameters
are frozen into a :class:`BlockSnapshot`. For every sampled episode and
every agent, each valid timestep t is scored as

    alpha * max_u Q_i(o_t^i, u)  +  (1 - alpha) * Q_tot(o_t, u_t) / N

with all Q values taken under the snapshot (hidden states recomputed by
unrolling from t=0, since snapshot parameters differ from the ones that
collected the episode). The subgoal observation for agent i is the
stored observation at the argmax timestep; ties break toward the
earliest timestep. At alpha=0 the score is agent-independent, so all
agents share one subgoal timestep; at alpha=1 each agent greedily picks
its own best local-Q observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import _copy_params


@dataclass
class BlockSnapshot:
    """Frozen copies of the utility nets and the mixer at block start."""

    agent_params: list
    mixer_params: dict
    block: int = 0

    @classmethod
    def from_paramset(cls, ps, block=0):
        return cls(
            agent_params=[_copy_params(p) for p in ps.agents],
            mixer_params=_copy_params(ps.mixer),
            block=block,
        )


@dataclass
class SubgoalAssignment:
    """Per-agent subgoal timestep and observation for one episode."""

    t_star: np.ndarray    # (n_agents,) int, index into the episode (0-based)
    goal_obs: np.ndarray  # (n_agents, obs_dim)
    episode_uid: int = -1


def snapshot_q_seq(snapshot, qnet, episode):
    """Q values of every agent at every step under the snapshot:
    (n_agents, T, n_actions), recomputed from a zero hidden state."""
    qs = [qnet.unroll(snapshot.agent_params[i], episode.obs[i][None])[0]
          for i in range(episode.n_agents)]
    return np.stack(qs)


def _masked_max_seq(q_seq, avail):
    """(..., T, U) -> (..., T) max over available actions."""
    return np.max(np.where(avail, q_seq, -np.inf), axis=-1)


def score_all(snapshot, qnet, mixer, episode, alpha):
    """Eq-style scores for every agent and valid timestep: (n_agents, T).

    Invalid (padded) steps are -inf so they never win the argmax.
    """
    q_seq = snapshot_q_seq(snapshot, qnet, episode)          # (N, T, U)
    q_max = _masked_max_seq(q_seq, episode.avail)            # (N, T)
    q_taken = np.take_along_axis(q_seq, episode.actions[..., None], axis=-1)[..., 0]
    q_tot = mixer.forward(snapshot.mixer_params, q_taken.T, episode.states)  # (T,)
    n = episode.n_agents
    scores = alpha * q_max + (1.0 - alpha) * q_tot[None, :] / n
    return np.where(episode.valid[None, :], scores, -np.inf)


def score_timestep(snapshot, qnet, mixer, episode, agent, t, alpha):
    """Score of one (agent, timestep) pair; see :func:`score_all`."""
    if not episode.valid[t]:
        raise ValueError(f"timestep {t} is padded/invalid")
    return float(score_all(snapshot, qnet, mixer, episode, alpha)[agent, t])


def select_subgoals(snapshot, qnet, mixer, episode, alpha) -> SubgoalAssignment:
    """Argmax of :func:`score_all` per agent; ties -> earliest timestep."""
    scores = score_all(snapshot, qnet, mixer, episode, alpha)
    t_star = np.argmax(scores, axis=1).astype(np.int64)  # first max per row
    goal_obs = np.stack([episode.obs[i, t_star[i]].copy()
                         for i in range(episode.n_agents)])
    return SubgoalAssignment(t_star=t_star, goal_obs=goal_obs, episode_uid=episode.uid)


def select_subgoals_random(episode, rng) -> SubgoalAssignment:
    """Ablation baseline: uniform subgoal timestep per agent."""
    t_star = rng.integers(episode.length, size=episode.n_agents).astype(np.int64)
    goal_obs = np.stack([episode.obs[i, t_star[i]].copy()
                         for i in range(episode.n_agents)])
    return SubgoalAssignment(t_star=t_star, goal_obs=goal_obs, episode_uid=episode.uid)
