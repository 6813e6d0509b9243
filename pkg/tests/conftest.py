"""Shared fixtures and factories for synthetic episodes and small nets."""

import numpy as np
import pytest

from goalmix.agents import RecurrentQNet
from goalmix.mixer import MonotonicMixer
from goalmix.nn import ParamSet, sync_targets
from goalmix.replay import Episode
from goalmix.rewards import ReprNet
from goalmix.subgoals import BlockSnapshot


def make_episode(rng, n_agents=2, t_max=6, length=None, obs_dim=5, n_actions=4,
                 state_dim=4, reward_scale=1.0):
    """A random, structurally valid padded episode."""
    if length is None:
        length = int(rng.integers(1, t_max + 1))
    obs = np.zeros((n_agents, t_max, obs_dim))
    obs[:, :length] = rng.normal(size=(n_agents, length, obs_dim))
    actions = np.zeros((n_agents, t_max), dtype=np.int64)
    actions[:, :length] = rng.integers(n_actions, size=(n_agents, length))
    avail = np.zeros((n_agents, t_max, n_actions), dtype=bool)
    avail[:, :, 0] = True
    avail[:, :length] = True
    states = np.zeros((t_max, state_dim))
    states[:length] = rng.normal(size=(length, state_dim))
    rewards = np.zeros(t_max)
    rewards[:length] = reward_scale * rng.normal(size=length)
    dones = np.zeros(t_max, dtype=bool)
    dones[length - 1] = True
    valid = np.zeros(t_max, dtype=bool)
    valid[:length] = True
    ep = Episode(obs=obs, actions=actions, avail=avail, states=states,
                 rewards=rewards, dones=dones, valid=valid, length=length,
                 uid=int(rng.integers(10_000)))
    ep.validate()
    return ep


def make_nets(obs_dim=5, n_actions=4, state_dim=4, n_agents=2, hidden=8, embed=4,
              repr_hidden=6):
    qnet = RecurrentQNet(obs_dim, n_actions, hidden)
    mixer = MonotonicMixer(n_agents, state_dim, embed)
    repr_net = ReprNet(obs_dim, n_actions, repr_hidden)
    return qnet, mixer, repr_net


def make_paramset(rng, qnet, mixer, repr_net=None, n_agents=2):
    ps = ParamSet(
        agents=[qnet.init_params(rng) for _ in range(n_agents)],
        mixer=mixer.init_params(rng),
        reprs=[] if repr_net is None
        else [repr_net.init_params(rng) for _ in range(n_agents)],
    )
    sync_targets(ps)
    return ps


def make_snapshot(rng, qnet, mixer, n_agents=2, block=0):
    ps = ParamSet(
        agents=[qnet.init_params(rng) for _ in range(n_agents)],
        mixer=mixer.init_params(rng),
    )
    return BlockSnapshot.from_paramset(ps, block)


def zero_params(params):
    """Same keys and shapes, all zeros."""
    return {k: np.zeros_like(v) for k, v in params.items()}


def assert_grads_close(analytic, fd, rtol=1e-4, scale_floor=1e-6, zero_tol=1e-8):
    """Relative error <= rtol wherever the gradient has scale; coordinates
    where both sides are below the scale floor (true zeros drowned in
    central-difference noise) must agree absolutely to zero_tol."""
    for name in fd:
        a, f = np.asarray(analytic[name]), np.asarray(fd[name])
        scale = np.maximum(np.abs(a), np.abs(f))
        big = scale > scale_floor
        if big.any():
            rel = np.abs(a - f)[big] / scale[big]
            assert rel.max() < rtol, f"{name}: max rel err {rel.max():.3e}"
        small = ~big
        if small.any():
            diff = np.abs(a - f)[small]
            assert diff.max() < zero_tol, f"{name}: near-zero coords differ {diff.max():.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
