"""Monotonic mixing network: combines local Q-values into a total Q.

The mixing weights are produced by state-conditioned hypernetworks and
passed through an absolute value, so the total is non-decreasing in
every local Q input by construction (the derivative through both mixing
layers is a product of non-negative weights and positive ELU slopes).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, absval, elu
from .nn import affine, linear_params


class MonotonicMixer:
    def __init__(self, n_agents, state_dim, embed_dim=32):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim

    def init_params(self, rng):
        p = linear_params(rng, self.state_dim, self.n_agents * self.embed_dim, "hw1")
        p.update(linear_params(rng, self.state_dim, self.embed_dim, "hb1"))
        p.update(linear_params(rng, self.state_dim, self.embed_dim, "hw2"))
        p.update(linear_params(rng, self.state_dim, self.embed_dim, "v1"))
        p.update(linear_params(rng, self.embed_dim, 1, "v2"))
        return p

    def forward(self, params, q_locals, states):
        """q_locals: (B, n_agents), states: (B, state_dim) -> (B,).

        Works on ndarrays (plain evaluation) or Tensors (graph mode);
        q_locals may itself be a Tensor to differentiate w.r.t. the
        local Q inputs.
        """
        b = q_locals.shape[0] if not isinstance(q_locals, Tensor) else q_locals.data.shape[0]
        w1 = absval(affine(params, "hw1", states))
        w1 = w1.reshape(b, self.n_agents, self.embed_dim)
        b1 = affine(params, "hb1", states).reshape(b, 1, self.embed_dim)
        qrow = q_locals.reshape(b, 1, self.n_agents)
        hidden = elu(qrow @ w1 + b1)  # (B, 1, embed)
        w2 = absval(affine(params, "hw2", states)).reshape(b, self.embed_dim, 1)
        head = hidden @ w2  # (B, 1, 1)
        v = affine(params, "v2", elu(affine(params, "v1", states)))  # (B, 1)
        return (head.reshape(b) + v.reshape(b))
