"""Blockwise training loop and the composite loss.

One block = one gradient step: snapshot the Q parameters, sample M
episodes, pick subgoals and shape rewards per episode under the
snapshot, sum the per-episode losses

    L = L_TD + sum_i [ lam_i * L_i + lam_e * sum_{t>=t*} L_corr + lam_d * L_repr ]

over the M episodes, take one RMSProp step on every online parameter,
sync the target copies on the configured episode cadence, then collect
one fresh epsilon-greedy episode into the buffer.

Zero-weighted loss components are skipped entirely, so with
lam = lam_i = lam_e = lam_d = 0 a block reduces bitwise to a plain
monotonic-mixing TD step (the QMIX baseline used by the ablations).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .agents import EpsilonSchedule, RecurrentQNet, act_epsilon_greedy, masked_argmax
from .autodiff import exp, logsumexp_last, sqrt, stack, take_along_last
from .mixer import MonotonicMixer
from .nn import (
    NonFiniteGradientError,
    ParamSet,
    RMSProp,
    as_tensors,
    clip_grads_global,
    gradient,
    sync_targets,
)
from .replay import Episode, ReplayBuffer
from .rewards import IdentityRepr, ReprNet, softmax_credit

METRICS_COLUMNS = [
    "env_steps", "block", "eval_win_rate", "L_TD",
    "sum_Li", "sum_LE", "sum_LD", "mean_Rt", "epsilon",
]


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient turns non-finite; carries the block report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class BlockReport:
    block: int
    env_steps: int
    episodes_collected: int
    epsilon: float
    loss_total: float
    loss_td: float
    loss_individual: float
    loss_correction: float
    loss_repr: float
    mean_proxy_reward: float
    subgoal_t_mean: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# batched episode arrays
# ---------------------------------------------------------------------------


def stack_episodes(episodes):
    """Stack M equally padded episodes into contiguous batch arrays."""
    return {
        "obs": np.stack([e.obs for e in episodes], axis=1),        # (N, M, T, D)
        "actions": np.stack([e.actions for e in episodes], axis=1),
        "avail": np.stack([e.avail for e in episodes], axis=1),
        "states": np.stack([e.states for e in episodes]),          # (M, T, S)
        "rewards": np.stack([e.rewards for e in episodes]),        # (M, T)
        "dones": np.stack([e.dones for e in episodes]).astype(np.float64),
        "valid": np.stack([e.valid for e in episodes]).astype(np.float64),
        "uids": np.array([e.uid for e in episodes], dtype=np.int64),
    }


def _masked_max(q, avail):
    return np.max(np.where(avail, q, -np.inf), axis=-1)


def _cosine_distance_batch(q_seq, q_goal):
    """1 - cos(q_seq[..., t, :], q_goal[..., None, :]) with the zero-norm
    convention; q_seq (..., T, U), q_goal (..., U) -> (..., T)."""
    dots = np.einsum("...tu,...u->...t", q_seq, q_goal)
    nt = np.linalg.norm(q_seq, axis=-1)
    ng = np.linalg.norm(q_goal, axis=-1)[..., None]
    denom = nt * ng
    cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - np.clip(cos, -1.0, 1.0)


# ---------------------------------------------------------------------------
# per-episode loss terms (reference surface; the trainer uses the batched
# equivalents in block_losses)
# ---------------------------------------------------------------------------


def loss_value(x):
    """Scalar float of a loss, whether it is a Tensor or an ndarray."""
    from .autodiff import Tensor

    return float(x.data) if isinstance(x, Tensor) else float(x)


def individual_td_loss(qnet, params, target_params, episode, rewards_i, agent, gamma=0.99):
    """Mean over valid t of the squared individual TD error of one agent:
    [r_t^i + gamma * max_u Q_target(o_{t+1}, u) - Q(o_t, u_t)]^2, with the
    bootstrap dropped on terminal steps. Differentiable when ``params``
    are Tensors."""
    t_len = episode.length
    obs = episode.obs[agent, :t_len][None]
    q_seq = qnet.unroll(params, obs)                                   # (1, L, U)
    q_taken = take_along_last(q_seq, episode.actions[agent, :t_len][None])
    tq = qnet.unroll(target_params, obs)
    tq_max = _masked_max(tq, episode.avail[agent, :t_len][None])
    nxt = np.zeros_like(tq_max)
    nxt[:, :-1] = tq_max[:, 1:]
    dones = episode.dones[:t_len].astype(np.float64)[None]
    y = np.asarray(rewards_i, dtype=np.float64)[:t_len][None] + gamma * (1.0 - dones) * nxt
    delta = q_taken - y
    return (delta * delta).sum() * (1.0 / t_len)


def total_td_loss(qnet, agent_params, mixer, mixer_params,
                  target_agent_params, target_mixer_params,
                  episode, proxy_rewards, gamma=0.99):
    """Mean over valid t of the squared total TD error; the bootstrap max
    feeds each agent's greedy target-net max into the target mixer."""
    t_len = episode.length
    n = episode.n_agents
    q_taken = [
        take_along_last(
            qnet.unroll(agent_params[i], episode.obs[i, :t_len][None]),
            episode.actions[i, :t_len][None],
        )
        for i in range(n)
    ]
    q_stack = stack(q_taken, axis=-1).reshape(t_len, n)
    states = episode.states[:t_len]
    q_tot = mixer.forward(mixer_params, q_stack, states)               # (L,)

    tq_max = np.stack([
        _masked_max(
            qnet.unroll(target_agent_params[i], episode.obs[i, :t_len][None])[0],
            episode.avail[i, :t_len],
        )
        for i in range(n)
    ])                                                                 # (N, L)
    tq_next = np.zeros_like(tq_max)
    tq_next[:, :-1] = tq_max[:, 1:]
    states_next = np.zeros_like(states)
    states_next[:-1] = states[1:]
    tot_next = mixer.forward(target_mixer_params, tq_next.T, states_next)
    dones = episode.dones[:t_len].astype(np.float64)
    y = np.asarray(proxy_rewards, dtype=np.float64)[:t_len] + gamma * (1.0 - dones) * tot_next
    delta = q_tot - y
    return (delta * delta).sum() * (1.0 / t_len)


def entropy_correction_loss(qnet, params, episode, t_star, agent, mode="normal"):
    """Sum over the correction window of KL(softmax(Q) || uniform).

    Window: [t_star, length) for "normal", [0, length) for "over",
    empty for "none"."""
    if mode == "none":
        return 0.0
    t_len = episode.length
    q_seq = qnet.unroll(params, episode.obs[agent, :t_len][None])       # (1, L, U)
    ls = q_seq - logsumexp_last(q_seq).reshape(1, t_len, 1)
    n_actions = episode.avail.shape[-1]
    kl = (exp(ls) * ls).sum(axis=-1) + np.log(n_actions)                # (1, L)
    window = np.ones(t_len) if mode == "over" else (np.arange(t_len) >= t_star)
    return (kl * window.astype(np.float64)[None]).sum()


def composite_loss(l_td, l_individual, l_correction, l_repr, lam_i, lam_e, lam_d):
    """Weighted assembly of one episode's loss components.

    l_individual / l_correction / l_repr are per-agent sequences;
    correction entries are already summed over their window."""
    total = l_td
    for li, le, ld in zip(l_individual, l_correction, l_repr):
        total = total + lam_i * li + lam_e * le + lam_d * ld
    return total


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Owns parameters, optimiser state, the replay buffer and both envs."""

    def __init__(self, config, env_factory, rng=None):
        self.cfg = config
        self.env = env_factory()
        self.eval_env = env_factory()
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)

        n = self.env.n_agents
        self.n_agents = n
        self.qnet = RecurrentQNet(self.env.obs_dim, self.env.n_actions, config.hidden_dim)
        self.mixer = MonotonicMixer(n, self.env.state_dim, config.mixer_embed_dim)
        if config.disable_repr:
            self.repr_net = IdentityRepr(self.env.obs_dim)
        else:
            self.repr_net = ReprNet(self.env.obs_dim, self.env.n_actions, config.repr_hidden_dim)

        distinct = 1 if config.share_params else n
        self.params = ParamSet(
            agents=[self.qnet.init_params(self.rng) for _ in range(distinct)],
            mixer=self.mixer.init_params(self.rng),
            reprs=[] if config.disable_repr
            else [self.repr_net.init_params(self.rng) for _ in range(distinct)],
        )
        sync_targets(self.params)

        self.opt = RMSProp(lr=config.lr, decay=config.rms_decay, eps=config.rms_eps)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.schedule = EpsilonSchedule(
            config.eps_start, config.eps_end, config.eps_anneal_steps
        )
        self.env_steps = 0
        self.episodes_collected = 0
        self.block = 0
        self._next_sync = config.target_interval
        self._subgoal_log_fh = None

    # -- parameter views -------------------------------------------------

    def _slot(self, i):
        return 0 if self.cfg.share_params else i

    def agent_params(self, i):
        return self.params.agents[self._slot(i)]

    def target_agent_params(self, i):
        return self.params.target_agents[self._slot(i)]

    def repr_params(self, i):
        if self.cfg.disable_repr:
            return {}
        return self.params.reprs[self._slot(i)]

    # -- data collection ----------------------------------------------------

    def collect_episode(self):
        """Roll out one epsilon-greedy episode and push it to the buffer."""
        ep, _ = self._rollout(self.env, self.rng, greedy=False)
        self.buffer.push(ep)
        self.episodes_collected += 1
        return ep

    def _rollout(self, env, rng, greedy):
        n, t_max = env.n_agents, env.episode_limit
        obs_hist = np.zeros((n, t_max, env.obs_dim))
        act_hist = np.zeros((n, t_max), dtype=np.int64)
        avail_hist = np.zeros((n, t_max, env.n_actions), dtype=bool)
        state_hist = np.zeros((t_max, env.state_dim))
        rew_hist = np.zeros(t_max)
        done_hist = np.zeros(t_max, dtype=bool)

        obs, state = env.reset(rng)
        hidden = [self.qnet.initial_hidden(1) for _ in range(n)]
        won = False
        t = 0
        while True:
            avail = env.avail_actions()
            obs_hist[:, t] = obs
            state_hist[t] = state
            avail_hist[:, t] = avail
            eps = 0.0 if greedy else self.schedule.value(self.env_steps)
            actions = []
            for i in range(n):
                q, hidden[i] = self.qnet.step(self.agent_params(i), obs[i][None], hidden[i])
                if greedy:
                    actions.append(masked_argmax(q[0], avail[i]))
                else:
                    actions.append(act_epsilon_greedy(q[0], eps, rng, avail[i]))
            result = env.step(actions)
            act_hist[:, t] = actions
            rew_hist[t] = result.reward
            done_hist[t] = result.done
            obs, state = result.obs, result.state
            if not greedy:
                self.env_steps += 1
            t += 1
            if result.done:
                won = result.won
                break
        valid = np.zeros(t_max, dtype=bool)
        valid[:t] = True
        avail_hist[:, t:, 0] = True  # padded steps: no-op only, keeps maxes finite
        ep = Episode(
            obs=obs_hist, actions=act_hist, avail=avail_hist, states=state_hist,
            rewards=rew_hist, dones=done_hist, valid=valid, length=t,
            uid=self.episodes_collected,
        )
        return ep, won

    def evaluate(self, n_episodes=None):
        """Greedy decentralised execution; returns the win fraction."""
        n_episodes = n_episodes or self.cfg.eval_episodes
        eval_rng = np.random.default_rng(int(self.rng.integers(2**63)))
        wins = 0
        for _ in range(n_episodes):
            _, won = self._rollout(self.eval_env, eval_rng, greedy=True)
            wins += int(won)
        return wins / n_episodes

    # -- block preparation (snapshot side, no gradients) ----------------------

    def prepare_block(self, batch, q_seq=None):
        """Subgoals, distance targets and shaped rewards for a sampled batch.

        ``q_seq`` (N, M, T, U) are the block-start Q values of every agent;
        the trainer passes the data of the online graph unroll (identical to
        a separate snapshot evaluation and cheaper), tests may omit it.
        """
        cfg = self.cfg
        n = self.n_agents

        if q_seq is None:
            q_seq = np.stack([
                self.qnet.unroll(self.agent_params(i), batch["obs"][i])
                for i in range(n)
            ])  # (N, M, T, U)
        _, m, t_len, _ = q_seq.shape
        q_max = _masked_max(q_seq, batch["avail"])                       # (N, M, T)
        q_taken = np.take_along_axis(q_seq, batch["actions"][..., None], axis=-1)[..., 0]

        states_flat = batch["states"].reshape(m * t_len, -1)
        q_tot = self.mixer.forward(
            self.params.mixer,
            np.moveaxis(q_taken, 0, -1).reshape(m * t_len, n),
            states_flat,
        ).reshape(m, t_len)

        mode = cfg.subgoal_mode
        if mode == "random":
            lengths = batch["valid"].sum(axis=1).astype(np.int64)        # (M,)
            t_star = np.stack([self.rng.integers(lengths) for _ in range(n)]).astype(np.int64)
        else:
            alpha = {"value": cfg.alpha, "local_only": 1.0, "total_only": 0.0}[mode]
            scores = alpha * q_max + (1.0 - alpha) * q_tot[None] / n     # (N, M, T)
            scores = np.where(batch["valid"][None].astype(bool), scores, -np.inf)
            t_star = np.argmax(scores, axis=2).astype(np.int64)          # (N, M)

        goal_obs = np.take_along_axis(
            batch["obs"], t_star[:, :, None, None], axis=2
        )[:, :, 0, :]                                                    # (N, M, D)

        out = {"t_star": t_star, "goal_obs": goal_obs, "q_max_snapshot": q_max}

        # intrinsic rewards and the proxy reward; the goal embedding is
        # gathered from the batched embeddings so the intrinsic reward at
        # the subgoal step is exactly zero
        if cfg.lam > 0:
            intr = np.empty((n, m, t_len))
            for i in range(n):
                emb = self.repr_net.forward(
                    self.repr_params(i), batch["obs"][i].reshape(m * t_len, -1)
                ).reshape(m, t_len, -1)
                emb_g = np.take_along_axis(emb, t_star[i][:, None, None], axis=1)
                intr[i] = -np.linalg.norm(emb - emb_g, axis=-1)
            proxy = batch["rewards"] + cfg.lam * intr.mean(axis=0)
            out["intrinsics"] = intr
        else:
            intr = None
            proxy = batch["rewards"].copy()
        out["proxy"] = proxy

        if cfg.lam_i > 0 and not cfg.disable_li:
            credits = softmax_credit(q_max)                              # (N, M, T)
            r_ind = credits * proxy[None]
            if cfg.lam > 0:
                r_ind = r_ind + cfg.lam * intr
            out["r_individual"] = r_ind

        if cfg.lam_d > 0 and not cfg.disable_repr:
            q_goal = np.take_along_axis(q_seq, t_star[:, :, None, None], axis=2)[:, :, 0, :]
            out["dq_targets"] = _cosine_distance_batch(q_seq, q_goal)    # (N, M, T)

        if cfg.lam_e > 0 and cfg.correction != "none":
            t_index = np.arange(t_len)[None, None, :]
            if cfg.correction == "over":
                window = np.broadcast_to(batch["valid"][None], (n, m, t_len))
            else:
                window = (t_index >= t_star[:, :, None]) * batch["valid"][None]
            out["correction_window"] = window.astype(np.float64)

        return out

    # -- loss (gradient side) ------------------------------------------------

    def block_losses(self, tensors, batch, prep, q_online=None):
        """Composite loss over the batch as a scalar Tensor, plus parts."""
        cfg = self.cfg
        n = self.n_agents
        agent_t, mixer_t, repr_t = tensors
        _, m, t_len, _ = batch["obs"].shape
        n_valid = batch["valid"].sum(axis=1)
        w_ep = batch["valid"] / n_valid[:, None]                         # (M, T)
        gamma, dones = cfg.gamma, batch["dones"]

        # target-side bootstraps (constants)
        tq_seq = np.stack([
            self.qnet.unroll(self.target_agent_params(i), batch["obs"][i])
            for i in range(n)
        ])
        tq_max = _masked_max(tq_seq, batch["avail"])                     # (N, M, T)
        tq_next = np.zeros_like(tq_max)
        tq_next[:, :, :-1] = tq_max[:, :, 1:]
        states_next = np.zeros_like(batch["states"])
        states_next[:, :-1] = batch["states"][:, 1:]
        tot_next = self.mixer.forward(
            self.params.target_mixer,
            np.moveaxis(tq_next, 0, -1).reshape(m * t_len, n),
            states_next.reshape(m * t_len, -1),
        ).reshape(m, t_len)
        y_tot = prep["proxy"] + gamma * (1.0 - dones) * tot_next

        # online unrolls (graph mode), shared by every loss component
        if q_online is None:
            q_online = [
                self.qnet.unroll(agent_t[self._slot(i)], batch["obs"][i])
                for i in range(n)
            ]
        q_taken = [take_along_last(q_online[i], batch["actions"][i]) for i in range(n)]

        q_stack = stack(q_taken, axis=-1).reshape(m * t_len, n)
        qtot_online = self.mixer.forward(mixer_t, q_stack, batch["states"].reshape(m * t_len, -1))
        delta_tot = qtot_online.reshape(m, t_len) - y_tot
        loss_td = (delta_tot.square() * w_ep).sum()

        total = loss_td
        sum_li = 0.0
        sum_le = 0.0
        sum_ld = 0.0

        if cfg.lam_i > 0 and not cfg.disable_li:
            for i in range(n):
                y_i = prep["r_individual"][i] + gamma * (1.0 - dones) * tq_next[i]
                delta = q_taken[i] - y_i
                loss_i = (delta.square() * w_ep).sum()
                total = total + cfg.lam_i * loss_i
                sum_li += loss_i.item()

        if cfg.lam_e > 0 and cfg.correction != "none":
            log_u = np.log(self.env.n_actions)
            for i in range(n):
                ls = q_online[i] - logsumexp_last(q_online[i]).reshape(m, t_len, 1)
                kl = (exp(ls) * ls).sum(axis=-1) + log_u
                loss_e = (kl * prep["correction_window"][i]).sum()
                total = total + cfg.lam_e * loss_e
                sum_le += loss_e.item()

        if cfg.lam_d > 0 and not cfg.disable_repr:
            for i in range(n):
                rp = repr_t[self._slot(i)]
                emb = self.repr_net.forward(rp, batch["obs"][i].reshape(m * t_len, -1))
                emb = emb.reshape(m, t_len, -1)
                emb_g = self.repr_net.forward(rp, prep["goal_obs"][i])
                diff = emb - emb_g.reshape(m, 1, -1)
                dist = sqrt((diff * diff).sum(axis=-1))
                delta = dist - prep["dq_targets"][i]
                loss_d = (delta.square() * w_ep).sum()
                total = total + cfg.lam_d * loss_d
                sum_ld += loss_d.item()

        parts = {
            "L_TD": loss_td.item(),
            "sum_Li": sum_li,
            "sum_LE": sum_le,
            "sum_LD": sum_ld,
        }
        return total, parts

    # -- one block ----------------------------------------------------------

    def _wrap_online(self):
        agent_t = [as_tensors(p) for p in self.params.agents]
        mixer_t = as_tensors(self.params.mixer)
        repr_t = [as_tensors(p) for p in self.params.reprs]
        flat = {}
        for i, d in enumerate(agent_t):
            flat.update({f"agent.{i}.{k}": v for k, v in d.items()})
        flat.update({f"mixer.{k}": v for k, v in mixer_t.items()})
        for i, d in enumerate(repr_t):
            flat.update({f"repr.{i}.{k}": v for k, v in d.items()})
        return (agent_t, mixer_t, repr_t), flat

    def train_block(self) -> BlockReport:
        cfg = self.cfg
        if len(self.buffer) == 0:
            self.collect_episode()

        episodes = self.buffer.sample(cfg.batch_size, self.rng)
        batch = stack_episodes(episodes)
        tensors, flat = self._wrap_online()
        agent_t = tensors[0]
        # the online unroll doubles as the block-start snapshot evaluation:
        # parameters are only mutated after the gradient step below
        q_online = [
            self.qnet.unroll(agent_t[self._slot(i)], batch["obs"][i])
            for i in range(self.n_agents)
        ]
        prep = self.prepare_block(batch, q_seq=np.stack([q.data for q in q_online]))
        loss, parts = self.block_losses(tensors, batch, prep, q_online=q_online)

        valid = batch["valid"].astype(bool)
        report = BlockReport(
            block=self.block,
            env_steps=self.env_steps,
            episodes_collected=self.episodes_collected,
            epsilon=self.schedule.value(self.env_steps),
            loss_total=loss.item(),
            loss_td=parts["L_TD"],
            loss_individual=parts["sum_Li"],
            loss_correction=parts["sum_LE"],
            loss_repr=parts["sum_LD"],
            mean_proxy_reward=float(prep["proxy"][valid].mean()),
            subgoal_t_mean=prep["t_star"].mean(axis=1).tolist(),
        )
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at block {self.block}", report)
        try:
            grads = gradient(loss, flat)
            grads = clip_grads_global(grads, cfg.grad_clip_norm)
            self.opt.step(self.params.named_online(), grads)
        except NonFiniteGradientError as err:
            raise TrainingDiverged(str(err), report) from err
        if not self.params.all_finite():
            raise TrainingDiverged(f"non-finite parameters after block {self.block}", report)

        if self.episodes_collected >= self._next_sync:
            sync_targets(self.params)
            self._next_sync += cfg.target_interval

        self._log_subgoals(batch, prep)
        self.collect_episode()
        self.block += 1
        return report

    def _log_subgoals(self, batch, prep):
        if self._subgoal_log_fh is None:
            return
        for i in range(self.n_agents):
            for m_idx, uid in enumerate(batch["uids"]):
                row = {
                    "block": self.block,
                    "episode_uid": int(uid),
                    "agent": i,
                    "t_star": int(prep["t_star"][i, m_idx]),
                }
                self._subgoal_log_fh.write(json.dumps(row) + "\n")

    # -- full run -------------------------------------------------------------

    def run(self, max_env_steps=None, metrics_path=None, subgoal_log_path=None):
        """Train until the environment-step budget is exhausted.

        Writes one metrics row per block (eval_win_rate carries the most
        recent periodic evaluation forward). Returns the final win rate.
        """
        cfg = self.cfg
        max_env_steps = max_env_steps or cfg.max_env_steps
        writer = fh = None
        if metrics_path is not None:
            fh = open(metrics_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
        if subgoal_log_path is not None:
            self._subgoal_log_fh = open(subgoal_log_path, "w")
        try:
            if len(self.buffer) == 0:
                self.collect_episode()
            win_rate = self.evaluate()
            next_eval = cfg.eval_interval
            while self.env_steps < max_env_steps:
                report = self.train_block()
                if self.episodes_collected >= next_eval:
                    win_rate = self.evaluate()
                    next_eval += cfg.eval_interval
                if writer is not None:
                    writer.writerow([
                        report.env_steps, report.block, repr(win_rate),
                        repr(report.loss_td), repr(report.loss_individual),
                        repr(report.loss_correction), repr(report.loss_repr),
                        repr(report.mean_proxy_reward), repr(report.epsilon),
                    ])
            win_rate = self.evaluate()
            return win_rate
        finally:
            if fh is not None:
                fh.close()
            if self._subgoal_log_fh is not None:
                self._subgoal_log_fh.close()
                self._subgoal_log_fh = None
