"""A short end-to-end training run on the sparse 2v2 skirmish.

Uses a small step budget so it finishes in about a minute; the full
experiment protocol lives in the README (or `goalmix ablate`).

Run:  python3 demos/05_training_run.py
"""

import numpy as np

from goalmix.config import TrainConfig
from goalmix.env import SkirmishEnv, preset
from goalmix.training import Trainer


def main():
    cfg = TrainConfig(seed=0, max_env_steps=15_000, eval_interval=100,
                      eval_episodes=16).validate()
    trainer = Trainer(cfg, lambda: SkirmishEnv(preset("skirmish-2v2")),
                      rng=np.random.default_rng(cfg.seed))

    trainer.collect_episode()
    win = trainer.evaluate()
    print(f"initial greedy win rate: {win:.2f}")
    next_eval = cfg.eval_interval
    while trainer.env_steps < cfg.max_env_steps:
        report = trainer.train_block()
        if trainer.episodes_collected >= next_eval:
            win = trainer.evaluate()
            next_eval += cfg.eval_interval
            print(f"steps {report.env_steps:6d}  eps {report.epsilon:.2f}  "
                  f"win {win:.2f}  L_TD {report.loss_td:9.2f}  "
                  f"mean R_t {report.mean_proxy_reward:+7.3f}  "
                  f"t* {['%.1f' % t for t in report.subgoal_t_mean]}")
    print(f"final greedy win rate over 64 episodes: {trainer.evaluate(64):.2f}")


if __name__ == "__main__":
    main()
