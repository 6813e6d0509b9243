"""Tour of the skirmish gridworld: maps, masks, rewards, the scripted enemy.

Run:  python3 demos/01_environment_tour.py
"""

import numpy as np

from goalmix.env import ATTACK, MOVE_DELTAS, NOOP, SkirmishEnv, preset


def render(env):
    grid = [["." for _ in range(env.cfg.width)] for _ in range(env.cfg.height)]
    for (x, y) in env.cfg.cliff_cells:
        grid[y][x] = "#"
    for u in range(env.n_units):
        if env.alive[u]:
            x, y = env.pos[u]
            grid[y][x] = "ab"[u] if env._is_ally(u) else "AB"[u - env.cfg.n_allies]
    return "\n".join("".join(row) for row in grid)


def focus_fire_policy(env):
    """The hand policy from the test suite, simplified: attack in range,
    otherwise walk at the first live enemy."""
    masks = env.avail_actions()
    targets = [u for u in range(env.cfg.n_allies, env.n_units) if env.alive[u]]
    actions = []
    for i in range(env.cfg.n_allies):
        if not env.alive[i] or not targets:
            actions.append(NOOP)
        elif masks[i, ATTACK]:
            actions.append(ATTACK)
        else:
            actions.append(env._step_toward(i, env.pos[targets[0]]))
    return actions


def main():
    rng = np.random.default_rng(7)

    for name in ("skirmish-2v2", "cliff-2v2"):
        env = SkirmishEnv(preset(name))
        env.reset(rng)
        print(f"=== {name} ({env.cfg.width}x{env.cfg.height}, "
              f"T_e={env.episode_limit}, obs_dim={env.obs_dim}, "
              f"state_dim={env.state_dim}) ===")
        print(render(env))
        print("action masks (no-op N S E W attack):")
        print(env.avail_actions().astype(int))
        print()

    print("=== one scripted battle on skirmish-2v2 (lowercase = allies) ===")
    env = SkirmishEnv(preset("skirmish-2v2"))
    env.reset(rng)
    total_sparse = total_dense = 0.0
    while True:
        result = env.step(focus_fire_policy(env))
        total_sparse += result.info["reward_sparse"]
        total_dense += result.info["reward_dense"]
        if result.info["enemy_deaths"] or result.info["ally_deaths"] or result.done:
            print(f"t={env.t:2d} sparse={result.info['reward_sparse']:+7.1f} "
                  f"dense={result.info['reward_dense']:+7.1f} "
                  f"kills={result.info['enemy_deaths']} deaths={result.info['ally_deaths']}")
        if result.done:
            print(render(env))
            print(f"won={result.won}  return: sparse={total_sparse:+.1f} dense={total_dense:+.1f}")
            break

    print()
    print("Moves N/S/E/W change y/x by", dict(MOVE_DELTAS))
    print("Sparse rewards fire only on kill/death/win events; the dense mode")
    print("adds the per-step health deltas on top (see EnvConfig.health_scale).")


if __name__ == "__main__":
    main()
