"""Exit-time Markov decision processes and episode rollouts.

Environments work on batches: a state batch is an array of shape (n, d) and
every method maps it row by row. A single episode is the n = 1 case.
"""

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    N: int
    T: float

    def __post_init__(self):
        if self.N < 1 or not self.T > 0:
            raise ValueError("need N >= 1 and T > 0")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def knots(self):
        return np.linspace(0.0, self.T, self.N + 1)

    def t(self, i):
        return self.T * i / self.N


class Environment:
    """Interface for a simulator of the unknown transition kernel.

    Subclasses set `state_dim` and implement reset, step, in_domain and
    terminal_reward. All state arguments are (n, state_dim) arrays.
    """

    state_dim = None

    def reset(self, n, rng):
        raise NotImplementedError

    def step(self, i, x, a, rng):
        raise NotImplementedError

    def in_domain(self, x):
        raise NotImplementedError

    def terminal_reward(self, x):
        raise NotImplementedError

    def features(self, t, x):
        """Network input for time t and states x; default is [t, x]."""
        x = np.atleast_2d(x)
        return np.column_stack([np.full(x.shape[0], float(t)), x])

    @property
    def feature_dim(self):
        return self.state_dim + 1


class EpisodeError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """A batch of n episodes on a common time grid.

    states[i, k] is the state of path k at t_i; after the exit it stays
    frozen at the exit state. Step i of path k is active iff i < exit_index[k].
    Inactive entries of `indices` are -1 and of `features` are 0.
    """

    grid: TimeGrid
    states: np.ndarray      # (N + 1, n, d)
    features: np.ndarray    # (N, n, p)
    indices: np.ndarray     # (N, n) int
    actions: np.ndarray     # (N, n) or (N, n, m)
    exit_index: np.ndarray  # (n,) int
    reward: np.ndarray      # (n,)

    @property
    def n_paths(self):
        return self.states.shape[1]

    @property
    def active(self):
        steps = np.arange(self.grid.N)[:, None]
        return steps < self.exit_index[None, :]

    @property
    def tau(self):
        return self.exit_index * self.grid.dt

    @property
    def exit_states(self):
        return self.states[self.exit_index, np.arange(self.n_paths)]

    def path(self, k):
        """Arrays for path k, truncated at its exit: (states, indices, actions)."""
        K = int(self.exit_index[k])
        return self.states[:K + 1, k], self.indices[:K, k], self.actions[:K, k]


def rollout_batch(env, grid, policy, n, rng):
    """Simulate n independent episodes under `policy`.

    `policy` is either a randomized policy with sample(features, rng) or a
    feedback control with act(i, states, rng); both return (indices, action
    values). Exit is tested on post-step states only; the initial state is assumed
    to lie in the domain.
    """
    x = np.asarray(env.reset(n, rng), dtype=float).reshape(n, env.state_dim)
    N = grid.N
    states = np.empty((N + 1, n, env.state_dim))
    states[0] = x
    feats = np.zeros((N, n, env.feature_dim))
    indices = np.full((N, n), -1, dtype=np.int64)
    actions = None
    exit_index = np.full(n, N, dtype=np.int64)
    alive = np.arange(n)
    for i in range(N):
        if alive.size == 0:
            states[i + 1:] = states[i]
            break
        xa = x[alive]
        f = env.features(grid.t(i), xa)
        if hasattr(policy, "act"):
            idx, a = policy.act(i, xa, rng)
        else:
            idx, a = policy.sample(f, rng)
        a = np.asarray(a, dtype=float)
        if actions is None:
            actions = np.zeros((N, n) + a.shape[1:])
        feats[i, alive] = f
        indices[i, alive] = idx
        actions[i, alive] = a
        x_new = np.asarray(env.step(i, xa, a, rng), dtype=float)
        if not np.all(np.isfinite(x_new)):
            bad = alive[~np.all(np.isfinite(x_new), axis=1)]
            raise EpisodeError(f"non-finite state at step {i + 1} on paths {bad[:5].tolist()}")
        states[i + 1] = x
        states[i + 1, alive] = x_new
        x = states[i + 1]
        left = ~np.asarray(env.in_domain(x_new), dtype=bool)
        exit_index[alive[left]] = i + 1
        alive = alive[~left]
    if actions is None:
        actions = np.zeros((N, n))
    exit_states = states[exit_index, np.arange(n)]
    reward = np.asarray(env.terminal_reward(exit_states), dtype=float)
    return Trajectory(grid, states, feats, indices, actions, exit_index, reward)


def rollout(env, grid, policy, rng):
    """One episode; the returned Trajectory has n_paths == 1."""
    return rollout_batch(env, grid, policy, 1, rng)


class MayerAugmented(Environment):
    """Adds a coordinate y with y += f(i, x, a) * dt; reward is y + g(x)."""

    def __init__(self, base, running_reward, dt):
        self.base = base
        self.running_reward = running_reward
        self.dt = float(dt)
        self.state_dim = base.state_dim + 1

    def reset(self, n, rng):
        x = np.atleast_2d(self.base.reset(n, rng))
        return np.column_stack([x, np.zeros(x.shape[0])])

    def step(self, i, x, a, rng):
        xb, y = x[:, :-1], x[:, -1]
        y_new = y + np.asarray(self.running_reward(i, xb, a), dtype=float) * self.dt
        return np.column_stack([self.base.step(i, xb, a, rng), y_new])

    def in_domain(self, x):
        return self.base.in_domain(x[:, :-1])

    def terminal_reward(self, x):
        return x[:, -1] + self.base.terminal_reward(x[:, :-1])

    def features(self, t, x):
        return np.column_stack([self.base.features(t, x[:, :-1]), x[:, -1]])

    @property
    def feature_dim(self):
        return self.base.feature_dim + 1


def mayer_augment(env, running_reward, dt):
    return MayerAugmented(env, running_reward, dt)


def write_trajectory_csv(path, env, traj, k=0):
    """Dump path k: step, t, state components, action, in_domain."""
    states, _, acts = traj.path(k)
    d = states.shape[1]
    inside = env.in_domain(states)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t"] + [f"x{j}" for j in range(d)] + ["action", "in_domain"])
        for i, s in enumerate(states):
            a = f"{float(np.ravel(acts[i])[0]):.10g}" if i < len(acts) else ""
            w.writerow([i, f"{traj.grid.t(i):.10g}"] + [f"{v:.10g}" for v in s] + [a, int(inside[i])])
