import itertools

import numpy as np
import pytest

from pgexit.mdp import Environment, TimeGrid
from pgexit.rng import RngStream


class ToyExitMdp(Environment):
    """States {0, 1, 2}, domain O = {0, 1}, two steps, start at 0.

    From 0: action 0 -> 1, action 1 -> 2 (exit).
    From 1: action 0 -> 0, action 1 -> 2 (exit).
    """

    state_dim = 1
    G = {0: 0.3, 1: -0.4, 2: 1.0}
    NEXT = {(0, 0): 1, (0, 1): 2, (1, 0): 0, (1, 1): 2}

    def reset(self, n, rng):
        return np.zeros((n, 1))

    def step(self, i, x, a, rng):
        s = x[:, 0].astype(int)
        a = np.asarray(a).astype(int)
        nxt = np.where(a == 1, 2, np.where(s == 0, 1, 0))
        return nxt[:, None].astype(float)

    def in_domain(self, x):
        return np.atleast_2d(x)[:, 0] < 2

    def terminal_reward(self, x):
        s = np.atleast_2d(x)[:, 0].astype(int)
        return np.array([self.G[k] for k in s], dtype=float)


TOY_GRID = TimeGrid(2, 1.0)


def toy_paths(env, policy):
    """Exhaustive enumeration: list of (prob, states, action indices, G)."""
    out = []
    for acts in itertools.product([0, 1], repeat=TOY_GRID.N):
        x = 0
        prob = 1.0
        states = [x]
        used = []
        for i, a in enumerate(acts):
            p = policy.probs(env.features(TOY_GRID.t(i), np.array([[x]], dtype=float)))[0]
            prob *= p[a]
            used.append(a)
            x = ToyExitMdp.NEXT[(x, a)]
            states.append(x)
            if x == 2:
                break
        if len(used) < len(acts) and acts[len(used):] != (0,) * (len(acts) - len(used)):
            continue   # count each truncated path once
        out.append((prob, states, used, ToyExitMdp.G[x]))
    return out


def toy_value(env, policy):
    return sum(p * g for p, _, _, g in toy_paths(env, policy))


def toy_exact_gradient(env, policy, h=1e-6):
    """Central differences of the enumerated J(theta); uses only forward passes."""
    theta = policy.flat()
    grad = np.zeros_like(theta)
    probe = policy.copy()
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        probe.set_flat(theta + e)
        up = toy_value(env, probe)
        probe.set_flat(theta - e)
        down = toy_value(env, probe)
        grad[j] = (up - down) / (2 * h)
    return grad


class ExactToyCritic:
    """Tabular critic holding the exact value function of the toy MDP."""

    n_params = 1

    def __init__(self, env, policy):
        p1 = policy.probs(env.features(TOY_GRID.t(1), np.array([[1.0]])))[0]
        self.v1 = p1[0] * ToyExitMdp.G[0] + p1[1] * ToyExitMdp.G[2]
        self.v0 = toy_value(env, policy)

    def values(self, feats):
        feats = np.atleast_2d(feats)
        return np.where(feats[:, 0] < 0.25, self.v0, self.v1)

    def grad(self, feats, coef, per_sample=False):
        n = np.atleast_2d(feats).shape[0]
        return np.zeros((n, 1)) if per_sample else np.zeros(1)


@pytest.fixture
def toy_env():
    return ToyExitMdp()


@pytest.fixture
def toy_policy(toy_env):
    from pgexit.policy import SoftmaxPolicy
    pol = SoftmaxPolicy.create(toy_env.feature_dim, [4], [0.0, 1.0], RngStream(11), output_scale=1.0)
    # nonzero biases so that every parameter carries gradient
    pol.set_flat(pol.flat() + 0.5 * RngStream(12).normal(pol.n_params))
    return pol


# --- acceptance summary --------------------------------------------------------

def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report(request):
    """report(n, ok, detail): record one acceptance line and print it."""
    def _report(n, ok, detail):
        request.config.acceptance_results[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _report
