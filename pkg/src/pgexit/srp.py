"""Share-repurchase (barrier VWAP-minus) environment.

State columns are (S, V, Q, C): spot, running VWAP, inventory, cumulated
cash cost. Time is in years with 252 trading days per year; the trading
rate is in shares per year.
"""

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import Environment, TimeGrid

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 252.0
S, V, Q, C = range(4)

# Q = k * a * dt accumulates rounding error (ten steps of 0.1 give
# 0.9999999999999999), so the barrier test absorbs a few ulps.
_BARRIER_RTOL = 1e-13


@dataclass
class SrpConfig:
    s0: float = 1.0
    b: float = 1.0
    t_days: float = 60.0
    n_steps: int = 60
    sigma: float = 0.2
    gamma: float = 0.0
    beta: float = 0.0
    lam: float = 5.0
    a_max: float = 25.2
    s_floor: float = 1e-8
    allow_unreachable: bool = False

    def __post_init__(self):
        vals = [self.s0, self.b, self.t_days, self.sigma, self.gamma, self.beta, self.lam, self.a_max]
        if not all(np.isfinite(vals)):
            raise ValueError("SRP parameters must be finite")
        if self.s0 <= 0 or self.b <= 0 or self.t_days <= 0 or self.n_steps < 1:
            raise ValueError("need s0, b, t_days > 0 and n_steps >= 1")
        if self.sigma < 0 or self.gamma < 0 or self.beta < 0 or self.a_max < 0:
            raise ValueError("sigma, gamma, beta and a_max must be nonnegative")
        if self.lam <= 0:
            raise ValueError("penalty lambda must be positive")
        if self.a_max * self.T < self.b:
            msg = f"a_max * T = {self.a_max * self.T:.4g} < B = {self.b}: target unreachable"
            if not self.allow_unreachable:
                raise ValueError(msg + " (set allow_unreachable to override)")
            warnings.warn(msg, stacklevel=2)

    @property
    def T(self):
        return self.t_days / DAYS_PER_YEAR

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def actions(self):
        return np.array([0.0, self.a_max])

    def grid(self):
        return TimeGrid(self.n_steps, self.T)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SrpConfig(**d)


def srp_step(cfg, i, x, a, rng):
    """Euler step of (S, V, Q, C) from t_i to t_{i+1}; x has shape (n, 4)."""
    x = np.atleast_2d(x)
    n = x.shape[0]
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != n:
        a = np.broadcast_to(a, (n,))
    dt = cfg.dt
    z = rng.normal(n)
    s = x[:, S]
    out = np.empty((n, 4))
    s_new = out[:, S]
    np.multiply(s, 1.0 + cfg.gamma * dt * a + cfg.sigma * np.sqrt(dt) * z, out=s_new)
    low = s_new <= 0.0
    if low.any():
        log.warning("clamped %d nonpositive prices to %g at step %d", int(low.sum()), cfg.s_floor, i + 1)
        s_new[low] = cfg.s_floor
    v = x[:, V]
    out[:, V] = v + (s - v) / (i + 1)
    out[:, Q] = x[:, Q] + a * dt
    out[:, C] = x[:, C] + a * s * dt
    return out


def srp_terminal_reward(cfg, x, tau=None):
    """PnL B(V - S) - lambda (B - Q)_+ - beta B C; `tau` is informational."""
    x = np.atleast_2d(x)
    return (cfg.b * (x[:, V] - x[:, S]) - cfg.lam * np.maximum(cfg.b - x[:, Q], 0.0)
            - cfg.beta * cfg.b * x[:, C])


def srp_in_domain(cfg, x):
    x = np.atleast_2d(x)
    return x[:, Q] < cfg.b * (1.0 - _BARRIER_RTOL)


class SrpEnv(Environment):
    """Barrier VWAP-minus pricing environment.

    Network features are (t/T, (S/S0 - 1)/w, (V/S - 1)/w, Q/B) with
    w = FEATURE_WIDTH, plus C/(B S0) when transaction costs are on. The VWAP
    enters relative to spot since the exercise decision hinges on V - S.
    """

    state_dim = 4
    FEATURE_WIDTH = 0.1

    def __init__(self, cfg):
        self.cfg = cfg

    @property
    def feature_dim(self):
        return 5 if self.cfg.beta > 0 else 4

    def initial_state(self):
        return np.array([self.cfg.s0, self.cfg.s0, 0.0, 0.0])

    def reset(self, n, rng):
        return np.tile(self.initial_state(), (n, 1))

    def step(self, i, x, a, rng):
        return srp_step(self.cfg, i, x, a, rng)

    def in_domain(self, x):
        return srp_in_domain(self.cfg, x)

    def terminal_reward(self, x):
        return srp_terminal_reward(self.cfg, x)

    def features(self, t, x):
        x = np.atleast_2d(x)
        cfg = self.cfg
        w = self.FEATURE_WIDTH
        f = np.empty((x.shape[0], self.feature_dim))
        f[:, 0] = t / cfg.T
        f[:, 1] = (x[:, S] / cfg.s0 - 1.0) / w
        f[:, 2] = (x[:, V] / x[:, S] - 1.0) / w
        f[:, 3] = x[:, Q] / cfg.b
        if cfg.beta > 0:
            f[:, 4] = x[:, C] / (cfg.b * cfg.s0)
        return f


class ConstantRate:
    """Deterministic feedback control trading at a fixed rate."""

    def __init__(self, rate):
        self.rate = float(rate)

    def act(self, i, x, rng):
        n = np.atleast_2d(x).shape[0]
        return np.zeros(n, dtype=np.int64), np.full(n, self.rate)
