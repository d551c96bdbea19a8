"""HJB benchmark for the no-impact, no-cost repurchase problem.

Backward induction with operator splitting on a (s, v, q) grid:

* diffusion 1/2 sigma^2 s^2 d2P/ds2, implicit Euler along each s line,
* transport (s - v)/t d/dv + a d/dq by characteristics, with cubic
  interpolation in v, linear in q, and the exit surface B(v - s) for q >= B,
* bang-bang control a in {0, a_max}: each node keeps the larger of the two
  transported values, i.e. buys iff the one-sided q-difference over the
  trading step a_max * dt is >= 0.

With beta = 0 the payoff does not depend on the cash coordinate c, so
dP/dc = 0 and c drops out of the HJB; with gamma = 0 the control term
reduces to a_max (dP/dq)^+. Only that three-dimensional case is solved.
"""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_banded

log = logging.getLogger(__name__)

# Tolerance used when locating a state in a q cell: Q is a sum of a * dt
# increments and may land a few ulps below a node.
_CELL_EPS = 1e-9


@dataclass
class GridSpec:
    n_s: int = 101
    s_lo: float = 1.0 / 3.0   # multiples of S0
    s_hi: float = 3.0
    n_v: int = 81
    v_lo: float = 0.1
    v_hi: float = 2.0
    n_q: int = 51
    strang: bool = False

    def __post_init__(self):
        if min(self.n_s, self.n_v, self.n_q) < 3:
            raise ValueError("each axis needs at least 3 nodes")
        if not (0 < self.s_lo < 1 < self.s_hi) or not (0 < self.v_lo < self.v_hi):
            raise ValueError("grid bounds must bracket S0 and be positive")


@dataclass
class ValueGrid:
    s_nodes: np.ndarray
    v_nodes: np.ndarray
    q_nodes: np.ndarray
    values: np.ndarray   # (n_s, n_v, n_q)
    dt: float

    def interpolate(self, s, v, q):
        """Trilinear interpolation (log-linear in s)."""
        ls = np.log(self.s_nodes)
        fs = _frac_index(ls, np.log(s))
        fv = _frac_index(self.v_nodes, v)
        fq = _frac_index(self.q_nodes, q)
        out = 0.0
        for ds in (0, 1):
            ws = fs[1] if ds else 1 - fs[1]
            for dv in (0, 1):
                wv = fv[1] if dv else 1 - fv[1]
                for dq in (0, 1):
                    wq = fq[1] if dq else 1 - fq[1]
                    out = out + ws * wv * wq * self.values[fs[0] + ds, fv[0] + dv, fq[0] + dq]
        return out


def _frac_index(nodes, x):
    """Cell index and fractional weight, clamped to the grid (no extrapolation)."""
    x = np.clip(x, nodes[0], nodes[-1])
    j = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    w = (x - nodes[j]) / (nodes[j + 1] - nodes[j])
    return j, w


def make_nodes(cfg, spec):
    """Grid nodes. The q spacing divides the trading step a_max * dt, so
    inventories reached by bang-bang trading sit exactly on nodes; n_q sets
    the target spacing B / (n_q - 1). The last q node is the first one >= B.
    """
    s = cfg.s0 * np.exp(np.linspace(np.log(spec.s_lo), np.log(spec.s_hi), spec.n_s))
    v = cfg.s0 * np.linspace(spec.v_lo, spec.v_hi, spec.n_v)
    step = cfg.a_max * cfg.dt
    if step <= 0:
        return s, v, np.linspace(0.0, cfg.b, spec.n_q)
    h = step / max(1, round(step * (spec.n_q - 1) / cfg.b))
    n = int(np.ceil(cfg.b / h * (1 - 1e-12)))
    return s, v, h * np.arange(n + 1)


def diffusion_matrix(s_nodes, sigma, dt):
    """Banded form of I - dt * 1/2 sigma^2 s^2 d2/ds2 on a nonuniform s grid.

    The end rows impose d2P/ds2 = 0, which leaves boundary values unchanged.
    """
    n = len(s_nodes)
    ab = np.zeros((3, n))
    ab[1] = 1.0
    hm = s_nodes[1:-1] - s_nodes[:-2]
    hp = s_nodes[2:] - s_nodes[1:-1]
    k = 0.5 * sigma ** 2 * s_nodes[1:-1] ** 2 * dt
    lower = 2.0 * k / (hm * (hm + hp))
    upper = 2.0 * k / (hp * (hm + hp))
    ab[1, 1:-1] = 1.0 + lower + upper
    ab[0, 2:] = -upper       # super-diagonal entry (j, j+1)
    ab[2, :-2] = -lower      # sub-diagonal entry (j, j-1)
    return ab


def diffuse(values, s_nodes, sigma, dt, n_steps=1):
    """Implicit Euler steps of the s-diffusion; axis 0 of `values` is s."""
    if sigma == 0:
        return values.copy()
    ab = diffusion_matrix(s_nodes, sigma, dt)
    shape = values.shape
    out = values.reshape(shape[0], -1)
    for _ in range(n_steps):
        out = solve_banded((1, 1), ab, out)
    return out.reshape(shape)


def _cubic_weights(w):
    """Lagrange weights of nodes -1, 0, 1, 2 at offset w from node 0."""
    return np.stack([-w * (w - 1) * (w - 2) / 6.0,
                     (w + 1) * (w - 1) * (w - 2) / 2.0,
                     -(w + 1) * w * (w - 2) / 2.0,
                     (w + 1) * w * (w - 1) / 6.0])


def exit_surface(cfg, s_nodes, v):
    """B(v - s) broadcast over (s, v)."""
    return cfg.b * (v - s_nodes[:, None])


def transport_step(grid, t, control, cfg, dt=None):
    """Semi-Lagrangian transport of grid.values over one step ending at t.

    Node (s, v, q) receives the value at (s, v + (s - v) dt / t, q + a dt),
    where a = control[s, v, q]. Cubic Lagrange in v (the shifts are a small
    fraction of a cell, where linear interpolation smears the value), linear
    in q. Points with q >= B read B(v - s). Returns the
    new ValueGrid and the number of v-extrapolated reads.
    """
    if t <= 0:
        raise ValueError("transport needs t > 0")
    dt = grid.dt if dt is None else dt
    s, v, q = grid.s_nodes, grid.v_nodes, grid.q_nodes
    P = grid.values
    n_s, n_v, n_q = P.shape
    v_dst = v[None, :] + (s[:, None] - v[None, :]) * dt / t            # (n_s, n_v)
    hv = v[1] - v[0]
    pos = (v_dst - v[0]) / hv
    jv = np.clip(np.floor(pos).astype(np.int64), 1, n_v - 3)
    wv = _cubic_weights(pos - jv)                                          # (4, n_s, n_v)
    n_extrap = int(np.count_nonzero((v_dst < v[0]) | (v_dst > v[-1]))) * n_q

    q_dst = q[None, None, :] + np.broadcast_to(control, P.shape) * dt
    hq = q[1] - q[0]
    posq = q_dst / hq
    jq = np.clip(np.floor(posq + _CELL_EPS).astype(np.int64), 0, n_q - 2)
    wq = np.clip(posq - jq, 0.0, 1.0)

    ia = np.arange(n_s)[:, None]
    Pv = sum(wv[m][:, :, None] * P[ia, jv + m - 1] for m in range(4))    # v-interpolated, (n_s, n_v, n_q)
    lo = np.take_along_axis(Pv, jq, axis=2)
    hi = np.take_along_axis(Pv, jq + 1, axis=2)
    out = lo * (1 - wq) + hi * wq
    done = q_dst >= cfg.b * (1 - 1e-13)
    surface = np.broadcast_to((cfg.b * (v_dst - s[:, None]))[:, :, None], P.shape)
    out = np.where(done, surface, out)
    out[:, :, -1] = exit_surface(cfg, s, v)
    return ValueGrid(s, v, q, out, grid.dt), n_extrap


@dataclass
class HjbSolution:
    cfg: object
    spec: GridSpec
    value: float                # P(0, S0, S0, 0)
    grid0: ValueGrid            # time-0 slice
    buy: np.ndarray             # (N, n_s, n_v, n_q) bool; control used on step i -> i+1
    extrapolated_fraction: float

    @property
    def value_bp(self):
        return 1e4 * self.value


def bang_bang_transport(grid, t, cfg, dt=None):
    """Transport under the better of the two bang-bang controls at each node.

    Returns (new grid, buy indicator, extrapolated reads). The indicator is
    the sign of the one-sided q-difference of the transported slice over
    the trading step a_max * dt (ties buy).
    """
    zeros = np.zeros(grid.values.shape)
    idle, n0 = transport_step(grid, t, zeros, cfg, dt)
    if cfg.a_max == 0:
        return idle, zeros.astype(bool), n0
    busy, n1 = transport_step(grid, t, zeros + cfg.a_max, cfg, dt)
    buy = busy.values >= idle.values
    buy[:, :, -1] = True
    idle.values = np.where(buy, busy.values, idle.values)
    return idle, buy, n0


def solve_hjb(cfg, spec=None):
    """Backward solve from T to 0; see the module docstring for the scheme."""
    spec = spec or GridSpec()
    if cfg.gamma != 0 or cfg.beta != 0:
        raise ValueError("the PDE benchmark covers gamma = beta = 0 only")
    s, v, q = make_nodes(cfg, spec)
    N, dt = cfg.n_steps, cfg.dt
    P = cfg.b * (v[None, :, None] - s[:, None, None]) - cfg.lam * np.maximum(cfg.b - q[None, None, :], 0.0)
    P = np.broadcast_to(P, (len(s), len(v), len(q))).copy()
    ab = diffusion_matrix(s, cfg.sigma, dt) if cfg.sigma > 0 else None
    buy = np.zeros((N, len(s), len(v), len(q)), dtype=bool)
    n_extrap = 0
    for i in range(N - 1, -1, -1):
        t = (i + 1) * dt
        grid = ValueGrid(s, v, q, P, dt)
        if spec.strang:
            grid, _, n1 = bang_bang_transport(grid, t, cfg, dt / 2)
            grid.values = _diffuse_with(ab, grid.values)
            grid, buy[i], n2 = bang_bang_transport(grid, t - dt / 2, cfg, dt / 2)
            n_extrap += n1 + n2
        else:
            grid.values = _diffuse_with(ab, grid.values)
            grid, buy[i], n1 = bang_bang_transport(grid, t, cfg)
            n_extrap += n1
        P = grid.values
    frac = n_extrap / (N * P.size * (2 if spec.strang else 1))
    if frac > 0.01:
        log.warning("v-transport extrapolated on %.2f%% of node updates", 100 * frac)
    grid0 = ValueGrid(s, v, q, P, dt)
    value = float(grid0.interpolate(cfg.s0, cfg.s0, 0.0))
    return HjbSolution(cfg, spec, value, grid0, buy, frac)


def _diffuse_with(ab, values):
    if ab is None:
        return values
    shape = values.shape
    return solve_banded((1, 1), ab, values.reshape(shape[0], -1)).reshape(shape)


def extract_policy(sol, i, x):
    """Bang-bang action(s) for states x (rows S, V, Q, ...) at step i.

    Looks up the control the solver used on step i at the nearest (s, v)
    node and the q cell holding Q. Out-of-grid queries are clamped.
    Returns (actions, number of clamped queries).
    """
    x = np.atleast_2d(x)
    g = sol.grid0
    ls = np.log(g.s_nodes)
    hs = ls[1] - ls[0]
    hv = g.v_nodes[1] - g.v_nodes[0]
    hq = g.q_nodes[1] - g.q_nodes[0]
    rs = np.rint((np.log(x[:, 0]) - ls[0]) / hs).astype(np.int64)
    rv = np.rint((x[:, 1] - g.v_nodes[0]) / hv).astype(np.int64)
    rq = np.floor(x[:, 2] / hq + _CELL_EPS).astype(np.int64)
    clamped = ((rs < 0) | (rs >= len(ls)) | (rv < 0) | (rv >= len(g.v_nodes))
               | (rq < 0) | (rq >= len(g.q_nodes)))
    rs = np.clip(rs, 0, len(ls) - 1)
    rv = np.clip(rv, 0, len(g.v_nodes) - 1)
    rq = np.clip(rq, 0, len(g.q_nodes) - 1)
    buy = sol.buy[i, rs, rv, rq]
    return np.where(buy, sol.cfg.a_max, 0.0), int(clamped.sum())


class PdePolicy:
    """Feedback control backed by an HJB solution, for use in rollouts."""

    def __init__(self, sol):
        self.sol = sol
        self.actions = np.array([0.0, sol.cfg.a_max])
        self.clamped = 0

    def act(self, i, x, rng):
        a, n_clamped = extract_policy(self.sol, i, x)
        if n_clamped:
            self.clamped += n_clamped
            log.debug("clamped %d policy queries at step %d", n_clamped, i)
        return (a > 0).astype(np.int64), a


def save_solution(path, sol):
    """Compressed .npz dump: nodes, time-0 values, bit-packed buy indicators."""
    g = sol.grid0
    np.savez_compressed(
        path, s_nodes=g.s_nodes, v_nodes=g.v_nodes, q_nodes=g.q_nodes, values=g.values,
        buy=np.packbits(sol.buy.ravel()), buy_shape=np.array(sol.buy.shape),
        value=sol.value, extrapolated_fraction=sol.extrapolated_fraction,
        cfg=np.array(json.dumps(asdict(sol.cfg))), spec=np.array(json.dumps(asdict(sol.spec))))


def load_solution(path):
    from .srp import SrpConfig

    with np.load(path) as z:
        shape = tuple(int(n) for n in z["buy_shape"])
        buy = np.unpackbits(z["buy"])[:int(np.prod(shape))].reshape(shape).astype(bool)
        cfg = SrpConfig(**json.loads(str(z["cfg"])))
        spec = GridSpec(**json.loads(str(z["spec"])))
        grid0 = ValueGrid(z["s_nodes"], z["v_nodes"], z["q_nodes"], z["values"], cfg.dt)
        return HjbSolution(cfg, spec, float(z["value"]), grid0, buy, float(z["extrapolated_fraction"]))
