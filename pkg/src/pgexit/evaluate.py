"""Monte Carlo pricing of policies and the data behind the report figures."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mdp import rollout_batch
from .rng import RngStream

BLOCK_PATHS = 8192


@dataclass(frozen=True)
class PriceEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int

    @property
    def mean_bp(self):
        return 1e4 * self.mean

    @property
    def std_error_bp(self):
        return 1e4 * self.std_error


def _merge(a, b):
    """Chan et al. pairwise merge of (count, mean, M2) moments."""
    n = a[0] + b[0]
    if n == 0:
        return a
    d = b[1] - a[1]
    mean = a[1] + d * b[0] / n
    m2 = a[2] + b[2] + d * d * a[0] * b[0] / n
    return n, mean, m2


def _block_moments(env, grid, policy, n, rng):
    g = rollout_batch(env, grid, policy, n, rng).reward
    mean = g.mean()
    return n, mean, float(((g - mean) ** 2).sum())


def mc_price(env, grid, policy, n_paths, seed, threads=1):
    """Mean and standard error of g(X_tau) over n_paths episodes.

    Paths are simulated in fixed blocks of BLOCK_PATHS; block b draws from
    RngStream(seed).spawn(b), so the estimate does not depend on `threads`.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    master = RngStream(seed)
    sizes = [min(BLOCK_PATHS, n_paths - s) for s in range(0, n_paths, BLOCK_PATHS)]

    def run(b):
        return _block_moments(env, grid, policy, sizes[b], master.spawn(b))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    acc = (0, 0.0, 0.0)
    for p in parts:
        acc = _merge(acc, p)
    n, mean, m2 = acc
    se = float(np.sqrt(m2 / (n - 1) / n)) if n > 1 else 0.0
    return PriceEstimate(float(mean), se, int(n), int(seed))


def policy_surface(policy, env, t, s_fixed, v_range, q_range, resolution):
    """Rows (V, Q, prob of the largest action) on a resolution x resolution grid.

    Rows are sorted by V, then Q. The cumulated cost C is set to 0. For a
    feedback control (anything with `act`) the "probability" is the 0/1
    indicator of the largest action at the step containing t.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    vs = np.linspace(v_range[0], v_range[1], resolution)
    qs = np.linspace(q_range[0], q_range[1], resolution)
    vv, qq = np.meshgrid(vs, qs, indexing="ij")
    x = np.column_stack([np.full(vv.size, s_fixed), vv.ravel(), qq.ravel(), np.zeros(vv.size)])
    if hasattr(policy, "act"):
        i = min(int(np.floor(t / env.cfg.dt + 1e-9)), env.cfg.n_steps - 1)
        _, a = policy.act(i, x, None)
        p = (np.asarray(a) >= env.cfg.a_max).astype(float)
    else:
        p = policy.probs(env.features(t, x))[:, int(np.argmax(policy.actions))]
    return [(float(v), float(q), float(pr)) for v, q, pr in zip(vv.ravel(), qq.ravel(), p)]


def sample_paths(env, grid, policy, n, seed):
    """Rows (path_id, t, S, V, Q) for n episodes, each up to its exit."""
    if n < 1:
        raise ValueError("n must be >= 1")
    traj = rollout_batch(env, grid, policy, n, RngStream(seed))
    rows = []
    for k in range(n):
        states = traj.path(k)[0]
        for i, x in enumerate(states):
            rows.append((k, grid.t(i), float(x[0]), float(x[1]), float(x[2])))
    return rows


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


SURFACE_HEADER = ["V", "Q", "prob_a_max"]
PATHS_HEADER = ["path_id", "t", "S", "V", "Q"]
PRICE_HEADER = ["label", "price", "std_error", "price_bp", "std_error_bp", "n_paths", "seed"]


def price_row(label, est):
    return [label, f"{est.mean:.10g}", f"{est.std_error:.10g}", f"{est.mean_bp:.10g}",
            f"{est.std_error_bp:.10g}", str(est.n_paths), str(est.seed)]


def write_prices(path, labelled):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for label, est in labelled:
            w.writerow(price_row(label, est))
