"""Policy-gradient estimators and training loops for exit-time problems.

Gradients returned here are ascent directions. Training applies them with
Adam on the negated gradient, or with plain SGD ascent (optimizer="sgd").
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluate import mc_price
from .mdp import rollout_batch
from .nn import AdamState, NonFiniteGradientError, adam_step, init_mlp, mlp_backward, mlp_forward, per_sample_grads
from .rng import RngStream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    episodes: int = 10_000
    batch_size: int = 64
    lr: float = 1e-3
    lr_actor: float = 1e-3
    lr_critic: float = 1e-2
    seed: int = 0
    eval_every: int = 0          # episodes between logged MC prices; 0 = never
    eval_paths: int = 10_000
    use_baseline: bool = True
    optimizer: str = "adam"
    lr_final_frac: float = 1.0   # rates decay geometrically to this fraction by the last episode

    def __post_init__(self):
        if self.episodes < 0 or self.batch_size < 1:
            raise ValueError("episodes must be >= 0 and batch_size >= 1")
        if min(self.lr, self.lr_actor, self.lr_critic) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.lr_final_frac <= 1:
            raise ValueError("lr_final_frac must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Critic:
    """Value-function approximation V_phi(t, x) = scale * net(t, x).

    `scale` is the typical size of a value (for SRP, about 1% of B S0); it
    keeps the network output O(1) so that Adam's roughly lr-sized steps are
    fine on the scale of the rewards.
    """

    def __init__(self, net, adam=None, scale=1.0):
        if net.n_outputs != 1:
            raise ValueError("critic network must have a scalar output")
        if not scale > 0:
            raise ValueError("critic scale must be positive")
        self.net = net
        self.scale = float(scale)
        self.adam = adam if adam is not None else AdamState.fresh(net.n_params)

    @classmethod
    def create(cls, input_dim, hidden, rng, output_scale=0.0, scale=1.0):
        return cls(init_mlp([input_dim, *hidden, 1], rng, output_scale), scale=scale)

    @property
    def n_params(self):
        return self.net.n_params

    def flat(self):
        return self.net.flat()

    def set_flat(self, vec):
        self.net = self.net.with_flat(vec)

    def copy(self):
        adam = AdamState(self.adam.first_moment.copy(), self.adam.second_moment.copy(), self.adam.step_count)
        return Critic(self.net.copy(), adam, self.scale)

    def export_net(self):
        """The network with the scale folded into its output layer."""
        net = self.net.copy()
        net.weights[-1] = net.weights[-1] * self.scale
        net.biases[-1] = net.biases[-1] * self.scale
        return net

    def values(self, feats):
        return self.scale * mlp_forward(self.net, np.atleast_2d(feats))[:, 0]

    def grad(self, feats, coef, per_sample=False):
        feats = np.atleast_2d(feats)
        coef = self.scale * np.asarray(coef, dtype=float).reshape(-1, 1)
        if per_sample:
            return per_sample_grads(self.net, feats, coef)
        return mlp_backward(self.net, feats, coef).flat()


def _accumulate(traj, n_params, row_coef, grad_fn, per_path):
    """Sum grad_fn(features, coef) over active steps, per path or in total."""
    active = traj.active
    if per_path:
        out = np.zeros((traj.n_paths, n_params))
        for i in range(traj.grid.N):
            k = np.nonzero(active[i])[0]
            if k.size:
                out[k] += grad_fn(traj.features[i, k], row_coef(i, k), True)
        return out
    rows_i, rows_k = np.nonzero(active)
    if rows_i.size == 0:
        return np.zeros(n_params)
    return grad_fn(traj.features[rows_i, rows_k], row_coef(rows_i, rows_k), False)


def _choices(traj, policy, i, k):
    """What score_upstream needs: action indices, or actions if continuous."""
    return traj.indices[i, k] if getattr(policy, "discrete", True) else traj.actions[i, k]


def sgp_gradient(traj, policy, per_path=False):
    """G * sum_{t_i < tau} grad log rho(t_i, x_i, a_i), summed over paths.

    With per_path=True returns one row per path instead of the sum.
    """
    def coef(i, k):
        c = policy.score_upstream(traj.features[i, k], _choices(traj, policy, i, k))
        return c * traj.reward[k][:, None]

    def grad_fn(f, c, ps):
        return policy.grad_from_upstream(f, c, per_sample=ps)

    return _accumulate(traj, policy.n_params, coef, grad_fn, per_path)


def _critic_targets(traj, critic):
    """(V_hat_i, V_hat_{i+1}) on the (N, n) grid; zero on inactive steps.

    At the exit step the next-state value is the terminal reward g.
    """
    N, n = traj.indices.shape
    active = traj.active
    v_now = np.zeros((N, n))
    rows_i, rows_k = np.nonzero(active)
    if rows_i.size:
        v_now[rows_i, rows_k] = critic.values(traj.features[rows_i, rows_k])
    v_next = np.zeros((N, n))
    v_next[:-1] = v_now[1:]
    last = traj.exit_index - 1
    v_next[last, np.arange(n)] = traj.reward
    v_next[~active] = 0.0
    return v_now, v_next


def ac_gradients(traj, policy, critic, use_baseline=True, per_path=False):
    """Actor direction Gamma_theta and critic direction Delta_phi.

    TD term d_i = V_hat_{i+1} - V_phi(t_i, x_i). The actor weight is d_i with
    the baseline, V_hat_{i+1} without. The critic step is the semi-gradient
    sum d_i grad V_phi(t_i, x_i) (target held fixed).
    """
    v_now, v_next = _critic_targets(traj, critic)
    td = v_next - v_now
    weight = td if use_baseline else v_next

    def actor_coef(i, k):
        c = policy.score_upstream(traj.features[i, k], _choices(traj, policy, i, k))
        return c * weight[i, k][:, None]

    def actor_fn(f, c, ps):
        return policy.grad_from_upstream(f, c, per_sample=ps)

    def critic_fn(f, c, ps):
        return critic.grad(f, c, per_sample=ps)

    gamma = _accumulate(traj, policy.n_params, actor_coef, actor_fn, per_path)
    delta = _accumulate(traj, critic.n_params, lambda i, k: td[i, k], critic_fn, per_path)
    return gamma, delta


# --- training ---------------------------------------------------------------


@dataclass
class ConvergenceLog:
    rows: list = field(default_factory=list)
    skipped_batches: int = 0

    def record(self, episode, estimate, wall):
        self.rows.append((episode, estimate.mean, estimate.std_error, wall))
        log.info("episode %d: price %.6g (se %.2g)", episode, estimate.mean, estimate.std_error)

    @property
    def episodes(self):
        return np.array([r[0] for r in self.rows])

    @property
    def prices(self):
        return np.array([r[1] for r in self.rows])

    @property
    def std_errors(self):
        return np.array([r[2] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "mc_price_estimate", "mc_std_error", "wall_seconds"])
            for ep, m, se, wall in self.rows:
                w.writerow([ep, f"{m:.10g}", f"{se:.10g}", f"{wall:.3f}"])


class _Ascender:
    """Applies ascent directions to a parameter vector with Adam or SGD.

    `progress` in [0, 1] is the fraction of training episodes done; the rate
    is lr * final_frac ** progress.
    """

    def __init__(self, n_params, lr, kind, state=None, final_frac=1.0):
        self.lr = lr
        self.kind = kind
        self.final_frac = final_frac
        self.state = state if state is not None else AdamState.fresh(n_params)

    def apply(self, theta, direction, progress=0.0):
        if not np.all(np.isfinite(direction)):
            raise NonFiniteGradientError("non-finite gradient entries")
        lr = self.lr * self.final_frac ** progress
        if self.kind == "sgd":
            return theta + lr * direction
        theta, self.state = adam_step(theta, -direction, self.state, lr)
        return theta


class _Evaluator:
    def __init__(self, env, grid, cfg, log_):
        self.env, self.grid, self.cfg, self.log = env, grid, cfg, log_
        self.seed = RngStream(cfg.seed).spawn(1).integers()
        self.next_at = cfg.eval_every if cfg.eval_every > 0 else None
        self.t0 = time.perf_counter()

    def maybe(self, episodes_done, policy, force=False):
        if self.next_at is None:
            return
        if episodes_done >= self.next_at or force:
            est = mc_price(self.env, self.grid, policy, self.cfg.eval_paths, int(self.seed))
            self.log.record(episodes_done, est, time.perf_counter() - self.t0)
            while self.next_at <= episodes_done:
                self.next_at += self.cfg.eval_every


def _batches(cfg):
    done = 0
    while done < cfg.episodes:
        k = min(cfg.batch_size, cfg.episodes - done)
        yield k
        done += k


def train_sgp(env, grid, policy, cfg):
    """Stochastic gradient policy: one update per batch of K fresh episodes."""
    policy = policy.copy()
    rng = RngStream(cfg.seed)
    opt = _Ascender(policy.n_params, cfg.lr, cfg.optimizer, final_frac=cfg.lr_final_frac)
    clog = ConvergenceLog()
    ev = _Evaluator(env, grid, cfg, clog)
    done = 0
    for k in _batches(cfg):
        traj = rollout_batch(env, grid, policy, k, rng)
        g = sgp_gradient(traj, policy) / k
        try:
            policy.set_flat(opt.apply(policy.flat(), g, done / cfg.episodes))
        except NonFiniteGradientError:
            clog.skipped_batches += 1
            log.warning("skipping batch ending at episode %d: non-finite gradient", done + k)
        done += k
        ev.maybe(done, policy)
    return policy, clog


def train_ac_offline(env, grid, policy, critic, cfg):
    """Offline actor-critic: both updates after each batch of full episodes."""
    policy, critic = policy.copy(), critic.copy()
    rng = RngStream(cfg.seed)
    actor_opt = _Ascender(policy.n_params, cfg.lr_actor, cfg.optimizer, final_frac=cfg.lr_final_frac)
    critic_opt = _Ascender(critic.n_params, cfg.lr_critic, cfg.optimizer, critic.adam, cfg.lr_final_frac)
    clog = ConvergenceLog()
    ev = _Evaluator(env, grid, cfg, clog)
    done = 0
    for k in _batches(cfg):
        traj = rollout_batch(env, grid, policy, k, rng)
        gamma, delta = ac_gradients(traj, policy, critic, cfg.use_baseline)
        try:
            new_theta = actor_opt.apply(policy.flat(), gamma / k, done / cfg.episodes)
            new_phi = critic_opt.apply(critic.flat(), delta / k, done / cfg.episodes)
        except NonFiniteGradientError:
            clog.skipped_batches += 1
            log.warning("skipping batch ending at episode %d: non-finite gradient", done + k)
        else:
            policy.set_flat(new_theta)
            critic.set_flat(new_phi)
        done += k
        ev.maybe(done, policy)
    critic.adam = critic_opt.state
    return policy, critic, clog


def train_ac_online(env, grid, policy, critic, cfg):
    """Online actor-critic: updates after every transition of every episode."""
    policy, critic = policy.copy(), critic.copy()
    rng = RngStream(cfg.seed)
    actor_opt = _Ascender(policy.n_params, cfg.lr_actor, cfg.optimizer, final_frac=cfg.lr_final_frac)
    critic_opt = _Ascender(critic.n_params, cfg.lr_critic, cfg.optimizer, critic.adam, cfg.lr_final_frac)
    clog = ConvergenceLog()
    ev = _Evaluator(env, grid, cfg, clog)
    for e in range(cfg.episodes):
        x = np.asarray(env.reset(1, rng), dtype=float).reshape(1, env.state_dim)
        for i in range(grid.N):
            f = env.features(grid.t(i), x)
            idx, a = policy.sample(f, rng)
            x_next = np.asarray(env.step(i, x, a, rng), dtype=float)
            if not np.all(np.isfinite(x_next)):
                raise FloatingPointError(f"non-finite state at step {i + 1} of episode {e}")
            done = (not env.in_domain(x_next)[0]) or i + 1 == grid.N
            if done:
                target = float(env.terminal_reward(x_next)[0])
            else:
                target = float(critic.values(env.features(grid.t(i + 1), x_next))[0])
            td = target - float(critic.values(f)[0])
            choice = idx if getattr(policy, "discrete", True) else a
            gamma = policy.grad_from_upstream(f, policy.score_upstream(f, choice) * td)
            delta = critic.grad(f, [td])
            try:
                new_theta = actor_opt.apply(policy.flat(), gamma, e / cfg.episodes)
                new_phi = critic_opt.apply(critic.flat(), delta, e / cfg.episodes)
            except NonFiniteGradientError:
                clog.skipped_batches += 1
                log.warning("skipping update at episode %d step %d: non-finite gradient", e, i)
            else:
                policy.set_flat(new_theta)
                critic.set_flat(new_phi)
            x = x_next
            if done:
                break
        ev.maybe(e + 1, policy)
    critic.adam = critic_opt.state
    return policy, critic, clog
