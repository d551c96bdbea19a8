"""Command-line front end.

    pgexit <subcommand> [--config FILE] [--out DIR] [--seed N]
                        [--set section.key=value ...] [--no-plots]

Every run writes config.ini (the resolved configuration) plus CSVs into the
output directory, and PNG figures next to them unless --no-plots is given.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .algos import Critic, train_ac_offline, train_ac_online, train_sgp
from .config import ConfigError, load_config
from .evaluate import (PATHS_HEADER, SURFACE_HEADER, mc_price, policy_surface, sample_paths,
                       write_prices, write_rows)
from .mdp import EpisodeError
from .nn import NonFiniteGradientError
from .pde import PdePolicy, load_solution, save_solution, solve_hjb
from .policy import SoftmaxPolicy, load_checkpoint, save_checkpoint
from .rng import RngStream
from .srp import ConstantRate, SrpEnv

log = logging.getLogger("pgexit")

OUT_ENV = "PGEXIT_OUT"
SUBCOMMANDS = ("train-sgp", "train-ac-offline", "train-ac-online", "pde-solve",
               "evaluate", "surface", "paths", "xval")

# child streams of the master seed
_POLICY_INIT, _CRITIC_INIT, _EVAL = 2, 3, 4


class Run:
    def __init__(self, args, rc):
        self.args = args
        self.rc = rc
        self.out = args.out or os.environ.get(OUT_ENV) or "pgexit-out"
        self.plots = not args.no_plots
        self.seed = rc["run"]["seed"]
        self.threads = rc["run"]["threads"]
        self._cfg = None

    @property
    def cfg(self):
        if self._cfg is None:
            self._cfg = self.rc.srp()
        return self._cfg

    def path(self, name):
        return os.path.join(self.out, name)

    def eval_seed(self):
        return int(RngStream(self.seed).spawn(_EVAL).integers())


def _policy_for(run, env):
    """Policy named by eval.checkpoint: a policy checkpoint, a pde-solve
    .npz dump, or the word 'constant' (trade B/T throughout)."""
    ck = run.rc["eval"]["checkpoint"]
    if not ck:
        raise ConfigError("eval.checkpoint is required for this subcommand")
    if ck == "constant":
        return ConstantRate(run.cfg.b / run.cfg.T)
    if not os.path.exists(ck):
        raise ConfigError(f"eval.checkpoint not found: {ck}")
    if ck.endswith(".npz"):
        return PdePolicy(load_solution(ck))
    try:
        pol = load_checkpoint(ck)
    except (ValueError, StopIteration, IndexError) as exc:
        raise ConfigError(f"eval.checkpoint {ck}: unreadable ({exc})") from exc
    if not isinstance(pol, SoftmaxPolicy):
        raise ConfigError(f"eval.checkpoint {ck} holds a critic, not a policy")
    if pol.input_dim != env.feature_dim:
        raise ConfigError(f"checkpoint expects {pol.input_dim} features, env provides {env.feature_dim}")
    return pol


def _train(run, algo):
    cfg = run.cfg
    env = SrpEnv(cfg)
    hidden = run.rc["train"]["hidden"]
    master = RngStream(run.seed)
    policy = SoftmaxPolicy.create(env.feature_dim, hidden, cfg.actions, master.spawn(_POLICY_INIT))
    if algo == "sgp":
        tc = run.rc.train(default_batch=64)
        policy, clog = train_sgp(env, cfg.grid(), policy, tc)
        critic = None
    else:
        tc = run.rc.train(default_batch=32)
        scale = run.rc["train"]["critic_scale"] * cfg.b * cfg.s0
        if not scale > 0:
            raise ConfigError("train.critic_scale must be positive")
        critic = Critic.create(env.feature_dim, hidden, master.spawn(_CRITIC_INIT), scale=scale)
        fn = train_ac_offline if algo == "ac-offline" else train_ac_online
        policy, critic, clog = fn(env, cfg.grid(), policy, critic, tc)
    clog.write_csv(run.path("convergence.csv"))
    save_checkpoint(run.path("policy.ckpt"), policy)
    if critic is not None:
        save_checkpoint(run.path("critic.ckpt"), critic.export_net())
    est = mc_price(env, cfg.grid(), policy, run.rc["eval"]["n_paths"], run.eval_seed(), run.threads)
    write_prices(run.path("price.csv"), [(algo, est)])
    print(f"{algo}: price {est.mean_bp:.2f} bp (se {est.std_error_bp:.2f}), "
          f"skipped batches {clog.skipped_batches}")
    if run.plots and clog.rows:
        from .plotting import plot_convergence
        plot_convergence(clog, run.path("convergence.png"), label=algo)


def _solve(run):
    try:
        return solve_hjb(run.cfg, run.rc.grid_spec())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _pde_solve(run):
    sol = _solve(run)
    save_solution(run.path("pde_solution.npz"), sol)
    write_rows(run.path("pde_value.csv"), ["value", "value_bp", "extrapolated_fraction"],
               [(sol.value, sol.value_bp, sol.extrapolated_fraction)])
    print(f"pde: value {sol.value_bp:.2f} bp")
    if run.plots:
        from .plotting import plot_value_slice
        plot_value_slice(sol, run.path("pde_value.png"))


def _evaluate(run):
    env = SrpEnv(run.cfg)
    pol = _policy_for(run, env)
    est = mc_price(env, run.cfg.grid(), pol, run.rc["eval"]["n_paths"], run.eval_seed(), run.threads)
    write_prices(run.path("price.csv"), [(run.rc["eval"]["checkpoint"], est)])
    print(f"price {est.mean_bp:.2f} bp (se {est.std_error_bp:.2f})")


def _surface(run):
    env = SrpEnv(run.cfg)
    pol = _policy_for(run, env)
    e = run.rc["eval"]
    t = e["t_frac"] * run.cfg.T
    rows = policy_surface(pol, env, t, e["s_fixed"], (e["v_lo"], e["v_hi"]), (0.0, run.cfg.b),
                          e["resolution"])
    write_rows(run.path("surface.csv"), SURFACE_HEADER, rows)
    if run.plots:
        from .plotting import plot_surface
        plot_surface(rows, run.path("surface.png"), title=f"t = {e['t_frac']:g} T")


def _paths(run):
    env = SrpEnv(run.cfg)
    pol = _policy_for(run, env)
    rows = sample_paths(env, run.cfg.grid(), pol, run.rc["eval"]["n_sample_paths"], run.eval_seed())
    write_rows(run.path("paths.csv"), PATHS_HEADER, rows)
    if run.plots:
        from .plotting import plot_paths
        plot_paths(rows, run.path("paths.png"))


def _xval(run):
    cfg = run.cfg
    sol = _solve(run)
    env = SrpEnv(cfg)
    pol = PdePolicy(sol)
    est = mc_price(env, cfg.grid(), pol, run.rc["eval"]["n_paths"], run.eval_seed(), run.threads)
    tol = run.rc["eval"]["grid_tol_bp"]
    band = max(5.0, 3.0 * est.std_error_bp + tol)
    gap = est.mean_bp - sol.value_bp
    header = ["pde_bp", "mc_bp", "mc_std_error_bp", "band_bp", "within_band", "lower_bound_ok",
              "clamped_queries"]
    write_rows(run.path("xval.csv"), header,
               [(sol.value_bp, est.mean_bp, est.std_error_bp, band, int(abs(gap) <= band),
                 int(gap <= band), pol.clamped)])
    save_solution(run.path("pde_solution.npz"), sol)
    print(f"xval: pde {sol.value_bp:.2f} bp, mc {est.mean_bp:.2f} +- {est.std_error_bp:.2f} bp, "
          f"band {band:.2f} bp")


def build_parser():
    p = argparse.ArgumentParser(prog="pgexit", description="Policy gradient for exit-time control problems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="INI file with [run], [env], [train], [pde], [eval] sections")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pgexit-out)")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")
    p.add_argument("--no-plots", action="store_true", help="write CSVs only")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


HANDLERS = {
    "train-sgp": lambda r: _train(r, "sgp"),
    "train-ac-offline": lambda r: _train(r, "ac-offline"),
    "train-ac-online": lambda r: _train(r, "ac-online"),
    "pde-solve": _pde_solve,
    "evaluate": _evaluate,
    "surface": _surface,
    "paths": _paths,
    "xval": _xval,
}


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    try:
        rc = load_config(args.config, overrides)
        r = Run(args, rc)
        os.makedirs(r.out, exist_ok=True)
        rc.write_snapshot(r.path("config.ini"))
        HANDLERS[args.subcommand](r)
    except ConfigError as exc:
        print(f"pgexit: config error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, EpisodeError, NonFiniteGradientError, np.linalg.LinAlgError) as exc:
        print(f"pgexit: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
