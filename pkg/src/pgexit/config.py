"""Run configuration: an INI-style text file with [run], [env], [train],
[pde] and [eval] sections, plus `section.key=value` overrides.

Unknown sections or keys are rejected with ConfigError naming the key.
"""

import configparser
import os
from dataclasses import dataclass, field

from .algos import TrainConfig
from .pde import GridSpec
from .srp import SrpConfig


class ConfigError(ValueError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(p) for p in s.replace(",", " ").split()) if s.strip() else ()


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "threads": (int, 1),
    },
    "env": {
        "s0": (float, 1.0),
        "b": (float, 1.0),
        "t_days": (float, 60.0),
        "n_steps": (int, 60),
        "sigma": (float, 0.2),
        "gamma": (float, 0.0),
        "beta": (float, 0.0),
        "lambda": (float, 5.0),
        "a_max": (float, 25.2),
        "allow_unreachable": (_bool, False),
    },
    "train": {
        "episodes": (int, 200_000),
        "batch_size": (int, 0),          # 0: 64 for SGP, 32 for actor-critic
        "lr": (float, 1e-3),
        "lr_actor": (float, 1e-3),
        "lr_critic": (float, 1e-2),
        "hidden": (_ints, (8, 8)),
        "use_baseline": (_bool, True),
        "optimizer": (str, "adam"),
        "lr_final_frac": (float, 1.0),  # rates decay geometrically to this fraction
        "critic_scale": (float, 0.01),  # typical value size, in units of B S0
        "eval_every": (int, 10_000),
        "eval_paths": (int, 10_000),
    },
    "pde": {
        "n_s": (int, 101),
        "s_lo": (float, 1.0 / 3.0),
        "s_hi": (float, 3.0),
        "n_v": (int, 81),
        "v_lo": (float, 0.1),
        "v_hi": (float, 2.0),
        "n_q": (int, 51),
        "strang": (_bool, False),
    },
    "eval": {
        "n_paths": (int, 100_000),
        "checkpoint": (str, ""),
        "t_frac": (float, 0.5),         # surface time as a fraction of T
        "s_fixed": (float, 1.0),
        "v_lo": (float, 0.1),
        "v_hi": (float, 2.0),
        "resolution": (int, 41),
        "n_sample_paths": (int, 2),
        "grid_tol_bp": (float, 3.0),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)   # section -> key -> parsed value
    raw: dict = field(default_factory=dict)      # section -> key -> text

    def __getitem__(self, section):
        return self.values[section]

    def srp(self):
        e = self.values["env"]
        try:
            return SrpConfig(s0=e["s0"], b=e["b"], t_days=e["t_days"], n_steps=e["n_steps"],
                             sigma=e["sigma"], gamma=e["gamma"], beta=e["beta"], lam=e["lambda"],
                             a_max=e["a_max"], allow_unreachable=e["allow_unreachable"])
        except ValueError as exc:
            raise ConfigError(f"[env] {exc}") from exc

    def grid_spec(self):
        try:
            return GridSpec(**self.values["pde"])
        except ValueError as exc:
            raise ConfigError(f"[pde] {exc}") from exc

    def train(self, default_batch):
        t = dict(self.values["train"])
        t.pop("hidden")
        t.pop("critic_scale")
        if t["batch_size"] == 0:
            t["batch_size"] = default_batch
        try:
            return TrainConfig(seed=self.values["run"]["seed"], **t)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from exc

    def write_snapshot(self, path):
        cp = configparser.ConfigParser(interpolation=None)
        for sec, keys in SCHEMA.items():
            cp[sec] = {k: self.raw[sec][k] for k in keys}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# resolved configuration\n")
            cp.write(fh)


def _format(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path=None, overrides=()):
    """Defaults, then the file at `path`, then `section.key=value` overrides."""
    raw = {sec: {k: _format(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for sec in cp.sections():
            for k, v in cp[sec].items():
                _put(raw, sec, k, v)
    for item in overrides:
        key, sep, v = item.partition("=")
        sec, dot, k = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        _put(raw, sec, k, v)
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for k, (parse, _) in keys.items():
            try:
                values[sec][k] = parse(raw[sec][k])
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{k}: {raw[sec][k]!r} ({exc})") from exc
    return RunConfig(values, raw)


def _put(raw, sec, k, v):
    sec, k = sec.strip().lower(), k.strip().lower()
    if sec not in SCHEMA:
        raise ConfigError(f"unknown section [{sec}]")
    if k not in SCHEMA[sec]:
        raise ConfigError(f"unknown key {sec}.{k}")
    raw[sec][k] = v.strip()
