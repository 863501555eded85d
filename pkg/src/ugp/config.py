"""Flat ``key = value`` run configuration.

One file holds the field parameters and the experiment parameters side by
side.  Blank lines and ``#`` comments are ignored, lists are comma
separated and ``none`` clears an optional value.  Unknown keys are an
error so that typos never pass silently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigError
from .experiments import ExperimentConfig
from .field import FieldConfig


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)

    return parse


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the command line tools with simulation-table defaults."""

    extent_min: tuple = (20.0,)
    extent_max: tuple = (200.0,)
    resolution: float = 0.25
    sigma_psi: float = 10.0
    d_c: float = 15.0
    L0: float = -10.0
    eta: float = 2.5
    sigma_n: float = 0.01
    seed: int = 0
    n_train: int = 100
    n_test: int | None = None
    lam: float = 0.0
    lambda_sweep: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    sigma_sweep: tuple = (0.0, 1.0, 2.0, 3.0, 5.0, 8.0)
    alpha_sweep: tuple = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    resource_lambdas: tuple = (0.0, 10.0)
    n_realizations: int | None = None
    M: int = 300
    methods: tuple | None = None
    W_dBm: float | None = None
    sigma_proc_offline: float | None = None
    n_calibration: int = 40
    prx_budget: int = 10_000
    test_margin: float = 20.0
    test_spacing: float = 2.0

    # file key -> attribute, where they differ
    ALIASES = {"lambda": "lam"}

    @classmethod
    def _parsers(cls):
        return {
            "extent_min": _floats, "extent_max": _floats, "resolution": float, "sigma_psi": float,
            "d_c": float, "L0": float, "eta": float, "sigma_n": float, "seed": _seed,
            "n_train": int, "n_test": _optional(int), "lam": float, "lambda_sweep": _floats,
            "sigma_sweep": _floats, "alpha_sweep": _floats, "resource_lambdas": _floats,
            "n_realizations": _optional(int), "M": int, "methods": _optional(_names),
            "W_dBm": _optional(float), "sigma_proc_offline": _optional(float),
            "n_calibration": int, "prx_budget": int, "test_margin": float, "test_spacing": float,
        }

    @classmethod
    def parse_items(cls, items):
        """Convert ``(key, text)`` pairs into typed overrides."""
        parsers = cls._parsers()
        out = {}
        for key, text in items:
            attr = cls.ALIASES.get(key, key)
            if attr not in parsers:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                out[attr] = parsers[attr](text.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {text.strip()!r} ({exc})") from None
        return out

    @classmethod
    def from_text(cls, text, base=None):
        items = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            items.append((key.strip(), value))
        return (base or cls()).with_overrides(cls.parse_items(items))

    @classmethod
    def from_file(cls, path, base=None):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, base)

    def with_overrides(self, overrides):
        cfg = dataclasses.replace(self, **overrides)
        cfg.field_config()
        cfg.experiment_config()
        return cfg

    def field_config(self):
        return FieldConfig(self.extent_min, self.extent_max, self.resolution, self.sigma_psi, self.d_c,
                           self.L0, self.eta, self.sigma_n, self.seed)

    def experiment_config(self):
        return ExperimentConfig(
            field=self.field_config(), n_train=self.n_train, n_test=self.n_test,
            lambda_sweep=self.lambda_sweep, sigma_sweep=self.sigma_sweep, alpha_sweep=self.alpha_sweep,
            resource_lambdas=self.resource_lambdas, n_realizations=self.n_realizations, M=self.M,
            methods=self.methods, W_dBm=self.W_dBm, master_seed=self.seed,
            sigma_proc_offline=self.sigma_proc_offline, n_calibration=self.n_calibration,
            prx_budget=self.prx_budget, test_margin=self.test_margin, test_spacing=self.test_spacing,
        )

    def to_text(self):
        """Resolved configuration in the same format :meth:`from_text` reads."""
        inverse = {v: k for k, v in self.ALIASES.items()}
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{inverse.get(f.name, f.name)} = {_format(value)}")
        return "\n".join(lines) + "\n"


def _seed(text):
    seed = int(text)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
