"""Experiment configuration: flat ``section.key = value`` text files plus CLI overrides."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

from .errors import ConfigError


def _grid(text):
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("expected a:b:step")
    a, b, st = (float(p) for p in parts)
    if not st > 0 or b < a:
        raise ValueError("expected a <= b and step > 0")
    return f"{a!r}:{b!r}:{st!r}"


def _window(text):
    parts = str(text).split(":")
    if len(parts) != 2:
        raise ValueError("expected a:b")
    a, b = (float(p) for p in parts)
    if b <= a:
        raise ValueError("expected a < b")
    return (a, b)


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return float(text)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# config key -> (field name, parser)
KEYS = {
    "surface.name": ("surface", str),
    "surface.T": ("T", float),
    "surface.Tgrid": ("Tgrid", _grid),
    "thermo.pressure_window": ("window", _window),
    "thermo.entropy_window": ("entropy_window", _window),
    "kernel.resolution": ("resolution", int),
    "kernel.T0": ("T0", _opt_float),
    "box.eps": ("eps", float),
    "box.h": ("h", _opt_float),
    "box.tolerance": ("tolerance", float),
    "box.T": ("box_T", _opt_float),
    "box.M1": ("M1", _opt_float),
    "box.P_half": ("P_half", _opt_float),
    "separation.delta_prime": ("delta_prime", _opt_float),
    "separation.B": ("B", float),
    "separation.step": ("sep_step", float),
    "metric.amplitude": ("amplitude", float),
    "metric.bump_radius": ("bump_radius", float),
    "metric.valid_radius": ("valid_radius", float),
    "trace.lambda_grid": ("lambda_grid", _grid),
    "trace.spectrum": ("trace_spectrum", str),
    "riesz.model": ("riesz_model", str),
    "riesz.lambda_grid": ("riesz_grid", _grid),
    "riesz.order": ("riesz_order", int),
    "run.out": ("out", str),
    "run.threads": ("threads", int),
    "run.cache": ("cache", _bool),
}


@dataclass
class ExperimentConfig:
    surface: str = "bolza"
    T: float = 8.0
    Tgrid: str = "3.0:8.0:0.05"
    window: tuple = (3.5, 8.0)
    entropy_window: tuple = (4.0, 8.0)
    resolution: int = 2**12
    T0: float | None = None
    eps: float = 0.5
    h: float | None = None
    tolerance: float = 0.5
    box_T: float | None = None
    M1: float | None = None
    P_half: float | None = None
    delta_prime: float | None = None
    B: float = 2.0
    sep_step: float = 0.05
    amplitude: float = 0.0
    bump_radius: float = 1.0
    valid_radius: float = 9.0
    lambda_grid: str = "50.0:200.0:50.0"
    trace_spectrum: str = "none"
    riesz_model: str = "sphere3"
    riesz_grid: str = "100.0:400.0:10.0"
    riesz_order: int = 2
    out: str = "weyllab-out"
    threads: int = 1
    cache: bool = True

    def validate(self):
        if self.T <= 0:
            raise ConfigError("surface.T must be positive")
        if self.resolution < 2**12:
            raise ConfigError("kernel.resolution must be at least 4096")
        if not 0.0 < self.eps < 1.0:
            raise ConfigError("box.eps must lie in (0, 1)")
        if self.h is not None and self.h <= 0:
            raise ConfigError("box.h must be positive")
        if not 0.0 < self.tolerance <= math.pi:
            raise ConfigError("box.tolerance must lie in (0, pi]")
        if self.T0 is not None and self.T0 <= 0:
            raise ConfigError("kernel.T0 must be positive")
        if self.delta_prime is not None and self.delta_prime <= 0:
            raise ConfigError("separation.delta_prime must be positive")
        if self.B <= 0 or self.sep_step <= 0:
            raise ConfigError("separation.B and separation.step must be positive")
        if self.amplitude < 0 or self.bump_radius <= 0 or self.valid_radius <= 0:
            raise ConfigError("metric parameters out of range")
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        if self.riesz_order < 1:
            raise ConfigError("riesz.order must be >= 1")
        return self

    def set(self, key, value, origin="config"):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} ({origin})")
        name, parse = KEYS[key]
        try:
            setattr(self, name, parse(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None

    def canonical(self) -> str:
        """Stable text form: one ``key = value`` per line in sorted key order."""
        rev = {name: key for key, (name, _) in KEYS.items()}
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ":".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{rev[f.name]} = {v}")
        return "\n".join(sorted(lines)) + "\n"

    def hash(self) -> str:
        # the output directory and thread count do not change results
        body = "\n".join(ln for ln in self.canonical().splitlines()
                         if not ln.startswith(("run.out", "run.threads", "run.cache")))
        return hashlib.sha256(body.encode()).hexdigest()[:16]


def parse_config(text, cfg=None, origin="config") -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value.strip(), f"{origin}:{lineno}")
    return cfg


def load_config(path, cfg=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, cfg, str(path))
