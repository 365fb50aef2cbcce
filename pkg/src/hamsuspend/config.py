"""Experiment configuration read from INI-style files.

Example::

    [generator]
    family = cubic
    eps = 0.05

    [geometry]
    d = 2
    rho = 1.0

Every key is optional; missing keys take the defaults of
:class:`ExperimentConfig`.  :meth:`ExperimentConfig.to_ini` writes the full
effective configuration, and reading that text back reproduces the run.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .generators import FAMILIES

# section of the INI file each field lives in
_SECTIONS = {
    "generator": ("family", "eps", "cutoff_radius", "seed"),
    "geometry": ("d", "rho", "nu", "xi"),
    "integrator": ("tol", "quad_nodes"),
    "grids": ("section_points", "section_fraction", "norm_section_ppa", "norm_block_ppa",
              "trajectories", "trajectory_samples", "verify_samples"),
    "sweep": ("sweep_eps", "sweep_rho", "sweep_nu", "workers", "sweep_sections"),
    "run": ("out_dir", "eps_cap"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of a run.

    Attributes
    ----------
    family, eps, cutoff_radius, seed
        Generator family, its C^1 size and the support radius of its cutoff
        (``None`` means ``rho``).  ``seed`` fixes the random-poly family and
        every sampled check.
    d, rho, nu, xi
        Degrees of freedom of the suspended system, the energy cutoff radius
        and plateau fraction, and the width of the isotopy's time ramp.
    tol, quad_nodes
        Integrator tolerance and Gauss-Legendre nodes per quadrature panel.
    section_points
        The section map is sampled on a ``section_points x section_points``
        grid in the ball of radius ``section_fraction * rho``.
    norm_section_ppa, norm_block_ppa
        Grid densities for the norm estimates.
    sweep_eps, sweep_rho, sweep_nu
        Sweep lists; an empty list means "the base value only", but at least
        one list must be non-empty for a sweep.
    eps_cap
        Configurations with ``eps`` at or above this are rejected outright.
    """

    family: str = "cubic"
    eps: float = 0.05
    cutoff_radius: float | None = None
    seed: int = 0
    d: int = 2
    rho: float = 1.0
    nu: float = 0.5
    xi: float = 0.5
    tol: float = 1e-10
    quad_nodes: int = 32
    section_points: int = 10
    section_fraction: float = 0.5
    norm_section_ppa: int = 41
    norm_block_ppa: int = 17
    trajectories: int = 3
    trajectory_samples: int = 21
    verify_samples: int = 100
    sweep_eps: tuple = ()
    sweep_rho: tuple = ()
    sweep_nu: tuple = ()
    workers: int = 1
    sweep_sections: bool = True
    out_dir: str = "out"
    eps_cap: float = 1.0

    def __post_init__(self):
        self.validate()

    @property
    def half_dim(self) -> int:
        return self.d - 1

    def validate(self) -> "ExperimentConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not 2 <= self.d <= 4:
            raise ConfigError(f"d must lie in 2..4, got {self.d}")
        if not self.eps >= 0:
            raise ConfigError(f"eps must be non-negative, got {self.eps}")
        if not self.eps < self.eps_cap:
            raise ConfigError(f"eps={self.eps} is not below the admissibility cap {self.eps_cap}")
        for name in ("rho", "tol", "section_fraction", "eps_cap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.cutoff_radius is not None and not 0 < self.cutoff_radius <= self.rho:
            raise ConfigError("cutoff_radius must lie in (0, rho] so the perturbation stays in the block")
        for name in ("nu", "xi"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if not 1e-13 <= self.tol <= 1e-6:
            raise ConfigError(f"tol must lie in [1e-13, 1e-6], got {self.tol}")
        for name in ("quad_nodes", "section_points", "norm_section_ppa", "norm_block_ppa",
                     "trajectory_samples", "verify_samples", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.trajectories < 0:
            raise ConfigError("trajectories must be non-negative")
        for name in ("sweep_eps", "sweep_rho", "sweep_nu"):
            if any(not v >= 0 for v in getattr(self, name)):
                raise ConfigError(f"{name} entries must be non-negative")
        if any(not v > 0 for v in self.sweep_rho):
            raise ConfigError("sweep_rho entries must be positive")
        if any(not 0 < v < 1 for v in self.sweep_nu):
            raise ConfigError("sweep_nu entries must lie in (0, 1)")
        return self

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    # -- INI round trip ---------------------------------------------------

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        known = {f.name: f for f in fields(cls)}
        where = {key: sec for sec, keys in _SECTIONS.items() for key in keys}
        values = {}
        for sec in parser.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in known or where[key] != sec:
                    raise ConfigError(f"unknown key {key!r} in section [{sec}]")
                values[key] = _coerce(key, raw, cls)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        data = asdict(self)
        for sec, keys in _SECTIONS.items():
            parser[sec] = {key: _render(data[key]) for key in keys}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _coerce(key: str, raw: str, cls):
    raw = raw.strip()
    default = {f.name: f.default for f in fields(cls)}[key]
    try:
        if key.startswith("sweep_") and key != "sweep_sections":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if key == "cutoff_radius":
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)
