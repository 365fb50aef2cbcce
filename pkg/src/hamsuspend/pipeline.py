"""End-to-end runs: build the suspension from a config, check it, write artifacts."""

from __future__ import annotations

import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from ._io import atomic_write_csv, atomic_write_text
from .config import ExperimentConfig
from .core_numerics import (
    CERT_ROUNDING,
    BumpProfile,
    bell_number,
    certify_bump_norms,
    faa_di_bruno_table,
    fd_jacobian,
    partition_profile_counts,
    symplectic_defect,
)
from .errors import ConfigError, StageError
from .flow import (
    closed_form_flow,
    integrate_batch,
    section_map_jacobian,
    section_start,
    time_one_section_map,
    write_sections_csv,
    write_trajectory_csv,
    yd_excursion,
)
from .isotopy import GeneratingPerturbation, IsotopyFamily, map_from_generator
from .suspension import (
    NormReport,
    SuspendedHamiltonian,
    default_block_domain,
    default_section_domain,
    norm_gap_report,
)

PASS, FAIL, DEGENERATE = "pass", "fail", "degenerate"


@dataclass
class Check:
    name: str
    status: str
    value: float | None = None
    threshold: float | None = None
    required: bool = True
    detail: str = ""

    @classmethod
    def upper(cls, name, value, threshold, required=True, detail="") -> "Check":
        """Passes when ``value <= threshold``."""
        value = float(value)
        ok = math.isfinite(value) and value <= threshold
        return cls(name, PASS if ok else FAIL, value, float(threshold), required, detail)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "value": self.value,
            "threshold": self.threshold,
            "required": self.required,
            "detail": self.detail,
        }


@dataclass
class VerificationReport:
    """Named checks plus the effective config, the norm report and an environment stamp."""

    kind: str
    config: ExperimentConfig
    checks: list = field(default_factory=list)
    norms: NormReport | None = None
    error: str | None = None
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Every required, non-degenerate check passed and no stage failed."""
        if self.error is not None:
            return False
        return all(c.status == PASS for c in self.checks if c.required and c.status != DEGENERATE)

    @property
    def status(self) -> str:
        return PASS if self.passed else FAIL

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def first_failure(self) -> Check | None:
        return next((c for c in self.checks if c.required and c.status == FAIL), None)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "status": self.status,
            "error": self.error,
            "checks": [c.to_dict() for c in self.checks],
            "norms": None if self.norms is None else dict(self.norms.items()),
            "config": self.config.to_dict(),
            "config_ini": self.config.to_ini(),
            "environment": environment_stamp(),
            "artifacts": list(self.artifacts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"{self.kind}: {self.status.upper()}"]
        if self.error:
            lines.append(f"  error: {self.error}")
        for c in self.checks:
            val = "" if c.value is None else f" value={c.value:.3e}"
            thr = "" if c.threshold is None else f" threshold={c.threshold:.3e}"
            opt = "" if c.required else " (informational)"
            lines.append(f"  [{c.status}] {c.name}{val}{thr}{opt}")
        return "\n".join(lines)


def environment_stamp() -> dict:
    """Versions that determine the numbers; deliberately free of timestamps and hostnames."""
    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


# ---------------------------------------------------------------------------
# construction


def _stage(stage: str, operation: str, fn: Callable, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise StageError(stage, operation, exc) from exc


def build_system(cfg: ExperimentConfig) -> SuspendedHamiltonian:
    """Generator, isotopy and suspended Hamiltonian for a config."""
    P = _stage(
        "generating_isotopy", "build_generator", GeneratingPerturbation.from_family,
        cfg.family, cfg.eps, half_dim=cfg.half_dim, rho=cfg.rho, nu=cfg.nu,
        cutoff_radius=cfg.cutoff_radius, seed=cfg.seed,
    )
    F = IsotopyFamily(P, BumpProfile.alpha(cfg.xi), tol=1e-13)
    return _stage(
        "suspension", "build_hamiltonian", SuspendedHamiltonian,
        F, BumpProfile.energy(cfg.nu, cfg.rho), quad_nodes=cfg.quad_nodes,
    )


def section_grid(cfg: ExperimentConfig) -> np.ndarray:
    """``section_points^2`` starts in the ball of radius ``section_fraction * rho``.

    For ``d = 2`` a polar grid (radii ``k/n`` of the ball radius, ``n``
    angles); in higher dimension seeded uniform samples of the ball.
    """
    n = cfg.section_points
    radius = cfg.section_fraction * cfg.rho
    if cfg.half_dim == 1:
        r = radius * np.arange(1, n + 1) / n
        th = 2 * np.pi * np.arange(n) / n
        R, T = np.meshgrid(r, th, indexing="ij")
        return np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    rng = np.random.default_rng(cfg.seed)
    m = 2 * cfg.half_dim
    v = rng.normal(size=(n * n, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(0, 1, (n * n, 1)) ** (1.0 / m)


def norms_for(cfg: ExperimentConfig, S: SuspendedHamiltonian) -> NormReport:
    return _stage(
        "suspension", "norm_gap_report", norm_gap_report, S,
        default_section_domain(S, cfg.norm_section_ppa), default_block_domain(S, cfg.norm_block_ppa),
    )


def _fixes_origin(P: GeneratingPerturbation) -> bool:
    return float(np.max(np.abs(map_from_generator(P, np.zeros(P.dimension))))) <= 1e-14


# ---------------------------------------------------------------------------
# suspend


def run_suspension(cfg: ExperimentConfig, out_dir: str | Path | None = None, write: bool = True) -> VerificationReport:
    """Build generator, isotopy, ``K``, ``H`` and the section map; check and export them.

    A failing stage does not raise: the report carries the stage-named
    error and fails.
    """
    report = VerificationReport("suspend", cfg)
    out = Path(out_dir or cfg.out_dir)
    try:
        S = build_system(cfg)
        P = S.isotopy.perturbation
        report.add(Check.upper("generator_contraction", P.delta1, 0.5, detail="measured C^1 size of grad V"))
        report.norms = norms_for(cfg, S)
        if report.norms.degenerate:
            report.add(Check("norm_constant", DEGENERATE, None, None, False, "0/0: g = id"))
        else:
            report.add(Check("norm_constant", PASS, report.norms.constant, None, False))

        starts = section_grid(cfg)
        records = _stage("flow_integration", "time_one_section_map", time_one_section_map, S, starts, cfg.tol)
        res = max(r.residual for r in records)
        report.add(Check.upper("section_residual", res, max(1e-6, 10 * cfg.tol)))
        report.add(Check.upper("section_xd_end", max(abs(r.xd_end - 1.0) for r in records), 10 * cfg.tol))
        report.add(Check.upper("yd_excursion", yd_excursion(records), cfg.nu * cfg.rho))
        if _fixes_origin(P):
            origin = _stage("flow_integration", "integrate", integrate_batch, S, np.zeros((1, S.dimension)),
                            1.0, cfg.tol, energy=False)[0]
            expected = S.join(np.zeros((1, P.dimension)), 1.0, 0.0)[0]
            report.add(Check.upper("fixed_point_endpoint", np.linalg.norm(origin.final - expected), 1e-8))

        trajs = []
        if cfg.trajectories:
            pick = starts[np.linspace(0, len(starts) - 1, cfg.trajectories).round().astype(int)]
            t_eval = np.linspace(0.0, 1.0, cfg.trajectory_samples)
            trajs = _stage("flow_integration", "integrate", integrate_batch, S, section_start(S, pick), 1.0,
                           cfg.tol, t_eval=t_eval)
            report.add(Check.upper("energy_drift", max(t.energy_drift for t in trajs), 10 * cfg.tol))

        if write:
            _stage("cli_pipeline", "write_artifacts", _write_suspend_artifacts, report, out, records, trajs)
    except StageError as exc:
        report.error = str(exc)
    return report


def _write_suspend_artifacts(report, out: Path, records, trajs):
    out.mkdir(parents=True, exist_ok=True)
    written = []
    atomic_write_text(out / "norms.txt", report.norms.to_text())
    atomic_write_text(out / "norms.json", report.norms.to_json() + "\n")
    written += ["norms.txt", "norms.json"]
    write_sections_csv(out / "sections.csv", records)
    written.append("sections.csv")
    for k, tr in enumerate(trajs):
        name = f"trajectory_{k:03d}.csv"
        write_trajectory_csv(out / name, tr)
        written.append(name)
    report.artifacts = written
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "config.ini", report.config.to_ini())


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = (
    "eps", "rho", "nu", "status", "delta1", "g_minus_id_c1", "g_minus_id_c3", "h_minus_h0_c2",
    "bracket", "constant", "degenerate", "section_residual", "yd_excursion", "error",
)


def sweep_combinations(cfg: ExperimentConfig) -> list:
    if not (cfg.sweep_eps or cfg.sweep_rho or cfg.sweep_nu):
        raise ConfigError("sweep needs at least one non-empty sweep list (sweep_eps, sweep_rho, sweep_nu)")
    eps = cfg.sweep_eps or (cfg.eps,)
    rho = cfg.sweep_rho or (cfg.rho,)
    nu = cfg.sweep_nu or (cfg.nu,)
    return [replace(cfg, eps=float(e), rho=float(r), nu=float(n), sweep_eps=(), sweep_rho=(), sweep_nu=())
            for e, r, n in product(eps, rho, nu)]


def sweep_row(cfg: ExperimentConfig) -> dict:
    """Metrics of one sweep combination; failures are recorded, not raised."""
    row = {k: "" for k in SWEEP_COLUMNS}
    row.update(eps=cfg.eps, rho=cfg.rho, nu=cfg.nu)
    try:
        S = build_system(cfg)
        norms = norms_for(cfg, S)
        row.update(
            delta1=S.isotopy.perturbation.delta1,
            g_minus_id_c1=norms.g_minus_id_c1,
            g_minus_id_c3=norms.g_minus_id_c3,
            h_minus_h0_c2=norms.h_minus_h0_c2,
            bracket=norms.bracket,
            constant="" if norms.constant is None else norms.constant,
            degenerate=str(norms.degenerate).lower(),
        )
        status = PASS
        if cfg.sweep_sections:
            records = _stage("flow_integration", "time_one_section_map", time_one_section_map, S,
                             section_grid(cfg), cfg.tol)
            res = max(r.residual for r in records)
            row.update(section_residual=res, yd_excursion=yd_excursion(records))
            if not res <= max(1e-6, 10 * cfg.tol):
                status = FAIL
        row["status"] = status
    except StageError as exc:
        row.update(status=FAIL, error=str(exc))
    return row


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None, write: bool = True) -> list:
    """One row per ``(eps, rho, nu)`` combination, in a fixed order; writes ``sweep.csv``."""
    combos = sweep_combinations(cfg)
    if cfg.workers > 1 and len(combos) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(sweep_row, combos))
    else:
        rows = [sweep_row(c) for c in combos]
    if write:
        out = Path(out_dir or cfg.out_dir)
        atomic_write_csv(out / "sweep.csv", SWEEP_COLUMNS, ([r[k] for k in SWEEP_COLUMNS] for r in rows))
        atomic_write_text(out / "sweep_config.ini", cfg.to_ini())
    return rows


# ---------------------------------------------------------------------------
# verify


def _tiled(fn, params):
    # fd_jacobian evaluates all shifted copies of the points in one stacked call
    params = np.asarray(params)
    return lambda z: fn(np.tile(params, len(z) // len(params)), z)


def _random_pairs(rng, S: SuspendedHamiltonian, n: int, radius: float):
    m = 2 * S.half_dim
    alpha = rng.uniform(0.0, S.isotopy.xi, n)
    v = rng.normal(size=(n, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    w = v * radius * rng.uniform(0, 1, (n, 1)) ** (1.0 / m)
    return alpha, w


def run_verify(cfg: ExperimentConfig, out_dir: str | Path | None = None, write: bool = True) -> VerificationReport:
    """Deterministic invariant suite for one configuration.

    All random samples come from ``numpy.random.default_rng(cfg.seed)``, so
    the report is a pure function of the config.
    """
    report = VerificationReport("verify", cfg)
    rng = np.random.default_rng(cfg.seed)
    N = cfg.verify_samples
    try:
        # bump certification (energy profile)
        cert = _stage("core_numerics", "certify_bump_norms", certify_bump_norms, BumpProfile.energy(cfg.nu, cfg.rho))
        report.add(Check.upper("bump_first_derivative", cert.d1_sup, cert.d1_bound * (1.0 + CERT_ROUNDING)))
        report.add(Check.upper("bump_second_derivative_stated_bound", cert.d2_sup, cert.d2_bound, required=False,
                               detail="stated bound lies below what any smooth step of this width can meet"))
        report.add(Check.upper("bump_second_derivative_floor", cert.d2_floor, cert.d2_sup,
                               detail="sampled sup is at least the universal lower bound"))

        # Faa di Bruno coefficients against set-partition enumeration
        mismatch = 0
        for r in range(1, 6):
            table = faa_di_bruno_table(r).as_dict()
            mismatch += int(table != partition_profile_counts(r))
            mismatch += int(sum(table.values()) != bell_number(r))
        report.add(Check.upper("faa_di_bruno_oracle", mismatch, 0))

        S = build_system(cfg)
        F = S.isotopy
        P = F.perturbation
        m = P.dimension
        report.add(Check.upper("generator_contraction", P.delta1, 0.5))

        # symplecticity of g_alpha
        alpha, w = _random_pairs(rng, S, 10 * N, P.rho)
        jac = _stage("generating_isotopy", "isotopy_eval", fd_jacobian, _tiled(F.eval, alpha), w, 1e-6)
        report.add(Check.upper("isotopy_symplectic", np.max(symplectic_defect(jac)), 1e-6))

        # exactness: FD gradient of the quadrature K against -J X
        alpha, w = _random_pairs(rng, S, 10 * N, 1.1 * P.rho)
        gradK = _stage("suspension", "hamiltonian_K", fd_jacobian, _tiled(S.K, alpha), w, 1e-6)[:, 0, :]
        X = F.vector_field(alpha, w)
        n = S.half_dim
        err = np.max(np.abs(gradK - np.hstack([-X[:, n:], X[:, :n]])))
        report.add(Check.upper("k_exactness", err, 1e-5))

        # compact support: K by quadrature just inside the support sphere
        if P.kinks:
            v = rng.normal(size=(N, m))
            v *= (1.0 - 1e-9) * P.kinks[-1] / np.linalg.norm(v, axis=1, keepdims=True)
            kb = np.max(np.abs(S.K(rng.uniform(0, F.xi, N), v)))
            report.add(Check.upper("k_boundary", kb, 1e-8))
        else:
            report.add(Check("k_boundary", DEGENERATE, None, 1e-8, True, "generator without cutoff"))

        # gradient of H against FD of its value
        zs = S.join(w[:N], rng.uniform(-0.1, 1.1, N), rng.uniform(-S.rho, S.rho, N))
        gH = S.gradient(zs)
        fdH = fd_jacobian(S.value, zs, 1e-6)[:, 0, :]
        report.add(Check.upper("hamiltonian_gradient", np.max(np.abs(gH - fdH)), 1e-5))

        # section map
        starts = section_grid(cfg)
        records = _stage("flow_integration", "time_one_section_map", time_one_section_map, S, starts, cfg.tol)
        report.add(Check.upper("section_residual", max(r.residual for r in records), max(1e-6, 10 * cfg.tol)))
        report.add(Check.upper("section_xd_end", max(abs(r.xd_end - 1.0) for r in records), 10 * cfg.tol))
        report.add(Check.upper("yd_excursion", yd_excursion(records), cfg.nu * cfg.rho))
        sub = starts[rng.choice(len(starts), size=min(N, len(starts)), replace=False)]
        jac = _stage("flow_integration", "section_map_jacobian", section_map_jacobian, S, sub, 1e-5, cfg.tol)
        report.add(Check.upper("section_symplectic", np.max(symplectic_defect(jac)), 1e-5))
        if _fixes_origin(P):
            tr = integrate_batch(S, np.zeros((1, S.dimension)), 1.0, cfg.tol, energy=False)[0]
            expected = S.join(np.zeros((1, m)), 1.0, 0.0)[0]
            report.add(Check.upper("fixed_point_endpoint", np.linalg.norm(tr.final - expected), 1e-8))
        else:
            report.add(Check("fixed_point_endpoint", DEGENERATE, None, 1e-8, True, "g does not fix the origin"))

        # energy and closed-form agreement on general plateau states
        k = min(N, 20)
        xd0 = rng.uniform(0.0, 0.5, k)
        z0 = S.join(w[:k] * 0.8, xd0, rng.uniform(-0.2, 0.2, k) * cfg.nu * cfg.rho)
        t_end = 0.5
        trajs = _stage("flow_integration", "integrate", integrate_batch, S, z0, t_end, cfg.tol,
                       t_eval=np.linspace(0.0, t_end, 11))
        report.add(Check.upper("energy_drift", max(t.energy_drift for t in trajs), 10 * cfg.tol))
        cf = _stage("flow_integration", "closed_form_flow", closed_form_flow, S, z0, t_end)
        report.add(Check.upper("closed_form_agreement", np.max(np.abs(np.stack([t.final for t in trajs]) - cf)), 1e-7))
    except StageError as exc:
        report.error = str(exc)
    if write:
        out = Path(out_dir or cfg.out_dir)
        atomic_write_text(out / "verify_report.json", report.to_json())
    return report


def run_norms(cfg: ExperimentConfig) -> NormReport:
    return norms_for(cfg, build_system(cfg))
