"""Integration of the suspended flow and extraction of the time-one section map.

Points of phase space are ordered ``(x, x_d, y, y_d)`` as in
:mod:`hamsuspend.suspension`.  Batches of initial conditions are stacked
into a single system so they share one step-size sequence; this makes
finite-difference Jacobians of the flow map smooth in the initial data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import RK45

from ._io import atomic_write_csv
from .core_numerics import gauss_legendre, symplectic_defect
from .errors import DomainExitError, StiffnessError
from .isotopy import map_from_generator
from .suspension import SuspendedHamiltonian

TOL_RANGE = (1e-13, 1e-6)
XD_RANGE = (-0.5, 1.5)
METHODS = ("dp54", "gbs8")
# fraction of the requested tolerance allowed per step; the requested
# tolerance then bounds the accumulated error and the interpolation error
LOCAL_FRACTION = 0.1

# Dormand-Prince 5(4) tableau with its quartic dense-output matrix
_C, _A, _B, _E, _P = RK45.C, RK45.A, RK45.B, RK45.E, RK45.P


@dataclass(frozen=True)
class IntegratorStats:
    method: str
    tol: float
    steps: int
    rejected: int
    rhs_calls: int


@dataclass
class Trajectory:
    """Samples ``z(t)`` of one integrated trajectory together with ``H(z(t))``."""

    t: np.ndarray
    z: np.ndarray
    energy: np.ndarray
    stats: IntegratorStats
    yd_max: float = 0.0

    @property
    def samples(self):
        return list(zip(self.t.tolist(), self.z))

    @property
    def final(self) -> np.ndarray:
        return self.z[-1]

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0]), initial=0.0))

    def rows(self):
        for t, z, e in zip(self.t, self.z, self.energy):
            yield [float(t), *map(float, z), float(e)]

    def header(self) -> list:
        return ["t"] + [f"z{i + 1}" for i in range(self.z.shape[1])] + ["energy"]


@dataclass
class SectionRecord:
    """One evaluation of the time-one section map ``(x, y) -> Pi phi^1(x, 0, y, 0)``."""

    input: np.ndarray
    output: np.ndarray
    xd_end: float
    yd_end: float
    excursion: float
    residual: float
    target: np.ndarray | None = None

    def row(self) -> list:
        return [*map(float, self.input), *map(float, self.output), self.xd_end, self.yd_end,
                self.excursion, self.residual]

    @staticmethod
    def header(half_dim: int) -> list:
        m = 2 * half_dim
        return ([f"in{i + 1}" for i in range(m)] + [f"out{i + 1}" for i in range(m)]
                + ["xd_end", "yd_end", "excursion", "residual"])


# ---------------------------------------------------------------------------
# chart


@dataclass(frozen=True)
class ChartBox:
    """``|x|, |y| <= width``, ``x_d`` in ``xd_range`` and ``|y_d| <= yd_limit``."""

    half_dim: int
    width: float
    yd_limit: float
    xd_range: tuple = XD_RANGE

    @classmethod
    def for_hamiltonian(cls, S: SuspendedHamiltonian, plateau: bool = False) -> "ChartBox":
        limit = S.nu * S.rho if plateau else S.rho
        return cls(S.half_dim, 2.0 * S.rho, limit)

    def violation(self, z: np.ndarray) -> np.ndarray:
        """Largest constraint excess per point; positive means outside."""
        n = self.half_dim
        z = np.atleast_2d(z)
        w = np.hstack([z[:, :n], z[:, n + 1 : 2 * n + 1]])
        xd, yd = z[:, n], z[:, 2 * n + 1]
        lo, hi = self.xd_range
        parts = [np.abs(yd) - self.yd_limit, lo - xd, xd - hi]
        if w.shape[1]:
            parts.append(np.max(np.abs(w), axis=1) - self.width)
        return np.max(np.stack(parts, axis=1), axis=1)


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)


def _dense(y_old, K, h, theta):
    # quartic Hermite-type interpolant of the Dormand-Prince pair
    Q = np.einsum("s...,sk->k...", K, _P)
    powers = theta ** np.arange(1, _P.shape[1] + 1)
    return y_old + h * np.tensordot(powers, Q, axes=1)


def _initial_step(fun, t0, y0, f0, tol, direction):
    scale = tol + tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100 * h0, h1)


def _dp54(fun, t0, y0, t_final, tol, t_eval, box, max_steps=100_000):
    """Adaptive Dormand-Prince integration of the stacked state ``y0`` (N, dim)."""
    span = t_final - t0
    direction = 1.0 if span >= 0 else -1.0
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((t_eval.size,) + y0.shape)
    filled = 0
    calls = 0

    def f(t, y):
        nonlocal calls
        calls += 1
        return fun(t, y)

    tol = LOCAL_FRACTION * tol
    t, y = t0, y0.copy()
    fy = f(t, y)
    yd_max = np.abs(y[:, -1])
    while filled < t_eval.size and (t_eval[filled] - t) * direction <= 0:
        out[filled] = y
        filled += 1
    if span == 0:
        return out, IntegratorStats("dp54", tol / LOCAL_FRACTION, 0, 0, calls), yd_max
    h = min(abs(span), _initial_step(f, t, y, fy, tol, direction))
    steps = rejected = 0
    K = np.empty((_B.size + 1,) + y.shape)
    while (t_final - t) * direction > 0:
        if steps + rejected > max_steps:
            raise StiffnessError(f"step budget of {max_steps} exhausted at t={t:.6g}")
        h_min = 10 * np.spacing(abs(t)) + 1e-14
        if h < h_min:
            raise StiffnessError(f"step size {h:.3e} underflowed at t={t:.6g}")
        h = min(h, abs(t_final - t))
        t_new = t + direction * h
        if abs(t_final - t_new) < h_min:
            t_new = t_final
        hs = t_new - t
        K[0] = fy
        for s in range(1, _B.size):
            dy = np.tensordot(_A[s, :s], K[:s], axes=1) * hs
            K[s] = f(t + _C[s] * hs, y + dy)
        y_new = y + hs * np.tensordot(_B, K[:-1], axes=1)
        f_new = f(t_new, y_new)
        K[-1] = f_new
        err = hs * np.tensordot(_E, K, axes=1)
        scale = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
        err_ratio = float(np.max(np.abs(err) / scale))
        if not np.isfinite(err_ratio):
            rejected += 1
            h *= 0.2
            continue
        if err_ratio > 1.0:
            rejected += 1
            h *= max(0.2, 0.9 * err_ratio ** -0.2)
            continue
        steps += 1
        # chart check at the accepted endpoint; locate the exit on the interpolant
        viol = box.violation(y_new)
        if np.any(viol > 0):
            bad = np.flatnonzero(viol > 0)
            lo_th, hi_th = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo_th + hi_th)
                ym = _dense(y[bad], K[:, bad], hs, mid)
                if np.any(box.violation(ym) > 0):
                    hi_th = mid
                else:
                    lo_th = mid
            t_exit = t + hi_th * hs
            state = _dense(y, K, hs, hi_th)
            while filled < t_eval.size and (t_eval[filled] - t_exit) * direction < 0:
                th = (t_eval[filled] - t) / hs
                out[filled] = _dense(y, K, hs, th)
                filled += 1
            stats = IntegratorStats("dp54", tol / LOCAL_FRACTION, steps, rejected, calls)
            raise DomainExitError(
                f"{bad.size} trajectories left the chart at t={t_exit:.6g}",
                t_exit=t_exit,
                state=state,
                indices=bad,
                trajectory=(t_eval[:filled], out[:filled], stats),
            )
        while filled < t_eval.size and (t_eval[filled] - t_new) * direction <= 0:
            th = (t_eval[filled] - t) / hs
            out[filled] = y_new if th == 1.0 else _dense(y, K, hs, th)
            filled += 1
        yd_max = np.maximum(yd_max, np.abs(y_new[:, -1]))
        t, y, fy = t_new, y_new, f_new
        factor = 10.0 if err_ratio == 0 else min(10.0, 0.9 * err_ratio ** -0.2)
        h = abs(hs) * factor
    return out, IntegratorStats("dp54", tol / LOCAL_FRACTION, steps, rejected, calls), yd_max


# ---------------------------------------------------------------------------
# Gragg-Bulirsch-Stoer, fixed step, order 8

_GBS_SEQ = (2, 4, 6, 8)


def _gbs_step(f, t, y, H, f0):
    table = []
    for n in _GBS_SEQ:
        h = H / n
        z_prev, z = y, y + h * f0
        for m in range(1, n):
            z_prev, z = z, z_prev + 2.0 * h * f(t + m * h, z)
        table.append(z)
    # Aitken-Neville extrapolation to h -> 0 in powers of h^2
    for k in range(1, len(table)):
        for j in range(len(table) - 1, k - 1, -1):
            ratio = (_GBS_SEQ[j] / _GBS_SEQ[j - k]) ** 2
            table[j] = table[j] + (table[j] - table[j - 1]) / (ratio - 1.0)
    return table[-1]


def _gbs8(fun, t0, y0, t_final, steps, t_eval, box):
    calls = 0

    def f(t, y):
        nonlocal calls
        calls += 1
        return fun(t, y)

    grid = np.linspace(t0, t_final, steps + 1)
    states = np.empty((steps + 1,) + y0.shape)
    states[0] = y0
    y = y0.copy()
    for i in range(steps):
        y = _gbs_step(f, grid[i], y, grid[i + 1] - grid[i], f(grid[i], y))
        viol = box.violation(y)
        if np.any(viol > 0):
            stats = IntegratorStats("gbs8", float("nan"), i + 1, 0, calls)
            raise DomainExitError(
                f"{int(np.sum(viol > 0))} trajectories left the chart by t={grid[i + 1]:.6g}",
                t_exit=float(grid[i + 1]), state=y, indices=np.flatnonzero(viol > 0),
                trajectory=(grid[: i + 1], states[: i + 1], stats),
            )
        states[i + 1] = y
    yd_max = np.max(np.abs(states[:, :, -1]), axis=0)
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size == 0:
        out = states[[-1]]
    else:
        idx = np.searchsorted(grid, t_eval)
        if np.any(idx > steps) or not np.allclose(grid[np.minimum(idx, steps)], t_eval, rtol=0, atol=1e-14):
            raise ValueError("the fixed-step method only samples on its step grid")
        out = states[idx]
    return out, IntegratorStats("gbs8", float("nan"), steps, 0, calls), yd_max


# ---------------------------------------------------------------------------
# public integration API


def _check_tol(tol):
    lo, hi = TOL_RANGE
    if not lo <= tol <= hi:
        raise ValueError(f"integrator tolerance must lie in [{lo:g}, {hi:g}], got {tol:g}")


def _reorder(z, dim):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {z.shape[1]}")
    return z


def integrate_batch(S: SuspendedHamiltonian, z0, t_final: float = 1.0, tol: float = 1e-10,
                    t_eval: Sequence[float] | None = None, method: str = "dp54", steps: int = 64,
                    box: ChartBox | None = None, energy: bool = True) -> list:
    """Integrate several initial conditions as one stacked system.

    Returns one :class:`Trajectory` per row of ``z0``.  ``t_eval`` defaults
    to ``[0, t_final]``; with ``method="gbs8"`` it must lie on the uniform
    grid of ``steps`` steps.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    _check_tol(tol)
    z0 = _reorder(z0, S.dimension)
    box = box or ChartBox.for_hamiltonian(S)
    viol = box.violation(z0)
    if np.any(viol > 0):
        raise DomainExitError("initial state outside the chart", t_exit=0.0, state=z0,
                              indices=np.flatnonzero(viol > 0))
    if t_eval is None:
        t_eval = np.array([0.0, t_final])
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size > 1 and np.any(np.diff(t_eval) * np.sign(t_final or 1.0) <= 0):
        raise ValueError("t_eval must be strictly monotone in the direction of integration")

    def rhs(t, y):
        return S.vector_field(y)

    try:
        if method == "dp54":
            out, stats, yd_max = _dp54(rhs, 0.0, z0, t_final, tol, t_eval, box)
        else:
            out, stats, yd_max = _gbs8(rhs, 0.0, z0, t_final, steps, t_eval, box)
    except DomainExitError as exc:
        if exc.trajectory is not None:
            ts, zs, st = exc.trajectory
            exc.trajectory = [_make_traj(S, ts, zs[:, k], st, energy) for k in range(z0.shape[0])]
        raise
    trajs = []
    for k in range(z0.shape[0]):
        tr = _make_traj(S, t_eval, out[:, k], stats, energy)
        tr.yd_max = float(max(yd_max[k], np.max(np.abs(tr.z[:, -1]), initial=0.0)))
        trajs.append(tr)
    return trajs


def _make_traj(S, t, z, stats, energy):
    e = S.value(z) if energy and len(z) else np.full(len(z), np.nan)
    return Trajectory(t=np.asarray(t, dtype=float).copy(), z=np.asarray(z).copy(), energy=e, stats=stats)


def integrate(S: SuspendedHamiltonian, z0, t_final: float = 1.0, tol: float = 1e-10,
              t_eval: Sequence[float] | None = None, method: str = "dp54", steps: int = 64,
              box: ChartBox | None = None) -> Trajectory:
    """Integrate ``dz/dt = J grad H(z)`` from a single initial point."""
    z0 = np.asarray(z0, dtype=float)
    if z0.ndim != 1:
        raise ValueError("integrate takes one point; use integrate_batch for several")
    return integrate_batch(S, z0[None], t_final, tol, t_eval, method, steps, box)[0]


def section_start(S: SuspendedHamiltonian, w) -> np.ndarray:
    """Lift points of ``R^(2d-2)`` onto ``S_0 = {x_d = y_d = 0}``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return S.join(w, np.zeros(w.shape[0]), np.zeros(w.shape[0]))


def time_one_section_map(S: SuspendedHamiltonian, w, tol: float = 1e-10, method: str = "dp54",
                         steps: int = 64, target: Callable | None = None):
    """Evaluate ``Pi o phi^1`` on ``S_0`` and compare with the prescribed map.

    ``w`` is one point of ``R^(2d-2)`` (returns a :class:`SectionRecord`) or a
    stack (returns a list).  Trajectories are confined to the plateau
    ``|y_d| <= nu rho`` of the energy cutoff; leaving it raises
    :class:`DomainExitError`.  ``target`` defaults to the map generated by
    the isotopy's perturbation.
    """
    w_arr = np.asarray(w, dtype=float)
    single = w_arr.ndim == 1
    w2 = np.atleast_2d(w_arr)
    box = ChartBox.for_hamiltonian(S, plateau=True)
    trajs = integrate_batch(S, section_start(S, w2), 1.0, tol, method=method, steps=steps, box=box,
                            energy=False)
    if target is None:
        P = S.isotopy.perturbation

        def target(v):
            return map_from_generator(P, v)

    expected = np.atleast_2d(target(w2))
    records = []
    for k, tr in enumerate(trajs):
        end = tr.final
        out_w, xd, yd = S.split(end)
        out_w = out_w[0]
        records.append(SectionRecord(
            input=w2[k].copy(),
            output=out_w,
            xd_end=float(xd[0]),
            yd_end=float(yd[0]),
            excursion=tr.yd_max,
            residual=float(np.linalg.norm(out_w - expected[k])),
            target=expected[k],
        ))
    return records[0] if single else records


def section_map_jacobian(S: SuspendedHamiltonian, w, h: float = 1e-5, tol: float = 1e-10) -> np.ndarray:
    """Central-difference Jacobians of ``Pi o phi^1`` at points ``w`` (N, 2d-2).

    All perturbed starts are integrated in one stacked batch so that they
    share a step sequence.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    N, m = w.shape
    eye = np.eye(m)
    starts = np.concatenate([w[:, None, :] + h * eye[None], w[:, None, :] - h * eye[None]], axis=1)
    box = ChartBox.for_hamiltonian(S, plateau=True)
    trajs = integrate_batch(S, section_start(S, starts.reshape(-1, m)), 1.0, tol, box=box, energy=False)
    ends = S.split(np.stack([tr.final for tr in trajs]))[0].reshape(N, 2 * m, m)
    return np.transpose((ends[:, :m] - ends[:, m:]) / (2 * h), (0, 2, 1))


def section_symplectic_defect(S: SuspendedHamiltonian, w, h: float = 1e-5, tol: float = 1e-10) -> np.ndarray:
    return symplectic_defect(section_map_jacobian(S, w, h, tol))


def yd_excursion(obj) -> float:
    """Largest ``|y_d|`` seen by a trajectory, section record, or list of either.

    A :class:`DomainExitError` yields the ``|y_d|`` of its exit state, which
    for a plateau or chart exit is the limit that was reached.
    """
    if isinstance(obj, (list, tuple)):
        return max((yd_excursion(o) for o in obj), default=0.0)
    if isinstance(obj, SectionRecord):
        return float(obj.excursion)
    if isinstance(obj, Trajectory):
        return float(max(obj.yd_max, np.max(np.abs(obj.z[:, -1]), initial=0.0)))
    if isinstance(obj, DomainExitError):
        state = np.atleast_2d(obj.state)
        idx = obj.indices if obj.indices is not None else slice(None)
        return float(np.max(np.abs(state[idx, -1])))
    raise TypeError(f"cannot take a y_d excursion of {type(obj).__name__}")


# ---------------------------------------------------------------------------
# closed-form flow


def closed_form_flow(S: SuspendedHamiltonian, z, t: float, nodes: int = 24, panels: int = 4) -> np.ndarray:
    """The flow on the energy plateau written through the isotopy.

    For ``x_d`` and ``x_d + t`` in ``[0, 1]`` and ``|y_d|`` on the plateau the
    spatial part is ``g_{x_d+t} o g_{x_d}^{-1}``, ``x_d`` advances by ``t`` and
    ``y_d`` decreases by the integral of ``dK/dalpha`` along the spatial
    orbit.  The integral is taken over the part of ``[x_d, x_d+t]`` where
    ``K`` can be nonzero, by composite Gauss-Legendre.
    """
    z_arr = np.asarray(z, dtype=float)
    single = z_arr.ndim == 1
    z2 = np.atleast_2d(z_arr)
    w, xd, yd = S.split(z2)
    if np.any(xd < 0) or np.any(xd + t > 1.0 + 1e-12) or np.any(xd > 1.0) or t < 0:
        raise ValueError("closed_form_flow needs x_d and x_d + t in [0, 1]")
    if np.any(np.abs(yd) > S.nu * S.rho):
        raise ValueError("closed_form_flow needs |y_d| on the plateau of the energy cutoff")
    F = S.isotopy
    w0 = F.inverse(xd, w)
    w_end = F.eval(xd + t, w0)
    # K_alpha vanishes outside (0, xi)
    lo = np.clip(xd, 0.0, F.xi)
    hi = np.clip(xd + t, 0.0, F.xi)
    x_ref, w_ref = gauss_legendre(nodes, 0.0, 1.0)
    frac = (np.arange(panels)[:, None] + x_ref[None, :]).ravel() / panels
    wts = np.tile(w_ref, panels) / panels
    alphas = lo[:, None] + (hi - lo)[:, None] * frac[None, :]  # (N, M)
    N, M = alphas.shape
    pts = F.eval(alphas.ravel(), np.repeat(w0, M, axis=0))
    kdot = S.K_alpha_derivative(alphas.ravel(), pts).reshape(N, M)
    drop = (hi - lo) * (kdot @ wts)
    out = S.join(w_end, xd + t, yd - drop)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# CSV export


def write_trajectory_csv(path, traj: Trajectory):
    return atomic_write_csv(path, traj.header(), traj.rows())


def write_sections_csv(path, records: Sequence[SectionRecord]):
    if not records:
        raise ValueError("no section records to write")
    half_dim = records[0].input.size // 2
    return atomic_write_csv(path, SectionRecord.header(half_dim), (r.row() for r in records))
