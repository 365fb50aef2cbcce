"""Shared numerical primitives.

Smooth bump profiles with exact flat regions, grid-based C^s norm
estimation by central finite differences, Faa di Bruno coefficients (with an
independent set-partition enumerator to check them), Newton solvers and
Gauss-Legendre nodes.

All evaluators are vectorised: points are passed as arrays of shape
``(N, dim)`` and scalar parameters broadcast against the leading axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    NoConvergenceError,
    ResolutionError,
    UnsupportedOrderError,
    WrongProfileError,
)

ALPHA = "alpha"
ENERGY = "energy"

MAX_BUMP_ORDER = 3
MAX_CS_ORDER = 3
MAX_FDB_ORDER = 8
# sup|l~'| equals its budget 2/((1-nu) rho) exactly, so compare up to rounding
CERT_ROUNDING = 1e-12


# ---------------------------------------------------------------------------
# bump profiles


@dataclass(frozen=True)
class BumpProfile:
    """A C-infinity cutoff.

    ``kind="alpha"`` is the rising step ``l``: 0 for ``t <= 0``, 1 for
    ``t >= xi`` and strictly increasing in between.  ``kind="energy"`` is the
    even plateau ``l~``: 1 for ``|t| <= nu*rho``, 0 for ``|t| >= rho``.
    """

    kind: str = ALPHA
    xi: float = 0.5
    nu: float = 0.5
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in (ALPHA, ENERGY):
            raise WrongProfileError(f"unknown bump kind {self.kind!r}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu}")
        if not self.rho > 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @classmethod
    def alpha(cls, xi: float = 0.5) -> "BumpProfile":
        return cls(kind=ALPHA, xi=xi)

    @classmethod
    def energy(cls, nu: float = 0.5, rho: float = 1.0) -> "BumpProfile":
        return cls(kind=ENERGY, nu=nu, rho=rho)

    @property
    def width(self) -> float:
        """Length of the transition interval."""
        return self.xi if self.kind == ALPHA else (1.0 - self.nu) * self.rho

    def __call__(self, t, order: int = 0):
        return eval_bump(self, t, order)


def _smoothstep_all(u: np.ndarray, max_order: int) -> list:
    # s(u) = h(u) / (h(u) + h(1-u)) with h(t) = exp(-1/t), written as the
    # logistic function of q(u) = 1/(1-u) - 1/u and differentiated with the
    # chain rule up to third order.  Returns [s, s', ..., s^(max_order)].
    outs = [np.zeros_like(u) for _ in range(max_order + 1)]
    outs[0][u >= 1.0] = 1.0
    inside = (u > 0.0) & (u < 1.0)
    if not np.any(inside):
        return outs
    v = u[inside]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        q = 1.0 / (1.0 - v) - 1.0 / v
        sig = expit(q)
        outs[0][inside] = sig
        if max_order == 0:
            return outs
        sig1 = sig * expit(-q)
        # deep in the tails sig1 underflows to 0 while powers of q' overflow
        dead = sig1 == 0.0
        a, b = 1.0 / v, 1.0 / (1.0 - v)
        q1 = a * a + b * b
        vals = [sig1 * q1]
        if max_order >= 2:
            sig2 = sig1 * (1.0 - 2.0 * sig)
            q2 = 2.0 * (b**3 - a**3)
            vals.append(sig2 * q1 * q1 + sig1 * q2)
        if max_order >= 3:
            sig3 = sig1 * (1.0 - 6.0 * sig1)
            q3 = 6.0 * (a**4 + b**4)
            vals.append(sig3 * q1**3 + 3.0 * sig2 * q1 * q2 + sig1 * q3)
        for k, val in enumerate(vals, start=1):
            outs[k][inside] = np.where(dead, 0.0, val)
    return outs


def _smoothstep(u: np.ndarray, order: int) -> np.ndarray:
    return _smoothstep_all(u, order)[order]


def bump_derivatives(profile: "BumpProfile", t, max_order: int) -> list:
    """``[b(t), b'(t), ..., b^(max_order)(t)]`` for an array ``t`` sharing one evaluation."""
    t = np.asarray(t, dtype=float)
    if profile.kind == ALPHA:
        w = profile.xi
        outs = _smoothstep_all(t / w, max_order)
        return [o / w**k for k, o in enumerate(outs)]
    w = profile.width
    outs = _smoothstep_all((profile.rho - np.abs(t)) / w, max_order)
    sgn = -np.sign(t)
    return [o / w**k * (sgn if k % 2 else 1.0) for k, o in enumerate(outs)]


def eval_bump(profile: BumpProfile, t, order: int = 0):
    """Value (``order=0``) or derivative of a bump profile at ``t``.

    Returns a float for scalar ``t`` and an array otherwise.  On the flat
    regions the value is exactly 0 or 1 and every derivative exactly 0.
    """
    if not isinstance(order, (int, np.integer)) or order < 0 or order > MAX_BUMP_ORDER:
        raise UnsupportedOrderError(f"bump derivatives are available up to order {MAX_BUMP_ORDER}, got {order}")
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if profile.kind == ALPHA:
        w = profile.xi
        res = _smoothstep(t_arr / w, order) / w**order
    else:
        w = profile.width
        u = (profile.rho - np.abs(t_arr)) / w
        res = _smoothstep(u, order) / w**order
        if order % 2 == 1:
            # du/dt = -sign(t)/w; the plateau covers t = 0 so sign(0) is harmless
            res = -np.sign(t_arr) * res
    return float(res[0]) if scalar else res


@dataclass(frozen=True)
class BumpCertificate:
    """Dense-sample sup estimates of ``|l~'|`` and ``|l~''|`` against their budgets."""

    d1_sup: float
    d2_sup: float
    d1_bound: float
    d2_bound: float
    d2_floor: float
    samples: int

    @property
    def d1_pass(self) -> bool:
        return self.d1_sup <= self.d1_bound * (1.0 + CERT_ROUNDING)

    @property
    def d2_pass(self) -> bool:
        return self.d2_sup <= self.d2_bound * (1.0 + CERT_ROUNDING)

    @property
    def passed(self) -> bool:
        return self.d1_pass and self.d2_pass


def certify_bump_norms(profile: BumpProfile, samples: int = 10_000) -> BumpCertificate:
    """Sample the energy profile densely and compare its derivative sups to
    ``2/((1-nu) rho)`` and ``4/((1-nu) rho^2)``.

    Derivatives vanish identically on the flat regions, so the samples are
    spread over the two transition intervals only; this keeps the estimate
    sharp however thin the transition is.  ``d2_floor = 4/((1-nu) rho)^2`` is
    the smallest value ``sup|l~''|`` can take for *any* smooth step of that
    width, reported for comparison with ``d2_bound``.
    """
    if profile.kind != ENERGY:
        raise WrongProfileError("bump certification applies to the energy profile only")
    if samples < 1000:
        raise ValueError("certification needs at least 1000 samples")
    w = profile.width
    half = np.linspace(profile.nu * profile.rho, profile.rho, samples // 2)
    t = np.concatenate([-half[::-1], half])
    d1 = float(np.max(np.abs(eval_bump(profile, t, 1))))
    d2 = float(np.max(np.abs(eval_bump(profile, t, 2))))
    return BumpCertificate(
        d1_sup=d1,
        d2_sup=d2,
        d1_bound=2.0 / w,
        d2_bound=4.0 / ((1.0 - profile.nu) * profile.rho**2),
        d2_floor=4.0 / w**2,
        samples=int(t.size),
    )


def radial_cutoff(profile: BumpProfile, z: np.ndarray, order: int = 2):
    """Value, gradient and Hessian of ``z -> l~(|z|)`` for points ``z`` of shape (N, m).

    The Hessian is ``None`` when ``order < 2``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    r = np.sqrt(np.einsum("ni,ni->n", z, z))
    n, m = z.shape
    val, d1, *rest = bump_derivatives(profile, r, max(1, min(order, 2)))
    grad = np.zeros_like(z)
    hess = np.zeros((n, m, m)) if order >= 2 else None
    moving = d1 != 0.0
    if np.any(moving):
        rm = r[moving]
        e = z[moving] / rm[:, None]
        grad[moving] = d1[moving][:, None] * e
        if order >= 2:
            outer = e[:, :, None] * e[:, None, :]
            eye = np.eye(m)[None]
            hess[moving] = rest[0][moving][:, None, None] * outer + (d1[moving] / rm)[:, None, None] * (eye - outer)
    return val, grad, hess


# ---------------------------------------------------------------------------
# sampling grids and C^s norms


@dataclass(frozen=True)
class GridDomain:
    """Regular sampling grid on a closed ball (or an axis-aligned box).

    ``fd_factors[k-1]`` times the axis scale is the finite-difference step
    used for derivatives of total order ``k``.  The axis scale is ``radius``
    for a ball and ``half_widths[i]`` for a box.
    """

    dimension: int
    radius: float = 1.0
    points_per_axis: int = 9
    center: tuple = ()
    half_widths: tuple | None = None
    fd_factors: tuple = (1e-3, 1e-2, 1e-2)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be at least 2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.dimension)
        if len(self.center) != self.dimension:
            raise ValueError("center has the wrong dimension")
        if self.half_widths is not None and len(self.half_widths) != self.dimension:
            raise ValueError("half_widths has the wrong dimension")
        if max(self.fd_factors) > 1.0 / self.points_per_axis:
            raise ResolutionError("finite-difference step exceeds radius / points_per_axis")

    @classmethod
    def box(cls, center: Sequence[float], half_widths: Sequence[float], points_per_axis: int = 7, **kw):
        return cls(
            dimension=len(center),
            radius=float(max(half_widths)),
            points_per_axis=points_per_axis,
            center=tuple(float(c) for c in center),
            half_widths=tuple(float(w) for w in half_widths),
            **kw,
        )

    @property
    def scales(self) -> np.ndarray:
        if self.half_widths is None:
            return np.full(self.dimension, float(self.radius))
        return np.asarray(self.half_widths, dtype=float)

    @property
    def h(self) -> float:
        """Largest finite-difference step used on this grid."""
        return float(max(self.fd_factors) * self.scales.max())

    def steps(self, order: int) -> np.ndarray:
        return self.fd_factors[order - 1] * self.scales

    def points(self) -> np.ndarray:
        axes = [c + np.linspace(-w, w, self.points_per_axis) for c, w in zip(self.center, self.scales)]
        pts = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
        if self.half_widths is None:
            keep = np.linalg.norm(pts - np.asarray(self.center), axis=1) <= self.radius * (1 + 1e-12)
            pts = pts[keep]
        return pts


_STENCILS = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
}


def multi_indices(dim: int, order: int) -> Iterator[tuple]:
    """All multi-indices of length ``dim`` and total order ``order``."""
    for combo in itertools.combinations_with_replacement(range(dim), order):
        sigma = [0] * dim
        for i in combo:
            sigma[i] += 1
        yield tuple(sigma)


def _as_2d_output(values: np.ndarray, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.reshape(n, -1)


def derivative_sups(F: Callable, domain: GridDomain, s: int) -> np.ndarray:
    """Per-order sup estimates ``M_k``, ``k = 0..s``, of the partials of ``F``.

    ``M_k`` is the max over components, multi-indices of order ``k`` and
    grid points of the central-difference estimate of the partial.  The step
    depends on the order only, so ``M_k`` does not depend on ``s``.
    """
    if not isinstance(s, (int, np.integer)) or s < 0 or s > MAX_CS_ORDER:
        raise ResolutionError(f"C^s norms are estimated for s <= {MAX_CS_ORDER}, got {s}")
    reach = {1: 1, 2: 1, 3: 2}
    spacing = domain.scales / domain.points_per_axis
    for k in range(1, s + 1):
        if np.any(reach[k] * domain.steps(k) > spacing + 1e-15):
            raise ResolutionError(f"order-{k} stencil does not fit between grid points")
    pts = domain.points()
    n = pts.shape[0]
    cache: dict = {}

    def at(offset: np.ndarray) -> np.ndarray:
        key = tuple(np.round(offset, 15))
        if key not in cache:
            cache[key] = _as_2d_output(F(pts + offset), n)
        return cache[key]

    dim = domain.dimension
    sups = np.zeros(s + 1)
    sups[0] = np.max(np.abs(at(np.zeros(dim)))) if n else 0.0
    for k in range(1, s + 1):
        h = domain.steps(k)
        best = 0.0
        for sigma in multi_indices(dim, k):
            axes = [i for i in range(dim) if sigma[i]]
            parts = [_STENCILS[sigma[i]] for i in axes]
            acc = None
            for combo in itertools.product(*[list(zip(*p)) for p in parts]):
                offset = np.zeros(dim)
                weight = 1.0
                for i, (off, wt) in zip(axes, combo):
                    offset[i] = off * h[i]
                    weight *= wt / h[i] ** sigma[i]
                term = weight * at(offset)
                acc = term if acc is None else acc + term
            best = max(best, float(np.max(np.abs(acc))))
        sups[k] = best
    return sups


def cs_norm(F: Callable, domain: GridDomain, s: int) -> float:
    """Estimated ``C^s`` norm of ``F`` on ``domain`` (max of :func:`derivative_sups`)."""
    return float(np.max(derivative_sups(F, domain, s)))


def fd_jacobian(F: Callable, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobians of ``F`` at points ``z`` (N, m); returns (N, k, m).

    ``F`` is called once on the ``2m`` shifted copies of ``z`` stacked along
    axis 0, so per-point parameters must be tiled ``2m`` times.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, m = z.shape
    shifted = np.concatenate([z + h * e for e in np.eye(m)] + [z - h * e for e in np.eye(m)])
    vals = np.asarray(F(shifted), dtype=float).reshape(2 * m, n, -1)
    jac = (vals[:m] - vals[m:]) / (2.0 * h)  # (m, N, k)
    return np.transpose(jac, (1, 2, 0))


def symplectic_matrix(n: int) -> np.ndarray:
    """The standard ``J = [[0, I], [-I, 0]]`` on ``R^(2n)``."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def symplectic_defect(jac: np.ndarray) -> np.ndarray:
    """Entrywise max of ``|Jac^T J Jac - J|`` for a stack of Jacobians (N, 2n, 2n)."""
    jac = np.asarray(jac, dtype=float)
    if jac.ndim == 2:
        jac = jac[None]
    J = symplectic_matrix(jac.shape[-1] // 2)
    prod = np.einsum("nji,jk,nkl->nil", jac, J, jac)
    return np.max(np.abs(prod - J), axis=(1, 2))


# ---------------------------------------------------------------------------
# combinatorics


@dataclass(frozen=True)
class FaaDiBrunoTable:
    order: int
    entries: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return dict(self.entries)

    @property
    def total(self) -> int:
        return sum(c for _, c in self.entries)


def _integer_partitions(r: int, largest: int) -> Iterator[list]:
    if r == 0:
        yield []
        return
    for part in range(min(r, largest), 0, -1):
        for rest in _integer_partitions(r - part, part):
            yield [part] + rest


def faa_di_bruno_table(r: int) -> FaaDiBrunoTable:
    """Multi-indices ``k`` with ``sum(i * k_i) = r`` and their coefficients
    ``r! / (k_1! ... k_r! 1!^k_1 ... r!^k_r)``."""
    if not isinstance(r, (int, np.integer)) or r < 1 or r > MAX_FDB_ORDER:
        raise UnsupportedOrderError(f"Faa di Bruno tables are provided for 1 <= r <= {MAX_FDB_ORDER}, got {r}")
    entries = []
    for parts in _integer_partitions(r, r):
        k = [0] * r
        for p in parts:
            k[p - 1] += 1
        denom = 1
        for i, ki in enumerate(k, start=1):
            denom *= math.factorial(ki) * math.factorial(i) ** ki
        entries.append((tuple(k), math.factorial(r) // denom))
    return FaaDiBrunoTable(order=r, entries=tuple(entries))


def set_partitions(items: Sequence) -> Iterator[list]:
    """Every partition of ``items`` into non-empty blocks."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [[first] + smaller[i]] + smaller[i + 1 :]
        yield [[first]] + smaller


def partition_profile_counts(r: int) -> dict:
    """Count set partitions of ``{1..r}`` by block-size profile ``k``."""
    counts: dict = {}
    for part in set_partitions(range(r)):
        k = [0] * r
        for block in part:
            k[len(block) - 1] += 1
        counts[tuple(k)] = counts.get(tuple(k), 0) + 1
    return counts


def bell_number(n: int) -> int:
    """Bell number via the Bell triangle."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


# ---------------------------------------------------------------------------
# solvers and quadrature


def newton_solve(
    residual: Callable,
    guess,
    jacobian: Callable | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
    fd_step: float = 1e-7,
):
    """Newton's method for ``residual(z) = 0`` on R^n (scalars allowed).

    Without ``jacobian`` a central-difference Jacobian with step ``fd_step``
    is used.  Raises :class:`NoConvergenceError` after ``max_iter`` steps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    z0 = np.asarray(guess, dtype=float)
    scalar = z0.ndim == 0
    z = np.atleast_1d(z0).copy()

    def res(v):
        return np.atleast_1d(np.asarray(residual(v[0] if scalar else v), dtype=float))

    r = res(z)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return float(z[0]) if scalar else z
        if jacobian is not None:
            jac = np.atleast_2d(np.asarray(jacobian(z[0] if scalar else z), dtype=float))
        else:
            cols = [(res(z + fd_step * e) - res(z - fd_step * e)) / (2 * fd_step) for e in np.eye(z.size)]
            jac = np.stack(cols, axis=1)
        try:
            z = z - np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError(f"singular Jacobian in Newton iteration: {exc}", float(np.max(np.abs(r))))
        r = res(z)
    if np.max(np.abs(r)) <= tol:
        return float(z[0]) if scalar else z
    raise NoConvergenceError(f"Newton did not converge in {max_iter} iterations", float(np.max(np.abs(r))))


def batched_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A[k] x[k] = b[k]`` for stacks of (n, n) systems; closed form for n <= 2."""
    n = A.shape[-1]
    if n == 1:
        return b / A[..., 0]
    if n == 2:
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        x0 = (A[..., 1, 1] * b[..., 0] - A[..., 0, 1] * b[..., 1]) / det
        x1 = (A[..., 0, 0] * b[..., 1] - A[..., 1, 0] * b[..., 0]) / det
        return np.stack([x0, x1], axis=-1)
    return np.linalg.solve(A, b[..., None])[..., 0]


def newton_batch(system: Callable, guess: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Vectorised Newton for independent systems stacked along axis 0.

    ``system`` maps (N, n) to the pair ``(residual (N, n), jacobian (N, n, n))``.
    One extra step is taken after every row meets ``tol`` so that results
    are accurate to rounding, which keeps finite differences of the solution
    map clean.
    """
    z = np.array(guess, dtype=float, copy=True)
    if z.size == 0:
        return z
    for _ in range(max_iter + 1):
        r, jac = system(z)
        done = np.max(np.abs(r)) <= tol
        try:
            with np.errstate(divide="raise", invalid="raise"):
                z = z - batched_solve(jac, r)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise NoConvergenceError(f"singular Jacobian in batched Newton: {exc}", float(np.max(np.abs(r))))
        if done:
            return z
    raise NoConvergenceError(f"batched Newton did not converge in {max_iter} iterations", float(np.max(np.abs(r))))


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0):
    """``n``-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def bisect_root(f: Callable, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Plain bisection for a sign change of ``f`` on ``[lo, hi]``."""
    flo = f(lo)
    if flo == 0:
        return lo
    if np.sign(flo) == np.sign(f(hi)):
        raise ValueError("bisection needs a sign change")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
