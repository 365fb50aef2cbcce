"""The autonomous suspended Hamiltonian on ``R^(2d)``.

Coordinates are ordered ``(x_1..x_{d-1}, x_d, y_1..y_{d-1}, y_d)``.  The
isotopy parameter becomes the position ``x_d`` and its conjugate ``y_d``
plays the part of an energy:

    H(x, x_d, y, y_d) = y_d + K_{x_d}(x, y) * l~(y_d)

where ``K_alpha`` is the Hamiltonian of the isotopy's vector field,
obtained as a line integral from the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .core_numerics import (
    BumpProfile,
    GridDomain,
    derivative_sups,
    bump_derivatives,
    eval_bump,
    gauss_legendre,
)
from .errors import QuadratureError
from .isotopy import IsotopyFamily, map_from_generator

QUAD_CHECK_TOL = 1e-9


@dataclass(frozen=True)
class SuspendedHamiltonian:
    isotopy: IsotopyFamily
    energy: BumpProfile = BumpProfile.energy(0.5, 1.0)
    quad_nodes: int = 32
    alpha_step: float = 1e-5

    @property
    def half_dim(self) -> int:
        return self.isotopy.half_dim

    @property
    def dimension(self) -> int:
        return 2 * (self.half_dim + 1)

    @property
    def nu(self) -> float:
        return self.energy.nu

    @property
    def rho(self) -> float:
        return self.energy.rho

    @cached_property
    def exterior_radius(self) -> float:
        """Radius beyond which ``K`` is exactly zero, or ``inf`` if unknown.

        Up to a constant ``K_alpha = -l'(alpha) V o G``, and the line integral
        fixes ``K_alpha(0) = 0``.  When ``V`` has compact support and
        ``V(0) = 0`` the constant vanishes, so ``K`` is zero wherever ``V`` is;
        the quadrature only reproduces that to its own accuracy.
        """
        P = self.isotopy.perturbation
        if not P.kinks or P.value is None:
            return math.inf
        if float(P.value(np.zeros((1, P.dimension)))[0]) != 0.0:
            return math.inf
        return float(P.kinks[-1])

    # -- coordinates -------------------------------------------------------

    def split(self, z):
        """``(x, y) in R^(2d-2)``, ``x_d`` and ``y_d`` for points of shape (N, 2d)."""
        n = self.half_dim
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.hstack([z[:, :n], z[:, n + 1 : 2 * n + 1]]), z[:, n], z[:, 2 * n + 1]

    def join(self, w, xd, yd):
        n = self.half_dim
        w = np.atleast_2d(w)
        return np.hstack([w[:, :n], np.asarray(xd, float).reshape(-1, 1), w[:, n:], np.asarray(yd, float).reshape(-1, 1)])

    def _panels(self, w):
        # split the ray [0, 1] where |s w| crosses the cutoff's transition
        # radii; the integrand is only C-infinity (not analytic) there
        r = np.linalg.norm(w, axis=1)
        breaks = []
        for radius in self.isotopy.perturbation.kinks:
            with np.errstate(divide="ignore"):
                breaks.append(np.where(r > radius, radius / np.where(r > 0, r, 1.0), 1.0))
        return np.stack([np.zeros_like(r)] + breaks + [np.ones_like(r)], axis=1)

    def _line_integral(self, alpha, w, nodes):
        n_pts = w.shape[0]
        if n_pts == 0:
            return np.zeros(0)
        edges = self._panels(w)
        kinked = bool(self.isotopy.perturbation.kinks)
        n_panels = edges.shape[1] - 1
        s_parts, wt_parts, idx_parts = [], [], []
        for p in range(n_panels):
            lo, hi = edges[:, p], edges[:, p + 1]
            live = hi > lo
            if kinked and p == n_panels - 1:
                live &= lo >= 1.0  # beyond the support V vanishes identically
            if not np.any(live):
                continue
            # the inner panel sees an analytic integrand and needs fewer nodes
            k = max(8, nodes // 2) if (kinked and p == 0) else nodes
            x_ref, w_ref = gauss_legendre(k, 0.0, 1.0)
            lo, hi = lo[live], hi[live]
            s_parts.append((lo[:, None] + (hi - lo)[:, None] * x_ref).ravel())
            wt_parts.append(((hi - lo)[:, None] * w_ref).ravel())
            idx_parts.append(np.repeat(np.flatnonzero(live), k))
        if not s_parts:
            return np.zeros(n_pts)
        s_all = np.concatenate(s_parts)
        idx = np.concatenate(idx_parts)
        X = self.isotopy.vector_field(alpha[idx], s_all[:, None] * w[idx])
        h = self.half_dim
        rot = np.hstack([w[:, h:], -w[:, :h]])  # (y, -x)
        integrand = np.einsum("mk,mk->m", X, rot[idx])
        return np.bincount(idx, weights=np.concatenate(wt_parts) * integrand, minlength=n_pts)

    def K(self, alpha, w, check: bool = False):
        """``K_alpha(w)`` for points ``w`` of shape (N, 2d-2) and scalar or per-point ``alpha``."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        a = np.broadcast_to(np.asarray(alpha, dtype=float), (w.shape[0],))
        out = np.zeros(w.shape[0])
        act = self.isotopy.profile(a, 1) != 0.0
        if math.isfinite(self.exterior_radius):
            act &= np.linalg.norm(w, axis=1) < self.exterior_radius
        if not np.any(act):
            return out
        val = self._line_integral(a[act], w[act], self.quad_nodes)
        if check:
            fine = self._line_integral(a[act], w[act], 2 * self.quad_nodes)
            err = np.abs(fine - val)
            if np.any(err > QUAD_CHECK_TOL * np.maximum(1.0, np.abs(fine))):
                raise QuadratureError(f"line integral not converged (node doubling changed it by {err.max():.3e})")
        out[act] = val
        return out

    def K_alpha_derivative(self, alpha, w):
        """``dK/dalpha`` by central differences with one Richardson step."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        a = np.broadcast_to(np.asarray(alpha, dtype=float), (w.shape[0],))
        out = np.zeros(w.shape[0])
        h = self.alpha_step
        prof = self.isotopy.profile
        # K_alpha vanishes identically unless alpha is in (0, xi)
        act = (a > -h) & (a < prof.xi + h)
        if not np.any(act):
            return out
        aa, ww = a[act], w[act]
        shifts = np.array([h, -h, h / 2, -h / 2])
        stacked = self.K(np.concatenate([aa + s for s in shifts]), np.tile(ww, (4, 1)))
        kp, km, kp2, km2 = stacked.reshape(4, -1)
        coarse = (kp - km) / (2 * h)
        fine = (kp2 - km2) / h
        out[act] = (4.0 * fine - coarse) / 3.0
        return out

    # -- Hamiltonian -------------------------------------------------------

    def value(self, z):
        w, xd, yd = self.split(z)
        lt = eval_bump(self.energy, yd, 0)
        out = yd.copy()
        act = lt != 0.0
        if np.any(act):
            out[act] += self.K(xd[act], w[act]) * lt[act]
        return out

    def perturbation_value(self, z):
        """``H - H_0``."""
        w, xd, yd = self.split(z)
        lt = eval_bump(self.energy, yd, 0)
        out = np.zeros_like(yd)
        act = lt != 0.0
        if np.any(act):
            out[act] = self.K(xd[act], w[act]) * lt[act]
        return out

    def _pieces(self, z):
        w, xd, yd = self.split(z)
        n = self.half_dim
        lt = eval_bump(self.energy, yd, 0)
        lt1 = eval_bump(self.energy, yd, 1)
        X = np.zeros_like(w)
        K = np.zeros_like(yd)
        Kdot = np.zeros_like(yd)
        act = lt != 0.0
        if np.any(act):
            X[act] = self.isotopy.vector_field(xd[act], w[act])
            Kdot[act] = self.K_alpha_derivative(xd[act], w[act])
        moving = lt1 != 0.0
        if np.any(moving):
            K[moving] = self.K(xd[moving], w[moving])
        return n, lt, lt1, X, K, Kdot

    def gradient(self, z):
        """Closed-form gradient; spatial part from ``grad K = -J X``."""
        n, lt, lt1, X, K, Kdot = self._pieces(z)
        dKdx, dKdy = -X[:, n:], X[:, :n]
        return np.hstack([
            lt[:, None] * dKdx,
            (lt * Kdot)[:, None],
            lt[:, None] * dKdy,
            (1.0 + lt1 * K)[:, None],
        ])

    def vector_field(self, z):
        """``J grad H`` assembled directly from the pieces of the gradient."""
        n, lt, lt1, X, K, Kdot = self._pieces(z)
        return np.hstack([
            lt[:, None] * X[:, :n],
            (1.0 + lt1 * K)[:, None],
            lt[:, None] * X[:, n:],
            (-lt * Kdot)[:, None],
        ])


def hamiltonian_K(S: SuspendedHamiltonian, alpha, w):
    """``K_alpha(w)`` with the node-doubling convergence check enabled."""
    w = np.asarray(w, dtype=float)
    out = S.K(alpha, w, check=True)
    return float(out[0]) if w.ndim == 1 else out


def suspended_value(S: SuspendedHamiltonian, z):
    z = np.asarray(z, dtype=float)
    out = S.value(z)
    return float(out[0]) if z.ndim == 1 else out


def suspended_gradient(S: SuspendedHamiltonian, z):
    z = np.asarray(z, dtype=float)
    out = S.gradient(z)
    return out[0] if z.ndim == 1 else out


def suspended_vector_field(S: SuspendedHamiltonian, z):
    z = np.asarray(z, dtype=float)
    out = S.vector_field(z)
    return out[0] if z.ndim == 1 else out


# ---------------------------------------------------------------------------
# norm report


@dataclass
class NormReport:
    """Estimated norms entering the C^2 bound on ``H - H_0``.

    ``constant`` is ``h_minus_h0_c2 / (bracket * g_minus_id_c1)``; it is
    ``None`` and ``degenerate`` is set when the denominator vanishes.
    """

    rho: float
    nu: float
    xi: float
    g_minus_id_c0: float
    g_minus_id_c1: float
    g_minus_id_c3: float
    grad_v_c0: float
    grad_v_c1: float
    g_alpha_minus_id_c1: float
    x_k_c0: float
    x_k_c1: float
    k_c0: float
    k_dot_c0: float
    h_minus_h0_c1: float
    h_minus_h0_c2: float
    bracket: float
    constant: float | None
    degenerate: bool
    extras: dict = field(default_factory=dict)

    def items(self):
        for key, value in asdict(self).items():
            if key == "extras":
                for k, v in sorted(value.items()):
                    yield k, v
            else:
                yield key, value

    def to_text(self) -> str:
        lines = []
        for key, value in self.items():
            lines.append(f"{key} {_fmt(value)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(dict(self.items()), indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> dict:
        out = {}
        for line in text.strip().splitlines():
            key, raw = line.split(" ", 1)
            out[key] = _parse(raw)
        return out


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str):
    if raw == "none":
        return None
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def bracket_factor(rho: float, g_c3: float) -> float:
    return 1.0 + rho + 1.0 / rho + rho * g_c3**2


def default_section_domain(S: SuspendedHamiltonian, points_per_axis: int = 41) -> GridDomain:
    return GridDomain(2 * S.half_dim, S.isotopy.perturbation.rho, points_per_axis)


def default_block_domain(S: SuspendedHamiltonian, points_per_axis: int = 17) -> GridDomain:
    """Box covering the part of the block where ``H`` can differ from ``H_0``.

    ``K_alpha`` vanishes for ``alpha`` outside ``(0, xi)``, so the ``x_d``
    extent is ``[0, xi]`` rather than ``[0, 1]``.
    """
    n = S.half_dim
    rho, xi = S.rho, S.isotopy.xi
    center = [0.0] * n + [xi / 2] + [0.0] * n + [0.0]
    widths = [S.isotopy.perturbation.rho] * n + [xi / 2] + [S.isotopy.perturbation.rho] * n + [rho]
    return GridDomain.box(center, widths, points_per_axis)


def energy_profile_sups(profile: BumpProfile, order: int, samples: int = 20_001) -> np.ndarray:
    """``sup |l~^(k)|`` for ``k = 0..order`` from dense sampling of the closed form."""
    t = np.linspace(-profile.rho, profile.rho, samples)
    return np.array([float(np.max(np.abs(d))) for d in bump_derivatives(profile, t, order)])


def product_sups(a_sups: np.ndarray, b_sups: np.ndarray) -> np.ndarray:
    """Per-order sups of ``f(u) g(v)`` over a product domain from those of ``f`` and ``g``.

    A partial of total order ``k`` splits as ``D^a f * D^b g`` with
    ``|a| + |b| = k``, and the sup of such a product over a product domain
    is the product of the sups.
    """
    out = np.zeros(min(len(a_sups), len(b_sups)))
    for k in range(out.size):
        out[k] = max(a_sups[i] * b_sups[k - i] for i in range(k + 1))
    return out


def norm_gap_report(S: SuspendedHamiltonian, section_domain: GridDomain | None = None,
                    block_domain: GridDomain | None = None, alpha_samples: int = 9) -> NormReport:
    """Estimate every norm in the C^2 bound and the implied constant.

    ``H - H_0 = K_{x_d}(x, y) l~(y_d)`` is a product of a function of
    ``(x, x_d, y)`` and one of ``y_d``, so its C^2 norm over the block is
    assembled from the C^2 sups of ``K`` on the ``(x, x_d, y)`` box of
    ``block_domain`` and the closed-form sups of ``l~``.
    """
    section_domain = section_domain or default_section_domain(S)
    block_domain = block_domain or default_block_domain(S)
    F = S.isotopy
    P = F.perturbation
    n = S.half_dim

    g_sups = derivative_sups(lambda w: map_from_generator(P, w, F.tol) - w, section_domain, 3)
    gv_sups = derivative_sups(P.grad, section_domain, 1)
    alphas = np.linspace(0.0, F.xi, alpha_samples)
    ga_c1 = max(
        float(np.max(derivative_sups(lambda w, a=a: F.eval(a, w) - w, section_domain, 1))) for a in alphas
    )

    def xk(z):  # X_K on (x, x_d, y) space
        w = np.hstack([z[:, :n], z[:, n + 1 :]])
        return F.vector_field(z[:, n], w)

    def kfun(z):
        w = np.hstack([z[:, :n], z[:, n + 1 :]])
        return S.K(z[:, n], w)

    # (x, x_d, y) box over which K and X_K can be nonzero
    xk_domain = GridDomain.box(
        [0.0] * n + [F.xi / 2] + [0.0] * n,
        [P.rho] * n + [F.xi / 2] + [P.rho] * n,
        block_domain.points_per_axis,
        fd_factors=block_domain.fd_factors,
    )
    xk_sups = derivative_sups(xk, xk_domain, 1)
    k_sups = derivative_sups(kfun, xk_domain, 2)
    pts = xk_domain.points()
    kdot_c0 = float(np.max(np.abs(S.K_alpha_derivative(pts[:, n], np.hstack([pts[:, :n], pts[:, n + 1 :]])))))
    h_sups = product_sups(k_sups, energy_profile_sups(S.energy, 2))
    g_c1 = float(np.max(g_sups[:2]))
    g_c3 = float(np.max(g_sups))
    h_c2 = float(np.max(h_sups))
    bracket = bracket_factor(S.rho, g_c3)
    denom = bracket * g_c1
    degenerate = not (denom > 0.0 and math.isfinite(denom))
    return NormReport(
        rho=S.rho,
        nu=S.nu,
        xi=F.xi,
        g_minus_id_c0=float(g_sups[0]),
        g_minus_id_c1=g_c1,
        g_minus_id_c3=g_c3,
        grad_v_c0=float(gv_sups[0]),
        grad_v_c1=float(np.max(gv_sups)),
        g_alpha_minus_id_c1=ga_c1,
        x_k_c0=float(xk_sups[0]),
        x_k_c1=float(np.max(xk_sups)),
        k_c0=float(k_sups[0]),
        k_dot_c0=kdot_c0,
        h_minus_h0_c1=float(np.max(h_sups[:2])),
        h_minus_h0_c2=h_c2,
        bracket=bracket,
        constant=None if degenerate else h_c2 / denom,
        degenerate=degenerate,
    )
