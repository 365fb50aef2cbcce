"""Symplectic isotopies generated by ``W_alpha(x', y) = <x', y> + l(alpha) V(x', y)``.

For each ``alpha`` the map ``g_alpha: (x, y) -> (x', y')`` is defined
implicitly by

    x  = x' + l(alpha) dV/dy (x', y)
    y' = y  + l(alpha) dV/dx'(x', y)

so ``g_0 = id`` and ``g_alpha = g`` once ``l(alpha) = 1``.  Only the gradient
and Hessian of ``V`` are ever needed.  Points live in ``R^(2n)`` ordered as
``(x_1..x_n, y_1..y_n)``; all evaluators accept a single point or a stack of
shape ``(N, 2n)`` and a scalar or per-point ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_numerics import (
    BumpProfile,
    GridDomain,
    batched_solve,
    NoConvergenceError,
    cs_norm,
    fd_jacobian,
    newton_batch,
    symplectic_defect,
    symplectic_matrix,
)
from .errors import ContractionError, InvalidMapError
from .generators import build_polynomial, measure_c1

CONTRACTION_LIMIT = 0.5


@dataclass(frozen=True)
class GeneratingPerturbation:
    """Gradient/Hessian evaluators of the generating perturbation ``V``.

    ``delta1`` is the measured C^1 size of ``grad V``; it must stay below
    :data:`CONTRACTION_LIMIT` for the implicit relations to be solvable.
    """

    half_dim: int
    grad: Callable
    hess: Callable
    rho: float
    delta1: float
    value: Callable | None = None
    name: str = ""
    kinks: tuple = ()  # radii where V is smooth but not analytic
    grad_hess: Callable | None = None  # optional fused evaluator

    def both(self, z):
        """``(grad V, hess V)`` from a single evaluation when possible."""
        if self.grad_hess is not None:
            return self.grad_hess(z)
        return self.grad(z), self.hess(z)

    @property
    def dimension(self) -> int:
        return 2 * self.half_dim

    def check_admissible(self) -> "GeneratingPerturbation":
        if not self.delta1 < CONTRACTION_LIMIT:
            raise ContractionError(
                f"generator {self.name or '<anonymous>'} has C^1 size {self.delta1:.4g} >= {CONTRACTION_LIMIT}"
            )
        return self

    @classmethod
    def zero(cls, half_dim: int = 1, rho: float = 1.0) -> "GeneratingPerturbation":
        m = 2 * half_dim
        return cls(
            half_dim=half_dim,
            grad=lambda z: np.zeros(np.atleast_2d(z).shape),
            hess=lambda z: np.zeros((np.atleast_2d(z).shape[0], m, m)),
            rho=rho,
            delta1=0.0,
            value=lambda z: np.zeros(np.atleast_2d(z).shape[0]),
            name="zero",
        )

    @classmethod
    def from_family(cls, family: str, eps: float, half_dim: int = 1, rho: float = 1.0, nu: float = 0.5,
                    cutoff_radius: float | None = None, seed: int = 0,
                    measure_points: int | None = None) -> "GeneratingPerturbation":
        """Build one of the bundled generator families and check its size.

        Families with a cutoff are rescaled so that the measured C^1 size of
        ``grad V`` on the support ball is exactly ``eps``.
        """
        radius = cutoff_radius or rho
        poly = build_polynomial(family, half_dim, 1.0, rho=rho, nu=nu, cutoff_radius=cutoff_radius, seed=seed)
        if poly.cutoff is not None:
            unit = measure_c1(poly.grad, poly.hess, 2 * half_dim, radius, measure_points)
            poly = poly.replace_eps(eps / unit)
        else:
            poly = poly.replace_eps(eps)
        delta1 = measure_c1(poly.grad, poly.hess, 2 * half_dim, radius, measure_points)
        return cls(
            half_dim=half_dim,
            grad=poly.grad,
            hess=poly.hess,
            rho=rho,
            delta1=delta1,
            value=poly.value,
            name=f"{family}(eps={eps:g})",
            kinks=() if poly.cutoff is None else (poly.cutoff.nu * radius, radius),
            grad_hess=poly.grad_hess,
        ).check_admissible()


def _prepare(alpha, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (z2.shape[0],)).copy()
    return a, z2, single


def _solve_forward(P: GeneratingPerturbation, scale: np.ndarray, z: np.ndarray, tol: float, max_iter: int):
    """Solve ``x = x' + scale * dV/dy(x', y)`` for ``x'``; returns ``(x', y)`` stacked."""
    n = P.half_dim
    x, y = z[:, :n], z[:, n:]
    xp = x.copy()
    act = scale != 0.0
    if np.any(act):
        s, xa, ya = scale[act][:, None], x[act], y[act]
        eye = np.eye(n)[None]

        def system(v):
            gr, he = P.both(np.hstack([v, ya]))
            return v + s * gr[:, n:] - xa, eye + s[:, :, None] * he[:, n:, :n]

        try:
            xp[act] = newton_batch(system, xa, tol=tol, max_iter=max_iter)
        except NoConvergenceError as exc:
            raise ContractionError(f"forward generating-function solve failed: {exc}") from exc
    return np.hstack([xp, y])


def _solve_backward(P: GeneratingPerturbation, scale: np.ndarray, zp: np.ndarray, tol: float, max_iter: int):
    """Solve ``y' = y + scale * dV/dx'(x', y)`` for ``y``; returns ``(x', y)`` stacked."""
    n = P.half_dim
    xp, yp = zp[:, :n], zp[:, n:]
    y = yp.copy()
    act = scale != 0.0
    if np.any(act):
        s, xa, ya = scale[act][:, None], xp[act], yp[act]
        eye = np.eye(n)[None]

        def system(v):
            gr, he = P.both(np.hstack([xa, v]))
            return v + s * gr[:, :n] - ya, eye + s[:, :, None] * he[:, :n, n:]

        try:
            y[act] = newton_batch(system, ya, tol=tol, max_iter=max_iter)
        except NoConvergenceError as exc:
            raise ContractionError(f"inverse generating-function solve failed: {exc}") from exc
    return np.hstack([xp, y])


def map_from_generator(P: GeneratingPerturbation, z, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """The symplectic map ``g = id - J grad V o G`` generated by ``<x', y> + V``."""
    _, z2, single = _prepare(1.0, z)
    G = _solve_forward(P, np.ones(z2.shape[0]), z2, tol, max_iter)
    out = z2 - P.grad(G) @ symplectic_matrix(P.half_dim).T
    return out[0] if single else out


@dataclass(frozen=True)
class IsotopyFamily:
    """``alpha -> g_alpha`` joining the identity to ``g``, with velocities and the
    generating time-dependent vector field ``X_alpha = (d/dalpha g_alpha) o g_alpha^-1``."""

    perturbation: GeneratingPerturbation
    profile: BumpProfile = BumpProfile.alpha(0.5)
    tol: float = 1e-12
    max_iter: int = 50

    @property
    def half_dim(self) -> int:
        return self.perturbation.half_dim

    @property
    def xi(self) -> float:
        return self.profile.xi

    def eval(self, alpha, z) -> np.ndarray:
        a, z2, single = _prepare(alpha, z)
        P = self.perturbation
        scale = self.profile(a, 0)
        G = _solve_forward(P, scale, z2, self.tol, self.max_iter)
        out = z2 - scale[:, None] * (P.grad(G) @ symplectic_matrix(P.half_dim).T)
        out[scale == 0.0] = z2[scale == 0.0]
        return out[0] if single else out

    def inverse(self, alpha, zp) -> np.ndarray:
        a, z2, single = _prepare(alpha, zp)
        P = self.perturbation
        n = P.half_dim
        scale = self.profile(a, 0)
        B = _solve_backward(P, scale, z2, self.tol, self.max_iter)
        out = B.copy()
        out[:, :n] = z2[:, :n] + scale[:, None] * P.grad(B)[:, n:]
        return out[0] if single else out

    def _velocity_at(self, scale, rate, G):
        # implicit differentiation of x = x' + l dV/dy(x', y) at fixed (x, y)
        P = self.perturbation
        n = P.half_dim
        grad, hess = P.both(G)
        A = np.eye(n)[None] + scale[:, None, None] * hess[:, n:, :n]
        try:
            with np.errstate(divide="raise", invalid="raise"):
                xdot = batched_solve(A, -rate[:, None] * grad[:, n:])
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise ContractionError(f"singular velocity system: {exc}") from exc
        ydot = rate[:, None] * grad[:, :n] + scale[:, None] * np.einsum("nij,nj->ni", hess[:, :n, :n], xdot)
        return np.hstack([xdot, ydot])

    def velocity(self, alpha, z) -> np.ndarray:
        """``d/dalpha g_alpha(z)`` at fixed ``z``."""
        a, z2, single = _prepare(alpha, z)
        out = np.zeros_like(z2)
        rate = self.profile(a, 1)
        act = rate != 0.0
        if np.any(act):
            scale = self.profile(a[act], 0)
            G = _solve_forward(self.perturbation, scale, z2[act], self.tol, self.max_iter)
            out[act] = self._velocity_at(scale, rate[act], G)
        return out[0] if single else out

    def vector_field(self, alpha, z) -> np.ndarray:
        """``X_alpha(z)``: the velocity of the isotopy at the point currently at ``z``."""
        a, z2, single = _prepare(alpha, z)
        out = np.zeros_like(z2)
        rate = self.profile(a, 1)
        act = rate != 0.0
        if np.any(act):
            scale = self.profile(a[act], 0)
            # the pre-image has the same G-coordinates (x', y) as its image
            G = _solve_backward(self.perturbation, scale, z2[act], self.tol, self.max_iter)
            out[act] = self._velocity_at(scale, rate[act], G)
        return out[0] if single else out


def isotopy_eval(F: IsotopyFamily, alpha, z):
    return F.eval(alpha, z)


def isotopy_inverse(F: IsotopyFamily, alpha, zp):
    return F.inverse(alpha, zp)


def isotopy_velocity(F: IsotopyFamily, alpha, z):
    return F.velocity(alpha, z)


def symplectic_vector_field(F: IsotopyFamily, alpha, z):
    return F.vector_field(alpha, z)


def fit_generating_gradient(g: Callable, rho: float, domain: GridDomain, tol: float = 1e-12,
                            max_iter: int = 50, fd_step: float = 1e-7) -> GeneratingPerturbation:
    """Recover ``grad V`` from a black-box symplectic map ``g`` near the identity.

    For a target ``(x', y)`` the equation ``pi_1 g(x, y) = x'`` is solved for
    ``x`` by Newton; then ``grad V(x', y) = J (g(x, y) - (x, y))``.  The
    Hessian is the symmetrised central-difference Jacobian of that gradient.
    """
    dim = domain.dimension
    if dim % 2:
        raise InvalidMapError("section maps act on an even-dimensional space")
    n = dim // 2

    def disp(z):
        return np.asarray(g(z)) - z

    size = cs_norm(disp, domain, 1)
    if not size < CONTRACTION_LIMIT:
        raise ContractionError(f"||g - id||_C1 = {size:.4g} is not below {CONTRACTION_LIMIT}")
    pts = domain.points()
    defect = float(np.max(symplectic_defect(fd_jacobian(g, pts, 1e-6)), initial=0.0))
    if defect > 1e-4:
        raise InvalidMapError(f"input map is not symplectic (Jacobian defect {defect:.3e})")
    J = symplectic_matrix(n)
    eye = np.eye(n)

    def solve_x(target):
        target = np.atleast_2d(np.asarray(target, dtype=float))
        xt, y = target[:, :n], target[:, n:]

        def residual(x):
            return np.asarray(g(np.hstack([x, y])))[:, :n] - xt

        def system(x):
            cols = [
                (residual(x + fd_step * e) - residual(x - fd_step * e)) / (2 * fd_step)
                for e in eye
            ]
            return residual(x), np.stack(cols, axis=2)

        try:
            x = newton_batch(system, xt, tol=tol, max_iter=max_iter)
        except NoConvergenceError as exc:
            raise ContractionError(f"cannot invert G = (pi_1 g, pi_2): {exc}") from exc
        return np.hstack([x, y])

    def grad(target):
        z = solve_x(target)
        return (np.asarray(g(z)) - z) @ J.T

    def hess(target):
        jac = fd_jacobian(grad, target, 1e-5)
        return 0.5 * (jac + np.transpose(jac, (0, 2, 1)))

    delta1 = cs_norm(grad, domain, 1)
    return GeneratingPerturbation(
        half_dim=n, grad=grad, hess=hess, rho=rho, delta1=delta1, name="fitted"
    ).check_admissible()
