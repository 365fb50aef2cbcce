"""Closed-form generating perturbations ``V = eps * p(x', y) * chi(|(x', y)|)``.

``p`` is a polynomial in the ``2n`` variables ``(x'_1..x'_n, y_1..y_n)`` and
``chi`` an optional radial cutoff built from the energy bump profile, so
value, gradient and Hessian are all available in closed form.
"""

from __future__ import annotations

import itertools
import numpy as np

from .core_numerics import BumpProfile, GridDomain, radial_cutoff

FAMILIES = ("linear-shear", "cubic", "random-poly")


class PolynomialGenerator:
    """``eps * sum_j c_j z^e_j`` times an optional radial cutoff.

    Monomials and their first and second partials are compiled once into
    exponent tables so evaluation needs only integer power lookups.
    """

    def __init__(self, half_dim: int, terms: tuple, eps: float, cutoff: BumpProfile | None = None):
        self.half_dim = half_dim
        self.terms = tuple(terms)
        self.eps = float(eps)
        self.cutoff = cutoff
        m = 2 * half_dim
        E = np.array([e for _, e in self.terms], dtype=int).reshape(-1, m)
        c = np.array([c for c, _ in self.terms], dtype=float)
        eye = np.eye(m, dtype=int)
        E1 = np.maximum(E[None] - eye[:, None, :], 0)  # (m, T, m)
        c1 = c[None] * E.T  # (m, T)
        E2 = np.maximum(E1[:, None] - eye[None, :, None, :], 0)  # (m, m, T, m)
        c2 = c1[:, None, :] * np.transpose(E1, (0, 2, 1))  # (m, m, T): c E_i (E_i - 1 or E_j)
        self._tables = (E, c, E1, c1, E2, c2)
        self._degree = int(E.max(initial=0))

    def replace_eps(self, eps: float) -> "PolynomialGenerator":
        return PolynomialGenerator(self.half_dim, self.terms, eps, self.cutoff)

    def _mono(self, pw, E):
        out = pw[E[..., 0], :, 0]
        for j in range(1, E.shape[-1]):
            out = out * pw[E[..., j], :, j]
        return out  # (..., N)

    def _poly(self, z: np.ndarray, order: int):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        E, c, E1, c1, E2, c2 = self._tables
        pw = np.empty((self._degree + 1,) + z.shape)
        pw[0] = 1.0
        for k in range(1, self._degree + 1):
            pw[k] = pw[k - 1] * z
        val = c @ self._mono(pw, E)
        grad = np.einsum("it,itn->ni", c1, self._mono(pw, E1))
        hess = np.einsum("ijt,ijtn->nij", c2, self._mono(pw, E2)) if order >= 2 else None
        return val, grad, hess

    def evaluate(self, z, order: int = 2):
        """``(V, grad V, hess V)``; the Hessian is ``None`` when ``order < 2``."""
        p, dp, hp = self._poly(z, order)
        if self.cutoff is None:
            return self.eps * p, self.eps * dp, None if hp is None else self.eps * hp
        c, dc, hc = radial_cutoff(self.cutoff, z, order)
        val = p * c
        grad = dp * c[:, None] + p[:, None] * dc
        hess = None
        if order >= 2:
            hess = (
                hp * c[:, None, None]
                + dp[:, :, None] * dc[:, None, :]
                + dc[:, :, None] * dp[:, None, :]
                + p[:, None, None] * hc
            )
            hess = self.eps * hess
        return self.eps * val, self.eps * grad, hess

    def value(self, z):
        return self.evaluate(z, 0)[0]

    def grad(self, z):
        return self.evaluate(z, 1)[1]

    def hess(self, z):
        return self.evaluate(z, 2)[2]

    def grad_hess(self, z):
        _, g, h = self.evaluate(z, 2)
        return g, h

    @property
    def support_radius(self) -> float:
        return np.inf if self.cutoff is None else self.cutoff.rho


def _exponent(n: int, **powers) -> tuple:
    e = [0] * (2 * n)
    for key, p in powers.items():
        kind, idx = key[0], int(key[1:])
        e[idx if kind == "x" else n + idx] += p
    return tuple(e)


def linear_shear_terms(n: int) -> tuple:
    """``<x', y>``: the generator of ``(x, y) -> (x/(1+eps), (1+eps) y)``."""
    return tuple((1.0, _exponent(n, **{f"x{i}": 1, f"y{i}": 1})) for i in range(n))


def cubic_terms(n: int) -> tuple:
    """``sum_i x'_i^3 / 3 + x'_i y_i^2``."""
    terms = []
    for i in range(n):
        terms.append((1.0 / 3.0, _exponent(n, **{f"x{i}": 3})))
        terms.append((1.0, _exponent(n, **{f"x{i}": 1, f"y{i}": 2})))
    return tuple(terms)


def random_poly_terms(n: int, seed: int, n_terms: int = 6) -> tuple:
    """Seeded monomials of degree 2..4 with coefficients summing to 1 in absolute value.

    No constant or linear monomials: the resulting map fixes the origin and
    ``V`` vanishes there.
    """
    rng = np.random.default_rng(seed)
    monomials = [
        e for e in itertools.product(range(5), repeat=2 * n) if 2 <= sum(e) <= 4
    ]
    pick = rng.choice(len(monomials), size=min(n_terms, len(monomials)), replace=False)
    coefs = rng.uniform(-1.0, 1.0, size=pick.size)
    coefs /= np.sum(np.abs(coefs))
    return tuple((float(c), tuple(int(v) for v in monomials[k])) for c, k in zip(coefs, sorted(pick)))


def build_polynomial(family: str, half_dim: int, eps: float, rho: float = 1.0, nu: float = 0.5,
                     cutoff_radius: float | None = None, seed: int = 0) -> PolynomialGenerator:
    if family == "linear-shear":
        return PolynomialGenerator(half_dim, linear_shear_terms(half_dim), eps, None)
    cutoff = BumpProfile.energy(nu=nu, rho=cutoff_radius or rho)
    if family == "cubic":
        return PolynomialGenerator(half_dim, cubic_terms(half_dim), eps, cutoff)
    if family == "random-poly":
        return PolynomialGenerator(half_dim, random_poly_terms(half_dim, seed), eps, cutoff)
    raise ValueError(f"unknown generator family {family!r}; choose from {FAMILIES}")


def default_measure_points(dim: int) -> int:
    """Grid density for measuring generator sizes: about 4e4 points in any dimension."""
    return max(5, min(61, int(round(40_000 ** (1.0 / dim)))))


def measure_c1(grad, hess, dim: int, radius: float, points_per_axis: int | None = None) -> float:
    """``max(sup|grad|, sup|hess|)`` sampled on the closed ball of ``radius``."""
    ppa = points_per_axis or default_measure_points(dim)
    pts = GridDomain(dim, radius, ppa, fd_factors=(0.0, 0.0, 0.0)).points()
    g = np.asarray(grad(pts))
    h = np.asarray(hess(pts))
    return float(max(np.max(np.abs(g), initial=0.0), np.max(np.abs(h), initial=0.0)))
