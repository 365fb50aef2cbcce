import numpy as np
import pytest
from conftest import linear_closed_forms
from hypothesis import given, settings
from hypothesis import strategies as st

from hamsuspend import (
    GeneratingPerturbation,
    IsotopyFamily,
    fit_generating_gradient,
    isotopy_eval,
    isotopy_inverse,
    isotopy_velocity,
    map_from_generator,
    symplectic_vector_field,
)
from hamsuspend.core_numerics import GridDomain, cs_norm, fd_jacobian, symplectic_defect
from hamsuspend.errors import ContractionError, InvalidMapError
from hamsuspend.generators import FAMILIES, build_polynomial, measure_c1

EPS = 0.1
LINEAR = GeneratingPerturbation.from_family("linear-shear", EPS)
CUBIC = GeneratingPerturbation.from_family("cubic", 0.05)
RANDOM = GeneratingPerturbation.from_family("random-poly", 0.05, seed=3)
F_LIN = IsotopyFamily(LINEAR)
F_CUB = IsotopyFamily(CUBIC)
F_RND = IsotopyFamily(RANDOM)


# -- generators --------------------------------------------------------------


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("half_dim", [1, 2])
def test_generator_derivatives_match_finite_differences(family, half_dim, rng):
    poly = build_polynomial(family, half_dim, 0.3, seed=1)
    z = rng.uniform(-1.1, 1.1, (100, 2 * half_dim))
    V, grad, hess = poly.evaluate(z)
    fd_g = fd_jacobian(poly.value, z, 1e-6)[:, 0, :]
    fd_h = fd_jacobian(poly.grad, z, 1e-6)
    assert np.max(np.abs(fd_g - grad)) < 1e-6
    assert np.max(np.abs(fd_h - hess)) < 1e-6
    assert np.max(np.abs(hess - np.transpose(hess, (0, 2, 1)))) < 1e-12
    g2, h2 = poly.grad_hess(z)
    assert np.array_equal(g2, grad) and np.array_equal(h2, hess)


@pytest.mark.parametrize("family", ["cubic", "random-poly"])
def test_cutoff_generators_have_compact_support(family, rng):
    P = GeneratingPerturbation.from_family(family, 0.2, rho=0.7, seed=2)
    v = rng.normal(size=(500, 2))
    v *= (0.7 * rng.uniform(1.0, 3.0, (500, 1))) / np.linalg.norm(v, axis=1, keepdims=True)
    assert np.all(P.grad(v) == 0.0)
    assert np.all(P.hess(v) == 0.0)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("eps", [0.01, 0.2, 0.45])
def test_generator_size_is_eps(family, eps):
    P = GeneratingPerturbation.from_family(family, eps, seed=1)
    assert P.delta1 == pytest.approx(eps, rel=1e-12)


def test_generator_size_measured_in_higher_dimension():
    P = GeneratingPerturbation.from_family("cubic", 0.1, half_dim=2)
    assert P.delta1 == pytest.approx(measure_c1(P.grad, P.hess, 4, 1.0), rel=1e-12)


@pytest.mark.parametrize("eps", [0.5, 0.6])
def test_contraction_violation(eps):
    with pytest.raises(ContractionError):
        GeneratingPerturbation.from_family("cubic", eps)


# -- map_from_generator ------------------------------------------------------


def test_zero_generator_gives_identity(rng):
    z = rng.uniform(-2, 2, (50, 2))
    assert np.array_equal(map_from_generator(GeneratingPerturbation.zero(), z), z)


def test_linear_shear_map():
    out = map_from_generator(LINEAR, np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [1 / 1.1, 1.1], atol=1e-14)
    # area preservation of the closed form
    assert out[0] * out[1] == pytest.approx(1.0, abs=1e-14)


def test_cutoff_map_is_identity_outside_support(rng):
    v = rng.normal(size=(200, 2))
    v *= rng.uniform(1.0, 2.0, (200, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
    assert np.array_equal(map_from_generator(CUBIC, v), v)


def test_generated_map_relation(rng):
    # g = id - J grad V o G with G(x, y) = (x', y)
    z = rng.uniform(-1, 1, (100, 2))
    out = map_from_generator(CUBIC, z)
    G = np.stack([out[:, 0], z[:, 1]], axis=1)
    grad = CUBIC.grad(G)
    np.testing.assert_allclose(z[:, 0], out[:, 0] + grad[:, 1], atol=1e-13)
    np.testing.assert_allclose(out[:, 1], z[:, 1] + grad[:, 0], atol=1e-13)


# -- fit_generating_gradient -------------------------------------------------

DOMAIN = GridDomain(2, 1.0, 11)


def test_fit_identity_gives_zero_gradient():
    P = fit_generating_gradient(lambda z: z.copy(), 1.0, DOMAIN)
    assert np.max(np.abs(P.grad(DOMAIN.points()))) == 0.0


def test_fit_linear_shear(rng):
    P = fit_generating_gradient(lambda z: map_from_generator(LINEAR, z), 1.0, DOMAIN)
    t = rng.uniform(-1, 1, (50, 2))
    np.testing.assert_allclose(P.grad(t), np.stack([EPS * t[:, 1], EPS * t[:, 0]], axis=1), atol=1e-12)


@pytest.mark.parametrize("P", [CUBIC, RANDOM], ids=["cubic", "random"])
def test_fit_round_trip(P):
    fitted = fit_generating_gradient(lambda z: map_from_generator(P, z), 1.0, DOMAIN)
    pts = DOMAIN.points()
    assert np.max(np.abs(fitted.grad(pts) - P.grad(pts))) <= 1e-8
    back = map_from_generator(fitted, pts)
    assert np.max(np.abs(back - map_from_generator(P, pts))) <= 1e-8


def test_fit_preserves_c0_size():
    g = lambda z: map_from_generator(CUBIC, z)  # noqa: E731
    fitted = fit_generating_gradient(g, 1.0, DOMAIN)
    pts = DOMAIN.points()
    # g(z) - z = J grad V(G(z)) pointwise, hence the sups agree
    G = np.stack([g(pts)[:, 0], pts[:, 1]], axis=1)
    np.testing.assert_allclose(np.abs(fitted.grad(G))[:, ::-1], np.abs(g(pts) - pts), atol=1e-12)


def test_fit_rejects_non_symplectic_map():
    with pytest.raises(InvalidMapError):
        fit_generating_gradient(lambda z: 1.05 * z, 1.0, DOMAIN)


def test_fit_rejects_large_map():
    with pytest.raises(ContractionError):
        fit_generating_gradient(lambda z: np.stack([z[:, 0], z[:, 1] + z[:, 0]], axis=1), 1.0, DOMAIN)


# -- isotopy -----------------------------------------------------------------


def test_isotopy_endpoints(rng):
    z = rng.uniform(-1, 1, (100, 2))
    assert np.array_equal(isotopy_eval(F_CUB, 0.0, z), z)
    g = map_from_generator(CUBIC, z)
    for alpha in (0.5, 0.7, 1.0, 3.0):
        assert np.array_equal(isotopy_eval(F_CUB, alpha, z), g)


def test_isotopy_linear_half_way():
    # l(xi / 2) = 1/2 for the symmetric step
    out = isotopy_eval(F_LIN, 0.25, np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [1 / 1.05, 1.05], atol=1e-14)


def test_inverse_linear_and_identity():
    np.testing.assert_allclose(isotopy_inverse(F_LIN, 0.8, np.array([1.0, 1.0])), [1.1, 1 / 1.1], atol=1e-14)
    z = np.array([[0.3, -0.2]])
    assert np.array_equal(isotopy_inverse(F_CUB, 0.0, z), z)


@pytest.mark.parametrize("F", [F_CUB, F_RND], ids=["cubic", "random"])
def test_inverse_round_trip(F, rng):
    alpha = rng.uniform(-0.1, 1.1, 1000)
    z = rng.uniform(-1.2, 1.2, (1000, 2))
    assert np.max(np.abs(isotopy_inverse(F, alpha, isotopy_eval(F, alpha, z)) - z)) <= 1e-10
    assert np.max(np.abs(isotopy_eval(F, alpha, isotopy_inverse(F, alpha, z)) - z)) <= 1e-10


def test_isotopy_identity_outside_ball(rng):
    v = rng.normal(size=(200, 2))
    v *= rng.uniform(1.0, 2.0, (200, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
    alpha = rng.uniform(0, 1, 200)
    assert np.array_equal(isotopy_eval(F_CUB, alpha, v), v)
    assert np.array_equal(symplectic_vector_field(F_CUB, alpha, v), np.zeros_like(v))


def test_isotopy_symplectic(rng):
    alpha = rng.uniform(0.0, 1.0, 1000)
    z = rng.uniform(-1.0, 1.0, (1000, 2))
    jac = fd_jacobian(lambda p: F_RND.eval(np.tile(alpha, len(p) // 1000), p), z, 1e-6)
    assert np.max(symplectic_defect(jac)) <= 1e-6


def test_isotopy_c0_contraction():
    pts = DOMAIN.points()
    dense = GridDomain(2, 1.0, 401, fd_factors=(0.0, 0.0, 0.0)).points()
    bound = np.max(np.abs(CUBIC.grad(dense)))
    for alpha in np.linspace(0, 0.5, 11):
        assert np.max(np.abs(F_CUB.eval(alpha, pts) - pts)) <= bound * (1 + 1e-6)


# -- velocity and vector field -----------------------------------------------


def test_velocity_vanishes_off_ramp(rng):
    z = rng.uniform(-1, 1, (20, 2))
    for alpha in (-0.3, 0.0, 0.5, 0.9):
        assert np.array_equal(isotopy_velocity(F_CUB, alpha, z), np.zeros_like(z))
    zero = IsotopyFamily(GeneratingPerturbation.zero())
    assert np.array_equal(isotopy_velocity(zero, 0.2, z), np.zeros_like(z))


def test_velocity_linear_closed_form(rng):
    u, v = rng.uniform(-1, 1, (2, 100))
    alpha = rng.uniform(0.01, 0.49, 100)
    lam, lam1 = F_LIN.profile(alpha, 0), F_LIN.profile(alpha, 1)
    expect = np.stack([-lam1 * EPS * u / (1 + lam * EPS) ** 2, lam1 * EPS * v], axis=1)
    np.testing.assert_allclose(isotopy_velocity(F_LIN, alpha, np.stack([u, v], axis=1)), expect, atol=1e-14)


@pytest.mark.parametrize("F", [F_CUB, F_RND], ids=["cubic", "random"])
def test_velocity_matches_alpha_differences(F, rng):
    alpha = rng.uniform(0.02, 0.48, 200)
    z = rng.uniform(-1, 1, (200, 2))
    h = 1e-5
    fd = (F.eval(alpha + h, z) - F.eval(alpha - h, z)) / (2 * h)
    assert np.max(np.abs(fd - F.velocity(alpha, z))) <= 1e-6


def test_vector_field_linear_closed_form(rng):
    _, X, _ = linear_closed_forms(EPS, F_LIN)
    u, v = rng.uniform(-1, 1, (2, 100))
    alpha = rng.uniform(0.0, 0.5, 100)
    np.testing.assert_allclose(symplectic_vector_field(F_LIN, alpha, np.stack([u, v], axis=1)), X(alpha, u, v),
                               atol=1e-15)


def test_vector_field_after_ramp_is_zero():
    assert np.array_equal(symplectic_vector_field(F_CUB, 0.99, np.array([0.2, 0.1])), np.zeros(2))


def test_vector_field_is_velocity_at_preimage(rng):
    alpha = rng.uniform(0.0, 0.5, 100)
    z = rng.uniform(-1, 1, (100, 2))
    direct = F_RND.velocity(alpha, F_RND.inverse(alpha, z))
    np.testing.assert_allclose(F_RND.vector_field(alpha, z), direct, atol=1e-14)


def test_higher_dimension_isotopy(rng):
    P = GeneratingPerturbation.from_family("random-poly", 0.1, half_dim=2, seed=5)
    F = IsotopyFamily(P)
    alpha = rng.uniform(0, 0.5, 300)
    z = rng.uniform(-0.7, 0.7, (300, 4))
    jac = fd_jacobian(lambda p: F.eval(np.tile(alpha, len(p) // 300), p), z, 1e-6)
    assert np.max(symplectic_defect(jac)) <= 1e-6
    assert np.max(np.abs(F.inverse(alpha, F.eval(alpha, z)) - z)) <= 1e-10


# -- scaling of the generating-function estimates ---------------------------


@pytest.mark.parametrize("r", [1, 2])
def test_generator_and_map_sizes_are_comparable(r):
    dom = GridDomain(2, 1.0, 21)
    ratios, alpha_ratios = [], []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        P = GeneratingPerturbation.from_family("cubic", eps)
        F = IsotopyFamily(P)
        g_size = cs_norm(lambda z: map_from_generator(P, z) - z, dom, r)
        ratios.append(cs_norm(P.grad, dom, r) / g_size)
        ga = max(cs_norm(lambda z, a=a: F.eval(a, z) - z, dom, r) for a in np.linspace(0, 0.5, 6))
        alpha_ratios.append(ga / g_size)
    assert max(ratios) / min(ratios) < 1.5
    assert max(alpha_ratios) <= 1.0 + 1e-6


# -- properties --------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    alpha=st.floats(-0.5, 1.5),
    x=st.floats(-1.5, 1.5),
    y=st.floats(-1.5, 1.5),
    seed=st.integers(0, 20),
)
def test_inverse_property(alpha, x, y, seed):
    F = IsotopyFamily(GeneratingPerturbation.from_family("random-poly", 0.3, seed=seed))
    z = np.array([x, y])
    assert np.max(np.abs(F.inverse(alpha, F.eval(alpha, z)) - z)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.0, 1.0), x=st.floats(-1.0, 1.0), y=st.floats(-1.0, 1.0), eps=st.floats(0.0, 0.45))
def test_symplectic_property(alpha, x, y, eps):
    F = IsotopyFamily(GeneratingPerturbation.from_family("cubic", eps))
    jac = fd_jacobian(lambda p: F.eval(alpha, p), np.array([[x, y]]), 1e-6)
    assert np.max(symplectic_defect(jac)) <= 1e-6
