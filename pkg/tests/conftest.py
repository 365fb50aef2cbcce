import numpy as np
import pytest

from hamsuspend import ExperimentConfig, GeneratingPerturbation, IsotopyFamily, SuspendedHamiltonian
from hamsuspend.pipeline import build_system, norms_for

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def system(**kw) -> SuspendedHamiltonian:
    return build_system(ExperimentConfig(**kw))


@pytest.fixture(scope="session")
def linear_system():
    """``V = 0.1 x'y`` without cutoff: every object has a closed form."""
    return system(family="linear-shear", eps=0.1)


@pytest.fixture(scope="session")
def cubic_system():
    return system(family="cubic", eps=0.05)


@pytest.fixture(scope="session")
def random_system():
    return system(family="random-poly", eps=0.05, seed=3)


@pytest.fixture(scope="session")
def zero_system():
    return SuspendedHamiltonian(IsotopyFamily(GeneratingPerturbation.zero(1)))


EPS_SWEEP = (1e-1, 1e-2, 1e-3, 1e-4)


@pytest.fixture(scope="session")
def cubic_eps_sweep():
    """Norm reports of the cubic family over ``EPS_SWEEP`` at the default grids."""
    out = {}
    for eps in EPS_SWEEP:
        cfg = ExperimentConfig(family="cubic", eps=eps)
        out[eps] = norms_for(cfg, build_system(cfg))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_closed_forms(eps: float, F: IsotopyFamily):
    """Closed forms of the linear-shear example as functions of ``alpha``."""

    def g(alpha, u, v):
        a = 1.0 + F.profile(alpha, 0) * eps
        return np.stack([u / a, a * v], axis=-1)

    def X(alpha, u, v):
        lam, lam1 = F.profile(alpha, 0), F.profile(alpha, 1)
        a = 1.0 + lam * eps
        return np.stack([-lam1 * eps * u / a, lam1 * eps * v / a], axis=-1)

    def K(alpha, u, v):
        lam, lam1 = F.profile(alpha, 0), F.profile(alpha, 1)
        return -lam1 * eps * u * v / (1.0 + lam * eps)

    return g, X, K
