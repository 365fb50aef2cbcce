"""Realising symplectic maps as time-one section maps of autonomous Hamiltonian flows.

A symplectic map ``g`` of ``R^(2d-2)`` close to the identity is joined to
the identity by an isotopy built from a generating function.  The isotopy's
time-dependent Hamiltonian ``K_alpha`` is suspended to an autonomous
Hamiltonian ``H = y_d + K_{x_d}(x, y) l~(y_d)`` on ``R^(2d)`` whose flow
carries the section ``{x_d = y_d = 0}`` to ``{x_d = 1}`` by ``g``.
"""

__version__ = "0.1.0"

from .core_numerics import (  # noqa: E402
    BumpProfile,
    FaaDiBrunoTable,
    GridDomain,
    certify_bump_norms,
    cs_norm,
    eval_bump,
    faa_di_bruno_table,
    newton_solve,
)
from .errors import (  # noqa: E402
    ConfigError,
    ContractionError,
    DomainExitError,
    InvalidMapError,
    NoConvergenceError,
    QuadratureError,
    ResolutionError,
    StageError,
    StiffnessError,
    SuspensionError,
    UnsupportedOrderError,
    WrongProfileError,
)
from .isotopy import (  # noqa: E402
    GeneratingPerturbation,
    IsotopyFamily,
    fit_generating_gradient,
    isotopy_eval,
    isotopy_inverse,
    isotopy_velocity,
    map_from_generator,
    symplectic_vector_field,
)
from .suspension import (  # noqa: E402
    NormReport,
    SuspendedHamiltonian,
    hamiltonian_K,
    norm_gap_report,
    suspended_gradient,
    suspended_value,
    suspended_vector_field,
)
from .flow import (  # noqa: E402
    SectionRecord,
    Trajectory,
    closed_form_flow,
    integrate,
    integrate_batch,
    time_one_section_map,
    yd_excursion,
)
from .config import ExperimentConfig  # noqa: E402
from .pipeline import VerificationReport, run_suspension, run_sweep, run_verify  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
