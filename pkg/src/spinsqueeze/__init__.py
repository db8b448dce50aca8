"""Optimal spin squeezing of a collective spin J and entanglement depth from it.

The central object is F_J(x), the smallest Var(Jx)/J reachable by a spin-J
state with <Jz>/J = x. It is tabulated by diagonalising mu*Jz + Jx^2, checked
by a variational search where diagonalisation is not enough, compared with
squeezing dynamics, and used to certify entanglement depth from measured
collective moments.
"""

from ._version import __version__
from .entanglement_certifier import (
    DepthCertificate,
    LowerBound,
    MarginPolicy,
    MeasurementRecord,
    certify_depth,
    is_entangled,
    separability_bound,
)
from .errors import (
    DomainError,
    InvalidRecordError,
    NormalizationError,
    NumericalFailure,
    RegimeError,
    SpinSqueezeError,
    UndefinedSqueezingError,
    VerificationError,
)
from .optimal_curves import (
    CurveCache,
    CurvePoint,
    CurveTable,
    MuSweep,
    XTargets,
    analytic_bound,
    compute_curve,
    ground_state_of,
    lower_envelope_eval,
    mu_for_x,
    symmetric_bifurcation,
)
from .spin_core import (
    Spin,
    SpinMoments,
    StateVector,
    build_operators,
    check_heisenberg,
    coherent_state,
    moments,
    squeezing_parameter,
)
from .squeezing_dynamics import HamiltonianSpec, Trajectory, evolve, min_transverse_variance
from .variational_search import (
    AnnealSchedule,
    BifurcationReport,
    VariationalResult,
    locate_bifurcation,
    minimize_at_x,
    variational_minimize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
