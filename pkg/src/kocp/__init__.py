"""k-th order cones: hierarchies of inner approximations built from small blocks.

A k-th order cone ``K^d_k(J)`` collects the sums of zero-padded lifts of
``k``-dimensional base-cone members over an index family ``J``.  The package
covers membership tests and decompositions, the log-det barrier of the dual
cone, an interior-point solver for standard- and inequality-form programs,
kDDSOS polynomial certificates, copositive/completely positive blocks and
norm-induced cones.
"""

from .barrier import (
    barrier_grad,
    barrier_hess_quadform,
    barrier_value,
    legendre_invert,
    primal_barrier,
)
from .cones import (
    dual_membership,
    factor_width2_decompose,
    is_sdd,
    nesting_certificate,
    primal_margin,
    verify_decomposition,
    verify_embedding,
)
from .errors import (
    BlockNotPSDError,
    DimensionMismatchError,
    InputError,
    KocpError,
    NotInteriorError,
    NumericalError,
    RedundantConstraintsError,
    SizeCapExceededError,
    SolverFailureError,
    UnsupportedFamilyError,
)
from .matrix import IndexFamily, enumerate_tuples, lift, psd_margin, smat, svec, truncate
from .polynomial import (
    GramCertificate,
    MonomialBasis,
    Polynomial,
    certify_kddsos,
    gram_to_poly,
    monomial_basis,
    verify_certificate,
)
from .solver import (
    InequalityProblem,
    KKTReport,
    Solution,
    SolverOptions,
    StandardProblem,
    convert_inequality_to_standard,
    convert_standard_to_inequality,
    hierarchy_scan,
    kkt_residuals,
    socp_to_sdd,
    solve,
)
from .special import (
    NormConePoint,
    NormDescriptor,
    check_norm_axioms,
    cp_membership,
    cpp_membership,
    dual_norm_eval,
    norm_eval,
    normcone_k_membership,
    parse_norm,
    reduce_cp_program,
)
from .structures import ConeSpec, Decomposition, make_cone

__version__ = "0.1.0"
