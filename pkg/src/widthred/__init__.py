"""Width-reduced multiplicative-weights solvers for constrained
minimization of separable quasi-self-concordant losses.

Public surface: the weighted least-squares oracle (:mod:`widthred.wls`),
the loss catalog (:mod:`widthred.losses`), the crude solver and min-max
front end (:mod:`widthred.crude`), the residual boosting stage
(:mod:`widthred.refine`), instance I/O and generation
(:mod:`widthred.instances`), and verification oracles
(:mod:`widthred.oracles`).
"""

from .crude import (
    CrudeSolution,
    MwuConfig,
    MwuState,
    binary_search_R,
    compute_resistances,
    phi,
    qsc_mwu,
    solve_linf,
)
from .errors import (
    DimensionError,
    DimensionMismatch,
    EmptyVector,
    Infeasible,
    InfeasibleAugmented,
    InvalidParameter,
    MissingConstant,
    NonConverged,
    OracleFailure,
    OutOfDomain,
    ParseError,
    RankDeficient,
    RankWarning,
    TheoryViolation,
    UnsupportedOrder,
    WidthredError,
)
from .instances import (
    ProblemInstance,
    from_arrays,
    generate,
    load_instance,
    save_instance,
)
from .losses import (
    GscParams,
    QscCertificate,
    QscLoss,
    SymmetricExpLoss,
    check_qsc,
    gsc_to_qsc,
    make_exp_loss,
    make_logistic_loss,
    make_loss,
    make_lp_loss,
    make_symmetric_exp_loss,
    smax,
)
from .oracles import (
    OracleResult,
    linf_by_vertex_enumeration,
    oracle_linf,
    oracle_solve,
    residual_box_oracle,
)
from .refine import (
    InnerResult,
    QscMinResult,
    RefineConfig,
    ResidualInstance,
    binary_search_levels,
    boost_pipeline,
    compute_z,
    make_residual_instance,
    mwu_residual,
    qsc_min,
    residual_value,
)
from .report import SolveReport, TraceRow, format_trace_csv, write_trace_csv
from .wls import WlsProblem, WlsSolution, energy, psi, solve_wls

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
