"""Selected inversion of block banded matrices.

Sequential RGF (tridiagonal and n-diagonal), a fused super-block baseline,
domain-decomposition RGF with thread parallelism, analytical cost models
with an auto-tuner, a kernel microbenchmark and a dense oracle.
"""

from .core import (
    BlockBandedMatrix,
    BlockLayout,
    DomainDescriptor,
    PartitionedMatrix,
    Permutation,
    dense_inverse,
    extract_bndiag,
    interleave_permutation,
    make_layout,
    oracle_selected_inverse,
    permute_matrix,
    random_spd_like,
    to_dense,
)
from .cost import (
    CostEstimate,
    autotune,
    cost_ddrgf,
    cost_fused,
    cost_nrgf,
    cost_rgf,
    ddrgf_exact_counts,
    orchestrate,
    rgf_extra,
)
from .ddrgf import DomainPlan, SubdomainResult, ddrgf, parse_plan
from .estimators import DDRGFSolver, FusedRGFSolver, PlanTuner, RGFSolver
from .exceptions import (
    BBSIError,
    FormatError,
    InvalidDimensionError,
    InvalidPartitionError,
    InvalidPlanError,
    OracleTooLargeError,
    SingularMatrixError,
)
from .io import load_bbm, save_bbm
from .kernels import (
    KernelCounters,
    KernelRatios,
    LUFactors,
    RooflinePoint,
    benchmark_kernels,
    gemm,
    lu_factor,
    roofline,
    solve_left,
    solve_right,
)
from .rgf import ExtendedInverse, rgf_extended, rgf_fused, rgf_ndiag, rgf_tridiag

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
