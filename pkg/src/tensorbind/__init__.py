"""tensorbind: embed fixed-shape GEMM instructions into loop-nest workloads.

Pipeline: parse workload + instruction specs, pose the placement problem as
a finite-domain CSP over scalar dataflow, search with optional
portfolio/domain-bound strategies, rank candidates by an overhead norm,
derive a joint program + data-layout rewrite plan, and verify it against a
naive interpreter.
"""

from .csp import SearchConfig, SearchStats, asset_count, asset_orders
from .domains import Box, TupleDomain
from .embedding import (
    Candidate,
    DimensionMapping,
    InfeasibleEmbeddingError,
    MapEntry,
    Mode,
    OverheadVector,
    assemble,
    compute_overhead,
    extract_mapping,
    search_candidates,
)
from .executor import (
    ExecStats,
    OracleGuardError,
    brute_force_embeddings,
    random_operand,
    read_tensor,
    run_intrinsic_model,
    run_naive,
    run_plan,
    write_tensor,
)
from .rewrite import (
    PlanUnsupportedError,
    RewritePlan,
    RewriteStep,
    StepKind,
    apply_layout,
    derive_plan,
    invert_layout,
)
from .workload import (
    AffineExpr,
    IntrinsicSpec,
    IteratorKind,
    SpecError,
    Workload,
    intrinsic_from_dict,
    parse_intrinsic,
    parse_workload,
    workload_from_dict,
    workload_to_dict,
)

__version__ = "0.1.0"
