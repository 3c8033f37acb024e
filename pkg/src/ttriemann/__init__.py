"""Riemannian optimization on the fixed TT-rank manifold.

Core layers: ``tt`` (format, orthogonalization, rounding), ``tangent``
(tangent vectors, projections, retraction), ``hessian`` (exact Riemannian
Hessian with the curvature correction), ``completion`` (objective,
sampling, conditioning), ``optim`` (trust region / CG / ALS solvers),
``harness`` (seeded experiments) and an sklearn-style ``TTCompletion``
estimator.
"""

from .completion import (
    CompletionProblem,
    ConditionEstimate,
    SamplingSpec,
    completion_cost,
    completion_egrad,
    completion_ehess,
    condition_estimate,
    observe,
    sample_indices,
)
from .estimator import TTCompletion
from .hessian import (
    HessianWorkspace,
    build_workspace,
    correction_cross,
    correction_diagonal,
    fd_hess_apply,
    gram_right_tilde_v,
    hess_apply,
    three_products_dense,
    three_products_sparse,
    weingarten,
)
from .io import load_sparse, load_tt, save_sparse, save_tt
from .optim import (
    RunLog,
    TrustRegionConfig,
    als_minimize,
    rcg_minimize,
    rtr_minimize,
    tcg_solve,
)
from .sparse import SparseTensor
from .tangent import (
    TangentVector,
    convert_param,
    densify,
    make_tangent,
    prepare_base,
    project,
    project_dense,
    project_sparse,
    project_tt,
    random_tangent,
    retract,
    tangent_entries,
    tangent_inner,
    tangent_to_tt,
    transport,
    variational_interfaces,
    zero_tangent,
)
from .tt import (
    DenseCapError,
    RankDeficientError,
    RightOrthFactors,
    Shape,
    TTTensor,
    flatten,
    left_orthogonalize,
    orthogonalize,
    random_tt,
    right_orthogonalize_with_factors,
    tt_add,
    tt_inner,
    tt_rank,
    tt_round,
    tt_svd,
    tt_to_dense,
    unflatten,
)

__version__ = "0.1.0"
