"""picardop: fixed-point solvers for operator equations lambda*T(x) + f = x.

Concrete operators (affine, cubic attention, integral, graph aggregation),
the Picard/damped iteration engine with convergence diagnostics, derivative
and Lipschitz estimation, and an iterated message-passing experiment on
synthetic graphs.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, NonFiniteError
from .spaces import (
    Grid,
    GridFunction,
    DirectSumVector,
    grid_uniform,
    grid_from_json,
    grid_to_json,
    norm,
    direct_sum_norm,
    lincomb,
    zero_like,
    flatten_values,
    unflatten_like,
    load_matrix_text,
    load_vector_text,
)
from .operators import (
    AffineOperator,
    AttentionOperator,
    HammersteinOperator,
    Graph,
    GnnAggregateOperator,
    ShiftedOperator,
    apply,
    attention_apply,
    hammerstein_apply,
    gnn_aggregate,
    lambda_shift,
    make_kernel,
    graph_from_edgelist,
    neighborhood_membership_counts,
    operator_from_config,
)
from .picard import (
    PicardConfig,
    StepRecord,
    IterationTrace,
    BanachBoundRecord,
    picard_solve,
    damped_solve,
    residual,
    predicted_iterations,
    banach_bounds,
    uniqueness_check,
    trace_csv_text,
    export_trace_csv,
)
from .calculus import (
    LipschitzEstimate,
    FrechetDirectionalResult,
    GnnLipschitzReport,
    attention_frechet,
    fd_directional,
    frechet_check,
    spectral_norm,
    lipschitz_sample,
    derivative_bound_lipschitz,
    gnn_lipschitz_report,
    rescale_to_contraction,
)
from .pign import (
    PlantedPartitionDataset,
    PignResult,
    planted_partition,
    add_dropin_noise,
    pign_embed,
    train_logistic_readout,
    run_pign_experiment,
)
