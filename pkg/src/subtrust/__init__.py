"""Two-stage subspace trust-region training for feed-forward networks.

A second-order stochastic trainer that minimizes a per-layer reduced
quadratic model inside a trust region (positive-curvature subspace first,
fresh gradient step second), plus the comparison strategies and first-order
baselines that go with it, a stratified data pipeline, and a scikit-learn
style classifier wrapper.
"""

from .baselines import METHODS, FirstOrderState, first_order_init, first_order_step
from .data import (
    Dataset,
    SamplerConfig,
    load_idx,
    split_subminibatches,
    stratified_minibatch,
    synth_gaussian,
    write_idx,
)
from .estimator import FeedForwardClassifier
from .exceptions import ConfigError, ContractError, DegenerateError, NumericError
from .hvp import HvpWorkspace, hvp_block, hvp_full
from .netcore import (
    Batch,
    BlockVector,
    LossConfig,
    backward,
    forward,
    init_sparse,
    loss_only,
)
from .optimizer import (
    STRATEGIES,
    StepReport,
    SubspaceBasis,
    TwoStageState,
    assemble_model,
    bootstrap,
    build_basis,
    stage_gradient,
    stage_positive,
    two_stage_iterate,
    variant_iterate,
)
from .trsolver import (
    EigenDecomp,
    QuadModel,
    TRSolution,
    decompose,
    eigh_small,
    newton_secular,
    solve_full,
    solve_positive_subspace,
    solve_saddle_free,
)

__version__ = "0.1.0"
