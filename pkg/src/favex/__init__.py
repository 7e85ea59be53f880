"""Verified explanations for feedforward ReLU classifiers.

The engine couples an internal branch-and-bound robustness verifier
(interval and backward-linear-relaxation bounding, ReLU splitting, leaf
save/reuse, gradient-based counterfactual search) with explanation
drivers that classify every input feature as an invariant, an unknown,
or a counterfactual.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .attack import AttackBudget, RestrictedSpace, pgd, restricted_search
from .bab import (
    LeafCache,
    LeafOrigin,
    RobustnessQuery,
    Status,
    Subproblem,
    Verdict,
    cex_search,
    split,
    verify,
    witness_is_valid,
)
from .bounds import (
    BoundMethod,
    LayerBounds,
    PerturbationBox,
    PhaseConstraint,
    Sign,
    class_logit_lb,
    feature_scores,
    preactivation_bounds,
    worst_logit_diff_lb,
)
from .errors import (
    ConflictError,
    DomainError,
    FavexError,
    NoAmbiguousNeuron,
    ParseError,
    ShapeError,
)
from .explain import (
    BabVerifier,
    Explanation,
    Mode,
    TraversalStrategy,
    binary_search_explain,
    favex,
    sequential_explain,
    traversal_order,
    traversal_scores,
)
from .model import (
    AffineLayer,
    Network,
    ReluLayer,
    forward,
    load_model,
    make_network,
    predict,
    save_model,
)

__version__ = "0.1.0"
