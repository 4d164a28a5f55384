"""Two-view semi-supervised learning with stochastic agreement regularization.

Flat maxent or linear-chain CRF view models, trained on regularized log-loss
plus an agreement penalty on unlabeled data; the penalty is the expected
divergence between the views' predictions, optimized by alternating
agreement projections and soft refits. Partial-agreement regimes, where the
views predict over different label sets related by a surjection, are
supported throughout.
"""

from ._backend import BACKEND_NAME
from .agreement import (
    AgreementOutcome,
    ChainAgreementOutcome,
    DualVars,
    LabelMapping,
    SolverConfig,
    agree_chain,
    agree_chain_partial,
    agree_flat,
    agree_flat_partial,
    dual_objective,
)
from .chain import (
    ChainExample,
    ChainMarginals,
    ChainPotentials,
    CrfParams,
    brute_force_dist,
    build_potentials,
    crf_objective_gradient,
    forward_backward,
    load_crf,
    save_crf,
    train_crf,
    viterbi,
)
from .errors import DataError, NumericalError, SarError
from .features import FeatureIndexer, FeatureVector
from .maxent import (
    MaxentParams,
    SoftExample,
    gradient,
    load_maxent,
    objective,
    predict_dist,
    save_maxent,
    train,
)
from .optim import OptConfig
from .probs import Categorical, LabelSet, bhattacharyya, kl_divergence, log_normalize
from .trainer import (
    SarConfig,
    SarState,
    agree0_decode,
    agree0_predict,
    objective_value,
    one_hot,
    train_sar,
)

__version__ = "0.1.0"
