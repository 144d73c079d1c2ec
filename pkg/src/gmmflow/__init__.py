"""Training-free Gaussian-mixture probability-flow sampler and its
discretization-error verification harness."""

__version__ = "0.1.0"

from .bounds import (
    BoundInputs,
    drift_lipschitz,
    envelope_bound,
    envelope_kappa,
    linear_part_lipschitz,
    weight_bound_constants,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    GmmflowError,
    JacobiConvergenceError,
    NonFiniteStateError,
)
from .flow import (
    SolveConfig,
    SolveResult,
    batch_solve,
    closed_form_single_component,
    drift,
    euler_solve,
    heun_solve,
)
from .gmm import (
    MixtureSpec,
    TimeCovariance,
    WeightVector,
    exact_score,
    marginal_log_density,
    mc_score,
    sample_mixture,
    time_covariance,
    weight_gradient,
    weight_time_derivative,
    weights,
)
from .labels import LabeledDataset, generate_labels, split
from .linalg import (
    CovarianceSpec,
    RngStream,
    cycle5_spectrum,
    fold_seed,
    gaussian_vector,
    random_orthogonal,
    substream,
    symmetric_eigendecompose,
)
from .mlp import MlpConfig, MlpModel, evaluate, forward, train
