"""Low-rank decomposition of ragged longitudinal tensors.

Order-3 tensors with two tabular modes and one functional mode observed
at unaligned per-subject time points. Functional factors live in a
reproducing kernel Hilbert space; solvers cover alternating least
squares, sketched ALS, and (stochastic) gradient descent under
Gaussian, Bernoulli, Poisson, and beta-divergence losses.
"""

from .als import AlsConfig, rkhs_td, update_A, update_B, update_theta
from .gradient import (
    DivergenceError,
    GdConfig,
    generalized_loss,
    grad_A,
    grad_B,
    grad_theta,
    grkhs_td,
    scale_and_project,
)
from .kernels import KernelSpec, kernel
from .losses import (
    LossSpec,
    bernoulli_loss,
    beta_loss,
    clip_gradient,
    dmodel,
    gaussian_loss,
    loss_from_name,
    poisson_loss,
    value,
)
from .result import FitResult
from .sgd import s_grkhs_td, stochastic_grads
from .sketch import (
    SketchPlan,
    build_sketched_design,
    full_plan,
    s_rkhs_td,
    sample_plan,
    sketched_update_A,
    sketched_update_B,
    sketched_update_theta,
)
from .synth import SynthConfig, cosine_basis, gen_gaussian, gen_poisson
from .tensor import (
    FactorModel,
    GlobalGrid,
    TensorError,
    UnalignedTensor,
    VectorizationMap,
    build_design,
    build_tensor,
    devectorize,
    evaluate_xi,
    reconstruct,
    relative_loss,
    rkhs_norm_sq,
    vectorize,
)
from .transforms import clr_transform, relative_abundance

__version__ = "0.1.0"
