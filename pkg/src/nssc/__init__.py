"""Sparse coding with non-stationary noise for depth and disparity maps."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ContractError,
    Dictionary,
    NoiseField,
    Patch,
    SparseCode,
    energy,
    normalize_atoms,
    reconstruct,
)
from .inference import (  # noqa: E402
    InferenceConfig,
    InferenceResult,
    infer,
    infer_fixed_variance,
    solve_weighted_l1,
    update_noise_variances,
)
from .learning import TrainConfig, TrainingReport, learning_gradient, train  # noqa: E402
from .denoise import DenoiseResult, DepthMap, denoise_map, inpaint  # noqa: E402
from .stereo import (  # noqa: E402
    DisparityField,
    PottsConfig,
    StereoConfig,
    StereoPair,
    bad_pixel_rate,
    solve_mrf_swap,
    two_layer_infer,
)
