"""Multi-planar isotropic slice sampling, elastic augmentation and multi-view fusion."""
from .errors import (
    ConfigError,
    DataError,
    DegenerateIntensityError,
    DivergenceError,
    FormatError,
    GeometryError,
    LabelError,
    MultiplanarError,
    OutOfSphereError,
)
from .volume import LabelMap, ProbVolume, Volume, scanner_to_voxel, voxel_to_scanner
from .io import load_labels, load_volume, save_volume
from .preprocess import ScaleReport, robust_scale
from .geometry import (
    SamplingParams,
    ViewAxis,
    ViewSet,
    VolumeSummary,
    fit_sampling_params,
    plane_grid,
    sample_view_axes,
    slice_offsets,
)
from .sampler import Slice, SliceStack, nearest_label_sample, sample_slice, sample_stack, trilinear_sample
from .augment import AugmentPolicy, DisplacementField, elastic_deform, make_displacement_field, maybe_augment
from .predictor import (
    NoisyOracleConfig,
    PatchSoftmaxModel,
    featurize,
    noisy_oracle_predict,
    oracle_predict,
    predict,
    train,
)
from .fusion import ViewPrediction, argmax_labels, fuse_views, reconstruct_view
from .evaluation import DiceReport, dice_per_class, variance_experiment
from .phantom import Ellipsoid, PhantomSpec, analytic_label_at, default_phantom_spec, make_phantom

__version__ = "0.1.0"
