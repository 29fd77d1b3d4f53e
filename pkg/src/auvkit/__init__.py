"""auvkit: aleatoric uncertainty from feature-volume singular spectra.

Quantifies per-sample, per-class uncertainty of frozen-extractor feature
volumes by the entropy of their singular-value energy distributions, turns
the resulting AUV scores into quantile-based dataset-filtering manifests,
and provides an uncertainty-weighted Dice+BCE loss kernel with verified
gradients for training loops.
"""

__version__ = "0.1.0"

from .errors import (
    AuvKitError,
    ClassError,
    DataError,
    FormatError,
    InputError,
    IoError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .volumes import (
    ClassFeatureMatrix,
    FeatureVolume,
    class_matrix,
    load_feature_volume,
    save_feature_volume,
)
from .spectrum import (
    AUVRecord,
    EnergySpectrum,
    SingularSpectrum,
    auv_batch,
    class_scale,
    covariance_eigenvalues_oracle,
    energy_distribution,
    export_spectrum_curves,
    sample_scale,
    semantic_scale,
    singular_values,
    volume_scales,
)
from .filtering import (
    FilterManifest,
    FilterStrategy,
    ManifestEntry,
    export_histogram,
    filter_global,
    filter_per_class,
    quantile_threshold,
    read_records,
    write_manifest,
    write_records,
)
from .duo import (
    Gradients,
    LossReport,
    NoiseEstimate,
    PredictionBatch,
    bce_loss,
    denoise_labels,
    dice_loss,
    duo_gradients,
    duo_total_loss,
    gradient_check,
    seg_loss,
    standardize_noise,
)
from .synth import SynthSpec, generate_volumes, make_dataset, make_feature_volume

__all__ = [name for name in dir() if not name.startswith("_")]
