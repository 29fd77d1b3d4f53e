"""Singular spectra, energy distributions, and aleatoric uncertainty values.

The chain implemented here turns one class matrix into a scalar in [0, 1]:

1. singular values of the D x (H*W) class matrix;
2. the energy distribution p_j = sigma_j^2 / (sum sigma^2 + eps);
3. the semantic perception scale, the Shannon entropy of p normalized by
   log(r) -- 1 for a flat spectrum (rich, diverse features), 0 for rank one;
4. per-sample scales summed over classes, then batch-normalized into an
   aleatoric uncertainty value (AUV): log-transform plus min-max scaling,
   inverted so 1 marks the most uncertain sample of the batch.

All functions are pure; batch normalization in :func:`auv_batch` is the one
place that reads a whole batch at once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassError, IoError, NumericalError, ParameterError
from .volumes import ClassFeatureMatrix, FeatureVolume, class_matrix

#: default smoothing for the energy distribution denominator.
DEFAULT_EPSILON = 1e-12

#: default lower clamp on sample scales before taking logs.
DEFAULT_FLOOR = 1e-12

#: matrices whose short side is at most this use the Gram eigenvalue route.
GRAM_MAX_DIM = 64


@dataclass(frozen=True)
class SingularSpectrum:
    """Non-increasing singular values of one class matrix."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 1 or values.size < 1:
            raise ParameterError("spectrum must be a non-empty 1-D array")
        if np.any(values < 0) or np.any(values[1:] > values[:-1]):
            raise ParameterError("singular values must be non-negative and non-increasing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def r(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class EnergySpectrum:
    """Normalized squared singular values; sums to <= 1 by construction."""

    probs: np.ndarray = field(repr=False)
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, order="C")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def r(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class AUVRecord:
    """Per-sample uncertainty record produced by :func:`auv_batch`."""

    sample_id: str
    sample_scale: float
    auv: float
    per_class_scale: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.auv <= 1.0:
            raise ParameterError(f"auv {self.auv} outside [0, 1]")
        if self.per_class_scale:
            total = sum(self.per_class_scale.values())
            if abs(total - self.sample_scale) > 1e-9:
                raise ParameterError(
                    f"sample scale {self.sample_scale} != class-scale sum {total}"
                )


def _pow2_prescale(mat: np.ndarray) -> tuple[np.ndarray, float]:
    # Dividing by an exact power of two keeps every entry's mantissa intact,
    # so spectra of 2**k-scaled inputs come out exactly 2**k-scaled.
    m = float(np.max(np.abs(mat)))
    if m == 0.0 or not math.isfinite(m):
        return mat, 1.0
    scale = math.ldexp(1.0, math.frexp(m)[1])
    return mat / scale, scale


def _gram_singular_values(mat: np.ndarray) -> np.ndarray:
    if mat.shape[0] <= mat.shape[1]:
        gram = mat @ mat.T
    else:
        gram = mat.T @ mat
    lam = np.linalg.eigvalsh(gram)[::-1]
    lam = np.clip(lam, 0.0, None)
    if lam.size and lam[0] > 0.0:
        # eigenvalues below the eigensolver's own noise floor are
        # indistinguishable from exact zeros after squaring
        lam[lam < lam.shape[0] * np.finfo(np.float64).eps * lam[0]] = 0.0
    return np.sqrt(lam)


def singular_values(matrix: ClassFeatureMatrix, method: str = "auto") -> SingularSpectrum:
    """All min(D, H*W) singular values of a class matrix, descending.

    ``method`` selects the algorithm: ``"gram"`` forms the small Gram matrix
    and takes eigenvalue square roots (fast when one side is short),
    ``"svd"`` runs a full bidiagonalization, ``"auto"`` picks gram when the
    short side is at most ``GRAM_MAX_DIM``.  If the chosen route fails to
    converge the other one is retried before :class:`NumericalError` is
    raised.
    """
    mat = matrix.data
    if method not in ("auto", "gram", "svd"):
        raise ParameterError(f"unknown method {method!r}")
    if method == "auto":
        method = "gram" if min(mat.shape) <= GRAM_MAX_DIM else "svd"

    scaled, scale = _pow2_prescale(mat)
    routes = [method, "svd" if method == "gram" else "gram"]
    last_exc = None
    for route in routes:
        try:
            if route == "gram":
                vals = _gram_singular_values(scaled)
            else:
                vals = np.linalg.svd(scaled, compute_uv=False)
            return SingularSpectrum(values=vals * scale)
        except np.linalg.LinAlgError as exc:
            last_exc = exc
    raise NumericalError(f"singular value computation failed: {last_exc}")


def energy_distribution(spectrum: SingularSpectrum, epsilon: float = DEFAULT_EPSILON) -> EnergySpectrum:
    """Squared singular values normalized by total energy plus ``epsilon``.

    An all-zero spectrum yields all-zero probabilities rather than NaN.
    """
    if epsilon < 0:
        raise ParameterError(f"epsilon must be >= 0, got {epsilon}")
    energy = spectrum.values * spectrum.values
    total = float(energy.sum()) + float(epsilon)
    if total == 0.0:
        probs = np.zeros_like(energy)
    else:
        probs = energy / total
    return EnergySpectrum(probs=probs, epsilon=float(epsilon))


def semantic_scale(energy: EnergySpectrum) -> float:
    """Normalized Shannon entropy of the energy distribution, in [0, 1].

    Uses the 0*log(0) := 0 convention.  Returns 0 for a single-mode
    spectrum (r == 1) and for an all-zero distribution: one mode, or none,
    carries no diversity.  The log base cancels in the ratio.
    """
    probs = energy.probs
    if energy.r == 1:
        return 0.0
    nz = probs[probs > 0.0]
    if nz.size == 0:
        return 0.0
    entropy = float(-(nz * np.log(nz)).sum())
    scale = entropy / math.log(energy.r)
    return min(max(scale, 0.0), 1.0)


def sample_scale(per_class: dict[int, float], classes=None) -> float:
    """Sum of per-class scales, optionally over a selected class subset."""
    if not per_class:
        raise ParameterError("per-class scale map is empty")
    if classes is None:
        return float(sum(per_class.values()))
    missing = [c for c in classes if c not in per_class]
    if missing:
        raise ClassError(f"classes {missing} missing from scale map")
    return float(sum(per_class[c] for c in classes))


def log_scale_stats(scales, floor: float = DEFAULT_FLOOR) -> tuple[float, float]:
    """(min, max) of log(scale) after clamping scales below by ``floor``."""
    if floor <= 0:
        raise ParameterError(f"floor must be > 0, got {floor}")
    clamped = [max(float(s), floor) for s in scales]
    if not clamped:
        raise ParameterError("empty scale batch")
    return math.log(min(clamped)), math.log(max(clamped))


def auv_batch(
    scales,
    floor: float = DEFAULT_FLOOR,
    *,
    per_class_scales: dict[str, dict[int, float]] | None = None,
    stats: tuple[float, float] | None = None,
) -> list[AUVRecord]:
    """Normalize (sample_id, scale) pairs into AUV records.

    Scales are clamped below by ``floor``, log-transformed, and min-max
    normalized over the batch, inverted so the smallest scale maps to
    AUV 1.  A degenerate batch (all scales equal) maps to all zeros, the
    conservative choice: downstream filtering then retains everything.

    The in-batch normalization is computed from scale ratios, which makes
    the result exactly invariant when every scale is multiplied by the same
    power of two (and invariant to ~1e-15 for any other positive factor),
    provided the floor clamp stays inactive.

    ``stats`` freezes (log_min, log_max) from an earlier batch instead of
    recomputing them; out-of-range samples are clipped into [0, 1].
    ``per_class_scales`` optionally attaches each sample's per-class scale
    map to its record.
    """
    scales = list(scales)
    if not scales:
        raise ParameterError("empty scale batch")
    if floor <= 0:
        raise ParameterError(f"floor must be > 0, got {floor}")

    ids = [str(sid) for sid, _ in scales]
    clamped = np.array([max(float(s), floor) for _, s in scales], dtype=np.float64)

    if stats is not None:
        log_min, log_max = float(stats[0]), float(stats[1])
        if log_max == log_min:
            auvs = np.zeros_like(clamped)
        else:
            auvs = 1.0 - (np.log(clamped) - log_min) / (log_max - log_min)
            auvs = np.clip(auvs, 0.0, 1.0)
    else:
        s_min = clamped.min()
        s_max = clamped.max()
        if s_max == s_min:
            auvs = np.zeros_like(clamped)
        else:
            span = math.log(s_max / s_min)
            auvs = 1.0 - np.log(clamped / s_min) / span
            auvs = np.clip(auvs, 0.0, 1.0)

    records = []
    for sid, raw, auv in zip(ids, (float(s) for _, s in scales), auvs):
        per_class = dict(per_class_scales.get(sid, {})) if per_class_scales else {}
        records.append(
            AUVRecord(sample_id=sid, sample_scale=raw, auv=float(auv), per_class_scale=per_class)
        )
    return records


def class_scale(matrix: ClassFeatureMatrix, epsilon: float = DEFAULT_EPSILON) -> float:
    """Semantic scale of one class matrix: the full spectrum->energy->entropy chain."""
    return semantic_scale(energy_distribution(singular_values(matrix), epsilon))


def volume_scales(
    volume: FeatureVolume,
    classes=None,
    epsilon: float = DEFAULT_EPSILON,
    center: bool = True,
) -> dict[int, float]:
    """Per-class semantic scales of a feature volume.

    ``classes`` restricts the computation to a subset; unknown ids raise
    :class:`ClassError` via :func:`~auvkit.volumes.class_matrix`.
    """
    if classes is None:
        classes = volume.class_ids
    return {
        int(c): class_scale(class_matrix(volume, c, center=center), epsilon)
        for c in classes
    }


def covariance_eigenvalues_oracle(matrix: ClassFeatureMatrix) -> np.ndarray:
    """Eigenvalues of the row covariance (1/(N-1)) z z^T, descending.

    Independent cross-check for the singular-value route: on a centered
    matrix these equal sigma_j^2 / (N-1).  Test oracle only; not part of the
    production chain.
    """
    if not matrix.centered:
        raise ParameterError("covariance oracle requires a centered matrix")
    if matrix.rows < 2:
        raise ParameterError("covariance oracle requires at least 2 rows")
    z = matrix.data
    cov = (z @ z.T) / (matrix.cols - 1)
    lam = np.linalg.eigvalsh(cov)[::-1]
    return np.clip(lam, 0.0, None)


def export_spectrum_curves(spectra, path, labels=None) -> None:
    """Write decay/cumulative-energy curves for a list of spectra as CSV.

    Columns: label, index (1-based), sigma, energy_fraction,
    cumulative_energy.  Energy fractions use the raw sigma^2 / total split
    (no smoothing); an all-zero spectrum exports zero fractions.
    """
    spectra = list(spectra)
    if not spectra:
        raise ParameterError("no spectra to export")
    if labels is None:
        labels = [str(i) for i in range(len(spectra))]
    if len(labels) != len(spectra):
        raise ParameterError("labels and spectra lengths differ")
    try:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["label", "index", "sigma", "energy_fraction", "cumulative_energy"])
            for label, spec in zip(labels, spectra):
                energy = spec.values * spec.values
                total = float(energy.sum())
                fracs = energy / total if total > 0 else np.zeros_like(energy)
                cums = np.cumsum(fracs)
                for j, (sigma, frac, cum) in enumerate(zip(spec.values, fracs, cums), start=1):
                    writer.writerow([label, j, repr(float(sigma)), repr(float(frac)), repr(float(cum))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
