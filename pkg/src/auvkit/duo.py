"""Dynamic uncertainty-aware optimization (DUO) loss with exact gradients.

The objective is a Dice+BCE segmentation loss evaluated on denoised labels,
with each class down-weighted by 1 / (1 + alpha * S_c), where S_c is the
class's semantic perception scale.  Rich, certain classes (S_c near 1) get
smaller weights, concentrating gradient on uncertain ones.  Labels are
denoised by subtracting a learnable per-sample noise estimate times a
noise-head output, with the estimate constrained to zero mean and unit
second moment by hard reparameterization.

Everything here is plain float64 numpy: a reference kernel for training
frameworks, verified against central finite differences.  All functions are
pure and reentrant.  Scales are treated as constants per iteration; no
gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClassError, DataError, ParameterError, ShapeError

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.5
DEFAULT_SMOOTH = 1.0
DEFAULT_CLAMP = 1e-7
DEFAULT_GAMMA = 0.5

#: population variance below this marks the noise batch degenerate.
DEGENERATE_VAR = 1e-24

_SPATIAL = (2, 3, 4)


@dataclass(frozen=True)
class PredictionBatch:
    """Aligned (N, C, D, H, W) tensors: probabilities, labels, noise head."""

    probs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    noise_head: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, order="C")
        labels = np.array(self.labels, dtype=np.float64, order="C")
        head = np.array(self.noise_head, dtype=np.float64, order="C")
        if probs.ndim != 5:
            raise ShapeError(f"expected (N, C, D, H, W) tensors, got rank {probs.ndim}")
        if labels.shape != probs.shape or head.shape != probs.shape:
            raise ShapeError(
                f"shape mismatch: probs {probs.shape}, labels {labels.shape}, "
                f"noise_head {head.shape}"
            )
        if not (np.isfinite(probs).all() and np.isfinite(labels).all() and np.isfinite(head).all()):
            raise DataError("batch contains non-finite values")
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise DataError("probs must lie in [0, 1]")
        if not np.isin(labels, (0.0, 1.0)).all():
            raise DataError("labels must be binary")
        for name, arr in (("probs", probs), ("labels", labels), ("noise_head", head)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class NoiseEstimate:
    """Standardized per-sample noise scalars plus backward bookkeeping."""

    epsilon_hat: np.ndarray = field(repr=False)
    std: float = 1.0
    degenerate: bool = False

    def __post_init__(self):
        eps = np.array(self.epsilon_hat, dtype=np.float64, order="C")
        if eps.ndim != 1 or eps.size < 1:
            raise ShapeError("epsilon_hat must be a non-empty vector")
        if self.degenerate:
            if np.any(eps != 0.0):
                raise DataError("degenerate noise estimate must be all zeros")
        else:
            if abs(float(eps.mean())) > 1e-9 or abs(float((eps * eps).mean()) - 1.0) > 1e-9:
                raise DataError("noise estimate violates zero-mean/unit-moment constraints")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilon_hat", eps)


@dataclass(frozen=True)
class Gradients:
    probs: np.ndarray = field(repr=False)
    noise_head: np.ndarray = field(repr=False)
    epsilon_raw: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LossReport:
    total: float
    per_class_weight: dict[int, float]
    per_class_seg_loss: dict[int, float]
    grads: Gradients
    degenerate_noise: bool
    config: dict[str, float]

    def to_json_dict(self) -> dict:
        """Scalar summary for serialization; gradient arrays stay in memory."""
        return {
            "total": self.total,
            "per_class_weight": {str(k): v for k, v in sorted(self.per_class_weight.items())},
            "per_class_seg_loss": {str(k): v for k, v in sorted(self.per_class_seg_loss.items())},
            "degenerate_noise": self.degenerate_noise,
            "config": dict(sorted(self.config.items())),
        }


def _check_pair(probs, targets):
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.ndim != 5 or targets.shape != probs.shape:
        raise ShapeError(f"shape mismatch: {probs.shape} vs {targets.shape}")
    return probs, targets


def _dice_per_class(probs, targets, smooth):
    overlap = (probs * targets).sum(axis=_SPATIAL)
    mass = probs.sum(axis=_SPATIAL) + targets.sum(axis=_SPATIAL)
    return 1.0 - (2.0 * overlap + smooth) / (mass + smooth)


def _bce_per_class(probs, targets, clamp):
    clipped = np.clip(probs, clamp, 1.0 - clamp)
    point = -(targets * np.log(clipped) + (1.0 - targets) * np.log1p(-clipped))
    return point.mean(axis=_SPATIAL)


def dice_loss(probs, targets, smooth: float = DEFAULT_SMOOTH) -> float:
    """Soft Dice loss: spatial overlap per (sample, class), averaged."""
    probs, targets = _check_pair(probs, targets)
    if smooth < 0:
        raise ParameterError(f"smooth must be >= 0, got {smooth}")
    return float(np.mean(_dice_per_class(probs, targets, smooth)))


def bce_loss(probs, targets, clamp: float = DEFAULT_CLAMP) -> float:
    """Binary cross-entropy, mean over all voxels; targets may be soft.

    Probabilities are clipped into [clamp, 1 - clamp] before the logs.
    """
    probs, targets = _check_pair(probs, targets)
    if not 0.0 < clamp < 0.5:
        raise ParameterError(f"clamp must lie in (0, 0.5), got {clamp}")
    return float(np.mean(_bce_per_class(probs, targets, clamp)))


def seg_loss(
    probs,
    targets,
    beta: float = DEFAULT_BETA,
    smooth: float = DEFAULT_SMOOTH,
    clamp: float = DEFAULT_CLAMP,
) -> float:
    """beta * Dice + (1 - beta) * BCE."""
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    return beta * dice_loss(probs, targets, smooth) + (1.0 - beta) * bce_loss(probs, targets, clamp)


def standardize_noise(raw) -> NoiseEstimate:
    """Reparameterize raw per-sample scalars to zero mean, unit second moment.

    Uses the population standard deviation so the constraints hold exactly
    by construction.  An (almost) constant batch cannot satisfy them; it
    maps to all zeros with the degenerate flag set.
    """
    raw = np.array(raw, dtype=np.float64, order="C")
    if raw.ndim != 1 or raw.size < 1:
        raise ShapeError("raw noise must be a non-empty vector")
    mean = float(raw.mean())
    var = float(np.mean((raw - mean) ** 2))
    if var < DEGENERATE_VAR:
        return NoiseEstimate(epsilon_hat=np.zeros_like(raw), std=0.0, degenerate=True)
    std = float(np.sqrt(var))
    return NoiseEstimate(epsilon_hat=(raw - mean) / std, std=std, degenerate=False)


def denoise_labels(labels, noise: NoiseEstimate, noise_head, gamma: float = DEFAULT_GAMMA):
    """Subtract the capped noise correction from labels, keeping [0, 1].

    The correction eps_i * noise_head is clipped elementwise to
    [-gamma, gamma] first; the result is clipped into [0, 1] so BCE stays
    defined on the denoised targets.
    """
    labels, noise_head = _check_pair(labels, noise_head)
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    if noise.epsilon_hat.size != labels.shape[0]:
        raise ShapeError(
            f"{noise.epsilon_hat.size} noise scalars for batch of {labels.shape[0]}"
        )
    correction = noise.epsilon_hat[:, None, None, None, None] * noise_head
    correction = np.clip(correction, -gamma, gamma)
    return np.clip(labels - correction, 0.0, 1.0)


def _class_weights(scales: dict, n_classes: int, alpha: float) -> np.ndarray:
    weights = np.empty(n_classes, dtype=np.float64)
    for c in range(n_classes):
        if c not in scales:
            raise ClassError(f"no scale supplied for class {c}")
        s = float(scales[c])
        if not 0.0 <= s <= 1.0:
            raise ParameterError(f"scale for class {c} is {s}, expected [0, 1]")
        weights[c] = 1.0 / (1.0 + alpha * s)
    return weights


def duo_total_loss(
    batch: PredictionBatch,
    noise: NoiseEstimate,
    scales: dict,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    smooth: float = DEFAULT_SMOOTH,
    clamp: float = DEFAULT_CLAMP,
    gamma: float = DEFAULT_GAMMA,
) -> LossReport:
    """Uncertainty-weighted Dice+BCE on denoised labels, with gradients.

    Per (sample, class): seg loss on the denoised labels, scaled by the
    class weight 1 / (1 + alpha * S_c), then averaged over samples and
    classes.  With alpha == 0 and zero noise this reproduces the unweighted
    :func:`seg_loss` baseline bit for bit.  Gradients cover probs,
    noise_head, and the raw (pre-standardization) noise vector, with zero
    flow through clipped regions and through the scales.
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    if smooth < 0:
        raise ParameterError(f"smooth must be >= 0, got {smooth}")
    if not 0.0 < clamp < 0.5:
        raise ParameterError(f"clamp must lie in (0, 0.5), got {clamp}")
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")

    probs, labels, head = batch.probs, batch.labels, batch.noise_head
    n, c = batch.n_samples, batch.n_classes
    if noise.epsilon_hat.size != n:
        raise ShapeError(f"{noise.epsilon_hat.size} noise scalars for batch of {n}")
    weights = _class_weights(scales, c, alpha)

    eps = noise.epsilon_hat[:, None, None, None, None]
    corr_raw = eps * head
    corr = np.clip(corr_raw, -gamma, gamma)
    corr_mask = (corr_raw > -gamma) & (corr_raw < gamma)
    targets_raw = labels - corr
    targets = np.clip(targets_raw, 0.0, 1.0)
    target_mask = (targets_raw > 0.0) & (targets_raw < 1.0)

    # forward, arranged so weights of exactly 1.0 leave the baseline bitwise intact
    dice_nc = _dice_per_class(probs, targets, smooth)
    bce_nc = _bce_per_class(probs, targets, clamp)
    w_nc = np.broadcast_to(weights[None, :], (n, c))
    total = beta * float(np.mean(w_nc * dice_nc)) + (1.0 - beta) * float(np.mean(w_nc * bce_nc))

    # backward
    voxels = float(np.prod(probs.shape[2:]))
    overlap = (probs * targets).sum(axis=_SPATIAL)
    mass = probs.sum(axis=_SPATIAL) + targets.sum(axis=_SPATIAL)
    num = (2.0 * overlap + smooth)[:, :, None, None, None]
    den = (mass + smooth)[:, :, None, None, None]
    d_dice_d_p = -(2.0 * targets * den - num) / (den * den)
    d_dice_d_t = -(2.0 * probs * den - num) / (den * den)

    clipped = np.clip(probs, clamp, 1.0 - clamp)
    prob_mask = (probs > clamp) & (probs < 1.0 - clamp)
    d_bce_d_p = (-targets / clipped + (1.0 - targets) / (1.0 - clipped)) / voxels * prob_mask
    d_bce_d_t = (np.log1p(-clipped) - np.log(clipped)) / voxels

    g_dice = (beta / (n * c)) * w_nc[:, :, None, None, None]
    g_bce = ((1.0 - beta) / (n * c)) * w_nc[:, :, None, None, None]
    grad_probs = g_dice * d_dice_d_p + g_bce * d_bce_d_p
    grad_targets = g_dice * d_dice_d_t + g_bce * d_bce_d_t

    grad_corr = -grad_targets * target_mask * corr_mask
    grad_head = grad_corr * eps
    grad_eps = (grad_corr * head).sum(axis=(1, 2, 3, 4))
    if noise.degenerate:
        grad_raw = np.zeros(n, dtype=np.float64)
    else:
        eps_vec = noise.epsilon_hat
        grad_raw = (
            grad_eps - grad_eps.mean() - eps_vec * np.mean(grad_eps * eps_vec)
        ) / noise.std

    seg_nc = beta * dice_nc + (1.0 - beta) * bce_nc
    return LossReport(
        total=total,
        per_class_weight={k: float(weights[k]) for k in range(c)},
        per_class_seg_loss={k: float(seg_nc[:, k].mean()) for k in range(c)},
        grads=Gradients(probs=grad_probs, noise_head=grad_head, epsilon_raw=grad_raw),
        degenerate_noise=noise.degenerate,
        config={
            "alpha": float(alpha),
            "beta": float(beta),
            "smooth": float(smooth),
            "clamp": float(clamp),
            "gamma": float(gamma),
        },
    )


def duo_gradients(
    batch: PredictionBatch,
    noise: NoiseEstimate,
    scales: dict,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    smooth: float = DEFAULT_SMOOTH,
    clamp: float = DEFAULT_CLAMP,
    gamma: float = DEFAULT_GAMMA,
) -> Gradients:
    """Analytic gradients of :func:`duo_total_loss` for the same inputs."""
    return duo_total_loss(batch, noise, scales, alpha, beta, smooth, clamp, gamma).grads


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_err: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_err.values())


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(
    batch: PredictionBatch,
    raw_noise: np.ndarray,
    scales: dict,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    smooth: float = DEFAULT_SMOOTH,
    clamp: float = DEFAULT_CLAMP,
    gamma: float = DEFAULT_GAMMA,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    The loss is treated as a function of (probs, noise_head, raw noise),
    re-running label denoising and noise standardization for every
    perturbed evaluation.
    """

    def total_of(probs, head, raw):
        b = PredictionBatch(probs=probs, labels=batch.labels, noise_head=head)
        return duo_total_loss(
            b, standardize_noise(raw), scales, alpha, beta, smooth, clamp, gamma
        ).total

    analytic = duo_total_loss(
        batch, standardize_noise(raw_noise), scales, alpha, beta, smooth, clamp, gamma
    ).grads

    errs = {}
    for name, base, grad in (
        ("probs", batch.probs, analytic.probs),
        ("noise_head", batch.noise_head, analytic.noise_head),
        ("epsilon_raw", np.asarray(raw_noise, dtype=np.float64), analytic.epsilon_raw),
    ):
        numeric = np.zeros_like(base, dtype=np.float64)
        flat = base.astype(np.float64).copy()
        for idx in range(flat.size):
            orig = flat.flat[idx]
            flat.flat[idx] = orig + step
            args = {"probs": batch.probs, "head": batch.noise_head, "raw": raw_noise}
            key = {"probs": "probs", "noise_head": "head", "epsilon_raw": "raw"}[name]
            args[key] = flat
            plus = total_of(args["probs"], args["head"], args["raw"])
            flat.flat[idx] = orig - step
            args[key] = flat
            minus = total_of(args["probs"], args["head"], args["raw"])
            flat.flat[idx] = orig
            numeric.flat[idx] = (plus - minus) / (2.0 * step)
        errs[name] = _rel_err(grad, numeric)
    return GradCheckResult(max_rel_err=errs, tolerance=tolerance)
