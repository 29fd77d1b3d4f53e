"""In-process bindings of the auvkit engine for training loops.

Two entry points, both thin pass-throughs to the numpy engine so results
match it bit for bit:

* :func:`scale_of` -- semantic perception scale of one class's (D, H, W)
  decoder features, computable every iteration without file I/O;
* :func:`duo_loss_and_grads` -- forward value and analytic gradients of the
  uncertainty-weighted segmentation loss, shaped for use as a custom
  autograd function's backward values.

Arrays are accepted as C-contiguous float32 or float64 buffers; float64
input reaches the engine without conversion.  Heavy SVD and eigensolver
work happens inside LAPACK, which releases the GIL, so other host threads
keep running.  No state is kept between calls.  A torch adapter lives in
:mod:`auv_bindings.torch_adapter`.
"""

from __future__ import annotations

import numpy as np

import auvkit
from auvkit.duo import PredictionBatch, duo_total_loss, standardize_noise
from auvkit.errors import AuvKitError
from auvkit.spectrum import DEFAULT_EPSILON, class_scale
from auvkit.volumes import FeatureVolume, class_matrix

__version__ = "0.1.0"

#: version of the engine these bindings were built against.
ENGINE_VERSION = auvkit.__version__


class BindingError(Exception):
    """An array's layout, dtype, or shape cannot cross the binding boundary."""


def _as_view(array, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(array)
    if arr.dtype not in (np.float32, np.float64):
        raise BindingError(f"{name}: expected float32/float64 buffer, got {arr.dtype}")
    if not arr.flags["C_CONTIGUOUS"]:
        raise BindingError(f"{name}: buffer must be C-contiguous")
    if arr.ndim != ndim:
        raise BindingError(f"{name}: expected rank {ndim}, got rank {arr.ndim}")
    return arr.astype(np.float64, copy=False)


def scale_of(features, epsilon: float = DEFAULT_EPSILON, center: bool = True) -> float:
    """Semantic perception scale of one (D, H, W) feature map, in [0, 1].

    Runs the engine's own reshape/center -> singular values -> energy
    entropy chain, so the value equals the primary pipeline's scale for the
    same input exactly.
    """
    view = _as_view(features, 3, "features")
    try:
        volume = FeatureVolume("binding", (0,), view[np.newaxis])
        return class_scale(class_matrix(volume, 0, center=center), epsilon)
    except AuvKitError as exc:
        raise BindingError(str(exc)) from exc


def duo_loss_and_grads(
    probs,
    labels,
    noise_head,
    epsilon_raw,
    scales: dict,
    alpha: float = 1.0,
    beta: float = 0.5,
    smooth: float = 1.0,
    clamp: float = 1e-7,
    gamma: float = 0.5,
):
    """Loss value plus gradients w.r.t. probs, noise_head, and raw noise.

    Inputs are (N, C, D, H, W) buffers plus the (N,) raw noise vector and a
    class -> scale map; the raw vector is standardized to zero mean and
    unit second moment inside.  Returns ``(loss, grad_probs,
    grad_noise_head, grad_epsilon_raw)`` as float64 arrays ready to hand to
    a host autograd function's backward.
    """
    p = _as_view(probs, 5, "probs")
    y = _as_view(labels, 5, "labels")
    h = _as_view(noise_head, 5, "noise_head")
    raw = _as_view(epsilon_raw, 1, "epsilon_raw")
    try:
        batch = PredictionBatch(probs=p, labels=y, noise_head=h)
        report = duo_total_loss(
            batch, standardize_noise(raw), scales,
            alpha=alpha, beta=beta, smooth=smooth, clamp=clamp, gamma=gamma,
        )
    except AuvKitError as exc:
        raise BindingError(str(exc)) from exc
    grads = report.grads
    return report.total, grads.probs, grads.noise_head, grads.epsilon_raw
