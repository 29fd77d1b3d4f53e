"""Synthetic feature volumes with controlled intrinsic rank and noise.

Stands in for foundation-model features at desk scale: clean samples get
high-rank class matrices (slow singular decay, high semantic scale), noisy
samples get low-rank ones plus isotropic noise (fast energy accumulation,
low scale).  Per-sample RNG streams are derived from (seed, sample index),
so generation order and parallelism never change the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, ParameterError
from .volumes import CLASS_SIDECAR, FeatureVolume, save_feature_volume

GROUND_TRUTH_FILE = "ground_truth.json"


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic dataset.

    Defaults mirror the 5%-noisy filtering setting: 200 samples, 5%
    injected noisy, rank 2 against rank 16.
    """

    n_samples: int = 200
    shape: tuple[int, int, int, int] = (2, 16, 32, 32)
    clean_rank: int = 16
    noisy_rank: int = 2
    frac_noisy: float = 0.05
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        c, d, h, w = self.shape
        min_dim = min(d, h * w)
        if not 1 <= self.noisy_rank < self.clean_rank:
            raise ParameterError(
                f"need clean_rank > noisy_rank >= 1, got {self.clean_rank} vs {self.noisy_rank}"
            )
        if self.clean_rank > min_dim:
            raise ParameterError(f"clean_rank {self.clean_rank} exceeds min dim {min_dim}")
        if not 0.0 <= self.frac_noisy <= 1.0:
            raise ParameterError(f"frac_noisy must lie in [0, 1], got {self.frac_noisy}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.n_samples < 1:
            raise ParameterError(f"n_samples must be >= 1, got {self.n_samples}")


def _sample_rng(spec: SynthSpec, sample_index: int) -> np.random.Generator:
    return np.random.default_rng([int(spec.seed), int(sample_index)])


def make_feature_volume(
    spec: SynthSpec,
    is_noisy: bool,
    seed,
    sample_id: str | None = None,
) -> FeatureVolume:
    """One volume: per class, a sum of `rank` Gaussian outer products plus noise.

    ``seed`` may be an int or a sequence accepted by
    ``numpy.random.default_rng``; the same seed always reproduces the volume
    bit for bit.
    """
    c, d, h, w = spec.shape
    rank = spec.noisy_rank if is_noisy else spec.clean_rank
    rng = np.random.default_rng(seed)
    data = np.empty((c, d, h * w), dtype=np.float64)
    for ch in range(c):
        left = rng.standard_normal((d, rank))
        right = rng.standard_normal((rank, h * w))
        data[ch] = left @ right
        if spec.noise_sigma > 0:
            data[ch] += spec.noise_sigma * rng.standard_normal((d, h * w))
    return FeatureVolume(
        sample_id=sample_id if sample_id is not None else "synthetic",
        class_ids=tuple(range(c)),
        data=data.reshape(c, d, h, w),
    )


def plan_dataset(spec: SynthSpec) -> list[tuple[str, bool]]:
    """Deterministic (sample_id, is_noisy) assignment for a spec.

    floor(frac_noisy * N) samples are flagged noisy, at shuffled positions.
    """
    n_noisy = int(spec.frac_noisy * spec.n_samples + 1e-9)
    if spec.frac_noisy > 0 and n_noisy < 1:
        raise ParameterError(
            f"frac_noisy {spec.frac_noisy} yields no noisy samples for N={spec.n_samples}"
        )
    width = max(4, len(str(spec.n_samples - 1)))
    ids = [f"sample_{i:0{width}d}" for i in range(spec.n_samples)]
    rng = np.random.default_rng([int(spec.seed), 0xD5])
    noisy_positions = set(rng.permutation(spec.n_samples)[:n_noisy].tolist())
    return [(sid, i in noisy_positions) for i, sid in enumerate(ids)]


def generate_volumes(spec: SynthSpec):
    """Yield (FeatureVolume, is_noisy) pairs without touching disk."""
    for index, (sid, noisy) in enumerate(plan_dataset(spec)):
        yield make_feature_volume(
            spec, noisy, seed=[int(spec.seed), int(index) + 1], sample_id=sid
        ), noisy


def make_dataset(spec: SynthSpec, out_dir) -> dict[str, bool]:
    """Write a tensor-file directory plus sidecars; returns the ground truth.

    Outputs one NPY per sample, a class-id sidecar, and a
    ``ground_truth.json`` mapping sample_id -> is_noisy for recovery
    scoring.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    truth: dict[str, bool] = {}
    class_ids: dict[str, list[int]] = {}
    for volume, noisy in generate_volumes(spec):
        save_feature_volume(volume, out_dir / f"{volume.sample_id}.npy")
        truth[volume.sample_id] = bool(noisy)
        class_ids[volume.sample_id] = list(volume.class_ids)
    try:
        (out_dir / GROUND_TRUTH_FILE).write_text(
            json.dumps(truth, sort_keys=True, indent=1) + "\n"
        )
        (out_dir / CLASS_SIDECAR).write_text(
            json.dumps(class_ids, sort_keys=True, indent=1) + "\n"
        )
    except OSError as exc:
        raise IoError(f"cannot write sidecars in {out_dir}: {exc}") from exc
    return truth
