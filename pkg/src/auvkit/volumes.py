"""Feature-volume I/O and per-class analysis matrices.

A feature volume is the (C, D, H, W) activation tensor a frozen extractor
produced for one image volume: C per-class channels, D depth slices, and an
H x W in-plane grid.  Volumes live on disk as NPY v1.0 files holding
little-endian float32 in C order, one file per sample, with the file stem as
the sample id.  In memory everything is float64 and immutable, so values can
be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .errors import ClassError, DataError, FormatError, IoError, ShapeError

NPY_MAGIC = b"\x93NUMPY"

#: dtype required by the on-disk container.
DISK_DTYPE = np.dtype("<f4")

#: name of the optional sidecar mapping sample_id -> class ids present.
CLASS_SIDECAR = "class_ids.json"

_ROW_MEAN_RTOL = 1e-6


@dataclass(frozen=True)
class FeatureVolume:
    """Immutable (C, D, H, W) activation tensor for one sample.

    ``class_ids[k]`` labels channel ``k``.  ``data`` is float64,
    C-contiguous, and write-protected.
    """

    sample_id: str
    class_ids: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 4:
            raise ShapeError(f"feature volume must have rank 4, got {data.ndim}")
        c, d, h, w = data.shape
        if c < 1 or d < 1 or h * w < 2:
            raise ShapeError(f"invalid volume shape {data.shape}: need C>=1, D>=1, H*W>=2")
        if len(self.class_ids) != c:
            raise ShapeError(
                f"{len(self.class_ids)} class ids for {c} channels"
            )
        if not np.isfinite(data).all():
            raise DataError(f"volume {self.sample_id!r} contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ClassFeatureMatrix:
    """One class channel reshaped to a D x (H*W) analysis matrix.

    With ``centered`` set, every row has had its mean removed, which makes
    the squared singular values proportional to the eigenvalues of the
    row-covariance of the raw matrix.
    """

    class_id: int
    data: np.ndarray = field(repr=False)
    centered: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 2:
            raise ShapeError(f"class matrix must have rank 2, got {data.ndim}")
        if not np.isfinite(data).all():
            raise DataError(f"class matrix for class {self.class_id} has non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _read_npy(path: Path) -> np.ndarray:
    try:
        fp = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with fp:
        magic = fp.read(len(NPY_MAGIC))
        if magic != NPY_MAGIC:
            raise FormatError(f"{path}: not an NPY file (bad magic {magic!r})")
        major, minor = fp.read(1), fp.read(1)
        if major != b"\x01" or minor != b"\x00":
            raise FormatError(f"{path}: unsupported NPY version {major!r}.{minor!r}")
        try:
            shape, fortran, dtype = npy_format.read_array_header_1_0(fp)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed NPY header: {exc}") from exc
        if dtype != DISK_DTYPE:
            raise FormatError(f"{path}: expected little-endian float32, got {dtype}")
        if fortran:
            raise FormatError(f"{path}: expected C-contiguous order")
        count = int(np.prod(shape)) if shape else 1
        raw = fp.read(count * DISK_DTYPE.itemsize)
        if len(raw) != count * DISK_DTYPE.itemsize:
            raise FormatError(f"{path}: truncated data section")
        return np.frombuffer(raw, dtype=DISK_DTYPE).reshape(shape)


def load_feature_volume(path, class_ids=None) -> FeatureVolume:
    """Read one tensor file into a validated :class:`FeatureVolume`.

    ``class_ids`` defaults to ``0..C-1``.  Raises :class:`FormatError` for a
    malformed container, :class:`ShapeError` when the stored rank is not 4,
    and :class:`DataError` when any value is non-finite.
    """
    path = Path(path)
    arr = _read_npy(path)
    if arr.ndim != 4:
        raise ShapeError(f"{path}: expected rank-4 tensor, got rank {arr.ndim}")
    if class_ids is None:
        class_ids = tuple(range(arr.shape[0]))
    return FeatureVolume(
        sample_id=path.stem,
        class_ids=tuple(int(c) for c in class_ids),
        data=arr.astype(np.float64),
    )


def save_feature_volume(volume: FeatureVolume, path) -> Path:
    """Write ``volume`` as NPY v1.0 float32; returns the path written."""
    path = Path(path)
    try:
        with open(path, "wb") as fp:
            npy_format.write_array(
                fp, volume.data.astype(DISK_DTYPE), version=(1, 0)
            )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def class_matrix(volume: FeatureVolume, class_id: int, center: bool = True) -> ClassFeatureMatrix:
    """Reshape one class channel to D x (H*W), optionally removing row means.

    Centering makes the singular spectrum match the covariance eigenspectrum
    up to the 1/(N-1) factor; pass ``center=False`` for the raw-spectrum
    ablation.  Raises :class:`ClassError` for an unknown ``class_id``.
    """
    try:
        idx = volume.class_ids.index(int(class_id))
    except ValueError:
        raise ClassError(
            f"class {class_id} not in volume {volume.sample_id!r} (has {volume.class_ids})"
        ) from None
    _, d, h, w = volume.shape
    mat = np.array(volume.data[idx].reshape(d, h * w), dtype=np.float64)
    if center:
        mat -= mat.mean(axis=1, keepdims=True)
    return ClassFeatureMatrix(class_id=int(class_id), data=mat, centered=center)


def row_means_near_zero(matrix: ClassFeatureMatrix) -> bool:
    """True when every row mean is zero within the centering tolerance."""
    scale = max(float(np.max(np.abs(matrix.data))), 1e-300)
    return bool(np.all(np.abs(matrix.data.mean(axis=1)) <= _ROW_MEAN_RTOL * scale))


def dataset_paths(directory) -> list[Path]:
    """All tensor files in ``directory``, sorted by sample id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory} is not a directory")
    return sorted(directory.glob("*.npy"), key=lambda p: p.stem)


def read_class_sidecar(directory) -> dict[str, list[int]]:
    """Read the optional sample_id -> class_ids sidecar; {} when absent."""
    sidecar = Path(directory) / CLASS_SIDECAR
    if not sidecar.exists():
        return {}
    try:
        mapping = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{sidecar}: {exc}") from exc
    return {str(k): [int(c) for c in v] for k, v in mapping.items()}
