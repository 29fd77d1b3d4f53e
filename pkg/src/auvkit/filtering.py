"""Quantile-based retain/drop decisions over AUV batches.

Samples whose uncertainty value does not exceed the empirical p-quantile
threshold are retained; the rest are dropped with the scope (GLOBAL or the
violating class) recorded as the reason.  Manifests serialize as JSON Lines
with a metadata header so a filtering run is fully auditable and
byte-reproducible.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClassError, FormatError, IoError, ParameterError
from .spectrum import DEFAULT_FLOOR, AUVRecord, auv_batch

GLOBAL_SCOPE = "GLOBAL"

MANIFEST_SCHEMA = "auvkit.manifest/1"
RECORDS_SCHEMA = "auvkit.records/1"

# Absolute slack when turning p*N into a count, so that decimal quantiles
# like 0.95 behave as written instead of as their binary approximations.
_CEIL_SLACK = 1e-9


class FilterStrategy(enum.Enum):
    """Provenance tag for a filtering run.

    raw / normalized records whether the features came from raw images or
    mask-normalized ones; the engine treats the tags identically and stores
    them for audit.
    """

    GLOBAL_RAW = "global_raw"
    GLOBAL_NORMALIZED = "global_normalized"
    PER_CLASS_RAW = "per_class_raw"
    PER_CLASS_NORMALIZED = "per_class_normalized"

    @property
    def per_class(self) -> bool:
        return self in (FilterStrategy.PER_CLASS_RAW, FilterStrategy.PER_CLASS_NORMALIZED)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    auv: float
    retained: bool
    reason: str | None
    per_class_auv: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class FilterManifest:
    strategy: FilterStrategy
    quantile: float
    thresholds: dict[str, float]
    entries: tuple[ManifestEntry, ...]
    union: bool = False

    @property
    def retained_ids(self) -> list[str]:
        return [e.sample_id for e in self.entries if e.retained]

    @property
    def dropped_ids(self) -> list[str]:
        return [e.sample_id for e in self.entries if not e.retained]


def min_retained_count(n: int, p_tilde: float) -> int:
    """ceil(p * n) with decimal-intent slack; the retention lower bound."""
    return max(1, min(n, int(math.ceil(p_tilde * n - _CEIL_SLACK))))


def quantile_threshold(auvs, p_tilde: float) -> float:
    """Smallest observed value a with  #{x <= a} / N >= p_tilde.

    The right-continuous inverse of the empirical CDF, evaluated on the
    observations themselves.
    """
    values = sorted(float(a) for a in auvs)
    if not values:
        raise ParameterError("empty AUV list")
    if not 0.0 < p_tilde <= 1.0:
        raise ParameterError(f"quantile must lie in (0, 1], got {p_tilde}")
    return values[min_retained_count(len(values), p_tilde) - 1]


def _sorted_records(records) -> list[AUVRecord]:
    records = sorted(records, key=lambda r: r.sample_id)
    if not records:
        raise ParameterError("empty record batch")
    return records


def filter_global(
    records,
    p_tilde: float,
    strategy: FilterStrategy = FilterStrategy.GLOBAL_NORMALIZED,
) -> FilterManifest:
    """Retain samples whose AUV is at or below the global quantile threshold.

    Ties at the threshold are all retained, so the retained count is at
    least ceil(p_tilde * N).
    """
    records = _sorted_records(records)
    threshold = quantile_threshold([r.auv for r in records], p_tilde)
    entries = tuple(
        ManifestEntry(
            sample_id=r.sample_id,
            auv=r.auv,
            retained=r.auv <= threshold,
            reason=GLOBAL_SCOPE,
            per_class_auv={},
        )
        for r in records
    )
    return FilterManifest(
        strategy=strategy,
        quantile=float(p_tilde),
        thresholds={GLOBAL_SCOPE: threshold},
        entries=entries,
    )


def per_class_auvs(records, classes=None, floor: float = DEFAULT_FLOOR) -> dict[int, dict[str, float]]:
    """AUVs recomputed independently per class from each record's class scales.

    Each class column is normalized only over the records that carry that
    class.  Raises :class:`ClassError` when a requested class appears in no
    record.
    """
    records = _sorted_records(records)
    if classes is None:
        classes = sorted({c for r in records for c in r.per_class_scale})
        if not classes:
            raise ClassError("records carry no per-class scales")
    result: dict[int, dict[str, float]] = {}
    for cls in classes:
        column = [(r.sample_id, r.per_class_scale[cls]) for r in records if cls in r.per_class_scale]
        if not column:
            raise ClassError(f"class {cls} absent from all records")
        result[int(cls)] = {rec.sample_id: rec.auv for rec in auv_batch(column, floor=floor)}
    return result


def filter_per_class(
    records,
    p_tilde: float,
    classes=None,
    strategy: FilterStrategy = FilterStrategy.PER_CLASS_NORMALIZED,
    union: bool = False,
    floor: float = DEFAULT_FLOOR,
) -> FilterManifest:
    """Filter with an independent quantile threshold per class.

    By default retention is conjunctive: a sample stays only if its class
    AUV is acceptable for every requested class it carries, since a sample
    noisy in any annotated class can misguide training.  ``union=True``
    switches to the disjunctive reading (acceptable for at least one class).
    The drop reason records the first violating class in requested order.
    """
    records = _sorted_records(records)
    class_auvs = per_class_auvs(records, classes, floor=floor)
    class_order = sorted(class_auvs)
    thresholds = {
        str(cls): quantile_threshold(list(class_auvs[cls].values()), p_tilde)
        for cls in class_order
    }

    entries = []
    for record in records:
        present = [c for c in class_order if record.sample_id in class_auvs[c]]
        verdicts = {
            c: class_auvs[c][record.sample_id] <= thresholds[str(c)] for c in present
        }
        if union:
            retained = any(verdicts.values())
        else:
            retained = all(verdicts.values())
        reason = None
        if not retained:
            violating = [c for c in present if not verdicts[c]]
            reason = str(violating[0]) if violating else GLOBAL_SCOPE
        entries.append(
            ManifestEntry(
                sample_id=record.sample_id,
                auv=record.auv,
                retained=retained,
                reason=reason,
                per_class_auv={c: class_auvs[c][record.sample_id] for c in present},
            )
        )
    return FilterManifest(
        strategy=strategy,
        quantile=float(p_tilde),
        thresholds=thresholds,
        entries=tuple(entries),
        union=union,
    )


def export_histogram(auvs, bins: int, path) -> None:
    """Write a fixed-range [0, 1] histogram of AUVs as CSV.

    Values are clipped into [0, 1] first so the counts always sum to N.
    Columns: bin_left, bin_right, count.
    """
    if bins < 1:
        raise ParameterError(f"bins must be >= 1, got {bins}")
    values = np.clip(np.asarray(list(auvs), dtype=np.float64), 0.0, 1.0)
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    try:
        with open(path, "w", newline="") as fp:
            fp.write("bin_left,bin_right,count\n")
            for i, count in enumerate(counts):
                fp.write(f"{edges[i]!r},{edges[i + 1]!r},{int(count)}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(manifest: FilterManifest, path, metadata: dict | None = None) -> None:
    """Serialize a manifest as JSON Lines: one header, then one line per sample.

    Entries are already ordered by sample id, so identical inputs produce
    byte-identical files.
    """
    header = {
        "schema": MANIFEST_SCHEMA,
        "strategy": manifest.strategy.value,
        "quantile": manifest.quantile,
        "thresholds": {k: manifest.thresholds[k] for k in sorted(manifest.thresholds)},
        "union": manifest.union,
    }
    header.update(metadata or {})
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(_json_line(header) + "\n")
            for entry in manifest.entries:
                fp.write(
                    _json_line(
                        {
                            "sample_id": entry.sample_id,
                            "auv": entry.auv,
                            "per_class_auv": {str(k): v for k, v in sorted(entry.per_class_auv.items())},
                            "retained": entry.retained,
                            "reason": entry.reason,
                            "strategy": manifest.strategy.value,
                            "quantile": manifest.quantile,
                            "thresholds": {k: manifest.thresholds[k] for k in sorted(manifest.thresholds)},
                        }
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_records(records, path, metadata: dict | None = None) -> None:
    """Serialize AUV records as JSON Lines with a metadata header."""
    records = _sorted_records(records)
    header = {"schema": RECORDS_SCHEMA}
    header.update(metadata or {})
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(_json_line(header) + "\n")
            for record in records:
                fp.write(
                    _json_line(
                        {
                            "sample_id": record.sample_id,
                            "sample_scale": record.sample_scale,
                            "auv": record.auv,
                            "per_class_scale": {str(k): v for k, v in sorted(record.per_class_scale.items())},
                        }
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_records(path) -> tuple[dict, list[AUVRecord]]:
    """Read a records file back into (header, AUVRecord list)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty records file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    if header.get("schema") != RECORDS_SCHEMA:
        raise FormatError(f"{path}: unexpected schema {header.get('schema')!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(
                AUVRecord(
                    sample_id=str(obj["sample_id"]),
                    sample_scale=float(obj["sample_scale"]),
                    auv=float(obj["auv"]),
                    per_class_scale={int(k): float(v) for k, v in obj.get("per_class_scale", {}).items()},
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad record: {exc}") from exc
    return header, records
