"""Segmentation-quality features computed inside the propagated masks.

Statistics are taken only over the voxels a segmentation assigns to a
structure; nothing outside the masks contributes. A well-propagated
segmentation yields bright, compact, single-component regions, a poor
one spills onto background and breaks up.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, GridError, SchemaMismatchError
from .volume import AORTA, PULMONARY_ARTERY, same_grid

N_FEATURES = 15

_STRUCTURES = {"ao": AORTA, "pa": PULMONARY_ARTERY}
_PER_STRUCTURE = ("mean", "std", "min", "max", "voxel_count", "component_count", "range")


@dataclass(frozen=True)
class MaskedStats:
    mean: float
    std: float
    min: float
    max: float
    voxel_count: int
    component_count: int

    @property
    def empty(self):
        """Empty-mask signal: the structure has no voxels in the segmentation."""
        return self.voxel_count == 0

    @property
    def range(self):
        return self.max - self.min


EMPTY_STATS = MaskedStats(0.0, 0.0, 0.0, 0.0, 0, 0)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered slot descriptors; each slot is ``(structure, statistic)``."""

    schema_id: str
    slots: tuple

    def __post_init__(self):
        if len(self.slots) != N_FEATURES:
            raise ConfigError(f"schema must have {N_FEATURES} slots, got {len(self.slots)}")
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError("schema slot names must be unique")

    @property
    def names(self):
        return [f"{s}_{stat}" for s, stat in self.slots]


SCHEMA_V1 = FeatureSchema(
    "v1",
    tuple((s, stat) for s in ("ao", "pa") for stat in _PER_STRUCTURE)
    + (("joint", "mean_ratio"),),
)

SCHEMAS = {SCHEMA_V1.schema_id: SCHEMA_V1}


def get_schema(schema_id):
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise ConfigError(f"unknown feature schema {schema_id!r}") from None


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    schema_id: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != N_FEATURES:
            raise DataError(f"feature vector needs {N_FEATURES} entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise DataError("feature vector contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.schema_id == other.schema_id and np.array_equal(self.values, other.values)

    def check_schema(self, schema_id):
        if self.schema_id != schema_id:
            raise SchemaMismatchError(
                f"feature schema {self.schema_id!r} does not match model schema {schema_id!r}"
            )


def _structure_element(connectivity):
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ConfigError(f"connectivity must be 6 or 26, got {connectivity}")


def _code(s):
    code = int(s)
    if code < 1:
        raise ConfigError(f"structure code must be >= 1, got {s}")
    return code


def count_components(mask, connectivity=26):
    """Number of connected components of a boolean 3D mask."""
    _, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_structure_element(connectivity))
    return int(n)


def connected_components(seg, s, connectivity=26):
    """Number of connected voxel sets labeled ``s`` in ``seg``."""
    return count_components(seg.labels == _code(s), connectivity)


def masked_stats(img, seg, s, connectivity=26):
    """Intensity statistics of ``img`` over the voxels where ``seg == s``.

    An absent structure returns ``EMPTY_STATS`` (check ``.empty``) rather
    than raising; the std is the population (divide-by-n) value.
    """
    if not same_grid(img, seg):
        raise GridError(f"image grid {img.dims}/{img.spacing} != segmentation grid "
                        f"{seg.dims}/{seg.spacing}")
    _structure_element(connectivity)
    mask = seg.labels == _code(s)
    n = int(np.count_nonzero(mask))
    if n == 0:
        return EMPTY_STATS
    vals = img.data[mask].astype(np.float64)
    mean = float(vals.mean())
    lo, hi = float(vals.min()), float(vals.max())
    # guard against the mean drifting an ulp outside [min, max]
    mean = min(max(mean, lo), hi)
    return MaskedStats(
        mean=mean,
        std=float(vals.std()),
        min=lo,
        max=hi,
        voxel_count=n,
        component_count=count_components(mask, connectivity),
    )


def extract_features(img, seg, schema=SCHEMA_V1, connectivity=26):
    """Fill the schema's slots from masked statistics of each structure."""
    if not same_grid(img, seg):
        raise GridError(f"image grid {img.dims}/{img.spacing} != segmentation grid "
                        f"{seg.dims}/{seg.spacing}")
    stats = {}
    values = []
    for structure, stat in schema.slots:
        if structure == "joint":
            values.append(_joint_value(stat, stats, img, seg, connectivity))
            continue
        if structure not in stats:
            stats[structure] = masked_stats(img, seg, _STRUCTURES[structure], connectivity)
        values.append(float(getattr(stats[structure], stat)))
    return FeatureVector(values, schema.schema_id)


def _joint_value(stat, stats, img, seg, connectivity):
    if stat != "mean_ratio":
        raise ConfigError(f"unknown joint statistic {stat!r}")
    for key in ("ao", "pa"):
        if key not in stats:
            stats[key] = masked_stats(img, seg, _STRUCTURES[key], connectivity)
    ao, pa = stats["ao"], stats["pa"]
    if ao.empty or pa.empty or pa.mean == 0.0:
        return 0.0
    ratio = ao.mean / pa.mean
    return ratio if math.isfinite(ratio) else 0.0


# -- feature table ------------------------------------------------------------

FEATURE_COLUMNS = [f"f{i:02d}" for i in range(1, N_FEATURES + 1)]
TABLE_HEADER = ["case_id", "atlas_class", "true_class"] + FEATURE_COLUMNS


@dataclass(frozen=True)
class FeatureRow:
    case_id: str
    atlas_class: str
    true_class: str
    features: FeatureVector


def format_value(x):
    return f"{x:.9g}"


def write_feature_table(rows, path):
    with open(os.fspath(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_HEADER)
        for row in rows:
            writer.writerow([row.case_id, row.atlas_class, row.true_class]
                            + [format_value(v) for v in row.features.values])


def read_feature_table(path, schema_id=SCHEMA_V1.schema_id):
    rows = []
    with open(os.fspath(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TABLE_HEADER:
            raise DataError(f"{path}: unexpected feature table header {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TABLE_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(TABLE_HEADER)} fields")
            try:
                vals = [float(v) for v in rec[3:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append(FeatureRow(rec[0], rec[1], rec[2], FeatureVector(vals, schema_id)))
    return rows
