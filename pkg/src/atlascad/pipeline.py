"""Glue between cohort files, feature tables and node/tree objects."""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError, DataError
from .features import SCHEMA_V1, FeatureRow, extract_features
from .phantom import MorphClass, read_manifest, segmentation_name
from .tree import CaseBundle
from .volume import load_volume


def extract_cohort(data_dir, schema=SCHEMA_V1, connectivity=26, atlas_classes=None):
    """Feature rows for every role=case entry, one per atlas class.

    Rows come in manifest order, atlas classes in declaration order.
    """
    data_dir = os.fspath(data_dir)
    manifest = os.path.join(data_dir, "manifest.csv")
    if not os.path.exists(manifest):
        raise ConfigError(f"manifest not found: {manifest}")
    atlas_classes = list(atlas_classes or [c.value for c in MorphClass])
    entries = [e for e in read_manifest(manifest) if e.role == "case"]
    if not entries:
        raise DataError(f"{manifest}: no role=case entries")
    # check every input exists before doing any work
    needed = []
    for e in entries:
        needed.append(os.path.join(data_dir, e.intensity_path))
        needed.extend(os.path.join(data_dir, segmentation_name(e.case_id, a))
                      for a in atlas_classes)
    for path in needed:
        if not os.path.exists(path):
            raise ConfigError(f"missing input file: {path}")
    rows = []
    for e in entries:
        img = load_volume(os.path.join(data_dir, e.intensity_path))
        for atlas in atlas_classes:
            seg = load_volume(os.path.join(data_dir, segmentation_name(e.case_id, atlas)))
            fv = extract_features(img, seg, schema, connectivity)
            rows.append(FeatureRow(e.case_id, atlas, e.true_class, fv))
    return rows


def node_dataset(rows, atlas_class):
    """(case ids, feature matrix, +/-1 tags) for the node bound to ``atlas_class``.

    A case is positive when its true class is the node's atlas class.
    """
    sel = [r for r in rows if r.atlas_class == atlas_class]
    if not sel:
        raise DataError(f"no feature rows for atlas class {atlas_class!r}")
    ids = [r.case_id for r in sel]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate case ids for atlas class {atlas_class!r}")
    X = np.array([r.features.values for r in sel])
    tags = np.array([1.0 if r.true_class == atlas_class else -1.0 for r in sel])
    return ids, X, tags


def bundles_from_rows(rows):
    """One CaseBundle per case; the true diagnosis is the case's true class."""
    bundles = {}
    for r in rows:
        b = bundles.setdefault(r.case_id, CaseBundle(r.case_id, {}, r.true_class))
        if b.true_diagnosis != r.true_class:
            raise DataError(f"case {r.case_id}: inconsistent true class")
        if r.atlas_class in b.features_by_atlas:
            raise DataError(f"case {r.case_id}: duplicate row for atlas {r.atlas_class}")
        b.features_by_atlas[r.atlas_class] = r.features
    return list(bundles.values())
