"""Synthetic two-vessel phantoms standing in for the clinical cohort.

Each morphological class places the aorta and pulmonary artery as bright
capsule-shaped tubes in a noisy background:

* ``A_normal``  - two parallel tubes side by side along z,
* ``B_arterial`` - two tubes crossing in projection at different heights,
* ``C_atrial``  - parallel tubes offset ("baffled") by the class shift.

A segmentation made with the correct atlas class is the ground truth with
a one-voxel boundary jitter. A wrong-class segmentation uses the atlas
class template translated by that class's misalignment shift, after which
label fusion rejects the dark part of the mask in random slabs along z,
so the mask both spills onto background and fragments.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .rng import CounterRNG, derive_seed
from .volume import AORTA, PULMONARY_ARTERY, LabelVolume, ScalarVolume, store_volume


class MorphClass(str, Enum):
    A_normal = "A_normal"
    B_arterial = "B_arterial"
    C_atrial = "C_atrial"

    @property
    def index(self):
        return list(MorphClass).index(self)


def morph_class(value):
    try:
        return MorphClass(value)
    except ValueError:
        raise ConfigError(f"unknown morphological class {value!r}") from None


# stream ids for derive_seed
_S_ANATOMY, _S_NOISE, _S_SEG = 1, 2, 3
_ROLE_CASE, _ROLE_ATLAS = 0, 1
_SLAB = 3


@dataclass(frozen=True)
class PhantomConfig:
    """Phantom parameters; lengths are in voxels.

    ``class_noise_std`` and ``class_shift`` override ``noise_std`` and
    ``misalign_shift`` for individual classes. They exist to degrade one
    class on purpose and are exempt from the separability checks.
    """

    dims: tuple = (48, 48, 48)
    spacing: tuple = (1.0, 1.0, 1.0)
    foreground_mean: float = 300.0
    background_mean: float = 50.0
    noise_std: float = 10.0
    tube_radius: float = 4.0
    misalign_shift: float = 6.0
    rng_seed: int = 0
    anatomy_jitter: float = 1.0
    boundary_flip: float = 0.3
    fusion_dropout: float = 0.5
    class_noise_std: dict = field(default_factory=dict)
    class_shift: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"dims must be 3 positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "class_noise_std",
                           {morph_class(k).value: float(v) for k, v in self.class_noise_std.items()})
        object.__setattr__(self, "class_shift",
                           {morph_class(k).value: float(v) for k, v in self.class_shift.items()})
        if self.tube_radius <= 0 or self.tube_radius >= min(dims) / 2:
            raise ConfigError(f"tube_radius must lie in (0, {min(dims) / 2}), got {self.tube_radius}")
        if self.noise_std < 0 or any(v < 0 for v in self.class_noise_std.values()):
            raise ConfigError("noise_std must be >= 0")
        if not self.foreground_mean > self.background_mean + 5 * self.noise_std:
            raise ConfigError("foreground_mean must exceed background_mean + 5 * noise_std")
        if not self.misalign_shift > self.tube_radius:
            raise ConfigError("misalign_shift must exceed tube_radius")
        if any(v < 0 for v in self.class_shift.values()):
            raise ConfigError("class_shift overrides must be >= 0")
        for name, p in (("anatomy_jitter", self.anatomy_jitter),):
            if p < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name, p in (("boundary_flip", self.boundary_flip),
                        ("fusion_dropout", self.fusion_dropout)):
            if not 0 <= p <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        self._check_bounds()

    def noise_for(self, cls):
        return self.class_noise_std.get(morph_class(cls).value, self.noise_std)

    def shift_for(self, cls):
        return self.class_shift.get(morph_class(cls).value, self.misalign_shift)

    @property
    def threshold(self):
        return 0.5 * (self.foreground_mean + self.background_mean)

    def _check_bounds(self):
        margin = self.tube_radius + self.anatomy_jitter
        for cls in MorphClass:
            for a, b in _template(self, cls).values():
                for pt in (a, b):
                    shifted = pt + np.array([self.shift_for(cls), 0.0, 0.0])
                    for q in (pt, shifted):
                        for axis in (0, 1):
                            if q[axis] - margin < 0 or q[axis] + margin > self.dims[axis] - 1:
                                raise ConfigError(
                                    f"class {cls.value} geometry leaves the volume on axis {axis}; "
                                    "increase dims or reduce radius/shift")


def _template(cfg, cls):
    """Tube centerline endpoints (voxel coordinates) per structure."""
    cls = morph_class(cls)
    r = cfg.tube_radius
    cx, cy = (cfg.dims[0] - 1) / 2, (cfg.dims[1] - 1) / 2
    z0, z1 = r + 1, cfg.dims[2] - 1 - (r + 1)
    if z1 <= z0:
        raise ConfigError("dims[2] too small for the tube length")
    g = 2 * r
    if cls is MorphClass.A_normal:
        ao = ((cx - g, cy, z0), (cx - g, cy, z1))
        pa = ((cx + g, cy, z0), (cx + g, cy, z1))
    elif cls is MorphClass.B_arterial:
        # keep the crossing tubes' rows clear of the A and C rows
        h = cfg.misalign_shift + 2 * r
        ao = ((cx - g, cy - h, z0), (cx + g, cy - h, z1))
        pa = ((cx + g, cy + h, z0), (cx - g, cy + h, z1))
    else:
        s = cfg.shift_for(cls)
        ao = ((cx - g, cy + s, z0), (cx - g, cy + s, z1))
        pa = ((cx + g, cy - s, z0), (cx + g, cy - s, z1))
    return {AORTA: tuple(np.array(p, dtype=float) for p in ao),
            PULMONARY_ARTERY: tuple(np.array(p, dtype=float) for p in pa)}


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")


def _capsule(grid, a, b, radius):
    gx, gy, gz = grid
    d = b - a
    dd = float(d @ d)
    px, py, pz = gx - a[0], gy - a[1], gz - a[2]
    if dd == 0:
        t = 0.0
    else:
        t = np.clip((px * d[0] + py * d[1] + pz * d[2]) / dd, 0.0, 1.0)
    ex, ey, ez = px - t * d[0], py - t * d[1], pz - t * d[2]
    return ex * ex + ey * ey + ez * ez <= radius * radius


def _render(cfg, tubes, offset=(0.0, 0.0, 0.0)):
    grid = _grid(cfg.dims)
    labels = np.zeros(cfg.dims, dtype=np.uint16)
    off = np.asarray(offset, dtype=float)
    for code in (AORTA, PULMONARY_ARTERY):
        a, b = tubes[code]
        labels[_capsule(grid, a + off, b + off, cfg.tube_radius)] = code
    return labels


class PhantomCase(NamedTuple):
    image: ScalarVolume
    truth: LabelVolume
    morph_class: MorphClass
    case_seed: int


def generate_case(cfg, cls, case_seed):
    """Noisy intensity volume and ground-truth labels for one case."""
    cls = morph_class(cls)
    anatomy = CounterRNG(derive_seed(case_seed, _S_ANATOMY))
    tubes = {}
    for code, (a, b) in _template(cfg, cls).items():
        jit = (anatomy.uniform(2) * 2 - 1) * cfg.anatomy_jitter
        off = np.array([jit[0], jit[1], 0.0])
        tubes[code] = (a + off, b + off)
    labels = _render(cfg, tubes)
    noise = CounterRNG(derive_seed(case_seed, _S_NOISE)).normal(labels.size)
    noise = noise.reshape(cfg.dims, order="F") * cfg.noise_for(cls)
    base = np.where(labels > 0, cfg.foreground_mean, cfg.background_mean)
    image = ScalarVolume(cfg.dims, cfg.spacing, base + noise)
    truth = LabelVolume(cfg.dims, cfg.spacing, labels)
    return PhantomCase(image, truth, cls, int(case_seed))


def _flat_uniform(rng, shape):
    return rng.uniform(int(np.prod(shape))).reshape(shape, order="F")


def _jitter_labels(cfg, truth, rng):
    six = ndimage.generate_binary_structure(3, 1)
    out = np.array(truth, copy=True)
    for code in (AORTA, PULMONARY_ARTERY):
        mask = truth == code
        inner = mask & ~ndimage.binary_erosion(mask, six, border_value=0)
        drop = inner & (_flat_uniform(rng, truth.shape) < cfg.boundary_flip)
        kept = mask & ~drop
        outer = ndimage.binary_dilation(kept, six) & (truth == 0) & (out == 0)
        add = outer & (_flat_uniform(rng, truth.shape) < cfg.boundary_flip)
        out[drop] = 0
        out[add] = code
    return out


def simulate_segmentation(truth_class, atlas_class, case, cfg):
    """Label volume a multi-atlas propagation with ``atlas_class`` would give."""
    truth_class, atlas_class = morph_class(truth_class), morph_class(atlas_class)
    image, truth = case.image, case.truth
    rng = CounterRNG(derive_seed(case.case_seed, _S_SEG, atlas_class.index))
    if truth_class is atlas_class:
        labels = _jitter_labels(cfg, truth.labels, rng)
    else:
        shift = (cfg.shift_for(atlas_class), 0.0, 0.0)
        labels = _render(cfg, _template(cfg, atlas_class), offset=shift)
        # fusion rejects dark voxels in whole slabs along the vessel axis
        slabs = rng.uniform(-(-labels.shape[2] // _SLAB)) < cfg.fusion_dropout
        in_slab = np.repeat(slabs, _SLAB)[: labels.shape[2]][None, None, :]
        dark = (labels > 0) & (image.data < cfg.threshold)
        labels[dark & in_slab] = 0
    return LabelVolume(truth.dims, truth.spacing, labels)


# -- cohort ------------------------------------------------------------------

MANIFEST_HEADER = ["case_id", "role", "true_class", "seed", "intensity_path", "truth_path"]


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    role: str
    true_class: str
    seed: int
    intensity_path: str
    truth_path: str


def segmentation_name(case_id, atlas_class):
    return f"{case_id}__seg_{morph_class(atlas_class).value}.mvol"


def _cohort_plan(cfg, per_class, atlas_per_class):
    plan = []
    for cls in MorphClass:
        for k in range(atlas_per_class):
            seed = derive_seed(cfg.rng_seed, _ROLE_ATLAS, cls.index, k)
            plan.append((f"atlas_{cls.value}_{k:02d}", "atlas", cls, seed))
    idx = 0
    for cls in MorphClass:
        for k in range(per_class):
            seed = derive_seed(cfg.rng_seed, _ROLE_CASE, cls.index, k)
            plan.append((f"case_{idx:03d}", "case", cls, seed))
            idx += 1
    return plan


def generate_cohort(cfg, per_class, atlas_per_class, out_dir):
    """Write the cohort's MVOL files and ``manifest.csv`` into ``out_dir``.

    Every case (role=case) also gets one simulated segmentation per atlas
    class. Returns the list of manifest entries.
    """
    if int(per_class) < 1 or int(atlas_per_class) < 1:
        raise ConfigError("per_class and atlas_per_class must both be >= 1")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for case_id, role, cls, seed in _cohort_plan(cfg, int(per_class), int(atlas_per_class)):
        case = generate_case(cfg, cls, seed)
        img_name, truth_name = f"{case_id}__image.mvol", f"{case_id}__truth.mvol"
        store_volume(case.image, os.path.join(out_dir, img_name))
        store_volume(case.truth, os.path.join(out_dir, truth_name))
        if role == "case":
            for atlas in MorphClass:
                seg = simulate_segmentation(cls, atlas, case, cfg)
                store_volume(seg, os.path.join(out_dir, segmentation_name(case_id, atlas)))
        entries.append(ManifestEntry(case_id, role, cls.value, int(seed), img_name, truth_name))
    write_manifest(entries, os.path.join(out_dir, "manifest.csv"))
    return entries


def write_manifest(entries, path):
    with open(os.fspath(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.case_id, e.role, e.true_class, e.seed, e.intensity_path, e.truth_path])


def read_manifest(path):
    with open(os.fspath(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"{path}: unexpected manifest header {header}")
        entries = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            try:
                seed = int(rec[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad seed {rec[3]!r}") from None
            entries.append(ManifestEntry(rec[0], rec[1], rec[2], seed, rec[4], rec[5]))
    return entries


def config_dict(cfg):
    doc = asdict(cfg)
    doc["dims"] = list(cfg.dims)
    doc["spacing"] = list(cfg.spacing)
    return doc
