"""Linear-kernel maximal-margin discriminators trained by pairwise SMO.

Both problems are solved in the common dual form

    minimize    0.5 * a^T Q a + p^T a
    subject to  y^T a = const,  0 <= a_i <= U_i

with working pairs chosen by the second-order rule of Fan, Chen & Lin
(2005). The two-class SVM uses ``Q_ij = y_i y_j <x_i, x_j>``, ``p = -1``
and ``y^T a = 0``. The hypersphere (SVDD) model uses ``Q = 2K``,
``p_i = -K_ii``, ``y = 1``, ``sum(a) = 1`` and ``U = 1 / (nu * n)``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateDataError,
    ShapeError,
)
from .features import SCHEMA_V1
from .rng import seeded_permutation

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"

_TAU = 1e-12
_HARD_CAP = 100
_STALL = 1e-15


@dataclass(frozen=True)
class SolverConfig:
    """Solver hyperparameters.

    ``max_passes`` counts sweeps of ``n`` pair updates without progress
    (default ``10 * n``, at least 1000 updates); total work is capped at
    100 times that. The solver polishes until the maximal KKT violation
    drops below ``gap_tol``. If the budget runs out first, a model whose
    violation is still within ``kkt_tol`` is returned, otherwise
    ConvergenceError.
    """

    C: float = 1.0
    nu: float = 0.1
    kkt_tol: float = 1e-3
    max_passes: Optional[int] = None
    rng_seed: int = 0
    gap_tol: float = 1e-10

    def __post_init__(self):
        if not (self.C > 0 and np.isfinite(self.C)):
            raise ConfigError(f"C must be a positive finite real, got {self.C}")
        if not (0 < self.nu <= 1):
            raise ConfigError(f"nu must lie in (0, 1], got {self.nu}")
        if not self.kkt_tol > 0:
            raise ConfigError(f"kkt_tol must be > 0, got {self.kkt_tol}")
        if not self.gap_tol > 0:
            raise ConfigError(f"gap_tol must be > 0, got {self.gap_tol}")
        if self.max_passes is not None and self.max_passes < 1:
            raise ConfigError(f"max_passes must be a positive integer, got {self.max_passes}")


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"points must be an n x d matrix with n, d >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain non-finite values")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.float64).ravel()
            if lab.shape[0] != pts.shape[0]:
                raise DataError(f"{lab.shape[0]} labels for {pts.shape[0]} points")
            if not np.all(np.isin(lab, (-1.0, 1.0))):
                raise DataError("labels must be -1 or +1")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class Standardization:
    """Per-dimension affine map ``(x - means) / stds`` fitted on training data."""

    means: tuple
    stds: tuple

    @classmethod
    def identity(cls, d):
        return cls((0.0,) * d, (1.0,) * d)

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        # constant columns carry no information; leave their scale alone
        sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
        return cls(tuple(float(v) for v in mu), tuple(float(v) for v in sd))

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - np.asarray(self.means)) / np.asarray(self.stds)


@dataclass(frozen=True, eq=False)
class TwoClassModel:
    weights: np.ndarray
    bias: float
    alphas: np.ndarray
    support_indices: tuple
    schema_id: str = SCHEMA_V1.schema_id
    standardization: Optional[Standardization] = None
    config: SolverConfig = field(default_factory=SolverConfig)

    model_type = "two-class"

    @property
    def dim(self):
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class OneClassModel:
    center: np.ndarray
    radius_sq: float
    alphas: np.ndarray
    support_indices: tuple
    schema_id: str = SCHEMA_V1.schema_id
    standardization: Optional[Standardization] = None
    config: SolverConfig = field(default_factory=SolverConfig)

    model_type = "one-class"

    @property
    def dim(self):
        return self.center.shape[0]


Model = Union[TwoClassModel, OneClassModel]


# -- pairwise solver ---------------------------------------------------------

def _smo(Q, p, y, upper, alpha, gap_tol, budget):
    """Run SMO from the feasible point ``alpha``.

    Returns (alpha, gradient, gap, iterations). ``gap`` is the maximal
    violation ``max_up(-y G) - min_low(-y G)`` at the returned iterate.
    Stops after ``budget`` consecutive updates whose objective decrease is
    negligible (below ``_STALL`` relative), or after ``_HARD_CAP * budget``
    updates in total.
    """
    alpha = alpha.copy()
    # work with the score -y*G directly; K[i, j] = y_i y_j Q_ij
    K = Q * np.outer(y, y)
    diag = np.diag(Q).copy()
    pos = y > 0
    score = -y * (Q @ alpha + p)
    up = np.where(pos, alpha < upper, alpha > 0)
    low = np.where(pos, alpha > 0, alpha < upper)
    it = stall = 0
    fval = 0.5 * alpha @ (p - y * score)

    def done(gap):
        return alpha, -y * score, gap, it

    while True:
        if not up.any() or not low.any():
            return done(0.0)
        su = np.where(up, score, -np.inf)
        i = int(su.argmax())
        m = su[i]
        gap = m - np.where(low, score, np.inf).min()
        if gap <= gap_tol:
            return done(max(gap, 0.0))
        if stall >= budget or it >= _HARD_CAP * budget:
            return done(gap)
        b = m - score
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, _TAU)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(gain.argmin())

        step = b[j] / a[j]
        lim_i = upper[i] - alpha[i] if pos[i] else alpha[i]
        lim_j = alpha[j] if pos[j] else upper[j] - alpha[j]
        t = min(step, lim_i, lim_j)
        if t <= 0 or gain[j] == np.inf:
            # numerically stuck pair; nothing more to gain at this precision
            return done(gap)

        decrease = t * b[j] - 0.5 * a[j] * t * t
        stall = stall + 1 if decrease <= _STALL * max(1.0, abs(fval)) else 0
        fval -= decrease

        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        if t == lim_i:
            alpha[i] = upper[i] if pos[i] else 0.0
        if t == lim_j:
            alpha[j] = 0.0 if pos[j] else upper[j]
        for k in (i, j):
            free_up, free_down = alpha[k] < upper[k], alpha[k] > 0
            up[k], low[k] = (free_up, free_down) if pos[k] else (free_down, free_up)
        score -= t * (K[i] - K[j])
        it += 1
        if it % 50 == 0:
            # refresh to keep rounding drift out of the score
            score = -y * (Q @ alpha + p)
            fval = 0.5 * alpha @ (p - y * score)


def _budget(cfg, n):
    if cfg.max_passes is not None:
        return cfg.max_passes * n
    return max(10 * n * n, 1000)


def _solve(Q, p, y, upper, alpha0, cfg):
    """Permute by the seed, solve, un-permute. Ties in pair selection go to
    the earliest index in the permuted order."""
    n = len(p)
    order = seeded_permutation(cfg.rng_seed, n)
    inv = np.empty(n, dtype=int)
    inv[order] = np.arange(n)
    Qp = Q[np.ix_(order, order)]
    alpha, G, gap, it = _smo(Qp, p[order], y[order], upper[order], alpha0[order],
                             cfg.gap_tol, _budget(cfg, n))
    # recompute from scratch on the original ordering
    alpha = alpha[inv]
    G = Q @ alpha + p
    return alpha, G, gap, it


def _bounds_split(alpha, upper):
    at_zero = alpha <= 0
    at_upper = alpha >= upper
    free = ~at_zero & ~at_upper
    return at_zero, at_upper, free


def _check_dataset(data):
    if not isinstance(data, Dataset):
        data = Dataset(*data) if isinstance(data, tuple) else Dataset(data)
    return data


# -- two-class ---------------------------------------------------------------

def train_two_class(data, cfg=None, *, standardize=False, schema_id=SCHEMA_V1.schema_id):
    """Soft-margin linear SVM. Returns a TwoClassModel satisfying KKT within
    ``cfg.kkt_tol``."""
    cfg = cfg or SolverConfig()
    data = _check_dataset(data)
    if data.labels is None:
        raise DegenerateDataError("two-class training requires labels")
    y = data.labels
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateDataError("two-class training needs both classes present")
    std = Standardization.fit(data.points) if standardize else Standardization.identity(data.d)
    Z = std.apply(data.points)
    n = data.n
    K = Z @ Z.T
    Q = np.outer(y, y) * K
    upper = np.full(n, float(cfg.C))
    alpha, G, gap, it = _solve(Q, -np.ones(n), y, upper, np.zeros(n), cfg)

    at_zero, at_upper, free = _bounds_split(alpha, upper)
    score = -y * G  # equals y_i - <w, x_i>
    if free.any():
        bias = float(np.mean(score[free]))
    else:
        up = np.where(y > 0, ~at_upper, ~at_zero)
        low = np.where(y > 0, ~at_zero, ~at_upper)
        lo = score[up].max() if up.any() else score[low].min()
        hi = score[low].min() if low.any() else score[up].max()
        bias = float(0.5 * (lo + hi))
    weights = (alpha * y) @ Z
    model = TwoClassModel(
        weights=_ro(weights),
        bias=bias,
        alphas=_ro(alpha),
        support_indices=tuple(int(k) for k in np.flatnonzero(alpha > 0)),
        schema_id=schema_id,
        standardization=std,
        config=cfg,
    )
    log.debug("two-class SMO: n=%d iterations=%d gap=%.3g", n, it, gap)
    if gap > cfg.gap_tol and gap > cfg.kkt_tol:
        raise ConvergenceError(
            f"two-class SMO stopped after {it} updates with KKT gap {gap:.3g}",
            model=model, gap=gap)
    return model


# -- one-class (hypersphere) -------------------------------------------------

def _sphere_start(n, ub):
    alpha = np.zeros(n)
    remaining = 1.0
    for k in range(n):
        alpha[k] = min(ub, remaining)
        remaining -= alpha[k]
        if remaining <= 0:
            break
    return alpha


def train_one_class(data, cfg=None, *, standardize=False, schema_id=SCHEMA_V1.schema_id):
    """Minimum enclosing hypersphere holding about ``1 - nu`` of the mass.

    Labels, if present, are ignored.
    """
    cfg = cfg or SolverConfig()
    data = _check_dataset(data)
    std = Standardization.fit(data.points) if standardize else Standardization.identity(data.d)
    Z = std.apply(data.points)
    n = data.n
    ub = 1.0 / (cfg.nu * n)
    K = Z @ Z.T
    Q = 2.0 * K
    p = -np.diag(K).copy()
    y = np.ones(n)
    upper = np.full(n, ub)
    order = seeded_permutation(cfg.rng_seed, n)
    start = np.empty(n)
    start[order] = _sphere_start(n, ub)
    alpha, G, gap, it = _solve(Q, p, y, upper, start, cfg)

    at_zero, at_upper, free = _bounds_split(alpha, upper)
    center = alpha @ Z
    dist_sq = np.sum((Z - center) ** 2, axis=1)
    if free.any():
        radius_sq = float(np.mean(dist_sq[free]))
    else:
        inner = dist_sq[~at_upper]
        outer = dist_sq[~at_zero]
        lo = inner.max() if inner.size else outer.min()
        hi = outer.min() if outer.size else inner.max()
        radius_sq = float(0.5 * (lo + hi))
    model = OneClassModel(
        center=_ro(center),
        radius_sq=max(radius_sq, 0.0),
        alphas=_ro(alpha),
        support_indices=tuple(int(k) for k in np.flatnonzero(alpha > 0)),
        schema_id=schema_id,
        standardization=std,
        config=cfg,
    )
    log.debug("one-class SMO: n=%d iterations=%d gap=%.3g", n, it, gap)
    if gap > cfg.gap_tol and gap > cfg.kkt_tol:
        raise ConvergenceError(
            f"one-class SMO stopped after {it} updates with KKT gap {gap:.3g}",
            model=model, gap=gap)
    return model


def _ro(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


# -- inference ---------------------------------------------------------------

def _transform(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != model.dim:
        raise ShapeError(f"query has dimension {x.shape[-1] if x.ndim else 0}, "
                         f"model expects {model.dim}")
    std = model.standardization
    return std.apply(x) if std is not None else x


def decision_value(model, x):
    """Signed score: positive means the similar (inlier) side.

    Accepts a single d-vector or an m x d batch.
    """
    z = _transform(model, x)
    if isinstance(model, TwoClassModel):
        out = z @ model.weights + model.bias
    elif isinstance(model, OneClassModel):
        out = model.radius_sq - np.sum((z - model.center) ** 2, axis=-1)
    else:
        raise TypeError(f"not a model: {type(model).__name__}")
    return float(out) if np.ndim(out) == 0 else out


def classify_point(model, x, threshold=0.0):
    """``POSITIVE`` iff decision_value >= threshold (closed boundary)."""
    return POSITIVE if decision_value(model, x) >= threshold else NEGATIVE


def dual_objective(model, data):
    """Dual objective (maximization form) of ``model.alphas`` on ``data``."""
    data = _check_dataset(data)
    Z = (model.standardization.apply(data.points)
         if model.standardization is not None else data.points)
    a = np.asarray(model.alphas)
    if isinstance(model, TwoClassModel):
        v = (a * data.labels) @ Z
        return float(a.sum() - 0.5 * v @ v)
    c = a @ Z / a.sum()
    return float(a @ np.sum((Z - c) ** 2, axis=1))


def kkt_violations(model, data, tol=None):
    """Indices whose complementary-slackness condition fails by more than ``tol``.

    Two-class, with margin ``m_i = y_i f(x_i)``: alpha=0 needs m >= 1-tol,
    free needs |m-1| <= tol, alpha=C needs m <= 1+tol. One-class compares
    squared distances to ``radius_sq`` the same way, plus the equality and
    box constraints of the dual.
    """
    data = _check_dataset(data)
    tol = model.config.kkt_tol if tol is None else tol
    a = np.asarray(model.alphas)
    bad = []
    if isinstance(model, TwoClassModel):
        C = model.config.C
        y = data.labels
        margin = y * decision_value(model, data.points)
        if abs(float(a @ y)) > tol:
            bad.append(("equality", float(a @ y)))
        for k in range(data.n):
            if a[k] < 0 or a[k] > C:
                bad.append((k, "box"))
            elif a[k] == 0:
                if margin[k] < 1 - tol:
                    bad.append((k, "zero"))
            elif a[k] == C:
                if margin[k] > 1 + tol:
                    bad.append((k, "bound"))
            elif abs(margin[k] - 1) > tol:
                bad.append((k, "free"))
        return bad
    ub = 1.0 / (model.config.nu * data.n)
    slack = decision_value(model, data.points)  # radius_sq - dist_sq
    if abs(float(a.sum()) - 1.0) > tol:
        bad.append(("equality", float(a.sum())))
    for k in range(data.n):
        if a[k] < 0 or a[k] > ub:
            bad.append((k, "box"))
        elif a[k] == 0:
            if slack[k] < -tol:
                bad.append((k, "zero"))
        elif a[k] >= ub:
            if slack[k] > tol:
                bad.append((k, "bound"))
        elif abs(slack[k]) > tol:
            bad.append((k, "free"))
    return bad


# -- serialization -----------------------------------------------------------

def model_to_dict(model):
    std = model.standardization or Standardization.identity(model.dim)
    doc = {
        "model_type": model.model_type,
        "schema_id": model.schema_id,
        "standardization": {"means": list(std.means), "stds": list(std.stds)},
    }
    if isinstance(model, TwoClassModel):
        doc["weights"] = [float(v) for v in model.weights]
        doc["bias"] = float(model.bias)
    else:
        doc["center"] = [float(v) for v in model.center]
        doc["radius_sq"] = float(model.radius_sq)
    doc["alphas"] = [float(v) for v in model.alphas]
    doc["support_indices"] = list(model.support_indices)
    doc["config"] = asdict(model.config)
    return doc


def model_from_dict(doc):
    try:
        kind = doc["model_type"]
        std = Standardization(tuple(float(v) for v in doc["standardization"]["means"]),
                              tuple(float(v) for v in doc["standardization"]["stds"]))
        cfg = SolverConfig(**doc["config"])
        common = dict(
            alphas=_ro(doc["alphas"]),
            support_indices=tuple(int(k) for k in doc["support_indices"]),
            schema_id=doc["schema_id"],
            standardization=std,
            config=cfg,
        )
        if kind == TwoClassModel.model_type:
            return TwoClassModel(weights=_ro(doc["weights"]), bias=float(doc["bias"]), **common)
        if kind == OneClassModel.model_type:
            return OneClassModel(center=_ro(doc["center"]), radius_sq=float(doc["radius_sq"]),
                                 **common)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model document: {exc}") from None
    raise DataError(f"unknown model_type {kind!r}")


def dumps_model(model):
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n"


def save_model(model, path):
    with open(os.fspath(path), "w") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(os.fspath(path)) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    return model_from_dict(doc)
