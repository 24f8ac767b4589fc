"""Hyperparameter search, cross-validation and per-node evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    AtlasCadError,
    ConfigError,
    ConvergenceError,
    DegenerateDataError,
    EmptyMatrixError,
    FoldError,
)
from .features import SCHEMA_V1
from .rng import seeded_permutation
from .svm import (
    NEGATIVE,
    POSITIVE,
    Dataset,
    SolverConfig,
    decision_value,
    train_one_class,
    train_two_class,
)

log = logging.getLogger(__name__)

TWO_CLASS = "two-class"
ONE_CLASS = "one-class"
CLASSIFIER_KINDS = (TWO_CLASS, ONE_CLASS)

DEFAULT_C_GRID = tuple(2.0 ** k for k in range(-5, 16, 2))
DEFAULT_NU_GRID = (0.01, 0.05, 0.1, 0.2, 0.3, 0.5)


def _strictly_increasing(values):
    return all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class GridSpec:
    c_grid: tuple = DEFAULT_C_GRID
    nu_grid: tuple = DEFAULT_NU_GRID

    def __post_init__(self):
        c = tuple(float(v) for v in self.c_grid)
        nu = tuple(float(v) for v in self.nu_grid)
        if not c or not nu:
            raise ConfigError("grids must be non-empty")
        if not (_strictly_increasing(c) and _strictly_increasing(nu)):
            raise ConfigError("grids must be strictly increasing")
        if c[0] <= 0:
            raise ConfigError("C grid values must be positive")
        if nu[0] <= 0 or nu[-1] >= 1:
            raise ConfigError("nu grid values must lie in (0, 1)")
        object.__setattr__(self, "c_grid", c)
        object.__setattr__(self, "nu_grid", nu)


@dataclass(frozen=True)
class CVConfig:
    folds: int = 5
    rng_seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if int(self.folds) < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")


def kfold_indices(n, cv, labels=None):
    """Validation index sets partitioning ``range(n)``.

    Stratified splitting (requires ``labels``) deals each class round-robin
    over the folds after a seeded shuffle.
    """
    k = int(cv.folds)
    if k > n:
        raise FoldError(f"{k} folds requested for {n} cases")
    folds = [[] for _ in range(k)]
    if cv.stratified and labels is not None:
        labels = np.asarray(labels)
        classes = sorted(set(labels.tolist()))
        for ci, c in enumerate(classes):
            members = np.flatnonzero(labels == c)
            if len(members) < k:
                raise FoldError(f"class {c} has {len(members)} cases, fewer than {k} folds")
            members = members[seeded_permutation(cv.rng_seed, len(members), 1, ci)]
            for pos, idx in enumerate(members):
                folds[pos % k].append(int(idx))
    else:
        for pos, idx in enumerate(seeded_permutation(cv.rng_seed, n, 0)):
            folds[pos % k].append(int(idx))
    return [np.array(sorted(f), dtype=int) for f in folds]


# -- confusion matrices and reports -----------------------------------------

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise ConfigError(f"counts must be {k}x{k}, got {counts.shape}")
        if np.any(counts < 0):
            raise ConfigError("confusion counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_pairs(cls, labels, pairs):
        labels = list(labels)
        for t, p in pairs:
            for v in (t, p):
                if v not in labels:
                    labels.append(v)
        pos = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in pairs:
            counts[pos[t], pos[p]] += 1
        return cls(tuple(labels), counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def to_dict(self):
        return {"labels": list(self.labels), "counts": self.counts.tolist()}

    def to_text(self):
        names = [str(lab) for lab in self.labels]
        width = max(8, *(len(nm) for nm in names)) + 2
        head = "true \\ pred".ljust(width) + "".join(nm.rjust(width) for nm in names)
        lines = [head]
        for nm, row in zip(names, self.counts):
            lines.append(nm.ljust(width) + "".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines)


def accuracy(matrix):
    """Trace over total."""
    total = matrix.total
    if total == 0:
        raise EmptyMatrixError("accuracy of an empty confusion matrix")
    return float(np.trace(matrix.counts)) / total


def format_percent(acc):
    return f"{100.0 * acc:.2f}"


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    true: str
    predicted: str
    decision_value: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self):
        return {"case_id": self.case_id, "true": self.true, "predicted": self.predicted,
                "decision_value": self.decision_value, "error": self.error}


@dataclass(frozen=True)
class EvalReport:
    node_id: str
    matrix: ConfusionMatrix
    cases: tuple
    notes: tuple = ()

    @property
    def accuracy(self):
        return accuracy(self.matrix)

    def to_dict(self):
        return {
            "node_id": self.node_id,
            "matrix": self.matrix.to_dict(),
            "accuracy": self.accuracy,
            "cases": [c.to_dict() for c in self.cases],
            "notes": list(self.notes),
        }

    def to_text(self):
        return (f"node {self.node_id}\n{self.matrix.to_text()}\n"
                f"accuracy: {format_percent(self.accuracy)}% ({self.matrix.total} cases)")


def report_from_dict(doc):
    m = doc["matrix"]
    cases = tuple(CaseRecord(c["case_id"], c["true"], c["predicted"], c.get("decision_value"),
                             c.get("error")) for c in doc["cases"])
    return EvalReport(doc["node_id"], ConfusionMatrix(tuple(m["labels"]), m["counts"]), cases,
                      tuple(doc.get("notes", ())))


def save_report(report, path):
    with open(os.fspath(path), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path):
    with open(os.fspath(path)) as fh:
        return report_from_dict(json.load(fh))


# -- grid search -------------------------------------------------------------

@dataclass(frozen=True)
class GridResult:
    best: float
    score: float
    scores: tuple  # (grid value, score) pairs in grid order
    folds: int
    flags: tuple = ()


def _fit(trainer, data, cfg, standardize, schema_id):
    try:
        return trainer(data, cfg, standardize=standardize, schema_id=schema_id)
    except ConvergenceError as err:
        if err.model is None:
            raise
        log.warning("using best iterate after non-convergence: %s", err)
        return err.model


def grid_search_two_class(data, grid=GridSpec(), cv=CVConfig(), solver=SolverConfig(), *,
                          standardize=True, schema_id=SCHEMA_V1.schema_id,
                          trainer=train_two_class):
    """Pick C by mean cross-validated accuracy; ties go to the smaller C."""
    y = data.labels
    if y is None or not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateDataError("grid search needs both classes present")
    folds = kfold_indices(data.n, cv, y if cv.stratified else None)
    splits = []
    for val in folds:
        train = np.setdiff1d(np.arange(data.n), val)
        if len(set(y[train].tolist())) < 2:
            raise FoldError("a training split contains only one class")
        splits.append((train, val))
    scores = []
    for C in grid.c_grid:
        cfg = replace(solver, C=C)
        accs = []
        for train, val in splits:
            model = _fit(trainer, Dataset(data.points[train], y[train]), cfg, standardize,
                         schema_id)
            pred = np.where(np.asarray(decision_value(model, data.points[val])) >= 0, 1.0, -1.0)
            accs.append(float(np.mean(pred == y[val])))
        scores.append((C, float(np.mean(accs))))
    best_c, best_score = scores[0]
    for C, sc in scores[1:]:
        if sc > best_score:
            best_c, best_score = C, sc
    return GridResult(best_c, best_score, tuple(scores), len(folds))


def _chance_margin(n_pos, n_neg):
    return 3.0 * 0.5 * math.sqrt(0.25 / n_pos + 0.25 / n_neg)


def grid_search_one_class(positive_data, negative_data, grid=GridSpec(), cv=CVConfig(),
                          solver=SolverConfig(), *, standardize=True,
                          schema_id=SCHEMA_V1.schema_id, trainer=train_one_class):
    """Pick nu for the hypersphere model by nested validation.

    Only inlier training folds are ever fitted. Each fold is scored on its
    held-out inliers plus every negative by balanced accuracy (mean of
    inlier and outlier recall); without negatives the score is inlier
    coverage alone and the result is flagged. Ties go to the smaller nu.
    """
    n_pos = positive_data.n
    if int(cv.folds) > n_pos:
        raise FoldError(f"{cv.folds} folds requested for {n_pos} inlier cases")
    neg = negative_data.points if negative_data is not None else np.empty((0, positive_data.d))
    folds = kfold_indices(n_pos, replace(cv, stratified=False))
    flags = []
    if len(neg) == 0:
        flags.append("no negatives: tuned on inlier coverage only")
    scores = []
    for nu in grid.nu_grid:
        cfg = replace(solver, nu=nu)
        fold_scores = []
        for val in folds:
            train = np.setdiff1d(np.arange(n_pos), val)
            model = _fit(trainer, Dataset(positive_data.points[train]), cfg, standardize,
                         schema_id)
            inlier_recall = float(np.mean(
                np.asarray(decision_value(model, positive_data.points[val])) >= 0))
            if len(neg):
                outlier_recall = float(np.mean(np.asarray(decision_value(model, neg)) < 0))
                fold_scores.append(0.5 * (inlier_recall + outlier_recall))
            else:
                fold_scores.append(inlier_recall)
        scores.append((nu, float(np.mean(fold_scores))))
    best_nu, best_score = scores[0]
    for nu, sc in scores[1:]:
        if sc > best_score:
            best_nu, best_score = nu, sc
    if len(neg) and best_score <= 0.5 + _chance_margin(n_pos, len(neg)):
        flags.append("near chance: best balanced accuracy within 3 sd of 0.5")
    return GridResult(best_nu, best_score, tuple(scores), len(folds), tuple(flags))


# -- node training and leave-one-out ----------------------------------------

@dataclass(frozen=True)
class NodeSpec:
    """How a decision node's discriminator is tuned and trained."""

    node_id: str
    kind: str = TWO_CLASS
    grid: GridSpec = field(default_factory=GridSpec)
    cv: CVConfig = field(default_factory=CVConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    tune: bool = True
    standardize: bool = True
    schema_id: str = SCHEMA_V1.schema_id

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}; "
                              f"expected one of {', '.join(CLASSIFIER_KINDS)}")


@dataclass(frozen=True)
class ConstantModel:
    """Stand-in when a training split holds a single class."""

    decision: str


@dataclass(frozen=True)
class FitResult:
    model: object
    tuning: Optional[GridResult]
    notes: tuple = ()


def fit_node(spec, X, tags):
    """Tune (optionally) and train one node on points ``X`` with +/-1 ``tags``."""
    X = np.asarray(X, dtype=np.float64)
    tags = np.asarray(tags, dtype=np.float64)
    pos, neg = X[tags > 0], X[tags < 0]
    notes = []
    if spec.kind == TWO_CLASS:
        if len(pos) == 0 or len(neg) == 0:
            return FitResult(ConstantModel(POSITIVE if len(pos) else NEGATIVE), None,
                             ("single-class training set",))
        data = Dataset(X, tags)
        cfg, tuning = spec.solver, None
        folds = min(spec.cv.folds, len(pos), len(neg)) if spec.cv.stratified else spec.cv.folds
        if spec.tune and folds >= 2:
            if folds < spec.cv.folds:
                notes.append(f"inner CV reduced to {folds} folds")
            tuning = grid_search_two_class(data, spec.grid, replace(spec.cv, folds=folds),
                                           spec.solver, standardize=spec.standardize,
                                           schema_id=spec.schema_id)
            cfg = replace(spec.solver, C=tuning.best)
        elif spec.tune:
            notes.append("too few cases to tune; default C used")
        model = train_two_class(data, cfg, standardize=spec.standardize,
                                schema_id=spec.schema_id)
        return FitResult(model, tuning, tuple(notes))

    if len(pos) == 0:
        return FitResult(ConstantModel(NEGATIVE), None, ("no inlier cases to fit",))
    cfg, tuning = spec.solver, None
    folds = min(spec.cv.folds, len(pos))
    if spec.tune and folds >= 2:
        if folds < spec.cv.folds:
            notes.append(f"inner CV reduced to {folds} folds")
        tuning = grid_search_one_class(Dataset(pos), Dataset(neg) if len(neg) else None,
                                       spec.grid, replace(spec.cv, folds=folds), spec.solver,
                                       standardize=spec.standardize, schema_id=spec.schema_id)
        notes.extend(tuning.flags)
        cfg = replace(spec.solver, nu=tuning.best)
    elif spec.tune:
        notes.append("too few inliers to tune; default nu used")
    model = train_one_class(Dataset(pos), cfg, standardize=spec.standardize,
                            schema_id=spec.schema_id)
    return FitResult(model, tuning, tuple(notes))


def predict(model, x, threshold=0.0):
    """(decision value or None, positive/negative) for one feature vector."""
    if isinstance(model, ConstantModel):
        return None, model.decision
    value = decision_value(model, x)
    return value, (POSITIVE if value >= threshold else NEGATIVE)


def leave_one_out(spec, X, tags, case_ids=None, threshold=0.0):
    """Retrain the node without each case in turn and classify that case."""
    X = np.asarray(X, dtype=np.float64)
    tags = np.asarray(tags, dtype=np.float64)
    n = len(tags)
    if n < 2:
        raise ConfigError("leave-one-out needs at least 2 cases")
    if case_ids is None:
        case_ids = [str(i) for i in range(n)]
    records = []
    notes = set()
    if spec.kind == ONE_CLASS:
        notes.add("one-class: fitted on inliers only, nu tuned by nested CV with both classes")
    for i in range(n):
        keep = np.arange(n) != i
        truth = POSITIVE if tags[i] > 0 else NEGATIVE
        try:
            fit = fit_node(spec, X[keep], tags[keep])
            value, pred = predict(fit.model, X[i], threshold)
            err = None
            notes.update(fit.notes)
        except AtlasCadError as exc:
            value, pred, err = None, NEGATIVE, f"{type(exc).__name__}: {exc}"
        records.append(CaseRecord(str(case_ids[i]), truth,
                                  pred, None if value is None else float(value), err))
    matrix = ConfusionMatrix.from_pairs((POSITIVE, NEGATIVE),
                                        [(r.true, r.predicted) for r in records])
    return EvalReport(spec.node_id, matrix, tuple(records), tuple(sorted(notes)))
