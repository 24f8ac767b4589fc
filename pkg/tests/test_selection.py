import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import atlascad.selection as sel
from atlascad.errors import ConfigError, EmptyMatrixError, FoldError
from atlascad.selection import (
    ONE_CLASS,
    ConfusionMatrix,
    CVConfig,
    GridSpec,
    NodeSpec,
    accuracy,
    format_percent,
    grid_search_one_class,
    grid_search_two_class,
    kfold_indices,
    leave_one_out,
    load_report,
    save_report,
)
from atlascad.svm import NEGATIVE, POSITIVE, Dataset, SolverConfig, decision_value, train_two_class


def _diag_matrix(correct, total):
    counts = np.array([[correct, total - correct], [0, 0]])
    return ConfusionMatrix((POSITIVE, NEGATIVE), counts)


@pytest.mark.parametrize("correct,expected", [(56, 0.93333), (59, 0.98333), (52, 0.86667)])
def test_accuracy_arithmetic(correct, expected):
    assert accuracy(_diag_matrix(correct, 60)) == pytest.approx(expected, abs=1e-5)
    assert accuracy(_diag_matrix(correct, 60)) == correct / 60


def test_accuracy_edges():
    assert accuracy(ConfusionMatrix(("a", "b"), [[3, 0], [0, 4]])) == 1.0
    assert accuracy(ConfusionMatrix(("a", "b"), [[0, 3], [4, 0]])) == 0.0
    with pytest.raises(EmptyMatrixError):
        accuracy(ConfusionMatrix(("a", "b"), np.zeros((2, 2))))
    with pytest.raises(ConfigError):
        ConfusionMatrix(("a", "b"), [[-1, 0], [0, 0]])
    assert format_percent(56 / 60) == "93.33"


def test_grid_validation():
    for kw in ({"c_grid": ()}, {"c_grid": (1, 1)}, {"c_grid": (0, 1)}, {"nu_grid": (0.5, 1.0)}):
        with pytest.raises(ConfigError):
            GridSpec(**kw)
    with pytest.raises(ConfigError):
        CVConfig(folds=1)


@given(st.integers(2, 40), st.integers(2, 6), st.integers(0, 1000), st.booleans())
def test_fold_partition(n, k, seed, stratified):
    if k > n:
        with pytest.raises(FoldError):
            kfold_indices(n, CVConfig(k, seed, stratified))
        return
    labels = np.arange(n) % 2
    cv = CVConfig(k, seed, stratified)
    if stratified and min(np.bincount(labels)) < k:
        with pytest.raises(FoldError):
            kfold_indices(n, cv, labels)
        return
    folds = kfold_indices(n, cv, labels)
    assert len(folds) == k
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))
    assert [f.tolist() for f in folds] == [f.tolist() for f in kfold_indices(n, cv, labels)]


def test_separable_ties_to_smallest_c():
    X = np.r_[np.linspace(-5, -1, 10), np.linspace(1, 5, 10)][:, None]
    y = np.r_[-np.ones(10), np.ones(10)]
    r = grid_search_two_class(Dataset(X, y), GridSpec(c_grid=(0.1, 1, 10)))
    assert r.best == 0.1 and r.score == 1.0
    assert all(s == 1.0 for _, s in r.scores)


def _tight_margin():
    # many far negatives, a tight positive cluster close to them and a near-duplicate pair
    neg = np.linspace(-6, -0.1, 15)
    pos = np.array([0.1, 0.15, 0.2, 0.25, 0.3, 0.3001])
    return Dataset(np.r_[neg, pos][:, None], np.r_[-np.ones(15), np.ones(6)])


def test_only_large_c_separates():
    data, grid, cv = _tight_margin(), GridSpec(c_grid=(0.01, 1, 100)), CVConfig(folds=3)
    r = grid_search_two_class(data, grid, cv)
    # independent per-C cross-validation
    folds = kfold_indices(data.n, cv, data.labels)
    manual = []
    for C in grid.c_grid:
        hits = []
        for val in folds:
            train = np.setdiff1d(np.arange(data.n), val)
            m = train_two_class(Dataset(data.points[train], data.labels[train]),
                                SolverConfig(C=C), standardize=True)
            pred = np.where(decision_value(m, data.points[val]) >= 0, 1.0, -1.0)
            hits.append(np.mean(pred == data.labels[val]))
        manual.append(np.mean(hits))
    assert int(np.argmax(manual)) == 2 and manual[2] > max(manual[:2])
    assert r.best == 100.0
    assert [s for _, s in r.scores] == pytest.approx(manual)


def test_too_many_folds():
    with pytest.raises(FoldError):
        grid_search_two_class(_tight_margin(), cv=CVConfig(folds=30, stratified=False))
    with pytest.raises(FoldError):
        grid_search_one_class(Dataset([[0.0]]), None, cv=CVConfig(folds=2))


def test_grid_search_deterministic():
    data = _tight_margin()
    a = grid_search_two_class(data, GridSpec(c_grid=(0.1, 10)), CVConfig(folds=3, rng_seed=4))
    b = grid_search_two_class(data, GridSpec(c_grid=(0.1, 10)), CVConfig(folds=3, rng_seed=4))
    assert a == b


def test_one_class_compact_vs_distant(rng):
    # corners repeated five times so every training split keeps all four of
    # them; with nu * n < 1 the fitted ball then covers the whole square
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    pos = Dataset(np.r_[np.repeat(corners, 5, axis=0), rng.uniform(0.1, 0.9, size=(10, 2))])
    neg = Dataset(rng.normal(size=(15, 2)) * 0.3 + 20)
    grid, cv = GridSpec(nu_grid=(0.01, 0.1, 0.3, 0.5)), CVConfig(folds=5)
    folds = kfold_indices(pos.n, CVConfig(folds=5, stratified=False))
    exhaustive = []
    for nu in grid.nu_grid:
        fold_scores = []
        for val in folds:
            train = np.setdiff1d(np.arange(pos.n), val)
            m = sel.train_one_class(Dataset(pos.points[train]), SolverConfig(nu=nu),
                                    standardize=True)
            held = decision_value(m, pos.points[val])
            assert np.all(decision_value(m, neg.points) < 0)
            if nu == grid.nu_grid[0]:
                # a held-out corner sits on the sphere surface; misses are rounding ties
                assert np.all(held > -1e-9)
            fold_scores.append(0.5 * (np.mean(held >= 0) + 1.0))
        exhaustive.append(np.mean(fold_scores))
    r = grid_search_one_class(pos, neg, grid, cv)
    assert [s for _, s in r.scores] == pytest.approx(exhaustive)
    assert r.best == 0.01 and r.score == max(exhaustive)
    assert r.flags == ()


def test_one_class_identical_distributions_flagged(rng):
    g = np.random.default_rng(0)
    pos, neg = Dataset(g.normal(size=(20, 2))), Dataset(g.normal(size=(20, 2)))
    r = grid_search_one_class(pos, neg, GridSpec(nu_grid=(0.05, 0.2, 0.5)))
    margin = 3 * 0.5 * math.sqrt(0.25 / 20 + 0.25 / 20)
    assert r.score <= 0.5 + margin
    assert any(f.startswith("near chance") for f in r.flags)
    # permutation baseline: shuffling class membership gives scores of the same size
    both = np.vstack([pos.points, neg.points])
    perm = g.permutation(40)
    shuffled = grid_search_one_class(Dataset(both[perm[:20]]), Dataset(both[perm[20:]]),
                                     GridSpec(nu_grid=(0.05, 0.2, 0.5)))
    assert abs(shuffled.score - r.score) <= 2 * margin


def test_one_class_without_negatives_flagged(rng):
    r = grid_search_one_class(Dataset(rng.normal(size=(10, 2))), None)
    assert any(f.startswith("no negatives") for f in r.flags)


def test_one_class_hygiene(rng, monkeypatch):
    X = np.r_[rng.normal(size=(12, 2)), rng.normal(size=(8, 2)) + 5]
    tags = np.r_[np.ones(12), -np.ones(8)]
    fitted = []

    def recording(data, cfg, **kw):
        fitted.append(data.points.copy())
        return sel.train_one_class(data, cfg, **kw)

    real_gs = sel.grid_search_one_class
    monkeypatch.setattr(sel, "grid_search_one_class",
                        lambda *a, **kw: real_gs(*a, trainer=recording, **kw))
    rep = leave_one_out(NodeSpec("n", ONE_CLASS, GridSpec(nu_grid=(0.1, 0.3))), X, tags)
    assert rep.matrix.total == 20
    assert fitted
    negatives = {tuple(p) for p in X[tags < 0]}
    for pts in fitted:
        assert not negatives & {tuple(p) for p in pts}
    assert any("one-class" in n for n in rep.notes)


def test_grid_search_one_class_never_fits_held_out(rng):
    pos, neg = Dataset(rng.normal(size=(10, 2))), Dataset(rng.normal(size=(5, 2)) + 4)
    seen = []

    def recording(data, cfg, **kw):
        seen.append({tuple(p) for p in data.points})
        return sel.train_one_class(data, cfg, **kw)

    cv = CVConfig(folds=5)
    grid_search_one_class(pos, neg, GridSpec(nu_grid=(0.2,)), cv, trainer=recording)
    folds = kfold_indices(10, CVConfig(folds=5, stratified=False))
    for pts, val in zip(seen, folds):
        assert not pts & {tuple(p) for p in pos.points[val]}
        assert not pts & {tuple(p) for p in neg.points}


def test_loo_identical_cases():
    for tag in (1.0, -1.0):
        rep = leave_one_out(NodeSpec("n"), [[1.0, 2.0], [1.0, 2.0]], [tag, tag])
        want = POSITIVE if tag > 0 else NEGATIVE
        assert [r.predicted for r in rep.cases] == [want, want]
        assert rep.matrix.total == 2


def test_loo_total_and_report_roundtrip(tmp_path, rng):
    X = np.r_[rng.normal(size=(8, 2)), rng.normal(size=(8, 2)) + 3]
    tags = np.r_[np.ones(8), -np.ones(8)]
    spec = NodeSpec("v1", grid=GridSpec(c_grid=(0.5, 8)), cv=CVConfig(folds=3))
    rep = leave_one_out(spec, X, tags, [f"c{i}" for i in range(16)])
    assert rep.matrix.total == 16
    assert rep.accuracy == np.trace(rep.matrix.counts) / 16
    save_report(rep, tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert back.to_dict() == rep.to_dict()
    assert "accuracy" in rep.to_text()


def test_loo_failure_recorded(monkeypatch):
    def boom(*a, **kw):
        raise FoldError("forced")

    monkeypatch.setattr(sel, "fit_node", boom)
    rep = leave_one_out(NodeSpec("n"), [[0.0], [1.0], [2.0]], [1, -1, 1])
    assert all(r.predicted == NEGATIVE and "forced" in r.error for r in rep.cases)
    assert rep.matrix.total == 3


def test_loo_needs_two_cases():
    with pytest.raises(ConfigError):
        leave_one_out(NodeSpec("n"), [[0.0]], [1])
