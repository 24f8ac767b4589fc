"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The lines are printed in the "acceptance criteria" section of the pytest
terminal summary.
"""

import time

import numpy as np
import pytest

from atlascad.features import count_components, write_feature_table
from atlascad.oracle import brute_force_dual_oracle
from atlascad.phantom import MorphClass, PhantomConfig, generate_cohort
from atlascad.pipeline import bundles_from_rows, extract_cohort, node_dataset
from atlascad.selection import (
    ConfusionMatrix,
    GridSpec,
    NodeSpec,
    accuracy,
    fit_node,
    leave_one_out,
    save_report,
)
from atlascad.svm import (
    Dataset,
    SolverConfig,
    decision_value,
    dual_objective,
    kkt_violations,
    save_model,
    train_one_class,
    train_two_class,
)
from atlascad.tree import (
    DecisionNode,
    build_tree,
    decisions_from_reports,
    evaluate_tree,
    permutation_study,
)

from conftest import ACCEPTANCE_LINES, flood_fill_components, random_points, random_two_class

KKT_TOL = 1e-3
NODE_IDS = {c: f"v{i + 1}" for i, c in enumerate(MorphClass)}

# models from criteria 1 and 2, checked again by criterion 3
_MODELS = []


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


def _rel_close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b))


def test_criterion_1_two_class_matches_oracle():
    g = np.random.default_rng(101)
    start = time.perf_counter()
    worst, bad = 0.0, 0
    for _ in range(200):
        X, y = random_two_class(g, n_max=8, d_max=3)
        data = Dataset(X, y)
        cfg = SolverConfig(C=float(g.choice([0.5, 1.0, 10.0])))
        m = train_two_class(data, cfg)
        got, best = dual_objective(m, data), brute_force_dual_oracle(data, cfg)
        worst = max(worst, abs(got - best) / max(abs(got), abs(best)))
        bad += not _rel_close(got, best, 1e-6)
        _MODELS.append((m, data))
    elapsed = time.perf_counter() - start
    record(1, bad == 0 and elapsed < 60,
           f"200 datasets, {bad} mismatches, worst rel err {worst:.1e}, {elapsed:.1f}s")


def test_criterion_2_one_class_matches_oracle():
    g = np.random.default_rng(202)
    worst, bad = 0.0, 0
    for _ in range(100):
        data = Dataset(random_points(g, n_max=10, d_max=3))
        cfg = SolverConfig(nu=float(g.choice([0.1, 0.3])))
        m = train_one_class(data, cfg)
        got, best = dual_objective(m, data), brute_force_dual_oracle(data, cfg)
        if got != best:
            worst = max(worst, abs(got - best) / max(abs(got), abs(best)))
        bad += not (got == best or _rel_close(got, best, 1e-6))
        _MODELS.append((m, data))
    nu_bad = 0
    for _ in range(200):
        X = random_points(g, n_max=50, n_min=2)
        n = len(X)
        nu = float(g.choice([0.05, 0.1, 0.2, 0.3, 0.5]))
        m = train_one_class(Dataset(X), SolverConfig(nu=nu))
        outside = np.sum(decision_value(m, X) < -1e-7 * max(1.0, m.radius_sq))
        ok = outside / n <= nu + 1e-12 and len(m.support_indices) / n >= nu - 1 / n - 1e-12
        nu_bad += not ok
    record(2, bad == 0 and nu_bad == 0,
           f"100 oracle sets, {bad} mismatches (worst rel err {worst:.1e}); "
           f"nu-property failures {nu_bad}/200")


def test_criterion_3_kkt():
    if len(_MODELS) < 300:
        # run alone: rebuild the models of criteria 1 and 2
        _MODELS.clear()
        test_criterion_1_two_class_matches_oracle()
        test_criterion_2_one_class_matches_oracle()
    failing = sum(bool(kkt_violations(m, d, KKT_TOL)) for m, d in _MODELS)
    record(3, failing == 0, f"{len(_MODELS)} models, {failing} with KKT violations at {KKT_TOL}")


def test_criterion_4_components_match_flood_fill():
    g = np.random.default_rng(404)
    start = time.perf_counter()
    mismatches = 0
    for k in range(100):
        mask = g.random((16, 16, 16)) < (0.15 + 0.3 * (k % 3) / 2)
        for conn in (6, 26):
            mismatches += count_components(mask, conn) != flood_fill_components(mask, conn)
    elapsed = time.perf_counter() - start
    record(4, mismatches == 0 and elapsed < 30,
           f"100 masks x 2 connectivities, {mismatches} mismatches, {elapsed:.1f}s")


def run_pipeline(out_dir, cfg, per_class, atlas_per_class, grid=GridSpec()):
    """Cohort -> features -> per-node LOO and final models -> tree report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    generate_cohort(cfg, per_class, atlas_per_class, out_dir / "data")
    rows = extract_cohort(out_dir / "data")
    write_feature_table(rows, out_dir / "features.csv")
    reports, nodes = [], []
    for cls in MorphClass:
        node_id = NODE_IDS[cls]
        spec = NodeSpec(node_id, grid=grid)
        ids, X, tags = node_dataset(rows, cls.value)
        rep = leave_one_out(spec, X, tags, ids)
        save_report(rep, out_dir / f"{node_id}_loo.json")
        model = fit_node(spec, X, tags).model
        save_model(model, out_dir / f"{node_id}.json")
        reports.append(rep)
        nodes.append(DecisionNode(node_id, cls.value, model, cls.value))
    decisions = decisions_from_reports(reports)
    bundles = bundles_from_rows(rows)
    tree_report = evaluate_tree(build_tree(nodes, True), bundles, decisions)
    save_report(tree_report, out_dir / "tree_report.json")
    return reports, tree_report, nodes, bundles, decisions


@pytest.fixture(scope="module")
def reproduction(tmp_path_factory):
    out = tmp_path_factory.mktemp("reproduction")
    start = time.perf_counter()
    result = run_pipeline(out, PhantomConfig(rng_seed=7), 20, 5)
    return out, result, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_5_end_to_end(reproduction):
    out, (reports, tree_report, *_), elapsed = reproduction
    n_case = len(list((out / "data").glob("case_*__image.mvol")))
    n_atlas = len(list((out / "data").glob("atlas_*__image.mvol")))
    node_acc = {r.node_id: r.accuracy for r in reports}
    ok = (n_case == 60 and n_atlas == 15 and tree_report.matrix.total == 60
          and all(r.matrix.total == 60 for r in reports)
          and tree_report.accuracy >= 0.90 and min(node_acc.values()) >= 0.90
          and elapsed < 300)
    nodes = ", ".join(f"{k} {v:.4f}" for k, v in sorted(node_acc.items()))
    record(5, ok, f"tree accuracy {tree_report.accuracy:.4f}; nodes {nodes}; "
                  f"{n_case}+{n_atlas} volumes; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_6_node_ordering(tmp_path):
    # C_atrial gets raised noise and a reduced misalignment shift, which
    # weakens node v3; smaller cohorts and grid keep five repetitions quick
    grid = GridSpec(c_grid=(0.125, 2.0, 32.0))
    spreads, all_ok = [], True
    for seed in range(5):
        cfg = PhantomConfig(rng_seed=seed, class_noise_std={"C_atrial": 12.0},
                            class_shift={"C_atrial": 1.0})
        _, _, nodes, bundles, decisions = run_pipeline(tmp_path / f"s{seed}", cfg, 10, 1, grid)
        rows = permutation_study(nodes, bundles, True, decisions=decisions)
        hi, lo = rows[0].accuracy, rows[-1].accuracy
        all_ok &= len(rows) == 6 and hi >= lo
        spreads.append((seed, hi, lo, "".join(rows[0].order), "".join(rows[-1].order)))
    strict = sum(hi > lo for _, hi, lo, _, _ in spreads)
    detail = "; ".join(f"seed {s}: max {hi:.4f} ({a}) min {lo:.4f} ({b})"
                       for s, hi, lo, a, b in spreads)
    record(6, all_ok and strict >= 1, f"strict in {strict}/5 seeds; {detail}")


def _diag(correct, total=60):
    return ConfusionMatrix(("positive", "negative"), [[correct, total - correct], [0, 0]])


def test_criterion_7_accuracy_arithmetic():
    # references carry five decimals; compare at that precision, and the
    # unrounded value must be the exact fraction
    pairs = [(56, 0.93333), (59, 0.98333), (52, 0.86667)]
    ok = all(accuracy(_diag(c)) == c / 60 and abs(round(accuracy(_diag(c)), 5) - want) <= 1e-9
             for c, want in pairs)
    record(7, ok, ", ".join(f"{c}/60 = {accuracy(_diag(c)):.5f}" for c, _ in pairs))


@pytest.mark.slow
def test_criterion_8_determinism(reproduction, tmp_path):
    first = reproduction[0]
    run_pipeline(tmp_path, PhantomConfig(rng_seed=7), 20, 5)
    names = ["features.csv", "tree_report.json"]
    names += [f"{v}.json" for v in NODE_IDS.values()]
    names += [f"{v}_loo.json" for v in NODE_IDS.values()]
    differing = [n for n in names if (first / n).read_bytes() != (tmp_path / n).read_bytes()]
    record(8, not differing, f"{len(names)} artifacts compared, differing: {differing or 'none'}")
