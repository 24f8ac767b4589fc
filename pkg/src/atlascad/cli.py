"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 solver convergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import ConfigError, ConvergenceError, DataError
from .features import SCHEMAS, SCHEMA_V1, read_feature_table, write_feature_table
from .phantom import MorphClass, PhantomConfig, config_dict, generate_cohort, morph_class
from .pipeline import bundles_from_rows, extract_cohort, node_dataset
from .selection import (
    CLASSIFIER_KINDS,
    DEFAULT_C_GRID,
    DEFAULT_NU_GRID,
    ConfusionMatrix,
    CVConfig,
    EvalReport,
    CaseRecord,
    GridSpec,
    NodeSpec,
    fit_node,
    format_percent,
    leave_one_out,
    load_report,
    predict,
    save_report,
)
from .svm import POSITIVE, NEGATIVE, SolverConfig, save_model, load_model
from .tree import (
    DecisionNode,
    build_tree,
    classify_case,
    decisions_from_reports,
    evaluate_tree,
    format_permutation_table,
    load_tree,
    permutation_study,
    save_tree,
)

log = logging.getLogger("atlascad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return d


def _echo_config(args, out_dir, extra=None):
    doc = {"version": __version__}
    for key, val in sorted(vars(args).items()):
        if key == "func":
            continue
        if isinstance(val, str) and key in _PATH_ARGS:
            val = os.path.abspath(val)
        elif isinstance(val, list) and key in _PATH_ARGS:
            val = [os.path.abspath(v) if isinstance(v, str) else v for v in val]
        doc[key] = val
    if extra:
        doc.update(extra)
    _write_json(os.path.join(out_dir, "run_config.json"), doc)


_PATH_ARGS = {"out", "data", "features", "tree", "report", "loo_reports"}


def _require_file(path, what):
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _key_value(text):
    try:
        key, val = text.split("=", 1)
        return key, float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected CLASS=VALUE, got {text!r}") from None


# -- phantom -----------------------------------------------------------------

def cmd_phantom(args):
    cfg = PhantomConfig(
        dims=tuple(args.dims),
        foreground_mean=args.foreground_mean,
        background_mean=args.background_mean,
        noise_std=args.noise_std,
        tube_radius=args.tube_radius,
        misalign_shift=args.misalign_shift,
        rng_seed=args.seed,
        class_noise_std=dict(args.class_noise or []),
        class_shift=dict(args.class_shift or []),
    )
    if args.per_class < 1 or args.atlas_per_class < 1:
        raise ConfigError("--per-class and --atlas-per-class must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args, args.out, {"phantom": config_dict(cfg)})
    entries = generate_cohort(cfg, args.per_class, args.atlas_per_class, args.out)
    n_case = sum(e.role == "case" for e in entries)
    print(f"wrote {n_case} cases and {len(entries) - n_case} atlases to {args.out}")
    return EXIT_OK


# -- extract -----------------------------------------------------------------

def cmd_extract(args):
    schema = SCHEMAS.get(args.schema)
    if schema is None:
        raise ConfigError(f"unknown feature schema {args.schema!r}")
    atlases = [morph_class(a).value for a in args.atlas_class] if args.atlas_class else None
    out_dir = _out_dir(args.out)
    rows = extract_cohort(args.data, schema, args.connectivity, atlases)
    _echo_config(args, out_dir)
    write_feature_table(rows, args.out)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return EXIT_OK


# -- nodes -------------------------------------------------------------------

def _node_spec(args):
    return NodeSpec(
        node_id=args.node_id or args.atlas_class,
        kind=args.classifier,
        grid=GridSpec(tuple(args.c_grid), tuple(args.nu_grid)),
        cv=CVConfig(args.folds, args.seed, not args.unstratified),
        solver=SolverConfig(C=args.C, nu=args.nu, rng_seed=args.seed),
        tune=not args.no_tune,
        standardize=not args.no_standardize,
        schema_id=args.schema,
    )


def _load_node_data(args):
    _require_file(args.features, "feature table")
    rows = read_feature_table(args.features, args.schema)
    atlas = morph_class(args.atlas_class).value
    return node_dataset(rows, atlas)


def cmd_train_node(args):
    spec = _node_spec(args)
    ids, X, tags = _load_node_data(args)
    out_dir = _out_dir(args.out)
    _echo_config(args, out_dir)
    fit = fit_node(spec, X, tags)
    if not hasattr(fit.model, "model_type"):
        raise DataError("training set holds a single class; no model can be fitted")
    save_model(fit.model, args.out)
    if fit.tuning is not None:
        name = "C" if spec.kind == "two-class" else "nu"
        print(f"selected {name} = {fit.tuning.best:g} (inner CV score {fit.tuning.score:.4f})")
    for note in fit.notes:
        print(f"note: {note}")
    # resubstitution matrix on the training cases
    recs = []
    for cid, x, t in zip(ids, X, tags):
        value, pred = predict(fit.model, x, args.threshold)
        recs.append(CaseRecord(cid, POSITIVE if t > 0 else NEGATIVE, pred, float(value)))
    train = EvalReport(spec.node_id, ConfusionMatrix.from_pairs(
        (POSITIVE, NEGATIVE), [(r.true, r.predicted) for r in recs]), tuple(recs))
    print("training-set fit:")
    print(train.to_text())
    if args.loo:
        report = leave_one_out(spec, X, tags, ids, args.threshold)
        path = args.report or os.path.splitext(args.out)[0] + "_loo.json"
        save_report(report, path)
        print("leave-one-out:")
        print(report.to_text())
    return EXIT_OK


def cmd_eval_node(args):
    spec = _node_spec(args)
    ids, X, tags = _load_node_data(args)
    out_dir = _out_dir(args.out)
    _echo_config(args, out_dir)
    report = leave_one_out(spec, X, tags, ids, args.threshold)
    save_report(report, args.out)
    print(report.to_text())
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_OK


# -- tree --------------------------------------------------------------------

def cmd_tree_build(args):
    nodes, paths = [], {}
    thresholds = dict(args.threshold or [])
    out_dir = _out_dir(args.out)
    for node_id, atlas, model_path, diagnosis in args.node:
        _require_file(model_path, "model file")
        model = load_model(model_path)
        nodes.append(DecisionNode(node_id, morph_class(atlas).value, model, diagnosis,
                                  thresholds.pop(node_id, 0.0)))
        paths[node_id] = os.path.relpath(os.path.abspath(model_path), out_dir)
    if thresholds:
        raise ConfigError(f"thresholds given for unknown nodes: {', '.join(thresholds)}")
    tree = build_tree(nodes, args.error_node, args.implicit_diagnosis)
    _echo_config(args, out_dir)
    save_tree(tree, paths, args.out)
    outcome = "UNCERTAIN" if tree.with_error_node else tree.implicit_diagnosis
    print(f"tree {' > '.join(tree.order)} -> {outcome}")
    return EXIT_OK


def _tree_inputs(args):
    _require_file(args.tree, "tree definition")
    _require_file(args.features, "feature table")
    tree = load_tree(args.tree)
    rows = read_feature_table(args.features, args.schema)
    return tree, bundles_from_rows(rows)


def _loo_decisions(args, tree):
    if not args.loo_reports:
        return None
    for p in args.loo_reports:
        _require_file(p, "leave-one-out report")
    reports = [load_report(p) for p in args.loo_reports]
    have = {r.node_id for r in reports}
    missing = [n for n in tree.order if n not in have]
    if missing:
        raise ConfigError(f"no leave-one-out report for node(s) {', '.join(missing)}")
    return decisions_from_reports(reports)


def cmd_tree_classify(args):
    tree, bundles = _tree_inputs(args)
    if args.case:
        bundles = [b for b in bundles if b.case_id in set(args.case)]
        found = {b.case_id for b in bundles}
        absent = [c for c in args.case if c not in found]
        if absent:
            raise ConfigError(f"case(s) not in feature table: {', '.join(absent)}")
    out_dir = _out_dir(args.out)
    diagnoses = [classify_case(tree, b) for b in bundles]
    _echo_config(args, out_dir)
    _write_json(args.out, [d.to_dict() for d in diagnoses])
    for d in diagnoses:
        print(f"{d.case_id}\t{d.label}")
    return EXIT_OK


def cmd_tree_evaluate(args):
    tree, bundles = _tree_inputs(args)
    decisions = _loo_decisions(args, tree)
    out_dir = _out_dir(args.out)
    report = evaluate_tree(tree, bundles, decisions)
    _echo_config(args, out_dir)
    doc = report.to_dict()
    doc["decisions"] = "leave-one-out" if decisions is not None else "models"
    _write_json(args.out, doc)
    print(report.matrix.to_text())
    print(f"accuracy: {format_percent(report.accuracy)}%")
    return EXIT_OK


def cmd_tree_permute(args):
    tree, bundles = _tree_inputs(args)
    decisions = _loo_decisions(args, tree)
    out_dir = _out_dir(args.out)
    rows = permutation_study(tree.nodes, bundles, tree.with_error_node,
                             tree.implicit_diagnosis, decisions)
    _echo_config(args, out_dir)
    _write_json(args.out, {
        "decisions": "leave-one-out" if decisions is not None else "models",
        "orderings": [{"order": list(r.order), "accuracy": r.accuracy, "correct": r.correct,
                       "total": r.total} for r in rows],
    })
    print(format_permutation_table(rows))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_node_args(p):
    p.add_argument("--features", required=True, help="feature table CSV")
    p.add_argument("--atlas-class", required=True, choices=[c.value for c in MorphClass],
                   help="atlas set the node inspects; its own class is the positive class")
    p.add_argument("--node-id", help="node identifier (default: the atlas class)")
    p.add_argument("--classifier", default="two-class",
                   help=f"one of {', '.join(CLASSIFIER_KINDS)}")
    p.add_argument("--c-grid", type=float, nargs="+", default=list(DEFAULT_C_GRID))
    p.add_argument("--nu-grid", type=float, nargs="+", default=list(DEFAULT_NU_GRID))
    p.add_argument("--folds", type=int, default=5, help="inner cross-validation folds")
    p.add_argument("--unstratified", action="store_true")
    p.add_argument("--no-tune", action="store_true", help="skip the grid search")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--C", type=float, default=1.0, help="C when not tuning")
    p.add_argument("--nu", type=float, default=0.1, help="nu when not tuning")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema", default=SCHEMA_V1.schema_id)
    p.add_argument("--out", required=True)


def _add_tree_inputs(p, loo=False):
    p.add_argument("--tree", required=True, help="tree definition JSON")
    p.add_argument("--features", required=True, help="feature table CSV")
    p.add_argument("--schema", default=SCHEMA_V1.schema_id)
    p.add_argument("--out", required=True)
    if loo:
        p.add_argument("--loo-reports", nargs="+",
                       help="per-node leave-one-out reports; their held-out decisions "
                            "replace re-running the node models")


def build_parser():
    # argparse itself exits 2 on usage errors
    parser = argparse.ArgumentParser(prog="atlascad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--atlas-per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", type=int, nargs=3, default=[48, 48, 48])
    p.add_argument("--foreground-mean", type=float, default=300.0)
    p.add_argument("--background-mean", type=float, default=50.0)
    p.add_argument("--noise-std", type=float, default=10.0)
    p.add_argument("--tube-radius", type=float, default=4.0)
    p.add_argument("--misalign-shift", type=float, default=6.0)
    p.add_argument("--class-noise", type=_key_value, action="append", metavar="CLASS=STD",
                   help="noise override for one class (repeatable)")
    p.add_argument("--class-shift", type=_key_value, action="append", metavar="CLASS=SHIFT",
                   help="shift override for one class (repeatable)")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("extract", help="feature table from a cohort directory")
    p.add_argument("--data", required=True, help="cohort directory with manifest.csv")
    p.add_argument("--out", required=True, help="feature table CSV")
    p.add_argument("--schema", default=SCHEMA_V1.schema_id)
    p.add_argument("--connectivity", type=int, default=26, choices=[6, 26])
    p.add_argument("--atlas-class", nargs="+", help="atlas classes (default: all)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-node", help="tune and train one decision node")
    _add_node_args(p)
    p.add_argument("--loo", action="store_true", help="also run leave-one-out evaluation")
    p.add_argument("--report", help="leave-one-out report path (default: <out>_loo.json)")
    p.set_defaults(func=cmd_train_node)

    p = sub.add_parser("eval-node", help="leave-one-out evaluation of one node")
    _add_node_args(p)
    p.add_argument("--loo", action="store_true", default=True,
                   help="leave-one-out (the only evaluation mode)")
    p.set_defaults(func=cmd_eval_node)

    p = sub.add_parser("tree", help="build, apply and study decision trees")
    tsub = p.add_subparsers(dest="tree_command", required=True)

    t = tsub.add_parser("build", help="write a tree definition")
    t.add_argument("--node", nargs=4, action="append", required=True,
                   metavar=("NODE_ID", "ATLAS_CLASS", "MODEL", "DIAGNOSIS"),
                   help="one node, in evaluation order (repeatable)")
    t.add_argument("--threshold", type=_key_value, action="append", metavar="NODE_ID=T")
    group = t.add_mutually_exclusive_group()
    group.add_argument("--error-node", dest="error_node", action="store_true", default=True,
                       help="all-negative cases are UNCERTAIN (default)")
    group.add_argument("--no-error-node", dest="error_node", action="store_false",
                       help="all-negative cases get the implicit diagnosis")
    t.add_argument("--implicit-diagnosis")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tree_build)

    t = tsub.add_parser("classify", help="diagnose cases")
    _add_tree_inputs(t)
    t.add_argument("--case", nargs="+", help="only these case ids")
    t.set_defaults(func=cmd_tree_classify)

    t = tsub.add_parser("evaluate", help="confusion matrix and accuracy of a tree")
    _add_tree_inputs(t, loo=True)
    t.set_defaults(func=cmd_tree_evaluate)

    t = tsub.add_parser("permute", help="accuracy of every node ordering")
    _add_tree_inputs(t, loo=True)
    t.set_defaults(func=cmd_tree_permute)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "classifier", None) is not None and args.classifier not in CLASSIFIER_KINDS:
        print(f"error: unknown classifier kind {args.classifier!r}; "
              f"expected one of {', '.join(CLASSIFIER_KINDS)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
