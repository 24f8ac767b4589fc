"""Ordered cascade of per-atlas decision nodes.

Each node asks whether a case looks well segmented by its own atlas set.
Nodes are visited in order and the first positive one names the
diagnosis. If every node says negative, the tree either falls through to
an implicit last diagnosis or reports UNCERTAIN.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BundleError, DataError, EmptyMatrixError, SizeGuardError, TreeError
from .features import FeatureVector
from .selection import CaseRecord, ConfusionMatrix, EvalReport
from .svm import NEGATIVE, POSITIVE, decision_value, load_model

UNCERTAIN = "UNCERTAIN"
MAX_PERMUTATION_NODES = 6


@dataclass(frozen=True)
class DecisionNode:
    node_id: str
    atlas_class: str
    model: object
    diagnosis: str
    threshold: float = 0.0

    def decide(self, features):
        """(decision value, positive/negative) for one feature vector."""
        if isinstance(features, FeatureVector):
            features.check_schema(self.model.schema_id)
            features = features.values
        value = decision_value(self.model, features)
        return value, (POSITIVE if value >= self.threshold else NEGATIVE)


@dataclass(frozen=True)
class LogicalTree:
    nodes: tuple
    with_error_node: bool
    implicit_diagnosis: Optional[str] = None

    @property
    def order(self):
        return tuple(n.node_id for n in self.nodes)

    @property
    def fallthrough(self):
        return UNCERTAIN if self.with_error_node else self.implicit_diagnosis

    @property
    def outcomes(self):
        """Every label the tree can emit, in node order then fallthrough."""
        return tuple(n.diagnosis for n in self.nodes) + (self.fallthrough,)


def build_tree(nodes, with_error_node, implicit_diagnosis=None):
    """Assemble a tree that visits ``nodes`` in the given order.

    Without the error node, a case negative at every node gets
    ``implicit_diagnosis`` (default ``D{len(nodes) + 1}``).
    """
    nodes = tuple(nodes)
    if not nodes:
        raise TreeError("a tree needs at least one node")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise TreeError(f"duplicate node ids in {ids}")
    diagnoses = [n.diagnosis for n in nodes]
    if with_error_node:
        implicit_diagnosis = None
    else:
        if implicit_diagnosis is None:
            implicit_diagnosis = f"D{len(nodes) + 1}"
        diagnoses.append(implicit_diagnosis)
    dup = sorted({d for d in diagnoses if diagnoses.count(d) > 1})
    if dup:
        raise TreeError(f"diagnosis labels must be distinct; repeated: {', '.join(dup)}")
    if UNCERTAIN in diagnoses:
        raise TreeError(f"{UNCERTAIN} is reserved for the error outcome")
    return LogicalTree(nodes, bool(with_error_node), implicit_diagnosis)


@dataclass(frozen=True)
class CaseBundle:
    """One case seen through every atlas set: atlas class -> FeatureVector."""

    case_id: str
    features_by_atlas: dict
    true_diagnosis: Optional[str] = None


@dataclass(frozen=True)
class PathStep:
    node_id: str
    decision_value: Optional[float]
    decision: str

    def to_dict(self):
        return {"node_id": self.node_id, "decision_value": self.decision_value,
                "decision": self.decision}


@dataclass(frozen=True)
class Diagnosis:
    case_id: str
    label: str
    path: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {"case_id": self.case_id, "label": self.label,
                "path": [s.to_dict() for s in self.path]}


def _walk(tree, case_id, decide):
    path = []
    for node in tree.nodes:
        value, decision = decide(node)
        path.append(PathStep(node.node_id, None if value is None else float(value), decision))
        if decision == POSITIVE:
            return Diagnosis(case_id, node.diagnosis, tuple(path))
    return Diagnosis(case_id, tree.fallthrough, tuple(path))


def check_bundle(tree, case):
    missing = [n.atlas_class for n in tree.nodes if n.atlas_class not in case.features_by_atlas]
    if missing:
        raise BundleError(f"case {case.case_id}: no features for atlas class(es) "
                          f"{', '.join(sorted(set(missing)))}")


def classify_case(tree, case):
    """Descend from the head node until the first positive decision."""
    check_bundle(tree, case)
    return _walk(tree, case.case_id,
                 lambda node: node.decide(case.features_by_atlas[node.atlas_class]))


def classify_decisions(tree, case_id, decisions):
    """Same traversal as classify_case, from precomputed per-node decisions.

    ``decisions`` maps node_id -> (decision value or None, positive/negative).
    """
    missing = [n.node_id for n in tree.nodes if n.node_id not in decisions]
    if missing:
        raise BundleError(f"case {case_id}: no decision for node(s) {', '.join(missing)}")
    return _walk(tree, case_id, lambda node: decisions[node.node_id])


def decisions_from_reports(reports):
    """Held-out per-node decisions from leave-one-out reports.

    Returns case_id -> node_id -> (decision value, decision).
    """
    out = {}
    for rep in reports:
        for rec in rep.cases:
            out.setdefault(rec.case_id, {})[rep.node_id] = (rec.decision_value, rec.predicted)
    return out


def evaluate_tree(tree, cases, decisions=None, node_id="tree"):
    """k x k confusion over the tree's outcomes; UNCERTAIN is never correct.

    With ``decisions`` (see decisions_from_reports) the stored per-node
    outcomes are used instead of re-running the node models.
    """
    cases = list(cases)
    if not cases:
        raise EmptyMatrixError("cannot evaluate a tree on zero cases")
    pairs, records = [], []
    for case in cases:
        if case.true_diagnosis is None:
            raise DataError(f"case {case.case_id} has no true diagnosis")
        if decisions is None:
            diag = classify_case(tree, case)
        else:
            if case.case_id not in decisions:
                raise BundleError(f"case {case.case_id}: no stored decisions")
            diag = classify_decisions(tree, case.case_id, decisions[case.case_id])
        pairs.append((case.true_diagnosis, diag.label))
        last = diag.path[-1].decision_value if diag.path else None
        records.append(CaseRecord(case.case_id, case.true_diagnosis, diag.label, last))
    labels = [lab for lab in tree.outcomes if lab != UNCERTAIN]
    labels += sorted({t for t, _ in pairs} - set(labels))
    labels.append(UNCERTAIN)
    matrix = ConfusionMatrix.from_pairs(labels, pairs)
    notes = ("order: " + " > ".join(tree.order),)
    return EvalReport(node_id, matrix, tuple(records), notes)


@dataclass(frozen=True)
class OrderingResult:
    order: tuple
    accuracy: float
    correct: int
    total: int


def permutation_study(nodes, cases, with_error_node, implicit_diagnosis=None, decisions=None):
    """Accuracy of every node ordering, best first.

    Models are shared across orderings, so per-node decisions are computed
    once per case. Ties keep lexicographic order of node ids.
    """
    nodes = tuple(nodes)
    if len(nodes) < 2:
        raise TreeError("a permutation study needs at least 2 nodes")
    if len(nodes) > MAX_PERMUTATION_NODES:
        raise SizeGuardError(f"{len(nodes)} nodes means {math.factorial(len(nodes))} "
                             f"orderings; limit is {MAX_PERMUTATION_NODES} nodes")
    cases = list(cases)
    base = build_tree(nodes, with_error_node, implicit_diagnosis)
    if decisions is None:
        decisions = {}
        for case in cases:
            check_bundle(base, case)
            decisions[case.case_id] = {
                n.node_id: n.decide(case.features_by_atlas[n.atlas_class]) for n in nodes}
    rows = []
    for perm in itertools.permutations(sorted(nodes, key=lambda n: n.node_id)):
        tree = build_tree(perm, with_error_node, base.implicit_diagnosis)
        rep = evaluate_tree(tree, cases, decisions)
        rows.append(OrderingResult(tree.order, rep.accuracy,
                                   int(np.trace(rep.matrix.counts)), rep.matrix.total))
    rows.sort(key=lambda r: -r.accuracy)  # stable: ties stay lexicographic
    return rows


def format_permutation_table(rows):
    width = max(len(" > ".join(r.order)) for r in rows)
    lines = ["ordering".ljust(width) + "  accuracy"]
    for r in rows:
        lines.append(" > ".join(r.order).ljust(width) + f"  {100.0 * r.accuracy:8.2f}%")
    return "\n".join(lines)


# -- tree definition files ---------------------------------------------------

def tree_to_dict(tree, model_paths):
    """``model_paths`` maps node_id -> path string stored in the file."""
    doc = {
        "nodes": [{"node_id": n.node_id, "atlas_class": n.atlas_class,
                   "model_path": model_paths[n.node_id], "diagnosis": n.diagnosis,
                   "threshold": float(n.threshold)} for n in tree.nodes],
        "with_error_node": tree.with_error_node,
        "order": list(tree.order),
    }
    if not tree.with_error_node:
        doc["implicit_diagnosis"] = tree.implicit_diagnosis
    return doc


def save_tree(tree, model_paths, path):
    with open(os.fspath(path), "w") as fh:
        json.dump(tree_to_dict(tree, model_paths), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tree(path):
    """Read a tree file; relative model paths resolve against its directory."""
    path = os.fspath(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TreeError(f"{path}: invalid JSON: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    try:
        by_id = {}
        for spec in doc["nodes"]:
            mp = spec["model_path"]
            if not os.path.isabs(mp):
                mp = os.path.join(base, mp)
            if not os.path.exists(mp):
                raise TreeError(f"{path}: model file not found: {mp}")
            by_id[spec["node_id"]] = DecisionNode(
                str(spec["node_id"]), str(spec["atlas_class"]), load_model(mp),
                str(spec["diagnosis"]), float(spec.get("threshold", 0.0)))
        order = doc.get("order") or [s["node_id"] for s in doc["nodes"]]
        if sorted(order) != sorted(by_id):
            raise TreeError(f"{path}: order {order} does not list each node exactly once")
        return build_tree([by_id[k] for k in order], bool(doc["with_error_node"]),
                          doc.get("implicit_diagnosis"))
    except (KeyError, TypeError) as exc:
        raise TreeError(f"{path}: malformed tree definition: {exc}") from None
