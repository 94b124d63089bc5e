"""Scoring predicted dataflow graphs and leak detections against ground truth.

Edge-level comparison treats graphs as sets of (caller, callee) pairs in
canonical rendering, so formatting differences between tools cannot create
spurious false positives.  Leak-level comparison matches detected sink
signatures against the expected set per case and aggregates plain
precision / recall / F-scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import BadConfig, BadSignature
from .smali import parse_method_ref


def _canonical(signature: str, context: str) -> str:
    try:
        return parse_method_ref(signature).render()
    except BadSignature as exc:
        raise BadConfig(f"{context}: {exc}") from None


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision and recall with the empty-denominator conventions.

    With no predictions (tp+fp == 0) precision is 1.0 if nothing was missed,
    else 0.0; recall mirrors this for an empty truth set.
    """
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if fn == 0 else 0.0
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 1.0 if fp == 0 else 0.0
    return precision, recall


def fbeta_score(precision: float, recall: float, beta: float) -> float:
    """The F-beta measure; beta < 1 weights precision more heavily."""
    if beta <= 0:
        raise BadConfig("beta must be > 0")
    beta_sq = beta * beta
    denominator = beta_sq * precision + recall
    if denominator == 0:
        return 0.0
    return (1 + beta_sq) * (precision * recall) / denominator


def f1_score(precision: float, recall: float) -> float:
    return fbeta_score(precision, recall, 1.0)


@dataclass
class EdgeMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    f_beta: float
    beta: float


def compare_graphs(
    predicted: Iterable[tuple[str, str]],
    truth: Iterable[tuple[str, str]],
    beta: float = 0.5,
) -> EdgeMetrics:
    """Score a predicted edge set against the ground-truth edge set."""
    predicted = set(predicted)
    truth = set(truth)
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    precision, recall = precision_recall(tp, fp, fn)
    return EdgeMetrics(
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        f_beta=fbeta_score(precision, recall, beta),
        beta=beta,
    )


@dataclass
class LeakCaseResult:
    case_id: str
    expected_leaks: int
    detected: int
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.expected_leaks, self.detected, self.tp, self.fp, self.fn) < 0:
            raise BadConfig(f"case {self.case_id}: negative counts")
        if self.tp > self.expected_leaks:
            raise BadConfig(f"case {self.case_id}: tp exceeds expected leaks")
        if self.tp + self.fn != self.expected_leaks:
            raise BadConfig(f"case {self.case_id}: tp + fn != expected leaks")


def evaluate_case(
    case_id: str,
    expected_sinks: Iterable[str],
    detected_sinks: Iterable[str],
    expected_leaks: Optional[int] = None,
) -> LeakCaseResult:
    """Match detected sink signatures against the expected set for one case.

    ``expected_leaks`` may exceed the number of listed sink signatures when a
    case has known leaks whose sinks are not enumerated; the surplus counts
    as misses.
    """
    expected = {_canonical(s, f"case {case_id} expected sink") for s in expected_sinks}
    detected = {_canonical(s, f"case {case_id} detected sink") for s in detected_sinks}
    if expected_leaks is None:
        expected_leaks = len(expected)
    if expected_leaks < len(expected):
        raise BadConfig(
            f"case {case_id}: expected_leaks={expected_leaks} is fewer than "
            f"{len(expected)} listed sinks"
        )
    tp = len(detected & expected)
    return LeakCaseResult(
        case_id=case_id,
        expected_leaks=expected_leaks,
        detected=len(detected),
        tp=tp,
        fp=len(detected - expected),
        fn=expected_leaks - tp,
    )


@dataclass
class LeakScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    empty: bool


def score_leaks(cases: Iterable[LeakCaseResult]) -> LeakScore:
    """Aggregate per-case counts into suite-level precision/recall/F1."""
    tp = fp = fn = 0
    for case in cases:
        tp += case.tp
        fp += case.fp
        fn += case.fn
    precision, recall = precision_recall(tp, fp, fn)
    return LeakScore(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        tp=tp,
        fp=fp,
        fn=fn,
        empty=(tp == 0 and fp == 0 and fn == 0),
    )


def load_ground_truth(path: Path | str) -> set[tuple[str, str]]:
    """Load a tab-separated caller/callee edge file into a canonical edge set.

    Blank lines and ``#`` comments are skipped; duplicate rows collapse.
    """
    edges: set[tuple[str, str]] = set()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BadConfig(f"cannot read ground truth {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise BadConfig(
                f"{path}:{lineno}: expected 'caller<TAB>callee', got {raw!r}"
            )
        caller = _canonical(parts[0].strip(), f"{path}:{lineno} caller")
        callee = _canonical(parts[1].strip(), f"{path}:{lineno} callee")
        edges.add((caller, callee))
    return edges


def load_graph_edges(path: Path | str) -> set[tuple[str, str]]:
    """Edge set of an exported graph JSON file, canonicalized."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read graph {path}: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("edges"), list):
        raise BadConfig(f"graph {path}: expected an object with an 'edges' array")
    edges = set()
    for i, pair in enumerate(data["edges"]):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise BadConfig(f"graph {path}: edge {i} is not a pair")
        edges.add(
            (
                _canonical(pair[0], f"graph {path} edge {i}"),
                _canonical(pair[1], f"graph {path} edge {i}"),
            )
        )
    return edges


def load_benchmark_manifest(path: Path | str) -> list[dict]:
    """Load and validate a benchmark manifest (a JSON array of case objects).

    Each case needs ``case_id``, ``smali_dir``, ``expected_leaks`` and
    ``expected_sinks``; extra keys are preserved untouched.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(data, list):
        raise BadConfig(f"manifest {path}: expected a JSON array")
    for i, case in enumerate(data):
        if not isinstance(case, dict):
            raise BadConfig(f"manifest {path}: case {i} is not an object")
        if not isinstance(case.get("case_id"), str) or not case["case_id"]:
            raise BadConfig(f"manifest {path}: case {i}: bad 'case_id'")
        if not isinstance(case.get("smali_dir"), str) or not case["smali_dir"]:
            raise BadConfig(f"manifest {path}: case {i}: bad 'smali_dir'")
        leaks = case.get("expected_leaks")
        if not isinstance(leaks, int) or isinstance(leaks, bool) or leaks < 0:
            raise BadConfig(f"manifest {path}: case {i}: bad 'expected_leaks'")
        sinks = case.get("expected_sinks")
        if not isinstance(sinks, list) or not all(isinstance(s, str) for s in sinks):
            raise BadConfig(f"manifest {path}: case {i}: bad 'expected_sinks'")
    return data
