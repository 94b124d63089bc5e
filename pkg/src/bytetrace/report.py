"""App-level leak reports and summary-quality score mapping.

``assemble_report`` turns one dataflow graph into the JSON-ready report
shape: the data types collected, the step-by-step flow, every sink reached,
the complete root-to-sink chains, and a final leak / no-leak label.  The JSON
key spellings ("Data Types Collected", "Overall Data Flow", "All Sinks",
"Complete Data Flow", "Label") are part of the external contract and must
not drift.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .errors import OutOfRange
from .graph import DataflowGraph
from .summarize import TAINT_TRAILER_RE

ACTIONS = ("Collected", "Stored", "Logged", "Transmitted", "Passed")

_CATEGORY_ACTION = {
    "Logging": "Logged",
    "Storage": "Stored",
    "Transmission": "Transmitted",
}

_ACTION_KEYWORDS = [
    ("Collected", ("collect", "retriev", "obtain", "read", "acquir")),
    ("Logged", ("log",)),
    ("Transmitted", ("transmit", "send", "sent", "upload", "network", "post")),
    ("Stored", ("store", "stored", "write", "written", "persist", "save")),
]

_CHAIN_SEPARATOR = " → "  # " → "


def normalize_action(text: str) -> str:
    """Map free-form action wording onto the fixed vocabulary (default: Passed)."""
    lowered = text.lower()
    for action, needles in _ACTION_KEYWORDS:
        if any(n in lowered for n in needles):
            return action
    return "Passed"


@dataclass
class FlowStep:
    step: str
    source_method: str
    reasoning: str
    action: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")


@dataclass
class FlowChain:
    chain: list[str]
    reasoning: str


@dataclass
class LeakReport:
    data_types_collected: list[str]
    overall_data_flow: list[FlowStep]
    all_sinks: list[str]
    complete_data_flow: list[FlowChain]
    label: str

    def __post_init__(self):
        if self.label not in ("leak", "no leak"):
            raise ValueError(f"bad label {self.label!r}")
        if self.label == "leak" and (not self.all_sinks or not self.complete_data_flow):
            raise ValueError("a leak report needs sinks and at least one flow chain")
        if self.label == "no leak" and self.all_sinks:
            raise ValueError("a no-leak report cannot list sinks")


def _strip_trailer(text: str) -> str:
    return TAINT_TRAILER_RE.sub("", text).strip()


def _bfs_order(graph: DataflowGraph) -> list:
    """Deterministic BFS over the graph: neighbours in canonical order."""
    adjacency: dict[str, list[str]] = {}
    by_key = {n.render(): n for n in graph.nodes}
    for a, b in graph.edges:
        adjacency.setdefault(a.render(), []).append(b.render())
    order = []
    seen = {graph.root.render()}
    queue = deque([graph.root.render()])
    while queue:
        key = queue.popleft()
        order.append(by_key[key])
        for nxt in sorted(adjacency.get(key, [])):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return order


def _shortest_path(graph: DataflowGraph, target: str) -> list[str]:
    root = graph.root.render()
    if target == root:
        return [root]
    adjacency: dict[str, list[str]] = {}
    for a, b in graph.edges:
        adjacency.setdefault(a.render(), []).append(b.render())
    parent: dict[str, str] = {root: root}
    queue = deque([root])
    while queue:
        key = queue.popleft()
        for nxt in sorted(adjacency.get(key, [])):
            if nxt not in parent:
                parent[nxt] = key
                if nxt == target:
                    queue.clear()
                    break
                queue.append(nxt)
    if target not in parent:
        return [root, target]  # disconnected sink node; should not happen
    path = [target]
    while path[-1] != root:
        path.append(parent[path[-1]])
    return list(reversed(path))


_VERBS = {"Logged": "logged", "Stored": "stored", "Transmitted": "transmitted"}
_STEP_VERBS = {"Logged": "Log", "Stored": "Store", "Transmitted": "Transmit"}


def assemble_report(graph: DataflowGraph) -> LeakReport:
    """Build the per-root leak report from a fully explored graph."""
    data_type = graph.data_type
    steps: list[FlowStep] = []
    sink_pairs: list[tuple[str, str, str]] = []  # (node, sink signature, category)

    for node in _bfs_order(graph):
        key = node.render()
        result = graph.node_summaries.get(node)
        reasoning = _strip_trailer(result.summary) if result else ""
        outgoing = any(a.render() == key for a, _ in graph.edges)
        if key == graph.root.render():
            steps.append(
                FlowStep(
                    step=f"Get {data_type.lower()} data",
                    source_method=key,
                    reasoning=reasoning,
                    action="Collected",
                )
            )
        if outgoing:
            steps.append(
                FlowStep(
                    step=f"Pass {data_type.lower()} data",
                    source_method=key,
                    reasoning=reasoning,
                    action="Passed",
                )
            )
        if result:
            for finding in result.sinks:
                action = _CATEGORY_ACTION.get(finding.category, "Passed")
                steps.append(
                    FlowStep(
                        step=f"{_STEP_VERBS.get(action, 'Pass')} {data_type.lower()} data",
                        source_method=key,
                        reasoning=finding.evidence,
                        action=action,
                    )
                )
                sink_pairs.append((key, finding.sink_ref.render(), finding.category))

    all_sinks = sorted({sig for _, sig, _ in sink_pairs})

    chains: list[FlowChain] = []
    for node_key, sink_sig, category in sorted(set(sink_pairs)):
        path = _shortest_path(graph, node_key)
        verb = _VERBS.get(_CATEGORY_ACTION.get(category, ""), "leaked")
        if len(path) == 1:
            reason = (
                f"{data_type} data is collected and {verb} within the same method."
            )
        else:
            reason = (
                f"{data_type} data is collected, passed through "
                f"{len(path) - 1} call(s), and {verb}."
            )
        chains.append(FlowChain(chain=path + [sink_sig], reasoning=reason))

    return LeakReport(
        data_types_collected=[data_type],
        overall_data_flow=steps,
        all_sinks=all_sinks,
        complete_data_flow=chains,
        label="leak" if all_sinks else "no leak",
    )


def report_to_json_obj(report: LeakReport) -> dict:
    flows = []
    for i, chain in enumerate(report.complete_data_flow, start=1):
        flows.append(
            {
                f"dataflow {i}": _CHAIN_SEPARATOR.join(chain.chain),
                "Reasoning": chain.reasoning,
            }
        )
    return {
        "Data Types Collected": list(report.data_types_collected),
        "Overall Data Flow": [
            {
                "Step": s.step,
                "Source Method": s.source_method,
                "Reasoning": s.reasoning,
                "Action": s.action,
            }
            for s in report.overall_data_flow
        ],
        "All Sinks": list(report.all_sinks),
        "Complete Data Flow": flows,
        "Label": [report.label],
    }


def report_from_json_obj(obj: dict) -> LeakReport:
    label_field = obj["Label"]
    label = label_field[0] if isinstance(label_field, list) else label_field
    chains = []
    for entry in obj.get("Complete Data Flow", []):
        flow_key = next(k for k in entry if k.startswith("dataflow"))
        chains.append(
            FlowChain(
                chain=[p.strip() for p in entry[flow_key].split(_CHAIN_SEPARATOR.strip())],
                reasoning=entry.get("Reasoning", ""),
            )
        )
    return LeakReport(
        data_types_collected=list(obj["Data Types Collected"]),
        overall_data_flow=[
            FlowStep(
                step=s["Step"],
                source_method=s["Source Method"],
                reasoning=s["Reasoning"],
                action=s["Action"],
            )
            for s in obj.get("Overall Data Flow", [])
        ],
        all_sinks=list(obj.get("All Sinks", [])),
        complete_data_flow=chains,
        label=label,
    )


def reports_to_json(reports: Iterable[LeakReport]) -> str:
    return json.dumps(
        [report_to_json_obj(r) for r in reports], indent=2, ensure_ascii=False
    ) + "\n"


def reports_from_json(text: str) -> list[LeakReport]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("report file must hold a JSON array")
    return [report_from_json_obj(entry) for entry in data]


# --- summary quality scores -------------------------------------------------

_DIMENSIONS = (
    "data_type_identification",
    "data_propagation_accuracy",
    "sink_function_match",
    "leakage_inference",
    "coherence_and_fluency",
)


@dataclass
class DimensionScores:
    """Five 1-5 integer ratings of one generated summary."""

    data_type_identification: int
    data_propagation_accuracy: int
    sink_function_match: int
    leakage_inference: int
    coherence_and_fluency: int

    def __post_init__(self):
        for name in _DIMENSIONS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise OutOfRange(f"{name} must be an integer in [1, 5], got {value!r}")


@dataclass
class GEvalScores:
    coherence: float
    consistency: float
    fluency: float
    relevance: float


def map_geval(d: DimensionScores) -> GEvalScores:
    """Project the five native dimensions onto the four-axis scheme.

    Coherence and fluency both mirror the combined coherence-and-fluency
    rating; consistency averages the three factual dimensions; relevance
    averages propagation accuracy and sink match.
    """
    consistency = (
        d.data_type_identification
        + d.data_propagation_accuracy
        + d.leakage_inference
    ) / 3.0
    relevance = (d.data_propagation_accuracy + d.sink_function_match) / 2.0
    return GEvalScores(
        coherence=float(d.coherence_and_fluency),
        consistency=consistency,
        fluency=float(d.coherence_and_fluency),
        relevance=relevance,
    )
