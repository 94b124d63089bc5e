"""Breadth-first construction of per-source dataflow call graphs.

Starting from a root call site, the engine summarizes the enclosing method,
then walks the reported next methods in queue order.  Each node is summarized
at most once per exploration (a visited set guards re-entry, so cycles
terminate), but edges to already-visited nodes are still recorded.  The
summary handed to a discovered method is the summary of the method that
discovered it, which is how taint context crosses call boundaries.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import BackendUnavailable, BadConfig, InvalidResponse
from .smali import MethodIndex, MethodRef
from .sources import RootSite
from .summarize import (
    DropLog,
    SummarizerBackend,
    SummaryCache,
    SummaryRequest,
    SummaryResult,
    summarize,
)


@dataclass
class ExploreConfig:
    max_depth: int = 0  # 0 = unlimited
    stop_on_sink: bool = True
    max_nodes: int = 5000

    def __post_init__(self):
        if self.max_nodes <= 0:
            raise BadConfig("max_nodes must be > 0")
        if self.max_depth < 0:
            raise BadConfig("max_depth must be >= 0")


@dataclass
class DataflowGraph:
    root: MethodRef
    data_type: str
    nodes: set[MethodRef] = field(default_factory=set)
    edges: set[tuple[MethodRef, MethodRef]] = field(default_factory=set)
    node_summaries: dict[MethodRef, SummaryResult] = field(default_factory=dict)
    sink_nodes: set[MethodRef] = field(default_factory=set)
    truncated: bool = False


def build_graph(
    root_site: RootSite,
    index: MethodIndex,
    backend: SummarizerBackend,
    cfg: Optional[ExploreConfig] = None,
    cache: Optional[SummaryCache] = None,
    drop_log: Optional[DropLog] = None,
) -> DataflowGraph:
    """Explore one root call site into a dataflow graph.

    Backend failures (``BackendUnavailable``, ``InvalidResponse``) propagate
    with the partially built graph attached as ``exc.partial_graph``.
    """
    if cfg is None:
        cfg = ExploreConfig()
    root_ref = root_site.method
    if root_ref.render() not in index:
        raise BadConfig(f"root method {root_ref.render()} is not in the index")

    graph = DataflowGraph(root=root_ref, data_type=root_site.api.data_type)
    graph.nodes.add(root_ref)
    queue: deque[tuple[MethodRef, str, int]] = deque([(root_ref, "", 0)])
    seen: set[MethodRef] = {root_ref}

    while queue:
        ref, previous_summary, depth = queue.popleft()
        record = index.get(ref)
        req = SummaryRequest(
            method=record,
            previous_summary=previous_summary,
            target_data_type=root_site.api.data_type,
            root_api=root_site.api,
        )
        try:
            result = summarize(backend, req, index, cache=cache, drop_log=drop_log)
        except (BackendUnavailable, InvalidResponse) as exc:
            exc.partial_graph = graph
            raise
        graph.node_summaries[ref] = result

        if result.sinks:
            graph.sink_nodes.add(ref)
            if cfg.stop_on_sink:
                continue  # sink nodes stay leaves; their next methods are [] by the sink rule
        if cfg.max_depth and depth >= cfg.max_depth:
            continue

        for target in result.next_methods:
            if target.render() not in index:
                # Backends already filter these; guard the graph closure anyway.
                if drop_log is not None:
                    drop_log.add(target.render(), "not in method index")
                continue
            is_new = target not in graph.nodes
            if is_new and len(graph.nodes) >= cfg.max_nodes:
                graph.truncated = True
                continue
            graph.nodes.add(target)
            graph.edges.add((ref, target))
            if target not in seen:
                seen.add(target)
                queue.append((target, result.summary, depth + 1))

    return graph


def edge_set(graph: DataflowGraph) -> set[tuple[str, str]]:
    """The graph's edges as canonical signature string pairs."""
    return {(a.render(), b.render()) for a, b in graph.edges}


def graph_to_json_obj(graph: DataflowGraph) -> dict:
    return {
        "root": graph.root.render(),
        "data_type": graph.data_type,
        "nodes": sorted(n.render() for n in graph.nodes),
        "edges": sorted([a.render(), b.render()] for a, b in graph.edges),
        "sinks": sorted(n.render() for n in graph.sink_nodes),
        "truncated": graph.truncated,
    }


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_graph(graph: DataflowGraph, fmt: str = "json") -> str:
    """Serialize a graph to ``json`` or ``dot``.  Output is deterministic."""
    if fmt == "json":
        return json.dumps(graph_to_json_obj(graph), indent=2) + "\n"
    if fmt == "dot":
        lines = ["digraph dataflow {"]
        lines.append("  rankdir=LR;")
        for node in sorted(n.render() for n in graph.nodes):
            attrs = ""
            if node in {s.render() for s in graph.sink_nodes}:
                attrs = " [shape=doubleoctagon]"
            elif node == graph.root.render():
                attrs = " [shape=box]"
            lines.append(f"  {_dot_quote(node)}{attrs};")
        for a, b in sorted((a.render(), b.render()) for a, b in graph.edges):
            lines.append(f"  {_dot_quote(a)} -> {_dot_quote(b)};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {fmt!r}")
