"""Command-line interface: analyze, eval-graph, eval-leaks.

Exit codes: 0 on success, 1 when the summarization backend failed
(partial outputs are kept with a ``.partial`` suffix), 2 on input errors
(missing paths, malformed smali, bad config files).
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import (
    BackendUnavailable,
    BadConfig,
    BytetraceError,
    InvalidResponse,
)
from .evalkit import (
    compare_graphs,
    evaluate_case,
    load_benchmark_manifest,
    load_graph_edges,
    load_ground_truth,
    score_leaks,
)
from .graph import DataflowGraph, ExploreConfig, build_graph, export_graph
from .report import assemble_report, report_to_json_obj, reports_to_json
from .sinkrules import load_sink_rules
from .smali import build_index, parse_smali_tree
from .sources import default_source_path, find_roots, load_source_list
from .summarize import BackendConfig, DropLog, HttpBackend, SummaryCache
from .taint import TaintBackend

ENDPOINT_ENV = "BYTETRACE_ENDPOINT"


@dataclass
class RunConfig:
    smali_roots: list[Path] = field(default_factory=list)
    source_list: Optional[Path] = None
    backend_kind: str = "taint"
    http: Optional[BackendConfig] = None
    sink_rules_path: Optional[Path] = None
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    output_dir: Path = Path("out")
    parallelism: int = 1


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _slug(text: str, limit: int = 60) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_")[:limit]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _load_config_file(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise BadConfig(f"config {path}: expected a JSON object")
    return data


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge config-file values and flags; flags win, the endpoint env var wins last."""
    file_cfg: dict = {}
    if args.config:
        file_cfg = _load_config_file(Path(args.config))

    backend_cfg = file_cfg.get("backend", {})
    if not isinstance(backend_cfg, dict):
        raise BadConfig("config: 'backend' must be an object")
    explore_cfg = file_cfg.get("explore", {})
    if not isinstance(explore_cfg, dict):
        raise BadConfig("config: 'explore' must be an object")

    smali_roots = [Path(p) for p in (args.smali or file_cfg.get("smali_roots", []))]
    source_list = args.sources or file_cfg.get("source_list")
    backend_kind = args.backend or backend_cfg.get("kind", "taint")
    if backend_kind not in ("http", "taint"):
        raise BadConfig(f"unknown backend {backend_kind!r}; expected 'http' or 'taint'")

    endpoint = os.environ.get(ENDPOINT_ENV) or args.endpoint or backend_cfg.get("endpoint_url")
    model = args.model or backend_cfg.get("model_name")
    temperature = args.temperature if args.temperature is not None else backend_cfg.get("temperature", 0.2)
    ctx = args.ctx if args.ctx is not None else backend_cfg.get("context_window_tokens", 40000)

    http = None
    if backend_kind == "http":
        if not endpoint or not model:
            raise BadConfig("the http backend needs --endpoint and --model (or config values)")
        http = BackendConfig(
            endpoint_url=endpoint,
            model_name=model,
            temperature=float(temperature),
            context_window_tokens=int(ctx),
            max_retries=int(backend_cfg.get("max_retries", 2)),
            timeout_seconds=float(backend_cfg.get("timeout_seconds", 120.0)),
        )

    explore = ExploreConfig(
        max_depth=args.max_depth if args.max_depth is not None else int(explore_cfg.get("max_depth", 0)),
        stop_on_sink=args.stop_on_sink if args.stop_on_sink is not None else bool(explore_cfg.get("stop_on_sink", True)),
        max_nodes=args.max_nodes if args.max_nodes is not None else int(explore_cfg.get("max_nodes", 5000)),
    )

    sink_rules = args.sink_rules or backend_cfg.get("sink_rules")
    return RunConfig(
        smali_roots=smali_roots,
        source_list=Path(source_list) if source_list else None,
        backend_kind=backend_kind,
        http=http,
        sink_rules_path=Path(sink_rules) if sink_rules else None,
        explore=explore,
        output_dir=Path(args.out or file_cfg.get("output_dir", "out")),
        parallelism=max(1, args.jobs if args.jobs is not None else int(file_cfg.get("parallelism", 1))),
    )


def _make_backend(cfg: RunConfig):
    rules = load_sink_rules(cfg.sink_rules_path) if cfg.sink_rules_path else None
    if cfg.backend_kind == "http":
        return HttpBackend(cfg.http, sink_rules=rules, max_inflight=cfg.parallelism)
    return TaintBackend(rules=rules, apply_sink_leaf_rule=cfg.explore.stop_on_sink)


@dataclass
class _RootOutcome:
    site: object
    graph: Optional[DataflowGraph]
    report: Optional[object]
    error: Optional[Exception]
    seconds: float


def _explore_one(site, index, backend, cfg: RunConfig, cache, drop_log) -> _RootOutcome:
    start = time.perf_counter()
    try:
        graph = build_graph(site, index, backend, cfg.explore, cache=cache, drop_log=drop_log)
        return _RootOutcome(site, graph, assemble_report(graph), None, time.perf_counter() - start)
    except (BackendUnavailable, InvalidResponse) as exc:
        partial = getattr(exc, "partial_graph", None)
        return _RootOutcome(site, partial, None, exc, time.perf_counter() - start)


def analyze_app(cfg: RunConfig, out_dir: Optional[Path] = None) -> int:
    """Analyze one app (a set of smali roots). Returns the process exit code."""
    out_dir = out_dir or cfg.output_dir
    started = time.perf_counter()

    for root in cfg.smali_roots:
        if not root.is_dir():
            raise BadConfig(f"smali root {root} is not a directory")
    if not cfg.smali_roots:
        raise BadConfig("no smali roots given (use --smali or a config file)")

    records = parse_smali_tree(cfg.smali_roots)
    index = build_index(records)
    apis = load_source_list(cfg.source_list or default_source_path())
    roots = find_roots(index, apis)
    backend = _make_backend(cfg)
    cache = SummaryCache()
    drop_log = DropLog()

    if cfg.parallelism > 1 and len(roots) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(
                pool.map(lambda s: _explore_one(s, index, backend, cfg, cache, drop_log), roots)
            )
    else:
        outcomes = [_explore_one(s, index, backend, cfg, cache, drop_log) for s in roots]

    failed = [o for o in outcomes if o.error is not None]
    reports = [o.report for o in outcomes if o.report is not None]
    root_rows = []
    for i, outcome in enumerate(outcomes):
        site = outcome.site
        stem = f"root{i:02d}_{_slug(site.method.render())}"
        suffix = "" if outcome.error is None else ".partial"
        graph_file = dot_file = None
        if outcome.graph is not None:
            graph_file = f"{stem}.graph.json{suffix}"
            dot_file = f"{stem}.dot{suffix}"
            _atomic_write(out_dir / graph_file, export_graph(outcome.graph, "json"))
            _atomic_write(out_dir / dot_file, export_graph(outcome.graph, "dot"))
        if outcome.error is None:
            print(
                f"{site.method.render()} [{site.api.data_type}] "
                f"nodes={len(outcome.graph.nodes)} edges={len(outcome.graph.edges)} "
                f"sinks={len(outcome.report.all_sinks)} label={outcome.report.label}"
            )
        else:
            print(
                f"{site.method.render()} [{site.api.data_type}] "
                f"FAILED: {outcome.error}",
                file=sys.stderr,
            )
        row = {
            "root": site.method.render(),
            "data_type": site.api.data_type,
            "offset": site.instruction_offset,
            "graph_json": graph_file,
            "graph_dot": dot_file,
            "seconds": round(outcome.seconds, 6),
        }
        if outcome.graph is not None:
            row.update(
                nodes=len(outcome.graph.nodes),
                edges=len(outcome.graph.edges),
                truncated=outcome.graph.truncated,
            )
        if outcome.report is not None:
            row.update(sinks=outcome.report.all_sinks, label=outcome.report.label)
        if outcome.error is not None:
            row["error"] = str(outcome.error)
        root_rows.append(row)

    report_name = "report.json" if not failed else "report.json.partial"
    _atomic_write(out_dir / report_name, reports_to_json(reports))
    summary = {
        "smali_roots": [str(p) for p in cfg.smali_roots],
        "backend": backend.identity,
        "class_count": index.class_count,
        "method_count": index.method_count,
        "root_count": len(roots),
        "roots": root_rows,
        "drops": [{"entry": d.entry, "reason": d.reason} for d in drop_log],
        "failures": [str(o.error) for o in failed],
        "seconds": round(time.perf_counter() - started, 6),
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    return 1 if failed else 0


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.batch:
        return _analyze_batch(args)
    cfg = _resolve_run_config(args)
    return analyze_app(cfg)


def _analyze_batch(args: argparse.Namespace) -> int:
    batch_dir = Path(args.batch)
    if not batch_dir.is_dir():
        raise BadConfig(f"batch directory {batch_dir} is not a directory")
    apps = sorted(d for d in batch_dir.iterdir() if d.is_dir() and any(d.rglob("*.smali")))
    if not apps:
        raise BadConfig(f"batch directory {batch_dir} holds no apps with smali files")

    worst = 0
    rows = []
    started = time.perf_counter()
    for app in apps:
        app_args = argparse.Namespace(**vars(args))
        app_args.smali = [str(app)]
        app_args.batch = None
        cfg = _resolve_run_config(app_args)
        out_dir = cfg.output_dir / app.name
        app_start = time.perf_counter()
        try:
            code = analyze_app(cfg, out_dir=out_dir)
            status = "ok" if code == 0 else "backend-failure"
        except BytetraceError as exc:
            code = 2
            status = f"input-error: {exc}"
            print(f"{app.name}: {exc}", file=sys.stderr)
        worst = max(worst, code)
        rows.append(
            {
                "app": app.name,
                "status": status,
                "exit_code": code,
                "seconds": round(time.perf_counter() - app_start, 6),
            }
        )
    summary = {
        "batch_dir": str(batch_dir),
        "apps": rows,
        "seconds": round(time.perf_counter() - started, 6),
    }
    _atomic_write(Path(args.out or "out") / "batch_summary.json", json.dumps(summary, indent=2) + "\n")
    return worst


def _print_edge_metrics(metrics) -> None:
    print(f"TP={metrics.tp} FP={metrics.fp} FN={metrics.fn}")
    print(f"Precision:      {metrics.precision * 100:.2f}%")
    print(f"Recall:         {metrics.recall * 100:.2f}%")
    print(f"F1-score:       {metrics.f1 * 100:.2f}%")
    print(f"F{metrics.beta:g}-score:     {metrics.f_beta * 100:.2f}%")


def cmd_eval_graph(args: argparse.Namespace) -> int:
    predicted_path = Path(args.predicted)
    predicted = load_graph_edges(predicted_path)
    truth = load_ground_truth(Path(args.truth))
    metrics = compare_graphs(predicted, truth, beta=args.beta)
    _print_edge_metrics(metrics)
    out_path = Path(args.json_out) if args.json_out else predicted_path.with_name(
        predicted_path.name + ".metrics.json"
    )
    _atomic_write(
        out_path,
        json.dumps(
            {
                "tp": metrics.tp,
                "fp": metrics.fp,
                "fn": metrics.fn,
                "precision": metrics.precision,
                "recall": metrics.recall,
                "f1": metrics.f1,
                "f_beta": metrics.f_beta,
                "beta": metrics.beta,
            },
            indent=2,
        )
        + "\n",
    )
    return 0


def _detected_sinks(report_path: Path) -> list[str]:
    data = json.loads(report_path.read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise BadConfig(f"{report_path}: expected a JSON array of reports")
    sinks: list[str] = []
    for entry in data:
        if isinstance(entry, dict):
            sinks.extend(s for s in entry.get("All Sinks", []) if isinstance(s, str))
    return sinks


def cmd_eval_leaks(args: argparse.Namespace) -> int:
    manifest = load_benchmark_manifest(Path(args.manifest))
    results_dir = Path(args.results_dir)
    missing = []
    cases = []
    for case in manifest:
        report_path = results_dir / case["case_id"] / "report.json"
        if not report_path.is_file():
            missing.append(case["case_id"])
            continue
        cases.append(
            evaluate_case(
                case["case_id"],
                case["expected_sinks"],
                _detected_sinks(report_path),
                expected_leaks=case["expected_leaks"],
            )
        )

    width = max([len("Suite"), *(len(c.case_id) for c in cases)], default=5) + 2
    print(f"{'Suite':<{width}}{'GT':>4}{'TP':>4}{'FN':>4}{'FP':>4}")
    for case in cases:
        print(
            f"{case.case_id:<{width}}{case.expected_leaks:>4}{case.tp:>4}"
            f"{case.fn:>4}{case.fp:>4}"
        )
    totals = score_leaks(cases)
    print(
        f"{'Total':<{width}}{totals.tp + totals.fn:>4}{totals.tp:>4}"
        f"{totals.fn:>4}{totals.fp:>4}"
    )
    print(f"Precision, P = TP/(TP+FP): {totals.precision * 100:.2f}%")
    print(f"Recall,    R = TP/(TP+FN): {totals.recall * 100:.2f}%")
    print(f"F1-score = 2PR/(P+R):      {totals.f1 * 100:.2f}%")
    if totals.empty:
        print("(empty: no expected or detected leaks)")

    payload = {
        "cases": [
            {
                "case_id": c.case_id,
                "expected_leaks": c.expected_leaks,
                "detected": c.detected,
                "tp": c.tp,
                "fp": c.fp,
                "fn": c.fn,
            }
            for c in cases
        ],
        "totals": {
            "tp": totals.tp,
            "fp": totals.fp,
            "fn": totals.fn,
            "precision": totals.precision,
            "recall": totals.recall,
            "f1": totals.f1,
            "empty": totals.empty,
        },
        "missing": missing,
    }
    out_path = Path(args.json_out) if args.json_out else results_dir / "leak_metrics.json"
    _atomic_write(out_path, json.dumps(payload, indent=2) + "\n")

    if missing:
        for case_id in missing:
            print(f"missing results for case {case_id}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bytetrace",
        description="Trace sensitive dataflow through decompiled Android bytecode.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="analyze one app (or a batch of apps)")
    analyze.add_argument(
        "--smali",
        action="append",
        metavar="DIR",
        help="smali source root; repeatable for multidex trees",
    )
    analyze.add_argument("--batch", metavar="DIR", help="directory of app subdirectories")
    analyze.add_argument("--config", metavar="FILE", help="JSON run config; flags override it")
    analyze.add_argument("--sources", metavar="FILE", help="sensitive-API source list (JSON)")
    analyze.add_argument("--sink-rules", metavar="FILE", help="sink-rule override file (JSON)")
    analyze.add_argument("--backend", choices=("http", "taint"), help="summarizer backend (default taint)")
    analyze.add_argument("--endpoint", help=f"chat endpoint URL (env {ENDPOINT_ENV} overrides)")
    analyze.add_argument("--model", help="model name for the http backend")
    analyze.add_argument("--temperature", type=float, help="sampling temperature (default 0.2)")
    analyze.add_argument("--ctx", type=int, help="context window tokens (default 40000)")
    analyze.add_argument(
        "--stop-on-sink",
        type=_parse_bool,
        metavar="BOOL",
        help="treat sink-hitting methods as leaves (default true)",
    )
    analyze.add_argument("--max-depth", type=int, help="exploration depth cap (0 = unlimited)")
    analyze.add_argument("--max-nodes", type=int, help="per-graph node cap (default 5000)")
    analyze.add_argument("--out", help="output directory (default out)")
    analyze.add_argument("--jobs", type=int, help="parallel root explorations (default 1)")
    analyze.set_defaults(func=cmd_analyze)

    eval_graph = sub.add_parser("eval-graph", help="score a predicted graph against truth edges")
    eval_graph.add_argument("predicted", help="exported graph JSON file")
    eval_graph.add_argument("truth", help="tab-separated caller/callee edge file")
    eval_graph.add_argument("--beta", type=float, default=0.5, help="beta for the F-beta score")
    eval_graph.add_argument("--json-out", help="where to write the metrics JSON")
    eval_graph.set_defaults(func=cmd_eval_graph)

    eval_leaks = sub.add_parser("eval-leaks", help="score detected leaks against a benchmark manifest")
    eval_leaks.add_argument("manifest", help="benchmark manifest JSON")
    eval_leaks.add_argument("results_dir", help="directory of per-case analyze outputs")
    eval_leaks.add_argument("--json-out", help="where to write the metrics JSON")
    eval_leaks.set_defaults(func=cmd_eval_leaks)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BackendUnavailable as exc:
        print(f"backend unavailable: {exc}", file=sys.stderr)
        return 1
    except BytetraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def run() -> None:  # console-script entry point
    sys.exit(main())


if __name__ == "__main__":
    run()
