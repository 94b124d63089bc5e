"""bytetrace: register-level privacy dataflow analysis for decompiled Android bytecode.

The pipeline parses smali sources into an indexed method table, finds call
sites of sensitive APIs, explores each one breadth-first into a per-source
dataflow call graph via pluggable method summarizers (a deterministic taint
tracker or a chat-completion model), and assembles leak reports plus
evaluation metrics on top.
"""

from .errors import (
    BackendUnavailable,
    BadConfig,
    BadSignature,
    BytetraceError,
    DuplicateMethod,
    InvalidResponse,
    MalformedSmali,
    OutOfRange,
)
from .evalkit import (
    EdgeMetrics,
    LeakCaseResult,
    LeakScore,
    compare_graphs,
    evaluate_case,
    f1_score,
    fbeta_score,
    load_benchmark_manifest,
    load_graph_edges,
    load_ground_truth,
    precision_recall,
    score_leaks,
)
from .graph import DataflowGraph, ExploreConfig, build_graph, edge_set, export_graph
from .report import (
    ACTIONS,
    DimensionScores,
    FlowChain,
    FlowStep,
    GEvalScores,
    LeakReport,
    assemble_report,
    map_geval,
    normalize_action,
    report_from_json_obj,
    report_to_json_obj,
    reports_from_json,
    reports_to_json,
)
from .sinkrules import SINK_CATEGORIES, SinkRule, default_sink_rules, load_sink_rules
from .smali import (
    Instruction,
    MethodIndex,
    MethodRecord,
    MethodRef,
    build_index,
    parse_method_ref,
    parse_smali_file,
    parse_smali_tree,
)
from .sources import (
    RootSite,
    SensitiveApi,
    default_source_list,
    default_source_path,
    find_roots,
    load_source_list,
    parse_api_signature,
)
from .summarize import (
    BackendConfig,
    DropLog,
    HttpBackend,
    SinkFinding,
    SummaryCache,
    SummaryRequest,
    SummaryResult,
    build_prompt,
    extract_sinks_from_summary,
    is_framework_ref,
    parse_response,
    summarize,
)
from .taint import TaintBackend, TaintState, taint_summarize

__version__ = "0.1.0"
