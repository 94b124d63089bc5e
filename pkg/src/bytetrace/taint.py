"""A deterministic summarizer built on register-level taint tracking.

The pass is flow-sensitive, path-insensitive and single-sweep: instructions
are visited once in source order, branches are ignored, and taint merges
optimistically -- once a register is tainted it stays tainted until an
instruction overwrites it with untainted data (a ``const*`` or a move from a
clean register).  Wide values taint the base register of the pair only.

Taint enters a method in two ways: a call to the exploration's root API whose
result is captured by ``move-result*``, or parameter registers named by a
``TAINTED-PARAMS:[...]`` trailer in the previous summary.  It propagates
through moves, primitive conversions, field writes/reads, and through the
return value of any call that received a tainted argument.  Calls into the
app's own code that receive tainted arguments become next methods; calls
matching a sink rule become sink findings.  Following the sink-is-a-leaf
convention, a method that hit a sink reports no next methods (the
``sink_makes_leaf`` flag relaxes this so secondary flows can be explored).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .sinkrules import SinkRule, default_sink_rules, find_sink_rule, load_sink_rules
from .smali import Instruction, MethodIndex, MethodRecord, MethodRef
from .summarize import (
    TAINT_TRAILER_RE,
    DropLog,
    SinkFinding,
    SummaryRequest,
    SummaryResult,
    is_framework_ref,
)

__all__ = [
    "SinkRule",
    "default_sink_rules",
    "load_sink_rules",
    "TaintState",
    "taint_summarize",
    "TaintBackend",
]


@dataclass
class TaintState:
    """Mutable taint facts carried through one method body."""

    tainted_registers: set[str] = field(default_factory=set)
    tainted_fields: set[str] = field(default_factory=set)

    def taint(self, register: str) -> None:
        self.tainted_registers.add(register)

    def untaint(self, register: str) -> None:
        self.tainted_registers.discard(register)

    def is_tainted(self, register: str) -> bool:
        return register in self.tainted_registers


def pretainted_params(previous_summary: str) -> set[str]:
    """Parameter registers named by a TAINTED-PARAMS trailer, if any."""
    regs: set[str] = set()
    for match in TAINT_TRAILER_RE.finditer(previous_summary):
        for tok in match.group(1).split(","):
            tok = tok.strip()
            if tok:
                regs.add(tok)
    return regs


def _format_trailer(positions: set[int]) -> str:
    inner = ",".join(f"p{i}" for i in sorted(positions))
    return f"TAINTED-PARAMS:[{inner}]"


def _is_label(ins: Instruction) -> bool:
    return ins.opcode.startswith(":")


def taint_summarize(
    method: MethodRecord,
    req: SummaryRequest,
    rules: Optional[list[SinkRule]] = None,
    index: Optional[MethodIndex] = None,
    drop_log: Optional[DropLog] = None,
    sink_makes_leaf: bool = True,
) -> SummaryResult:
    """Summarize one method deterministically from a taint pass.

    When ``index`` is given, candidate next methods that the index does not
    contain are dropped (with a drop-log entry), mirroring the validation the
    model-backed path applies; without an index only the framework filter
    runs.
    """
    if rules is None:
        rules = default_sink_rules()
    state = TaintState()
    state.tainted_registers |= pretainted_params(req.previous_summary)
    arrived_via_params = sorted(state.tainted_registers)

    sinks: list[SinkFinding] = []
    next_methods: list[MethodRef] = []
    next_seen: set[str] = set()
    trailer_positions: set[int] = set()
    phrases: list[str] = []
    tainted_return = False
    # Result-taint status of the preceding invoke, consumed by move-result*.
    pending_result: Optional[bool] = None

    if arrived_via_params:
        phrases.append(
            f"Sensitive {req.target_data_type} data arrives in tainted "
            f"parameter register(s) {', '.join(arrived_via_params)}."
        )

    for ins in method.instructions:
        if _is_label(ins):
            continue  # labels never separate an invoke from its move-result

        op = ins.opcode
        if ins.method_ref is not None:
            target = ins.method_ref
            tainted_args = [i for i, r in enumerate(ins.registers) if state.is_tainted(r)]
            is_root_call = req.root_api.matches(target)
            if is_root_call:
                phrases.append(
                    f"Sensitive {req.target_data_type} data is obtained via "
                    f"{target.render()}."
                )
            if tainted_args:
                rule = find_sink_rule(target, rules)
                if rule is not None:
                    sinks.append(SinkFinding(target, rule.category, ins.raw_text))
                    phrases.append(
                        f"Tainted data reaches a {rule.category} sink via {target.render()}."
                    )
                elif is_framework_ref(target):
                    pass  # framework call that is neither sink nor app code
                elif index is not None and target.render() not in index:
                    if drop_log is not None:
                        drop_log.add(target.render(), "not in method index")
                else:
                    if target.render() not in next_seen:
                        next_seen.add(target.render())
                        next_methods.append(target)
                        phrases.append(f"Tainted data is passed to {target.render()}.")
                    trailer_positions.update(tainted_args)
            pending_result = is_root_call or bool(tainted_args)
            continue

        if op.startswith("move-result"):
            if ins.registers:
                if pending_result:
                    state.taint(ins.registers[0])
                    if not any("stored in register" in p for p in phrases):
                        phrases.append(
                            f"The sensitive value is stored in register {ins.registers[0]}."
                        )
                else:
                    state.untaint(ins.registers[0])
            pending_result = None
            continue

        pending_result = None

        if op == "move-exception":
            if ins.registers:
                state.untaint(ins.registers[0])
        elif op.startswith("move") or "-to-" in op:
            if len(ins.registers) >= 2:
                dest, src = ins.registers[0], ins.registers[1]
                if state.is_tainted(src):
                    state.taint(dest)
                else:
                    state.untaint(dest)
        elif op.startswith("const"):
            if ins.registers:
                state.untaint(ins.registers[0])
        elif op.startswith(("iput", "sput")):
            if ins.registers and ins.field_ref and state.is_tainted(ins.registers[0]):
                state.tainted_fields.add(ins.field_ref)
                phrases.append(f"Tainted data is stored in field {ins.field_ref}.")
        elif op.startswith(("iget", "sget")):
            if ins.registers and ins.field_ref:
                if ins.field_ref in state.tainted_fields:
                    state.taint(ins.registers[0])
                else:
                    state.untaint(ins.registers[0])
        elif op.startswith("return") and op != "return-void":
            if ins.registers and state.is_tainted(ins.registers[0]):
                tainted_return = True

    if tainted_return:
        phrases.append("The method returns tainted data to its caller.")
    if not phrases:
        phrases.append(
            "Method does not originate, store, or pass sensitive user data. "
            "No sink detected."
        )

    if sinks and sink_makes_leaf:
        next_methods = []

    summary = " ".join(phrases)
    if next_methods and trailer_positions:
        summary = f"{summary} {_format_trailer(trailer_positions)}"

    return SummaryResult(
        summary=summary,
        next_methods=next_methods,
        sinks=sinks,
        leak_here=bool(sinks),
    )


class TaintBackend:
    """Summarizer backend producing deterministic taint-derived results."""

    def __init__(
        self,
        rules: Optional[list[SinkRule]] = None,
        apply_sink_leaf_rule: bool = True,
    ):
        self.rules = rules if rules is not None else default_sink_rules()
        self.apply_sink_leaf_rule = apply_sink_leaf_rule

    @property
    def identity(self) -> str:
        digest = hashlib.sha1(
            "\n".join(
                f"{r.class_prefix_or_ref}={r.category}" for r in self.rules
            ).encode("utf-8")
        ).hexdigest()[:8]
        leaf = "leaf" if self.apply_sink_leaf_rule else "full"
        return f"taint:{digest}:{leaf}"

    def summarize_request(
        self,
        req: SummaryRequest,
        index: MethodIndex,
        drop_log: Optional[DropLog] = None,
    ) -> SummaryResult:
        return taint_summarize(
            req.method,
            req,
            rules=self.rules,
            index=index,
            drop_log=drop_log,
            sink_makes_leaf=self.apply_sink_leaf_rule,
        )
