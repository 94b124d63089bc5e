"""Sink rules: which framework calls count as a data sink, and of what kind.

A rule matches either a class-descriptor prefix (``Landroid/util/Log``) or one
exact canonical method signature (anything containing ``->``).  Rules can be
overridden with a JSON file holding an array of ``{"match": ..., "category": ...}``
objects; categories are restricted to Logging, Storage and Transmission.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import BadConfig, BadSignature
from .smali import MethodRef, parse_method_ref

SINK_CATEGORIES = ("Logging", "Storage", "Transmission")


@dataclass(frozen=True)
class SinkRule:
    class_prefix_or_ref: str
    category: str

    def __post_init__(self):
        if self.category not in SINK_CATEGORIES:
            raise BadConfig(
                f"unknown sink category {self.category!r}; expected one of {SINK_CATEGORIES}"
            )

    def matches(self, ref: MethodRef) -> bool:
        if "->" in self.class_prefix_or_ref:
            try:
                wanted = parse_method_ref(self.class_prefix_or_ref).render()
            except BadSignature:
                return False
            return ref.render() == wanted
        return ref.class_descriptor.startswith(self.class_prefix_or_ref)


def default_sink_rules() -> list[SinkRule]:
    """The built-in rule set: logging, file/preference storage, network and wearable transport."""
    return [
        SinkRule("Landroid/util/Log", "Logging"),
        SinkRule("Ljava/io/", "Storage"),
        SinkRule("Landroid/content/SharedPreferences", "Storage"),
        SinkRule("Ljava/net/", "Transmission"),
        SinkRule("Lorg/apache/http/", "Transmission"),
        SinkRule("Lcom/google/android/gms/wearable/", "Transmission"),
    ]


def load_sink_rules(path: Path | str) -> list[SinkRule]:
    """Load a sink-rule override file (replaces the default set entirely)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read sink rules {path}: {exc}") from None
    if not isinstance(data, list):
        raise BadConfig(f"sink rules {path}: expected a JSON array")
    rules = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "match" not in entry or "category" not in entry:
            raise BadConfig(f"sink rules {path}: entry {i} needs 'match' and 'category'")
        if not isinstance(entry["match"], str) or not entry["match"]:
            raise BadConfig(f"sink rules {path}: entry {i} has a bad 'match'")
        try:
            rules.append(SinkRule(entry["match"], entry["category"]))
        except BadConfig as exc:
            raise BadConfig(f"sink rules {path}: entry {i}: {exc}") from None
    return rules


def find_sink_rule(ref: MethodRef, rules: Iterable[SinkRule]) -> Optional[SinkRule]:
    """Return the first rule matching the reference, exact-signature rules first."""
    exact = [r for r in rules if "->" in r.class_prefix_or_ref]
    prefixed = [r for r in rules if "->" not in r.class_prefix_or_ref]
    for rule in (*exact, *prefixed):
        if rule.matches(ref):
            return rule
    return None
