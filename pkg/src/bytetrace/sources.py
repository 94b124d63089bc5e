"""Sensitive-API source lists and root discovery.

A source list is a JSON array of ``{"signature": ..., "data_type": ...}``
entries.  Signatures may be full canonical references
(``Lcls;->name:(PARAMS)RET``) or partial ones without the descriptor
(``Lcls;->name``); partial entries match call sites by class and name only.

``find_roots`` scans an indexed app for call sites of the listed APIs; each
matching invoke instruction becomes one :class:`RootSite`, the starting point
of a dataflow exploration.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .errors import BadConfig, BadSignature
from .smali import MethodIndex, MethodRef, parse_method_ref

_PARTIAL_RE = re.compile(r"^(?P<cls>\[*L[^;\s]+;)->(?P<name>[^\s:()]+)$")


@dataclass(frozen=True)
class SensitiveApi:
    """One source-list entry.  ``param_descriptor`` is None for partial entries."""

    class_descriptor: str
    name: str
    data_type: str
    param_descriptor: Optional[str] = None
    return_descriptor: Optional[str] = None

    @property
    def method_ref(self) -> Optional[MethodRef]:
        """Full reference, or None when the entry matches by class+name only."""
        if self.param_descriptor is None or self.return_descriptor is None:
            return None
        return MethodRef(
            self.class_descriptor, self.name, self.param_descriptor, self.return_descriptor
        )

    def render(self) -> str:
        ref = self.method_ref
        if ref is not None:
            return ref.render()
        return f"{self.class_descriptor}->{self.name}"

    def matches(self, ref: MethodRef) -> bool:
        if ref.class_descriptor != self.class_descriptor or ref.name != self.name:
            return False
        if self.param_descriptor is None:
            return True
        return (
            ref.param_descriptor == self.param_descriptor
            and ref.return_descriptor == self.return_descriptor
        )


@dataclass(frozen=True)
class RootSite:
    """A call site of a sensitive API: the enclosing method plus the instruction offset."""

    method: MethodRef
    api: SensitiveApi
    instruction_offset: int


def parse_api_signature(signature: str, data_type: str) -> SensitiveApi:
    """Parse a full or partial source-list signature.

    Raises:
        BadSignature: if the text matches neither form.
    """
    signature = signature.strip()
    partial = _PARTIAL_RE.match(signature)
    if partial:
        return SensitiveApi(partial.group("cls"), partial.group("name"), data_type)
    ref = parse_method_ref(signature)  # raises BadSignature on garbage
    return SensitiveApi(
        ref.class_descriptor,
        ref.name,
        data_type,
        ref.param_descriptor,
        ref.return_descriptor,
    )


def load_source_list(path: Path | str) -> list[SensitiveApi]:
    """Load a source list file, failing with field-level messages.

    Raises:
        BadConfig: on unreadable files, wrong shapes, bad signatures, or
            empty data types.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read source list {path}: {exc}") from None
    if not isinstance(data, list):
        raise BadConfig(f"source list {path}: expected a JSON array")
    apis = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise BadConfig(f"source list {path}: entry {i} is not an object")
        sig = entry.get("signature")
        data_type = entry.get("data_type")
        if not isinstance(sig, str) or not sig:
            raise BadConfig(f"source list {path}: entry {i}: missing or bad 'signature'")
        if not isinstance(data_type, str) or not data_type:
            raise BadConfig(f"source list {path}: entry {i}: missing or bad 'data_type'")
        try:
            apis.append(parse_api_signature(sig, data_type))
        except BadSignature as exc:
            raise BadConfig(f"source list {path}: entry {i}: {exc}") from None
    return apis


def default_source_path() -> Path:
    """Path of the source list shipped with the package."""
    return Path(resources.files("bytetrace.data") / "sources_default.json")


def default_source_list() -> list[SensitiveApi]:
    return load_source_list(default_source_path())


def find_roots(index: MethodIndex, apis: Iterable[SensitiveApi]) -> list[RootSite]:
    """Find every call site of a sensitive API in the indexed app.

    Returns one RootSite per (call site, matching API) pair, ordered by
    canonical caller signature, then instruction offset, then API order.
    """
    apis = list(apis)
    roots: list[RootSite] = []
    for key in sorted(index.methods):
        record = index.methods[key]
        for offset, ins in enumerate(record.instructions):
            if ins.method_ref is None:
                continue
            for api in apis:
                if api.matches(ins.method_ref):
                    roots.append(RootSite(record.signature, api, offset))
    return roots
