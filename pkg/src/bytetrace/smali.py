"""Parsing of smali (textual Dalvik bytecode) into method records.

The parser is line oriented: it tracks ``.class`` / ``.method`` / ``.end method``
directives, skips comments and the remaining dot-directives, and turns every
other line inside a method body into exactly one :class:`Instruction`.  Only
the opcode families that matter for register dataflow are decoded in depth
(``invoke-*``, ``move-*``, ``const*``, field access, ``return-*`` and the
primitive conversions); anything else is kept as an opaque instruction with
its opcode and raw text so that offsets stay faithful to the source.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import BadSignature, DuplicateMethod, MalformedSmali

logger = logging.getLogger(__name__)

# Class descriptors: "Lcom/foo/Bar;" or an array flavour such as "[Ljava/lang/String;".
_CLASS_DESC = r"\[*L[^;\s]+;|\[+[ZBCSIJFD]"
_PRIMITIVES = "ZBCSIJFD"

# Both accepted method-reference spellings:
#   Lcom/foo/Bar;->name:(params)ret    (canonical, colon before the descriptor)
#   Lcom/foo/Bar;->name(params)ret     (as written in invoke operands)
_METHOD_REF_RE = re.compile(
    rf"^(?P<cls>{_CLASS_DESC})->(?P<name>[^\s:()]+):?\((?P<params>[^)]*)\)(?P<ret>\S+)$"
)

# ".method public static doWork(Ljava/lang/String;)V" -- the signature is the last token.
_METHOD_SIG_RE = re.compile(r"^(?P<name>[^\s:()]+)\((?P<params>[^)]*)\)(?P<ret>\S+)$")

_REGISTER_RE = re.compile(r"^[vp]\d+$")
_RANGE_RE = re.compile(r"^([vp])(\d+)\s*\.\.\s*[vp](\d+)$")

_INVOKE_KINDS = frozenset(
    kind + suffix
    for kind in (
        "invoke-virtual",
        "invoke-super",
        "invoke-direct",
        "invoke-static",
        "invoke-interface",
    )
    for suffix in ("", "/range")
)

_FIELD_OP_PREFIXES = ("iput", "iget", "sput", "sget")

# Directives that open a block whose payload lines are not instructions.
_BLOCK_DIRECTIVES = {
    ".annotation": ".end annotation",
    ".subannotation": ".end subannotation",
    ".array-data": ".end array-data",
    ".packed-switch": ".end packed-switch",
    ".sparse-switch": ".end sparse-switch",
}


def _split_type_descriptors(text: str) -> list[str]:
    """Split a concatenated parameter descriptor string into single types.

    Raises:
        ValueError: if the text is not a sequence of valid type descriptors.
    """
    out = []
    i = 0
    n = len(text)
    while i < n:
        j = i
        while j < n and text[j] == "[":
            j += 1
        if j >= n:
            raise ValueError(f"dangling array marker in {text!r}")
        c = text[j]
        if c in _PRIMITIVES:
            out.append(text[i : j + 1])
            i = j + 1
        elif c == "L":
            k = text.find(";", j)
            if k < 0:
                raise ValueError(f"unterminated class descriptor in {text!r}")
            out.append(text[i : k + 1])
            i = k + 1
        else:
            raise ValueError(f"bad type descriptor at index {i} in {text!r}")
    return out


def _validate_return(desc: str) -> None:
    if desc == "V":
        return
    types = _split_type_descriptors(desc)
    if len(types) != 1:
        raise ValueError(f"return descriptor {desc!r} is not a single type")


@dataclass(frozen=True)
class MethodRef:
    """A fully qualified method reference.

    The canonical rendering is ``Lcom/Cls;->name:(PARAMS)RET`` -- note the
    colon between the name and the parameter list.  Equality and hashing
    follow the canonical rendering (which the frozen fields determine).
    """

    class_descriptor: str
    name: str
    param_descriptor: str
    return_descriptor: str

    def render(self) -> str:
        return (
            f"{self.class_descriptor}->{self.name}:"
            f"({self.param_descriptor}){self.return_descriptor}"
        )

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.render()


def parse_method_ref(text: str) -> MethodRef:
    """Parse a method reference in either accepted spelling.

    Accepts both ``Lc;->m:(PARAMS)RET`` and the invoke-operand spelling
    without the colon, ``Lc;->m(PARAMS)RET``.

    Args:
        text: the reference, surrounding whitespace is ignored.

    Returns:
        The parsed :class:`MethodRef`.

    Raises:
        BadSignature: if the text matches neither grammar.
    """
    m = _METHOD_REF_RE.match(text.strip())
    if not m:
        raise BadSignature(f"not a method reference: {text!r}")
    cls, name, params, ret = m.group("cls", "name", "params", "ret")
    try:
        _split_type_descriptors(params)
        _validate_return(ret)
    except ValueError as exc:
        raise BadSignature(f"bad descriptor in {text!r}: {exc}") from None
    return MethodRef(cls, name, params, ret)


@dataclass
class Instruction:
    """One decoded (or opaque) bytecode instruction.

    Attributes:
        opcode: the first token of the line.
        registers: registers in operand order; empty for opaque instructions.
        method_ref: set if and only if the opcode is a recognized invoke kind.
        string_literal: set if and only if the opcode is ``const-string*``.
        field_ref: set for ``iput/iget/sput/sget`` instructions.
        raw_text: the source line with leading/trailing whitespace removed.
    """

    opcode: str
    registers: tuple[str, ...] = ()
    method_ref: Optional[MethodRef] = None
    string_literal: Optional[str] = None
    field_ref: Optional[str] = None
    raw_text: str = ""

    @property
    def is_invoke(self) -> bool:
        return self.method_ref is not None


@dataclass
class MethodRecord:
    """A parsed method body plus its signature and access flags."""

    signature: MethodRef
    class_name: str
    access_flags: tuple[str, ...]
    instructions: list[Instruction]
    source_path: str = "<memory>"
    line: int = 0

    @property
    def invoked(self) -> list[MethodRef]:
        """Ordered projection of all invoke targets in this body."""
        return [ins.method_ref for ins in self.instructions if ins.method_ref is not None]

    @property
    def is_abstract(self) -> bool:
        return "abstract" in self.access_flags

    @property
    def is_native(self) -> bool:
        return "native" in self.access_flags


def _expand_registers(blob: str, path: str, lineno: int) -> tuple[str, ...]:
    blob = blob.strip()
    if not blob:
        return ()
    range_match = _RANGE_RE.match(blob)
    if range_match:
        prefix, lo, hi = range_match.group(1), int(range_match.group(2)), int(range_match.group(3))
        if hi < lo:
            raise MalformedSmali(path, lineno, f"bad register range {blob!r}")
        return tuple(f"{prefix}{i}" for i in range(lo, hi + 1))
    regs = []
    for tok in blob.split(","):
        tok = tok.strip()
        if not _REGISTER_RE.match(tok):
            raise MalformedSmali(path, lineno, f"bad register {tok!r}")
        regs.append(tok)
    return tuple(regs)


def _operand_registers(rest: str) -> tuple[str, ...]:
    return tuple(
        tok.strip() for tok in rest.split(",") if _REGISTER_RE.match(tok.strip())
    )


def _parse_instruction(line: str, path: str, lineno: int) -> Instruction:
    parts = line.split(None, 1)
    opcode = parts[0]
    rest = parts[1].strip() if len(parts) > 1 else ""

    if opcode in _INVOKE_KINDS:
        m = re.match(r"^\{(?P<regs>[^}]*)\}\s*,\s*(?P<target>\S+)$", rest)
        if not m:
            raise MalformedSmali(path, lineno, f"unparseable invoke operands: {line!r}")
        registers = _expand_registers(m.group("regs"), path, lineno)
        try:
            ref = parse_method_ref(m.group("target"))
        except BadSignature as exc:
            raise MalformedSmali(path, lineno, str(exc)) from None
        return Instruction(opcode, registers, method_ref=ref, raw_text=line)

    if opcode.startswith("const-string"):
        dest = rest.split(",", 1)[0].strip()
        if not _REGISTER_RE.match(dest):
            raise MalformedSmali(path, lineno, f"bad const-string destination: {line!r}")
        first = line.find('"')
        last = line.rfind('"')
        if first < 0 or last <= first:
            raise MalformedSmali(path, lineno, f"const-string without literal: {line!r}")
        return Instruction(
            opcode, (dest,), string_literal=line[first + 1 : last], raw_text=line
        )

    if opcode.startswith(_FIELD_OP_PREFIXES):
        pieces = [p.strip() for p in rest.split(",")]
        if len(pieces) < 2:
            raise MalformedSmali(path, lineno, f"unparseable field access: {line!r}")
        field_ref = pieces[-1]
        if "->" not in field_ref or ":" not in field_ref:
            raise MalformedSmali(path, lineno, f"bad field reference: {line!r}")
        registers = tuple(p for p in pieces[:-1] if _REGISTER_RE.match(p))
        if len(registers) != len(pieces) - 1:
            raise MalformedSmali(path, lineno, f"bad field-access registers: {line!r}")
        return Instruction(opcode, registers, field_ref=field_ref, raw_text=line)

    if (
        opcode.startswith("move")
        or opcode.startswith("return")
        or opcode.startswith("const")
        or "-to-" in opcode
    ):
        return Instruction(opcode, _operand_registers(rest), raw_text=line)

    # Anything else (branches, labels, arithmetic, ...) is kept opaque.
    return Instruction(opcode, (), raw_text=line)


def parse_smali_file(path: str, text: str) -> list[MethodRecord]:
    """Parse one smali file into method records.

    Args:
        path: where the text came from, used only in error messages.
        text: the file content.

    Returns:
        The method records in source order.  A file holding only a ``.class``
        directive (or nothing at all) yields an empty list.

    Raises:
        MalformedSmali: on structural problems -- a ``.method`` before any
            ``.class``, nested or unterminated method blocks, or a body line
            that cannot be classified.
    """
    records: list[MethodRecord] = []
    class_name: Optional[str] = None
    current: Optional[dict] = None
    skip_until: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if skip_until is not None:
            if line.startswith(skip_until):
                skip_until = None
            continue

        if line.startswith(".class"):
            descriptor = line.split()[-1]
            if not re.fullmatch(_CLASS_DESC, descriptor):
                raise MalformedSmali(path, lineno, f"bad class descriptor {descriptor!r}")
            class_name = descriptor
            continue

        if line.startswith(".method"):
            if current is not None:
                raise MalformedSmali(path, lineno, "nested .method block")
            if class_name is None:
                raise MalformedSmali(path, lineno, ".method before .class directive")
            tokens = line.split()
            if len(tokens) < 2:
                raise MalformedSmali(path, lineno, "empty .method directive")
            sig = _METHOD_SIG_RE.match(tokens[-1])
            if not sig:
                raise MalformedSmali(path, lineno, f"bad method signature {tokens[-1]!r}")
            try:
                ref = MethodRef(class_name, *sig.group("name", "params", "ret"))
                _split_type_descriptors(ref.param_descriptor)
                _validate_return(ref.return_descriptor)
            except (ValueError, BadSignature) as exc:
                raise MalformedSmali(path, lineno, f"bad method signature: {exc}") from None
            current = {
                "ref": ref,
                "flags": tuple(tokens[1:-1]),
                "instructions": [],
                "line": lineno,
            }
            continue

        if line.startswith(".end method"):
            if current is None:
                raise MalformedSmali(path, lineno, ".end method without .method")
            records.append(
                MethodRecord(
                    signature=current["ref"],
                    class_name=class_name,
                    access_flags=current["flags"],
                    instructions=current["instructions"],
                    source_path=path,
                    line=current["line"],
                )
            )
            current = None
            continue

        if line.startswith("."):
            word = line.split()[0]
            if word in _BLOCK_DIRECTIVES and current is not None:
                skip_until = _BLOCK_DIRECTIVES[word]
            continue

        if current is None:
            continue  # stray text between methods is not ours to judge

        current["instructions"].append(_parse_instruction(line, path, lineno))

    if current is not None:
        raise MalformedSmali(path, current["line"], "unterminated .method block")
    return records


def parse_smali_tree(roots: Iterable[Path | str]) -> list[MethodRecord]:
    """Recursively parse every ``*.smali`` file under the given directories.

    Files are visited in sorted order so repeated runs see the same sequence.
    """
    records: list[MethodRecord] = []
    for root in roots:
        root = Path(root)
        files = sorted(root.rglob("*.smali"))
        logger.debug("parsing %d smali files under %s", len(files), root)
        for file in files:
            text = file.read_text(encoding="utf-8", errors="replace")
            records.extend(parse_smali_file(str(file), text))
    return records


@dataclass
class MethodIndex:
    """All parsed methods of an app, keyed by canonical signature."""

    methods: dict[str, MethodRecord] = field(default_factory=dict)

    def __contains__(self, key: object) -> bool:
        if isinstance(key, MethodRef):
            key = key.render()
        return key in self.methods

    def __len__(self) -> int:
        return len(self.methods)

    def get(self, key: str | MethodRef) -> Optional[MethodRecord]:
        if isinstance(key, MethodRef):
            key = key.render()
        return self.methods.get(key)

    @property
    def method_count(self) -> int:
        return len(self.methods)

    @property
    def class_count(self) -> int:
        return len({rec.class_name for rec in self.methods.values()})


def build_index(records: Iterable[MethodRecord]) -> MethodIndex:
    """Build a lookup index over method records.

    Raises:
        DuplicateMethod: if two records share a canonical signature; the
            message names both source files.
    """
    index = MethodIndex()
    for rec in records:
        key = rec.signature.render()
        existing = index.methods.get(key)
        if existing is not None:
            raise DuplicateMethod(
                f"{key} defined in both {existing.source_path} and {rec.source_path}"
            )
        index.methods[key] = rec
    return index
