"""Per-method summarization: prompt construction, response parsing, backends.

A summarizer backend receives a :class:`SummaryRequest` (one method body plus
the summary of the caller that led here) and produces a
:class:`SummaryResult`: a natural-language summary, the app methods the
tainted data flows into next, and any sinks hit in this method.

Two backends ship with the package: :class:`HttpBackend` talks to a
chat-completion endpoint with a fixed chain-of-thought prompt, and
``taint.TaintBackend`` computes the same contract deterministically from a
register-level taint pass.  Model responses pass through a validation filter
that drops malformed, framework, and unknown method references before they
can contaminate the call graph; every drop lands in a :class:`DropLog` with
its reason.

Extended response schema
------------------------
Beyond the mandatory ``"Summary"`` and ``"Next Methods"`` keys, a response may
carry sink details directly::

    {"Summary": "...", "Next Methods": [],
     "Sinks": [{"Sink": "Landroid/util/Log;->d:(...)I",
                "Category": "Logging", "Evidence": "..."}],
     "Leak": true}

When the extended keys are absent, sinks are recovered from the summary text
by signature extraction against the active sink rules.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

from .errors import BackendUnavailable, InvalidResponse
from .sinkrules import SINK_CATEGORIES, SinkRule, find_sink_rule
from .smali import MethodIndex, MethodRecord, MethodRef, parse_method_ref
from .sources import SensitiveApi
from .errors import BadSignature

FRAMEWORK_PREFIXES = ("Landroid/", "Landroidx/", "Lkotlin/")

# The machine-readable marker a deterministic backend appends to its summary
# so the next request can pre-taint the right parameter registers.
TAINT_TRAILER_RE = re.compile(r"TAINTED-PARAMS:\[([^\]]*)\]")

_SIGNATURE_TOKEN_RE = re.compile(
    r"\[*L[\w$\-/]+;->[\w$<>\-]+:?\([^)\s]*\)[\[\w/$;]+"
)


def is_framework_ref(ref: MethodRef) -> bool:
    return ref.class_descriptor.startswith(FRAMEWORK_PREFIXES)


@dataclass
class SummaryRequest:
    """Everything needed to summarize one method within one dataflow exploration."""

    method: MethodRecord
    previous_summary: str
    target_data_type: str
    root_api: SensitiveApi

    def __post_init__(self):
        if self.target_data_type != self.root_api.data_type:
            raise ValueError(
                f"target_data_type {self.target_data_type!r} does not match "
                f"root API data type {self.root_api.data_type!r}"
            )


@dataclass
class SinkFinding:
    """A sink reached with tainted data."""

    sink_ref: MethodRef
    category: str
    evidence: str

    def __post_init__(self):
        if self.category not in SINK_CATEGORIES:
            raise ValueError(f"unknown sink category {self.category!r}")


@dataclass
class SummaryResult:
    summary: str
    next_methods: list[MethodRef]
    sinks: list[SinkFinding]
    leak_here: bool

    def __post_init__(self):
        if self.leak_here and not self.sinks:
            raise ValueError("leak_here without sink findings")
        for ref in self.next_methods:
            if is_framework_ref(ref):
                raise ValueError(f"framework method in next_methods: {ref.render()}")


@dataclass
class BackendConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.2
    context_window_tokens: int = 40000
    max_retries: int = 2
    timeout_seconds: float = 120.0

    def __post_init__(self):
        from .errors import BadConfig

        if self.temperature < 0:
            raise BadConfig("temperature must be >= 0")
        if self.context_window_tokens <= 0:
            raise BadConfig("context_window_tokens must be > 0")
        if self.max_retries < 0:
            raise BadConfig("max_retries must be >= 0")
        if self.timeout_seconds <= 0:
            raise BadConfig("timeout_seconds must be > 0")


@dataclass
class DropRecord:
    entry: str
    reason: str


class DropLog:
    """Collects every response entry discarded by validation, with a reason."""

    def __init__(self):
        self.records: list[DropRecord] = []
        self._lock = threading.Lock()

    def add(self, entry: str, reason: str) -> None:
        with self._lock:
            self.records.append(DropRecord(entry, reason))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class SummarizerBackend(Protocol):
    """Anything that can answer summary requests."""

    @property
    def identity(self) -> str: ...

    def summarize_request(
        self,
        req: SummaryRequest,
        index: MethodIndex,
        drop_log: Optional[DropLog] = None,
    ) -> SummaryResult: ...


_FEW_SHOT = '''### Examples:

Example Input:
- Method Signature: Lcom/example/app/Tracker;->record:(Landroid/telephony/TelephonyManager;)V
- Bytecode Instructions:
invoke-virtual {p1}, Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;
move-result-object v0
invoke-static {v0}, Lcom/example/app/Uploader;->push(Ljava/lang/String;)V

Example Output:
{
    "Summary": "The device identifier is retrieved from the TelephonyManager, stored in register v0, and passed as an argument to Lcom/example/app/Uploader;->push:(Ljava/lang/String;)V. No sink is reached in this method.",
    "Next Methods": ["Lcom/example/app/Uploader;->push:(Ljava/lang/String;)V"]
}

Example Input:
- Method Signature: Lcom/example/app/Uploader;->push:(Ljava/lang/String;)V
- Previous Summary: The device identifier is stored in register v0 and passed to this method's first parameter.
- Bytecode Instructions:
const-string v0, "ID"
invoke-static {v0, p0}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I

Example Output:
{
    "Summary": "The tainted device identifier arrives in parameter p0 and is written to the device log via Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I, a logging sink. Sensitive data is leaked here.",
    "Next Methods": []
}
'''


def build_prompt(req: SummaryRequest) -> str:
    """Render the chain-of-thought prompt for one summary request.

    Substitution is pure: identical requests produce byte-identical prompts.
    """
    instructions_text = "\n".join(ins.raw_text for ins in req.method.instructions)
    return f"""You are an expert in analyzing Android bytecode instructions. Your task is to trace how sensitive user data is originated, moved through registers, passed between methods, and possibly reaches sinks (e.g., logging, network, or storage).

**Chain of Thought Process:**

**1. Understand Context:**
- Previous Summary: {req.previous_summary}
- Method Signature: {req.method.signature.render()}
- Target Data Source: {req.root_api.render()} ({req.target_data_type})
- Bytecode Instructions:
{instructions_text}
- Goal: Output JSON with 'Summary' and 'Next Methods'.

**2. Identify Data Origin:**
- Look for sensitive API calls (e.g., location, contacts, device ID).
- Note data type, origin method, and the register it's stored in.
- If no origin, check if sensitive data may come via parameters (from `Previous Summary`).

**3. Track Data Storage:**
- If sensitive data found, trace its flow (via `move-*`, `iput-*`, `sput-*`, etc.).

**4. List Invoked Methods:**
- Extract full method signatures from invoke-* calls.
- Note which are passed sensitive registers.

**5. Filter Next Methods:**
- Exclude: `Landroid/*`, `Landroidx/*`, `Lkotlin/*`.
- Only keep directly invoked methods.
- If none left, use `[]`.

**6. Detect Sinks:**
- Check if sensitive data is passed to sinks like:
  - Logging
  - Network Transmission
  - Storage
- Return statements are not sinks.

**7. Finalize 'Next Methods':**
- If sink is hit with sensitive data, set `Next Methods` to `[]`.
- Otherwise, keep filtered method list.

**8. Construct Summary:**
- Describe origin, movement, and whether sensitive data was passed or leaked.
- If none observed, state it clearly.

{_FEW_SHOT}
### Output Format:
```json
{{
    "Summary": "[Summary of analysis based on the thought process]",
    "Next Methods": ["FullyQualifiedClass->methodName:(params)returnType"]
}}
```

- No markdown, code fences, or extra text.
- Complete method signatures only.
- JSON must be valid and standalone.

**STRICT RULES:**
1. Output only the JSON object. No explanation, markdown, or commentary.
2. Method signatures: full, exact, no guessing, no truncation.
3. `Next Methods = []` if a sink is hit.
4. Do not reuse examples from the prompt.
"""


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        text = "\n".join(lines).strip()
    return text


def _extract_json_object(text: str) -> dict:
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    end = text.rfind("}")
    if 0 <= start < end:
        try:
            obj = json.loads(text[start : end + 1])
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            pass
    raise InvalidResponse("no JSON object found in backend response")


def extract_sinks_from_summary(
    summary: str, rules: Iterable[SinkRule]
) -> list[SinkFinding]:
    """Recover sink findings from free-text summaries.

    Every method-signature token in the text is matched against the sink
    rules; matches become findings with the surrounding sentence as evidence.
    """
    rules = list(rules)
    findings: list[SinkFinding] = []
    seen: set[str] = set()
    for match in _SIGNATURE_TOKEN_RE.finditer(summary):
        token = match.group(0)
        try:
            ref = parse_method_ref(token)
        except BadSignature:
            continue
        rule = find_sink_rule(ref, rules)
        if rule is None or ref.render() in seen:
            continue
        seen.add(ref.render())
        window = summary[max(0, match.start() - 120) : match.end() + 40].strip()
        findings.append(SinkFinding(ref, rule.category, window))
    return findings


def parse_response(
    raw: str,
    index: MethodIndex,
    drop_log: Optional[DropLog] = None,
) -> SummaryResult:
    """Parse and validate one raw backend response.

    Next-method entries are dropped (and logged) when they fail the signature
    grammar, point into framework namespaces, or name a method the app index
    does not contain -- the usual shape of a hallucinated reference.

    Raises:
        InvalidResponse: when no JSON object is found or a mandatory key
            ("Summary", "Next Methods") is missing or mistyped.
    """
    obj = _extract_json_object(_strip_fences(raw))
    if "Summary" not in obj or "Next Methods" not in obj:
        raise InvalidResponse("response is missing 'Summary' or 'Next Methods'")
    summary = obj["Summary"]
    entries = obj["Next Methods"]
    if not isinstance(summary, str) or not isinstance(entries, list):
        raise InvalidResponse("'Summary' must be a string and 'Next Methods' a list")

    def drop(entry: str, reason: str) -> None:
        if drop_log is not None:
            drop_log.add(entry, reason)

    next_methods: list[MethodRef] = []
    kept: set[str] = set()
    for entry in entries:
        if not isinstance(entry, str):
            drop(repr(entry), "not a string")
            continue
        try:
            ref = parse_method_ref(entry)
        except BadSignature:
            drop(entry, "invalid signature")
            continue
        if is_framework_ref(ref):
            drop(entry, "framework class")
            continue
        key = ref.render()
        if key not in index:
            drop(entry, "not in method index")
            continue
        if key not in kept:
            kept.add(key)
            next_methods.append(ref)

    sinks: list[SinkFinding] = []
    if isinstance(obj.get("Sinks"), list):
        for entry in obj["Sinks"]:
            if not isinstance(entry, dict):
                drop(repr(entry), "bad sink entry")
                continue
            sig = entry.get("Sink")
            category = entry.get("Category")
            if not isinstance(sig, str) or category not in SINK_CATEGORIES:
                drop(repr(entry), "bad sink entry")
                continue
            try:
                ref = parse_method_ref(sig)
            except BadSignature:
                drop(sig, "invalid sink signature")
                continue
            sinks.append(SinkFinding(ref, category, str(entry.get("Evidence", ""))))

    return SummaryResult(
        summary=summary,
        next_methods=next_methods,
        sinks=sinks,
        leak_here=bool(sinks),
    )


class SummaryCache:
    """Per-run result cache, safe to share across worker threads."""

    def __init__(self):
        self._data: dict[tuple, SummaryResult] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(backend_identity: str, req: SummaryRequest) -> tuple:
        prev_hash = hashlib.sha256(req.previous_summary.encode("utf-8")).hexdigest()
        return (
            req.method.signature.render(),
            req.target_data_type,
            prev_hash,
            backend_identity,
        )

    def get(self, key: tuple) -> Optional[SummaryResult]:
        with self._lock:
            return self._data.get(key)

    def put(self, key: tuple, result: SummaryResult) -> None:
        with self._lock:
            self._data[key] = result

    def __len__(self) -> int:
        return len(self._data)


def summarize(
    backend: SummarizerBackend,
    req: SummaryRequest,
    index: MethodIndex,
    cache: Optional[SummaryCache] = None,
    drop_log: Optional[DropLog] = None,
) -> SummaryResult:
    """Answer one summary request, consulting the cache first."""
    if cache is None:
        return backend.summarize_request(req, index, drop_log)
    key = SummaryCache.key(backend.identity, req)
    hit = cache.get(key)
    if hit is not None:
        return hit
    result = backend.summarize_request(req, index, drop_log)
    cache.put(key, result)
    return result


def _requests_transport(url: str, payload: dict, timeout: float) -> dict:
    import requests

    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise BackendUnavailable(f"POST {url} failed: {exc}") from None
    if not 200 <= resp.status_code < 300:
        raise BackendUnavailable(f"POST {url} returned HTTP {resp.status_code}")
    try:
        return resp.json()
    except ValueError:
        raise InvalidResponse(f"POST {url} returned a non-JSON body") from None


class HttpBackend:
    """Chat-completion backend speaking the common local-server JSON dialect.

    Requests are single-turn::

        {"model": ..., "messages": [{"role": "user", "content": prompt}],
         "temperature": ..., "stream": false, "options": {"num_ctx": ...}}

    The response text is read from ``choices[0].message.content`` or, failing
    that, from ``message.content``.  Unparseable responses are retried with
    the identical prompt up to ``max_retries`` times before giving up.
    """

    def __init__(
        self,
        config: BackendConfig,
        sink_rules: Optional[list[SinkRule]] = None,
        max_inflight: int = 4,
        transport=None,
    ):
        if sink_rules is None:
            from .sinkrules import default_sink_rules

            sink_rules = default_sink_rules()
        self.config = config
        self.sink_rules = sink_rules
        self._transport = transport or _requests_transport
        self._permits = threading.Semaphore(max(1, max_inflight))

    @property
    def identity(self) -> str:
        cfg = self.config
        return f"http:{cfg.model_name}@{cfg.endpoint_url}:t={cfg.temperature}"

    def _payload(self, prompt: str) -> dict:
        cfg = self.config
        return {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "stream": False,
            "options": {"num_ctx": cfg.context_window_tokens},
        }

    @staticmethod
    def _response_text(data: dict) -> str:
        choices = data.get("choices")
        if isinstance(choices, list) and choices:
            message = choices[0].get("message", {})
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
        message = data.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        raise InvalidResponse("response carries no message content")

    def summarize_request(
        self,
        req: SummaryRequest,
        index: MethodIndex,
        drop_log: Optional[DropLog] = None,
    ) -> SummaryResult:
        prompt = build_prompt(req)
        attempts = self.config.max_retries + 1
        last_error: Exception = InvalidResponse("no attempt made")
        for _ in range(attempts):
            try:
                with self._permits:
                    data = self._transport(
                        self.config.endpoint_url,
                        self._payload(prompt),
                        self.config.timeout_seconds,
                    )
                result = parse_response(self._response_text(data), index, drop_log)
            except (BackendUnavailable, InvalidResponse) as exc:
                last_error = exc
                continue
            if not result.sinks:
                sinks = extract_sinks_from_summary(result.summary, self.sink_rules)
                if sinks:
                    result = SummaryResult(
                        summary=result.summary,
                        next_methods=result.next_methods,
                        sinks=sinks,
                        leak_here=True,
                    )
            return result
        raise last_error
