"""Prompt construction, response validation, caching, and the HTTP backend."""

import json

import pytest

from bytetrace.errors import BackendUnavailable, BadConfig, InvalidResponse
from bytetrace.sinkrules import default_sink_rules
from bytetrace.smali import parse_method_ref
from bytetrace.sources import SensitiveApi
from bytetrace.summarize import (
    BackendConfig,
    DropLog,
    HttpBackend,
    SummaryCache,
    SummaryRequest,
    SummaryResult,
    build_prompt,
    extract_sinks_from_summary,
    parse_response,
    summarize,
)

from conftest import load_corpus_index

LOCATION_API = SensitiveApi("Landroid/location/LocationManager;", "getLastKnownLocation", "Location")


def _request(case_id="log_leak", method="Lcom/fix/leaklog/Main;->fetch:(Landroid/location/LocationManager;)V", previous=""):
    index = load_corpus_index(case_id)
    return SummaryRequest(
        method=index.get(method),
        previous_summary=previous,
        target_data_type="Location",
        root_api=LOCATION_API,
    ), index


def test_request_rejects_mismatched_data_type():
    index = load_corpus_index("log_leak")
    with pytest.raises(ValueError):
        SummaryRequest(
            method=index.get("Lcom/fix/leaklog/Main;->fetch:(Landroid/location/LocationManager;)V"),
            previous_summary="",
            target_data_type="SSID",
            root_api=LOCATION_API,
        )


def test_prompt_contains_contract_lines():
    req, _ = _request()
    prompt = build_prompt(req)
    assert '"Summary": "[Summary of analysis based on the thought process]"' in prompt
    assert "- Previous Summary: \n" in prompt  # empty on the root request
    assert "- Method Signature: Lcom/fix/leaklog/Main;->fetch:(Landroid/location/LocationManager;)V" in prompt
    assert "- Target Data Source: Landroid/location/LocationManager;->getLastKnownLocation (Location)" in prompt
    assert "Exclude: `Landroid/*`, `Landroidx/*`, `Lkotlin/*`." in prompt
    assert "`Next Methods = []` if a sink is hit." in prompt
    assert "**STRICT RULES:**" in prompt
    assert "### Examples:" in prompt
    # The raw instruction lines appear verbatim.
    assert 'const-string v0, "gps"' in prompt
    assert "invoke-virtual {p0, v1}, Lcom/fix/leaklog/Main;->relay(Landroid/location/Location;)V" in prompt


def test_prompt_is_pure():
    req, _ = _request(previous="The location is in p1.")
    assert build_prompt(req) == build_prompt(req)
    other, _ = _request(previous="Different context.")
    assert build_prompt(req) != build_prompt(other)


def test_parse_response_minimal():
    _, index = _request()
    result = parse_response(
        '{"Summary": "Nothing sensitive.", "Next Methods": []}', index
    )
    assert result.summary == "Nothing sensitive."
    assert result.next_methods == []
    assert result.sinks == []
    assert result.leak_here is False


def test_parse_response_strips_code_fences():
    _, index = _request()
    raw = '```json\n{"Summary": "s", "Next Methods": []}\n```'
    assert parse_response(raw, index).summary == "s"


def test_parse_response_extracts_embedded_object():
    _, index = _request()
    raw = 'Sure! Here is the JSON:\n{"Summary": "s", "Next Methods": []}\nHope that helps.'
    assert parse_response(raw, index).summary == "s"


@pytest.mark.parametrize(
    "raw",
    [
        "no json here at all",
        '{"Summary": "s"}',
        '{"Next Methods": []}',
        '{"Summary": 3, "Next Methods": []}',
        '{"Summary": "s", "Next Methods": "La/B;->x:()V"}',
    ],
)
def test_parse_response_rejects_malformed(raw):
    _, index = _request()
    with pytest.raises(InvalidResponse):
        parse_response(raw, index)


def test_parse_response_filters_hallucinations():
    _, index = _request()
    drop_log = DropLog()
    raw = json.dumps(
        {
            "Summary": "s",
            "Next Methods": [
                "Lcom/fix/leaklog/Main;->relay:(Landroid/location/Location;)V",  # real
                "Lcom/fix/leaklog/Main;->relay:(Landroid/location/Location;)V",  # dup
                "not-a-signature",
                "Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I",  # framework
                "Lcom/fix/leaklog/Main;->invented:(I)V",  # not in index
                42,
            ],
        }
    )
    result = parse_response(raw, index, drop_log)
    assert [r.render() for r in result.next_methods] == [
        "Lcom/fix/leaklog/Main;->relay:(Landroid/location/Location;)V"
    ]
    reasons = {(d.entry, d.reason) for d in drop_log}
    assert ("not-a-signature", "invalid signature") in reasons
    assert (
        "Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I",
        "framework class",
    ) in reasons
    assert ("Lcom/fix/leaklog/Main;->invented:(I)V", "not in method index") in reasons
    assert ("42", "not a string") in reasons
    assert len(drop_log) == 4


def test_parse_response_extended_sink_schema():
    _, index = _request()
    raw = json.dumps(
        {
            "Summary": "leaks",
            "Next Methods": [],
            "Sinks": [
                {
                    "Sink": "Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I",
                    "Category": "Logging",
                    "Evidence": "invoke-static {v0, v1}, Landroid/util/Log;->d(...)",
                },
                {"Sink": "garbage", "Category": "Logging"},
                {"Sink": "La/B;->x:()V", "Category": "NotACategory"},
            ],
            "Leak": True,
        }
    )
    drop_log = DropLog()
    result = parse_response(raw, index, drop_log)
    assert len(result.sinks) == 1
    assert result.sinks[0].category == "Logging"
    assert result.leak_here is True
    assert {d.reason for d in drop_log} == {"invalid sink signature", "bad sink entry"}


def test_summary_result_validation():
    with pytest.raises(ValueError):
        SummaryResult(summary="s", next_methods=[], sinks=[], leak_here=True)
    with pytest.raises(ValueError):
        SummaryResult(
            summary="s",
            next_methods=[parse_method_ref("Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I")],
            sinks=[],
            leak_here=False,
        )


def test_extract_sinks_from_summary_text():
    rules = default_sink_rules()
    text = (
        "The value is written via Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I "
        "and also mentioned twice: Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I. "
        "A helper La/pp/Helper;->send:(Ljava/lang/String;)V is not a sink."
    )
    findings = extract_sinks_from_summary(text, rules)
    assert len(findings) == 1
    assert findings[0].sink_ref.render() == "Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I"
    assert findings[0].category == "Logging"
    assert "Landroid/util/Log" in findings[0].evidence


class _CountingBackend:
    def __init__(self, identity="stub"):
        self._identity = identity
        self.calls = 0

    @property
    def identity(self):
        return self._identity

    def summarize_request(self, req, index, drop_log=None):
        self.calls += 1
        return SummaryResult(summary=f"call {self.calls}", next_methods=[], sinks=[], leak_here=False)


def test_cache_coalesces_identical_requests():
    req, index = _request()
    backend = _CountingBackend()
    cache = SummaryCache()
    first = summarize(backend, req, index, cache=cache)
    second = summarize(backend, req, index, cache=cache)
    assert backend.calls == 1
    assert first is second
    assert len(cache) == 1


def test_cache_distinguishes_context_and_backend():
    req, index = _request()
    other_context, _ = _request(previous="tainted p1")
    backend = _CountingBackend()
    cache = SummaryCache()
    summarize(backend, req, index, cache=cache)
    summarize(backend, other_context, index, cache=cache)
    assert backend.calls == 2
    other_backend = _CountingBackend(identity="stub-2")
    summarize(other_backend, req, index, cache=cache)
    assert other_backend.calls == 1
    assert len(cache) == 3


def test_backend_config_validation():
    BackendConfig(endpoint_url="http://h", model_name="m")  # defaults are fine
    with pytest.raises(BadConfig):
        BackendConfig(endpoint_url="http://h", model_name="m", temperature=-1.0)
    with pytest.raises(BadConfig):
        BackendConfig(endpoint_url="http://h", model_name="m", context_window_tokens=0)
    with pytest.raises(BadConfig):
        BackendConfig(endpoint_url="http://h", model_name="m", max_retries=-1)


def _http_backend(replies, **cfg_kwargs):
    """Backend whose transport pops canned reply callables (or dicts)."""
    cfg = BackendConfig(endpoint_url="http://unit.test/v1/chat", model_name="tiny", **cfg_kwargs)
    calls = []

    def transport(url, payload, timeout):
        calls.append((url, payload, timeout))
        reply = replies[min(len(calls) - 1, len(replies) - 1)]
        if isinstance(reply, Exception):
            raise reply
        return reply

    return HttpBackend(cfg, transport=transport), calls


def _chat_reply(obj):
    return {"choices": [{"message": {"content": json.dumps(obj)}}]}


def test_http_backend_payload_shape():
    req, index = _request()
    backend, calls = _http_backend([_chat_reply({"Summary": "s", "Next Methods": []})])
    backend.summarize_request(req, index)
    url, payload, timeout = calls[0]
    assert url == "http://unit.test/v1/chat"
    assert timeout == 120.0
    assert payload["model"] == "tiny"
    assert payload["temperature"] == 0.2
    assert payload["stream"] is False
    assert payload["options"] == {"num_ctx": 40000}
    assert payload["messages"] == [{"role": "user", "content": build_prompt(req)}]


def test_http_backend_accepts_both_response_shapes():
    req, index = _request()
    flat = {"message": {"content": json.dumps({"Summary": "flat", "Next Methods": []})}}
    backend, _ = _http_backend([flat])
    assert backend.summarize_request(req, index).summary == "flat"
    nested = _chat_reply({"Summary": "nested", "Next Methods": []})
    backend, _ = _http_backend([nested])
    assert backend.summarize_request(req, index).summary == "nested"


def test_http_backend_retries_then_succeeds():
    req, index = _request()
    ok = _chat_reply({"Summary": "recovered", "Next Methods": []})
    backend, calls = _http_backend(
        [BackendUnavailable("down"), ok], max_retries=1
    )
    result = backend.summarize_request(req, index)
    assert result.summary == "recovered"
    assert len(calls) == 2


def test_http_backend_gives_up_after_retry_budget():
    req, index = _request()
    backend, calls = _http_backend([BackendUnavailable("down")], max_retries=0)
    with pytest.raises(BackendUnavailable):
        backend.summarize_request(req, index)
    assert len(calls) == 1

    garbage = {"choices": [{"message": {"content": "not json"}}]}
    backend, calls = _http_backend([garbage], max_retries=2)
    with pytest.raises(InvalidResponse):
        backend.summarize_request(req, index)
    assert len(calls) == 3  # identical prompt retried


def test_http_backend_recovers_sinks_from_summary_text():
    req, index = _request()
    reply = _chat_reply(
        {
            "Summary": "Logged via Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I.",
            "Next Methods": [],
        }
    )
    backend, _ = _http_backend([reply])
    result = backend.summarize_request(req, index)
    assert result.leak_here is True
    assert [s.category for s in result.sinks] == ["Logging"]
