"""Hand-traced checks of the deterministic taint summarizer."""

import pytest

from bytetrace.sinkrules import SinkRule, default_sink_rules
from bytetrace.smali import build_index, parse_smali_file
from bytetrace.sources import SensitiveApi
from bytetrace.summarize import DropLog, SummaryRequest
from bytetrace.taint import TaintBackend, pretainted_params, taint_summarize

from conftest import load_corpus_index

LOCATION_MANAGER = SensitiveApi(
    "Landroid/location/LocationManager;", "getLastKnownLocation", "Location"
)
TELEPHONY_ID = SensitiveApi("Landroid/telephony/TelephonyManager;", "getDeviceId", "Device Identifier")
LATITUDE = SensitiveApi("Landroid/location/Location;", "getLatitude", "Location")


def _summarize(case_id, method, api, previous="", **kwargs):
    index = load_corpus_index(case_id)
    req = SummaryRequest(
        method=index.get(method),
        previous_summary=previous,
        target_data_type=api.data_type,
        root_api=api,
    )
    return taint_summarize(index.get(method), req, index=index, **kwargs)


def test_root_method_passes_tainted_value_on():
    result = _summarize(
        "log_leak", "Lcom/fix/leaklog/Main;->fetch:(Landroid/location/LocationManager;)V", LOCATION_MANAGER
    )
    assert [r.render() for r in result.next_methods] == [
        "Lcom/fix/leaklog/Main;->relay:(Landroid/location/Location;)V"
    ]
    assert result.sinks == []
    assert result.leak_here is False
    # relay receives the value in p1 (second invoke register).
    assert result.summary.endswith("TAINTED-PARAMS:[p1]")
    assert "obtained via Landroid/location/LocationManager;->getLastKnownLocation" in result.summary


def test_pretainted_parameter_flows_to_next_method():
    result = _summarize(
        "log_leak",
        "Lcom/fix/leaklog/Main;->relay:(Landroid/location/Location;)V",
        LOCATION_MANAGER,
        previous="... TAINTED-PARAMS:[p1]",
    )
    assert [r.render() for r in result.next_methods] == [
        "Lcom/fix/leaklog/Format;->stamp:(Landroid/location/Location;)V"
    ]
    assert result.summary.endswith("TAINTED-PARAMS:[p0]")


def test_sink_method_reports_finding_and_no_next():
    result = _summarize(
        "log_leak",
        "Lcom/fix/leaklog/Format;->stamp:(Landroid/location/Location;)V",
        LOCATION_MANAGER,
        previous="TAINTED-PARAMS:[p0]",
    )
    assert result.leak_here is True
    assert result.next_methods == []
    (finding,) = result.sinks
    assert finding.sink_ref.render() == "Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I"
    assert finding.category == "Logging"
    assert finding.evidence == "invoke-static {v0, v1}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I"


def test_without_pretaint_the_sink_stays_silent():
    """Monotonicity: removing pre-taint can only remove findings."""
    result = _summarize(
        "log_leak",
        "Lcom/fix/leaklog/Format;->stamp:(Landroid/location/Location;)V",
        LOCATION_MANAGER,
        previous="",
    )
    assert result.sinks == []
    assert result.next_methods == []
    assert result.leak_here is False


def test_const_overwrite_untaints():
    result = _summarize(
        "clean_app", "Lcom/fix/clean/Widget;->peek:(Landroid/location/LocationManager;)V", LOCATION_MANAGER
    )
    assert result.next_methods == []
    assert result.sinks == []


def test_uncaptured_result_taints_nothing():
    api = SensitiveApi("Landroid/net/wifi/WifiInfo;", "getBSSID", "BSSID")
    result = _summarize("no_move_result", "Lcom/fix/nomove/Probe;->tap:(Landroid/net/wifi/WifiInfo;)V", api)
    assert result.next_methods == []
    assert result.sinks == []
    assert result.leak_here is False


def test_taint_survives_field_round_trip():
    result = _summarize(
        "field_flow", "Lcom/fix/field/Cache;->grab:(Landroid/telephony/TelephonyManager;)V", TELEPHONY_ID
    )
    assert result.leak_here is True
    assert "stored in field Lcom/fix/field/Cache;->stash:Ljava/lang/String;" in result.summary


def test_branches_do_not_stop_the_sweep():
    api = SensitiveApi("Landroid/net/wifi/WifiInfo;", "getMacAddress", "MAC Address")
    result = _summarize("branch_taint", "Lcom/fix/branch/Gate;->run:(Landroid/net/wifi/WifiInfo;)V", api)
    assert result.leak_here is True
    assert result.sinks[0].category == "Logging"


def test_wide_result_taints_base_register_only():
    text = """.class La/B;
.method public w(Landroid/location/Location;)V
    .locals 3
    invoke-virtual {p1}, Landroid/location/Location;->getLatitude()D
    move-result-wide v0
    const-string v2, "t"
    invoke-static {v2, v1}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I
    return-void
.end method
"""
    index = build_index(parse_smali_file("w.smali", text))
    method = index.get("La/B;->w:(Landroid/location/Location;)V")
    req = SummaryRequest(method=method, previous_summary="", target_data_type="Location", root_api=LATITUDE)
    result = taint_summarize(method, req, index=index)
    # v1 (the high half) is not tracked, so the log call sees no taint.
    assert result.sinks == []
    assert "stored in register v0" in result.summary


def test_tainted_call_result_propagates():
    """A call fed tainted arguments taints its captured result."""
    text = """.class La/B;
.method public c(Landroid/location/Location;)V
    .locals 2
    invoke-virtual {p1}, Landroid/location/Location;->getLatitude()D
    move-result-wide v0
    invoke-static {v0}, Ljava/lang/String;->valueOf(D)Ljava/lang/String;
    move-result-object v1
    invoke-static {v1, v1}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I
    return-void
.end method
"""
    index = build_index(parse_smali_file("c.smali", text))
    method = index.get("La/B;->c:(Landroid/location/Location;)V")
    req = SummaryRequest(method=method, previous_summary="", target_data_type="Location", root_api=LATITUDE)
    result = taint_summarize(method, req, index=index)
    assert result.leak_here is True


def test_no_sensitive_data_fallback_summary():
    result = _summarize("helper_pass", "La/pp/Helper;->send:(Ljava/lang/String;)V",
                        SensitiveApi("Landroid/telephony/TelephonyManager;", "getSimSerialNumber", "SIM Serial"))
    assert result.summary == (
        "Method does not originate, store, or pass sensitive user data. No sink detected."
    )
    assert result.next_methods == []


def test_unknown_callees_are_dropped_with_reason():
    drop_log = DropLog()
    index = load_corpus_index("wearable_send")
    method = index.get("Lcom/fix/wear/Nav;->launch:(Landroid/location/Location;Lcom/google/android/gms/common/api/GoogleApiClient;)V")
    req = SummaryRequest(method=method, previous_summary="", target_data_type="Location", root_api=LATITUDE)
    result = taint_summarize(method, req, index=index, drop_log=drop_log)
    # valueOf/getBytes are tainted calls into classes the app does not define.
    dropped = {d.entry for d in drop_log}
    assert "Ljava/lang/String;->valueOf:(D)Ljava/lang/String;" in dropped
    assert "Ljava/lang/String;->getBytes:()[B" in dropped
    assert all(d.reason == "not in method index" for d in drop_log)
    assert result.next_methods == []
    assert result.sinks[0].category == "Transmission"


def test_trailer_parsing_round_trip():
    assert pretainted_params("blah TAINTED-PARAMS:[p0,p2] blah") == {"p0", "p2"}
    assert pretainted_params("TAINTED-PARAMS:[]") == set()
    assert pretainted_params("no trailer here") == set()


def test_sink_leaf_rule_can_be_relaxed():
    index = load_corpus_index("factory_two_sinks")
    method = index.get("Lcom/fix/factory/Boot;->onCreate:(Landroid/location/LocationManager;)V")
    req = SummaryRequest(method=method, previous_summary="", target_data_type="Location", root_api=LOCATION_MANAGER)

    leaf = taint_summarize(method, req, index=index, sink_makes_leaf=True)
    assert leaf.leak_here and leaf.next_methods == []

    full = taint_summarize(method, req, index=index, sink_makes_leaf=False)
    assert full.leak_here
    assert [r.render() for r in full.next_methods] == [
        "Lcom/fix/factory/Net;->beam:(Landroid/location/Location;)V"
    ]


def test_backend_identity_tracks_rules_and_leaf_mode():
    default = TaintBackend()
    relaxed = TaintBackend(apply_sink_leaf_rule=False)
    custom = TaintBackend(rules=[SinkRule("Lx/", "Logging")])
    assert default.identity.startswith("taint:")
    assert default.identity.endswith(":leaf")
    assert relaxed.identity.endswith(":full")
    assert default.identity != custom.identity
    assert TaintBackend().identity == default.identity


def test_exact_signature_rule_beats_prefix_rule():
    rules = [
        SinkRule("Landroid/util/Log;->d:(Ljava/lang/String;Ljava/lang/String;)I", "Storage"),
        *default_sink_rules(),
    ]
    index = load_corpus_index("multi_root")
    method = index.get("Lcom/fix/multi/App;->ident:(Landroid/telephony/TelephonyManager;)V")
    req = SummaryRequest(method=method, previous_summary="", target_data_type="Device Identifier", root_api=TELEPHONY_ID)
    result = taint_summarize(method, req, rules=rules, index=index)
    assert result.sinks[0].category == "Storage"
