"""Requirement grading over traces.

Two independent oracles anchor this file: a closed-form rule table for
the whole configuration matrix, and a stored status snapshot for every
named scenario. Grading must agree with both, and re-verifying a
written trace must reproduce the in-memory report bit for bit.
"""

import json
from decimal import Decimal
from importlib import resources

import pytest

from chargesec.model import as_amount
from chargesec.runner import run_scenario
from chargesec.scenarios import (
    ATTACKS, LINK_PROFILES, MECHANISMS, PROTECTIONS, builtin_names,
    load_builtin, matrix_row, matrix_row_name,
)
from chargesec.trace import load_trace
from chargesec.verdict import (
    REQUIREMENTS, Status, check_all, redaction_gdpr_check,
)

H, C, V, NA = "holds", "conditionally_holds", "violated", "not_applicable"

# Mechanisms whose grant decision travels over the backhaul, so a
# compromised or spoofed backhaul can answer in the issuer's place.
RELAYED = {"uid", "online"}


def matrix_rules(profile: str, mechanism: str, protection: str,
                 attack: str) -> dict:
    """Closed-form expectations for a matrix row, written directly from
    the threat semantics rather than from simulator output."""
    plain = profile.startswith("plain")
    token = profile.endswith("token")
    mutual = profile == "mutual-cert"

    sr1a = V if (
        (attack == "network" and mechanism == "uid" and plain)
        or (attack == "endpoint" and mechanism == "uid")
        or (attack == "physical" and mechanism in ("uid", "symmetric_cr"))
    ) else H

    sr1b = V if (mechanism in RELAYED and (
        attack == "endpoint" or (attack == "network" and plain))) else H

    # Every matrix row runs with the backhaul up, so offline capability
    # is never exercised there.
    sr1c = NA

    sr2a = V if plain else H
    if mutual:
        sr2b = H
    elif token and not plain:
        sr2b = C  # bearer token, but TLS keeps it off the wire
    else:
        sr2b = V  # no client auth at all, or the token crosses in clear
    sr3 = V if plain else H

    sr4a = V if (protection == "none" and (
        attack == "endpoint" or (attack == "network" and plain))) else H
    sr4b = V if protection in ("none", "wms") else H

    if attack == "network" and plain and protection != "none":
        sr5 = NA  # the tampered record was rejected, nothing got stored
    else:
        sr5 = V if protection == "none" else H

    return {"SR1a": sr1a, "SR1b": sr1b, "SR1c": sr1c, "SR2a": sr2a,
            "SR2b": sr2b, "SR3": sr3, "SR4a": sr4a, "SR4b": sr4b, "SR5": sr5}


def _statuses(report) -> dict:
    return {r: report.findings[r].status.value for r in REQUIREMENTS}


def _frozen_matrix() -> dict:
    return json.loads((resources.files("chargesec") / "data"
                       / "expected_matrix.json").read_text())


def test_frozen_matrix_agrees_with_the_rule_oracle():
    frozen = _frozen_matrix()
    assert len(frozen) == 240
    for profile in LINK_PROFILES:
        for mechanism in MECHANISMS:
            for protection in PROTECTIONS:
                for attack in ATTACKS:
                    name = matrix_row_name(profile, mechanism, protection,
                                           attack)
                    want = matrix_rules(profile, mechanism, protection, attack)
                    assert frozen[name] == want, name


@pytest.mark.parametrize("profile", list(LINK_PROFILES))
@pytest.mark.parametrize("attack", ATTACKS)
def test_fresh_matrix_sample_matches_rules(profile, attack):
    # One mechanism per (profile, attack) cell keeps this quick; the
    # full 240-row sweep runs in the acceptance gate.
    mechanism = MECHANISMS[hash((profile, attack)) % len(MECHANISMS)]
    for protection in PROTECTIONS:
        cfg = matrix_row(profile, mechanism, protection, attack)
        got = _statuses(run_scenario(cfg).report)
        assert got == matrix_rules(profile, mechanism, protection, attack), \
            cfg.name


# ---------------------------------------------------------------------------
# named-scenario snapshot

EXPECTED_VERDICTS = {
    "baseline_secure": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": H,
                        "SR2b": H, "SR3": H, "SR4a": H, "SR4b": H, "SR5": H},
    "card_cloning": {"SR1a": V, "SR1b": H, "SR1c": NA, "SR2a": H,
                     "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA, "SR5": H},
    "firmware_swap": {"SR1a": NA, "SR1b": NA, "SR1c": NA, "SR2a": V,
                      "SR2b": V, "SR3": V, "SR4a": V, "SR4b": NA, "SR5": NA},
    "format_conversion": {"SR1a": NA, "SR1b": NA, "SR1c": NA, "SR2a": H,
                          "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                          "SR5": NA},
    "gdpr_redaction": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": H,
                       "SR2b": C, "SR3": H, "SR4a": H, "SR4b": H, "SR5": H},
    "gdpr_wms_breaks": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": H,
                        "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                        "SR5": NA},
    "insider_tariff_filter": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": H,
                              "SR2b": C, "SR3": H, "SR4a": H, "SR4b": H,
                              "SR5": H},
    "legacy_plaintext": {"SR1a": V, "SR1b": V, "SR1c": NA, "SR2a": V,
                         "SR2b": V, "SR3": V, "SR4a": V, "SR4b": V, "SR5": V},
    "nfc_phone_tamper": {"SR1a": H, "SR1b": NA, "SR1c": NA, "SR2a": H,
                         "SR2b": C, "SR3": H, "SR4a": NA, "SR4b": NA,
                         "SR5": NA},
    "nfc_voucher": {"SR1a": H, "SR1b": H, "SR1c": H, "SR2a": H,
                    "SR2b": C, "SR3": H, "SR4a": NA, "SR4b": NA, "SR5": NA},
    "offline_cert_auth": {"SR1a": H, "SR1b": H, "SR1c": H, "SR2a": H,
                          "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                          "SR5": H},
    "offline_online_auth": {"SR1a": H, "SR1b": NA, "SR1c": V, "SR2a": NA,
                            "SR2b": NA, "SR3": NA, "SR4a": NA, "SR4b": NA,
                            "SR5": NA},
    "offline_stale_whitelist": {"SR1a": H, "SR1b": V, "SR1c": H, "SR2a": H,
                                "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                                "SR5": NA},
    "offline_whitelist": {"SR1a": H, "SR1b": H, "SR1c": H, "SR2a": H,
                          "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                          "SR5": H},
    "roaming_cdr_tamper": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": V,
                           "SR2b": V, "SR3": V, "SR4a": H, "SR4b": H,
                           "SR5": NA},
    "smart_charging_congestion": {"SR1a": NA, "SR1b": NA, "SR1c": NA,
                                  "SR2a": V, "SR2b": V, "SR3": V, "SR4a": V,
                                  "SR4b": NA, "SR5": NA},
    "smart_charging_protected": {"SR1a": NA, "SR1b": NA, "SR1c": NA,
                                 "SR2a": V, "SR2b": V, "SR3": V, "SR4a": H,
                                 "SR4b": NA, "SR5": NA},
    "split_trust": {"SR1a": H, "SR1b": H, "SR1c": NA, "SR2a": NA,
                    "SR2b": NA, "SR3": NA, "SR4a": NA, "SR4b": NA, "SR5": NA},
    "token_bootstrap": {"SR1a": NA, "SR1b": NA, "SR1c": NA, "SR2a": H,
                        "SR2b": V, "SR3": H, "SR4a": H, "SR4b": NA, "SR5": H},
    "token_rotation": {"SR1a": NA, "SR1b": NA, "SR1c": NA, "SR2a": H,
                       "SR2b": C, "SR3": H, "SR4a": H, "SR4b": NA,
                       "SR5": NA},
}


def test_snapshot_covers_every_builtin():
    assert sorted(EXPECTED_VERDICTS) == builtin_names()


@pytest.mark.parametrize("name", sorted(EXPECTED_VERDICTS))
def test_named_scenario_verdicts(name):
    report = run_scenario(load_builtin(name)).report
    assert _statuses(report) == EXPECTED_VERDICTS[name]


# ---------------------------------------------------------------------------
# witnesses and evidence on individual findings


def _report(name):
    return run_scenario(load_builtin(name)).report


def test_cloning_violation_points_at_the_attacker_grant():
    res = run_scenario(load_builtin("card_cloning"))
    finding = res.report.findings["SR1a"]
    assert finding.status == Status.VIOLATED
    for idx in finding.witnesses:
        event = res.trace.events[idx]
        assert event["kind"] == "auth"
        assert event["attacker"] and event["granted"]


def test_filtered_tariff_detection_is_witnessed():
    res = run_scenario(load_builtin("insider_tariff_filter"))
    finding = res.report.findings["SR4a"]
    assert finding.status == Status.HOLDS
    assert finding.witnesses, "detection events expected"
    for idx in finding.witnesses:
        event = res.trace.events[idx]
        assert event["kind"] == "accepted" and event["verified"] is False


def test_rotation_downgrade_names_the_rotation():
    res = run_scenario(load_builtin("token_rotation"))
    finding = res.report.findings["SR2b"]
    assert finding.status == Status.CONDITIONAL
    assert any(res.trace.events[i]["kind"] == "token_rotate"
               for i in finding.witnesses)


def test_bootstrap_violation_names_the_token_abuse():
    res = run_scenario(load_builtin("token_bootstrap"))
    finding = res.report.findings["SR2b"]
    assert finding.status == Status.VIOLATED
    assert any("captured token" in line for line in finding.evidence)
    assert any(res.trace.events[i]["kind"] == "token_auth"
               and res.trace.events[i]["attacker"]
               for i in finding.witnesses)


def test_stale_whitelist_breaks_contract_binding():
    res = run_scenario(load_builtin("offline_stale_whitelist"))
    finding = res.report.findings["SR1b"]
    assert finding.status == Status.VIOLATED
    assert any(res.trace.events[i]["kind"] == "auth"
               for i in finding.witnesses)


# ---------------------------------------------------------------------------
# congestion and redaction reports


def _slot_sums(trace) -> list[tuple[dict, dict]]:
    """(ground truth per slot, allocated per slot) for each allocation,
    recomputed from raw events with no help from the verdict layer."""
    produced = {}
    for e in trace.events:
        if e["kind"] == "produced":
            produced[e["doc_id"]] = e
    out = []
    for e in trace.events:
        if e["kind"] != "allocation":
            continue
        orig = produced[e["forecast_doc"]]["fields"]
        truth = {}
        i = 0
        while f"slot{i}" in orig:
            slot = json.loads(orig[f"slot{i}"])
            truth[slot["slot_start"]] = as_amount(slot["allotted_kw"])
            i += 1
        allocated: dict[int, Decimal] = {}
        for fields in e["profiles"].values():
            i = 0
            while f"slot{i}" in fields:
                slot = json.loads(fields[f"slot{i}"])
                allocated[slot["slot_start"]] = (
                    allocated.get(slot["slot_start"], Decimal(0))
                    + as_amount(slot["limit_kw"]))
                i += 1
        out.append((truth, allocated))
    return out


def test_honest_allocation_fits_the_forecast():
    res = run_scenario(load_builtin("baseline_secure"))
    sums = _slot_sums(res.trace)
    assert sums, "baseline should allocate"
    for truth, allocated in sums:
        for slot, total in allocated.items():
            assert total <= truth[slot]
    assert res.report.congestion["ok"] is True
    assert all(not a["breaches"]
               for a in res.report.congestion["allocations"])


def test_inflated_forecast_breach_and_witness():
    res = run_scenario(load_builtin("smart_charging_congestion"))
    [(truth, allocated)] = _slot_sums(res.trace)
    assert allocated[0] > truth[0]  # the oracle sees the overshoot too
    congestion = res.report.congestion
    assert congestion["ok"] is False
    [alloc] = congestion["allocations"]
    [breach] = alloc["breaches"]
    assert breach["slot_start"] == 0
    assert as_amount(breach["allocated_kw"]) == allocated[0]
    assert breach["attack_witnesses"], "modification event expected"
    for idx in breach["attack_witnesses"]:
        assert res.trace.events[idx]["kind"] == "attack"


def test_protected_forecast_never_allocates():
    res = run_scenario(load_builtin("smart_charging_protected"))
    assert _slot_sums(res.trace) == []
    assert res.report.congestion == {"ok": True, "allocations": []}


def test_redaction_report_for_selective_disclosure():
    report = _report("gdpr_redaction")
    assert report.redaction["ok"] is True
    rows = report.redaction["redactions"]
    assert len(rows) == 2  # once in transit, once at rest
    assert {r["in_transit"] for r in rows} == {True, False}
    assert all(r["verifies_after"] for r in rows)


def test_redaction_report_for_whole_message():
    report = _report("gdpr_wms_breaks")
    [row] = report.redaction["redactions"]
    assert row["verifies_after"] is False
    # The broken verification is the expected property of the format,
    # not a tool failure.
    assert report.redaction["ok"] is True


# ---------------------------------------------------------------------------
# verify-trace equivalence and tamper behavior


@pytest.mark.parametrize("name", sorted(EXPECTED_VERDICTS))
def test_written_trace_reverifies_identically(name, tmp_path):
    path = tmp_path / f"{name}.jsonl"
    res = run_scenario(load_builtin(name), trace_path=path)
    reloaded = check_all(load_trace(path))
    assert reloaded.as_dict() == res.report.as_dict()


def test_every_payload_edit_is_caught(tmp_path):
    """Mutation testing over a stored trace: flip one payload field per
    mutant; each mutant must fail to load. Silent agreement would mean
    a doctored trace re-verifies."""
    from chargesec.errors import CorruptTrace

    path = tmp_path / "t.jsonl"
    run_scenario(load_builtin("card_cloning"), trace_path=path)
    lines = path.read_text().splitlines()
    mutants = 0
    for lineno in range(1, len(lines)):
        event = json.loads(lines[lineno])
        for key, value in event.items():
            if key in ("index", "kind"):
                continue
            mutated = dict(event)
            if isinstance(value, bool):
                mutated[key] = not value
            elif isinstance(value, str):
                mutated[key] = value + "x"
            elif isinstance(value, int):
                mutated[key] = value + 1
            else:
                mutated[key] = "edited"
            out = tmp_path / "mutant.jsonl"
            out.write_text("\n".join(
                lines[:lineno] + [json.dumps(mutated)] + lines[lineno + 1:]) + "\n")
            mutants += 1
            with pytest.raises(CorruptTrace):
                load_trace(out)
    assert mutants > 100


# --- stored-document redaction probe ---

def _stored_probe(name):
    res = run_scenario(load_builtin(name))
    return redaction_gdpr_check(res.world.stored, res.world.topology)


def test_stored_selective_documents_survive_location_removal():
    probe = _stored_probe("gdpr_redaction")
    assert probe["ok"] is True
    assert probe["documents"]
    for row in probe["documents"]:
        assert row["mode"] == "selective_disclosure"
        assert row["redactable"] is True
        assert row["vacuous"] is False


def test_stored_whole_message_documents_break_on_removal():
    probe = _stored_probe("gdpr_wms_breaks")
    assert probe["ok"] is False
    modes = {row["mode"] for row in probe["documents"]}
    assert modes == {"whole_message_signature"}
    assert all(row["redactable"] is False for row in probe["documents"])


def test_stored_unprotected_documents_are_flagged_vacuous():
    probe = _stored_probe("legacy_plaintext")
    assert probe["ok"] is False
    for row in probe["documents"]:
        assert row["mode"] == "no_protection"
        assert row["redactable"] is False
        assert row["vacuous"] is True


def test_probe_skips_documents_without_the_field():
    res = run_scenario(load_builtin("gdpr_redaction"))
    probe = redaction_gdpr_check(res.world.stored, res.world.topology,
                                 field="no_such_field")
    assert probe == {"ok": True, "documents": []}
