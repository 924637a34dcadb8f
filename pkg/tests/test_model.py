"""Amount arithmetic, config parsing, topology wiring and payloads."""

from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from chargesec.errors import ConfigError
from chargesec.model import (
    AuthDecision,
    CapacityForecast,
    ChargeDetailRecord,
    ChargeProfile,
    ForecastSlot,
    LinkMode,
    ProfileSlot,
    Role,
    ScenarioConfig,
    TariffEntry,
    TariffTable,
    as_amount,
    build_topology,
    canonical_value,
    lookup_contract,
    payload_from_fields,
)


# --- amounts ----------------------------------------------------------------

def test_as_amount_parses_strings_and_ints():
    assert as_amount("10") == Decimal("10.000")
    assert as_amount(3) == Decimal("3.000")
    assert as_amount("0.305") == Decimal("0.305")


def test_as_amount_truncates_not_rounds():
    assert as_amount("0.3059") == Decimal("0.305")
    assert as_amount("0.9999") == Decimal("0.999")


def test_as_amount_rejects_floats_and_garbage():
    with pytest.raises(ConfigError):
        as_amount(0.3)
    with pytest.raises(ConfigError):
        as_amount("three")


@given(st.integers(min_value=0, max_value=10**6))
def test_as_amount_int_exactness(n):
    assert as_amount(n) == Decimal(n).quantize(Decimal("0.001"))


def test_canonical_value_forms():
    assert canonical_value(Decimal("1.5")) == "1.500"
    assert canonical_value(True) == "true"
    assert canonical_value(False) == "false"
    assert canonical_value({"b": 1, "a": 2}) == '{"a":2,"b":1}'
    assert canonical_value("plain") == "plain"


# --- config round-trip ------------------------------------------------------

def _minimal_dict(**over):
    d = {
        "name": "t",
        "seed": 5,
        "actors": [
            {"actor_id": "ev1", "role": "ev"},
            {"actor_id": "cp1", "role": "charge_point"},
            {"actor_id": "cpo1", "role": "cpo"},
            {"actor_id": "emsp1", "role": "emsp"},
        ],
        "links": [{"link_id": "l1", "a": "cp1", "b": "cpo1",
                   "mode": "mutual_auth", "client_auth": "client_certificate"}],
        "credentials": [{"credential_id": "card1", "kind": "uid", "holder": "ev1"}],
        "contracts": [{"contract_id": "c1", "emsp": "emsp1", "credential": "card1"}],
        "protection": "selective_disclosure",
        "steps": [],
    }
    d.update(over)
    return d


def test_config_dict_roundtrip():
    cfg = ScenarioConfig.from_dict(_minimal_dict())
    again = ScenarioConfig.from_dict(cfg.as_dict())
    assert again == cfg
    assert cfg.seed == 5
    assert cfg.actors[0].role == Role.EV
    assert cfg.links[0].mode == LinkMode.MUTUAL_AUTH


def test_config_rejects_unknown_role():
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict(_minimal_dict(
            actors=[{"actor_id": "x", "role": "wizard"}]))


# --- topology ---------------------------------------------------------------

def test_build_topology_wires_keys_and_certs():
    topo = build_topology(ScenarioConfig.from_dict(_minimal_dict()))
    for actor_id in ("ev1", "cp1", "cpo1", "emsp1"):
        actor = topo.actor(actor_id)
        assert topo.keys.get(actor.sig_key_id) is not None
        assert actor.cert_id and topo.certs.get(actor.cert_id) is not None
    # every credential carries a readable serial
    assert topo.credentials["card1"].uid


def test_build_topology_duplicate_actor():
    bad = _minimal_dict()
    bad["actors"].append({"actor_id": "ev1", "role": "ev"})
    with pytest.raises(ConfigError):
        build_topology(ScenarioConfig.from_dict(bad))


def test_build_topology_dangling_link():
    bad = _minimal_dict(links=[{"link_id": "l1", "a": "cp1", "b": "ghost",
                                "mode": "plain"}])
    with pytest.raises(ConfigError):
        build_topology(ScenarioConfig.from_dict(bad))


def test_symmetric_credential_gets_derived_key():
    d = _minimal_dict(
        credentials=[{"credential_id": "card1", "kind": "symmetric",
                      "holder": "ev1"}])
    topo = build_topology(ScenarioConfig.from_dict(d))
    cred = topo.credentials["card1"]
    info = topo.keys.get(cred.key_id)
    assert info.derived_from == (topo.master_key_id, cred.uid)


def test_certificate_credential_requires_contract():
    d = _minimal_dict(
        credentials=[{"credential_id": "card1", "kind": "certificate",
                      "holder": "ev1"}],
        contracts=[])
    with pytest.raises(ConfigError):
        build_topology(ScenarioConfig.from_dict(d))


def test_certificate_credential_chains_to_emsp_ca():
    from chargesec.crypto import verify_chain
    d = _minimal_dict(
        credentials=[{"credential_id": "card1", "kind": "certificate",
                      "holder": "ev1"}])
    topo = build_topology(ScenarioConfig.from_dict(d))
    cert = topo.certs.get(topo.credentials["card1"].cert_id)
    assert cert is not None and verify_chain(cert, topo.certs)


def test_whitelist_resolves_credential_ids_to_uids():
    d = _minimal_dict(uid_whitelists={"cpo1": ["card1", "raw-uid-55"]})
    topo = build_topology(ScenarioConfig.from_dict(d))
    resolved = topo.whitelist("cpo1")
    assert topo.credentials["card1"].uid in resolved
    assert "raw-uid-55" in resolved
    assert topo.whitelist("nobody") == set()


def test_seed_override_changes_names_not_structure():
    cfg = ScenarioConfig.from_dict(_minimal_dict())
    t1 = build_topology(cfg)
    t2 = build_topology(cfg, seed=cfg.seed)
    assert t1.credentials["card1"].uid == t2.credentials["card1"].uid
    t3 = build_topology(cfg, seed=999)
    assert t3.credentials["card1"].uid != t1.credentials["card1"].uid
    assert set(t3.actors) == set(t1.actors)


def test_lookup_contract_ignores_invalid():
    d = _minimal_dict(contracts=[
        {"contract_id": "c1", "emsp": "emsp1", "credential": "card1",
         "valid": False}])
    topo = build_topology(ScenarioConfig.from_dict(d))
    assert lookup_contract(topo, {"kind": "online", "credential": "card1"}) is None
    d["contracts"][0]["valid"] = True
    topo2 = build_topology(ScenarioConfig.from_dict(d))
    found = lookup_contract(topo2, {"kind": "online", "credential": "card1"})
    assert found is not None and found.contract_id == "c1"


def test_lookup_contract_by_uid():
    topo = build_topology(ScenarioConfig.from_dict(_minimal_dict()))
    uid = topo.credentials["card1"].uid
    found = lookup_contract(topo, {"kind": "uid", "uid": uid})
    assert found is not None and found.credential_id == "card1"
    assert lookup_contract(topo, {"kind": "uid", "uid": "nonsense"}) is None


def test_lookup_contract_ambiguity_is_loud():
    from chargesec.errors import AmbiguousContract
    d = _minimal_dict(contracts=[
        {"contract_id": "c1", "emsp": "emsp1", "credential": "card1"},
        {"contract_id": "c2", "emsp": "emsp1", "credential": "card1"}])
    topo = build_topology(ScenarioConfig.from_dict(d))
    with pytest.raises(AmbiguousContract):
        lookup_contract(topo, {"kind": "online", "credential": "card1"})


# --- payloads ---------------------------------------------------------------

def test_tariff_table_fields_roundtrip():
    table = TariffTable("emsp1", (
        TariffEntry(0, 15, as_amount("0.30"), as_amount("11")),
        TariffEntry(15, 30, as_amount("0.25"), as_amount("11")),
    ))
    table.validate()
    fields = dict(table.fields())
    rebuilt = payload_from_fields("tariff_table", fields)
    assert rebuilt == table


def test_tariff_table_rejects_bad_entries():
    with pytest.raises(ConfigError):
        TariffTable("e", ()).validate()
    with pytest.raises(ConfigError):
        TariffTable("e", (TariffEntry(10, 10, as_amount("1"), as_amount("1")),)
                    ).validate()
    with pytest.raises(ConfigError):
        TariffTable("e", (TariffEntry(0, 15, as_amount("-1"), as_amount("1")),)
                    ).validate()


def test_numbered_fields_survive_filtering():
    """An attacker may drop entry0; the survivor must still parse."""
    table = TariffTable("emsp1", (
        TariffEntry(0, 15, as_amount("0.30"), as_amount("11")),
        TariffEntry(15, 30, as_amount("0.40"), as_amount("22")),
    ))
    fields = dict(table.fields())
    del fields["entry0"]
    rebuilt = payload_from_fields("tariff_table", fields)
    assert len(rebuilt.entries) == 1
    assert rebuilt.entries[0].price_per_kwh == Decimal("0.400")


def test_cdr_roundtrip_and_validation():
    cdr = ChargeDetailRecord("s1", "c1", "garage", 0, 45,
                             as_amount("10"), as_amount("3.05"))
    cdr.validate()
    assert payload_from_fields("cdr", dict(cdr.fields())) == cdr
    with pytest.raises(ConfigError):
        ChargeDetailRecord("s", "c", "", 10, 5, as_amount("1"),
                           as_amount("1")).validate()


def test_forecast_and_profile_slot_alignment():
    CapacityForecast("a", (ForecastSlot(0, as_amount("30"), as_amount("5")),
                           ForecastSlot(15, as_amount("30"), as_amount("5")),
                           )).validate()
    with pytest.raises(ConfigError):
        CapacityForecast("a", (ForecastSlot(7, as_amount("30"),
                                            as_amount("5")),)).validate()
    with pytest.raises(ConfigError):
        ChargeProfile("cp", (ProfileSlot(0, as_amount("-2")),)).validate()


def test_payload_from_fields_missing_field():
    with pytest.raises(ConfigError):
        payload_from_fields("cdr", {"cdr_id": "x"})
    with pytest.raises(ConfigError):
        payload_from_fields("no_such_type", {})


def test_auth_decision_fields():
    d = AuthDecision(True, "ok", "card1", "c1")
    fields = dict(d.fields())
    assert fields["granted"] == "true"
    rebuilt = payload_from_fields("auth_response", fields)
    assert rebuilt.granted is True and rebuilt.contract == "c1"
    denied = payload_from_fields("auth_response",
                                 dict(AuthDecision(False, "no").fields()))
    assert denied.granted is False
