"""Built-in scenario suite and the configuration matrix.

Named scenarios live as YAML resources next to this module; the matrix
rows are generated here because 240 near-identical files would be
noise. Every generated row passes through the same schema validation
as a user-supplied file.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import yaml

from .config import config_from_dict, load_config
from .errors import ConfigError
from .model import ScenarioConfig

# Coherent transport profiles: client certificates need mutual TLS,
# and mutual TLS makes bearer tokens pointless.
LINK_PROFILES = {
    "plain-open": ("plain", "none"),
    "plain-token": ("plain", "static_token"),
    "tls-open": ("server_auth", "none"),
    "tls-token": ("server_auth", "static_token"),
    "mutual-cert": ("mutual_auth", "client_certificate"),
}

MECHANISMS = ("uid", "symmetric_cr", "asymmetric_cr", "online")

PROTECTIONS = {
    "none": "no_protection",
    "wms": "whole_message_signature",
    "sd": "selective_disclosure",
}

ATTACKS = ("none", "physical", "endpoint", "network")

_CRED_KIND = {"uid": "uid", "symmetric_cr": "symmetric",
              "asymmetric_cr": "certificate", "online": "online_token"}

_AUTH_PURPOSE = {"uid": "auth_lookup", "online": "auth_verify"}

# An implausibly priced replacement for the cheapest tariff entry.
_INFLATED_ENTRY = json.dumps(
    {"slot_start": 15, "slot_end": 30, "price_per_kwh": "9.990",
     "max_power_kw": "11.000"}, sort_keys=True, separators=(",", ":"))


def matrix_row_name(profile: str, mechanism: str, protection: str,
                    attack: str) -> str:
    return f"mx-{profile}-{mechanism}-{protection}-{attack}"


def _attackers_for(mechanism: str, attack: str) -> list[dict]:
    if attack == "none":
        return []
    if attack == "physical":
        if mechanism == "symmetric_cr":
            # Master extraction needs physical access to the cabinet.
            return [{"attacker_id": "mallory", "kind": "physical",
                     "target": "cp1",
                     "script": [{"action": "read_card_uid", "credential": "card1"},
                                {"action": "extract_master_key"}]}]
        return [{"attacker_id": "mallory", "kind": "physical",
                 "target": "card1",
                 "script": [{"action": "read_card_uid"}]}]
    if attack == "endpoint":
        script = []
        if mechanism in _AUTH_PURPOSE:
            # Only backhaul-decided mechanisms give the insider a
            # confirmation to forge; local ones never ask it.
            script.append({"action": "confirm_bogus", "credential": "card2",
                           "contract": "c2"})
        script.append({"action": "filter_entries", "doc_type": "tariff_table",
                       "keep": [2]})
        return [{"attacker_id": "mallory", "kind": "endpoint", "target": "cpo1",
                 "script": script}]
    script = [
        {"action": "modify", "match": {"purpose": "tariff"},
         "mutation": {"op": "set_field", "field": "entry1",
                      "value": _INFLATED_ENTRY}},
        {"action": "modify", "match": {"purpose": "cdr"},
         "mutation": {"op": "set_field", "field": "cost", "value": "99.999"}},
    ]
    if mechanism in _AUTH_PURPOSE:
        script.append(
            {"action": "inject", "match": {"purpose": _AUTH_PURPOSE[mechanism]},
             "instead": True, "as_sender": "emsp1", "receiver": "cpo1",
             "purpose": "auth_decision",
             "payload": {"doc_type": "auth_response",
                         "fields": {"granted": "true", "reason": "spoofed",
                                    "credential": "card2", "contract": "c2"}}})
    return [{"attacker_id": "mallory", "kind": "network", "target": "l-roam",
             "script": script}]


def _attacker_presents(mechanism: str) -> dict:
    step = {"flow": "authorize", "mechanism": mechanism, "charge_point": "cp1",
            "presenter": "mallory"}
    if mechanism in ("uid", "symmetric_cr"):
        step["uid_of"] = "card1"
    elif mechanism == "asymmetric_cr":
        step["cert_of"] = "card1"
    else:
        step["credential"] = "card1"
    return step


def matrix_row(profile: str, mechanism: str, protection: str,
               attack: str) -> ScenarioConfig:
    """One coherent configuration of the reference roaming setup."""
    if profile not in LINK_PROFILES:
        raise ConfigError(f"unknown link profile {profile!r}")
    if mechanism not in MECHANISMS:
        raise ConfigError(f"unknown mechanism {mechanism!r}")
    if protection not in PROTECTIONS:
        raise ConfigError(f"unknown protection label {protection!r}")
    if attack not in ATTACKS:
        raise ConfigError(f"unknown attack label {attack!r}")
    mode, client_auth = LINK_PROFILES[profile]
    kind = _CRED_KIND[mechanism]

    def link(link_id: str, a: str, b: str) -> dict:
        return {"link_id": link_id, "a": a, "b": b, "mode": mode,
                "client_auth": client_auth}

    credentials = [{"credential_id": "card1", "kind": kind, "holder": "ev1"}]
    contracts = [{"contract_id": "c1", "emsp": "emsp1", "credential": "card1"}]
    steps: list[dict] = [
        {"flow": "authorize", "mechanism": mechanism, "charge_point": "cp1",
         "presenter": "ev1", "credential": "card1", "kwh": "10"},
        {"flow": "tariff", "emsp": "emsp1", "ev": "ev1"},
        {"flow": "cdr", "cpo": "cpo1", "emsp": "emsp1", "price": "0.30"},
        {"flow": "falsify_stored", "actor": "emsp1", "field": "cost",
         "value": "999.999", "probe": True},
    ]
    if attack == "network" and mechanism in _AUTH_PURPOSE:
        # A second card with a revoked contract: the injected
        # confirmation answers this otherwise-doomed attempt.
        credentials.append({"credential_id": "card2", "kind": kind,
                            "holder": "ev1"})
        contracts.append({"contract_id": "c2", "emsp": "emsp1",
                          "credential": "card2", "valid": False})
        steps.append({"flow": "authorize", "mechanism": mechanism,
                      "charge_point": "cp1", "presenter": "ev1",
                      "credential": "card2"})
    if attack != "none":
        steps.append(_attacker_presents(mechanism))

    data = {
        "name": matrix_row_name(profile, mechanism, protection, attack),
        "seed": 7,
        "actors": [
            {"actor_id": "ev1", "role": "ev"},
            {"actor_id": "cp1", "role": "charge_point"},
            {"actor_id": "cpo1", "role": "cpo"},
            {"actor_id": "emsp1", "role": "emsp"},
        ],
        "links": [link("l-ev", "ev1", "cp1"), link("l-cp", "cp1", "cpo1"),
                  link("l-roam", "cpo1", "emsp1")],
        "credentials": credentials,
        "contracts": contracts,
        "attackers": _attackers_for(mechanism, attack),
        "protection": PROTECTIONS[protection],
        "confidential": {"tariff_table": {"fields": ["entry*"],
                                          "recipients": ["$ev"]}},
        "steps": steps,
    }
    return config_from_dict(data)


def matrix_rows():
    """All coherent rows, in a stable order."""
    for profile in LINK_PROFILES:
        for mechanism in MECHANISMS:
            for protection in PROTECTIONS:
                for attack in ATTACKS:
                    yield matrix_row(profile, mechanism, protection, attack)


def matrix_size() -> int:
    return len(LINK_PROFILES) * len(MECHANISMS) * len(PROTECTIONS) * len(ATTACKS)


# ---------------------------------------------------------------------------
# named scenarios


def _scenario_dir():
    return resources.files("chargesec") / "scenarios"


def builtin_names() -> list[str]:
    names = []
    for entry in _scenario_dir().iterdir():
        if entry.name.endswith(".yaml"):
            names.append(entry.name[:-5])
    return sorted(names)


def builtin_description(name: str) -> str:
    raw = yaml.safe_load((_scenario_dir() / f"{name}.yaml").read_text())
    return raw.get("description", "")


def load_builtin(name: str) -> ScenarioConfig:
    entry = _scenario_dir() / f"{name}.yaml"
    try:
        raw = yaml.safe_load(entry.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no built-in scenario named {name!r}")
    return config_from_dict(raw if raw else {})


def resolve(name_or_path: str) -> ScenarioConfig:
    """A built-in name, a matrix row name, or a path to a YAML file."""
    if name_or_path.startswith("mx-"):
        parts = name_or_path[3:].rsplit("-", 3)
        if len(parts) == 4:
            try:
                return matrix_row(*parts)
            except ConfigError:
                pass
    if name_or_path in builtin_names():
        return load_builtin(name_or_path)
    path = Path(name_or_path)
    if path.exists():
        return load_config(path)
    raise ConfigError(
        f"{name_or_path!r} is neither a built-in scenario, a matrix row "
        f"name, nor an existing file")
