"""Scenario file loading and validation.

Scenario files are YAML (JSON being valid YAML works too). Validation
happens against a JSON schema before any object construction so typos
in key names fail loudly with a path instead of silently defaulting.
"""

from __future__ import annotations

from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigError
from .model import ScenarioConfig

_ID = {"type": "string", "minLength": 1}

# Amounts travel as strings or ints; floats are rejected later by
# as_amount because binary floats and money do not mix.
_AMOUNT = {"type": ["string", "integer"]}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "actors"],
    "properties": {
        "name": _ID,
        "seed": {"type": "integer"},
        "description": {"type": "string"},
        "actors": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["actor_id", "role"],
                "properties": {
                    "actor_id": _ID,
                    "role": {"enum": ["ev", "charge_point", "cpo", "emsp",
                                      "clearing_house", "dso", "cpio"]},
                    "online": {"type": "boolean"},
                    "anchor": {"type": ["string", "null"]},
                },
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["link_id", "a", "b", "mode"],
                "properties": {
                    "link_id": _ID,
                    "a": _ID,
                    "b": _ID,
                    "mode": {"enum": ["plain", "server_auth", "mutual_auth"]},
                    "client_auth": {"enum": ["none", "static_token",
                                             "client_certificate"]},
                    "cipher_suite": {"type": ["string", "null"]},
                    "trusted_anchor": {"type": ["string", "null"]},
                },
            },
        },
        "credentials": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["credential_id", "kind", "holder"],
                "properties": {
                    "credential_id": _ID,
                    "kind": {"enum": ["uid", "symmetric", "certificate",
                                      "online_token"]},
                    "holder": _ID,
                    "uid": {"type": ["string", "null"]},
                },
            },
        },
        "contracts": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["contract_id", "emsp", "credential"],
                "properties": {
                    "contract_id": _ID,
                    "emsp": _ID,
                    "credential": _ID,
                    "valid": {"type": "boolean"},
                },
            },
        },
        "uid_whitelists": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _ID},
        },
        "anchors": {"type": "array", "items": _ID, "minItems": 1},
        "split_pki": {"type": "boolean"},
        "attackers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["attacker_id", "kind", "target"],
                "properties": {
                    "attacker_id": _ID,
                    "kind": {"enum": ["physical", "endpoint", "network"]},
                    "target": _ID,
                    "script": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["action"],
                            "properties": {"action": _ID},
                        },
                    },
                },
            },
        },
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["flow"],
                "properties": {
                    "flow": {"enum": [
                        "authorize", "tariff", "cdr", "meter_reading",
                        "smart_charging", "firmware", "nfc_session",
                        "format_convert", "falsify_stored", "redact_stored",
                        "rotate_token", "attacker_probe",
                    ]},
                },
            },
        },
        "protection": {"enum": ["no_protection", "whole_message_signature",
                                "selective_disclosure"]},
        "confidential": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["fields", "recipients"],
                "properties": {
                    "fields": {"type": "array", "items": _ID},
                    "recipients": {"type": "array", "items": _ID},
                },
            },
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "second_cipher_suite": {"type": ["string", "null"]},
                "secure_bootstrap": {"type": "boolean"},
                "offline_minimum_charge": {"type": "boolean"},
                "min_kw_per_point": _AMOUNT,
            },
        },
    },
}


def validate_config_dict(data: dict) -> dict:
    """Schema-check a raw scenario dict; returns it unchanged on success."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping at top level")
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"scenario config invalid at {where}: {first.message}")
    return data


def config_from_dict(data: dict) -> ScenarioConfig:
    validate_config_dict(data)
    data = dict(data)
    data.pop("description", None)
    return ScenarioConfig.from_dict(data)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no such scenario file: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: bad YAML: {exc}") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty scenario file")
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
