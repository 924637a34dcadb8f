"""The built-in suite: schema validity, runtime budget, matrix shape."""

import time

import pytest
import yaml
from importlib import resources

from chargesec.config import validate_config_dict
from chargesec.errors import ConfigError
from chargesec.runner import run_scenario
from chargesec.scenarios import (
    ATTACKS, LINK_PROFILES, MECHANISMS, PROTECTIONS, builtin_description,
    builtin_names, load_builtin, matrix_row, matrix_row_name, matrix_rows,
    matrix_size, resolve,
)

EXPECTED_BUILTINS = [
    "baseline_secure", "card_cloning", "firmware_swap", "format_conversion",
    "gdpr_redaction", "gdpr_wms_breaks", "insider_tariff_filter",
    "legacy_plaintext", "nfc_phone_tamper", "nfc_voucher",
    "offline_cert_auth", "offline_online_auth", "offline_stale_whitelist",
    "offline_whitelist", "roaming_cdr_tamper", "smart_charging_congestion",
    "smart_charging_protected", "split_trust", "token_bootstrap",
    "token_rotation",
]


def test_builtin_inventory():
    assert builtin_names() == EXPECTED_BUILTINS


@pytest.mark.parametrize("name", EXPECTED_BUILTINS)
def test_builtin_is_schema_valid(name):
    raw = yaml.safe_load(
        (resources.files("chargesec") / "scenarios" / f"{name}.yaml")
        .read_text())
    assert validate_config_dict(raw) is raw
    assert raw["name"] == name


@pytest.mark.parametrize("name", EXPECTED_BUILTINS)
def test_builtin_runs_inside_a_second(name):
    cfg = load_builtin(name)
    start = time.perf_counter()
    res = run_scenario(cfg)
    assert time.perf_counter() - start < 1.0
    assert res.trace.events[-1]["kind"] == "run_end"


def test_builtin_descriptions_present():
    for name in EXPECTED_BUILTINS:
        assert builtin_description(name).strip()


def test_load_builtin_unknown():
    with pytest.raises(ConfigError):
        load_builtin("no_such_scenario")


# ---------------------------------------------------------------------------
# the configuration matrix


def test_matrix_covers_every_combination_once():
    rows = list(matrix_rows())
    assert len(rows) == matrix_size() == (
        len(LINK_PROFILES) * len(MECHANISMS) * len(PROTECTIONS) * len(ATTACKS))
    names = [cfg.name for cfg in rows]
    assert len(set(names)) == len(names)
    wanted = {matrix_row_name(p, m, pr, atk)
              for p in LINK_PROFILES for m in MECHANISMS
              for pr in PROTECTIONS for atk in ATTACKS}
    assert set(names) == wanted


def test_matrix_order_is_stable():
    assert [c.name for c in matrix_rows()] == [c.name for c in matrix_rows()]


def test_matrix_row_rejects_unknown_labels():
    with pytest.raises(ConfigError):
        matrix_row("wired", "uid", "sd", "none")
    with pytest.raises(ConfigError):
        matrix_row("tls-token", "password", "sd", "none")
    with pytest.raises(ConfigError):
        matrix_row("tls-token", "uid", "paranoid", "none")
    with pytest.raises(ConfigError):
        matrix_row("tls-token", "uid", "sd", "alien")


def test_matrix_row_matches_its_name():
    cfg = matrix_row("mutual-cert", "asymmetric_cr", "sd", "network")
    assert cfg.name == "mx-mutual-cert-asymmetric_cr-sd-network"
    assert cfg.seed == 7
    modes = {l.mode.value for l in cfg.links}
    assert modes == {"mutual_auth"}


# ---------------------------------------------------------------------------
# resolution


def test_resolve_builtin_name():
    assert resolve("baseline_secure").name == "baseline_secure"


def test_resolve_matrix_name():
    cfg = resolve("mx-tls-token-uid-sd-none")
    assert cfg.name == "mx-tls-token-uid-sd-none"


def test_resolve_path(tmp_path):
    raw = (resources.files("chargesec") / "scenarios"
           / "offline_whitelist.yaml").read_text()
    path = tmp_path / "mine.yaml"
    path.write_text(raw.replace("name: offline_whitelist", "name: mine"))
    assert resolve(str(path)).name == "mine"


def test_resolve_unknown():
    with pytest.raises(ConfigError):
        resolve("definitely_not_a_scenario")
