from pathlib import Path

import pytest

from splitpon.config import (ConfigError, ScenarioConfig, parse_config,
                             parse_config_text, parse_override, parse_quantity)

ROOT = Path(__file__).resolve().parents[1]


def test_rate_and_time_units():
    assert parse_config_text("assured = 150Mbps").assured == 150e6
    assert parse_config_text("sigma = 0.66ms").sigma == pytest.approx(660e-6)
    assert parse_quantity("10km", "length") == 10.0
    assert parse_quantity("1MB", "size") == 1_000_000
    assert parse_quantity("8.5Gb/s", "rate") == 8.5e9


def test_decimal_units_are_exact():
    assert parse_quantity("200us", "time") == 200e-6
    assert parse_quantity("0.1ms", "time") == 0.1e-3


def test_negative_assured_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("assured = -5Mbps")
    assert exc.value.diagnostics[0][0] == 1
    assert "assured" in exc.value.diagnostics[0][1]


def test_all_problems_reported_with_lines():
    text = "\n".join([
        "# comment",
        "assured = 150",          # missing unit
        "bogus = 3",              # unknown key
        "cycle = 125parsecs",     # bad unit
        "seed = x",               # not an integer
        "fig3_rates = 20Mbps,,40Mbps",
    ])
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    lines = [n for n, _ in exc.value.diagnostics]
    assert lines == [2, 3, 4, 5, 6]
    assert "missing a rate unit" in exc.value.diagnostics[0][1]


def test_invariant_violation_names_line():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("upstream_capacity = 8.64Gbps\nassured = 5Gbps\n")
    assert any(n == 2 for n, _ in exc.value.diagnostics)


def test_duplicate_key():
    with pytest.raises(ConfigError):
        parse_config_text("seed = 1\nseed = 2\n")


def test_shipped_config_matches_builtin_defaults():
    cfg = parse_config(ROOT / "configs" / "default.conf")
    assert cfg == ScenarioConfig()
    assert cfg.hash() == ScenarioConfig().hash()


def test_hash_changes_with_values():
    assert ScenarioConfig().hash() != ScenarioConfig(seed=2).hash()


def test_override_parsing():
    assert parse_override("deadline=1ms") == ("deadline", 1e-3)
    with pytest.raises(ConfigError):
        parse_override("nokey=1")
    with pytest.raises(ConfigError):
        ScenarioConfig().with_overrides(assured=-1.0)


def test_lists():
    cfg = parse_config_text("fig3_sigmas = 0ms, 0.1ms\nfig4_rates = 100Mbps")
    assert cfg.fig3_sigmas == (0.0, 0.1e-3) and cfg.fig4_rates == (100e6,)


def test_overload_values_both_expressible():
    assert parse_config_text("fig4_overload = 8Gbps").fig4_overload == 8e9
    assert ScenarioConfig().fig4_overload == 8.5e9
