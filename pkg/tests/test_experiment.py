"""Config loading, CSV emission, and the weight-sweep harness."""

import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from wisched import ConfigError, emit_csv, load_spec, run_sweep
from wisched.experiment import SWEEP_COLUMNS, SWEEP_POLICIES, resolve_out

REPO_CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MICRO_TOML = """
[[system.monitors]]
count = 2
num_states = 5
self_prob = 0.7
weight = 1.0

[[system.traffics]]
duration = 2
weight = 1.0

[channels]
bandwidths = [1.0]

[channels.gains]
mode = "shared"
levels = [1.0, 3.0]

[training]
buffer_slots = 32
update_epochs = 1
hidden = [8]
episodes = 2
seed = 3
aoii_scale = 5.0

[whittle]
dc = 0.5
c_low = 0.5
c_high = 60.0
x_max = 40

[experiment]
eval_episodes = 2
eval_horizon = 64

[sweep]
multipliers = [0.0, 1.0]
"""


@pytest.fixture
def micro_path(tmp_path):
    p = tmp_path / "micro.toml"
    p.write_text(MICRO_TOML)
    return p


class TestLoadSpec:
    def test_shipped_configs_parse(self):
        for name in ("tiny.toml", "paper-scale.toml"):
            spec = load_spec(REPO_CONFIGS / name)
            assert spec.system.num_monitors >= 1
            assert spec.episodes >= 1

    def test_tiny_matches_acceptance_geometry(self):
        spec = load_spec(REPO_CONFIGS / "tiny.toml")
        assert spec.system.num_monitors == 6
        assert spec.system.num_traffics == 2
        assert spec.system.num_channels == 2
        assert tuple(spec.system.durations()) == (1, 3)
        assert spec.hyper.buffer_slots == 512
        assert spec.hyper.update_epochs == 10
        assert spec.episodes == 200
        assert spec.system.chains[0][0].num_levels == 3

    def test_counts_and_fields(self, micro_path):
        spec = load_spec(micro_path)
        assert spec.system.num_monitors == 2
        assert spec.system.monitors[0].self_prob == 0.7
        assert spec.system.num_traffics == 1
        assert spec.hyper.hidden == (8,)
        assert spec.seed == 3
        assert spec.search.dc == 0.5
        assert spec.x_max == 40
        assert spec.multipliers == (0.0, 1.0)

    def test_json_equivalent(self, tmp_path):
        raw = {
            "system": {
                "monitors": [{"count": 1, "num_states": 5, "self_prob": 0.7}],
                "traffics": [{"duration": 2}],
            },
            "channels": {"bandwidths": [1.0], "gains": {"mode": "shared", "levels": [1.0, 2.0]}},
        }
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(raw))
        spec = load_spec(p)
        assert spec.system.num_monitors == 1
        assert spec.system.chains[0][0].num_levels == 2

    def test_unknown_key_rejected_with_path(self, tmp_path):
        bad = MICRO_TOML.replace("aoii_scale = 5.0", "aoii_scael = 5.0")
        p = tmp_path / "bad.toml"
        p.write_text(bad)
        with pytest.raises(ConfigError, match="training.aoii_scael"):
            load_spec(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text(MICRO_TOML + "\n[extras]\nfoo = 1\n")
        with pytest.raises(ConfigError, match="extras"):
            load_spec(p)

    def test_unknown_gain_key_rejected(self, tmp_path):
        bad = MICRO_TOML.replace('mode = "shared"', 'mode = "shared"\nspam = 2')
        p = tmp_path / "bad.toml"
        p.write_text(bad)
        with pytest.raises(ConfigError, match="channels.gains.spam"):
            load_spec(p)

    def test_missing_bandwidths_rejected(self, tmp_path):
        bad = MICRO_TOML.replace("bandwidths = [1.0]", "snr = 1.0")
        p = tmp_path / "bad.toml"
        p.write_text(bad)
        with pytest.raises(ConfigError, match="bandwidths"):
            load_spec(p)

    def test_per_pair_mode(self, tmp_path):
        toml = MICRO_TOML.replace(
            'mode = "shared"\nlevels = [1.0, 3.0]',
            'mode = "per-pair"\nlevels_by_pair = [[1.0, 2.0]]',
        )
        p = tmp_path / "pp.toml"
        p.write_text(toml)
        spec = load_spec(p)
        assert spec.system.chains[0][0].num_levels == 2

    def test_per_pair_wrong_row_count(self, tmp_path):
        toml = MICRO_TOML.replace(
            'mode = "shared"\nlevels = [1.0, 3.0]',
            'mode = "per-pair"\nlevels_by_pair = [[1.0, 2.0], [2.0, 3.0]]',
        )
        p = tmp_path / "pp.toml"
        p.write_text(toml)
        with pytest.raises(ConfigError, match="levels_by_pair"):
            load_spec(p)

    def test_random_walk_mode_seeded(self, tmp_path):
        toml = MICRO_TOML.replace(
            'mode = "shared"\nlevels = [1.0, 3.0]',
            'mode = "random-walk"\nnum_levels = 4\nspan = 6.0\nbase_low = 1.0\nbase_high = 2.0\nseed = 9',
        )
        p = tmp_path / "rw.toml"
        p.write_text(toml)
        s1, s2 = load_spec(p), load_spec(p)
        lv1 = s1.system.chains[0][0].levels_array()
        lv2 = s2.system.chains[0][0].levels_array()
        np.testing.assert_array_equal(lv1, lv2)
        assert lv1.size == 4
        assert 1.0 <= lv1[0] <= 2.0
        np.testing.assert_allclose(lv1[-1] - lv1[0], 6.0)

    def test_bad_mode_rejected(self, tmp_path):
        toml = MICRO_TOML.replace('mode = "shared"', 'mode = "fancy"')
        p = tmp_path / "bad.toml"
        p.write_text(toml)
        with pytest.raises(ConfigError, match="fancy"):
            load_spec(p)

    def test_invalid_system_rejected(self, tmp_path):
        bad = MICRO_TOML.replace("self_prob = 0.7", "self_prob = 1.7")
        p = tmp_path / "bad.toml"
        p.write_text(bad)
        with pytest.raises((ConfigError, ValueError)):
            load_spec(p)


class TestEmitCsv:
    def test_floats_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [
            {"a": float(rng.normal()), "b": "x", "c": int(7)},
            {"a": 0.1 + 0.2, "b": "y", "c": -1},
        ]
        path = tmp_path / "out.csv"
        emit_csv(path, ("a", "b", "c"), rows)
        with open(path, newline="") as fh:
            got = list(csv.DictReader(fh))
        for orig, back in zip(rows, got):
            assert float(back["a"]) == orig["a"]
            assert back["b"] == orig["b"]
            assert int(back["c"]) == orig["c"]

    def test_identical_rows_identical_bytes(self, tmp_path):
        rows = [{"a": 1.5, "b": "p"}]
        emit_csv(tmp_path / "1.csv", ("a", "b"), rows)
        emit_csv(tmp_path / "2.csv", ("a", "b"), rows)
        assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()


class TestSweep:
    def test_micro_sweep_rows_and_reproducibility(self, micro_path, tmp_path):
        spec = load_spec(micro_path)
        out1 = tmp_path / "sweep1.csv"
        rows = run_sweep(spec, out1)
        assert len(rows) == len(spec.multipliers) * len(SWEEP_POLICIES)
        seen = {(r["multiplier"], r["policy"]) for r in rows}
        assert len(seen) == len(rows)
        for r in rows:
            assert set(r) == set(SWEEP_COLUMNS)
            assert 0.0 <= r["accuracy"] <= 1.0
        out2 = tmp_path / "sweep2.csv"
        run_sweep(load_spec(micro_path), out2)
        assert out1.read_bytes() == out2.read_bytes()

    def test_zero_multiplier_zeroes_traffic_weight(self, micro_path):
        from wisched.experiment import _scaled_system

        spec = load_spec(micro_path)
        scaled = _scaled_system(spec, 0.0)
        assert scaled.traffics[0].weight == 0.0
        assert spec.system.traffics[0].weight == 1.0


class TestResolveOut:
    def test_env_override_applies_to_relative_paths(self, monkeypatch):
        monkeypatch.setenv("WISCHED_OUT_DIR", "/data/runs")
        assert resolve_out("log.csv") == os.path.join("/data/runs", "log.csv")
        assert resolve_out("/abs/log.csv") == "/abs/log.csv"

    def test_no_env_no_change(self, monkeypatch):
        monkeypatch.delenv("WISCHED_OUT_DIR", raising=False)
        assert resolve_out("log.csv") == "log.csv"
