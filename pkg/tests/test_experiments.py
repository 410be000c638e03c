import csv
import json

import numpy as np
import pytest

from lqrpg import experiments, presets, sgd
from lqrpg.errors import ConfigError


def cfg(**kw):
    base = {"experiment": "sgd-synthetic", "preset": "scalar", "runs": 2, "iters": 20}
    base.update(kw)
    return base


class TestParseConfig:
    def test_defaults_filled(self):
        c = experiments.parse_config({"experiment": "pg-indirect", "preset": "boeing747"})
        assert c.runs == 10 and c.iters == 100_000 and c.options["t0"] == 50
        assert [s["name"] for s in c.options["series"]] == ["decaying_step", "constant_step"]

    def test_defaults_not_shared(self):
        a = experiments.parse_config(cfg())
        a.options["series"][0]["name"] = "changed"
        b = experiments.parse_config(cfg())
        assert b.options["series"][0]["name"] == "const_step_const_bias"

    @pytest.mark.parametrize("bad, fragment", [
        ({"runs": 0}, "runs"),
        ({"iters": 1.5}, "iters"),
        ({"master_seed": -1}, "master_seed"),
        ({"preset": "nope"}, "preset"),
        ({"bogus": 1}, "bogus"),
        ({"J0": -1.0}, "J0"),
        ({"preset_overrides": {"A": 1.0}}, "preset_overrides.A"),
        ({"series": []}, "series"),
        ({"series": [{"name": "a", "schedule": {"form": "power_floor", "eta0": 0.1,
                                                "kappa": 0.4}, "bias": {"b0": 0, "decay": 0,
                                                                        "variance": 0}}]},
         "kappa"),
    ])
    def test_rejects(self, bad, fragment):
        with pytest.raises(ConfigError) as ei:
            experiments.parse_config(cfg(**bad))
        assert any(fragment in p for p in ei.value.problems)

    def test_collects_every_problem(self):
        with pytest.raises(ConfigError) as ei:
            experiments.parse_config(cfg(runs=0, iters=0, bogus=True))
        assert len(ei.value.problems) == 3

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            experiments.parse_config({"experiment": "fly", "preset": "scalar"})

    def test_t0_below_dimension(self):
        with pytest.raises(ConfigError, match="t0"):
            experiments.parse_config({"experiment": "pg-indirect", "preset": "benchmark3", "t0": 5})

    def test_direct_series_needs_one_param_kind(self):
        series = [{"name": "x", "schedule": {"form": "constant", "eta0": 0.1}}]
        with pytest.raises(ConfigError, match="exactly one"):
            experiments.parse_config({"experiment": "pg-direct", "preset": "scalar",
                                      "series": series})

    def test_custom_problem(self):
        c = experiments.parse_config({
            "experiment": "constants", "preset": "custom", "J0": 2.0,
            "custom": {"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                       "sigma_w": [[1.0]], "sigma_0": [[1.0]], "K0": [[0.0]]}})
        assert c.problem().system.A[0, 0] == 0.5

    def test_custom_missing_matrix(self):
        with pytest.raises(ConfigError, match="custom.K0"):
            experiments.parse_config({
                "experiment": "constants", "preset": "custom",
                "custom": {"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                           "sigma_w": [[1.0]], "sigma_0": [[1.0]]}})

    def test_load_config_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            experiments.load_config(tmp_path / "missing.json")
        p = tmp_path / "bad.json"
        p.write_text("{\"experiment\": ")
        with pytest.raises(ConfigError, match="line 1"):
            experiments.load_config(p)


class TestWriteCsv:
    def test_empty_is_header_only(self, tmp_path):
        p = tmp_path / "e.csv"
        experiments.write_csv([], p)
        assert p.read_bytes() == (",".join(sgd.RECORD_FIELDS) + "\n").encode()

    def test_one_record(self, tmp_path):
        p = tmp_path / "r.csv"
        rec = sgd.RunRecord(0, 3, 1 / 3, 0.25, 2.0, True, False, False, 7)
        experiments.write_csv([rec], p)
        lines = p.read_bytes().split(b"\n")
        assert lines[-1] == b"" and len(lines) == 3 and b"\r" not in p.read_bytes()
        row = lines[1].decode().split(",")
        assert len(row) == len(sgd.RECORD_FIELDS)
        assert row[2] == "0.33333333333333331" and float(row[2]) == 1 / 3
        assert row[5:8] == ["true", "false", "false"]

    def test_round_trip_and_special_values(self, tmp_path):
        p = tmp_path / "x.csv"
        vals = [np.pi, 1e-300, np.inf, np.nan, -0.1]
        experiments.write_csv([{"v": v} for v in vals], p)
        got = [float(r["v"]) for r in csv.DictReader(p.open())]
        assert got[:3] == vals[:3] and np.isnan(got[3]) and got[4] == -0.1

    def test_heterogeneous_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            experiments.write_csv([{"a": 1}, {"b": 2}], tmp_path / "h.csv")


class TestRunExperiment:
    def test_constants_scalar(self, tmp_path):
        c = experiments.parse_config({"experiment": "constants", "preset": "scalar", "J0": 2.0,
                                      "output_path": str(tmp_path)})
        experiments.run_experiment(c)
        rows = list(csv.DictReader((tmp_path / "constants.csv").open()))
        assert len(rows) == 1
        assert float(rows[0]["mu"]) == pytest.approx(0.26452, abs=5e-5)

    def test_benchmark3_preset(self):
        p = presets.benchmark3()
        assert p.system.A[0, 0] == 1.01
        np.testing.assert_array_equal(p.cost.Q, 1e-3 * np.eye(3))

    def test_synthetic_outputs_and_metadata(self, tmp_path):
        c = experiments.parse_config(cfg(output_path=str(tmp_path)))
        paths = experiments.run_experiment(c)
        names = sorted(p.name for p in paths)
        assert "metadata.json" in names and "const_step_const_bias.csv" in names
        assert "decay_step_vanish_bias_runs.csv" in names
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["content_hash"] == experiments.content_hash(c)
        assert meta["config"]["runs"] == 2
        assert set(meta["summary"]) == {s["name"] for s in c.options["series"]}
        header = (tmp_path / "decay_step_vanish_bias_runs.csv").read_text().splitlines()[0]
        assert header.split(",") == list(sgd.RECORD_FIELDS)

    def test_hash_tracks_config(self):
        a = experiments.parse_config(cfg())
        b = experiments.parse_config(cfg(master_seed=1))
        assert experiments.content_hash(a) == experiments.content_hash(experiments.parse_config(cfg()))
        assert experiments.content_hash(a) != experiments.content_hash(b)
        moved = experiments.parse_config(cfg(output_path="elsewhere"))
        assert experiments.content_hash(moved) == experiments.content_hash(a)

    def test_oracle_direct_columns(self, tmp_path):
        c = experiments.parse_config({"experiment": "oracle-direct", "preset": "scalar",
                                      "runs": 5, "v_values": [0.1], "ell": 10,
                                      "output_path": str(tmp_path)})
        experiments.run_experiment(c)
        header = (tmp_path / "oracle_direct.csv").read_text().splitlines()[0].split(",")
        assert {"v", "bias_norm", "variance"} <= set(header)

    def test_oracle_indirect_columns(self, tmp_path):
        c = experiments.parse_config({"experiment": "oracle-indirect", "preset": "benchmark3",
                                      "runs": 4, "iters": 30, "checkpoints": [10, 30],
                                      "output_path": str(tmp_path)})
        experiments.run_experiment(c)
        rows = list(csv.DictReader((tmp_path / "oracle_indirect.csv").open()))
        assert {"iteration", "bias_norm", "variance", "noise_level"} <= set(rows[0])
        assert len(rows) == 2 * 2

    def test_failure_removes_partial_output(self, tmp_path, monkeypatch):
        c = experiments.parse_config(cfg(output_path=str(tmp_path)))

        def boom(*a, **k):
            raise OSError("disk full")

        monkeypatch.setattr(experiments.Path, "write_text", boom)
        with pytest.raises(OSError):
            experiments.run_experiment(c)
        assert list(tmp_path.iterdir()) == []
