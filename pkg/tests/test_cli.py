import json
import subprocess
import sys

import pytest

from lqrpg import cli, experiments


def write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


SMALL = {"experiment": "sgd-synthetic", "preset": "scalar", "runs": 2, "iters": 30}


def test_success_writes_files(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["sgd-synthetic", "--config", str(write(tmp_path, SMALL)), "--out", str(out)])
    assert rc == cli.EXIT_OK
    assert (out / "metadata.json").exists()
    printed = capsys.readouterr().out.split()
    assert str(out / "metadata.json") in printed


def test_overrides_are_applied(tmp_path):
    out = tmp_path / "o"
    cli.main(["sgd-synthetic", "--config", str(write(tmp_path, SMALL)), "--seed", "5",
              "--runs", "3", "--iters", "7", "--out", str(out)])
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["master_seed"] == 5 and meta["config"]["runs"] == 3
    assert meta["config"]["iters"] == 7


@pytest.mark.parametrize("argv_tail, cfg", [
    ([], {"experiment": "sgd-synthetic", "preset": "scalar", "runs": 0}),
    ([], {"experiment": "constants", "preset": "scalar"}),  # experiment mismatch
    (["--runs", "0"], SMALL),
    (["--seed", "abc"], SMALL),
])
def test_config_errors_exit_1(tmp_path, argv_tail, cfg, capsys):
    rc = cli.main(["sgd-synthetic", "--config", str(write(tmp_path, cfg))] + argv_tail)
    assert rc == cli.EXIT_CONFIG
    assert "lqrpg:" in capsys.readouterr().err


def test_missing_config_exit_1(tmp_path):
    assert cli.main(["constants", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_unknown_experiment_exit_1():
    assert cli.main(["fly", "--config", "x.json"]) == cli.EXIT_CONFIG


def test_runtime_error_exit_2(tmp_path, capsys):
    # J0 below the optimal cost is only detected when the constants are evaluated
    cfg = {"experiment": "constants", "preset": "scalar", "J0": 0.5,
           "output_path": str(tmp_path / "o")}
    assert cli.main(["constants", "--config", str(write(tmp_path, cfg))]) == cli.EXIT_RUNTIME
    assert "failed" in capsys.readouterr().err
    assert not (tmp_path / "o" / "metadata.json").exists()


def test_same_seed_byte_identical(tmp_path):
    c = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert cli.main(["sgd-synthetic", "--config", str(c), "--out", str(tmp_path / d)]) == 0
    for f in (tmp_path / "a").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
    ma, mb = (json.loads((tmp_path / d / "metadata.json").read_text()) for d in "ab")
    ma["config"].pop("output_path"), mb["config"].pop("output_path")
    assert ma == mb


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, {"experiment": "constants", "preset": "scalar", "J0": 2.0,
                           "output_path": str(tmp_path / "o")})
    res = subprocess.run([sys.executable, "-m", "lqrpg.cli", "constants", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "constants.csv").exists()


def test_every_shipped_config_parses():
    from pathlib import Path
    root = Path(__file__).resolve().parent.parent / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        assert experiments.load_config(f).experiment in experiments.EXPERIMENTS
