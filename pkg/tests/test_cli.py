import json
import shutil
import subprocess
import sys

import pytest

from psma.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, UsageError, main, parse_seeds, parse_values

SMALL = {"num_bs": 2, "num_users": 4, "num_subcarriers": 4, "num_codebooks": 4,
         "codebook_size": 2, "p_max": [10, 1], "max_users_per_codebook": 2}


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SMALL), encoding="utf-8")
    return path


def read_all(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_parse_seeds_forms():
    assert parse_seeds("1,2,5") == [1, 2, 5]
    assert parse_seeds("1..4") == [1, 2, 3, 4]
    assert parse_seeds("0, 3..4") == [0, 3, 4]
    for bad in ("", "5..2", "a"):
        with pytest.raises(ValueError):
            parse_seeds(bad)


def test_parse_values():
    assert parse_values("4, 8,12") == [4, 8, 12]
    assert parse_values("0.5,1") == [0.5, 1]
    with pytest.raises(UsageError):
        parse_values(" , ")


def test_complexity_output(capsys):
    assert main(["complexity", "--it", "3", "--pi", "8", "--d", "3", "--g", "4",
                 "--lt", "3"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "scma: 1536"
    assert out[1] == "psma: 18432"


def test_simulate_is_deterministic(scenario, tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["simulate", "--scenario", str(scenario), "--seed", "3",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    a, b = read_all(tmp_path / "a"), read_all(tmp_path / "b")
    assert set(a) == {"allocation.csv", "trace.csv"}
    assert a == b
    lines = capsys.readouterr().out.splitlines()
    assert lines[: len(lines) // 2] == lines[len(lines) // 2:]
    assert lines[0].startswith("scheme=psma seed=3")


def test_sweep_is_deterministic(scenario, tmp_path):
    for name in ("a", "b"):
        assert main(["sweep", "--scenario", str(scenario), "--axis", "lt", "--values", "1,2",
                     "--trials", "1", "--schemes", "psma,scma", "--out",
                     str(tmp_path / name)]) == EXIT_OK
    a, b = read_all(tmp_path / "a"), read_all(tmp_path / "b")
    assert a == b
    assert len(a["results.csv"].decode().splitlines()) == 1 + 4


def test_compare_is_deterministic(scenario, tmp_path):
    for name in ("a", "b"):
        assert main(["compare", "--scenario", str(scenario), "--seeds", "0..1",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    a, b = read_all(tmp_path / "a"), read_all(tmp_path / "b")
    assert a == b
    assert set(a) == {"results.csv", "summary.csv", "ratios.csv"}


def test_validation_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SMALL, "codebook_size": 9}), encoding="utf-8")
    assert main(["simulate", "--scenario", str(bad)]) == EXIT_INVALID
    assert "codebook_size" in capsys.readouterr().err
    assert main(["sweep", "--scenario", str(bad), "--axis", "lt", "--values", "1",
                 "--out", str(tmp_path)]) == EXIT_INVALID


def test_usage_errors_exit_one(scenario, tmp_path):
    assert main(["simulate"]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID
    assert main(["sweep", "--scenario", str(scenario), "--axis", "lt", "--values", "2,1",
                 "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["compare", "--scenario", str(scenario), "--seeds", "3..1",
                 "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_io_errors_exit_two(scenario, tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "missing.json")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    assert main(["simulate", "--scenario", str(scenario), "--out",
                 str(blocker / "sub")]) == EXIT_IO


def test_help_exits_zero():
    assert main(["--help"]) == EXIT_OK


@pytest.mark.skipif(shutil.which("psma") is None, reason="console script not installed")
def test_console_script():
    done = subprocess.run(["psma", "complexity", "--it", "4", "--pi", "10", "--d", "4",
                           "--g", "5", "--lt", "4"], capture_output=True, text=True)
    assert done.returncode == 0
    assert "psma: 800000" in done.stdout


def test_module_entry():
    done = subprocess.run([sys.executable, "-m", "psma.cli", "complexity", "--it", "3",
                           "--pi", "8", "--d", "3"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("scma: ")
