import math
import subprocess
import sys

import pytest

from stochks import __version__
from stochks.cli import ConfigError, RunConfig, header, main, parse_config


# ---- config parsing --------------------------------------------------------------------


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.L == 2 * math.pi and cfg.gamma == 0.5 and cfg.modes == 64


def test_file_values_comments_and_types():
    text = """
    # a comment
    modes = 16   # trailing comment
    gamma = -0.25
    shift_iso = yes
    cutoff_R = none
    observables = H_norm2, energy_2
    """
    cfg = parse_config(text)
    assert cfg.modes == 16 and cfg.gamma == -0.25 and cfg.shift_iso is True
    assert cfg.cutoff_R is None and cfg.observables == "H_norm2, energy_2"


@pytest.mark.parametrize("text,line", [
    ("modes = 8\nbogus = 1\n", 2),
    ("modes = 8\n\njust words\n", 3),
    ("modes = eight\n", 1),
    ("shift_iso = maybe\n", 1),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


@pytest.mark.parametrize("text", ["dt = 0", "modes = 0", "cutoff_R = 0.5", "scheme = rk4", "phi = nope",
                                  "occupation = 0.5", "direction = 200", "backend = gpu", "shift_a = -1"])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("gamma = 0.5\nmodes = 8\n")
    out = tmp_path / "out.txt"
    assert main(["check", "--config", str(path), "--gamma", "0.25", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# gamma=0.25\n" in text and "# modes=8\n" in text
    assert parse_config("gamma = 0.5", {"gamma": 0.25}).gamma == 0.25
    assert parse_config("gamma = 0.5", {"gamma": "0.125"}).gamma == 0.125


def test_header_echoes_resolved_config():
    cfg = parse_config("shift_iso = 1\nnu = 2")
    lines = header(cfg).splitlines()
    assert lines[0] == "# tool=stochks" and lines[1] == f"# tool_version={__version__}"
    assert "# shift_a=0.25" in lines  # default a = 1/(2 nu)
    assert any(line.startswith("# backend=") and not line.endswith("auto") for line in lines)
    assert all(line.startswith("# ") and "=" in line for line in lines)


# ---- commands ---------------------------------------------------------------------------------


def test_check_outputs_and_exit_codes(tmp_path, capsys):
    assert main(["check", "--gamma", "0.5"]) == 0
    out = capsys.readouterr().out
    assert "alpha < 0.25" in out
    assert main(["check", "--gamma", "-2.5"]) == 0
    assert "1.5 <= alpha < 3.25" in capsys.readouterr().out
    assert main(["check", "--gamma", "0.8"]) == 4
    assert main(["check", "--set", "bogus=1"]) == 2
    assert main(["check", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_simulation_commands_refuse_inadmissible_noise(tmp_path):
    assert main(["simulate", "--gamma", "0.75", "--out", str(tmp_path / "x.csv")]) == 4
    assert not (tmp_path / "x.csv").exists()


def test_blow_up_exit_code(tmp_path):
    args = ["simulate", "--L", "50", "--modes", "4", "--dt", "0.5", "--T", "50", "--set", "y_norm=1e3",
            "--out", str(tmp_path / "x.csv")]
    assert main(args) == 3


def test_simulate_writes_one_file_per_trajectory(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--modes", "8", "--T", "0.05", "--set", "trajectories=3", "--out", str(out)]) == 0
    for path in (out, tmp_path / "traj_trj1.csv", tmp_path / "traj_trj2.csv"):
        lines = path.read_text().splitlines()
        body = [line for line in lines if not line.startswith("#")]
        assert body[0] == "t,H_norm,V_halfnorm,A_norm,mode_1,mode_2,mode_3,mode_4"
        assert len(body) == 1 + 6
    assert out.read_text() != (tmp_path / "traj_trj1.csv").read_text()


def test_invariant_writes_statistics_and_occupation(tmp_path):
    out = tmp_path / "stats.csv"
    assert main(["invariant", "--modes", "8", "--T", "2", "--burn-in", "0.5",
                 "--set", "occupation=0:1;0.25:2", "--out", str(out)]) == 0
    body = [line for line in out.read_text().splitlines() if not line.startswith("#")]
    assert body[0] == "observable,T,average,stderr,n_records" and len(body) == 4
    occ = [line for line in (tmp_path / "stats_occupation.csv").read_text().splitlines() if not line.startswith("#")]
    assert occ[0] == "alpha,R,fraction,T" and len(occ) == 3


def test_control_snapshot(tmp_path):
    out = tmp_path / "zbar.txt"
    assert main(["control", "--modes", "4", "--dt", "1e-3", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# content=z_bar(t)" in text and "# endpoint_error=" in text
    assert main(["control", "--shift-a", "0.1", "--out", str(out)]) == 2


# ---- determinism ------------------------------------------------------------------------------

COMMAND_ARGS = {
    "check": [],
    "simulate": ["--modes", "8", "--T", "0.2", "--set", "trajectories=3"],
    "invariant": ["--modes", "8", "--T", "2", "--burn-in", "0.5", "--set", "occupation=0:1"],
    "mixing": ["--modes", "8", "--T", "2", "--burn-in", "0.5", "--L", "20"],
    "gradient": ["--modes", "4", "--cutoff-R", "4", "--set", "samples=2500", "--set", "fd_eps=1e-3",
                 "--set", "y_norm=1"],
    "control": ["--modes", "4", "--dt", "1e-3"],
}


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("command", sorted(COMMAND_ARGS))
def test_reruns_are_byte_identical(tmp_path, monkeypatch, command):
    runs = []
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        d = tmp_path / tag
        d.mkdir()
        monkeypatch.chdir(d)
        argv = [command, *COMMAND_ARGS[command], "--seed", "7", "--workers", workers, "--out", "out.csv"]
        assert main(argv) == 0
        runs.append(_outputs(d))
    assert runs[0] == runs[1]
    # the worker count is echoed in the header; everything else must match
    strip = lambda b: b.replace(b"# workers=2\n", b"# workers=1\n")
    assert {k: strip(v) for k, v in runs[2].items()} == runs[0]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "stochks", "check", "--gamma", "0.5"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("# tool=stochks\n")
