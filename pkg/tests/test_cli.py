import json
import subprocess
import sys

import numpy as np
import pytest

from exomarket.cli import dispatch, read_config


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"}


def test_gen_price(tmp_path):
    out = tmp_path / "g"
    assert dispatch(["gen-price", "--p-l", "0.4", "--p-s", "-0.4", "--steps", "1000", "--seed", "7",
                     "--out", str(out)]) == 0
    lines = (out / "prices.csv").read_text().splitlines()
    assert lines[0] == "step,price"
    assert len(lines) == 1002
    assert lines[1] == "0,1000"
    prices = np.array([float(x.split(",")[1]) for x in lines[1:]])
    assert np.all(np.abs(np.diff(prices)) == 1)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 7 and summary["command"] == "gen-price"


def _write_closes(path, closes):
    rows = [f"2000-{1 + d // 28:02d}-{1 + d % 28:02d},{c}" for d, c in enumerate(closes)]
    path.write_text("Date,Close\n" + "\n".join(rows) + "\n")


def test_estimate(tmp_path, capsys):
    src = tmp_path / "px.csv"
    _write_closes(src, [100, 101, 102, 101, 102, 103, 102, 101, 100, 101, 102])
    out = tmp_path / "e"
    assert dispatch(["estimate", "--input", str(src), "--order", "2", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.count("p_up(") == 4
    lines = (out / "estimate.csv").read_text().splitlines()
    assert lines[0] == "pattern,count,ups,p_up"
    assert [x.split(",")[0] for x in lines[1:]] == ["dd", "du", "ud", "uu"]
    counts = sum(int(x.split(",")[1]) for x in lines[1:])
    assert counts == 8


def test_estimate_requires_input(tmp_path, capsys):
    assert dispatch(["estimate", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("exomarket estimate: error:") and "\n" not in err


def test_missing_file_is_one_line_error(tmp_path, capsys):
    assert dispatch(["run", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_bad_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        dispatch(["gen-price", "--bogus", "1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        dispatch(["gen-price", "--steps", "many"])


def test_precondition_error(tmp_path, capsys):
    assert dispatch(["gen-price", "--p-l", "0.9", "--p-s", "0", "--out", str(tmp_path)]) == 1
    assert dispatch(["gen-price", "--out", str(tmp_path)]) == 1
    assert dispatch(["run", "--p-up", "0.5", "--schemes", "WG,Foo", "--out", str(tmp_path)]) == 1


def test_run_is_byte_identical(tmp_path):
    argv = ["run", "--p-l", "0.2", "--p-s", "-0.1", "--steps", "300", "--n-agents", "50", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(argv + ["--out", str(a)]) == 0
    assert dispatch(argv + ["--out", str(b)]) == 0
    fa, fb = _files(a), _files(b)
    # summary echoes the output directory, everything else must match exactly
    fa["summary.json"] = fa["summary.json"].replace(str(a).encode(), b"OUT")
    fb["summary.json"] = fb["summary.json"].replace(str(b).encode(), b"OUT")
    assert fa == fb
    assert set(fa) == {"summary.json", "timeseries.csv"}
    timing = json.loads((a / "timing.json").read_text())
    assert timing["wall_seconds"] >= 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# desk run\nn_agents = 20\nsteps = 50\np-up = 0.3\nseed = 4\n")
    out = tmp_path / "o"
    assert dispatch(["run", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    echo = json.loads((out / "summary.json").read_text())["config"]
    assert (echo["n_agents"], echo["steps"], echo["p_up"], echo["seed"]) == (20, 50, 0.3, 9)
    assert (echo["m"], echo["s"], echo["multiplier"]) == (2, 2, 5.0)
    assert len((out / "timeseries.csv").read_text().splitlines()) == 52


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("n_agents = 20\nflux = 3\n")
    assert dispatch(["run", "--config", str(cfg), "--p-up", "0.5", "--out", str(tmp_path)]) == 1
    assert "flux" in capsys.readouterr().err


def test_read_config_syntax(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("n_agents 20\n")
    with pytest.raises(ValueError, match="key = value"):
        read_config(cfg, {"n_agents": (int, 1, "")})


def test_summary_reproduces_run(tmp_path):
    out = tmp_path / "a"
    assert dispatch(["run", "--p-up", "0.7", "--steps", "120", "--n-agents", "30", "--seed", "11",
                     "--schemes", "WG,DMinG:20", "--out", str(out)]) == 0
    echo = json.loads((out / "summary.json").read_text())["config"]
    cfg = tmp_path / "replay.txt"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in echo.items()
                           if v is not None and k != "out"))
    again = tmp_path / "b"
    assert dispatch(["run", "--config", str(cfg), "--out", str(again)]) == 0
    assert (out / "timeseries.csv").read_bytes() == (again / "timeseries.csv").read_bytes()


@pytest.mark.parametrize("cmd, extra", [
    ("sweep-walk", ["--p-up-list", "0.2,0.8"]),
    ("sweep-grid", ["--p-l-list", "0.4", "--p-s-list=-0.4,0.4"]),
    ("sweep-memory", ["--t-list", "5,50", "--p-up-list", "0.3"]),
])
def test_sweeps_invariant_to_workers(tmp_path, cmd, extra):
    base = [cmd, "--n-agents", "20", "--samples", "3", "--steps", "60", "--seed", "5"] + extra
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(base + ["--workers", "1", "--out", str(a)]) == 0
    assert dispatch(base + ["--workers", "2", "--out", str(b)]) == 0
    assert (a / "grid.csv").read_bytes() == (b / "grid.csv").read_bytes()
    sa = (a / "summary.json").read_text().replace(str(a), "OUT")
    sb = (b / "summary.json").read_text().replace(str(b), "OUT")
    assert sa == sb
    assert json.loads((b / "timing.json").read_text())["workers"] == 2


def test_sweep_memory_summary(tmp_path):
    out = tmp_path / "m"
    assert dispatch(["sweep-memory", "--n-agents", "20", "--samples", "2", "--steps", "40", "--t-list", "40",
                     "--p-l-list", "0.4", "--p-s-list", "0.4", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["winner_agreement"] == {"40": 1.0}
    header = (out / "grid.csv").read_text().splitlines()[0]
    assert header == "p_L,p_S,group,scheme,mean_w,std_w,chance_best,n"


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "exomarket", "sweep-grid", "--help"],
                         capture_output=True, text=True, check=True)
    assert "--workers" in res.stdout and "--full-scale" in res.stdout
