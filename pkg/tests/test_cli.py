import json

import pytest

from mirrorsim import cli, engine
from mirrorsim.cli import UsageError, main, parse_list, read_config
from mirrorsim.experiments import csv_body


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


FAST = ("--ppp", "64", "--periods", "4")


def test_parse_list_forms():
    assert parse_list("1 100 1e4") == (1.0, 100.0, 1e4)
    assert parse_list("1k,2k") == (1e3, 2e3)
    assert parse_list("-2n:2n:1n") == pytest.approx((-2e-9, -1e-9, 0.0, 1e-9, 2e-9))
    for bad in ("", "1:2:0", "abc"):
        with pytest.raises((UsageError, Exception)):
            parse_list(bad)


def test_read_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nfreqs = 1k 1meg\nppp=64  # inline\n\n")
    assert read_config(path) == {"freqs": "1k 1meg", "ppp": "64"}
    path.write_text("freqs\n")
    with pytest.raises(UsageError, match=":1:"):
        read_config(path)


def test_run_single_experiment(tmp_path, capsys):
    code, out, _ = run(capsys, "run", "freq-thd", "--freqs", "1k", *FAST, "--out", str(tmp_path))
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "ok" and summary["experiments"] == ["freq_thd"]
    body = csv_body(tmp_path / "freq_thd.csv").splitlines()
    assert len(body) == 3  # header + one row per variant


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"freqs = 1k 1meg\nppp = 64\nperiods = 4\nout = {tmp_path / 'from_cfg'}\n")
    code, _, _ = run(capsys, "run", "freq-thd", "--config", str(cfg), "--freqs", "1k")
    assert code == 0
    rows = csv_body(tmp_path / "from_cfg" / "freq_thd.csv").splitlines()[1:]
    assert len(rows) == 2  # flag's single frequency won over the file's two


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "run", "dc-ron", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2
    assert json.loads(err)["error"] == "UsageError"


@pytest.mark.parametrize(
    "argv",
    [
        ("run", "nope", "--out", "x"),
        ("run", "dc-ron"),
        ("run", "dc-ron", "--ppp", "many", "--out", "x"),
        ("run", "dc-ron", "--set", "M1", "--out", "x"),
        (),
    ],
)
def test_usage_errors(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 2
    payload = json.loads(err)
    assert payload["status"] == "error" and payload["message"]


def test_validation_error_is_structured(tmp_path, capsys):
    code, _, err = run(capsys, "run", "dc-ron", "--supplies", "3 -1", "--out", str(tmp_path))
    assert code == 1
    assert json.loads(err)["error"] == "ValidationError"


def test_netlist_error_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.cir"
    bad.write_text("* title\nV1 vsrc a 0 1\nR1 res a 0 oops\n")
    code, _, err = run(capsys, "sim", str(bad))
    payload = json.loads(err)
    assert code == 1 and payload["error"] == "NetlistError" and payload["line"] == 3


def test_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "sim", str(tmp_path / "absent.cir"))
    assert code == 1
    assert json.loads(err)["status"] == "error"


def test_convergence_error_payload(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(engine, "MAX_ITER", 1)
    code, _, err = run(capsys, "run", "freq-thd", "--freqs", "1k", *FAST, "--out", str(tmp_path))
    payload = json.loads(err)
    assert code == 1 and payload["error"] == "ConvergenceError"
    assert payload["context"]["frequency_hz"] == 1e3


@pytest.mark.parametrize("name", ["basic_cm.cir", "memristor_cm.cir", "cascode_cm.cir", "wilson_cm.cir"])
def test_sim_shipped_thd(name, capsys):
    code, out, _ = run(capsys, "sim", name)
    assert code == 0
    results = json.loads(out)["results"]
    kinds = [r["analysis"] for r in results]
    assert kinds[0] == "op" and "tran" in kinds and "thd" in kinds
    thd = next(r for r in results if r["analysis"] == "thd")
    assert 0 < thd["thd_percent"] < 100
    assert thd["analysis_window"] == [5, 5, 1024]


def test_sim_hparam_and_dc(capsys, tmp_path):
    code, out, _ = run(capsys, "sim", "hparam_cm.cir")
    assert code == 0
    h = json.loads(out)["results"][-1]
    assert h["analysis"] == "hparam" and h["h11"] > 0 and h["h21"] > 0
    code, out, _ = run(capsys, "sim", "memristor_cm.cir", "--out", str(tmp_path))
    dc = next(r for r in json.loads(out)["results"] if r["analysis"] == "dc")
    assert len(dc["values"]) == 11
    header = (tmp_path / "tran.csv").read_text().splitlines()[0]
    assert header.startswith("time_s,") and "x(XMEM2)" in header


def test_thd_without_tran(tmp_path, capsys):
    path = tmp_path / "t.cir"
    path.write_text("V1 vsrc a 0 SIN(0 1 1k)\nR1 res a 0 1k\n.thd V(a) f0=1k\n")
    code, _, err = run(capsys, "sim", str(path))
    assert code == 1 and ".tran" in json.loads(err)["message"]


def test_entry_point_help(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
