import dataclasses

import pytest

from mirrorsim.analysis import thd_report
from mirrorsim.engine import solve_dc, tran_for, transient
from mirrorsim.errors import ConvergenceError, ValidationError
from mirrorsim.experiments import (
    DEFAULT_FREQS,
    QUASI_STATIC_NOTE,
    ExperimentConfig,
    csv_body,
    load_base,
    run_all,
    run_dc_length,
    run_dc_ron,
    run_freq_thd,
    run_length_thd,
    shipped_netlist,
    shipped_netlists,
    variants,
    with_frequency,
    with_supply,
    write_report,
)
from mirrorsim import engine
from mirrorsim.netlist import load_netlist, set_param, validate

FAST = ExperimentConfig(ppp=64, periods=4, freqs=(1e3, 1e6), lengths=(17e-9, 20e-9, 25e-9), supplies=(3.0, 5.0))


def test_shipped_netlists_load():
    names = set(shipped_netlists())
    assert {"basic_cm.cir", "memristor_cm.cir", "cascode_cm.cir", "wilson_cm.cir"} <= names
    for name in names:
        validate(load_netlist(shipped_netlist(name)))


def test_config_validation():
    assert FAST.check() is FAST
    for bad in (
        {"freqs": ()},
        {"supplies": (3.0, -1.0)},
        {"lints": (0.0, 1e-9, 0.0)},
        {"ppp": 2},
        {"periods": 1},
        {"experiment": "nope"},
    ):
        with pytest.raises(ValidationError):
            dataclasses.replace(FAST, **bad).check()


def test_freq_thd_default_row_count():
    cfg = dataclasses.replace(FAST, freqs=DEFAULT_FREQS)
    rep = run_freq_thd(cfg)
    for label in ("memristor", "no_memristor"):
        assert len(rep.column("f0_hz", variant=label)) == 6
    notes = dict(zip(rep.column("f0_hz", variant="memristor"), rep.column("note", variant="memristor")))
    assert notes[1e10] == QUASI_STATIC_NOTE and notes[1e8] == ""


def test_freq_thd_single_frequency_matches_manual_run():
    cfg = dataclasses.replace(FAST, freqs=(1e3,))
    rep = run_freq_thd(cfg)
    assert len(rep.rows) == 2  # one per variant
    c = with_frequency(load_base(cfg), 1e3)
    manual = thd_report(transient(c, tran_for(c, ppp=64, periods=4)), "I(VOUT)", f0=1e3)
    assert rep.column("thd_percent", variant="memristor") == [manual.thd_percent]


def test_freq_thd_top_decades_non_increasing():
    # four periods leave the ns-scale drain RC unsettled at 10 GHz; use the default ten
    rep = run_freq_thd(dataclasses.replace(FAST, periods=10, freqs=(1e4, 1e8, 1e10)))
    ys = rep.column("thd_percent", variant="memristor")
    assert ys[0] >= ys[1] >= ys[2]


def test_freq_thd_error_tagged_with_frequency(monkeypatch):
    monkeypatch.setattr(engine, "MAX_ITER", 1)
    with pytest.raises(ConvergenceError) as exc:
        run_freq_thd(dataclasses.replace(FAST, freqs=(1e3,)))
    assert exc.value.context["frequency_hz"] == 1e3


def test_length_thd_grid_and_slopes():
    rep = run_length_thd(FAST)
    assert len(rep.rows) == 2 * 3 * 2  # variants x lengths x freqs
    assert len(rep.fits) == 2 * 2
    for row in rep.fit_rows(variant="memristor"):
        assert 0.0 <= row["r_squared"] <= 1.0


def test_length_thd_single_cell():
    rep = run_length_thd(dataclasses.replace(FAST, freqs=(1e3,), lengths=(20e-9,)))
    assert len(rep.column("thd_percent", variant="memristor")) == 1
    assert rep.fits == []


def test_dc_length_properties():
    rep = run_dc_length(FAST)
    n = len(FAST.lints)
    assert len(rep.rows) == 2 * len(FAST.supplies) * 2 * n
    for supply in FAST.supplies:
        for label in ("memristor", "no_memristor"):
            m2 = rep.fit_rows(variant=label, supply_v=supply, swept="M2")[0]
            m1 = rep.fit_rows(variant=label, supply_v=supply, swept="M1")[0]
            assert m2["i_ref_rel_spread"] < 1e-9
            assert m2["r_squared"] > 0.99 and m1["r_squared"] > 0.99
            assert abs(m1["slope_ua_per_nm"]) == pytest.approx(abs(m2["slope_ua_per_nm"]), rel=0.05)


def test_dc_length_symmetric_point_zero_lambda():
    cfg = dataclasses.replace(
        FAST, netlist="basic_cm.cir", overrides=(("M1.LAMBDA", 0.0), ("M2.LAMBDA", 0.0)), supplies=(3.0,)
    )
    rep = run_dc_length(cfg)
    for di, lint in zip(rep.column("di_a", swept="M2"), rep.column("lint_m", swept="M2")):
        if lint == 0.0:
            assert abs(di) < 1e-15


def test_dc_ron_properties():
    rep = run_dc_ron(FAST)
    assert len(rep.rows) == 11 * len(FAST.supplies)
    for row in rep.fit_rows():
        assert row["r_squared"] > 0.99
        assert row["i_out_slope_ua_per_ohm"] < 0


def test_dc_ron_zero_width_matches_solve_dc():
    cfg = dataclasses.replace(FAST, rinits=(520.0,), supplies=(5.0,))
    rep = run_dc_ron(cfg)
    assert len(rep.rows) == 1
    c = set_param(with_supply(load_base(cfg), 5.0), "XMEM2.RINIT", 520.0)
    op = solve_dc(validate(c))
    assert rep.column("i_out_a") == [pytest.approx(op.current("M2"), rel=1e-12)]


def test_dc_ron_needs_output_memristor():
    with pytest.raises(ValidationError, match="memristor"):
        run_dc_ron(dataclasses.replace(FAST, netlist="basic_cm.cir"))


def test_variants_short_memristors():
    base = load_base(FAST)
    labels = [label for label, _ in variants(base)]
    assert labels == ["memristor", "no_memristor"]
    stripped = variants(base)[1][1]
    assert not stripped.of_kind("memristor")
    assert [label for label, _ in variants(load_base(dataclasses.replace(FAST, netlist="basic_cm.cir")))] == ["base"]


def test_overrides_and_paths(tmp_path):
    text = shipped_netlist("basic_cm.cir").read_text()
    path = tmp_path / "mine.cir"
    path.write_text(text)
    cfg = dataclasses.replace(FAST, netlist=str(path), overrides=(("RB.R", 20e3),))
    assert load_base(cfg).device("RB").params == 20e3


def test_reports_deterministic(tmp_path):
    cfg = dataclasses.replace(FAST, freqs=(1e3,), lints=(-1e-9, 0.0, 1e-9), rinits=(500.0, 510.0, 520.0))
    bodies = []
    for run in ("a", "b"):
        paths = []
        for rep in run_all(cfg):
            paths += write_report(rep, tmp_path / run)
        bodies.append({p.name: csv_body(p) for p in paths})
    assert bodies[0] == bodies[1]
    assert "freq_thd.csv" in bodies[0] and "dc_length_fits.csv" in bodies[0]
    assert any(name.startswith("plot_") for name in bodies[0])


def test_csv_header_carries_provenance(tmp_path):
    rep = run_dc_ron(dataclasses.replace(FAST, supplies=(3.0,)))
    path = write_report(rep, tmp_path)[0]
    head = [line for line in path.read_text().splitlines() if line.startswith("#")]
    assert any("netlist_sha256" in line for line in head)
    assert any(line.startswith("# generated") for line in head)
    assert any(line.startswith("# rinits=") for line in head)
    body = csv_body(path).splitlines()
    assert body[0] == "supply_v,rinit_ohm,i_ref_a,i_out_a,di_a"
    assert len(body) == 12
