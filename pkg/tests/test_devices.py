import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirrorsim import devices as dv
from mirrorsim.devices import MemristorParams, MemristorState, MosfetParams

PAPER = MemristorParams(r_on=500, r_off=1500, r_init=500)


@st.composite
def memristor_params(draw):
    r_on = draw(st.floats(1.0, 1e5))
    r_off = r_on * draw(st.floats(1.001, 1e3))
    r_init = draw(st.floats(r_on, r_off))
    return MemristorParams(r_on=r_on, r_off=r_off, r_init=r_init)


# -- MSS statics -------------------------------------------------------------


@pytest.mark.parametrize("r_init, expected", [(500, 1.0), (1500, 0.0), (750, 0.5)])
def test_on_fraction_examples(r_init, expected):
    p = MemristorParams(r_on=500, r_off=1500, r_init=r_init)
    assert dv.mss_on_fraction(p) == pytest.approx(expected, abs=1e-15)


def test_conductance_limits():
    assert dv.mss_conductance(1.0, PAPER) == pytest.approx(2e-3, rel=1e-15)
    assert dv.mss_conductance(0.0, PAPER) == pytest.approx(1 / 1500, rel=1e-15)
    p = MemristorParams(r_on=500, r_off=1500, r_init=750)
    assert dv.mss_conductance(dv.mss_on_fraction(p), p) == pytest.approx(1 / 750, rel=1e-14)


@settings(max_examples=300)
@given(memristor_params())
def test_conductance_identity(p):
    g = dv.mss_conductance(dv.mss_on_fraction(p), p)
    assert g * p.r_init == pytest.approx(1.0, rel=1e-12)


@given(memristor_params(), st.floats(0, 1), st.floats(0, 1))
def test_conductance_monotone(p, a, b):
    lo, hi = sorted((a, b))
    assert dv.mss_conductance(lo, p) <= dv.mss_conductance(hi, p)


# -- window ------------------------------------------------------------------


def test_window_examples():
    assert dv.window(0.5, 7) == 1.0
    assert dv.window(0.0, 3) == 0.0 and dv.window(1.0, 3) == 0.0
    assert dv.window(0.25, 1) == pytest.approx(0.75, abs=1e-15)


@given(st.floats(0, 1), st.integers(1, 10))
def test_window_symmetric_and_bounded(x, p):
    f = dv.window(x, p)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx(dv.window(1.0 - x, p), abs=1e-12)


@given(st.one_of(st.floats(0.001, 0.099), st.floats(0.901, 0.999)), st.integers(1, 9))
def test_window_widens_with_p(x, p):
    # |2x-1| < 1, so (2x-1)^(2p) shrinks as p grows: F rises toward 1 and the
    # fall to zero at the edges gets steeper.
    assert dv.window(x, p + 1) >= dv.window(x, p)


# -- drift -------------------------------------------------------------------


def test_memristance_examples():
    assert dv.memristance(1.0, PAPER) == 500
    assert dv.memristance(0.0, PAPER) == 1500
    assert dv.memristance(0.5, PAPER) == 1000


def test_step_below_threshold_frozen():
    s = MemristorState(0.3)
    assert dv.memristor_step(s, 1e-3, 0.1, 1e-6, PAPER).x == 0.3
    assert dv.memristor_step(s, -1e-3, -0.2699, 1e-6, PAPER).x == 0.3


def test_step_direction_and_boundary():
    assert dv.memristor_step(MemristorState(0.5), 1e-3, 0.5, 1e-6, PAPER).x > 0.5
    assert dv.memristor_step(MemristorState(0.5), -1e-3, -0.5, 1e-6, PAPER).x < 0.5
    assert dv.memristor_step(MemristorState(1.0), 1.0, 5.0, 1.0, PAPER).x == 1.0


def test_step_matches_update_law():
    x, i, dt = 0.3, 2e-4, 1e-7
    got = dv.memristor_step(MemristorState(x), i, 0.4, dt, PAPER).x
    rate = PAPER.mu_d * PAPER.r_on / PAPER.d**2
    assert got == pytest.approx(x + dt * rate * i * (1 - (2 * x - 1) ** 10), rel=1e-14)


def test_step_is_odd_in_current():
    up = dv.memristor_step(MemristorState(0.5), 1e-3, 1.0, 1e-7, PAPER).x - 0.5
    down = dv.memristor_step(MemristorState(0.5), -1e-3, -1.0, 1e-7, PAPER).x - 0.5
    assert up == pytest.approx(-down, rel=1e-12)


@given(
    st.floats(0, 1),
    st.lists(st.tuples(st.floats(-1, 1), st.floats(-5, 5), st.floats(1e-12, 1.0)), max_size=30),
)
def test_state_stays_bounded(x0, steps):
    s = MemristorState(x0)
    for i, v, dt in steps:
        s = dv.memristor_step(s, i, v, dt, PAPER)
        assert 0.0 <= s.x <= 1.0


def test_parameter_problems():
    assert PAPER.problems() == []
    assert ("r_off", "requires r_on < r_off") in MemristorParams(r_on=1500, r_off=500, r_init=1000).problems()
    assert any(name == "r_init" for name, _ in MemristorParams(r_init=2000).problems())
    assert any(name == "p" for name, _ in MemristorParams(p=0).problems())
    assert any(name == "v_t" for name, _ in MemristorParams(v_t=-1).problems())
    assert any(name == "lint" for name, _ in MosfetParams(w=1e-6, l=100e-9, lint=60e-9).problems())
    assert MosfetParams(w=1e-6, l=100e-9).problems() == []


# -- MOSFET ------------------------------------------------------------------

W10 = MosfetParams(w=10e-6, l=1e-6, vt0=0.5, kp=200e-6, lam=0.0)


def test_cutoff():
    ev = dv.mosfet_eval(0.3, 1.0, W10)
    assert ev.current == 0 and ev.gm == 0 and ev.gds == 0


def test_saturation_examples():
    assert dv.mosfet_eval(1.0, 2.0, W10).current == pytest.approx(250e-6, rel=1e-12)
    p = MosfetParams(w=10e-6, l=1e-6, lam=0.02)
    assert dv.mosfet_eval(1.0, 2.0, p).current == pytest.approx(260e-6, rel=1e-12)


def test_triode_value():
    # beta = 2e-3: 2e-3 * (0.5*0.2 - 0.02) = 160 uA
    assert dv.mosfet_eval(1.0, 0.2, W10).current == pytest.approx(160e-6, rel=1e-12)


def test_effective_length():
    p = MosfetParams(w=1e-6, l=200e-9, lint=10e-9)
    assert p.l_eff == pytest.approx(180e-9)
    assert p.beta == pytest.approx(200e-6 * 1e-6 / 180e-9)


@given(st.floats(0.6, 3.0), st.floats(0.0, 0.2), st.floats(1e-7, 1e-5))
def test_region_boundary_continuity(vgs, lam, w):
    p = MosfetParams(w=w, l=1e-6, lam=lam)
    vds = vgs - p.vt0
    lo = dv.mosfet_eval(vgs, vds * (1 - 1e-15), p)
    hi = dv.mosfet_eval(vgs, vds, p)
    assert lo.current == pytest.approx(hi.current, rel=1e-12)
    assert lo.gm == pytest.approx(hi.gm, rel=1e-12)


@settings(max_examples=1000)
@given(st.floats(-1.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.0, 0.1))
def test_derivatives_match_finite_differences(vgs, vds, lam):
    p = MosfetParams(w=2e-6, l=180e-9, lam=lam)
    h = 1e-6
    ev = dv.mosfet_eval(vgs, vds, p)
    num_gm = (dv.mosfet_eval(vgs + h, vds, p).current - dv.mosfet_eval(vgs - h, vds, p).current) / (2 * h)
    num_gds = (dv.mosfet_eval(vgs, vds + h, p).current - dv.mosfet_eval(vgs, vds - h, p).current) / (2 * h)
    scale = max(abs(ev.gm), abs(ev.gds), 1e-9)
    # kinks (cutoff edge, triode/saturation edge, vds = 0) only allow one-sided agreement
    kink = min(abs(vgs - p.vt0), abs(vgs - p.vt0 - vds), abs(vds), abs(vgs - vds - p.vt0)) < 2 * h
    if not kink:
        assert abs(ev.gm - num_gm) <= 1e-6 * scale
        assert abs(ev.gds - num_gds) <= 1e-6 * scale


def test_reverse_bias_swaps_terminals():
    p = MosfetParams(w=2e-6, l=180e-9, lam=0.05)
    fwd = dv.mosfet_eval(1.2, 0.3, p)
    # same device with drain/source swapped: v_gd' = 1.2-0.3, v_sd = -0.3
    rev = dv.mosfet_eval(1.2 - 0.3, -0.3, p)
    assert rev.current == pytest.approx(-fwd.current, rel=1e-14)


def test_derivatives_finite_everywhere():
    p = MosfetParams(w=2e-6, l=180e-9)
    for vgs in (-1.0, 0.5, 0.7, 2.0):
        for vds in (-2.0, 0.0, 0.2, 2.0):
            ev = dv.mosfet_eval(vgs, vds, p)
            assert all(math.isfinite(v) for v in (ev.current, ev.gm, ev.gds))
