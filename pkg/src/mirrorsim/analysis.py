"""Post-processing: Fourier coefficients and THD, two-port h-parameters,
least-squares fits and I-V loop areas.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import devices as dv
from .engine import OperatingPoint, Waveforms, mirror_branches, solve_dc
from .errors import AnalysisError, ConvergenceError, SingularCircuitError, UndefinedTHDError
from .netlist import Circuit, Dc, Device, validate

H_REL_STEP = 1e-6


# -- Fourier / THD -----------------------------------------------------------


@dataclass(frozen=True)
class THDReport:
    fundamental_hz: float
    harmonic_magnitudes: np.ndarray  # |c_k|, k = 1..K
    thd_percent: float
    analysis_window: tuple  # (first period index, period count, samples per period)
    dc: float = 0.0
    observable: str = ""
    coefficients: np.ndarray = field(default=None, repr=False, compare=False)


def _window_bounds(time, f0, warmup_periods):
    t = np.asarray(time, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise AnalysisError("need at least two time samples")
    if not (f0 > 0 and math.isfinite(f0)):
        raise AnalysisError(f"fundamental frequency must be positive, got {f0}")
    steps = np.diff(t)
    dt = steps.mean()
    if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise AnalysisError("time samples are not uniformly spaced")
    spp = 1.0 / (f0 * dt)  # samples per period
    start = warmup_periods * spp
    i0 = round(start)
    if warmup_periods and abs(start - i0) > 1e-6 * max(1.0, start):
        raise AnalysisError(f"warmup of {warmup_periods} periods is not a whole number of samples")
    remaining = t.size - i0
    # a trailing sample that closes the last period is allowed and dropped
    for m in (remaining, remaining - 1):
        periods = m / spp
        n = round(periods)
        if n >= 1 and abs(periods - n) <= 1e-6 * periods:
            return i0, m, n, spp
    raise AnalysisError(
        f"analysis window of {remaining * dt:.6g} s is not an integer number of "
        f"{1.0 / f0:.6g} s periods"
    )


def fourier_coefficients(waveform, time, f0, n_harmonics, warmup_periods=0):
    """Complex coefficients ``c_0..c_K`` over an integer number of periods.

    ``c_k = (2/M) * sum(w * exp(-j 2 pi k f0 t))`` for ``k >= 1``, ``c_0`` is
    the mean.  The first ``warmup_periods`` periods are discarded.
    """
    w = np.asarray(waveform, dtype=float)
    t = np.asarray(time, dtype=float)
    if w.shape != t.shape:
        raise AnalysisError(f"waveform has {w.size} samples but time has {t.size}")
    if n_harmonics < 1:
        raise AnalysisError("n_harmonics must be >= 1")
    i0, m, _, _ = _window_bounds(t, f0, warmup_periods)
    w, t = w[i0 : i0 + m], t[i0 : i0 + m]
    k = np.arange(n_harmonics + 1)[:, None]
    basis = np.exp(-2j * math.pi * f0 * k * t[None, :])
    c = (2.0 / m) * (basis @ w)
    c[0] = w.mean()
    return c


def thd(coefficients) -> float:
    """THD in percent from ``c_0..c_K`` (``K >= 2``)."""
    c = np.asarray(coefficients)
    if c.size < 3:
        raise AnalysisError("THD needs coefficients up to at least the 2nd harmonic")
    mags = np.abs(c[1:])
    largest = mags.max()
    if not largest > 0 or mags[0] < 1e-15 * largest:
        raise UndefinedTHDError("fundamental is absent; THD is undefined")
    return float(100.0 * math.sqrt(float(np.sum(mags[1:] ** 2))) / mags[0])


def thd_report(waves: Waveforms, observable, f0=None, n_harmonics=9, warmup_periods=None) -> THDReport:
    """THD of one transient signal; by default the first half of the periods is warmup."""
    f0 = waves.f0 if f0 is None else f0
    if f0 is None:
        raise AnalysisError("no fundamental frequency given and the waveform has none")
    if warmup_periods is None:
        warmup_periods = waves.periods // 2
    if not 0 <= warmup_periods < waves.periods:
        raise AnalysisError(f"warmup of {warmup_periods} periods leaves nothing to analyse")
    try:
        signal = waves[observable]
    except KeyError:
        raise AnalysisError(f"no signal {observable!r} in the waveforms") from None
    c = fourier_coefficients(signal, waves.time, f0, n_harmonics, warmup_periods)
    _, m, n, spp = _window_bounds(waves.time, f0, warmup_periods)
    return THDReport(
        fundamental_hz=f0,
        harmonic_magnitudes=np.abs(c[1:]),
        thd_percent=thd(c),
        analysis_window=(warmup_periods, n, round(spp)),
        dc=float(c[0].real),
        observable=observable,
        coefficients=c,
    )


# -- h-parameters ------------------------------------------------------------


@dataclass(frozen=True)
class HParams:
    h11: float  # ohm
    h12: float
    h21: float
    h22: float  # S

    def as_tuple(self):
        return (self.h11, self.h12, self.h21, self.h22)


@dataclass(frozen=True)
class SmallSignalView:
    gm1: float
    gm2: float
    ro2: float
    r_mem1: float = 0.0
    r_mem2: float = 0.0
    n: float = 1.0


def _series_memristor(circuit, node):
    for dev in circuit.of_kind("memristor"):
        if node in dev.terminals:
            return dev
    return None


def small_signal_view(circuit: Circuit, op: OperatingPoint | None = None, ref=None, out=None) -> SmallSignalView:
    """Collect the mirror's small-signal quantities at its operating point.

    ``ref``/``out`` default to the detected mirror pair.  A memristor touching
    a transistor's drain node counts as that branch's series memristor.
    """
    if ref is None or out is None:
        pair = mirror_branches(circuit)
        if pair is None:
            raise AnalysisError("no current-mirror pair found in the circuit")
        ref, out = pair
    op = solve_dc(circuit) if op is None else op
    m1, m2 = circuit.device(ref), circuit.device(out)
    gm1, _ = op.device_small_signal[m1.name]
    gm2, gds2 = op.device_small_signal[m2.name]
    r_mem = []
    for m in (m1, m2):
        mem = _series_memristor(circuit, m.terminals[0])
        r_mem.append(0.0 if mem is None else dv.memristance(op.memristor_states[mem.name], mem.params))
    n = (m2.params.w / m2.params.l_eff) / (m1.params.w / m1.params.l_eff)
    ro2 = 1.0 / gds2 if gds2 > 0 else math.inf
    return SmallSignalView(gm1, gm2, ro2, r_mem[0], r_mem[1], n)


def analytic_hparams(view: SmallSignalView, with_memristor: bool = False) -> HParams:
    """First-order mirror h-parameters.

    Output resistance with a memristor is ``ro2 + r_mem2``, so
    ``h22 = 1 / (ro2 + r_mem2)``.
    """
    if not view.gm1 > 0:
        raise AnalysisError("gm1 is zero: the reference transistor is not conducting in saturation")
    h11 = 1.0 / view.gm1
    h22 = 1.0 / view.ro2
    if with_memristor:
        h11 += view.r_mem1
        h22 = 1.0 / (view.ro2 + view.r_mem2)
    return HParams(h11, 0.0, view.gm2 / view.gm1, h22)


def _port_current(op, port):
    # current delivered into the circuit by the port source
    return -op.current(port)


def _port_voltage(op, dev):
    return op.voltage(dev.terminals[0]) - op.voltage(dev.terminals[1])


def _bump(level):
    return H_REL_STEP * abs(level) if level else H_REL_STEP


def _with_level(circuit, dev, level):
    return circuit.replace_device(dataclasses.replace(dev, params=Dc(level)))


def extract_hparams_numeric(circuit: Circuit, input_port: str, output_port: str) -> HParams:
    """h-parameters by central differences around the DC operating point.

    Ports are the voltage sources biasing the mirror input and output.
    ``h11``/``h21`` perturb the input source with the output source fixed;
    ``h12``/``h22`` replace the input source by a current source carrying its
    bias current and perturb the output source.
    """
    circuit = circuit if circuit.validated else validate(circuit)
    # directives may name the ports as voltage sources; they are irrelevant here
    circuit = validate(dataclasses.replace(circuit, directives=()))
    vin, vout = circuit.device(input_port), circuit.device(output_port)
    for dev in (vin, vout):
        if dev.kind != "vsource":
            raise AnalysisError(f"port {dev.name} is not a voltage source")
    op = solve_dc(circuit)

    def solve(c, what):
        try:
            return solve_dc(validate(c), guess=op)
        except (ConvergenceError, SingularCircuitError) as exc:
            raise ConvergenceError(f"h-parameter extraction failed at {what}: {exc}") from exc

    v1 = vin.params.dc
    h = _bump(v1)
    lo = solve(_with_level(circuit, vin, v1 - h), f"{vin.name}={v1 - h:.9g}")
    hi = solve(_with_level(circuit, vin, v1 + h), f"{vin.name}={v1 + h:.9g}")
    di1 = _port_current(hi, vin.name) - _port_current(lo, vin.name)
    di2 = _port_current(hi, vout.name) - _port_current(lo, vout.name)
    if di1 == 0.0:
        raise AnalysisError("input port draws no incremental current (device off?)")
    h11 = 2.0 * h / di1
    h21 = di2 / di1

    i1 = _port_current(op, vin.name)
    a, b = vin.terminals
    feed = Device(vin.name, "isource", (b, a), Dc(i1))
    driven = circuit.replace_device(feed)
    v2 = vout.params.dc
    h = _bump(v2)
    lo = solve(_with_level(driven, vout, v2 - h), f"{vout.name}={v2 - h:.9g}")
    hi = solve(_with_level(driven, vout, v2 + h), f"{vout.name}={v2 + h:.9g}")
    h12 = (_port_voltage(hi, vin) - _port_voltage(lo, vin)) / (2.0 * h)
    h22 = (_port_current(hi, vout.name) - _port_current(lo, vout.name)) / (2.0 * h)
    return HParams(h11, h12, h21, h22)


# -- fits and loops ----------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float


def linear_fit(x, y) -> FitResult:
    """Ordinary least squares; ``r_squared`` is 1 for zero-variance ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError("x and y must be 1-D and the same length")
    if x.size < 3:
        raise AnalysisError(f"a fit needs at least 3 points, got {x.size}")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if not sxx > 0:
        raise AnalysisError("x values are all equal; slope undefined")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    if ss_tot == 0.0:
        return FitResult(slope, intercept, 1.0)
    res = y - (slope * x + intercept)
    r2 = 1.0 - float(res @ res) / ss_tot
    return FitResult(slope, intercept, min(1.0, max(0.0, r2)))


def loop_area(v, i) -> float:
    """Total enclosed area of an I-V trajectory with lobes meeting at ``v = 0``.

    The trajectory is cut wherever ``v`` changes sign; each piece is closed
    and its shoelace area taken in absolute value, so oppositely oriented
    lobes of a pinched loop add up instead of cancelling.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    sign = np.sign(v)
    cuts = np.flatnonzero(sign[1:] * sign[:-1] < 0) + 1
    total = 0.0
    for seg_v, seg_i in zip(np.split(v, cuts), np.split(i, cuts)):
        if seg_v.size >= 3:
            total += 0.5 * abs(
                float(seg_v @ np.roll(seg_i, -1) - seg_i @ np.roll(seg_v, -1))
            )
    return total


__all__ = [
    "THDReport",
    "HParams",
    "SmallSignalView",
    "FitResult",
    "fourier_coefficients",
    "thd",
    "thd_report",
    "small_signal_view",
    "analytic_hparams",
    "extract_hparams_numeric",
    "linear_fit",
    "loop_area",
]
