"""MNA assembly, Newton-Raphson DC solution, DC sweeps and transient analysis.

Unknowns are the non-ground node voltages followed by one branch current per
voltage source.  A voltage source's branch current is positive when it flows
from the + terminal through the source to the - terminal.  Internally every
vector carries one extra trailing slot that stands for ground, so stamps can
index node ``-1`` without branching; that slot is dropped before solving.

Transient analysis uses a fixed step ``1 / (f0 * ppp)``, backward Euler for
the first step and the trapezoidal rule afterwards.  Memristor states are
advanced explicitly once per accepted step (first-order splitting): inside a
step each memristor is a plain resistor of value ``R(x)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as kern
from . import devices as dv
from .errors import ConvergenceError, SingularCircuitError, ValidationError
from .netlist import GROUND, Circuit, DcSweep, Dc, Sine, Tran, set_param, validate

log = logging.getLogger(__name__)

VTOL = 1e-9  # V, Newton update
ITOL = 1e-9  # A, KCL residual
MAX_ITER = 100
STEP_LIMIT = 1.0  # V, largest node update per Newton iteration
GMIN_LADDER = [10.0**-k for k in range(3, 13)]
SOURCE_STEPS = [k / 10 for k in range(1, 11)]


@dataclass
class SystemMatrix:
    """Linearized MNA system ``matrix @ x = rhs`` at a given guess."""

    matrix: np.ndarray
    rhs: np.ndarray
    unknowns: list

    @property
    def dimension(self):
        return len(self.unknowns)


@dataclass(frozen=True)
class OperatingPoint:
    node_voltages: dict
    branch_currents: dict
    device_small_signal: dict  # nmos name -> (gm, gds)
    memristor_states: dict
    kcl_residual: float = 0.0
    iterations: int = 0
    vector: np.ndarray = field(default=None, repr=False, compare=False)

    def voltage(self, node):
        return 0.0 if node == GROUND else self.node_voltages[node]

    def current(self, device):
        return _lookup(self.branch_currents, device)

    def observables(self):
        out = {f"V({n})": v for n, v in self.node_voltages.items()}
        out.update({f"I({n})": i for n, i in self.branch_currents.items()})
        return out


@dataclass(frozen=True)
class Waveforms:
    time: np.ndarray
    signals: dict
    memristor_states: dict
    dt: float
    ppp: int
    periods: int
    f0: float | None = None

    def __getitem__(self, name):
        return _lookup(self.signals, name)


@dataclass(frozen=True)
class SweepResult:
    param_values: np.ndarray
    observables: dict
    metadata: dict

    def __getitem__(self, name):
        return _lookup(self.observables, name)


def _lookup(mapping, key):
    if key in mapping:
        return mapping[key]
    upper = key.upper()
    for k, v in mapping.items():
        if k.upper() == upper:
            return v
    raise KeyError(key)


class _NewtonFailure(Exception):
    def __init__(self, singular, residual, iterations):
        super().__init__()
        self.singular = singular
        self.residual = residual
        self.iterations = iterations


class _Layout:
    """Index bookkeeping and static stamps for one circuit topology."""

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        self.node_names = sorted(n for n in circuit.nodes if n != GROUND)
        nn = len(self.node_names)
        idx = {n: i for i, n in enumerate(self.node_names)}
        idx[GROUND] = -1
        self.index = idx
        self.n_nodes = nn
        vsrc = circuit.of_kind("vsource")
        self.size = nn + len(vsrc)
        self.unknowns = [f"V({n})" for n in self.node_names] + [f"I({d.name})" for d in vsrc]

        self.resistors, self.capacitors, self.isources = [], [], []
        self.vsources, self.mosfets, self.memristors = [], [], []
        for dev in circuit.devices:
            t = [idx[n] for n in dev.terminals]
            if dev.kind == "resistor":
                self.resistors.append((t[0], t[1], 1.0 / dev.params))
            elif dev.kind == "capacitor":
                self.capacitors.append((t[0], t[1], dev.params, dev.name))
            elif dev.kind == "isource":
                self.isources.append((t[0], t[1], dev.params, dev.name))
            elif dev.kind == "vsource":
                row = nn + len(self.vsources)
                self.vsources.append((row, t[0], t[1], dev.params, dev.name))
            elif dev.kind == "nmos":
                p = dev.params
                self.mosfets.append((t[0], t[1], t[2], p.beta, p.vt0, p.lam, dev.name))
            elif dev.kind == "memristor":
                self.memristors.append((t[0], t[1], dev.params, dev.name))

        n1 = self.size + 1
        base = np.zeros((n1, n1))
        for a, b, g in self.resistors:
            _stamp_g(base, a, b, g)
        for row, a, b, _, _ in self.vsources:
            base[a, row] += 1.0
            base[b, row] -= 1.0
            base[row, a] += 1.0
            base[row, b] -= 1.0
        base[-1, :] = 0.0
        base[:, -1] = 0.0
        self.base = base
        ground = self.size
        self.mos_i = np.array([m[:3] for m in self.mosfets], dtype=np.int64).reshape(-1, 3) % (ground + 1)
        self.mos_f = np.array([m[3:6] for m in self.mosfets], dtype=float).reshape(-1, 3)

    def matrix(self, mem_x, cap_geq=0.0):
        A = self.base.copy()
        for (a, b, p, _), x in zip(self.memristors, mem_x):
            _stamp_g(A, a, b, 1.0 / dv.memristance(x, p))
        if cap_geq:
            for a, b, c, _ in self.capacitors:
                _stamp_g(A, a, b, cap_geq * c)
        A[-1, :] = 0.0
        A[:, -1] = 0.0
        return A

    def sources(self, t=None, scale=1.0):
        """Source part of the rhs; ``t=None`` evaluates sources at their DC value."""
        b = np.zeros(self.size + 1)
        for row, _, _, wf, _ in self.vsources:
            b[row] = scale * (wf.dc if t is None else wf.value(t))
        for a, c, wf, _ in self.isources:
            i = scale * (wf.dc if t is None else wf.value(t))
            b[a] -= i
            b[c] += i
        b[-1] = 0.0
        return b

    def source_terms(self):
        """``(b0, [(vector, frequency, phase_rad)])`` so that ``b(t) = b0 + sum(v*sin(w t + ph))``."""
        b0 = np.zeros(self.size + 1)
        terms = []
        entries = [(row, None, wf) for row, _, _, wf, _ in self.vsources]
        entries += [(a, c, wf) for a, c, wf, _ in self.isources]
        for first, second, wf in entries:
            vec = np.zeros(self.size + 1)
            if second is None:
                vec[first] = 1.0
            else:
                vec[first] -= 1.0
                vec[second] += 1.0
            vec[-1] = 0.0
            b0 += wf.dc * vec
            if isinstance(wf, Sine) and wf.amplitude:
                terms.append((wf.amplitude * vec, wf.frequency, math.radians(wf.phase)))
        return b0, terms

    def residual(self, A, b, x, gmin=0.0):
        """Full residual ``F(x)`` and Jacobian at ``x`` (ground slot is junk)."""
        return kern.residual(A, b, x, float(gmin), self.n_nodes, self.mos_i, self.mos_f)


def _stamp_g(A, a, b, g):
    A[a, a] += g
    A[b, b] += g
    A[a, b] -= g
    A[b, a] -= g


def _newton(layout, A, b, x0, gmin=0.0):
    x, it, status, resid = kern.newton(
        A, b, x0, float(gmin), layout.size, layout.n_nodes, layout.mos_i, layout.mos_f,
        MAX_ITER, VTOL, ITOL, STEP_LIMIT,
    )
    if status != kern.OK:
        raise _NewtonFailure(status == kern.SINGULAR, resid, it)
    return x, it


def _solve_with_fallbacks(layout, A, b_full, x0):
    """Plain Newton, then gmin stepping, then source stepping."""
    failures = []
    try:
        return _newton(layout, A, b_full, x0)
    except _NewtonFailure as exc:
        if exc.singular and _structurally_singular(layout, A):
            raise SingularCircuitError(
                "MNA matrix is singular for any bias (voltage-source loop or current forced into a capacitor?)"
            ) from None
        failures.append(exc)
        log.debug("newton failed (residual %.3g); trying gmin stepping", exc.residual)

    x = x0.copy()
    try:
        total = 0
        for gmin in GMIN_LADDER + [0.0]:
            x, it = _newton(layout, A, b_full, x, gmin=gmin)
            total += it
        return x, total
    except _NewtonFailure as exc:
        failures.append(exc)
        log.debug("gmin stepping failed; trying source stepping")

    x = np.zeros_like(x0)
    try:
        total = 0
        b_dc = b_full
        for s in SOURCE_STEPS:
            x, it = _newton(layout, A, b_dc * s, x)
            total += it
        return x, total
    except _NewtonFailure as exc:
        failures.append(exc)

    if all(f.singular for f in failures):
        raise SingularCircuitError("MNA matrix is singular (voltage-source loop or isolated node?)")
    last = failures[-1]
    raise ConvergenceError(
        f"DC operating point did not converge after gmin and source stepping "
        f"(last KCL residual {last.residual:.3g} A, iterations per attempt "
        f"{[f.iterations for f in failures]})",
        residual=last.residual,
        iterations=[f.iterations for f in failures],
    )


def _structurally_singular(layout, A):
    """True when the Jacobian stays singular with every MOSFET conducting.

    A zero-bias Jacobian can be singular merely because transistors are in
    cutoff; stamping a generic gm/gds on each one separates that case from a
    topology that no operating point can fix.
    """
    n = layout.size
    J = A.copy()
    for d, g, s, *_ in layout.mosfets:
        _stamp_g(J, d, s, 0.7)
        J[d, g] += 1.3
        J[d, s] -= 1.3
        J[s, g] -= 1.3
        J[s, s] += 1.3
    J = J[:n, :n]
    return n > 0 and np.linalg.matrix_rank(J) < n


def _ensure_valid(circuit):
    return circuit if circuit.validated else validate(circuit)


def initial_states(circuit: Circuit) -> dict:
    """Memristor state fractions derived from each device's ``r_init``."""
    return {d.name: dv.mss_on_fraction(d.params) for d in circuit.of_kind("memristor")}


def assemble_mna(circuit: Circuit, guess=None, memristor_states=None) -> SystemMatrix:
    """Linearize the DC MNA system at ``guess`` (an OperatingPoint or None = all zero)."""
    circuit = _ensure_valid(circuit)
    layout = _Layout(circuit)
    states = initial_states(circuit)
    if memristor_states:
        states.update(memristor_states)
    mem_x = [states[m[3]] for m in layout.memristors]
    A = layout.matrix(mem_x)
    b = layout.sources()
    x = _guess_vector(layout, guess)
    J, F = layout.residual(A, b, x)
    n = layout.size
    rhs = J[:n, :n] @ x[:n] - F[:n]
    return SystemMatrix(J[:n, :n], rhs, list(layout.unknowns))


def _guess_vector(layout, guess):
    x = np.zeros(layout.size + 1)
    if guess is None:
        return x
    for i, name in enumerate(layout.node_names):
        x[i] = guess.node_voltages.get(name, 0.0)
    for row, _, _, _, name in layout.vsources:
        x[row] = guess.branch_currents.get(name, 0.0)
    return x


def _device_currents(layout, x, mem_x, cap_currents=None, t=None):
    currents = {}
    small = {}
    circuit = layout.circuit
    idx = layout.index
    for dev in circuit.devices:
        v = [x[idx[n]] for n in dev.terminals]
        if dev.kind == "resistor":
            currents[dev.name] = (v[0] - v[1]) / dev.params
        elif dev.kind == "capacitor":
            currents[dev.name] = 0.0 if cap_currents is None else cap_currents[dev.name]
        elif dev.kind == "isource":
            currents[dev.name] = dev.params.dc if t is None else dev.params.value(t)
        elif dev.kind == "nmos":
            ev = dv.mosfet_eval(v[1] - v[2], v[0] - v[2], dev.params)
            currents[dev.name] = ev.current
            small[dev.name] = (ev.gm, ev.gds)
    for row, _, _, _, name in layout.vsources:
        currents[name] = x[row]
    for (a, b, p, name), xm in zip(layout.memristors, mem_x):
        currents[name] = (x[a] - x[b]) / dv.memristance(xm, p)
    ordered = {d.name: currents[d.name] for d in circuit.devices}
    return ordered, small


def _operating_point(layout, x, mem_x, A, b, iterations):
    _, F = layout.residual(A, b, x)
    nn = layout.n_nodes
    resid = float(np.max(np.abs(F[:nn]))) if nn else 0.0
    currents, small = _device_currents(layout, x, mem_x)
    return OperatingPoint(
        node_voltages={n: float(x[i]) for i, n in enumerate(layout.node_names)},
        branch_currents={k: float(v) for k, v in currents.items()},
        device_small_signal=small,
        memristor_states={m[3]: xm for m, xm in zip(layout.memristors, mem_x)},
        kcl_residual=resid,
        iterations=iterations,
        vector=x[: layout.size].copy(),
    )


def solve_dc(circuit: Circuit, guess: OperatingPoint | None = None, memristor_states=None) -> OperatingPoint:
    """DC operating point; capacitors open, sine sources at their offset.

    Memristor states default to the MSS fraction implied by ``r_init``.
    Raises :class:`ConvergenceError` or :class:`SingularCircuitError`.
    """
    circuit = _ensure_valid(circuit)
    layout = _Layout(circuit)
    states = initial_states(circuit)
    if memristor_states:
        states.update(memristor_states)
    mem_x = [states[m[3]] for m in layout.memristors]
    A = layout.matrix(mem_x)
    b = layout.sources()
    x, iterations = _solve_with_fallbacks(layout, A, b, _guess_vector(layout, guess))
    return _operating_point(layout, x, mem_x, A, b, iterations)


# -- sweeps ------------------------------------------------------------------


def mirror_branches(circuit: Circuit):
    """Guess the (reference, output) transistor pair of a current mirror.

    The reference is the first diode-connected NMOS (gate tied to drain); the
    output is the first other NMOS sharing its gate node without being
    diode-connected.  Returns None when no such pair exists.
    """
    mos = circuit.of_kind("nmos")
    for ref in mos:
        d, g, _ = ref.terminals
        if d != g:
            continue
        for out in mos:
            if out is not ref and out.terminals[1] == g and out.terminals[0] != out.terminals[1]:
                return ref.name, out.name
    return None


def dc_sweep(circuit: Circuit, directive: DcSweep, ref=None, out=None, values=None) -> SweepResult:
    """One :func:`solve_dc` per sweep point, each seeded with the previous solution.

    ``ref``/``out`` name the devices whose currents become ``I_ref``/``I_out``
    (``dI = I_ref - I_out``); by default the mirror pair is detected.
    ``values`` replaces the directive's start/stop/step grid with explicit,
    strictly monotone points.
    """
    circuit = _ensure_valid(circuit)
    if ref is None and out is None:
        pair = mirror_branches(circuit)
        if pair:
            ref, out = pair
    if values is None:
        values = directive.values()
    else:
        values = [float(v) for v in values]
        steps = [b - a for a, b in zip(values, values[1:])]
        if not values or not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            raise ValidationError("sweep values must be non-empty and strictly monotone")
    rows = []
    prev = None
    for v in values:
        c = validate(set_param(circuit, directive.path, v))
        try:
            op = solve_dc(c, guess=prev)
        except (ConvergenceError, SingularCircuitError) as exc:
            raise ConvergenceError(f"dc sweep failed at {directive.path}={v:.6g}: {exc}") from exc
        rows.append(op.observables())
        prev = op
    observables = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    if ref is not None and out is not None:
        i_ref = observables[f"I({circuit.device(ref).name})"]
        i_out = observables[f"I({circuit.device(out).name})"]
        observables["I_ref"] = i_ref
        observables["I_out"] = i_out
        observables["dI"] = i_ref - i_out
    sources = {
        d.name: d.params for d in circuit.devices if d.kind in ("vsource", "isource")
    }
    meta = {"path": directive.path, "sources": sources, "ref": ref, "out": out}
    return SweepResult(np.array(values, dtype=float), observables, meta)


# -- transient ---------------------------------------------------------------


def fundamental(circuit: Circuit):
    """Frequency of the circuit's sine source(s), or None when there is none."""
    freqs = {
        d.params.frequency
        for d in circuit.devices
        if d.kind in ("vsource", "isource") and isinstance(d.params, Sine)
    }
    if len(freqs) > 1:
        raise ValidationError(f"transient needs a single fundamental, found {sorted(freqs)} Hz")
    return freqs.pop() if freqs else None


def tran_for(circuit: Circuit, ppp=1024, periods=10) -> Tran:
    """A ``Tran`` directive spanning ``periods`` periods of the circuit's sine source."""
    f0 = fundamental(circuit)
    if f0 is None:
        raise ValidationError("circuit has no sine source")
    return Tran(periods / f0, ppp=ppp, periods=periods)


def _frozen_at_zero(dev):
    if dev.kind in ("vsource", "isource") and isinstance(dev.params, Sine):
        return dev.__class__(dev.name, dev.kind, dev.terminals, Dc(dev.params.value(0.0)))
    return dev


def _uic_start(circuit, layout):
    """t=0 point with every capacitor held at 0 V."""
    shorted = Circuit(
        nodes=circuit.nodes,
        devices=tuple(
            d.__class__(d.name, "vsource", d.terminals, Dc(0.0)) if d.kind == "capacitor" else _frozen_at_zero(d)
            for d in circuit.devices
        ),
    )
    op = solve_dc(validate(shorted))
    x = np.zeros(layout.size + 1)
    for i, n in enumerate(layout.node_names):
        x[i] = op.node_voltages[n]
    for row, _, _, _, name in layout.vsources:
        x[row] = op.branch_currents[name]
    caps = np.array([op.branch_currents[c[3]] for c in layout.capacitors])
    return x, caps


def transient(circuit: Circuit, directive: Tran) -> Waveforms:
    """Fixed-step transient over ``directive.periods`` fundamental periods.

    Starts from the DC operating point with sources at their t=0 values
    or, with ``uic``, from all capacitor voltages at zero.
    """
    circuit = _ensure_valid(circuit)
    f0 = fundamental(circuit)
    periods, ppp = directive.periods, directive.ppp
    if f0 is not None:
        period = 1.0 / f0
        if not math.isclose(directive.tstop, periods * period, rel_tol=1e-6):
            raise ValidationError(
                f".tran tstop={directive.tstop:g} must equal periods/f0 = {periods * period:g}"
            )
    else:
        period = directive.tstop / periods
    dt = period / ppp
    n_steps = ppp * periods
    if not dt > 0 or n_steps * dt == (n_steps - 1) * dt:
        raise ConvergenceError(f"time step {dt:g} s underflows", time=0.0)

    layout = _Layout(circuit)
    n = layout.size
    states = initial_states(circuit)
    mems = layout.memristors
    caps = layout.capacitors

    if directive.uic:
        x, i_cap = _uic_start(circuit, layout)
    else:
        op = solve_dc(validate(Circuit(circuit.nodes, tuple(map(_frozen_at_zero, circuit.devices)))))
        x = np.zeros(n + 1)
        x[:n] = op.vector
        i_cap = np.zeros(len(caps))

    b0, terms = layout.source_terms()
    steps = np.arange(n_steps + 1) * dt
    B = np.tile(b0, (n_steps + 1, 1))
    for vec, freq, phase in terms:
        B += np.outer(np.sin(2.0 * math.pi * freq * steps + phase), vec)

    wrap = n + 1
    cap_ab = np.array([c[:2] for c in caps], dtype=np.int64).reshape(-1, 2) % wrap
    cap_c = np.array([c[2] for c in caps], dtype=float)
    mem_ab = np.array([m[:2] for m in mems], dtype=np.int64).reshape(-1, 2) % wrap
    mem_f = np.array(
        [(m[2].r_on, m[2].r_off, m[2].drift_rate, m[2].v_t) for m in mems], dtype=float
    ).reshape(-1, 4)
    mem_p = np.array([m[2].p for m in mems], dtype=np.int64)
    mem_x0 = np.array([states[m[3]] for m in mems], dtype=float)

    X, I_cap, M, status, failed, resid = kern.transient(
        layout.base, B, dt, x, np.asarray(i_cap, dtype=float), cap_ab, cap_c,
        mem_ab, mem_f, mem_p, mem_x0, n, layout.n_nodes, layout.mos_i, layout.mos_f,
        MAX_ITER, VTOL, ITOL, STEP_LIMIT,
    )
    if status != kern.OK:
        raise ConvergenceError(
            f"transient Newton failed at t={failed * dt:.6g} s (residual {resid:.3g} A)",
            residual=resid,
            time=failed * dt,
        )

    time = np.arange(n_steps + 1) * dt
    signals = {}
    for i, name in enumerate(layout.node_names):
        signals[f"V({name})"] = X[:, i].copy()
    signals.update(_waveform_currents(layout, X, I_cap, M, time))
    mem_states = {m[3]: M[:, j].copy() for j, m in enumerate(mems)}
    return Waveforms(time, signals, mem_states, dt, ppp, periods, f0)


def _waveform_currents(layout, X, I_cap, M, time):
    idx = layout.index
    out = {}
    caps = {c[3]: j for j, c in enumerate(layout.capacitors)}
    mems = {m[3]: j for j, m in enumerate(layout.memristors)}
    rows = {name: row for row, _, _, _, name in layout.vsources}
    for dev in layout.circuit.devices:
        v = [X[:, idx[n]] for n in dev.terminals]
        if dev.kind == "resistor":
            cur = (v[0] - v[1]) / dev.params
        elif dev.kind == "capacitor":
            cur = I_cap[:, caps[dev.name]].copy()
        elif dev.kind == "vsource":
            cur = X[:, rows[dev.name]].copy()
        elif dev.kind == "isource":
            cur = np.array([dev.params.value(t) for t in time])
        elif dev.kind == "nmos":
            p = dev.params
            beta = p.beta
            vgs, vds = v[1] - v[2], v[0] - v[2]
            cur = np.array(
                [dv.mosfet_iv(g, d, beta, p.vt0, p.lam)[0] for g, d in zip(vgs.tolist(), vds.tolist())]
            )
        else:
            p = dev.params
            r = p.r_on * M[:, mems[dev.name]] + p.r_off * (1.0 - M[:, mems[dev.name]])
            cur = (v[0] - v[1]) / r
        out[f"I({dev.name})"] = cur
    return out
