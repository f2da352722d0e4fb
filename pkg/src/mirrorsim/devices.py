"""Device constitutive relations.

Memristor
    Static metastable-switch (MSS) mapping from an initial resistance to the
    fraction of switches in the ON state, the MSS conductance, and windowed
    linear ion-drift dynamics gated by a voltage threshold.  ``x = 1`` is the
    all-ON / lowest-resistance state.

MOSFET
    Long-channel square-law NMOS with channel-length modulation.  Bulk is
    tied to source; drain and source swap when ``v_ds < 0``.

Every function here is pure; the MOSFET law is numba-compiled because the
solver kernels call it in their inner loops.  Parameter records are frozen dataclasses and
deliberately do not validate on construction so that a parsed-but-invalid
circuit can still be represented and reported by :func:`netlist.validate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit


@dataclass(frozen=True)
class MemristorParams:
    r_on: float = 500.0
    r_off: float = 1500.0
    r_init: float = 500.0
    d: float = 10e-9
    mu_d: float = 1e-14
    p: int = 5
    v_t: float = 0.27

    def problems(self):
        """Return ``(parameter, reason)`` pairs for every violated invariant."""
        out = []
        for name in ("r_on", "r_off", "r_init", "d", "mu_d", "v_t"):
            if not math.isfinite(getattr(self, name)):
                out.append((name, "must be finite"))
        if out:
            return out
        if not self.r_on > 0:
            out.append(("r_on", "must be > 0"))
        if not self.r_on < self.r_off:
            out.append(("r_off", "requires r_on < r_off"))
        if not self.r_on <= self.r_init <= self.r_off:
            out.append(("r_init", "requires r_on <= r_init <= r_off"))
        if not self.d > 0:
            out.append(("d", "must be > 0"))
        if not self.mu_d > 0:
            out.append(("mu_d", "must be > 0"))
        if not (isinstance(self.p, int) and self.p >= 1):
            out.append(("p", "must be an integer >= 1"))
        if not self.v_t >= 0:
            out.append(("v_t", "must be >= 0"))
        return out

    @property
    def drift_rate(self):
        """Coefficient ``mu_d * r_on / d**2`` of the state equation, in 1/(A*s)."""
        return self.mu_d * self.r_on / self.d**2


@dataclass(frozen=True)
class MemristorState:
    x: float


@dataclass(frozen=True)
class MosfetParams:
    w: float
    l: float
    lint: float = 0.0
    vt0: float = 0.5
    kp: float = 200e-6
    lam: float = 0.05

    @property
    def l_eff(self):
        return self.l - 2.0 * self.lint

    @property
    def beta(self):
        """``kp * W / L_eff`` in A/V^2."""
        return self.kp * self.w / self.l_eff

    def problems(self):
        out = []
        for name in ("w", "l", "lint", "vt0", "kp", "lam"):
            if not math.isfinite(getattr(self, name)):
                out.append((name, "must be finite"))
        if out:
            return out
        if not self.w > 0:
            out.append(("w", "must be > 0"))
        if not self.l_eff > 0:
            out.append(("lint", "effective length l - 2*lint must be > 0"))
        if not self.kp > 0:
            out.append(("kp", "must be > 0"))
        if not self.lam >= 0:
            out.append(("lam", "must be >= 0"))
        return out


@dataclass(frozen=True)
class DeviceEval:
    """Branch current and its partials w.r.t. the controlling voltages.

    For the MOSFET the controlling voltages are ``(v_gs, v_ds)`` so
    ``d_current_d_v == (gm, gds)``.
    """

    current: float
    d_current_d_v: tuple[float, ...]

    @property
    def gm(self):
        return self.d_current_d_v[0]

    @property
    def gds(self):
        return self.d_current_d_v[1]


# -- memristor ---------------------------------------------------------------


def mss_on_fraction(params: MemristorParams) -> float:
    """Fraction of metastable switches ON for a device that starts at ``r_init``."""
    r_on, r_off, r_init = params.r_on, params.r_off, params.r_init
    x = r_on * (r_init - r_off) / (r_init * (r_on - r_off))
    return min(1.0, max(0.0, x))


def mss_conductance(x: float, params: MemristorParams) -> float:
    return x / params.r_on + (1.0 - x) / params.r_off


@njit(cache=True)
def window(x: float, p: int) -> float:
    """Boundary-locking window ``1 - (2x - 1)**(2p)``."""
    return 1.0 - (2.0 * x - 1.0) ** (2 * p)


@njit(cache=True)
def drift_update(x, current, voltage, dt, rate, p, v_t):
    """Scalar core of :func:`memristor_step`; ``rate`` is ``mu_d * r_on / d**2``."""
    if abs(voltage) < v_t:
        return x
    x_new = x + dt * rate * current * window(x, p)
    return min(1.0, max(0.0, x_new))


def memristance(x: float, params: MemristorParams) -> float:
    return params.r_on * x + params.r_off * (1.0 - x)


def memristor_step(
    state: MemristorState,
    branch_current: float,
    branch_voltage: float,
    dt: float,
    params: MemristorParams,
) -> MemristorState:
    """Advance the drift state by one explicit step.

    Below the threshold voltage the state is frozen.  The result is clamped
    to [0, 1].
    """
    x = drift_update(
        float(state.x), float(branch_current), float(branch_voltage), float(dt),
        params.drift_rate, int(params.p), float(params.v_t),
    )
    return state if x == state.x else MemristorState(x)


# -- MOSFET ------------------------------------------------------------------


@njit(cache=True)
def _forward(v_gs, v_ds, beta, vt0, lam):
    # v_ds >= 0 here
    vov = v_gs - vt0
    if vov <= 0.0:
        return 0.0, 0.0, 0.0
    clm = 1.0 + lam * v_ds
    if v_ds < vov:
        core = vov * v_ds - 0.5 * v_ds * v_ds
        i = beta * core * clm
        gm = beta * v_ds * clm
        gds = beta * ((vov - v_ds) * clm + core * lam)
    else:
        core = 0.5 * vov * vov
        i = beta * core * clm
        gm = beta * vov * clm
        gds = beta * core * lam
    return i, gm, gds


@njit(cache=True)
def mosfet_iv(v_gs, v_ds, beta, vt0, lam):
    """Scalar fast path of :func:`mosfet_eval`: ``(i, gm, gds)`` for precomputed ``beta``.

    Compiled so the solver kernels can call it directly.
    """
    if v_ds >= 0.0:
        return _forward(v_gs, v_ds, beta, vt0, lam)
    # swapped: v_gs' = v_gs - v_ds, v_ds' = -v_ds, i = -f(v_gs', v_ds')
    i, f1, f2 = _forward(v_gs - v_ds, -v_ds, beta, vt0, lam)
    return -i, -f1, f1 + f2


def mosfet_eval(v_gs: float, v_ds: float, params: MosfetParams) -> DeviceEval:
    """Drain current (drain -> source) with ``gm = di/dv_gs`` and ``gds = di/dv_ds``.

    For ``v_ds < 0`` the physical drain and source swap roles; the returned
    current is then negative and the partials are still taken w.r.t. the
    original terminal voltages.
    """
    i, gm, gds = mosfet_iv(float(v_gs), float(v_ds), params.beta, params.vt0, params.lam)
    return DeviceEval(i, (gm, gds))
