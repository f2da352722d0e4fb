"""Shared test utilities that do not go through the engine."""

import numpy as np

from mirrorsim import devices as dv
from mirrorsim.netlist import GROUND


def mirror_netlist(w1, l1, w2, l2, lam=0.05, vdd=3.0, rb=10e3, vout=3.0):
    return (
        f"VDD vsrc vdd 0 {vdd!r}\n"
        f"RB res vdd g {rb!r}\n"
        f"M1 nmos g g 0 W={w1!r} L={l1!r} LAMBDA={lam!r}\n"
        f"M2 nmos out g 0 W={w2!r} L={l2!r} LAMBDA={lam!r}\n"
        f"VOUT vsrc out 0 {vout!r}\n"
    )


def random_ladder(n, rnd):
    """Series/shunt resistor ladder driven by a DC source.

    Returns the netlist and node voltages from an independent nodal solve.
    """
    vs = rnd.uniform(-10, 10)
    series = [rnd.uniform(1, 1e5) for _ in range(n)]
    shunt = [rnd.uniform(1, 1e5) for _ in range(n)]
    lines = [f"V1 vsrc n0 0 {vs!r}"]
    for k in range(n):
        lines.append(f"RS{k} res n{k} n{k + 1} {series[k]!r}")
        lines.append(f"RP{k} res n{k + 1} 0 {shunt[k]!r}")
    # unknowns n1..nn; n0 is pinned to vs
    G = np.zeros((n, n))
    rhs = np.zeros(n)
    for k in range(n):
        g = 1.0 / series[k]
        i = k  # node n{k+1}
        G[i, i] += g + 1.0 / shunt[k]
        if k == 0:
            rhs[i] += g * vs
        else:
            G[i, i - 1] -= g
            G[i - 1, i] -= g
            G[i - 1, i - 1] += g
    v = np.linalg.solve(G, rhs)
    expected = {"n0": vs, **{f"n{k + 1}": float(v[k]) for k in range(n)}}
    return "\n".join(lines) + "\n", expected


def kcl_residuals(circuit, voltages, currents, states=None):
    """Net current leaving each node, rebuilt from the device laws.

    Voltage-source and capacitor currents are taken from ``currents``;
    every other device current is recomputed from ``voltages``.
    """
    states = states or {}

    def v(node):
        return 0.0 if node == GROUND else voltages[node]

    net = {n: 0.0 for n in circuit.nodes if n != GROUND}
    for dev in circuit.devices:
        if dev.kind == "nmos":
            d, g, s = dev.terminals
            i = dv.mosfet_eval(v(g) - v(s), v(d) - v(s), dev.params).current
            a, b = d, s
        else:
            a, b = dev.terminals
            if dev.kind == "resistor":
                i = (v(a) - v(b)) / dev.params
            elif dev.kind == "memristor":
                i = (v(a) - v(b)) / dv.memristance(states[dev.name], dev.params)
            elif dev.kind == "isource":
                i = currents[dev.name]
            else:
                i = currents[dev.name]
        if a != GROUND:
            net[a] += i
        if b != GROUND:
            net[b] -= i
    return net


def hparam_bench(rnd, memristor=False):
    """Random mirror two-port bench inside the first-order regime.

    W/L in [2, 10], overdrive in [0.1, 0.2] V and lambda up to 0.05 keep
    the gds1/gm1 correction the analytic forms ignore below about 0.5 %.
    """
    vt0, kp = 0.5, 200e-6
    l1 = rnd.uniform(180e-9, 1e-6)
    w1 = l1 * rnd.uniform(2, 10)
    l2 = rnd.uniform(180e-9, 1e-6)
    w2 = l2 * rnd.uniform(2, 10)
    lam = rnd.uniform(0.0, 0.05)
    vov = rnd.uniform(0.1, 0.2)
    vout = rnd.uniform(1.0, 3.0)
    vgs = vt0 + vov
    vin = vgs
    lines = []
    vin_node = "in" if memristor else "g"
    if memristor:
        r_init = rnd.uniform(500, 1500)
        i1 = 0.5 * kp * w1 / l1 * vov**2 * (1 + lam * vgs)
        vin = vgs + i1 * r_init
        lines += [
            f"XMEM1 mem in g RON=500 ROFF=1500 RINIT={r_init!r}",
            f"XMEM2 mem out d2 RON=500 ROFF=1500 RINIT={r_init!r}",
        ]
        d2 = "d2"
    else:
        d2 = "out"
    lines += [
        f"VIN vsrc {vin_node} 0 DC {vin!r}",
        f"M1 nmos g g 0 W={w1!r} L={l1!r} VT0={vt0!r} KP={kp!r} LAMBDA={lam!r}",
        f"VOUT vsrc out 0 DC {vout!r}",
        f"M2 nmos {d2} g 0 W={w2!r} L={l2!r} VT0={vt0!r} KP={kp!r} LAMBDA={lam!r}",
    ]
    return "\n".join(lines) + "\n"
