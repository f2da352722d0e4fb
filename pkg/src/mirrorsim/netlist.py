"""Netlist parsing, validation and serialization.

Grammar (one element per line, UTF-8)::

    <name> [kind] <nodes...> <params...>

``kind`` is one of ``res cap vsrc isrc nmos mem``.  When it is omitted a
leading R/C/V/I in the name selects resistor/capacitor/vsource/isource;
``nmos`` and ``mem`` must always be spelled out.  Lines starting with ``*``
or ``#`` are comments and a leading ``+`` continues the previous line.

Examples::

    R1 1 0 1k
    VDD vsrc vdd 0 SIN(3 0.3 1k)
    M1 nmos d g 0 W=1.8u L=180n LINT=0 LAMBDA=0.05
    XMEM1 mem a g RON=500 ROFF=1500 RINIT=500 VT=0.27
    .dc M2.LINT -5n 5n 1n
    .tran 10m ppp=1024 periods=10
    .thd I(VOUT) f0=1k nh=9
    .hparam in=VIN out=VOUT

All values are converted to SI base units while parsing.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, DecimalException
from typing import Union

from .devices import MemristorParams, MosfetParams
from .errors import NetlistError, ValidationError

GROUND = "0"

KEYWORDS = {
    "res": "resistor",
    "cap": "capacitor",
    "vsrc": "vsource",
    "isrc": "isource",
    "nmos": "nmos",
    "mem": "memristor",
}
KIND_KEYWORD = {v: k for k, v in KEYWORDS.items()}
LETTER_KINDS = {"R": "resistor", "C": "capacitor", "V": "vsource", "I": "isource"}
TERMINAL_COUNT = {
    "resistor": 2,
    "capacitor": 2,
    "vsource": 2,
    "isource": 2,
    "nmos": 3,
    "memristor": 2,
}

# netlist keyword -> dataclass field
MOSFET_KEYS = {"W": "w", "L": "l", "LINT": "lint", "VT0": "vt0", "KP": "kp", "LAMBDA": "lam"}
MEMRISTOR_KEYS = {
    "RON": "r_on",
    "ROFF": "r_off",
    "RINIT": "r_init",
    "D": "d",
    "MU": "mu_d",
    "P": "p",
    "VT": "v_t",
}

_SUFFIX_EXP = {"f": -15, "p": -12, "n": -9, "u": -6, "m": -3, "k": 3, "meg": 6, "g": 9, "t": 12}
_EXP_SUFFIX = {v: k for k, v in _SUFFIX_EXP.items()}
_EXP_SUFFIX[0] = ""
_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:e[+-]?\d+)?)(meg|[fpnumkgt])?$", re.IGNORECASE
)
_OBSERVABLE_RE = re.compile(r"^([VvIi])\((.+)\)$")


# -- values ------------------------------------------------------------------


def parse_value(token: str) -> float:
    """Parse a number with an optional SI suffix (``1.5k``, ``17n``, ``2meg``)."""
    m = _VALUE_RE.match(token.strip())
    if m is None:
        raise NetlistError(f"cannot parse value {token!r}")
    number, suffix = m.groups()
    exp = _SUFFIX_EXP[suffix.lower()] if suffix else 0
    try:
        value = float(Decimal(number).scaleb(exp))
    except (DecimalException, OverflowError, ValueError):
        raise NetlistError(f"cannot parse value {token!r}") from None
    if not math.isfinite(value):
        raise NetlistError(f"value {token!r} is out of range")
    return value


def format_value(x: float) -> str:
    """Emit ``x`` with an engineering suffix; ``parse_value`` inverts it exactly."""
    x = float(x)
    if x == 0.0 or not math.isfinite(x):
        return repr(x)
    d = Decimal(repr(x))
    exp3 = min(12, max(-15, (d.adjusted() // 3) * 3))
    mant = d.scaleb(-exp3).normalize()
    text = format(mant, "f")
    return text + _EXP_SUFFIX[exp3]


def _parse_int(token: str, what: str) -> int:
    v = parse_value(token)
    if v != int(v):
        raise NetlistError(f"{what} must be an integer, got {token!r}")
    return int(v)


# -- data model --------------------------------------------------------------


@dataclass(frozen=True)
class Dc:
    level: float

    @property
    def dc(self):
        return self.level

    def value(self, t):
        return self.level


@dataclass(frozen=True)
class Sine:
    """``offset + amplitude * sin(2*pi*frequency*t + phase)``, phase in degrees."""

    offset: float
    amplitude: float
    frequency: float
    phase: float = 0.0

    @property
    def dc(self):
        return self.offset

    def value(self, t):
        return self.offset + self.amplitude * math.sin(
            2.0 * math.pi * self.frequency * t + math.radians(self.phase)
        )


SourceWaveform = Union[Dc, Sine]


@dataclass(frozen=True)
class Device:
    name: str
    kind: str
    terminals: tuple[str, ...]
    params: object  # float for R/C, SourceWaveform, MosfetParams or MemristorParams


@dataclass(frozen=True)
class Op:
    pass


@dataclass(frozen=True)
class DcSweep:
    path: str
    start: float
    stop: float
    step: float

    def values(self):
        span = (self.stop - self.start) / self.step
        n = int(math.floor(span + 1e-9)) + 1
        return [self.start + k * self.step for k in range(n)]


@dataclass(frozen=True)
class Tran:
    tstop: float
    ppp: int = 1024
    periods: int = 10
    uic: bool = False


@dataclass(frozen=True)
class Thd:
    observable: str
    f0: float
    n_harmonics: int = 9


@dataclass(frozen=True)
class HParam:
    input_port: str
    output_port: str


AnalysisDirective = Union[Op, DcSweep, Tran, Thd, HParam]


@dataclass(frozen=True)
class Circuit:
    nodes: frozenset
    devices: tuple
    directives: tuple = ()
    validated: bool = field(default=False, compare=False)

    def device(self, name: str) -> Device:
        key = name.upper()
        for dev in self.devices:
            if dev.name.upper() == key:
                return dev
        raise KeyError(name)

    def has_device(self, name: str) -> bool:
        key = name.upper()
        return any(d.name.upper() == key for d in self.devices)

    def of_kind(self, kind: str):
        return [d for d in self.devices if d.kind == kind]

    def replace_device(self, new: Device) -> Circuit:
        key = new.name.upper()
        devices = tuple(new if d.name.upper() == key else d for d in self.devices)
        return dataclasses.replace(self, devices=devices, validated=False)

    def directive(self, cls):
        """First directive of the given type, or None."""
        for d in self.directives:
            if isinstance(d, cls):
                return d
        return None


# -- parameter paths ---------------------------------------------------------


def get_param(circuit: Circuit, path: str) -> float:
    dev, attr, sub = _resolve(circuit, path)
    return getattr(sub, attr) if attr else sub


def set_param(circuit: Circuit, path: str, value: float) -> Circuit:
    """Return a copy of ``circuit`` with ``<device>.<PARAM>`` set to ``value``.

    Sources accept ``DC`` (level, or offset of a sine), ``AMP``, ``FREQ`` and
    ``PHASE``; resistors/capacitors accept ``R``/``C``/``VALUE``.
    """
    dev, attr, sub = _resolve(circuit, path)
    if attr is None:
        new_params = float(value)
    else:
        if attr == "p":
            if value != int(value):
                raise NetlistError(f"{path}: P must be an integer")
            value = int(value)
        else:
            value = float(value)
        new_params = dataclasses.replace(sub, **{attr: value})
    return circuit.replace_device(dataclasses.replace(dev, params=new_params))


def _resolve(circuit, path):
    if "." not in path:
        raise NetlistError(f"parameter path {path!r} must look like DEVICE.PARAM")
    name, key = path.rsplit(".", 1)
    try:
        dev = circuit.device(name)
    except KeyError:
        raise NetlistError(f"parameter path {path!r}: no device named {name!r}") from None
    key = key.upper()
    kind = dev.kind
    if kind in ("resistor", "capacitor"):
        if key in ("VALUE", "R" if kind == "resistor" else "C"):
            return dev, None, dev.params
    elif kind in ("vsource", "isource"):
        wf = dev.params
        if key == "DC":
            return dev, "level" if isinstance(wf, Dc) else "offset", wf
        sine_keys = {"AMP": "amplitude", "FREQ": "frequency", "PHASE": "phase"}
        if key in sine_keys and isinstance(wf, Sine):
            return dev, sine_keys[key], wf
    elif kind == "nmos":
        if key in MOSFET_KEYS:
            return dev, MOSFET_KEYS[key], dev.params
    elif kind == "memristor":
        if key in MEMRISTOR_KEYS:
            return dev, MEMRISTOR_KEYS[key], dev.params
    raise NetlistError(f"parameter path {path!r}: {kind} {dev.name} has no parameter {key}")


# -- parsing -----------------------------------------------------------------


def _logical_lines(text):
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "*#":
            continue
        if line[0] == "+":
            if current is None:
                raise NetlistError("continuation line with nothing to continue", lineno)
            current = (current[0], current[1] + " " + line[1:])
            continue
        if current is not None:
            yield current
        current = (lineno, line)
    if current is not None:
        yield current


def _tokenize(line):
    line = re.sub(r"\s*=\s*", "=", line)
    return re.findall(r"[()]|[^\s()]+", line)


def _keyvals(tokens, allowed, lineno, what):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise NetlistError(f"{what}: expected KEY=value, got {tok!r}", lineno)
        key, _, val = tok.partition("=")
        key = key.upper()
        if key not in allowed:
            raise NetlistError(f"{what}: unknown parameter {key!r}", lineno)
        if key in out:
            raise NetlistError(f"{what}: parameter {key} given twice", lineno)
        out[key] = val
    return out


def _parse_source(name, tokens, lineno):
    if not tokens:
        raise NetlistError(f"{name}: missing source value", lineno)
    head = tokens[0].upper()
    if head == "SIN":
        if len(tokens) < 2 or tokens[1] != "(" or tokens[-1] != ")":
            raise NetlistError(f"{name}: expected SIN(offset amplitude frequency [phase])", lineno)
        args = tokens[2:-1]
        if len(args) not in (3, 4):
            raise NetlistError(f"{name}: SIN takes 3 or 4 arguments", lineno)
        vals = [parse_value(a) for a in args]
        return Sine(*vals)
    if head == "DC":
        tokens = tokens[1:]
    if len(tokens) != 1:
        raise NetlistError(f"{name}: expected a single DC value", lineno)
    return Dc(parse_value(tokens[0]))


def _parse_element(tokens, lineno):
    name = tokens[0]
    rest = tokens[1:]
    if rest and rest[0].lower() in KEYWORDS:
        kind = KEYWORDS[rest[0].lower()]
        rest = rest[1:]
    elif name[0].upper() in LETTER_KINDS:
        kind = LETTER_KINDS[name[0].upper()]
    else:
        raise NetlistError(f"unknown element kind for {name!r}", lineno)

    nterm = TERMINAL_COUNT[kind]
    if len(rest) < nterm:
        raise NetlistError(f"{name}: {kind} needs {nterm} nodes", lineno)
    terminals = tuple(rest[:nterm])
    for node in terminals:
        if "=" in node or node in "()":
            raise NetlistError(f"{name}: invalid node name {node!r}", lineno)
    args = rest[nterm:]

    if kind in ("resistor", "capacitor"):
        if len(args) != 1:
            raise NetlistError(f"{name}: expected exactly one value", lineno)
        params = parse_value(args[0])
    elif kind in ("vsource", "isource"):
        params = _parse_source(name, args, lineno)
    elif kind == "nmos":
        kv = _keyvals(args, MOSFET_KEYS, lineno, name)
        for req in ("W", "L"):
            if req not in kv:
                raise NetlistError(f"{name}: nmos requires {req}=", lineno)
        params = MosfetParams(**{MOSFET_KEYS[k]: parse_value(v) for k, v in kv.items()})
    else:
        kv = _keyvals(args, MEMRISTOR_KEYS, lineno, name)
        for req in ("RON", "ROFF", "RINIT"):
            if req not in kv:
                raise NetlistError(f"{name}: mem requires {req}=", lineno)
        values = {}
        for k, v in kv.items():
            values[MEMRISTOR_KEYS[k]] = _parse_int(v, "P") if k == "P" else parse_value(v)
        params = MemristorParams(**values)
    return Device(name, kind, terminals, params)


def canonical_observable(token: str) -> str:
    m = _OBSERVABLE_RE.match(token)
    if m:
        return f"{m.group(1).upper()}({m.group(2)})"
    return f"V({token})"


def _parse_directive(tokens, lineno):
    head = tokens[0].lower()
    args = tokens[1:]
    if head == ".op":
        if args:
            raise NetlistError(".op takes no arguments", lineno)
        return Op()
    if head == ".dc":
        if len(args) != 4:
            raise NetlistError(".dc expects <dev>.<param> <start> <stop> <step>", lineno)
        d = DcSweep(args[0], *(parse_value(a) for a in args[1:]))
    elif head == ".tran":
        if not args:
            raise NetlistError(".tran expects <tstop>", lineno)
        tstop = parse_value(args[0])
        opts = {}
        uic = False
        for tok in args[1:]:
            if tok.lower() == "uic":
                uic = True
                continue
            key, sep, val = tok.partition("=")
            if not sep or key.lower() not in ("ppp", "periods"):
                raise NetlistError(f".tran: unexpected {tok!r}", lineno)
            opts[key.lower()] = _parse_int(val, key)
        d = Tran(tstop, uic=uic, **opts)
    elif head == ".thd":
        if not args:
            raise NetlistError(".thd expects an observable", lineno)
        opts = {}
        for tok in args[1:]:
            key, sep, val = tok.partition("=")
            if not sep or key.lower() not in ("f0", "nh"):
                raise NetlistError(f".thd: unexpected {tok!r}", lineno)
            opts[key.lower()] = val
        if "f0" not in opts:
            raise NetlistError(".thd requires f0=", lineno)
        nh = _parse_int(opts["nh"], "nh") if "nh" in opts else 9
        d = Thd(canonical_observable(args[0]), parse_value(opts["f0"]), nh)
    elif head == ".hparam":
        opts = {}
        for tok in args:
            key, sep, val = tok.partition("=")
            if not sep or key.lower() not in ("in", "out") or not val:
                raise NetlistError(f".hparam: unexpected {tok!r}", lineno)
            opts[key.lower()] = val
        if set(opts) != {"in", "out"}:
            raise NetlistError(".hparam requires in= and out=", lineno)
        return HParam(opts["in"], opts["out"])
    else:
        raise NetlistError(f"unknown directive {tokens[0]!r}", lineno)
    problem = directive_problem(d)
    if problem:
        raise NetlistError(problem, lineno)
    return d


def directive_problem(d):
    if isinstance(d, DcSweep):
        if d.step == 0:
            return ".dc step must be nonzero"
        if (d.stop - d.start) / d.step < 0:
            return ".dc step points away from stop"
    elif isinstance(d, Tran):
        if not d.tstop > 0:
            return ".tran tstop must be > 0"
        if d.ppp < 2 or d.periods < 1:
            return ".tran needs ppp >= 2 and periods >= 1"
    elif isinstance(d, Thd):
        if not d.f0 > 0:
            return ".thd f0 must be > 0"
        if d.n_harmonics < 2:
            return ".thd nh must be >= 2"
    return None


def parse_netlist(text: str | bytes) -> Circuit:
    """Parse netlist text into a :class:`Circuit` (not yet validated)."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NetlistError(f"netlist is not valid UTF-8 ({exc.reason})") from None
    text = text.lstrip("﻿")

    devices = []
    directives = []
    seen = {}
    for lineno, line in _logical_lines(text):
        tokens = _tokenize(line)
        if not tokens:
            continue
        if tokens[0].startswith("."):
            if tokens[0].lower() == ".end":
                break
            directives.append(_at_line(_parse_directive, _tokenize_directive(line), lineno))
            continue
        if tokens[0] in "()":
            raise NetlistError("line starts with a parenthesis", lineno)
        dev = _at_line(_parse_element, tokens, lineno)
        key = dev.name.upper()
        if key in seen:
            raise NetlistError(
                f"duplicate device name {dev.name!r} (first defined on line {seen[key]})", lineno
            )
        seen[key] = lineno
        devices.append(dev)

    nodes = frozenset(n for d in devices for n in d.terminals)
    if GROUND not in nodes:
        raise NetlistError("circuit has no ground node '0'")
    return Circuit(nodes=nodes, devices=tuple(devices), directives=tuple(directives))


def _at_line(parse, tokens, lineno):
    # value-level errors are raised without a line; attach it here
    try:
        return parse(tokens, lineno)
    except NetlistError as exc:
        if exc.line is None:
            raise NetlistError(exc.reason, lineno) from None
        raise


def _tokenize_directive(line):
    return re.sub(r"\s*=\s*", "=", line).split()


def load_netlist(path) -> Circuit:
    with open(path, "rb") as fh:
        return parse_netlist(fh.read())


# -- validation --------------------------------------------------------------


def _device_problems(dev):
    kind, p = dev.kind, dev.params
    if kind in ("resistor", "capacitor"):
        label = "R" if kind == "resistor" else "C"
        if not (math.isfinite(p) and p > 0):
            return [(label, "must be finite and > 0")]
        return []
    if kind in ("vsource", "isource"):
        vals = dataclasses.astuple(p)
        if not all(math.isfinite(v) for v in vals):
            return [("DC", "source values must be finite")]
        if isinstance(p, Sine):
            if not p.frequency > 0:
                return [("FREQ", "must be > 0")]
            if not p.amplitude >= 0:
                return [("AMP", "must be >= 0")]
        return []
    return p.problems()


def validate(circuit: Circuit) -> Circuit:
    """Check topology, parameter ranges and directive references.

    Returns the circuit flagged as validated; raises :class:`ValidationError`
    naming the offending device/parameter or node otherwise.
    """
    if GROUND not in circuit.nodes:
        raise ValidationError("circuit has no ground node '0'")
    names = set()
    for dev in circuit.devices:
        if dev.name.upper() in names:
            raise ValidationError(f"duplicate device name {dev.name!r}", device=dev.name)
        names.add(dev.name.upper())
        if len(dev.terminals) != TERMINAL_COUNT[dev.kind]:
            raise ValidationError(f"{dev.name}: wrong terminal count", device=dev.name)
        for node in dev.terminals:
            if node not in circuit.nodes:
                raise ValidationError(f"{dev.name}: unknown node {node!r}", device=dev.name)
        for param, reason in _device_problems(dev):
            raise ValidationError(
                f"{dev.name}: parameter {param} out of range ({reason})",
                device=dev.name,
                parameter=param,
            )

    degree = {n: 0 for n in circuit.nodes}
    adjacency = {n: set() for n in circuit.nodes}
    for dev in circuit.devices:
        for node in dev.terminals:
            degree[node] += 1
            adjacency[node].update(dev.terminals)
    for node in sorted(circuit.nodes):
        if node != GROUND and degree[node] < 2:
            raise ValidationError(f"floating node {node!r}: only one device terminal attached")
    reached = {GROUND}
    stack = [GROUND]
    while stack:
        for nb in adjacency[stack.pop()]:
            if nb not in reached:
                reached.add(nb)
                stack.append(nb)
    unreached = sorted(circuit.nodes - reached)
    if unreached:
        raise ValidationError(f"floating node {unreached[0]!r}: no path to ground")

    for d in circuit.directives:
        problem = directive_problem(d)
        if problem:
            raise ValidationError(problem)
        if isinstance(d, DcSweep):
            try:
                get_param(circuit, d.path)
            except NetlistError as exc:
                raise ValidationError(exc.reason) from None
        elif isinstance(d, HParam):
            for port in (d.input_port, d.output_port):
                if not circuit.has_device(port) or circuit.device(port).kind != "vsource":
                    raise ValidationError(f".hparam port {port!r} is not a voltage source")
        elif isinstance(d, Thd):
            check_observable(circuit, d.observable)
    return dataclasses.replace(circuit, validated=True)


def check_observable(circuit: Circuit, observable: str) -> None:
    m = _OBSERVABLE_RE.match(observable)
    if not m:
        raise ValidationError(f"malformed observable {observable!r}")
    what, ref = m.group(1).upper(), m.group(2)
    if what == "V" and ref not in circuit.nodes:
        raise ValidationError(f"observable {observable}: no node {ref!r}")
    if what == "I" and not circuit.has_device(ref):
        raise ValidationError(f"observable {observable}: no device {ref!r}")


# -- serialization -----------------------------------------------------------


def _emit_device(dev):
    head = f"{dev.name} {KIND_KEYWORD[dev.kind]} {' '.join(dev.terminals)}"
    p = dev.params
    if dev.kind in ("resistor", "capacitor"):
        return f"{head} {format_value(p)}"
    if dev.kind in ("vsource", "isource"):
        if isinstance(p, Dc):
            return f"{head} DC {format_value(p.level)}"
        args = " ".join(format_value(v) for v in (p.offset, p.amplitude, p.frequency, p.phase))
        return f"{head} SIN({args})"
    keys = MOSFET_KEYS if dev.kind == "nmos" else MEMRISTOR_KEYS
    parts = []
    for key, attr in keys.items():
        v = getattr(p, attr)
        parts.append(f"{key}={v}" if attr == "p" else f"{key}={format_value(v)}")
    return f"{head} {' '.join(parts)}"


def _emit_directive(d):
    if isinstance(d, Op):
        return ".op"
    if isinstance(d, DcSweep):
        vals = " ".join(format_value(v) for v in (d.start, d.stop, d.step))
        return f".dc {d.path} {vals}"
    if isinstance(d, Tran):
        line = f".tran {format_value(d.tstop)} ppp={d.ppp} periods={d.periods}"
        return line + " uic" if d.uic else line
    if isinstance(d, Thd):
        return f".thd {d.observable} f0={format_value(d.f0)} nh={d.n_harmonics}"
    return f".hparam in={d.input_port} out={d.output_port}"


def emit_netlist(circuit: Circuit) -> str:
    lines = [_emit_device(d) for d in circuit.devices]
    lines += [_emit_directive(d) for d in circuit.directives]
    return "\n".join(lines) + "\n"


# -- transforms --------------------------------------------------------------


def strip_memristors(circuit: Circuit) -> Circuit:
    """Memristor-free counterpart: every memristor becomes a short.

    The second terminal of each memristor is merged into the first (or into
    ground when either side is ground).
    """
    devices = list(circuit.devices)
    for name in [d.name for d in devices if d.kind == "memristor"]:
        mem = next(d for d in devices if d.name == name)
        a, b = mem.terminals
        keep, drop = (a, b) if b != GROUND else (b, a)
        devices = [d for d in devices if d.name != name]
        devices = [
            dataclasses.replace(d, terminals=tuple(keep if t == drop else t for t in d.terminals))
            for d in devices
        ]
    nodes = frozenset(n for d in devices for n in d.terminals) | {GROUND}
    stripped = Circuit(nodes=nodes, devices=tuple(devices))
    directives = []
    for d in circuit.directives:
        if isinstance(d, Thd):
            try:
                check_observable(stripped, d.observable)
            except ValidationError:
                continue
        if isinstance(d, DcSweep) and not stripped.has_device(d.path.rsplit(".", 1)[0]):
            continue
        directives.append(d)
    return dataclasses.replace(stripped, directives=tuple(directives))
