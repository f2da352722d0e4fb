"""The four current-mirror studies and their CSV output.

Each ``run_*`` function composes engine and analysis calls only; every row it
reports can be recomputed by calling those functions with the row's
parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import importlib.resources
import io
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import linear_fit, thd_report
from .engine import dc_sweep, mirror_branches, tran_for, transient
from .errors import MirrorsimError, ValidationError
from .netlist import (
    Circuit,
    DcSweep,
    Thd,
    format_value,
    load_netlist,
    set_param,
    strip_memristors,
    validate,
)

EXPERIMENTS = ("freq-thd", "length-thd", "dc-length", "dc-ron")
DEFAULT_NETLIST = "memristor_cm.cir"
DEFAULT_FREQS = (1.0, 1e2, 1e4, 1e6, 1e8, 1e10)
DEFAULT_LENGTHS = (17e-9, 20e-9, 25e-9, 30e-9)
DEFAULT_SUPPLIES = (3.0, 5.0, 8.0)
DEFAULT_LINTS = tuple(k / 1e9 for k in range(-5, 6))
DEFAULT_RINITS = tuple(500.0 + 5.0 * k for k in range(11))
QUASI_STATIC_ABOVE = 1e9  # Hz
QUASI_STATIC_NOTE = "quasi-static extrapolation"


def shipped_netlist(name: str) -> Path:
    """Path of an example netlist bundled with the package."""
    return Path(str(importlib.resources.files("mirrorsim") / "netlists" / name))


def shipped_netlists():
    folder = importlib.resources.files("mirrorsim") / "netlists"
    return sorted(p.name for p in folder.iterdir() if p.name.endswith(".cir"))


def resolve_netlist(name_or_path) -> Path:
    """A filesystem path, or the name of a shipped netlist."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = shipped_netlist(path.name)
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"netlist {name_or_path!s} not found (shipped: {', '.join(shipped_netlists())})")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "freq-thd"
    netlist: str = DEFAULT_NETLIST
    freqs: tuple = DEFAULT_FREQS
    lengths: tuple = DEFAULT_LENGTHS
    supplies: tuple = DEFAULT_SUPPLIES
    lints: tuple = DEFAULT_LINTS
    rinits: tuple = DEFAULT_RINITS
    ppp: int = 1024
    periods: int = 10
    harmonics: int = 9
    observable: str | None = None  # defaults to the netlist's .thd observable
    overrides: tuple = ()  # ((DEVICE.PARAM, value), ...) applied after loading
    out: str | None = None

    def problems(self):
        out = []
        if self.experiment not in EXPERIMENTS:
            out.append(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        for name in ("freqs", "lengths", "supplies", "lints", "rinits"):
            values = getattr(self, name)
            if not values:
                out.append(f"{name} must not be empty")
            elif not _monotone(values):
                out.append(f"{name} must be strictly monotone")
            elif not all(math.isfinite(v) for v in values):
                out.append(f"{name} must be finite")
        if any(v <= 0 for v in self.supplies):
            out.append("supply voltages must be > 0")
        if any(v <= 0 for v in self.freqs):
            out.append("frequencies must be > 0")
        if any(v <= 0 for v in self.lengths):
            out.append("lengths must be > 0")
        if self.ppp < 4:
            out.append("ppp must be >= 4")
        if self.periods < 2:
            out.append("periods must be >= 2 (the first half is warmup)")
        if self.harmonics < 2:
            out.append("harmonics must be >= 2")
        return out

    def check(self):
        problems = self.problems()
        if problems:
            raise ValidationError("; ".join(problems))
        return self

    def echo(self):
        """``key=value`` pairs for the provenance header (output dir omitted)."""
        items = dataclasses.asdict(self)
        items.pop("out")
        return items


def _monotone(values):
    pairs = list(zip(values, values[1:]))
    return all(a < b for a, b in pairs) or all(a > b for a, b in pairs)


@dataclass
class ExperimentReport:
    """Rows of one experiment plus fitted slopes and plot curves."""

    name: str
    columns: list
    rows: list
    fit_columns: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)  # file stem -> (x label, y label, xs, ys)
    provenance: dict = field(default_factory=dict)

    def column(self, name, **where):
        i = self.columns.index(name)
        keep = [(self.columns.index(k), v) for k, v in where.items()]
        return [r[i] for r in self.rows if all(r[j] == v for j, v in keep)]

    def fit_rows(self, **where):
        keep = [(self.fit_columns.index(k), v) for k, v in where.items()]
        return [dict(zip(self.fit_columns, r)) for r in self.fits if all(r[j] == v for j, v in keep)]


@contextmanager
def _tagged(**ctx):
    try:
        yield
    except MirrorsimError as exc:
        exc.add_context(**ctx)
        raise


# -- circuit preparation -----------------------------------------------------


def load_base(config: ExperimentConfig) -> Circuit:
    circuit = load_netlist(resolve_netlist(config.netlist))
    for path, value in config.overrides:
        circuit = set_param(circuit, path, value)
    return validate(circuit)


def variants(circuit: Circuit):
    """``[(label, circuit)]``: the circuit itself and, when it has memristors,
    its counterpart with every memristor shorted."""
    if not circuit.of_kind("memristor"):
        return [("base", circuit)]
    return [("memristor", circuit), ("no_memristor", validate(strip_memristors(circuit)))]


def with_supply(circuit: Circuit, volts: float) -> Circuit:
    """Every voltage source set to ``volts`` (DC level, or sine offset)."""
    for dev in circuit.of_kind("vsource"):
        circuit = set_param(circuit, f"{dev.name}.DC", volts)
    return validate(circuit)


def with_frequency(circuit: Circuit, f0: float) -> Circuit:
    sines = [d for d in circuit.devices if d.kind in ("vsource", "isource") and hasattr(d.params, "frequency")]
    if len(sines) != 1:
        raise ValidationError(f"THD experiments need exactly one sine source, found {len(sines)}")
    return validate(set_param(circuit, f"{sines[0].name}.FREQ", f0))


def with_length(circuit: Circuit, length: float) -> Circuit:
    for dev in circuit.of_kind("nmos"):
        circuit = set_param(circuit, f"{dev.name}.L", length)
    return validate(circuit)


def thd_observable(circuit: Circuit, config: ExperimentConfig) -> str:
    if config.observable:
        return config.observable
    directive = circuit.directive(Thd)
    if directive is not None:
        return directive.observable
    raise ValidationError("no THD observable: add a .thd directive or pass --observable")


def _mirror_pair(circuit):
    pair = mirror_branches(circuit)
    if pair is None:
        raise ValidationError("netlist has no current mirror (diode-connected NMOS plus a gate-sharing NMOS)")
    return pair


def output_memristor(circuit: Circuit) -> str:
    """Name of the memristor in series with the mirror's output transistor."""
    _, out = _mirror_pair(circuit)
    drain = circuit.device(out).terminals[0]
    for dev in circuit.of_kind("memristor"):
        if drain in dev.terminals:
            return dev.name
    raise ValidationError(f"no memristor in series with output transistor {out}")


def _note(f0):
    return QUASI_STATIC_NOTE if f0 > QUASI_STATIC_ABOVE else ""


def thd_point(circuit: Circuit, f0: float, config: ExperimentConfig, observable: str):
    """One transient plus THD at ``f0``; the unit of work behind every THD row."""
    c = with_frequency(circuit, f0)
    waves = transient(c, tran_for(c, ppp=config.ppp, periods=config.periods))
    return thd_report(waves, observable, f0=f0, n_harmonics=config.harmonics)


def _provenance(config, circuit_text):
    return {
        "tool": f"mirrorsim {__version__}",
        "generated": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "netlist_sha256": hashlib.sha256(circuit_text.encode()).hexdigest(),
        "config": config.echo(),
    }


def _netlist_text(config):
    return resolve_netlist(config.netlist).read_text(encoding="utf-8")


# -- experiments -------------------------------------------------------------


def run_freq_thd(config: ExperimentConfig) -> ExperimentReport:
    """THD of the output signal at each frequency, with and without memristors."""
    config = dataclasses.replace(config, experiment="freq-thd").check()
    base = load_base(config)
    observable = thd_observable(base, config)
    k = config.harmonics
    columns = ["variant", "f0_hz", "thd_percent", "first_period", "periods", "samples_per_period"]
    columns += [f"c{i}" for i in range(1, k + 1)] + ["note"]
    rows, curves = [], {}
    for label, circuit in variants(base):
        xs, ys = [], []
        for f0 in sorted(config.freqs):
            with _tagged(variant=label, frequency_hz=f0):
                rep = thd_point(circuit, f0, config, observable)
            first, count, spp = rep.analysis_window
            rows.append([label, f0, rep.thd_percent, first, count, spp, *rep.harmonic_magnitudes, _note(f0)])
            xs.append(f0)
            ys.append(rep.thd_percent)
        curves[f"freq_thd_{label}"] = ("f0_hz", "thd_percent", xs, ys)
    return ExperimentReport(
        "freq_thd", columns, rows, curves=curves, provenance=_provenance(config, _netlist_text(config))
    )


def run_length_thd(config: ExperimentConfig) -> ExperimentReport:
    """THD over the (channel length, frequency) grid; slope of THD vs length per frequency."""
    config = dataclasses.replace(config, experiment="length-thd").check()
    base = load_base(config)
    observable = thd_observable(base, config)
    columns = ["variant", "length_m", "f0_hz", "thd_percent", "note"]
    fit_columns = ["variant", "f0_hz", "slope_percent_per_um", "intercept_percent", "r_squared", "note"]
    rows, fits, curves = [], [], {}
    lengths = sorted(config.lengths)
    for label, circuit in variants(base):
        grid = {}
        for length in lengths:
            sized = with_length(circuit, length)
            for f0 in sorted(config.freqs):
                with _tagged(variant=label, length_m=length, frequency_hz=f0):
                    grid[length, f0] = thd_point(sized, f0, config, observable).thd_percent
        for f0 in sorted(config.freqs):
            ys = [grid[length, f0] for length in lengths]
            rows.extend([label, length, f0, y, _note(f0)] for length, y in zip(lengths, ys))
            curves[f"length_thd_{label}_{format_value(f0)}Hz"] = ("length_m", "thd_percent", lengths, ys)
            if len(lengths) >= 3:
                fit = linear_fit([x * 1e6 for x in lengths], ys)
                fits.append([label, f0, fit.slope, fit.intercept, fit.r_squared, _note(f0)])
    rows.sort(key=lambda r: (r[0] != "memristor", r[1], r[2]))
    return ExperimentReport(
        "length_thd", columns, rows, fit_columns, fits, curves, _provenance(config, _netlist_text(config))
    )


def _leff(circuit, name):
    return circuit.device(name).params.l_eff


def run_dc_length(config: ExperimentConfig) -> ExperimentReport:
    """Output/reference current imbalance as one transistor's LINT is swept.

    The output transistor is swept first with the reference fixed, then the
    reverse.  ``dI = I_ref - I_out`` is fitted against the effective-length
    difference ``L_eff(out) - L_eff(ref)`` in nm.
    """
    config = dataclasses.replace(config, experiment="dc-length").check()
    base = load_base(config)
    ref, out = _mirror_pair(base)
    lints = sorted(config.lints)
    columns = ["variant", "supply_v", "swept", "lint_m", "dl_eff_nm", "i_ref_a", "i_out_a", "di_a"]
    fit_columns = ["variant", "supply_v", "swept", "slope_ua_per_nm", "intercept_ua", "r_squared", "i_ref_rel_spread"]
    rows, fits, curves = [], [], {}
    for label, circuit in variants(base):
        for supply in sorted(config.supplies):
            powered = with_supply(circuit, supply)
            for swept in (out, ref):
                with _tagged(variant=label, supply_v=supply, swept=swept):
                    result = _sweep(powered, f"{swept}.LINT", lints, ref, out)
                dls = []
                for lint, obs in result:
                    c = set_param(powered, f"{swept}.LINT", lint)
                    dl = (_leff(c, out) - _leff(c, ref)) * 1e9
                    dls.append(dl)
                    rows.append([label, supply, swept, lint, dl, obs["I_ref"], obs["I_out"], obs["dI"]])
                dis = [obs["dI"] * 1e6 for _, obs in result]
                irefs = [obs["I_ref"] for _, obs in result]
                fit = linear_fit(dls, dis)
                spread = (max(irefs) - min(irefs)) / abs(sum(irefs) / len(irefs))
                fits.append([label, supply, swept, fit.slope, fit.intercept, fit.r_squared, spread])
                curves[f"dc_length_{label}_{format_value(supply)}V_{swept}"] = ("dl_eff_nm", "di_ua", dls, dis)
    return ExperimentReport(
        "dc_length", columns, rows, fit_columns, fits, curves, _provenance(config, _netlist_text(config))
    )


def _sweep(circuit, path, values, ref, out):
    res = dc_sweep(circuit, DcSweep(path, values[0], values[-1], 1.0), ref=ref, out=out, values=values)
    return [(v, {k: float(res[k][i]) for k in ("I_ref", "I_out", "dI")}) for i, v in enumerate(values)]


def run_dc_ron(config: ExperimentConfig) -> ExperimentReport:
    """Current imbalance as the output-side memristor's initial resistance is swept."""
    config = dataclasses.replace(config, experiment="dc-ron").check()
    base = load_base(config)
    ref, out = _mirror_pair(base)
    mem = output_memristor(base)
    rinits = sorted(config.rinits)
    columns = ["supply_v", "rinit_ohm", "i_ref_a", "i_out_a", "di_a"]
    fit_columns = ["supply_v", "slope_ua_per_ohm", "intercept_ua", "r_squared", "i_out_slope_ua_per_ohm"]
    rows, fits, curves = [], [], {}
    for supply in sorted(config.supplies):
        powered = with_supply(base, supply)
        with _tagged(supply_v=supply, swept=f"{mem}.RINIT"):
            result = _sweep(powered, f"{mem}.RINIT", rinits, ref, out)
        for r, obs in result:
            rows.append([supply, r, obs["I_ref"], obs["I_out"], obs["dI"]])
        dis = [obs["dI"] * 1e6 for _, obs in result]
        if len(rinits) >= 3:
            fit = linear_fit(rinits, dis)
            fit_out = linear_fit(rinits, [obs["I_out"] * 1e6 for _, obs in result])
            fits.append([supply, fit.slope, fit.intercept, fit.r_squared, fit_out.slope])
        curves[f"dc_ron_{format_value(supply)}V"] = ("rinit_ohm", "di_ua", rinits, dis)
    return ExperimentReport(
        "dc_ron", columns, rows, fit_columns, fits, curves, _provenance(config, _netlist_text(config))
    )


RUNNERS = {
    "freq-thd": run_freq_thd,
    "length-thd": run_length_thd,
    "dc-length": run_dc_length,
    "dc-ron": run_dc_ron,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    try:
        runner = RUNNERS[config.experiment]
    except KeyError:
        raise ValidationError(f"unknown experiment {config.experiment!r}") from None
    return runner(config)


def run_all(config: ExperimentConfig):
    """Every experiment on the configured netlist, in a fixed order."""
    return [run_experiment(dataclasses.replace(config, experiment=name)) for name in EXPERIMENTS]


# -- CSV output --------------------------------------------------------------


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_body(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _header(report, kind):
    p = report.provenance
    lines = [
        f"# {report.name} ({kind}) written by {p.get('tool', 'mirrorsim')}",
        f"# generated {p.get('generated', '')}",
        f"# netlist_sha256 {p.get('netlist_sha256', '')}",
    ]
    for key, value in p.get("config", {}).items():
        lines.append(f"# {key}={_echo(value)}")
    return "\n".join(lines) + "\n"


def _echo(value):
    if isinstance(value, (list, tuple)):
        return " ".join(_echo(v) for v in value)
    return _cell(value)


def csv_body(path) -> str:
    """File contents with the ``#`` provenance lines removed."""
    text = Path(path).read_text(encoding="utf-8")
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def write_report(report: ExperimentReport, out_dir) -> list:
    """Write the table, the fits (if any) and one two-column CSV per curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, kind, columns, rows):
        path = out / f"{name}.csv"
        path.write_text(_header(report, kind) + _csv_body(columns, rows), encoding="utf-8")
        written.append(path)

    emit(report.name, "table", report.columns, report.rows)
    if report.fits:
        emit(f"{report.name}_fits", "fits", report.fit_columns, report.fits)
    for stem, (xl, yl, xs, ys) in report.curves.items():
        emit(f"plot_{stem}", "plot", [xl, yl], list(zip(xs, ys)))
    return written


__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentReport",
    "run_freq_thd",
    "run_length_thd",
    "run_dc_length",
    "run_dc_ron",
    "run_experiment",
    "run_all",
    "write_report",
    "csv_body",
    "shipped_netlist",
    "resolve_netlist",
]
