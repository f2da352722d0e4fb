"""Command-line entry point.

    mirrorsim run <experiment|all> [--netlist P] [--freqs ...] ... --out DIR
    mirrorsim sim <netlist> [--out DIR]

Failures print one JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import extract_hparams_numeric, thd_report
from .engine import dc_sweep, solve_dc, transient
from .errors import MirrorsimError, NetlistError
from .experiments import EXPERIMENTS, ExperimentConfig, resolve_netlist, run_all, run_experiment, write_report
from .netlist import DcSweep, HParam, Op, Thd, Tran, directive_problem, load_netlist, parse_value, validate

EXIT_USAGE = 2
EXIT_FAILURE = 1

LIST_KEYS = ("freqs", "lengths", "supplies", "lints", "rinits")
INT_KEYS = ("ppp", "periods", "harmonics")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_list(text):
    """Values separated by commas or whitespace; ``a:b:step`` expands to a range."""
    out = []
    for token in text.replace(",", " ").split():
        if token.count(":") == 2:
            start, stop, step = (parse_value(t) for t in token.split(":"))
            d = DcSweep("X.P", start, stop, step)
            problem = directive_problem(d)
            if problem:
                raise UsageError(f"range {token}: {problem}")
            out.extend(d.values())
        else:
            out.append(parse_value(token))
    if not out:
        raise UsageError("empty value list")
    return tuple(out)


def read_config(path):
    """``key=value`` lines; ``#`` starts a comment.  Keys match the long flag names."""
    items = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key.replace("-", "_").lower()] = value
    return items


def _build_parser():
    p = _Parser(prog="mirrorsim", description="Memristor-aware current-mirror simulator.")
    p.add_argument("--version", action="version", version=f"mirrorsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment (or all of them) and write CSV files")
    run.add_argument("experiment", choices=EXPERIMENTS + ("all",))
    run.add_argument("--netlist", help="netlist path or shipped name (default memristor_cm.cir)")
    run.add_argument("--config", help="key=value file; command-line flags win")
    run.add_argument("--freqs", help="frequencies in Hz, e.g. '1 100 1e4' or '1,1k'")
    run.add_argument("--lengths", help="channel lengths in m, e.g. '17n 20n 25n 30n'")
    run.add_argument("--supplies", help="supply voltages in V")
    run.add_argument("--lints", help="LINT values in m for dc-length, e.g. '-5n:5n:1n'")
    run.add_argument("--rinits", help="RINIT values in ohm for dc-ron, e.g. '500:550:5'")
    run.add_argument("--ppp", type=int, help="time points per period (default 1024)")
    run.add_argument("--periods", type=int, help="simulated periods; the first half is warmup (default 10)")
    run.add_argument("--harmonics", type=int, help="harmonics in the THD sum (default 9)")
    run.add_argument("--observable", help="THD signal, e.g. I(VOUT) or V(out)")
    run.add_argument("--set", action="append", default=None, metavar="DEV.PARAM=VALUE",
                     help="override a device parameter (repeatable)")
    run.add_argument("--out", help="output directory")

    sim = sub.add_parser("sim", help="execute a netlist's own directives")
    sim.add_argument("netlist")
    sim.add_argument("--out", help="also write transient waveforms as CSV here")
    return p


def _overrides(entries):
    out = []
    for entry in entries or ():
        for item in entry.replace(",", " ").split():
            if "=" not in item:
                raise UsageError(f"--set expects DEV.PARAM=VALUE, got {item!r}")
            path, value = item.split("=", 1)
            out.append((path, parse_value(value)))
    return tuple(out)


def config_from_args(args) -> ExperimentConfig:
    merged = read_config(args.config) if args.config else {}
    known = set(LIST_KEYS + INT_KEYS + ("netlist", "observable", "set", "out"))
    unknown = sorted(set(merged) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    kwargs = {"experiment": args.experiment if args.experiment != "all" else EXPERIMENTS[0]}
    for key in LIST_KEYS:
        if key in merged:
            kwargs[key] = parse_list(merged[key])
    for key in INT_KEYS:
        if key in merged:
            try:
                kwargs[key] = int(merged[key])
            except ValueError:
                raise UsageError(f"{key} must be an integer, got {merged[key]!r}") from None
    for key in ("netlist", "observable", "out"):
        if merged.get(key):
            kwargs[key] = merged[key]
    if "set" in merged:
        raw = merged["set"]
        kwargs["overrides"] = _overrides(raw if isinstance(raw, list) else [raw])
    if not kwargs.get("out"):
        raise UsageError("an output directory is required (--out or out= in the config)")
    return ExperimentConfig(**kwargs).check()


def cmd_run(args):
    config = config_from_args(args)
    if args.experiment == "all":
        reports = run_all(config)
    else:
        reports = [run_experiment(config)]
    files = []
    for report in reports:
        files.extend(str(p) for p in write_report(report, config.out))
    return {"status": "ok", "experiments": [r.name for r in reports], "files": files}


def _floats(d):
    return {k: float(v) for k, v in d.items()}


def cmd_sim(args):
    circuit = validate(load_netlist(resolve_netlist(args.netlist)))
    results = []
    waves = None
    for directive in circuit.directives:
        if isinstance(directive, Op):
            op = solve_dc(circuit)
            results.append({"analysis": "op", "node_voltages": _floats(op.node_voltages),
                            "branch_currents": _floats(op.branch_currents)})
        elif isinstance(directive, DcSweep):
            sweep = dc_sweep(circuit, directive)
            results.append({"analysis": "dc", "path": directive.path,
                            "values": sweep.param_values.tolist(),
                            "observables": {k: v.tolist() for k, v in sweep.observables.items()}})
        elif isinstance(directive, Tran):
            waves = transient(circuit, directive)
            results.append({"analysis": "tran", "samples": int(waves.time.size), "dt": waves.dt,
                            "signals": sorted(waves.signals)})
            if args.out:
                results[-1]["file"] = str(_write_waves(waves, args.out))
        elif isinstance(directive, Thd):
            if waves is None:
                raise NetlistError(".thd needs a .tran directive before it")
            rep = thd_report(waves, directive.observable, f0=directive.f0, n_harmonics=directive.n_harmonics)
            results.append({"analysis": "thd", "observable": directive.observable, "f0_hz": rep.fundamental_hz,
                            "thd_percent": rep.thd_percent,
                            "harmonic_magnitudes": rep.harmonic_magnitudes.tolist(),
                            "analysis_window": list(rep.analysis_window)})
        elif isinstance(directive, HParam):
            h = extract_hparams_numeric(circuit, directive.input_port, directive.output_port)
            results.append({"analysis": "hparam", **dataclasses.asdict(h)})
    return {"status": "ok", "netlist": str(args.netlist), "results": results}


def _write_waves(waves, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(waves.signals)
    cols = [waves.time] + [waves.signals[n] for n in names]
    mem = sorted(waves.memristor_states)
    cols += [waves.memristor_states[n] for n in mem]
    header = ",".join(["time_s"] + names + [f"x({n})" for n in mem])
    path = out / "tran.csv"
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def _error_payload(exc):
    payload = {"status": "error", "error": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "device", "parameter", "residual", "iterations", "time"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    context = getattr(exc, "context", None)
    if context:
        payload["context"] = context
    return payload


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"status": "error", "error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        summary = cmd_run(args) if args.command == "run" else cmd_sim(args)
    except UsageError as exc:
        print(json.dumps({"status": "error", "error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except (MirrorsimError, OSError, UnicodeDecodeError) as exc:
        print(json.dumps(_error_payload(exc), default=str), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
