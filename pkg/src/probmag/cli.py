"""Command-line front end: ``probmag <command> [--config FILE] ...``.

Each command writes one table (CSV with ``#`` metadata lines, or JSON). Output
depends only on the effective configuration, never on ``--threads``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfg
from .dynamics import OrnsteinUhlenbeck, markov_signal, monte_carlo_signal, ou_markov_rate
from .errors import ConfigError, NumericalError, WeakFieldWarning
from .metrology import PRESET_SPECIES, PRESETS, TimingBudget, sensitivity
from .protocol import ProtocolParams
from .spin_core import to_angular
from .sweeps import (
    OptimizerSettings,
    SweepResult,
    SweepSpec,
    fisher_vs_time,
    optimize_tau,
    ratio_map,
    signal_vs_time,
    sweep_B_fixed_tau,
    sweep_T2star,
)

COMMANDS = ("signal", "sensitivity", "noise-compare", "fisher", "ratio-map", "sweep-b")

UNITS = ("# units: tau/t/T2_star/tau_star in us; B in G; eta columns in nT Hz^-1/2; "
         "delta_B in G; F in G^-2")


# ---------------------------------------------------------------------------
# config -> domain objects

def params_from(eff: dict) -> ProtocolParams:
    ph, pr = eff["physics"], eff["protocol"]
    A = None if ph["A_zz_MHz"] is None else to_angular(ph["A_zz_MHz"])
    return ProtocolParams(tau=float(pr["tau"]), B=float(ph["B"]), species=ph["species"],
                          alpha=float(pr["alpha"]), theta_i=float(pr["theta_i"]),
                          theta_f=float(pr["theta_f"]), B_z=float(ph["B_z"]), A_zz=A,
                          T2_star=float(ph["T2_star"]))


def timing_from(eff: dict) -> TimingBudget:
    tm = eff["timing"]
    if tm["preset"] == "custom":
        base = TimingBudget(t_i=tm["t_i"], t_p=tm["t_p"], t_r=tm["t_r"])
    else:
        base = PRESETS[tm["preset"]]
    changes = {k: float(tm[k]) for k in ("t_i", "t_p", "t_r", "C") if tm[k] is not None}
    return base.with_(**changes)


def tau_grid(eff: dict) -> np.ndarray:
    pr = eff["protocol"]
    return np.linspace(pr["tau_min"], pr["tau_max"], pr["tau_points"])


def sweep_spec(eff: dict, threads: int) -> SweepSpec:
    sw = eff["sweep"]
    return SweepSpec(
        base=params_from(eff),
        timing=timing_from(eff),
        T2_values=tuple(np.geomspace(sw["T2_min"], sw["T2_max"], sw["T2_points"])),
        B_values=tuple(np.geomspace(sw["B_min"], sw["B_max"], sw["B_points"])),
        tau_values=tuple(float(t) for t in tau_grid(eff)),
        optimizer=OptimizerSettings(n_grid=sw["n_grid"], ps_floor=sw["ps_floor"]),
        threads=threads,
    )


# ---------------------------------------------------------------------------
# commands

def cmd_signal(eff: dict, threads: int = 1) -> SweepResult:
    return signal_vs_time(params_from(eff), tau_grid(eff))


def cmd_sensitivity(eff: dict, threads: int = 1) -> SweepResult:
    timing = timing_from(eff)
    mode = eff["sweep"]["mode"]
    if mode in ("single", "optimal"):
        p = params_from(eff)
        if mode == "optimal":
            settings = OptimizerSettings(n_grid=eff["sweep"]["n_grid"],
                                         ps_floor=eff["sweep"]["ps_floor"])
            p = replace(p, tau=optimize_tau(p, timing, settings=settings)[0])
        r = sensitivity(p, timing)
        row = {"tau": r.tau, "P_s": r.P_s, "N": r.N, "t_m": r.t_m, "delta_B": r.delta_B,
               "delta_B_T": r.delta_B_tesla, "eta": r.eta_nT, "eta_C": r.eta_C_nT, "C": timing.C}
        return SweepResult(list(row), [row], {"sweep": mode})
    spec = sweep_spec(eff, threads)
    res = sweep_T2star(spec)
    species = [s.lower() for s, _ in spec.species_timing]
    for row in res.rows:
        for s in species:
            row[f"eta_C_{s}"] = row[f"eta_{s}"] / timing.C
    cols = res.columns[:1 + 1 + len(species)] + [f"eta_C_{s}" for s in species] \
        + res.columns[2 + len(species):]
    return SweepResult(cols, res.rows, res.metadata)


def cmd_noise_compare(eff: dict, threads: int = 1) -> SweepResult:
    nz = eff["noise"]
    if nz["model"] != "ou":
        raise ConfigError("noise-compare requires [noise] model = \"ou\"")
    p = params_from(eff)
    if not math.isfinite(p.T2_star):
        raise ConfigError("noise-compare requires a finite [physics] T2_star")
    model = OrnsteinUhlenbeck.from_T2star(p.T2_star, nz["tau_c"], nz["dt"], nz["seed"])
    times = tau_grid(eff)
    gamma = ou_markov_rate(p.T2_star, model.tau_c)
    iz_markov, _ = markov_signal(p, gamma, times)
    iz_t2, _ = markov_signal(p, 2.0 / p.T2_star, times)
    mc = monte_carlo_signal(p, model, nz["n_traj"], "Iz", times, threads)
    rows = [{"t": t, "Iz_markov": a, "Iz_ou_mean": m, "Iz_ou_stderr": s, "Iz_lindblad_T2star": b}
            for t, a, m, s, b in zip(times, iz_markov, mc.mean, mc.stderr, iz_t2)]
    meta = {"sweep": "noise-compare", "seed": nz["seed"], "markov_gamma": gamma,
            "ou_c": model.c, "ou_dt": model.dt}
    return SweepResult(["t", "Iz_markov", "Iz_ou_mean", "Iz_ou_stderr", "Iz_lindblad_T2star"],
                       rows, meta)


def cmd_fisher(eff: dict, threads: int = 1) -> SweepResult:
    spec = sweep_spec(eff, threads)
    res = fisher_vs_time(spec, (spec.base.T2_star,))
    return SweepResult(["T2_star", "tau", "F_ramsey", "F_Q_probe", "F_ps", "F_Q_post"],
                       res.rows, res.metadata)


def cmd_ratio_map(eff: dict, threads: int = 1) -> SweepResult:
    spec = sweep_spec(eff, threads)
    return ratio_map(spec, eff["physics"]["species"], spec.timing)


def cmd_sweep_b(eff: dict, threads: int = 1) -> SweepResult:
    spec = sweep_spec(eff, threads)
    spec = replace(spec, tau_values=tuple(float(t) for t in eff["sweep"]["tau_values"]))
    return sweep_B_fixed_tau(spec)


HANDLERS = {
    "signal": cmd_signal,
    "sensitivity": cmd_sensitivity,
    "noise-compare": cmd_noise_compare,
    "fisher": cmd_fisher,
    "ratio-map": cmd_ratio_map,
    "sweep-b": cmd_sweep_b,
}


# ---------------------------------------------------------------------------
# output

def _fmt(x, precision: int) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{precision}g}"


def _json_num(x, precision: int):
    if isinstance(x, str):
        return x
    x = float(x)
    if not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return float(f"{x:.{precision}g}")


def render(result: SweepResult, eff: dict, command: str) -> str:
    prec = eff["output"]["precision"]
    seed = eff["noise"]["seed"]
    meta = {k: v for k, v in result.metadata.items() if k != "version"}
    if eff["output"]["format"] == "json":
        doc = {
            "probmag": __version__,
            "command": command,
            "seed": seed,
            "config_hash": cfg.config_hash(eff),
            "config": "\n".join(cfg.echo_lines(eff)),
            "metadata": {k: _json_meta(v, prec) for k, v in meta.items()},
            "columns": result.columns,
            "rows": [[_json_num(r[c], prec) for c in result.columns] for r in result.rows],
        }
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    lines = [
        f"# probmag {__version__} {command}",
        f"# seed: {seed}",
        f"# config_hash: {cfg.config_hash(eff)}",
        UNITS,
    ]
    for k, v in meta.items():
        lines.append(f"# {k}: {_meta_str(v, prec)}")
    lines.append("# --- effective config ---")
    lines += ["# " + s for s in cfg.echo_lines(eff)]
    lines.append("# --- end config ---")
    lines.append(",".join(result.columns))
    for r in result.rows:
        lines.append(",".join(_fmt(r[c], prec) for c in result.columns))
    return "\n".join(lines) + "\n"


def _meta_str(v, prec):
    if isinstance(v, float):
        return _fmt(v, prec)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return str(v)


def _json_meta(v, prec):
    return _json_num(v, prec) if isinstance(v, float) else v


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probmag", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"probmag {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config, or a CSV written by an earlier run")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--preset", choices=("c13-cryo", "n15-cryo", "room-temp"))
        if name == "sensitivity":
            sp.add_argument("--single", action="store_true",
                            help="evaluate one working point instead of the T2* sweep")
            sp.add_argument("--optimize-tau", action="store_true", dest="optimize",
                            help="single working point at the optimal tau")
            sp.add_argument("--C", type=float, dest="C", help="readout efficiency factor")
        if name == "fisher":
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--lossless", action="store_true")
            g.add_argument("--lossy", action="store_true",
                           help="use [physics] T2_star (2 us unless set)")
    return ap


def apply_flags(eff: dict, args, explicit: dict) -> dict:
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        eff["noise"]["seed"] = args.seed
    if args.format:
        eff["output"]["format"] = args.format
    if args.out:
        eff["output"]["path"] = args.out
    if args.preset:
        eff["timing"]["preset"] = args.preset
        if "species" not in explicit.get("physics", {}):
            eff["physics"]["species"] = PRESET_SPECIES[args.preset]
    if getattr(args, "single", False):
        eff["sweep"]["mode"] = "single"
    if getattr(args, "optimize", False):
        eff["sweep"]["mode"] = "optimal"
    if getattr(args, "C", None) is not None:
        if not 0 < args.C <= 1:
            raise ConfigError("--C must be in (0, 1]")
        eff["timing"]["C"] = args.C
    if getattr(args, "lossless", False):
        eff["physics"]["T2_star"] = math.inf
    if getattr(args, "lossy", False) and "T2_star" not in explicit.get("physics", {}):
        eff["physics"]["T2_star"] = 2.0
    elif args.command == "fisher" and not getattr(args, "lossy", False) \
            and "T2_star" not in explicit.get("physics", {}):
        eff["physics"]["T2_star"] = math.inf
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return eff


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            try:
                text = cfg.load_text(args.config)
            except OSError as exc:
                raise ConfigError(f"{args.config}: {exc.strerror}") from None
            data, lines = cfg.parse(text, args.config)
            eff = cfg.resolve(data, args.command, lines, args.config)
        else:
            data, eff = {}, cfg.resolve({}, args.command)
        eff = apply_flags(eff, args, data)
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", WeakFieldWarning)
                result = HANDLERS[args.command](eff, args.threads)
            _report_warnings(caught)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        text = render(result, eff, args.command)
    except ConfigError as exc:
        print(f"error: config: {_one_line(exc)}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: numerical: {_one_line(exc)}", file=sys.stderr)
        return 3
    path = eff["output"]["path"]
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _report_warnings(caught) -> None:
    weak = [w for w in caught if issubclass(w.category, WeakFieldWarning)]
    for w in caught:
        if w not in weak:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    if weak:
        print(f"warning: {len(weak)} working point(s) with gamma_c*B*tau > 0.01; "
              "closed forms keep nuclear Zeeman phases so results stay exact",
              file=sys.stderr)


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
