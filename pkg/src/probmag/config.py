"""Experiment configuration files (TOML) for the command-line front end.

A config has the sections ``[physics]``, ``[protocol]``, ``[timing]``,
``[noise]``, ``[sweep]`` and ``[output]``. Every key is optional; missing
keys take command-specific defaults (see ``DEFAULTS`` and
``COMMAND_DEFAULTS``). Unknown sections or keys are errors that quote the
offending line.

Units: fields in G, times in us, angles in rad, ``A_zz_MHz`` is A_zz/2pi.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

HALF_PI = math.pi / 2
SPECIES = ("C13", "N15", "custom")
TIMING_PRESETS = ("c13-cryo", "n15-cryo", "room-temp", "ramsey", "custom")

_NUM = (int, float)

# section -> key -> (accepted types, default). None defaults are omitted from
# the effective config.
DEFAULTS: dict[str, dict[str, tuple]] = {
    "physics": {
        "species": (str, "C13"),
        "A_zz_MHz": (_NUM, None),
        "B": (_NUM, 0.01),
        "B_z": (_NUM, 0.0),
        "T2_star": (_NUM, math.inf),
    },
    "protocol": {
        "alpha": (_NUM, HALF_PI),
        "theta_i": (_NUM, HALF_PI),
        "theta_f": (_NUM, HALF_PI),
        "tau": (_NUM, 2.2),
        "tau_min": (_NUM, 0.0),
        "tau_max": (_NUM, 5.0),
        "tau_points": (int, 501),
    },
    "timing": {
        "preset": (str, "c13-cryo"),
        "t_i": (_NUM, None),
        "t_p": (_NUM, None),
        "t_r": (_NUM, None),
        "C": (_NUM, None),
    },
    "noise": {
        "model": (str, "markovian"),
        "tau_c": (_NUM, 2.0),
        "dt": (_NUM, None),
        "n_traj": (int, 10000),
        "seed": (int, 0),
    },
    "sweep": {
        "mode": (str, "sweep"),
        "T2_min": (_NUM, 0.5),
        "T2_max": (_NUM, 20.0),
        "T2_points": (int, 40),
        "B_min": (_NUM, 1e-3),
        "B_max": (_NUM, 1e-1),
        "B_points": (int, 40),
        "tau_values": (list, [3.0, 3.2]),
        "n_grid": (int, 400),
        "ps_floor": (_NUM, 1e-3),
    },
    "output": {
        "path": (str, None),
        "format": (str, "csv"),
        "precision": (int, 12),
    },
}

COMMAND_DEFAULTS: dict[str, dict[str, dict]] = {
    "signal": {},
    "sensitivity": {"physics": {"T2_star": 2.0}, "protocol": {"tau": 1.3}},
    "noise-compare": {
        "physics": {"T2_star": 20.0},
        "protocol": {"tau_min": 0.0, "tau_max": 40.0, "tau_points": 81},
        "noise": {"model": "ou", "n_traj": 2000},
    },
    "fisher": {"physics": {"species": "N15"}, "protocol": {"tau_min": 0.0, "tau_max": 5.0,
                                                          "tau_points": 101}},
    "ratio-map": {"physics": {"species": "N15"}, "timing": {"preset": "n15-cryo"}},
    "sweep-b": {"sweep": {"B_min": 1e-2, "B_max": 1.0, "B_points": 41}},
}

ECHO_EXCLUDE = {("output", "path")}


def _key_lines(text: str) -> dict[tuple[str | None, str], int]:
    """Map (section, key) to the 1-based line where the key is assigned."""
    lines: dict[tuple[str | None, str], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            section = m.group(1)
            lines.setdefault((section, ""), n)
            continue
        m = re.match(r'^"?([A-Za-z0-9_-]+)"?\s*=', line)
        if m:
            lines.setdefault((section, m.group(1)), n)
    return lines


def extract_echoed_config(text: str) -> str:
    """TOML text echoed into the header of a CSV written by the CLI."""
    out, inside = [], False
    for raw in text.splitlines():
        if raw.startswith("# --- effective config ---"):
            inside = True
            continue
        if raw.startswith("# --- end config ---"):
            return "\n".join(out) + "\n"
        if inside:
            out.append(raw[2:] if raw.startswith("# ") else raw.lstrip("#"))
    raise ConfigError("no echoed configuration found in file")


def load_text(path: str | Path) -> str:
    text = Path(path).read_text()
    if "# --- effective config ---" in text:
        text = extract_echoed_config(text)
    return text


def parse(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Parse TOML text into a dict plus the key -> line map."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return data, _key_lines(text)


def resolve(data: dict, command: str, lines: dict | None = None,
            source: str = "<config>") -> dict:
    """Validate ``data`` and fill in defaults for ``command``."""
    lines = lines or {}

    def fail(section, key, msg):
        n = lines.get((section, key)) or lines.get((section, ""))
        where = f"{source}:{n}" if n else source
        raise ConfigError(f"{where}: {msg}")

    eff = {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for s, keys in DEFAULTS.items()}
    for s, keys in COMMAND_DEFAULTS.get(command, {}).items():
        eff[s].update(copy.deepcopy(keys))

    for section, body in data.items():
        if section not in DEFAULTS:
            fail(section, "", f"unknown section [{section}]")
        if not isinstance(body, dict):
            fail(None, section, f"[{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                fail(section, key, f"unknown key '{key}' in [{section}]")
            types, _ = DEFAULTS[section][key]
            if isinstance(value, bool) or not isinstance(value, types):
                fail(section, key, f"[{section}] {key} has invalid type {type(value).__name__}")
            eff[section][key] = value

    def check(section, key, ok, msg):
        if not ok(eff[section][key]):
            fail(section, key, f"[{section}] {key} = {eff[section][key]!r}: {msg}")

    ph, pr, tm, nz, sw, out = (eff[s] for s in DEFAULTS)
    check("physics", "species", lambda v: v in SPECIES, f"expected one of {SPECIES}")
    if ph["species"] == "custom" and ph["A_zz_MHz"] is None:
        fail("physics", "species", "species 'custom' requires A_zz_MHz")
    check("physics", "T2_star", lambda v: v > 0, "must be > 0")
    for k in ("B", "B_z", "A_zz_MHz"):
        check("physics", k, lambda v: v is None or math.isfinite(v), "must be finite")
    for k in ("alpha", "theta_i", "theta_f"):
        check("protocol", k, math.isfinite, "must be finite")
    check("protocol", "tau", lambda v: v >= 0, "must be >= 0")
    check("protocol", "tau_min", lambda v: v >= 0, "must be >= 0")
    check("protocol", "tau_max", lambda v: v > pr["tau_min"], "must exceed tau_min")
    check("protocol", "tau_points", lambda v: v >= 2, "must be >= 2")
    check("timing", "preset", lambda v: v in TIMING_PRESETS, f"expected one of {TIMING_PRESETS}")
    if tm["preset"] == "custom":
        for k in ("t_i", "t_p", "t_r"):
            if tm[k] is None:
                fail("timing", "preset", f"preset 'custom' requires {k}")
    for k in ("t_i", "t_p", "t_r"):
        check("timing", k, lambda v: v is None or v >= 0, "must be >= 0")
    check("timing", "C", lambda v: v is None or 0 < v <= 1, "must be in (0, 1]")
    check("noise", "model", lambda v: v in ("markovian", "ou"), "expected 'markovian' or 'ou'")
    check("noise", "tau_c", lambda v: v > 0, "must be > 0")
    check("noise", "dt", lambda v: v is None or 0 < v <= nz["tau_c"] / 10,
          "must be in (0, tau_c/10]")
    check("noise", "n_traj", lambda v: v >= 100, "must be >= 100")
    check("noise", "seed", lambda v: 0 <= v < 2**64, "must be an unsigned 64-bit integer")
    check("sweep", "mode", lambda v: v in ("sweep", "single", "optimal"),
          "expected 'sweep', 'single' or 'optimal'")
    for k in ("T2_min", "B_min"):
        check("sweep", k, lambda v: v > 0, "must be > 0")
    check("sweep", "T2_max", lambda v: v >= sw["T2_min"], "must be >= T2_min")
    check("sweep", "B_max", lambda v: v >= sw["B_min"], "must be >= B_min")
    for k in ("T2_points", "B_points"):
        check("sweep", k, lambda v: v >= 1, "must be >= 1")
    check("sweep", "tau_values",
          lambda v: len(v) > 0 and all(isinstance(x, _NUM) and not isinstance(x, bool)
                                       and x > 0 for x in v),
          "must be a non-empty list of positive numbers")
    check("sweep", "n_grid", lambda v: v >= 400, "must be >= 400")
    check("sweep", "ps_floor", lambda v: 0 <= v < 1, "must be in [0, 1)")
    check("output", "format", lambda v: v in ("csv", "json"), "expected 'csv' or 'json'")
    check("output", "precision", lambda v: 1 <= v <= 17, "must be in [1, 17]")
    return eff


def load(path: str | Path | None, command: str) -> dict:
    if path is None:
        return resolve({}, command)
    text = load_text(path)
    data, lines = parse(text, str(path))
    return resolve(data, command, lines, str(path))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def echo_lines(eff: dict) -> list[str]:
    """Effective config as TOML lines (None values and the output path omitted)."""
    out = []
    for section, body in eff.items():
        out.append(f"[{section}]")
        for key, value in body.items():
            if value is None or (section, key) in ECHO_EXCLUDE:
                continue
            out.append(f"{key} = {_toml_value(value)}")
    return out


def config_hash(eff: dict) -> str:
    canon = {s: {k: v for k, v in b.items() if v is not None and (s, k) not in ECHO_EXCLUDE}
             for s, b in eff.items()}
    blob = json.dumps(canon, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
