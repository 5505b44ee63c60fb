"""Plain-text run configuration (INI key-value, schema version 1).

Sections and keys (defaults in parentheses; unknown sections or keys are
rejected):

  [schema]   version (1)
  [grid]     n (1) | res (128) | period (1.0)
  [initial]  kind (smooth) | modes ("") | gamma (1.0) | a (0.5) |
             floor (-1.0) | s0 (1.0) | center ("") | clip_floor (-1e6) |
             path ("") | levels (1) | trunc_depth (1.0) | delta0 ("") |
             ratio (0.7)
  [flow]     variant (cmaf) | c (0.0) | psi_chi_modes ("") | h_modes ("") |
             T (1.0) | dt_policy (rk4) | dt_init (1e-2) | dt_min (1e-12) |
             safety (0.9) | record_every (25) | dealias (false) |
             stab_factor (1.0)
  [output]   dir (out) | snapshots ("")
  [verify]   checks ("") | tol.<check> (per-check override)

A mode list is semicolon-separated entries "k1 k2 ... : amp : phase", one
integer frequency per real axis, e.g. "1 0 : 0.05 : 0.0; 0 2 : 0.01 : 1.2".
The environment variable MAFLOW_OUTPUT_ROOT prefixes relative output dirs.
"""

import configparser
import os
from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import ConfigError
from .flow import FlowConfig, TwistSpec
from .geometry import PotentialField, TorusGrid
from .initial import PotentialSpec, cos_mode

SCHEMA_VERSION = 1

_KNOWN = {
    "schema": {"version"},
    "grid": {"n", "res", "period"},
    "initial": {"kind", "modes", "gamma", "a", "floor", "s0", "center",
                "clip_floor", "path", "levels", "trunc_depth", "delta0",
                "ratio"},
    "flow": {"variant", "c", "psi_chi_modes", "h_modes", "T", "dt_policy",
             "dt_init", "dt_min", "safety", "record_every", "dealias",
             "stab_factor"},
    "output": {"dir", "snapshots"},
    "verify": set(),   # checks + tol.<name> keys, validated separately
}


def parse_modes(text):
    """'k1 k2 : amp : phase; ...' -> [(kvec, amp, phase), ...]"""
    out = []
    for entry in text.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        parts = [p.strip() for p in entry.split(":")]
        if len(parts) not in (2, 3):
            raise ConfigError(f"bad mode entry {entry!r}")
        kvec = tuple(int(k) for k in parts[0].split())
        amp = float(parts[1])
        phase = float(parts[2]) if len(parts) == 3 else 0.0
        out.append((kvec, amp, phase))
    return out


def _mode_field(grid, text):
    modes = parse_modes(text)
    if not modes:
        return None
    vals = np.zeros(grid.shape)
    for kvec, amp, phase in modes:
        if len(kvec) != 2 * grid.n:
            raise ConfigError(f"mode {kvec} has {len(kvec)} entries, "
                              f"need {2 * grid.n}")
        vals += cos_mode(grid, kvec, amp, phase)
    return PotentialField(grid, vals)


@dataclass
class RunSetup:
    grid: TorusGrid
    spec: PotentialSpec
    levels: int
    trunc_depth: float
    delta0: float
    ratio: float
    flow: FlowConfig
    outdir: str
    checks: list = dfield(default_factory=list)
    tolerances: dict = dfield(default_factory=dict)


def _get(cp, section, key, default, cast):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from None
    return default


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str   # keys are case-sensitive (T vs t)
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        if section == "verify":
            for key in cp.options(section):
                if key != "checks" and not key.startswith("tol."):
                    raise ConfigError(f"unknown key {key!r} in [verify]")
        else:
            for key in cp.options(section):
                if key not in _KNOWN[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
    version = _get(cp, "schema", "version", SCHEMA_VERSION, int)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}")

    try:
        grid = TorusGrid(_get(cp, "grid", "n", 1, int),
                         _get(cp, "grid", "res", 128, int),
                         _get(cp, "grid", "period", 1.0, float))
    except ValueError as e:
        raise ConfigError(f"[grid] {e}") from None

    kind = _get(cp, "initial", "kind", "smooth", str)
    center_text = _get(cp, "initial", "center", "", str).strip()
    center = tuple(float(c) for c in center_text.replace(",", " ").split()) \
        if center_text else None
    if center is not None and len(center) != 2 * grid.n:
        raise ConfigError(f"center needs {2 * grid.n} coordinates")
    spec = PotentialSpec(
        kind=kind,
        gamma=_get(cp, "initial", "gamma", 1.0, float),
        a=_get(cp, "initial", "a", 0.5, float),
        center=center,
        floor=_get(cp, "initial", "floor", -1.0, float),
        s0=_get(cp, "initial", "s0", 1.0, float),
        modes=parse_modes(_get(cp, "initial", "modes", "", str)),
        path=_get(cp, "initial", "path", "", str),
        clip_floor=_get(cp, "initial", "clip_floor", -1e6, float))

    snap_text = _get(cp, "output", "snapshots", "", str).strip()
    snapshots = tuple(float(s) for s in snap_text.replace(",", " ").split()) \
        if snap_text else ()
    flow = FlowConfig(
        grid=grid,
        variant=_get(cp, "flow", "variant", "cmaf", str),
        twist=TwistSpec(_get(cp, "flow", "c", 0.0, float),
                        _mode_field(grid, _get(cp, "flow", "psi_chi_modes", "", str))),
        h=_mode_field(grid, _get(cp, "flow", "h_modes", "", str)),
        T=_get(cp, "flow", "T", 1.0, float),
        dt_policy=_get(cp, "flow", "dt_policy", "rk4", str),
        dt_init=_get(cp, "flow", "dt_init", 1e-2, float),
        dt_min=_get(cp, "flow", "dt_min", 1e-12, float),
        safety=_get(cp, "flow", "safety", 0.9, float),
        record_every=_get(cp, "flow", "record_every", 25, int),
        snapshot_times=snapshots,
        dealias=_get(cp, "flow", "dealias", False, bool),
        stab_factor=_get(cp, "flow", "stab_factor", 1.0, float))

    outdir = _get(cp, "output", "dir", "out", str)
    root = os.environ.get("MAFLOW_OUTPUT_ROOT", "")
    if root and not os.path.isabs(outdir):
        outdir = os.path.join(root, outdir)

    checks_text = _get(cp, "verify", "checks", "", str)
    checks = [c.strip() for c in checks_text.replace(",", " ").split() if c.strip()]
    tolerances = {}
    if cp.has_section("verify"):
        for key in cp.options("verify"):
            if key.startswith("tol."):
                tolerances[key[4:]] = float(cp.get("verify", key))

    delta0_text = _get(cp, "initial", "delta0", "", str).strip()
    return RunSetup(
        grid=grid, spec=spec,
        levels=_get(cp, "initial", "levels", 1, int),
        trunc_depth=_get(cp, "initial", "trunc_depth", 1.0, float),
        delta0=float(delta0_text) if delta0_text else None,
        ratio=_get(cp, "initial", "ratio", 0.7, float),
        flow=flow, outdir=outdir, checks=checks, tolerances=tolerances)
