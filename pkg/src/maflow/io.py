"""Persistence: field snapshots, trajectory directories, verdict files.

Field snapshot format (magic bytes "MAFL", all little-endian):

    bytes 0..3    magic "MAFL"
    bytes 4..7    uint32  n        complex dimension
    bytes 8..11   uint32  res      points per real axis
    bytes 12..19  float64 period
    bytes 20..27  float64 t        time stamp of the field
    bytes 28..    float64 data, res^(2n) values, C (row-major) order

Round trips are bit-exact.  A trajectory directory holds series.csv with
the fixed column schema, meta.json, the h / psi_chi fields when present,
and one phi / phidot snapshot pair per recorded snapshot time.
"""

import hashlib
import json
import os
import struct

import numpy as np

from . import functionals as fnl
from .errors import ConfigError
from .flow import FlowConfig, Snapshot, Trajectory, TwistSpec
from .geometry import PotentialField, TorusGrid

MAGIC = b"MAFL"
_HEADER = struct.Struct("<4sIIdd")


def write_field(path, field, t=0.0):
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.n, g.res, g.period, float(t)))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path):
    """Returns (PotentialField, t)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, n, res, period, t = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ConfigError(f"{path}: not a MAFL snapshot")
        grid = TorusGrid(n, res, period)
        data = np.frombuffer(fh.read(grid.npoints * 8), dtype="<f8")
        if data.size != grid.npoints:
            raise ConfigError(f"{path}: truncated snapshot")
        return PotentialField(grid, data.reshape(grid.shape).copy()), t


def field_hash(field):
    if field is None:
        return ""
    return hashlib.sha256(
        np.ascontiguousarray(field.values, dtype="<f8").tobytes()).hexdigest()[:16]


def write_series_csv(path, times, series):
    cols = fnl.SERIES_COLUMNS
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(times)):
            fh.write(",".join(f"{float(series[c][i]):.17g}" for c in cols) + "\n")


def read_series_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(x) for x in row] for row in rows])
    series = {name: data[:, i] for i, name in enumerate(header)}
    return series["t"], series


def save_trajectory(traj, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    write_series_csv(os.path.join(dirpath, "series.csv"), traj.times, traj.series)
    snap_index = []
    for i, s in enumerate(traj.snapshots):
        phi = PotentialField(traj.grid, s.phi)
        dot = PotentialField(traj.grid, s.phi_dot)
        write_field(os.path.join(dirpath, f"snap_{i:03d}_phi.mafl"), phi, s.t)
        write_field(os.path.join(dirpath, f"snap_{i:03d}_phidot.mafl"), dot, s.t)
        snap_index.append({"i": i, "t": s.t, "min_eig": s.min_eig})
    meta = dict(traj.meta)
    meta["snapshot_index"] = snap_index
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return dirpath


def save_run(traj, dirpath, config=None):
    """Trajectory plus the fields needed to rebuild its FlowConfig."""
    save_trajectory(traj, dirpath)
    if config is not None:
        if config.h is not None:
            write_field(os.path.join(dirpath, "h.mafl"), config.h)
        if config.twist.psi_chi is not None:
            write_field(os.path.join(dirpath, "psi_chi.mafl"), config.twist.psi_chi)
    return dirpath


def load_trajectory(dirpath):
    with open(os.path.join(dirpath, "meta.json")) as fh:
        meta = json.load(fh)
    grid = TorusGrid(meta["n"], meta["res"], meta["period"])
    times, series = read_series_csv(os.path.join(dirpath, "series.csv"))
    snaps = []
    for rec in meta.pop("snapshot_index", []):
        i = rec["i"]
        phi, t = read_field(os.path.join(dirpath, f"snap_{i:03d}_phi.mafl"))
        dot, _ = read_field(os.path.join(dirpath, f"snap_{i:03d}_phidot.mafl"))
        snaps.append(Snapshot(t, phi.values, dot.values, rec["min_eig"]))
    return Trajectory(grid, meta, times, series, snaps)


def load_run_config(dirpath):
    """Rebuild the FlowConfig of a saved run (for restarts and verifiers)."""
    with open(os.path.join(dirpath, "meta.json")) as fh:
        meta = json.load(fh)
    grid = TorusGrid(meta["n"], meta["res"], meta["period"])
    h = None
    hpath = os.path.join(dirpath, "h.mafl")
    if os.path.exists(hpath):
        h, _ = read_field(hpath)
    psi = None
    ppath = os.path.join(dirpath, "psi_chi.mafl")
    if os.path.exists(ppath):
        psi, _ = read_field(ppath)
    return FlowConfig(
        grid=grid, variant=meta["variant"], twist=TwistSpec(meta["c"], psi), h=h,
        T=meta["T"], dt_policy=meta["dt_policy"], dt_init=meta["dt_init"],
        dt_min=meta.get("dt_min", 1e-12), safety=meta["safety"],
        record_every=meta["record_every"],
        snapshot_times=tuple(meta.get("snapshot_times", ())),
        dealias=meta.get("dealias", False),
        stab_factor=meta.get("stab_factor", 1.0))


def write_verdicts(path, reports):
    payload = [r.to_dict() for r in reports]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def level_dirs(rundir):
    out = sorted(d for d in os.listdir(rundir) if d.startswith("level_"))
    return [os.path.join(rundir, d) for d in out]
