"""
HeatFlow Lab - Field I/O
========================
Binary snapshots, CSV tables and JSON reports. Every file is written to
a temporary sibling first and renamed into place.

Binary field layout (little-endian):
    magic      4 bytes  b"TFLD"
    version    uint32   1
    kind       uint32   0 = float64, 1 = complex128
    ndim       uint32   number of axes
    shape      ndim × uint32
    t          float64  flow time of the snapshot
    payload    C-order values
"""

import csv
import json
import logging
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from bundle_fields import BundleSpec
from donaldson_flow import FlowControls, FlowTrajectory, Verdict
from errors import PreconditionError, StructuralError
from torus_geometry import TorusGeometry

logger = logging.getLogger('FieldIO')

MAGIC = b"TFLD"
VERSION = 1


@contextmanager
def atomic_open(path, mode: str = "w", **kwargs):
    """Open a temporary sibling of `path`; rename over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, mode, **kwargs) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ============================================================================
# BINARY FIELDS
# ============================================================================

def write_field(path, values: np.ndarray, t: float = 0.0) -> None:
    values = np.asarray(values)
    kind = 1 if np.iscomplexobj(values) else 0
    data = np.ascontiguousarray(values, dtype='<c16' if kind else '<f8')
    header = MAGIC + struct.pack("<III", VERSION, kind, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape) + struct.pack("<d", float(t))
    with atomic_open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def read_field(path) -> Tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise StructuralError(f"{path} is not a field file")
    version, kind, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise StructuralError(f"{path}: unsupported field version {version}")
    offset = 16
    shape = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    (t,) = struct.unpack_from("<d", raw, offset)
    offset += 8
    dtype = np.dtype('<c16' if kind else '<f8')
    count = int(np.prod(shape)) if ndim else 1
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
    return values.copy(), t


# ============================================================================
# CSV / JSON
# ============================================================================

def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_field_csv(path, values: np.ndarray, grid_ndim: Optional[int] = None) -> None:
    """
    One row per grid cell: the cell index i0, i1, ... followed by every
    component of the value there (re/im pairs for complex fields).
    """
    values = np.asarray(values)
    grid_ndim = values.ndim if grid_ndim is None else grid_ndim
    if not 0 < grid_ndim <= values.ndim:
        raise StructuralError(f"grid_ndim {grid_ndim} does not fit a field of shape {values.shape}")
    grid = values.shape[:grid_ndim]
    cells = int(np.prod(grid))
    suffixes = ["".join(str(i) for i in idx) for idx in np.ndindex(*values.shape[grid_ndim:])]
    flat = values.reshape(cells, len(suffixes))
    if np.iscomplexobj(values):
        columns = [name for s in suffixes for name in (f"re{s}", f"im{s}")]
        flat = np.stack([flat.real, flat.imag], axis=-1).reshape(cells, -1)
    else:
        columns = [f"v{s}" for s in suffixes]
    index = np.indices(grid).reshape(grid_ndim, cells).T
    header = [f"i{a}" for a in range(grid_ndim)] + columns
    write_csv(path, header, ([*(int(i) for i in idx), *row] for idx, row in zip(index, flat)))


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Verdict):
        return obj.value
    return obj


def write_json(path, payload: Dict) -> None:
    with atomic_open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ============================================================================
# TRAJECTORIES
# ============================================================================

DIAGNOSTIC_COLUMNS = ("t", "residual", "sup_h", "trace", "dissipation")


def write_diagnostics(path, trajectory: FlowTrajectory) -> None:
    s = trajectory.series
    write_csv(path, DIAGNOSTIC_COLUMNS, zip(*(s[c] for c in DIAGNOSTIC_COLUMNS)))


def save_trajectory(run_dir, trajectory: FlowTrajectory, extra: Dict = None) -> Path:
    """snapshots/*.tfld, a.tfld, diagnostics.csv, h_final.csv and trajectory.json under run_dir."""
    run_dir = Path(run_dir)
    spec = trajectory.spec
    names = []
    for k, (t, h) in enumerate(zip(trajectory.snapshot_times, trajectory.snapshots)):
        name = f"snapshots/h_{k:04d}.tfld"
        write_field(run_dir / name, h, t)
        names.append(name)
    write_field(run_dir / "a.tfld", spec.a)
    write_diagnostics(run_dir / "diagnostics.csv", trajectory)
    if trajectory.snapshots:
        write_field_csv(run_dir / "h_final.csv", trajectory.snapshots[-1], spec.geometry.ndim)
    payload = {
        "verdict": trajectory.verdict,
        "geometry": spec.geometry.describe(),
        "bundle": spec.describe(),
        "controls": trajectory.controls.as_dict(),
        "snapshot_times": trajectory.snapshot_times,
        "snapshots": names,
        "series": trajectory.series,
    }
    payload.update(extra or {})
    write_json(run_dir / "trajectory.json", payload)
    logger.info("trajectory saved to %s (%d snapshots)", run_dir, len(names))
    return run_dir


def load_trajectory(run_dir) -> FlowTrajectory:
    """Rebuild a FlowTrajectory (spec, snapshots, series, verdict) from run_dir."""
    run_dir = Path(run_dir)
    meta_path = run_dir / "trajectory.json"
    if not meta_path.exists():
        raise PreconditionError(f"{run_dir} holds no trajectory.json")
    meta = read_json(meta_path)
    g = meta["geometry"]
    geometry = TorusGeometry(n=g["n"], grid=g["grid"], periods=tuple(g["periods"]))
    a, _ = read_field(run_dir / "a.tfld")
    b = meta["bundle"]
    spec = BundleSpec(geometry, tuple(b["block_ranks"]), tuple(b["degrees"]), a, b.get("conformal", False))
    c = meta["controls"]
    controls = FlowControls(dt0=c["dt0"], t_max=c["t_max"], eps=c["eps"], blowup=c["blowup"],
                            stride=c["stride"], normalize_det=c["normalize_det"])
    traj = FlowTrajectory(spec=spec, controls=controls)
    for name in meta["snapshots"]:
        h, t = read_field(run_dir / name)
        traj.snapshot_times.append(t)
        traj.snapshots.append(h)
    traj.series = {k: list(v) for k, v in meta["series"].items()}
    if meta.get("verdict"):
        traj.verdict = Verdict(meta["verdict"])
    return traj
