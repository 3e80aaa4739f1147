"""On-disk formats: CSV time series, JSON snapshots, reports and checkpoints.

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly, so a reloaded checkpoint is bit-identical.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .domain import DomainSpec, Field, build_grid
from .errors import CheckpointError
from .flow import COLUMNS, FlowState, TrajectoryRecord

CSV_HEADER = ",".join(COLUMNS)
CHECKPOINT_FORMAT = "sphereflow-checkpoint"
CHECKPOINT_VERSION = "1"


def fmt(x: float) -> str:
    """17 significant digits; non-finite values as ``nan``/``inf``/``-inf``."""
    x = float(x)
    if math.isfinite(x):
        return format(x, ".17g")
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _json_num(x: float) -> str:
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else "null"


def _json_array(values) -> str:
    return "[" + ", ".join(_json_num(v) for v in values) + "]"


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def csv_text(traj: TrajectoryRecord) -> str:
    lines = [CSV_HEADER]
    lines += [",".join(fmt(x) for x in row) for row in traj.rows]
    return "\n".join(lines) + "\n"


def write_csv(traj: TrajectoryRecord, path) -> None:
    _atomic_write(path, csv_text(traj))


def read_csv(path) -> np.ndarray:
    """Rows of a series file as an array; checks the header."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return np.loadtxt(fh, delimiter=",", ndmin=2)


def write_snapshots(traj: TrajectoryRecord, path) -> None:
    """JSON list of ``{t, nodes, values}`` records."""
    nodes = _json_array(traj.final_field.grid.nodes)
    recs = [
        '{"t": %s, "nodes": %s, "values": %s}' % (_json_num(t), nodes, _json_array(v))
        for t, v in traj.snapshots
    ]
    _atomic_write(path, "[\n" + ",\n".join(recs) + "\n]\n")


def write_json(obj, path) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_text(state: FlowState, **extra) -> str:
    """JSON checkpoint; ``extra`` entries (for instance ``dt``) go into the header."""
    spec = state.u.grid.spec.to_dict()
    head = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "grid": spec,
    }
    parts = [f'  "{k}": {json.dumps(v)}' for k, v in head.items()]
    parts.append(f'  "t": {_json_num(state.t)}')
    parts.append(f'  "step_index": {int(state.step_index)}')
    parts.append(f'  "mass0": {_json_num(state.mass0)}')
    parts.append(f'  "last_mu": {_json_num(state.last_mu)}')
    for k, v in extra.items():
        if v is not None:
            parts.append(f'  "{k}": ' + (_json_num(v) if isinstance(v, float) else json.dumps(v)))
    parts.append(f'  "values": {_json_array(state.u.values)}')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def save_checkpoint(state: FlowState, path, **extra) -> None:
    _atomic_write(path, checkpoint_text(state, **extra))


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> tuple[FlowState, dict]:
    """Inverse of :func:`checkpoint_text`; returns the state and the raw header."""
    if not text.strip():
        raise CheckpointError(f"{source}: empty checkpoint file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"{source}: corrupt checkpoint at line {exc.lineno} column {exc.colno} "
            f"(char {exc.pos}): {exc.msg}"
        ) from None
    if not isinstance(data, dict):
        raise CheckpointError(f"{source}: checkpoint must be a JSON object")
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{source}: not a checkpoint (format tag {data.get('format')!r})")
    version = data.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{source}: unsupported checkpoint version {version!r} (this build reads {CHECKPOINT_VERSION!r})"
        )
    missing = [k for k in ("grid", "t", "step_index", "mass0", "values") if k not in data]
    if missing:
        raise CheckpointError(f"{source}: missing fields {missing}")
    try:
        grid = build_grid(DomainSpec.from_dict(data["grid"]))
        values = np.asarray(data["values"], dtype=float)
        last_mu = data.get("last_mu")
        state = FlowState(
            t=float(data["t"]),
            u=Field(grid, values),
            step_index=int(data["step_index"]),
            last_mu=math.nan if last_mu is None else float(last_mu),
            mass0=float(data["mass0"]),
        )
    except Exception as exc:  # malformed field contents
        raise CheckpointError(f"{source}: invalid checkpoint contents: {exc}") from None
    return state, data


def load_checkpoint(path) -> FlowState:
    return load_checkpoint_with_header(path)[0]


def load_checkpoint_with_header(path) -> tuple[FlowState, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc.strerror}") from None
    return parse_checkpoint(text, str(path))


def checkpoint_roundtrip(state: FlowState, path) -> FlowState:
    """Write ``state`` to ``path`` and read it back."""
    save_checkpoint(state, path)
    return load_checkpoint(path)
