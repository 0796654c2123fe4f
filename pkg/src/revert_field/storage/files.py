"""
File formats of the command-line runs.

- point clouds: CSV `x,y[,z]`, header optional
- field grids: CSV `x,y,d_hat,o_hat,uncertainty,status`
- reports, maps and run manifests: JSON with sorted keys
- measurement archives: a directory with `manifest.json` and one `z_NNN.npy` per position
- envelopes `d,e`, benchmark scatter and echolocation errors: CSV

Nothing written here carries a timestamp, so re-running a command with the
same configuration reproduces its files byte for byte.
"""

import csv
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .. import __version__
from ..core.exceptions import InvalidArgumentError
from ..core.models import InputRecord, RunConfig, RunManifest, ScatterSample
from ..fields.base_field import FieldQuery
from ..fields.gp_field import PointCloud
from ..ugw.ugw_signal import EnvelopeSignal

logger = logging.getLogger(__name__)

GRID_HEADER = ["x", "y", "d_hat", "o_hat", "uncertainty", "status"]
ARCHIVE_MANIFEST = "manifest.json"


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _has_header(path: str) -> bool:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first:
        raise InvalidArgumentError(f"point cloud file {path} is empty")
    try:
        [float(v) for v in first.split(",")]
        return False
    except ValueError:
        return True


def read_point_cloud(path: str) -> PointCloud:
    """Reads `x,y[,z]` rows; a non-numeric first row is taken as a header."""
    skip = 1 if _has_header(path) else 0
    points = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    logger.debug(f"Read {len(points)} points from {path}")
    return PointCloud(points)


def write_point_cloud(path: str, cloud: PointCloud) -> str:
    _ensure_parent(path)
    header = ",".join(["x", "y", "z"][:cloud.dim])
    np.savetxt(path, cloud.points, delimiter=",", header=header, comments="", fmt="%.12g")
    return path


def write_field_grid(path: str, points: np.ndarray, query: FieldQuery) -> str:
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(GRID_HEADER)
        for p, d, o, u, status in zip(points, query.d_hat, query.o_hat, query.uncertainty, query.statuses):
            writer.writerow([_fmt(p[0]), _fmt(p[1]), _fmt(d), _fmt(o), _fmt(u), status.value])
    return path


def read_field_grid(path: str) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_json(path: str, data: Any) -> str:
    """Writes a pydantic model or plain data as JSON with sorted keys."""
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def manifest_path(output: str) -> str:
    return f"{output.rstrip(os.sep)}.manifest.json"


def file_digest(path: str) -> str:
    """sha256 of a file, or of a measurement archive: its manifest then every listed file in order."""
    digest = hashlib.sha256()
    if os.path.isdir(path):
        manifest = os.path.join(path, ARCHIVE_MANIFEST)
        names = read_json(manifest)["files"] if os.path.exists(manifest) else []
        parts = [manifest] + [os.path.join(path, name) for name in names]
    else:
        parts = [path]
    for part in parts:
        with open(part, "rb") as f:
            for block in iter(lambda: f.read(1 << 20), b""):
                digest.update(block)
    return digest.hexdigest()


def input_record(role: str, path: str) -> InputRecord:
    return InputRecord(role=role, path=path, sha256=file_digest(path))


def write_manifest(output: str, command: str, config: RunConfig, outputs: Optional[Sequence[str]] = None,
                   inputs: Optional[Sequence[InputRecord]] = None, walks=None) -> str:
    """
    Writes `<output>.manifest.json` with the resolved config, master seed,
    package version, the input files with their digests and any given walks.
    """
    manifest = RunManifest(command=command, version=__version__, master_seed=config.seed, config=config,
                           outputs=[os.path.basename(o) for o in (outputs or [output])],
                           inputs=list(inputs or []),
                           walks=None if walks is None else [[int(c) for c in walk] for walk in walks])
    return write_json(manifest_path(output), manifest)


def write_envelope_csv(path: str, e: EnvelopeSignal) -> str:
    _ensure_parent(path)
    np.savetxt(path, np.column_stack([e.distances, e.values]), delimiter=",", header="d,e", comments="",
               fmt="%.12g")
    return path


def write_errors_csv(path: str, errors: np.ndarray) -> str:
    """Echolocation position errors as `trajectory,step,err_m` rows, steps counted from 1."""
    errors = np.atleast_2d(errors)
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trajectory", "step", "err_m"])
        for trajectory, row in enumerate(errors):
            for step, err in enumerate(row, start=1):
                writer.writerow([trajectory, step, _fmt(err)])
    return path


def write_scatter_csv(path: str, samples: Iterable[ScatterSample]) -> str:
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["env", "method", "true_distance", "error"])
        for s in samples:
            writer.writerow([s.env, s.method, _fmt(s.true_distance), _fmt(s.error)])
    return path


def save_measurements(directory: str, config: RunConfig, positions: np.ndarray, measurements: np.ndarray) -> str:
    """Measurement archive: manifest (config, seed, positions) plus one `.npy` time series per position."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, z in enumerate(measurements):
        name = f"z_{i:03d}.npy"
        np.save(os.path.join(directory, name), np.asarray(z, dtype=float))
        files.append(name)
    write_json(os.path.join(directory, ARCHIVE_MANIFEST), {
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "positions": np.asarray(positions, dtype=float).tolist(),
        "files": files,
    })
    logger.info(f"Saved {len(files)} measurements to {directory}")
    return directory


def load_measurements(directory: str) -> Tuple[RunConfig, np.ndarray, np.ndarray]:
    """Returns (config, positions, measurements) from a measurement archive."""
    path = os.path.join(directory, ARCHIVE_MANIFEST)
    if not os.path.exists(path):
        raise InvalidArgumentError(f"{directory} is not a measurement archive (missing {ARCHIVE_MANIFEST})")
    manifest = read_json(path)
    config = RunConfig.model_validate(manifest["config"])
    positions = np.array(manifest["positions"], dtype=float)
    measurements = np.stack([np.load(os.path.join(directory, name)) for name in manifest["files"]])
    if len(positions) != len(measurements):
        raise InvalidArgumentError(
            f"archive lists {len(positions)} positions but {len(measurements)} measurement files")
    return config, positions, measurements
