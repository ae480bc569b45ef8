"""On-disk formats.

Projector: ``<stem>.bin`` holds V (d x r) then W (d x r), row-major little-endian
float64, no header. ``<stem>.json`` is the sidecar with dim, rank, kind,
metric_hash, eigenvalues, indices, config_hash and the sha256 of the binary.

Chain: 8-byte magic ``DFLISCH1``, a little-endian uint64 header length, the UTF-8 JSON
header (sorted keys; at least dim, K, kernel, seed, N, rank), then K records of
dim + 2 little-endian float64 values: state, log-target, accept flag (0 or 1).
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .linalg import RankRProjector, ValidationError
from .samplers import ChainRecord

CHAIN_MAGIC = b"DFLISCH1"
_F8 = np.dtype("<f8")


class ArtifactError(ValidationError):
    """Missing, corrupt or inconsistent artifact file."""


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _float(float(obj))
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _float(v):
    # JSON has no inf/nan
    if v != v:
        return "nan"
    if v in (float("inf"), float("-inf")):
        return "inf" if v > 0 else "-inf"
    return v


def write_json(path, obj):
    Path(path).write_text(json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ArtifactError(f"missing file: {path}") from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path}: invalid JSON ({e})") from e


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# projector


def _stem(path):
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".bin", ".json") else p


def save_projector(path, proj: RankRProjector, config_hash=None, extra=None):
    stem = _stem(path)
    binp = stem.with_suffix(".bin")
    with open(binp, "wb") as fh:
        fh.write(np.ascontiguousarray(proj.basis, dtype=_F8).tobytes())
        fh.write(np.ascontiguousarray(proj.cobasis, dtype=_F8).tobytes())
    side = {
        "dim": proj.dim,
        "rank": proj.rank,
        "kind": proj.kind,
        "metric_hash": proj.metric_hash,
        "eigenvalues": None if proj.eigenvalues is None else [float(v) for v in proj.eigenvalues],
        "indices": None if proj.indices is None else list(proj.indices),
        "config_hash": config_hash,
        "sha256": sha256_file(binp),
        "layout": "V then W, each dim x rank row-major <f8",
    }
    if extra:
        side.update(extra)
    write_json(stem.with_suffix(".json"), side)
    return binp, stem.with_suffix(".json")


def load_projector(path):
    stem = _stem(path)
    side = read_json(stem.with_suffix(".json"))
    binp = stem.with_suffix(".bin")
    if not binp.exists():
        raise ArtifactError(f"missing file: {binp}")
    if side.get("sha256") and sha256_file(binp) != side["sha256"]:
        raise ArtifactError(f"{binp} does not match its sidecar checksum")
    d, r = int(side["dim"]), int(side["rank"])
    raw = np.fromfile(binp, dtype=_F8)
    if raw.size != 2 * d * r:
        raise ArtifactError(f"{binp} holds {raw.size} values, expected {2 * d * r}")
    v = raw[: d * r].reshape(d, r)
    w = raw[d * r :].reshape(d, r)
    eig = side.get("eigenvalues")
    idx = side.get("indices")
    proj = RankRProjector(
        v,
        w,
        kind=side.get("kind", "generic"),
        eigenvalues=None if eig is None else np.asarray(eig, dtype=float),
        metric_hash=side.get("metric_hash"),
        indices=None if idx is None else tuple(int(i) for i in idx),
    )
    return proj, side


# chains


def chain_header(rec: ChainRecord, seed=None, extra=None):
    info = rec.info
    hdr = {
        "dim": rec.dim,
        "K": rec.n_steps,
        "kernel": info.get("kernel"),
        "seed": rec.seed if seed is None else seed,
        "N": info.get("N"),
        "rank": info.get("rank"),
        "method": rec.method,
        "space": rec.space,
        "info": info,
    }
    if extra:
        hdr.update(extra)
    return jsonable(hdr)


def write_chain(path, rec: ChainRecord, seed=None, extra=None):
    hdr = json.dumps(chain_header(rec, seed, extra), sort_keys=True, separators=(",", ":")).encode()
    body = np.empty((rec.n_steps, rec.dim + 2), dtype=_F8)
    body[:, : rec.dim] = rec.states
    body[:, rec.dim] = rec.log_target
    body[:, rec.dim + 1] = rec.accepted
    with open(path, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        fh.write(body.tobytes())


def read_chain(path, projector=None):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise ArtifactError(f"missing file: {path}") from e
    if data[:8] != CHAIN_MAGIC:
        raise ArtifactError(f"{path} is not a chain file")
    (n,) = struct.unpack("<Q", data[8:16])
    hdr = json.loads(data[16 : 16 + n].decode())
    d, k = int(hdr["dim"]), int(hdr["K"])
    body = np.frombuffer(data, dtype=_F8, offset=16 + n)
    if body.size != k * (d + 2):
        raise ArtifactError(f"{path}: truncated chain ({body.size} values, expected {k * (d + 2)})")
    body = body.reshape(k, d + 2)
    rec = ChainRecord(
        body[:, :d].copy(),
        body[:, d].copy(),
        body[:, d + 1] > 0.5,
        hdr.get("method", "unknown"),
        hdr.get("seed"),
        hdr.get("space", "full"),
        hdr.get("info", {}),
        projector=projector,
    )
    return rec, hdr


def chain_to_csv(path, rec: ChainRecord):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(rec.dim)] + ["log_target", "accepted"])
        for s, lp, a in zip(rec.states, rec.log_target, rec.accepted):
            w.writerow([repr(float(v)) for v in s] + [repr(float(lp)), int(a)])


# tables


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as e:
        raise ArtifactError(f"missing file: {path}") from e
    return rows[0], rows[1:]


def write_spectrum(path, eigenvalues):
    write_csv(path, ["index", "lambda"], [(i + 1, float(v)) for i, v in enumerate(eigenvalues)])


def write_vector(path, values, name="y"):
    write_csv(path, ["index", name], [(i, float(v)) for i, v in enumerate(np.asarray(values))])


def read_vector(path):
    header, rows = read_csv(path)
    if len(header) != 2:
        raise ArtifactError(f"{path}: expected two columns")
    return np.array([float(r[1]) for r in rows])
