"""On-disk formats: rating CSVs, dataset bundles, checkpoints, JSON artifacts.

Every writer goes through a temporary sibling followed by ``os.replace`` so a
reader never observes a half-written file or bundle.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .datagen import CausalDataset
from .errors import BundleIOError, ValidationError

__version__ = "0.1.0"

BUNDLE_FILES = ("manifest.json", "ratings_full.csv", "ratings_obs.csv", "exposures.csv", "features.csv",
                "confounders_true.csv")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def atomic_write_text(path: Path | str, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path | str, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Raw ratings
# ---------------------------------------------------------------------------

def read_ratings_csv(path):
    """Parse ``user_id,item_id,rating`` into a dense matrix.

    IDs are remapped to 0-based indices in sorted order; returns
    ``(matrix, user_ids, item_ids)`` where the id lists give the mapping.
    """
    triples = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:3]] != ["user_id", "item_id", "rating"]:
                raise ValidationError(f"{path}: expected header 'user_id,item_id,rating'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rating = int(row[2])
                except (ValueError, IndexError) as exc:
                    raise ValidationError(f"{path}:{lineno}: bad row {row!r}") from exc
                if not 1 <= rating <= 5:
                    raise ValidationError(f"{path}:{lineno}: rating {rating} outside 1..5")
                triples.append((row[0].strip(), row[1].strip(), rating))
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc

    def sort_key(s):
        return (0, int(s), s) if s.lstrip("-").isdigit() else (1, 0, s)

    users = sorted({t[0] for t in triples}, key=sort_key)
    items = sorted({t[1] for t in triples}, key=sort_key)
    u_index = {u: k for k, u in enumerate(users)}
    i_index = {i: k for k, i in enumerate(items)}
    matrix = np.zeros((len(users), len(items)), dtype=np.int64)
    for u, i, r in triples:
        matrix[u_index[u], i_index[i]] = r
    return matrix, users, items


def write_ratings_csv(path, matrix: np.ndarray, user_ids=None, item_ids=None) -> None:
    rows = ["user_id,item_id,rating"]
    for u, i in zip(*np.nonzero(matrix)):
        uid = user_ids[u] if user_ids is not None else u
        iid = item_ids[i] if item_ids is not None else i
        rows.append(f"{uid},{iid},{int(matrix[u, i])}")
    atomic_write_text(path, "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Dataset bundles
# ---------------------------------------------------------------------------

def _triplets(matrix: np.ndarray, dense: bool = False) -> str:
    if dense:
        u, i = np.indices(matrix.shape)
        u, i = u.ravel(), i.ravel()
    else:
        u, i = np.nonzero(matrix)
    vals = matrix[u, i]
    lines = ["u,i,v"]
    lines += [f"{a},{b},{int(c)}" for a, b, c in zip(u.tolist(), i.tolist(), vals.tolist())]
    return "\n".join(lines) + "\n"


def dense_csv(matrix: np.ndarray, prefix: str) -> str:
    header = ",".join(f"{prefix}{k}" for k in range(matrix.shape[1]))
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in matrix]
    return "\n".join(lines) + "\n"


def _read_triplets(path: Path, shape) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    out = np.zeros(shape, dtype=np.int64)
    if data.size:
        out[data[:, 0], data[:, 1]] = data[:, 2]
    return out


def read_dense_csv(path: Path, n_rows: int) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    n_cols = len(header.split(",")) if header else 0
    if n_cols == 0:
        return np.zeros((n_rows, 0))
    return np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2).reshape(n_rows, n_cols)


def _check_overwrite(out: Path, chash: str | None) -> None:
    manifest = out / "manifest.json"
    if out.exists() and manifest.exists():
        existing = read_json(manifest).get("config_hash")
        if existing != chash:
            raise BundleIOError(f"{out} holds artifacts for config {existing}; refusing to overwrite with {chash}")
    elif out.exists() and any(out.iterdir()):
        raise BundleIOError(f"{out} exists and is not an artifact directory")


def _commit_dir(tmp: Path, out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def save_bundle(ds: CausalDataset, out_dir, chash: str | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    _check_overwrite(out, chash)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        manifest = {**ds.manifest, **(extra or {}), "config_hash": chash, "library_version": __version__,
                    "shape": [ds.n_users, ds.n_items], "n_features": int(ds.features.shape[1]),
                    "latent_dim": int(ds.confounders_true.shape[1])}
        (tmp / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
        (tmp / "ratings_full.csv").write_text(_triplets(ds.ratings_full, dense=True), encoding="utf-8")
        (tmp / "ratings_obs.csv").write_text(_triplets(ds.ratings_obs), encoding="utf-8")
        (tmp / "exposures.csv").write_text(_triplets(ds.exposures), encoding="utf-8")
        (tmp / "features.csv").write_text(dense_csv(ds.features, "x"), encoding="utf-8")
        (tmp / "confounders_true.csv").write_text(dense_csv(ds.confounders_true, "c"), encoding="utf-8")
        _commit_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def load_bundle(path) -> CausalDataset:
    path = Path(path)
    for name in BUNDLE_FILES:
        if not (path / name).exists():
            raise BundleIOError(f"bundle {path} is missing {name}")
    manifest = read_json(path / "manifest.json")
    shape = tuple(manifest["shape"])
    ratings_full = _read_triplets(path / "ratings_full.csv", shape)
    exposures = _read_triplets(path / "exposures.csv", shape)
    ratings_obs = _read_triplets(path / "ratings_obs.csv", shape)
    features = read_dense_csv(path / "features.csv", shape[0])
    confounders = read_dense_csv(path / "confounders_true.csv", shape[0])
    return CausalDataset(ratings_full, exposures, ratings_obs, features, confounders, manifest)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_dir(out_dir, files: dict, manifest: dict, chash: str | None = None) -> Path:
    """Write ``files`` (name -> str or bytes) plus ``manifest.json`` as one atomic directory."""
    out = Path(out_dir)
    _check_overwrite(out, chash)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        manifest = {**manifest, "config_hash": chash, "library_version": __version__}
        (tmp / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
        for name, body in files.items():
            if isinstance(body, bytes):
                (tmp / name).write_bytes(body)
            else:
                (tmp / name).write_text(body, encoding="utf-8")
        _commit_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def save_checkpoint(out_dir, params: dict, names: list[str], meta: dict, chash: str | None = None,
                    files: dict | None = None) -> Path:
    """``manifest.json`` (tensor order and shapes) plus ``weights.bin`` (little-endian float64).

    ``files`` maps extra file names to text written into the same directory.
    """
    tensors = [{"name": n, "shape": list(params[n].shape)} for n in names]
    blob = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    return save_dir(out_dir, {"weights.bin": blob, **(files or {})}, {**meta, "tensors": tensors}, chash)


def load_checkpoint(path):
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    try:
        raw = np.frombuffer((path / "weights.bin").read_bytes(), dtype="<f8")
    except OSError as exc:
        raise BundleIOError(f"cannot read weights in {path}: {exc}") from exc
    params = {}
    offset = 0
    for t in manifest["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        if offset + size > raw.size:
            raise BundleIOError(f"{path}/weights.bin is truncated")
        params[t["name"]] = raw[offset:offset + size].reshape(t["shape"]).astype(np.float64)
        offset += size
    if offset != raw.size:
        raise BundleIOError(f"{path}/weights.bin has {raw.size - offset} trailing values")
    return params, manifest
