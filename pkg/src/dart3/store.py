"""Query/gallery embedding sets and their NPY + JSON-manifest storage."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .errors import ConsistencyError, DataError, FormatError, StorageError

ROLES = ("query", "gallery")
_ACCEPTED_DESCR = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """N x d float32 embeddings with aligned person and camera IDs.

    ``pids`` may hold -1 for unknown identities. Arrays are copied and made
    read-only on construction.
    """

    data: np.ndarray
    pids: np.ndarray
    camids: np.ndarray
    role: str = "query"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DataError("embedding dimension must be >= 1")
        pids = np.asarray(self.pids, dtype=np.int64).reshape(-1)
        camids = np.asarray(self.camids, dtype=np.int64).reshape(-1)
        n = data.shape[0]
        if pids.shape[0] != n or camids.shape[0] != n:
            raise ConsistencyError(
                f"{n} rows but {pids.shape[0]} pids and {camids.shape[0]} camids")
        if self.role not in ROLES:
            raise DataError(f"role must be one of {ROLES}, got {self.role!r}")
        if n and camids.min() < 0:
            raise DataError("camera IDs must be non-negative")
        bad = ~np.isfinite(data).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite value in row {int(np.flatnonzero(bad)[0])}")
        object.__setattr__(self, "data", _frozen(data.astype(np.float32, copy=False)))
        object.__setattr__(self, "pids", _frozen(pids))
        object.__setattr__(self, "camids", _frozen(camids))

    def __len__(self):
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def cameras(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.camids))

    def with_data(self, data, role: str | None = None) -> "EmbeddingSet":
        """Same metadata, new feature matrix."""
        return EmbeddingSet(data, self.pids, self.camids, role or self.role)

    def equals(self, other: "EmbeddingSet") -> bool:
        return (
            self.role == other.role
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and np.array_equal(self.pids, other.pids)
            and np.array_equal(self.camids, other.camids)
        )


def camera_partition(eset: EmbeddingSet) -> dict[int, list[int]]:
    """Map each camera ID to the row indices captured by it, keys ascending."""
    buckets: dict[int, list[int]] = {}
    for cam in eset.cameras:
        buckets[cam] = np.flatnonzero(eset.camids == cam).tolist()
    return buckets


def _read_npy(path: Path) -> np.ndarray:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise StorageError(f"cannot open {path}: {exc}") from exc
    with fh:
        try:
            version = npy_format.read_magic(fh)
            if version != (1, 0):
                raise FormatError(f"{path}: NPY version {version}, expected (1, 0)")
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fh)
        except FormatError:
            raise
        except (ValueError, SyntaxError, EOFError) as exc:
            raise FormatError(f"{path}: malformed NPY header ({exc})") from exc
        if dtype.str not in _ACCEPTED_DESCR:
            raise FormatError(f"{path}: dtype {dtype.str}, expected '<f4' or '<f8'")
        if fortran_order:
            raise FormatError(f"{path}: fortran_order arrays are not accepted")
        if len(shape) != 2:
            raise FormatError(f"{path}: expected a 2-D array, got shape {shape}")
        count = shape[0] * shape[1]
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated data ({len(raw)} bytes)")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def _read_manifest(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    for key in ("role", "dim", "count", "records"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing {key!r}")
    if doc["role"] not in ROLES:
        raise FormatError(f"{path}: unknown role {doc['role']!r}")
    if not isinstance(doc["records"], list):
        raise FormatError(f"{path}: 'records' must be a list")
    for rec in doc["records"]:
        if not isinstance(rec, dict) or not all(
                isinstance(rec.get(k), int) for k in ("index", "pid", "camid")):
            raise FormatError(f"{path}: malformed record {rec!r}")
    return doc


def load_embedding_set(array_path, manifest_path) -> EmbeddingSet:
    data = _read_npy(Path(array_path))
    doc = _read_manifest(Path(manifest_path))
    n, d = data.shape
    if doc["count"] != n or doc["dim"] != d or len(doc["records"]) != doc["count"]:
        raise ConsistencyError(
            f"manifest says count={doc['count']} dim={doc['dim']} "
            f"({len(doc['records'])} records), array is {n}x{d}")
    records = sorted(doc["records"], key=lambda r: r["index"])
    if [r["index"] for r in records] != list(range(n)):
        raise ConsistencyError("manifest indices must be 0..count-1, each exactly once")
    pids = np.array([r["pid"] for r in records], dtype=np.int64)
    camids = np.array([r["camid"] for r in records], dtype=np.int64)
    return EmbeddingSet(data.astype(np.float32), pids, camids, doc["role"])


def _format_manifest(manifest: dict) -> str:
    # one record per line keeps the manifest diff-friendly
    head = {k: v for k, v in manifest.items() if k != "records"}
    lines = [json.dumps(r) for r in manifest["records"]]
    body = ",\n  ".join(lines)
    records = f"[\n  {body}\n]" if lines else "[]"
    return json.dumps(head)[:-1] + f', "records": {records}}}\n'


def save_embedding_set(eset: EmbeddingSet, array_path, manifest_path) -> None:
    manifest = {
        "role": eset.role,
        "dim": eset.dim,
        "count": len(eset),
        "records": [
            {"index": i, "pid": int(p), "camid": int(c)}
            for i, (p, c) in enumerate(zip(eset.pids, eset.camids))
        ],
    }
    data = np.ascontiguousarray(eset.data, dtype="<f4")
    try:
        with open(array_path, "wb") as fh:
            npy_format.write_array(fh, data, version=(1, 0), allow_pickle=False)
        Path(manifest_path).write_text(_format_manifest(manifest), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write embedding set: {exc}") from exc


def set_paths(directory, stem: str) -> tuple[Path, Path]:
    """Conventional ``<stem>.npy`` / ``<stem>.json`` pair inside ``directory``."""
    directory = Path(directory)
    return directory / f"{stem}.npy", directory / f"{stem}.json"
