"""Sequence manifests, binary map files, and report persistence.

Sequence layout (one directory)::

    manifest.json           intrinsics, class table, frames with embedded poses
    depth/000000.png        16-bit depth in millimetres, 0 = invalid
    labels/000000.png       8-bit class ids

The binary map format is described byte-by-byte in ``docs/map_format.md``.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import ChecksumError, DataError, MapFormatError, RejectedInputError
from .bki import OsbkiMap, SbkiMap, SparseKernel
from .geometry import FREE_LABEL, CameraIntrinsics, Pose
from .metrics import EvalReport
from .ndt import NdtMap, OccupancyParams

MANIFEST_NAME = "manifest.json"
DEPTH_SCALE = 1000.0  # raster units per metre
POSE_TOL = 1e-5


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- sequences -----------------------------------------------------------

@dataclass(frozen=True)
class FrameEntry:
    id: int
    depth: str
    labels: str
    pose: Pose


@dataclass
class SequenceManifest:
    root: Path
    frames: list[FrameEntry]
    intrinsics: CameraIntrinsics
    classes: dict[int, str]
    void_id: int = 0
    free_label: int = FREE_LABEL
    name: str = "sequence"
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.frames)

    def load_frame(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Depth in metres (float64) and labels (int64) of frame ``index``."""
        entry = self.frames[index]
        depth = _read_png(self.root / entry.depth, np.uint16, entry.id)
        labels = _read_png(self.root / entry.labels, np.uint8, entry.id)
        shape = (self.intrinsics.height, self.intrinsics.width)
        if depth.shape != shape or labels.shape != shape:
            raise DataError(
                f"frame {entry.id}: raster shapes {depth.shape}/{labels.shape} "
                f"do not match intrinsics {shape}"
            )
        if labels.max(initial=0) >= self.n_classes:
            raise DataError(f"frame {entry.id}: label id {labels.max()} outside the class table")
        return depth.astype(np.float64) / DEPTH_SCALE, labels.astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "format": "semmap-sequence",
            "version": 1,
            "name": self.name,
            "intrinsics": self.intrinsics.to_dict(),
            "classes": [{"id": c, "name": self.classes[c]} for c in sorted(self.classes)],
            "void_id": self.void_id,
            "free_label": self.free_label,
            "depth_unit": "mm",
            "frames": [
                {
                    "id": f.id, "depth": f.depth, "labels": f.labels,
                    "pose": [float(x) for x in f.pose.as_matrix().ravel()],
                }
                for f in self.frames
            ],
        }

    def save(self, root=None) -> Path:
        root = Path(root) if root is not None else self.root
        root.mkdir(parents=True, exist_ok=True)
        write_json(root / MANIFEST_NAME, self.to_dict())
        return root / MANIFEST_NAME


def _read_png(path: Path, dtype, frame_id) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"frame {frame_id}: missing raster {path}")
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise DataError(f"frame {frame_id}: {path.name} is not a single-channel raster")
    if arr.dtype != dtype:
        if np.issubdtype(arr.dtype, np.integer) and arr.min(initial=0) >= 0 and arr.max(initial=0) <= np.iinfo(dtype).max:
            arr = arr.astype(dtype)
        else:
            raise DataError(f"frame {frame_id}: {path.name} has dtype {arr.dtype}, expected {np.dtype(dtype)}")
    return arr


def _parse_pose(values, frame_id) -> Pose:
    m = np.asarray(values, dtype=np.float64)
    if m.size != 12:
        raise DataError(f"frame {frame_id}: pose must have 12 entries (3x4 row-major)")
    m = m.reshape(3, 4)
    R = m[:, :3]
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > POSE_TOL or np.linalg.det(R) <= 0:
        raise DataError(f"frame {frame_id}: rotation is not a proper orthonormal matrix (error {err:.2e})")
    if err > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
        warnings.warn(f"frame {frame_id}: re-orthonormalizing rotation (error {err:.2e})", stacklevel=3)
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
    return Pose(R, m[:, 3])


def load_sequence(path) -> SequenceManifest:
    """Load and validate a sequence directory (or its manifest file)."""
    path = Path(path)
    mpath = path / MANIFEST_NAME if path.is_dir() else path
    if not mpath.is_file():
        raise DataError(f"no manifest at {mpath}")
    try:
        d = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{mpath}: invalid JSON ({e})") from e
    root = mpath.parent
    try:
        intr = CameraIntrinsics(**d["intrinsics"])
        classes = {int(c["id"]): str(c["name"]) for c in d["classes"]}
        void_id = int(d.get("void_id", 0))
        free_label = int(d.get("free_label", FREE_LABEL))
        raw_frames = d["frames"]
    except (KeyError, TypeError, RejectedInputError) as e:
        raise DataError(f"{mpath}: malformed manifest ({e})") from e
    if sorted(classes) != list(range(len(classes))):
        raise DataError("class ids must be dense in [0, n_classes)")
    if free_label in classes:
        raise DataError(f"free label {free_label} collides with a class id")
    if void_id not in classes:
        raise DataError(f"void id {void_id} is not in the class table")
    frames = []
    for f in sorted(raw_frames, key=lambda f: int(f["id"])):
        fid = int(f["id"])
        for key in ("depth", "labels"):
            if not (root / f[key]).is_file():
                raise DataError(f"frame {fid}: missing {key} file {f[key]}")
        frames.append(FrameEntry(fid, f["depth"], f["labels"], _parse_pose(f["pose"], fid)))
    ids = [f.id for f in frames]
    if len(set(ids)) != len(ids):
        raise DataError("frame ids must be unique")
    return SequenceManifest(
        root=root, frames=frames, intrinsics=intr, classes=classes, void_id=void_id,
        free_label=free_label, name=str(d.get("name", root.name)),
    )


def write_sequence(root, intr: CameraIntrinsics, classes: dict[int, str], void_id: int, frames, name: str = "sequence") -> SequenceManifest:
    """Write ``(id, depth_m, labels, pose)`` frames plus manifest under ``root``."""
    root = Path(root)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for fid, depth, labels, pose in frames:
        depth = np.asarray(depth, dtype=np.float64)
        mm = np.where(np.isfinite(depth), np.round(depth * DEPTH_SCALE), 0)
        if mm.max(initial=0) > np.iinfo(np.uint16).max:
            raise RejectedInputError("depth exceeds the 16-bit millimetre range")
        dname = f"depth/{fid:06d}.png"
        lname = f"labels/{fid:06d}.png"
        Image.fromarray(mm.astype(np.uint16)).save(root / dname)
        Image.fromarray(np.asarray(labels).astype(np.uint8)).save(root / lname)
        entries.append(FrameEntry(int(fid), dname, lname, pose))
    manifest = SequenceManifest(root, entries, intr, dict(classes), void_id, name=name)
    manifest.save()
    return manifest


# -- map files -------------------------------------------------------------

MAGIC = b"SMAP"
VERSION = 1
BACKEND_TAGS = {"sndt": 0, "sbki": 1, "osbki": 2}
_HEADER = struct.Struct("<4sHBdIQ10dI")
_TRAILER = struct.Struct("<I")


def _voxel_dtype(backend: str, n_classes: int) -> np.dtype:
    fields = [("key", "<i4", (3,))]
    if backend == "sndt":
        fields += [
            ("log_odds", "<f8"), ("n", "<u8"), ("mean", "<f8", (3,)),
            ("m2", "<f8", (6,)), ("hist", "<f8", (n_classes,)),
        ]
    elif backend == "sbki":
        fields += [("alpha", "<f8", (n_classes + 1,))]
    else:
        fields += [("alpha", "<f8", (n_classes + 2,))]
    return np.dtype(fields)


_TRIU = (np.array([0, 0, 0, 1, 1, 2]), np.array([0, 1, 2, 1, 2, 2]))


def map_to_bytes(smap) -> bytes:
    backend = smap.backend
    g = smap.grid
    order = g.sorted_rows()
    keys = g.keys()[order]
    if keys.size and (keys.min() < -(2**31) or keys.max() >= 2**31):
        raise RejectedInputError("cell keys exceed int32")
    rec = np.zeros(len(order), dtype=_voxel_dtype(backend, smap.n_classes))
    rec["key"] = keys
    if backend == "sndt":
        p = smap.params
        params = (0.0, 0.0, 0.0, p.l_hit, p.l_miss, p.l_min, p.l_max, p.occ_thresh, p.free_thresh, p.eps_reg, p.n_min_gauss)
        rec["log_odds"] = g.field("log_odds")[order]
        rec["n"] = g.field("n")[order]
        rec["mean"] = g.field("mean")[order]
        rec["m2"] = g.field("m2")[order][:, _TRIU[0], _TRIU[1]]
        rec["hist"] = g.field("hist")[order]
    else:
        k = smap.kernel
        params = (k.length_l, k.sigma0, smap.alpha0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
        rec["alpha"] = g.field("alpha")[order]
    header = _HEADER.pack(
        MAGIC, VERSION, BACKEND_TAGS[backend], smap.cell_size, smap.n_classes, len(order), *params
    )
    payload = rec.tobytes()
    return header + payload + _TRAILER.pack(zlib.crc32(payload))


def map_from_bytes(data: bytes):
    if len(data) < _HEADER.size + _TRAILER.size:
        raise MapFormatError("file too short for a map header")
    magic, version, tag, cell_size, n_classes, count, *params = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MapFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MapFormatError(f"unsupported map format version {version}")
    backends = {v: k for k, v in BACKEND_TAGS.items()}
    if tag not in backends:
        raise MapFormatError(f"unknown backend tag {tag}")
    backend = backends[tag]
    dtype = _voxel_dtype(backend, n_classes)
    expected = _HEADER.size + count * dtype.itemsize + _TRAILER.size
    if len(data) != expected:
        raise MapFormatError(f"truncated or oversized map file: {len(data)} bytes, expected {expected}")
    payload = data[_HEADER.size : expected - _TRAILER.size]
    (crc,) = _TRAILER.unpack_from(data, expected - _TRAILER.size)
    if zlib.crc32(payload) != crc:
        raise ChecksumError("map payload checksum mismatch")
    rec = np.frombuffer(payload, dtype=dtype)
    length_l, sigma0, alpha0, l_hit, l_miss, l_min, l_max, occ, free, eps, n_min = params
    keys = rec["key"].astype(np.int64)
    if backend == "sndt":
        smap = NdtMap(cell_size, n_classes, OccupancyParams(l_hit, l_miss, l_min, l_max, occ, free, int(n_min), eps))
        g = smap.grid
        rows = g.rows(keys, create=True)
        g.field("log_odds")[rows] = rec["log_odds"]
        g.field("n")[rows] = rec["n"].astype(np.int64)
        g.field("mean")[rows] = rec["mean"]
        m2 = np.zeros((len(rec), 3, 3))
        m2[:, _TRIU[0], _TRIU[1]] = rec["m2"]
        m2[:, _TRIU[1], _TRIU[0]] = rec["m2"]
        g.field("m2")[rows] = m2
        g.field("hist")[rows] = rec["hist"]
    else:
        cls = SbkiMap if backend == "sbki" else OsbkiMap
        smap = cls(cell_size, n_classes, SparseKernel(length_l, sigma0), alpha0)
        rows = smap.grid.rows(keys, create=True)
        smap.grid.field("alpha")[rows] = rec["alpha"]
    if len(smap.grid) != count:
        raise MapFormatError("duplicate voxel keys in map file")
    return smap


def save_map(smap, path) -> None:
    Path(path).write_bytes(map_to_bytes(smap))


def load_map(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no map file at {path}")
    return map_from_bytes(path.read_bytes())


# -- reports ---------------------------------------------------------------

def _pct(x: float) -> str:
    return "nan" if x != x else f"{100.0 * x:.2f}"


def report_rows(report: EvalReport) -> tuple[list[dict], dict]:
    classes = [
        {
            "class_id": c,
            "class_name": report.class_names.get(c, str(c)),
            "iou": _pct(float(report.per_class_iou[i])),
            "pacc": _pct(float(report.per_class_pacc[i])),
        }
        for i, c in enumerate(report.evaluated_classes)
    ]
    summary = {"miou": _pct(report.miou), "invr": _pct(report.inv_ratio), "mpacc": _pct(report.mpacc)}
    return classes, summary


def write_report(report: EvalReport, path, fmt: str | None = None) -> Path:
    """Persist a report as JSON or CSV; metrics are percentages with two decimals."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    classes, summary = report_rows(report)
    if fmt == "json":
        write_json(path, {
            "summary": summary,
            "classes": classes,
            "invalid_count": report.invalid_count,
            "total_valid_gt_count": report.total_valid_gt_count,
            "empty": report.empty,
        })
    elif fmt == "csv":
        cols = ["row", "class_id", "class_name", "iou", "pacc", "miou", "invr", "mpacc"]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in classes:
                w.writerow({"row": "class", **row})
            w.writerow({"row": "summary", **summary})
    else:
        raise RejectedInputError(f"unknown report format {fmt!r}")
    return path


def read_report(path) -> tuple[list[dict], dict]:
    """Inverse of :func:`write_report` returning (class rows, summary) as strings."""
    path = Path(path)
    if path.suffix == ".json":
        d = json.loads(path.read_text())
        return [{k: str(v) for k, v in r.items()} for r in d["classes"]], d["summary"]
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    classes = [
        {k: r[k] for k in ("class_id", "class_name", "iou", "pacc")} for r in rows if r["row"] == "class"
    ]
    s = next(r for r in rows if r["row"] == "summary")
    return classes, {k: s[k] for k in ("miou", "invr", "mpacc")}


# -- raster exports ---------------------------------------------------------

def default_palette(n: int) -> list[tuple[int, int, int]]:
    rng = np.random.default_rng(7)
    pal = [tuple(int(v) for v in rng.integers(40, 256, 3)) for _ in range(n)]
    return pal


def write_rendered_png(frame, path, class_names: dict[int, str] | None = None) -> None:
    """8-bit indexed PNG plus a ``.palette.json`` sidecar naming each index."""
    path = Path(path)
    idx = frame.to_indexed()
    names = dict(class_names or {})
    n = max(max(names, default=-1) + 1, int(idx[idx < 254].max(initial=0)) + 1)
    pal = default_palette(n)
    flat = [0] * (256 * 3)
    for i, rgb in enumerate(pal):
        flat[3 * i : 3 * i + 3] = rgb
    flat[3 * 254 : 3 * 256] = [64, 64, 64, 255, 255, 255]
    im = Image.fromarray(idx, mode="P")
    im.putpalette(flat)
    im.save(path)
    entries = [{"index": i, "name": names.get(i, str(i)), "rgb": list(pal[i])} for i in range(n)]
    entries += [
        {"index": 254, "name": "unknown", "rgb": [64, 64, 64]},
        {"index": 255, "name": "invalid_free", "rgb": [255, 255, 255]},
    ]
    write_json(path.with_suffix(".palette.json"), {"entries": entries})


def write_slice_ppm(smap, z: float, path, ignore=()) -> None:
    """Top-down debug slice of the voxels at height ``z`` as a binary PPM."""
    from .render import Renderer

    r = Renderer(smap, ignore)
    g = smap.grid
    path = Path(path)
    if len(g) == 0:
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        return
    keys = g.keys()
    kz = int(np.floor(z / smap.cell_size))
    sel = keys[:, 2] == kz
    lo, hi = keys.min(axis=0), keys.max(axis=0)
    w, h = int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)
    img = np.zeros((h, w, 3), np.uint8)
    pal = np.array(default_palette(max(int(r.label.max(initial=0)) + 1, 1)), np.uint8)
    rows = np.flatnonzero(sel)
    for row in rows:
        x, y = keys[row, 0] - lo[0], hi[1] - keys[row, 1]
        s = r.state[row]
        if s > 0:
            c = r.label[row]
            img[y, x] = pal[c] if c >= 0 else (128, 128, 128)
        elif s < 0:
            img[y, x] = (235, 235, 235)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())
