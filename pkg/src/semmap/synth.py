"""Synthetic labeled rooms rendered by exact analytic ray casting.

A scene is an axis-aligned room (each of its six faces labeled or left
open) containing labeled axis-aligned boxes and rectangles. Frames are
rendered per pixel as the nearest intersection, optionally with uniform
class-confusion noise on the labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import RejectedInputError
from .geometry import CameraIntrinsics, Pose

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    class_id: int

    def to_dict(self) -> dict:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi), "class_id": self.class_id}


@dataclass(frozen=True)
class Rect:
    """Rectangle in the plane ``x[axis] = offset``, spanning ``lo..hi`` in the other two axes."""

    axis: int
    offset: float
    lo: tuple[float, float]
    hi: tuple[float, float]
    class_id: int

    def to_dict(self) -> dict:
        return {
            "type": "rect", "axis": self.axis, "offset": self.offset,
            "lo": list(self.lo), "hi": list(self.hi), "class_id": self.class_id,
        }


@dataclass
class SceneSpec:
    extents: tuple[float, float, float]
    faces: dict[str, int | None]
    primitives: list = field(default_factory=list)
    trajectory: list[Pose] = field(default_factory=list)
    classes: dict[int, str] = field(default_factory=dict)
    void_id: int = 0
    noise: float = 0.0
    seed: int = 0
    #: world position of the room corner; primitives are given relative to it
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.noise <= 1.0:
            raise RejectedInputError("noise rate must lie in [0, 1]")
        if set(self.faces) - set(FACES):
            raise RejectedInputError(f"unknown room faces {set(self.faces) - set(FACES)}")
        ext = np.asarray(self.extents, dtype=np.float64)
        for p in self.primitives:
            if isinstance(p, Box):
                inside = np.all(np.asarray(p.lo) >= 0) and np.all(np.asarray(p.hi) <= ext)
            else:
                others = [a for a in range(3) if a != p.axis]
                inside = (
                    0 <= p.offset <= ext[p.axis]
                    and all(0 <= p.lo[i] and p.hi[i] <= ext[a] for i, a in enumerate(others))
                )
            if not inside:
                raise RejectedInputError(f"primitive {p} extends outside the room")

    @property
    def semantic_classes(self) -> list[int]:
        return sorted(c for c in self.classes if c != self.void_id)

    def with_noise(self, noise: float, seed: int | None = None) -> SceneSpec:
        return SceneSpec(
            self.extents, dict(self.faces), list(self.primitives), list(self.trajectory),
            dict(self.classes), self.void_id, noise, self.seed if seed is None else seed,
            self.origin,
        )

    def to_dict(self) -> dict:
        return {
            "extents": list(self.extents),
            "faces": {f: self.faces.get(f) for f in FACES},
            "primitives": [p.to_dict() for p in self.primitives],
            "trajectory": [p.as_matrix().ravel().tolist() for p in self.trajectory],
            "classes": [{"id": c, "name": self.classes[c]} for c in sorted(self.classes)],
            "void_id": self.void_id,
            "noise": self.noise,
            "seed": self.seed,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        prims = []
        for p in d.get("primitives", []):
            if p["type"] == "box":
                prims.append(Box(tuple(p["lo"]), tuple(p["hi"]), int(p["class_id"])))
            elif p["type"] == "rect":
                prims.append(Rect(int(p["axis"]), float(p["offset"]), tuple(p["lo"]), tuple(p["hi"]), int(p["class_id"])))
            else:
                raise RejectedInputError(f"unknown primitive type {p['type']!r}")
        return cls(
            extents=tuple(d["extents"]),
            faces={f: d["faces"].get(f) for f in FACES},
            primitives=prims,
            trajectory=[Pose.from_matrix(m) for m in d.get("trajectory", [])],
            classes={int(c["id"]): c["name"] for c in d.get("classes", [])},
            void_id=int(d.get("void_id", 0)),
            noise=float(d.get("noise", 0.0)),
            seed=int(d.get("seed", 0)),
            origin=tuple(d.get("origin", (0.0, 0.0, 0.0))),
        )


def _room_exit(o, dirs, extents, faces):
    t = np.full(len(dirs), np.inf)
    lab = np.full(len(dirs), -1, np.int64)
    for a in range(3):
        d = dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pos = (extents[a] - o[a]) / d
            t_neg = (0.0 - o[a]) / d
        ta = np.where(d > 0, t_pos, np.where(d < 0, t_neg, np.inf))
        face_lab = np.where(
            d > 0,
            -1 if faces.get(FACES[2 * a + 1]) is None else faces[FACES[2 * a + 1]],
            -1 if faces.get(FACES[2 * a]) is None else faces[FACES[2 * a]],
        )
        closer = ta < t
        t = np.where(closer, ta, t)
        lab = np.where(closer, face_lab, lab)
    # an open face lets the ray leave the room unhit
    t = np.where(lab >= 0, t, np.inf)
    return t, lab


def _box_hit(o, dirs, box: Box):
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    for a in range(3):
        d = dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[a] - o[a]) / d
            t2 = (hi[a] - o[a]) / d
        par = d == 0
        inside = (lo[a] <= o[a]) & (o[a] <= hi[a])
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    ok = (t_near <= t_far) & (t_near > 0)
    return np.where(ok, t_near, np.inf)


def _rect_hit(o, dirs, rect: Rect):
    a = rect.axis
    others = [b for b in range(3) if b != a]
    d = dirs[:, a]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rect.offset - o[a]) / d
    t = np.where((d != 0) & (t > 0), t, np.inf)
    ok = np.isfinite(t)
    for i, b in enumerate(others):
        p = o[b] + np.where(ok, t, 0.0) * dirs[:, b]
        ok &= (p >= rect.lo[i]) & (p <= rect.hi[i])
    return np.where(ok, t, np.inf)


def cast_rays(scene: SceneSpec, origin, dirs) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit parameter ``t`` (inf when none) and class per ray ``origin + t * dir``."""
    o = np.asarray(origin, dtype=np.float64) - np.asarray(scene.origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t, lab = _room_exit(o, dirs, np.asarray(scene.extents, dtype=np.float64), scene.faces)
    for prim in scene.primitives:
        tp = _box_hit(o, dirs, prim) if isinstance(prim, Box) else _rect_hit(o, dirs, prim)
        closer = tp < t
        t = np.where(closer, tp, t)
        lab = np.where(closer, prim.class_id, lab)
    return t, lab


def render_frame(
    scene: SceneSpec, pose: Pose, intr: CameraIntrinsics, frame_index: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Exact depth (metres along the optical axis, 0 = no hit) and label rasters.

    Label noise is drawn from a generator seeded by ``(scene.seed, frame_index)``.
    """
    ext = np.asarray(scene.extents, dtype=np.float64)
    local = pose.translation - np.asarray(scene.origin, dtype=np.float64)
    if np.any(local <= 0) or np.any(local >= ext):
        raise RejectedInputError("camera must be strictly inside the room")
    rays = intr.camera_rays()
    # camera-frame z of every ray is 1, so the ray parameter is the axis depth
    dirs = rays @ pose.rotation.T
    t, lab = cast_rays(scene, pose.translation, dirs)
    hit = np.isfinite(t)
    depth = np.where(hit, t, 0.0)
    labels = np.where(hit, lab, scene.void_id)
    if scene.noise > 0:
        labels = _inject_noise(labels, hit & (labels != scene.void_id), scene, frame_index)
    shape = (intr.height, intr.width)
    return depth.reshape(shape), labels.reshape(shape).astype(np.uint8)


def _inject_noise(labels, eligible, scene: SceneSpec, frame_index: int) -> np.ndarray:
    rng = np.random.default_rng([scene.seed, frame_index])
    classes = np.asarray(scene.semantic_classes, dtype=np.int64)
    if len(classes) < 2:
        return labels
    flip = (rng.random(labels.shape) < scene.noise) & eligible
    # uniform over the other classes: shift the class's position by 1..n-1
    pos = np.searchsorted(classes, labels)
    shift = rng.integers(1, len(classes), size=labels.shape)
    noisy = classes[(pos + shift) % len(classes)]
    return np.where(flip, noisy, labels)


def emit_sequence(scene: SceneSpec, intr: CameraIntrinsics, out_path, name: str = "sequence"):
    """Render every trajectory pose into the on-disk sequence layout and load it back."""
    from . import io

    if not scene.trajectory:
        raise RejectedInputError("scene has an empty trajectory")
    out = Path(out_path)
    frames = []
    for idx, pose in enumerate(scene.trajectory):
        depth, labels = render_frame(scene, pose, intr, frame_index=idx)
        frames.append((idx, depth, labels, pose))
    io.write_sequence(out, intr, scene.classes, scene.void_id, frames, name=name)
    io.write_json(out / "scene.json", scene.to_dict())
    return io.load_sequence(out)


# -- fixtures ------------------------------------------------------------

ROOM_CLASSES = {
    0: "void", 1: "wall", 2: "floor", 3: "ceiling", 4: "table", 5: "cabinet", 6: "books",
}

DEFAULT_INTRINSICS = CameraIntrinsics.from_fov(128, 96, 70.0)


def orbit_trajectory(center, radius: float, n: int, look_dist: float = 2.0, tilts=(-0.6, 0.35)) -> list[Pose]:
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for i in range(n):
        th = 2 * np.pi * i / n
        radial = np.array([np.cos(th), np.sin(th), 0.0])
        eye = center + radius * radial
        tilt = tilts[i % len(tilts)]
        target = eye + look_dist * (radial + np.array([0.0, 0.0, tilt]))
        poses.append(Pose.look_at(eye, target))
    return poses


#: keeps the room walls off the cell boundaries of every evaluated cell size
ROOM_ORIGIN = (0.031, 0.018, 0.012)


def _strip_shelf(axis_offset: float, x_range, z_range, width: float, classes) -> list[Rect]:
    prims = []
    x, k = x_range[0], 0
    while x < x_range[1] - 1e-9:
        x1 = min(x + width, x_range[1])
        prims.append(Rect(1, axis_offset, (x, z_range[0]), (x1, z_range[1]), classes[k % len(classes)]))
        x, k = x1, k + 1
    return prims


def room_scene(
    noise: float = 0.0, seed: int = 0, n_poses: int = 8, origin=ROOM_ORIGIN, strip_width: float = 0.25
) -> SceneSpec:
    """4 x 4 x 2.5 m room, 7 classes incl. void, with one open side.

    Contents: a table (thin top on four legs), a cabinet, and in front of
    the open ``y+`` side a thin bookshelf of alternating book and cabinet
    strips with floor visible behind and below it.
    """
    center = np.asarray(origin, dtype=np.float64) + (2.0, 2.0, 1.3)
    legs = [(x, y) for x in (2.95, 3.6) for y in (1.35, 2.4)]
    prims = [
        Box((2.9, 1.3, 0.71), (3.7, 2.5, 0.75), 4),
        *(Box((x, y, 0.0), (x + 0.05, y + 0.05, 0.71), 4) for x, y in legs),
        Box((0.25, 0.4, 0.0), (0.85, 1.6, 1.8), 5),
        *_strip_shelf(3.3, (1.0, 3.0), (0.6, 1.8), strip_width, (6, 5)),
    ]
    return SceneSpec(
        extents=(4.0, 4.0, 2.5),
        faces={"x-": 1, "x+": 1, "y-": 1, "y+": None, "z-": 2, "z+": 3},
        primitives=prims,
        trajectory=orbit_trajectory(center, 0.5, n_poses),
        classes=dict(ROOM_CLASSES),
        void_id=0,
        noise=noise,
        seed=seed,
        origin=tuple(float(v) for v in origin),
    )


PATHOLOGY_CLASSES = {0: "void", 1: "wall", 2: "floor", 3: "books", 4: "box", 5: "shelves"}


def pathology_scene(strip_width: float = 0.05) -> SceneSpec:
    """Thin shelf of interleaved narrow class strips in front of an open room side.

    The shelf at ``y = 3`` is the only surface between the cameras and the
    open ``y+`` face, so any hole in it renders as free/unknown space.
    """
    prims = _strip_shelf(3.0, (1.0, 3.0), (0.6, 1.8), strip_width, (3, 4, 5))
    eyes = [(2.0, 1.6, 1.2), (1.7, 1.5, 1.3), (2.3, 1.5, 1.1), (2.0, 1.3, 1.0)]
    traj = [Pose.look_at(e, (2.0, 3.0, 1.2)) for e in eyes]
    return SceneSpec(
        extents=(4.0, 4.0, 2.5),
        faces={"x-": 1, "x+": 1, "y-": 1, "y+": None, "z-": 2, "z+": None},
        primitives=prims,
        trajectory=traj,
        classes=dict(PATHOLOGY_CLASSES),
        void_id=0,
    )


def pathology_probe_keys(cell_size: float, scene: SceneSpec | None = None) -> np.ndarray:
    """Voxel keys the shelf plane of the pathology scene passes through.

    Both key rows adjacent to the plane are included so that points landing
    exactly on a cell face are covered whichever side rounding puts them.
    """
    scene = scene or pathology_scene()
    shelf = [p for p in scene.primitives if isinstance(p, Rect) and p.axis == 1]
    if not shelf:
        raise RejectedInputError("scene has no shelf rectangles")
    y = shelf[0].offset + scene.origin[1]
    x0 = min(p.lo[0] for p in shelf) + scene.origin[0]
    x1 = max(p.hi[0] for p in shelf) + scene.origin[0]
    z0 = min(p.lo[1] for p in shelf) + scene.origin[2]
    z1 = max(p.hi[1] for p in shelf) + scene.origin[2]
    eps = 1e-9
    kx = np.arange(int(np.floor((x0 + eps) / cell_size)), int(np.floor((x1 - eps) / cell_size)) + 1)
    kz = np.arange(int(np.floor((z0 + eps) / cell_size)), int(np.floor((z1 - eps) / cell_size)) + 1)
    ky = np.unique([int(np.floor((y - eps) / cell_size)), int(np.floor((y + eps) / cell_size))])
    grid = np.stack(np.meshgrid(kx, ky, kz, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3).astype(np.int64)


def plane_points(
    n: int = 20000, extent: float = 1.5, normal=(0.3, -0.2, 1.0), offset: float = 0.537,
    noise_sigma: float = 0.001, seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Points on a tilted plane ``normal . x = offset`` over a square footprint.

    Returns ``(points, unit_normal)``. The footprint is ``[0, extent]^2`` in
    x/y with z solved from the plane equation; Gaussian noise of
    ``noise_sigma`` is added along the normal.
    """
    nrm = np.asarray(normal, dtype=np.float64)
    if abs(nrm[2]) < 1e-6:
        raise RejectedInputError("plane normal needs a z component")
    nrm = nrm / np.linalg.norm(nrm)
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, extent, size=(n, 2))
    z = (offset - xy @ nrm[:2]) / nrm[2]
    pts = np.column_stack([xy, z]) + rng.normal(0.0, noise_sigma, size=(n, 1)) * nrm
    return pts, nrm
