import numpy as np
import pytest

from semmap import synth
from semmap.geometry import CameraIntrinsics


def kernel_closed_form(d, length, sigma0=1.0):
    """Reference sparse kernel written out independently of the package."""
    if d >= length:
        return 0.0
    x = d / length
    val = sigma0 * ((2.0 + np.cos(2 * np.pi * x)) / 3.0 * (1.0 - x) + np.sin(2 * np.pi * x) / (2 * np.pi))
    return max(val, 0.0)


def brute_force_bki(points, labels, cell_size, length, n_columns, column_of, alpha0=0.001, sigma0=1.0):
    """Naive double loop over (point, nearby voxel centre) pairs.

    ``column_of(label)`` returns the list of alpha columns a point feeds.
    """
    out = {}
    r = int(np.ceil(length / cell_size)) + 1
    for p, lab in zip(points, labels):
        base = np.floor(p / cell_size).astype(int)
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                for dk in range(-r, r + 1):
                    key = (base[0] + di, base[1] + dj, base[2] + dk)
                    centre = (np.array(key) + 0.5) * cell_size
                    d = float(np.linalg.norm(p - centre))
                    if d >= length:
                        continue
                    a = out.setdefault(key, np.full(n_columns, alpha0))
                    for col in column_of(int(lab)):
                        a[col] += kernel_closed_form(d, length, sigma0)
    return out


@pytest.fixture(scope="session")
def small_intr():
    return CameraIntrinsics.from_fov(48, 36, 70.0)


@pytest.fixture(scope="session")
def room_frames(small_intr):
    scene = synth.room_scene(n_poses=4)
    frames = []
    for i, pose in enumerate(scene.trajectory):
        depth, labels = synth.render_frame(scene, pose, small_intr, i)
        frames.append((depth, labels.astype(np.int64), pose))
    return scene, frames


@pytest.fixture(scope="session")
def room_sequence(tmp_path_factory, small_intr):
    root = tmp_path_factory.mktemp("room") / "sequence"
    return synth.emit_sequence(synth.room_scene(n_poses=3), small_intr, root, name="room")


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(cid: str, passed: bool, detail: str, seconds: float) -> None:
    line = f"{cid} {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.1f} s]"
    ACCEPTANCE_LINES[cid] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[cid])
