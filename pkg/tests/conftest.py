import numpy as np
import pytest

from fnfsplat.camera import CameraView, Intrinsics, look_at
from fnfsplat.composite import SceneModel
from fnfsplat.splat import GaussianCloud


def random_cloud(rng, n, channels=3, degree=1, dc=(0.5, 2.0), depth=(2.0, 3.0), spread=0.6):
    """Gaussians in front of a camera at the origin looking down +z."""
    cloud = GaussianCloud(
        means=np.c_[rng.uniform(-spread, spread, (n, 2)), rng.uniform(*depth, n)],
        quats=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(0.1, 0.4, (n, 3))),
        opacity_logits=rng.uniform(-1.5, 1.5, n),
        sh=np.concatenate([rng.uniform(*dc, (n, 1, channels)),
                           rng.normal(0, 0.2, (n, (degree + 1) ** 2 - 1, channels))], axis=1),
        sh_degree=degree,
    )
    cloud.normalize_quats()
    return cloud


def random_scene(rng, n=10, mode="soft"):
    return SceneModel(
        random_cloud(rng, n) if mode == "soft" else None,
        random_cloud(rng, n), random_cloud(rng, n), random_cloud(rng, n, channels=1),
        hard_linear=2.0 if mode == "hard" else None, flashless=mode == "flashless",
    )


def small_view(rng=None, size=16, flash=True, image=True, eye=(0.1, 0.05, 0.0)):
    k = Intrinsics(1.25 * size, 1.25 * size, size / 2, size / 2, size, size)
    r, t = look_at(eye, [0.0, 0.0, 2.5])
    img = None
    if image:
        rng = rng or np.random.default_rng(0)
        img = rng.uniform(0.05, 0.6, (size, size, 3))
    return CameraView(k, r, t, flash, img, "v0")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, one line per criterion, echoed in the terminal summary
GATE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gate():
    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}"
        GATE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
