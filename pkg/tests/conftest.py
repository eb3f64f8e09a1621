import numpy as np
import pytest

from salience_align import nn
from salience_align.pipeline.fixtures import FixtureSpec, generate_fixtures


def write_pnm(path, magic: bytes, width: int, height: int, payload: bytes, maxval: int = 255):
    path.write_bytes(magic + b"\n%d %d\n%d\n" % (width, height, maxval) + payload)
    return path


def random_toy_cnn(rng, use_bias=False, max_side=16):
    """Random small CNN (at most 5 layers) with Glorot weights."""
    h = int(rng.integers(4, max_side + 1))
    w = int(rng.integers(4, max_side + 1))
    c = int(rng.integers(1, 4))
    layers = [nn.conv2d(int(rng.integers(1, 5)), (3, 3), use_bias=use_bias), nn.relu()]
    if rng.uniform() < 0.5:
        layers.append(nn.maxpool2d(2))
    layers.append(nn.global_average_pool() if rng.uniform() < 0.5 else nn.flatten())
    layers.append(nn.dense(int(rng.integers(1, 4)), use_bias=use_bias))
    model = nn.ModelSpec("toy", (h, w, c), layers)
    return nn.init_glorot(model, int(rng.integers(1 << 30)))


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_fixture")
    spec = FixtureSpec(n_frames=40, n_runs=2)
    generate_fixtures(spec, 7, out)
    return out


@pytest.fixture(scope="session")
def standard_fixture(tmp_path_factory):
    out = tmp_path_factory.mktemp("standard_fixture")
    summary = generate_fixtures(FixtureSpec(), 0, out)
    return out, summary


def grating_with_defect(rng, size=64, period=8):
    """Square-wave vertical grating; one block is shifted by half a period.

    Returns the image and the defect block as (y0, x0, side).
    """
    cols = ((np.arange(size) // (period // 2)) % 2) * 255.0
    img = np.tile(cols, (size, 1))
    side = int(rng.choice(np.arange(11, 18, 2)))
    y0 = int(rng.integers(0, size - side))
    x0 = int(rng.integers(0, size - side))
    shifted = np.roll(img, period // 2, axis=1)
    img[y0:y0 + side, x0:x0 + side] = shifted[y0:y0 + side, x0:x0 + side]
    return img, (y0, x0, side)


def defect_contrast(hm, block):
    y0, x0, side = block
    inside = np.zeros(hm.shape, dtype=bool)
    inside[y0:y0 + side, x0:x0 + side] = True
    return hm.values[inside].mean() / hm.values[~inside].mean()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion and assert it."""
    def record(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  [{number:>2}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
