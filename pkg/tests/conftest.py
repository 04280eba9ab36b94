import numpy as np
import pytest

from earpipe.mocks import synth_dataset


def stadium_mask(hw: int, hl: int, canvas: int = 160) -> np.ndarray:
    """Vertical stadium: rectangle capped by half-disks, axis angle 0."""
    m = np.zeros((canvas, canvas), bool)
    cy = cx = canvas // 2
    yy, xx = np.mgrid[:canvas, :canvas]
    m[(np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hl)] = True
    for sy in (-1, 1):
        m |= (xx - cx) ** 2 + (yy - (cy + sy * hl)) ** 2 <= hw ** 2
    return m


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Shared read-only synthetic dataset: 4 identities x 5 images, half occluded."""
    root = tmp_path_factory.mktemp("synth") / "data"
    synth_dataset(4, 5, 0.5, 7, root)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
