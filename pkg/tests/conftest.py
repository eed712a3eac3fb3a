import numpy as np
import pytest
import torch

from roomsplat.layout_io import layout_from_dict, load_layout
from roomsplat.renderer import Camera, GaussianBatch
from roomsplat.synthetic import two_box_layout_dict  # noqa: F401  (re-exported)

REPO_LAYOUT = "layouts/bedroom.json"


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    r = np.empty((n, 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def random_batch(seed: int, n: int, dtype=torch.float64, center=(1.5, 0.0, 0.0),
                 spread=0.45, scale_range=(0.12, 0.4), opacity_range=(0.25, 0.9)
                 ) -> GaussianBatch:
    """Small scene in front of an origin camera looking along +x."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-spread, spread, (n, 3)) + np.asarray(center)
    return GaussianBatch(
        positions=torch.as_tensor(pos, dtype=dtype),
        rotations=torch.as_tensor(random_rotations(n, rng), dtype=dtype),
        scales=torch.as_tensor(rng.uniform(*scale_range, (n, 2)), dtype=dtype),
        opacities=torch.as_tensor(rng.uniform(*opacity_range, n), dtype=dtype),
        colors=torch.as_tensor(rng.uniform(0.05, 0.95, (n, 3)), dtype=dtype),
        semantics=torch.as_tensor(rng.uniform(0.05, 0.95, (n, 3)), dtype=dtype),
    )


def origin_camera(width=16, height=16, fov=1.0) -> Camera:
    return Camera(position=np.zeros(3), elevation=0.0, azimuth=0.0, fov_y=fov,
                  width=width, height=height)


@pytest.fixture(scope="session")
def bedroom_layout():
    return load_layout(REPO_LAYOUT)


@pytest.fixture()
def two_box_layout():
    return layout_from_dict(two_box_layout_dict())
