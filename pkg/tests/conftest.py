import numpy as np
import pytest

from ctstokes.geometry import LevelSetDomain, circle_domain, star_domain
from ctstokes.mesh import build_type1_mesh, clip_to_interior, clough_tocher
from ctstokes.fem import build_dof_layout, edge_rule
from ctstokes.assembly import build_boundary_data, assemble_blocks


@pytest.fixture(scope="session")
def star():
    return star_domain()


@pytest.fixture(scope="session")
def circle():
    return circle_domain((0.5, 0.5), 0.4)


def box_sdf_domain():
    """Unit square as its own level set: the mesh boundary is exactly the
    physical boundary, so every transfer length vanishes."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(np.abs(x[..., 0] - 0.5), np.abs(x[..., 1] - 0.5)) - 0.5

    def grad(x):
        x = np.asarray(x, dtype=float)
        dx = x[..., 0] - 0.5
        dy = x[..., 1] - 0.5
        pick_x = np.abs(dx) >= np.abs(dy)
        gx = np.where(pick_x, np.sign(dx), 0.0)
        gy = np.where(pick_x, 0.0, np.sign(dy))
        return np.stack([gx, gy], axis=-1)

    return LevelSetDomain(phi, grad, None, (0.0, 0.0, 1.0, 1.0), "box")


def everywhere_inside_domain():
    """Constant negative level set: clipping keeps the whole background mesh."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        return -np.ones(x.shape[:-1])

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape)

    return LevelSetDomain(phi, grad, None, (0.0, 0.0, 1.0, 1.0), "all")


@pytest.fixture(scope="session")
def box_sdf():
    return box_sdf_domain()


def make_level(dom, n, sigma=40.0, edge_points=6):
    """Mesh + layout + boundary data + blocks, without the verify-module wrapper."""
    ct = clough_tocher(clip_to_interior(build_type1_mesh(n, dom.bounding_box), dom))
    layout = build_dof_layout(ct)
    bqd = build_boundary_data(ct, layout, dom, edge_rule(edge_points))
    blocks = assemble_blocks(ct, layout, bqd, sigma)
    return ct, layout, bqd, blocks


@pytest.fixture(scope="session")
def star_n8(star):
    return make_level(star, 8)


@pytest.fixture(scope="session")
def circle_n8(circle):
    return make_level(circle, 8)
