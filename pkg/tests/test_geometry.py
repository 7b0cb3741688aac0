import numpy as np
import pytest

from ctstokes.geometry import (LevelSetDomain, ProjectionError, circle_domain,
                               project_points, project_to_boundary, star_domain)

R0 = 0.3723423423343


def test_star_values():
    s = star_domain()
    assert s.phi(np.array([0.5 + R0, 0.5])) == pytest.approx(0.0, abs=1e-15)
    assert s.phi(np.array([0.5, 0.5])) == pytest.approx(-R0, abs=1e-15)
    assert s.phi(np.array([0.9, 0.5])) == pytest.approx(0.9 - 0.5 - R0, abs=1e-15)


def test_star_gradient_center_is_error():
    s = star_domain()
    with pytest.raises(ValueError):
        s.grad_phi(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        s.hess_phi(np.array([0.5, 0.5]))


def test_star_derivatives_match_finite_differences():
    s = star_domain()
    rng = np.random.default_rng(3)
    pts = rng.uniform(0.05, 0.45, size=(50, 2)) * rng.choice([-1, 1], size=(50, 2)) + 0.5
    eps = 1e-6
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        fd_grad = (s.phi(pts + d) - s.phi(pts - d)) / (2 * eps)
        assert np.allclose(fd_grad, s.grad_phi(pts)[:, j], atol=1e-8)
        fd_hess = (s.grad_phi(pts + d) - s.grad_phi(pts - d)) / (2 * eps)
        assert np.allclose(fd_hess, s.hess_phi(pts)[:, :, j], atol=1e-6)


def test_circle_values():
    c = circle_domain((0.5, 0.5), 0.4)
    assert c.phi(np.array([0.8, 0.5])) == pytest.approx(-0.1, abs=1e-15)
    assert c.phi(np.array([0.5, 0.9])) == pytest.approx(0.0, abs=1e-15)
    assert c.phi(np.array([0.5, 1.0])) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ValueError):
        circle_domain((0.5, 0.5), -1.0)
    with pytest.raises(ValueError):
        c.grad_phi(np.array([0.5, 0.5]))


def test_project_circle_radial():
    c = circle_domain((0.5, 0.5), 0.4)
    ts = project_to_boundary(c, (0.8, 0.5))
    assert np.allclose(ts.x_star, [0.9, 0.5], atol=1e-12)
    assert ts.delta == pytest.approx(0.1, abs=1e-12)
    assert np.allclose(ts.dir, [1.0, 0.0], atol=1e-12)


def test_project_on_boundary_degenerates():
    c = circle_domain((0.5, 0.5), 0.4)
    ts = project_to_boundary(c, (0.9, 0.5), fallback_dir=(1.0, 0.0))
    assert ts.delta == 0.0
    assert np.allclose(ts.dir, [1.0, 0.0])


def _star_boundary_roots(dom, x, n_samples=1_000_000):
    """All boundary points where (grad phi)^perp is orthogonal to x - y,
    found by dense sampling of the boundary curve plus bisection."""
    from scipy.optimize import brentq

    th = np.linspace(-np.pi, np.pi, n_samples + 1)
    rho = R0 + 0.1 * np.sin(6 * th)
    pts = np.column_stack([0.5 + rho * np.cos(th), 0.5 + rho * np.sin(th)])
    g = dom.grad_phi(pts)
    orth = -g[:, 1] * (x[0] - pts[:, 0]) + g[:, 0] * (x[1] - pts[:, 1])

    def f(t):
        r = R0 + 0.1 * np.sin(6 * t)
        b = np.array([0.5 + r * np.cos(t), 0.5 + r * np.sin(t)])
        gg = dom.grad_phi(b)
        return -gg[1] * (x[0] - b[0]) + gg[0] * (x[1] - b[1])

    roots = []
    sign_change = np.where(np.sign(orth[:-1]) * np.sign(orth[1:]) < 0)[0]
    for k in sign_change:
        t = brentq(f, th[k], th[k + 1], xtol=1e-15)
        r = R0 + 0.1 * np.sin(6 * t)
        roots.append([0.5 + r * np.cos(t), 0.5 + r * np.sin(t)])
    return np.asarray(roots)


def test_project_star_against_curve_oracle():
    s = star_domain()
    x = np.array([0.85, 0.5])
    ts = project_to_boundary(s, x)
    roots = _star_boundary_roots(s, x)
    assert len(roots) > 0
    nearest = roots[np.argmin(np.linalg.norm(roots - x, axis=1))]
    assert np.allclose(ts.x_star, nearest, atol=1e-9)
    assert ts.delta == pytest.approx(np.linalg.norm(nearest - x), abs=1e-9)


def test_projection_residuals_and_idempotency():
    # interior band: projections are taken from mesh boundary points, which
    # always lie inside the domain
    s = star_domain()
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.05, 0.95, size=(6000, 2))
    phi = s.phi(pts)
    pts = pts[(phi > -0.03) & (phi < 0.0)][:300]
    x_star, delta, dirs = project_points(s, pts)
    assert np.all(np.abs(s.phi(x_star)) <= 1e-10)
    g = s.grad_phi(x_star)
    d = pts - x_star
    orth = -g[:, 1] * d[:, 0] + g[:, 0] * d[:, 1]
    assert np.all(np.abs(orth) <= 1e-10)
    # projecting the projected points is a fixed point
    _, delta2, _ = project_points(s, x_star)
    assert np.all(delta2 <= 1e-10)
    # direction convention: x_star = x + delta * dir
    assert np.allclose(x_star, pts + delta[:, None] * dirs, atol=1e-12)


def test_circle_delta_is_radial_distance():
    c = circle_domain((0.5, 0.5), 0.4)
    rng = np.random.default_rng(11)
    pts = rng.uniform(0.1, 0.9, size=(12000, 2))
    phi = c.phi(pts)
    pts = pts[(phi > -0.05) & (phi < 0.0)][:1000]
    assert len(pts) >= 500
    _, delta, _ = project_points(c, pts)
    exact = np.abs(np.linalg.norm(pts - 0.5, axis=1) - 0.4)
    assert np.max(np.abs(delta - exact)) <= 1e-12


def test_validate_rejects_empty_and_flat_domains():
    star_domain().validate()
    circle_domain((0.5, 0.5), 0.4).validate()
    empty = LevelSetDomain(lambda x: np.ones(np.asarray(x).shape[:-1]),
                           lambda x: np.asarray(x) * 0.0)
    with pytest.raises(ValueError):
        empty.validate()
    flat = LevelSetDomain(lambda x: np.asarray(x)[..., 0] - 0.5,
                          lambda x: np.asarray(x) * 0.0)
    with pytest.raises(ValueError):
        flat.validate()


def test_projection_failure_is_reported():
    # gradient pointing away from the zero set makes Newton diverge
    bad = LevelSetDomain(lambda x: np.asarray(x)[..., 0] ** 2 + 1.0,
                         lambda x: np.stack([2 * np.asarray(x)[..., 0],
                                             np.zeros(np.asarray(x).shape[:-1])],
                                            axis=-1))
    with pytest.raises(ProjectionError):
        project_points(bad, np.array([[0.3, 0.4]]))
