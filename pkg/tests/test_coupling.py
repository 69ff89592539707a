import numpy as np
import pytest

from chimera2d.assembly import DEFAULT_RULE, boundary_quadrature
from chimera2d.coupling import (
    HOLE,
    REGION_ATMOSPHERE,
    REGION_HOLE,
    REGULAR,
    classify_all,
    classify_nodes,
    damping_beta,
    extract_robin_data,
    interpolate_field,
    make_velocity_evaluator,
    penalty_quadrature,
)
from chimera2d.fespace import build_fe_system
from chimera2d.mesh import build_background_mesh
from chimera2d.rigidbody import Particle


class TestDampingBeta:
    def test_plateau_and_cutoff(self):
        c, R, H = (0.0, 0.0), 1.0, 0.4
        # full strength inside R + 0.5 H
        for d in (0.0, 0.5, 1.0, 1.19):
            assert damping_beta([d, 0.0], c, R, H) == 1.0
        # zero beyond R + 0.75 H
        for d in (1.31, 1.4, 2.0):
            assert damping_beta([d, 0.0], c, R, H) == 0.0

    def test_linear_ramp(self):
        c, R, H = (0.0, 0.0), 1.0, 0.4
        # midpoint of the ramp (R + 0.625 H) has beta = 0.5
        assert np.isclose(damping_beta([1.25, 0.0], c, R, H), 0.5, atol=1e-12)

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            damping_beta([0.0, 0.0], (0.0, 0.0), 1.0, 0.0)


def disk_particle(center=(0.5, 0.5), R=0.2, H=0.15):
    return Particle(center=center, radius=R, rho_p=1.0, atmosphere_width=H)


class TestClassification:
    def test_node_at_center_is_hole(self, square_system):
        p = disk_particle()
        nc = classify_nodes(square_system, p)
        center_node = np.argmin(
            np.hypot(*(square_system.node_coords - [0.5, 0.5]).T)
        )
        assert nc.labels[center_node] == HOLE
        assert nc.owner[center_node] == 0

    def test_far_node_regular(self, square_system):
        p = disk_particle(center=(0.0, 0.0), R=0.1, H=0.1)
        nc = classify_nodes(square_system, p)
        far = np.argmin(np.hypot(*(square_system.node_coords - [1.0, 1.0]).T))
        # distance sqrt(2) > 2 (R + H)
        assert nc.labels[far] == REGULAR

    def test_hole_count_matches_brute_force(self):
        p = disk_particle(center=(0.52, 0.48), R=0.2, H=0.1)
        # grid spacing h = R / 4
        n = int(round(1.0 / (p.radius / 4)))
        sys_ = build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), n, n))
        nc = classify_nodes(sys_, p)
        d = np.hypot(*(sys_.node_coords - p.center).T)
        assert set(nc.holes()) == set(np.nonzero(d <= p.radius)[0])

    def test_fringe_nodes_in_annulus_on_cut_cells(self, square_system):
        p = disk_particle()
        nc = classify_nodes(square_system, p)
        fr = nc.fringes()
        assert len(fr) > 0
        d = np.hypot(*(square_system.node_coords[fr] - p.center).T)
        assert np.all(d > p.radius)
        assert np.all(d < p.radius + p.atmosphere_width)

    def test_classify_all_empty(self, square_system):
        nc = classify_all(square_system, [])
        assert np.all(nc.labels == REGULAR)
        assert np.all(nc.owner == -1)


class TestInterpolateField:
    def test_constant_field(self, square_system, rng):
        u = np.concatenate(
            [
                np.full(square_system.n_velocity_nodes, 2.5),
                np.full(square_system.n_velocity_nodes, -1.0),
            ]
        )
        pts = rng.uniform(0, 1, size=(100, 2))
        vals, grads, _, found = interpolate_field(square_system, u, None, pts)
        assert np.all(found)
        assert np.max(np.abs(vals - [2.5, -1.0])) < 1e-12
        assert np.max(np.abs(grads)) < 1e-11

    def test_quadratic_field_analytic(self, square_system, rng):
        u = square_system.interpolate_velocity(lambda x, y: (x * x, x * y))
        pts = rng.uniform(0.01, 0.99, size=(40, 2))
        vals, _, _, found = interpolate_field(square_system, u, None, pts)
        assert np.all(found)
        assert np.allclose(vals[:, 0], pts[:, 0] ** 2, atol=1e-10)
        assert np.allclose(vals[:, 1], pts[:, 0] * pts[:, 1], atol=1e-10)

    def test_outside_points_flagged(self, square_system):
        u = np.zeros(2 * square_system.n_velocity_nodes)
        vals, _, _, found = interpolate_field(
            square_system, u, None, np.array([[0.5, 0.5], [3.0, 0.5]])
        )
        assert found[0] and not found[1]
        assert np.all(vals[1] == 0.0)

    def test_evaluator_closure(self, square_system):
        u = square_system.interpolate_velocity(lambda x, y: (y, 0.0))
        ev = make_velocity_evaluator(square_system, u)
        vals, found = ev(np.array([[0.25, 0.75]]))
        assert found[0] and np.isclose(vals[0, 0], 0.75, atol=1e-12)


class TestRobinData:
    def test_constant_pressure(self, square_system):
        from chimera2d.mesh import TAG_OUTLET

        bq = boundary_quadrature(square_system, TAG_OUTLET, order=3)
        u = np.zeros(2 * square_system.n_velocity_nodes)
        p = np.zeros(square_system.n_pressure_dofs)
        p[0::3] = 4.0
        data = extract_robin_data(
            square_system, u, p, bq.points, bq.normals, 0.0, 1e-3
        )
        assert np.allclose(data, -4.0 * bq.normals, atol=1e-12)

    def test_shear_field_traction(self, square_system):
        # u = (y, 0), p = 0, n = (1, 0): sigma n = (0, mu)
        from chimera2d.mesh import TAG_OUTLET

        mu = 0.07
        bq = boundary_quadrature(square_system, TAG_OUTLET, order=3)
        u = square_system.interpolate_velocity(lambda x, y: (y, 0.0))
        p = np.zeros(square_system.n_pressure_dofs)
        data = extract_robin_data(square_system, u, p, bq.points, bq.normals, 0.0, mu)
        assert np.allclose(data[:, 0], 0.0, atol=1e-11)
        assert np.allclose(data[:, 1], mu, atol=1e-11)

    def test_shear_field_with_alpha(self, square_system):
        # alpha = 1 subtracts (u.n) u = (y^2, 0) at each point
        from chimera2d.mesh import TAG_OUTLET

        mu = 0.07
        bq = boundary_quadrature(square_system, TAG_OUTLET, order=3)
        u = square_system.interpolate_velocity(lambda x, y: (y, 0.0))
        p = np.zeros(square_system.n_pressure_dofs)
        data = extract_robin_data(square_system, u, p, bq.points, bq.normals, 1.0, mu)
        y = bq.points[:, 1]
        assert np.allclose(data[:, 0], -(y**2), atol=1e-10)
        assert np.allclose(data[:, 1], mu, atol=1e-10)

    def test_outside_point_raises(self, square_system):
        u = np.zeros(2 * square_system.n_velocity_nodes)
        p = np.zeros(square_system.n_pressure_dofs)
        with pytest.raises(RuntimeError):
            extract_robin_data(
                square_system, u, p, np.array([[5.0, 5.0]]), np.array([[1.0, 0.0]]), 0.0, 1.0
            )


class TestPenaltyQuadrature:
    def test_cell_inside_disk(self, square_system):
        # big disk swallowing the whole mesh cell
        p = disk_particle(center=(0.5, 0.5), R=0.6, H=0.2)
        pq = penalty_quadrature(square_system.mesh, 5, p, DEFAULT_RULE)
        area = square_system.mesh.cell_areas()[5]
        assert np.isclose(pq.weights.sum(), area, rtol=1e-12)
        assert np.all(pq.region == REGION_HOLE)

    def test_cell_far_outside(self, square_system):
        p = disk_particle(center=(-5.0, -5.0), R=0.2, H=0.1)
        assert penalty_quadrature(square_system.mesh, 0, p, DEFAULT_RULE) is None

    def test_adaptive_segment_area(self):
        # circle arc cutting straight through one cell; depth-4 quartering
        # resolves the circular-segment area to about 1%
        sys_ = build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 1, 1))
        R = 1.3
        p = Particle(center=(0.5, -R + 0.6), radius=R, rho_p=1.0, atmosphere_width=0.5)
        pq = penalty_quadrature(sys_.mesh, 0, p, DEFAULT_RULE, mode="adaptive", depth=4)
        hole_area = pq.weights[pq.region == REGION_HOLE].sum()
        import scipy.integrate as si

        exact, _ = si.quad(
            lambda x: np.clip(
                p.center[1] + np.sqrt(max(R**2 - (x - p.center[0]) ** 2, 0.0)), 0, 1
            ),
            0.0,
            1.0,
        )
        assert abs(hole_area - exact) < 0.01 * exact

    def test_depth_cap(self, square_system):
        p = disk_particle()
        with pytest.raises(ValueError):
            penalty_quadrature(square_system.mesh, 5, p, DEFAULT_RULE, depth=7)

    def test_unknown_mode(self, square_system):
        p = disk_particle()
        with pytest.raises(ValueError):
            penalty_quadrature(square_system.mesh, 5, p, DEFAULT_RULE, mode="weird")

    def test_points_within_reach(self, square_system):
        p = disk_particle()
        for cell in range(square_system.mesh.n_cells):
            pq = penalty_quadrature(square_system.mesh, cell, p, DEFAULT_RULE)
            if pq is None or len(pq.weights) == 0:
                continue
            d = np.hypot(*(pq.points - p.center).T)
            assert np.all(d < p.radius + p.atmosphere_width)
            hole = pq.region == REGION_HOLE
            assert np.all(d[hole] <= p.radius)
            assert np.all(pq.beta[hole] == 1.0)
