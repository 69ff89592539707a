"""End-to-end acceptance checks, one test per numbered criterion.

Each test prints one pass/fail line under ``pytest -v``.  The long benchmark
runs are marked ``slow`` (still on by default) or ``nightly`` (deselected by
default, see pyproject.toml).
"""

import json
import os

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401  (sp.linalg.norm)

from chimera2d.assembly import (
    DEFAULT_RULE,
    assemble_divergence,
    assemble_mass,
    assemble_penalty,
    assemble_viscous,
)
from chimera2d.bench import bench_dfg2d2, bench_moving_cylinder, bench_segre, dfg_config
from chimera2d.coupling import (
    REGION_ATMOSPHERE,
    classify_all,
    interpolate_field,
    penalty_quadrature,
)
from chimera2d.fespace import build_fe_system
from chimera2d.fracstep import SolverConfig
from chimera2d.mesh import build_background_mesh
from chimera2d.orchestrator import (
    ParticleSpec,
    SimulationConfig,
    run_simulation,
)
from chimera2d.rigidbody import Particle

BENCH_DIR = os.path.join(os.path.dirname(__file__), "..", "benchmarks")

# module-level cache so slow runs shared between assertions happen once
_RUNS: dict = {}


def test_criterion_1_divergence_residual_identity_over_ten_steps():
    # weak-coupling channel run: after every step the measured divergence
    # residual of the corrected velocity must match the penalty identity
    # B^T u = dt B^T M_L^-1 D (u_tilde - u) to within 10x the linear solver
    # tolerances, scaled by ||B^T u_tilde||
    cfg = dfg_config(algorithm="chimera_w", level=1, dt=0.005, t_end=0.05)
    gaps = []

    def observer(sim, rec):
        gaps.append((rec.remark_gap, rec.div_utilde))

    run_simulation(cfg, observer=observer)
    assert len(gaps) == 10
    tol = 10.0 * (cfg.solver.linear_tol + cfg.solver.poisson_tol)
    for gap, div_utilde in gaps:
        assert gap <= tol * div_utilde + 1e-30


def _gamma_sweep_error(gamma):
    """Max velocity mismatch between background and submesh solutions over
    the full-strength overlap zone after one coupled implicit step."""
    spec = ParticleSpec(
        center=(0.6, 0.2),
        radius=0.05,
        atmosphere_width=0.10,
        n_theta=64,
        n_rings=6,
        motion="fixed",
    )
    cfg = SimulationConfig(
        algorithm="chimera_w",
        domain=(0.0, 0.0, 2.2, 0.4),
        base_nx=22,
        base_ny=4,
        level=3,
        mu_f=1e-3,
        inlet_profile="uniform",
        inlet_umax=1.0,
        ramp_time=0.0,
        initial_velocity="inlet",
        t_end=0.1,
        particles=[spec],
        solver=SolverConfig(
            dt=0.1,
            n_outer=3,
            method="direct",
            linearization="about_old",
            quad_mode="adaptive",
            gamma_max=gamma,
        ),
    )
    _, sim = run_simulation(cfg)
    part = sim.particles[0]
    pts = []
    for cell in range(sim.mesh.n_cells):
        pq = penalty_quadrature(
            sim.mesh, cell, part, DEFAULT_RULE, mode="adaptive", depth=cfg.solver.quad_depth
        )
        if pq is None:
            continue
        sel = (pq.region == REGION_ATMOSPHERE) & (pq.beta == 1.0)
        if sel.any():
            pts.append(pq.points[sel])
    pts = np.concatenate(pts)
    v_bg, _, _, f_bg = interpolate_field(sim.system, sim.state.u, None, pts)
    sub = sim.submeshes[0]
    v_sub, _, _, f_sub = interpolate_field(sub.system, sub.u, None, pts)
    keep = f_bg & f_sub
    assert keep.sum() > 100
    return float(np.max(np.abs(v_bg[keep] - v_sub[keep])))


@pytest.mark.slow
def test_criterion_2_overlap_mismatch_first_order_in_penalty_strength():
    # the velocity mismatch between the two meshes over the overlap region
    # must fall at least 5x per decade of gamma across two decades
    errors = [_gamma_sweep_error(g) for g in (1e2, 1e3, 1e4)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[0] / errors[1] >= 5.0
    assert errors[1] / errors[2] >= 5.0


def test_criterion_3_assembly_oracles():
    rho = 1.7
    sys_ = build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 4, 4))
    # consistent mass integrates the constant to rho |Omega| per component
    M_C, M_L = assemble_mass(sys_, rho)
    ones = np.ones(2 * sys_.n_velocity_nodes)
    assert np.isclose(ones @ (M_C @ ones), 2 * rho * 1.0, rtol=1e-12)
    # lumped corner entry of a unit cell is rho / 36
    unit = build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 1, 1))
    _, M_Lu = assemble_mass(unit, rho)
    corner = unit.velocity_dofmap[0, 0]
    assert np.isclose(M_Lu.diagonal()[corner], rho / 36.0, rtol=1e-12)
    # discrete divergence annihilates divergence-free interpolants
    B = assemble_divergence(sys_)
    u = sys_.interpolate_velocity(lambda x, y: (x, -y))
    assert np.max(np.abs(B.T @ u)) < 1e-12
    # penalty matrix is symmetric positive semidefinite
    part = Particle(center=(0.5, 0.5), radius=0.22, rho_p=1.0, atmosphere_width=0.18)
    D, _, _ = assemble_penalty(sys_, [part], None, 1e3)
    assert abs(D - D.T).max() < 1e-12
    assert np.linalg.eigvalsh(D.toarray()).min() >= -1e-10 * np.abs(D).max()
    # viscous matrix is symmetric positive semidefinite with rigid motions
    # in its null space
    K = assemble_viscous(sys_, 1.0)
    assert abs(K - K.T).max() < 1e-12
    xy = sys_.node_coords
    rot = np.concatenate([-xy[:, 1], xy[:, 0]])
    assert np.linalg.norm(K @ rot) < 1e-12 * np.linalg.norm(K.data)


def _re20_drag(algorithm):
    key = f"re20-{algorithm}"
    if key not in _RUNS:
        cfg = dfg_config(algorithm=algorithm, level=3, dt=0.02, t_end=20.0)
        cfg.inlet_umax = 0.3  # U_mean = 0.2 -> Re = 20, steady wake
        cfg.ramp_time = 0.0
        cfg.initial_velocity = "inlet"  # start from the developed profile
        records, _ = run_simulation(cfg)
        tail = [r for r in records if r.t >= 0.8 * cfg.t_end]
        # coefficients are normalized by U_mean for this case
        scale = (cfg.u_ref / 0.2) ** 2
        _RUNS[key] = scale * float(np.mean([r.cd[0] for r in tail]))
    return _RUNS[key]


@pytest.mark.slow
def test_criterion_4_re20_steady_drag_both_couplings_match_conforming():
    cd_ref = _re20_drag("body_fitted")
    for algorithm in ("chimera_w", "chimera_s"):
        cd = _re20_drag(algorithm)
        assert abs(cd - cd_ref) / abs(cd_ref) <= 0.02, (algorithm, cd, cd_ref)


@pytest.mark.slow
def test_criterion_5_dfg_vortex_shedding_against_frozen_reference():
    with open(os.path.join(BENCH_DIR, "dfg_body_fitted.json")) as fh:
        ref = json.load(fh)["summary"]
    res = bench_dfg2d2(algorithm="chimera_s", level=2, dt=0.01, t_end=25.0, n_periods=5)
    s = res.summary
    assert s["cl_amplitude"] > 0.5
    assert s["period_spread"] < 0.02
    assert abs(s["cd_mean"] - ref["cd_mean"]) / abs(ref["cd_mean"]) <= 0.05


def _moving_cylinder(algorithm):
    key = f"mc-{algorithm}"
    if key not in _RUNS:
        _RUNS[key] = bench_moving_cylinder(algorithm=algorithm).summary
    return _RUNS[key]


@pytest.mark.slow
def test_criterion_6_moving_cylinder_weak_coupling_smoother_than_strong():
    # at equal resolution the weak coupling must produce a smoother force
    # signal than the strong hole/fringe coupling, whose discrete hole
    # updates put steps into the series
    sw = _moving_cylinder("chimera_w")
    ss = _moving_cylinder("chimera_s")
    assert sw["smoothness_cd"] < ss["smoothness_cd"], (sw, ss)


@pytest.mark.slow
def test_criterion_7_lateral_migration_smoke():
    # short-channel configuration: the equilibrium offset shifts slightly
    # from the long-channel value
    res = bench_segre(reynolds=18.0, dt=0.04)
    assert res.summary["converged"], res.summary
    assert abs(res.summary["r_e"] - 0.3330) <= 0.02, res.summary


@pytest.mark.nightly
def test_criterion_7_lateral_migration_nightly():
    res12 = bench_segre(reynolds=12.0)
    assert abs(res12.summary["r_e"] - 0.40404) <= 0.01, res12.summary
    res80 = bench_segre(reynolds=80.0)
    assert abs(res80.summary["r_e"] - 0.222) / 0.222 <= 0.05, res80.summary


def test_criterion_8_penalty_operator_lipschitz_under_subcell_motion():
    # moving the disk by fractions of a cell changes the strong-coupling
    # hole/fringe sets in discrete jumps, but the penalty operator (D, g)
    # must vary Lipschitz-continuously
    sys_ = build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 8, 8))
    h = 1.0 / 8.0
    base = np.array([0.5, 0.5])
    deltas = np.arange(9) * (h / 200.0)

    def operators(center):
        p = Particle(
            center=center,
            radius=0.2,
            rho_p=1.0,
            atmosphere_width=0.15,
            velocity=(0.3, -0.1),
        )
        D, g, _ = assemble_penalty(sys_, [p], None, 1.0, quad_mode="adaptive")
        return D, g, p

    ops = [operators(base + [d, 0.0]) for d in deltas]
    dD = [
        sp.linalg.norm(ops[i + 1][0] - ops[i][0]) for i in range(len(ops) - 1)
    ]
    dg = [np.linalg.norm(ops[i + 1][1] - ops[i][1]) for i in range(len(ops) - 1)]
    for diffs in (dD, dg):
        slope = np.median(diffs)
        assert slope > 0
        assert max(diffs) <= 3.0 * slope, diffs
    # ... while the node classification changes as a step function: identical
    # under a tiny shift, different by whole nodes under half a node spacing
    def holes_at(center):
        _, _, p = operators(center)
        return frozenset(classify_all(sys_, [p]).holes().tolist())

    assert holes_at(base) == holes_at(base + [1e-9, 0.0])
    assert holes_at(base) != holes_at(base + [h / 4.0, 0.0])


def _zero_particle_history(algorithm):
    cfg = SimulationConfig(
        algorithm=algorithm,
        domain=(0.0, 0.0, 2.0, 0.5),
        base_nx=12,
        base_ny=3,
        level=2,
        inlet_profile="parabolic",
        inlet_umax=1.0,
        ramp_time=0.1,
        t_end=0.25,
        solver=SolverConfig(dt=0.025, n_outer=2, method="direct"),
        particles=[],
    )
    history = []

    def observer(sim, rec):
        history.append((sim.state.u.copy(), sim.state.p.copy()))

    run_simulation(cfg, observer=observer)
    return history


def test_criterion_9_algorithms_coincide_without_particles():
    # with no particles every algorithm must reduce to the same plain
    # projection solve, step by step
    histories = {a: _zero_particle_history(a) for a in ("fbm", "chimera_s", "chimera_w")}
    ref = histories["fbm"]
    assert len(ref) == 10
    for algorithm in ("chimera_s", "chimera_w"):
        for (u_a, p_a), (u_b, p_b) in zip(ref, histories[algorithm]):
            scale = max(np.max(np.abs(u_a)), 1e-12)
            assert np.max(np.abs(u_a - u_b)) <= 1e-10 * scale
            pscale = max(np.max(np.abs(p_a)), 1e-12)
            assert np.max(np.abs(p_a - p_b)) <= 1e-10 * pscale
