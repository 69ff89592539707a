"""Time-stepping drivers for the four solver variants.

* ``fbm``: single background mesh with strong rigid-velocity rows at nodes
  covered by a particle.
* ``chimera_s``: strong overset coupling — hole (and, after the first outer
  pass, fringe) nodes of the background carry Dirichlet data interpolated
  from body-fitted annular submeshes.
* ``chimera_w``: weak overset coupling — the background solve sees the
  submesh solution only through a damped interior penalty term.
* ``body_fitted``: a single conforming mesh with a circular hole, used as the
  reference oracle for the overset runs.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import assembly
from .coupling import classify_all, extract_robin_data, make_velocity_evaluator
from .fespace import FESystem, build_fe_system
from .fracstep import (
    FlowState,
    ProjectionContext,
    SolverConfig,
    SolverError,
    build_projection_context,
    projection_solve,
    submesh_saddle_solve,
)
from .mesh import (
    TAG_INLET,
    TAG_OUTLET,
    TAG_PARTICLE,
    TAG_SUBMESH_OUTER,
    TAG_WALL,
    AnnulusSpec,
    build_annular_submesh,
    build_background_mesh,
    build_cylinder_channel_mesh,
)
from .rigidbody import (
    Particle,
    PrescribedOscillation,
    hydrodynamic_loads,
    loads_from_background,
    min_gap,
    newton_euler_step,
    rigid_velocity,
    update_kinematics,
)

ALGORITHMS = ("fbm", "chimera_s", "chimera_w", "body_fitted")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass
class ParticleSpec:
    """Declarative description of one disk particle and its submesh."""

    center: tuple[float, float]
    radius: float
    rho_p: float = 1.0
    atmosphere_width: float | None = None  # default: one radius
    n_theta: int = 32
    n_rings: int = 4
    motion: str = "free"  # free | fixed | prescribed
    velocity: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    oscillation_amplitude: float = 0.0
    oscillation_frequency: float = 0.0

    def __post_init__(self):
        if self.motion not in ("free", "fixed", "prescribed"):
            raise ConfigError(f"unknown particle motion {self.motion!r}")
        if self.atmosphere_width is None:
            self.atmosphere_width = self.radius

    def make_particle(self) -> Particle:
        prescribed = None
        if self.motion == "prescribed":
            prescribed = PrescribedOscillation(
                x0=np.asarray(self.center, dtype=float),
                amplitude=self.oscillation_amplitude,
                frequency=self.oscillation_frequency,
            )
        return Particle(
            center=np.asarray(self.center, dtype=float),
            radius=self.radius,
            rho_p=self.rho_p,
            atmosphere_width=self.atmosphere_width,
            velocity=np.asarray(self.velocity, dtype=float),
            omega=self.omega,
            prescribed_motion=prescribed,
            fixed=self.motion == "fixed",
        )

    def annulus_spec(self, center=None) -> AnnulusSpec:
        c = self.center if center is None else center
        return AnnulusSpec(
            inner_radius=self.radius,
            outer_radius=self.radius + self.atmosphere_width,
            n_theta=self.n_theta,
            n_rings=self.n_rings,
            center=(float(c[0]), float(c[1])),
        )


@dataclass
class SimulationConfig:
    algorithm: str = "chimera_w"
    domain: tuple[float, float, float, float] = (0.0, 0.0, 2.2, 0.41)
    base_nx: int = 22
    base_ny: int = 4
    level: int = 1
    boundary: dict = field(
        default_factory=lambda: {
            "left": TAG_INLET,
            "right": TAG_OUTLET,
            "top": TAG_WALL,
            "bottom": TAG_WALL,
        }
    )
    rho_f: float = 1.0
    mu_f: float = 1e-3
    gravity: tuple[float, float] = (0.0, 0.0)
    inlet_profile: str = "parabolic"  # parabolic | uniform | none
    inlet_umax: float = 1.5
    ramp_time: float = 0.5
    t_end: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    particles: list[ParticleSpec] = field(default_factory=list)
    coupling_iters: int = 1  # weak-coupling submesh/background sweeps per step
    record_every: int = 1
    snapshot_every: int = 0  # VTK cadence in steps; 0 disables
    checkpoint_every: int = 0  # checkpoint cadence in steps; 0 disables
    outdir: str | None = None
    x_wrap: bool = False
    x_wrap_margin: float | None = None
    min_gap_fraction: float = 0.5  # abort when a gap shrinks below this * h
    u_ref: float = 1.0  # reference velocity for force coefficients
    l_ref: float = 0.1  # reference length for force coefficients
    initial_velocity: str = "zero"  # zero | inlet
    # free-particle coupling iteration: under-relaxation avoids the
    # added-mass divergence of the explicit update at rho_p <= rho_f
    particle_relax: float = 0.5
    max_particle_passes: int = 30
    particle_pass_tol: float = 1e-5

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.inlet_profile not in ("parabolic", "uniform", "none"):
            raise ConfigError(f"unknown inlet profile {self.inlet_profile!r}")
        if self.initial_velocity not in ("zero", "inlet"):
            raise ConfigError(f"unknown initial velocity {self.initial_velocity!r}")
        if self.t_end < 0:
            raise ConfigError("end time must be nonnegative")
        x0, y0, x1, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("degenerate domain")
        sides = {"left", "right", "top", "bottom"}
        if set(self.boundary) != sides:
            raise ConfigError("boundary must assign all four sides")
        for tag in self.boundary.values():
            if tag not in (TAG_INLET, TAG_OUTLET, TAG_WALL):
                raise ConfigError(f"unknown boundary tag {tag!r}")
        if self.algorithm == "body_fitted":
            if len(self.particles) != 1:
                raise ConfigError("body_fitted needs exactly one particle")
            if self.particles[0].motion != "fixed":
                raise ConfigError("body_fitted supports only fixed particles")
        if self.algorithm == "chimera_s" and self.particles and self.solver.n_outer < 2:
            raise ConfigError("strong coupling needs at least two outer passes")
        if self.algorithm == "chimera_s" and len(self.particles) > 1:
            # each annulus must stay clear of every other particle
            for i, a in enumerate(self.particles):
                for b in self.particles[i + 1 :]:
                    dist = math.hypot(
                        a.center[0] - b.center[0], a.center[1] - b.center[1]
                    )
                    reach = max(
                        a.radius + a.atmosphere_width + b.radius,
                        b.radius + b.atmosphere_width + a.radius,
                    )
                    if dist < reach:
                        raise ConfigError("particle atmospheres must stay disjoint")

    @property
    def spacing(self) -> float:
        x0, _, x1, _ = self.domain
        return (x1 - x0) / (self.base_nx * 2 ** (self.level - 1))

    def inlet_velocity(self, x, y):
        """Inflow profile at full strength (no ramp factor)."""
        _, y0, _, y1 = self.domain
        if self.inlet_profile == "uniform":
            return (self.inlet_umax, 0.0)
        if self.inlet_profile == "none":
            return (0.0, 0.0)
        h = y1 - y0
        return (4.0 * self.inlet_umax * (y - y0) * (y1 - y) / h**2, 0.0)

    def ramp(self, t):
        if self.ramp_time <= 0 or t >= self.ramp_time:
            return 1.0
        return 0.5 * (1.0 - math.cos(math.pi * max(t, 0.0) / self.ramp_time))


@dataclass
class TimeSeriesRecord:
    t: float
    forces: np.ndarray  # (n_particles, 2)
    torques: np.ndarray  # (n_particles,)
    cd: np.ndarray
    cl: np.ndarray
    centers: np.ndarray  # (n_particles, 2)
    velocities: np.ndarray
    omegas: np.ndarray
    div_residual: float = 0.0
    div_utilde: float = 0.0
    remark_gap: float = 0.0
    n_outer: int = 0


@dataclass
class SubmeshState:
    """Body-fitted annulus of one particle: mesh frame plus flow fields."""

    base_mesh: object  # annulus mesh centered at the origin
    system: FESystem  # current translated frame
    ctx: ProjectionContext
    u: np.ndarray
    p: np.ndarray
    center: np.ndarray  # frame center the current system was built at

    def move_to(self, center):
        center = np.asarray(center, dtype=float)
        if np.array_equal(center, self.center):
            return
        self.system = build_fe_system(self.base_mesh.translated(center))
        self.ctx.system = self.system
        self.center = center


class Simulation:
    """Mutable solver state for one configured run."""

    def __init__(self, cfg: SimulationConfig):
        self.cfg = cfg
        self.particles = [spec.make_particle() for spec in cfg.particles]
        self.h = cfg.spacing
        if cfg.algorithm == "body_fitted":
            spec = cfg.particles[0]
            self.mesh = build_cylinder_channel_mesh(
                cfg.domain,
                spec.center,
                spec.radius,
                (cfg.domain[2] - cfg.domain[0]) / cfg.base_nx,
                level=cfg.level,
                tags=cfg.boundary,
            )
        else:
            self.mesh = build_background_mesh(
                cfg.domain, cfg.base_nx, cfg.base_ny, cfg.level, tags=cfg.boundary
            )
        self.system = build_fe_system(self.mesh)
        self.ctx = build_projection_context(
            self.system,
            cfg.rho_f,
            cfg.mu_f,
            viscous_factor=cfg.solver.viscous_factor,
        )
        self.ctx.pin_pressure = TAG_OUTLET not in cfg.boundary.values()

        # fixed-in-time Dirichlet skeleton: wall and inlet nodes
        n = self.system.n_velocity_nodes
        inlet = self.system.boundary_nodes(TAG_INLET)
        wall = self.system.boundary_nodes(TAG_WALL)
        overlap = np.isin(inlet, wall)
        inlet = inlet[~overlap]  # channel corners stay no-slip
        self._inlet_nodes = inlet
        self._inlet_full = np.array(
            [cfg.inlet_velocity(*self.system.node_coords[nd]) for nd in inlet]
        ).reshape(-1, 2)
        self._wall_nodes = wall
        self._bc_dofs = np.concatenate([wall, n + wall, inlet, n + inlet])

        self.submeshes: list[SubmeshState] = []
        if cfg.algorithm in ("chimera_s", "chimera_w"):
            for spec, part in zip(cfg.particles, self.particles):
                base = build_annular_submesh(spec.annulus_spec(center=(0.0, 0.0)))
                system = build_fe_system(base.translated(part.center))
                ctx = build_projection_context(
                    system, cfg.rho_f, cfg.mu_f, viscous_factor=cfg.solver.viscous_factor
                )
                self.submeshes.append(
                    SubmeshState(
                        base_mesh=base,
                        system=system,
                        ctx=ctx,
                        u=np.zeros(2 * system.n_velocity_nodes),
                        p=np.zeros(system.n_pressure_dofs),
                        center=part.center.copy(),
                    )
                )

        u0 = np.zeros(2 * n)
        if cfg.initial_velocity == "inlet":
            u0 = self.system.interpolate_velocity(cfg.inlet_velocity)
            u0[np.concatenate([wall, n + wall])] = 0.0
        self.state = FlowState(u0, np.zeros(self.system.n_pressure_dofs), 0.0)
        self.step_index = 0
        self.loads = [None] * len(self.particles)
        self.last_diag: dict = {}

    # -- boundary data ------------------------------------------------------

    def domain_dirichlet(self, t):
        """(dofs, values) for the rectangle boundary at time t (with ramp)."""
        r = self.cfg.ramp(t)
        vals = np.concatenate(
            [
                np.zeros(2 * len(self._wall_nodes)),
                r * self._inlet_full[:, 0],
                r * self._inlet_full[:, 1],
            ]
        )
        return self._bc_dofs, vals

    # -- record / coefficients ----------------------------------------------

    def _coeff_scale(self):
        cfg = self.cfg
        return 2.0 / (cfg.rho_f * cfg.u_ref**2 * cfg.l_ref)

    def record(self) -> TimeSeriesRecord:
        npart = len(self.particles)
        forces = np.zeros((npart, 2))
        torques = np.zeros(npart)
        for k, ld in enumerate(self.loads):
            if ld is not None:
                forces[k] = ld.force
                torques[k] = ld.torque
        s = self._coeff_scale()
        diag = self.last_diag
        return TimeSeriesRecord(
            t=self.state.t,
            forces=forces,
            torques=torques,
            cd=s * forces[:, 0],
            cl=s * forces[:, 1],
            centers=np.array([p.center for p in self.particles]).reshape(npart, 2),
            velocities=np.array([p.velocity for p in self.particles]).reshape(npart, 2),
            omegas=np.array([p.omega for p in self.particles]),
            div_residual=diag.get("div_norms", [0.0])[-1] if diag else 0.0,
            div_utilde=diag.get("div_utilde", 0.0),
            remark_gap=diag.get("remark_gap", 0.0),
            n_outer=len(diag.get("div_norms", [])) if diag else 0,
        )

    # -- stepping ------------------------------------------------------------

    def step(self):
        cfg = self.cfg
        if not self.particles:
            self._plain_step()
        elif cfg.algorithm == "fbm":
            step_fbm(self)
        elif cfg.algorithm == "chimera_s":
            step_chimera_s(self)
        elif cfg.algorithm == "chimera_w":
            step_chimera_w(self)
        else:
            step_body_fitted(self)
        self.step_index += 1
        self._post_step_checks()

    def _plain_step(self):
        t_new = self.state.t + self.cfg.solver.dt
        self.ctx.dirichlet_dofs, self.ctx.dirichlet_values = self.domain_dirichlet(t_new)
        self.ctx.D = None
        self.ctx.g = None
        self.ctx.mask_correction = None
        self.state, self.last_diag = projection_solve(self.ctx, self.state, self.cfg.solver)

    def _post_step_checks(self):
        cfg = self.cfg
        free = [p for p in self.particles if not p.fixed and p.prescribed_motion is None]
        if free:
            gap = min_gap(free, cfg.domain)
            if gap < cfg.min_gap_fraction * self.h:
                raise SolverError(
                    f"gap {gap:.3e} below {cfg.min_gap_fraction} * h at t={self.state.t:.4f}"
                )
        if cfg.x_wrap:
            x0, _, x1, _ = cfg.domain
            for spec, part, sub in zip(
                cfg.particles, self.particles, self.submeshes or [None] * len(self.particles)
            ):
                margin = cfg.x_wrap_margin
                if margin is None:
                    margin = 2.0 * (part.radius + part.atmosphere_width)
                if part.center[0] > x1 - margin:
                    part.center[0] -= x1 - x0 - 2.0 * margin
                    if sub is not None:
                        sub.move_to(part.center)

    # -- checkpointing --------------------------------------------------------

    def save_checkpoint(self, path):
        data = {
            "version": np.array(CHECKPOINT_VERSION),
            "algorithm": np.array(self.cfg.algorithm),
            "t": np.array(self.state.t),
            "step": np.array(self.step_index),
            "u": self.state.u,
            "p": self.state.p,
        }
        for k, part in enumerate(self.particles):
            data[f"particle{k}_state"] = np.array(
                [*part.center, *part.velocity, part.omega, part.theta]
            )
        for k, sub in enumerate(self.submeshes):
            data[f"sub{k}_u"] = sub.u
            data[f"sub{k}_p"] = sub.p
        np.savez(path, **data)
        return path

    def load_checkpoint(self, path):
        with np.load(path, allow_pickle=False) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {data['version']}")
            if str(data["algorithm"]) != self.cfg.algorithm:
                raise ConfigError("checkpoint was written by a different algorithm")
            if data["u"].shape != self.state.u.shape:
                raise ConfigError("checkpoint does not match the configured mesh")
            self.state = FlowState(data["u"].copy(), data["p"].copy(), float(data["t"]))
            self.step_index = int(data["step"])
            for k, part in enumerate(self.particles):
                s = data[f"particle{k}_state"]
                part.center = s[:2].copy()
                part.velocity = s[2:4].copy()
                part.omega = float(s[4])
                part.theta = float(s[5])
            for k, sub in enumerate(self.submeshes):
                sub.u = data[f"sub{k}_u"].copy()
                sub.p = data[f"sub{k}_p"].copy()
                sub.move_to(self.particles[k].center)

    # -- snapshots ------------------------------------------------------------

    def export_snapshot(self, directory, label):
        """Write background (and submesh) fields as legacy VTK files."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        nv = self.mesh.n_vertices
        n = self.system.n_velocity_nodes
        vel = np.column_stack([self.state.u[:nv], self.state.u[n : n + nv]])
        path = os.path.join(directory, f"background_{label}.vtk")
        self.mesh.export_vtk(
            path, point_data={"velocity": vel}, cell_data={"pressure": self.state.p[0::3]}
        )
        paths.append(path)
        for k, sub in enumerate(self.submeshes):
            m = sub.system.mesh
            nk = sub.system.n_velocity_nodes
            vel = np.column_stack([sub.u[: m.n_vertices], sub.u[nk : nk + m.n_vertices]])
            path = os.path.join(directory, f"submesh{k}_{label}.vtk")
            m.export_vtk(
                path, point_data={"velocity": vel}, cell_data={"pressure": sub.p[0::3]}
            )
            paths.append(path)
        return paths


# -- algorithm step functions --------------------------------------------------


def _hole_dirichlet(sim: Simulation, node_class):
    """(dofs, values) pinning hole-node velocities to the rigid motion."""
    n = sim.system.n_velocity_nodes
    holes = node_class.holes()
    if len(holes) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    vals = np.empty((len(holes), 2))
    for i, nd in enumerate(holes):
        part = sim.particles[node_class.owner[nd]]
        vals[i] = rigid_velocity(part, sim.system.node_coords[nd])
    dofs = np.concatenate([holes, n + holes])
    return dofs, np.concatenate([vals[:, 0], vals[:, 1]])


def _fringe_dirichlet(sim: Simulation, node_class):
    """(dofs, values) carrying submesh velocity to fringe nodes.

    Raises if a fringe node falls outside its particle's submesh."""
    n = sim.system.n_velocity_nodes
    fringes = node_class.fringes()
    if len(fringes) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    vals = np.empty((len(fringes), 2))
    for i, nd in enumerate(fringes):
        k = node_class.owner[nd]
        sub = sim.submeshes[k]
        part = sim.particles[k]
        x = sim.system.node_coords[nd]
        loc = sub.system.mesh.locate_point(x)
        if loc is None:
            # the polygonal outer ring undershoots the atmosphere circle
            # between vertices (and the submesh frame lags the particle by
            # one pass); pull the node radially onto the polygon
            spec = sim.cfg.particles[k]
            r_poly = (part.radius + part.atmosphere_width) * math.cos(
                math.pi / spec.n_theta
            )
            rvec = x - sub.center
            d = np.hypot(*rvec)
            if d > 0:
                dc = min(max(d, part.radius * (1.0 + 1e-9)), r_poly * (1.0 - 1e-12))
                xp = sub.center + rvec * dc / d
                loc = sub.system.mesh.locate_point(xp)
        if loc is None:
            raise SolverError(f"fringe node at {x} lies outside submesh {k}")
        vals[i], _ = sub.system.eval_velocity(sub.u, loc[0], loc[1])
    dofs = np.concatenate([fringes, n + fringes])
    return dofs, np.concatenate([vals[:, 0], vals[:, 1]])


def _background_solve(sim, state_old, extra_dofs, extra_vals, mask_dofs, t_new):
    """One projection solve with strong rows appended to the domain BCs."""
    dofs, vals = sim.domain_dirichlet(t_new)
    sim.ctx.dirichlet_dofs = np.concatenate([extra_dofs, dofs])
    sim.ctx.dirichlet_values = np.concatenate([extra_vals, vals])
    sim.ctx.D = None
    sim.ctx.g = None
    sim.ctx.mask_correction = mask_dofs
    return projection_solve(sim.ctx, state_old, sim.cfg.solver)


def _advance_particle(sim, part, loads, t_new):
    """Newton-Euler velocity update plus kinematics for one particle."""
    dt = sim.cfg.solver.dt
    if part.prescribed_motion is not None:
        update_kinematics(part, dt, t_new=t_new)
        return
    if part.fixed:
        return
    part.velocity, part.omega = newton_euler_step(
        part, loads, sim.cfg.rho_f, sim.cfg.gravity, dt
    )
    update_kinematics(part, dt)


def _solve_submesh(sim, k, bg_state):
    """Robin-coupled ALE solve of submesh k against the given background."""
    sub = sim.submeshes[k]
    part = sim.particles[k]
    sub.move_to(part.center)
    bq = assembly.boundary_quadrature(sub.system, TAG_SUBMESH_OUTER, order=4)
    robin = extract_robin_data(
        sim.system,
        bg_state.u,
        bg_state.p,
        bq.points,
        bq.normals,
        sim.cfg.solver.alpha,
        sim.cfg.mu_f,
    )
    sub.u, sub.p = submesh_saddle_solve(
        sub.system,
        sub.u,
        part,
        bq,
        robin,
        sim.cfg.solver,
        sim.cfg.rho_f,
        sim.cfg.mu_f,
        sub_ctx=sub.ctx,
    )


def step_fbm(sim: Simulation):
    """Single-mesh step: strong rigid rows, circle-quadrature loads."""
    cfg = sim.cfg
    t_new = sim.state.t + cfg.solver.dt
    for part in sim.particles:
        if part.prescribed_motion is not None:
            update_kinematics(part, cfg.solver.dt, t_new=t_new)
    node_class = classify_all(sim.system, sim.particles)
    hd, hv = _hole_dirichlet(sim, node_class)
    sim.state, sim.last_diag = _background_solve(
        sim, sim.state, hd, hv, mask_dofs=hd, t_new=t_new
    )
    for k, part in enumerate(sim.particles):
        sim.loads[k] = loads_from_background(
            sim.system, sim.state.u, sim.state.p, part, cfg.mu_f
        )
        if part.prescribed_motion is None:
            _advance_particle(sim, part, sim.loads[k], t_new)


def step_chimera_s(sim: Simulation):
    """Strong-coupling step: repeated background/submesh passes.

    Pass 1 imposes rigid data at hole nodes only; later passes also pin the
    fringe nodes to the freshly computed submesh velocity.  Particle state is
    re-advanced from its start-of-step snapshot on every pass so the passes
    refine (not compound) the update."""
    cfg = sim.cfg
    dt = cfg.solver.dt
    t_new = sim.state.t + dt
    snapshots = [p.copy_state() for p in sim.particles]
    state_old = sim.state
    inner_cfg = replace(cfg.solver, n_outer=1)
    passes = max(2, cfg.solver.n_outer)
    free = [p.prescribed_motion is None and not p.fixed for p in sim.particles]
    # per-particle velocity estimates refined across passes; the relaxation
    # factor is halved whenever the fixed-point residual grows (the rotational
    # update has gain ~ dt mu / (rho_p a^2), which exceeds the stable range of
    # a fixed factor for small or viscous particles)
    est = [(p.velocity.copy(), p.omega) for p in sim.particles]
    relax = [cfg.particle_relax] * len(sim.particles)
    prev_resid = [None] * len(sim.particles)
    max_passes = max(passes, cfg.max_particle_passes) if any(free) else passes
    for pass_i in range(max_passes):
        node_class = classify_all(sim.system, sim.particles)
        hd, hv = _hole_dirichlet(sim, node_class)
        if pass_i > 0:
            fd, fv = _fringe_dirichlet(sim, node_class)
            hd = np.concatenate([hd, fd])
            hv = np.concatenate([hv, fv])
        dofs, vals = sim.domain_dirichlet(t_new)
        sim.ctx.dirichlet_dofs = np.concatenate([hd, dofs])
        sim.ctx.dirichlet_values = np.concatenate([hv, vals])
        sim.ctx.D = None
        sim.ctx.g = None
        sim.ctx.mask_correction = hd
        new_state, sim.last_diag = projection_solve(sim.ctx, state_old, inner_cfg)
        sim.state = new_state
        change = 0.0
        for k, part in enumerate(sim.particles):
            _solve_submesh(sim, k, new_state)
            sim.loads[k] = hydrodynamic_loads(
                sim.submeshes[k].system,
                sim.submeshes[k].u,
                sim.submeshes[k].p,
                part,
                cfg.mu_f,
            )
            part.center, part.velocity, part.omega, part.theta = snapshots[k]
            part.center = part.center.copy()
            part.velocity = part.velocity.copy()
            if free[k]:
                u_cand, om_cand = newton_euler_step(
                    part, sim.loads[k], cfg.rho_f, cfg.gravity, dt
                )
                resid = np.linalg.norm(u_cand - est[k][0]) + abs(
                    om_cand - est[k][1]
                ) * part.radius
                if prev_resid[k] is not None and resid > prev_resid[k]:
                    relax[k] = max(0.5 * relax[k], 0.05)
                prev_resid[k] = resid
                w = relax[k]
                u_new = est[k][0] + w * (u_cand - est[k][0])
                om_new = est[k][1] + w * (om_cand - est[k][1])
                scale = np.linalg.norm(u_new) + abs(om_new) * part.radius + 1e-30
                change = max(
                    change,
                    (
                        np.linalg.norm(u_new - est[k][0])
                        + abs(om_new - est[k][1]) * part.radius
                    )
                    / scale,
                )
                est[k] = (u_new, om_new)
                part.velocity = u_new.copy()
                part.omega = om_new
                update_kinematics(part, dt)
            else:
                _advance_particle(sim, part, sim.loads[k], t_new)
        if pass_i >= passes - 1 and change < cfg.particle_pass_tol:
            break


def step_chimera_w(sim: Simulation):
    """Weak-coupling step: loads, particle update, submesh solve, then a
    background solve with the interior penalty built from the new submesh
    velocity."""
    cfg = sim.cfg
    dt = cfg.solver.dt
    t_new = sim.state.t + dt
    for k, part in enumerate(sim.particles):
        sub = sim.submeshes[k]
        sim.loads[k] = hydrodynamic_loads(sub.system, sub.u, sub.p, part, cfg.mu_f)
        _advance_particle(sim, part, sim.loads[k], t_new)
    state_old = sim.state
    for sweep in range(max(1, cfg.coupling_iters)):
        bg = sim.state if sweep > 0 else state_old
        for k in range(len(sim.particles)):
            _solve_submesh(sim, k, bg)
        evals = [
            make_velocity_evaluator(sub.system, sub.u) for sub in sim.submeshes
        ]
        gamma = cfg.solver.effective_gamma(cfg.rho_f)
        D, g, _ = assembly.assemble_penalty(
            sim.system,
            sim.particles,
            evals,
            gamma,
            quad_mode=cfg.solver.quad_mode,
            depth=cfg.solver.quad_depth,
        )
        dofs, vals = sim.domain_dirichlet(t_new)
        sim.ctx.dirichlet_dofs = dofs
        sim.ctx.dirichlet_values = vals
        sim.ctx.D = D
        sim.ctx.g = g
        sim.ctx.mask_correction = None
        sim.state, sim.last_diag = projection_solve(sim.ctx, state_old, cfg.solver)


def step_body_fitted(sim: Simulation):
    """Conforming-mesh step: no-slip rows on the hole boundary."""
    cfg = sim.cfg
    t_new = sim.state.t + cfg.solver.dt
    n = sim.system.n_velocity_nodes
    surface = sim.system.boundary_nodes(TAG_PARTICLE)
    part = sim.particles[0]
    vals = rigid_velocity(part, sim.system.node_coords[surface])
    hd = np.concatenate([surface, n + surface])
    hv = np.concatenate([vals[:, 0], vals[:, 1]])
    sim.state, sim.last_diag = _background_solve(
        sim, sim.state, hd, hv, mask_dofs=None, t_new=t_new
    )
    sim.loads[0] = hydrodynamic_loads(
        sim.system, sim.state.u, sim.state.p, part, cfg.mu_f
    )


# -- run driver ----------------------------------------------------------------


def write_forces_csv(records, path, n_particles):
    """t plus drag/lift coefficients and raw loads per particle."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for k in range(n_particles):
            header += [f"cd{k}", f"cl{k}", f"fx{k}", f"fy{k}", f"torque{k}"]
        header += ["div_residual", "remark_gap"]
        w.writerow(header)
        for r in records:
            row = [f"{r.t:.17g}"]
            for k in range(n_particles):
                row += [
                    f"{r.cd[k]:.17g}",
                    f"{r.cl[k]:.17g}",
                    f"{r.forces[k, 0]:.17g}",
                    f"{r.forces[k, 1]:.17g}",
                    f"{r.torques[k]:.17g}",
                ]
            row += [f"{r.div_residual:.17g}", f"{r.remark_gap:.17g}"]
            w.writerow(row)
    return path


def write_trajectory_csv(records, path, n_particles):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for k in range(n_particles):
            header += [f"x{k}", f"y{k}", f"ux{k}", f"uy{k}", f"omega{k}"]
        w.writerow(header)
        for r in records:
            row = [f"{r.t:.17g}"]
            for k in range(n_particles):
                row += [
                    f"{r.centers[k, 0]:.17g}",
                    f"{r.centers[k, 1]:.17g}",
                    f"{r.velocities[k, 0]:.17g}",
                    f"{r.velocities[k, 1]:.17g}",
                    f"{r.omegas[k]:.17g}",
                ]
            w.writerow(row)
    return path


def _flush(cfg, records, n_particles):
    if cfg.outdir is None:
        return
    os.makedirs(cfg.outdir, exist_ok=True)
    write_forces_csv(records, os.path.join(cfg.outdir, "forces.csv"), n_particles)
    write_trajectory_csv(
        records, os.path.join(cfg.outdir, "trajectory.csv"), n_particles
    )


def run_simulation(cfg: SimulationConfig, resume_from=None, observer=None):
    """Run a configured simulation to its end time.

    Returns (records, sim).  On a solver failure the partial time series is
    flushed to ``cfg.outdir`` (when set) before the error propagates.
    ``observer(sim, record)``, when given, is called after every step."""
    sim = Simulation(cfg)
    if resume_from is not None:
        sim.load_checkpoint(resume_from)
    records = [sim.record()]
    npart = len(sim.particles)
    dt = cfg.solver.dt
    n_steps = int(round(max(cfg.t_end - sim.state.t, 0.0) / dt))
    try:
        for _ in range(n_steps):
            sim.step()
            rec = sim.record()
            if sim.step_index % max(cfg.record_every, 1) == 0:
                records.append(rec)
            if observer is not None:
                observer(sim, rec)
            if cfg.snapshot_every and sim.step_index % cfg.snapshot_every == 0:
                sim.export_snapshot(
                    os.path.join(cfg.outdir or ".", "snapshots"),
                    f"{sim.step_index:06d}",
                )
            if cfg.checkpoint_every and sim.step_index % cfg.checkpoint_every == 0:
                os.makedirs(cfg.outdir or ".", exist_ok=True)
                sim.save_checkpoint(
                    os.path.join(cfg.outdir or ".", f"checkpoint_{sim.step_index:06d}.npz")
                )
    except SolverError:
        _flush(cfg, records, npart)
        raise
    _flush(cfg, records, npart)
    return records, sim
