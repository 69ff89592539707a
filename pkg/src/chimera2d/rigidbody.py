"""Rigid disk particles: kinematic state, hydrodynamic loads from the
submesh stress, and explicit Newton-Euler updates (2D: scalar angular
velocity, I = m R^2 / 2, no gyroscopic term)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import boundary_quadrature
from .fespace import FESystem
from .mesh import TAG_PARTICLE


@dataclass
class Loads:
    force: np.ndarray  # (2,)
    torque: float

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        if not (np.all(np.isfinite(self.force)) and math.isfinite(self.torque)):
            raise ValueError("non-finite hydrodynamic loads")


@dataclass
class PrescribedOscillation:
    """Sinusoidal horizontal trajectory X(t) = X0 + A sin(2 pi f t)."""

    x0: np.ndarray
    amplitude: float
    frequency: float

    def position(self, t):
        x0 = np.asarray(self.x0, dtype=float)
        return x0 + np.array([self.amplitude * math.sin(2 * math.pi * self.frequency * t), 0.0])

    def velocity(self, t):
        w = 2 * math.pi * self.frequency
        return np.array([self.amplitude * w * math.cos(w * t), 0.0])


@dataclass
class Particle:
    center: np.ndarray
    radius: float
    rho_p: float
    atmosphere_width: float
    velocity: np.ndarray = None
    omega: float = 0.0
    theta: float = 0.0  # orientation angle, diagnostic only
    prescribed_motion: PrescribedOscillation | None = None
    fixed: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).copy()
        if self.velocity is None:
            self.velocity = np.zeros(2)
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.rho_p <= 0:
            raise ValueError("particle density must be positive")

    @property
    def volume(self) -> float:
        # unit thickness in 2D
        return math.pi * self.radius ** 2

    @property
    def inertia(self) -> float:
        return 0.5 * self.rho_p * self.volume * self.radius ** 2

    def copy_state(self):
        return self.center.copy(), self.velocity.copy(), self.omega, self.theta


def rigid_velocity(particle: Particle, x):
    """Rigid-motion velocity U + omega x (x - X) at one or many points."""
    x = np.asarray(x, dtype=float)
    dx = x[..., 0] - particle.center[0]
    dy = x[..., 1] - particle.center[1]
    u = np.empty(x.shape)
    u[..., 0] = particle.velocity[0] - particle.omega * dy
    u[..., 1] = particle.velocity[1] + particle.omega * dx
    return u


def hydrodynamic_loads(
    sub_system: FESystem, u, p, particle: Particle, mu_f: float, order: int = 5
) -> Loads:
    """Force and torque on the disk from the submesh stress.

    Integrates the traction sigma.n over the disk surface with n pointing
    from the disk into the fluid, which gives the force exerted by the fluid
    on the particle (outward-of-fluid normal convention with the sign
    flipped)."""
    bq = boundary_quadrature(sub_system, TAG_PARTICLE, order)
    if len(bq.cells) == 0:
        raise ValueError("submesh has no particle-surface boundary")
    K = len(bq.cells)
    trac = np.empty((K, 2))
    for i in range(K):
        val, grad = sub_system.eval_velocity(u, int(bq.cells[i]), bq.refs[i])
        pv = sub_system.eval_pressure(p, int(bq.cells[i]), bq.points[i])
        Dv = 0.5 * (grad + grad.T)
        # domain-outward normal of the annulus points into the disk; the
        # disk-outward normal is its negation
        n_disk = -bq.normals[i]
        trac[i] = (2.0 * mu_f * Dv - pv * np.eye(2)) @ n_disk
    F = np.einsum("k,kd->d", bq.wds, trac)
    r = bq.points - particle.center
    T = float(np.einsum("k,k->", bq.wds, r[:, 0] * trac[:, 1] - r[:, 1] * trac[:, 0]))
    return Loads(force=F, torque=T)


def loads_from_background(
    system: FESystem, u, p, particle: Particle, mu_f: float, n_points: int | None = None
) -> Loads:
    """FBM-style loads: quadrature on the analytic circle using background
    fields."""
    if n_points is None:
        h = system.mesh.diameter / math.sqrt(system.mesh.n_cells)
        n_points = max(32, 4 * int(math.ceil(2 * math.pi * particle.radius / h)))
    th = 2 * math.pi * np.arange(n_points) / n_points
    n_disk = np.column_stack([np.cos(th), np.sin(th)])
    pts = particle.center + particle.radius * n_disk
    from .coupling import interpolate_field

    vals, grads, pvals, found = interpolate_field(system, u, p, pts)
    if not np.all(found):
        raise RuntimeError("circle quadrature point outside background mesh")
    Dv = 0.5 * (grads + np.swapaxes(grads, 1, 2))
    trac = 2.0 * mu_f * np.einsum("kij,kj->ki", Dv, n_disk) - pvals[:, None] * n_disk
    ds = 2 * math.pi * particle.radius / n_points
    F = ds * trac.sum(axis=0)
    r = pts - particle.center
    T = float(ds * np.sum(r[:, 0] * trac[:, 1] - r[:, 1] * trac[:, 0]))
    return Loads(force=F, torque=T)


def newton_euler_step(particle: Particle, loads: Loads, rho_f: float, gravity, dt: float):
    """Explicit update of translational and angular velocity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = np.asarray(gravity, dtype=float)
    U = particle.velocity + dt * (
        loads.force / (particle.rho_p * particle.volume) + (1.0 - rho_f / particle.rho_p) * g
    )
    omega = particle.omega + dt * loads.torque / particle.inertia
    return U, omega


def update_kinematics(particle: Particle, dt: float, t_new: float | None = None):
    """Advance position and orientation; prescribed motion overrides both."""
    if particle.prescribed_motion is not None:
        if t_new is None:
            raise ValueError("prescribed motion needs the new time")
        particle.center = particle.prescribed_motion.position(t_new)
        particle.velocity = particle.prescribed_motion.velocity(t_new)
        particle.theta += dt * particle.omega
        return
    particle.center = particle.center + dt * particle.velocity
    particle.theta += dt * particle.omega


def min_gap(particles, domain) -> float:
    """Smallest surface gap between particles or to a wall of the rectangle."""
    x0, y0, x1, y1 = domain
    gaps = []
    for i, p in enumerate(particles):
        gaps.append(p.center[0] - x0 - p.radius)
        gaps.append(x1 - p.center[0] - p.radius)
        gaps.append(p.center[1] - y0 - p.radius)
        gaps.append(y1 - p.center[1] - p.radius)
        for q in particles[i + 1 :]:
            gaps.append(np.hypot(*(p.center - q.center)) - p.radius - q.radius)
    return min(gaps) if gaps else math.inf
