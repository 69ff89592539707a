"""Inter-mesh machinery: damping function, hole/fringe classification,
cross-mesh evaluation, Robin data extraction, and penalty quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fespace import FESystem
from .mesh import QuadMesh, _bilinear

REGULAR, HOLE, FRINGE = 0, 1, 2
REGION_ATMOSPHERE, REGION_HOLE = 0, 1


def damping_beta(x, center, radius, width):
    """Radial ramp in [0, 1]: full strength up to R + 0.5 H, zero beyond
    R + 0.75 H."""
    if width <= 0:
        raise ValueError("atmosphere width must be positive")
    x = np.asarray(x, dtype=float)
    d = np.hypot(x[..., 0] - center[0], x[..., 1] - center[1])
    return np.minimum(1.0, np.maximum(0.0, (radius + 0.75 * width - d) / (0.25 * width)))


@dataclass
class NodeClass:
    labels: np.ndarray  # per scalar velocity node: REGULAR / HOLE / FRINGE
    owner: np.ndarray  # particle index, -1 for regular nodes

    def holes(self):
        return np.nonzero(self.labels == HOLE)[0]

    def fringes(self):
        return np.nonzero(self.labels == FRINGE)[0]


def classify_nodes(system: FESystem, particle, out: NodeClass | None = None, k: int = 0):
    """Label background velocity nodes as hole / fringe / regular for one
    particle.  Hole: inside or on the disk.  Fringe: strictly inside the
    atmosphere and belonging to a cell crossed by the disk boundary."""
    coords = system.node_coords
    c = np.asarray(particle.center, dtype=float)
    d = np.hypot(coords[:, 0] - c[0], coords[:, 1] - c[1])
    R, H = particle.radius, particle.atmosphere_width
    if out is None:
        out = NodeClass(
            labels=np.zeros(len(coords), dtype=np.int8),
            owner=np.full(len(coords), -1, dtype=np.int32),
        )
    hole = d <= R
    dcell = d[system.velocity_dofmap]  # (m, 9)
    crossed = (dcell.min(axis=1) <= R) & (dcell.max(axis=1) > R)
    fringe_cand = np.zeros(len(coords), dtype=bool)
    fringe_cand[system.velocity_dofmap[crossed].ravel()] = True
    fringe = fringe_cand & (d > R) & (d < R + H)
    out.labels[fringe] = FRINGE
    out.owner[fringe] = k
    out.labels[hole] = HOLE
    out.owner[hole] = k
    return out


def classify_all(system: FESystem, particles) -> NodeClass:
    out = None
    for k, p in enumerate(particles):
        out = classify_nodes(system, p, out=out, k=k)
    if out is None:
        out = NodeClass(
            labels=np.zeros(system.n_velocity_nodes, dtype=np.int8),
            owner=np.full(system.n_velocity_nodes, -1, dtype=np.int32),
        )
    return out


def interpolate_field(system: FESystem, u, p, points):
    """Evaluate velocity (value and gradient) and pressure at physical points.

    Returns (values (n,2), grads (n,2,2), pvals (n,), found (n,) bool).
    Entries where point location fails are zero with found=False.
    """
    points = np.asarray(points, dtype=float)
    npts = len(points)
    vals = np.zeros((npts, 2))
    grads = np.zeros((npts, 2, 2))
    pvals = np.zeros(npts)
    cells, refs = system.mesh.locate_points(points)
    found = cells >= 0
    if found.any():
        cf = cells[found]
        if u is not None:
            vals[found], grads[found] = system.eval_velocity_many(u, cf, refs[found])
        if p is not None:
            pvals[found] = system.eval_pressure_many(p, cf, points[found])
    return vals, grads, pvals, found


def make_velocity_evaluator(system: FESystem, u):
    """Closure evaluating the velocity field at arbitrary points."""

    def ev(points):
        vals, _, _, found = interpolate_field(system, u, None, points)
        return vals, found

    return ev


def extract_robin_data(system: FESystem, u, p, points, normals, alpha, mu_f):
    """Traction data sigma.n - alpha (u.n) u from the background fields.

    Raises if any point is outside the background mesh (misconfigured
    geometry)."""
    vals, grads, pvals, found = interpolate_field(system, u, p, points)
    if not np.all(found):
        bad = np.asarray(points)[~found][:3]
        raise RuntimeError(f"Robin data point(s) outside background mesh, e.g. {bad}")
    normals = np.asarray(normals, dtype=float)
    # sigma = -p I + 2 mu D(u)
    Dv = 0.5 * (grads + np.swapaxes(grads, 1, 2))
    traction = 2.0 * mu_f * np.einsum("kij,kj->ki", Dv, normals) - pvals[:, None] * normals
    if alpha != 0.0:
        un = np.einsum("ki,ki->k", vals, normals)
        traction = traction - alpha * un[:, None] * vals
    return traction


@dataclass
class PenaltyQuadrature:
    refs: np.ndarray  # (n, 2) reference coords in the background cell
    points: np.ndarray  # (n, 2) physical coords
    weights: np.ndarray  # (n,) physical weights (include |J|)
    beta: np.ndarray  # (n,) damping values
    region: np.ndarray  # (n,) REGION_HOLE or REGION_ATMOSPHERE


def _fragment_points(verts, rule, centers, halves):
    """Evaluate rule points of ref-space fragments; returns refs, phys, weights."""
    refs, phys, wts = [], [], []
    for ctr, half in zip(centers, halves):
        r = ctr + half * rule.points
        for q in range(len(r)):
            q1, dq1 = _bilinear(r[q])
            jac = dq1.T @ verts
            det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
            refs.append(r[q])
            phys.append(q1 @ verts)
            wts.append(rule.weights[q] * half * half * det)
    return np.array(refs), np.array(phys), np.array(wts)


def penalty_quadrature(
    mesh: QuadMesh, cell: int, particle, base_rule, mode: str = "fixed", depth: int = 4
):
    """Quadrature points of one background cell for the interior penalty term.

    In adaptive mode, cells cut by the disk boundary or by the damping-ramp
    kink radii are recursively quartered up to ``depth`` levels."""
    if depth > 6:
        raise ValueError("subdivision depth capped at 6")
    verts = mesh.vertices[mesh.cells[cell]]
    c = np.asarray(particle.center, dtype=float)
    R, H = particle.radius, particle.atmosphere_width
    d_corner = np.hypot(verts[:, 0] - c[0], verts[:, 1] - c[1])
    # quick reject: cell bbox vs outer circle
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    nearest = np.clip(c, lo, hi)
    if np.hypot(*(nearest - c)) >= R + H:
        return None

    if mode == "fixed":
        centers = [np.zeros(2)]
        halves = [1.0]
    elif mode == "adaptive":
        kinks = (R, R + 0.5 * H, R + 0.75 * H)
        centers, halves = [], []
        stack = [(np.zeros(2), 1.0, 0)]
        while stack:
            ctr, half, lvl = stack.pop()
            if lvl < depth and _cut_by_any(verts, ctr, half, c, kinks):
                h2 = 0.5 * half
                for dx in (-h2, h2):
                    for dy in (-h2, h2):
                        stack.append((ctr + [dx, dy], h2, lvl + 1))
            else:
                centers.append(ctr)
                halves.append(half)
    else:
        raise ValueError(f"unknown quadrature mode {mode!r}")

    refs, phys, wts = _fragment_points(verts, base_rule, centers, halves)
    d = np.hypot(phys[:, 0] - c[0], phys[:, 1] - c[1])
    beta = damping_beta(phys, c, R, H)
    hole = d <= R
    keep = hole | ((d < R + H) & (beta > 0))
    region = np.where(hole, REGION_HOLE, REGION_ATMOSPHERE)
    return PenaltyQuadrature(
        refs=refs[keep],
        points=phys[keep],
        weights=wts[keep],
        beta=beta[keep],
        region=region[keep],
    )


def _cut_by_any(verts, ctr, half, center, radii):
    """Does any circle of the given radii cross this ref-space fragment?"""
    offs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    corners = []
    for o in offs:
        q1, _ = _bilinear(ctr + half * o)
        corners.append(q1 @ verts)
    corners = np.array(corners)
    d = np.hypot(corners[:, 0] - center[0], corners[:, 1] - center[1])
    dmin, dmax = d.min(), d.max()
    return any(dmin < r < dmax for r in radii)
