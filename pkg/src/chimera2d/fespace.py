"""Q2-P1disc finite element spaces on quadrilateral meshes.

Velocity: continuous biquadratic (9-node) scalar space, two components,
blocked dof layout (component c, node n) -> c * n_nodes + n.
Pressure: cell-wise discontinuous linear, local basis {1, x - x_c, y - y_c}
in physical coordinates about the cell centroid; dofs (cell, 0..2) -> 3*cell + m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import EDGE_VERTS, QuadMesh


class FESpaceError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) in [-1,1]^2
    weights: np.ndarray  # (nq,)
    degree: int


def gauss_rule_1d(order: int):
    if order < 0 or order > 13:
        raise FESpaceError(f"unsupported quadrature order {order}")
    n = order // 2 + 1
    pts, wts = np.polynomial.legendre.leggauss(n)
    return pts, wts


def gauss_rule(order: int) -> QuadratureRule:
    """Smallest tensor Gauss-Legendre rule exact for degree ``order``."""
    pts, wts = gauss_rule_1d(order)
    P, Q = np.meshgrid(pts, pts, indexing="ij")
    W = np.outer(wts, wts)
    return QuadratureRule(
        points=np.column_stack([P.ravel(), Q.ravel()]),
        weights=W.ravel(),
        degree=order,
    )


# 1D quadratic Lagrange basis on nodes (-1, 0, 1)
def _lag1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([0.5 * x * (x - 1), 1 - x * x, 0.5 * x * (x + 1)], axis=-1)


def _dlag1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([x - 0.5, -2 * x, x + 0.5], axis=-1)


# local node order: corners 0-3 CCW, edge midpoints 4-7 (bottom,right,top,left),
# center 8; reference coordinates of each node:
Q2_NODES = np.array(
    [
        [-1, -1], [1, -1], [1, 1], [-1, 1],
        [0, -1], [1, 0], [0, 1], [-1, 0],
        [0, 0],
    ],
    dtype=float,
)
# index into the 1D basis (position -1 -> 0, 0 -> 1, 1 -> 2)
_IX = ((Q2_NODES[:, 0] + 1).astype(int), (Q2_NODES[:, 1] + 1).astype(int))


def shape_q2(refs):
    """Q2 shape functions; refs (..., 2) -> (..., 9)."""
    refs = np.asarray(refs, dtype=float)
    lx = _lag1d(refs[..., 0])
    ly = _lag1d(refs[..., 1])
    return lx[..., _IX[0]] * ly[..., _IX[1]]


def grad_q2(refs):
    """Reference-coordinate gradients; refs (..., 2) -> (..., 9, 2)."""
    refs = np.asarray(refs, dtype=float)
    lx = _lag1d(refs[..., 0])
    ly = _lag1d(refs[..., 1])
    dlx = _dlag1d(refs[..., 0])
    dly = _dlag1d(refs[..., 1])
    g = np.empty(refs.shape[:-1] + (9, 2))
    g[..., 0] = dlx[..., _IX[0]] * ly[..., _IX[1]]
    g[..., 1] = lx[..., _IX[0]] * dly[..., _IX[1]]
    return g


class FESystem:
    """Degree-of-freedom maps and geometry caches for one mesh."""

    def __init__(self, mesh: QuadMesh):
        self.mesh = mesh
        self._build_dofmaps()
        self.node_coords = self._compute_node_coords()
        self.pressure_centroids = mesh.cell_centroids()

    def _build_dofmaps(self):
        mesh = self.mesh
        nv = mesh.n_vertices
        nc = mesh.n_cells
        edge_ids = {}
        dofmap = np.empty((nc, 9), dtype=np.int64)
        next_id = nv
        for c in range(nc):
            verts = mesh.cells[c]
            dofmap[c, :4] = verts
            for e, (a, b) in enumerate(EDGE_VERTS):
                key = (min(verts[a], verts[b]), max(verts[a], verts[b]))
                if key not in edge_ids:
                    edge_ids[key] = next_id
                    next_id += 1
                dofmap[c, 4 + e] = edge_ids[key]
        dofmap[:, 8] = next_id + np.arange(nc)
        next_id += nc
        self.velocity_dofmap = dofmap
        self.n_velocity_nodes = next_id
        self.n_pressure_dofs = 3 * nc
        self.pressure_dofmap = (
            3 * np.arange(nc, dtype=np.int64)[:, None] + np.arange(3, dtype=np.int64)
        )

    def _compute_node_coords(self):
        coords = np.empty((self.n_velocity_nodes, 2))
        refs = Q2_NODES
        from .mesh import _bilinear

        cellverts = self.mesh.vertices[self.mesh.cells]  # (m,4,2)
        for k, ref in enumerate(refs):
            q1, _ = _bilinear(ref)
            pts = np.einsum("j,mjd->md", q1, cellverts)
            coords[self.velocity_dofmap[:, k]] = pts
        return coords

    # -- dof helpers -------------------------------------------------------

    @property
    def n_velocity_dofs(self) -> int:
        return 2 * self.n_velocity_nodes

    def vdof(self, comp, nodes):
        return comp * self.n_velocity_nodes + np.asarray(nodes)

    def boundary_nodes(self, tag=None):
        """Scalar velocity node ids on boundary edges (optionally of one tag)."""
        nodes = set()
        for cell, le, t in self.mesh.boundary_edges:
            if tag is not None and t != tag:
                continue
            a, b = EDGE_VERTS[le]
            nodes.add(int(self.velocity_dofmap[cell, a]))
            nodes.add(int(self.velocity_dofmap[cell, b]))
            nodes.add(int(self.velocity_dofmap[cell, 4 + le]))
        return np.array(sorted(nodes), dtype=np.int64)

    # -- geometry at quadrature points ------------------------------------

    def geometry(self, rule: QuadratureRule):
        """Cached per-cell geometry data for a volume quadrature rule.

        Returns dict with phi (nq,9), dphi (m,nq,9,2) physical gradients,
        wdet (m,nq) weights times |J|, xq (m,nq,2) physical points.
        """
        key = ("geom", rule.degree, len(rule.weights))
        cache = getattr(self, "_geom_cache", None)
        if cache is None:
            cache = self._geom_cache = {}
        if key in cache:
            return cache[key]
        from .mesh import _bilinear

        pts = rule.points
        nq = len(pts)
        cellverts = self.mesh.vertices[self.mesh.cells]  # (m,4,2)
        m = len(cellverts)
        phi = shape_q2(pts)  # (nq,9)
        gref = grad_q2(pts)  # (nq,9,2)
        q1 = np.empty((nq, 4))
        dq1 = np.empty((nq, 4, 2))
        for q, p in enumerate(pts):
            q1[q], dq1[q] = _bilinear(p)
        xq = np.einsum("qj,mjd->mqd", q1, cellverts)
        jac = np.einsum("qja,mjd->mqda", dq1, cellverts)  # dx_d/dxi_a
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if np.any(det <= 0):
            raise FESpaceError("non-positive Jacobian at quadrature point")
        inv = np.empty_like(jac)  # dxi_a/dx_d
        inv[..., 0, 0] = jac[..., 1, 1] / det
        inv[..., 0, 1] = -jac[..., 0, 1] / det
        inv[..., 1, 0] = -jac[..., 1, 0] / det
        inv[..., 1, 1] = jac[..., 0, 0] / det
        # physical gradient: d phi / d x_d = sum_a dphi/dxi_a * dxi_a/dx_d
        dphi = np.einsum("qja,mqad->mqjd", gref, inv)
        wdet = rule.weights[None, :] * det
        out = {"phi": phi, "dphi": dphi, "wdet": wdet, "xq": xq, "rule": rule}
        cache[key] = out
        return out

    # -- evaluation --------------------------------------------------------

    def eval_velocity(self, coeffs, cell, ref):
        """Value (2,) and physical gradient (2,2) of a velocity field.

        gradient[i, j] = d u_i / d x_j.
        """
        from .mesh import _bilinear

        ref = np.asarray(ref, dtype=float)
        phi = shape_q2(ref)
        gref = grad_q2(ref)
        verts = self.mesh.vertices[self.mesh.cells[cell]]
        _, dq1 = _bilinear(ref)
        jac = np.einsum("ja,jd->da", dq1, verts)  # dx_d/dxi_a
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        if abs(det) < 1e-300:
            raise FESpaceError(f"singular Jacobian in cell {cell}")
        inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
        dphi = np.einsum("ja,ad->jd", gref, inv)
        nodes = self.velocity_dofmap[cell]
        n = self.n_velocity_nodes
        u = np.empty(2)
        grad = np.empty((2, 2))
        for c in range(2):
            uc = coeffs[c * n + nodes]
            u[c] = phi @ uc
            grad[c] = uc @ dphi
        return u, grad

    def eval_velocity_many(self, coeffs, cells, refs):
        """Batched :meth:`eval_velocity`: values (k, 2), gradients (k, 2, 2)."""
        from .mesh import _bilinear_many

        refs = np.ascontiguousarray(refs, dtype=float)
        phi = shape_q2(refs)  # (k,9)
        gref = grad_q2(refs)  # (k,9,2)
        verts = self.mesh.vertices[self.mesh.cells[cells]]  # (k,4,2)
        _, dq1 = _bilinear_many(refs)
        jac = np.einsum("kja,kjd->kda", dq1, verts)  # dx_d/dxi_a
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(np.abs(det) < 1e-300):
            bad = cells[np.abs(det) < 1e-300][0]
            raise FESpaceError(f"singular Jacobian in cell {bad}")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        dphi = np.einsum("kja,kad->kjd", gref, inv)
        nodes = self.velocity_dofmap[cells]  # (k,9)
        n = self.n_velocity_nodes
        k = len(refs)
        vals = np.empty((k, 2))
        grads = np.empty((k, 2, 2))
        for c in range(2):
            uc = coeffs[c * n + nodes]  # (k,9)
            vals[:, c] = np.einsum("kj,kj->k", phi, uc)
            grads[:, c] = np.einsum("kj,kjd->kd", uc, dphi)
        return vals, grads

    def eval_pressure_many(self, coeffs, cells, xs):
        """Batched :meth:`eval_pressure`."""
        xc = self.pressure_centroids[cells]
        c = coeffs.reshape(-1, 3)[cells]
        return c[:, 0] + c[:, 1] * (xs[:, 0] - xc[:, 0]) + c[:, 2] * (xs[:, 1] - xc[:, 1])

    def eval_pressure(self, coeffs, cell, x):
        xc = self.pressure_centroids[cell]
        c = coeffs[3 * cell : 3 * cell + 3]
        return c[0] + c[1] * (x[0] - xc[0]) + c[2] * (x[1] - xc[1])

    def interpolate_velocity(self, func):
        """Nodal interpolation of a callable (x, y) -> (u, v)."""
        vals = np.asarray([func(x, y) for x, y in self.node_coords])
        return np.concatenate([vals[:, 0], vals[:, 1]])


def build_fe_system(mesh: QuadMesh) -> FESystem:
    return FESystem(mesh)
