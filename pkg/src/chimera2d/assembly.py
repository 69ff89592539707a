"""Assembly of the discrete operators: mass matrices, Burgers matrix,
divergence, interior penalty, right-hand sides, and Robin boundary terms.

Velocity dofs are blocked: component c of scalar node n is c*N + n with
N = system.n_velocity_nodes.  All matrices are scipy CSR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fespace import FESystem, QuadratureRule, gauss_rule, gauss_rule_1d, shape_q2, grad_q2
from .mesh import EDGE_VERTS, _bilinear

DEFAULT_RULE = gauss_rule(5)  # 3x3 Gauss


@dataclass
class SystemBlocks:
    A: sp.csr_matrix
    B: sp.csr_matrix
    M_C: sp.csr_matrix
    M_L: sp.csr_matrix  # diagonal
    D: sp.csr_matrix | None
    f: np.ndarray
    g: np.ndarray


def _accumulate(system, elem, block_offsets=None):
    """Assemble per-cell (m, 9, 9) element matrices into a scalar N x N CSR."""
    dof = system.velocity_dofmap
    m = dof.shape[0]
    rows = np.repeat(dof, 9, axis=1).ravel()
    cols = np.tile(dof, (1, 9)).ravel()
    n = system.n_velocity_nodes
    return sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _block2(system, Kxx, Kxy, Kyx, Kyy):
    return sp.bmat([[Kxx, Kxy], [Kyx, Kyy]], format="csr")


def _blockdiag2(Ms):
    return sp.block_diag([Ms, Ms], format="csr")


def scalar_mass(system: FESystem, rule: QuadratureRule = DEFAULT_RULE):
    g = system.geometry(rule)
    elem = np.einsum("cq,qi,qj->cij", g["wdet"], g["phi"], g["phi"])
    return _accumulate(system, elem)


def lumped_nodal_weights(system: FESystem, rule: QuadratureRule = DEFAULT_RULE):
    """Integral of each scalar basis function (tensor-Simpson nodal weights)."""
    g = system.geometry(rule)
    vals = np.einsum("cq,qi->ci", g["wdet"], g["phi"])
    w = np.zeros(system.n_velocity_nodes)
    np.add.at(w, system.velocity_dofmap.ravel(), vals.ravel())
    return w


def assemble_mass(system: FESystem, rho_f: float, rule: QuadratureRule = DEFAULT_RULE):
    """Consistent and lumped mass matrices over both velocity components."""
    Ms = rho_f * scalar_mass(system, rule)
    M_C = _blockdiag2(Ms)
    w = rho_f * lumped_nodal_weights(system, rule)
    M_L = sp.diags(np.concatenate([w, w]), format="csr")
    return M_C, M_L


def _convection_elem(system, u_lin, rule):
    g = system.geometry(rule)
    n = system.n_velocity_nodes
    dof = system.velocity_dofmap
    uq = np.stack(
        [
            np.einsum("qj,cj->cq", g["phi"], u_lin[:n][dof]),
            np.einsum("qj,cj->cq", g["phi"], u_lin[n:][dof]),
        ],
        axis=-1,
    )  # (m, nq, 2)
    udg = np.einsum("cqd,cqjd->cqj", uq, g["dphi"])  # u . grad phi_j
    return np.einsum("cq,qi,cqj->cij", g["wdet"], g["phi"], udg)


def assemble_convection(system: FESystem, u_lin, rho_f: float, rule=DEFAULT_RULE):
    """rho_f * integral (u_lin . grad phi_j) phi_i, block-diagonal over components."""
    Cs = rho_f * _accumulate(system, _convection_elem(system, u_lin, rule))
    return _blockdiag2(Cs)


def assemble_viscous(system: FESystem, viscous_factor: float, rule=DEFAULT_RULE):
    """viscous_factor * integral D(phi_j):D(phi_i) over vector basis functions."""
    g = system.geometry(rule)
    w = g["wdet"]
    d = g["dphi"]
    G = np.einsum("cq,cqid,cqjd->cij", w, d, d)
    H = {}
    for a in range(2):
        for b in range(2):
            # H_ab[i,j] = int d_a phi_j * d_b phi_i
            H[a, b] = np.einsum("cq,cqj,cqi->cij", w, d[..., a], d[..., b])
    half = 0.5 * viscous_factor
    Kxx = _accumulate(system, half * (G + H[0, 0]))
    Kyy = _accumulate(system, half * (G + H[1, 1]))
    Kxy = _accumulate(system, half * H[0, 1])
    Kyx = _accumulate(system, half * H[1, 0])
    return _block2(system, Kxx, Kxy, Kyx, Kyy)


def assemble_burgers(
    system: FESystem,
    u_lin,
    theta: float,
    dt: float,
    mu_f: float,
    rho_f: float,
    viscous_factor: float | None = None,
    rule=DEFAULT_RULE,
    M_C=None,
):
    """A = M_C/dt + theta * (convection(u_lin) + viscous)."""
    if not (0 < theta <= 1):
        raise ValueError("theta must be in (0, 1]")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if viscous_factor is None:
        viscous_factor = 2.0 * mu_f
    if M_C is None:
        M_C, _ = assemble_mass(system, rho_f, rule)
    A = M_C / dt
    if np.any(u_lin):
        A = A + theta * assemble_convection(system, u_lin, rho_f, rule)
    if viscous_factor != 0.0:
        A = A + theta * assemble_viscous(system, viscous_factor, rule)
    return A.tocsr()


def assemble_rhs(
    system: FESystem,
    u_old,
    theta: float,
    dt: float,
    mu_f: float,
    rho_f: float,
    viscous_factor: float | None = None,
    rule=DEFAULT_RULE,
    M_C=None,
):
    """f = (M_C/dt - (1-theta)*(convection(u_old) + viscous)) u_old."""
    if viscous_factor is None:
        viscous_factor = 2.0 * mu_f
    if M_C is None:
        M_C, _ = assemble_mass(system, rho_f, rule)
    f = (M_C / dt) @ u_old
    if theta < 1.0:
        op = assemble_viscous(system, viscous_factor, rule)
        if np.any(u_old):
            op = op + assemble_convection(system, u_old, rho_f, rule)
        f = f - (1.0 - theta) * (op @ u_old)
    return f


def assemble_divergence(system: FESystem, rule=DEFAULT_RULE):
    """B with b_ik = -integral psi_k div(phi_i); shape (2N, 3*n_cells)."""
    g = system.geometry(rule)
    xq = g["xq"]
    xc = system.pressure_centroids
    m, nq, _ = xq.shape
    psi = np.empty((m, nq, 3))
    psi[..., 0] = 1.0
    psi[..., 1] = xq[..., 0] - xc[:, None, 0]
    psi[..., 2] = xq[..., 1] - xc[:, None, 1]
    n = system.n_velocity_nodes
    vd = system.velocity_dofmap
    pd = system.pressure_dofmap
    rows, cols, data = [], [], []
    for a in range(2):
        elem = -np.einsum("cq,cqi,cqk->cik", g["wdet"], g["dphi"][..., a], psi)
        rows.append((a * n + np.repeat(vd, 3, axis=1)).ravel())
        cols.append(np.tile(pd, (1, 9)).ravel())
        data.append(elem.ravel())
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n, 3 * len(vd)),
    ).tocsr()


def apply_dirichlet_rows(A: sp.csr_matrix, rhs: np.ndarray, dofs, values):
    """Replace rows by identity and set rhs to the boundary values (copies)."""
    dofs = np.asarray(dofs, dtype=np.int64)
    A = A.tolil(copy=True)
    for d, v in zip(dofs, np.asarray(values, dtype=float)):
        A.rows[d] = [int(d)]
        A.data[d] = [1.0]
    rhs = rhs.copy()
    rhs[dofs] = values
    return A.tocsr(), rhs


# -- interior penalty ---------------------------------------------------------


def assemble_penalty(
    system: FESystem,
    particles,
    submesh_evals,
    gamma_max: float,
    quad_mode: str = "fixed",
    depth: int = 4,
    rule=DEFAULT_RULE,
):
    """Distributed interior penalty matrix D and data vector g.

    ``submesh_evals[k]`` is a callable points -> (values (n,2), found (n,)) that
    interpolates the submesh velocity of particle k, or None (then every
    atmosphere point falls back to the rigid velocity if inside the disk,
    otherwise it is dropped).

    Returns (D, g, n_dropped).
    """
    from .coupling import penalty_quadrature
    from .rigidbody import rigid_velocity

    if gamma_max < 0:
        raise ValueError("gamma_max must be nonnegative")
    n = system.n_velocity_nodes
    vd = system.velocity_dofmap
    rows, cols, data = [], [], []
    gvec = np.zeros(2 * n)
    dropped = 0
    if gamma_max == 0.0 or not particles:
        D = sp.csr_matrix((2 * n, 2 * n))
        return D, gvec, 0
    cellverts = system.mesh.vertices[system.mesh.cells]
    cmin = cellverts.min(axis=1)
    cmax = cellverts.max(axis=1)
    for k, p in enumerate(particles):
        c = np.asarray(p.center, dtype=float)
        reach = p.radius + p.atmosphere_width
        near = np.nonzero(
            (cmin[:, 0] <= c[0] + reach)
            & (cmax[:, 0] >= c[0] - reach)
            & (cmin[:, 1] <= c[1] + reach)
            & (cmax[:, 1] >= c[1] - reach)
        )[0]
        # phase 1: gather quadrature fragments so the submesh field can be
        # evaluated at every atmosphere point in one batched call
        frags = []
        for cell in near:
            pq = penalty_quadrature(system.mesh, int(cell), p, rule, quad_mode, depth)
            if pq is None or len(pq.weights) == 0:
                continue
            frags.append((int(cell), pq))
        if not frags:
            continue
        atm_pts = [pq.points[pq.region == 0] for _, pq in frags]
        n_atm = np.array([len(a) for a in atm_pts])
        if n_atm.sum():
            ev = submesh_evals[k] if submesh_evals else None
            allpts = np.concatenate([a for a in atm_pts if len(a)])
            if ev is None:
                all_v = np.zeros((len(allpts), 2))
                all_found = np.zeros(len(allpts), dtype=bool)
            else:
                all_v, all_found = ev(allpts)
        offs = np.concatenate([[0], np.cumsum(n_atm)])
        # phase 2: assemble per-cell contributions
        for fi, (cell, pq) in enumerate(frags):
            pts, wts, beta, region = pq.points, pq.weights, pq.beta, pq.region
            refs = pq.refs
            # data values: rigid velocity in the hole, submesh velocity in
            # the atmosphere (fallback handled below)
            vals = np.empty((len(pts), 2))
            keep = np.ones(len(pts), dtype=bool)
            hole = region == 1
            if np.any(hole):
                vals[hole] = rigid_velocity(p, pts[hole])
            atm = ~hole
            if np.any(atm):
                v = all_v[offs[fi] : offs[fi + 1]]
                found = all_found[offs[fi] : offs[fi + 1]]
                vals[atm] = v
                miss = np.nonzero(atm)[0][~found]
                for i in miss:
                    d = np.hypot(*(pts[i] - c))
                    if d <= p.radius:
                        vals[i] = rigid_velocity(p, pts[i][None])[0]
                    else:
                        keep[i] = False
                        dropped += 1
            w_eff = wts * np.where(hole, 1.0, beta) * gamma_max
            w_eff = np.where(keep, w_eff, 0.0)
            phi = shape_q2(refs)  # (np, 9)
            elem = np.einsum("p,pi,pj->ij", w_eff, phi, phi)
            dof = vd[cell]
            rows.append(np.repeat(dof, 9))
            cols.append(np.tile(dof, 9))
            data.append(elem.ravel())
            ge = np.einsum("p,pi,pd->id", w_eff, phi, vals)
            np.add.at(gvec, dof, ge[:, 0])
            np.add.at(gvec, n + dof, ge[:, 1])
    if rows:
        Ds = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
    else:
        Ds = sp.csr_matrix((n, n))
    return _blockdiag2(Ds), gvec, dropped


# -- boundary quadrature and Robin terms --------------------------------------


@dataclass
class BoundaryQuadrature:
    cells: np.ndarray  # (K,) cell of each point
    refs: np.ndarray  # (K, 2) reference coords
    points: np.ndarray  # (K, 2) physical coords
    normals: np.ndarray  # (K, 2) outward unit normals of the mesh domain
    wds: np.ndarray  # (K,) arc-length weights


# reference-square parametrizations of the four local edges, t in [-1, 1]
_EDGE_REF = (
    lambda t: np.column_stack([t, -np.ones_like(t)]),
    lambda t: np.column_stack([np.ones_like(t), t]),
    lambda t: np.column_stack([-t, np.ones_like(t)]),
    lambda t: np.column_stack([-np.ones_like(t), -t]),
)
_EDGE_DREF = (
    np.array([1.0, 0.0]),
    np.array([0.0, 1.0]),
    np.array([-1.0, 0.0]),
    np.array([0.0, -1.0]),
)


def boundary_quadrature(system: FESystem, tag: str, order: int = 5) -> BoundaryQuadrature:
    """Edge quadrature with outward normals for all boundary edges of one tag."""
    t1, w1 = gauss_rule_1d(order)
    cells, refs, pts, normals, wds = [], [], [], [], []
    for cell, le, t in system.mesh.boundary_edges:
        if t != tag:
            continue
        verts = system.mesh.vertices[system.mesh.cells[cell]]
        ref = _EDGE_REF[le](t1)
        dref = _EDGE_DREF[le]
        for q in range(len(t1)):
            q1, dq1 = _bilinear(ref[q])
            x = q1 @ verts
            jac = dq1.T @ verts  # d x / d xi, rows xi
            tang = jac.T @ dref  # dx/dt
            ds = np.hypot(tang[0], tang[1])
            nrm = np.array([tang[1], -tang[0]]) / ds
            cells.append(cell)
            refs.append(ref[q])
            pts.append(x)
            normals.append(nrm)
            wds.append(w1[q] * ds)
    return BoundaryQuadrature(
        np.array(cells, dtype=np.int64),
        np.array(refs),
        np.array(pts),
        np.array(normals),
        np.array(wds),
    )


def assemble_robin_surface(
    system: FESystem,
    bq: BoundaryQuadrature,
    robin_data,
    alpha: float,
    u_prev=None,
):
    """Weak boundary term on the submesh outer boundary.

    Returns (R, r): the linearized alpha-term matrix with entries
    alpha * surf_int (u_prev . n) phi_j . phi_i, and the data vector
    r_i = surf_int data . phi_i.  The caller subtracts R from the system
    matrix and adds r to the right-hand side.
    """
    robin_data = np.asarray(robin_data, dtype=float)
    if robin_data.shape != bq.points.shape:
        raise ValueError("robin data must be sampled at the boundary rule points")
    n = system.n_velocity_nodes
    r = np.zeros(2 * n)
    phi = shape_q2(bq.refs)  # (K, 9)
    dof = system.velocity_dofmap[bq.cells]  # (K, 9)
    rw = bq.wds[:, None] * phi  # (K, 9)
    np.add.at(r, dof, rw * robin_data[:, 0:1])
    np.add.at(r, n + dof, rw * robin_data[:, 1:2])
    if alpha == 0.0 or u_prev is None:
        R = sp.csr_matrix((2 * n, 2 * n))
        return R, r
    un = np.empty(len(bq.cells))
    for i, (cell, ref) in enumerate(zip(bq.cells, bq.refs)):
        u, _ = system.eval_velocity(u_prev, int(cell), ref)
        un[i] = u @ bq.normals[i]
    w = alpha * bq.wds * un
    elem = np.einsum("k,ki,kj->kij", w, phi, phi)
    rows = np.repeat(dof, 9, axis=1).ravel()
    cols = np.tile(dof, (1, 9)).ravel()
    Rs = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return _blockdiag2(Rs), r


def dump_matrix_market(A, path):
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(A))
    return path
