"""Discrete projection scheme (Burgers step, pressure Poisson, velocity
correction), sparse linear solvers, and the monolithic submesh saddle solve."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .assembly import DEFAULT_RULE, apply_dirichlet_rows
from .fespace import FESystem


class SolverError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = list(residuals) if residuals is not None else []


@dataclass
class FlowState:
    u: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def copy(self):
        return FlowState(self.u.copy(), self.p.copy(), self.t)


@dataclass
class SolverConfig:
    dt: float = 0.01
    theta: float = 1.0
    n_outer: int = 1
    gamma_max: float | None = None  # default 1e4 * rho_f / dt
    alpha: float = 0.0
    viscous_factor: float | None = None  # default 2 * mu_f
    burgers_tol: float = 1e-7
    burgers_max_iter: int = 25
    linear_tol: float = 1e-10
    linear_max_iter: int = 5000
    poisson_tol: float = 1e-10
    linearization: str = "fixed_point"  # or "about_old"
    method: str = "bicgstab"  # Burgers linear solver: bicgstab | direct
    quad_mode: str = "fixed"  # penalty quadrature: fixed | adaptive
    quad_depth: int = 4
    picard_tol: float = 1e-9
    picard_max_iter: int = 30

    def __post_init__(self):
        if not (0 < self.theta <= 1):
            raise ValueError("theta must be in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_outer < 1:
            raise ValueError("need at least one outer iteration")
        for name in ("burgers_tol", "linear_tol", "poisson_tol", "picard_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def effective_gamma(self, rho_f):
        if self.gamma_max is not None:
            return self.gamma_max
        return 1e4 * rho_f / self.dt


def solve_sparse(A, b, method="direct", tol=1e-10, max_it=5000):
    """Solve A x = b; guarantees ||Ax - b|| <= tol * ||b|| or raises."""
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("shape mismatch")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        x = spla.splu(sp.csc_matrix(A)).solve(b)
    elif method == "bicgstab":
        try:
            ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=10)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError:
            M = None
        x, info = spla.bicgstab(A, b, rtol=tol * 1e-2, atol=0.0, maxiter=max_it, M=M)
        if info != 0:
            raise SolverError(f"bicgstab failed (info={info})", [np.linalg.norm(A @ x - b) / nb])
    elif method == "cg":
        x, info = spla.cg(A, b, rtol=tol * 1e-2, atol=0.0, maxiter=max_it)
        if info != 0:
            raise SolverError(f"cg failed (info={info})", [np.linalg.norm(A @ x - b) / nb])
    else:
        raise ValueError(f"unknown method {method!r}")
    res = np.linalg.norm(A @ x - b) / nb
    if res > tol:
        raise SolverError(f"linear residual {res:.3e} above tol {tol:.3e}", [res])
    return x


@dataclass
class ProjectionContext:
    """Assembled pieces of one background mesh that stay fixed over a step."""

    system: FESystem
    M_C: sp.csr_matrix
    M_L_diag: np.ndarray
    B: sp.csr_matrix
    K_visc: sp.csr_matrix | None
    rho_f: float
    mu_f: float
    rule: object = DEFAULT_RULE
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    D: sp.csr_matrix | None = None
    g: np.ndarray | None = None
    mask_correction: np.ndarray | None = None  # dofs kept at their Burgers value
    pin_pressure: bool = False
    convect: bool = True


def build_projection_context(system, rho_f, mu_f, viscous_factor=None, rule=DEFAULT_RULE):
    M_C, M_L = assembly.assemble_mass(system, rho_f, rule)
    B = assembly.assemble_divergence(system, rule)
    vf = 2.0 * mu_f if viscous_factor is None else viscous_factor
    K = assembly.assemble_viscous(system, vf, rule) if vf != 0.0 else None
    return ProjectionContext(
        system=system,
        M_C=M_C,
        M_L_diag=M_L.diagonal().copy(),
        B=B,
        K_visc=K,
        rho_f=rho_f,
        mu_f=mu_f,
        rule=rule,
    )


def burgers_step(ctx: ProjectionContext, p_current, u_old, cfg: SolverConfig, u_init=None):
    """Solve [A(u) + D] u = f + g - B p by fixed-point iteration.

    Returns (u_tilde, f, residual history)."""
    if cfg.theta == 1.0:
        f = (ctx.M_C / cfg.dt) @ u_old
    else:
        f = (ctx.M_C / cfg.dt) @ u_old
        op_u = np.zeros_like(u_old)
        if ctx.K_visc is not None:
            op_u = op_u + ctx.K_visc @ u_old
        if ctx.convect and np.any(u_old):
            op_u = op_u + assembly.assemble_convection(
                ctx.system, u_old, ctx.rho_f, ctx.rule
            ) @ u_old
        f = f - (1.0 - cfg.theta) * op_u
    return burgers_step_given_rhs(ctx, p_current, u_old, f, cfg, u_init), f


def burgers_step_given_rhs(ctx, p_current, u_old, f, cfg, u_init=None):
    rhs_base = f.copy()
    if ctx.g is not None:
        rhs_base = rhs_base + ctx.g
    rhs_base = rhs_base - ctx.B @ p_current
    u_k = u_old.copy() if u_init is None else u_init.copy()
    max_iter = 1 if cfg.linearization == "about_old" else cfg.burgers_max_iter
    history = []
    for it in range(max_iter):
        A = ctx.M_C / cfg.dt
        if ctx.convect and np.any(u_k):
            A = A + cfg.theta * assembly.assemble_convection(
                ctx.system, u_k, ctx.rho_f, ctx.rule
            )
        if ctx.K_visc is not None:
            A = A + cfg.theta * ctx.K_visc
        if ctx.D is not None:
            A = A + ctx.D
        A, rhs = apply_dirichlet_rows(
            A.tocsr(), rhs_base, ctx.dirichlet_dofs, ctx.dirichlet_values
        )
        u_new = solve_sparse(A, rhs, cfg.method, cfg.linear_tol, cfg.linear_max_iter)
        scale = np.linalg.norm(u_new)
        change = np.linalg.norm(u_new - u_k) / (scale if scale > 0 else 1.0)
        history.append(change)
        u_k = u_new
        if not ctx.convect or cfg.linearization == "about_old" or change < cfg.burgers_tol:
            return u_k
    raise SolverError(
        f"Burgers fixed point did not converge in {max_iter} iterations", history
    )


def pressure_poisson_step(B, mL_diag, u_tilde, dt, tol=1e-10, max_it=5000):
    """Solve B^T M_L^-1 B q = (1/dt) B^T u_tilde by matrix-free CG."""
    if np.any(mL_diag <= 0):
        raise ValueError("lumped mass must be positive")
    inv_m = 1.0 / mL_diag
    rhs = (1.0 / dt) * (B.T @ u_tilde)
    nb = np.linalg.norm(rhs)
    if nb == 0.0:
        return np.zeros(B.shape[1])
    K = spla.LinearOperator(
        (B.shape[1], B.shape[1]), matvec=lambda q: B.T @ (inv_m * (B @ q))
    )
    # Jacobi preconditioner: diag(K)_k = sum_i B_ik^2 / m_i
    dK = np.asarray(B.power(2).T @ inv_m).ravel()
    dK[dK <= 0] = dK[dK > 0].min() if np.any(dK > 0) else 1.0
    M = spla.LinearOperator(K.shape, lambda q: q / dK)
    q, info = spla.cg(K, rhs, rtol=tol * 1e-2, atol=0.0, maxiter=max_it, M=M)
    res = np.linalg.norm(B.T @ (inv_m * (B @ q)) - rhs) / nb
    if info != 0 and res > tol:
        raise SolverError(f"pressure CG stagnated (info={info}, res={res:.3e})", [res])
    if res > tol:
        raise SolverError(f"pressure residual {res:.3e} above tol", [res])
    return q


def velocity_correction(mL_diag, D, u_tilde, B, q, dt, tol=1e-10, mask=None):
    """Solve [M_L + dt D] u = [M_L + dt D] u_tilde - dt B q."""
    bq = B @ q
    if D is None or (D.nnz == 0 if sp.issparse(D) else not np.any(D)):
        u = u_tilde - dt * bq / mL_diag
    else:
        # direct solve: the correction residual enters the divergence
        # identity directly, so it must sit well below the outer tolerances
        A = sp.diags(mL_diag) + dt * D
        rhs = A @ u_tilde - dt * bq
        u = solve_sparse(A.tocsr(), rhs, "direct", max(tol, 1e-9))
    if mask is not None and len(mask):
        u[mask] = u_tilde[mask]
    return u


def remark_residual(ctx: ProjectionContext, u_tilde, u_new, dt):
    """Both sides of the divergence-residual identity of the corrected
    velocity: B^T u = dt B^T M_L^-1 D (u_tilde - u)."""
    lhs = ctx.B.T @ u_new
    if ctx.D is None:
        rhs = np.zeros_like(lhs)
    else:
        rhs = dt * (ctx.B.T @ ((ctx.D @ (u_tilde - u_new)) / ctx.M_L_diag))
    return lhs, rhs


def projection_solve(ctx: ProjectionContext, state: FlowState, cfg: SolverConfig):
    """One time step of the fractional-step scheme with outer iterations.

    Returns (new_state, diagnostics)."""
    p = state.p.copy()
    u_prev_pass = None
    div_norms = []
    u_tilde = None
    u_new = None
    f = None
    for outer in range(cfg.n_outer):
        if f is None:
            u_tilde, f = burgers_step(ctx, p, state.u, cfg, u_init=u_prev_pass)
        else:
            u_tilde = burgers_step_given_rhs(ctx, p, state.u, f, cfg, u_init=u_prev_pass)
        q = pressure_poisson_step(
            ctx.B, ctx.M_L_diag, u_tilde, cfg.dt, cfg.poisson_tol, cfg.linear_max_iter
        )
        u_new = velocity_correction(
            ctx.M_L_diag,
            ctx.D,
            u_tilde,
            ctx.B,
            q,
            cfg.dt,
            cfg.linear_tol,
            mask=ctx.mask_correction,
        )
        p = p + q
        div_norms.append(float(np.linalg.norm(ctx.B.T @ u_new)))
        u_prev_pass = u_new
    if ctx.pin_pressure:
        # fix the pressure level via the volume-weighted mean of the
        # cell-constant modes (harmless: only boundary momentum rows see it)
        areas = ctx.system.mesh.cell_areas()
        const = p[0::3]
        p = p.copy()
        p[0::3] = const - np.sum(const * areas) / np.sum(areas)
    lhs, rhs = remark_residual(ctx, u_tilde, u_new, cfg.dt)
    diag = {
        "div_norms": div_norms,
        "remark_lhs": float(np.linalg.norm(lhs)),
        "remark_rhs": float(np.linalg.norm(rhs)),
        "remark_gap": float(np.linalg.norm(lhs - rhs)),
        "div_utilde": float(np.linalg.norm(ctx.B.T @ u_tilde)),
    }
    return FlowState(u_new, p, state.t + cfg.dt), diag


# -- submesh saddle-point solve ----------------------------------------------


def submesh_saddle_solve(
    sub_system: FESystem,
    u_old,
    particle,
    robin_bq,
    robin_data,
    cfg: SolverConfig,
    rho_f,
    mu_f,
    rule=DEFAULT_RULE,
    sub_ctx=None,
):
    """Monolithic solve of one ALE submesh problem for a single time step.

    Backward Euler in the frame moving with the particle (mesh velocity
    w = U_k); Picard iteration on convection and the Robin alpha-term;
    Dirichlet rigid-velocity data on the disk surface; sparse direct
    factorization.

    Returns (u_hat, p_hat).
    """
    from .mesh import TAG_PARTICLE
    from .rigidbody import rigid_velocity

    n = sub_system.n_velocity_nodes
    if sub_ctx is None:
        sub_ctx = build_projection_context(sub_system, rho_f, mu_f, rule=rule)
    M_C, B, K = sub_ctx.M_C, sub_ctx.B, sub_ctx.K_visc
    npr = B.shape[1]
    inner = sub_system.boundary_nodes(TAG_PARTICLE)
    uvals = rigid_velocity(particle, sub_system.node_coords[inner])
    dir_dofs = np.concatenate([inner, n + inner])
    dir_vals = np.concatenate([uvals[:, 0], uvals[:, 1]])

    _, r_data = assembly.assemble_robin_surface(sub_system, robin_bq, robin_data, 0.0)
    base_rhs_u = (M_C / cfg.dt) @ u_old + r_data

    w = np.concatenate(
        [np.full(n, particle.velocity[0]), np.full(n, particle.velocity[1])]
    )
    u_k = u_old.copy()
    dt = cfg.dt
    relax = 1.0
    prev_change = None
    for it in range(cfg.picard_max_iter):
        Au = M_C / dt
        if K is not None:
            Au = Au + K
        adv = u_k - w
        if np.any(adv):
            Au = Au + assembly.assemble_convection(sub_system, adv, rho_f, rule)
        if cfg.alpha != 0.0:
            R, _ = assembly.assemble_robin_surface(
                sub_system, robin_bq, np.zeros_like(robin_data), cfg.alpha, u_prev=u_k
            )
            Au = Au - R
        Afull = sp.bmat([[Au, B], [B.T, None]], format="lil")
        rhs = np.concatenate([base_rhs_u, np.zeros(npr)])
        for d, v in zip(dir_dofs, dir_vals):
            Afull.rows[d] = [int(d)]
            Afull.data[d] = [1.0]
            rhs[d] = v
        try:
            sol = spla.splu(sp.csc_matrix(Afull)).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"submesh factorization failed: {exc}")
        u_new = sol[: 2 * n]
        scale = np.linalg.norm(u_new)
        change = np.linalg.norm(u_new - u_k) / (scale if scale > 0 else 1.0)
        if prev_change is not None and change > prev_change:
            # damp a diverging iteration (strong convection on coarse annuli)
            relax = max(0.5 * relax, 0.1)
        u_k = u_k + relax * (u_new - u_k)
        prev_change = change
        if change < cfg.picard_tol:
            return u_k, sol[2 * n :]
    if change < 1e-4:
        # accept a mildly unconverged Picard state: nonlinearity is weak
        return u_k, sol[2 * n :]
    raise SolverError("submesh Picard iteration did not converge")
