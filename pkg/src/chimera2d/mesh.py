"""Quadrilateral meshes: background grids, annular submeshes, body-fitted
channel meshes, point location, and VTK export.

All meshes are treated as immutable after construction; operations that
"move" a mesh return a new object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# local edge e connects local vertices e and (e+1)%4 (counterclockwise)
EDGE_VERTS = ((0, 1), (1, 2), (2, 3), (3, 0))

TAG_INLET = "inlet"
TAG_OUTLET = "outlet"
TAG_WALL = "wall"
TAG_PARTICLE = "particle-surface"
TAG_SUBMESH_OUTER = "submesh-outer"


class MeshError(ValueError):
    pass


class LocationFailure(RuntimeError):
    """Newton iteration for the inverse isoparametric map did not converge."""


@dataclass
class AnnulusSpec:
    inner_radius: float
    outer_radius: float
    n_theta: int
    n_rings: int
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.inner_radius <= 0.0:
            raise MeshError("inner radius must be positive")
        if self.outer_radius <= self.inner_radius:
            raise MeshError("outer radius must exceed inner radius")
        if self.n_theta < 8:
            raise MeshError("need at least 8 sectors")
        if self.n_rings < 2:
            raise MeshError("need at least 2 radial layers")

    @property
    def width(self) -> float:
        return self.outer_radius - self.inner_radius


class QuadMesh:
    """Conforming quadrilateral mesh with tagged boundary edges and a uniform
    bin grid for point location."""

    def __init__(self, vertices, cells, boundary_edges, check=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.boundary_edges = list(boundary_edges)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (n, 2)")
        if self.cells.ndim != 2 or self.cells.shape[1] != 4:
            raise MeshError("cells must be (m, 4)")
        if check:
            self._check_orientation()
        self._build_search_index()
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    # -- basic queries ----------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_coords(self, cell=None):
        """Corner coordinates, shape (4, 2) for one cell or (m, 4, 2)."""
        if cell is None:
            return self.vertices[self.cells]
        return self.vertices[self.cells[cell]]

    def cell_areas(self) -> np.ndarray:
        x = self.vertices[self.cells]  # (m,4,2)
        # shoelace formula for each quad
        x0, x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]

        def cross(a, b):
            return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]

        return 0.5 * (cross(x0, x1) + cross(x1, x2) + cross(x2, x3) + cross(x3, x0))

    def cell_centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.hypot(*(hi - lo)))

    # -- construction helpers ---------------------------------------------

    def _check_orientation(self):
        x = self.vertices[self.cells]
        for c in range(4):
            # Jacobian determinant of the bilinear map at corner c
            a, b = EDGE_VERTS[c]
            prev = (c - 1) % 4
            e1 = x[:, b] - x[:, c]
            e2 = x[:, prev] - x[:, c]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            bad = np.nonzero(det <= 0)[0]
            if len(bad):
                raise MeshError(f"inverted cell(s) at corner {c}: {bad[:5].tolist()}")

    def _build_search_index(self):
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        ext = hi - lo
        x = self.vertices[self.cells]
        diams = np.linalg.norm(x.max(axis=1) - x.min(axis=1), axis=1)
        bin_size = 2.0 * float(np.median(diams))
        if bin_size <= 0:
            bin_size = max(ext.max(), 1.0)
        nbx = max(1, int(math.ceil(ext[0] / bin_size))) if ext[0] > 0 else 1
        nby = max(1, int(math.ceil(ext[1] / bin_size))) if ext[1] > 0 else 1
        self._bin_origin = lo
        self._bin_size = np.array(
            [ext[0] / nbx if ext[0] > 0 else 1.0, ext[1] / nby if ext[1] > 0 else 1.0]
        )
        self._bin_shape = (nbx, nby)
        bins = [[] for _ in range(nbx * nby)]
        cmin = (x.min(axis=1) - lo) / self._bin_size
        cmax = (x.max(axis=1) - lo) / self._bin_size
        i0 = np.clip(np.floor(cmin[:, 0]).astype(int), 0, nbx - 1)
        i1 = np.clip(np.floor(cmax[:, 0] - 1e-12).astype(int), 0, nbx - 1)
        j0 = np.clip(np.floor(cmin[:, 1]).astype(int), 0, nby - 1)
        j1 = np.clip(np.floor(cmax[:, 1] - 1e-12).astype(int), 0, nby - 1)
        for c in range(len(self.cells)):
            for i in range(i0[c], i1[c] + 1):
                for j in range(j0[c], j1[c] + 1):
                    bins[i * nby + j].append(c)
        self._bins = [np.array(sorted(b), dtype=np.int64) for b in bins]

    # -- point location ----------------------------------------------------

    def candidate_cells(self, x) -> np.ndarray:
        lo = self._bin_origin
        nbx, nby = self._bin_shape
        i = int(math.floor((x[0] - lo[0]) / self._bin_size[0]))
        j = int(math.floor((x[1] - lo[1]) / self._bin_size[1]))
        if i < 0 or i >= nbx or j < 0 or j >= nby:
            # allow boundary grazing
            i = min(max(i, 0), nbx - 1)
            j = min(max(j, 0), nby - 1)
        return self._bins[i * nby + j]

    def locate_point(self, x, contain_tol=1e-8):
        """Return (cell id, reference coords in [-1,1]^2) or None.

        Points on shared edges resolve to the lowest cell id.
        """
        x = np.asarray(x, dtype=float)
        lo, hi = self.bbox
        pad = contain_tol * self.diameter + 1e-14
        if np.any(x < lo - pad) or np.any(x > hi + pad):
            return None
        tol = 1e-10 * self.diameter
        for c in self.candidate_cells(x):
            ref = self._inverse_map(int(c), x, tol)
            if ref is not None and np.max(np.abs(ref)) <= 1.0 + contain_tol:
                return int(c), ref
        return None

    def _inverse_map(self, cell, x, tol, max_iter=50):
        xc = self.vertices[self.cells[cell]]
        ref = np.zeros(2)
        for _ in range(max_iter):
            phi, dphi = _bilinear(ref)
            r = phi @ xc - x
            if np.hypot(r[0], r[1]) <= tol:
                return ref
            jac = dphi.T @ xc  # d x / d xi, (2,2) transposed below
            det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
            if abs(det) < 1e-300:
                raise LocationFailure(f"singular Jacobian in cell {cell}")
            step = np.array(
                [jac[1, 1] * r[0] - jac[1, 0] * r[1], -jac[0, 1] * r[0] + jac[0, 0] * r[1]]
            ) / det
            # damp large steps to stay near the cell
            n = np.max(np.abs(step))
            if n > 1.0:
                step *= 1.0 / n
            ref = ref - step
            if np.max(np.abs(ref)) > 3.0:
                return None  # diverging: point is far outside this cell
        phi, _ = _bilinear(ref)
        if np.hypot(*(phi @ xc - x)) <= tol:
            return ref
        if np.max(np.abs(ref)) <= 1.5:
            raise LocationFailure(f"inverse map stalled in cell {cell}")
        return None

    def locate_points(self, points, contain_tol=1e-8):
        """Batched :meth:`locate_point`.

        Returns (cells (n,) int64 with -1 for unlocated points, refs (n, 2)).
        Resolution order matches the scalar version: the lowest containing
        cell id among the bin candidates wins.
        """
        points = np.ascontiguousarray(points, dtype=float)
        npts = len(points)
        cells_out = np.full(npts, -1, dtype=np.int64)
        refs_out = np.zeros((npts, 2))
        if npts == 0:
            return cells_out, refs_out
        lo, hi = self.bbox
        pad = contain_tol * self.diameter + 1e-14
        inb = np.all(points >= lo - pad, axis=1) & np.all(points <= hi + pad, axis=1)
        nbx, nby = self._bin_shape
        bi = np.clip(
            np.floor((points[:, 0] - self._bin_origin[0]) / self._bin_size[0]).astype(int),
            0,
            nbx - 1,
        )
        bj = np.clip(
            np.floor((points[:, 1] - self._bin_origin[1]) / self._bin_size[1]).astype(int),
            0,
            nby - 1,
        )
        cand = [self._bins[bi[k] * nby + bj[k]] if inb[k] else () for k in range(npts)]
        tol = 1e-10 * self.diameter
        pending = np.nonzero([len(c) > 0 for c in cand])[0]
        rnd = 0
        while len(pending):
            active = pending[[len(cand[k]) > rnd for k in pending]]
            if len(active) == 0:
                break
            cc = np.array([cand[k][rnd] for k in active], dtype=np.int64)
            ref, ok = self._inverse_map_many(cc, points[active], tol)
            hit = ok & (np.max(np.abs(ref), axis=1) <= 1.0 + contain_tol)
            cells_out[active[hit]] = cc[hit]
            refs_out[active[hit]] = ref[hit]
            pending = active[~hit]
            rnd += 1
        return cells_out, refs_out

    def _inverse_map_many(self, cells, xs, tol, max_iter=50):
        """Vectorized inverse isoparametric map; returns (refs, converged)."""
        verts = self.vertices[self.cells[cells]]  # (k,4,2)
        k = len(cells)
        ref = np.zeros((k, 2))
        live = np.ones(k, dtype=bool)
        done = np.zeros(k, dtype=bool)
        for _ in range(max_iter):
            if not live.any():
                break
            phi, dphi = _bilinear_many(ref[live])
            v = verts[live]
            r = np.einsum("kj,kjd->kd", phi, v) - xs[live]
            resid = np.hypot(r[:, 0], r[:, 1])
            conv = resid <= tol
            jac = np.einsum("kja,kjd->kad", dphi, v)  # matches dphi.T @ verts
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            if np.any(np.abs(det[~conv]) < 1e-300):
                bad = np.nonzero(live)[0][~conv][np.abs(det[~conv]) < 1e-300][0]
                raise LocationFailure(f"singular Jacobian in cell {cells[bad]}")
            det = np.where(det == 0.0, 1.0, det)
            step = np.empty_like(r)
            step[:, 0] = (jac[:, 1, 1] * r[:, 0] - jac[:, 1, 0] * r[:, 1]) / det
            step[:, 1] = (-jac[:, 0, 1] * r[:, 0] + jac[:, 0, 0] * r[:, 1]) / det
            n = np.max(np.abs(step), axis=1)
            big = n > 1.0
            step[big] /= n[big, None]
            newref = ref[live] - step
            newref[conv] = ref[live][conv]
            ref[live] = newref
            idx = np.nonzero(live)[0]
            done[idx[conv]] = True
            diverged = np.max(np.abs(newref), axis=1) > 3.0
            live[idx[conv | diverged]] = False
        if live.any():
            # stalled iterations: accept if the residual closed anyway
            phi, _ = _bilinear_many(ref[live])
            r = np.einsum("kj,kjd->kd", phi, verts[live]) - xs[live]
            ok = np.hypot(r[:, 0], r[:, 1]) <= tol
            stall = ~ok & (np.max(np.abs(ref[live]), axis=1) <= 1.5)
            if stall.any():
                bad = np.nonzero(live)[0][stall][0]
                raise LocationFailure(f"inverse map stalled in cell {cells[bad]}")
            done[np.nonzero(live)[0][ok]] = True
        return ref, done

    def forward_map(self, cell, ref):
        phi, _ = _bilinear(np.asarray(ref, dtype=float))
        return phi @ self.vertices[self.cells[cell]]

    # -- transformation ----------------------------------------------------

    def translated(self, displacement) -> "QuadMesh":
        d = np.asarray(displacement, dtype=float)
        return QuadMesh(self.vertices + d, self.cells, self.boundary_edges, check=False)

    # -- export ------------------------------------------------------------

    def export_vtk(self, path, point_data=None, cell_data=None):
        """Write legacy VTK (DataFile Version 3.0) unstructured grid."""
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write("chimera2d mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {self.n_vertices} double\n")
            for v in self.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} 0\n")
            fh.write(f"CELLS {self.n_cells} {5 * self.n_cells}\n")
            for c in self.cells:
                fh.write(f"4 {c[0]} {c[1]} {c[2]} {c[3]}\n")
            fh.write(f"CELL_TYPES {self.n_cells}\n")
            fh.write("9\n" * self.n_cells)
            if point_data:
                fh.write(f"POINT_DATA {self.n_vertices}\n")
                for name, arr in point_data.items():
                    arr = np.asarray(arr)
                    if arr.ndim == 2:
                        fh.write(f"VECTORS {name} double\n")
                        for row in arr:
                            fh.write(f"{row[0]:.17g} {row[1]:.17g} 0\n")
                    else:
                        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                        for v in arr:
                            fh.write(f"{v:.17g}\n")
            if cell_data:
                fh.write(f"CELL_DATA {self.n_cells}\n")
                for name, arr in cell_data.items():
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in np.asarray(arr):
                        fh.write(f"{v:.17g}\n")
        return path


def _bilinear_many(refs):
    """Q1 shape functions and derivatives at many reference points.

    refs (k, 2) -> phi (k, 4), dphi (k, 4, 2).
    """
    xi = refs[:, 0]
    eta = refs[:, 1]
    phi = 0.25 * np.stack(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ],
        axis=1,
    )
    dphi = np.empty(refs.shape[:1] + (4, 2))
    dphi[:, 0, 0] = -(1 - eta)
    dphi[:, 0, 1] = -(1 - xi)
    dphi[:, 1, 0] = 1 - eta
    dphi[:, 1, 1] = -(1 + xi)
    dphi[:, 2, 0] = 1 + eta
    dphi[:, 2, 1] = 1 + xi
    dphi[:, 3, 0] = -(1 + eta)
    dphi[:, 3, 1] = 1 - xi
    dphi *= 0.25
    return phi, dphi


def _bilinear(ref):
    """Q1 shape functions and derivatives at one reference point."""
    xi, eta = ref
    phi = 0.25 * np.array(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ]
    )
    dphi = 0.25 * np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -(1 + xi)],
            [(1 + eta), (1 + xi)],
            [-(1 + eta), (1 - xi)],
        ]
    )
    return phi, dphi


def build_background_mesh(domain, base_nx, base_ny, level=1, tags=None) -> QuadMesh:
    """Uniform grid on an axis-aligned rectangle.

    ``domain`` is (x0, y0, x1, y1).  Level ``l`` refines the base grid by a
    factor 2**(l-1) in each direction.  Boundary tags default to
    inlet (left), outlet (right), wall (top and bottom).
    """
    x0, y0, x1, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate domain")
    if base_nx < 1 or base_ny < 1:
        raise MeshError("base grid must have at least one cell per direction")
    if level < 1:
        raise MeshError("level must be >= 1")
    if tags is None:
        tags = {"left": TAG_INLET, "right": TAG_OUTLET, "bottom": TAG_WALL, "top": TAG_WALL}
    nx = base_nx * 2 ** (level - 1)
    ny = base_ny * 2 ** (level - 1)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = np.empty((nx * ny, 4), dtype=np.int64)
    k = 0
    for i in range(nx):
        for j in range(ny):
            cells[k] = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            k += 1

    def cid(i, j):
        return i * ny + j

    boundary = []
    for j in range(ny):
        boundary.append((cid(0, j), 3, tags["left"]))
        boundary.append((cid(nx - 1, j), 1, tags["right"]))
    for i in range(nx):
        boundary.append((cid(i, 0), 0, tags["bottom"]))
        boundary.append((cid(i, ny - 1), 2, tags["top"]))
    return QuadMesh(vertices, cells, boundary, check=False)


def build_annular_submesh(spec: AnnulusSpec) -> QuadMesh:
    """Body-fitted annulus of n_theta x n_rings quads around a disk.

    Inner boundary tagged particle-surface, outer tagged submesh-outer;
    uniform radial spacing.
    """
    nt, nr = spec.n_theta, spec.n_rings
    radii = np.linspace(spec.inner_radius, spec.outer_radius, nr + 1)
    theta = 2 * np.pi * np.arange(nt) / nt
    cx, cy = spec.center
    verts = np.empty(((nr + 1) * nt, 2))
    for i, r in enumerate(radii):
        verts[i * nt : (i + 1) * nt, 0] = cx + r * np.cos(theta)
        verts[i * nt : (i + 1) * nt, 1] = cy + r * np.sin(theta)

    def vid(i, j):  # ring i, sector j
        return i * nt + j % nt

    cells = np.empty((nr * nt, 4), dtype=np.int64)
    k = 0
    for i in range(nr):
        for j in range(nt):
            # CCW: inner_j, outer_j, outer_j+1, inner_j+1
            cells[k] = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            k += 1
    boundary = []
    for j in range(nt):
        boundary.append((j, 3, TAG_PARTICLE))  # local edge 3 lies on the inner circle
        boundary.append(((nr - 1) * nt + j, 1, TAG_SUBMESH_OUTER))
    return QuadMesh(verts, cells, boundary, check=False)


def build_cylinder_channel_mesh(
    domain, center, radius, h, level=1, n_rings=None, tags=None
) -> QuadMesh:
    """Conforming channel mesh with a circular hole (O-grid around the disk).

    A square block of cells around ``center`` is replaced by a ring of cells
    fitted to the circle of the given ``radius``; the disk boundary is tagged
    particle-surface.  ``h`` is the target base grid spacing (halved per
    refinement level).  Grid lines inside the block are exactly ``h`` apart;
    the segments between the block and the domain boundary are uniform with
    a spacing as close to ``h`` as the extents allow.
    """
    x0, y0, x1, y1 = map(float, domain)
    h = h / 2 ** (level - 1)
    cx, cy = map(float, center)
    q = max(2, int(math.ceil(radius / h)) + 1)  # square block half-width in cells
    w = q * h
    if radius >= w:
        raise MeshError("circle does not fit in the O-grid block")
    for lo, c, hi in ((x0, cx, x1), (y0, cy, y1)):
        if c - w - lo < 0.5 * h or hi - (c + w) < 0.5 * h:
            raise MeshError("O-grid block too close to the domain boundary")
    if n_rings is None:
        n_rings = max(2, q)
    if tags is None:
        tags = {"left": TAG_INLET, "right": TAG_OUTLET, "bottom": TAG_WALL, "top": TAG_WALL}

    def axis_lines(lo, c, hi):
        """Grid lines along one axis: graded outside the block, h inside."""
        n_lo = max(1, int(round((c - w - lo) / h)))
        n_hi = max(1, int(round((hi - (c + w)) / h)))
        return np.concatenate(
            [
                np.linspace(lo, c - w, n_lo + 1)[:-1],
                c - w + h * np.arange(2 * q + 1),
                np.linspace(c + w, hi, n_hi + 1)[1:],
            ]
        ), n_lo + q

    xs, ic = axis_lines(x0, cx, x1)
    ys, jc = axis_lines(y0, cy, y1)
    nx = len(xs) - 1
    ny = len(ys) - 1

    def vid(i, j):
        return i * (ny + 1) + j

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = list(np.column_stack([X.ravel(), Y.ravel()]))

    removed = set()
    for i in range(ic - q, ic + q):
        for j in range(jc - q, jc + q):
            removed.add((i, j))

    cells = []
    cell_of = {}
    for i in range(nx):
        for j in range(ny):
            if (i, j) in removed:
                continue
            cell_of[(i, j)] = len(cells)
            cells.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))

    # square-block perimeter vertex ids, counterclockwise from (ic-q, jc-q)
    per = []
    for i in range(ic - q, ic + q):
        per.append(vid(i, jc - q))
    for j in range(jc - q, jc + q):
        per.append(vid(ic + q, j))
    for i in range(ic + q, ic - q, -1):
        per.append(vid(i, jc + q))
    for j in range(jc + q, jc - q, -1):
        per.append(vid(ic - q, j))
    np_per = len(per)

    # ring vertices: n_rings layers between circle and square perimeter
    V = np.array(vertices)
    ctr = np.array([cx, cy])
    ring_ids = np.empty((n_rings + 1, np_per), dtype=np.int64)
    ring_ids[n_rings] = per  # outermost layer = square perimeter
    for t in range(n_rings):
        frac = t / n_rings
        for s, pv in enumerate(per):
            pvec = V[pv] - ctr
            dist = np.hypot(*pvec)
            unit = pvec / dist
            pos = ctr + unit * (radius + (dist - radius) * frac)
            ring_ids[t, s] = len(vertices)
            vertices.append(pos)
    verts = np.array(vertices)

    ring_cells_start = len(cells)
    for t in range(n_rings):
        for s in range(np_per):
            s1 = (s + 1) % np_per
            cells.append(
                (ring_ids[t, s], ring_ids[t + 1, s], ring_ids[t + 1, s1], ring_ids[t, s1])
            )

    boundary = []
    for j in range(ny):
        boundary.append((cell_of[(0, j)], 3, tags["left"]))
        boundary.append((cell_of[(nx - 1, j)], 1, tags["right"]))
    for i in range(nx):
        boundary.append((cell_of[(i, 0)], 0, tags["bottom"]))
        boundary.append((cell_of[(i, ny - 1)], 2, tags["top"]))
    # disk surface: local edge 3 of the innermost ring cells
    for s in range(np_per):
        boundary.append((ring_cells_start + s, 3, TAG_PARTICLE))
    cells = np.array(cells, dtype=np.int64)
    # drop the vertices orphaned by carving out the block
    used = np.zeros(len(verts), dtype=bool)
    used[cells.ravel()] = True
    renum = np.cumsum(used) - 1
    return QuadMesh(verts[used], renum[cells], boundary)


def translate_mesh(mesh: QuadMesh, displacement) -> QuadMesh:
    return mesh.translated(displacement)


def locate_point(mesh: QuadMesh, x):
    return mesh.locate_point(x)
