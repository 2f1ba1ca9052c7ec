"""Finite element spaces for the space-time slabs.

Space: continuous Lagrange elements of degree p on the background mesh,
restricted to the active elements of a slab. Time: monomials in the
normalized slab coordinate s = (t - t_{n-1}) / k_n up to degree q, with no
continuity across slabs. A slab unknown is indexed by (spatial dof i,
time mode j) with column j * n_spatial + i.

The active element set of a slab is the union of the elements cut at any
time quadrature point, closed under the sweep rule: any element with a
vertex whose level-set sign (or in/out state) flips between consecutive
quadrature times joins as well, so the active mesh covers the swept
region even when the interface skips elements between quadrature times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .geometry import classify_elements, points_inside_polyline, NEGATIVE_SIDE, CUT
from .mesh import internal_faces

__all__ = [
    "SpatialBasis",
    "TimeBasis",
    "GlobalSpace",
    "SlabSpace",
    "build_active_surface_mesh",
    "build_active_bulk_mesh",
    "evaluate_spacetime",
]


@lru_cache(maxsize=8)
def _basis_data(p):
    """Reference nodes (canonical order) and monomial coefficient matrix."""
    # Vertices, then edge nodes on (0,1), (1,2), (2,0), then interior.
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [verts[0], verts[1], verts[2]]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for s in range(1, p):
            nodes.append(verts[a] + (s / p) * (verts[b] - verts[a]))
    if p == 3:
        nodes.append(np.array([1.0 / 3.0, 1.0 / 3.0]))
    nodes = np.array(nodes)
    expo = [(a, b) for tot in range(p + 1) for a in range(tot, -1, -1) for b in (tot - a,)]
    expo = np.array(expo)
    V = np.prod(nodes[:, None, :] ** expo[None, :, :], axis=2)
    coeff = np.linalg.inv(V)  # column i: monomial coefficients of phi_i
    return nodes, expo, coeff


class SpatialBasis:
    """Nodal Lagrange basis of degree p on the reference triangle.

    Provides values and arbitrary partial derivatives (vectorized over
    points) by exact differentiation of the monomial expansion.
    """

    def __init__(self, p):
        if p not in (1, 2, 3):
            raise ValueError("spatial degree must be 1, 2 or 3")
        self.p = p
        self.nodes, self._expo, self._coeff = _basis_data(p)
        self.n_dofs = len(self.nodes)

    def eval(self, points, dx=0, dy=0):
        """partial^(dx+dy) phi_i / dxi^dx deta^dy at reference points."""
        pts = np.atleast_2d(points)
        a = self._expo[:, 0]
        b = self._expo[:, 1]
        fa = np.where(a >= dx, _falling(a, dx), 0.0)
        fb = np.where(b >= dy, _falling(b, dy), 0.0)
        pa = np.maximum(a - dx, 0)
        pb = np.maximum(b - dy, 0)
        mono = fa * fb * pts[:, 0:1] ** pa[None, :] * pts[:, 1:2] ** pb[None, :]
        return mono @ self._coeff

    def eval_directional(self, points, direction, order):
        """Order-``order`` derivative along reference directions.

        ``direction`` has shape (npts, 2): the *reference* direction per
        point (for a physical direction d use J^{-1} d). Order 0 returns
        plain values.
        """
        pts = np.atleast_2d(points)
        if order == 0:
            return self.eval(pts)
        d = np.atleast_2d(direction)
        out = np.zeros((len(pts), self.n_dofs))
        for a in range(order + 1):
            term = self.eval(pts, dx=order - a, dy=a)
            out += comb(order, a) * (d[:, 0] ** (order - a) * d[:, 1] ** a)[:, None] * term
        return out

    def gradients(self, points, invjac):
        """Physical gradients: (npts, ndofs, 2) given per-point J^{-1}."""
        gx = self.eval(points, dx=1)
        gy = self.eval(points, dy=1)
        ref = np.stack([gx, gy], axis=2)  # (npts, ndofs, 2) reference grads
        return np.einsum("pji,pdj->pdi", invjac, ref)


def _falling(n, k):
    out = np.ones_like(n, dtype=float)
    for i in range(k):
        out = out * np.maximum(n - i, 0)
    return out


class TimeBasis:
    """Monomials s^j, j = 0..q, in the normalized slab coordinate."""

    def __init__(self, q):
        if q not in (1, 2):
            raise ValueError("time degree must be 1 or 2")
        self.q = q
        self.n_modes = q + 1

    def eval(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return s[:, None] ** np.arange(self.q + 1)[None, :]

    def eval_dt(self, s, k):
        """Derivative with respect to physical time t = t_{n-1} + s k."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        j = np.arange(self.q + 1)
        with np.errstate(invalid="ignore"):
            out = j[None, :] * s[:, None] ** np.maximum(j - 1, 0)[None, :]
        out[:, 0] = 0.0
        return out / k


class GlobalSpace:
    """Continuous P_p space on the full background mesh.

    Degrees of freedom: one per vertex, p-1 per face ordered from the
    lower-index endpoint, and the interior node(s) for p = 3.
    """

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.p = p
        self.basis = SpatialBasis(p)
        nv, nf, nt = mesh.n_vertices, mesh.n_faces, mesh.n_triangles
        n_int = {1: 0, 2: 0, 3: 1}[p]
        self.n_dofs = nv + nf * (p - 1) + nt * n_int

        nloc = self.basis.n_dofs
        cell_dofs = np.empty((nt, nloc), dtype=np.int64)
        cell_dofs[:, :3] = mesh.triangles
        if p >= 2:
            tri = mesh.triangles
            for e, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
                fids = mesh.tri_faces[:, e]
                fwd = tri[:, a] < tri[:, b]  # local direction == canonical?
                for s in range(1, p):
                    m = s - 1
                    m_rev = (p - 1) - s
                    col = 3 + e * (p - 1) + (s - 1)
                    cell_dofs[:, col] = nv + fids * (p - 1) + np.where(fwd, m, m_rev)
        if n_int:
            base = nv + nf * (p - 1)
            cell_dofs[:, 3 + 3 * (p - 1) :] = base + np.arange(nt)[:, None]
        self.cell_dofs = cell_dofs

        coords = np.empty((self.n_dofs, 2))
        ref = self.basis.nodes
        phys = mesh.tri_origin[:, None, :] + np.einsum("eij,nj->eni", mesh.tri_jac, ref)
        coords[cell_dofs.ravel()] = phys.reshape(-1, 2)
        self.dof_coords = coords


@dataclass
class SlabSpace:
    """Active mesh, stabilized faces and dof map of one space-time slab."""

    index: int
    t_start: float
    t_end: float
    space: GlobalSpace
    q: int
    elements: np.ndarray  # sorted active background triangles
    faces: np.ndarray  # sorted stabilized face indices
    snapshots: list
    time_quadrature: object = None
    extra_faces_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time_basis = TimeBasis(self.q)
        active_dofs = np.unique(self.space.cell_dofs[self.elements])
        self.global_dofs = active_dofs
        self.n_spatial = len(active_dofs)
        self.n_cols = (self.q + 1) * self.n_spatial
        lookup = np.full(self.space.n_dofs, -1, dtype=np.int64)
        lookup[active_dofs] = np.arange(self.n_spatial)
        self._local = lookup
        mask = np.zeros(self.space.mesh.n_triangles, dtype=bool)
        mask[self.elements] = True
        self._active_mask = mask

    @property
    def k(self):
        return self.t_end - self.t_start

    @property
    def dof_coords(self):
        return self.space.dof_coords[self.global_dofs]

    def local_dofs(self, elems):
        """Slab-local spatial dof indices of the given active elements."""
        loc = self._local[self.space.cell_dofs[elems]]
        if np.any(loc < 0):
            raise ValueError("element outside the active mesh")
        return loc

    def is_active(self, elems):
        return self._active_mask[elems]

    def column(self, i, j):
        return j * self.n_spatial + i

    def s_of(self, t):
        return (t - self.t_start) / self.k


def _vertex_state_flags(snapshot, mesh, candidates):
    """Positive-side flag per candidate vertex (True on Omega_2 side).

    Candidates live in a band around the interface, so the side can be
    read off the nearest segment: sign of (x - segment point) . normal.
    The snapshot normals point to the positive side by construction for
    level sets; for splines they are globally consistent, and the flags
    are only compared between snapshots, so a global flip is harmless.
    """
    if snapshot.levelset is not None:
        return snapshot.levelset.background_vertex_values()[candidates] > 0.0
    key = ("vflags", id(mesh), candidates.tobytes())
    if key not in snapshot._cache:
        from scipy.spatial import cKDTree

        pts = mesh.vertices[candidates]
        mids = snapshot.midpoints()
        _, idx = cKDTree(mids).query(pts)
        side = np.einsum("pi,pi->p", pts - mids[idx], snapshot.normals[idx])
        snapshot._cache[key] = side > 0.0
    return snapshot._cache[key]


def _interface_displacement(snapshots):
    """Upper estimate of the interface motion between consecutive times."""
    from scipy.spatial import cKDTree

    disp = 0.0
    for s0, s1 in zip(snapshots[:-1], snapshots[1:]):
        tree = cKDTree(s0.midpoints())
        d, _ = tree.query(s1.midpoints())
        seg_len = float(s0.lengths().max())
        disp = max(disp, float(d.max()) + seg_len)
    return disp


def _sweep_candidates(mesh, snapshots):
    """Vertices close enough to the moving interface to flip sides.

    A vertex changing side between consecutive snapshots lies inside the
    swept region, whose width is bounded by the interface displacement.
    On grid meshes the cut-cell bitmap is dilated by that many cells;
    otherwise vertices within the displacement distance of the polylines
    are selected.
    """
    disp = _interface_displacement(snapshots)
    if mesh.grid is not None:
        from scipy.ndimage import binary_dilation

        n = mesh.grid[1]
        cells = np.zeros((n, n), dtype=bool)
        for s in snapshots:
            cell = s.cut_elements() // 2
            cells[cell % n, cell // n] = True  # (ix, iy)
        r = int(np.ceil(disp / mesh.cell_width)) + 1
        cells = binary_dilation(cells, iterations=r)
        ix, iy = np.nonzero(cells)
        # The four corner vertices of every marked cell.
        vid = np.concatenate(
            [
                iy * (n + 1) + ix,
                iy * (n + 1) + ix + 1,
                (iy + 1) * (n + 1) + ix,
                (iy + 1) * (n + 1) + ix + 1,
            ]
        )
        return np.unique(vid)

    from ._kernels import min_dist_to_segments

    rad = disp + 0.75 * mesh.h
    all_a = np.vstack([s.segments[:, 0] for s in snapshots])
    all_b = np.vstack([s.segments[:, 1] for s in snapshots])
    d = min_dist_to_segments(mesh.vertices, all_a, all_b)
    return np.flatnonzero(d <= rad)


def _swept_elements(mesh, snapshots):
    """Elements with a vertex flipping side between consecutive snapshots."""
    if len(snapshots) < 2:
        return np.empty(0, dtype=np.int64)
    if snapshots[0].levelset is None:
        cand = _sweep_candidates(mesh, snapshots)
    else:
        cand = np.arange(mesh.n_vertices)
    if len(cand) == 0:
        return np.empty(0, dtype=np.int64)
    flags = [_vertex_state_flags(s, mesh, cand) for s in snapshots]
    flipped_local = np.zeros(len(cand), dtype=bool)
    for f0, f1 in zip(flags[:-1], flags[1:]):
        flipped_local |= f0 != f1
    flipped = np.zeros(mesh.n_vertices, dtype=bool)
    flipped[cand] = flipped_local
    hit = flipped[mesh.triangles].any(axis=1)
    return np.flatnonzero(hit)


def build_active_surface_mesh(space, slab_index, time_quad, snapshots):
    """Slab space on the union of cut elements plus the swept closure."""
    mesh = space.mesh
    active = set()
    for s in snapshots:
        active.update(s.cut_elements().tolist())
    active.update(_swept_elements(mesh, snapshots).tolist())
    if not active:
        raise ValueError(f"slab {slab_index}: empty active surface mesh")
    elements = np.array(sorted(active), dtype=np.int64)
    faces = internal_faces(mesh, elements)
    return SlabSpace(
        index=slab_index,
        t_start=float(time_quad.t_start),
        t_end=float(time_quad.t_end),
        space=space,
        q=space_q(time_quad),
        elements=elements,
        faces=faces,
        snapshots=list(snapshots),
        time_quadrature=time_quad,
    )


def space_q(time_quad):
    """Time polynomial degree conventionally paired with a time rule."""
    return {2: 1, 3: 1, 5: 2}[time_quad.n_points]


def build_active_bulk_mesh(space, slab_index, time_quad, snapshots):
    """Slab space on elements meeting Omega_1 (negative side) in the slab.

    The stabilized face set follows the coupled-problem rule: faces
    internal to the bulk active mesh that belong to an element of the
    surface active mesh.
    """
    mesh = space.mesh
    active = set()
    surface_active = set()
    for s in snapshots:
        labels = classify_elements(s, mesh)
        active.update(np.flatnonzero(labels != 2).tolist())  # cut or negative
        surface_active.update(s.cut_elements().tolist())
    swept = _swept_elements(mesh, snapshots).tolist()
    active.update(swept)
    surface_active.update(swept)
    if not active:
        raise ValueError(f"slab {slab_index}: empty active bulk mesh")
    elements = np.array(sorted(active), dtype=np.int64)
    inner = internal_faces(mesh, elements)
    surf_mask = np.zeros(mesh.n_triangles, dtype=bool)
    surf_mask[sorted(surface_active)] = True
    ft = mesh.face_tris[inner]
    keep = surf_mask[ft[:, 0]] | surf_mask[np.maximum(ft[:, 1], 0)]
    faces = inner[keep]
    slab = SlabSpace(
        index=slab_index,
        t_start=float(time_quad.t_start),
        t_end=float(time_quad.t_end),
        space=space,
        q=space_q(time_quad),
        elements=elements,
        faces=faces,
        snapshots=list(snapshots),
        time_quadrature=time_quad,
    )
    slab.extra_faces_info["surface_active"] = np.array(sorted(surface_active), dtype=np.int64)
    return slab


def evaluate_spacetime(coeffs, slab, t, points, request="value", direction=None, order=1):
    """Evaluate a slab function (or derivatives) at time t and points.

    ``request`` is one of "value", "grad", "dt", or "directional" (with
    ``direction`` a unit vector and ``order`` the derivative order).
    Points must lie in active elements.
    """
    mesh = slab.space.mesh
    basis = slab.space.basis
    pts = np.atleast_2d(points)
    elems = mesh.locate(pts)
    if np.any(elems < 0) or not np.all(slab.is_active(np.maximum(elems, 0))):
        raise ValueError("evaluation point outside the active mesh")
    xi = mesh.reference_coords(elems, pts)
    loc = slab.local_dofs(elems)  # (npts, nloc)
    s = slab.s_of(t)
    tb = slab.time_basis
    theta = tb.eval([s])[0]

    c = np.asarray(coeffs).reshape(tb.n_modes, slab.n_spatial)
    nodal = theta @ c  # spatial coefficients at time t
    cell_coeff = nodal[loc]  # (npts, nloc)

    if request == "value":
        vals = basis.eval(xi)
        return np.einsum("pd,pd->p", vals, cell_coeff)
    if request == "grad":
        grads = basis.gradients(xi, mesh.tri_invjac[elems])
        return np.einsum("pdi,pd->pi", grads, cell_coeff)
    if request == "dt":
        dtheta = tb.eval_dt([s], slab.k)[0]
        nodal_dt = dtheta @ c
        vals = basis.eval(xi)
        return np.einsum("pd,pd->p", vals, nodal_dt[loc])
    if request == "directional":
        d = np.asarray(direction, dtype=float)
        dref = np.einsum("pij,j->pi", mesh.tri_invjac[elems], d)
        der = basis.eval_directional(xi, dref, order)
        return np.einsum("pd,pd->p", der, cell_coeff)
    raise ValueError(f"unknown request {request!r}")
