"""Coupled bulk-surface surfactant transport with mass-constraint multiplier.

Bulk concentration u_B lives on the outer phase Omega_1 (negative level-set
side), surface concentration u_S on the interface; they exchange mass
through the Langmuir flux alpha u_B (1 - u_S) - Bi u_S. Both fields use
linear elements in space and time on their own active meshes; each slab is
a nonlinear problem solved by Newton's method on the residual

    F(u, lambda) = 0,   dimension 2 (N_B + N_S) + 1,

where the last unknown is a Lagrange multiplier pinning the total mass
int u_B + Da int u_S to its initial value. The multiplier column and
constraint row are exact transposes, so the bordered Jacobian stays
structurally symmetric.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import local_matrices
from .evolution import (
    advect_levelset_cn_supg,
    redistance_geometric,
)
from .geometry import (
    CUT,
    NEGATIVE_SIDE,
    classify_elements,
    decompose_cut_cell,
    extract_zero_contour,
)
from .mesh import refine_once
from .quadrature import newton_cotes, reference_segment_rule, reference_triangle_rule
from .spaces import GlobalSpace, build_active_bulk_mesh, build_active_surface_mesh
from .surface import condition_number

__all__ = [
    "CoupledProblem",
    "CoupledState",
    "CoupledSlab",
    "NewtonDivergenceError",
    "assemble_residual_F",
    "assemble_jacobian_DF",
    "newton_solve",
    "march_coupled",
    "total_mass",
    "initial_total_mass",
]


class NewtonDivergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class CoupledProblem:
    """Vortex-driven soluble surfactant problem in nondimensional form."""

    velocity: object
    Pe: float = 100.0
    Pe_S: float = 100.0
    Da: float = 1.0
    Bi: float = 1.0
    alpha: float = 1.0
    u_B0: Callable = None  # (pts,) -> (n,)
    u_S0: Callable = None
    tau_B: float = 1e-2
    tau_S: float = 1e-2
    u_bar0: float = None  # computed from the initial data when None

    def __post_init__(self):
        for name in ("Pe", "Pe_S", "Da", "Bi", "alpha"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CoupledState:
    """Unknowns of one coupled slab: two time modes per field plus lambda."""

    u_B: np.ndarray  # (2, N_B)
    u_S: np.ndarray  # (2, N_S)
    lam: float
    slab_index: int = 0

    @classmethod
    def zeros(cls, n_b, n_s, slab_index=0):
        return cls(np.zeros((2, n_b)), np.zeros((2, n_s)), 0.0, slab_index)

    def flatten(self, with_multiplier=True):
        parts = [self.u_B.ravel(), self.u_S.ravel()]
        if with_multiplier:
            parts.append([self.lam])
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, x, n_b, n_s, slab_index=0, with_multiplier=True):
        u_b = x[: 2 * n_b].reshape(2, n_b).copy()
        u_s = x[2 * n_b : 2 * n_b + 2 * n_s].reshape(2, n_s).copy()
        lam = float(x[-1]) if with_multiplier else 0.0
        return cls(u_b, u_s, lam, slab_index)

    def traces(self):
        """End-of-slab spatial fields (sum of time modes)."""
        return self.u_B.sum(axis=0), self.u_S.sum(axis=0)


@dataclass
class CoupledSlab:
    """Paired bulk/surface slab spaces over shared snapshots."""

    bulk: object
    surf: object
    time_quadrature: object
    use_multiplier: bool = True

    @property
    def snapshots(self):
        return self.bulk.snapshots

    @property
    def n_b(self):
        return self.bulk.n_spatial

    @property
    def n_s(self):
        return self.surf.n_spatial

    @property
    def dim(self):
        d = 2 * (self.n_b + self.n_s)
        return d + 1 if self.use_multiplier else d

    def offsets(self):
        return 0, 2 * self.n_b  # bulk block start, surface block start


# -- integration regions ------------------------------------------------------


def _bulk_region(snapshot, mesh, slab, degree):
    """Quadrature points/weights/rows covering Omega_1 at one time.

    Whole negative-side active triangles use the reference rule mapped per
    element; cut triangles contribute their negative-side sub-triangles.
    Returns (points (N, 2), weights (N,), basis values (N, 3),
    basis gradients (N, 3, 2), rows (N, 3)).
    """
    key = ("bulkreg", id(slab), degree)
    if key in snapshot._cache:
        return snapshot._cache[key]
    basis = slab.space.basis
    labels = classify_elements(snapshot, mesh)
    elems = slab.elements
    lab = labels[elems]
    whole = elems[lab == NEGATIVE_SIDE]
    cut = elems[lab == CUT]

    ref_pts, ref_w = reference_triangle_rule(degree)
    nq = len(ref_w)
    chunks = []

    if len(whole):
        pts = mesh.tri_origin[whole, None, :] + np.einsum(
            "eij,qj->eqi", mesh.tri_jac[whole], ref_pts
        )
        w = ref_w[None, :] * mesh.tri_det[whole, None]
        hosts = np.repeat(whole, nq)
        chunks.append((pts.reshape(-1, 2), w.ravel(), hosts))

    if len(cut):
        tris = []
        hosts = []
        for t in cut:
            dec = decompose_cut_cell(int(t), snapshot)
            for sub in dec.side_neg:
                tris.append(sub)
                hosts.append(t)
        if tris:
            tris = np.array(tris)  # (S, 3, 2)
            hosts = np.repeat(np.array(hosts, dtype=np.int64), nq)
            j0 = tris[:, 1] - tris[:, 0]
            j1 = tris[:, 2] - tris[:, 0]
            det = np.abs(j0[:, 0] * j1[:, 1] - j0[:, 1] * j1[:, 0])
            pts = (
                tris[:, None, 0, :]
                + np.einsum("q,si->sqi", ref_pts[:, 0], j0)
                + np.einsum("q,si->sqi", ref_pts[:, 1], j1)
            )
            w = ref_w[None, :] * det[:, None]
            chunks.append((pts.reshape(-1, 2), w.ravel(), hosts))

    points = np.vstack([c[0] for c in chunks])
    weights = np.concatenate([c[1] for c in chunks])
    hosts = np.concatenate([c[2] for c in chunks])
    xi = mesh.reference_coords(hosts, points)
    vals = basis.eval(xi)
    grads = basis.gradients(xi, mesh.tri_invjac[hosts])
    rows = slab.local_dofs(hosts)
    out = (points, weights, vals, grads, rows)
    snapshot._cache[key] = out
    return out


def _surface_region(snapshot, mesh, slab, degree):
    """Gauss points on the interface with surface-slab basis tables."""
    key = ("surfreg", id(slab), degree)
    if key in snapshot._cache:
        return snapshot._cache[key]
    basis = slab.space.basis
    segs = snapshot.segments
    hosts = snapshot.host
    sloc, w = reference_segment_rule(degree)
    a = segs[:, 0][:, None, :]
    b = segs[:, 1][:, None, :]
    pts = (a + sloc[None, :, None] * (b - a)).reshape(-1, 2)
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    weights = (w[None, :] * lengths[:, None]).ravel()
    G = len(sloc)
    host_rep = np.repeat(hosts, G)
    normals = np.repeat(snapshot.normals, G, axis=0)
    xi = mesh.reference_coords(host_rep, pts)
    vals = basis.eval(xi)
    grads = basis.gradients(xi, mesh.tri_invjac[host_rep])
    rows = slab.local_dofs(hosts)
    rows_rep = np.repeat(rows, G, axis=0)
    out = (pts, weights, vals, grads, normals, rows_rep, host_rep)
    snapshot._cache[key] = out
    return out


def _face_penalty(slab, mesh):
    """First-order gradient-jump penalty triplets (spatial block)."""
    faces = slab.faces
    if len(faces) == 0:
        return None
    fv = mesh.face_vertices[faces]
    a = mesh.vertices[fv[:, 0]]
    b = mesh.vertices[fv[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    normals = mesh.face_normals[faces]
    ft = mesh.face_tris[faces]
    # P1 gradients are constant per element.
    grad_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    jumps = []
    rows = []
    for side, sign in ((0, 1.0), (1, -1.0)):
        elems = ft[:, side]
        grads = np.einsum("eji,aj->eai", mesh.tri_invjac[elems], grad_ref)
        jumps.append(sign * np.einsum("eai,ei->ea", grads, normals))
        rows.append(slab.local_dofs(elems))
    jump = np.concatenate(jumps, axis=1)  # (F, 6)
    rows = np.concatenate(rows, axis=1)
    local = lengths[:, None, None] * np.einsum("fa,fb->fab", jump, jump)
    return rows, local


class _TripletBlock:
    """COO accumulation into the global bordered system."""

    def __init__(self, dim):
        self.dim = dim
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, rows_sp, cols_sp, local, tmat, row_off, col_off, n_row_sp, n_col_sp):
        for l_test in range(tmat.shape[0]):
            for j_trial in range(tmat.shape[1]):
                c = tmat[l_test, j_trial]
                if c == 0.0:
                    continue
                r = rows_sp + (row_off + l_test * n_row_sp)
                cc = cols_sp + (col_off + j_trial * n_col_sp)
                self.rows.append(np.broadcast_to(r[:, :, None], local.shape).ravel())
                self.cols.append(np.broadcast_to(cc[:, None, :], local.shape).ravel())
                self.vals.append((c * local).ravel())

    def add_vector(self, rows, vals):
        self.rows.append(rows)
        self.cols.append(np.zeros(len(rows), dtype=np.int64))
        self.vals.append(vals)

    def build_matrix(self):
        A = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.dim, self.dim),
        ).tocsr()
        A.sum_duplicates()
        return A


BULK_QUAD_DEGREE = 4
SURF_QUAD_DEGREE = 4


@dataclass
class _SlabOperator:
    """Per-slab linear operator, load vector and nonlinear-term context."""

    L: sp.csr_matrix
    rhs: np.ndarray
    slab: CoupledSlab
    problem: CoupledProblem
    nl_ctx: list  # per quadrature time: dict of segment tables

    def residual(self, x):
        F = self.L @ x - self.rhs
        F += self._nonlinear(x)
        return F

    def jacobian(self, x):
        return self.L + self._nonlinear_jacobian(x)

    def _field_values(self, ctx, x):
        cs = self.slab
        n_b, n_s = cs.n_b, cs.n_s
        theta = ctx["theta"]
        ub = x[: 2 * n_b].reshape(2, n_b)
        us = x[2 * n_b : 2 * n_b + 2 * n_s].reshape(2, n_s)
        nodal_b = theta @ ub
        nodal_s = theta @ us
        V = ctx["V"]
        uB = np.einsum("pa,pa->p", V, nodal_b[ctx["rows_b"]])
        uS = np.einsum("pa,pa->p", V, nodal_s[ctx["rows_s"]])
        return uB, uS

    def _nonlinear(self, x):
        pr = self.problem
        cs = self.slab
        out = np.zeros(cs.dim)
        n_b, n_s = cs.n_b, cs.n_s
        for ctx in self.nl_ctx:
            uB, uS = self._field_values(ctx, x)
            w = ctx["w"] * ctx["omega"]
            V = ctx["V"]
            prod = w * uB * uS
            # -alpha (u_B u_S, alpha v_B - Bi v_S)
            contrib_b = -pr.alpha**2 * np.einsum("p,pa->pa", prod, V)
            contrib_s = pr.alpha * pr.Bi * np.einsum("p,pa->pa", prod, V)
            theta = ctx["theta"]
            for l_test, th in enumerate(theta):
                np.add.at(out, ctx["rows_b"].ravel() + l_test * n_b, th * contrib_b.ravel())
                np.add.at(
                    out,
                    ctx["rows_s"].ravel() + 2 * n_b + l_test * n_s,
                    th * contrib_s.ravel(),
                )
        return out

    def _nonlinear_jacobian(self, x):
        pr = self.problem
        cs = self.slab
        n_b, n_s = cs.n_b, cs.n_s
        blk = _TripletBlock(cs.dim)
        for ctx in self.nl_ctx:
            uB, uS = self._field_values(ctx, x)
            w = ctx["w"] * ctx["omega"]
            V3 = ctx["V3"]  # (S, G, 3)
            theta = ctx["theta"]
            tmat = np.outer(theta, theta)
            S, G, _ = V3.shape
            wS = (w * uS).reshape(S, G)
            wB = (w * uB).reshape(S, G)
            mass_us = local_matrices(wS, V3, V3)
            mass_ub = local_matrices(wB, V3, V3)
            rb = ctx["rows_b3"]
            rs = ctx["rows_s3"]
            blk.add(rb, rb, -pr.alpha**2 * mass_us, tmat, 0, 0, n_b, n_b)
            blk.add(rs, rb, pr.alpha * pr.Bi * mass_us, tmat, 2 * n_b, 0, n_s, n_b)
            blk.add(rb, rs, -pr.alpha**2 * mass_ub, tmat, 0, 2 * n_b, n_b, n_s)
            blk.add(rs, rs, pr.alpha * pr.Bi * mass_ub, tmat, 2 * n_b, 2 * n_b, n_s, n_s)
        return blk.build_matrix()


def build_slab_operator(problem, cslab, prev=None, u_bar0=0.0):
    """Assemble everything that stays fixed across Newton iterations.

    ``prev`` provides the traces at t_{n-1}^-: either a pair of callables
    (first slab, exact initial data) or a pair of (SlabSpace, coefficient
    vector) tuples from the previous slab.
    """
    pr = problem
    bulk, surf = cslab.bulk, cslab.surf
    mesh = bulk.space.mesh
    tq = cslab.time_quadrature
    tb = bulk.time_basis
    n_b, n_s = cslab.n_b, cslab.n_s
    dim = cslab.dim
    blk = _TripletBlock(dim)
    rhs = np.zeros(dim)
    beta = pr.velocity
    cB = pr.alpha / pr.Da
    s_off = 2 * n_b
    nl_ctx = []

    t_face = np.zeros((2, 2))
    for m, (t_m, w_m) in enumerate(zip(tq.points, tq.weights)):
        snapshot = cslab.snapshots[m]
        s_m = bulk.s_of(t_m)
        theta = tb.eval([s_m])[0]
        dtheta = tb.eval_dt([s_m], bulk.k)[0]
        t_std = w_m * np.outer(theta, theta)
        t_dt = w_m * np.outer(theta, dtheta)
        t_face += t_std

        # Bulk terms on Omega_1(t_m).
        pts, w, V, Gr, rows = _bulk_region(snapshot, mesh, bulk, BULK_QUAD_DEGREE)
        bval = beta.value(t_m, pts)
        mass_loc = np.einsum("p,pa,pb->pab", w, V, V)
        conv_loc = np.einsum("p,pa,pbi,pi->pab", w, V, Gr, bval, optimize=True)
        diff_loc = (1.0 / pr.Pe) * np.einsum("p,pai,pbi->pab", w, Gr, Gr, optimize=True)
        blk.add(rows, rows, cB * mass_loc, t_dt, 0, 0, n_b, n_b)
        blk.add(rows, rows, cB * (conv_loc + diff_loc), t_std, 0, 0, n_b, n_b)
        if m == 0:
            e0 = tb.eval([0.0])[0]
            blk.add(rows, rows, cB * mass_loc, np.outer(e0, e0), 0, 0, n_b, n_b)
            ub_prev = _eval_prev(prev, 0, pts)
            load = cB * np.einsum("p,p,pa->pa", w, ub_prev, V)
            np.add.at(rhs, rows.ravel(), load.ravel())  # e0 puts it in mode 0
        if cslab.use_multiplier and m == len(tq.points) - 1:
            # Multiplier column/row: integral of each basis over Omega_1(t_n).
            col = np.zeros(n_b)
            np.add.at(col, rows.ravel(), (w[:, None] * V).ravel())
            _add_border(blk, col, np.arange(n_b), (0, n_b), dim, 1.0)

        # Surface terms on Gamma(t_m).
        spts, sw, sV, sGr, snrm, srows, shosts = _surface_region(
            snapshot, mesh, surf, SURF_QUAD_DEGREE
        )
        if not np.all(bulk.is_active(shosts)):
            raise AssertionError("interface segments must lie in the bulk active mesh")
        sb = beta.value(t_m, spts)
        divg = beta.surface_divergence(t_m, spts, snrm)
        g_n = np.einsum("pai,pi->pa", sGr, snrm)
        tg = sGr - g_n[:, :, None] * snrm[:, None, :]

        mass_loc = np.einsum("p,pa,pb->pab", sw, sV, sV)
        conv_loc = np.einsum("p,pa,pbi,pi->pab", sw, sV, sGr, sb, optimize=True)
        divg_loc = np.einsum("p,p,pa,pb->pab", sw, divg, sV, sV, optimize=True)
        diff_loc = (1.0 / pr.Pe_S) * np.einsum("p,pai,pbi->pab", sw, tg, tg, optimize=True)
        blk.add(srows, srows, pr.Bi * mass_loc, t_dt, s_off, s_off, n_s, n_s)
        blk.add(
            srows, srows, pr.Bi * (conv_loc + divg_loc + diff_loc), t_std, s_off, s_off, n_s, n_s
        )

        # Linear Langmuir coupling (alpha u_B - Bi u_S, alpha v_B - Bi v_S).
        rows_b_surf = bulk.local_dofs(shosts)
        blk.add(rows_b_surf, rows_b_surf, pr.alpha**2 * mass_loc, t_std, 0, 0, n_b, n_b)
        blk.add(
            srows, rows_b_surf, -pr.alpha * pr.Bi * mass_loc, t_std, s_off, 0, n_s, n_b
        )
        blk.add(
            rows_b_surf, srows, -pr.alpha * pr.Bi * mass_loc, t_std, 0, s_off, n_b, n_s
        )
        blk.add(srows, srows, pr.Bi**2 * mass_loc, t_std, s_off, s_off, n_s, n_s)

        if m == 0:
            e0 = tb.eval([0.0])[0]
            blk.add(srows, srows, pr.Bi * mass_loc, np.outer(e0, e0), s_off, s_off, n_s, n_s)
            us_prev = _eval_prev(prev, 1, spts)
            load = pr.Bi * np.einsum("p,p,pa->pa", sw, us_prev, sV)
            np.add.at(rhs, srows.ravel() + s_off, load.ravel())
        if cslab.use_multiplier and m == len(tq.points) - 1:
            col = np.zeros(n_s)
            np.add.at(col, srows.ravel(), (sw[:, None] * sV).ravel())
            _add_border(blk, pr.Da * col, np.arange(n_s), (s_off, n_s), dim, 1.0)

        # Context for the quadratic Langmuir term.
        S = snapshot.n_segments
        G = len(sw) // S
        nl_ctx.append(
            {
                "omega": w_m,
                "theta": theta,
                "w": sw,
                "V": sV,
                "V3": sV.reshape(S, G, 3),
                "rows_b": np.repeat(bulk.local_dofs(snapshot.host), G, axis=0),
                "rows_s": srows,
                "rows_b3": bulk.local_dofs(snapshot.host),
                "rows_s3": surf.local_dofs(snapshot.host),
            }
        )

    # Ghost-penalty stabilization, integrated in time with the same rule.
    h = mesh.cell_width or mesh.h
    fp = _face_penalty(bulk, mesh)
    if fp is not None:
        rows, local = fp
        blk.add(rows, rows, pr.tau_B * h * local, t_face, 0, 0, n_b, n_b)
    fp = _face_penalty(surf, mesh)
    if fp is not None:
        rows, local = fp
        blk.add(rows, rows, pr.tau_S * local, t_face, s_off, s_off, n_s, n_s)

    if cslab.use_multiplier:
        rhs[-1] = u_bar0

    L = blk.build_matrix()
    if not np.all(np.isfinite(L.data)):
        raise RuntimeError(f"slab {bulk.index}: non-finite entries in the operator")
    return _SlabOperator(L=L, rhs=rhs, slab=cslab, problem=pr, nl_ctx=nl_ctx)


def _add_border(blk, col_vals, rows_sp, block, dim, scale):
    """Insert multiplier column and its transposed constraint row."""
    off, n_sp = block
    for mode in range(2):
        rows = rows_sp + (off + mode * n_sp)
        vals = scale * col_vals
        blk.rows.append(rows)
        blk.cols.append(np.full(len(rows), dim - 1, dtype=np.int64))
        blk.vals.append(vals)
        blk.rows.append(np.full(len(rows), dim - 1, dtype=np.int64))
        blk.cols.append(rows)
        blk.vals.append(vals)


def _eval_prev(prev, which, pts):
    """Trace of the previous slab (or initial data) at quadrature points."""
    src = prev[which]
    if callable(src):
        return src(pts)
    slab, coeffs = src
    mesh = slab.space.mesh
    hosts = mesh.locate(pts)
    if not np.all(slab.is_active(hosts)):
        raise AssertionError("previous-trace evaluation left the old active mesh")
    xi = mesh.reference_coords(hosts, pts)
    vals = slab.space.basis.eval(xi)
    loc = slab.local_dofs(hosts)
    return np.einsum("pa,pa->p", vals, coeffs[loc])


# -- spec-level entry points --------------------------------------------------


def assemble_residual_F(state, operator):
    return operator.residual(state.flatten(operator.slab.use_multiplier))


def assemble_jacobian_DF(state, operator):
    return operator.jacobian(state.flatten(operator.slab.use_multiplier))


def newton_solve(operator, x0, tol=1e-10, max_iter=25):
    """Newton iteration: solve DF w = F, update x -= w, until |w| < tol."""
    x = x0.copy()
    history = []
    for _ in range(max_iter):
        F = operator.residual(x)
        DF = operator.jacobian(x)
        w = spla.splu(DF.tocsc()).solve(F)
        x -= w
        history.append(float(np.linalg.norm(w)))
        if history[-1] < tol:
            cs = operator.slab
            return (
                CoupledState.from_vector(
                    x, cs.n_b, cs.n_s, cs.bulk.index, cs.use_multiplier
                ),
                history,
            )
    raise NewtonDivergenceError(
        f"Newton did not converge in {max_iter} iterations", history
    )


def total_mass(traces, cslab, Da):
    """int_Omega1 u_B + Da int_Gamma u_S at the slab's end geometry.

    Uses the same quadrature as the assembled constraint so the multiplier
    pins exactly this number.
    """
    ub, us = traces
    mesh = cslab.bulk.space.mesh
    snapshot = cslab.snapshots[-1]
    pts, w, V, Gr, rows = _bulk_region(snapshot, mesh, cslab.bulk, BULK_QUAD_DEGREE)
    mass_b = float(np.sum(w * np.einsum("pa,pa->p", V, ub[rows])))
    spts, sw, sV, sGr, snrm, srows, shosts = _surface_region(
        snapshot, mesh, cslab.surf, SURF_QUAD_DEGREE
    )
    mass_s = float(np.sum(sw * np.einsum("pa,pa->p", sV, us[srows])))
    return mass_b + Da * mass_s


def initial_total_mass(problem, mesh, snapshot, degree=8):
    """u_bar0 from the analytic initial data on the discrete geometry."""
    from .quadrature import gauss_on_segment, gauss_on_triangle

    labels = classify_elements(snapshot, mesh)
    total = 0.0
    ref_pts, ref_w = reference_triangle_rule(degree)
    whole = np.flatnonzero(labels == NEGATIVE_SIDE)
    pts = mesh.tri_origin[whole, None, :] + np.einsum(
        "eij,qj->eqi", mesh.tri_jac[whole], ref_pts
    )
    w = ref_w[None, :] * mesh.tri_det[whole, None]
    total += float(np.sum(w.ravel() * problem.u_B0(pts.reshape(-1, 2))))
    for t in np.flatnonzero(labels == CUT):
        dec = decompose_cut_cell(int(t), snapshot)
        for sub in dec.side_neg:
            qp, qw = gauss_on_triangle(sub, degree)
            total += float(np.sum(qw * problem.u_B0(qp)))
    for seg in snapshot.segments:
        qp, qw = gauss_on_segment(seg[0], seg[1], degree)
        total += problem.Da * float(np.sum(qw * problem.u_S0(qp)))
    return total


@dataclass
class CoupledStepRecord:
    step: int
    t: float
    mass: float
    mass_error: float
    newton_iters: int
    newton_history: list
    condition: float = None


@dataclass
class CoupledResult:
    records: list
    state: CoupledState
    slab: CoupledSlab
    u_bar0: float
    wall_time: float
    field_snapshots: dict = field(default_factory=dict)


def march_coupled(
    problem,
    mesh,
    T,
    n_slabs,
    use_multiplier=True,
    newton_tol=1e-10,
    compute_condition=True,
    snapshot_times=(),
    redistance_every=1,
    initial_levelset=None,
):
    """March the coupled system with the level-set representation.

    Per slab: advect + redistance the level set to the Simpson points,
    build both active meshes, Newton-solve the bordered system, record the
    total mass and (optionally) the spectral condition number of the final
    Newton matrix.
    """
    from .problems import coupled_initial_levelset

    t0 = _time.time()
    space = GlobalSpace(mesh, 1)
    refined = refine_once(mesh)
    init = initial_levelset or coupled_initial_levelset
    from .geometry import LevelSetField

    fld = LevelSetField(refined, init(refined.vertices))
    snapshot = extract_zero_contour(fld, 0.0)
    k = T / n_slabs
    u_bar0 = problem.u_bar0
    if u_bar0 is None:
        u_bar0 = initial_total_mass(problem, mesh, snapshot)

    prev = (problem.u_B0, problem.u_S0)
    records = []
    field_snaps = {}
    state = None
    cslab = None
    substep = 0
    t = 0.0
    beta = problem.velocity.value
    want_times = sorted(snapshot_times)

    for n in range(1, n_slabs + 1):
        tq = newton_cotes(3, (n - 1) * k, n * k)
        snaps = [snapshot]
        for _ in range(2):
            fld = advect_levelset_cn_supg(fld, beta, t, 0.5 * k)
            t += 0.5 * k
            substep += 1
            if redistance_every and substep % redistance_every == 0:
                fld = redistance_geometric(fld)
            snapshot = extract_zero_contour(fld, t)
            snaps.append(snapshot)
        bulk = build_active_bulk_mesh(space, n, tq, snaps)
        surf = build_active_surface_mesh(space, n, tq, snaps)
        cslab = CoupledSlab(bulk=bulk, surf=surf, time_quadrature=tq, use_multiplier=use_multiplier)
        op = build_slab_operator(problem, cslab, prev=prev, u_bar0=u_bar0)

        x0 = _initial_guess(cslab, prev)
        state, history = newton_solve(op, x0, tol=newton_tol)
        traces = state.traces()
        mass = total_mass(traces, cslab, problem.Da)
        cond = None
        if compute_condition:
            cond = condition_number(op.jacobian(state.flatten(use_multiplier)))
        records.append(
            CoupledStepRecord(
                step=n,
                t=n * k,
                mass=mass,
                mass_error=abs(mass - u_bar0) / abs(u_bar0) if u_bar0 else abs(mass),
                newton_iters=len(history),
                newton_history=history,
                condition=cond,
            )
        )
        prev = ((bulk, traces[0]), (surf, traces[1]))
        while want_times and n * k >= want_times[0] - 1e-12:
            tsnap = want_times.pop(0)
            field_snaps[tsnap] = _field_cloud(cslab, traces)
    return CoupledResult(
        records=records,
        state=state,
        slab=cslab,
        u_bar0=u_bar0,
        wall_time=_time.time() - t0,
        field_snapshots=field_snaps,
    )


def _initial_guess(cslab, prev):
    """Constant-in-time start: the previous trace in mode 0, zero in mode 1."""
    n_b, n_s = cslab.n_b, cslab.n_s
    x0 = np.zeros(cslab.dim)
    if callable(prev[0]):
        x0[:n_b] = prev[0](cslab.bulk.dof_coords)
        x0[2 * n_b : 2 * n_b + n_s] = prev[1](cslab.surf.dof_coords)
        return x0
    # Copy values on dofs shared with the previous slab; new dofs start at 0.
    for (slab, coeffs), off, new_slab in (
        (prev[0], 0, cslab.bulk),
        (prev[1], 2 * n_b, cslab.surf),
    ):
        old = np.zeros(slab.space.n_dofs)
        old[slab.global_dofs] = coeffs
        x0[off : off + new_slab.n_spatial] = old[new_slab.global_dofs]
    return x0


def _field_cloud(cslab, traces):
    """Point-cloud exports: (x, y, u_B) at bulk dofs, (x, y, u_S) on Gamma."""
    ub, us = traces
    bulk_cloud = np.column_stack([cslab.bulk.dof_coords, ub])
    snapshot = cslab.snapshots[-1]
    mids = snapshot.midpoints()
    mesh = cslab.surf.space.mesh
    xi = mesh.reference_coords(snapshot.host, mids)
    vals = cslab.surf.space.basis.eval(xi)
    loc = cslab.surf.local_dofs(snapshot.host)
    us_mid = np.einsum("pa,pa->p", vals, us[loc])
    surf_cloud = np.column_stack([mids, us_mid])
    return {"bulk": bulk_cloud, "surface": surf_cloud}
