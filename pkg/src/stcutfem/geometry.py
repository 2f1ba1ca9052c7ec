"""Interface geometry: level sets, periodic splines, snapshots, cut cells.

The moving interface has two interchangeable representations:

* implicit: a continuous piecewise-linear level set ``phi_h`` on the
  uniformly refined mesh, positive on the side called Omega_2;
* explicit: marker points with a C2-periodic cubic spline through them.

Either way the assembly downstream sees an :class:`InterfaceSnapshot`, a
polyline of straight segments each lying inside one background triangle
with a unit normal per segment. Cut background triangles are decomposed
into sub-triangles covering the two sides for bulk integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from ._kernels import min_dist_to_segments
from .mesh import BackgroundMesh, RefinedMesh

__all__ = [
    "InterfaceLostError",
    "LevelSetField",
    "InterfaceSnapshot",
    "SplineInterface",
    "CutDecomposition",
    "NEGATIVE_SIDE",
    "CUT",
    "POSITIVE_SIDE",
    "extract_zero_contour",
    "classify_elements",
    "decompose_cut_cell",
    "fit_periodic_spline",
    "spline_to_snapshot",
    "closest_point_ellipse",
    "levelset_curvature",
    "points_inside_polyline",
    "enclosed_area",
    "snapshot_to_csv",
]

# Element labels relative to the level-set sign (Omega_2 is the positive side).
NEGATIVE_SIDE = 0  # entirely in Omega_1
CUT = 1
POSITIVE_SIDE = 2  # entirely in Omega_2


class InterfaceLostError(RuntimeError):
    """Raised when a level-set field has no zero contour left."""


@dataclass
class LevelSetField:
    """Continuous piecewise-linear scalar field on a refined mesh."""

    mesh: RefinedMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not isinstance(self.mesh, RefinedMesh):
            raise ValueError("level-set fields live on a RefinedMesh")
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("one nodal value per refined vertex required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite level-set values")

    @property
    def snap_tol(self):
        """Values below this magnitude are treated as positive."""
        return 1e-12 * self.mesh.h

    def snapped(self):
        """Nodal values with near-zero entries snapped to +tol."""
        v = self.values.copy()
        tiny = np.abs(v) < self.snap_tol
        v[tiny] = self.snap_tol
        return v

    def background_vertex_values(self):
        """Values at the vertices of the parent background mesh."""
        return self.values[: self.mesh.parent_mesh.n_vertices]

    def background_centroid_values(self):
        """Exact field value at each background-triangle centroid.

        The parent centroid is also the centroid of the central child, so
        it equals the mean of the three edge-midpoint values.
        """
        bg = self.mesh.parent_mesh
        mid_ids = bg.n_vertices + bg.tri_faces
        return self.values[mid_ids].mean(axis=1)

    def element_gradients(self):
        """Constant spatial gradient of the field per refined triangle."""
        m = self.mesh
        v = self.values[m.triangles]
        d = np.column_stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]])
        return np.einsum("eji,ej->ei", m.tri_invjac, d)

    def evaluate(self, points):
        """Interpolate the field at physical points."""
        pts = np.atleast_2d(points)
        elems = self.mesh.locate(pts)
        if np.any(elems < 0):
            raise ValueError("point outside the mesh")
        xi = self.mesh.reference_coords(elems, pts)
        lam = np.column_stack([1.0 - xi.sum(axis=1), xi])
        out = np.einsum("ej,ej->e", self.values[self.mesh.triangles[elems]], lam)
        return out if np.ndim(points) == 2 else out[0]


@dataclass
class SplineInterface:
    """Closed curve given by markers and a C2-periodic cubic spline."""

    markers: np.ndarray
    knots: np.ndarray  # length M+1, cumulative chord length, knots[0] = 0
    spline: CubicSpline
    h_alpha: float

    @property
    def n_markers(self):
        return len(self.markers)

    @property
    def period(self):
        return float(self.knots[-1])

    def point(self, alpha):
        return self.spline(np.mod(alpha, self.period))

    def derivative(self, alpha, nu=1):
        return self.spline(np.mod(alpha, self.period), nu=nu)

    def normal(self, alpha):
        """Unit normal (-X2', X1')/|X'| from the parametrization."""
        d = np.atleast_2d(self.derivative(alpha))
        n = np.column_stack([-d[:, 1], d[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        return n if np.ndim(alpha) else n[0]

    def speed(self, alpha):
        d = np.atleast_2d(self.derivative(alpha))
        return np.linalg.norm(d, axis=1)


@dataclass
class InterfaceSnapshot:
    """The discrete interface at one time: segments hosted by triangles."""

    segments: np.ndarray  # (S, 2, 2) endpoint pairs
    normals: np.ndarray  # (S, 2) unit normals
    host: np.ndarray  # (S,) background triangle index per segment
    t: float
    fine_host: np.ndarray | None = None  # refined triangle per segment
    levelset: LevelSetField | None = None
    spline: SplineInterface | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_segments(self):
        return len(self.segments)

    def lengths(self):
        d = self.segments[:, 1] - self.segments[:, 0]
        return np.linalg.norm(d, axis=1)

    def midpoints(self):
        return 0.5 * (self.segments[:, 0] + self.segments[:, 1])

    def total_length(self):
        return float(self.lengths().sum())

    def cut_elements(self):
        """Sorted unique background triangles hosting a segment."""
        return np.unique(self.host)


@dataclass
class CutDecomposition:
    """Sub-triangulation of one cut background triangle.

    ``side_neg`` covers the intersection with Omega_1 (phi < 0) and
    ``side_pos`` with Omega_2; arrays have shape (k, 3, 2).
    """

    parent: int
    side_neg: np.ndarray
    side_pos: np.ndarray

    def side(self, positive):
        return self.side_pos if positive else self.side_neg

    def areas(self):
        def _a(tris):
            if len(tris) == 0:
                return 0.0
            d1 = tris[:, 1] - tris[:, 0]
            d2 = tris[:, 2] - tris[:, 0]
            return float(np.abs(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])).sum())

        return _a(self.side_neg), _a(self.side_pos)


# -- level-set contouring --------------------------------------------------


def _rot90ccw(v):
    return np.column_stack([-v[:, 1], v[:, 0]])


def extract_zero_contour(fld, t=0.0):
    """March the refined triangles of ``fld`` and collect zero-line segments.

    Each refined triangle with mixed nodal signs contributes one segment
    with endpoints located by linear interpolation along the crossed edges.
    The per-segment normal is the normalized field gradient on that
    triangle; the host is the parent background triangle. Nodal values
    within the snap tolerance of zero count as positive, which makes the
    contour topology deterministic.
    """
    m = fld.mesh
    vals = fld.snapped()
    tv = vals[m.triangles]  # (nt, 3)
    pos = tv > 0.0
    npos = pos.sum(axis=1)
    cut = (npos == 1) | (npos == 2)
    if not np.any(cut):
        raise InterfaceLostError("interface lost: level set has uniform sign")

    tris = np.flatnonzero(cut)
    tvc = tv[tris]
    odd_is_pos = npos[tris] == 1
    odd = np.where(odd_is_pos, np.argmax(pos[tris], axis=1), np.argmin(pos[tris], axis=1))
    nxt = (odd + 1) % 3
    prv = (odd + 2) % 3
    rows = np.arange(len(tris))
    conn = m.triangles[tris]
    v_odd = m.vertices[conn[rows, odd]]
    v_nxt = m.vertices[conn[rows, nxt]]
    v_prv = m.vertices[conn[rows, prv]]
    f_odd = tvc[rows, odd]
    f_nxt = tvc[rows, nxt]
    f_prv = tvc[rows, prv]
    s1 = f_odd / (f_odd - f_nxt)
    s2 = f_odd / (f_odd - f_prv)
    p1 = v_odd + s1[:, None] * (v_nxt - v_odd)
    p2 = v_odd + s2[:, None] * (v_prv - v_odd)

    grads = fld.element_gradients()[tris]
    norms = np.linalg.norm(grads, axis=1)
    normals = grads / norms[:, None]

    # Orient segments head-to-tail: tangent agrees with the 90deg CCW
    # rotation of the normal, so unordered segments still chain coherently.
    segs = np.stack([p1, p2], axis=1)
    tang = p2 - p1
    flip = np.einsum("ij,ij->i", tang, _rot90ccw(normals)) < 0.0
    segs[flip] = segs[flip][:, ::-1, :]

    return InterfaceSnapshot(
        segments=segs,
        normals=normals,
        host=m.parent[tris],
        t=float(t),
        fine_host=tris,
        levelset=fld,
    )


def points_inside_polyline(points, segments, chunk=2048):
    """Even-odd (ray crossing) inside test against a closed polyline."""
    pts = np.atleast_2d(points)
    a = segments[:, 0]
    b = segments[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, len(pts), chunk):
            p = pts[s : s + chunk]
            ya = a[None, :, 1]
            yb = b[None, :, 1]
            py = p[:, None, 1]
            straddle = (ya > py) != (yb > py)
            xcross = a[None, :, 0] + (py - ya) * (b[None, :, 0] - a[None, :, 0]) / (yb - ya)
            hits = straddle & (p[:, None, 0] < xcross)
            inside[s : s + chunk] = hits.sum(axis=1) % 2 == 1
    return inside if np.ndim(points) == 2 else bool(inside[0])


def classify_elements(snapshot, mesh):
    """Label every background triangle NEGATIVE_SIDE, CUT or POSITIVE_SIDE.

    A triangle is cut iff it hosts a snapshot segment. Uncut triangles are
    labelled by the level-set sign at their centroid when the snapshot came
    from a level set, otherwise by an even-odd test against the polyline
    (inside counts as the positive side).
    """
    key = ("classify", id(mesh))
    if key in snapshot._cache:
        return snapshot._cache[key]
    labels = np.full(mesh.n_triangles, NEGATIVE_SIDE, dtype=np.int8)
    labels[snapshot.host] = CUT
    uncut = labels != CUT
    if snapshot.levelset is not None:
        cen = snapshot.levelset.background_centroid_values()
        labels[uncut & (cen > 0.0)] = POSITIVE_SIDE
    else:
        idx = np.flatnonzero(uncut)
        ins = points_inside_polyline(mesh.tri_centroid[idx], snapshot.segments)
        labels[idx[ins]] = POSITIVE_SIDE
    snapshot._cache[key] = labels
    return labels


def _orient_ccw(tri):
    d1 = tri[1] - tri[0]
    d2 = tri[2] - tri[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0.0:
        return tri[[0, 2, 1]]
    return tri


def decompose_cut_cell(tri_index, snapshot):
    """Split one cut background triangle into per-side sub-triangles.

    Works on the 4 refined children: each child is whole or split by its
    single contour segment into one triangle plus a quadrilateral (two
    triangles). Slivers thinner than 1e-14 * h^2 are merged into the
    dominant side so both side areas always sum to the parent area.
    """
    fld = snapshot.levelset
    if fld is None:
        raise ValueError("cut-cell decomposition requires a level-set snapshot")
    key = ("decomp", int(tri_index))
    if key in snapshot._cache:
        return snapshot._cache[key]

    m = fld.mesh
    vals = fld.snapped()
    tiny = 1e-14 * m.parent_mesh.h ** 2
    neg, pos = [], []
    for child in range(4 * tri_index, 4 * tri_index + 4):
        conn = m.triangles[child]
        v = m.vertices[conn]
        f = vals[conn]
        p = f > 0.0
        np_pos = int(p.sum())
        if np_pos == 3:
            pos.append(_orient_ccw(v))
            continue
        if np_pos == 0:
            neg.append(_orient_ccw(v))
            continue
        odd = int(np.argmax(p)) if np_pos == 1 else int(np.argmin(p))
        nxt, prv = (odd + 1) % 3, (odd + 2) % 3
        s1 = f[odd] / (f[odd] - f[nxt])
        s2 = f[odd] / (f[odd] - f[prv])
        q1 = v[odd] + s1 * (v[nxt] - v[odd])
        q2 = v[odd] + s2 * (v[prv] - v[odd])
        cap = np.array([v[odd], q1, q2])
        quad1 = np.array([q1, v[nxt], v[prv]])
        quad2 = np.array([q1, v[prv], q2])

        def _area(t):
            return abs(
                0.5
                * (
                    (t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1])
                    - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0])
                )
            )

        cap_side = pos if p[odd] else neg
        other_side = neg if p[odd] else pos
        cap_area = _area(cap)
        quad_area = _area(quad1) + _area(quad2)
        if cap_area < tiny:
            other_side.append(_orient_ccw(v))
        elif quad_area < tiny:
            cap_side.append(_orient_ccw(v))
        else:
            cap_side.append(_orient_ccw(cap))
            other_side.append(_orient_ccw(quad1))
            other_side.append(_orient_ccw(quad2))

    empty = np.empty((0, 3, 2))
    out = CutDecomposition(
        parent=int(tri_index),
        side_neg=np.array(neg) if neg else empty,
        side_pos=np.array(pos) if pos else empty,
    )
    snapshot._cache[key] = out
    return out


# -- explicit (spline) representation ---------------------------------------


def fit_periodic_spline(markers):
    """C2-periodic cubic spline through closed marker points.

    Knots are cumulative chord lengths; the marker list must not repeat
    the first point at the end.
    """
    pts = np.asarray(markers, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("need at least 4 distinct 2D markers")
    closed = np.vstack([pts, pts[:1]])
    chord = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    if chord.min() <= 0.0:
        raise ValueError("duplicated consecutive markers")
    knots = np.concatenate([[0.0], np.cumsum(chord)])
    spline = CubicSpline(knots, closed, bc_type="periodic", axis=0)
    return SplineInterface(
        markers=pts, knots=knots, spline=spline, h_alpha=float(knots[-1] / len(pts))
    )


def _clip_chord(mesh, p0, h0, a0, p1, h1, a1, out, depth=0):
    """Append sub-chords of p0-p1 so each lies in one triangle.

    Marches the chord from triangle to triangle, splitting exactly at the
    crossed edges; vertex hits are resolved by locating a probe point just
    past the crossing. Degenerate slivers are dropped.
    """
    x0, y0 = float(p0[0]), float(p0[1])
    dx, dy = float(p1[0]) - x0, float(p1[1]) - y0
    length = (dx * dx + dy * dy) ** 0.5
    min_dt = (1e-13 * mesh.h) / max(length, 1e-300)
    verts = mesh.vertices
    tris = mesh.triangles

    def emit(ta, tb, h):
        if tb - ta > min_dt:
            qa = np.array([x0 + ta * dx, y0 + ta * dy])
            qb = np.array([x0 + tb * dx, y0 + tb * dy])
            am = a0 + 0.5 * (ta + tb) * (a1 - a0)
            out.append((qa, qb, h, am))

    h = int(h0)
    t = 0.0
    for _ in range(4 * len(tris)):
        conn = tris[h]
        ax_, ay_ = verts[conn[0], 0], verts[conn[0], 1]
        bx_, by_ = verts[conn[1], 0], verts[conn[1], 1]
        cx_, cy_ = verts[conn[2], 0], verts[conn[2], 1]
        t_exit = np.inf
        edge = -1
        for e, (pax, pay, pbx, pby) in enumerate(
            ((ax_, ay_, bx_, by_), (bx_, by_, cx_, cy_), (cx_, cy_, ax_, ay_))
        ):
            ex, ey = pbx - pax, pby - pay
            gd = ex * dy - ey * dx
            if gd >= -1e-300:
                continue  # not moving out across this edge
            g0 = ex * (y0 - pay) - ey * (x0 - pax)
            te = -g0 / gd
            if te > t - 1e-12 and te < t_exit:
                t_exit = te
                edge = e
        if t_exit >= 1.0 - 1e-12:
            emit(t, 1.0, h)
            return
        emit(t, t_exit, h)
        t = t_exit
        face = mesh.tri_faces[h, edge]
        ft = mesh.face_tris[face]
        nxt = int(ft[1] if ft[0] == h else ft[0])
        if nxt < 0:
            raise ValueError("chord leaves the background mesh")
        # Vertex hits can skip a triangle; verify with a probe point.
        tp = t + 1e-10 if t + 1e-10 < 1.0 else 1.0
        probe = np.array([x0 + tp * dx, y0 + tp * dy])
        xi = mesh.reference_coords(np.array([nxt]), probe[None, :])[0]
        if min(xi[0], xi[1], 1.0 - xi[0] - xi[1]) < -1e-9:
            nxt = int(mesh.locate(probe[None, :])[0])
            if nxt < 0:
                raise ValueError("chord leaves the background mesh")
        h = nxt
    raise RuntimeError("chord clipping failed to terminate")


def spline_to_snapshot(spline, mesh, samples_per_knot=8, t=0.0):
    """Sample the spline into chords clipped to single background triangles.

    Normals are evaluated from the spline at the (parameter) midpoint of
    each emitted segment, so the spline's higher-order accuracy enters the
    otherwise piecewise-linear snapshot through endpoints and normals.
    """
    if samples_per_knot < 2:
        raise ValueError("need at least 2 samples per knot interval")
    knots = spline.knots
    sub = np.linspace(0.0, 1.0, samples_per_knot, endpoint=False)
    alphas = (knots[:-1, None] + np.diff(knots)[:, None] * sub[None, :]).ravel()
    alphas = np.append(alphas, knots[-1])
    pts = np.atleast_2d(spline.spline(alphas))
    hosts = mesh.locate(pts)
    if np.any(hosts < 0):
        raise ValueError("spline leaves the background mesh")

    chords = []
    for i in range(len(alphas) - 1):
        _clip_chord(
            mesh,
            pts[i],
            int(hosts[i]),
            alphas[i],
            pts[i + 1],
            int(hosts[i + 1]),
            alphas[i + 1],
            chords,
        )
    min_len = 1e-14 * mesh.h
    chords = [c for c in chords if np.linalg.norm(c[1] - c[0]) > min_len]
    segs = np.array([[c[0], c[1]] for c in chords])
    host = np.array([c[2] for c in chords], dtype=np.int64)
    amid = np.array([c[3] for c in chords])
    normals = np.atleast_2d(spline.normal(amid))
    return InterfaceSnapshot(
        segments=segs, normals=normals, host=host, t=float(t), spline=spline
    )


# -- analytic geometry helpers ----------------------------------------------


def closest_point_ellipse(x, a):
    """Closest point on the ellipse (a cos s, sin s) and its unit normal.

    Safeguarded Newton on the stationarity equation of the squared
    distance; falls back to golden-section search on a 64-point scan when
    Newton stalls. The normal is the normalized gradient of
    x1^2/a^2 + x2^2 - 1 at the projected point.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)

    def g(alpha, px, py):
        return (
            -a * px * np.sin(alpha)
            + py * np.cos(alpha)
            + (a * a - 1.0) * np.sin(alpha) * np.cos(alpha)
        )

    def dg(alpha, px, py):
        return (
            -a * px * np.cos(alpha)
            - py * np.sin(alpha)
            + (a * a - 1.0) * np.cos(2.0 * alpha)
        )

    px, py = pts[:, 0], pts[:, 1]
    alpha = np.arctan2(py, px / a)
    for _ in range(50):
        r = g(alpha, px, py)
        if np.all(np.abs(r) < 1e-13):
            break
        d = dg(alpha, px, py)
        d = np.where(np.abs(d) < 1e-300, 1e-300, d)
        step = np.clip(r / d, -0.5, 0.5)
        alpha = alpha - step

    bad = np.abs(g(alpha, px, py)) >= 1e-12
    for i in np.flatnonzero(bad):
        alpha[i] = _closest_param_scan(pts[i], a)

    proj = np.column_stack([a * np.cos(alpha), np.sin(alpha)])
    grad = np.column_stack([2.0 * proj[:, 0] / a**2, 2.0 * proj[:, 1]])
    normal = grad / np.linalg.norm(grad, axis=1)[:, None]
    if single:
        return proj[0], normal[0]
    return proj, normal


def _closest_param_scan(pt, a, n_scan=64):
    """Golden-section refinement of a dense parametric scan."""
    s = np.linspace(0.0, 2.0 * np.pi, n_scan, endpoint=False)

    def dist2(alpha):
        return (pt[0] - a * np.cos(alpha)) ** 2 + (pt[1] - np.sin(alpha)) ** 2

    k = int(np.argmin(dist2(s)))
    lo = s[k] - 2.0 * np.pi / n_scan
    hi = s[k] + 2.0 * np.pi / n_scan
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    for _ in range(200):
        if dist2(c) < dist2(d):
            hi = d
        else:
            lo = c
        c = hi - invphi * (hi - lo)
        d = lo + invphi * (hi - lo)
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def levelset_curvature(levelset, t, x):
    """Curvature div(grad phi / |grad phi|) of an analytic level set."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.atleast_2d(levelset.grad(t, pts))
    H = levelset.hess(t, pts).reshape(-1, 2, 2)
    gx, gy = g[:, 0], g[:, 1]
    norm2 = gx * gx + gy * gy
    if np.any(norm2 <= 1e-20):
        raise ValueError("vanishing level-set gradient")
    kappa = (
        H[:, 0, 0] * gy * gy - 2.0 * gx * gy * H[:, 0, 1] + H[:, 1, 1] * gx * gx
    ) / norm2**1.5
    return kappa if np.ndim(x) == 2 else float(kappa[0])


# -- diagnostics -------------------------------------------------------------


def enclosed_area(snapshot):
    """Area enclosed by the snapshot polyline (shoelace over segments)."""
    a = snapshot.segments[:, 0]
    b = snapshot.segments[:, 1]
    return float(abs(0.5 * np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])))


def signed_distance_to_snapshot(points, snapshot, inside_positive=True):
    """Signed distance from points to the snapshot polyline."""
    d = min_dist_to_segments(points, snapshot.segments[:, 0], snapshot.segments[:, 1])
    inside = points_inside_polyline(points, snapshot.segments)
    sign = np.where(inside, 1.0, -1.0) if inside_positive else np.where(inside, -1.0, 1.0)
    return sign * d


def snapshot_to_csv(snapshot, path):
    """Write segments as CSV rows for plotting."""
    header = "t,x1_start,y1_start,x1_end,y1_end,nx,ny,host_element"
    rows = np.column_stack(
        [
            np.full(snapshot.n_segments, snapshot.t),
            snapshot.segments[:, 0, 0],
            snapshot.segments[:, 0, 1],
            snapshot.segments[:, 1, 0],
            snapshot.segments[:, 1, 1],
            snapshot.normals[:, 0],
            snapshot.normals[:, 1],
            snapshot.host.astype(float),
        ]
    )
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
