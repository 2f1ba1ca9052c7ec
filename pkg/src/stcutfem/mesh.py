"""Fixed background triangulations of a rectangular box.

The solvers in this package never remesh: all geometry lives on a fixed
quasiuniform triangulation built once with :func:`build_uniform_mesh`, plus
one uniform (red) refinement of it used to resolve the interface.
Meshes are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "BackgroundMesh",
    "RefinedMesh",
    "build_uniform_mesh",
    "refine_once",
    "internal_faces",
]


class BackgroundMesh:
    """Triangulation of a rectangle with full face connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
        Vertex indices, counterclockwise.
    face_vertices : (nf, 2) int array
        Endpoints of each unique edge.
    face_tris : (nf, 2) int array
        Adjacent triangle indices per face, sorted ascending; second entry
        is -1 for boundary faces.
    face_normals : (nf, 2) float array
        Unit normal per face, oriented from the lower-indexed adjacent
        triangle toward the other side.
    tri_faces : (nt, 3) int array
        Face index of the edges (v0,v1), (v1,v2), (v2,v0) of each triangle.
    h : float
        Longest edge length in the mesh.
    grid : tuple or None
        ((xmin, xmax, ymin, ymax), n) for meshes built by
        :func:`build_uniform_mesh`; enables O(1) point location.
    """

    def __init__(self, vertices, triangles, grid=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.grid = grid
        self._build_geometry()
        self._build_faces()

    # -- construction -----------------------------------------------------

    def _build_geometry(self):
        v = self.vertices[self.triangles]  # (nt, 3, 2)
        self.tri_origin = v[:, 0, :].copy()
        # Jacobian columns are the two edge vectors from vertex 0.
        jac = np.empty((len(v), 2, 2))
        jac[:, :, 0] = v[:, 1, :] - v[:, 0, :]
        jac[:, :, 1] = v[:, 2, :] - v[:, 0, :]
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0.0):
            bad = int(np.argmax(det <= 0.0))
            raise ValueError(f"triangle {bad} is degenerate or clockwise")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        self.tri_jac = jac
        self.tri_invjac = inv
        self.tri_det = det
        self.tri_area = 0.5 * det
        self.tri_centroid = v.mean(axis=1)
        edges = v[:, [1, 2, 0], :] - v  # (nt, 3, 2)
        self.h = float(np.sqrt((edges**2).sum(axis=2).max()))

    def _build_faces(self):
        nt = len(self.triangles)
        # Edges in local order (v0,v1), (v1,v2), (v2,v0).
        e = self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        e_sorted = np.sort(e, axis=1)
        faces, inverse = np.unique(e_sorted, axis=0, return_inverse=True)
        self.face_vertices = faces
        self.tri_faces = inverse.reshape(nt, 3)

        nf = len(faces)
        face_tris = np.full((nf, 2), -1, dtype=np.int64)
        tri_ids = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        f_sorted = inverse[order]
        t_sorted = tri_ids[order]
        starts = np.searchsorted(f_sorted, np.arange(nf))
        counts = np.bincount(f_sorted, minlength=nf)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: a face has >2 adjacent triangles")
        face_tris[:, 0] = t_sorted[starts]
        has2 = counts == 2
        face_tris[has2, 1] = t_sorted[starts[has2] + 1]
        face_tris[has2] = np.sort(face_tris[has2], axis=1)
        self.face_tris = face_tris

        p0 = self.vertices[faces[:, 0]]
        p1 = self.vertices[faces[:, 1]]
        tang = p1 - p0
        tang /= np.linalg.norm(tang, axis=1)[:, None]
        normals = np.column_stack([tang[:, 1], -tang[:, 0]])
        # Orient away from the lower-indexed adjacent triangle.
        mid = 0.5 * (p0 + p1)
        cen = self.tri_centroid[face_tris[:, 0]]
        flip = np.einsum("ij,ij->i", normals, mid - cen) < 0.0
        normals[flip] *= -1.0
        self.face_normals = normals

    # -- queries -----------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_faces(self):
        return len(self.face_vertices)

    @property
    def cell_width(self):
        """Grid cell width (box side / n) for uniform meshes, else None."""
        if self.grid is None:
            return None
        (xmin, xmax, _, _), n = self.grid
        return (xmax - xmin) / n

    def boundary_faces(self):
        return np.flatnonzero(self.face_tris[:, 1] < 0)

    def reference_coords(self, elems, points):
        """Map physical points to reference coordinates of their elements."""
        d = points - self.tri_origin[elems]
        return np.einsum("eij,ej->ei", self.tri_invjac[elems], d)

    def locate(self, points):
        """Return the triangle index containing each point (-1 if outside).

        Requires grid metadata (meshes from :func:`build_uniform_mesh`).
        Points on a cell diagonal resolve to the lower triangle.
        """
        if self.grid is None:
            raise ValueError("point location requires a structured mesh")
        (xmin, xmax, ymin, ymax), n = self.grid
        pts = np.atleast_2d(points)
        wx = (xmax - xmin) / n
        wy = (ymax - ymin) / n
        fx = (pts[:, 0] - xmin) / wx
        fy = (pts[:, 1] - ymin) / wy
        ix = np.clip(np.floor(fx).astype(np.int64), 0, n - 1)
        iy = np.clip(np.floor(fy).astype(np.int64), 0, n - 1)
        sx = fx - ix
        sy = fy - iy
        tri = 2 * (iy * n + ix) + (sy > sx)
        eps = 1e-12
        outside = (fx < -eps) | (fx > n + eps) | (fy < -eps) | (fy > n + eps)
        tri[outside] = -1
        return tri if points.ndim == 2 else tri[0]


class RefinedMesh(BackgroundMesh):
    """Uniform (red) refinement of a background mesh.

    Children of parent triangle ``i`` are triangles ``4i .. 4i+3``.
    """

    def __init__(self, vertices, triangles, parent, parent_mesh):
        self.parent = np.ascontiguousarray(parent, dtype=np.int64)
        self.parent_mesh = parent_mesh
        super().__init__(vertices, triangles, grid=None)

    def locate(self, points):
        """Locate points via the parent mesh, then scan the 4 children."""
        pts = np.atleast_2d(points)
        par = self.parent_mesh.locate(pts)
        out = np.full(len(pts), -1, dtype=np.int64)
        ok = par >= 0
        if np.any(ok):
            idx = np.flatnonzero(ok)
            cand = (4 * par[idx])[:, None] + np.arange(4)[None, :]  # (k, 4)
            best = np.full(len(idx), -1e300)
            choice = np.zeros(len(idx), dtype=np.int64)
            for c in range(4):
                elems = cand[:, c]
                xi = self.reference_coords(elems, pts[idx])
                m = np.minimum(np.minimum(xi[:, 0], xi[:, 1]), 1.0 - xi.sum(axis=1))
                take = m > best
                best[take] = m[take]
                choice[take] = elems[take]
            out[idx] = choice
        return out if points.ndim == 2 else out[0]


def build_uniform_mesh(box, n):
    """Triangulate ``box`` into 2*n^2 triangles on an n-by-n grid.

    Every grid cell is split along its bottom-left to top-right diagonal,
    so construction is fully deterministic.

    Parameters
    ----------
    box : (xmin, xmax, ymin, ymax)
    n : int
        Subdivisions per axis, at least 2.
    """
    xmin, xmax, ymin, ymax = (float(b) for b in box)
    n = int(n)
    if n < 2:
        raise ValueError("need at least 2 subdivisions per axis")
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("degenerate box")

    xs = np.linspace(xmin, xmax, n + 1)
    ys = np.linspace(ymin, ymax, n + 1)
    X, Y = np.meshgrid(xs, ys)  # row-major in y
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ix, iy = np.meshgrid(np.arange(n), np.arange(n))
    ix = ix.ravel()
    iy = iy.ravel()
    v00 = iy * (n + 1) + ix
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    cell = iy * n + ix
    triangles[2 * cell] = lower
    triangles[2 * cell + 1] = upper
    return BackgroundMesh(vertices, triangles, grid=((xmin, xmax, ymin, ymax), n))


def refine_once(mesh):
    """Red-refine every triangle once (4 children per parent).

    New vertices are the edge midpoints; parent vertices keep their indices.
    """
    nv = mesh.n_vertices
    mids = 0.5 * (
        mesh.vertices[mesh.face_vertices[:, 0]] + mesh.vertices[mesh.face_vertices[:, 1]]
    )
    vertices = np.vstack([mesh.vertices, mids])

    t = mesh.triangles
    m01 = nv + mesh.tri_faces[:, 0]
    m12 = nv + mesh.tri_faces[:, 1]
    m20 = nv + mesh.tri_faces[:, 2]
    nt = len(t)
    children = np.empty((4 * nt, 3), dtype=np.int64)
    children[0::4] = np.column_stack([t[:, 0], m01, m20])
    children[1::4] = np.column_stack([m01, t[:, 1], m12])
    children[2::4] = np.column_stack([m20, m12, t[:, 2]])
    children[3::4] = np.column_stack([m01, m12, m20])
    parent = np.repeat(np.arange(nt), 4)
    return RefinedMesh(vertices, children, parent, mesh)


def internal_faces(mesh, element_set):
    """Faces whose two adjacent triangles both lie in ``element_set``."""
    elems = np.asarray(sorted(element_set), dtype=np.int64)
    if elems.size == 0:
        raise ValueError("empty element set")
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[elems] = True
    ft = mesh.face_tris
    both = (ft[:, 1] >= 0) & mask[ft[:, 0]] & mask[np.maximum(ft[:, 1], 0)]
    return np.flatnonzero(both)
