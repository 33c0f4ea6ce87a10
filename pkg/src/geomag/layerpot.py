"""
Piecewise-constant collocation of the Laplace layer potentials on closed
triangulated surfaces.

The fundamental solution is ``G(x) = -1 / (4 pi |x|)``.  Densities are
constant on each flat panel and collocated at panel centroids.  The
Neumann-Poincare operator ``K*`` has kernel ``d G(x - y) / d nu_x``; its
self-panel entry vanishes for flat panels, so the diagonal is calibrated
from the Gauss identity instead (see :func:`assemble_K_star`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import AccuracyError, DomainError, MeshError, MeshParseError, OpenSurfaceError, ResonanceError

__all__ = [
    "TriMesh",
    "NPOperator",
    "make_unit_sphere_mesh",
    "load_mesh",
    "write_off",
    "assemble_K_star",
    "resolvent_apply",
    "eval_single_layer_grad",
]


MIN_PANEL_AREA = 1e-14
# Discrete NP eigenvalues carry an O(h^2) mesh error (about 1e-3 at 1280
# panels), so resonance is judged against the continuum spectrum with a
# tolerance above that error.
RESONANCE_TOL = 1e-2


@dataclass(frozen=True)
class TriMesh:
    """Closed, outward-oriented triangulated surface.

    Construct through :meth:`from_arrays`, which validates the surface and
    fills the per-panel geometry.
    """

    vertices: np.ndarray
    faces: np.ndarray
    centroids: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    areas: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, vertices, faces, fix_orientation=True):
        v = np.array(vertices, dtype=float)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("vertices must be (V, 3) and faces (F, 3)")
        if len(f) == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        _check_closed(f)
        p = v[f]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(areas < MIN_PANEL_AREA):
            raise MeshError(f"degenerate panel (area < {MIN_PANEL_AREA:g})")
        normals = cross / (2 * areas[:, None])
        centroids = p.mean(axis=1)
        volume = np.sum(np.einsum("ij,ij->i", centroids, normals) * areas) / 3
        if volume <= 0:
            if not fix_orientation:
                raise MeshError("normals point inward")
            warnings.warn("mesh normals point inward; orientation flipped", stacklevel=2)
            f = f[:, ::-1].copy()
            normals = -normals
        for arr in (v, f, centroids, normals, areas):
            arr.setflags(write=False)
        return cls(v, f, centroids, normals, areas)

    @property
    def n_panels(self):
        return len(self.faces)

    @property
    def area(self):
        return float(self.areas.sum())

    @property
    def volume(self):
        """Enclosed volume from the divergence theorem, ``int x . nu / 3``."""
        return float(np.sum(np.einsum("ij,ij->i", self.centroids, self.normals) * self.areas) / 3)

    @property
    def diameters(self):
        """Longest edge of each panel."""
        p = self.vertices[self.faces]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def scaled(self, s, shift=(0.0, 0.0, 0.0)):
        """Copy of the mesh mapped by ``x -> s x + shift`` (``s > 0``)."""
        if s <= 0:
            raise DomainError("scale factor must be positive")
        return TriMesh.from_arrays(s * self.vertices + np.asarray(shift, float), self.faces)


def _check_closed(faces):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    # Every directed edge must appear once and its reverse once.
    keys = np.sort(edges, axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise OpenSurfaceError(
            f"{int(np.sum(counts == 1))} boundary edge(s), "
            f"{int(np.sum(counts > 2))} non-manifold edge(s)"
        )
    _, dcounts = np.unique(edges, axis=0, return_counts=True)
    if np.any(dcounts != 1):
        raise MeshError("inconsistent face orientation")


_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def make_unit_sphere_mesh(refinement=0):
    """Icosphere with ``20 * 4**refinement`` panels, vertices on the unit sphere."""
    refinement = int(refinement)
    if not 0 <= refinement <= 6:
        raise DomainError("refinement must lie in 0..6")
    t = (1 + 5**0.5) / 2
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    verts = list(v / np.linalg.norm(v, axis=1)[:, None])
    faces = _ICO_FACES
    for _ in range(refinement):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new)
    return TriMesh.from_arrays(np.array(verts), faces)


def load_mesh(path):
    """Read an ASCII OFF file (triangles only, 0-based indices).

    Inward-oriented surfaces are flipped with a warning; open surfaces raise
    :class:`OpenSurfaceError`.
    """
    try:
        with open(path) as fh:
            lines = [ln.split("#", 1)[0].strip() for ln in fh]
    except OSError as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    tokens = " ".join(ln for ln in lines if ln).split()
    if not tokens or tokens[0] != "OFF":
        raise MeshParseError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        body = np.array(tokens[pos : pos + 4 * nf], dtype=np.int64).reshape(nf, 4)
    except (IndexError, ValueError) as exc:
        raise MeshParseError(f"{path}: malformed OFF body ({exc})") from exc
    if np.any(body[:, 0] != 3):
        raise MeshParseError(f"{path}: only triangular faces are supported")
    if len(tokens) != pos + 4 * nf:
        raise MeshParseError(f"{path}: trailing or missing tokens")
    return TriMesh.from_arrays(verts, body[:, 1:])


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(mesh.vertices)} {mesh.n_panels} 0\n")
        for p in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


class NPOperator:
    """Assembled ``K*`` matrix with cached factorizations.

    The matrix itself is read-only.  LU factors and the eigendecomposition
    are computed lazily and cached, so an operator must not be solved from
    several threads at once.
    """

    def __init__(self, mesh, matrix):
        self.mesh = mesh
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self._lu = {}
        self._eig = None

    @property
    def n(self):
        return self.matrix.shape[0]

    def eigenvalues(self):
        return self._eigsystem()[0]

    def _eigsystem(self):
        if self._eig is None:
            w, vl, vr = sla.eig(self.matrix, left=True, right=True)
            # Normalize so that vl[:, k]^H vr[:, k] = 1.
            scale = np.einsum("ik,ik->k", vl.conj(), vr)
            self._eig = (w, vl / scale.conj(), vr)
        return self._eig

    def factor(self, lam, sign):
        """LU factors of ``lam I + sign K*`` (cached per ``(lam, sign)``)."""
        lam = complex(lam)
        key = (lam, int(sign))
        if key not in self._lu:
            shift = lam if lam.imag else lam.real
            a = sign * self.matrix + shift * np.eye(self.n)
            self._lu[key] = sla.lu_factor(a, check_finite=False)
        return self._lu[key]


def assemble_K_star(mesh):
    """Collocation matrix of ``K*`` on ``mesh``.

    Off-diagonal entries use the centroid rule,
    ``K[i, j] = A_j nu_i . (x_i - x_j) / (4 pi |x_i - x_j|^3)``.
    The flat-panel self term is zero; the diagonal is replaced by the value
    that makes ``int (1/2 I - K*)[phi] ds`` vanish for every density, i.e.
    ``A^T (K - I/2) = 0``.  This is the discrete form of
    ``int_{dD} d S[phi] / d nu |_- = 0`` and, applied to constants, of the
    Gauss identity.
    """
    if not isinstance(mesh, TriMesh):
        raise MeshError("assemble_K_star expects a TriMesh")
    c, nu, a = mesh.centroids, mesh.normals, mesh.areas
    d = c[:, None, :] - c[None, :, :]
    r = np.linalg.norm(d, axis=2)
    np.fill_diagonal(r, 1.0)
    k = np.einsum("ik,ijk->ij", nu, d) / (4 * np.pi * r**3) * a[None, :]
    np.fill_diagonal(k, 0.0)
    k[np.diag_indices_from(k)] = 0.5 - (a @ k) / a
    return NPOperator(mesh, k)


def resolvent_apply(op, lam, sign, rhs, resonance_tol=RESONANCE_TOL):
    """Solve ``(lam I + sign K*) psi = rhs``.

    Raises :class:`ResonanceError` when ``lam`` sits within ``resonance_tol``
    of ``-sign * mu`` for an eigenvalue ``mu`` of ``K*`` whose mode is excited
    by ``rhs``.  Modes orthogonal to ``rhs`` (for example the equilibrium
    density against a zero-mean right-hand side) are not a resonance.
    """
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    rhs = np.asarray(rhs)
    if rhs.shape[0] != op.n:
        raise DomainError(f"density has {rhs.shape[0]} entries, mesh has {op.n} panels")
    lam = complex(lam)
    if abs(lam) <= 0.5 + resonance_tol:
        _check_resonance(op, lam, sign, rhs, resonance_tol)
    lu = op.factor(lam, sign)
    psi = sla.lu_solve(lu, rhs, check_finite=False)
    res = lam * psi + sign * (op.matrix @ psi) - rhs
    scale = np.linalg.norm(rhs)
    if scale > 0 and np.linalg.norm(res) > 1e-10 * scale:
        w = op.eigenvalues()
        near = w[np.argmin(np.abs(lam + sign * w))]
        raise ResonanceError(
            f"resolvent residual {np.linalg.norm(res) / scale:.2e} at lambda={lam}",
            nearest_eigenvalue=near,
        )
    return psi


def _check_resonance(op, lam, sign, rhs, tol):
    w, vl, _ = op._eigsystem()
    gap = np.abs(lam + sign * w)
    close = gap < tol
    if not np.any(close):
        return
    rhs2 = rhs.reshape(op.n, -1)
    scale = np.linalg.norm(rhs2, axis=0).max()
    if scale == 0:
        return
    excite = np.abs(vl[:, close].conj().T @ rhs2).max(axis=1) / scale
    hit = excite > 1e-8
    if np.any(hit):
        idx = np.flatnonzero(close)[hit]
        near = w[idx[np.argmin(gap[idx])]]
        raise ResonanceError(
            f"lambda={lam} is within {tol:g} of NP eigenvalue {near.real:.6g} "
            f"(sign {sign:+d})",
            nearest_eigenvalue=near,
        )


def eval_single_layer_grad(mesh, density, point, min_separation=1.0):
    """Gradient of ``S[phi](x) = int G(x - y) phi(y) ds_y`` off the surface.

    Panel-wise centroid rule.  ``point`` may be a single 3-vector or an
    array of shape (..., 3).  Every point must be farther from every
    centroid than ``min_separation`` panel diameters.
    """
    phi = np.asarray(density)
    if phi.shape[0] != mesh.n_panels:
        raise DomainError("density length does not match the panel count")
    x = np.asarray(point, dtype=float)
    flat = x.reshape(-1, 3)
    d = flat[:, None, :] - mesh.centroids[None, :, :]
    r = np.linalg.norm(d, axis=2)
    h = mesh.diameters.max()
    if np.any(r.min(axis=1) <= min_separation * h):
        raise AccuracyError(
            f"evaluation point within {min_separation:g} panel diameter(s) "
            f"({h:.3g}) of the surface"
        )
    coef = (mesh.areas * phi)[None, :] / (4 * np.pi * r**3)
    out = np.einsum("pj,pjk->pk", coef, d)
    return out.reshape(x.shape[:-1] + (3,)) if x.ndim > 1 else out[0]
