"""
Scalar and vector spherical harmonics on the unit sphere.

Conventions
-----------
* ``Y_n^m`` are the orthonormal complex harmonics with the Condon-Shortley
  phase, ``Y_n^{-m} = (-1)^m conj(Y_n^m)`` and ``int |Y_n^m|^2 ds = 1``.
* Directions are arrays of shape ``(..., 3)``; every evaluator broadcasts
  over the leading axes.
* Surface gradients are obtained from Cartesian derivatives of the regular
  solid harmonics ``R_n^m(x) = |x|^n Y_n^m(x/|x|)``.  The ladder relations
  used for those derivatives only involve values of ``Y``, so nothing is
  singular at the poles.
* Vector harmonics follow the exterior/interior split::

      N^m_{n+1} = (n+1) Y_n^m x - grad_s Y_n^m      (exterior gradients)
      Q^m_{n-1} = grad_s Y_n^m + n Y_n^m x          (interior gradients)
      T^m_n     = grad_s Y_n^m  x  x                (tangential curl)

  All three are indexed here by the degree ``n`` of the generating ``Y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import sph_harm_y

from .errors import DegenerateBasisError, DomainError, PrecisionError

__all__ = [
    "QuadRule",
    "CouplingTables",
    "ProjectionMatrices",
    "to_angles",
    "from_angles",
    "ynm",
    "solid_harmonic",
    "solid_grad",
    "solid_hessian",
    "grad_s_ynm",
    "surface_hessian_ynm",
    "vector_harmonic",
    "sphere_quadrature",
    "coupling_ab",
    "coupling_c",
    "coupling_d",
    "coupling_cd",
    "decompose_A",
    "eval_A",
    "projection_matrices",
    "harmonic_index",
    "solid_table",
    "solid_grad_table",
    "solid_hessian_table",
]

DEFAULT_CUTOFF = 8


def _check_nm(n, m):
    if n < 0 or abs(m) > n:
        raise DomainError(f"invalid spherical harmonic index (n={n}, m={m})")


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError("points must have a trailing axis of length 3")
    return x


def _unit(x):
    x = _as_points(x)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise DomainError("direction vector of zero length")
    return x / r


def to_angles(dirs):
    """Return polar angle theta in [0, pi] and azimuth phi in [0, 2 pi)."""
    d = _as_points(dirs)
    rho = np.hypot(d[..., 0], d[..., 1])
    theta = np.arctan2(rho, d[..., 2])
    phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)
    return theta, phi


def from_angles(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def ynm(n, m, dirs):
    """Orthonormal complex spherical harmonic ``Y_n^m`` at unit directions.

    Parameters
    ----------
    n, m : int
        Degree and order, ``|m| <= n``.
    dirs : array_like, shape (..., 3)
        Directions; they are normalized before evaluation.

    Returns
    -------
    ndarray of complex, shape (...)
    """
    _check_nm(n, m)
    theta, phi = to_angles(_unit(dirs))
    return sph_harm_y(n, m, theta, phi)


def solid_harmonic(n, m, points):
    """Regular solid harmonic ``|x|^n Y_n^m(x/|x|)``; zero outside ``|m|<=n``.

    Defined at the origin as well (``Y_0^0`` for ``n = 0``, zero otherwise).
    """
    p = _as_points(points)
    if n < 0 or abs(m) > n:
        return np.zeros(p.shape[:-1], dtype=complex)
    r = np.linalg.norm(p, axis=-1)
    theta, phi = to_angles(p)
    out = sph_harm_y(n, m, theta, phi) * r**n
    if n == 0:
        out = np.full(p.shape[:-1], 0.5 / np.sqrt(np.pi), dtype=complex)
    return out


@lru_cache(maxsize=None)
def _grad_terms(n, m):
    """Cartesian gradient of ``R_n^m`` as combinations of ``R_{n-1}^{m'}``.

    Returns three tuples (x, y, z components) of ``(coefficient, m')`` pairs.
    """
    if n == 0 or abs(m) > n:
        return ((), (), ())
    s = np.sqrt((2 * n + 1) / (2 * n - 1))
    up = s * np.sqrt((n - m) * (n - m - 1))  # (d/dx + i d/dy) R -> R_{n-1}^{m+1}
    dn = -s * np.sqrt((n + m) * (n + m - 1))  # (d/dx - i d/dy) R -> R_{n-1}^{m-1}
    dz = s * np.sqrt((n - m) * (n + m))
    gx, gy, gz = [], [], []
    if abs(m + 1) <= n - 1 and up != 0:
        gx.append((0.5 * up, m + 1))
        gy.append((-0.5j * up, m + 1))
    if abs(m - 1) <= n - 1 and dn != 0:
        gx.append((0.5 * dn, m - 1))
        gy.append((0.5j * dn, m - 1))
    if abs(m) <= n - 1 and dz != 0:
        gz.append((dz, m))
    return tuple(gx), tuple(gy), tuple(gz)


def solid_grad(n, m, points):
    """Cartesian gradient of the regular solid harmonic ``R_n^m``.

    Returns
    -------
    ndarray of complex, shape (..., 3)
    """
    _check_nm(n, m)
    p = _as_points(points)
    out = np.zeros(p.shape[:-1] + (3,), dtype=complex)
    cache = {}
    for i, terms in enumerate(_grad_terms(n, m)):
        for coef, mp in terms:
            if mp not in cache:
                cache[mp] = solid_harmonic(n - 1, mp, p)
            out[..., i] += coef * cache[mp]
    return out


def solid_hessian(n, m, points):
    """Cartesian Hessian of ``R_n^m``, shape (..., 3, 3)."""
    _check_nm(n, m)
    p = _as_points(points)
    out = np.zeros(p.shape[:-1] + (3, 3), dtype=complex)
    if n < 2:
        return out
    cache = {}
    for i, terms in enumerate(_grad_terms(n, m)):
        for coef, mp in terms:
            for j, inner in enumerate(_grad_terms(n - 1, mp)):
                for coef2, mpp in inner:
                    if mpp not in cache:
                        cache[mpp] = solid_harmonic(n - 2, mpp, p)
                    out[..., i, j] += coef * coef2 * cache[mpp]
    return out


def grad_s_ynm(n, m, dirs):
    """Surface gradient ``grad_s Y_n^m``, a tangential complex 3-vector field."""
    _check_nm(n, m)
    x = _unit(dirs)
    g = solid_grad(n, m, x)
    radial = np.einsum("...i,...i->...", g, x)
    return g - radial[..., None] * x


def surface_hessian_ynm(n, m, dirs):
    """Tangential Jacobian of ``grad_s Y_n^m``: entry (i, j) is ``d_j (grad_s Y)_i``.

    The surface gradient is extended off the sphere as a 0-homogeneous field.
    """
    _check_nm(n, m)
    x = _unit(dirs)
    hess = solid_hessian(n, m, x)
    y = ynm(n, m, x)
    g = grad_s_ynm(n, m, x)
    eye = np.eye(3)
    xx = x[..., :, None] * x[..., None, :]
    radial = g + n * y[..., None] * x
    return (
        hess
        - (n - 1) * radial[..., :, None] * x[..., None, :]
        - n * x[..., :, None] * g[..., None, :]
        - n * y[..., None, None] * (eye - xx)
    )


def vector_harmonic(kind, n, m, dirs):
    """Vector spherical harmonic generated by ``Y_n^m``.

    ``kind='N'`` gives ``N^m_{n+1}`` (n >= 0), ``'Q'`` gives ``Q^m_{n-1}``
    (n >= 1) and ``'T'`` gives ``T^m_n`` (n >= 1).
    """
    kind = str(kind).upper()
    if kind not in ("N", "Q", "T"):
        raise DomainError(f"unknown vector harmonic kind {kind!r}")
    _check_nm(n, m)
    if kind in ("Q", "T") and n < 1:
        raise DomainError(f"{kind} harmonics need degree n >= 1, got n={n}")
    x = _unit(dirs)
    g = grad_s_ynm(n, m, x)
    if kind == "T":
        return np.cross(g, x)
    y = ynm(n, m, x)[..., None]
    if kind == "N":
        return (n + 1) * y * x - g
    return g + n * y * x


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule on the unit sphere.

    Attributes
    ----------
    nodes : ndarray, shape (q, 3)
        Unit directions.
    weights : ndarray, shape (q,)
    degree : int
        Spherical polynomials up to this total degree are integrated exactly.
    level : int
    """

    nodes: np.ndarray
    weights: np.ndarray
    degree: int
    level: int = 0

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Sum ``weights * values`` over the node axis (axis 0)."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=64)
def sphere_quadrature(level):
    """Gauss-Legendre (in cos theta) times uniform azimuth product rule.

    ``level`` Legendre nodes and ``2 * level`` azimuths; exact for spherical
    polynomials of degree ``2 * level - 1``.
    """
    level = int(level)
    if level < 1:
        raise DomainError("quadrature level must be >= 1")
    t, wt = np.polynomial.legendre.leggauss(level)
    phi = np.arange(2 * level) * (np.pi / level)
    theta = np.arccos(t)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    nodes = from_angles(th.ravel(), ph.ravel())
    weights = np.repeat(wt * (np.pi / level), 2 * level)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(nodes, weights, 2 * level - 1, level)


def coupling_ab(np_, mp, n, m, quad):
    """Coupling vectors ``a = int conj(Y_{n'}^{m'}) grad_s Y_n^m`` and
    ``b = int conj(Y_{n'}^{m'}) Y_n^m x`` evaluated with ``quad``."""
    _check_nm(np_, mp)
    _check_nm(n, m)
    if quad.degree < n + np_ + 2:
        raise PrecisionError(
            f"quadrature exactness {quad.degree} < {n + np_ + 2} needed for "
            f"(n'={np_}, n={n})"
        )
    x = quad.nodes
    wy = quad.weights * np.conj(ynm(np_, mp, x))
    a = wy @ grad_s_ynm(n, m, x)
    b = wy @ (ynm(n, m, x)[:, None] * x)
    return a, b


class CouplingTables:
    """Precomputed ``a`` and ``b`` coupling vectors for degrees ``<= cutoff + 1``.

    Both degree indices run to ``cutoff + 1`` so that ``c_{n+1,n}``,
    ``d_{n+1,n}`` and their conjugate partners are available for every
    ``n <= cutoff``.
    """

    def __init__(self, cutoff=DEFAULT_CUTOFF, quad=None):
        self.cutoff = int(cutoff)
        top = self.cutoff + 1
        if quad is None:
            quad = sphere_quadrature(top + 2)
        if quad.degree < 2 * top + 2:
            raise PrecisionError("quadrature too coarse for the coupling tables")
        self.quad = quad
        x = quad.nodes
        self._index = {}
        ys, gs = [], []
        for n in range(top + 1):
            for m in range(-n, n + 1):
                self._index[n, m] = len(ys)
                ys.append(ynm(n, m, x))
                gs.append(grad_s_ynm(n, m, x))
        Y = np.array(ys)  # (k, q)
        G = np.array(gs)  # (k, q, 3)
        wY = np.conj(Y) * quad.weights
        self._a = np.einsum("kq,lqi->kli", wY, G)
        self._b = np.einsum("kq,lq,qi->kli", wY, Y, x)
        self._a.setflags(write=False)
        self._b.setflags(write=False)

    def _idx(self, n, m):
        try:
            return self._index[n, m]
        except KeyError:
            raise DomainError(
                f"(n={n}, m={m}) outside the table (cutoff {self.cutoff})"
            ) from None

    def a(self, np_, mp, n, m):
        return self._a[self._idx(np_, mp), self._idx(n, m)]

    def b(self, np_, mp, n, m):
        return self._b[self._idx(np_, mp), self._idx(n, m)]


def coupling_c(np_, mp, n, m, tables, form="exact"):
    """Component vector ``c_{n',n}^{m',m}`` of ``A_n^m xi`` along ``N^{m'}_{n'+1}``.

    ``form="exact"`` is the projection identity
    ``c = (n'+n+2) (a - (n+1) b) / (2n'+1)``, which reproduces
    ``int conj(N) . A xi / |N|^2`` for every ``n'``.  ``form="printed"`` is the
    textbook expression with the extra conjugate term; it agrees with the
    exact form for ``n' = n+1`` only.
    """
    if np_ < 0:
        raise DomainError("c is undefined for n' < 0")
    a = tables.a(np_, mp, n, m)
    b = tables.b(np_, mp, n, m)
    if form == "exact":
        return (np_ + n + 2) * (a - (n + 1) * b) / (2 * np_ + 1)
    if form != "printed":
        raise DomainError(f"unknown coefficient form {form!r}")
    a_sw = np.conj(tables.a(n, m, np_, mp))
    k = (np_ + 1) * (np_ + n + 1)
    return (k * a - k * (n + 2) * b + a_sw) / ((np_ + 1) * (2 * np_ + 1))


def coupling_d(np_, mp, n, m, tables, form="exact"):
    """Component vector ``d_{n',n}^{m',m}`` of ``A_n^m xi`` along ``Q^{m'}_{n'-1}``."""
    if np_ < 1:
        raise DomainError("d is undefined for n' = 0 (denominator n'(2n'+1))")
    a = tables.a(np_, mp, n, m)
    b = tables.b(np_, mp, n, m)
    if form == "exact":
        return (n + 1 - np_) * (a - (n + 1) * b) / (2 * np_ + 1)
    if form != "printed":
        raise DomainError(f"unknown coefficient form {form!r}")
    a_sw = np.conj(tables.a(n, m, np_, mp))
    j = np_ * (n - np_)
    return (j * a - j * (n + 2) * b - a_sw) / (np_ * (2 * np_ + 1))


def coupling_cd(np_, mp, n, m, tables, form="exact"):
    """Both coefficient vectors ``(c, d)``; requires ``n' >= 1``."""
    return (
        coupling_c(np_, mp, n, m, tables, form),
        coupling_d(np_, mp, n, m, tables, form),
    )


def decompose_A(n, m, xi, dirs, tables, form="exact"):
    """Right-hand side of the ``N``/``Q`` decomposition of ``A_n^m xi``.

    Sums ``(c . xi) N^{m'}_{n'+1} + (d . xi) Q^{m'}_{n'-1}`` over
    ``n' = n -+ 1`` and ``m' = m-1 .. m+1``; terms whose harmonics do not
    exist (negative degree) are skipped.
    """
    xi = np.asarray(xi)
    x = _unit(dirs)
    out = np.zeros(x.shape, dtype=complex)
    for np_ in (n - 1, n + 1):
        if np_ < 0:
            continue
        for mp in range(m - 1, m + 2):
            if abs(mp) > np_:
                continue
            c = coupling_c(np_, mp, n, m, tables, form)
            out += (c @ xi) * vector_harmonic("N", np_, mp, x)
            if np_ >= 1:
                d = coupling_d(np_, mp, n, m, tables, form)
                out += (d @ xi) * vector_harmonic("Q", np_, mp, x)
    return out


def eval_A(n, m, dirs):
    """Matrix ``A_n^m(x)`` of the Hessian expansion of the Laplace kernel.

    ``grad grad Gamma_0(x - z) = sum_{n,m} A_n^m(x/|x|) conj(Y_n^m(z/|z|))
    |z|^n / ((2n+1) |x|^(n+3))``.

    Returns
    -------
    ndarray of complex, shape (..., 3, 3)
    """
    _check_nm(n, m)
    x = _unit(dirs)
    y = ynm(n, m, x)[..., None, None]
    g = grad_s_ynm(n, m, x)
    nvec = vector_harmonic("N", n, m, x)
    xx = x[..., :, None] * x[..., None, :]
    return (
        (n + 1) * (x[..., :, None] * g[..., None, :] + y * (np.eye(3) - xx))
        - surface_hessian_ynm(n, m, x)
        - (n + 2) * nvec[..., :, None] * x[..., None, :]
    )


@dataclass(frozen=True)
class ProjectionMatrices:
    """Projections of ``A_0^0 e_k`` onto ``N_2^{m'}`` (``C``) and ``Q_0^{m'}`` (``D``).

    Row index is ``m' + 1`` for ``m' = -1, 0, 1``; column ``k`` is the
    Cartesian direction.  ``cond_*`` is the 2-norm condition number, ``inf``
    for a singular matrix.
    """

    C: np.ndarray
    D: np.ndarray
    cond_C: float
    cond_D: float
    notes: tuple = field(default_factory=tuple)

    @property
    def d_invertible(self):
        return np.isfinite(self.cond_D) and self.cond_D < 1e12


def _cond(mat):
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= 1e-14 * max(s[0], 1.0):
        return np.inf
    return float(s[0] / s[-1])


def projection_matrices(quad):
    """Assemble ``C`` and ``D`` from their defining integrals.

    ``A_0^0 xi`` is the gradient of an exterior degree-1 harmonic, so its
    ``Q_0`` projection vanishes identically and ``D`` comes out as the zero
    matrix.  That is reported through ``cond_D = inf``; only a singular ``C``
    raises.
    """
    if quad.degree < 6:
        raise PrecisionError("projection matrices need quadrature exactness >= 6")
    x = quad.nodes
    A00 = eval_A(0, 0, x)  # (q, 3, 3)
    C = np.empty((3, 3), dtype=complex)
    D = np.empty((3, 3), dtype=complex)
    for row, mp in enumerate((-1, 0, 1)):
        nb = np.conj(vector_harmonic("N", 1, mp, x))
        qb = np.conj(vector_harmonic("Q", 1, mp, x))
        C[row] = quad.weights @ np.einsum("qi,qik->qk", nb, A00)
        D[row] = quad.weights @ np.einsum("qi,qik->qk", qb, A00)
    scale = np.abs(C).max()
    D[np.abs(D) < 1e-13 * scale] = 0.0
    cond_c, cond_d = _cond(C), _cond(D)
    if not np.isfinite(cond_c):
        raise DegenerateBasisError("N_2 projection matrix C is singular")
    notes = ()
    if not np.isfinite(cond_d):
        notes = ("Q_0 projection matrix D is singular: exterior gradient fields "
                 "are orthogonal to every Q_0 harmonic",)
    return ProjectionMatrices(C, D, cond_c, cond_d, notes)


def harmonic_index(nmax, nmin=0):
    """List of ``(n, m)`` pairs, ``nmin <= n <= nmax``, ``m`` ascending."""
    return [(n, m) for n in range(nmin, nmax + 1) for m in range(-n, n + 1)]


def solid_table(nmax, points):
    """All regular solid harmonics of degree ``<= nmax``.

    Returns
    -------
    ndarray of complex, shape (..., K) with columns ordered as
    ``harmonic_index(nmax)``.
    """
    p = _as_points(points)
    idx = np.array(harmonic_index(nmax))
    r = np.linalg.norm(p, axis=-1)[..., None]
    theta, phi = to_angles(p)
    y = sph_harm_y(idx[:, 0], idx[:, 1], theta[..., None], phi[..., None])
    return y * r ** idx[:, 0]


@lru_cache(maxsize=32)
def _grad_operator(nmax):
    """Sparse ladder matrices mapping degree ``<= nmax - 1`` tables to
    gradients of degree ``1..nmax`` harmonics, shape (3, K_out, K_in)."""
    lower = {nm: k for k, nm in enumerate(harmonic_index(nmax - 1))}
    out = harmonic_index(nmax, 1)
    G = np.zeros((3, len(out), len(lower)), dtype=complex)
    for row, (n, m) in enumerate(out):
        for i, terms in enumerate(_grad_terms(n, m)):
            for coef, mp in terms:
                G[i, row, lower[n - 1, mp]] += coef
    G.setflags(write=False)
    return G


def solid_grad_table(nmax, points):
    """Gradients of all ``R_n^m`` with ``1 <= n <= nmax``.

    Returns
    -------
    ndarray of complex, shape (..., K, 3), rows ordered as
    ``harmonic_index(nmax, 1)``.
    """
    if nmax < 1:
        raise DomainError("nmax must be >= 1")
    G = _grad_operator(nmax)
    low = solid_table(nmax - 1, points)
    return np.einsum("ikj,...j->...ki", G, low)


def solid_hessian_table(nmax, points):
    """Hessians of all ``R_n^m`` with ``1 <= n <= nmax``, shape (..., K, 3, 3)."""
    if nmax < 1:
        raise DomainError("nmax must be >= 1")
    G = _grad_operator(nmax)
    p = _as_points(points)
    k_low = (nmax) ** 2
    out = np.zeros(p.shape[:-1] + (G.shape[1], 3, 3), dtype=complex)
    if nmax < 2:
        return out
    inner = solid_grad_table(nmax - 1, p)  # (..., K_low - 1, 3)
    # Degree-0 row of the lower table has zero gradient.
    inner = np.concatenate([np.zeros(p.shape[:-1] + (1, 3), dtype=complex), inner], axis=-2)
    assert inner.shape[-2] == k_low
    return np.einsum("ikj,...jl->...kil", G, inner)
