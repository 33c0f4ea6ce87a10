"""
Recovery of anomaly centers, variation exponents and permeabilities from
field samples on a sphere of radius ``R``.

Samples are modelled as ``grad u`` with the exterior potential
``u = sum_{n>=1} sum_m c[n][m] Y_n^m(xhat) / r^(n+1)``.  For a sum of point
dipoles ``delta^3 sum_l hess G(x - z_l) q_l`` the coefficients are::

    c[n][m] = delta^3 / (2n+1) * sum_l q_l . conj(grad R_n^m(z_l))

where ``R_n^m`` is the regular solid harmonic.  Degree one fixes the
weights (``grad R_1^m`` is constant) and degree two, which is linear in
``z``, fixes a single center.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.stats import qmc

from . import sphharm as sh
from .errors import (
    AnisotropyMismatchError,
    CoverageError,
    DegenerateGeometryError,
    DomainError,
    IdentifiabilityWarning,
    InconsistentEpochsError,
    ModelMismatchWarning,
    OptimizationError,
    OutOfRangeError,
    PrecisionError,
    ValidityWarning,
    ZeroWeightError,
)
from .forward import ALPHA_WINDOW, dipole_field
from .layerpot import NPOperator, assemble_K_star
from .polarization import analytic_ball_tensors, ball_mu0M, compute_tensors

__all__ = [
    "MomentTable",
    "AggregateF",
    "AnomalyEstimate",
    "ReconstructionResult",
    "ReconstructOptions",
    "project_vector_harmonic",
    "recover_aggregate_F",
    "extract_moments",
    "model_moments",
    "vector_moments",
    "eval_vector_series",
    "locate_single",
    "recover_alpha",
    "recover_mu",
    "reconstruct_multi",
]

PARALLEL_TOL = 1e-6  # radians


def _check_coverage(samples, degree, what):
    q = samples.quad
    total = float(np.sum(q.weights))
    if abs(total - 4 * np.pi) > 1e-10 * 4 * np.pi:
        raise CoverageError(f"quadrature weights sum to {total:.6g}, not 4 pi: full sphere required")
    if q.degree < degree:
        raise PrecisionError(f"{what} needs quadrature exactness >= {degree}, have {q.degree}")


# --------------------------------------------------------------- projections


def project_vector_harmonic(samples, kind="N2"):
    """``int conj(B^{m'}) . samples`` for ``m' = -1, 0, 1`` (length-3 vector).

    ``kind='N2'`` uses ``N_2^{m'}`` and ``kind='Q0'`` uses ``Q_0^{m'}``.
    """
    if kind not in ("N2", "Q0"):
        raise DomainError("kind must be 'N2' or 'Q0'")
    _check_coverage(samples, 6, "vector harmonic projection")
    x = samples.quad.nodes
    vk = "N" if kind == "N2" else "Q"
    wv = samples.quad.weights[:, None] * samples.values
    out = np.empty(3, dtype=complex)
    for row, mp in enumerate((-1, 0, 1)):
        out[row] = np.sum(np.conj(sh.vector_harmonic(vk, 1, mp, x)) * wv)
    return out


@dataclass(frozen=True)
class AggregateF:
    F: np.ndarray
    F_q: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)


def recover_aggregate_F(samples, proj, delta):
    """Aggregate weight ``sum_l w_l`` from the ``N_2`` projections.

    ``F = 2 sqrt(pi) R^3 delta^-3 C^-1 p_N``; the ``2 sqrt(pi)`` undoes
    ``conj(Y_0^0)`` in the kernel expansion.  The ``Q_0`` projections of an
    exterior gradient field vanish, so the ``Q`` route is only available when
    ``D`` is invertible; otherwise their size relative to ``p_N`` is reported
    as a model-consistency diagnostic.
    """
    R = samples.radius
    pN = project_vector_harmonic(samples, "N2")
    pQ = project_vector_harmonic(samples, "Q0")
    k = 2 * np.sqrt(np.pi) * R**3 / delta**3
    F = k * np.linalg.solve(proj.C, pN)
    F_q = None
    diag = {"cond_C": proj.cond_C, "cond_D": proj.cond_D}
    # The L2 norm of the samples keeps the ratio meaningful when p_N cancels.
    l2 = math.sqrt(float(samples.quad.integrate(np.sum(np.abs(samples.values) ** 2, axis=1))))
    scale = max(np.linalg.norm(pN), l2)
    q_ratio = float(np.linalg.norm(pQ) / scale) if scale > 0 else 0.0
    diag["q_over_n"] = q_ratio
    if proj.d_invertible:
        F_q = k * np.linalg.solve(proj.D, pQ)
        diag["route_disagreement"] = float(np.linalg.norm(F - F_q) / max(np.linalg.norm(F), 1e-300))
    else:
        diag["q_route"] = "unavailable: D is singular"
        if q_ratio > 1e-6:
            warnings.warn(
                f"Q_0 projections are {q_ratio:.2e} of the data scale; "
                "data are not an exterior gradient field",
                ModelMismatchWarning,
                stacklevel=2,
            )
    return AggregateF(F, F_q, diag)


# ------------------------------------------------------------------- moments


@dataclass
class MomentTable:
    """Exterior potential coefficients ``c[n][m]`` for ``1 <= n <= nmax``.

    ``c`` has shape ``(nmax + 1, 2 nmax + 1)``; entry ``[n, m + nmax]``.
    """

    c: np.ndarray
    nmax: int
    radius: float
    d: dict | None = None

    def get(self, n, m):
        return self.c[n, m + self.nmax]

    def flat(self, nmax=None):
        """Coefficients ordered as ``harmonic_index(nmax, 1)``."""
        nmax = self.nmax if nmax is None else nmax
        return np.array([self.get(n, m) for n, m in sh.harmonic_index(nmax, 1)])

    def evaluate(self, x):
        """Field ``-sum c[n][m] N^m_{n+1}(xhat) / |x|^(n+2)`` at points ``x``."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)[..., None]
        out = np.zeros(x.shape, dtype=complex)
        for n, m in sh.harmonic_index(self.nmax, 1):
            c = self.get(n, m)
            if c != 0:
                out -= c * sh.vector_harmonic("N", n, m, x) / r ** (n + 2)
        return out

    def reality_defect(self):
        """Max of ``|c[n][-m] - (-1)^m conj(c[n][m])|`` relative to max ``|c|``."""
        worst = 0.0
        for n, m in sh.harmonic_index(self.nmax, 1):
            worst = max(worst, abs(self.get(n, -m) - (-1) ** m * np.conj(self.get(n, m))))
        scale = np.abs(self.c).max()
        return worst / scale if scale > 0 else 0.0


def extract_moments(samples, nmax):
    """Coefficients ``c[n][m] = -R^(n+2) / ((n+1)(2n+1)) int conj(N^m_{n+1}) . samples``."""
    nmax = int(nmax)
    if nmax < 1:
        raise DomainError("nmax must be >= 1")
    _check_coverage(samples, 2 * (nmax + 1), "moment extraction")
    R = samples.radius
    x = samples.quad.nodes
    wv = samples.quad.weights[:, None] * samples.values
    c = np.zeros((nmax + 1, 2 * nmax + 1), dtype=complex)
    for n, m in sh.harmonic_index(nmax, 1):
        proj = np.sum(np.conj(sh.vector_harmonic("N", n, m, x)) * wv)
        c[n, m + nmax] = -(R ** (n + 2)) / ((n + 1) * (2 * n + 1)) * proj
    return MomentTable(c, nmax, R)


def _degree_factor(nmax):
    return np.array([1.0 / (2 * n + 1) for n, _ in sh.harmonic_index(nmax, 1)])


def model_moments(centers, weights, delta, nmax):
    """Flat coefficient vector of ``delta^3 sum_l hess G(x - z_l) q_l``."""
    centers = np.atleast_2d(np.asarray(centers, float))
    weights = np.atleast_2d(np.asarray(weights, complex))
    G = np.conj(sh.solid_grad_table(nmax, centers))  # (L, K, 3)
    return delta**3 * _degree_factor(nmax) * np.einsum("lki,li->k", G, weights)


def vector_moments(centers, weights, nmax):
    """Vector moments ``d[n, m] = sum_l conj(R_n^m(z_l)) q_l`` for ``0 <= n <= nmax``."""
    centers = np.atleast_2d(np.asarray(centers, float))
    weights = np.atleast_2d(np.asarray(weights, complex))
    table = np.conj(sh.solid_table(nmax, centers))  # (L, K)
    vec = np.einsum("lk,li->ki", table, weights)
    return {nm: vec[k] for k, nm in enumerate(sh.harmonic_index(nmax))}


def eval_vector_series(d, x):
    """Scalar ``sum N^m_{n+1}(xhat) . d[n, m] / ((2n+1) |x|^(n+2))``.

    Equals ``sum_l grad G(x - z_l) . q_l`` up to truncation.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    out = np.zeros(x.shape[:-1], dtype=complex)
    for (n, m), vec in d.items():
        out += sh.vector_harmonic("N", n, m, x) @ vec / ((2 * n + 1) * r ** (n + 2))
    return out


# ------------------------------------------------------------ single anomaly


def _degree1_matrix():
    return np.conj(sh.solid_grad_table(1, np.zeros(3)))  # (3, 3), rows m=-1,0,1


def _degree2_matrices():
    return np.conj(sh.solid_hessian_table(2, np.zeros(3)))[3:]  # (5, 3, 3), m=-2..2


def locate_single(moments, delta, zero_tol=1e-12):
    """Center and weight of a single dipole from degree-1 and degree-2 moments.

    ``c[1] = delta^3 / 3 * G1 w`` with the constant matrix
    ``G1[m, i] = conj(d_i R_1^m)``; ``c[2][m] = delta^3 / 5 * w^T H_m z``
    with ``H_m = conj(hess R_2^m)``, solved for real ``z`` by least squares.
    """
    if moments.nmax < 2:
        raise DomainError("locating a dipole needs moments up to degree 2")
    c1 = np.array([moments.get(1, m) for m in (-1, 0, 1)])
    c2 = np.array([moments.get(2, m) for m in range(-2, 3)])
    w = 3 / delta**3 * np.linalg.solve(_degree1_matrix(), c1)
    if not np.linalg.norm(w) > zero_tol:
        raise ZeroWeightError("dipole weight vanishes: the anomaly did not change (alpha = 0)")
    rows = delta**3 / 5 * np.einsum("i,mij->mj", w, _degree2_matrices())
    A = np.vstack([rows.real, rows.imag])
    b = np.concatenate([c2.real, c2.imag])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateGeometryError("degree-2 system is rank deficient")
    z, *_ = np.linalg.lstsq(A, b, rcond=None)
    return z, w


def recover_alpha(w, v, delta, angle_tol=PARALLEL_TOL):
    """Exponent ``alpha`` from ``w = (delta^(3 alpha) - 1) v``."""
    w = np.asarray(w, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    vv = np.vdot(v, v).real
    if not vv > 0:
        raise DomainError("reference weight v vanishes")
    rho = np.vdot(v, w) / vv
    wn = np.linalg.norm(w)
    if wn > 0:
        sin_angle = np.linalg.norm(w - rho * v) / wn
        if sin_angle > math.sin(angle_tol) or abs(rho.imag) > math.sin(angle_tol) * abs(rho):
            raise InconsistentEpochsError(
                f"w is not a real multiple of v (misfit {sin_angle:.2e}, rho = {rho:.6g})"
            )
    rho = rho.real
    if not 1 + rho > 0:
        raise DomainError(f"1 + rho = {1 + rho:.6g} <= 0 cannot equal delta^(3 alpha)")
    alpha = math.log1p(rho) / (3 * math.log(delta))
    lo, hi = ALPHA_WINDOW
    if not lo < alpha < hi:
        warnings.warn(
            f"alpha = {alpha:.6g} outside the multi-anomaly window (-1/4, 1/3)",
            ValidityWarning,
            stacklevel=2,
        )
    return alpha


def _scalar_response(v, h0):
    v = np.asarray(v, dtype=complex)
    h0 = np.asarray(h0, dtype=float)
    hh = float(h0 @ h0)
    if not hh > 0:
        raise DomainError("background field vanishes at the anomaly")
    return (h0 @ v) / hh


def recover_mu(v, H0_at_z, materials, shape="ball", l=0, angle_tol=PARALLEL_TOL, d_sign=+1):
    """Permeability of anomaly ``l`` from ``v = P(mu) H0(z)``.

    For the ball ``P = mu0 M(mu) - eps0 D - P0`` with ``D`` and ``P0``
    independent of ``mu`` and ``mu0 M = 4 pi mu0 K / (mu + 2 mu0)``, so
    ``mu`` follows in closed form.  For a mesh, ``mu`` is the root of the
    scalar response ``H0^T P(mu) H0 / |H0|^2 = p`` on
    ``[1e-3 mu0, 1e3 mu0]``.
    """
    p = _scalar_response(v, H0_at_z)
    mu0 = materials.mu0
    if isinstance(shape, str):
        if shape != "ball":
            raise DomainError(f"unknown shape {shape!r}")
        v = np.asarray(v, dtype=complex)
        h0 = np.asarray(H0_at_z, dtype=float)
        vn = np.linalg.norm(v)
        if vn > 0 and np.linalg.norm(v - p * h0) > math.sin(angle_tol) * vn:
            raise AnisotropyMismatchError("v is not parallel to H0 although the ball is isotropic")
        # D and P0 do not depend on mu; the material entry only supplies gamma.
        probe = materials.with_anomaly(l, mu=2.0 * mu0 if materials.mu[l] == mu0 else materials.mu[l])
        t = analytic_ball_tensors(probe, l, d_sign=d_sign)
        target = p + materials.eps0 * t.D[0, 0] + t.P0[0, 0]
        if abs(target.imag) > 1e-6 * abs(target):
            raise OutOfRangeError(f"mu0 M would have to be complex ({target:.6g})")
        target = target.real
        top = float(ball_mu0M(materials, 0.0))
        if not 0 < target < top:
            raise OutOfRangeError(
                f"response {target:.6g} outside the attainable range (0, {top:.6g})"
            )
        # target = 4 pi mu0 K / (mu + 2 mu0) and top = 2 pi K.
        mu = 2 * top * mu0 / target - 2 * mu0
    else:
        op = shape if isinstance(shape, NPOperator) else assemble_K_star(shape)
        h0 = np.asarray(H0_at_z, dtype=float)

        def response(mu):
            if mu == mu0:
                mu = mu0 * (1 + 1e-9)
            t = compute_tensors(op, materials.with_anomaly(l, mu=mu), l, d_sign=d_sign)
            return (h0 @ t.P @ h0).real / (h0 @ h0) - p.real

        lo, hi = 1e-3 * mu0, 1e3 * mu0
        flo, fhi = response(lo), response(hi)
        if flo * fhi > 0:
            raise OutOfRangeError(f"response {p.real:.6g} not attained for mu in [{lo:g}, {hi:g}]")
        mu = brentq(response, lo, hi, xtol=1e-12 * mu0, rtol=1e-10)
    if abs(mu - mu0) <= 1e-9 * mu0:
        raise OutOfRangeError("recovered mu equals mu0: no magnetic contrast")
    return float(mu)


# ------------------------------------------------------------- multi anomaly


@dataclass
class ReconstructOptions:
    """Settings of :func:`reconstruct_multi`.

    ``background``, ``materials``, ``shapes`` and ``material_index`` are
    needed only for recovering ``mu``.
    """

    nmax: int | None = None
    n_starts: int = 32
    seed: int = 0
    max_nfev: int = 4000
    merge_radius: float = 1e-3
    ghost_tol: float = 1e-6
    background: object = None
    materials: object = None
    shapes: list | None = None
    material_index: list | None = None


@dataclass
class AnomalyEstimate:
    z: np.ndarray
    w: np.ndarray
    v: np.ndarray | None = None
    alpha: float | None = None
    mu: float | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ReconstructionResult:
    anomalies: list
    residual: float
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        def opt(x):
            return None if x is None else float(x)

        items = []
        for a in self.anomalies:
            entry = {
                "z": [float(t) for t in a.z],
                "w_re": [float(t) for t in np.real(a.w)],
                "w_im": [float(t) for t in np.imag(a.w)],
                "alpha": opt(a.alpha),
                "mu": opt(a.mu),
                "diagnostics": _jsonable(a.diagnostics),
            }
            if a.v is not None:
                entry["v_re"] = [float(t) for t in np.real(a.v)]
                entry["v_im"] = [float(t) for t in np.imag(a.v)]
            items.append(entry)
        return {
            "anomalies": items,
            "residual": float(self.residual),
            "warnings": list(self.warnings),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def vector_moments(self, nmax, epoch="delta"):
        zs = [a.z for a in self.anomalies]
        qs = [a.w if epoch == "delta" else a.v for a in self.anomalies]
        return vector_moments(zs, qs, nmax)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


class _MomentFit:
    """Variable-projection least squares for point dipoles.

    Rows are weighted by ``sqrt((n+1)(2n+1)) / R^(n+2)`` so the residual
    norm equals the L2 misfit of the corresponding fields over the unit
    sphere of directions.
    """

    def __init__(self, moments, delta, nmax):
        self.nmax = nmax
        self.delta = delta
        idx = sh.harmonic_index(nmax, 1)
        R = moments.radius
        n = np.array([k[0] for k in idx])
        self.row_w = np.sqrt((n + 1) * (2 * n + 1)) / R ** (n + 2) / math.sqrt(4 * np.pi)
        self.target = self.row_w * moments.flat(nmax)
        self.coef = delta**3 * self.row_w / (2 * n + 1)

    def design(self, z):
        z = z.reshape(-1, 3)
        G = np.conj(sh.solid_grad_table(self.nmax, z))  # (L, K, 3)
        return (self.coef[None, :, None] * G).transpose(1, 0, 2).reshape(len(self.coef), -1)

    def solve_w(self, z):
        A = self.design(z)
        w, *_ = np.linalg.lstsq(A, self.target, rcond=None)
        return w.reshape(-1, 3), A

    def residual(self, z):
        w, A = self.solve_w(z)
        r = self.target - A @ w.ravel()
        return np.concatenate([r.real, r.imag])

    def jacobian(self, z):
        """Kaufman's approximation ``-P_perp (dA/dz) w`` of the reduced Jacobian."""
        w, A = self.solve_w(z)
        Q, _ = np.linalg.qr(A)
        H = np.conj(sh.solid_hessian_table(self.nmax, z.reshape(-1, 3)))  # (L, K, 3, 3)
        dA = self.coef[None, :, None] * np.einsum("lkij,li->lkj", H, w)  # (L, K, 3)
        cols = dA.transpose(1, 0, 2).reshape(len(self.coef), -1)
        cols = -(cols - Q @ (Q.conj().T @ cols))
        return np.vstack([cols.real, cols.imag])

    def misfit(self, z, w):
        r = self.target - self.design(z) @ np.asarray(w).ravel()
        return float(np.linalg.norm(r))


def _fit_epoch(moments, l0, delta, opts, tag, warm=None):
    """Best of a warm start (if given) and ``opts.n_starts`` Sobol starts."""
    fit = _MomentFit(moments, delta, opts.nmax)
    scale = float(np.linalg.norm(fit.target))
    if scale == 0:
        raise ZeroWeightError(f"{tag} samples vanish: nothing to locate")
    if l0 == 1:
        z, w = locate_single(moments, delta)
        return z[None, :], w[None, :], {"starts": 0, "nfev": 0, "misfit": fit.misfit(z[None], w[None]) / scale}
    rmax = 0.5 * moments.radius
    sampler = qmc.Sobol(d=3 * l0, scramble=True, seed=opts.seed)
    u = sampler.random(opts.n_starts)
    starts = [] if warm is None else [np.asarray(warm, float).ravel()]
    for k in range(opts.n_starts):
        # Uniform points in the ball: radius from the cube root of u.
        pts = []
        for j in range(l0):
            a, b, c = u[k, 3 * j : 3 * j + 3]
            d = np.array([math.sqrt(1 - (2 * b - 1) ** 2) * math.cos(2 * math.pi * c),
                          math.sqrt(1 - (2 * b - 1) ** 2) * math.sin(2 * math.pi * c), 2 * b - 1])
            pts.append(rmax * a ** (1 / 3) * d)
        starts.append(np.concatenate(pts))
    best = None
    nfev = 0
    for k, x0 in enumerate(starts):
        try:
            sol = least_squares(fit.residual, x0, jac=fit.jacobian, method="lm", xtol=1e-12, ftol=1e-14,
                                gtol=1e-14, max_nfev=opts.max_nfev)
        except (ValueError, np.linalg.LinAlgError):
            continue
        nfev += sol.nfev
        cost = float(np.linalg.norm(sol.fun))
        if best is None or cost < best[0]:
            best = (cost, sol)
        if cost < 1e-12 * scale:
            break
    if best is None:
        raise OptimizationError(f"{tag}: every multi-start run failed")
    cost, sol = best
    z = sol.x.reshape(-1, 3)
    w, _ = fit.solve_w(sol.x)
    diag = {"starts": k + 1, "nfev": nfev, "misfit": cost / scale, "status": int(sol.status)}
    if sol.status <= 0:
        raise OptimizationError(f"{tag}: optimizer did not converge", best={"z": z, "w": w, **diag})
    return z, w, diag


def _prune_ghosts(moments, delta, opts, z, w, scale, notes):
    """Zero out anomalies whose removal does not worsen the fit."""
    fit = _MomentFit(moments, delta, opts.nmax)
    full = fit.misfit(z, w)
    ghosts = []
    for k in range(len(z)):
        keep = [j for j in range(len(z)) if j != k and j not in ghosts]
        if not keep:
            break
        wk, A = fit.solve_w(z[keep].ravel())
        reduced = fit.misfit(z[keep], wk)
        if reduced <= full + max(1e-9 * scale, 1e-3 * full):
            ghosts.append(k)
            w = w.copy()
            w[keep] = wk
            w[k] = 0
            full = reduced
    for k in ghosts:
        notes.append(f"identifiability: fitted anomaly {k} is not supported by the data (ghost)")
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            if np.linalg.norm(z[i] - z[j]) < opts.merge_radius * moments.radius:
                notes.append(f"identifiability: fitted centers {i} and {j} coincide")
    if notes:
        warnings.warn("; ".join(notes), IdentifiabilityWarning, stacklevel=3)
    return w


def _pair(z_delta, z_epoch0):
    """Greedy nearest-center matching; returns index into ``z_epoch0`` per delta anomaly."""
    d = np.linalg.norm(z_delta[:, None, :] - z_epoch0[None, :, :], axis=2)
    order = np.dstack(np.unravel_index(np.argsort(d, axis=None, kind="stable"), d.shape))[0]
    match = -np.ones(len(z_delta), dtype=int)
    used = set()
    for i, j in order:
        if match[i] < 0 and j not in used:
            match[i] = j
            used.add(j)
    return match


def _rms_misfit(samples, centers, weights, delta):
    model = dipole_field(centers, weights, samples.points, scale=delta**3)
    err = np.sum(np.abs(samples.values - model) ** 2, axis=1)
    return float(np.sqrt(samples.quad.integrate(err) / (4 * np.pi)))


def reconstruct_multi(samples_delta, samples_epoch0=None, l0=1, delta=0.1, options=None):
    """Fit ``l0`` point dipoles to difference (and optionally epoch-0) data.

    Returns centers and weights ``w``; with epoch-0 data also ``v``,
    ``alpha`` and, when material data are supplied in ``options``, ``mu``.
    """
    opts = options or ReconstructOptions()
    l0 = int(l0)
    if l0 < 1:
        raise DomainError("l0 must be >= 1")
    nmax = opts.nmax if opts.nmax is not None else l0 + 2
    if nmax < l0 + 2:
        raise DomainError(f"nmax must be >= l0 + 2 = {l0 + 2}")
    opts = ReconstructOptions(**{**opts.__dict__, "nmax": nmax})
    notes = []
    mom = extract_moments(samples_delta, nmax)
    z, w, diag = _fit_epoch(mom, l0, delta, opts, "delta")
    scale = float(np.linalg.norm(_MomentFit(mom, delta, nmax).target))
    if l0 > 1:
        w = _prune_ghosts(mom, delta, opts, z, w, scale, notes)
    result_diag = {"delta_fit": diag, "nmax": nmax, "reality_defect": mom.reality_defect()}
    estimates = [AnomalyEstimate(z[k].copy(), w[k].copy()) for k in range(l0)]
    if samples_epoch0 is None:
        notes.append("alpha unrecoverable: epoch-0 data required")
    else:
        if not np.isclose(samples_epoch0.radius, samples_delta.radius):
            raise InconsistentEpochsError("epoch-0 and difference samples use different radii")
        mom0 = extract_moments(samples_epoch0, nmax)
        # Both epochs see the same anomalies, so the difference-field centers seed the fit.
        z0, v0, diag0 = _fit_epoch(mom0, l0, delta, opts, "epoch0", warm=z)
        result_diag["epoch0_fit"] = diag0
        match = _pair(z, z0)
        for k, est in enumerate(estimates):
            j = match[k]
            est.v = v0[j].copy()
            est.diagnostics["pairing_distance"] = float(np.linalg.norm(z[k] - z0[j]))
            if not np.linalg.norm(est.w) > 0:
                est.alpha = None
                continue
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                try:
                    est.alpha = recover_alpha(est.w, est.v, delta)
                except InconsistentEpochsError as exc:
                    # Noisy epochs: keep the least-squares ratio and report the misfit.
                    notes.append(f"anomaly {k}: {exc}; alpha from the real least-squares ratio")
                    try:
                        est.alpha = recover_alpha(est.w, est.v, delta, angle_tol=math.pi / 2)
                    except DomainError as exc2:
                        notes.append(f"anomaly {k}: alpha unavailable: {exc2}")
                except DomainError as exc:
                    notes.append(f"anomaly {k}: alpha unavailable: {exc}")
            notes.extend(str(c.message) for c in caught)
        alphas = [e.alpha for e in estimates if e.alpha is not None]
        for i in range(len(alphas)):
            for j in range(len(alphas)):
                if i != j and abs(3 * (alphas[i] + 1) - 4 * (alphas[j] + 1)) < 1e-6:
                    notes.append(f"separability: fitted alphas {i},{j} nearly satisfy 3(a_i+1) = 4(a_j+1)")
        if opts.background is not None and opts.materials is not None:
            for k, est in enumerate(estimates):
                if est.v is None or not np.linalg.norm(est.w) > 0:
                    continue
                shape = opts.shapes[k] if opts.shapes else "ball"
                idx = opts.material_index[k] if opts.material_index else k
                h0 = np.asarray(opts.background(est.z), float)
                try:
                    est.mu = recover_mu(est.v, h0, opts.materials, shape, idx)
                except (OutOfRangeError, AnisotropyMismatchError, DomainError) as exc:
                    notes.append(f"mu for anomaly {k}: {exc}")
    resid = _rms_misfit(samples_delta, z, w, delta)
    return ReconstructionResult(estimates, resid, result_diag, notes)
