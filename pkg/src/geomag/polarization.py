"""
Polarization tensors of a reference shape for the static (leading-order)
magnetic problem with a dielectric shell.

For anomaly ``l`` with permeability ``mu``, permittivity ``eps`` and
conductivity ``sigma`` embedded in a shell of permittivity ``eps_s``::

    gamma   = eps + i sigma / omega
    lam_gam = (gamma + eps_s) / (2 (gamma - eps_s))
    lam_mu  = (mu + mu0) / (2 (mu - mu0))
    lam_eps = (eps_s + eps0) / (2 (eps_s - eps0))

    P0[:, k] = int y psi_k,     psi_k = (lam_eps - K*)^-1 [nu_k]
    D[:, k]  = E_s / (gamma - eps_s) int y (lam_gam + K*)^-1 [psi_k]
    M[:, k]  = E_s / (mu - mu0)      int y (lam_mu  - K*)^-1 [psi_k]
    P        = mu0 M - eps0 D - P0

with ``E_s = eps_s / (eps_s - eps0)``.  The sign in front of ``K*`` in the
``D`` resolvent is configurable (``d_sign``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .layerpot import NPOperator, assemble_K_star, resolvent_apply

__all__ = [
    "Materials",
    "LambdaParams",
    "PolarizationSet",
    "lambda_params",
    "compute_tensors",
    "analytic_ball_tensors",
    "ball_mu0M",
    "check_nonsingular",
    "NonsingularDiagnostic",
    "nonsingular_condition",
    "nonsingular_root_gamma",
]

DEFAULT_OMEGA = 1e-6
SPHERE_DIPOLE_EIGENVALUE = 1.0 / 6.0


@dataclass(frozen=True)
class Materials:
    """Material constants of the background, the shell and each anomaly.

    ``mu``, ``eps`` and ``sigma`` are per-anomaly sequences of equal length.
    """

    mu0: float = 1.0
    eps0: float = 1.0
    eps_s: float = 2.0
    mu: tuple = (2.0,)
    eps: tuple = (1.0,)
    sigma: tuple = (0.0,)
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        for name in ("mu", "eps", "sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if not len(self.mu) == len(self.eps) == len(self.sigma):
            raise DomainError("mu, eps and sigma must list the same number of anomalies")
        if self.mu0 <= 0 or self.eps0 <= 0 or self.eps_s <= 0:
            raise DomainError("mu0, eps0 and eps_s must be positive")
        if self.omega <= 0:
            raise DomainError("omega must be positive")
        for l in range(len(self.mu)):
            if self.mu[l] <= 0 or self.eps[l] <= 0 or self.sigma[l] < 0:
                raise DomainError(f"anomaly {l}: need mu > 0, eps > 0, sigma >= 0")

    @property
    def count(self):
        return len(self.mu)

    def gamma(self, l):
        """Complex permittivity ``eps_l + i sigma_l / omega``."""
        return complex(self.eps[l], self.sigma[l] / self.omega)

    def with_anomaly(self, l, **changes):
        """Copy with the per-anomaly entries of anomaly ``l`` replaced."""
        out = {}
        for name in ("mu", "eps", "sigma"):
            vals = list(getattr(self, name))
            if name in changes:
                vals[l] = changes.pop(name)
            out[name] = tuple(vals)
        return Materials(mu0=self.mu0, eps0=self.eps0, eps_s=self.eps_s, omega=self.omega, **out, **changes)


@dataclass(frozen=True)
class LambdaParams:
    lam_gamma: complex
    lam_mu: float
    lam_eps: float


@dataclass(frozen=True)
class PolarizationSet:
    P0: np.ndarray
    D: np.ndarray
    M: np.ndarray
    P: np.ndarray
    params: LambdaParams | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @classmethod
    def combine(cls, materials, P0, D, M, params=None, diagnostics=None):
        P = materials.mu0 * M - materials.eps0 * D - P0
        return cls(P0, D, M, P, params, diagnostics or {})

    def as_dict(self):
        out = {}
        for name in ("P0", "D", "M", "P"):
            a = np.asarray(getattr(self, name), dtype=complex)
            out[name] = {"re": a.real.tolist(), "im": a.imag.tolist()}
        return out


def _ratio(num, den, what):
    if den == 0:
        raise DomainError(f"{what}: vanishing denominator")
    return num / den


def lambda_params(materials, l, eps_form="corrected"):
    """Contrast parameters of anomaly ``l``.

    ``eps_form="degenerate"`` uses ``(eps_s - eps0) / (2 (eps_s - eps0))``,
    which is identically 1/2; it exists only as a negative control.
    """
    _check_index(materials, l)
    m = materials
    gam = m.gamma(l)
    lam_g = _ratio(gam + m.eps_s, 2 * (gam - m.eps_s), "lam_gamma (gamma_l = eps_s)")
    lam_mu = _ratio(m.mu[l] + m.mu0, 2 * (m.mu[l] - m.mu0), "lam_mu (mu_l = mu0)")
    if eps_form == "corrected":
        lam_e = _ratio(m.eps_s + m.eps0, 2 * (m.eps_s - m.eps0), "lam_eps (eps_s = eps0)")
    elif eps_form == "degenerate":
        lam_e = _ratio(m.eps_s - m.eps0, 2 * (m.eps_s - m.eps0), "lam_eps (eps_s = eps0)")
    else:
        raise DomainError(f"unknown eps_form {eps_form!r}")
    return LambdaParams(complex(lam_g), float(lam_mu), float(lam_e))


def _check_index(materials, l):
    if not 0 <= l < materials.count:
        raise DomainError(f"anomaly index {l} out of range (have {materials.count})")


def _shell_factor(m):
    return m.eps_s / (m.eps_s - m.eps0)


def compute_tensors(mesh_or_op, materials, l, d_sign=+1, resonance_tol=None, eps_form="corrected"):
    """Boundary-element polarization tensors of anomaly ``l``.

    Parameters
    ----------
    mesh_or_op : TriMesh or NPOperator
        Reference shape.  Passing an assembled operator reuses its cached
        factorizations across material sets.
    materials : Materials
    l : int
    d_sign : {+1, -1}
        Sign in front of ``K*`` in the ``D`` resolvent.
    eps_form : str
        Passed to :func:`lambda_params`.
    """
    if d_sign not in (1, -1):
        raise DomainError("d_sign must be +1 or -1")
    op = mesh_or_op if isinstance(mesh_or_op, NPOperator) else assemble_K_star(mesh_or_op)
    mesh = op.mesh
    lp = lambda_params(materials, l, eps_form)
    m = materials
    kw = {} if resonance_tol is None else {"resonance_tol": resonance_tol}
    nu = mesh.normals
    y = mesh.centroids * mesh.areas[:, None]
    psi = resolvent_apply(op, lp.lam_eps, -1, nu, **kw)
    P0 = y.T @ psi
    E = _shell_factor(m)
    pd = resolvent_apply(op, lp.lam_gamma, d_sign, psi.astype(complex), **kw)
    D = E / (m.gamma(l) - m.eps_s) * (y.T @ pd)
    pm = resolvent_apply(op, lp.lam_mu, -1, psi, **kw)
    M = E / (m.mu[l] - m.mu0) * (y.T @ pm)
    diag = {"panels": mesh.n_panels, "d_sign": d_sign}
    return PolarizationSet.combine(m, P0.astype(complex), D, M.astype(complex), lp, diag)


def analytic_ball_tensors(materials, l, shape="ball", d_sign=+1):
    """Closed-form tensors for the unit ball.

    Degree-one densities are eigenfunctions of ``K*`` on the sphere with
    eigenvalue ``1/6``, and ``int y nu^T ds = (4 pi / 3) I``.
    """
    if shape != "ball":
        raise DomainError("closed-form tensors exist only for the unit ball")
    lp = lambda_params(materials, l)
    m = materials
    q = SPHERE_DIPOLE_EIGENVALUE
    vol = 4 * np.pi / 3
    E = _shell_factor(m)
    p0 = vol / (lp.lam_eps - q)
    d = E / (m.gamma(l) - m.eps_s) * vol / ((lp.lam_gamma + d_sign * q) * (lp.lam_eps - q))
    mm = E * vol / ((m.mu[l] - m.mu0) * (lp.lam_mu - q) * (lp.lam_eps - q))
    eye = np.eye(3, dtype=complex)
    return PolarizationSet.combine(m, p0 * eye, d * eye, mm * eye, lp, {"analytic": True})


def ball_mu0M(materials, mu):
    """Scalar ``mu0 M`` of the unit ball as a function of ``mu``.

    Simplifies to ``4 pi mu0 K / (mu + 2 mu0)`` with
    ``K = 3 eps_s / (eps_s + 2 eps0)``; finite and smooth through ``mu = mu0``.
    """
    m = materials
    k = 3 * m.eps_s / (m.eps_s + 2 * m.eps0)
    return 4 * np.pi * m.mu0 * k / (np.asarray(mu, dtype=float) + 2 * m.mu0)


@dataclass(frozen=True)
class NonsingularDiagnostic:
    condition_value: complex
    nonsingular: bool


def nonsingular_condition(mu, gamma, mu0, eps_s, eps0):
    """``mu eps_s^2 + 2 (mu0 - mu) eps_s gamma + 2 (mu + 2 mu0) eps0 gamma - mu0 eps_s^2``."""
    return mu * eps_s**2 + 2 * (mu0 - mu) * eps_s * gamma + 2 * (mu + 2 * mu0) * eps0 * gamma - mu0 * eps_s**2


def check_nonsingular(materials, l, tol=1e-10):
    """Ball nonsingularity condition for the ``(mu, gamma)`` transmission system.

    The value of :func:`nonsingular_condition` must not vanish; it is
    compared with ``tol * mu0 eps_s^2``.
    """
    _check_index(materials, l)
    m = materials
    val = nonsingular_condition(m.mu[l], m.gamma(l), m.mu0, m.eps_s, m.eps0)
    scale = m.mu0 * m.eps_s**2
    return NonsingularDiagnostic(complex(val), bool(abs(val) > tol * scale))


def nonsingular_root_gamma(mu, mu0, eps_s, eps0):
    """The ``gamma`` at which :func:`check_nonsingular` fails (linear in gamma)."""
    slope = 2 * (mu0 - mu) * eps_s + 2 * (mu + 2 * mu0) * eps0
    if slope == 0:
        raise DomainError("condition does not depend on gamma")
    return (mu0 - mu) * eps_s**2 / slope
