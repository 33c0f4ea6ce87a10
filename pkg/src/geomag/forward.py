"""
Leading-order forward model for small magnetic anomalies.

Each anomaly ``l`` occupies ``z_l + s_l delta Omega_l`` with
``s_l = delta**alpha_l``.  With ``v_l = P_l H0(z_l)`` and
``w_l = (delta**(3 alpha_l) - 1) v_l`` the two simulated fields are::

    H(x)  - H0(x) = delta^3 sum_l hess G(x - z_l) v_l      (epoch 0)
    Hs(x) - H(x)  = delta^3 sum_l hess G(x - z_l) w_l      (difference)

with ``G(x) = -1 / (4 pi |x|)``, so ``hess G(r) = (I - 3 r r^T / |r|^2) /
(4 pi |r|^3)``.  Both are gradients of exterior harmonic potentials.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import sphharm as sh
from .errors import (
    DegenerateBackgroundError,
    DomainError,
    GeometryError,
    MeshParseError,
    ProximityError,
    SingularityError,
)
from .layerpot import TriMesh, assemble_K_star, load_mesh
from .polarization import Materials, analytic_ball_tensors, check_nonsingular, compute_tensors

__all__ = [
    "UniformField",
    "DipoleField",
    "PolynomialField",
    "eval_background",
    "background_from_dict",
    "Anomaly",
    "Scene",
    "DipoleWeight",
    "VectorFieldSamples",
    "Issue",
    "ValidationReport",
    "grad_gamma0",
    "hessian_gamma0",
    "kernel_multipole",
    "scene_tensors",
    "dipole_weights",
    "secular_variation",
    "epoch_perturbation",
    "dipole_field",
    "synthesize_measurement",
    "validate_scene",
    "write_samples",
    "read_samples",
    "scene_from_dict",
    "scene_to_dict",
    "scene_hash",
]

ALPHA_WINDOW = (-0.25, 1.0 / 3.0)
SEPARABILITY_TOL = 1e-9
SPARSITY_FACTOR = 10.0
CSV_HEADER = "ux,uy,uz,weight,re_hx,im_hx,re_hy,im_hy,re_hz,im_hz"


# ---------------------------------------------------------------- background


@dataclass(frozen=True)
class UniformField:
    value: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.value, float), x.shape).copy()

    def to_dict(self):
        return {"type": "uniform", "value": list(map(float, self.value))}


@dataclass(frozen=True)
class DipoleField:
    """Field of a point dipole ``m`` at ``source``: ``(3 r (r.m)/|r|^2 - m) / (4 pi |r|^3)``."""

    source: tuple
    moment: tuple

    def __call__(self, x):
        r = np.asarray(x, dtype=float) - np.asarray(self.source, float)
        d = np.linalg.norm(r, axis=-1, keepdims=True)
        if np.any(d == 0):
            raise SingularityError("background dipole evaluated at its source")
        m = np.asarray(self.moment, float)
        rm = np.sum(r * m, axis=-1, keepdims=True)
        return (3 * r * rm / d**2 - m) / (4 * np.pi * d**3)

    def to_dict(self):
        return {"type": "dipole", "source": list(map(float, self.source)),
                "moment": list(map(float, self.moment))}


@dataclass(frozen=True)
class PolynomialField:
    """Gradient of ``u = g . x + x^T S x / 2`` with ``S`` symmetric and trace-free."""

    linear: tuple = (0.0, 0.0, 0.0)
    quadratic: tuple = ((0.0, 0.0, 0.0),) * 3

    def __post_init__(self):
        S = np.asarray(self.quadratic, float)
        if S.shape != (3, 3) or np.asarray(self.linear).shape != (3,):
            raise DomainError("polynomial background needs a 3-vector and a 3x3 matrix")
        scale = max(np.abs(S).max(), 1.0)
        if np.abs(S - S.T).max() > 1e-12 * scale:
            raise DomainError("quadratic coefficient matrix must be symmetric")
        if abs(np.trace(S)) > 1e-12 * scale:
            raise DomainError("quadratic part is not harmonic (nonzero trace)")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.linear, float) + x @ np.asarray(self.quadratic, float).T

    def to_dict(self):
        return {"type": "polynomial", "linear": list(map(float, self.linear)),
                "quadratic": np.asarray(self.quadratic, float).tolist()}


def eval_background(bg, x):
    """Background field ``H0 = grad u0`` at ``x`` (shape (..., 3))."""
    return bg(x)


def background_from_dict(d):
    kind = d.get("type")
    if kind == "uniform":
        return UniformField(tuple(map(float, d["value"])))
    if kind == "dipole":
        return DipoleField(tuple(map(float, d["source"])), tuple(map(float, d["moment"])))
    if kind == "polynomial":
        quad = tuple(tuple(map(float, row)) for row in d.get("quadratic", [[0] * 3] * 3))
        return PolynomialField(tuple(map(float, d.get("linear", [0, 0, 0]))), quad)
    raise DomainError(f"unknown background type {kind!r}")


# ------------------------------------------------------------------- kernels


def grad_gamma0(r):
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(d == 0):
        raise SingularityError("kernel gradient evaluated at r = 0")
    return r / (4 * np.pi * d**3)


def hessian_gamma0(r):
    """``grad grad G(r) = (I - 3 rhat rhat^T) / (4 pi |r|^3)``; shape (..., 3, 3)."""
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r, axis=-1)
    if np.any(d == 0):
        raise SingularityError("kernel Hessian evaluated at r = 0")
    u = r / d[..., None]
    outer = u[..., :, None] * u[..., None, :]
    return (np.eye(3) - 3 * outer) / (4 * np.pi * d[..., None, None] ** 3)


def kernel_multipole(x, z, N, which="grad"):
    """Truncated exterior expansion of ``grad G(x - z)`` or ``grad grad G(x - z)``.

    ``grad G  = sum N^m_{n+1}(xhat) conj(R_n^m(z)) / ((2n+1) |x|^(n+2))``
    ``hess G  = sum A_n^m(xhat)     conj(R_n^m(z)) / ((2n+1) |x|^(n+3))``
    summed over ``n <= N``.  Requires ``|z| / |x| <= 0.9``.  ``x`` and ``z``
    broadcast over leading dimensions.
    """
    x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    R = np.linalg.norm(x, axis=-1)
    if np.any(np.linalg.norm(z, axis=-1) > 0.9 * R):
        raise DomainError("expansion needs |z| / |x| <= 0.9")
    if which not in ("grad", "hessian"):
        raise DomainError("which must be 'grad' or 'hessian'")
    extra = (3,) if which == "grad" else (3, 3)
    out = np.zeros(x.shape[:-1] + extra, dtype=complex)
    for n in range(int(N) + 1):
        for m in range(-n, n + 1):
            coef = np.conj(sh.solid_harmonic(n, m, z)) / (2 * n + 1)
            if not np.any(coef):
                continue
            if which == "grad":
                out += (coef / R ** (n + 2))[..., None] * sh.vector_harmonic("N", n, m, x)
            else:
                out += (coef / R ** (n + 3))[..., None, None] * sh.eval_A(n, m, x)
    return out.real


# -------------------------------------------------------------------- scene


@dataclass(frozen=True)
class Anomaly:
    """One inclusion ``z + s delta Omega`` with ``s = delta**alpha``.

    ``shape`` is ``"ball"`` (unit ball) or a :class:`TriMesh`;
    ``shape_source`` records a mesh path for serialization.
    """

    center: tuple
    delta: float
    alpha: float = 0.0
    shape: object = "ball"
    material: int = 0
    shape_source: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise DomainError("anomaly center must be a 3-vector")
        if not 0 < self.delta:
            raise DomainError("delta must be positive")
        if not (isinstance(self.shape, TriMesh) or self.shape == "ball"):
            raise DomainError("shape must be 'ball' or a TriMesh")

    @property
    def scale(self):
        """Size factor ``s = delta**alpha``."""
        return self.delta**self.alpha

    @property
    def shape_radius(self):
        if isinstance(self.shape, TriMesh):
            return float(np.linalg.norm(self.shape.vertices, axis=1).max())
        return 1.0

    @property
    def extent(self):
        """Radius of the current (resized) inclusion about its center."""
        return self.scale * self.delta * self.shape_radius

    @property
    def epoch0_extent(self):
        return self.delta * self.shape_radius

    @property
    def size_factor(self):
        """``delta**(3 alpha) - 1``."""
        return self.delta ** (3 * self.alpha) - 1.0


@dataclass(frozen=True)
class Scene:
    anomalies: tuple
    materials: Materials
    background: object
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "anomalies", tuple(self.anomalies))

    @property
    def centers(self):
        return np.array([a.center for a in self.anomalies], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class DipoleWeight:
    v: np.ndarray
    w: np.ndarray


@dataclass
class VectorFieldSamples:
    """Field values at ``radius * quad.nodes``."""

    radius: float
    quad: sh.QuadRule
    values: np.ndarray
    epoch: str = "delta"
    noise_rel: float = 0.0
    seed: int | None = None
    scene_hash: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.quad), 3):
            raise DomainError("sample count does not match the quadrature")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("samples contain non-finite values")
        if self.epoch not in ("delta", "epoch0"):
            raise DomainError("epoch must be 'delta' or 'epoch0'")

    @property
    def points(self):
        return self.radius * self.quad.nodes

    def metadata(self):
        return {
            "radius": self.radius,
            "epoch": self.epoch,
            "noise_rel": self.noise_rel,
            "seed": self.seed,
            "quad_level": self.quad.level,
            "scene_hash": self.scene_hash,
        }


# ------------------------------------------------------------------ physics


def scene_tensors(scene, refinement=None, d_sign=+1, operators=None):
    """Polarization tensor set for each anomaly.

    Balls use the closed form; meshes go through the boundary-element
    solver.  ``operators`` may map ``id(mesh)`` to an assembled operator.
    """
    out = []
    ops = {} if operators is None else operators
    for a in scene.anomalies:
        if isinstance(a.shape, TriMesh):
            op = ops.get(id(a.shape))
            if op is None:
                op = ops[id(a.shape)] = assemble_K_star(a.shape)
            out.append(compute_tensors(op, scene.materials, a.material, d_sign=d_sign))
        else:
            out.append(analytic_ball_tensors(scene.materials, a.material, d_sign=d_sign))
    return out


def dipole_weights(scene, tensors):
    """``v_l = P_l H0(z_l)`` and ``w_l = (delta**(3 alpha_l) - 1) v_l``."""
    if len(tensors) != len(scene.anomalies):
        raise DomainError("need one tensor set per anomaly")
    out = []
    for a, t in zip(scene.anomalies, tensors):
        h0 = eval_background(scene.background, np.asarray(a.center))
        if not np.linalg.norm(h0) > 0:
            raise DegenerateBackgroundError(f"background vanishes at {a.center}")
        v = np.asarray(t.P, dtype=complex) @ h0
        out.append(DipoleWeight(v, a.size_factor * v))
    return out


def dipole_field(centers, moments, x, scale=1.0):
    """``scale * sum_l hess G(x - z_l) q_l`` at points ``x`` (shape (..., 3))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for z, q in zip(np.atleast_2d(centers), np.atleast_2d(moments)):
        out += np.einsum("...ij,j->...i", hessian_gamma0(x - z), q)
    return scale * out


def _check_proximity(scene, x, epoch0=False):
    x = np.asarray(x, dtype=float)
    for l, a in enumerate(scene.anomalies):
        ext = a.epoch0_extent if epoch0 else max(a.extent, a.epoch0_extent)
        dist = np.linalg.norm(x - np.asarray(a.center), axis=-1)
        if np.any(dist < SPARSITY_FACTOR * ext):
            raise ProximityError(
                f"evaluation point closer than {SPARSITY_FACTOR:g} x size to anomaly {l}"
            )


def _per_anomaly_sum(scene, moments, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for a, q in zip(scene.anomalies, moments):
        out += a.delta**3 * np.einsum("...ij,j->...i", hessian_gamma0(x - np.asarray(a.center)), q)
    return out


def secular_variation(scene, weights, x):
    """Difference field ``Hs - H`` at ``x``: ``delta^3 sum_l hess G(x - z_l) w_l``."""
    _check_proximity(scene, x)
    return _per_anomaly_sum(scene, [dw.w for dw in weights], x)


def epoch_perturbation(scene, weights, x):
    """Epoch-0 perturbation ``H - H0`` at ``x``: ``delta^3 sum_l hess G(x - z_l) v_l``."""
    _check_proximity(scene, x, epoch0=True)
    return _per_anomaly_sum(scene, [dw.v for dw in weights], x)


def synthesize_measurement(scene, weights, quad, epoch="delta", noise_rel=0.0, rng_seed=None):
    """Sample a field on the sphere of radius ``scene.radius``.

    Gaussian noise of standard deviation ``noise_rel * rms`` is added to
    every Cartesian component (split evenly between real and imaginary
    parts when the clean field is complex).
    """
    R = float(scene.radius)
    zmax = float(np.linalg.norm(scene.centers, axis=1).max()) if scene.anomalies else 0.0
    if not R > 2 * zmax:
        raise GeometryError(f"measurement radius {R} must exceed 2 max|z| = {2 * zmax}")
    if noise_rel < 0:
        raise DomainError("noise_rel must be non-negative")
    x = R * quad.nodes
    if epoch == "delta":
        vals = secular_variation(scene, weights, x)
    elif epoch == "epoch0":
        vals = epoch_perturbation(scene, weights, x)
    else:
        raise DomainError("epoch must be 'delta' or 'epoch0'")
    if noise_rel > 0:
        rng = np.random.default_rng(rng_seed)
        rms = np.sqrt(np.mean(np.sum(np.abs(vals) ** 2, axis=1)))
        sd = noise_rel * rms
        if np.iscomplexobj(vals) and np.any(vals.imag != 0):
            sd = sd / np.sqrt(2)
            vals = vals + sd * (rng.standard_normal(vals.shape) + 1j * rng.standard_normal(vals.shape))
        else:
            vals = vals + sd * rng.standard_normal(vals.shape)
    return VectorFieldSamples(R, quad, vals, epoch, float(noise_rel), rng_seed, scene_hash(scene))


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class Issue:
    code: str
    severity: str  # "error" or "warning"
    message: str


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not any(i.severity == "error" for i in self.issues)

    @property
    def codes(self):
        return [i.code for i in self.issues]

    def add(self, code, severity, message):
        self.issues.append(Issue(code, severity, message))

    def as_list(self):
        return [{"code": i.code, "severity": i.severity, "message": i.message} for i in self.issues]

    def __str__(self):
        if not self.issues:
            return "scene valid"
        return "\n".join(f"[{i.severity}] {i.code}: {i.message}" for i in self.issues)


def validate_scene(scene):
    """Check the hypotheses under which the dipole model and its inversion hold."""
    rep = ValidationReport()
    an = scene.anomalies
    multi = len(an) > 1
    lo, hi = ALPHA_WINDOW
    m = scene.materials
    for l, a in enumerate(an):
        if a.alpha <= -1:
            rep.add("alpha_lower", "error", f"anomaly {l}: alpha = {a.alpha} <= -1")
        elif not lo < a.alpha < hi:
            rep.add(
                "alpha_window",
                "error" if multi else "warning",
                f"anomaly {l}: alpha = {a.alpha} outside -1/4 < alpha < 1/3",
            )
        if not 0 <= a.material < m.count:
            rep.add("material_index", "error", f"anomaly {l}: no material entry {a.material}")
            continue
        if m.mu[a.material] == m.mu0:
            rep.add("contrast", "error", f"anomaly {l}: mu_l equals mu0")
        if m.eps_s == m.eps0:
            rep.add("contrast", "error", "eps_s equals eps0")
        if m.gamma(a.material) == m.eps_s:
            rep.add("contrast", "error", f"anomaly {l}: gamma_l equals eps_s")
        diag = check_nonsingular(m, a.material)
        if not diag.nonsingular:
            rep.add(
                "tensor_singular",
                "error" if a.shape == "ball" else "warning",
                f"anomaly {l}: transmission condition vanishes "
                f"(value {diag.condition_value:.3g})",
            )
        try:
            h0 = eval_background(scene.background, np.asarray(a.center))
            vanishing = not np.linalg.norm(h0) > 0
        except SingularityError:
            vanishing = True
        if vanishing:
            rep.add("background_vanishing", "error", f"anomaly {l}: H0(z) = 0 or undefined")
    for i in range(len(an)):
        for j in range(len(an)):
            if i == j:
                continue
            gap = 3 * (an[i].alpha + 1) - 4 * (an[j].alpha + 1)
            if abs(gap) < SEPARABILITY_TOL:
                rep.add(
                    "separability",
                    "error",
                    f"anomalies {i},{j}: 3(alpha_{i}+1) = 4(alpha_{j}+1) "
                    f"({3 * (an[i].alpha + 1):.12g})",
                )
            if i < j:
                dist = np.linalg.norm(np.subtract(an[i].center, an[j].center))
                reach = max(an[i].extent, an[i].epoch0_extent) + max(an[j].extent, an[j].epoch0_extent)
                if dist < reach:
                    rep.add("sparsity", "error", f"anomalies {i},{j} overlap")
    R = scene.radius
    if an:
        zmax = float(np.linalg.norm(scene.centers, axis=1).max())
        if not R > 2 * zmax:
            rep.add("radius", "error", f"radius {R} must exceed 2 max|z| = {2 * zmax:g}")
        for l, a in enumerate(an):
            gap = R - np.linalg.norm(a.center)
            if gap < SPARSITY_FACTOR * max(a.extent, a.epoch0_extent):
                rep.add("sparsity", "error", f"anomaly {l} too large for the measurement radius")
    return rep


# ----------------------------------------------------------------------- I/O


def scene_to_dict(scene):
    m = scene.materials
    anomalies = []
    for a in scene.anomalies:
        entry = {"center": list(a.center), "delta": a.delta, "alpha": a.alpha,
                 "material": a.material}
        if a.shape == "ball":
            entry["shape"] = "ball"
        else:
            entry["shape"] = a.shape_source or {
                "vertices": a.shape.vertices.tolist(),
                "faces": a.shape.faces.tolist(),
            }
        anomalies.append(entry)
    return {
        "materials": {"mu0": m.mu0, "eps0": m.eps0, "eps_s": m.eps_s, "omega": m.omega,
                      "mu": list(m.mu), "eps": list(m.eps), "sigma": list(m.sigma)},
        "background": scene.background.to_dict(),
        "anomalies": anomalies,
        "radius": scene.radius,
    }


def scene_from_dict(cfg, base_dir="."):
    """Build a :class:`Scene` from a scenario dictionary.

    Anomalies may carry their own ``mu``, ``eps`` and ``sigma``; those are
    collected into the per-anomaly material table.  Otherwise ``material``
    indexes lists given under ``materials``.
    """
    try:
        mat = dict(cfg.get("materials", {}))
        anoms = cfg["anomalies"]
        per = [all(k in a for k in ("mu", "eps", "sigma")) for a in anoms]
        if anoms and all(per):
            mat["mu"] = [a["mu"] for a in anoms]
            mat["eps"] = [a["eps"] for a in anoms]
            mat["sigma"] = [a["sigma"] for a in anoms]
        materials = Materials(**mat)
        bg = background_from_dict(cfg["background"])
        radius = float(cfg.get("radius", cfg.get("measurement", {}).get("radius")))
        out = []
        for l, a in enumerate(anoms):
            shape = a.get("shape", "ball")
            source = None
            if isinstance(shape, dict):
                shape = TriMesh.from_arrays(shape["vertices"], shape["faces"])
            elif shape != "ball":
                source = shape
                shape = load_mesh(os.path.join(base_dir, shape))
            out.append(Anomaly(a["center"], float(a["delta"]), float(a.get("alpha", 0.0)),
                               shape, int(a.get("material", l if all(per) else 0)), source))
    except (KeyError, TypeError) as exc:
        raise MeshParseError(f"malformed scenario: {exc!r}") from exc
    return Scene(tuple(out), materials, bg, radius)


def scene_hash(scene):
    blob = json.dumps(scene_to_dict(scene), sort_keys=True, default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def _sidecar(path):
    root, ext = os.path.splitext(path)
    return root + ".json"


def write_samples(samples, path):
    """Write samples as CSV plus a JSON sidecar (``<name>.json``).

    Floats are written with ``repr`` so reading back is lossless.
    """
    rows = [CSV_HEADER]
    for u, w, h in zip(samples.quad.nodes, samples.quad.weights, samples.values):
        vals = [u[0], u[1], u[2], w, h[0].real, h[0].imag, h[1].real, h[1].imag, h[2].real, h[2].imag]
        rows.append(",".join(repr(float(v)) for v in vals))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    meta = samples.metadata()
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path, _sidecar(path)


def read_samples(path):
    """Inverse of :func:`write_samples`.

    The quadrature is rebuilt from the CSV nodes and weights; its
    exactness degree is taken from ``quad_level`` in the sidecar and
    verified against the standard rule of that level.
    """
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise MeshParseError(f"{path}: unexpected CSV header {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
    except (OSError, ValueError) as exc:
        raise MeshParseError(f"cannot read samples {path}: {exc}") from exc
    if data.shape[1] != 10:
        raise MeshParseError(f"{path}: expected 10 columns, got {data.shape[1]}")
    level = int(meta["quad_level"])
    nodes, weights = data[:, :3], data[:, 3]
    degree = 0
    if level >= 1:
        ref = sh.sphere_quadrature(level)
        if len(ref) == len(weights) and np.allclose(ref.nodes, nodes, atol=1e-14) and np.allclose(
            ref.weights, weights, rtol=1e-14
        ):
            degree = ref.degree
    if degree == 0:
        raise GeometryError(f"{path}: nodes do not form the level-{level} product rule")
    quad = sh.QuadRule(nodes, weights, degree, level)
    vals = data[:, 4::2] + 1j * data[:, 5::2]
    return VectorFieldSamples(
        float(meta["radius"]), quad, vals, meta["epoch"], float(meta["noise_rel"]),
        meta.get("seed"), meta.get("scene_hash"),
    )
