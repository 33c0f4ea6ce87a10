"""Tiered invariant checks run by ``geomag validate``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import forward as fw
from . import inverse as iv
from . import layerpot as lp
from . import polarization as pz
from . import sphharm as sh


@dataclass
class CheckResult:
    module: str
    name: str
    observed: float
    expected: str
    passed: bool
    seconds: float = 0.0
    error: str | None = None


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


# Each check returns (observed value, expected description, passed).


def _quadrature():
    q = sh.sphere_quadrature(8)
    y = sh.ynm(3, 2, q.nodes)
    err = max(abs(q.integrate(y * np.conj(y)) - 1), abs(q.integrate(y * np.conj(sh.ynm(2, 1, q.nodes)))))
    return err, "<= 1e-12", err <= 1e-12


def _vector_norms():
    q = sh.sphere_quadrature(8)
    worst = 0.0
    for n in range(4):
        for m in range(-n, n + 1):
            v = sh.vector_harmonic("N", n, m, q.nodes)
            worst = max(worst, abs(q.integrate(np.sum(np.abs(v) ** 2, axis=1)) - (n + 1) * (2 * n + 1)))
    return worst, "<= 1e-10", worst <= 1e-10


def _projection_C():
    pm = sh.projection_matrices(sh.sphere_quadrature(6))
    err = abs(pm.C[1, 2] + 2 * np.sqrt(3))
    return err, "C[0,3] = -2 sqrt 3 within 1e-12; cond < 10", err <= 1e-12 and pm.cond_C < 10


def _decomposition():
    tables = sh.CouplingTables(4)
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(100, 3))
    worst = 0.0
    for n in range(4):
        for m in range(-n, n + 1):
            A = sh.eval_A(n, m, dirs)
            for k in range(3):
                xi = np.eye(3)[k]
                worst = max(worst, np.abs(A[..., k] - sh.decompose_A(n, m, xi, dirs, tables)).max())
    return worst, "<= 1e-9", worst <= 1e-9


def _multipole():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(2):
        x = rng.normal(size=3)
        x *= 3 / np.linalg.norm(x)
        z = rng.normal(size=3)
        z *= 0.9 / np.linalg.norm(z)
        for which, ref in (("grad", fw.grad_gamma0(x - z)), ("hessian", fw.hessian_gamma0(x - z))):
            worst = max(worst, _rel(fw.kernel_multipole(x, z, 25, which), ref))
    return worst, "<= 1e-8", worst <= 1e-8


def _np_spectrum(refinement, tol):
    def run():
        op = lp.assemble_K_star(lp.make_unit_sphere_mesh(refinement))
        ev = np.sort(op.eigenvalues().real)[::-1]
        err = max(abs(ev[1:4] - 1 / 6).max(), abs(ev[4:9] - 0.1).max() / 2)
        return err, f"|lambda - 1/(2(2n+1))| <= {tol} (n=1), {2 * tol} (n=2)", err <= tol

    return run


def _ball_tensors(refinement, tol, eps_form="corrected", keys=("P0", "D", "M", "P")):
    def run():
        op = lp.assemble_K_star(lp.make_unit_sphere_mesh(refinement))
        m = pz.Materials(eps_s=2.0, mu=(3.0,), eps=(1.0,), sigma=(1.0,))
        bem = pz.compute_tensors(op, m, 0, eps_form=eps_form)
        ref = pz.analytic_ball_tensors(m, 0)
        err = max(_rel(getattr(bem, k), getattr(ref, k)) for k in keys)
        return err, f"relative error <= {tol}", err <= tol

    return run


def _single_round_trip():
    m = pz.Materials(eps_s=2.0, mu=(2.0,), eps=(1.0,), sigma=(1.0,))
    bg = fw.UniformField((0.2, -0.1, 1.0))
    z = np.array([0.5, -0.3, 0.8])
    sc = fw.Scene([fw.Anomaly(z, 0.1, 0.2)], m, bg, 5.0)
    W = fw.dipole_weights(sc, fw.scene_tensors(sc))
    q = sh.sphere_quadrature(24)
    sd = fw.synthesize_measurement(sc, W, q)
    s0 = fw.synthesize_measurement(sc, W, q, "epoch0")
    res = iv.reconstruct_multi(sd, s0, 1, 0.1, iv.ReconstructOptions(background=bg, materials=m))
    a = res.anomalies[0]
    err = max(np.abs(a.z - z).max(), abs(a.alpha - 0.2), abs(a.mu - 2.0) / 2.0)
    return err, "z, alpha, mu within 1e-8", err <= 1e-8


def _multi_round_trip():
    zs = np.array([[0.6, 0.0, 0.0], [-0.5, 0.3, 0.2]])
    m = pz.Materials(eps_s=2.0, mu=(2.0, 5.0), eps=(1.0, 1.0), sigma=(1.0, 1.0))
    bg = fw.UniformField((0.2, -0.1, 1.0))
    sc = fw.Scene([fw.Anomaly(zs[0], 0.1, 0.1, material=0), fw.Anomaly(zs[1], 0.1, -0.1, material=1)], m, bg, 3.0)
    W = fw.dipole_weights(sc, fw.scene_tensors(sc))
    q = sh.sphere_quadrature(24)
    res = iv.reconstruct_multi(fw.synthesize_measurement(sc, W, q), None, 2, 0.1)
    got = np.array([a.z for a in res.anomalies])
    err = max(np.linalg.norm(zs - g, axis=1).min() for g in got)
    return err, "positions within 1e-6", err <= 1e-6


def _guards():
    m = pz.Materials(mu=(2.0, 2.0), eps=(1.0, 1.0), sigma=(1.0, 1.0))
    bg = fw.UniformField((0, 0, 1.0))
    sc = fw.Scene([fw.Anomaly((0.5, 0, 0), 0.01, 0.1), fw.Anomaly((-0.5, 0, 0), 0.01, -0.175, material=1)], m, bg, 3.0)
    codes = fw.validate_scene(sc).codes
    ok = "separability" in codes
    return float(ok), "separability violation flagged", ok


def _conservation():
    m = pz.Materials()
    sc = fw.Scene([fw.Anomaly((0.3, 0.2, -0.1), 0.1, 0.2)], m, fw.UniformField((0, 0, 1.0)), 3.0)
    W = fw.dipole_weights(sc, fw.scene_tensors(sc))
    q = sh.sphere_quadrature(16)
    s = fw.synthesize_measurement(sc, W, q)
    flux = abs(q.integrate(np.einsum("qi,qi->q", s.values, q.nodes)))
    rms = np.sqrt(np.mean(np.sum(np.abs(s.values) ** 2, axis=1)))
    val = flux / rms
    return val, "net flux <= 1e-10 x rms", val <= 1e-10


FAST = [
    ("sphharm", "quadrature exactness", _quadrature),
    ("sphharm", "vector harmonic norms", _vector_norms),
    ("sphharm", "projection matrix C", _projection_C),
    ("sphharm", "A decomposition identity", _decomposition),
    ("forward", "kernel multipole N=25", _multipole),
    ("layerpot", "sphere NP spectrum (refinement 2)", _np_spectrum(2, 0.02)),
    ("polarization", "ball P0, D, M (refinement 2)", _ball_tensors(2, 0.05, keys=("P0", "D", "M"))),
    ("forward", "zero net flux", _conservation),
    ("forward", "separability guard", _guards),
    ("inverse", "single-anomaly round trip", _single_round_trip),
]

FULL = FAST + [
    ("layerpot", "sphere NP spectrum (refinement 3)", _np_spectrum(3, 0.01)),
    ("polarization", "ball tensors (refinement 3)", _ball_tensors(3, 0.02)),
    ("inverse", "two-anomaly round trip", _multi_round_trip),
]


def degenerate_lambda_eps_check(refinement=2):
    """The ball-tensor check evaluated with the degenerate ``lam_eps``."""
    return ("polarization", "ball tensors with degenerate lam_eps", _ball_tensors(refinement, 0.05, "degenerate", ("P0", "D", "M")))


def run_checks(level="fast", inject=None):
    checks = list(FAST if level == "fast" else FULL)
    if inject == "lambda-eps":
        checks = [c for c in checks if c[0] != "polarization"] + [degenerate_lambda_eps_check()]
    out = []
    for module, name, fn in checks:
        t = time.perf_counter()
        try:
            obs, expected, ok = fn()
            out.append(CheckResult(module, name, float(obs), expected, bool(ok), time.perf_counter() - t))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(module, name, float("nan"), "", False, time.perf_counter() - t, repr(exc)))
    return out


def format_table(results):
    lines = [f"{'module':<13} {'check':<40} {'observed':>11}  {'status':<6} expected"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.module:<13} {r.name:<40} {r.observed:>11.3e}  {status:<6} {r.expected}"
                     + (f"  [{r.error}]" if r.error else ""))
    return "\n".join(lines)
