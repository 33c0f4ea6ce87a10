"""Command-line front end: ``geomag simulate|reconstruct|tensors|validate``.

Exit codes: 0 success, 2 validation failure, 3 numerical or optimizer
failure, 4 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from contextlib import nullcontext

import numpy as np

from . import __version__
from . import forward as fw
from . import inverse as iv
from . import layerpot as lp
from . import polarization as pz
from . import selfcheck
from . import sphharm as sh
from .errors import (
    DomainError,
    GeomagError,
    GeometryError,
    MeshError,
    MeshParseError,
    OptimizationError,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
DEFAULT_QUAD_LEVEL = 24


class CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run record written once per invocation."""

    def __init__(self, command, argv, path):
        self.path = path
        self.data = {
            "tool": "geomag",
            "version": __version__,
            "command": command,
            "argv": list(argv),
            "config_hash": None,
            "inputs": [],
            "outputs": [],
            "warnings": [],
            "exit_code": None,
        }
        self._t0 = time.perf_counter()

    def add_input(self, path):
        self.data["inputs"].append({"path": path, "sha256": _sha256(path)})

    def add_output(self, path):
        self.data["outputs"].append({"path": path, "sha256": _sha256(path)})

    def warn(self, msg):
        self.data["warnings"].append(str(msg))

    def write(self, code):
        self.data["exit_code"] = code
        self.data["elapsed_s"] = round(time.perf_counter() - self._t0, 6)
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliFailure(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _load_scene(path):
    cfg = _load_json(path)
    try:
        return fw.scene_from_dict(cfg, base_dir=os.path.dirname(os.path.abspath(path))), cfg
    except (MeshError, OSError) as exc:
        raise CliFailure(EXIT_IO, f"{path}: {exc}") from exc
    except (DomainError, ValueError) as exc:
        raise CliFailure(EXIT_INVALID, f"{path}: {exc}") from exc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands


def cmd_simulate(args, man):
    scene, cfg = _load_scene(args.config)
    man.add_input(args.config)
    man.data["config_hash"] = fw.scene_hash(scene)
    report = fw.validate_scene(scene)
    for issue in report.issues:
        if issue.severity == "warning":
            man.warn(f"{issue.code}: {issue.message}")
    if not report.ok:
        print(str(report), file=sys.stderr)
        man.data["validation"] = report.as_list()
        raise CliFailure(EXIT_INVALID, "scenario violates the model hypotheses")
    meas = cfg.get("measurement", {})
    level = int(meas.get("quad_level", DEFAULT_QUAD_LEVEL))
    noise = float(meas.get("noise", 0.0))
    seed = int(meas.get("seed", 0))
    quad = sh.sphere_quadrature(level)
    tensors = fw.scene_tensors(scene, d_sign=int(cfg.get("d_sign", 1)))
    weights = fw.dipole_weights(scene, tensors)
    outs = []
    epochs = ["delta"] + (["epoch0"] if meas.get("epoch0", True) else [])
    for k, epoch in enumerate(epochs):
        samples = fw.synthesize_measurement(scene, weights, quad, epoch, noise, [seed, k])
        outs.extend(fw.write_samples(samples, f"{args.out}.{epoch}.csv"))
    for p in outs:
        man.add_output(p)
    print(f"wrote {', '.join(outs)}")


def _read(path, man):
    try:
        s = fw.read_samples(path)
    except (MeshParseError, GeometryError, KeyError) as exc:
        raise CliFailure(EXIT_IO, str(exc)) from exc
    man.add_input(path)
    return s


def cmd_reconstruct(args, man):
    sd = _read(args.delta, man)
    s0 = None
    if args.epoch0:
        s0 = _read(args.epoch0, man)
        if len(s0.quad) != len(sd.quad) or not np.array_equal(s0.quad.nodes, sd.quad.nodes):
            raise CliFailure(EXIT_IO, "delta and epoch-0 samples use different quadratures")
    if sd.epoch != "delta":
        man.warn(f"{args.delta} is tagged epoch={sd.epoch!r}")
    opts = iv.ReconstructOptions(nmax=args.nmax, n_starts=args.starts, seed=args.seed)
    if args.config:
        scene, _ = _load_scene(args.config)
        man.add_input(args.config)
        opts.background = scene.background
        opts.materials = scene.materials
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = iv.reconstruct_multi(sd, s0, args.l0, args.delta_scale, opts)
    except OptimizationError as exc:
        best = exc.best or {}
        _write_json(args.out, {"anomalies": [], "residual": None, "warnings": [str(exc)],
                               "best": iv._jsonable(best)})
        man.add_output(args.out)
        raise CliFailure(EXIT_NUMERIC, str(exc)) from exc
    if args.config:
        _assign_materials(res, scene, s0, opts, man)
    for c in caught:
        if str(c.message) not in res.warnings:
            res.warnings.append(str(c.message))
    for msg in res.warnings:
        man.warn(msg)
    res.to_json(args.out)
    man.add_output(args.out)
    print(f"wrote {args.out} (residual {res.residual:.3e})")


def _assign_materials(res, scene, s0, opts, man):
    """Recover ``mu`` using the material entry and shape of the nearest configured anomaly."""
    if s0 is None:
        return
    centers = scene.centers
    for k, est in enumerate(res.anomalies):
        if est.v is None or not np.linalg.norm(est.w) > 0:
            continue
        j = int(np.argmin(np.linalg.norm(centers - est.z, axis=1)))
        a = scene.anomalies[j]
        h0 = fw.eval_background(scene.background, est.z)
        try:
            est.mu = iv.recover_mu(est.v, h0, scene.materials, a.shape, a.material)
        except GeomagError as exc:
            est.mu = None
            res.warnings.append(f"mu for anomaly {k}: {exc}")


def cmd_tensors(args, man):
    if args.shape != "ball" and args.refinement is not None:
        raise CliFailure(EXIT_IO, "--refinement applies to --shape ball only; a mesh file fixes its own resolution")
    try:
        mat = pz.Materials(mu0=args.mu0, eps0=args.eps0, eps_s=args.eps_shell, mu=(args.mu,),
                           eps=(args.eps,), sigma=(args.sigma,), omega=args.omega)
    except DomainError as exc:
        raise CliFailure(EXIT_INVALID, str(exc)) from exc
    if args.shape == "ball":
        mesh = lp.make_unit_sphere_mesh(3 if args.refinement is None else args.refinement)
    else:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                mesh = lp.load_mesh(args.shape)
            for c in caught:
                man.warn(c.message)
        except MeshError as exc:
            raise CliFailure(EXIT_IO, str(exc)) from exc
        man.add_input(args.shape)
    bem = pz.compute_tensors(mesh, mat, 0, d_sign=args.d_sign)
    lam = pz.lambda_params(mat, 0)
    diag = pz.check_nonsingular(mat, 0)
    out = {
        "shape": args.shape,
        "panels": mesh.n_panels,
        "lambda": {"gamma": [lam.lam_gamma.real, lam.lam_gamma.imag], "mu": lam.lam_mu, "eps": lam.lam_eps},
        "nonsingular": {"condition_value": [diag.condition_value.real, diag.condition_value.imag],
                        "nonsingular": diag.nonsingular},
        "d_sign": args.d_sign,
        "bem": bem.as_dict(),
    }
    line = f"P = mu0 M - eps0 D - P0; |D| = {np.linalg.norm(bem.D):.3e}, |P| = {np.linalg.norm(bem.P):.3e}"
    if args.shape == "ball":
        ref = pz.analytic_ball_tensors(mat, 0, d_sign=args.d_sign)
        errs = {}
        for k in ("P0", "D", "M", "P"):
            a = np.asarray(getattr(ref, k))
            nrm = np.linalg.norm(a)
            errs[k] = float(np.linalg.norm(np.asarray(getattr(bem, k)) - a) / nrm) if nrm > 0 else 0.0
        out["analytic"] = ref.as_dict()
        out["relative_error"] = errs
        line += "\nBEM vs closed form: " + ", ".join(f"{k} {v:.3%}" for k, v in errs.items())
    _write_json(args.out, out)
    man.add_output(args.out)
    print(line)


def cmd_validate(args, man):
    results = selfcheck.run_checks(args.level, inject=args.inject)
    print(selfcheck.format_table(results))
    man.data["checks"] = [
        {"module": r.module, "name": r.name, "observed": r.observed if np.isfinite(r.observed) else None,
         "expected": r.expected, "passed": r.passed, "error": r.error}
        for r in results
    ]
    failed = [r for r in results if not r.passed]
    if failed:
        raise CliFailure(EXIT_INVALID, f"{len(failed)} check(s) failed")


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="geomag", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"geomag {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize difference and epoch-0 samples")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output prefix")

    r = sub.add_parser("reconstruct", help="recover anomalies from sample files")
    r.add_argument("--delta", required=True, help="difference-field CSV")
    r.add_argument("--epoch0", help="epoch-0 perturbation CSV")
    r.add_argument("--l0", type=int, required=True)
    r.add_argument("--delta-scale", type=float, required=True)
    r.add_argument("--nmax", type=int)
    r.add_argument("--starts", type=int, default=32)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", help="scenario JSON supplying background and materials (for mu)")
    r.add_argument("--out", required=True)

    t = sub.add_parser("tensors", help="polarization tensors of a shape")
    t.add_argument("--shape", default="ball", help="'ball' or an OFF mesh path")
    t.add_argument("--refinement", type=int)
    t.add_argument("--mu", type=float, required=True)
    t.add_argument("--eps", type=float, default=1.0)
    t.add_argument("--sigma", type=float, default=0.0)
    t.add_argument("--eps-shell", type=float, default=2.0)
    t.add_argument("--mu0", type=float, default=1.0)
    t.add_argument("--eps0", type=float, default=1.0)
    t.add_argument("--omega", type=float, default=pz.DEFAULT_OMEGA)
    t.add_argument("--d-sign", type=int, choices=(1, -1), default=1)
    t.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--inject", choices=("lambda-eps",), help="negative control")
    v.add_argument("--manifest", default="geomag-validate.manifest.json")
    return p


def _manifest_path(args):
    if args.command == "simulate":
        return f"{args.out}.manifest.json"
    if args.command == "validate":
        return args.manifest
    return os.path.splitext(args.out)[0] + ".manifest.json"


def _thread_limit():
    n = os.environ.get("GEOMAG_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "tensors": cmd_tensors,
    "validate": cmd_validate,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    man = Manifest(args.command, argv, _manifest_path(args))
    code = EXIT_OK
    try:
        with _thread_limit():
            COMMANDS[args.command](args, man)
    except CliFailure as exc:
        code = exc.code
        print(f"geomag {args.command}: {exc}", file=sys.stderr)
    except (OSError, MeshError) as exc:
        code = EXIT_IO
        print(f"geomag {args.command}: {exc}", file=sys.stderr)
    except DomainError as exc:
        code = EXIT_INVALID
        print(f"geomag {args.command}: {exc}", file=sys.stderr)
    except GeomagError as exc:
        code = EXIT_NUMERIC
        print(f"geomag {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    if code:
        man.data["error"] = True
    man.write(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
