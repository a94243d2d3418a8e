"""Command-line entry point: ``densadapt <command> [options]``.

Exit codes: 0 on success, 1 on numerical failure (non-finite energies,
solver breakdown, failed gradient check), 2 on usage, configuration or
input errors.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import ConfigError, DensAdaptError, NumericalError, SolverError
from .evaluation import DEFAULT_SAMPLES, evaluate, read_vertex_weights
from .gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, ENERGIES, run_gradcheck, step_sweep
from .landmarks import (
    DEFAULT_ANCHOR_INDEX,
    DEFAULT_ANCHOR_WEIGHT,
    LandmarkSet,
    anchor_weights,
    read_landmarks,
    read_manifest,
    resample_landmarks,
    write_landmarks,
)
from .mesh import icosphere
from .objio import load_obj, save_obj
from .optimizer import FitConfig, fit, write_metrics_csv
from .pipeline import StageError, load_corpus, register_corpus
from .synthetic import KINDS, make_synthetic

logger = logging.getLogger("densadapt")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "DENSADAPT_THREADS"


def resolve_threads(requested):
    """``DENSADAPT_THREADS`` beats ``--threads``; the fallback is every core."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    elif requested is not None:
        value = requested
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _fit_options(p):
    g = p.add_argument_group("fitting")
    g.add_argument("--lambda", dest="lam", type=float, default=19.0, help="diffusion time")
    g.add_argument("--m", type=float, default=1.5, help="adaptation strength (0 disables)")
    g.add_argument("--iters", type=int, default=1400, help="total iterations T")
    g.add_argument("--step-size", type=float, default=1e-2)
    g.add_argument("--lambda-s", type=float, default=1.0, help="curvature smoothing time")
    g.add_argument("--optimizer", choices=("uniform", "adam"), default="uniform")
    g.add_argument("--baseline", choices=("none", "laplacian", "bilaplacian"), default="none")
    g.add_argument("--baseline-weight", type=float, default=0.0)
    g.add_argument("--landmark-weight", type=float, default=1.0)


def _template_options(p):
    p.add_argument("--template", help="template OBJ (default: generated icosphere)")
    p.add_argument("--template-subdivisions", type=int, default=4)


def _common(p):
    p.add_argument("--threads", type=int, default=None, help=f"worker threads ({THREADS_ENV} overrides)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config echo from an earlier run; flags given here win")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="densadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="deform a template onto one target")
    _template_options(p)
    p.add_argument("--target", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--template-landmarks", help="template landmark file (i <index> lines)")
    p.add_argument("--target-landmarks", help="target landmark file")
    _fit_options(p)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("register", help="fit a corpus, resample landmarks, refit with landmarks")
    _template_options(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="register_out")
    p.add_argument("--skip-landmarks", action="store_true", help="stop after the first stage")
    p.add_argument("--anchor", type=int, default=DEFAULT_ANCHOR_INDEX)
    p.add_argument("--anchor-weight", type=float, default=DEFAULT_ANCHOR_WEIGHT)
    _fit_options(p)
    _common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("resample-landmarks", help="place corpus landmarks on the template")
    _template_options(p)
    p.add_argument("--manifest", required=True, help="fitted paths must already exist")
    p.add_argument("--out", default="template_landmarks.txt")
    p.add_argument("--anchor", type=int, default=DEFAULT_ANCHOR_INDEX)
    p.add_argument("--anchor-weight", type=float, default=DEFAULT_ANCHOR_WEIGHT)
    _common(p)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("eval", help="symmetric sampled Chamfer distance and normal MSE")
    p.add_argument("fitted")
    p.add_argument("ground_truth")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--weights", help="per-vertex weights on the ground truth")
    p.add_argument("--out", help="JSON output path")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--sizes", type=int, nargs="+", default=[200])
    p.add_argument("--lambda", dest="lam", type=float, default=19.0)
    p.add_argument("--h", type=float, default=DEFAULT_STEP)
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--energies", nargs="+", choices=ENERGIES, default=list(ENERGIES))
    p.add_argument("--sweep", action="store_true", help="also print the step-size sweep")
    p.add_argument("--corrupt", choices=ENERGIES, help="harness self-test: break one gradient")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-synthetic", help="write a deterministic synthetic target")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--out", required=True, help="output OBJ")
    p.add_argument("--landmarks", help="landmark output (face_blob only)")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="shape parameter, e.g. height=0.5 or subdivisions=5")
    _common(p)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def _prescan_config(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None):
    """Parse ``argv``; with ``--config`` the echoed values become defaults.

    Flags given explicitly still win, and options the echo supplies are no
    longer required on the command line.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _prescan_config(argv)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                echo = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a JSON config echo ({exc})") from None
        command = echo.get("command")
        choices = parser._subparsers._group_actions[0].choices
        if command in choices:
            sub = choices[command]
            for action in sub._actions:
                if action.dest in echo and action.dest not in ("config", "command", "help"):
                    action.default = echo[action.dest]
                    action.required = False
                    if not action.option_strings:
                        action.nargs = "?"
    return parser.parse_args(argv)


def config_echo(args):
    out = {k: v for k, v in vars(args).items() if k not in ("func", "config", "verbose")}
    out["version"] = __version__
    return out


def _echo(args, out_dir=None, name="config.json"):
    cfg = config_echo(args)
    text = json.dumps(cfg, indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir:
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return cfg


def _fit_config(args):
    return FitConfig(
        lam=args.lam, step_size=args.step_size, iterations=args.iters, m=args.m,
        lambda_s=args.lambda_s, landmark_weight=args.landmark_weight, baseline=args.baseline,
        baseline_weight=args.baseline_weight, optimizer=args.optimizer, threads=args.threads,
    )


def _template(args):
    if args.template:
        return load_obj(args.template)
    return icosphere(args.template_subdivisions)


def cmd_fit(args):
    os.makedirs(args.out, exist_ok=True)
    target = load_obj(args.target)
    template = _template(args)
    cfg = _fit_config(args)
    tl = gl = None
    if args.template_landmarks or args.target_landmarks:
        if not (args.template_landmarks and args.target_landmarks):
            raise ConfigError("--template-landmarks and --target-landmarks go together")
        tl = read_landmarks(args.template_landmarks, mesh=template)
        if tl.indices is None:
            raise ConfigError(f"{args.template_landmarks}: template landmarks must be vertex indices")
        gl = read_landmarks(args.target_landmarks, mesh=target)
        cfg = FitConfig(**{**cfg.to_dict(), "use_landmarks": True})
    _echo(args, args.out)
    res = fit(template, target, cfg, tl.indices if tl else None, gl.points if gl else None)
    save_obj(res.mesh, os.path.join(args.out, "fitted.obj"))
    write_metrics_csv(res.trace, os.path.join(args.out, "metrics.csv"))
    last = res.trace[-1]
    print(f"fitted {args.target}: D_c={last['D_c']:.6g} D_n={last['D_n']:.6g} -> {args.out}")
    return EXIT_OK


def cmd_register(args):
    entries = read_manifest(args.manifest)
    corpus = load_corpus(entries)
    template = _template(args)
    os.makedirs(args.out, exist_ok=True)
    _echo(args, args.out)
    result = register_corpus(
        template, corpus, _fit_config(args), out_dir=args.out, skip_landmarks=args.skip_landmarks,
        anchor=args.anchor, anchor_weight=args.anchor_weight,
    )
    for path in result.outputs:
        print(f"wrote {path}")
    if result.stage3:
        for (name, *_), r in zip(corpus, result.stage3):
            print(f"{name}: landmark loss {r.trace[0]['E_lmk']:.4g} -> {r.trace[-1]['E_lmk']:.4g}")
    return EXIT_OK


def cmd_resample(args):
    entries = read_manifest(args.manifest)
    corpus = load_corpus(entries)
    template = _template(args)
    fittings = [(load_obj(fitted_path), lms) for _, _, lms, fitted_path in corpus]
    _echo(args)
    b = len(corpus[0][2])
    out = resample_landmarks(template, fittings, anchor_weights(b, args.anchor, args.anchor_weight))
    header = {
        "reference fitting": corpus[0][0],
        "input order": " ".join(os.path.basename(c[0]) for c in corpus),
        "anchor index": args.anchor,
        "anchor weight": args.anchor_weight,
    }
    write_landmarks(args.out, LandmarkSet(out.positions, indices=out.indices), header=header)
    print(f"wrote {len(out.indices)} landmarks to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    fitted = load_obj(args.fitted)
    gt = load_obj(args.ground_truth)
    weights = None
    if args.weights:
        if not os.path.isfile(args.weights):
            raise ConfigError(f"{args.weights}: no such file")
        weights = read_vertex_weights(args.weights, gt.n_vertices)
    _echo(args)
    res = evaluate(fitted, gt, samples=args.samples, seed=args.seed, weights=weights).to_dict()
    res.update(fitted=args.fitted, ground_truth=args.ground_truth)
    text = json.dumps(res, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    _echo(args)
    results = run_gradcheck(args.sizes, seed=args.seed, lam=args.lam, h=args.h, tol=args.tol,
                            energies=args.energies, corrupt=args.corrupt)
    for r in results:
        print(r)
    if args.sweep:
        hs = (1e-4, 1e-5, 1e-6)
        errs = step_sweep(steps=hs, n_vertices=args.sizes[0], seed=args.seed)
        print("step sweep (D_c): " + ", ".join(f"h={h:.0e}: {e:.3e}" for h, e in zip(hs, errs)))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"gradient check failed: {r.energy} at vertex {r.worst_vertex} "
              f"(rel err {r.max_rel_err:.3e} > {args.tol:g})", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


def _parse_params(items):
    params = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_make_synthetic(args):
    params = _parse_params(args.param)
    _echo(args)
    try:
        mesh, lms = make_synthetic(args.kind, seed=args.seed, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameter for {args.kind}: {exc}") from None
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    save_obj(mesh, args.out)
    print(f"wrote {args.kind} ({mesh.n_vertices} vertices) to {args.out}")
    if lms is not None and args.landmarks:
        write_landmarks(args.landmarks, lms, header={"kind": args.kind, "seed": args.seed})
        print(f"wrote {len(lms)} landmarks to {args.landmarks}")
    return EXIT_OK


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (NumericalError, SolverError, FloatingPointError)):
        return EXIT_NUMERICAL
    return EXIT_USAGE


def main(argv=None):
    try:
        args = parse_args(argv)
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except DensAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
