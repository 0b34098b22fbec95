"""``equikernel`` command-line driver.

Exit codes: 0 success or all checks passed, 1 a check failed or a run
aborted, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import _backend, kernels, so3
from .errors import ConfigurationError, DegenerateEdgeError, RelaxationError, XYZParseError
from .graph import format_xyz, parse_xyz

PROFILES = ("tiny", "base")


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_model_args(p, with_weights=True):
    p.add_argument("--config", type=Path, help="model config JSON (field names of ModelConfig)")
    p.add_argument("--profile", choices=PROFILES, default="tiny", help="built-in config when --config is absent")
    if with_weights:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--checkpoint", type=Path, help="checkpoint manifest (JSON)")
        g.add_argument("--random-seed", type=int, help="random weights from this seed (default 0)")
    p.add_argument("--threads", type=_positive_int, help="worker threads (env EQUIKERNEL_THREADS)")


def _config(args):
    from .model import ModelConfig

    if args.config is not None:
        return ModelConfig.load(args.config)
    return ModelConfig.tiny() if args.profile == "tiny" else ModelConfig()


def _model(args):
    from .model import EquiformerV2, load_checkpoint

    if args.checkpoint is not None:
        return load_checkpoint(args.checkpoint, _config(args) if args.config is not None else None)
    return EquiformerV2(_config(args), seed=0 if args.random_seed is None else args.random_seed)


def _read_structure(path: Path):
    try:
        return parse_xyz(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except XYZParseError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_check_equivariance(args) -> int:
    from .audit import check_equivariance

    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    so3.set_cg_corruption(args.corrupt_cg)
    try:
        results = check_equivariance(_config(args), seed=args.seed, n_trials=args.trials)
    finally:
        so3.set_cg_corruption(False)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if args.out is not None:
        report = [
            {"layer": r.name, "max_error": r.max_error, "tolerance": r.tolerance, "passed": r.passed}
            for r in results
        ]
        Path(args.out).write_text(json.dumps(report, indent=1) + "\n")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print("all equivariance checks passed")
    return 0


def cmd_check_oracle(args) -> int:
    from .audit import ORACLE_TOL, check_oracle

    if not 0 <= args.lmax <= 3:
        raise UsageError("--lmax must lie in [0, 3]")
    if args.edges < 1:
        raise UsageError("--edges must be positive")
    err = check_oracle(args.lmax, seed=args.seed, n_edges=args.edges)
    ok = err <= ORACLE_TOL
    print(f"{'PASS' if ok else 'FAIL'} L_max={args.lmax} edges={args.edges} max|escn - so3|={err:.3e} tol={ORACLE_TOL:.0e}")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .bench import records_to_csv, run_benchmark, slope_gap

    if args.reps < 3:
        raise UsageError("--reps must be at least 3")
    if any(L < 1 or L > so3.LMAX_SUPPORTED for L in args.lmax):
        raise UsageError(f"--lmax values must lie in [1, {so3.LMAX_SUPPORTED}]")
    if args.backend:
        kernels.set_backend(args.backend)
    records, slopes = run_benchmark(args.lmax, args.channels, args.reps, args.mmax, args.edges, args.seed)
    _emit(records_to_csv(records), args.out)
    for k, s in slopes.items():
        print(f"slope[{k}] = {'n/a' if s is None else f'{s:.3f}'}", file=sys.stderr if args.out is None else sys.stdout)
    gap = slope_gap(slopes)
    if gap is not None:
        print(f"slope gap (so3_full - escn) = {gap:.3f}", file=sys.stderr if args.out is None else sys.stdout)
    return 0


def cmd_predict(args) -> int:
    structure = _read_structure(args.xyz)
    model = _model(args)
    energy, forces = model.predict(structure)
    doc = {
        "energy": energy,
        "energy_unit": "eV",
        "forces": forces.tolist(),
        "forces_unit": "eV/A",
        "species": structure.species.tolist(),
    }
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def cmd_relax(args) -> int:
    from .relax import relax

    if args.max_steps < 1:
        raise UsageError("--max-steps must be at least 1")
    if not args.fmax > 0 or not args.step_size > 0:
        raise UsageError("--fmax and --step-size must be positive")
    structure = _read_structure(args.xyz)
    model = _model(args)
    try:
        trace = relax(structure, model.predict, args.max_steps, args.fmax, args.step_size)
    except RelaxationError as exc:
        print(f"relaxation aborted: {exc}", file=sys.stderr)
        if exc.trace is not None:
            sys.stderr.write(exc.trace.to_csv())
        return 1
    _emit(trace.to_csv(), args.out)
    final = structure.with_positions(trace.final.positions)
    status = "converged" if trace.converged else "not converged"
    comment = f"relaxed steps={len(trace)} energy={trace.final.energy!r} fmax={trace.final.fmax!r} {status}"
    if args.final_xyz is not None:
        Path(args.final_xyz).write_text(format_xyz(final, comment))
    if args.trajectory is not None:
        frames = [
            format_xyz(structure.with_positions(s.positions), f"step={s.step} energy={s.energy!r}")
            for s in trace.steps
        ]
        Path(args.trajectory).write_text("".join(frames))
    print(f"{status} after {len(trace)} steps, fmax={trace.final.fmax:.4g} eV/A", file=sys.stderr)
    return 0


def cmd_init_checkpoint(args) -> int:
    from .model import EquiformerV2, save_checkpoint

    model = EquiformerV2(_config(args), seed=args.random_seed)
    save_checkpoint(model, args.out)
    print(f"wrote {args.out} ({model.num_parameters()} parameters)")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equikernel", description="SO(3)-equivariant kernels and EquiformerV2 tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-equivariance", help="rotate-commute audit of every layer")
    _add_model_args(p, with_weights=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--corrupt-cg", action="store_true", help="flip one Clebsch-Gordan sign to prove the audit bites")
    p.add_argument("--out", type=Path, help="write a JSON report")
    p.set_defaults(func=cmd_check_equivariance)

    p = sub.add_parser("check-oracle", help="compare eSCN with the dense tensor product")
    p.add_argument("--lmax", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edges", type=int, default=20)
    p.add_argument("--threads", type=_positive_int)
    p.set_defaults(func=cmd_check_oracle)

    p = sub.add_parser("bench", help="time so3_full vs escn and fit log-log slopes")
    p.add_argument("--lmax", type=int, nargs="+", default=[2, 4, 6, 8])
    p.add_argument("--mmax", type=int, help="SO(2) order cut-off (default: L_max)")
    p.add_argument("--channels", type=_positive_int, default=8)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--edges", type=_positive_int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=kernels.available_backends())
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="energy and forces for an XYZ structure")
    p.add_argument("xyz", type=Path)
    _add_model_args(p)
    p.add_argument("--out", type=Path, help="JSON path (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("relax", help="clipped steepest-descent relaxation")
    p.add_argument("xyz", type=Path)
    _add_model_args(p)
    p.add_argument("--max-steps", type=int, default=300)
    p.add_argument("--fmax", type=float, default=0.02, help="eV/A")
    p.add_argument("--step-size", type=float, default=0.05, help="A^2/eV")
    p.add_argument("--out", type=Path, help="trace CSV path (default stdout)")
    p.add_argument("--final-xyz", type=Path)
    p.add_argument("--trajectory", type=Path, help="multi-frame XYZ of every step")
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("init-checkpoint", help="write a randomly initialised checkpoint")
    _add_model_args(p, with_weights=False)
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_init_checkpoint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _backend.set_num_threads(_backend.resolve_threads(getattr(args, "threads", None)))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"equikernel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, DegenerateEdgeError, ValueError, KeyError, OSError) as exc:
        print(f"equikernel {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
