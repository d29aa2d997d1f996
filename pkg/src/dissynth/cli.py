"""Command-line front end.

Subcommands:

    solve         run a synthesis flow on a problem file
    example1      emit the built-in three-subsystem benchmark problem
    gen-example2  generate a random sparse-interconnection ensemble problem
    compare       run standard vs accelerated consensus from the same start

Problem files are JSON ({"subsystems": [{"A","B","G","C"}...], "M": {...},
"n_d", "n_z", "mode"?}); residual traces are CSV with the header
``k,primal_residual,dual_residual,eta,elapsed_ms``.  Wherever a trace CSV
is written, a rendered PNG of the residual curves is written alongside it.

Exit codes: 0 verified, 1 usage or I/O error, 2 converged but verification
failed, 3 not converged, 4 infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import AdmmConfig, MODE_HINF, MODE_STABILIZE, ResidualTrace, run as admm_run
from .analysis import spectral_abscissa
from .model import (InterconnectionProblem, Subsystem, assemble_open_loop,
                    validate_problem)
from .synthesis import SynthesisResult, synthesize_hinf, synthesize_stabilizing

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNVERIFIED = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4

TRACE_HEADER = ["k", "primal_residual", "dual_residual", "eta", "elapsed_ms"]


# ---------------------------------------------------------------- file I/O

def problem_to_dict(p: InterconnectionProblem, mode: str | None = None) -> dict:
    doc = {
        "subsystems": [
            {"A": s.A.tolist(), "B": s.B.tolist(),
             "G": s.G.tolist(), "C": s.C.tolist()}
            for s in p.subsystems
        ],
        "M": {
            "wy": p.M_wy.tolist(), "wd": p.M_wd.tolist(),
            "zy": p.M_zy.tolist(), "zd": p.M_zd.tolist(),
        },
        "n_d": p.n_d,
        "n_z": p.n_z,
    }
    if mode is not None:
        doc["mode"] = mode
    return doc


def problem_from_dict(doc: dict) -> tuple[InterconnectionProblem, str | None]:
    subs = [Subsystem(A=s["A"], B=s["B"], G=s["G"], C=s["C"])
            for s in doc["subsystems"]]
    M = doc["M"]
    p = InterconnectionProblem(
        subsystems=subs,
        M_wy=np.array(M["wy"], dtype=float),
        M_wd=np.array(M["wd"], dtype=float),
        M_zy=np.array(M["zy"], dtype=float),
        M_zd=np.array(M["zd"], dtype=float),
        n_d=int(doc["n_d"]),
        n_z=int(doc["n_z"]),
    )
    return p, doc.get("mode")


def write_problem(path, p: InterconnectionProblem, mode: str | None = None):
    Path(path).write_text(json.dumps(problem_to_dict(p, mode), indent=2) + "\n")


def read_problem(path) -> tuple[InterconnectionProblem, str | None]:
    with open(path) as fh:
        doc = json.load(fh)
    return problem_from_dict(doc)


def write_trace(path, trace: ResidualTrace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for rec in trace:
            writer.writerow([rec.k, repr(rec.primal), repr(rec.dual),
                             "" if rec.eta is None else repr(rec.eta),
                             repr(rec.elapsed_ms)])


def render_trace_figure(path, traces: dict[str, ResidualTrace], which: str = "both"):
    """Render residual curves next to the CSV output (log scale)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fields = [("primal", r"$\|r^k\|$"), ("dual", r"$\|s^k\|$")]
    if which != "both":
        fields = [f for f in fields if f[0] == which]
    fig, axes = plt.subplots(1, len(fields), figsize=(5.5 * len(fields), 4.0))
    axes = np.atleast_1d(axes)
    for ax, (fieldname, label) in zip(axes, fields):
        for name, trace in traces.items():
            ks = [rec.k for rec in trace]
            vals = [getattr(rec, fieldname) for rec in trace]
            ax.semilogy(ks, vals, label=name, linewidth=2)
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


# ---------------------------------------------------------------- builtin data

def example1_problem() -> InterconnectionProblem:
    """Three coupled two-state subsystems, one disturbance, one output.

    The first block receives the second block's first output and, on its
    second channel, the third block's output plus the exogenous input d;
    the performance output z equals the third block's output.  The
    zero-input interconnection has three eigenvalues in the right half
    plane.
    """
    s1 = Subsystem(A=[[4.0, 0.0], [2.0, -2.0]], B=np.eye(2), G=np.eye(2),
                   C=[[0.5, 0.5]])
    s2 = Subsystem(A=[[8.0, 0.0], [12.0, -2.0]], B=np.eye(2), G=[[1.0], [1.0]],
                   C=0.5 * np.eye(2))
    s3 = Subsystem(A=[[2.0, 0.0], [2.0, -2.0]], B=np.eye(2), G=[[1.0], [1.0]],
                   C=[[0.4, 0.4]])
    # stacked w-channels: (s1 ch1, s1 ch2, s2 ch1, s3 ch1)
    # stacked y-channels: (s1 out, s2 out1, s2 out2, s3 out)
    M_wy = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    M_wd = np.array([[0.0], [1.0], [0.0], [0.0]])
    M_zy = np.array([[0.0, 0.0, 0.0, 1.0]])
    M_zd = np.array([[0.0]])
    return InterconnectionProblem(subsystems=[s1, s2, s3], M_wy=M_wy, M_wd=M_wd,
                                  M_zy=M_zy, M_zd=M_zd, n_d=1, n_z=1)


def _subsystem_rng(seed: int, stream: int) -> np.random.Generator:
    # counter-based Philox keyed on (seed, stream): stream i draws
    # subsystem i, stream N draws the interconnection
    return np.random.default_rng(np.random.Philox(key=[seed, stream]))


def generate_example2(n_sub: int = 20, states: int = 5, inputs: int = 2,
                      outputs: int = 2, density: float = 0.05,
                      seed: int = 0, resample_budget: int = 1000) -> InterconnectionProblem:
    """Random ensemble: N unstable controllable blocks, sparse coupling.

    Each A is standard normal shifted so its spectral abscissa is exactly 1;
    (A, B) pairs are redrawn until the controllability matrix has full rank
    (SVD tolerance 1e-9).  The interconnection blocks have independently
    Bernoulli(density) nonzero entries with standard normal values; every
    d column of M_wd and every z row of M_zy is guaranteed at least one
    nonzero entry so the channels are actually wired.  Deterministic in
    `seed` (per-stream Philox, see :func:`_subsystem_rng`).
    """
    subs = []
    for i in range(n_sub):
        rng = _subsystem_rng(seed, i)
        for attempt in range(resample_budget):
            A = rng.standard_normal((states, states))
            A = A + (1.0 - np.max(np.linalg.eigvals(A).real)) * np.eye(states)
            B = rng.standard_normal((states, inputs))
            ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B
                              for k in range(states)])
            if np.linalg.matrix_rank(ctrb, tol=1e-9) == states:
                break
        else:
            raise RuntimeError(
                f"subsystem {i}: no controllable draw in {resample_budget} tries")
        G = rng.standard_normal((states, outputs))
        C = rng.standard_normal((outputs, states))
        subs.append(Subsystem(A=A, B=B, G=G, C=C))

    rng = _subsystem_rng(seed, n_sub)
    n_w = n_sub * outputs
    n_y = n_sub * outputs
    n_d = n_z = 2

    def sparse_block(rows, cols):
        mask = rng.random((rows, cols)) < density
        vals = rng.standard_normal((rows, cols))
        return np.where(mask, vals, 0.0)

    M_wy = sparse_block(n_w, n_y)
    M_wd = sparse_block(n_w, n_d)
    M_zy = sparse_block(n_z, n_y)
    M_zd = sparse_block(n_z, n_d)
    for j in range(n_d):
        if not M_wd[:, j].any():
            M_wd[rng.integers(n_w), j] = rng.standard_normal()
    for i in range(n_z):
        if not M_zy[i, :].any():
            M_zy[i, rng.integers(n_y)] = rng.standard_normal()
    return InterconnectionProblem(subsystems=subs, M_wy=M_wy, M_wd=M_wd,
                                  M_zy=M_zy, M_zd=M_zd, n_d=n_d, n_z=n_z)


# ---------------------------------------------------------------- commands

def _config_from_args(args, mode: str) -> AdmmConfig:
    kwargs = dict(mode=mode, accelerated=args.accel, restart=args.restart,
                  max_iter=args.max_iter,
                  tol_primal=args.tol, tol_dual=args.tol)
    if args.rho is not None:
        kwargs["rho"] = args.rho
    if args.mu is not None:
        kwargs["mu"] = args.mu
    if args.margin is not None:
        kwargs["eps_margin"] = args.margin
    return AdmmConfig(**kwargs)


def _result_to_dict(result: SynthesisResult) -> dict:
    doc = {
        "status": result.status,
        "eta": result.eta,
        "gain_bound": result.bound,
        "iterations": len(result.trace) if result.trace is not None else None,
        "gains": [K.tolist() for K in result.gains],
        "certificates": [
            {"S": c.S.tolist(), "P": c.P.tolist(), "Y": c.Y.tolist()}
            for c in result.certificates
        ],
    }
    if result.report is not None:
        doc["verification"] = result.report.summary()
    return doc


_EXIT_BY_STATUS = {
    "verified": EXIT_OK,
    "converged_unverified": EXIT_UNVERIFIED,
    "not_converged": EXIT_NOT_CONVERGED,
    "failed": EXIT_NOT_CONVERGED,
    "infeasible": EXIT_INFEASIBLE,
}


def cmd_solve(args) -> int:
    try:
        p, file_mode = read_problem(args.input)
    except FileNotFoundError:
        print(f"error: no such file: {args.input}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: cannot parse {args.input}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    issues = validate_problem(p)
    if issues:
        for line in issues:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_USAGE
    mode = args.mode or file_mode
    if mode not in (MODE_STABILIZE, MODE_HINF):
        print("error: no mode given (use --mode or a 'mode' key in the file)",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config_from_args(args, mode)
        if mode == MODE_STABILIZE:
            result = synthesize_stabilizing(p, cfg)
        else:
            result = synthesize_hinf(p, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if result.trace is not None and args.trace:
        write_trace(args.trace, result.trace)
        render_trace_figure(Path(args.trace).with_suffix(".png"),
                            {"run": result.trace})
    if args.out:
        Path(args.out).write_text(json.dumps(_result_to_dict(result), indent=2) + "\n")

    if result.eta is not None:
        print(f"status: {result.status}  eta: {result.eta:.6g}  "
              f"bound: {result.bound:.6g}  iterations: {len(result.trace)}")
    else:
        iters = len(result.trace) if result.trace is not None else 0
        print(f"status: {result.status}  iterations: {iters}")
    if result.report is not None:
        print(f"closed-loop abscissa: {result.report.closed_loop_abscissa:.6g}  "
              f"verification: {'pass' if result.report.passed else 'FAIL'}")
        if not result.report.detectability_ok:
            print("warning: zero-state rank condition fails "
                  f"(rank {result.report.detectability_rank} < {p.n_y}); "
                  "stability is certified numerically, not by the rank argument")
    return _EXIT_BY_STATUS[result.status]


def cmd_example1(args) -> int:
    p = example1_problem()
    write_problem(args.output, p, mode=MODE_HINF)
    ol = spectral_abscissa(assemble_open_loop(p).A)
    print(f"wrote {args.output} (open-loop abscissa {ol:.3f})")
    return EXIT_OK


def cmd_gen_example2(args) -> int:
    try:
        p = generate_example2(n_sub=args.n, states=args.states,
                              inputs=args.inputs, outputs=args.outputs,
                              density=args.density, seed=args.seed)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    write_problem(args.output, p, mode=MODE_HINF)
    print(f"wrote {args.output} ({args.n} subsystems, seed {args.seed})")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        p, file_mode = read_problem(args.input)
    except FileNotFoundError:
        print(f"error: no such file: {args.input}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: cannot parse {args.input}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    issues = validate_problem(p)
    if issues:
        for line in issues:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_USAGE
    mode = args.mode or file_mode or (
        MODE_HINF if (p.n_d or p.n_z) else MODE_STABILIZE)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    traces = {}
    for name, accel in (("standard", False), ("accelerated", True)):
        kwargs = dict(mode=mode, accelerated=accel, max_iter=args.max_iter,
                      tol_primal=args.tol, tol_dual=args.tol)
        if args.rho is not None:
            kwargs["rho"] = args.rho
        if args.mu is not None:
            kwargs["mu"] = args.mu
        try:
            result = admm_run(p, AdmmConfig(**kwargs))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        traces[name] = result.trace
        write_trace(outdir / f"{name}.csv", result.trace)
        hit = result.trace.iterations_to(args.tol, args.tol)
        print(f"{name}: iterations to tol {args.tol:g}: "
              f"{hit if hit is not None else 'not reached'} "
              f"(final r {result.trace.final.primal:.3e}, "
              f"s {result.trace.final.dual:.3e})")
    render_trace_figure(outdir / "primal_residual.png", traces, which="primal")
    render_trace_figure(outdir / "dual_residual.png", traces, which="dual")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dissynth",
        description="Block-diagonal state-feedback synthesis for interconnected "
                    "LTI systems via local dissipation LMIs and consensus ADMM.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run synthesis on a problem file")
    ps.add_argument("--input", required=True)
    ps.add_argument("--mode", choices=[MODE_STABILIZE, MODE_HINF])
    ps.add_argument("--accel", action="store_true")
    ps.add_argument("--restart", action="store_true")
    ps.add_argument("--rho", type=float, default=None)
    ps.add_argument("--mu", type=float, default=None)
    ps.add_argument("--max-iter", type=int, default=200)
    ps.add_argument("--tol", type=float, default=1e-6)
    ps.add_argument("--margin", type=float, default=None)
    ps.add_argument("--trace", default=None, help="residual trace CSV (PNG rendered alongside)")
    ps.add_argument("--out", default=None, help="result JSON")
    ps.set_defaults(func=cmd_solve)

    pe = sub.add_parser("example1", help="emit the built-in benchmark problem")
    pe.add_argument("-o", "--output", required=True)
    pe.set_defaults(func=cmd_example1)

    pg = sub.add_parser("gen-example2", help="generate a random ensemble problem")
    pg.add_argument("--n", type=int, default=20)
    pg.add_argument("--states", type=int, default=5)
    pg.add_argument("--inputs", type=int, default=2)
    pg.add_argument("--outputs", type=int, default=2)
    pg.add_argument("--density", type=float, default=0.05)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("-o", "--output", required=True)
    pg.set_defaults(func=cmd_gen_example2)

    pc = sub.add_parser("compare", help="standard vs accelerated consensus")
    pc.add_argument("--input", required=True)
    pc.add_argument("--mode", choices=[MODE_STABILIZE, MODE_HINF], default=None)
    pc.add_argument("--rho", type=float, default=None)
    pc.add_argument("--mu", type=float, default=None)
    pc.add_argument("--max-iter", type=int, default=50)
    pc.add_argument("--tol", type=float, default=1e-6)
    pc.add_argument("-o", "--output", required=True, help="directory for traces and figures")
    pc.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
