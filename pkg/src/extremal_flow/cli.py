"""Command line front end.

Exit codes: 0 success, 1 runtime error, 2 parse or input error, 3 hypothesis
or schedule violation (including failed verification criteria).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .control import closed_loop, synthesize
from .flow import ScheduleError, integrate
from .geometry import chebyshev
from .multimap import DomainError, HypothesisError
from .plotting import trajectory_chart
from .scenario import Scenario, ScenarioError, benchmark_names, benchmark_path, load
from .variance import OUTSIDE, h_value
from .verification import build_state, run_scenario

EXIT_OK, EXIT_RUNTIME, EXIT_PARSE, EXIT_VIOLATION = 0, 1, 2, 3


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_json_default) + "\n")


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _scenario(args) -> Scenario:
    p = Path(args.scenario)
    if not p.exists() and args.scenario in benchmark_names():
        p = benchmark_path(args.scenario)
    if not p.exists():
        raise ScenarioError(f"no scenario file {args.scenario!r}")
    sc = load(p)
    if args.seed is not None:
        sc.parameters["seed"] = args.seed
    if args.levels is not None:
        sc.parameters["levels"] = args.levels
    if args.paths is not None:
        sc.parameters["paths"] = args.paths
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_h_eval(args) -> int:
    sc = _scenario(args)
    P = sc.F.value(args.t, args.x)
    y = args.y if args.y is not None else sc.f0.evaluate(args.t, args.x)
    h = h_value(y, P)
    c, r = chebyshev(P)
    report = {"scenario": sc.name, "t": args.t, "x": args.x, "y": y, "vertices": P.vertices,
              "h": None if h == OUTSIDE else h, "outside": h == OUTSIDE,
              "chebyshev_center": c, "chebyshev_radius": r}
    print(f"h(y, F(t, x)) = {'-inf (y outside F)' if h == OUTSIDE else repr(h)}")
    print(f"chebyshev center = {np.asarray(c).tolist()}, radius = {r!r}")
    if h != OUTSIDE:
        residual = r * r - float(np.sum((y - c) ** 2)) - h * h
        report["chebyshev_residual"] = residual
        print(f"r^2 - |y - c|^2 - h^2 = {residual!r}")
    if args.out:
        write_json(_out(args) / "h_eval.json", report)
    return EXIT_OK


def _certificates(state) -> dict:
    return {k: v for k, v in state.to_json(include_tree=False).items()}


def cmd_build(args) -> int:
    sc = _scenario(args)
    hyp = sc.F.check_hypotheses(seed=sc.param("seed"))
    out = _out(args)
    if not (hyp["bound_ok"] and hyp["lipschitz_ok"] and hyp["tube_in_domain"]):
        write_json(out / "certificates.json", {"scenario": sc.name, "hypotheses": hyp, "status": "hypothesis_violation"})
        print(f"hypothesis check failed: {hyp}", file=sys.stderr)
        return EXIT_VIOLATION
    state = build_state(sc)
    cert = _certificates(state)
    cert.update({"scenario": sc.name, "hypotheses": hyp})
    write_json(out / "iteration.json", {"scenario": sc.name, **state.to_json()})
    write_json(out / "certificates.json", cert)
    for r in state.levels:
        print(f"level {r.level}: eps={r.eps:.3e} N={r.crossings} cells={r.cells} strips={r.strips} "
              f"picard={r.picard:.3e} l1={r.l1_drift:.3e} h_int={r.h_integral:.3e} (bound {r.h_bound:.3e})")
    print(f"status: {state.status}" + (f" ({state.reason})" if state.reason else ""))
    if state.status != "ok":
        return EXIT_VIOLATION
    if any(r.violations for r in state.levels):
        return EXIT_VIOLATION
    return EXIT_OK


def _start(args, sc: Scenario):
    x0 = args.x0 if args.x0 is not None else sc.F.seed_set.grid(1)[0]
    if x0.size != sc.dim:
        raise DomainError(f"x0 has {x0.size} components, expected {sc.dim}")
    return args.t0, x0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    t0, x0 = _start(args, sc)
    state = build_state(sc)
    x = integrate(state.final, t0, x0, sc.F, step=sc.param("step"))
    y = integrate(sc.f0, t0, x0, sc.F, step=sc.param("step"))
    x.to_csv(out / "extremal.csv")
    y.to_csv(out / "relaxed.csv")
    (out / "trajectories.svg").write_text(
        trajectory_chart([x, y], ["f_K", "f0"], title=f"{sc.name}: extremal vs relaxed"))
    dist = x.sup_distance(y)
    write_json(out / "simulate.json", {"scenario": sc.name, "seed": sc.param("seed"), "t0": t0, "x0": x0,
                                       "levels": state.K, "status": state.status, "sup_distance": dist,
                                       "eps0": sc.param("eps0")})
    print(f"sup_t |x - y| = {dist!r} (eps0 = {sc.param('eps0')})")
    return EXIT_OK if state.status == "ok" else EXIT_VIOLATION


def cmd_bangbang(args) -> int:
    sc = _scenario(args)
    if sc.kind != "control":
        raise ScenarioError("bangbang needs a control scenario")
    out = _out(args)
    t0, x0 = _start(args, sc)
    fb = synthesize(sc.system, sc.feedback, sc.param("eps0"), sc.param("levels"), paths=sc.param("paths"),
                    seed=sc.param("seed"), h_paths=sc.param("h_paths"))
    x = closed_loop(sc.system, fb, t0, x0, step=sc.param("step"))
    y = integrate(fb.f0, t0, x0, fb.F, step=sc.param("step"))
    x.to_csv(out / "closed_loop.csv")
    x.controls_to_csv(out / "controls.csv")
    y.to_csv(out / "relaxed.csv")
    (out / "closed_loop.svg").write_text(
        trajectory_chart([x, y], ["bang-bang", "relaxed"], title=f"{sc.name}: closed loop vs relaxed"))
    U = {tuple(u) for u in sc.system.controls.tolist()}
    pure = all(tuple(u) in U for u in x.controls.tolist())
    dist = x.sup_distance(y)
    write_json(out / "bangbang.json", {"scenario": sc.name, "seed": sc.param("seed"), "t0": t0, "x0": x0,
                                       "controls_in_U": pure, "sup_distance": dist, "eps0": sc.param("eps0"),
                                       "levels": fb.state.K, "status": fb.state.status})
    print(f"controls in U: {pure}; sup_t |x - y| = {dist!r} (eps0 = {sc.param('eps0')})")
    return EXIT_OK if pure and fb.state.status == "ok" else EXIT_VIOLATION


def cmd_verify(args) -> int:
    sc = _scenario(args)
    results = run_scenario(sc)
    for r in results:
        print(r.line())
    report = {"scenario": sc.name, "seed": sc.param("seed"), "criteria": [r.to_json() for r in results],
              "passed": all(r.passed or r.skipped for r in results)}
    if args.out:
        write_json(_out(args) / "verify.json", report)
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario JSON file or shipped benchmark name")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--levels", type=int, default=None, help="number of refinement levels K")
    common.add_argument("--paths", type=int, default=None, help="sample paths for sup estimates")

    p = argparse.ArgumentParser(prog="extremal-flow", description="Extremal selections and bang-bang feedback.")
    sub = p.add_subparsers(dest="command", required=True)
    h = sub.add_parser("h-eval", parents=[common], help="evaluate h(y, F(t, x))")
    h.add_argument("--t", type=float, default=0.0)
    h.add_argument("--x", type=_vector, required=True)
    h.add_argument("--y", type=_vector, default=None, help="defaults to f0(t, x)")
    h.set_defaults(func=cmd_h_eval)
    b = sub.add_parser("build", parents=[common], help="run the iteration and write certificates")
    b.set_defaults(func=cmd_build)
    for name, fn, text in (("simulate", cmd_simulate, "integrate the extremal and relaxed trajectories"),
                           ("bangbang", cmd_bangbang, "synthesize the bang-bang feedback and run the closed loop")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--t0", type=float, default=0.0)
        s.add_argument("--x0", type=_vector, default=None)
        s.set_defaults(func=fn)
    v = sub.add_parser("verify", parents=[common], help="run the acceptance checks on a scenario")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None and args.command in ("build", "simulate", "bangbang"):
        args.out = "out"
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (HypothesisError, ScheduleError) as exc:
        print(f"violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
