"""Command-line front end: ``turnpike-lab <subcommand> ...``.

Every subcommand reads a problem (or instance) JSON document, or builds a
bundled model inline with ``--model NAME --param key=value``.  Results are
written as JSON and CSV; ``-`` as a path means standard output.  Exit status
is 0 on success, 1 on validation errors and 2 on numerical failures.  All
diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, TurnpikeLabError, ValidationError

NUMBER_FORMAT = ".17g"


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: [cli.parse] {message}\n")


# Serialization ----------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _dump_json(data):
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


def _fmt(value):
    return format(float(value) + 0.0, NUMBER_FORMAT)  # no "-0"


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _emit(outputs):
    """Write ``[(path, text), ...]`` after every result has been computed, so
    a failing run leaves no partial files behind."""
    for path, text in outputs:
        if path is None:
            continue
        if str(path) == "-":
            sys.stdout.write(text)
        else:
            try:
                Path(path).parent.mkdir(parents=True, exist_ok=True)
                Path(path).write_text(text)
            except OSError as exc:
                raise ValidationError(f"cannot write {path}: {exc}", module="cli",
                                      operation="write") from exc
            _log(f"wrote {path}")


def _log(msg):
    print(msg, file=sys.stderr)


# Inputs -----------------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _model_params(pairs, op):
    params = {}
    for pair in pairs or ():
        key, sep, val = pair.partition("=")
        if not sep or not key:
            raise ValidationError(f"--param expects key=value, got {pair!r}", module="cli",
                                  operation=op)
        params[key.strip()] = _parse_value(val)
    return params


def _float_list(text, name, op):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"{name} must be a comma-separated list of numbers",
                              module="cli", operation=op) from exc
    if not vals:
        raise ValidationError(f"{name} is empty", module="cli", operation=op)
    return vals


def _load_document(args, op):
    """Return the input document (dict) from a JSON path or an inline model."""
    from .lti_core import load_json, problem_to_dict
    from .models import build

    has_path = getattr(args, "input", None) is not None
    has_model = getattr(args, "model", None) is not None
    if has_path == has_model:
        raise ValidationError("give exactly one input: a JSON path or --model NAME",
                              module="cli", operation=op)
    if has_path:
        if args.input == "-":
            try:
                return json.loads(sys.stdin.read())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON on standard input: {exc}", module="cli",
                                      operation=op) from exc
        return load_json(args.input)
    return problem_to_dict(build(args.model, **_model_params(args.param, op)))


def _load_problem(args, op):
    from .lti_core import problem_from_dict

    return problem_from_dict(_load_document(args, op))


def _load_instance(args, op):
    from .lti_core import instance_from_dict, problem_from_dict

    doc = _load_document(args, op)
    if not isinstance(doc, dict):
        raise ValidationError("input document must be a JSON object", module="cli",
                              operation=op)
    doc = dict(doc)
    if args.horizon is not None:
        doc["horizon"] = args.horizon
    if args.dt is not None:
        doc["dt"] = args.dt
    if args.x0 is not None:
        doc["x0"] = _float_list(args.x0, "--x0", op)
    if "x0" not in doc:
        doc["x0"] = [0.0] * len(problem_from_dict(doc).a)
    if "dt" not in doc:
        doc["dt"] = 1e-3
    if "horizon" not in doc:
        raise ValidationError("no horizon: give --horizon or an instance document",
                              module="cli", operation=op)
    return instance_from_dict(doc)


def _add_input(parser):
    parser.add_argument("input", nargs="?", help="problem or instance JSON ('-' = stdin)")
    parser.add_argument("--model", help="build a bundled model instead of reading JSON")
    parser.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="model parameter (JSON value), repeatable")


# Subcommands ------------------------------------------------------------------

def _cmd_model(args):
    from .lti_core import OcpInstance, instance_to_dict, problem_to_dict
    from .models import build

    op = "model"
    params = _model_params(args.param, op)
    if args.n is not None:
        params["n"] = args.n
    if args.seed is not None:
        params["seed"] = args.seed
    prob = build(args.name, **params)
    if args.horizon is not None:
        x0 = _float_list(args.x0, "--x0", op) if args.x0 else np.zeros(prob.n)
        doc = instance_to_dict(OcpInstance(prob, args.horizon, x0, args.dt or 1e-3))
    else:
        doc = problem_to_dict(prob)
    return [(args.output, _dump_json(doc))]


def _cmd_structural(args):
    from .structural import StructuralReport, hautus_detectable, hautus_stabilizable, \
        spectral_abscissa, synthesize_gains

    prob = _load_problem(args, "structural")
    stab, det = hautus_stabilizable(prob), hautus_detectable(prob)
    if stab and det:
        report = synthesize_gains(prob, constants_horizon=args.constants_horizon,
                                  samples=args.samples, seed=args.seed)
    else:
        report = StructuralReport(stabilizable=stab, detectable=det,
                                  spectral_abscissa_open_loop=spectral_abscissa(prob.a))
    return [(args.output, _dump_json(report.to_dict()))]


def _cmd_riccati(args):
    from .riccati import loewner_slack, solve_riccati

    prob = _load_problem(args, "riccati")
    sol = solve_riccati(prob, dt=args.dt, horizon=args.horizon)
    frob = sol.norms("fro")
    dist = sol.distance_to_min("fro")
    csv_text = _csv_text(["t", "frob_norm_P", "frob_norm_P_minus_Pmin"],
                         zip(sol.grid, frob, dist))
    fit = sol.decay_fit
    summary = {
        "p_min": np.linalg.solve(sol.state_weight, sol.p_min),
        "are_residual": sol.are_residual,
        "decay_fit": None if fit is None else {"M": fit.M, "beta": fit.beta,
                                               "r_squared": fit.r_squared},
        "loewner_slack": loewner_slack(sol),
        "horizon": float(sol.grid[-1]),
        "samples": int(sol.grid.size),
    }
    return [(args.output, _dump_json(summary)), (args.csv, csv_text)]


def _cmd_steady_state(args):
    from .steady_state import steady_state

    prob = _load_problem(args, "steady_state")
    return [(args.output, _dump_json(steady_state(prob).to_dict()))]


def _cmd_counterexample(args):
    from .steady_state import counterexample_scan

    rows = counterexample_scan(args.max_dim, step=args.step)
    text = _csv_text(["N", "w_norm", "w_residual"],
                     ((r.N, r.w_norm, r.w_residual) for r in rows))
    return [(args.output, text)]


def _cmd_solve_ocp(args):
    from .ocp import direct_transcription_oracle, get_plan, solve_feedback

    op = "solve_ocp"
    inst = _load_instance(args, op)
    plan = get_plan(inst.problem, inst.dt, inst.horizon)
    bundle = solve_feedback(inst, plan)
    n, m = inst.problem.n, inst.problem.m
    header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
              + [f"utilde_{i + 1}" for i in range(m)])
    rows = (np.concatenate([[t], x, u, ut])
            for t, x, u, ut in zip(bundle.grid, bundle.x, bundle.u, bundle.u_tilde))
    summary = {
        "horizon": inst.horizon,
        "dt": inst.dt,
        "cost": bundle.cost,
        "cost_trapezoid": bundle.cost_trapezoid,
        "cost_identity_residual": bundle.cost_identity_residual,
        "relative_identity_residual": bundle.relative_identity_residual,
        "x_e": plan.steady.x_e,
        "u_e": plan.steady.u_e,
    }
    if args.oracle:
        ref = direct_transcription_oracle(inst, plan)
        scale = 1.0 + float(np.abs(bundle.x).max())
        summary.update(
            oracle_cost=ref.cost,
            oracle_cost_gap=abs(bundle.cost - ref.cost) / max(1.0, abs(ref.cost)),
            oracle_state_gap=float(np.abs(bundle.x - ref.x).max()) / scale,
            oracle_input_gap=float(np.abs(bundle.u - ref.u).max()),
        )
    return [(args.output, _dump_json(summary)), (args.csv, _csv_text(header, rows))]


def _cmd_turnpike(args):
    from .lti_core import problem_from_dict
    from .steady_state import solve_ossp
    from .turnpike import analyze

    op = "turnpike"
    doc = _load_document(args, op)
    prob = problem_from_dict(doc)
    horizons = _float_list(args.horizons, "--horizons", op)
    windows = []
    for item in str(args.windows).split(","):
        lo, sep, hi = item.partition(":")
        try:
            windows.append((float(lo), float(hi)))
        except ValueError:
            sep = ""
        if not sep:
            raise ValidationError("--windows expects a:b pairs separated by commas",
                                  module="cli", operation=op)
    if args.x0 is not None:
        x0s = [np.array(_float_list(args.x0, "--x0", op))]
    elif isinstance(doc, dict) and "x0" in doc:
        x0s = [np.asarray(doc["x0"], dtype=float)]
    else:
        # unit state pointing from the turnpike back to the origin
        x_e = solve_ossp(prob).x_e
        size = float(np.sqrt(x_e @ prob.state_weight @ x_e))
        base = -x_e / size if size > 0 else np.linalg.solve(prob.state_cho.T,
                                                            np.eye(prob.n)[0])
        x0s = [base]
    if args.random_x0:
        rng = np.random.default_rng(args.seed)
        for _ in range(args.random_x0):
            y = rng.standard_normal(prob.n)
            y *= rng.uniform() ** (1.0 / prob.n) / np.linalg.norm(y)
            x0s.append(np.linalg.solve(prob.state_cho.T, y))
    report = analyze(prob, x0s, horizons, args.dt, windows=windows)
    rows = []
    for run in report.runs:
        for i, t in enumerate(run.grid):
            rows.append((run.horizon, t, run.dev_x[i].max(), run.dev_u[i].max()))
    data = report.to_dict()
    mids = report.mid_deviation
    data["verdicts"] = {
        "envelope_found": report.envelope is not None and report.envelope[1] > 0,
        "mid_deviation_decreasing": bool(all(b <= a for a, b in zip(mids, mids[1:]))),
        "averages_nonincreasing": _averages_nonincreasing(report.integral_averages),
    }
    return [(args.output, _dump_json(data)),
            (args.csv, _csv_text(["T", "t", "dev_x", "dev_u"], rows))]


def _averages_nonincreasing(rows, rtol=1e-9):
    by_window = {}
    for horizon, a, b, sx, su in rows:
        by_window.setdefault((a, b), []).append((horizon, sx + su))
    for vals in by_window.values():
        vals.sort()
        for (_, prev), (_, cur) in zip(vals, vals[1:]):
            if cur > prev * (1 + rtol) + 1e-15:
                return False
    return True


# Parser -----------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="turnpike-lab",
                     description="Linear-quadratic optimal control and turnpike diagnostics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("model", help="materialize a bundled model as problem JSON")
    p.add_argument("--name", required=True, choices=["heat", "string", "appendix_b", "random"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--horizon", type=float, help="emit an instance with this horizon")
    p.add_argument("--dt", type=float)
    p.add_argument("--x0", help="comma-separated initial state (instances only)")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=_cmd_model)

    p = sub.add_parser("structural", help="Hautus tests, gains and sampled constants")
    _add_input(p)
    p.add_argument("--constants-horizon", type=float)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=_cmd_structural)

    p = sub.add_parser("riccati", help="DRE/ARE solve with decay fit")
    _add_input(p)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("-o", "--output", default="-", help="JSON summary")
    p.add_argument("--csv", help="time series CSV")
    p.set_defaults(func=_cmd_riccati)

    p = sub.add_parser("steady-state", help="optimal and adjoint steady states")
    _add_input(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=_cmd_steady_state)

    p = sub.add_parser("counterexample", help="adjoint steady state growth scan")
    p.add_argument("--max-dim", type=int, default=128)
    p.add_argument("--step", type=int, default=2)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=_cmd_counterexample)

    p = sub.add_parser("solve-ocp", help="optimal trajectory by explicit feedback")
    _add_input(p)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--oracle", action="store_true", help="cross-check with direct transcription")
    p.add_argument("-o", "--output", default="-", help="JSON summary")
    p.add_argument("--csv", help="trajectory CSV")
    p.set_defaults(func=_cmd_solve_ocp)

    p = sub.add_parser("turnpike", help="turnpike envelope and averages")
    _add_input(p)
    p.add_argument("--horizons", default="4,8,16")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--windows", default="0.25:0.75")
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--random-x0", type=int, default=0, help="extra random initial states")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-", help="JSON report")
    p.add_argument("--csv", help="deviation CSV")
    p.set_defaults(func=_cmd_turnpike)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outputs = args.func(args)
        _emit(outputs)
    except ValidationError as exc:
        _log(f"error: {exc}")
        return 1
    except NumericalError as exc:
        _log(f"numerical failure: {exc}")
        return 2
    except TurnpikeLabError as exc:
        _log(f"error: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
