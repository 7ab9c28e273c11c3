"""Command-line front end.

Subcommands::

    aoijoint analyze   closed-form moments, correlation and MGF of a discipline
    aoijoint solve     generic stationary solver on an SHS model file
    aoijoint simulate  Monte Carlo estimates with standard errors
    aoijoint sweep     correlation curves as CSV

Rates (``--lambdas``, ``--mu``) are in 1/time. ``--s`` is the raw MGF argument
(1/time); ``--s-bar`` is the dimensionless ``s / mu``. Sources are numbered
``1..N``; for ``solve`` the ``--k`` positions index the age vector of the model
file from 0 (for the discipline models position ``k`` is source ``k``).

Single-point reports are JSON on stdout (or ``--output``); errors are a JSON
object on stderr with exit codes 2 (configuration), 3 (MGF argument out of
region), 4 (unstable or non-ergodic model) and 5 (simulation guard).
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import disciplines as disc
from . import simulator as sim
from . import stationary_solver as solver
from .errors import AoiError, ConfigError, OutOfRegionError
from .shs_model import load_model

SWEEP_VARIABLES = ("rho", "lambda_1", "rho_minus")
DISCIPLINE_NAMES = ("np", "ps", "sa")


class FieldError(ConfigError):
    """Configuration error tied to one named option."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Option parsing helpers


def _floats(text: Any, field: str) -> list[float]:
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [v for v in str(text).split(",") if v.strip()]
    try:
        out = [float(v) for v in items]
    except (TypeError, ValueError):
        raise FieldError(field, f"--{field.replace('_', '-')} must be a comma-separated list of numbers, got {text!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise FieldError(field, f"--{field.replace('_', '-')} must be finite, got {text!r}")
    return out


def _ints(text: Any, field: str) -> list[int]:
    values = _floats(text, field)
    if any(v != int(v) for v in values):
        raise FieldError(field, f"--{field.replace('_', '-')} must list integers, got {text!r}")
    return [int(v) for v in values]


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill options left unset on the command line from ``--config``."""
    if not getattr(args, "config", None):
        return args
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FieldError("config", f"cannot read config file {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FieldError("config", f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FieldError("config", "config file must contain a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or not hasattr(args, dest):
            raise FieldError(key, f"unknown config field {key!r} for this command")
        if getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _require(args: argparse.Namespace, *fields: str) -> None:
    for name in fields:
        if getattr(args, name) is None:
            raise FieldError(name, f"missing required option --{name.replace('_', '-')}")


def _params(args: argparse.Namespace) -> disc.MultiSourceParams:
    _require(args, "lambdas", "mu")
    try:
        mu = float(args.mu)
    except (TypeError, ValueError):
        raise FieldError("mu", f"--mu must be a number, got {args.mu!r}") from None
    try:
        return disc.MultiSourceParams(tuple(_floats(args.lambdas, "lambdas")), mu)
    except ConfigError as exc:
        raise FieldError("lambdas", str(exc)) from None


def _s_vector(args: argparse.Namespace, mu: float) -> Optional[list[float]]:
    """Raw ``s`` from ``--s`` or ``--s-bar``; the two are exclusive."""
    s, s_bar = getattr(args, "s", None), getattr(args, "s_bar", None)
    if s is not None and s_bar is not None:
        raise FieldError("s", "--s and --s-bar are mutually exclusive")
    if s is not None:
        return _floats(s, "s")
    if s_bar is not None:
        return [v * mu for v in _floats(s_bar, "s_bar")]
    return None


def _pair(text: Any, field: str) -> tuple[int, int]:
    values = _ints(text, field)
    if len(values) != 2 or values[0] == values[1]:
        raise FieldError(field, f"--{field} needs two distinct indices, got {text!r}")
    return values[0], values[1]


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _dump(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=True) + "\n"


def _key(*ks: int) -> str:
    return ",".join(str(k) for k in ks)


# ---------------------------------------------------------------------------
# analyze


def _analytic_report(
    params: disc.MultiSourceParams, discipline: disc.Discipline, sources: Sequence[int], pairs: Sequence[tuple[int, int]]
) -> dict:
    out: dict[str, Any] = {
        "mean": {_key(k): disc.mean_aoi(params, discipline, k) for k in sources},
        "second_moment": {_key(k): disc.second_moment_aoi(params, discipline, k) for k in sources},
    }
    if pairs:
        out["cross_moment"] = {_key(*p): disc.cross_moment_aoi(params, discipline, *p) for p in pairs}
        out["correlation"] = {_key(*p): disc.correlation(params, discipline, *p) for p in pairs}
    return out


def _sources_and_pairs(args: argparse.Namespace, n_sources: int) -> tuple[list[int], list[tuple[int, int]], Optional[list[int]]]:
    k_set = _ints(args.k, "k") if args.k is not None else None
    if args.corr is not None:
        pair = _pair(args.corr, "corr")
        return list(pair), [pair], k_set
    if k_set is not None:
        return k_set, list(itertools.combinations(k_set, 2)), k_set
    everyone = list(range(1, n_sources + 1))
    return everyone, list(itertools.combinations(everyone, 2)), None


def cmd_analyze(args: argparse.Namespace) -> dict:
    _require(args, "discipline")
    discipline = disc.Discipline.parse(args.discipline)
    params = _params(args)
    sources, pairs, k_set = _sources_and_pairs(args, params.n_sources)
    for k in sources:
        try:
            params._check_source(k)
        except ConfigError as exc:
            raise FieldError("k" if args.corr is None else "corr", str(exc)) from None
    report: dict[str, Any] = {
        "discipline": discipline.value,
        "lambdas": list(params.lambdas),
        "mu": params.mu,
        "rho": params.rho,
    }
    report.update(_analytic_report(params, discipline, sources, pairs))
    s = _s_vector(args, params.mu)
    if s is not None:
        if k_set is None:
            k_set = list(range(1, len(s) + 1))
        if len(k_set) != len(s):
            raise FieldError("s", f"--k has {len(k_set)} sources but s has {len(s)} entries")
        problems = disc.validity_problems(params, discipline, k_set, s)
        if problems:
            raise OutOfRegionError(f"s={s} outside the validity region: {'; '.join(problems)}")
        report["mgf"] = {
            "K": k_set,
            "s": s,
            "s_bar": [v / params.mu for v in s],
            "value": disc.joint_mgf(params, discipline, k_set, s),
            "in_region": True,
        }
    return report


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args: argparse.Namespace) -> dict:
    _require(args, "model")
    model = load_model(args.model).require_valid()
    pi = solver.stationary_distribution(model)
    report: dict[str, Any] = {"stationary_distribution": pi.tolist()}
    k = _ints(args.k, "k") if args.k is not None else None
    if k is not None and len(set(k)) != len(k):
        raise FieldError("k", f"--k contains repeated indices: {k}")
    mu = 1.0 if args.mu is None else float(args.mu)
    s = _s_vector(args, mu)
    max_eig = -math.inf
    if args.m is not None:
        if k is None:
            raise FieldError("k", "--m needs --k")
        m = _ints(args.m, "m")
        if len(m) != len(k):
            raise FieldError("m", f"--m has {len(m)} exponents but --k has {len(k)} positions")
        for pos in k:
            if not 0 <= pos < model.age_dim:
                raise FieldError("k", f"age position {pos} outside 0..{model.age_dim - 1}")
        order = sum(1 for v in m if v > 0) or 1
        sol = solver.solve_joint_moments(model, pi, solver.MomentQuery(tuple(m)))
        report["moment"] = {"K": k, "m": m, "value": sol.value(k)}
        max_eig = max(max_eig, solver.stability_check(model, order).max_real_eigenvalue)
    elif s is None:
        positions = k if k is not None else list(range(1, model.age_dim))
        for pos in positions:
            if not 0 <= pos < model.age_dim:
                raise FieldError("k", f"age position {pos} outside 0..{model.age_dim - 1}")
        pairs = list(itertools.combinations(positions, 2))
        order = 2
        first = solver.solve_joint_moments(model, pi, solver.MomentQuery((1,)))
        second = solver.solve_joint_moments(model, pi, solver.MomentQuery((2,)))
        mean = {p: first.value((p,)) for p in positions}
        sq = {p: second.value((p,)) for p in positions}
        report["mean"] = {_key(p): mean[p] for p in positions}
        report["second_moment"] = {_key(p): sq[p] for p in positions}
        if pairs:
            cross = solver.solve_joint_moments(model, pi, solver.MomentQuery((1, 1)))
            report["cross_moment"] = {_key(a, b): cross.value((a, b)) for a, b in pairs}
            report["correlation"] = {
                _key(a, b): disc.pearson(mean[a], sq[a], mean[b], sq[b], cross.value((a, b))) for a, b in pairs
            }
        max_eig = max(max_eig, solver.stability_check(model, order).max_real_eigenvalue)
    if s is not None:
        if k is None:
            raise FieldError("k", "--s needs --k")
        if len(s) != len(k):
            raise FieldError("s", f"--k has {len(k)} positions but s has {len(s)} entries")
        sol = solver.solve_joint_mgf(model, pi, solver.MgfQuery(tuple(k), tuple(s)))
        report["mgf"] = {"K": k, "s": s, "value": sol.value}
        rep = solver.stability_check(model, len(k), s)
        max_eig = max(max_eig, rep.max_real_eigenvalue)
    report["max_eig_real"] = max_eig
    report["stable"] = True
    return report


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> dict:
    if args.model is not None:
        model = load_model(args.model).require_valid()
        params, discipline = None, None
        # position 0 is usually a service age; prefer the first two after it
        default_pair = {1: None, 2: (0, 1)}.get(model.age_dim, (1, 2))
        default_single = 0
    else:
        _require(args, "discipline")
        discipline = disc.Discipline.parse(args.discipline)
        params = _params(args)
        model = disc.build_model(params, discipline)
        default_pair = (1, 2) if params.n_sources >= 2 else None
        default_single = 1
    events = 10**6 if args.events is None else args.events
    reps = 20 if args.reps is None else args.reps
    seed = 0 if args.seed is None else args.seed
    try:
        config = sim.SimConfig(seed=int(seed), events=int(events), replications=int(reps))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    pair = _pair(args.corr, "corr") if args.corr is not None else default_pair
    sources = list(pair) if pair else [default_single]
    queries: list = [sim.Mean(k) for k in sources] + [sim.SecondMoment(k) for k in sources]
    if pair:
        queries += [sim.CrossMoment(*pair), sim.Correlation(*pair)]
    mu = params.mu if params is not None else (1.0 if args.mu is None else float(args.mu))
    s = _s_vector(args, mu)
    mgf_query = None
    if s is not None:
        k_set = _ints(args.k, "k") if args.k is not None else list(range(1, len(s) + 1))
        if len(k_set) != len(s):
            raise FieldError("s", f"--k has {len(k_set)} entries but s has {len(s)}")
        mgf_query = sim.Mgf(tuple(k_set), tuple(s))
        queries.append(mgf_query)
    est = sim.simulate(model, config, queries)

    report: dict[str, Any] = {
        "events": config.events,
        "replications": config.replications,
        "seed": config.seed,
        "mean": {_key(k): est[sim.Mean(k)].value for k in sources},
        "second_moment": {_key(k): est[sim.SecondMoment(k)].value for k in sources},
    }
    if pair:
        report["cross_moment"] = {_key(*pair): est[sim.CrossMoment(*pair)].value}
        report["correlation"] = {_key(*pair): est[sim.Correlation(*pair)].value}
    if mgf_query is not None:
        report["mgf"] = {"K": list(mgf_query.k), "s": list(mgf_query.s), "value": est[mgf_query].value}
    report["stderr"] = {e.query.label: e.stderr for e in est.estimates}

    if params is not None:
        analytic: dict[str, float] = {}
        for k in sources:
            analytic[sim.Mean(k).label] = disc.mean_aoi(params, discipline, k)
            analytic[sim.SecondMoment(k).label] = disc.second_moment_aoi(params, discipline, k)
        if pair:
            analytic[sim.CrossMoment(*pair).label] = disc.cross_moment_aoi(params, discipline, *pair)
            analytic[sim.Correlation(*pair).label] = disc.correlation(params, discipline, *pair)
        if mgf_query is not None:
            analytic[mgf_query.label] = disc.joint_mgf(params, discipline, list(mgf_query.k), list(mgf_query.s))
        agreement = {}
        for e in est.estimates:
            ref = analytic[e.query.label]
            agreement[e.query.label] = bool(abs(e.value - ref) <= 3 * e.stderr)
        report["analytic"] = analytic
        report["agreement"] = agreement
        report["verdict"] = "pass" if all(agreement.values()) else "fail"
    return report


# ---------------------------------------------------------------------------
# sweep


def _grid(args: argparse.Namespace) -> np.ndarray:
    _require(args, "min", "max", "steps")
    try:
        lo, hi, steps = float(args.min), float(args.max), args.steps
    except (TypeError, ValueError):
        raise FieldError("min", "--min and --max must be numbers") from None
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 2:
        raise FieldError("steps", f"--steps must be an integer >= 2, got {steps!r}")
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise FieldError("min", f"need finite --min < --max, got {lo!r}, {hi!r}")
    return np.linspace(lo, hi, steps)


def _sweep_params(args: argparse.Namespace, x: float) -> disc.MultiSourceParams:
    mu = 1.0 if args.mu is None else float(args.mu)
    n = 2 if args.n is None else int(args.n)
    if args.var == "rho":
        return disc.symmetric_params(n, x, mu)
    if args.var == "lambda_1":
        base = _floats(args.lambdas, "lambdas") if args.lambdas is not None else [0.5, 0.5]
        return disc.MultiSourceParams(tuple([x] + base[1:]), mu)
    # rho_minus: fraction x of the total utilization sits outside sources 1 and 2
    _require(args, "rho")
    rho = float(args.rho)
    if n < 3 and x != 0:
        raise FieldError("n", "a rho_minus sweep with a non-zero fraction needs --n >= 3")
    if n >= 3 and not 0 < x < 1:
        raise FieldError("min", f"with --n >= 3 the rho_minus fraction must lie in (0, 1), got {x!r}")
    pair = (1 - x) * rho * mu / 2
    rest = [x * rho * mu / (n - 2)] * (n - 2) if n > 2 else []
    return disc.MultiSourceParams(tuple([pair, pair] + rest), mu)


def cmd_sweep(args: argparse.Namespace) -> str:
    _require(args, "var")
    if args.var not in SWEEP_VARIABLES:
        raise FieldError("var", f"--var must be one of {', '.join(SWEEP_VARIABLES)}, got {args.var!r}")
    names = [disc.Discipline.parse(d).value for d in (_split(args.disciplines) if args.disciplines else DISCIPLINE_NAMES)]
    grid = _grid(args)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x"] + [f"corr_{d}" for d in names])
    for x in grid:
        params = _sweep_params(args, float(x))
        writer.writerow([f"{x:.12g}"] + [f"{disc.correlation(params, d, 1, 2):.12g}" for d in names])
    return buf.getvalue()


def _split(text: Any) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Entry point


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option values; command-line flags take precedence")
    p.add_argument("--output", help="write the report here instead of stdout")


def _rates(p: argparse.ArgumentParser) -> None:
    p.add_argument("--discipline", help="np, ps or sa")
    p.add_argument("--lambdas", help="comma-separated arrival rates lambda_1..lambda_N (1/time)")
    p.add_argument("--mu", help="service rate (1/time)")


def _mgf_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--s", help="raw MGF argument aligned with --k (1/time)")
    group.add_argument("--s-bar", dest="s_bar", help="normalized MGF argument s/mu aligned with --k")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aoijoint", description="Joint age-of-information statistics of multi-source LCFS queues.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("analyze", help="closed-form statistics of a discipline")
    _common(p)
    _rates(p)
    p.add_argument("--k", help="comma-separated source set K (1-based)")
    p.add_argument("--corr", help="source pair k1,k2 for cross moment and correlation")
    _mgf_args(p)

    p = sub.add_parser("solve", help="generic stationary solver on a model file")
    _common(p)
    p.add_argument("model", nargs="?", default=None, help="SHS model JSON file")
    p.add_argument("--k", help="comma-separated age positions (0-based)")
    p.add_argument("--m", help="comma-separated moment exponents aligned with --k")
    p.add_argument("--mu", help="scale for --s-bar (default 1)")
    _mgf_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo estimates with standard errors")
    _common(p)
    _rates(p)
    p.add_argument("--model", help="SHS model JSON file instead of a discipline")
    p.add_argument("--events", type=int, help="events per replication (default 1e6)")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--reps", type=int, help="independent replications (default 20)")
    p.add_argument("--corr", help="age positions k1,k2 to correlate (default 1,2)")
    p.add_argument("--k", help="age positions of the MGF query")
    _mgf_args(p)

    p = sub.add_parser("sweep", help="correlation curves as CSV")
    _common(p)
    p.add_argument("--var", help="rho, lambda_1 or rho_minus")
    p.add_argument("--min", type=float, help="first grid value")
    p.add_argument("--max", type=float, help="last grid value")
    p.add_argument("--steps", type=int, help="number of grid points (>= 2)")
    p.add_argument("--disciplines", help="subset of np,ps,sa (default all)")
    p.add_argument("--n", type=int, help="number of sources (default 2)")
    p.add_argument("--mu", help="service rate (default 1)")
    p.add_argument("--lambdas", help="base rates for a lambda_1 sweep (lambda_1 is replaced)")
    p.add_argument("--rho", help="total utilization for a rho_minus sweep")
    return parser


COMMANDS = {"analyze": cmd_analyze, "solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep}


def _error(exc: BaseException, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    field = getattr(exc, "field", None)
    if field:
        doc["field"] = field
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a command is required: " + ", ".join(COMMANDS))
        args = _merge_config(args)
        result = COMMANDS[args.command](args)
        _emit(result if isinstance(result, str) else _dump(result), args.output)
    except AoiError as exc:
        return _error(exc, exc.exit_code)
    except (ValueError, TypeError) as exc:
        return _error(exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
