"""Command-line entry point: ``compnull {bounds,optimize,test,reproduce}``.

Exit codes: 0 success, 2 argument or guard error, 3 no valid design,
4 source or budget failure. Test decisions are reported in the JSON
payload, never through the exit code.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .bounds import (
    avg_power_lower_bound,
    min_null_samples,
    power_lower_bound,
    size_upper_bound,
)
from .core import BoundNotApplicable, BudgetExhausted, NullRange, concentration_radius, concentration_slack
from .montecarlo import (
    ALT_UNIFORM,
    NULL_UNIFORM,
    SimulationPlan,
    SweepPlan,
    figure1_experiment,
    protocol_sweep,
    simulate_rejection_probability,
    write_figure1_csv,
    write_simulation_csv,
    write_sweep_csv,
)
from .optimizer import NoValidDesignError, OptimizerConfig, optimal_test, optimize_design
from .ranges import estimate_range
from .source import SourceError, SyntheticSource, load_source

EXIT_OK, EXIT_ARGS, EXIT_NO_DESIGN, EXIT_SOURCE = 0, 2, 3, 4
SCHEMA_VERSION = 1

BOUNDS_COLUMNS = [
    "a", "b", "epsilon", "m", "r", "alpha", "radius", "slack",
    "size_upper_raw", "size_upper", "is_valid", "avg_power_lower",
]


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _digest(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_config(path):
    if path is None:
        return {}, None
    with open(path) as f:
        return json.load(f), Path(path).parent


def _pick(args, config, name, default=None):
    """Flag value if given, else the config field, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


class Run:
    """Collects outputs and writes the manifest, also on failure."""

    def __init__(self, command, out_dir, argv):
        self.command = command
        self.out_dir = Path(out_dir)
        self.argv = list(argv)
        self.outputs = []
        self.config = {}
        self.seed = None
        self.ledger = None
        self.started = datetime.now(timezone.utc).isoformat()

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="\n") as f:
            f.write(text)

    def finish(self, error=None, exit_code=0):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "config_digest": _digest(self.config),
            "seed": self.seed,
            "library_version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "budget_ledger": self.ledger,
            "outputs": self.outputs,
            "exit_code": exit_code,
            "error": error,
        }
        with open(self.out_dir / "manifest.json", "w", newline="\n") as f:
            f.write(_dump(manifest))


def _fmt(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def cmd_bounds(args, run):
    a, b, alpha = args.a, args.b, args.alpha
    if not a < b:
        raise CliError(f"degenerate range: a={a} b={b}", EXIT_ARGS)
    try:
        null_range = NullRange(a, b)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from exc
    width = null_range.width()
    eps = args.eps
    try:
        m = args.m if args.m is not None else min_null_samples(alpha, eps, width)
    except ValueError as exc:
        raise CliError(f"bound not applicable: {exc}", EXIT_ARGS) from exc
    r = args.r
    run.config = {"a": a, "b": b, "epsilon": eps, "m": m, "r": r, "alpha": alpha, "p_prime": args.p_prime or []}

    def guarded(fn, *fargs):
        try:
            return fn(*fargs)
        except BoundNotApplicable as exc:
            if not args.allow_vacuous:
                raise CliError(str(exc), EXIT_ARGS) from exc
            return float("nan")

    raw = guarded(size_upper_bound, eps, m, r, width)
    row = {
        "a": a, "b": b, "epsilon": eps, "m": m, "r": r, "alpha": alpha,
        "radius": concentration_radius(r), "slack": concentration_slack(m, r),
        "size_upper_raw": raw,
        "size_upper": min(1.0, max(0.0, raw)) if not math.isnan(raw) else raw,
        "is_valid": (not math.isnan(raw)) and raw <= alpha,
        "avg_power_lower": guarded(avg_power_lower_bound, eps, m, r, width),
    }
    lines = [f"{k:<16}{_fmt(row[k])}" for k in BOUNDS_COLUMNS]
    for p in args.p_prime or []:
        phi = guarded(power_lower_bound, p, eps, m, r, null_range)
        lines.append(f"{'phi(' + repr(p) + ')':<16}{_fmt(phi)}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    run.write_text("bounds.txt", text)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(BOUNDS_COLUMNS)
            writer.writerow([_fmt(row[c]) for c in BOUNDS_COLUMNS])
        run.outputs.append(str(args.csv))
    return EXIT_OK


def _optimizer_config(args, cfg, nu):
    opt = dict(cfg.get("optimizer", {}))
    fields = {
        "alpha": _pick(args, opt, "alpha", 0.1),
        "nu": nu,
        "m_tilde": _pick(args, opt, "m_tilde", 20),
        "r_tilde": _pick(args, opt, "r_tilde", 50),
        "eta_epsilon": _pick(args, opt, "eta_epsilon", 0.005),
        "epsilon_max_policy": _pick(args, opt, "epsilon_max_policy", "width_cap"),
        "epsilon_max": _pick(args, opt, "epsilon_max", None),
        "range_mode": _pick(args, opt, "range_mode", "raw"),
        "budget_mode": _pick(args, opt, "budget_mode", "charge_prime"),
        "sampling_mode": _pick(args, opt, "sampling_mode", "with_replacement"),
    }
    if fields["m_tilde"] * fields["r_tilde"] >= nu:
        raise CliError(
            f"budget nu={nu} does not cover the pilot m_tilde*r_tilde={fields['m_tilde'] * fields['r_tilde']}",
            EXIT_SOURCE,
        )
    try:
        return OptimizerConfig(**fields)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from exc


def _source_and_queries(args, cfg, base_dir, budget):
    if getattr(args, "synthetic", None):
        a, b = args.synthetic
        src = SyntheticSource(budget, seed=_pick(args, cfg, "seed", 0), uniform=(a, b))
        n = args.n_null_queries or 200
        return src, [f"null-{i:04d}" for i in range(n)], {"kind": "synthetic", "uniform": [a, b], "budget": budget}
    src_cfg = cfg.get("source")
    if src_cfg is None:
        raise CliError("no source configured: pass --config with a 'source' entry or --synthetic A B", EXIT_ARGS)
    if isinstance(src_cfg, str):
        src_path = Path(src_cfg) if base_dir is None else base_dir / src_cfg
        with open(src_path) as f:
            src_cfg = json.load(f)
        base_dir = src_path.parent
    src_cfg = dict(src_cfg)
    src_cfg.setdefault("budget", budget)
    queries = cfg.get("null_queries")
    if not queries:
        raise CliError("config has no null_queries", EXIT_ARGS)
    return load_source(src_cfg, base_dir), list(queries), src_cfg


def cmd_optimize(args, run):
    cfg, base_dir = _load_config(args.config)
    nu = int(_pick(args, cfg, "nu", 1_000_000))
    seed = int(_pick(args, cfg, "seed", 0))
    config = _optimizer_config(args, cfg, nu)
    run.seed = seed
    run.config = {"optimizer": asdict(config), "seed": seed}
    if args.skip_pilot:
        if args.range_a is None or args.range_b is None:
            raise CliError("--skip-pilot needs --range-a and --range-b", EXIT_ARGS)
        null_range = NullRange(args.range_a, args.range_b)
        nu_remaining = nu - config.pilot_cost
        run.config["range"] = {"a": null_range.a, "b": null_range.b}
    else:
        source, queries, src_cfg = _source_and_queries(args, cfg, base_dir, nu)
        run.config["source"] = src_cfg
        if source.remaining_budget() < nu:
            raise CliError(f"source budget {source.remaining_budget()} below nu={nu}", EXIT_SOURCE)
        pilot = estimate_range(source, queries, config.m_tilde, config.r_tilde, seed, config.sampling_mode)
        null_range = pilot.select(config.range_mode)
        nu_remaining = nu - config.pilot_cost
        run.ledger = source.budget_ledger_report().as_dict()
    outcome = optimize_design(null_range, config.alpha, nu_remaining, config.m_tilde, config)
    payload = outcome.to_dict()
    text = _dump(payload)
    sys.stdout.write(text)
    run.write_text("optimize.json", text)
    if not outcome:
        raise CliError(outcome.reason, EXIT_NO_DESIGN)
    return EXIT_OK


def cmd_test(args, run):
    cfg, base_dir = _load_config(args.config)
    nu = int(_pick(args, cfg, "nu", 1_000_000))
    seed = int(_pick(args, cfg, "seed", 0))
    config = _optimizer_config(args, cfg, nu)
    source, queries, src_cfg = _source_and_queries(args, cfg, base_dir, nu)
    q_prime = _pick(args, cfg, "q_prime")
    if q_prime is None:
        raise CliError("no test query: set q_prime in the config or pass --q-prime", EXIT_ARGS)
    run.seed = seed
    run.config = {"optimizer": asdict(config), "seed": seed, "source": src_cfg,
                  "null_queries": queries, "q_prime": q_prime}
    try:
        result = optimal_test(source, queries, q_prime, config, seed)
    finally:
        run.ledger = source.budget_ledger_report().as_dict()
    payload = result.to_dict()
    payload["ledger"] = run.ledger
    text = _dump(payload)
    sys.stdout.write(text)
    run.write_text("test.json", text)
    return EXIT_OK


_DESK = {"budgets": [100_000, 1_000_000], "n_p_prime": 50, "reps": 50, "eps": [round(0.01 * k, 10) for k in range(1, 11)]}
_FULL = {"budgets": [1_000_000, 10_000_000, 100_000_000], "n_p_prime": 1000, "reps": 100,
          "eps": [round(0.001 * k, 10) for k in range(1, 101)]}


def cmd_reproduce(args, run):
    cfg, _ = _load_config(args.config)
    seed = int(_pick(args, cfg, "seed", 0))
    run.seed = seed
    if args.what == "figure1":
        p1 = float(_pick(args, cfg, "p1", 0.870))
        p2 = float(_pick(args, cfg, "p2", 0.948))
        r_grid = [int(x) for x in (_pick(args, cfg, "r", None) or [100, 1000, 10000])]
        trials = int(_pick(args, cfg, "trials", 100))
        alpha = float(_pick(args, cfg, "alpha", 0.05))
        run.config = {"figure": "figure1", "p1": p1, "p2": p2, "r": r_grid, "trials": trials, "alpha": alpha, "seed": seed}
        res = figure1_experiment(p1, p2, r_grid, trials, alpha, seed)
        write_figure1_csv(res, run.path("figure1_pvalues.csv"))
        with open(run.path("figure1_rates.csv"), "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["r", "rejection_rate", "se", "max_p_value", "n_trials"])
            for r in r_grid:
                writer.writerow([r, repr(res.rejection_rate(r)), repr(res.standard_error(r)),
                                 repr(float(res.p_values[r].max())), trials])
        return EXIT_OK

    preset = _FULL if args.scale == "full" else _DESK
    if args.what == "figure2":
        a = float(_pick(args, cfg, "a", 0.4))
        b = float(_pick(args, cfg, "b", 0.6))
        eps_given = _pick(args, cfg, "eps", None)
        eps = [float(x) for x in (eps_given or preset["eps"])]
        budgets = [int(x) for x in (_pick(args, cfg, "budgets", None) or preset["budgets"])]
        alpha = float(_pick(args, cfg, "alpha", 0.1))
        n_p = int(_pick(args, cfg, "n_p_prime", preset["n_p_prime"]))
        reps = int(_pick(args, cfg, "reps", preset["reps"]))
        jobs = int(_pick(args, cfg, "jobs", 1))
        # Preset grids are defined as their guard-valid points; explicit grids must be valid unless told otherwise.
        skip_invalid = bool(args.skip_invalid or eps_given is None)
        run.config = {"figure": "figure2", "a": a, "b": b, "eps": eps, "budgets": budgets, "alpha": alpha,
                      "n_p_prime": n_p, "reps": reps, "seed": seed, "skip_invalid": skip_invalid}
        skipped = []
        for mode, name in ((NULL_UNIFORM, "figure2_size.csv"), (ALT_UNIFORM, "figure2_power.csv")):
            plan = SimulationPlan(NullRange(a, b), alpha, tuple(eps), tuple(budgets), mode, n_p, reps, seed, n_jobs=jobs)
            try:
                res = simulate_rejection_probability(plan, skip_invalid=skip_invalid)
            except (BoundNotApplicable, ValueError) as exc:
                raise CliError(f"plan guard failure: {exc}", EXIT_SOURCE) from exc
            write_simulation_csv(res, run.path(name))
            skipped.extend({"mode": mode, **s} for s in res.skipped)
        run.write_text("figure2_skipped.json", _dump(skipped))
        return EXIT_OK

    budgets = [int(x) for x in (_pick(args, cfg, "budgets", None) or [5_000_000])]
    n_seeds = int(_pick(args, cfg, "seeds", 200 if args.scale != "full" else 250))
    plan = SweepPlan(budgets=tuple(budgets), n_seeds=n_seeds, master_seed=seed)
    run.config = {"figure": "sweep", **asdict(plan)}
    rows = protocol_sweep(plan)
    write_sweep_csv(rows, run.path("sweep.csv"))
    return EXIT_OK


def _floats(s):
    return [float(x) for x in s.split(",")]


def _ints(s):
    return [int(float(x)) for x in s.split(",")]


def _add_optimizer_flags(p):
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--alpha", type=float)
    p.add_argument("--nu", type=lambda s: int(float(s)), help="total response budget")
    p.add_argument("--m-tilde", dest="m_tilde", type=int)
    p.add_argument("--r-tilde", dest="r_tilde", type=int)
    p.add_argument("--eta", dest="eta_epsilon", type=float, help="threshold grid step")
    p.add_argument("--epsilon-max", dest="epsilon_max", type=float)
    p.add_argument("--eps-policy", dest="epsilon_max_policy", choices=["width_cap", "min_three"])
    p.add_argument("--range-mode", dest="range_mode", choices=["raw", "order_stat", "symmetric"])
    p.add_argument("--budget-mode", dest="budget_mode", choices=["charge_prime", "per_null"])
    p.add_argument("--sampling-mode", dest="sampling_mode", choices=["with_replacement", "without_replacement"])
    p.add_argument("--seed", type=int)
    p.add_argument("--synthetic", nargs=2, type=float, metavar=("A", "B"),
                   help="use a synthetic source with null parameters ~ Unif(A, B)")
    p.add_argument("--n-null-queries", dest="n_null_queries", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def build_parser():
    parser = argparse.ArgumentParser(prog="compnull", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="size and power bounds for one design")
    p.add_argument("--a", type=float, default=0.4)
    p.add_argument("--b", type=float, default=0.6)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--m", type=int, help="null queries (default: smallest valid for the ideal test)")
    p.add_argument("--r", type=lambda s: int(float(s)), required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--p-prime", dest="p_prime", type=float, action="append", help="evaluate phi here (repeatable)")
    p.add_argument("--allow-vacuous", action="store_true", help="report NaN instead of failing outside the bound's regime")
    p.add_argument("--csv", help="also write the bound row as CSV")
    p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("optimize", help="choose (epsilon, m, r) from a pilot or a given range")
    _add_optimizer_flags(p)
    p.add_argument("--skip-pilot", action="store_true", help="use --range-a/--range-b instead of a pilot")
    p.add_argument("--range-a", dest="range_a", type=float)
    p.add_argument("--range-b", dest="range_b", type=float)

    p = sub.add_parser("test", help="run the full test against a configured source")
    _add_optimizer_flags(p)
    p.add_argument("--q-prime", dest="q_prime")

    p = sub.add_parser("reproduce", help="simulation suites as CSV")
    p.add_argument("what", choices=["figure1", "figure2", "sweep"])
    p.add_argument("--config")
    p.add_argument("--scale", choices=["desk", "full"], default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--p1", type=float)
    p.add_argument("--p2", type=float)
    p.add_argument("--r", type=_ints, help="comma-separated replicate counts")
    p.add_argument("--trials", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--eps", type=_floats, help="comma-separated thresholds")
    p.add_argument("--budgets", type=_ints, help="comma-separated budgets")
    p.add_argument("--n-p-prime", dest="n_p_prime", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--skip-invalid", action="store_true")
    return parser


COMMANDS = {"bounds": cmd_bounds, "optimize": cmd_optimize, "test": cmd_test, "reproduce": cmd_reproduce}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    out_dir = args.out_dir or str(Path("runs") / args.command)
    run = Run(args.command, out_dir, argv)
    code, error = EXIT_OK, None
    try:
        code = COMMANDS[args.command](args, run)
    except CliError as exc:
        code, error = exc.code, str(exc)
    except NoValidDesignError as exc:
        code, error = EXIT_NO_DESIGN, str(exc)
        run.write_text("no_valid_design.json", _dump(exc.outcome.to_dict()))
    except (BudgetExhausted, SourceError, KeyError, OSError) as exc:
        code, error = EXIT_SOURCE, f"{type(exc).__name__}: {exc}"
    finally:
        run.finish(error, code)
    if error:
        print(f"error: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
