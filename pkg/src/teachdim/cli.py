"""``teachdim`` command line: gen, teach, bounds, oracle and report.

Exit codes: 0 success, 2 usage or domain error, 3 invariant violation,
4 step-budget failures, 5 certification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from teachdim import analytic, oracle
from teachdim.errors import (
    BudgetExceeded,
    CertificationFailure,
    DomainError,
    InvalidShape,
    InvariantViolation,
    LevelViolation,
    ParseError,
    TeachDimError,
    TooLarge,
    UnreachableState,
)
from teachdim.harness import BUDGET_MULTIPLIER, default_step_budget, run_session, run_trials
from teachdim.learner import LearnerSpec, Rule, load_policy, load_qtable
from teachdim.mdp import (
    diameter,
    load_mdp,
    make_chain,
    make_peacock,
    make_peacock_tree,
    make_random,
    min_transition_prob,
    save_mdp,
)
from teachdim.teacher import DEFAULT_DELTA, TeachingProblem, adversarial_q0, constant_target

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_BUDGET, EXIT_CERT = 0, 2, 3, 4, 5

CSV_HEADER = [
    "experiment_id", "level", "learner_rule", "S", "A", "H", "D", "epsilon", "p_min",
    "delta", "trials", "failures", "mean_steps", "std_error", "ci95_low", "ci95_high",
    "bound_lower", "bound_upper", "base_seed",
]
SERIES_HEADER = [
    "experiment_id", "level", "learner_rule", "parameter", "value", "mean_steps",
    "std_error", "ci95_low", "ci95_high", "bound_lower", "bound_upper",
]
SWEEP_PARAMS = ("epsilon", "S", "A", "H", "D", "p_min", "delta")
SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")

TEACH_DEFAULTS = {
    "experiment_id": "run",
    "level": 3,
    "rule": "standard_q",
    "mdp": None,
    "family": "peacock",
    "S": 8,
    "D": 3,
    "A": 3,
    "H": 6,
    "p": 0.2,
    "d": None,
    "density": 0.3,
    "mdp_seed": 0,
    "epsilon": 0.0,
    "alpha": 0.5,
    "gamma": 0.9,
    "delta": DEFAULT_DELTA,
    "q0": "adversarial",
    "target": None,
    "target_action": 0,
    "trials": 100,
    "seed": 0,
    "budget_multiplier": BUDGET_MULTIPLIER,
    "workers": 1,
}


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


# -- gen ---------------------------------------------------------------------


def build_mdp(family: str, S=None, D=None, A=2, H=None, p=None, d=None, density=0.3, seed=0):
    if family == "peacock":
        if S is None or D is None:
            raise InvalidShape("peacock needs --S and --D")
        p = p if p is not None else 1.0 / max(1, S - D - 1)
        return make_peacock(S, D, A, H if H is not None else 2 * (D + 1), p)
    if family == "peacock-tree":
        return make_peacock_tree(
            S=S, D=D if D is not None else 3, A=A, H=H if H is not None else 8,
            p_min=p if p is not None else 0.5, d=d,
        )
    if family == "chain":
        if S is None:
            raise InvalidShape("chain needs --S")
        return make_chain(S, A, H)
    if family == "random":
        if S is None:
            raise InvalidShape("random needs --S")
        return make_random(S, A, density, seed, H)
    raise InvalidShape(f"unknown family {family!r}")


def cmd_gen(args) -> int:
    mdp = build_mdp(args.family, args.S, args.D, args.A, args.H, args.p, args.d, args.density, args.seed)
    D = diameter(mdp)
    p_min = min_transition_prob(mdp)
    if args.out:
        save_mdp(mdp, args.out)
    print(
        f"family={args.family} S={mdp.num_states} A={mdp.num_actions} H={mdp.horizon} "
        f"D={D} p_min={_fmt(p_min)} seed={args.seed}"
    )
    return EXIT_OK


# -- teach -------------------------------------------------------------------


def resolve_teach_config(args) -> dict:
    """Flags override config-file values, which override defaults."""
    cfg = dict(TEACH_DEFAULTS)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ParseError(f"{args.config}: expected a JSON object")
        unknown = set(data) - set(cfg)
        if unknown:
            raise ParseError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    env_seed = os.environ.get("TEACHDIM_SEED")
    if env_seed not in (None, ""):
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ParseError(f"TEACHDIM_SEED={env_seed!r} is not an integer") from None
    if not SAFE_ID.match(str(cfg["experiment_id"])):
        raise InvariantViolation(f"experiment_id {cfg['experiment_id']!r} is not filesystem-safe")
    if cfg["level"] not in (1, 2, 3, 4):
        raise InvariantViolation(f"level must be 1-4, got {cfg['level']}")
    if int(cfg["trials"]) < 1:
        raise InvariantViolation("trials must be >= 1")
    return cfg


def problem_from_config(cfg: dict) -> TeachingProblem:
    if cfg["mdp"]:
        mdp = load_mdp(cfg["mdp"])
    else:
        mdp = build_mdp(
            cfg["family"], cfg["S"], cfg["D"], cfg["A"], cfg["H"], cfg["p"], cfg["d"],
            cfg["density"], cfg["mdp_seed"],
        )
    spec = LearnerSpec(
        epsilon=float(cfg["epsilon"]), alpha=float(cfg["alpha"]), gamma=float(cfg["gamma"]),
        rule=Rule(cfg["rule"]),
    )
    if cfg["target"]:
        target = load_policy(cfg["target"], mdp.num_states, mdp.num_actions)
    else:
        target = constant_target(mdp, int(cfg["target_action"]))
    if cfg["q0"] == "adversarial":
        q0 = adversarial_q0(mdp, target)
    else:
        q0 = load_qtable(cfg["q0"], (mdp.num_states, mdp.num_actions))
    return TeachingProblem(mdp, spec, q0, target)


def _bounds_for(problem: TeachingProblem, level: int, D: int, p_min: float):
    mdp, spec = problem.mdp, problem.spec
    try:
        inputs = analytic.BoundInputs(
            mdp.num_states, mdp.num_actions, mdp.horizon, D, spec.epsilon, p_min
        )
        return analytic.tdim_bounds(level, inputs, sarsa=spec.rule is Rule.SARSA)
    except DomainError:
        return float("nan"), float("nan")


def _append_rows(path: Optional[str], rows: List[dict]) -> None:
    if path is None:
        w = csv.DictWriter(sys.stdout, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
        return
    p = Path(path)
    fresh = not p.exists() or p.stat().st_size == 0
    if not fresh:
        with p.open(newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != CSV_HEADER:
            raise ParseError(f"{path}: existing file has a different header")
    with p.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        if fresh:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def cmd_teach(args) -> int:
    cfg = resolve_teach_config(args)
    problem = problem_from_config(cfg)
    level = int(cfg["level"])
    mdp, spec = problem.mdp, problem.spec
    D = diameter(mdp)
    p_min = min_transition_prob(mdp)
    budget = default_step_budget(problem, level, float(cfg["budget_multiplier"]))
    seed = int(cfg["seed"])
    print("# config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)

    stats = run_trials(
        problem, level, int(cfg["trials"]), base_seed=seed, step_budget=budget,
        delta=float(cfg["delta"]), workers=int(cfg["workers"]),
    )
    if args.trace:
        res = run_session(problem, level, seed=seed, step_budget=budget, delta=float(cfg["delta"]), record=True)
        with open(args.trace, "w") as fh:
            for rec in res.trace:
                fh.write(json.dumps(rec.to_json()) + "\n")

    lo, hi = _bounds_for(problem, level, D, p_min)
    row = OrderedDict(
        experiment_id=cfg["experiment_id"], level=level, learner_rule=spec.rule.value,
        S=mdp.num_states, A=mdp.num_actions, H=mdp.horizon, D=D, epsilon=spec.epsilon,
        p_min=p_min, delta=float(cfg["delta"]), trials=int(cfg["trials"]),
        failures=stats.failures, mean_steps=stats.mean_steps, std_error=stats.std_error,
        ci95_low=stats.ci95_low, ci95_high=stats.ci95_high, bound_lower=lo, bound_upper=hi,
        base_seed=seed,
    )
    _append_rows(args.out, [row])
    if args.out:
        print(
            f"{cfg['experiment_id']}: mean_steps={stats.mean_steps:.4f} "
            f"se={stats.std_error:.4f} failures={stats.failures} seed={seed}"
        )
    return EXIT_BUDGET if stats.failures else EXIT_OK


# -- bounds ------------------------------------------------------------------


def cmd_bounds(args) -> int:
    levels = args.level or [1, 2, 3, 4]
    epsilons = args.epsilon or [0.0]
    header = ["level", "S", "A", "H", "D", "epsilon", "p_min", "lower", "upper", "tight_lower", "tight_upper"]
    rows = []
    for eps in epsilons:
        inputs = analytic.BoundInputs(args.S, args.A, args.H, args.D, eps, args.p_min)
        for level in levels:
            lo, hi = analytic.tdim_bounds(level, inputs, sarsa=args.rule == "sarsa")
            tl = th = float("nan")
            if level == 3:
                tl, th = analytic.tight_theta_level3(inputs)
            rows.append([level, args.S, args.A, args.H, args.D, eps, args.p_min, lo, hi, tl, th])
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    else:
        cells = [header] + [
            [str(x) if not isinstance(x, float) else ("-" if math.isnan(x) else f"{x:.4f}") for x in r]
            for r in rows
        ]
        widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
        for c in cells:
            print("  ".join(v.rjust(w) for v, w in zip(c, widths)))
    return EXIT_OK


# -- oracle ------------------------------------------------------------------


def _graph_from_args(args) -> oracle.Digraph:
    if args.graph:
        return oracle.load_digraph(args.graph)
    if args.family == "complete":
        return oracle.complete_digraph(args.n)
    if args.family == "cycle":
        return oracle.cycle_digraph(args.n)
    return oracle.random_digraph(args.n, seed=args.seed, edge_prob=args.edge_prob, max_weight=args.max_weight)


def cmd_oracle(args) -> int:
    if args.oracle_cmd == "atsp":
        g = _graph_from_args(args)
        length, walk = oracle.atsp_held_karp(g)
        out = {"length": length, "walk": walk}
        if g.n <= oracle.BRUTE_FORCE_MAX:
            out["brute_force"] = oracle.atsp_brute_force(g)
        text = json.dumps(out)
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text)
        return EXIT_OK

    if args.oracle_cmd == "reduce":
        g = _graph_from_args(args)
        problem = oracle.reduce_atsp_to_teaching(g)
        length, _ = oracle.atsp_held_karp(g)
        if args.out:
            save_mdp(problem.mdp, args.out)
        fits = problem.mdp.horizon >= length + 1
        print(
            f"S={problem.mdp.num_states} A=2 H={problem.mdp.horizon} atsp_length={length} "
            f"horizon_fits_walk={'yes' if fits else 'no'}"
        )
        return EXIT_OK

    # metal
    if args.corpus:
        agree = 0
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["graph", "n", "held_karp", "brute_force", "certified", "minimal", "seed"])
        for i in range(args.corpus):
            seed = args.seed + i
            n = 3 + i % (args.max_n - 2)
            g = oracle.random_digraph(n, seed=seed, edge_prob=args.edge_prob)
            hk, _ = oracle.atsp_held_karp(g)
            bf = oracle.atsp_brute_force(g)
            cert = oracle.certify_reduction(g, seed=seed)
            minimal = "-"
            if n <= 6:
                minimal = "yes" if oracle.min_teaching_steps(g) == hk + 1 else "no"
            ok = hk == bf == cert.length and minimal != "no"
            agree += ok
            w.writerow([i, n, hk, bf, cert.length, minimal, seed])
        print(f"# agreement {agree}/{args.corpus}", file=sys.stderr)
        if agree != args.corpus:
            return EXIT_CERT
        return EXIT_OK
    g = _graph_from_args(args)
    cert = oracle.certify_reduction(g, seed=args.seed)
    if args.out:
        oracle.save_certificate(cert, args.out)
    print(json.dumps({"length": cert.length, "walk": cert.walk,
                      "certified_epsilons": cert.certified_epsilons,
                      "horizon_sufficient": cert.horizon_sufficient}))
    return EXIT_OK


# -- report ------------------------------------------------------------------


def read_result_rows(paths: List[str]) -> List[dict]:
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                continue
            if reader.fieldnames != CSV_HEADER:
                raise ParseError(f"{path}: unexpected header")
            for line_no, r in enumerate(reader, start=2):
                try:
                    for key in ("level", "S", "A", "H", "D", "trials", "failures", "base_seed"):
                        r[key] = int(r[key])
                    for key in ("epsilon", "p_min", "delta", "mean_steps", "std_error",
                                "ci95_low", "ci95_high", "bound_lower", "bound_upper"):
                        r[key] = float(r[key])
                except ValueError as exc:
                    raise ParseError(f"{path}: line {line_no}: {exc}") from None
                rows.append(r)
    return rows


def build_series(rows: List[dict]) -> Dict[tuple, dict]:
    """Group rows by (experiment_id, level, rule) and order each group by its swept parameter."""
    groups: Dict[tuple, List[dict]] = OrderedDict()
    for r in rows:
        groups.setdefault((r["experiment_id"], r["level"], r["learner_rule"]), []).append(r)
    series = OrderedDict()
    for key, members in groups.items():
        param = next((p for p in SWEEP_PARAMS if len({m[p] for m in members}) > 1), "epsilon")
        series[key] = {"parameter": param, "rows": sorted(members, key=lambda m: m[param])}
    return series


def cmd_report(args) -> int:
    rows = read_result_rows(args.csv)
    series = build_series(rows)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        if series:
            w.writerow(SERIES_HEADER)
        for (exp, level, rule), info in series.items():
            p = info["parameter"]
            for r in info["rows"]:
                w.writerow([exp, level, rule, p, _fmt(r[p])] + [
                    _fmt(r[k]) for k in ("mean_steps", "std_error", "ci95_low", "ci95_high",
                                         "bound_lower", "bound_upper")
                ])
    finally:
        if args.out:
            out.close()
    if args.figures and series:
        from teachdim.plotting import plot_series

        for path in plot_series(series, args.figures):
            print(f"# figure {path}", file=sys.stderr)
    return EXIT_OK


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teachdim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an MDP file")
    g.add_argument("--family", required=True, choices=["peacock", "peacock-tree", "chain", "random"])
    g.add_argument("--S", type=int)
    g.add_argument("--D", type=int)
    g.add_argument("--A", type=int, default=2)
    g.add_argument("--H", type=int)
    g.add_argument("--p", type=float, help="peacock fan-out / tree success probability")
    g.add_argument("--d", type=int, help="peacock-tree binary depth")
    g.add_argument("--density", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("teach", help="run Monte Carlo teaching sessions")
    t.add_argument("--config", help="JSON file with experiment settings")
    t.add_argument("--experiment-id", dest="experiment_id")
    t.add_argument("--level", type=int, choices=[1, 2, 3, 4])
    t.add_argument("--rule", choices=[r.value for r in Rule])
    t.add_argument("--mdp", help="MDP file; overrides the family flags")
    t.add_argument("--family", choices=["peacock", "peacock-tree", "chain", "random"])
    for name, typ in (("S", int), ("D", int), ("A", int), ("H", int), ("p", float), ("d", int),
                      ("density", float)):
        t.add_argument(f"--{name}", type=typ)
    t.add_argument("--mdp-seed", dest="mdp_seed", type=int)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--delta", type=float)
    t.add_argument("--q0", help="'adversarial' or a Q-table file")
    t.add_argument("--target", help="policy file (default: constant action)")
    t.add_argument("--target-action", dest="target_action", type=int)
    t.add_argument("--trials", type=int)
    t.add_argument("--seed", type=int, help="base seed (TEACHDIM_SEED overrides)")
    t.add_argument("--budget-multiplier", dest="budget_multiplier", type=float)
    t.add_argument("--workers", type=int)
    t.add_argument("--out", help="results CSV to append to (default: stdout)")
    t.add_argument("--trace", help="write the first trial's JSON-lines trace here")
    t.set_defaults(func=cmd_teach)

    b = sub.add_parser("bounds", help="evaluate teaching-dimension bounds")
    b.add_argument("--level", type=int, action="append", choices=[1, 2, 3, 4])
    b.add_argument("--S", type=int, required=True)
    b.add_argument("--A", type=int, required=True)
    b.add_argument("--H", type=int, required=True)
    b.add_argument("--D", type=int, required=True)
    b.add_argument("--epsilon", type=float, action="append")
    b.add_argument("--p-min", dest="p_min", type=float, default=1.0)
    b.add_argument("--rule", choices=[r.value for r in Rule], default="standard_q")
    b.add_argument("--format", choices=["text", "csv"], default="text")
    b.set_defaults(func=cmd_bounds)

    o = sub.add_parser("oracle", help="covering-walk oracles and the teaching reduction")
    osub = o.add_subparsers(dest="oracle_cmd", required=True)
    for name in ("atsp", "reduce", "metal"):
        p = osub.add_parser(name)
        p.add_argument("--graph", help="digraph JSON file")
        p.add_argument("--family", choices=["complete", "cycle", "random"], default="random")
        p.add_argument("--n", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--edge-prob", dest="edge_prob", type=float, default=0.3)
        p.add_argument("--max-weight", dest="max_weight", type=int, default=1)
        p.add_argument("--out")
        if name == "metal":
            p.add_argument("--corpus", type=int, default=0, help="check N random graphs instead")
            p.add_argument("--max-n", dest="max_n", type=int, default=8)
        p.set_defaults(func=cmd_oracle)

    r = sub.add_parser("report", help="aggregate result CSVs into series")
    r.add_argument("csv", nargs="*")
    r.add_argument("--out", help="series CSV (default: stdout)")
    r.add_argument("--figures", help="also render one PNG per series into this directory")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, TooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceeded as exc:
        print(f"error: step budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except CertificationFailure as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (InvariantViolation, InvalidShape, ParseError, UnreachableState, LevelViolation,
            TeachDimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
