"""Command-line entry point: ``noisyges <command> ...``.

Exit codes: 0 ok, 2 input error, 3 configuration error.  Machine-readable
output goes to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from typing import List, Optional

import numpy as np

from . import graphs as gr
from .discovery import EXACT, MODES, PLAIN_GES, DiscoveryConfig, discover
from .graphs import Cpdag
from .inference import CorrectionInputs, build_report, fair_split_fraction, log_corrected_alpha
from .mechanisms import PrivacyBudget, RngStream, max_info_bound, total_epsilon
from .scoring import Dataset, ScoreConfig, Scorer
from .simulate import (
    METHODS,
    MODELS,
    DiscoveryRecipe,
    ExperimentGrid,
    rows_to_csv,
    run_coverage_grid,
    run_recovery_compare,
)

EXIT_INPUT = 2
EXIT_CONFIG = 3

DEFAULTS = {
    "mode": PLAIN_GES,
    "clip": "log_n_over_3",
    "sigma2": 1.0,
    "alpha": 0.05,
    "gamma": None,
    "seed": 0,
    "e_max": 10,
    "eps_score": None,
    "eps_thresh": None,
    "graph_mode": "cpdag",
    "log_arg_one": False,
    "out": None,
    "trace_out": None,
    "effect_out": None,
}


class InputError(Exception):
    pass


class ConfigError(Exception):
    pass


def read_csv(path: str, sigma2: float = 1.0) -> Dataset:
    """Headered numeric CSV -> Dataset.  Non-finite entries are rejected."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    try:
        [float(h) for h in header]
    except ValueError:
        pass
    else:
        raise InputError(f"{path}: first row must be a header")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric entry") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"{path}:{lineno}: non-finite entry")
        body.append(vals)
    if not body:
        raise InputError(f"{path}: no data rows")
    try:
        return Dataset(np.array(body), sigma2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_clip(value, n: int) -> ScoreConfig:
    if value in ("log_n_over_3", "log-n-over-3"):
        return ScoreConfig.log_n_over_3(n)
    try:
        c = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"clip must be a number, 'inf' or 'log_n_over_3', got {value!r}") from None
    if not c > 0:
        raise ConfigError("clip must be positive")
    return ScoreConfig(clip=c)


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _settings(args, keys) -> dict:
    """Merge defaults < config file < explicit flags."""
    file_cfg = _load_config(getattr(args, "config", None))
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        if flag is not None and flag is not False:
            out[k] = flag
        elif k in file_cfg:
            out[k] = file_cfg[k]
        else:
            out[k] = DEFAULTS.get(k)
    return out


def _budget(s: dict, n: int, noiseless: bool) -> PrivacyBudget:
    e_max = int(s["e_max"])
    if noiseless:
        return PrivacyBudget.plain(e_max)
    eps_s = float(s["eps_score"]) if s["eps_score"] is not None else 1.0 / math.sqrt(n)
    eps_t = float(s["eps_thresh"]) if s["eps_thresh"] is not None else e_max * eps_s
    return PrivacyBudget(eps_s, eps_t, e_max, tau=1.0)


def format_from_log(log_value: float) -> str:
    """exp(log_value) at 6 significant digits, also below float range."""
    if log_value > -700:
        return f"{math.exp(log_value):.6g}"
    l10 = log_value / math.log(10)
    expo = math.floor(l10)
    mant = 10 ** (l10 - expo)
    if round(mant, 5) >= 10:
        mant, expo = mant / 10, expo + 1
    return f"{mant:.5f}e{expo:+d}"


def _write(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_discover(args) -> int:
    s = _settings(args, DEFAULTS)
    data = read_csv(args.data, float(s["sigma2"]))
    mode = s["mode"]
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    score_cfg = _parse_clip(s["clip"], data.n)
    if mode != PLAIN_GES and math.isinf(score_cfg.clip):
        raise ConfigError("finite privacy parameters require a finite clip")
    budget = _budget(s, data.n, mode == PLAIN_GES)
    family = None
    if mode == EXACT:
        if not args.candidates:
            raise ConfigError("exact mode needs --candidates")
        try:
            with open(args.candidates) as fh:
                family = tuple(Cpdag.from_dict(g) for g in json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"cannot read candidates: {exc}") from None
    cfg = DiscoveryConfig(mode, budget, score_cfg, s["graph_mode"], family)
    g, trace = discover(data, cfg, RngStream(int(s["seed"])))
    graph = g if isinstance(g, Cpdag) else g.to_cpdag_form()
    _write(graph.to_json() + "\n", s["out"])
    if s["trace_out"]:
        _write(trace.to_json() + "\n", s["trace_out"])
    if args.effect:
        i, j = args.effect
        if mode == PLAIN_GES:
            correction = None
        else:
            eps = total_epsilon(budget, "exact" if mode == EXACT else "ges")
            correction = CorrectionInputs(data.n, eps, float(s["alpha"]),
                                          None if s["gamma"] is None else float(s["gamma"]),
                                          not s["log_arg_one"])
        try:
            report = build_report(data, g, (i, j), float(s["alpha"]), correction)
        except gr.GraphError as exc:
            raise ConfigError(str(exc)) from None
        text = report.to_json() + "\n"
        if s["effect_out"]:
            _write(text, s["effect_out"])
        else:
            sys.stdout.write(text)
    return 0


def _eps_total_from_flags(args) -> float:
    if args.eps_total is not None:
        return float(args.eps_total)
    if args.eps_score is None:
        raise ConfigError("give --eps-total or --eps-score (with optional --eps-thresh, --e-max)")
    e_max = args.e_max if args.e_max is not None else DEFAULTS["e_max"]
    eps_t = args.eps_thresh if args.eps_thresh is not None else e_max * args.eps_score
    return total_epsilon(PrivacyBudget(args.eps_score, eps_t, e_max, tau=1.0))


def cmd_correct_alpha(args) -> int:
    if args.eps_total is None and args.eps_score is None:
        args.eps_score = 1.0 / math.sqrt(args.n)
    ci = CorrectionInputs(args.n, _eps_total_from_flags(args), args.alpha, args.gamma, not args.log_arg_one)
    log_at, gamma = log_corrected_alpha(ci)
    print(f"alpha_tilde={format_from_log(log_at)}")
    print(f"gamma={gamma:.6g}")
    return 0


def cmd_fair_split(args) -> int:
    if args.I is not None:
        if args.gamma is None:
            raise ConfigError("--I needs --gamma")
        i_bound, gamma = args.I, args.gamma
    else:
        if args.n is None:
            raise ConfigError("give --I or --n with budget flags")
        if args.eps_total is None and args.eps_score is None:
            args.eps_score = 1.0 / math.sqrt(args.n)
        eps = _eps_total_from_flags(args)
        gamma = args.gamma
        if gamma is None:
            _, gamma = log_corrected_alpha(CorrectionInputs(args.n, eps, args.alpha, None, not args.log_arg_one))
        i_bound = max_info_bound(args.n, eps, gamma, not args.log_arg_one)
    p = fair_split_fraction(i_bound, args.alpha, gamma)
    print(f"p={p:.6g}")
    print(f"I={i_bound:.6g}")
    print(f"gamma={gamma:.6g}")
    return 0


def _recipe(args) -> DiscoveryRecipe:
    plain = args.plain_clip
    return DiscoveryRecipe(
        clip=args.clip if args.clip == "log_n_over_3" else float(args.clip),
        e_max=args.e_max if args.e_max is not None else DEFAULTS["e_max"],
        eps_score=args.eps_score,
        eps_thresh=args.eps_thresh,
        log_arg_two=not args.log_arg_one,
        split_fraction=args.split_fraction,
        plain_clip=None if plain == "same" else (plain if plain == "log_n_over_3" else float(plain)),
    )


def _grid(args) -> ExperimentGrid:
    fixed = tuple(tuple(e) for e in args.fixed_edge) if args.fixed_edge else None
    return ExperimentGrid(tuple(args.ns), tuple(args.ds), args.trials, args.alpha, args.model, args.method,
                          args.edge_prob, args.weight, fixed)


def cmd_coverage(args) -> int:
    rows = run_coverage_grid(_grid(args), _recipe(args), args.seed, args.threads)
    _write(rows_to_csv(rows), args.out)
    return 0


def cmd_recovery(args) -> int:
    rows = run_recovery_compare(_grid(args), _recipe(args), args.seed, args.threads)
    _write(rows_to_csv(rows), args.out)
    return 0


def cmd_score(args) -> int:
    data = read_csv(args.data, args.sigma2)
    cfg = _parse_clip(args.clip, data.n)
    try:
        with open(args.graph) as fh:
            g = Cpdag.from_json(fh.read())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"cannot read graph: {exc}") from None
    if g.d != data.d:
        raise ConfigError(f"graph has {g.d} nodes, data has {data.d} columns")
    scorer = Scorer(data, cfg)
    dag = gr.pdag_to_dag(g)
    for j in range(data.d):
        print(json.dumps({"node": j, "parents": sorted(dag.parents[j]), "local_score": scorer.local(j, dag.parents[j])}))
    for kind in (gr.INSERT, gr.DELETE):
        for op in gr.enumerate_valid_operators(g, kind):
            print(json.dumps({**op.to_dict(), "gain": scorer.gain(g, op)}))
    return 0


# ---------------------------------------------------------------------------
# parser


def _budget_flags(p, with_total: bool = False) -> None:
    if with_total:
        p.add_argument("--eps-total", type=float)
    p.add_argument("--eps-score", type=float)
    p.add_argument("--eps-thresh", type=float)
    p.add_argument("--e-max", type=int)
    p.add_argument("--log-arg-one", action="store_true",
                   help="use log(1/gamma) instead of log(2/gamma) in the max-information bound")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisyges", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", help="learn a graph from a CSV file")
    p.add_argument("data")
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--clip")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--graph-mode", choices=("cpdag", "dag"))
    p.add_argument("--candidates", help="JSON list of graphs for exact mode")
    p.add_argument("--effect", nargs=2, type=int, metavar=("I", "J"))
    p.add_argument("--out")
    p.add_argument("--trace-out")
    p.add_argument("--effect-out")
    _budget_flags(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("correct-alpha", help="max-information corrected level")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float)
    _budget_flags(p, with_total=True)
    p.set_defaults(func=cmd_correct_alpha)

    p = sub.add_parser("fair-split", help="split fraction matching corrected interval width")
    p.add_argument("--I", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float)
    _budget_flags(p, with_total=True)
    p.set_defaults(func=cmd_fair_split)

    for name, func, method in (("coverage", cmd_coverage, "naive"), ("recovery", cmd_recovery, "noisy-corrected")):
        p = sub.add_parser(name, help=f"run the {name} experiment grid, CSV on stdout")
        p.add_argument("--ns", type=int, nargs="+", required=True)
        p.add_argument("--ds", type=int, nargs="+", required=True)
        p.add_argument("--trials", type=int, default=500 if name == "coverage" else 300)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--method", choices=METHODS, default=method)
        p.add_argument("--model", choices=MODELS, default="empty" if name == "coverage" else "er")
        p.add_argument("--edge-prob", type=float)
        p.add_argument("--weight", type=float, default=3.0)
        p.add_argument("--fixed-edge", type=int, nargs=2, action="append", metavar=("A", "B"))
        p.add_argument("--clip", default="log_n_over_3")
        p.add_argument("--plain-clip", default="inf", help="clip for plain GES; 'same' reuses --clip")
        p.add_argument("--split-fraction", type=float)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int)
        p.add_argument("--out")
        _budget_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("score", help="print local scores and operator gains for a graph")
    p.add_argument("data")
    p.add_argument("--graph", required=True)
    p.add_argument("--clip", default="inf")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
