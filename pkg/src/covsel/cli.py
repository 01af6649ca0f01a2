"""Command-line front end: selection, population analysis, diagnostics,
simulation, and the pathology demos.

Exit codes: 0 success, 1 validation or parse errors, 2 numerical failures
(a partial report is written when one exists).  All randomness flows from
--seed; reports are canonical JSON with no timestamps, so identical configs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .fit import FitOptions, fit_class
from .gauss_criterion import (
    NotPositiveDefiniteError,
    PopulationTarget,
    compute_moments,
    read_data_csv,
    save_moments,
)
from .model_space import ValidationError, load_family
from .penalties import classify_penalty, hypothesized_summary, system_from_flag
from .population import diagnose_assumptions, pseudo_true_summary
from .reports import canonical_dumps, write_report
from .select import NumericalError, select_model
from .simulate import (
    load_plan_file,
    pathology_two_point,
    run_monte_carlo,
)


def _fit_options(args) -> FitOptions:
    return FitOptions(starts=args.starts, max_iters=args.max_iters, seed=args.seed)


def _add_fit_flags(sub):
    sub.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    sub.add_argument("--starts", type=int, default=8)
    sub.add_argument("--max-iters", type=int, default=500)


def _load_target(path) -> PopulationTarget:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return PopulationTarget(np.asarray(doc["mean"], dtype=float),
                                np.asarray(doc["cov"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed target document: {exc}") from exc


def _resolve_penalty(flag, family_path):
    """CLI flag wins; otherwise a 'penalty' entry in the family document;
    otherwise bic."""
    if flag is not None:
        return system_from_flag(flag)
    import json

    with open(family_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    declared = doc.get("penalty")
    if declared is not None:
        from .penalties import system_from_dict

        return system_from_dict(declared)
    return system_from_flag("bic")


def _cmd_select(args) -> int:
    family = load_family(args.family)
    data = read_data_csv(args.data, header=args.header)
    moments = compute_moments(data)
    if args.moments_out:
        save_moments(moments, args.moments_out)
    system = _resolve_penalty(args.penalty, args.family)
    report = select_model(family, moments, system, _fit_options(args))
    doc = {"command": "select", "penalty": system.name, "seed": args.seed,
           "report": report.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"n = {moments.n}, penalty = {report.penalty_name}")
    print(f"{'k':>3} {'order':>5} {'T':>14} {'a':>10} {'W':>14}  status")
    for i in range(len(report.scores)):
        mark = " <- selected" if i + 1 == report.selected_index else ""
        print(f"{i + 1:>3} {report.orders[i]:>5} {report.t_values[i]:>14.4f} "
              f"{report.penalties_applied[i]:>10.4f} {report.scores[i]:>14.4f}  "
              f"{report.statuses[i]}{mark}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_fit(args) -> int:
    family = load_family(args.family)
    if not 1 <= args.model_index <= family.m:
        raise ValidationError(f"--model-index must be in 1..{family.m}")
    data = read_data_csv(args.data, header=args.header)
    moments = compute_moments(data)
    result = fit_class(family.models[args.model_index - 1], moments, _fit_options(args),
                       model_index=args.model_index - 1)
    doc = {"command": "fit", "model_index": args.model_index, "seed": args.seed,
           "n": moments.n, "result": result.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"model {args.model_index}: T = {result.t_value:.6f} "
          f"(status {result.status}, {result.starts_converged} starts converged)")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_population(args) -> int:
    family = load_family(args.family)
    target = _load_target(args.target)
    summary = pseudo_true_summary(family, target, opts=_fit_options(args))
    doc = {"command": "population", "seed": args.seed, "summary": summary.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"V* = {summary.v_star:.8f}, q* = {summary.q_star}")
    print(f"K* = {summary.k_star}, K0 = {summary.k_zero}, K** = {summary.k_double_star}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_diagnose(args) -> int:
    family = load_family(args.family)
    target = _load_target(args.target)
    opts = _fit_options(args)
    summary = pseudo_true_summary(family, target, opts=opts)
    diag = diagnose_assumptions(family, summary, target, probe_count=args.probes,
                                eta=args.eta, opts=opts)
    doc = {"command": "diagnose", "seed": args.seed, "summary": summary.to_dict(),
           "diagnostics": diag.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"M2 Hausdorff = {diag.m2_hausdorff:.3e} ({diag.verdicts['m2']['verdict']})")
    for k, e in diag.m3_exponents.items():
        print(f"M3 model {k}: exponent = {e:.3f}, c = {diag.m3_constants[k]:.4g}")
    print(f"M3 verdict: {diag.verdicts['m3']['verdict']}")
    for note in diag.notes:
        print(f"note: {note}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_simulate(args) -> int:
    plan = load_plan_file(args.plan)
    report = run_monte_carlo(plan, FitOptions(starts=args.starts, max_iters=args.max_iters,
                                              seed=plan.seed),
                             workers=args.threads)
    doc = {"command": "simulate", "report": report.to_dict()}
    if args.out:
        write_report(doc, args.out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("system,n,order,frequency\n")
            for system, n, order, freq in report.csv_rows():
                fh.write(f"{system},{n},{order},{freq!r}\n")
    for name in report.system_names:
        for n in report.n_grid:
            cell = report.cells[name][n]
            freqs = ", ".join(f"q={q}: {f:.3f}" for q, f in sorted(cell.freq_by_order.items()))
            print(f"{name} n={n}: {freqs}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_pathology(args) -> int:
    report = pathology_two_point(args.sigma_minus, args.n_grid, args.replications, args.seed)
    doc = {"command": "pathology", "seed": args.seed, "report": report.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"sigma_minus = {report.sigma_minus}, sigma_plus = {report.sigma_plus:.6f}")
    for n in report.n_grid:
        print(f"n={n}: model 1 selected {report.freq_model1['bic'][n]:.3f}, "
              f"model 2 selected {report.freq_model2['bic'][n]:.3f}, "
              f"sd(contrast/sqrt(n)) = {report.contrast_sd_over_sqrt_n[n]:.4f}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def _cmd_classify(args) -> int:
    family = load_family(args.family)
    system = system_from_flag(args.penalty)
    if args.target:
        summary = pseudo_true_summary(family, _load_target(args.target),
                                      opts=_fit_options(args))
        conditional = False
    elif args.k_star:
        k_star = [int(k) for k in args.k_star.split(",")]
        summary = hypothesized_summary(family, k_star, args.q_star)
        conditional = True
    else:
        raise ValidationError("classify-penalty needs --target or a hypothesized --k-star")
    result = classify_penalty(system, family, summary)
    doc = {"command": "classify-penalty", "penalty": args.penalty,
           "conditional_on_hypothesis": conditional, "classification": result.to_dict()}
    if args.out:
        write_report(doc, args.out)
    print(f"P1 {result.p1}, P2 {result.p2}, P3 {result.p3} -> "
          f"{'admissible' if result.admissible else 'not admissible'}")
    for note in result.notes:
        print(f"note: {note}")
    if args.json:
        print(canonical_dumps(doc), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covsel",
        description="Information-criterion selection over structured Gaussian "
                    "factor-analysis covariance classes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_select = sub.add_parser("select", help="fit every candidate and select by penalized score")
    p_select.add_argument("--data", required=True, help="CSV, one observation per row")
    p_select.add_argument("--family", required=True, help="family JSON document")
    p_select.add_argument("--penalty", default=None,
                          help="bic|caic|hbic|ssbic|hq|aic|custom:<file> "
                               "(default: the family document's 'penalty', else bic)")
    p_select.add_argument("--header", action="store_true", help="CSV has a header row")
    p_select.add_argument("--out", help="write the JSON report here")
    p_select.add_argument("--moments-out", help="cache sample moments to a JSON sidecar")
    p_select.add_argument("--json", action="store_true", help="print machine JSON to stdout")
    _add_fit_flags(p_select)
    p_select.set_defaults(func=_cmd_select)

    p_fit = sub.add_parser("fit", help="fit a single model from the family")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--family", required=True)
    p_fit.add_argument("--model-index", type=int, required=True, help="1-based model index")
    p_fit.add_argument("--header", action="store_true")
    p_fit.add_argument("--out")
    p_fit.add_argument("--json", action="store_true")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_pop = sub.add_parser("population", help="population optima and the pseudo-true order")
    p_pop.add_argument("--family", required=True)
    p_pop.add_argument("--target", required=True, help="JSON with 'mean' and 'cov'")
    p_pop.add_argument("--out")
    p_pop.add_argument("--json", action="store_true")
    _add_fit_flags(p_pop)
    p_pop.set_defaults(func=_cmd_population)

    p_diag = sub.add_parser("diagnose", help="numerical M2/M3 assumption diagnostics")
    p_diag.add_argument("--family", required=True)
    p_diag.add_argument("--target", required=True)
    p_diag.add_argument("--probes", type=int, default=200)
    p_diag.add_argument("--eta", type=float, default=0.1)
    p_diag.add_argument("--out")
    p_diag.add_argument("--json", action="store_true")
    _add_fit_flags(p_diag)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo plan")
    p_sim.add_argument("--plan", required=True, help="plan JSON document")
    p_sim.add_argument("--out")
    p_sim.add_argument("--csv", help="also write flat (system,n,order,frequency) CSV")
    p_sim.add_argument("--threads", type=int, default=1,
                       help="worker threads (affects wall time only, never content)")
    p_sim.add_argument("--json", action="store_true")
    p_sim.add_argument("--starts", type=int, default=8)
    p_sim.add_argument("--max-iters", type=int, default=500)
    p_sim.set_defaults(func=_cmd_simulate)

    p_path = sub.add_parser("pathology", help="two-point common-projection pathology demo")
    p_path.add_argument("--sigma-minus", type=float, required=True)
    p_path.add_argument("--n-grid", type=int, nargs="+", default=[1000, 10000, 100000])
    p_path.add_argument("--replications", type=int, default=500)
    p_path.add_argument("--seed", type=int, default=0)
    p_path.add_argument("--out")
    p_path.add_argument("--json", action="store_true")
    p_path.set_defaults(func=_cmd_pathology)

    p_cls = sub.add_parser("classify-penalty",
                           help="classify a penalty system against (P1)-(P3)")
    p_cls.add_argument("--family", required=True)
    p_cls.add_argument("--penalty", required=True)
    p_cls.add_argument("--target", help="population target JSON (computes K* etc.)")
    p_cls.add_argument("--k-star", help="hypothesized K*, comma-separated 1-based indices")
    p_cls.add_argument("--q-star", type=int, help="hypothesized q* (default: min order in K*)")
    p_cls.add_argument("--out")
    p_cls.add_argument("--json", action="store_true")
    _add_fit_flags(p_cls)
    p_cls.set_defaults(func=_cmd_classify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, NotPositiveDefiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            write_report({"command": args.command, "error": str(exc), "partial": True}, out)
        return 2


if __name__ == "__main__":
    sys.exit(main())
