"""Command-line interface for batch solving, estimation, and experiments.

Exit codes: 0 on converged success, 1 on usage or file errors, 2 when a solver
fails to converge or a verification fails, 3 when quotas are infeasible.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import experiments
from .ae import IpfpConfig, solve_ae
from .eae import EaeConfig, InfeasibleQuotaError, solve_eae, verify_kkt
from .estimation import (
    EstimationConfig,
    EstimationError,
    estimate,
    load_covariates,
    load_observed,
)
from .market import (
    MarketFileError,
    SchemaViolationError,
    load_market,
    load_result,
    load_surplus,
    load_taxes,
    region_masses,
    save_result,
    _write_json,
)
from .policies import (
    PolicyResult,
    bbae,
    cap_reduced_ae,
    eae_upper_bound,
    welfare_ordering_check,
)
from .rng import derive_seed
from .welfare import breakdown, location_offset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_INFEASIBLE = 3


def _parse_range(text: str) -> list[float]:
    """Parse '0.1:0.4:0.05' into an inclusive grid, or a comma list."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        count = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 12) for i in range(count)]
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quotamatch",
        description=(
            "Solvers for matching markets with regional quotas: tax-fixed "
            "equilibria, welfare-maximizing tax design, surplus estimation, "
            "counterfactual policies, and reproducible experiments."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, phi=True, taxes=False):
        p.add_argument("--market", required=True, help="market spec JSON file")
        if phi:
            p.add_argument("--phi", required=True, help="surplus JSON file (key 'phi')")
        if taxes:
            p.add_argument("--taxes", help="tax JSON file (key 'w'); defaults to zero taxes")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--tol-pop", type=float, default=1e-10, help="population tolerance")

    p = sub.add_parser("solve-ae", help="solve the tax-fixed equilibrium (quotas ignored)")
    add_common(p, taxes=True)

    p = sub.add_parser("solve-eae", help="solve the welfare-maximizing taxes under quotas")
    add_common(p)
    p.add_argument("--tol-tax", type=float, default=1e-8, help="tax search tolerance")
    p.add_argument("--tol-kkt", type=float, default=1e-8, help="constraint/KKT tolerance")

    p = sub.add_parser("estimate", help="fit surplus coefficients to an observed matching")
    p.add_argument("--market", required=True)
    p.add_argument("--observed", required=True, help="observed matching JSON (key 'mu')")
    p.add_argument("--covariates", required=True, help="covariates JSON (keys 'S', 'c')")
    p.add_argument("--taxes", help="observed taxes JSON; defaults to zero")
    p.add_argument("--out", required=True)
    p.add_argument("--tol-pop", type=float, default=1e-10)
    p.add_argument(
        "--optimizer",
        choices=("nelder_mead", "finite_difference_bfgs"),
        default="nelder_mead",
    )

    p = sub.add_parser("counterfactual", help="compare quota policies on one market")
    p.add_argument("--market", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--out", required=True, help="CSV of per-policy rows")
    p.add_argument("--floors", required=True, help="floor level(s): lo:hi:step or comma list")
    p.add_argument("--urban-region", help="region receiving caps (default: the region without a floor)")
    p.add_argument("--grid", default="0.10:0.50:0.01", help="upper-bound candidate grid")
    p.add_argument("--cap-grid", default="0.050:0.25:0.005", help="artificial capacity grid")
    p.add_argument("--tax-grid", default="0:10:0.5", help="budget-balance tax axis for the capped region")
    p.add_argument("--subsidy-grid", default="-0.2:0:0.01", help="budget-balance subsidy axis for floor regions")
    p.add_argument("--tol-pop", type=float, default=1e-10)
    p.add_argument("--tol-kkt", type=float, default=1e-8)

    p = sub.add_parser("experiment", help="run the residency floor sweep and emit panel CSVs")
    p.add_argument("--seeds", type=int, default=30, help="number of replications")
    p.add_argument("--floors", default="0.1:0.4:0.05", help="floor grid: lo:hi:step or comma list")
    p.add_argument("--out", required=True, help="panels CSV path")
    p.add_argument("--locus-out", help="locus CSV path (default: locus.csv next to --out)")
    p.add_argument("--records-out", help="per-replication CSV path (optional)")
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("bench", help="time the constrained solver across market sizes")
    p.add_argument("--worker-types", default="10,20", help="comma list of worker type counts")
    p.add_argument("--regions", default="5:100:5", help="region counts: lo:hi:step or comma list")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bench CSV path")

    p = sub.add_parser("verify", help="re-check a result file against its market")
    p.add_argument("--market", required=True)
    p.add_argument("--result", required=True, help="result JSON to verify")
    p.add_argument("--phi", help="surplus file for an independent no-blocking audit")
    p.add_argument("--tol-kkt", type=float, default=1e-6)

    return parser


def _cmd_solve_ae(args) -> int:
    spec = load_market(args.market)
    phi = load_surplus(args.phi, spec)
    taxes = load_taxes(args.taxes, spec) if args.taxes else None
    result = solve_ae(spec, phi, taxes, IpfpConfig(population_tolerance=args.tol_pop))
    save_result(result, args.out, spec, welfare=breakdown(result, phi, spec))
    _report(result, spec)
    return EXIT_OK if result.diagnostics.converged else EXIT_NOT_CONVERGED


def _cmd_solve_eae(args) -> int:
    spec = load_market(args.market)
    phi = load_surplus(args.phi, spec)
    cfg = EaeConfig(
        tax_tolerance=args.tol_tax,
        constraint_tolerance=args.tol_kkt,
        inner=IpfpConfig(population_tolerance=args.tol_pop),
    )
    result = solve_eae(spec, phi, cfg)
    save_result(result, args.out, spec, welfare=breakdown(result, phi, spec))
    _report(result, spec)
    return EXIT_OK if result.diagnostics.converged else EXIT_NOT_CONVERGED


def _report(result, spec) -> None:
    w = ", ".join(f"{z}={result.taxes.w[i]:.6g}" for i, z in enumerate(spec.regions))
    d = result.diagnostics
    print(f"taxes: {w}")
    print(
        f"converged={d.converged} duality_gap={d.duality_gap:.3g} "
        f"max_kkt_residual={d.max_kkt_residual:.3g} "
        f"iterations={d.inner_iterations}/{d.outer_iterations}"
    )
    print(
        "welfare numbers omit the additive location constant "
        f"{location_offset(spec):.9g} (error-mean times total mass)"
    )


def _cmd_estimate(args) -> int:
    spec = load_market(args.market)
    observed = load_observed(args.observed, spec)
    covariates = load_covariates(args.covariates, spec)
    taxes = load_taxes(args.taxes, spec) if args.taxes else None
    cfg = EstimationConfig(
        optimizer=args.optimizer, inner=IpfpConfig(population_tolerance=args.tol_pop)
    )
    model, report = estimate(observed, covariates, taxes, spec, cfg)
    _write_json(
        {
            "coefficients": list(model.coefficients),
            "fit": {
                "final_kl": report.final_kl,
                "n_evals": report.n_evals,
                "converged": report.converged,
                "message": report.message,
            },
        },
        args.out,
    )
    print(
        f"coefficients: {np.array2string(model.coefficients, precision=8)} "
        f"final_kl={report.final_kl:.3g} evals={report.n_evals}"
    )
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_counterfactual(args) -> int:
    spec = load_market(args.market)
    phi = load_surplus(args.phi, spec)
    floors = _parse_range(args.floors)
    if args.urban_region:
        urban = args.urban_region
    else:
        candidates = [z for z in spec.regions]
        urban = candidates[0]
    floor_regions = [z for z in spec.regions if z != urban]
    header = (
        ["policy", "floor", "feasible", "search_parameter", "social_welfare",
         "agent_welfare", "pm_surplus", "urban_mass"]
        + [f"rural_mass_{z}" for z in floor_regions]
        + [f"tax_{z}" for z in spec.regions]
    )
    tax_axis = _parse_range(args.tax_grid)
    subsidy_axis = _parse_range(args.subsidy_grid)
    rows = []
    status = EXIT_OK
    for floor in floors:
        targets = {z: floor for z in floor_regions}
        results = []
        try:
            eq = solve_eae(spec.with_quotas(lower=targets), phi)
            results.append(
                PolicyResult(
                    policy="eae",
                    equilibrium=eq,
                    search_parameter=None,
                    welfare=breakdown(eq, phi, spec),
                    feasible=eq.diagnostics.converged,
                    evaluated_matching=eq.matching,
                )
            )
        except InfeasibleQuotaError as e:
            print(f"floor {floor:g}: {e}", file=sys.stderr)
            status = EXIT_INFEASIBLE
            continue
        results.append(eae_upper_bound(spec, phi, targets, _parse_range(args.grid), urban))
        results.append(
            cap_reduced_ae(
                spec,
                phi,
                targets,
                _parse_range(args.cap_grid),
                cap_slots=[y for y in spec.slot_types if spec.region_of[y] == urban],
            )
        )
        grid = np.asarray(
            [
                [w1 if z == urban else (w2 if z == floor_regions[0] else w3) for z in spec.regions]
                for w1 in tax_axis
                for w2 in subsidy_axis
                for w3 in subsidy_axis
            ]
        ) if len(floor_regions) == 2 else np.asarray(
            [[w1 if z == urban else w2 for z in spec.regions] for w1 in tax_axis for w2 in subsidy_axis]
        )
        results.append(bbae(spec, phi, targets, grid))
        report = welfare_ordering_check(results, tol=1e-7)
        print(f"floor {floor:g}: {report}")
        for r in results:
            masses = region_masses(r.evaluated_matching, spec)
            search = r.search_parameter
            if isinstance(search, np.ndarray):
                search = float(search[spec.region_index(urban)])
            rows.append(
                [r.policy, floor, r.feasible, search, r.welfare.social,
                 r.welfare.worker_side + r.welfare.slot_side, r.welfare.pm_surplus,
                 float(masses[spec.region_index(urban)])]
                + [float(masses[spec.region_index(z)]) for z in floor_regions]
                + [float(r.equilibrium.taxes.w[i]) for i in range(spec.num_regions)]
            )
    experiments._write_csv(args.out, header, rows)
    return status


def _cmd_experiment(args) -> int:
    floor_grid = tuple(_parse_range(args.floors))
    seeds = tuple(derive_seed(args.seed, f"replication/{i}") for i in range(args.seeds))
    cfg = experiments.JrmpConfig(seeds=seeds, floor_grid=floor_grid, replications=args.seeds)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            panel = experiments.run_lower_bound_sweep(cfg, mapper=pool.map)
    else:
        panel = experiments.run_lower_bound_sweep(cfg)
    out = Path(args.out)
    experiments.write_panels_csv(panel, out)
    locus = Path(args.locus_out) if args.locus_out else out.with_name("locus.csv")
    experiments.write_locus_csv(panel, locus)
    if args.records_out:
        experiments.write_records_csv(panel, args.records_out)
    print(f"wrote {out} and {locus} ({len(panel.records)} records)")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = experiments.ScalingConfig(
        worker_type_counts=tuple(int(v) for v in args.worker_types.split(",")),
        region_counts=tuple(int(v) for v in _parse_range(args.regions)),
        trials=args.trials,
        master_seed=args.seed,
    )
    rows = experiments.bench_eae(cfg)
    experiments.write_bench_csv(rows, args.out)
    ok = all(r.converged for r in rows)
    for r in rows:
        print(
            f"|X|={r.num_worker_types} |Z|={r.num_regions}: "
            f"{r.mean_seconds:.3f}s converged={r.converged}"
        )
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _cmd_verify(args) -> int:
    spec = load_market(args.market)
    result = load_result(args.result, spec)
    phi = load_surplus(args.phi, spec) if args.phi else None
    report = verify_kkt(result, spec, phi, tol=args.tol_kkt)
    print(f"population_residual          {report.population_residual:.3e}")
    print(f"noblocking_min_slack         {report.noblocking_min_slack:.3e}")
    print(f"clearing_residual            {report.clearing_residual:.3e}")
    print(f"quota_violation              {report.quota_violation:.3e}")
    print(f"complementary_slackness      {report.complementary_slackness_residual:.3e}")
    print(f"duality_gap                  {report.duality_gap:.3e}")
    print(f"passed                       {report.passed}")
    return EXIT_OK if report.passed else EXIT_NOT_CONVERGED


_COMMANDS = {
    "solve-ae": _cmd_solve_ae,
    "solve-eae": _cmd_solve_eae,
    "estimate": _cmd_estimate,
    "counterfactual": _cmd_counterfactual,
    "experiment": _cmd_experiment,
    "bench": _cmd_bench,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors; the contract here is 1.
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (MarketFileError, SchemaViolationError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleQuotaError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EstimationError as e:
        print(f"estimation failed: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
