"""Reproducible experiment harness: market generators, policy sweep, benchmark.

The residency-style simulation builds a small market with one popular region
and several unpopular ones, sweeps a grid of floor levels for the unpopular
regions, and computes five allocations per (floor, replication) cell: the
unconstrained baseline, the optimal-tax solution, and the three alternative
policies. Aggregates are emitted as plot-ready CSV panels.

Replications and floor levels are independent; the harness output is a pure
function of the configuration, so parallel execution (see the CLI's jobs
flag) produces byte-identical files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ae import solve_ae
from .eae import EaeConfig, InfeasibleQuotaError, solve_eae
from .market import MarketSpec, SurplusMatrix, region_masses
from .policies import (
    PolicyResult,
    cap_reduced_ae,
    eae_upper_bound,
    prepare_bbae_grid,
    select_bbae,
)
from .rng import SplitMix64
from .welfare import breakdown

__all__ = [
    "JrmpConfig",
    "ScalingConfig",
    "SweepRecord",
    "PanelData",
    "BenchRow",
    "gen_jrmp_market",
    "gen_scaling_market",
    "run_lower_bound_sweep",
    "bench_eae",
    "write_panels_csv",
    "write_locus_csv",
    "write_records_csv",
    "write_bench_csv",
    "default_tax_grid",
]

#: candidate ceilings for the upper-bound policy
UPPER_BOUND_GRID = tuple(np.round(np.linspace(0.10, 0.50, 41), 10))
#: candidate artificial capacities for the capacity-reduction policy
CAP_GRID = tuple(np.round(np.linspace(0.050, 0.25, 41), 10))
#: tax grid axes for the budget-balanced policy
BB_TAX_AXIS = tuple(np.round(np.linspace(0.0, 10.0, 21), 10))
BB_SUBSIDY_AXIS = tuple(np.round(np.linspace(-0.2, 0.0, 21), 10))

_PANEL_METRICS = ("social_welfare", "agent_welfare", "pm_surplus", "urban_mass", "rural_mass")
_POLICIES = ("unconstrained", "eae", "bbae", "eae_upper_bound", "cap_reduced")


@dataclass(frozen=True)
class JrmpConfig:
    """Configuration of the residency-style floor sweep."""

    seeds: tuple[int, ...] | None = None
    floor_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.10, 0.40, 7), 10))
    replications: int = 30
    urban_region: str = "z1"
    floor_regions: tuple[str, ...] = ("z2", "z3")

    def __post_init__(self):
        if any(not 0.0 <= f <= 0.5 for f in self.floor_grid):
            raise ValueError("floor levels must lie within [0, 0.5]")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    def effective_seeds(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return tuple(int(s) for s in self.seeds)
        return tuple(range(self.replications))


@dataclass(frozen=True)
class ScalingConfig:
    """Grid of market sizes for the solver timing benchmark."""

    worker_type_counts: tuple[int, ...] = (10, 20)
    region_counts: tuple[int, ...] = tuple(range(5, 101, 5))
    hospitals_per_region: int = 10
    trials: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if min(self.worker_type_counts) < 1 or min(self.region_counts) < 1:
            raise ValueError("size counts must be positive")
        if self.trials < 1 or self.hospitals_per_region < 1:
            raise ValueError("trials and hospitals_per_region must be positive")


def gen_jrmp_market(seed: int) -> tuple[MarketSpec, SurplusMatrix]:
    """Residency-style market: 10 worker types, 6 slot types in 3 regions.

    The first region holds the two popular slot types (base surplus 2.0), the
    other two regions hold the unpopular ones (base 0.5); unit-variance noise
    is added cell by cell from the seeded stream. Quotas are left open so the
    sweep can impose floors per level on a fixed draw.
    """
    rng = SplitMix64(seed)
    worker_types = tuple(f"x{i + 1}" for i in range(10))
    slot_types = tuple(f"y{j + 1}" for j in range(6))
    regions = ("z1", "z2", "z3")
    region_of = {y: regions[j // 2] for j, y in enumerate(slot_types)}
    base = np.where(np.arange(6) < 2, 2.0, 0.5)
    noise = rng.normals((10, 6))
    phi = SurplusMatrix(base[None, :] + noise)
    spec = MarketSpec(
        worker_types,
        slot_types,
        regions,
        np.full(10, 0.1),
        np.full(6, 0.25),
        region_of,
        np.full(3, np.inf),
        np.zeros(3),
    )
    return spec, phi


def gen_scaling_market(
    num_worker_types: int, num_regions: int, seed: int, hospitals_per_region: int = 10
) -> tuple[MarketSpec, SurplusMatrix]:
    """Benchmark market: floors only, sizes spread so totals stay fixed.

    Total worker mass is 1.0, total slot mass 1.5, and total floor mass 0.3
    regardless of the dimensions.
    """
    num_slots = num_regions * hospitals_per_region
    worker_types = tuple(f"x{i + 1}" for i in range(num_worker_types))
    slot_types = tuple(f"y{j + 1}" for j in range(num_slots))
    regions = tuple(f"z{k + 1}" for k in range(num_regions))
    region_of = {y: regions[j // hospitals_per_region] for j, y in enumerate(slot_types)}
    rng = SplitMix64(seed)
    phi = SurplusMatrix(2.0 + rng.normals((num_worker_types, num_slots)))
    spec = MarketSpec(
        worker_types,
        slot_types,
        regions,
        np.full(num_worker_types, 1.0 / num_worker_types),
        np.full(num_slots, 1.5 / num_slots),
        region_of,
        np.full(num_regions, np.inf),
        np.full(num_regions, 0.3 / num_regions),
    )
    return spec, phi


@dataclass(frozen=True)
class SweepRecord:
    """One policy outcome in one (floor, replication) cell."""

    floor: float
    seed: int
    policy: str
    feasible: bool
    search_parameter: float | None
    social_welfare: float
    agent_welfare: float
    pm_surplus: float
    urban_mass: float
    rural_mass: dict
    taxes: dict


@dataclass(frozen=True)
class PanelData:
    """Raw sweep records plus the configuration that produced them."""

    cfg: JrmpConfig
    records: tuple[SweepRecord, ...]

    def panel_rows(self) -> list[tuple]:
        """(floor, policy, metric, mean, stderr) over feasible replications."""
        rows = []
        for floor in self.cfg.floor_grid:
            for policy in _POLICIES:
                cell = [
                    r
                    for r in self.records
                    if r.policy == policy and r.floor == floor and r.feasible
                ]
                for metric in _PANEL_METRICS:
                    values = np.array([_metric(r, metric) for r in cell])
                    if values.size == 0:
                        rows.append((floor, policy, metric, np.nan, np.nan))
                        continue
                    stderr = (
                        float(values.std(ddof=1) / np.sqrt(values.size))
                        if values.size > 1
                        else 0.0
                    )
                    rows.append((floor, policy, metric, float(values.mean()), stderr))
        return rows

    def locus_rows(self) -> list[tuple]:
        """(floor, policy, tax, avg_subsidy): urban tax against the mean tax
        on the floor regions, averaged over feasible replications."""
        rows = []
        for floor in self.cfg.floor_grid:
            for policy in _POLICIES:
                cell = [
                    r
                    for r in self.records
                    if r.policy == policy and r.floor == floor and r.feasible
                ]
                if not cell:
                    rows.append((floor, policy, np.nan, np.nan))
                    continue
                taxes = np.array([r.taxes[self.cfg.urban_region] for r in cell])
                subsidies = np.array(
                    [
                        np.mean([r.taxes[z] for z in self.cfg.floor_regions])
                        for r in cell
                    ]
                )
                rows.append((floor, policy, float(taxes.mean()), float(subsidies.mean())))
        return rows


def _metric(r: SweepRecord, name: str) -> float:
    if name == "rural_mass":
        return float(sum(r.rural_mass.values()))
    return float(getattr(r, name))


def default_tax_grid(
    tax_axis: Sequence[float] = BB_TAX_AXIS,
    subsidy_axis: Sequence[float] = BB_SUBSIDY_AXIS,
) -> np.ndarray:
    """Cartesian budget-balance grid: taxes on the first region, subsidies on
    the other two."""
    grid = [
        (w1, w2, w3) for w1 in tax_axis for w2 in subsidy_axis for w3 in subsidy_axis
    ]
    return np.asarray(grid, dtype=np.float64)


def _record_policy(
    floor: float,
    seed: int,
    policy: str,
    spec: MarketSpec,
    result: PolicyResult,
    cfg: JrmpConfig,
) -> SweepRecord:
    masses = region_masses(result.evaluated_matching, spec)
    w = result.equilibrium.taxes.w
    search = result.search_parameter
    if isinstance(search, np.ndarray):
        search = float(search[spec.region_index(cfg.urban_region)])
    return SweepRecord(
        floor=floor,
        seed=seed,
        policy=policy,
        feasible=result.feasible,
        search_parameter=search,
        social_welfare=result.welfare.social,
        agent_welfare=result.welfare.worker_side + result.welfare.slot_side,
        pm_surplus=result.welfare.pm_surplus,
        urban_mass=float(masses[spec.region_index(cfg.urban_region)]),
        rural_mass={z: float(masses[spec.region_index(z)]) for z in cfg.floor_regions},
        taxes={z: float(w[i]) for i, z in enumerate(spec.regions)},
    )


def _as_policy_result(policy: str, result, phi, spec) -> PolicyResult:
    return PolicyResult(
        policy=policy,
        equilibrium=result,
        search_parameter=None,
        welfare=breakdown(result, phi, spec),
        feasible=True,
        evaluated_matching=result.matching,
    )


def sweep_one_seed(seed: int, cfg: JrmpConfig) -> list[SweepRecord]:
    """All policies at all floor levels for one replication.

    The surplus draw is shared across floor levels, and the budget-balance
    grid is solved once and reused for every level.
    """
    spec, phi = gen_jrmp_market(seed)
    floors_regions = cfg.floor_regions
    eae_cfg = EaeConfig()
    unconstrained = solve_ae(spec, phi)
    unconstrained_pr = _as_policy_result("unconstrained", unconstrained, phi, spec)
    grid_solution = prepare_bbae_grid(spec, phi, default_tax_grid())
    cap_slots = [y for y in spec.slot_types if spec.region_of[y] == cfg.urban_region]

    records: list[SweepRecord] = []
    for floor in cfg.floor_grid:
        records.append(_record_policy(floor, seed, "unconstrained", spec, unconstrained_pr, cfg))
        if floor <= 0.0:
            # Vacuous floors: every policy accepts zero taxes and coincides
            # with the unconstrained equilibrium.
            for policy in ("eae", "bbae", "eae_upper_bound", "cap_reduced"):
                base = _as_policy_result(policy, unconstrained, phi, spec)
                records.append(_record_policy(floor, seed, policy, spec, base, cfg))
            continue
        floors = {z: floor for z in floors_regions}
        try:
            eae_result = solve_eae(spec.with_quotas(lower=floors), phi, eae_cfg)
            eae_pr = PolicyResult(
                policy="eae",
                equilibrium=eae_result,
                search_parameter=None,
                welfare=breakdown(eae_result, phi, spec),
                feasible=eae_result.diagnostics.converged,
                evaluated_matching=eae_result.matching,
            )
            records.append(_record_policy(floor, seed, "eae", spec, eae_pr, cfg))
        except InfeasibleQuotaError:
            # Recorded as missing: the cell simply has no optimal-tax row.
            pass
        records.append(
            _record_policy(
                floor,
                seed,
                "eae_upper_bound",
                spec,
                eae_upper_bound(
                    spec, phi, floors, UPPER_BOUND_GRID, bound_region=cfg.urban_region
                ),
                cfg,
            )
        )
        records.append(
            _record_policy(
                floor,
                seed,
                "cap_reduced",
                spec,
                cap_reduced_ae(spec, phi, floors, CAP_GRID, cap_slots=cap_slots),
                cfg,
            )
        )
        records.append(
            _record_policy(
                floor,
                seed,
                "bbae",
                spec,
                select_bbae(grid_solution, spec, phi, floors),
                cfg,
            )
        )
    return records


def run_lower_bound_sweep(
    cfg: JrmpConfig,
    mapper: Callable | None = None,
) -> PanelData:
    """Run the floor sweep over all replications.

    ``mapper`` is an optional map(func, iterable) substitute (e.g. a process
    pool's map); the output ordering is fixed by sorting, so any mapper that
    preserves the work items yields identical panels.
    """
    seeds = cfg.effective_seeds()
    run = mapper or map
    batches = list(run(_sweep_worker, [(s, cfg) for s in seeds]))
    records = [r for batch in batches for r in batch]
    records.sort(key=lambda r: (r.floor, r.policy, r.seed))
    return PanelData(cfg=cfg, records=tuple(records))


def _sweep_worker(args) -> list[SweepRecord]:
    seed, cfg = args
    return sweep_one_seed(seed, cfg)


@dataclass(frozen=True)
class BenchRow:
    num_worker_types: int
    num_regions: int
    mean_seconds: float
    converged: bool


def bench_eae(cfg: ScalingConfig) -> list[BenchRow]:
    """Time the constrained solve over the configured size grid."""
    rows = []
    for nx in cfg.worker_type_counts:
        for nz in cfg.region_counts:
            times = []
            converged = True
            for trial in range(cfg.trials):
                seed = SplitMix64(cfg.master_seed ^ (nx * 1_000_003 + nz * 101 + trial)).next_uint64()
                spec, phi = gen_scaling_market(nx, nz, seed, cfg.hospitals_per_region)
                start = time.perf_counter()
                result = solve_eae(spec, phi)
                times.append(time.perf_counter() - start)
                converged = converged and result.diagnostics.converged
            rows.append(BenchRow(nx, nz, float(np.mean(times)), converged))
    return rows


# ---------------------------------------------------------------------------
# CSV emission. Floats are printed in their shortest round-trip form, which is
# exact, so repeated runs compare byte for byte.
# ---------------------------------------------------------------------------


def _csv_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_csv_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_panels_csv(panel: PanelData, path) -> None:
    _write_csv(path, ("floor", "policy", "metric", "mean", "stderr"), panel.panel_rows())


def write_locus_csv(panel: PanelData, path) -> None:
    _write_csv(path, ("floor", "policy", "tax", "avg_subsidy"), panel.locus_rows())


def write_records_csv(panel: PanelData, path) -> None:
    """Per-replication policy rows (the counterfactual sweep export)."""
    rural = list(panel.cfg.floor_regions)
    regions = list(panel.records[0].taxes) if panel.records else []
    header = (
        ["policy", "floor", "seed", "feasible", "search_parameter"]
        + ["social_welfare", "agent_welfare", "pm_surplus", "urban_mass"]
        + [f"rural_mass_{z}" for z in rural]
        + [f"tax_{z}" for z in regions]
    )
    rows = []
    for r in panel.records:
        rows.append(
            [r.policy, r.floor, r.seed, r.feasible, r.search_parameter]
            + [r.social_welfare, r.agent_welfare, r.pm_surplus, r.urban_mass]
            + [r.rural_mass[z] for z in rural]
            + [r.taxes[z] for z in regions]
        )
    _write_csv(path, header, rows)


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    _write_csv(
        path,
        ("num_worker_types", "num_regions", "mean_seconds", "converged"),
        [(r.num_worker_types, r.num_regions, r.mean_seconds, r.converged) for r in rows],
    )
