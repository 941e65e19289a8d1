"""Welfare-maximizing tax design under regional quotas, with KKT verification.

The constrained design problem reduces, after fixing taxes, to the tax-fixed
equilibrium of :mod:`quotamatch.ae`; the taxes themselves are found by
Gauss-Seidel coordinate descent over regions. For one region, the coordinate
optimum has a complete case split: if the zero-tax mass already respects the
quota interval the tax is zero; if the ceiling is exceeded there is a unique
positive tax driving the region's mass exactly onto the ceiling; if the floor
is missed there is a unique negative tax (a subsidy) lifting the mass onto the
floor. Region mass is continuous and monotone in the region's own tax, so the
root is found by bracketed bisection, and the nonsmooth part of the objective
is separable across regions, which makes the cyclic sweep converge to the
unique optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .ae import IpfpConfig, _ipfp, _matching, _utilities, build_kernel
from .logit import g_gradient, g_value, h_gradient, h_value
from .market import (
    Diagnostics,
    EquilibriumResult,
    MarketSpec,
    SystematicUtilities,
    TaxScheme,
    as_surplus_array,
    as_tax_array,
    region_masses,
    validate_market,
)

__all__ = [
    "EaeConfig",
    "KKTReport",
    "InfeasibleQuotaError",
    "TaxSearchError",
    "solve_eae",
    "outer_step",
    "verify_kkt",
    "dual_value",
]


class InfeasibleQuotaError(RuntimeError):
    """A quota cannot be met by any tax in the admissible bracket."""


class TaxSearchError(RuntimeError):
    """The bisection lost monotonicity or stalled; indicates a solver bug."""


@dataclass(frozen=True)
class EaeConfig:
    """Outer-loop controls for the constrained tax search."""

    tax_tolerance: float = 1e-8
    constraint_tolerance: float = 1e-8
    max_sweeps: int = 200
    bracket_initial: float = 1.0
    bracket_limit: float = 64.0
    inner: IpfpConfig = IpfpConfig()

    def __post_init__(self):
        if not (self.tax_tolerance > 0 and self.constraint_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the five equilibrium conditions plus the duality gap.

    Each residual is zero at an exact equilibrium. ``passed`` is True iff
    every residual is within the verifier's tolerance; the duality gap is
    reported but does not gate ``passed``.
    """

    population_residual: float
    noblocking_min_slack: float
    clearing_residual: float
    quota_violation: float
    complementary_slackness_residual: float
    dual_value: float
    primal_value: float
    duality_gap: float
    passed: bool


class _InnerSolver:
    """Warm-started tax-fixed solves shared across the outer search."""

    def __init__(self, spec: MarketSpec, phi_arr: np.ndarray, cfg: EaeConfig):
        self.spec = spec
        self.phi = phi_arr
        self.cfg = cfg
        self.a = None
        self.b = None
        self.total_iterations = 0
        self.all_converged = True
        self.last_converged = True
        self.masses = None

    def solve(self, w: np.ndarray) -> np.ndarray:
        """Solve at taxes ``w`` and return the per-region matched masses."""
        kernel = build_kernel(self.phi, w, self.spec).matrix
        a, b, iters, residual = _ipfp(
            self.spec.n,
            self.spec.m,
            kernel,
            self.cfg.inner.population_tolerance,
            self.cfg.inner.max_iterations,
            self.a,
            self.b,
        )
        self.a, self.b = a, b
        self.total_iterations += iters
        self.last_converged = residual <= self.cfg.inner.population_tolerance
        if not self.last_converged:
            self.all_converged = False
        per_slot = (a[:, None] * b[None, :] * kernel).sum(axis=0)
        self.masses = np.bincount(
            self.spec.slot_region_index, weights=per_slot, minlength=self.spec.num_regions
        )
        return self.masses


def _bisect_tax(
    inner: _InnerSolver,
    w: np.ndarray,
    zi: int,
    target: float,
    search_up: bool,
    cfg: EaeConfig,
) -> float:
    """Find the tax on region ``zi`` putting its mass exactly on ``target``.

    Maintains a bracket [lo, hi] with mass(lo) >= target >= mass(hi); region
    mass must be non-increasing in the region's own tax, and that
    monotonicity is asserted at every evaluation. The assertion only binds
    between converged inner solves: near saturation the fixed point becomes
    stiff and non-converged mass estimates are too noisy to compare, in which
    case the search degrades gracefully and the outer result is flagged.
    """
    slack = max(1e-9, 10.0 * cfg.inner.population_tolerance)
    certified = True

    def mass_at(tax: float) -> float:
        nonlocal certified
        w[zi] = tax
        value = float(inner.solve(w)[zi])
        certified = certified and inner.last_converged
        return value

    def check_monotone(lower_mass: float, higher_mass: float, message: str) -> None:
        if certified and lower_mass < higher_mass - slack:
            raise TaxSearchError(message)

    if search_up:
        lo, mass_lo = 0.0, float(inner.masses[zi])
        hi = cfg.bracket_initial
        mass_hi = mass_at(hi)
        check_monotone(mass_lo, mass_hi, f"mass increased with the tax on region {zi}")
        while mass_hi > target:
            lo, mass_lo = hi, mass_hi
            hi *= 2.0
            if hi > cfg.bracket_limit:
                raise InfeasibleQuotaError(
                    f"ceiling {target:g} unreachable within tax bracket "
                    f"[0, {cfg.bracket_limit:g}] for region index {zi}"
                )
            new_mass = mass_at(hi)
            check_monotone(mass_hi, new_mass, f"mass increased with the tax on region {zi}")
            mass_hi = new_mass
    else:
        hi, mass_hi = 0.0, float(inner.masses[zi])
        lo = -cfg.bracket_initial
        mass_lo = mass_at(lo)
        check_monotone(mass_lo, mass_hi, f"mass decreased with the subsidy on region {zi}")
        while mass_lo < target:
            hi, mass_hi = lo, mass_lo
            lo *= 2.0
            if -lo > cfg.bracket_limit:
                raise InfeasibleQuotaError(
                    f"floor {target:g} unreachable within subsidy bracket "
                    f"[-{cfg.bracket_limit:g}, 0] for region index {zi}"
                )
            new_mass = mass_at(lo)
            check_monotone(new_mass, mass_lo, f"mass decreased with the subsidy on region {zi}")
            mass_lo = new_mass

    # Bisect until the returned point is pinned in tax and sits on the target
    # mass well inside the constraint tolerance.
    mass_goal = 0.5 * cfg.constraint_tolerance
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mass_mid = mass_at(mid)
        if certified and not (mass_hi - slack <= mass_mid <= mass_lo + slack):
            raise TaxSearchError(f"region mass not monotone during bisection on region {zi}")
        if mass_mid > target:
            lo, mass_lo = mid, mass_mid
        else:
            hi, mass_hi = mid, mass_mid
        if hi - lo <= cfg.tax_tolerance and abs(mass_mid - target) <= mass_goal:
            return mid
    if not certified:
        # Uncertified search: best available point; the caller's convergence
        # flag is already false through the inner solver's bookkeeping.
        return mid
    raise TaxSearchError(f"bisection failed to converge on region index {zi}")


def _sweep(inner: _InnerSolver, w: np.ndarray, spec: MarketSpec, cfg: EaeConfig) -> float:
    """One Gauss-Seidel pass over all regions; returns the max tax change."""
    half_tol = 0.5 * cfg.constraint_tolerance
    max_change = 0.0
    for zi in range(spec.num_regions):
        w_old = w[zi]
        if not (np.isfinite(spec.upper[zi]) or spec.lower[zi] > 0.0):
            # Unconstrained region: complementary slackness forces a zero tax.
            w[zi] = 0.0
            max_change = max(max_change, abs(w_old))
            continue
        w[zi] = 0.0
        mass0 = float(inner.solve(w)[zi])
        if mass0 > spec.upper[zi] + half_tol:
            w[zi] = _bisect_tax(inner, w, zi, float(spec.upper[zi]), True, cfg)
        elif mass0 < spec.lower[zi] - half_tol:
            w[zi] = _bisect_tax(inner, w, zi, float(spec.lower[zi]), False, cfg)
        else:
            w[zi] = 0.0
        max_change = max(max_change, abs(w[zi] - w_old))
    return max_change


def solve_eae(
    spec: MarketSpec,
    phi,
    cfg: EaeConfig | None = None,
    initial_taxes=None,
) -> EquilibriumResult:
    """Compute the unique welfare-maximizing equilibrium under the quotas.

    Raises InfeasibleQuotaError when some quota is unreachable by any
    admissible tax; returns a partial result flagged ``converged=False`` when
    the sweep budget is exhausted. A converged result carries a passing KKT
    report at the configured constraint tolerance.
    """
    cfg = cfg or EaeConfig()
    report = validate_market(spec)
    if not report.ok:
        raise ValueError(f"market is not admissible: {report}")
    phi_arr = as_surplus_array(phi, spec)
    w = as_tax_array(initial_taxes, spec).copy()
    inner = _InnerSolver(spec, phi_arr, cfg)

    sweeps = 0
    converged_outer = False
    for sweeps in range(1, cfg.max_sweeps + 1):
        max_change = _sweep(inner, w, spec, cfg)
        masses = inner.solve(w)
        quotas_ok = bool(
            np.all(masses >= spec.lower - cfg.constraint_tolerance)
            and np.all(masses <= spec.upper + cfg.constraint_tolerance)
        )
        if max_change <= cfg.tax_tolerance and quotas_ok:
            converged_outer = True
            break

    # The loop's last inner solve was at the final tax vector, so the solver
    # state (a, b) is consistent with w here.
    kernel = build_kernel(phi_arr, w, spec).matrix
    w_slot = w[spec.slot_region_index]
    U, V = _utilities(inner.a, inner.b, phi_arr, w_slot)
    mu = _matching(inner.a, inner.b, kernel)
    result = EquilibriumResult(
        mu,
        SystematicUtilities(U, V),
        TaxScheme(w),
        Diagnostics(0.0, 0.0, 0.0, np.inf, 0, 0, False),
    )
    kkt = verify_kkt(result, spec, phi_arr, tol=cfg.constraint_tolerance)
    diag = Diagnostics(
        dual_value=kkt.dual_value,
        primal_value=kkt.primal_value,
        duality_gap=kkt.duality_gap,
        max_kkt_residual=_max_residual(kkt),
        inner_iterations=inner.total_iterations,
        outer_iterations=sweeps,
        converged=bool(converged_outer and inner.all_converged and kkt.passed),
        tolerances={
            "population_tolerance": cfg.inner.population_tolerance,
            "tax_tolerance": cfg.tax_tolerance,
            "constraint_tolerance": cfg.constraint_tolerance,
        },
    )
    return EquilibriumResult(mu, result.utilities, result.taxes, diag)


def outer_step(taxes, spec: MarketSpec, phi, cfg: EaeConfig | None = None) -> TaxScheme:
    """One Gauss-Seidel sweep of the tax search from the given tax vector.

    Every region is visited once: regions whose quota interval already
    contains the zero-tax mass get a zero tax, and binding regions get the
    bisection tax placing their mass on the violated bound.
    """
    cfg = cfg or EaeConfig()
    phi_arr = as_surplus_array(phi, spec)
    w = as_tax_array(taxes, spec).copy()
    inner = _InnerSolver(spec, phi_arr, cfg)
    _sweep(inner, w, spec, cfg)
    return TaxScheme(w)


def _max_residual(kkt: KKTReport) -> float:
    return max(
        kkt.population_residual,
        max(0.0, -kkt.noblocking_min_slack),
        kkt.clearing_residual,
        kkt.quota_violation,
        kkt.complementary_slackness_residual,
    )


def dual_value(U, V, taxes, spec: MarketSpec) -> float:
    """Objective of the tax-design program at a feasible point.

    Uses the split tax representation; ceilings enter only where their split
    component is strictly positive, so infinite ceilings never contribute.
    """
    w = as_tax_array(taxes, spec)
    ceil_part = np.maximum(w, 0.0)
    floor_part = np.maximum(-w, 0.0)
    taxed = ceil_part > 0.0
    ceil_term = float((spec.upper[taxed] * ceil_part[taxed]).sum())
    floor_term = float((spec.lower * floor_part).sum())
    return g_value(U, spec) + h_value(V, spec) + ceil_term - floor_term


def _primal_value(mu, phi_arr, spec: MarketSpec) -> float:
    # Welfare objective with a 0*log(0) = 0 convention so the verifier can
    # price hand-built profiles that contain zero masses.
    match_surplus = float((mu.matched * phi_arr).sum())
    worker_rows = np.column_stack([mu.unmatched_workers, mu.matched])
    slot_rows = np.column_stack([mu.unmatched_slots, mu.matched.T])
    with np.errstate(divide="ignore", invalid="ignore"):
        worker_term = xlogy(worker_rows, worker_rows / spec.n[:, None]).sum()
        slot_term = xlogy(slot_rows, slot_rows / spec.m[:, None]).sum()
    return match_surplus - float(worker_term) - float(slot_term)


def verify_kkt(result: EquilibriumResult, spec: MarketSpec, phi=None, tol: float = 1e-6) -> KKTReport:
    """Check all five equilibrium conditions of a profile and report residuals.

    When ``phi`` is omitted it is reconstructed from U + V + tax, which is
    exact at any converged solve but makes the no-blocking check vacuous;
    pass the true surplus matrix for an independent audit.
    """
    mu = result.matching
    U = result.utilities.U
    V = result.utilities.V
    w = result.taxes.w
    w_slot = result.taxes.per_slot(spec)
    if phi is None:
        phi_arr = U + V + w_slot[None, :]
    else:
        phi_arr = as_surplus_array(phi, spec)

    population_residual = mu.population_residual(spec)

    slack = U + V - (phi_arr - w_slot[None, :])
    noblocking_min_slack = float(slack.min(initial=0.0))

    grad_w = g_gradient(U, spec)
    grad_s = h_gradient(V, spec)
    clearing_residual = float(
        max(
            np.abs(mu.matched - grad_w[:, 1:]).max(initial=0.0),
            np.abs(mu.unmatched_workers - grad_w[:, 0]).max(initial=0.0),
            np.abs(mu.matched - grad_s[1:, :]).max(initial=0.0),
            np.abs(mu.unmatched_slots - grad_s[0, :]).max(initial=0.0),
        )
    )

    masses = region_masses(mu, spec)
    over = np.maximum(masses - spec.upper, 0.0)
    under = np.maximum(spec.lower - masses, 0.0)
    quota_violation = float(np.maximum(over, under).max(initial=0.0))

    # Pair-level complementarity: positive matched mass forces a binding
    # constraint. Region-level: a nonzero tax forces its bound to hold.
    pair_cs = float(np.abs(slack[mu.matched > tol]).max(initial=0.0))
    region_cs = 0.0
    for zi in range(spec.num_regions):
        if w[zi] > tol:
            region_cs = max(region_cs, abs(masses[zi] - spec.upper[zi]))
        elif w[zi] < -tol:
            region_cs = max(region_cs, abs(masses[zi] - spec.lower[zi]))
    cs_residual = max(pair_cs, region_cs)

    dual = dual_value(U, V, result.taxes, spec)
    primal = _primal_value(mu, phi_arr, spec)
    gap = abs(dual - primal)

    passed = bool(
        population_residual <= tol
        and noblocking_min_slack >= -tol
        and clearing_residual <= tol
        and quota_violation <= tol
        and cs_residual <= tol
    )
    return KKTReport(
        population_residual=population_residual,
        noblocking_min_slack=noblocking_min_slack,
        clearing_residual=clearing_residual,
        quota_violation=quota_violation,
        complementary_slackness_residual=cs_residual,
        dual_value=dual,
        primal_value=primal,
        duality_gap=gap,
        passed=passed,
    )
