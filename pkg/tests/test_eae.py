import numpy as np
import pytest

from conftest import random_constrained_market
from oracles import descent_taxes_under_quotas
from quotamatch.ae import solve_ae, solve_ae_grid
from quotamatch.eae import (
    EaeConfig,
    InfeasibleQuotaError,
    dual_value,
    outer_step,
    solve_eae,
    verify_kkt,
)
from quotamatch.market import (
    EquilibriumResult,
    Diagnostics,
    Matching,
    SystematicUtilities,
    TaxScheme,
    region_masses,
)
from quotamatch.welfare import social_welfare

TWO_LOG_THREE = 2.0 * np.log(3.0)


class TestClosedForms:
    def test_ceiling_quarter(self, single_pair):
        spec = single_pair.with_quotas(upper={"z": 0.25})
        result = solve_eae(spec, np.zeros((1, 1)))
        assert result.diagnostics.converged
        assert result.taxes.w[0] == pytest.approx(TWO_LOG_THREE, abs=1e-8)
        assert result.matching.matched[0, 0] == pytest.approx(0.25, abs=1e-8)

    def test_floor_three_quarters(self, single_pair):
        spec = single_pair.with_quotas(lower={"z": 0.75})
        result = solve_eae(spec, np.zeros((1, 1)))
        assert result.taxes.w[0] == pytest.approx(-TWO_LOG_THREE, abs=1e-8)
        assert result.matching.matched[0, 0] == pytest.approx(0.75, abs=1e-8)

    def test_equality_quota_pins_mass(self, single_pair):
        # Upper and lower bound coincide: the tax sign is determined by which
        # side of the pinned mass the zero-tax equilibrium falls on.
        spec = single_pair.with_quotas(upper={"z": 0.4}, lower={"z": 0.4})
        result = solve_eae(spec, np.zeros((1, 1)))
        assert result.diagnostics.converged
        assert result.matching.matched[0, 0] == pytest.approx(0.4, abs=1e-8)
        assert result.taxes.w[0] > 0.0  # zero-tax mass 0.5 sits above the pin
        assert verify_kkt(result, spec, np.zeros((1, 1)), tol=1e-6).passed

    def test_slack_quotas_reproduce_zero_tax_solution(self, example_market):
        spec, phi = example_market
        roomy = spec.with_quotas(upper={"z1": 5.0, "z2": 5.0}, lower={})
        constrained = solve_eae(roomy, phi)
        free = solve_ae(spec, phi)
        assert np.all(constrained.taxes.w == 0.0)
        assert np.abs(constrained.matching.matched - free.matching.matched).max() < 1e-8


class TestReferenceMarket:
    def test_reported_tax_pair(self, example_market):
        spec, phi = example_market
        result = solve_eae(spec, phi)
        assert result.diagnostics.converged
        assert result.taxes.w[0] == pytest.approx(0.5825, abs=0.005)
        assert result.taxes.w[1] == pytest.approx(0.0, abs=1e-12)

    def test_kkt_passes_with_tight_gap(self, example_market):
        spec, phi = example_market
        result = solve_eae(spec, phi)
        report = verify_kkt(result, spec, phi, tol=1e-6)
        assert report.passed
        assert report.duality_gap <= 1e-6 * (1.0 + abs(report.dual_value))

    def test_matches_projected_descent_oracle(self, example_market):
        spec, phi = example_market
        result = solve_eae(spec, phi)
        w_oracle = descent_taxes_under_quotas(spec, phi.phi)
        assert np.abs(result.taxes.w - w_oracle).max() < 1e-4


class TestOuterStep:
    def test_slack_region_gets_zero_tax(self, example_market):
        spec, phi = example_market
        roomy = spec.with_quotas(upper={"z1": 5.0}, lower={})
        stepped = outer_step(np.array([0.4, -0.2]), roomy, phi)
        assert np.all(stepped.w == 0.0)

    def test_single_region_one_step_solves(self, single_pair):
        spec = single_pair.with_quotas(upper={"z": 0.25})
        stepped = outer_step(np.zeros(1), spec, np.zeros((1, 1)))
        assert stepped.w[0] == pytest.approx(TWO_LOG_THREE, abs=1e-8)

    def test_spillover_region_taxed_on_subsequent_sweep(self):
        # Two identical regions; capping the first pushes mass into the
        # second past its own ceiling, so a later sweep must tax it too.
        rng = np.random.default_rng(2)
        from quotamatch.market import MarketSpec

        spec = MarketSpec(
            ("x1", "x2"), ("y1", "y2"), ("z1", "z2"),
            np.array([0.6, 0.6]), np.array([0.5, 0.5]),
            {"y1": "z1", "y2": "z2"},
            np.array([np.inf, np.inf]), np.zeros(2),
        )
        phi = np.array([[2.0, 1.8], [1.9, 2.1]])
        base = region_masses(solve_ae(spec, phi).matching, spec)
        capped = spec.with_quotas(upper={"z1": 0.7 * base[0], "z2": 1.02 * base[1]})
        w1 = outer_step(np.zeros(2), capped, phi)
        result = solve_eae(capped, phi)
        assert w1.w[0] > 0.0
        assert result.taxes.w[1] > 0.0
        assert verify_kkt(result, capped, phi, tol=1e-6).passed


class TestVerifier:
    def test_flags_fabricated_tax_on_slack_region(self, example_market):
        spec, phi = example_market
        base = solve_ae(spec, phi, np.array([1.0, 0.0]))
        report = verify_kkt(base, spec, phi, tol=1e-6)
        # Region mass at that tax is strictly inside the quota interval, so a
        # positive tax violates complementary slackness.
        assert report.complementary_slackness_residual > 1e-3
        assert not report.passed

    def test_flags_floor_violation(self, single_pair):
        spec = single_pair.with_quotas(lower={"z": 0.75})
        free = solve_ae(spec, np.zeros((1, 1)))
        report = verify_kkt(free, spec, np.zeros((1, 1)), tol=1e-6)
        assert report.quota_violation > 0.2
        assert not report.passed

    def test_flags_population_violation(self, single_pair):
        mu = Matching(np.array([[0.6]]), np.array([0.6]), np.array([0.4]))
        fake = EquilibriumResult(
            mu,
            SystematicUtilities(np.zeros((1, 1)), np.zeros((1, 1))),
            TaxScheme(np.zeros(1)),
            Diagnostics(0, 0, 0, 0, 0, 0, False),
        )
        report = verify_kkt(fake, single_pair, np.zeros((1, 1)), tol=1e-6)
        assert report.population_residual == pytest.approx(0.2, abs=1e-12)
        assert not report.passed

    def test_reconstructs_surplus_when_omitted(self, example_market):
        spec, phi = example_market
        result = solve_eae(spec, phi)
        report = verify_kkt(result, spec, tol=1e-6)
        assert report.passed


class TestDualValue:
    def test_constant_case(self, single_pair):
        got = dual_value(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), single_pair)
        assert got == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_ceiling_case_equals_primal(self, single_pair):
        spec = single_pair.with_quotas(upper={"z": 0.25})
        result = solve_eae(spec, np.zeros((1, 1)))
        dual = dual_value(result.utilities.U, result.utilities.V, result.taxes, spec)
        want = 2 * np.log(4.0 / 3.0) + 0.25 * TWO_LOG_THREE
        assert dual == pytest.approx(want, abs=1e-7)
        primal = social_welfare(result.matching, np.zeros((1, 1)), spec)
        assert dual == pytest.approx(primal, abs=1e-7)

    def test_reference_market_duality(self, example_market):
        spec, phi = example_market
        result = solve_eae(spec, phi)
        assert result.diagnostics.duality_gap <= 1e-6 * (1 + abs(result.diagnostics.dual_value))


class TestRandomInstances:
    def test_strong_duality_and_kkt(self):
        passed = 0
        for seed in range(40):
            spec, phi = random_constrained_market(np.random.default_rng(seed))
            try:
                result = solve_eae(spec, phi)
            except InfeasibleQuotaError:
                continue
            if not result.diagnostics.converged:
                continue
            passed += 1
            d = result.diagnostics
            assert d.duality_gap <= 1e-6 * (1.0 + abs(d.dual_value)), seed
            assert verify_kkt(result, spec, phi, tol=1e-6).passed, seed
        assert passed >= 30

    def test_uniqueness_from_random_initializations(self):
        rng = np.random.default_rng(99)
        for seed in (3, 11):
            spec, phi = random_constrained_market(np.random.default_rng(seed))
            reference = solve_eae(spec, phi)
            for _ in range(5):
                w0 = rng.uniform(-2.0, 2.0, size=spec.num_regions)
                other = solve_eae(spec, phi, initial_taxes=w0)
                assert np.abs(other.taxes.w - reference.taxes.w).max() < 1e-6
                assert np.abs(
                    other.matching.matched - reference.matching.matched
                ).max() < 1e-7

    def test_welfare_dominates_feasible_grid_taxes(self, single_pair):
        # Dense scalar tax grid on a one-region market: no feasible tax beats
        # the optimum.
        spec = single_pair.with_quotas(upper={"z": 0.4}, lower={"z": 0.2})
        phi = np.array([[1.0]])
        best = solve_eae(spec, phi)
        best_welfare = social_welfare(best.matching, phi, spec)
        grid = np.arange(-2.0, 3.0, 1e-3)[:, None]
        batch = solve_ae_grid(spec, phi, grid)
        ok = (batch.region_mass[:, 0] >= 0.2 - 1e-9) & (batch.region_mass[:, 0] <= 0.4 + 1e-9)
        for g in np.flatnonzero(ok):
            w = social_welfare(batch.matching(g), phi, spec)
            assert best_welfare >= w - 1e-7


class TestConicOracle:
    def test_taxes_match_interior_point_solution(self, example_market):
        # Third independent route: the same convex program handed to a conic
        # modeling layer. Skipped when cvxpy is not installed.
        cp = pytest.importorskip("cvxpy")
        spec, phi = example_market

        N, M, L = spec.num_workers, spec.num_slots, spec.num_regions
        U = cp.Variable((N, M))
        V = cp.Variable((N, M))
        ceil_split = cp.Variable(L, nonneg=True)
        floor_split = cp.Variable(L, nonneg=True)
        objective = 0
        for x in range(N):
            objective += spec.n[x] * cp.log_sum_exp(cp.hstack([np.zeros(1), U[x, :]]))
        for y in range(M):
            objective += spec.m[y] * cp.log_sum_exp(cp.hstack([np.zeros(1), V[:, y]]))
        objective += spec.upper @ ceil_split - spec.lower @ floor_split
        net_tax = (ceil_split - floor_split)[spec.slot_region_index]
        constraints = [U + V >= phi.phi - cp.reshape(net_tax, (1, M), order="C")]
        problem = cp.Problem(cp.Minimize(objective), constraints)
        problem.solve(solver=cp.CLARABEL)

        ours = solve_eae(spec, phi)
        w_conic = np.asarray(ceil_split.value) - np.asarray(floor_split.value)
        assert np.abs(ours.taxes.w - w_conic).max() < 5e-4
        assert abs(problem.value - ours.diagnostics.dual_value) <= 1e-6 * (1 + abs(problem.value))


class TestInfeasibility:
    def test_unreachable_floor_raises(self, single_pair):
        # Slot mass is 1.0 but the floor demands 0.999 of the unit worker
        # mass; the required subsidy exceeds the admissible bracket.
        spec = single_pair.with_quotas(lower={"z": 0.9999})
        with pytest.raises(InfeasibleQuotaError):
            solve_eae(spec, np.zeros((1, 1)), EaeConfig(bracket_limit=16.0))

    def test_validation_failure_raises_value_error(self, single_pair):
        spec = single_pair.with_quotas(upper={"z": 0.2}, lower={"z": 0.5})
        with pytest.raises(ValueError, match="admissible"):
            solve_eae(spec, np.zeros((1, 1)))

    def test_near_saturation_floor_degrades_to_flagged_partial(self, single_pair):
        # The fixed point stalls when unmatched masses vanish, so the solution
        # cannot be certified to tolerance; it must come back flagged rather
        # than raise, and still land near the analytic tax.
        spec = single_pair.with_quotas(lower={"z": 0.9999})
        result = solve_eae(spec, np.zeros((1, 1)))
        assert not result.diagnostics.converged
        assert result.taxes.w[0] == pytest.approx(-2 * np.log(9999.0), abs=1e-4)
