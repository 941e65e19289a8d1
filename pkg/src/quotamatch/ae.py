"""Aggregate equilibrium at fixed taxes via an alternating fixed point.

With logit errors and full support, every no-blocking constraint binds, which
pins the matched mass of a pair to the geometric mean of the two unmatched
masses times a kernel exp((surplus - tax) / 2). Substituting into the two
population constraints gives, for each type, a scalar quadratic in the square
root of its unmatched mass that is solvable in closed form. Alternating the
worker-side and slot-side solves is a proportional-fitting iteration that
keeps the kernel relation exact at every step; convergence is measured by the
worst absolute population residual, which directly certifies the equilibrium
population condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .logit import entropy, g_value, h_value
from .market import (
    Diagnostics,
    EquilibriumResult,
    MarketSpec,
    Matching,
    SystematicUtilities,
    TaxScheme,
    as_surplus_array,
    as_tax_array,
)

__all__ = [
    "IpfpConfig",
    "ChooSiowKernel",
    "KernelRangeError",
    "build_kernel",
    "solve_ae",
    "solve_ae_grid",
    "GridSolution",
]

#: exponent bound beyond which exp() would overflow a double
_EXP_LIMIT = 700.0


class KernelRangeError(ValueError):
    """Kernel exponent large enough to overflow; inputs are out of range."""


@dataclass(frozen=True)
class IpfpConfig:
    """Fixed-point iteration controls."""

    population_tolerance: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self):
        if not self.population_tolerance > 0:
            raise ValueError("population_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class ChooSiowKernel:
    """Strictly positive pair kernel exp((surplus - tax) / 2)."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)


def build_kernel(phi, taxes, spec: MarketSpec) -> ChooSiowKernel:
    """Build the matching-function kernel for a surplus matrix and tax vector."""
    phi_arr = as_surplus_array(phi, spec)
    w = as_tax_array(taxes, spec)
    exponent = 0.5 * (phi_arr - w[spec.slot_region_index][None, :])
    if exponent.max() > _EXP_LIMIT:
        raise KernelRangeError(
            f"kernel exponent {exponent.max():g} exceeds {_EXP_LIMIT:g}; "
            "surplus minus tax is out of representable range"
        )
    return ChooSiowKernel(np.exp(exponent))


def _positive_root(s: np.ndarray, c: np.ndarray) -> np.ndarray:
    # Positive solution of x**2 + s*x - c = 0, written to avoid cancellation
    # when s is large.
    return 2.0 * c / (s + np.sqrt(s * s + 4.0 * c))


def _ipfp(n, m, kernel, tol, max_iterations, a0=None, b0=None):
    """Run the alternating fixed point; supports stacked leading dimensions.

    Returns (a, b, iterations, residual) where a*a and b*b are the unmatched
    masses. The slot side is exact after every sweep by construction, so the
    residual is dominated by the worker side.
    """
    a = np.sqrt(n / 2.0) if a0 is None else np.array(a0, dtype=np.float64)
    b = np.sqrt(m / 2.0) if b0 is None else np.array(b0, dtype=np.float64)
    if kernel.ndim > 2 and a.ndim == 1:
        lead = kernel.shape[:-2]
        a = np.broadcast_to(a, lead + a.shape).copy()
        b = np.broadcast_to(b, lead + b.shape).copy()
    s = (kernel @ b[..., :, None])[..., 0]
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        a = _positive_root(s, n)
        t = (a[..., None, :] @ kernel)[..., 0, :]
        b = _positive_root(t, m)
        s = (kernel @ b[..., :, None])[..., 0]
        worker_res = np.abs(a * a + a * s - n).max()
        slot_res = np.abs(b * b + b * t - m).max()
        residual = float(max(worker_res, slot_res))
        if residual <= tol:
            break
    return a, b, iterations, residual


def _utilities(a, b, phi_arr, w_slot):
    half = 0.5 * (phi_arr - w_slot[None, :])
    log_a = np.log(a)
    log_b = np.log(b)
    U = half + log_b[None, :] - log_a[:, None]
    V = half + log_a[:, None] - log_b[None, :]
    return U, V


def _matching(a, b, kernel):
    return Matching(a[:, None] * b[None, :] * kernel, a * a, b * b)


def solve_ae(
    spec: MarketSpec,
    phi,
    taxes=None,
    cfg: IpfpConfig | None = None,
    initial: tuple[np.ndarray, np.ndarray] | None = None,
) -> EquilibriumResult:
    """Solve the tax-fixed aggregate equilibrium (quotas ignored).

    Population constraints are enforced to ``cfg.population_tolerance``; the
    demand and binding-surplus conditions hold by construction. On iteration
    exhaustion a partial result is returned with ``converged`` set to False.

    ``initial`` optionally warm-starts the iteration with square roots of the
    unmatched masses from a previous solve.
    """
    cfg = cfg or IpfpConfig()
    phi_arr = as_surplus_array(phi, spec)
    w = as_tax_array(taxes, spec)
    kernel = build_kernel(phi_arr, w, spec).matrix
    a0, b0 = initial if initial is not None else (None, None)
    a, b, iterations, residual = _ipfp(
        spec.n, spec.m, kernel, cfg.population_tolerance, cfg.max_iterations, a0, b0
    )
    w_slot = w[spec.slot_region_index]
    U, V = _utilities(a, b, phi_arr, w_slot)
    mu = _matching(a, b, kernel)
    converged = residual <= cfg.population_tolerance

    dual = g_value(U, spec) + h_value(V, spec)
    primal = float((mu.matched * (phi_arr - w_slot[None, :])).sum()) + entropy(mu, spec)
    binding_res = float(np.abs(U + V - (phi_arr - w_slot[None, :])).max(initial=0.0))
    diag = Diagnostics(
        dual_value=dual,
        primal_value=primal,
        duality_gap=abs(dual - primal),
        max_kkt_residual=max(residual, binding_res),
        inner_iterations=iterations,
        outer_iterations=0,
        converged=converged,
        tolerances={"population_tolerance": cfg.population_tolerance},
    )
    return EquilibriumResult(mu, SystematicUtilities(U, V), TaxScheme(w), diag)


@dataclass(frozen=True)
class GridSolution:
    """Batched tax-fixed equilibria over a grid of tax vectors.

    Arrays are stacked along the grid dimension. ``iterations`` is the shared
    sweep count at which the slowest grid point met the tolerance.
    """

    taxes: np.ndarray            # (G, L)
    matched: np.ndarray          # (G, N, M)
    unmatched_workers: np.ndarray  # (G, N)
    unmatched_slots: np.ndarray    # (G, M)
    region_mass: np.ndarray      # (G, L)
    iterations: int
    residual: float
    converged: bool

    def matching(self, g: int) -> Matching:
        return Matching(self.matched[g], self.unmatched_workers[g], self.unmatched_slots[g])


def solve_ae_grid(
    spec: MarketSpec, phi, tax_grid, cfg: IpfpConfig | None = None
) -> GridSolution:
    """Solve the tax-fixed equilibrium for every tax vector in a grid at once.

    Grid points are independent, so they are advanced in lockstep with the
    iteration stopping when the worst residual across the grid meets the
    tolerance; the result is identical to solving each point separately.
    """
    cfg = cfg or IpfpConfig()
    phi_arr = as_surplus_array(phi, spec)
    grid = np.asarray(tax_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] != spec.num_regions:
        raise ValueError(f"tax grid must have shape (G, {spec.num_regions})")
    w_slot = grid[:, spec.slot_region_index]
    exponent = 0.5 * (phi_arr[None, :, :] - w_slot[:, None, :])
    if exponent.max() > _EXP_LIMIT:
        raise KernelRangeError("kernel exponent out of range somewhere on the tax grid")
    kernels = np.exp(exponent)
    a, b, iterations, residual = _ipfp(
        spec.n, spec.m, kernels, cfg.population_tolerance, cfg.max_iterations
    )
    matched = a[:, :, None] * b[:, None, :] * kernels
    per_slot = matched.sum(axis=1)
    masses = np.zeros((grid.shape[0], spec.num_regions))
    for zi, cols in enumerate(spec.region_slot_indices):
        masses[:, zi] = per_slot[:, cols].sum(axis=1)
    return GridSolution(
        taxes=grid,
        matched=matched,
        unmatched_workers=a * a,
        unmatched_slots=b * b,
        region_mass=masses,
        iterations=iterations,
        residual=residual,
        converged=residual <= cfg.population_tolerance,
    )


def consistency_residual(result: EquilibriumResult, phi, spec: MarketSpec) -> float:
    """Max deviation of U + V from surplus minus tax over the matched block."""
    phi_arr = as_surplus_array(phi, spec)
    w_slot = result.taxes.per_slot(spec)
    gap = result.utilities.U + result.utilities.V - (phi_arr - w_slot[None, :])
    return float(np.abs(gap).max(initial=0.0))


def fixed_point_residual(result: EquilibriumResult, phi, spec: MarketSpec) -> float:
    """Worst population residual implied by the matching-function relation."""
    kernel = build_kernel(phi, result.taxes, spec).matrix
    mu = result.matching
    a = np.sqrt(mu.unmatched_workers)
    b = np.sqrt(mu.unmatched_slots)
    worker = mu.unmatched_workers + a * (kernel @ b) - spec.n
    slot = mu.unmatched_slots + b * (kernel.T @ a) - spec.m
    return float(max(np.abs(worker).max(), np.abs(slot).max()))
