import numpy as np
import pytest

from quotamatch.market import MarketSpec, SurplusMatrix


@pytest.fixture(scope="session")
def example_market():
    """Two worker types, three slot types in two regions, with both quota
    bounds finite. The ceiling on the first region binds at the optimum."""
    spec = MarketSpec(
        ("x1", "x2"),
        ("y1", "y2", "y3"),
        ("z1", "z2"),
        np.array([0.5, 0.5]),
        np.array([0.3, 0.3, 0.4]),
        {"y1": "z1", "y2": "z1", "y3": "z2"},
        np.array([0.5, 0.4]),
        np.array([0.1, 0.05]),
    )
    phi = SurplusMatrix(np.array([[2.0, 1.5, 1.0], [1.5, 2.0, 1.0]]))
    return spec, phi


@pytest.fixture()
def single_pair():
    """One worker type, one slot type, one region, unit masses, no quotas."""
    spec = MarketSpec(
        ("x",), ("y",), ("z",),
        np.array([1.0]), np.array([1.0]),
        {"y": "z"},
        np.array([np.inf]), np.array([0.0]),
    )
    return spec


def random_constrained_market(rng: np.random.Generator, max_types: int = 5, max_regions: int = 3):
    """Random market with feasible, usually binding, mixed floor/ceiling quotas.

    Feasibility is guaranteed by construction: quotas are intervals drawn
    around the region masses of the equilibrium at a random witness tax
    vector, so that matching satisfies them. They typically exclude the
    zero-tax masses, which makes the constraints bind.
    """
    from quotamatch.ae import solve_ae
    from quotamatch.market import region_masses

    spec, phi = random_market(rng, max_types=max_types, max_regions=max_regions)
    witness_taxes = rng.uniform(-1.0, 1.0, size=spec.num_regions)
    witness = solve_ae(spec, phi, witness_taxes)
    masses = region_masses(witness.matching, spec)
    upper = {}
    lower = {}
    for zi, z in enumerate(spec.regions):
        if rng.random() < 0.75:
            upper[z] = masses[zi] + rng.uniform(0.001, 0.2)
        if rng.random() < 0.75:
            lower[z] = max(0.0, masses[zi] - rng.uniform(0.001, 0.2))
    return spec.with_quotas(upper=upper, lower=lower), phi


def random_market(rng: np.random.Generator, max_types: int = 5, max_regions: int = 3):
    """Random admissible market with surplus in [-2, 2] and open quotas."""
    N = int(rng.integers(1, max_types + 1))
    M = int(rng.integers(1, max_types + 1))
    L = int(rng.integers(1, min(max_regions, M) + 1))
    worker_types = tuple(f"x{i}" for i in range(N))
    slot_types = tuple(f"y{j}" for j in range(M))
    regions = tuple(f"z{k}" for k in range(L))
    assignment = list(rng.integers(0, L, size=M))
    for k in range(L):  # every region gets at least one slot type
        if k not in assignment:
            assignment[int(rng.integers(0, M))] = k
    region_of = {slot_types[j]: regions[assignment[j]] for j in range(M)}
    n = rng.uniform(0.2, 1.5, size=N)
    m = rng.uniform(0.2, 1.5, size=M)
    phi = rng.uniform(-2.0, 2.0, size=(N, M))
    spec = MarketSpec(
        worker_types, slot_types, regions, n, m, region_of,
        np.full(L, np.inf), np.zeros(L),
    )
    return spec, SurplusMatrix(phi)
