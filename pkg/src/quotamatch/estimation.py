"""Estimate joint-surplus coefficients from observed matching patterns.

The estimator nests the tax-fixed equilibrium solver inside an outer search
over coefficients: each candidate coefficient vector induces a surplus matrix
through the covariate basis, the equilibrium solver produces the implied
matching, and the outer loop minimizes the Kullback-Leibler divergence between
the observed and implied matching distributions over type pairs. Minimizing
that divergence is equivalent to maximizing the multinomial log likelihood of
the observed matches.

Taxes are held fixed at their observed values throughout. Observed matchings
must be strictly positive on every type pair; zero cells are rejected rather
than smoothed, since a missing match mass is informative of an unbounded
surplus penalty and breaks identification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .ae import IpfpConfig, solve_ae
from .market import (
    Matching,
    MarketSpec,
    SurplusMatrix,
    _read_json,
    _require,
    as_tax_array,
)

__all__ = [
    "CovariateBasis",
    "SurplusModel",
    "EstimationConfig",
    "FitReport",
    "EstimationError",
    "surplus_from_covariates",
    "kl_divergence",
    "log_likelihood",
    "estimate",
    "load_observed",
    "load_covariates",
]


class EstimationError(RuntimeError):
    """The inner equilibrium solve failed during estimation."""


@dataclass(frozen=True)
class CovariateBasis:
    """Type-pair covariates, one length-S vector per (worker, slot) pair."""

    c: np.ndarray

    def __post_init__(self):
        arr = np.array(self.c, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "c", arr)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ValueError("covariates must have shape (N, M, S) with S >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("covariates must be finite")

    @property
    def num_features(self) -> int:
        return self.c.shape[2]


@dataclass(frozen=True)
class SurplusModel:
    """Linear surplus model: the surplus of a pair is the inner product of
    the coefficient vector with the pair's covariates."""

    coefficients: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coefficients, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "coefficients", arr)
        if arr.ndim != 1 or not np.isfinite(arr).all():
            raise ValueError("coefficients must be a finite vector")


@dataclass(frozen=True)
class EstimationConfig:
    optimizer: str = "nelder_mead"  # or "finite_difference_bfgs"
    kl_tolerance: float = 1e-10
    max_outer_evals: int = 5000
    initial_coefficients: np.ndarray | None = None
    inner: IpfpConfig = IpfpConfig()

    def __post_init__(self):
        if self.optimizer not in ("nelder_mead", "finite_difference_bfgs"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.kl_tolerance > 0:
            raise ValueError("kl_tolerance must be positive")
        if self.max_outer_evals < 1:
            raise ValueError("max_outer_evals must be at least 1")


@dataclass
class FitReport:
    """Trace of the outer search: best KL after each objective evaluation."""

    kl_trace: list[float] = field(default_factory=list)
    n_evals: int = 0
    final_kl: float = np.inf
    converged: bool = False
    message: str = ""


def surplus_from_covariates(model: SurplusModel, c: CovariateBasis) -> SurplusMatrix:
    """Evaluate the linear surplus model on every type pair."""
    lam = model.coefficients
    if lam.shape != (c.num_features,):
        raise ValueError(
            f"coefficient length {lam.shape[0]} does not match {c.num_features} covariates"
        )
    return SurplusMatrix(c.c @ lam)


def _pair_vector(mu: Matching) -> np.ndarray:
    return np.concatenate(
        [mu.matched.ravel(), mu.unmatched_workers, mu.unmatched_slots]
    )


def kl_divergence(observed: Matching, simulated: Matching) -> float:
    """Divergence between the normalized match distributions over type pairs.

    The normalization includes the unmatched cells; both inputs should be
    strictly positive, and a zero simulated mass against positive observed
    mass is an error (the divergence would be infinite).
    """
    obs = _pair_vector(observed)
    sim = _pair_vector(simulated)
    if obs.shape != sim.shape:
        raise ValueError("observed and simulated matchings have different shapes")
    if np.any(obs < 0.0) or np.any(sim < 0.0):
        raise ValueError("match masses must be nonnegative")
    if np.any((sim <= 0.0) & (obs > 0.0)):
        raise ValueError("simulated matching has zero mass where observed mass is positive")
    p = obs / obs.sum()
    q = sim / sim.sum()
    positive = p > 0.0
    return float((p[positive] * np.log(p[positive] / q[positive])).sum())


def _simulate(spec, model, c, w, inner_cfg):
    phi = surplus_from_covariates(model, c)
    result = solve_ae(spec, phi, w, inner_cfg)
    if not result.diagnostics.converged:
        raise EstimationError(
            f"inner solve did not converge at coefficients {model.coefficients.tolist()}"
        )
    return result.matching


def log_likelihood(
    model: SurplusModel,
    c: CovariateBasis,
    observed: Matching,
    taxes,
    spec: MarketSpec,
    cfg: EstimationConfig | None = None,
) -> float:
    """Multinomial log likelihood of the observed matches under the model.

    Up to a coefficient-independent constant this is the negative observed
    mass times the KL divergence, so both criteria share their optimizer.
    """
    cfg = cfg or EstimationConfig()
    w = as_tax_array(taxes, spec)
    sim = _pair_vector(_simulate(spec, model, c, w, cfg.inner))
    obs = _pair_vector(observed)
    return float((obs * np.log(sim / sim.sum())).sum())


class _Converged(Exception):
    pass


def estimate(
    observed: Matching,
    c: CovariateBasis,
    taxes,
    spec: MarketSpec,
    cfg: EstimationConfig | None = None,
) -> tuple[SurplusModel, FitReport]:
    """Fit surplus coefficients to an observed matching.

    Runs the configured derivative-free or finite-difference search until the
    divergence falls below ``kl_tolerance`` or the evaluation budget is spent,
    and returns the best coefficients found together with the search trace.
    """
    cfg = cfg or EstimationConfig()
    if np.any(_pair_vector(observed) <= 0.0):
        raise ValueError("observed matching must be strictly positive on every type pair")
    w = as_tax_array(taxes, spec)
    x0 = (
        np.zeros(c.num_features)
        if cfg.initial_coefficients is None
        else np.asarray(cfg.initial_coefficients, dtype=np.float64)
    )
    if x0.shape != (c.num_features,):
        raise ValueError("initial coefficients must match the covariate dimension")

    report = FitReport()
    best = {"kl": np.inf, "lam": x0.copy()}

    def objective(lam: np.ndarray) -> float:
        kl = kl_divergence(observed, _simulate(spec, SurplusModel(lam), c, w, cfg.inner))
        report.n_evals += 1
        if kl < best["kl"]:
            best["kl"] = kl
            best["lam"] = np.array(lam)
        report.kl_trace.append(best["kl"])
        if best["kl"] <= cfg.kl_tolerance:
            raise _Converged
        if report.n_evals >= cfg.max_outer_evals:
            raise _Converged
        return kl

    try:
        if cfg.optimizer == "nelder_mead":
            simplex = np.vstack([x0] + [x0 + 0.25 * e for e in np.eye(c.num_features)])
            optimize.minimize(
                objective,
                x0,
                method="Nelder-Mead",
                options={
                    "initial_simplex": simplex,
                    "xatol": 1e-9,
                    "fatol": 1e-14,
                    "maxfev": cfg.max_outer_evals,
                },
            )
        else:
            optimize.minimize(
                objective,
                x0,
                method="BFGS",
                jac=_central_difference_gradient(objective),
                options={"gtol": 1e-12, "maxiter": cfg.max_outer_evals},
            )
    except _Converged:
        pass

    report.final_kl = best["kl"]
    report.converged = best["kl"] <= cfg.kl_tolerance
    report.message = (
        "kl tolerance reached" if report.converged else "evaluation budget exhausted"
    )
    return SurplusModel(best["lam"]), report


def _central_difference_gradient(f):
    def grad(lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        out = np.empty_like(lam)
        for i in range(lam.size):
            step = 1e-5 * (1.0 + abs(lam[i]))
            hi = lam.copy()
            lo = lam.copy()
            hi[i] += step
            lo[i] -= step
            out[i] = (f(hi) - f(lo)) / (2.0 * step)
        return out

    return grad


def load_observed(path, spec: MarketSpec) -> Matching:
    """Load an observed matching file: JSON with `mu` in the result layout."""
    data = _read_json(path)
    mu_raw = _require(data, "mu", path)
    mu = Matching(
        np.asarray(_require(mu_raw, "matched", path), dtype=np.float64),
        np.asarray(_require(mu_raw, "unmatched_workers", path), dtype=np.float64),
        np.asarray(_require(mu_raw, "unmatched_slots", path), dtype=np.float64),
    )
    if mu.matched.shape != (spec.num_workers, spec.num_slots):
        raise ValueError(f"{path}: matching shape does not match the market")
    return mu


def load_covariates(path, spec: MarketSpec) -> CovariateBasis:
    """Load a covariate file: JSON with integer `S` and array `c` (N x M x S)."""
    data = _read_json(path)
    s = int(_require(data, "S", path))
    c = CovariateBasis(np.asarray(_require(data, "c", path), dtype=np.float64))
    if c.c.shape != (spec.num_workers, spec.num_slots, s):
        raise ValueError(
            f"{path}: covariate array shape {c.c.shape} does not match "
            f"({spec.num_workers}, {spec.num_slots}, {s})"
        )
    return c
