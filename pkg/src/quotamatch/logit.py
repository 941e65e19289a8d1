"""Gumbel-error (logit) welfare functions, demands, and conjugates.

Both sides of the market aggregate individual choice behavior into a smooth
value function per observable type: the expected maximum of systematic
utilities plus an additive error, including the zero-utility outside option.
Its gradient is the vector of choice fractions, so scaled by the type mass it
is the demand for each counterpart type.

With standard Gumbel errors these objects have closed forms: the value is a
log-sum-exp, the gradient a softmax, and the convex conjugate the negative
Shannon entropy on the choice simplex. The Euler-Mascheroni constant that
would appear in the expected maximum is deliberately dropped: demands, taxes,
equilibria, and welfare differences are unaffected, and the closed forms and
conjugate identities then hold exactly. Absolute welfare levels are shifted by
gamma * (total worker mass + total slot mass); see
:func:`quotamatch.welfare.location_offset`.
"""

from __future__ import annotations

import abc

import numpy as np

from .market import MarketSpec, Matching

__all__ = [
    "ErrorModel",
    "GumbelLogitModel",
    "g_value",
    "g_gradient",
    "h_value",
    "h_gradient",
    "entropy",
]

EULER_GAMMA = float(np.euler_gamma)

#: smallest admissible mass in entropy computations; below this we reject
#: rather than clamp (the logit never produces such masses at sane scales)
MASS_FLOOR = 1e-300


class ErrorModel(abc.ABC):
    """One side's choice-value model over counterpart types plus outside.

    Implementations must be strictly increasing and strictly convex in the
    systematic utilities, with strictly positive gradients whose rows sum to
    one (full support). Rows index own types; columns index counterpart types,
    with the outside option prepended as column 0.
    """

    @abc.abstractmethod
    def value_rows(self, systematic: np.ndarray) -> np.ndarray:
        """Per-type expected maximum over counterpart utilities and outside 0."""

    @abc.abstractmethod
    def gradient_rows(self, systematic: np.ndarray) -> np.ndarray:
        """Per-type choice fractions, shape (rows, cols + 1), outside first."""

    @abc.abstractmethod
    def conjugate_rows(self, shares: np.ndarray) -> np.ndarray:
        """Per-type convex conjugate evaluated at choice fractions."""


class GumbelLogitModel(ErrorModel):
    """Closed forms for iid standard Gumbel errors (location 0, scale 1)."""

    def value_rows(self, systematic: np.ndarray) -> np.ndarray:
        u = np.asarray(systematic, dtype=np.float64)
        # Shift by the row max (including the implicit zero of the outside
        # option) so the exponentials never overflow; underflow is harmless.
        hi = np.maximum(u.max(axis=1), 0.0)
        with np.errstate(under="ignore"):
            total = np.exp(-hi) + np.exp(u - hi[:, None]).sum(axis=1)
        return hi + np.log(total)

    def gradient_rows(self, systematic: np.ndarray) -> np.ndarray:
        u = np.asarray(systematic, dtype=np.float64)
        hi = np.maximum(u.max(axis=1), 0.0)
        with np.errstate(under="ignore"):
            outside = np.exp(-hi)
            inside = np.exp(u - hi[:, None])
        total = outside + inside.sum(axis=1)
        return np.column_stack([outside, inside]) / total[:, None]

    def conjugate_rows(self, shares: np.ndarray) -> np.ndarray:
        p = np.asarray(shares, dtype=np.float64)
        if np.any(p <= 0.0):
            raise ValueError("conjugate requires strictly positive choice fractions")
        return (p * np.log(p)).sum(axis=1)


_DEFAULT_MODEL = GumbelLogitModel()


def _check_block(block: np.ndarray, spec: MarketSpec, name: str) -> np.ndarray:
    arr = np.asarray(block, dtype=np.float64)
    if arr.shape != (spec.num_workers, spec.num_slots):
        raise ValueError(
            f"{name} must have shape ({spec.num_workers}, {spec.num_slots}), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    return arr


def g_value(U, spec: MarketSpec, model: ErrorModel = _DEFAULT_MODEL) -> float:
    """Worker-side aggregate value: sum over types of mass times the expected
    maximum over slot types and the outside option."""
    arr = _check_block(U, spec, "U")
    return float(spec.n @ model.value_rows(arr))


def g_gradient(U, spec: MarketSpec, model: ErrorModel = _DEFAULT_MODEL) -> np.ndarray:
    """Worker-side demand, shape (N, M + 1) with the outside option first.

    Row x sums to the worker mass n_x and every entry is strictly positive.
    """
    arr = _check_block(U, spec, "U")
    return spec.n[:, None] * model.gradient_rows(arr)


def h_value(V, spec: MarketSpec, model: ErrorModel = _DEFAULT_MODEL) -> float:
    """Slot-side aggregate value, the mirror image of :func:`g_value`."""
    arr = _check_block(V, spec, "V")
    return float(spec.m @ model.value_rows(arr.T))


def h_gradient(V, spec: MarketSpec, model: ErrorModel = _DEFAULT_MODEL) -> np.ndarray:
    """Slot-side demand, shape (N + 1, M) with the outside option as row 0.

    Column y sums to the slot mass m_y.
    """
    arr = _check_block(V, spec, "V")
    return (spec.m[:, None] * model.gradient_rows(arr.T)).T


def entropy(mu: Matching, spec: MarketSpec) -> float:
    """Unobserved-heterogeneity surplus of a strictly positive matching.

    This is the negative of the two conjugates evaluated at the per-type
    choice fractions, and it equals the expected error terms collected by the
    realized choices on each side.
    """
    matched = np.asarray(mu.matched, dtype=np.float64)
    uw = np.asarray(mu.unmatched_workers, dtype=np.float64)
    us = np.asarray(mu.unmatched_slots, dtype=np.float64)
    if min(matched.min(initial=np.inf), uw.min(initial=np.inf), us.min(initial=np.inf)) < MASS_FLOOR:
        raise ValueError("entropy requires every mass to be strictly positive")
    worker_rows = np.column_stack([uw, matched])
    slot_rows = np.column_stack([us, matched.T])
    worker_term = (worker_rows * np.log(worker_rows / spec.n[:, None])).sum()
    slot_term = (slot_rows * np.log(slot_rows / spec.m[:, None])).sum()
    return float(-worker_term - slot_term)
