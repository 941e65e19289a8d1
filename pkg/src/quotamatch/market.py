"""Domain types for quota-constrained matching markets.

A market couples a worker side and a slot side. Every slot type belongs to
exactly one region, and each region carries an interval quota on the total
matched mass it may absorb. The outside region (unmatched agents) is implicit:
it is never stored because its quota can never bind, and unmatched masses live
in dedicated vectors instead.

Type identifiers are opaque strings used only in files and error messages; all
numeric data is indexed positionally so results are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "MarketFileError",
    "SchemaViolationError",
    "UnknownRegionError",
    "MarketSpec",
    "SurplusMatrix",
    "TaxScheme",
    "Matching",
    "SystematicUtilities",
    "Diagnostics",
    "EquilibriumResult",
    "ValidationReport",
    "validate_market",
    "region_mass",
    "region_masses",
    "load_market",
    "save_market",
    "load_surplus",
    "load_taxes",
    "save_result",
    "load_result",
]


class MarketFileError(ValueError):
    """A market or result file could not be parsed."""


class SchemaViolationError(ValueError):
    """A file parsed but violates the market schema or a market invariant."""


class UnknownRegionError(KeyError):
    """A region identifier does not exist in the market."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MarketSpec:
    """Immutable description of a matching market with regional quotas.

    Parameters
    ----------
    worker_types : ordered worker-type identifiers.
    slot_types : ordered slot-type identifiers.
    regions : ordered region identifiers (the unconstrained outside region is
        implicit and never listed).
    n : per-worker-type population mass, aligned with ``worker_types``.
    m : per-slot-type slot mass, aligned with ``slot_types``.
    region_of : map from slot type to its unique region.
    upper : per-region ceiling on matched mass, aligned with ``regions``;
        ``inf`` means unconstrained.
    lower : per-region floor on matched mass, aligned with ``regions``.

    Construction checks structure only (shapes, unknown identifiers); numeric
    invariants such as quota ordering are the business of
    :func:`validate_market`, which reports violations instead of raising.
    """

    worker_types: tuple[str, ...]
    slot_types: tuple[str, ...]
    regions: tuple[str, ...]
    n: np.ndarray
    m: np.ndarray
    region_of: Mapping[str, str]
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "worker_types", tuple(str(t) for t in self.worker_types))
        object.__setattr__(self, "slot_types", tuple(str(t) for t in self.slot_types))
        object.__setattr__(self, "regions", tuple(str(t) for t in self.regions))
        object.__setattr__(self, "n", _readonly(self.n))
        object.__setattr__(self, "m", _readonly(self.m))
        object.__setattr__(self, "region_of", dict(self.region_of))
        object.__setattr__(self, "upper", _readonly(self.upper))
        object.__setattr__(self, "lower", _readonly(self.lower))
        if len(set(self.worker_types)) != len(self.worker_types):
            raise SchemaViolationError("duplicate worker type identifiers")
        if len(set(self.slot_types)) != len(self.slot_types):
            raise SchemaViolationError("duplicate slot type identifiers")
        if len(set(self.regions)) != len(self.regions):
            raise SchemaViolationError("duplicate region identifiers")
        if self.n.shape != (len(self.worker_types),):
            raise SchemaViolationError("n must align with worker_types")
        if self.m.shape != (len(self.slot_types),):
            raise SchemaViolationError("m must align with slot_types")
        if self.upper.shape != (len(self.regions),) or self.lower.shape != (len(self.regions),):
            raise SchemaViolationError("upper/lower must align with regions")
        for y in self.slot_types:
            if y not in self.region_of:
                raise SchemaViolationError(f"slot type {y!r} has no region_of entry")
            if self.region_of[y] not in set(self.regions):
                raise SchemaViolationError(
                    f"slot type {y!r} maps to unknown region {self.region_of[y]!r}"
                )

    @property
    def num_workers(self) -> int:
        return len(self.worker_types)

    @property
    def num_slots(self) -> int:
        return len(self.slot_types)

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @cached_property
    def slot_region_index(self) -> np.ndarray:
        """Region index of each slot type, aligned with ``slot_types``."""
        lookup = {z: i for i, z in enumerate(self.regions)}
        idx = np.array([lookup[self.region_of[y]] for y in self.slot_types], dtype=np.intp)
        idx.flags.writeable = False
        return idx

    @cached_property
    def region_slot_indices(self) -> tuple[np.ndarray, ...]:
        """For each region, the slot-type indices that belong to it."""
        return tuple(
            np.flatnonzero(self.slot_region_index == zi) for zi in range(self.num_regions)
        )

    def region_index(self, region: str) -> int:
        try:
            return self.regions.index(region)
        except ValueError:
            raise UnknownRegionError(region) from None

    def per_slot(self, per_region: np.ndarray) -> np.ndarray:
        """Expand a per-region vector to a per-slot-type vector."""
        return np.asarray(per_region, dtype=np.float64)[self.slot_region_index]

    def with_quotas(
        self,
        upper: Mapping[str, float] | None = None,
        lower: Mapping[str, float] | None = None,
    ) -> "MarketSpec":
        """Copy of the market with quotas replaced (absent region: inf / 0)."""
        up = np.full(self.num_regions, np.inf)
        lo = np.zeros(self.num_regions)
        for z, v in (upper or {}).items():
            up[self.region_index(z)] = float(v)
        for z, v in (lower or {}).items():
            lo[self.region_index(z)] = float(v)
        return MarketSpec(
            self.worker_types, self.slot_types, self.regions,
            self.n, self.m, self.region_of, up, lo,
        )

    def with_slot_masses(self, masses: Mapping[str, float]) -> "MarketSpec":
        """Copy of the market with some slot masses overridden."""
        m = np.array(self.m)
        lookup = {y: i for i, y in enumerate(self.slot_types)}
        for y, v in masses.items():
            if y not in lookup:
                raise SchemaViolationError(f"unknown slot type {y!r}")
            m[lookup[y]] = float(v)
        return MarketSpec(
            self.worker_types, self.slot_types, self.regions,
            self.n, m, self.region_of, self.upper, self.lower,
        )


@dataclass(frozen=True)
class SurplusMatrix:
    """Systematic joint surplus over worker-type x slot-type pairs.

    The null-pair surpluses (matches with the outside option) are identically
    zero and therefore not stored.
    """

    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _readonly(self.phi))
        if self.phi.ndim != 2:
            raise SchemaViolationError("surplus matrix must be two-dimensional")
        if not np.isfinite(self.phi).all():
            raise SchemaViolationError("surplus matrix entries must be finite")


def as_surplus_array(phi, spec: MarketSpec) -> np.ndarray:
    """Normalize a SurplusMatrix or bare array to a validated ndarray."""
    arr = phi.phi if isinstance(phi, SurplusMatrix) else np.asarray(phi, dtype=np.float64)
    if arr.shape != (spec.num_workers, spec.num_slots):
        raise SchemaViolationError(
            f"surplus matrix shape {arr.shape} does not match market "
            f"({spec.num_workers}, {spec.num_slots})"
        )
    if not np.isfinite(arr).all():
        raise SchemaViolationError("surplus matrix entries must be finite")
    return arr


@dataclass(frozen=True)
class TaxScheme:
    """Per-region signed tax: positive entries tax, negative ones subsidize."""

    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _readonly(self.w))
        if self.w.ndim != 1 or not np.isfinite(self.w).all():
            raise SchemaViolationError("taxes must be a finite vector")

    @property
    def ceiling_part(self) -> np.ndarray:
        """Nonnegative split component attached to ceilings (max{0, w})."""
        return np.maximum(self.w, 0.0)

    @property
    def floor_part(self) -> np.ndarray:
        """Nonnegative split component attached to floors (-min{0, w})."""
        return np.maximum(-self.w, 0.0)

    def per_slot(self, spec: MarketSpec) -> np.ndarray:
        return self.w[spec.slot_region_index]


def as_tax_array(taxes, spec: MarketSpec) -> np.ndarray:
    """Normalize taxes (TaxScheme, vector, mapping, or None) to a vector."""
    if taxes is None:
        return np.zeros(spec.num_regions)
    if isinstance(taxes, TaxScheme):
        arr = np.asarray(taxes.w, dtype=np.float64)
    elif isinstance(taxes, Mapping):
        arr = np.zeros(spec.num_regions)
        for z, v in taxes.items():
            arr[spec.region_index(z)] = float(v)
    else:
        arr = np.asarray(taxes, dtype=np.float64)
    if arr.shape != (spec.num_regions,):
        raise SchemaViolationError(
            f"tax vector length {arr.shape} does not match {spec.num_regions} regions"
        )
    if not np.isfinite(arr).all():
        raise SchemaViolationError("taxes must be finite")
    return arr


@dataclass(frozen=True)
class Matching:
    """Nonnegative match masses, including the unmatched masses on both sides.

    ``matched[x, y]`` is the mass of matches between worker type x and slot
    type y; ``unmatched_workers[x]`` and ``unmatched_slots[y]`` are the masses
    taking the outside option.
    """

    matched: np.ndarray
    unmatched_workers: np.ndarray
    unmatched_slots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matched", _readonly(self.matched))
        object.__setattr__(self, "unmatched_workers", _readonly(self.unmatched_workers))
        object.__setattr__(self, "unmatched_slots", _readonly(self.unmatched_slots))
        if self.matched.ndim != 2:
            raise SchemaViolationError("matched block must be two-dimensional")
        if (
            self.unmatched_workers.shape != (self.matched.shape[0],)
            or self.unmatched_slots.shape != (self.matched.shape[1],)
        ):
            raise SchemaViolationError("unmatched vectors must align with the matched block")

    def total(self) -> float:
        """Total mass over all stored type pairs (matched and unmatched)."""
        return float(
            self.matched.sum() + self.unmatched_workers.sum() + self.unmatched_slots.sum()
        )

    def population_residual(self, spec: MarketSpec) -> float:
        """Largest absolute violation of the two-sided population constraints."""
        worker = self.matched.sum(axis=1) + self.unmatched_workers - spec.n
        slot = self.matched.sum(axis=0) + self.unmatched_slots - spec.m
        return float(max(np.abs(worker).max(), np.abs(slot).max()))


@dataclass(frozen=True)
class SystematicUtilities:
    """Type-pair systematic utilities for both sides.

    The outside-option normalizations (zero utility for matching with the
    null type) are implicit and not stored.
    """

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", _readonly(self.U))
        object.__setattr__(self, "V", _readonly(self.V))
        if self.U.shape != self.V.shape or self.U.ndim != 2:
            raise SchemaViolationError("U and V must be matrices of equal shape")
        if not (np.isfinite(self.U).all() and np.isfinite(self.V).all()):
            raise SchemaViolationError("systematic utilities must be finite")


@dataclass(frozen=True)
class Diagnostics:
    """Solver health indicators attached to every equilibrium result."""

    dual_value: float
    primal_value: float
    duality_gap: float
    max_kkt_residual: float
    inner_iterations: int
    outer_iterations: int
    converged: bool
    tolerances: dict | None = None


@dataclass(frozen=True)
class EquilibriumResult:
    matching: Matching
    utilities: SystematicUtilities
    taxes: TaxScheme
    diagnostics: Diagnostics


@dataclass(frozen=True)
class ValidationReport:
    """List of violated market invariants; empty means admissible."""

    violations: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "ok" if self.ok else "; ".join(self.violations)


def validate_market(spec: MarketSpec) -> ValidationReport:
    """Check every numeric market invariant, reporting all violations.

    This is a diagnostic: it never raises, and an admissible market yields an
    empty report.
    """
    bad: list[str] = []
    if np.any(spec.n <= 0):
        bad.append("worker masses must be strictly positive")
    if np.any(spec.m <= 0):
        bad.append("slot masses must be strictly positive")
    for zi, z in enumerate(spec.regions):
        if spec.lower[zi] < 0:
            bad.append(f"region {z!r}: lower quota must be nonnegative")
        if spec.upper[zi] <= 0:
            bad.append(f"region {z!r}: upper quota must be strictly positive")
        if spec.upper[zi] < spec.lower[zi]:
            bad.append(
                f"region {z!r}: upper quota {spec.upper[zi]:g} is below "
                f"lower quota {spec.lower[zi]:g}"
            )
        if spec.lower[zi] > spec.m[spec.region_slot_indices[zi]].sum():
            bad.append(
                f"region {z!r}: lower quota exceeds the region's total slot mass"
            )
    if spec.lower.sum() > spec.n.sum():
        bad.append(
            f"sum of lower quotas {spec.lower.sum():g} exceeds total worker mass {spec.n.sum():g}"
        )
    return ValidationReport(tuple(bad))


def region_masses(mu: Matching, spec: MarketSpec) -> np.ndarray:
    """Matched mass absorbed by each region (unmatched masses excluded)."""
    per_slot = mu.matched.sum(axis=0)
    return np.bincount(spec.slot_region_index, weights=per_slot, minlength=spec.num_regions)


def region_mass(mu: Matching, region: str, spec: MarketSpec) -> float:
    """Matched mass absorbed by one region."""
    zi = spec.region_index(region)
    cols = spec.region_slot_indices[zi]
    return float(mu.matched[:, cols].sum())


# ---------------------------------------------------------------------------
# File formats
#
# Market files and result files are single JSON documents. Floats are written
# with 17 significant digits so that a load of a save reproduces every numeric
# field bit for bit. An absent key in `upper` means an infinite ceiling; an
# absent key in `lower` means a zero floor.
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError("cannot serialize a non-finite number")
    return format(float(x), ".17g")


def _dump_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f"{pad}  {json.dumps(str(k))}: {_dump_json(v, indent + 1)}" for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(not isinstance(v, (dict, list, tuple)) for v in obj)
        if flat:
            return "[" + ", ".join(_dump_json(v) for v in obj) + "]"
        items = ",\n".join(f"{pad}  {_dump_json(v, indent + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _write_json(obj: dict, path) -> None:
    Path(path).write_text(_dump_json(obj) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MarketFileError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise MarketFileError(f"{path}: top-level value must be an object")
    return data


def _require(data: dict, key: str, path) -> object:
    if key not in data:
        raise SchemaViolationError(f"{path}: missing required key {key!r}")
    return data[key]


def _mass_vector(raw: object, ids: Sequence[str], what: str, path) -> np.ndarray:
    if not isinstance(raw, dict):
        raise SchemaViolationError(f"{path}: {what} must map type identifiers to numbers")
    out = np.empty(len(ids))
    for i, t in enumerate(ids):
        if t not in raw:
            raise SchemaViolationError(f"{path}: {what} is missing an entry for {t!r}")
        out[i] = float(raw[t])
    return out


def save_market(spec: MarketSpec, path) -> None:
    """Write a market spec file (see module docstring for the schema)."""
    doc = {
        "worker_types": list(spec.worker_types),
        "slot_types": list(spec.slot_types),
        "regions": list(spec.regions),
        "n": {t: spec.n[i] for i, t in enumerate(spec.worker_types)},
        "m": {t: spec.m[i] for i, t in enumerate(spec.slot_types)},
        "region_of": {y: spec.region_of[y] for y in spec.slot_types},
        "upper": {
            z: spec.upper[i] for i, z in enumerate(spec.regions) if np.isfinite(spec.upper[i])
        },
        "lower": {z: spec.lower[i] for i, z in enumerate(spec.regions) if spec.lower[i] != 0.0},
    }
    _write_json(doc, path)


def load_market(path) -> MarketSpec:
    """Load and fully validate a market spec file.

    Raises MarketFileError on malformed JSON and SchemaViolationError when a
    required field is missing or a market invariant is violated.
    """
    data = _read_json(path)
    worker_types = [str(t) for t in _require(data, "worker_types", path)]
    slot_types = [str(t) for t in _require(data, "slot_types", path)]
    regions = [str(t) for t in _require(data, "regions", path)]
    n = _mass_vector(_require(data, "n", path), worker_types, "n", path)
    m = _mass_vector(_require(data, "m", path), slot_types, "m", path)
    region_raw = _require(data, "region_of", path)
    if not isinstance(region_raw, dict):
        raise SchemaViolationError(f"{path}: region_of must be an object")
    for y in slot_types:
        if y not in region_raw:
            raise SchemaViolationError(f"{path}: region_of is missing an entry for {y!r}")
    upper_raw = data.get("upper", {})
    lower_raw = data.get("lower", {})
    upper = np.full(len(regions), np.inf)
    lower = np.zeros(len(regions))
    index = {z: i for i, z in enumerate(regions)}
    for z, v in upper_raw.items():
        if z not in index:
            raise SchemaViolationError(f"{path}: upper quota for unknown region {z!r}")
        upper[index[z]] = float(v)
    for z, v in lower_raw.items():
        if z not in index:
            raise SchemaViolationError(f"{path}: lower quota for unknown region {z!r}")
        lower[index[z]] = float(v)
    spec = MarketSpec(worker_types, slot_types, regions, n, m, region_raw, upper, lower)
    report = validate_market(spec)
    if not report.ok:
        raise SchemaViolationError(f"{path}: {report}")
    return spec


def load_surplus(path, spec: MarketSpec) -> SurplusMatrix:
    """Load a surplus file: JSON object with key `phi` (row-major N x M)."""
    data = _read_json(path)
    phi = np.asarray(_require(data, "phi", path), dtype=np.float64)
    try:
        return SurplusMatrix(as_surplus_array(phi, spec))
    except SchemaViolationError as e:
        raise SchemaViolationError(f"{path}: {e}") from None


def load_taxes(path, spec: MarketSpec) -> TaxScheme:
    """Load a tax file: JSON object with key `w` mapping region to tax."""
    data = _read_json(path)
    raw = _require(data, "w", path)
    try:
        return TaxScheme(as_tax_array(raw, spec))
    except SchemaViolationError as e:
        raise SchemaViolationError(f"{path}: {e}") from None


def save_result(result: EquilibriumResult, path, spec: MarketSpec, welfare=None) -> None:
    """Write an equilibrium result file.

    The document holds the matching (matched block plus unmatched vectors),
    both systematic utility matrices, the per-region taxes, and diagnostics.
    A welfare breakdown, when given, is stored under the `welfare` key.
    """
    mu = result.matching
    diag = result.diagnostics
    doc = {
        "mu": {
            "matched": [list(row) for row in mu.matched],
            "unmatched_workers": list(mu.unmatched_workers),
            "unmatched_slots": list(mu.unmatched_slots),
        },
        "U": [list(row) for row in result.utilities.U],
        "V": [list(row) for row in result.utilities.V],
        "w": {z: result.taxes.w[i] for i, z in enumerate(spec.regions)},
        "diagnostics": {
            "dual_value": diag.dual_value,
            "primal_value": diag.primal_value,
            "duality_gap": diag.duality_gap,
            "max_kkt_residual": diag.max_kkt_residual,
            "inner_iterations": diag.inner_iterations,
            "outer_iterations": diag.outer_iterations,
            "converged": diag.converged,
        },
    }
    if diag.tolerances:
        doc["diagnostics"]["tolerances"] = diag.tolerances
    if welfare is not None:
        doc["welfare"] = welfare.as_dict()
    _write_json(doc, path)


def load_result(path, spec: MarketSpec) -> EquilibriumResult:
    """Load an equilibrium result file written by :func:`save_result`."""
    data = _read_json(path)
    mu_raw = _require(data, "mu", path)
    matching = Matching(
        np.asarray(_require(mu_raw, "matched", path), dtype=np.float64),
        np.asarray(_require(mu_raw, "unmatched_workers", path), dtype=np.float64),
        np.asarray(_require(mu_raw, "unmatched_slots", path), dtype=np.float64),
    )
    utilities = SystematicUtilities(
        np.asarray(_require(data, "U", path), dtype=np.float64),
        np.asarray(_require(data, "V", path), dtype=np.float64),
    )
    taxes = TaxScheme(as_tax_array(_require(data, "w", path), spec))
    diag_raw = _require(data, "diagnostics", path)
    diag = Diagnostics(
        dual_value=float(diag_raw["dual_value"]),
        primal_value=float(diag_raw["primal_value"]),
        duality_gap=float(diag_raw["duality_gap"]),
        max_kkt_residual=float(diag_raw["max_kkt_residual"]),
        inner_iterations=int(diag_raw["inner_iterations"]),
        outer_iterations=int(diag_raw["outer_iterations"]),
        converged=bool(diag_raw["converged"]),
        tolerances=diag_raw.get("tolerances"),
    )
    if matching.matched.shape != (spec.num_workers, spec.num_slots):
        raise SchemaViolationError(f"{path}: matching shape does not match the market")
    return EquilibriumResult(matching, utilities, taxes, diag)
