"""Large-N fidelity coefficients c_N = N (1 - F) and their extrapolation.

Exact aggregated evaluation supplies c_N on a geometric grid of copy
counts; the limit coefficient is read off by fitting and removing the
leading finite-N corrections.  Measured coefficient series approach
their limits with half-integer power tails, so the default correction
ladder uses exponents 1/2, 1, 3/2, ...; an integer-power series is a
special case of that ladder (the extra coefficients fit to zero).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ExtrapolationError, ResourceLimitError, ValidationError
from .estimator import (
    CENTRAL_LIMIT_GUESS,
    GuessRule,
    OPTIMAL_GUESS,
    fidelity_exact_aggregated,
)
from .geometry import Geometry, make_quadrature
from .montecarlo import McConfig, simulate_fidelity
from .strategies import make_fixed_axes, make_two_stage

MAX_CONDITION = 1e12
DEFAULT_MC_SAMPLES = 200_000
DEFAULT_MC_SEED = 715517


@dataclass(frozen=True)
class SeriesEntry:
    copies: int
    fidelity: float
    coefficient: float
    stderr: float | None = None


@dataclass(frozen=True)
class CoefficientSeries:
    scheme: str
    entries: tuple[SeriesEntry, ...]

    def __post_init__(self):
        if list(self.entries) != sorted(self.entries,
                                        key=lambda e: e.copies):
            raise ValidationError("series entries must be sorted by N")

    @property
    def copy_counts(self) -> np.ndarray:
        return np.array([e.copies for e in self.entries], dtype=float)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([e.coefficient for e in self.entries])

    def dropped_last(self) -> "CoefficientSeries":
        return CoefficientSeries(self.scheme, self.entries[:-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        has_err = any(e.stderr is not None for e in self.entries)
        header = ["N", "F", "c_N"] + (["stderr"] if has_err else [])
        writer.writerow(header)
        for e in self.entries:
            row = [e.copies, repr(e.fidelity), repr(e.coefficient)]
            if has_err:
                row.append("" if e.stderr is None else repr(e.stderr))
            writer.writerow(row)
        return buf.getvalue()


@dataclass(frozen=True)
class SchemeInfo:
    geometry: Geometry
    guess: GuessRule | None        # None marks the two-stage Monte Carlo scheme
    expected_c: float
    cm_coefficient: float
    tolerance: float
    default_grid: tuple[int, ...]
    max_copies: int


SCHEMES: dict[str, SchemeInfo] = {
    "2d-cl": SchemeInfo(Geometry.PLANAR, CENTRAL_LIMIT_GUESS, 3.0 / 8.0,
                        1.0 / 4.0, 0.02, (8, 16, 32, 64, 128, 196), 200),
    "2d-og": SchemeInfo(Geometry.PLANAR, OPTIMAL_GUESS, 1.0 / 4.0,
                        1.0 / 4.0, 0.02, (8, 16, 32, 64, 128, 196), 200),
    "3d-cl": SchemeInfo(Geometry.FULL, CENTRAL_LIMIT_GUESS, 6.0 / 5.0,
                        1.0, 0.05, (6, 12, 24, 48, 60), 60),
    "3d-og": SchemeInfo(Geometry.FULL, OPTIMAL_GUESS, 13.0 / 12.0,
                        1.0, 0.05, (6, 12, 24, 48, 60), 60),
    "two-stage": SchemeInfo(Geometry.FULL, None, 1.0, 1.0, 0.15,
                            (36, 64, 100, 144), 256),
}


def scheme_info(scheme: str) -> SchemeInfo:
    key = scheme.strip().lower()
    if key not in SCHEMES:
        raise ValidationError(
            f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    return SCHEMES[key]


def _two_stage_pilot_size(copies: int) -> int:
    """Nearest-to-sqrt pilot size with the same parity as the copy count."""
    root = int(round(copies ** 0.5))
    if (copies - root) % 2 != 0:
        root += 1
    return max(2, root)


def build_series(scheme: str, n_values: tuple[int, ...] | None = None,
                 mc_samples: int = DEFAULT_MC_SAMPLES,
                 mc_seed: int = DEFAULT_MC_SEED) -> CoefficientSeries:
    """Exact (or, for the two-stage scheme, Monte Carlo) coefficient series."""
    info = scheme_info(scheme)
    if n_values is None:
        n_values = info.default_grid
    n_values = tuple(sorted(int(n) for n in n_values))
    entries = []
    for copies in n_values:
        if copies > info.max_copies:
            raise ResourceLimitError(
                f"scheme {scheme} copy count over budget",
                required=copies, allowed=info.max_copies)
        if info.guess is None:
            entry = _two_stage_entry(copies, mc_samples, mc_seed)
        else:
            axes = info.geometry.dimension
            if copies % axes != 0:
                raise ValidationError(
                    f"copy count {copies} does not split evenly over "
                    f"{axes} axes")
            fixed = make_fixed_axes(info.geometry, copies // axes)
            rule = make_quadrature(info.geometry, copies + 1)
            F = fidelity_exact_aggregated(fixed, info.guess, rule).F
            entry = SeriesEntry(copies, F, copies * (1.0 - F))
        entries.append(entry)
    return CoefficientSeries(scheme.strip().lower(), tuple(entries))


def _two_stage_entry(copies: int, mc_samples: int,
                     mc_seed: int) -> SeriesEntry:
    from .optimizer import optimize_one_step_adaptive  # deferred: heavier dep

    pilot_size = _two_stage_pilot_size(copies)
    pilot = optimize_one_step_adaptive(Geometry.FULL, pilot_size).strategy
    strategy = make_two_stage(Geometry.FULL, copies, pilot_size, 1.0, pilot)
    result = simulate_fidelity(strategy, OPTIMAL_GUESS,
                               McConfig(mc_samples, mc_seed))
    return SeriesEntry(copies, result.mean, copies * (1.0 - result.mean),
                       stderr=copies * result.stderr)


def richardson_extrapolate(series: CoefficientSeries, order: int = 2,
                           exponents: tuple[float, ...] | None = None) -> float:
    """Limit of c_N after removing the leading finite-N corrections.

    Fits c_N = c + sum_j b_j N^(-e_j) with e_j from ``exponents`` (default
    the half-integer ladder of length ``order``).  Without error bars the
    fit solves exactly on the last order+1 entries; with error bars it is
    a weighted least squares over the whole series.
    """
    if order < 1:
        raise ValidationError("order must be >= 1")
    if exponents is None:
        exponents = tuple(0.5 * (j + 1) for j in range(order))
    terms = len(exponents) + 1
    if len(series.entries) < terms:
        raise ValidationError(
            f"need at least {terms} series entries for order {order}")
    has_err = all(e.stderr is not None for e in series.entries)
    if has_err:
        n = series.copy_counts
        c = series.coefficients
        weights = 1.0 / np.array([e.stderr for e in series.entries])
    else:
        n = series.copy_counts[-terms:]
        c = series.coefficients[-terms:]
        weights = np.ones(terms)
    design = np.ones((len(n), terms))
    for j, e in enumerate(exponents):
        design[:, j + 1] = n ** (-e)
    condition = float(np.linalg.cond(design))
    if condition > MAX_CONDITION:
        raise ExtrapolationError("extrapolation table ill-conditioned",
                                 condition)
    solution, *_ = np.linalg.lstsq(design * weights[:, None],
                                   c * weights, rcond=None)
    return float(solution[0])


@dataclass(frozen=True)
class CmComparison:
    """Extrapolated coefficient against the collective-measurement bound."""

    scheme: str
    c_extrapolated: float
    expected_c: float
    cm_coefficient: float
    ratio: float
    tolerance: float
    saturates_cm: bool
    passed: bool

    def to_json_obj(self) -> dict:
        return {
            "scheme": self.scheme,
            "c_extrapolated": self.c_extrapolated,
            "expected_c": self.expected_c,
            "cm_coefficient": self.cm_coefficient,
            "ratio": self.ratio,
            "tolerance": self.tolerance,
            "saturates_cm": self.saturates_cm,
            "pass": self.passed,
        }


def compare_cm_bound(series: CoefficientSeries, order: int = 2,
                     exponents: tuple[float, ...] | None = None) -> CmComparison:
    """Extrapolate the series and compare against the CM-bound coefficient."""
    info = scheme_info(series.scheme)
    c = richardson_extrapolate(series, order=order, exponents=exponents)
    ratio = c / info.cm_coefficient
    saturates = abs(ratio - 1.0) <= info.tolerance
    passed = abs(c / info.expected_c - 1.0) <= info.tolerance
    return CmComparison(series.scheme, c, info.expected_c,
                        info.cm_coefficient, ratio, info.tolerance,
                        saturates, passed)
