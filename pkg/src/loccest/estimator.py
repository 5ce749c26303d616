"""Exact evaluation of branch vectors, guess rules, and average fidelity.

For a strategy tree over N copies, each outcome branch x carries the
unnormalized posterior-mean vector

    V(x) = integral dn  n * prod_k (1 + (-1)^{i_k} n . m(x_{k-1})) / 2,

a polynomial integral of degree N+1 evaluated exactly by quadrature.
The guess maximizing the average fidelity is V(x)/|V(x)|, for which

    F = (1 + sum_x |V(x)|) / 2.

Fixed repeated-axis schemes admit an aggregated evaluation over outcome
count classes instead of raw branches, which scales to hundreds of
copies.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import binom

from .errors import ResourceLimitError, ValidationError
from .geometry import Geometry, QuadratureRule
from .strategies import (
    FixedStrategy,
    History,
    OutcomeCounts,
    StrategyTree,
    TwoStageStrategy,
    history_to_bitstring,
    transverse_frame,
    two_stage_guess,
)

# Branch vectors shorter than this are treated as direction-degenerate.
DEGENERATE_NORM = 1e-13
MAX_BRANCHES = 1 << 16
# Cap on (outcome classes) x (quadrature nodes) for aggregated evaluation.
MAX_AGGREGATED_WORK = 500_000_000


class GuessKind(Enum):
    OPTIMAL = "og"
    CENTRAL_LIMIT = "cl"
    FIXED = "fixed"


@dataclass(frozen=True)
class GuessRule:
    """How the final state guess is formed from an outcome.

    OPTIMAL normalizes the branch vector; CENTRAL_LIMIT normalizes the
    vector of per-axis outcome means (count-based schemes only); FIXED
    looks outcomes up in an explicit table keyed by history tuple (tree
    evaluation) or by counts tuple (aggregated evaluation).
    """

    kind: GuessKind
    table: dict[tuple[int, ...], np.ndarray] | None = None

    @classmethod
    def parse(cls, name: str) -> "GuessRule":
        name = name.strip().lower()
        if name in ("og", "optimal"):
            return OPTIMAL_GUESS
        if name in ("cl", "central-limit"):
            return CENTRAL_LIMIT_GUESS
        raise ValidationError(f"unknown guess rule {name!r}; expected og or cl")


OPTIMAL_GUESS = GuessRule(GuessKind.OPTIMAL)
CENTRAL_LIMIT_GUESS = GuessRule(GuessKind.CENTRAL_LIMIT)


def fixed_guess(table: dict[tuple[int, ...], np.ndarray]) -> GuessRule:
    return GuessRule(GuessKind.FIXED, dict(table))


@dataclass(frozen=True)
class BranchVector:
    """Unnormalized posterior-mean vector of one outcome branch."""

    history: History
    v: np.ndarray
    norm: float


@dataclass(frozen=True)
class BranchRecord:
    branch: str
    probability: float
    v_norm: float
    guess: np.ndarray


@dataclass(frozen=True)
class FidelityReport:
    """Average fidelity with per-branch diagnostics."""

    F: float
    N: int
    geometry: Geometry
    method: str
    quadrature_degree: int
    per_branch: tuple[BranchRecord, ...]

    def to_json_obj(self) -> dict:
        return {
            "F": self.F,
            "N": self.N,
            "geometry": self.geometry.value,
            "method": self.method,
            "quadrature_degree": self.quadrature_degree,
            "branches": [
                {"branch": rec.branch, "probability": rec.probability,
                 "v_norm": rec.v_norm,
                 "guess": [float(x) for x in rec.guess]}
                for rec in self.per_branch
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["F", "N", "geometry", "method", "quadrature_degree"])
        writer.writerow([repr(self.F), self.N, self.geometry.value,
                         self.method, self.quadrature_degree])
        writer.writerow(["branch", "probability", "branch_vector_norm",
                         "guess_x", "guess_y", "guess_z"])
        for rec in self.per_branch:
            writer.writerow([rec.branch, repr(rec.probability),
                             repr(rec.v_norm)] +
                            [repr(float(x)) for x in rec.guess])
        return buf.getvalue()


def _require_degree(rule: QuadratureRule, copies: int) -> None:
    if rule.exact_degree < copies + 1:
        raise ValidationError(
            f"quadrature exact_degree {rule.exact_degree} insufficient for "
            f"{copies} copies (need >= {copies + 1})")
    # The branch integrand is a degree-(copies+1) polynomial in n.


def branch_probability_density(n: np.ndarray, tree: StrategyTree,
                               x: History) -> float:
    """Probability of outcome string x when the true state vector is n."""
    if len(x) != tree.copies:
        raise ValidationError(
            f"history length {len(x)} != tree copies {tree.copies}")
    n = np.asarray(n, dtype=float)
    value = 1.0
    for k, bit in enumerate(x):
        m = tree.direction(x[:k])
        value *= (1.0 + (1.0 - 2.0 * bit) * float(n @ m)) / 2.0
    return value


def leaf_densities(tree: StrategyTree, rule: QuadratureRule) -> np.ndarray:
    """Branch probability densities at every quadrature node.

    Returns an array (2^N, Q) whose row h is P_n(x) for the branch with
    integer-encoded history h, evaluated at each node n.
    """
    branches = 1 << tree.copies
    if branches > MAX_BRANCHES:
        raise ResourceLimitError("branch enumeration over budget",
                                 required=branches, allowed=MAX_BRANCHES)
    R = np.ones((1, rule.node_count))
    for table in tree.depth_tables():
        dots = table @ rule.nodes.T
        R = np.concatenate([R * (1.0 + dots) / 2.0,
                            R * (1.0 - dots) / 2.0], axis=0)
        # Row index grows as h + i * 2^k, matching the integer encoding.
    return R


def branch_table(tree: StrategyTree,
                 rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch probabilities p (2^N,) and branch vectors V (2^N, 3)."""
    _require_degree(rule, tree.copies)
    R = leaf_densities(tree, rule)
    p = R @ rule.weights
    V = R @ (rule.weights[:, None] * rule.nodes)
    return p, V


def branch_vector(tree: StrategyTree, x: History,
                  rule: QuadratureRule) -> BranchVector:
    """Exact V(x) for a single full-length outcome branch."""
    _require_degree(rule, tree.copies)
    if len(x) != tree.copies:
        raise ValidationError(
            f"history length {len(x)} != tree copies {tree.copies}")
    density = np.ones(rule.node_count)
    for k, bit in enumerate(x):
        dots = rule.nodes @ tree.direction(x[:k])
        density *= (1.0 + (1.0 - 2.0 * bit) * dots) / 2.0
    v = (rule.weights * density) @ rule.nodes
    return BranchVector(tuple(x), v, float(np.linalg.norm(v)))


def optimal_guess(v: BranchVector | np.ndarray) -> np.ndarray:
    """Normalized branch vector; canonical axis when the branch is degenerate."""
    vec = v.v if isinstance(v, BranchVector) else np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(vec))
    if norm < DEGENERATE_NORM:
        return np.array([1.0, 0.0, 0.0])
    return vec / norm


def _normalize_rows(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1)
    out = np.where(norms[:, None] > DEGENERATE_NORM,
                   V / np.maximum(norms, DEGENERATE_NORM)[:, None], 0.0)
    out[norms <= DEGENERATE_NORM] = np.array([1.0, 0.0, 0.0])
    return out


def central_limit_guess(counts: OutcomeCounts,
                        fixed: FixedStrategy) -> np.ndarray:
    """Normalized vector of per-axis outcome means 2*alpha_i - 1."""
    totals = fixed.counts
    if len(counts.counts) != len(totals) or any(
            not 0 <= a <= t for a, t in zip(counts.counts, totals)):
        raise ValidationError(f"counts {counts.counts} inconsistent with "
                              f"axis repetitions {totals}")
    r = np.zeros(3)
    for (axis, total), a in zip(fixed.axes, counts.counts):
        r += (2.0 * a / total - 1.0) * axis
    norm = float(np.linalg.norm(r))
    if norm < DEGENERATE_NORM:
        return np.array([1.0, 0.0, 0.0])
    return r / norm


def _tree_counts(tree: StrategyTree) -> np.ndarray:
    """Per-branch +1 counts per axis for a fixed-axis-derived tree."""
    if tree.axis_order is None:
        raise ValidationError(
            "count-based guess needs a tree with fixed-axis provenance")
    n_axes = max(tree.axis_order) + 1
    branches = 1 << tree.copies
    ids = np.arange(branches)
    counts = np.zeros((branches, n_axes), dtype=np.int64)
    for k, axis_idx in enumerate(tree.axis_order):
        counts[:, axis_idx] += 1 - ((ids >> k) & 1)
    return counts


def _tree_guesses(tree: StrategyTree, guess: GuessRule,
                  V: np.ndarray) -> np.ndarray:
    branches = 1 << tree.copies
    if guess.kind is GuessKind.OPTIMAL:
        return _normalize_rows(V)
    if guess.kind is GuessKind.CENTRAL_LIMIT:
        counts = _tree_counts(tree)
        totals = np.zeros(counts.shape[1], dtype=np.int64)
        for axis_idx in tree.axis_order:
            totals[axis_idx] += 1
        # Axis vectors: first occurrence of each axis index in the order.
        axis_vecs = np.zeros((counts.shape[1], 3))
        seen: set[int] = set()
        for k, axis_idx in enumerate(tree.axis_order):
            if axis_idx not in seen:
                axis_vecs[axis_idx] = tree.depth_tables()[k][0]
                seen.add(axis_idx)
        r = (2.0 * counts / totals - 1.0) @ axis_vecs
        return _normalize_rows(r)
    if guess.kind is GuessKind.FIXED:
        if guess.table is None:
            raise ValidationError("fixed guess rule carries no table")
        M = np.empty((branches, 3))
        for value in range(branches):
            h = tuple((value >> k) & 1 for k in range(tree.copies))
            if h not in guess.table:
                raise ValidationError(
                    f"fixed guess table misses branch "
                    f"{history_to_bitstring(h)!r}")
            M[value] = guess.table[h]
        return M
    raise ValidationError(f"unsupported guess rule {guess.kind}")


def fidelity_exact_tree(tree: StrategyTree, guess: GuessRule,
                        rule: QuadratureRule) -> FidelityReport:
    """Exact average fidelity of an adaptive tree under a guess rule."""
    p, V = branch_table(tree, rule)
    M = _tree_guesses(tree, guess, V)
    F = float(0.5 * (p.sum() + np.einsum("bc,bc->b", M, V).sum()))
    records = tuple(
        BranchRecord(
            history_to_bitstring(tuple((value >> k) & 1
                                       for k in range(tree.copies))),
            float(p[value]), float(np.linalg.norm(V[value])), M[value])
        for value in range(len(p)))
    return FidelityReport(F, tree.copies, tree.geometry, "exact-tree",
                          rule.exact_degree, records)


def _class_factor_matrices(fixed: FixedStrategy,
                           rule: QuadratureRule) -> list[np.ndarray]:
    """Per-axis binomial pmf matrices (count+1, Q) at the quadrature nodes."""
    mats = []
    for axis, total in fixed.axes:
        prob_plus = (1.0 + rule.nodes @ axis) / 2.0
        counts = np.arange(total + 1)
        mats.append(binom.pmf(counts[:, None], total, prob_plus[None, :]))
    return mats


def aggregated_table(fixed: FixedStrategy,
                     rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and branch vectors over all outcome count classes.

    Returns p with shape prod(count_i + 1) and V with trailing axis 3, both
    flattened in C order over the per-axis count indices.
    """
    _require_degree(rule, fixed.copies)
    n_classes = 1
    for count in fixed.counts:
        n_classes *= count + 1
    if n_classes * rule.node_count > MAX_AGGREGATED_WORK:
        raise ResourceLimitError(
            "count-class evaluation over budget",
            required=n_classes * rule.node_count,
            allowed=MAX_AGGREGATED_WORK)
    mats = _class_factor_matrices(fixed, rule)
    combined = mats[0]
    for mat in mats[1:]:
        combined = (combined[:, None, :] * mat[None, :, :]).reshape(
            -1, rule.node_count)
    p = combined @ rule.weights
    V = combined @ (rule.weights[:, None] * rule.nodes)
    return p, V


def _aggregated_guesses(fixed: FixedStrategy, guess: GuessRule,
                        V: np.ndarray) -> np.ndarray:
    shape = tuple(count + 1 for count in fixed.counts)
    if guess.kind is GuessKind.OPTIMAL:
        return _normalize_rows(V)
    if guess.kind is GuessKind.CENTRAL_LIMIT:
        grids = np.meshgrid(*[2.0 * np.arange(c + 1) / c - 1.0
                              for c in fixed.counts], indexing="ij")
        axis_mat = np.stack([axis for axis, _ in fixed.axes])
        r = np.stack([g.ravel() for g in grids], axis=1) @ axis_mat
        return _normalize_rows(r)
    if guess.kind is GuessKind.FIXED:
        if guess.table is None:
            raise ValidationError("fixed guess rule carries no table")
        M = np.empty((len(V), 3))
        for flat, combo in enumerate(np.ndindex(shape)):
            if combo not in guess.table:
                raise ValidationError(f"fixed guess table misses counts {combo}")
            M[flat] = guess.table[combo]
        return M
    raise ValidationError(f"unsupported guess rule {guess.kind}")


def fidelity_exact_aggregated(fixed: FixedStrategy, guess: GuessRule,
                              rule: QuadratureRule) -> FidelityReport:
    """Exact average fidelity of a fixed scheme via count classes."""
    p, V = aggregated_table(fixed, rule)
    M = _aggregated_guesses(fixed, guess, V)
    F = float(0.5 * (p.sum() + np.einsum("bc,bc->b", M, V).sum()))
    shape = tuple(count + 1 for count in fixed.counts)
    records = tuple(
        BranchRecord("-".join(str(a) for a in combo), float(p[flat]),
                     float(np.linalg.norm(V[flat])), M[flat])
        for flat, combo in enumerate(np.ndindex(shape)))
    return FidelityReport(F, fixed.copies, fixed.geometry, "exact-aggregated",
                          rule.exact_degree, records)


def fidelity_exact_two_stage(strategy: TwoStageStrategy,
                             rule: QuadratureRule) -> FidelityReport:
    """Exact average fidelity of a two-stage strategy (small N only).

    Enumerates pilot branches and second-stage count classes; feasible
    while 2^N0 * (per-axis classes) * (quadrature nodes) stays within the
    aggregated work budget.
    """
    _require_degree(rule, strategy.copies)
    pilot_branches = 1 << strategy.pilot_size
    nbar = strategy.second_stage_per_axis
    n_axes = 1 if strategy.geometry is Geometry.PLANAR else 2
    n_classes = (nbar + 1) ** n_axes
    work = pilot_branches * n_classes * rule.node_count
    if work > MAX_AGGREGATED_WORK:
        raise ResourceLimitError("two-stage exact evaluation over budget",
                                 required=work, allowed=MAX_AGGREGATED_WORK)
    R = leaf_densities(strategy.pilot, rule)
    pilot_V = R @ (rule.weights[:, None] * rule.nodes)
    counts_range = np.arange(nbar + 1)
    F = 0.0
    records = []
    for h in range(pilot_branches):
        m0 = optimal_guess(pilot_V[h])
        frame = transverse_frame(strategy.geometry, m0)
        pmfs = [binom.pmf(counts_range[:, None], nbar,
                          (1.0 + rule.nodes @ axis)[None, :] / 2.0)
                for axis in frame]
        combined = pmfs[0]
        for mat in pmfs[1:]:
            combined = (combined[:, None, :] * mat[None, :, :]).reshape(
                -1, rule.node_count)
        density = combined * R[h]
        p_cls = density @ rule.weights
        V_cls = density @ (rule.weights[:, None] * rule.nodes)
        shape = (nbar + 1,) * n_axes
        for flat, combo in enumerate(np.ndindex(shape)):
            guess_vec = two_stage_guess(strategy, m0, np.asarray(combo))
            F += 0.5 * (p_cls[flat] + float(guess_vec @ V_cls[flat]))
            records.append(BranchRecord(
                history_to_bitstring(tuple((h >> k) & 1
                                           for k in range(strategy.pilot_size)))
                + ":" + "-".join(str(a) for a in combo),
                float(p_cls[flat]), float(np.linalg.norm(V_cls[flat])),
                guess_vec))
    return FidelityReport(float(F), strategy.copies, strategy.geometry,
                          "exact-two-stage", rule.exact_degree,
                          tuple(records))


def n2_closed_form(theta_00: float, theta_01: float) -> float:
    """Two-copy fidelity when the second measurement after first outcome k
    sits at polar angle theta_0k from the root direction."""
    total = 0.0
    for theta in (theta_00, theta_01):
        total += abs(math.sin(theta / 2.0)) + abs(math.cos(theta / 2.0))
    return 0.5 * (1.0 + total / 6.0)
