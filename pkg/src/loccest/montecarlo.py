"""Stochastic fidelity estimation for strategies of any size.

Sampling uses the counter-based Philox generator.  Every sample consumes
a fixed number of uniforms (state draws plus one per measured copy) laid
out in per-sample rows, so estimates are bit-identical for a given
(seed, samples, strategy) regardless of the batch size used to stream
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimator import (
    GuessKind,
    GuessRule,
    aggregated_table,
    branch_table,
    _normalize_rows,
)
from .geometry import Geometry, QuadratureRule, make_quadrature
from .strategies import (
    FixedStrategy,
    StrategyTree,
    TwoStageStrategy,
    transverse_frames,
)

MIN_SAMPLES = 100
MAX_TRACE_SAMPLES = 10_000


@dataclass(frozen=True)
class McConfig:
    samples: int
    seed: int
    batch_size: int = 1 << 16

    def __post_init__(self):
        if self.samples < MIN_SAMPLES:
            raise ValidationError(f"need at least {MIN_SAMPLES} samples")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")


@dataclass(frozen=True)
class TraceRow:
    state: np.ndarray
    outcome: str
    guess: np.ndarray
    fidelity: float


@dataclass(frozen=True)
class McResult:
    mean: float
    stderr: float
    samples: int
    seed: int
    trace: tuple[TraceRow, ...] | None = None

    def to_json_obj(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr,
                "samples": self.samples, "seed": self.seed}


def sample_state(geometry: Geometry, rng: np.random.Generator) -> np.ndarray:
    """One state vector drawn from the uniform prior."""
    return _sample_states(geometry, rng.random((1, 2)))[0]


def _sample_states(geometry: Geometry, uniforms: np.ndarray) -> np.ndarray:
    """Map per-sample uniform columns to uniform sphere/circle points."""
    if geometry is Geometry.PLANAR:
        ang = 2.0 * np.pi * uniforms[:, 0]
        return np.stack([np.cos(ang), np.sin(ang), np.zeros(len(ang))], axis=1)
    z = 2.0 * uniforms[:, 0] - 1.0
    ang = 2.0 * np.pi * uniforms[:, 1]
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)


def _state_columns(geometry: Geometry) -> int:
    return 1 if geometry is Geometry.PLANAR else 2


def _walk_tree(tables: list[np.ndarray], states: np.ndarray,
               uniforms: np.ndarray) -> np.ndarray:
    """Sample outcome histories; column k decides measurement k+1."""
    h = np.zeros(len(states), dtype=np.int64)
    for k, table in enumerate(tables):
        m = table[h]
        p_plus = (1.0 + np.einsum("bc,bc->b", states, m)) / 2.0
        outcome = (uniforms[:, k] >= p_plus).astype(np.int64)
        h |= outcome << k
    return h


def _tree_guess_table(tree: StrategyTree, guess: GuessRule,
                      rule: QuadratureRule | None) -> np.ndarray:
    from .estimator import _tree_guesses  # shared guess semantics

    if rule is None:
        rule = make_quadrature(tree.geometry, tree.copies + 1)
    if guess.kind is GuessKind.OPTIMAL:
        _, V = branch_table(tree, rule)
        return _normalize_rows(V)
    return _tree_guesses(tree, guess, np.zeros((1 << tree.copies, 3)))


def _fixed_guess_table(fixed: FixedStrategy, guess: GuessRule,
                       rule: QuadratureRule | None) -> np.ndarray:
    from .estimator import _aggregated_guesses

    if guess.kind is GuessKind.OPTIMAL:
        if rule is None:
            rule = make_quadrature(fixed.geometry, fixed.copies + 1)
        _, V = aggregated_table(fixed, rule)
        return _normalize_rows(V)
    return _aggregated_guesses(fixed, guess,
                               np.zeros((math.prod(c + 1
                                                   for c in fixed.counts), 3)))


def simulate_fidelity(strategy, guess: GuessRule, cfg: McConfig,
                      rule: QuadratureRule | None = None,
                      trace: bool = False) -> McResult:
    """Monte Carlo average fidelity with a batch-mean standard error.

    Per sample: draw a state from the prior, walk the strategy drawing
    each outcome from its projector probability, form the guess, and
    score (1 + n . M)/2.
    """
    if trace and cfg.samples > MAX_TRACE_SAMPLES:
        raise ValidationError(
            f"trace mode is limited to {MAX_TRACE_SAMPLES} samples")
    if isinstance(strategy, StrategyTree):
        runner = _TreeRunner(strategy, guess, rule)
    elif isinstance(strategy, FixedStrategy):
        runner = _FixedRunner(strategy, guess, rule)
    elif isinstance(strategy, TwoStageStrategy):
        runner = _TwoStageRunner(strategy, guess, rule)
    else:
        raise ValidationError(f"cannot simulate {type(strategy).__name__}")
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    total = 0
    values = np.empty(cfg.samples)
    rows: list[TraceRow] = []
    columns = _state_columns(runner.geometry) + runner.copies
    while total < cfg.samples:
        batch = min(cfg.batch_size, cfg.samples - total)
        uniforms = rng.random((batch, columns))
        states = _sample_states(runner.geometry, uniforms)
        guesses, labels = runner.run(states, uniforms, trace)
        f = (1.0 + np.einsum("bc,bc->b", states, guesses)) / 2.0
        values[total:total + batch] = f
        if trace:
            rows.extend(TraceRow(states[i].copy(), labels[i],
                                 guesses[i].copy(), float(f[i]))
                        for i in range(batch))
        total += batch
    # One reduction over the assembled array: every sample consumes a fixed
    # row of uniforms, so the estimate is independent of batch_size.
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(total))
    return McResult(mean, stderr, total, cfg.seed,
                    tuple(rows) if trace else None)


class _TreeRunner:
    def __init__(self, tree: StrategyTree, guess: GuessRule,
                 rule: QuadratureRule | None):
        self.geometry = tree.geometry
        self.copies = tree.copies
        self.tables = tree.depth_tables()
        self.guesses = _tree_guess_table(tree, guess, rule)

    def run(self, states, uniforms, trace):
        offset = _state_columns(self.geometry)
        h = _walk_tree(self.tables, states, uniforms[:, offset:])
        labels = None
        if trace:
            labels = [format(value, f"0{self.copies}b") for value in h]
        return self.guesses[h], labels


class _FixedRunner:
    def __init__(self, fixed: FixedStrategy, guess: GuessRule,
                 rule: QuadratureRule | None):
        self.geometry = fixed.geometry
        self.copies = fixed.copies
        self.order = fixed.default_order()
        self.axis_vectors = np.stack([axis for axis, _ in fixed.axes])
        self.shape = tuple(count + 1 for count in fixed.counts)
        self.guesses = _fixed_guess_table(fixed, guess, rule)

    def run(self, states, uniforms, trace):
        offset = _state_columns(self.geometry)
        batch = len(states)
        counts = np.zeros((batch, len(self.shape)), dtype=np.int64)
        bits = []
        for k, axis_idx in enumerate(self.order):
            p_plus = (1.0 + states @ self.axis_vectors[axis_idx]) / 2.0
            outcome = (uniforms[:, offset + k] >= p_plus).astype(np.int64)
            counts[:, axis_idx] += 1 - outcome
            if trace:
                bits.append(outcome)
        flat = np.ravel_multi_index(counts.T, self.shape)
        labels = None
        if trace:
            outcome_mat = np.stack(bits, axis=1)
            labels = ["".join(str(b) for b in reversed(row))
                      for row in outcome_mat]
        return self.guesses[flat], labels


class _TwoStageRunner:
    def __init__(self, strategy: TwoStageStrategy, guess: GuessRule,
                 rule: QuadratureRule | None):
        if guess.kind is not GuessKind.OPTIMAL:
            raise ValidationError(
                "two-stage simulation defines its own final guess; the "
                "pilot guess rule must be OPTIMAL_GUESS")
        self.geometry = strategy.geometry
        self.copies = strategy.copies
        self.strategy = strategy
        self.pilot_tables = strategy.pilot.depth_tables()
        if rule is None:
            rule = make_quadrature(strategy.geometry,
                                   strategy.pilot_size + 1)
        _, V = branch_table(strategy.pilot, rule)
        self.pilot_guesses = _normalize_rows(V)

    def run(self, states, uniforms, trace):
        strategy = self.strategy
        offset = _state_columns(self.geometry)
        n0 = strategy.pilot_size
        nbar = strategy.second_stage_per_axis
        h = _walk_tree(self.pilot_tables, states, uniforms[:, offset:])
        m0 = self.pilot_guesses[h]
        frames = transverse_frames(self.geometry, m0)
        n_axes = frames.shape[1]
        r = np.empty((len(states), n_axes))
        for j in range(n_axes):
            p_plus = (1.0 + np.einsum("bc,bc->b", states, frames[:, j])) / 2.0
            cols = uniforms[:, offset + n0 + j * nbar:
                            offset + n0 + (j + 1) * nbar]
            plus = (cols < p_plus[:, None]).sum(axis=1)
            r[:, j] = 2.0 * plus / nbar - 1.0
        if self.geometry is Geometry.PLANAR:
            omega = strategy.lam * r[:, 0]
            tilt = frames[:, 0]
        else:
            omega = strategy.lam * np.hypot(r[:, 0], r[:, 1])
            tau = np.arctan2(r[:, 1], r[:, 0])
            tilt = (np.cos(tau)[:, None] * frames[:, 0]
                    + np.sin(tau)[:, None] * frames[:, 1])
        guesses = (np.cos(omega)[:, None] * m0
                   + np.sin(omega)[:, None] * tilt)
        labels = None
        if trace:
            labels = [format(value, f"0{n0}b") + ":" +
                      "-".join(str(int(round((r[i, j] + 1) * nbar / 2)))
                               for j in range(n_axes))
                      for i, value in enumerate(h)]
        return guesses, labels
