"""Measurement-strategy representations.

An adaptive strategy over N copies is a complete binary decision tree:
the direction of measurement k depends on the history of the first k-1
binary outcomes.  Histories are tuples (i_1, ..., i_k) in chronological
order; outcome i=0 means projection onto the +m eigenspace and i=1 onto
-m.  The sign of the outcome enters the probability factor, never the
stored vector, so the antisymmetry between the two outcome branches of
one measurement holds by construction.

The canonical integer encoding of a history takes i_1 as the least
significant bit; the bitstring form is written latest-outcome-first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ResourceLimitError, ValidationError
from .geometry import Geometry, validate_bloch_vector

History = tuple[int, ...]

# Complete trees get unwieldy past this depth (2^N - 1 stored vectors).
MAX_TREE_COPIES = 16


def history_to_int(history: History) -> int:
    """Canonical integer encoding: i_1 is the least significant bit."""
    value = 0
    for k, bit in enumerate(history):
        value |= (bit & 1) << k
    return value


def history_from_int(value: int, length: int) -> History:
    return tuple((value >> k) & 1 for k in range(length))


def history_to_bitstring(history: History) -> str:
    """Bitstring i_k...i_1 with the most recent outcome first."""
    return "".join(str(b) for b in reversed(history))


def history_from_bitstring(text: str) -> History:
    if not all(c in "01" for c in text):
        raise ValidationError(f"history bitstring must be binary, got {text!r}")
    return tuple(int(c) for c in reversed(text))


@dataclass(frozen=True)
class StrategyTree:
    """Adaptive measurement directions indexed by outcome history.

    ``directions`` maps each history of length k-1 (k = 1..N) to the unit
    vector used for the k-th measurement after that history, so a complete
    tree stores 2^N - 1 vectors.  ``axis_order``, when present, records
    that the tree came from a fixed-axis scheme (entry k = axis index of
    measurement k+1), which lets count-based guess rules recover per-axis
    outcome counts from a branch.
    """

    geometry: Geometry
    copies: int
    directions: dict[History, np.ndarray]
    axis_order: tuple[int, ...] | None = None
    _tables: list[np.ndarray] = field(default_factory=list, repr=False,
                                      compare=False)

    def __post_init__(self):
        if self.copies < 1:
            raise ValidationError("a strategy needs at least one copy")
        if self.copies > MAX_TREE_COPIES:
            raise ResourceLimitError("strategy tree too deep",
                                     required=self.copies,
                                     allowed=MAX_TREE_COPIES)
        for depth in range(self.copies):
            for value in range(1 << depth):
                h = history_from_int(value, depth)
                if h not in self.directions:
                    raise ValidationError(
                        f"missing direction for history {history_to_bitstring(h)!r}"
                        f" (depth {depth})")
        for h, v in self.directions.items():
            if len(h) >= self.copies:
                raise ValidationError(
                    f"history {history_to_bitstring(h)!r} too long for "
                    f"{self.copies} copies")
            self.directions[h] = validate_bloch_vector(self.geometry, v)

    def direction(self, history: History) -> np.ndarray:
        """Direction of measurement len(history)+1 after the given history."""
        return self.directions[tuple(history)]

    def depth_tables(self) -> list[np.ndarray]:
        """Per-depth arrays (2^k, 3) indexed by integer-encoded history."""
        if not self._tables:
            for depth in range(self.copies):
                table = np.empty((1 << depth, 3))
                for value in range(1 << depth):
                    table[value] = self.directions[history_from_int(value, depth)]
                table.setflags(write=False)
                self._tables.append(table)
        return self._tables

    def rotated(self, rotation: np.ndarray) -> "StrategyTree":
        """Apply one global rotation to every stored direction."""
        new = {h: rotation @ v for h, v in self.directions.items()}
        return StrategyTree(self.geometry, self.copies, new, self.axis_order)

    def to_json(self) -> str:
        nodes = [
            {"history": history_to_bitstring(h),
             "direction": [float(x) for x in self.directions[h]]}
            for h in sorted(self.directions, key=lambda h: (len(h),
                                                            history_to_int(h)))
        ]
        doc = {"geometry": self.geometry.value, "N": self.copies,
               "nodes": nodes}
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StrategyTree":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"strategy JSON parse error at line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}") from exc
        for key in ("geometry", "N", "nodes"):
            if key not in doc:
                raise ValidationError(f"strategy JSON missing field {key!r}")
        geometry = Geometry.parse(doc["geometry"])
        copies = doc["N"]
        if not isinstance(copies, int):
            raise ValidationError("field 'N' must be an integer")
        directions: dict[History, np.ndarray] = {}
        for idx, node in enumerate(doc["nodes"]):
            if "history" not in node or "direction" not in node:
                raise ValidationError(
                    f"nodes[{idx}] must carry 'history' and 'direction'")
            h = history_from_bitstring(node["history"])
            v = np.asarray(node["direction"], dtype=float)
            if v.shape != (3,):
                raise ValidationError(
                    f"nodes[{idx}].direction must have 3 components")
            directions[h] = v
        return cls(geometry, copies, directions)


@dataclass(frozen=True)
class FixedStrategy:
    """Fixed repeated-axis scheme: measure each axis a set number of times."""

    geometry: Geometry
    axes: tuple[tuple[np.ndarray, int], ...]

    def __post_init__(self):
        checked = []
        for axis, count in self.axes:
            if count < 1:
                raise ValidationError("axis repetition count must be >= 1")
            checked.append((validate_bloch_vector(self.geometry, axis), count))
        object.__setattr__(self, "axes", tuple(checked))

    @property
    def copies(self) -> int:
        return sum(count for _, count in self.axes)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(count for _, count in self.axes)

    def default_order(self) -> tuple[int, ...]:
        """Axis index per measurement step: axis 0 block, axis 1 block, ..."""
        order: list[int] = []
        for idx, (_, count) in enumerate(self.axes):
            order.extend([idx] * count)
        return tuple(order)


@dataclass(frozen=True)
class OutcomeCounts:
    """Counts of +1 outcomes per axis with the collapsed-string multiplicity."""

    counts: tuple[int, ...]
    multiplicity: int


def make_fixed_axes(geometry: Geometry, per_axis: int) -> FixedStrategy:
    """Canonical axes e1, e2 (planar) or e1, e2, e3, each measured per_axis times."""
    if per_axis < 1:
        raise ValidationError("per_axis must be >= 1")
    axes = tuple((axis.copy(), per_axis) for axis in geometry.axes)
    return FixedStrategy(geometry, axes)


def enumerate_count_classes(fixed: FixedStrategy) -> list[OutcomeCounts]:
    """All count classes, with multiplicity = product of binomials."""
    ranges = [range(count + 1) for count in fixed.counts]
    classes = []
    for combo in product(*ranges):
        mult = 1
        for a, total in zip(combo, fixed.counts):
            mult *= math.comb(total, a)
        classes.append(OutcomeCounts(tuple(combo), mult))
    return classes


def tree_from_fixed(fixed: FixedStrategy,
                    order: tuple[int, ...] | None = None) -> StrategyTree:
    """Expand a fixed scheme into a history-independent strategy tree."""
    if order is None:
        order = fixed.default_order()
    order = tuple(order)
    if len(order) != fixed.copies:
        raise ValidationError(
            f"order length {len(order)} != total copies {fixed.copies}")
    used = [0] * len(fixed.axes)
    for idx in order:
        if not 0 <= idx < len(fixed.axes):
            raise ValidationError(f"axis index {idx} out of range")
        used[idx] += 1
    if used != list(fixed.counts):
        raise ValidationError(
            f"order uses axes {tuple(used)}, expected {fixed.counts}")
    if fixed.copies > MAX_TREE_COPIES:
        raise ResourceLimitError("fixed-strategy expansion too deep",
                                 required=fixed.copies, allowed=MAX_TREE_COPIES)
    directions: dict[History, np.ndarray] = {}
    for depth in range(fixed.copies):
        axis = fixed.axes[order[depth]][0]
        for value in range(1 << depth):
            directions[history_from_int(value, depth)] = axis.copy()
    return StrategyTree(fixed.geometry, fixed.copies, directions,
                        axis_order=order)


@dataclass(frozen=True)
class TwoStageStrategy:
    """Pilot estimate followed by transverse refinement.

    Executing the strategy runs the pilot tree, forms the pilot's best
    guess M0, then measures the transverse directions: in full geometry
    two axes u, v completing an orthonormal frame with M0, each measured
    (N - N0)/2 times; in planar geometry the single in-plane orthogonal
    axis u takes all N - N0 copies.  The final guess tilts M0 by
    omega = lam * sqrt(ru^2 + rv^2) toward atan2(rv, ru) in the (u, v)
    plane, where ri = 2*alpha_i - 1 are the observed outcome means
    (planar: omega = lam * ru, signed).
    """

    geometry: Geometry
    copies: int
    pilot_size: int
    pilot: StrategyTree
    lam: float

    def __post_init__(self):
        if not 1 <= self.pilot_size < self.copies:
            raise ValidationError("need 1 <= pilot_size < copies")
        if self.pilot.copies != self.pilot_size:
            raise ValidationError(
                f"pilot tree has {self.pilot.copies} copies, expected "
                f"{self.pilot_size}")
        if self.pilot.geometry is not self.geometry:
            raise ValidationError("pilot geometry mismatch")
        if (self.copies - self.pilot_size) % 2 != 0:
            raise ValidationError("remaining copies N - N0 must be even")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError("lambda must lie in [0, 1]")

    @property
    def second_stage_per_axis(self) -> int:
        if self.geometry is Geometry.PLANAR:
            return self.copies - self.pilot_size
        return (self.copies - self.pilot_size) // 2


def make_two_stage(geometry: Geometry, copies: int, pilot_size: int,
                   lam: float, pilot: StrategyTree) -> TwoStageStrategy:
    return TwoStageStrategy(geometry, copies, pilot_size, pilot, lam)


def transverse_frames(geometry: Geometry, m0: np.ndarray) -> np.ndarray:
    """Deterministic exploration axes orthogonal to pilot guesses (batched).

    Input (B, 3); returns (B, 1, 3) for planar (u = z x m0) or (B, 2, 3)
    for the full sphere, where (u, v, m0) is a right-handed frame.
    """
    m0 = np.asarray(m0, dtype=float)
    if geometry is Geometry.PLANAR:
        u = np.stack([-m0[:, 1], m0[:, 0], np.zeros(len(m0))], axis=1)
        u /= np.linalg.norm(u, axis=1)[:, None]
        return u[:, None, :]
    e3 = np.array([0.0, 0.0, 1.0])
    e1 = np.array([1.0, 0.0, 0.0])
    helper = np.where(np.abs(m0[:, 2:3]) < 0.9, e3[None, :], e1[None, :])
    u = np.cross(m0, helper)
    u /= np.linalg.norm(u, axis=1)[:, None]
    v = np.cross(m0, u)
    return np.stack([u, v], axis=1)


def transverse_frame(geometry: Geometry, m0: np.ndarray) -> np.ndarray:
    """Single-vector convenience wrapper around :func:`transverse_frames`."""
    return transverse_frames(geometry, np.asarray(m0, dtype=float)[None, :])[0]


def two_stage_guess(strategy: TwoStageStrategy, m0: np.ndarray,
                    plus_counts: np.ndarray) -> np.ndarray:
    """Final guess from the pilot guess and second-stage +1 counts."""
    nbar = strategy.second_stage_per_axis
    frame = transverse_frame(strategy.geometry, m0)
    r = 2.0 * np.asarray(plus_counts, dtype=float) / nbar - 1.0
    if strategy.geometry is Geometry.PLANAR:
        omega = strategy.lam * r[0]
        return math.cos(omega) * m0 + math.sin(omega) * frame[0]
    omega = strategy.lam * math.hypot(r[0], r[1])
    tau = math.atan2(r[1], r[0])
    tilt = math.cos(tau) * frame[0] + math.sin(tau) * frame[1]
    return math.cos(omega) * m0 + math.sin(omega) * tilt


def random_tree(geometry: Geometry, copies: int,
                rng: np.random.Generator) -> StrategyTree:
    """Tree with independent uniformly random directions at every node."""
    directions: dict[History, np.ndarray] = {}
    for depth in range(copies):
        for value in range(1 << depth):
            if geometry is Geometry.PLANAR:
                ang = rng.uniform(0.0, 2.0 * np.pi)
                v = np.array([np.cos(ang), np.sin(ang), 0.0])
            else:
                z = rng.uniform(-1.0, 1.0)
                ang = rng.uniform(0.0, 2.0 * np.pi)
                r = np.sqrt(1.0 - z * z)
                v = np.array([r * np.cos(ang), r * np.sin(ang), z])
            directions[history_from_int(value, depth)] = v
    return StrategyTree(geometry, copies, directions)
