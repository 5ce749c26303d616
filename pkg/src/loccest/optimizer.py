"""Fidelity maximization over measurement-strategy parameters.

The exact objective (1 + sum_x |V(x)|) / 2 decomposes branch-locally:
every outcome branch passes through exactly one node per depth, so for a
fixed depth the sum splits into disjoint per-node terms.  Holding the
rest of the tree fixed, the term owned by one node is

    g(m) = sum_j |u_j + s_j W_j m|,

with one (u_j, W_j, s_j) triple per branch through the node: u and W are
first and second moment integrals of the product of the other factors
along that branch, s is the outcome sign at the node.  Since
|v| = max_{|e|=1} e.v, alternating the two exact maximizations

    e_j <- normalize(u_j + s_j W_j m),   m <- normalize(sum_j s_j W_j e_j)

increases g monotonically, giving a cheap node solver; deepest-first
sweeps over whole depth levels then form a monotone coordinate ascent.
Plain ascent stalls on saddle configurations (the one-step-adaptive tree
is one), so each restart runs a short basin-hopping schedule: perturb
every direction, re-ascend, keep the better basin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import minimize

from .errors import ResourceLimitError, ValidationError
from .estimator import GuessKind, GuessRule, OPTIMAL_GUESS, fidelity_exact_tree
from .geometry import Geometry, QuadratureRule, make_quadrature
from .strategies import StrategyTree, history_from_int, random_tree

DEFAULT_SEED = 123456789
MAX_OPTIMIZE_COPIES = 8
# The greedy construction is level-batched and cheap, so it extends to the
# depths tree storage itself allows; it also builds two-stage pilots.
MAX_GREEDY_COPIES = 16
DEFAULT_TABLE_BUDGET = 6

REFERENCE_N4_ANGLES = (0.502, 0.584, 0.538)


class Gauge(Enum):
    FIX_ROOT = "fix-root"
    FREE = "free"


@dataclass(frozen=True)
class OptimizationConfig:
    max_iterations: int = 400          # ascent sweeps per basin
    f_tolerance: float = 1e-10
    restarts: int = 8
    seed: int = DEFAULT_SEED
    gauge: Gauge = Gauge.FIX_ROOT
    hop_sigmas: tuple[float, ...] = (0.5, 0.3, 0.15, 0.05)
    inner_starts: int = 2              # random extra starts per node solve

    def __post_init__(self):
        if self.f_tolerance <= 0:
            raise ValidationError("f_tolerance must be positive")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


@dataclass(frozen=True)
class OptimizationResult:
    strategy: StrategyTree
    F: float
    iterations: int
    best_restart: int
    converged: bool


# ---------------------------------------------------------------------------
# internal representation: one writable (2^k, 3) direction array per depth

def _dirs_from_tree(tree: StrategyTree) -> list[np.ndarray]:
    return [table.copy() for table in tree.depth_tables()]


def _tree_from_dirs(geometry: Geometry, dirs: list[np.ndarray]) -> StrategyTree:
    directions = {}
    for depth, table in enumerate(dirs):
        table = table.copy()
        if geometry is Geometry.PLANAR:
            table[:, 2] = 0.0
        table /= np.linalg.norm(table, axis=1)[:, None]
        for value in range(1 << depth):
            directions[history_from_int(value, depth)] = table[value]
    return StrategyTree(geometry, len(dirs), directions)


def _leaf_products(dirs: list[np.ndarray], rule: QuadratureRule) -> np.ndarray:
    R = np.ones((1, rule.node_count))
    for table in dirs:
        dots = table @ rule.nodes.T
        R = np.concatenate([R * (1.0 + dots) / 2.0,
                            R * (1.0 - dots) / 2.0], axis=0)
    return R


def _fidelity(dirs: list[np.ndarray], rule: QuadratureRule) -> float:
    R = _leaf_products(dirs, rule)
    V = R @ (rule.weights[:, None] * rule.nodes)
    return 0.5 * (1.0 + float(np.linalg.norm(V, axis=1).sum()))


def _project_inplane(m: np.ndarray, planar: bool) -> np.ndarray:
    if planar:
        m = m.copy()
        m[..., 2] = 0.0
    return m


def _node_ascent(u: np.ndarray, W: np.ndarray, s: np.ndarray, m: np.ndarray,
                 planar: bool, iters: int = 90) -> tuple[np.ndarray, np.ndarray]:
    """Run the alternating maximization for a whole level.

    u: (H, P, 3); W: (H, P, 3, 3); s: (P,); m: (H, 3) start directions.
    Returns the improved directions and their objective values.
    """
    for _ in range(iters):
        v = u + s[None, :, None] * np.einsum("hpab,hb->hpa", W, m)
        norms = np.linalg.norm(v, axis=2)
        vh = v / np.maximum(norms, 1e-300)[:, :, None]
        step = np.einsum("hpab,hpa->hb", W, vh * s[None, :, None])
        step = _project_inplane(step, planar)
        lens = np.linalg.norm(step, axis=1)
        fresh = step / np.maximum(lens, 1e-300)[:, None]
        new_m = np.where(lens[:, None] > 1e-14, fresh, m)
        done = np.abs(new_m - m).max() < 1e-14
        m = new_m
        if done:
            break
    v = u + s[None, :, None] * np.einsum("hpab,hb->hpa", W, m)
    return m, np.linalg.norm(v, axis=2).sum(axis=1)


def _solve_level(u: np.ndarray, W: np.ndarray, s: np.ndarray,
                 current: np.ndarray, planar: bool,
                 rng: np.random.Generator, extra_starts: int) -> np.ndarray:
    """Per-node best over the current direction plus spread-out starts.

    With extra_starts < 0 only the current direction seeds the solve;
    basin selection happens in the first sweeps after a (re)start, later
    sweeps just polish.
    """
    H = current.shape[0]
    starts = [current.copy()]
    if extra_starts >= 0:
        for axis in np.eye(3)[: 2 if planar else 3]:
            starts.append(np.tile(axis, (H, 1)))
        for _ in range(extra_starts):
            cand = _project_inplane(rng.normal(size=(H, 3)), planar)
            starts.append(cand / np.linalg.norm(cand, axis=1)[:, None])
    best_m = best_g = None
    for start in starts:
        m, g = _node_ascent(u, W, s, start, planar)
        if best_g is None:
            best_m, best_g = m, g
        else:
            better = g > best_g + 1e-15
            best_m = np.where(better[:, None], m, best_m)
            best_g = np.where(better, g, best_g)
    return best_m


def _sweep(dirs: list[np.ndarray], rule: QuadratureRule, planar: bool,
           fix_root: bool, rng: np.random.Generator,
           extra_starts: int) -> float:
    """One deepest-first sweep updating whole depth levels at a time.

    Nodes at equal depth own disjoint branch sets, so a simultaneous
    level update is still exact coordinate ascent.  Returns the updated
    tree's fidelity (the suffix products finish as full branch densities,
    so it comes free).
    """
    N = len(dirs)
    leaves = 1 << N
    nodes, w = rule.nodes, rule.weights
    # Compact prefix products per depth; rows keyed by the low history bits.
    prefix = [np.ones((1, rule.node_count))]
    for table in dirs[:-1]:
        dots = table @ nodes.T
        prev = prefix[-1]
        prefix.append(np.concatenate([prev * (1.0 + dots) / 2.0,
                                      prev * (1.0 - dots) / 2.0], axis=0))
    suffix = np.ones((leaves, rule.node_count))  # product over depths > d
    leaf_ids = np.arange(leaves)
    for depth in range(N - 1, -1, -1):
        if not (depth == 0 and fix_root):
            scaled = (suffix
                      * np.tile(prefix[depth], (leaves >> depth, 1))
                      * (0.5 * w))
            u = scaled @ nodes
            W = np.einsum("xq,qa,qb->xab", scaled, nodes, nodes)
            # Leaf index x = rest*2^(d+1) + i*2^d + h: regroup to per-node
            # term stacks ordered (rest, i).
            u = np.moveaxis(u.reshape(-1, 2, 1 << depth, 3), 2, 0)
            W = np.moveaxis(W.reshape(-1, 2, 1 << depth, 3, 3), 2, 0)
            u = u.reshape(1 << depth, -1, 3)
            W = W.reshape(1 << depth, -1, 3, 3)
            signs = np.tile(np.array([1.0, -1.0]), leaves >> (depth + 1))
            dirs[depth] = _solve_level(u, W, signs, dirs[depth], planar,
                                       rng, extra_starts)
        dots = np.tile(dirs[depth] @ nodes.T, (leaves >> depth, 1))
        signs_leaf = 1.0 - 2.0 * ((leaf_ids >> depth) & 1)
        suffix *= (1.0 + signs_leaf[:, None] * dots) / 2.0
    V = suffix @ (w[:, None] * nodes)
    return 0.5 * (1.0 + float(np.linalg.norm(V, axis=1).sum()))


SPREAD_SWEEPS = 2


def _ascend(dirs: list[np.ndarray], rule: QuadratureRule, planar: bool,
            fix_root: bool, rng: np.random.Generator,
            cfg: OptimizationConfig) -> tuple[float, int, bool]:
    F = _fidelity(dirs, rule)
    for sweep in range(1, cfg.max_iterations + 1):
        extra = cfg.inner_starts if sweep <= SPREAD_SWEEPS else -1
        F_new = _sweep(dirs, rule, planar, fix_root, rng, extra)
        if F_new - F < cfg.f_tolerance:
            return max(F, F_new), sweep, True
        F = F_new
    return F, cfg.max_iterations, False


def _perturb(dirs: list[np.ndarray], rng: np.random.Generator, sigma: float,
             planar: bool, fix_root: bool) -> list[np.ndarray]:
    out = []
    for depth, table in enumerate(dirs):
        cand = table + sigma * rng.normal(size=table.shape)
        cand = _project_inplane(cand, planar)
        cand /= np.linalg.norm(cand, axis=1)[:, None]
        if depth == 0 and fix_root:
            cand = table.copy()
        out.append(cand)
    return out


def _root_axis(geometry: Geometry) -> np.ndarray:
    if geometry is Geometry.PLANAR:
        return np.array([1.0, 0.0, 0.0])
    return np.array([0.0, 0.0, 1.0])


def _start_dirs(geometry: Geometry, copies: int, restart: int,
                rng: np.random.Generator, rule: QuadratureRule,
                fix_root: bool) -> list[np.ndarray]:
    if restart == 0:
        dirs = _greedy_dirs(geometry, copies, rule, rng)
    else:
        dirs = _dirs_from_tree(random_tree(geometry, copies, rng))
    if fix_root:
        dirs[0] = _root_axis(geometry)[None, :].copy()
    return dirs


def _run_chain(geometry: Geometry, copies: int, rule: QuadratureRule,
               cfg: OptimizationConfig, restart: int,
               rng: np.random.Generator):
    planar = geometry is Geometry.PLANAR
    fix_root = cfg.gauge is Gauge.FIX_ROOT
    dirs = _start_dirs(geometry, copies, restart, rng, rule, fix_root)
    F, sweeps, converged = _ascend(dirs, rule, planar, fix_root, rng, cfg)
    total = sweeps
    for sigma in cfg.hop_sigmas:
        cand = _perturb(dirs, rng, sigma, planar, fix_root)
        F_c, sweeps_c, conv_c = _ascend(cand, rule, planar, fix_root, rng, cfg)
        total += sweeps_c
        if F_c > F:
            F, dirs, converged = F_c, cand, conv_c
    return F, dirs, total, converged


def _fix_gauge(geometry: Geometry, dirs: list[np.ndarray]) -> list[np.ndarray]:
    """Rotate about the root so the first 0-branch vector has azimuth 0."""
    if geometry is Geometry.PLANAR or len(dirs) < 2:
        return dirs
    x, y = dirs[1][0][0], dirs[1][0][1]
    if math.hypot(x, y) < 1e-9:
        return dirs
    phi = math.atan2(y, x)
    c, s = math.cos(-phi), math.sin(-phi)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return [table @ rot.T for table in dirs]


def optimize_tree(geometry: Geometry, copies: int,
                  guess: GuessRule = OPTIMAL_GUESS,
                  cfg: OptimizationConfig = OptimizationConfig(),
                  rule: QuadratureRule | None = None) -> OptimizationResult:
    """Maximize the average fidelity over all tree directions.

    Multi-restart basin hopping: restart 0 starts from the one-step
    adaptive tree, the rest from random trees; every restart perturbs and
    re-ascends a few times.  Deterministic given (seed, restarts).
    """
    if guess.kind is not GuessKind.OPTIMAL:
        raise ValidationError(
            "tree optimization maximizes over the guess as well, which is "
            "the optimal-guess rule; pass OPTIMAL_GUESS")
    if copies > MAX_OPTIMIZE_COPIES:
        raise ResourceLimitError("tree optimization over budget",
                                 required=copies, allowed=MAX_OPTIMIZE_COPIES)
    if rule is None:
        rule = make_quadrature(geometry, copies + 1)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    for restart in range(cfg.restarts):
        rng = np.random.Generator(np.random.PCG64(streams[restart]))
        F, dirs, sweeps, converged = _run_chain(geometry, copies, rule, cfg,
                                                restart, rng)
        if best is None or F > best[0] + 1e-15:
            best = (F, dirs, sweeps, converged, restart)
    F, dirs, sweeps, converged, restart = best
    strategy = _tree_from_dirs(geometry, _fix_gauge(geometry, dirs))
    report = fidelity_exact_tree(strategy, OPTIMAL_GUESS, rule)
    return OptimizationResult(strategy, report.F, sweeps, restart, converged)


# ---------------------------------------------------------------------------
# one-step adaptive (greedy) construction

def _greedy_dirs(geometry: Geometry, copies: int, rule: QuadratureRule,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Each level maximizes the fidelity of stopping after that measurement."""
    planar = geometry is Geometry.PLANAR
    nodes, w = rule.nodes, rule.weights
    dirs: list[np.ndarray] = []
    R = np.ones((1, rule.node_count))
    for depth in range(copies):
        scaled = R * (0.5 * w)
        u1 = scaled @ nodes
        W1 = np.einsum("hq,qa,qb->hab", scaled, nodes, nodes)
        u = np.stack([u1, u1], axis=1)
        W = np.stack([W1, W1], axis=1)
        signs = np.array([1.0, -1.0])
        if depth == 0:
            best = _root_axis(geometry)[None, :].copy()
        else:
            current = np.tile(_root_axis(geometry), ((1 << depth), 1))
            best = _solve_level(u, W, signs, current, planar, rng,
                                extra_starts=2)
        dirs.append(best)
        dots = best @ nodes.T
        R = np.concatenate([R * (1.0 + dots) / 2.0,
                            R * (1.0 - dots) / 2.0], axis=0)
    return dirs


def optimize_one_step_adaptive(
        geometry: Geometry, copies: int,
        cfg: OptimizationConfig = OptimizationConfig(),
        rule: QuadratureRule | None = None) -> OptimizationResult:
    """Greedy scheme: each measurement is optimal as if it were the last."""
    if copies > MAX_GREEDY_COPIES:
        raise ResourceLimitError("greedy construction over budget",
                                 required=copies, allowed=MAX_GREEDY_COPIES)
    if rule is None:
        rule = make_quadrature(geometry, copies + 1)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    dirs = _greedy_dirs(geometry, copies, rule, rng)
    strategy = _tree_from_dirs(geometry, _fix_gauge(geometry, dirs))
    report = fidelity_exact_tree(strategy, OPTIMAL_GUESS, rule)
    return OptimizationResult(strategy, report.F, copies, 0, True)


def optimal_fidelity_table(
        geometry: Geometry, n_max: int,
        cfg: OptimizationConfig = OptimizationConfig(),
        budget: int = DEFAULT_TABLE_BUDGET) -> list[tuple[int, float]]:
    """Optimized fidelity for each copy count 1..n_max."""
    if n_max > budget:
        raise ResourceLimitError("fidelity table over budget",
                                 required=n_max, allowed=budget)
    table = []
    for copies in range(1, n_max + 1):
        result = optimize_tree(geometry, copies, OPTIMAL_GUESS, cfg)
        table.append((copies, result.F))
    return table


# ---------------------------------------------------------------------------
# four-copy ansatz: frames built from the two-copy optimal guess

def n4_ansatz_tree(alpha: float, beta: float, gamma: float) -> StrategyTree:
    """Four-copy tree with first measurements e1, e2 and framed deeper steps.

    Per branch, with signed vectors m1 = (-1)^{i1} e1, m2 = (-1)^{i2} e2
    and the running guess s = (m1 + m2)/sqrt(2): the third direction is
    cos(alpha) u1 + sin(alpha) v1 with u1 = m1 x m2, v1 = u1 x s (so it
    probes the plane orthogonal to s for any alpha); the fourth is
    cos(gamma) u2 + sin(gamma) v2 with u2 = s x m3s, v2 = cos(beta) m3s -
    sin(beta) s, where m3s is the signed third vector.
    """
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    directions: dict[tuple[int, ...], np.ndarray] = {(): e1.copy()}
    for i1 in (0, 1):
        directions[(i1,)] = e2.copy()
        m1 = (1 - 2 * i1) * e1
        for i2 in (0, 1):
            m2 = (1 - 2 * i2) * e2
            s = (m1 + m2) / math.sqrt(2.0)
            u1 = np.cross(m1, m2)
            v1 = np.cross(u1, s)
            m3 = math.cos(alpha) * u1 + math.sin(alpha) * v1
            directions[(i1, i2)] = m3
            for i3 in (0, 1):
                m3s = (1 - 2 * i3) * m3
                u2 = np.cross(s, m3s)
                v2 = math.cos(beta) * m3s - math.sin(beta) * s
                directions[(i1, i2, i3)] = (math.cos(gamma) * u2
                                            + math.sin(gamma) * v2)
    return StrategyTree(Geometry.FULL, 4, directions)


def n4_ansatz_fidelity(alpha: float, beta: float, gamma: float,
                       rule: QuadratureRule | None = None) -> float:
    if rule is None:
        rule = make_quadrature(Geometry.FULL, 5)
    tree = n4_ansatz_tree(alpha, beta, gamma)
    return fidelity_exact_tree(tree, OPTIMAL_GUESS, rule).F


def optimize_n4_ansatz(rule: QuadratureRule | None = None,
                       starts: tuple[tuple[float, float, float], ...] = (
                           (0.5, 0.6, 0.5), (0.3, 0.3, 0.3), (1.0, 0.8, 1.0)),
                       ) -> tuple[np.ndarray, float]:
    """Maximize the ansatz fidelity over its three angles."""
    if rule is None:
        rule = make_quadrature(Geometry.FULL, 5)
    best_angles, best_F = None, -1.0
    for start in starts:
        res = minimize(
            lambda t: -n4_ansatz_fidelity(t[0], t[1], t[2], rule),
            np.asarray(start, dtype=float), method="Nelder-Mead",
            options=dict(xatol=1e-9, fatol=1e-13, maxiter=3000))
        if -res.fun > best_F:
            best_F, best_angles = -res.fun, res.x
    return best_angles, best_F


def n4_angle_orbit(angles: tuple[float, float, float]) -> list[np.ndarray]:
    """Equivalent angle triples under the ansatz frame symmetries.

    Outcome relabelings act as: third-outcome flip (alpha + pi), fourth-
    outcome flip (gamma + pi), frame flip (beta + pi, gamma -> -gamma),
    and the joint first/second relabeling (-alpha, -beta, pi - gamma).
    """
    def wrap(t):
        return tuple((a + math.pi) % (2.0 * math.pi) - math.pi for a in t)

    generators = [
        lambda t: (t[0] + math.pi, t[1], t[2]),
        lambda t: (t[0], t[1], t[2] + math.pi),
        lambda t: (t[0], t[1] + math.pi, -t[2]),
        lambda t: (-t[0], -t[1], math.pi - t[2]),
    ]
    seen = {wrap(tuple(angles))}
    frontier = list(seen)
    while frontier:
        current = frontier.pop()
        for gen in generators:
            image = wrap(gen(current))
            if image not in seen:
                seen.add(image)
                frontier.append(image)
    return [np.array(t) for t in sorted(seen)]
