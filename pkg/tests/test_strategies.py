"""Strategy representations, count classes, and serialization."""

import json

import numpy as np
import pytest

from loccest import (
    Geometry,
    ResourceLimitError,
    StrategyTree,
    ValidationError,
    enumerate_count_classes,
    history_from_bitstring,
    history_from_int,
    history_to_bitstring,
    history_to_int,
    make_fixed_axes,
    make_quadrature,
    make_two_stage,
    random_tree,
    transverse_frame,
    tree_from_fixed,
)
from loccest.estimator import OPTIMAL_GUESS, fidelity_exact_tree, leaf_densities

from conftest import random_rotation


def test_history_encodings():
    h = (1, 0, 1)  # i1=1, i2=0, i3=1
    assert history_to_int(h) == 0b101
    assert history_from_int(5, 3) == h
    assert history_to_bitstring(h) == "101"
    assert history_from_bitstring("101") == h
    with pytest.raises(ValidationError):
        history_from_bitstring("10x")


def test_make_fixed_axes():
    planar = make_fixed_axes(Geometry.PLANAR, 1)
    assert planar.copies == 2
    assert [tuple(axis) for axis, _ in planar.axes] == [(1, 0, 0), (0, 1, 0)]
    full = make_fixed_axes(Geometry.FULL, 2)
    assert full.copies == 6
    assert full.counts == (2, 2, 2)
    # The planar scheme always uses two axes: N = 2 * per_axis.
    for per_axis in (1, 3, 7):
        assert make_fixed_axes(Geometry.PLANAR, per_axis).copies == 2 * per_axis
    with pytest.raises(ValidationError):
        make_fixed_axes(Geometry.FULL, 0)


def test_enumerate_count_classes():
    planar1 = enumerate_count_classes(make_fixed_axes(Geometry.PLANAR, 1))
    assert len(planar1) == 4
    assert all(c.multiplicity == 1 for c in planar1)
    assert sum(c.multiplicity for c in planar1) == 2 ** 2

    full2 = enumerate_count_classes(make_fixed_axes(Geometry.FULL, 2))
    assert len(full2) == 27
    assert sum(c.multiplicity for c in full2) == 2 ** 6

    planar2 = enumerate_count_classes(make_fixed_axes(Geometry.PLANAR, 2))
    by_counts = {c.counts: c.multiplicity for c in planar2}
    assert by_counts[(1, 1)] == 4


def test_tree_from_fixed_structure():
    fixed = make_fixed_axes(Geometry.PLANAR, 1)
    tree = tree_from_fixed(fixed)
    assert tree.copies == 2
    assert np.allclose(tree.direction(()), [1, 0, 0])
    assert np.allclose(tree.direction((0,)), [0, 1, 0])
    assert np.allclose(tree.direction((1,)), [0, 1, 0])
    assert tree.axis_order == (0, 1)

    single = tree_from_fixed(make_fixed_axes(Geometry.FULL, 1),
                             order=(2, 0, 1))
    assert np.allclose(single.direction(()), [0, 0, 1])

    with pytest.raises(ValidationError):
        tree_from_fixed(fixed, order=(0, 0))
    with pytest.raises(ValidationError):
        tree_from_fixed(fixed, order=(0,))


def test_tree_from_fixed_order_irrelevant_for_fidelity():
    fixed = make_fixed_axes(Geometry.PLANAR, 1)
    rule = make_quadrature(Geometry.PLANAR, 3)
    f_01 = fidelity_exact_tree(tree_from_fixed(fixed, (0, 1)),
                               OPTIMAL_GUESS, rule).F
    f_10 = fidelity_exact_tree(tree_from_fixed(fixed, (1, 0)),
                               OPTIMAL_GUESS, rule).F
    assert f_01 == pytest.approx(f_10, abs=1e-12)


def test_tree_validation():
    e3 = np.array([0.0, 0.0, 1.0])
    with pytest.raises(ValidationError):
        StrategyTree(Geometry.FULL, 2, {(): e3})  # depth-1 nodes missing
    with pytest.raises(ValidationError):
        StrategyTree(Geometry.FULL, 1, {(): np.array([0.0, 0.0, 2.0])})
    with pytest.raises(ValidationError):
        StrategyTree(Geometry.PLANAR, 1, {(): e3})
    with pytest.raises(ResourceLimitError):
        random_tree(Geometry.FULL, 17, np.random.default_rng(0))


def test_outcome_probabilities_sum_to_one_at_nodes():
    rng = np.random.default_rng(5)
    rule = make_quadrature(Geometry.FULL, 6)
    tree = random_tree(Geometry.FULL, 5, rng)
    densities = leaf_densities(tree, rule)
    totals = densities.sum(axis=0)
    assert np.allclose(totals, 1.0, atol=1e-12)


def test_fidelity_rotation_invariance():
    rng = np.random.default_rng(11)
    rule = make_quadrature(Geometry.FULL, 5)
    tree = random_tree(Geometry.FULL, 4, rng)
    base = fidelity_exact_tree(tree, OPTIMAL_GUESS, rule).F
    for seed in range(4):
        rot = random_rotation(np.random.default_rng(seed))
        rotated = tree.rotated(rot)
        assert fidelity_exact_tree(rotated, OPTIMAL_GUESS, rule).F == \
            pytest.approx(base, abs=1e-10)


def test_json_round_trip_exact():
    rng = np.random.default_rng(3)
    tree = random_tree(Geometry.FULL, 3, rng)
    text = tree.to_json()
    back = StrategyTree.from_json(text)
    assert back.copies == tree.copies
    assert back.geometry is tree.geometry
    for h, v in tree.directions.items():
        assert (back.directions[h] == v).all()  # bit-exact floats

    doc = json.loads(text)
    assert doc["geometry"] == "full"
    assert doc["N"] == 3
    assert doc["nodes"][0]["history"] == ""
    # History strings are written most-recent-outcome first.
    lengths = [len(node["history"]) for node in doc["nodes"]]
    assert lengths == sorted(lengths)


def test_json_schema_errors():
    with pytest.raises(ValidationError, match="line"):
        StrategyTree.from_json("{not json")
    with pytest.raises(ValidationError, match="missing field"):
        StrategyTree.from_json('{"geometry": "full", "N": 1}')
    with pytest.raises(ValidationError, match="direction"):
        StrategyTree.from_json(
            '{"geometry": "full", "N": 1, "nodes": [{"history": ""}]}')


def test_two_stage_validation():
    pilot = tree_from_fixed(make_fixed_axes(Geometry.FULL, 1))
    make_two_stage(Geometry.FULL, 9, 3, 1.0, pilot)
    with pytest.raises(ValidationError):
        make_two_stage(Geometry.FULL, 8, 3, 1.0, pilot)  # N - N0 odd
    with pytest.raises(ValidationError):
        make_two_stage(Geometry.FULL, 3, 3, 1.0, pilot)  # pilot too large
    with pytest.raises(ValidationError):
        make_two_stage(Geometry.FULL, 9, 3, 1.5, pilot)  # lambda range
    planar_pilot = tree_from_fixed(make_fixed_axes(Geometry.PLANAR, 1))
    with pytest.raises(ValidationError):
        make_two_stage(Geometry.FULL, 9, 2, 1.0, planar_pilot)


def test_two_stage_guess_degenerate_counts():
    from loccest.strategies import two_stage_guess

    pilot = tree_from_fixed(make_fixed_axes(Geometry.FULL, 1))
    rng = np.random.default_rng(2)
    for lam in (0.0, 0.37, 1.0):
        strategy = make_two_stage(Geometry.FULL, 11, 3, lam, pilot)
        v = rng.normal(size=3)
        m0 = v / np.linalg.norm(v)
        # Balanced counts mean zero tilt: the guess stays at the pilot guess.
        nbar = strategy.second_stage_per_axis
        assert nbar == 4
        guess = two_stage_guess(strategy, m0, np.array([2, 2]))
        assert np.allclose(guess, m0, atol=1e-15)
        if lam == 0.0:
            guess = two_stage_guess(strategy, m0, np.array([nbar, 0]))
            assert np.allclose(guess, m0, atol=1e-15)


def test_transverse_frame():
    rng = np.random.default_rng(9)
    for _ in range(20):
        v = rng.normal(size=3)
        m0 = v / np.linalg.norm(v)
        u, w = transverse_frame(Geometry.FULL, m0)
        assert abs(u @ m0) < 1e-12 and abs(w @ m0) < 1e-12
        assert abs(u @ w) < 1e-12
        assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(np.cross(u, w), m0, atol=1e-12)
    angle = rng.uniform(0, 2 * np.pi)
    m0 = np.array([np.cos(angle), np.sin(angle), 0.0])
    (u,) = transverse_frame(Geometry.PLANAR, m0)
    assert abs(u @ m0) < 1e-12 and u[2] == 0.0
