from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from admsched.admissibility import PairwiseDistance, RegionGraph
from admsched.geometry import (
    Partition,
    block_of,
    build_partition,
    circ_distance,
    contiguous_partition,
    forbidden_size,
    interleaved_bounds,
    is_guaranteed,
    min_partition_size,
    min_region_distance,
    mu_for_radius,
    region_of,
    snap,
    validate_partition,
)

locations = st.floats(min_value=0.0, max_value=1.0, exclude_max=True)


def test_circ_distance_examples():
    assert circ_distance(0.1, 0.7) == pytest.approx(0.4, abs=1e-15)
    assert circ_distance(0.37, 0.37) == 0.0
    assert circ_distance(0.0, 0.5) == 0.5


@given(locations, locations)
def test_circ_distance_symmetric_and_bounded(x, w):
    d = circ_distance(x, w)
    assert d == circ_distance(w, x)
    assert 0.0 <= d <= 0.5


@given(locations, locations, locations)
def test_circ_distance_triangle(x, w, z):
    assert circ_distance(x, z) <= circ_distance(x, w) + circ_distance(w, z) + 1e-15


def test_circ_distance_is_exact_on_grid():
    # the grid makes 1 - |x - w| exact, so the comparison against r is never fuzzy
    x, w = snap(0.1), snap(0.59)
    assert circ_distance(x, w) == abs(Fraction(x) - Fraction(w))


@pytest.mark.parametrize("r, mu", [(0.49, 2), (0.5, 1), (0.3, 3), (0.25, 3), (0.2, 4), (0.33, 3), (0.1, 9)])
def test_mu_for_radius(r, mu):
    assert mu_for_radius(r) == mu


def test_integer_inverse_radius_has_forbidden_size():
    assert forbidden_size(0.5) == 2
    assert forbidden_size(0.25) == 4
    assert forbidden_size(0.49) is None


@pytest.mark.parametrize("r", [0.0, 1.0, -0.2, 1.5, math.nan])
def test_mu_for_radius_rejects_out_of_range(r):
    with pytest.raises(ValueError):
        mu_for_radius(r)


@given(st.floats(min_value=0.01, max_value=0.99))
def test_mu_times_r_below_one(r):
    mu = mu_for_radius(r)
    if forbidden_size(r) is None:
        assert mu * r < 1
    else:
        assert mu * r <= 1 - r + 1e-12


def test_build_partition_r049():
    p = build_partition(0.49)
    assert (p.K, p.mu) == (200, 2)
    assert p.regions[0] == (Fraction(0), Fraction(1, 200))
    assert p.regions[1] == (Fraction(1, 2), Fraction(101, 200))


def test_build_partition_r03_matches_bound():
    p = build_partition(0.3)
    mu = 3
    bound = Fraction(2 * mu) / (1 - mu * Fraction(3, 10))
    assert bound == 60
    assert p.K == 60 and p.mu == mu
    assert p.K == min_partition_size(0.3)


@pytest.mark.parametrize("r", [0.49, 0.3, 0.2, 0.4, 0.45])
def test_default_K_is_smallest_feasible(r):
    p = build_partition(r)
    mu = mu_for_radius(r)
    bound = Fraction(2 * mu) / (1 - mu * Fraction(repr(r)))
    assert p.K % mu == 0 and p.K >= bound and p.K - mu < bound


def test_build_partition_rejects_bad_K():
    with pytest.raises(ValueError):
        build_partition(0.49, K=199)
    with pytest.raises(ValueError):
        build_partition(0.49, K=198)
    assert build_partition(0.49, K=202).K == 202


def test_region_of_examples():
    p = build_partition(0.49)
    assert region_of(p, 0.0) == 1
    assert region_of(p, 0.5) == 2
    assert region_of(p, 0.004999) == 1
    assert region_of(p, 0.005) == 3


@pytest.mark.parametrize("r", [0.49, 0.3, 0.5])
def test_regions_cover_circle_exactly(r):
    p = build_partition(r)
    assert sum(p.length(i) for i in range(1, p.K + 1)) == 1
    assert all(p.length(i) == Fraction(1, p.K) for i in range(1, p.K + 1))
    starts = sorted(a for a, _ in p.regions)
    ends = sorted(b for _, b in p.regions)
    assert starts[0] == 0 and ends[-1] == 1
    assert starts[1:] == ends[:-1]


@pytest.mark.parametrize("r", [0.49, 0.3])
def test_region_of_is_left_inverse(r):
    p = build_partition(r)
    xs = np.random.default_rng(11).random(100_000)
    idx = p.region_indices(np.array([int(x * 2**53) for x in xs], dtype=np.int64))
    lo = np.array([float(p.regions[i - 1][0]) for i in idx])
    hi = np.array([float(p.regions[i - 1][1]) for i in idx])
    snapped = np.floor(xs * 2**53) / 2**53
    assert np.all(lo <= snapped) and np.all(snapped < hi)


def test_blocks_follow_index_rule():
    p = build_partition(0.49)
    assert p.blocks[0] == frozenset({1, 2})
    assert p.blocks[1] == frozenset({1, 2})
    assert p.blocks[2] == frozenset({3, 4})
    assert block_of(5, 3) == frozenset({4, 5, 6})
    assert len(p.distinct_blocks) == p.K // p.mu


def test_interleaved_bounds_formula():
    assert interleaved_bounds(60, 3, 2) == (Fraction(20, 60), Fraction(21, 60))
    assert interleaved_bounds(60, 3, 4) == (Fraction(1, 60), Fraction(2, 60))


def test_min_region_distance_examples():
    p = build_partition(0.49)
    assert min_region_distance(p, 1, 2) == Fraction(99, 200)
    assert min_region_distance(p, 1, 3) == 0
    with pytest.raises(ValueError):
        min_region_distance(p, 4, 4)


def test_is_guaranteed_examples():
    model = PairwiseDistance(0.49)
    p = build_partition(0.49)
    assert is_guaranteed(p, model, p.blocks[0])
    assert is_guaranteed(p, model, set())
    assert not is_guaranteed(p, model, {1, 3})
    assert not is_guaranteed(p, model, {1, 2, 4})


@pytest.mark.parametrize("r", [0.49, 0.3, 0.5, 0.2, 0.45])
def test_build_partition_validates(r):
    report = validate_partition(build_partition(r), PairwiseDistance(r))
    assert report.passed, report.failures()


def test_validation_flags_divisibility():
    p = contiguous_partition(5, 1)
    bad = Partition(5, 2, p.regions, tuple(frozenset({i}) for i in range(1, 6)))
    report = validate_partition(bad, PairwiseDistance(0.49))
    assert not report["divisibility"].passed


def test_validation_flags_close_block():
    good = build_partition(0.49)
    # pair adjacent regions 1 and 3 instead of the antipodal 1 and 2
    blocks = list(good.blocks)
    blocks[0] = blocks[2] = frozenset({1, 3})
    bad = Partition(good.K, good.mu, good.regions, tuple(blocks))
    report = validate_partition(bad, PairwiseDistance(0.49))
    assert not report["blocks_guaranteed"].passed
    assert report["cover"].passed


def test_validation_flags_oversized_regions():
    p = contiguous_partition(2, 2)
    report = validate_partition(p, PairwiseDistance(0.3))
    assert not report.passed


def test_region_graph_partition_validates():
    model = RegionGraph(4, frozenset({(1, 3), (2, 4)}))
    assert model.mu == 2
    assert validate_partition(model.partition(), model).passed


@settings(max_examples=50)
@given(st.sampled_from([0.49, 0.3, 0.2, 0.45, 0.4]))
def test_every_block_guaranteed(r):
    model = PairwiseDistance(r)
    p = build_partition(r)
    assert all(is_guaranteed(p, model, b) for b in p.distinct_blocks)
