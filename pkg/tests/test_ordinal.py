import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pulseadapt.errors import BadRange, NonFinite, ShapeMismatch
from pulseadapt.ordinal import (
    CLIP_EPS,
    RankProbabilities,
    decode_ordinal,
    encode_ordinal,
    hard_probabilities,
    normalize_segment,
    ordinal_loss,
    ordinal_loss_torch,
)


def test_normalize_affine():
    np.testing.assert_allclose(normalize_segment(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])


def test_normalize_flat_maps_to_half():
    np.testing.assert_array_equal(normalize_segment(np.array([5.0, 5.0, 5.0])), [0.5, 0.5, 0.5])


def test_normalize_identity_on_unit_span():
    np.testing.assert_array_equal(normalize_segment(np.array([1.0, 0.0, 1.0])), [1.0, 0.0, 1.0])


def test_normalize_rejects_nonfinite():
    with pytest.raises(NonFinite):
        normalize_segment(np.array([0.0, np.inf]))


def test_encode_extremes():
    assert encode_ordinal(np.array([0.0]), 40).ranks.sum() == 0
    assert encode_ordinal(np.array([1.0]), 40).ranks.sum() == 40
    row = encode_ordinal(np.array([0.5]), 40).ranks[0]
    assert row[:20].sum() == 20 and row[20:].sum() == 0


def test_encode_rejects_out_of_range():
    with pytest.raises(BadRange):
        encode_ordinal(np.array([1.2]), 40)


def test_loss_at_target_is_tiny():
    target = encode_ordinal(np.linspace(0, 1, 7), 40)
    loss = ordinal_loss(hard_probabilities(target), target)
    assert 0.0 <= loss < 1e-4


def test_loss_at_coin_flip():
    target = encode_ordinal(np.linspace(0, 1, 5), 40)
    p = np.full((5, 40), 0.5)
    assert math.isclose(ordinal_loss(p, target), 40 * math.log(2), rel_tol=1e-12)


def test_loss_worst_case():
    target = encode_ordinal(np.array([0.4]), 40)
    p = 1.0 - target.ranks.astype(np.float64)
    expected = 40 * math.log(1.0 / CLIP_EPS)
    assert math.isclose(ordinal_loss(p, target), expected, rel_tol=1e-9)


def test_loss_shape_mismatch():
    target = encode_ordinal(np.array([0.4]), 40)
    with pytest.raises(ShapeMismatch):
        ordinal_loss(np.full((2, 40), 0.5), target)


def test_torch_twin_matches_numpy():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.01, 0.99, size=(6, 9))
    target = encode_ordinal(rng.uniform(0, 1, size=6), 9)
    got = ordinal_loss_torch(torch.tensor(p, dtype=torch.float64), target)
    assert math.isclose(float(got), ordinal_loss(p, target), rel_tol=1e-12)


def test_decode_extremes():
    assert decode_ordinal(np.full((1, 40), 0.9))[0] == 1.0
    assert decode_ordinal(np.full((1, 40), 0.1))[0] == 0.0


def test_decode_roundtrip_half():
    target = encode_ordinal(np.array([0.5]), 40)
    assert decode_ordinal(hard_probabilities(target))[0] == 0.5


def test_roundtrip_exact_on_grid():
    s = 40
    grid = np.arange(s + 1) / s
    decoded = decode_ordinal(hard_probabilities(encode_ordinal(grid, s)))
    np.testing.assert_array_equal(decoded, grid)


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=30),
       st.integers(min_value=2, max_value=64))
@settings(max_examples=200, deadline=None)
def test_encode_prefix_property(values, s):
    ranks = encode_ordinal(np.array(values), s).ranks
    assert ((np.diff(ranks.astype(int), axis=1)) <= 0).all()
    assert ((ranks.sum(axis=1) >= 0) & (ranks.sum(axis=1) <= s)).all()


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=50, deadline=None)
def test_decode_monotone_in_p(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(CLIP_EPS, 1 - CLIP_EPS, size=(3, 8))
    base = decode_ordinal(p)
    t, s = rng.integers(3), rng.integers(8)
    bumped = p.copy()
    bumped[t, s] = min(1.0 - CLIP_EPS, bumped[t, s] + rng.uniform(0, 1))
    assert (decode_ordinal(bumped) >= base).all()


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=50, deadline=None)
def test_loss_minimized_at_target(seed):
    rng = np.random.default_rng(seed)
    target = encode_ordinal(rng.uniform(0, 1, size=4), 6)
    best = target.ranks.astype(np.float64)
    loss0 = ordinal_loss(best, target)
    t, s = rng.integers(4), rng.integers(6)
    perturbed = best.copy()
    # move one entry strictly away from its target value (inside the clip band)
    perturbed[t, s] = abs(perturbed[t, s] - rng.uniform(0.05, 0.45))
    assert ordinal_loss(perturbed, target) > loss0


def test_rank_probabilities_validation():
    with pytest.raises(ShapeMismatch):
        RankProbabilities(np.zeros(3))
    with pytest.raises(NonFinite):
        RankProbabilities(np.full((2, 2), np.nan))
    clipped = RankProbabilities(np.array([[0.0, 1.0]]))
    assert clipped.p.min() >= CLIP_EPS and clipped.p.max() <= 1 - CLIP_EPS
