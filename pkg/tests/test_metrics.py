import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from salience_align.heatmap import DimensionMismatchError, Heatmap
from salience_align.metrics import (ZeroRankVarianceError, ZeroVectorError, average_ranks, cosine_similarity,
                                    downsample, spearman)

import oracles


def test_cosine_examples():
    a = Heatmap(np.array([[1.0, 2.0, 3.0]]))
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2, 3], [3, 2, 1]) == pytest.approx(10 / 14, abs=1e-15)


def test_cosine_zero_map():
    with pytest.raises(ZeroVectorError):
        cosine_similarity([0, 0], [1, 2])


def test_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine_similarity(Heatmap.zeros(2, 2), Heatmap.zeros(4, 1))


def test_spearman_examples():
    assert spearman([1, 5, 3], [1, 5, 3]) == pytest.approx(1.0)
    assert spearman([1, 5, 3], [-1, -5, -3]) == pytest.approx(-1.0)
    assert average_ranks(np.array([1, 2, 2, 4])).tolist() == [1, 2.5, 2.5, 4]
    assert spearman([1, 2, 2, 4], [10, 20, 30, 40]) == pytest.approx(
        oracles.pearson([1, 2.5, 2.5, 4], [1, 2, 3, 4]), abs=1e-15)


def test_spearman_constant_input():
    with pytest.raises(ZeroRankVarianceError):
        spearman([2, 2, 2], [1, 2, 3])


def test_against_oracles_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 400))
        a = rng.integers(0, max(2, n // 4), n).astype(float)  # heavy ties
        b = rng.uniform(0, 1, n)
        if len(set(a)) == 1:
            continue
        assert spearman(a, b) == pytest.approx(oracles.spearman(a, b), abs=1e-10)
        assert cosine_similarity(a + 1, b) == pytest.approx(oracles.cosine(a + 1, b), abs=1e-10)


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=40))
def test_average_ranks_oracle(values):
    r = average_ranks(np.array(values, dtype=float))
    assert r.tolist() == oracles.ranks(values)
    n = len(values)
    assert r.sum() == n * (n + 1) / 2


@given(st.lists(st.integers(0, 255), min_size=2, max_size=30), st.data())
def test_metric_ranges(a, data):
    b = data.draw(st.lists(st.integers(0, 255), min_size=len(a), max_size=len(a)))
    if any(a) and any(b):
        assert -1e-12 <= cosine_similarity(a, b) <= 1 + 1e-12
    if len(set(a)) > 1 and len(set(b)) > 1:
        assert -1 <= spearman(a, b) <= 1


def test_spearman_monotone_invariance():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0.1, 5, 200), rng.uniform(0, 1, 200)
    assert spearman(np.log(a), b) == pytest.approx(spearman(a, b), abs=1e-12)


def test_downsample_block_mean():
    m = Heatmap(np.arange(16.0).reshape(4, 4))
    assert downsample(m, 2).values.tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert downsample(m, 1) is m
    with pytest.raises(ValueError):
        downsample(m, 5)
