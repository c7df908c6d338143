import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptai.decode import collapse_frames
from aptai.errors import ParameterError, ShapeError
from aptai.metrics import (
    aggregate_loso,
    frame_overlap,
    levenshtein,
    mean_pcc,
    pca,
    pcc,
    per,
    rmse,
)
from aptai.signals import NormStats

from oracles import levenshtein_ref


def test_per_identical_zero():
    assert per([1, 2, 3], [1, 2, 3]) == 0.0


def test_per_single_deletion():
    assert per([0, 1, 2], [0, 2]) == pytest.approx(100.0 / 3.0)


def test_per_empty_reference_rejected():
    with pytest.raises(ParameterError):
        per([], [1])


def test_per_can_exceed_100():
    assert per([1], [2, 3, 4]) == 300.0


@pytest.mark.parametrize("seed", range(10))
def test_levenshtein_matches_reference(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        a = rng.integers(0, 5, size=rng.integers(1, 12)).tolist()
        b = rng.integers(0, 5, size=rng.integers(0, 12)).tolist()
        assert levenshtein(a, b) == levenshtein_ref(a, b)


def test_per_asymmetric_denominator():
    ref, hyp = [1, 2, 3, 4], [1, 2]
    # same edit count both ways, different denominators
    assert levenshtein(ref, hyp) == levenshtein(hyp, ref)
    assert per(ref, hyp) == pytest.approx(50.0)
    assert per(hyp, ref) == pytest.approx(100.0)


# ---------------------------------------------------------------------------
# frame overlap


def _align(frames):
    return collapse_frames(frames)[1]


def test_overlap_identical_100():
    a = _align([0, 0, 1, 1, 2])
    assert frame_overlap(a, a) == 100.0


def test_overlap_disjoint_zero():
    assert frame_overlap(_align([0, 0, 1]), _align([2, 2, 3])) == 0.0


def test_overlap_half():
    a = _align([0, 0, 1, 1])
    b = _align([0, 0, 2, 2])
    assert frame_overlap(a, b) == 50.0


def test_overlap_frame_count_mismatch():
    with pytest.raises(ShapeError):
        frame_overlap(_align([0, 1]), _align([0, 1, 2]))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_overlap_self_is_100(frames):
    a = _align(frames)
    assert frame_overlap(a, a) == 100.0


# ---------------------------------------------------------------------------
# correlation


def test_pcc_perfect():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert pcc(x, x) == pytest.approx(1.0)
    assert pcc(x, -x) == pytest.approx(-1.0)


def test_pcc_constant_undefined():
    assert pcc(np.ones(5), np.arange(5.0)) is None


@given(st.integers(0, 2 ** 31 - 1),
       st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
@settings(max_examples=30, deadline=None)
def test_pcc_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=20)
    b = rng.normal(size=20)
    base = pcc(a, b)
    assert pcc(scale * a + shift, b) == pytest.approx(base, abs=1e-9)
    assert pcc(-a, b) == pytest.approx(-base, abs=1e-9)


# ---------------------------------------------------------------------------
# RMSE


def test_rmse_zero_for_identical():
    x = np.random.default_rng(0).normal(size=(6, 9))
    values, mm = rmse(x, x)
    np.testing.assert_array_equal(values, 0.0)
    assert mm is None


def test_rmse_unit_offset():
    x = np.random.default_rng(1).normal(size=(6, 9))
    values, _ = rmse(x + 1.0, x)
    np.testing.assert_allclose(values, 1.0)


def test_rmse_matches_direct_formula_and_denormalizes():
    rng = np.random.default_rng(2)
    pred, truth = rng.normal(size=(8, 9)), rng.normal(size=(8, 9))
    stats = NormStats(mean=np.zeros(9), std=rng.uniform(0.5, 2.0, size=9))
    values, mm = rmse(pred, truth, stats=stats)
    direct = np.sqrt(np.mean((pred - truth) ** 2, axis=0))
    np.testing.assert_allclose(values, direct, atol=1e-12)
    np.testing.assert_allclose(mm, direct * stats.std, atol=1e-12)


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_single_fold():
    out = aggregate_loso([{"overlap": 88.0}])
    assert out["overlap"] == (88.0, 0.0)


def test_aggregate_two_folds():
    out = aggregate_loso([{"m": 1.0}, {"m": 3.0}])
    mean, sd = out["m"]
    assert mean == 2.0
    assert sd == pytest.approx(np.sqrt(2.0))


def test_aggregate_identical_folds_exact():
    out = aggregate_loso([{"m": 0.7}] * 4)
    assert out["m"] == (0.7, 0.0)


def test_mean_pcc_excludes_undefined():
    mat = np.array([[1.0, np.nan], [0.5, np.nan]])
    mean, channels = mean_pcc(mat)
    assert mean == pytest.approx(0.75)
    assert np.isnan(channels[1])


# ---------------------------------------------------------------------------
# PCA


def test_pca_collinear_explains_everything():
    t = np.linspace(-2, 3, 50)[:, None]
    direction = np.array([[1.0, -2.0, 0.5]])
    proj, ratios = pca(t @ direction, 2)
    assert ratios[0] == pytest.approx(1.0, abs=1e-9)
    assert ratios[1] == pytest.approx(0.0, abs=1e-9)


def test_pca_isotropic_gaussian_splits_evenly():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10000, 2))
    _, ratios = pca(x, 2)
    assert ratios[0] == pytest.approx(0.5, abs=0.05)
    assert ratios[1] == pytest.approx(0.5, abs=0.05)


def test_pca_full_rank_reconstructs():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(40, 5))
    proj, ratios = pca(x, 5)
    centered = x - x.mean(axis=0)
    # recover the components from the projections via least squares
    comps, *_ = np.linalg.lstsq(proj, centered, rcond=None)
    np.testing.assert_allclose(proj @ comps, centered, atol=1e-9)
    assert np.all(np.diff(ratios) <= 1e-9)
    assert ratios.sum() <= 1.0 + 1e-9
    assert (ratios >= 0).all()


def test_pca_k_too_large():
    with pytest.raises(ParameterError):
        pca(np.zeros((5, 3)), 4)
