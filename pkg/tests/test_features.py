import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoforest.errors import ParameterError
from geoforest.features import (
    COMBINE_DIFF,
    COMBINE_MEAN_A,
    COMBINE_MEAN_B,
    COMBINE_SUM,
    FeatureDescriptor,
    FeatureRanges,
    IntegralStack,
    box_mean,
    build_integral,
    eval_feature,
    eval_feature_batch,
    sample_feature,
)
from geoforest.volume import ChannelKind, ChannelStack, Volume3

from _oracles import box_mean_direct, box_sum_direct


def _vol(data, kind=ChannelKind.CT_HU):
    return Volume3(np.asarray(data, dtype=np.float32), (1, 1, 1), channel_kind=kind)


def _random_stack(rng, dims=(8, 8, 8), n_channels=3):
    channels = [_vol(rng.uniform(0, 1, size=dims))]
    for _ in range(n_channels - 1):
        channels.append(_vol(rng.uniform(0, 1, size=dims), ChannelKind.GEODESIC))
    return ChannelStack(tuple(channels))


# ---------------------------------------------------------------------------
# integral volumes

def test_integral_all_ones_corner():
    iv = build_integral(_vol(np.ones((3, 3, 3))))
    assert iv.table[3, 3, 3] == 27.0
    assert iv.table[0].sum() == 0 and iv.table[:, 0].sum() == 0 and iv.table[:, :, 0].sum() == 0


def test_integral_all_zeros():
    iv = build_integral(_vol(np.zeros((4, 2, 3))))
    assert not iv.table.any()


def test_integral_rejects_non_finite():
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(ParameterError):
        build_integral(Volume3(data, (1, 1, 1)))


def test_random_boxes_match_direct_sums():
    rng = np.random.default_rng(123)
    vol = _vol(rng.uniform(-5, 5, size=(5, 5, 5)))
    iv = build_integral(vol)
    for _ in range(50):
        center = tuple(rng.integers(-2, 7, size=3))
        size = tuple(2 * rng.integers(0, 3, size=3) + 1)
        expected, count = box_sum_direct(vol.data, center, size)
        sums, counts = iv.box_sums(np.array([center]), size)
        assert counts[0] == count
        if count:
            assert sums[0] == pytest.approx(expected, rel=1e-12, abs=1e-12)
        else:
            assert sums[0] == 0.0


def test_box_mean_identity_case():
    rng = np.random.default_rng(4)
    vol = _vol(rng.uniform(0, 1, size=(5, 5, 5)))
    iv = build_integral(vol)
    assert box_mean(iv, (2, 2, 2), (1, 1, 1)) == pytest.approx(
        float(vol.data[2, 2, 2]), rel=1e-6)


def test_box_mean_inside_ones_is_one():
    iv = build_integral(_vol(np.ones((5, 5, 5))))
    assert box_mean(iv, (2, 2, 2), (3, 3, 3)) == pytest.approx(1.0)


def test_box_mean_clamped_at_corner():
    rng = np.random.default_rng(8)
    vol = _vol(rng.uniform(0, 2, size=(4, 4, 4)))
    iv = build_integral(vol)
    got = box_mean(iv, (0, 0, 0), (3, 3, 3))
    assert got == pytest.approx(box_mean_direct(vol.data, (0, 0, 0), (3, 3, 3)),
                                rel=1e-12)


def test_box_fully_outside_returns_zero():
    iv = build_integral(_vol(np.ones((4, 4, 4))))
    assert box_mean(iv, (10, 2, 2), (3, 3, 3)) == 0.0
    assert box_mean(iv, (-9, 0, 0), (1, 1, 1)) == 0.0


# ---------------------------------------------------------------------------
# descriptors

def test_descriptor_rejects_even_extent():
    with pytest.raises(ParameterError):
        FeatureDescriptor((0, 0, 0), (0, 0, 0), (2, 1, 1), (1, 1, 1), 0, 0, 1)


def test_descriptor_rejects_bad_selector():
    with pytest.raises(ParameterError):
        FeatureDescriptor((0, 0, 0), (0, 0, 0), (1, 1, 1), (1, 1, 1), 0, 0, 7)


def test_descriptor_flat_round_trip():
    f = FeatureDescriptor((-3, 2, 0), (1, -1, 4), (3, 1, 5), (1, 7, 1), 0, 2, 5)
    assert FeatureDescriptor.from_flat(f.to_flat()) == f
    assert len(f.to_flat()) == 15


# ---------------------------------------------------------------------------
# evaluation

def test_self_difference_is_zero_everywhere():
    rng = np.random.default_rng(10)
    stack = _random_stack(rng)
    istack = IntegralStack(stack)
    f = FeatureDescriptor((0, 0, 0), (0, 0, 0), (1, 1, 1), (1, 1, 1), 0, 0,
                          COMBINE_DIFF)
    pos = rng.integers(0, 8, size=(40, 3))
    np.testing.assert_array_equal(eval_feature_batch(istack, pos, f),
                                  np.zeros(40))


def test_sum_composes_from_parts():
    rng = np.random.default_rng(11)
    stack = _random_stack(rng)
    istack = IntegralStack(stack)
    base = dict(offset_a=(2, -1, 0), offset_b=(-2, 0, 1),
                size_a=(3, 3, 1), size_b=(1, 5, 3), channel_a=0, channel_b=1)
    fa = FeatureDescriptor(combine=COMBINE_MEAN_A, **base)
    fb = FeatureDescriptor(combine=COMBINE_MEAN_B, **base)
    fs = FeatureDescriptor(combine=COMBINE_SUM, **base)
    pos = rng.integers(0, 8, size=(30, 3))
    np.testing.assert_allclose(
        eval_feature_batch(istack, pos, fs),
        eval_feature_batch(istack, pos, fa) + eval_feature_batch(istack, pos, fb),
        rtol=1e-12)


def test_cross_channel_matches_direct_two_box_computation():
    rng = np.random.default_rng(12)
    stack = _random_stack(rng, dims=(6, 7, 5))
    istack = IntegralStack(stack)
    f = FeatureDescriptor((1, -2, 0), (0, 3, -1), (3, 1, 3), (5, 3, 1), 0, 1,
                          COMBINE_DIFF)
    for _ in range(20):
        p = tuple(rng.integers(0, (6, 7, 5)))
        ma = box_mean_direct(stack.channels[0].data,
                             tuple(np.add(p, f.offset_a)), f.size_a)
        mb = box_mean_direct(stack.channels[1].data,
                             tuple(np.add(p, f.offset_b)), f.size_b)
        assert eval_feature(istack, p, f) == pytest.approx(ma - mb, abs=1e-10)


def test_eval_rejects_channel_out_of_range():
    rng = np.random.default_rng(13)
    istack = IntegralStack(_random_stack(rng, n_channels=2))
    f = FeatureDescriptor((0, 0, 0), (0, 0, 0), (1, 1, 1), (1, 1, 1), 0, 2, 1)
    with pytest.raises(ParameterError, match="channel"):
        eval_feature(istack, (1, 1, 1), f)


def test_translation_consistency_away_from_boundary():
    rng = np.random.default_rng(14)
    base = rng.uniform(0, 1, size=(12, 12, 12))
    shifted = np.roll(base, shift=2, axis=0)
    sa = IntegralStack(ChannelStack((_vol(base),)))
    sb = IntegralStack(ChannelStack((_vol(shifted),)))
    f = FeatureDescriptor((1, 0, -1), (-1, 1, 0), (3, 3, 3), (1, 3, 1), 0, 0,
                          COMBINE_DIFF)
    p = np.array([5, 6, 6])
    assert eval_feature(sa, p, f) == pytest.approx(
        eval_feature(sb, p + (2, 0, 0), f), abs=1e-12)


# ---------------------------------------------------------------------------
# sampling

def test_degenerate_ranges_pin_offsets_and_sizes():
    rng = np.random.default_rng(0)
    ranges = FeatureRanges(offset_range=0, max_extent=1)
    for _ in range(10):
        f = sample_feature(rng, 3, ranges)
        assert f.offset_a == (0, 0, 0) and f.offset_b == (0, 0, 0)
        assert f.size_a == (1, 1, 1) and f.size_b == (1, 1, 1)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=40, deadline=None)
def test_samples_satisfy_invariants(seed):
    rng = np.random.default_rng(seed)
    f = sample_feature(rng, 3, FeatureRanges())
    assert all(abs(o) <= 20 for o in f.offset_a + f.offset_b)
    assert all(1 <= s <= 15 and s % 2 == 1 for s in f.size_a + f.size_b)
    assert 0 <= f.channel_a < 3 and 0 <= f.channel_b < 3
    assert 1 <= f.combine <= 6


def test_fixed_seed_reproduces_descriptor_sequence():
    seq1 = [sample_feature(np.random.default_rng(99), 3) for _ in range(1)]
    rng1, rng2 = np.random.default_rng(77), np.random.default_rng(77)
    a = [sample_feature(rng1, 3) for _ in range(25)]
    b = [sample_feature(rng2, 3) for _ in range(25)]
    assert a == b
    assert seq1[0] == sample_feature(np.random.default_rng(99), 3)


def test_feature_values_finite_on_random_inputs():
    rng = np.random.default_rng(21)
    stack = _random_stack(rng, dims=(9, 9, 9))
    istack = IntegralStack(stack)
    pos = rng.integers(-4, 13, size=(200, 3))
    for _ in range(20):
        f = sample_feature(rng, 3, FeatureRanges(offset_range=6, max_extent=5))
        vals = eval_feature_batch(istack, pos, f)
        assert np.isfinite(vals).all()
