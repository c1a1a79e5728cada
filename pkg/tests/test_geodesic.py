import json

import numpy as np
import pytest

from geoforest.errors import AnnotationError, ParameterError
from geoforest.geodesic import (
    GeodesicParams,
    SeedAnnotation,
    geodesic_transform,
    load_annotation,
    normalize_distance,
    polygon_is_simple,
    rasterize_polygon,
    save_annotation,
)
from geoforest.volume import ChannelKind, Volume3

from _oracles import bellman_ford_geodesic, rasterize_by_points


def _uniform(dims, value=0.5, spacing=(1, 1, 1)):
    return Volume3(np.full(dims, value, dtype=np.float32), spacing,
                   channel_kind=ChannelKind.CT_HU)


# ---------------------------------------------------------------------------
# rasterization

def test_square_fills_interior_centers():
    poly = [(0.5, 0.5), (3.5, 0.5), (3.5, 3.5), (0.5, 3.5)]
    mask = rasterize_polygon(poly, (6, 6))
    expected = np.zeros((6, 6), dtype=bool)
    expected[1:4, 1:4] = True
    np.testing.assert_array_equal(mask, expected)


def test_triangle_matches_point_in_polygon_oracle():
    poly = [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)]
    mask = rasterize_polygon(poly, (6, 6))
    np.testing.assert_array_equal(mask, rasterize_by_points(poly, 6, 6))


@pytest.mark.parametrize("seed", range(8))
def test_random_polygons_match_oracle(seed):
    rng = np.random.default_rng(seed)
    # star-shaped construction around a center never self-intersects
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=rng.integers(3, 9)))
    radii = rng.uniform(1.0, 5.5, size=angles.size)
    poly = [(6 + r * np.cos(a), 6 + r * np.sin(a)) for a, r in zip(angles, radii)]
    mask = rasterize_polygon(poly, (13, 13))
    np.testing.assert_array_equal(mask, rasterize_by_points(poly, 13, 13))


def test_two_vertex_polygon_rejected():
    with pytest.raises(AnnotationError):
        rasterize_polygon([(0, 0), (3, 3)], (5, 5))


def test_figure_eight_rejected():
    fig8 = [(0, 0), (4, 4), (4, 0), (0, 4)]
    assert not polygon_is_simple(fig8)
    with pytest.raises(AnnotationError, match="self-intersect"):
        rasterize_polygon(fig8, (6, 6))


def test_polygon_far_outside_bounds_rejected():
    with pytest.raises(AnnotationError, match="bounds"):
        rasterize_polygon([(0, 0), (9, 0), (0, 9)], (5, 5))


def test_annotation_requires_nonempty_mask():
    # tiny sliver between pixel centers rasterizes to nothing
    with pytest.raises(AnnotationError, match="empty"):
        SeedAnnotation.build("right", 0, [(0.1, 0.1), (0.3, 0.1), (0.2, 0.3)],
                             (5, 5, 3))


def test_annotation_roundtrip(tmp_path):
    ann = SeedAnnotation.build("left", 2, [(1, 1), (6, 1), (6, 6), (1, 6)],
                               (8, 8, 4))
    save_annotation(ann, str(tmp_path / "a.json"))
    back = load_annotation(str(tmp_path / "a.json"), (8, 8, 4))
    assert back.target == "left"
    assert back.slice_z == 2
    np.testing.assert_array_equal(back.mask, ann.mask)


def test_annotation_slice_out_of_bounds(tmp_path):
    obj = {"target": "right", "slice_z": 9, "polygon": [[1, 1], [4, 1], [4, 4]]}
    (tmp_path / "a.json").write_text(json.dumps(obj))
    with pytest.raises(AnnotationError, match="slice_z"):
        load_annotation(str(tmp_path / "a.json"), (8, 8, 4))


# ---------------------------------------------------------------------------
# distance transform

def test_uniform_intensity_6conn_equals_l1_distance():
    vol = _uniform((5, 4, 3))
    seeds = np.array([[1, 1, 1]])
    d = geodesic_transform(vol, seeds, GeodesicParams(gamma=3.7, connectivity=6))
    for x in range(5):
        for y in range(4):
            for z in range(3):
                expected = abs(x - 1) + abs(y - 1) + abs(z - 1)
                assert d.data[x, y, z] == pytest.approx(expected, abs=1e-12)


def test_gamma0_26conn_matches_oracle():
    rng = np.random.default_rng(42)
    vals = rng.uniform(0, 1, size=(6, 6, 6)).astype(np.float32)
    vol = Volume3(vals, (1, 1, 1), channel_kind=ChannelKind.CT_HU)
    seed_mask = np.zeros((6, 6, 6), dtype=bool)
    seed_mask[0, 3, 2] = True
    d = geodesic_transform(vol, seed_mask, GeodesicParams(gamma=0.0, connectivity=26))
    ref = bellman_ford_geodesic(vol.data, (1, 1, 1), seed_mask, 0.0, 26)
    np.testing.assert_allclose(d.data, ref, atol=1e-9)


def test_1d_ramp_hand_computed():
    n = 5
    ramp = (np.arange(n, dtype=np.float32) / (n - 1)).reshape(n, 1, 1)
    vol = Volume3(ramp, (1, 1, 1), channel_kind=ChannelKind.CT_HU)
    d = geodesic_transform(vol, np.array([[0, 0, 0]]),
                           GeodesicParams(gamma=2.0, connectivity=6))
    assert d.data[4, 0, 0] == pytest.approx(4 * np.sqrt(1.25), abs=1e-12)
    ref = bellman_ford_geodesic(vol.data, (1, 1, 1),
                                vol.data == 0, 2.0, 6)
    np.testing.assert_allclose(d.data, ref, atol=1e-9)


def test_anisotropic_spacing_enters_costs():
    vol = _uniform((3, 3, 3), spacing=(1.0, 1.0, 2.5))
    d = geodesic_transform(vol, np.array([[0, 0, 0]]),
                           GeodesicParams(gamma=0.0, connectivity=6))
    assert d.data[0, 0, 2] == pytest.approx(5.0, abs=1e-12)
    assert d.data[2, 0, 0] == pytest.approx(2.0, abs=1e-12)


def test_zero_exactly_on_seeds_only():
    rng = np.random.default_rng(0)
    vol = Volume3(rng.uniform(0, 1, (5, 5, 5)).astype(np.float32), (1, 1, 1),
                  channel_kind=ChannelKind.CT_HU)
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[2, 2, 2] = mask[0, 0, 0] = True
    d = geodesic_transform(vol, mask, GeodesicParams())
    np.testing.assert_array_equal(d.data == 0.0, mask)


def test_gamma_monotonicity_pointwise():
    rng = np.random.default_rng(5)
    vol = Volume3(rng.uniform(0, 1, (6, 5, 4)).astype(np.float32), (1, 1, 1),
                  channel_kind=ChannelKind.CT_HU)
    seeds = np.array([[3, 2, 1]])
    prev = geodesic_transform(vol, seeds, GeodesicParams(gamma=0.0)).data
    for gamma in (0.5, 1.0, 2.0):
        cur = geodesic_transform(vol, seeds, GeodesicParams(gamma=gamma)).data
        assert (cur >= prev - 1e-12).all()
        prev = cur


def test_adding_seeds_never_increases_distance():
    rng = np.random.default_rng(9)
    vol = Volume3(rng.uniform(0, 1, (6, 6, 6)).astype(np.float32), (1, 1, 1),
                  channel_kind=ChannelKind.CT_HU)
    d1 = geodesic_transform(vol, np.array([[0, 0, 0]]), GeodesicParams()).data
    d2 = geodesic_transform(vol, np.array([[0, 0, 0], [5, 5, 5]]),
                            GeodesicParams()).data
    assert (d2 <= d1 + 1e-12).all()


def test_edge_consistency():
    rng = np.random.default_rng(17)
    vol = Volume3(rng.uniform(0, 1, (5, 5, 5)).astype(np.float32),
                  (1.0, 1.0, 2.0), channel_kind=ChannelKind.CT_HU)
    params = GeodesicParams(gamma=1.5, connectivity=6)
    d = geodesic_transform(vol, np.array([[2, 2, 2]]), params).data
    sbar = (1.0 + 1.0 + 2.0) / 3.0
    spacing = (1.0, 1.0, 2.0)
    for axis, step in ((0, (1, 0, 0)), (1, (0, 1, 0)), (2, (0, 0, 1))):
        for x in range(5 - step[0]):
            for y in range(5 - step[1]):
                for z in range(5 - step[2]):
                    p = (x, y, z)
                    q = (x + step[0], y + step[1], z + step[2])
                    di = float(vol.data[q]) - float(vol.data[p])
                    cost = np.sqrt(spacing[axis] ** 2 +
                                   (params.gamma * sbar * di) ** 2)
                    assert abs(d[p] - d[q]) <= cost + 1e-9


def test_empty_seeds_rejected():
    vol = _uniform((3, 3, 3))
    with pytest.raises(ParameterError):
        geodesic_transform(vol, np.zeros((0, 3), dtype=int), GeodesicParams())


def test_out_of_bounds_seeds_rejected():
    vol = _uniform((3, 3, 3))
    with pytest.raises(ParameterError):
        geodesic_transform(vol, np.array([[3, 0, 0]]), GeodesicParams())


def test_params_validation():
    with pytest.raises(ParameterError):
        GeodesicParams(gamma=-0.1)
    with pytest.raises(ParameterError):
        GeodesicParams(connectivity=18)
    with pytest.raises(ParameterError):
        GeodesicParams(d_cap=0.0)


# ---------------------------------------------------------------------------
# normalization

def test_normalize_distance_zero_and_cap():
    d = Volume3(np.array([0.0, 150.0, 300.0, 600.0], dtype=np.float32)
                .reshape(4, 1, 1), (1, 1, 1), channel_kind=ChannelKind.GEODESIC)
    out = normalize_distance(d, 300.0)
    np.testing.assert_allclose(out.data.ravel(), [0.0, 0.5, 1.0, 1.0], atol=1e-7)
    assert out.channel_kind is ChannelKind.GEODESIC


def test_normalize_distance_monotone_below_cap():
    rng = np.random.default_rng(2)
    vals = rng.uniform(0, 250, size=(4, 4, 4))
    out = normalize_distance(
        Volume3(vals, (1, 1, 1), channel_kind=ChannelKind.GEODESIC), 300.0).data
    a, b = vals.ravel(), out.ravel()
    order = np.argsort(a, kind="stable")
    assert (np.diff(b[order]) >= 0).all()


def test_normalize_distance_rejects_bad_cap_and_negatives():
    d = Volume3(np.zeros((2, 2, 2), dtype=np.float32), (1, 1, 1))
    with pytest.raises(ParameterError):
        normalize_distance(d, 0.0)
    neg = Volume3(np.full((2, 2, 2), -1.0, dtype=np.float32), (1, 1, 1))
    with pytest.raises(ParameterError):
        normalize_distance(neg, 10.0)


def test_unreachable_becomes_finite_after_normalization():
    d = Volume3(np.array([np.inf, 1.0]).reshape(2, 1, 1), (1, 1, 1),
                channel_kind=ChannelKind.GEODESIC)
    out = normalize_distance(d, 300.0)
    assert np.isfinite(out.data).all()
