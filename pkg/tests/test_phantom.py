import numpy as np
import pytest

from geoforest.errors import ParameterError
from geoforest.geodesic import TARGET_LEFT, TARGET_RIGHT, rasterize_polygon
from geoforest.phantom import (
    HU_PARENCHYMA,
    EllipsoidSpec,
    PhantomSpec,
    generate_phantom,
    materialize_suite,
    phantom_suite,
)
from geoforest.pipeline import load_manifest
from geoforest.volume import read_label_mhd, read_mhd


def test_zero_noise_zero_cysts_gives_uniform_parenchyma():
    spec = PhantomSpec(seed=1, cysts_per_kidney=0, confounder_count=0,
                       noise_hu=0.0)
    ct, truth, _ = generate_phantom(spec)
    kidney = truth.labels > 0
    assert (ct.data[kidney] == HU_PARENCHYMA).all()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_label_counts_match_analytic_ellipsoid_volume(seed):
    spec = PhantomSpec.random(seed)
    _, truth, _ = generate_phantom(spec)
    for kidney, label in ((spec.right, 1), (spec.left, 2)):
        count = int((truth.labels == label).sum())
        analytic = 4.0 / 3.0 * np.pi * np.prod(kidney.radii)
        assert count == pytest.approx(analytic, rel=0.05)


def test_annotation_rasterization_inside_truth_midslice():
    spec = PhantomSpec.random(7)
    _, truth, anns = generate_phantom(spec)
    for target, label in ((TARGET_RIGHT, 1), (TARGET_LEFT, 2)):
        ann = anns[target]
        truth_slice = truth.labels[:, :, ann.slice_z] == label
        assert ann.mask.any()
        assert not (ann.mask & ~truth_slice).any()


def test_annotation_mask_matches_polygon_raster():
    spec = PhantomSpec.random(3)
    ct, _, anns = generate_phantom(spec)
    ann = anns[TARGET_RIGHT]
    np.testing.assert_array_equal(
        ann.mask, rasterize_polygon(ann.polygon, ct.dims[:2]))


def test_overlapping_kidneys_rejected():
    with pytest.raises(ParameterError, match="overlap"):
        PhantomSpec(seed=0,
                    right=EllipsoidSpec((40, 48, 32), (12, 12, 10)),
                    left=EllipsoidSpec((56, 48, 32), (12, 12, 10)))


def test_out_of_bounds_kidney_rejected():
    with pytest.raises(ParameterError, match="leaves the volume"):
        PhantomSpec(seed=0, right=EllipsoidSpec((8, 48, 32), (12, 12, 10)))


def test_confounders_touch_neither_kidney():
    spec = PhantomSpec.random(5)
    ct, truth, _ = generate_phantom(spec)
    # confounder voxels are the cyst-like intensities outside the kidneys
    outside = truth.labels == 0
    cystlike = outside & (np.abs(ct.data - 40.0) > 20.0)
    from scipy import ndimage
    near_kidney = ndimage.binary_dilation(truth.labels > 0, iterations=1)
    assert not (cystlike & near_kidney).any()


def test_suite_is_deterministic():
    a = phantom_suite(4)
    b = phantom_suite(4)
    assert a == b


def test_materialized_suite_loads_back(tmp_path):
    manifest = materialize_suite(str(tmp_path), count=2)
    cases = load_manifest(manifest)
    assert len(cases) == 2
    vol = read_mhd(cases[0].ct_path)
    truth = read_label_mhd(cases[0].ground_truth_path)
    assert vol.dims == (96, 96, 64)
    assert truth.dims == vol.dims
    assert vol.spacing == (1.0, 1.0, 2.5)
