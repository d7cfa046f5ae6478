"""Inverse-mapping warps: sampling, masks, rectify/distort round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lensrect.metrics import psnr
from lensrect.models import ModelKind, default_model
from lensrect.scenes import make_scene
from lensrect.warp import (WarpResult, as_image, bilinear_sample, distort,
                           erode_mask, mask_of, radial_map_warp, rectify,
                           resize_bilinear)

FOV = default_model(ModelKind.FOV)
DM = default_model(ModelKind.DM)
ED = default_model(ModelKind.ED)


def test_identity_sampling_is_exact(small_scene):
    n = small_scene.shape[0]
    c = np.linspace(-1.0, 1.0, n)
    cu, cv = np.meshgrid(c, c)
    out = bilinear_sample(small_scene, cu, cv)
    assert np.array_equal(out.mask, np.ones((n, n)))
    np.testing.assert_allclose(out.image, small_scene, atol=1e-12)


def test_bilinear_midpoint_average():
    img = np.zeros((2, 2, 1))
    img[0, 0, 0], img[0, 1, 0], img[1, 0, 0], img[1, 1, 0] = 0.1, 0.3, 0.5, 0.7
    out = bilinear_sample(img, np.array([[0.0]]), np.array([[0.0]]))
    assert out.image[0, 0, 0] == pytest.approx(0.4)  # mean of the 4 corners
    assert out.mask[0, 0] == 1.0


def test_out_of_bounds_and_nan_are_masked(small_scene):
    cu = np.array([[1.5, np.nan, 0.0]])
    cv = np.array([[0.0, 0.0, 0.0]])
    out = bilinear_sample(small_scene, cu, cv)
    assert list(out.mask[0]) == [0.0, 0.0, 1.0]
    assert np.all(out.image[0, :2] == 0.0)


def test_mask_is_binary(small_scene):
    for model, k in [(FOV, 1.1), (DM, -0.8), (ED, 0.8)]:
        res = rectify(small_scene, model, k)
        assert set(np.unique(res.mask)) <= {0.0, 1.0}
        # invalid pixels are zeroed
        assert np.all(res.image[res.mask == 0.0] == 0.0)


def test_distort_shrinks_content_fov(small_scene):
    # barrel distortion pulls content toward the center: the distorted
    # frame needs source samples from beyond the frame near the corners
    res = distort(small_scene, FOV, 1.2)
    assert res.valid_fraction < 1.0
    center = res.image[30:35, 30:35]
    assert np.any(center != 0.0)


@pytest.mark.parametrize("model,k", [(FOV, 0.9), (DM, -0.6), (ED, 1.0)])
def test_rectify_distort_round_trip(scene, model, k):
    distorted = distort(scene, model, k)
    recovered = rectify(distorted, model, k)
    m = erode_mask(recovered.mask, 4) > 0
    assert m.sum() > 0.3 * m.size
    assert psnr(recovered.image[m], as_image(scene)[m]) > 30.0


def test_rectify_wrong_parameter_is_worse(scene):
    distorted = distort(scene, FOV, 0.9)
    good = rectify(distorted, FOV, 0.9)
    bad = rectify(distorted, FOV, 0.5)
    m = (erode_mask(good.mask, 4) > 0) & (erode_mask(bad.mask, 4) > 0)
    ref = as_image(scene)
    assert psnr(good.image[m], ref[m]) > psnr(bad.image[m], ref[m]) + 5.0


def test_radial_map_warp_identity(small_scene):
    out = radial_map_warp(small_scene, lambda r: r)
    np.testing.assert_allclose(out.image, small_scene, atol=1e-12)


def test_radial_map_warp_matches_rectify(scene):
    k = -0.5
    a = rectify(scene, DM, k)
    b = radial_map_warp(scene, lambda r: DM.radial_backward(r, k))
    np.testing.assert_allclose(a.image, b.image, atol=1e-12)
    np.testing.assert_array_equal(a.mask, b.mask)


def test_radial_map_warp_subgrid_is_stride_slice(scene):
    """out_size renders on an aligned subgrid of the native lattice."""
    k = 1.0
    full = radial_map_warp(scene, lambda r: FOV.radial_backward(r, k))
    sub = radial_map_warp(scene, lambda r: FOV.radial_backward(r, k), out_size=129)
    np.testing.assert_allclose(sub.image, full.image[::2, ::2], atol=1e-12)
    np.testing.assert_array_equal(sub.mask, full.mask[::2, ::2])


def test_radial_map_warp_composed_chain(scene):
    """Composing the radius maps equals chaining two warps (up to the
    resampling of the intermediate image)."""
    k1, k2 = 0.9, 0.5
    one = radial_map_warp(
        scene, lambda r: FOV.radial_backward(FOV.radial_forward(r, k1), k2))
    two_a = radial_map_warp(scene, lambda r: FOV.radial_forward(r, k1))
    two = radial_map_warp(two_a, lambda r: FOV.radial_backward(r, k2))
    m = (one.mask > 0) & (two.mask > 0)
    assert m.mean() > 0.5
    assert np.abs(one.image[m] - two.image[m]).mean() < 0.02


def test_warp_requires_square():
    with pytest.raises(ValueError):
        rectify(np.zeros((10, 20, 3)), FOV, 0.9)


def test_erode_mask():
    mask = np.ones((11, 11))
    mask[5, 5] = 0.0
    er = erode_mask(mask, 2)
    # the hole grows by a Manhattan ball of radius 2...
    assert er[5, 5] == 0.0 and er[4, 4] == 0.0 and er[5, 3] == 0.0
    assert er[3, 3] == 1.0 and er[5, 2] == 1.0
    # ... and the frame border erodes inward by the same width
    assert er[0, 0] == 0.0 and er[1, 5] == 0.0 and er[2, 5] == 1.0


def test_resize_bilinear_endpoints(small_scene):
    out = resize_bilinear(small_scene, 33)
    # align-corners: the four corners are preserved exactly
    for (i, j), (I, J) in zip([(0, 0), (0, 32), (32, 0), (32, 32)],
                              [(0, 0), (0, 64), (64, 0), (64, 64)]):
        np.testing.assert_allclose(out[i, j], small_scene[I, J], atol=1e-12)


def test_warpresult_helpers(small_scene):
    res = WarpResult(image=small_scene, mask=np.ones(small_scene.shape[:2]))
    assert as_image(res) is small_scene
    assert mask_of(res).shape == small_scene.shape[:2]
    assert res.valid_fraction == 1.0
    plain = as_image(small_scene)
    assert mask_of(plain).min() == 1.0


@given(kn=st.floats(0.0, 1.0))
@settings(max_examples=10, deadline=None)
def test_distort_then_rectify_mask_property(kn):
    scene = make_scene(5, size=65)
    k = ED.denormalize(kn)
    d = distort(scene, ED, k)
    r = rectify(d, ED, k)
    # wherever the round trip is valid the content matches closely
    m = erode_mask(r.mask, 3) > 0
    if m.any():
        assert np.abs(r.image[m] - scene[m]).mean() < 0.05
