import numpy as np
import pytest

from hsplat.errors import DimensionMismatchError, GaussianNotInViewError, NumericalError, StaleArtifactsError
from hsplat.gaussians import GaussianCloud
from hsplat.render.backward import accumulate_ledger, backward, capture_pixel_gradients, gradient_scale
from hsplat.render.projection import ImagePlane, project_identity, project_view
from hsplat.render.rasterizer import render, render_cloud

FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "color_coeffs")
STEP = 1e-5


def _linear_loss(cloud, view, weights):
    image, _, _ = render_cloud(cloud, view)
    return float((image * weights).sum())


def _numeric_gradient(cloud, view, weights, field):
    values = getattr(cloud, field).reshape(-1)
    grad = np.zeros(values.size)
    for index in range(values.size):
        original = values[index]
        values[index] = original + STEP
        plus = _linear_loss(cloud, view, weights)
        values[index] = original - STEP
        minus = _linear_loss(cloud, view, weights)
        values[index] = original
        grad[index] = (plus - minus) / (2.0 * STEP)
    return grad.reshape(getattr(cloud, field).shape)


def _analytic(cloud, view, weights, **kwargs):
    _, projected, artifacts = render_cloud(cloud, view)
    return backward(projected, artifacts, weights, view, **kwargs)


def _weights(seed, view):
    return np.random.default_rng(seed + 100).normal(size=(view.height, view.width, 3))


def _assert_matches_finite_differences(cloud, view, seed):
    weights = _weights(seed, view)
    grads = _analytic(cloud, view, weights).parameter_gradients()
    for field in FIELDS:
        np.testing.assert_allclose(
            grads[field], _numeric_gradient(cloud, view, weights, field), rtol=1e-3, atol=1e-6, err_msg=field
        )


@pytest.mark.parametrize("seed", range(4))
def test_identity_gradients_match_finite_differences(identity_scene, seed):
    _assert_matches_finite_differences(*identity_scene(seed), seed)


@pytest.mark.parametrize("seed", range(4))
def test_perspective_gradients_match_finite_differences(perspective_scene, seed):
    _assert_matches_finite_differences(*perspective_scene(seed), seed)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(4, 29))
def test_identity_gradients_over_many_scenes(identity_scene, seed):
    _assert_matches_finite_differences(*identity_scene(seed, count=6 + seed % 7), seed)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(4, 29))
def test_perspective_gradients_over_many_scenes(perspective_scene, seed):
    _assert_matches_finite_differences(*perspective_scene(seed, count=6 + seed % 7), seed)


@pytest.mark.parametrize("seed", range(3))
def test_view_space_gradient_matches_finite_differences(perspective_scene, seed):
    cloud, camera = perspective_scene(seed)
    weights = _weights(seed, camera)
    grads = _analytic(cloud, camera, weights)
    projected = project_view(cloud, camera)
    numeric = np.zeros((len(projected), 2))
    for row in range(len(projected)):
        for axis in range(2):
            original = projected.mean2d[row, axis]
            projected.mean2d[row, axis] = original + STEP
            plus = float((render(projected, camera.width, camera.height)[0] * weights).sum())
            projected.mean2d[row, axis] = original - STEP
            minus = float((render(projected, camera.width, camera.height)[0] * weights).sum())
            projected.mean2d[row, axis] = original
            numeric[row, axis] = (plus - minus) / (2.0 * STEP)
    np.testing.assert_allclose(grads.signed_view2d[projected.source], numeric, rtol=1e-3, atol=1e-6)


def test_identity_view_gradient_is_position_gradient(identity_scene):
    cloud, view = identity_scene(7)
    grads = _analytic(cloud, view, _weights(7, view))
    np.testing.assert_array_equal(grads.d_positions[:, :2], grads.signed_view2d)
    assert np.all(grads.d_positions[:, 2] == 0.0)


def _assert_homodirectional_dominates(cloud, view, seed):
    grads = _analytic(cloud, view, _weights(seed, view))
    assert np.all(grads.homodir_view2d >= np.abs(grads.signed_view2d) - 1e-12)
    assert np.all(grads.homodir_norm >= grads.signed_norm - 1e-12)
    single = grads.footprint_pixels == 1
    np.testing.assert_allclose(grads.homodir_view2d[single], np.abs(grads.signed_view2d[single]), rtol=1e-12)
    return grads


@pytest.mark.parametrize("seed", range(5))
def test_homodirectional_dominates_signed(random_cloud, seed):
    _assert_homodirectional_dominates(random_cloud(seed, 50, 40, 36), ImagePlane(40, 36), seed)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5, 200))
def test_homodirectional_dominates_over_many_scenes(random_cloud, seed):
    width, height = 16 + (seed * 29) % 49, 16 + (seed * 41) % 49
    cloud = random_cloud(seed, 10 + (seed * 13) % 141, width, height, sh_degree=seed % 2)
    grads = _assert_homodirectional_dominates(cloud, ImagePlane(width, height), seed)
    assert grads.touched.any()


def test_single_pixel_footprint_has_no_cancellation(single_splat):
    cloud = single_splat((10.3, 5.0), 0.1, 0.008)
    view = ImagePlane(22, 11)
    grads = _analytic(cloud, view, _weights(0, view))
    assert grads.footprint_pixels[0] == 1
    assert grads.signed_view2d[0, 0] != 0.0
    np.testing.assert_array_equal(grads.homodir_view2d[0], np.abs(grads.signed_view2d[0]))


def test_symmetric_two_pixel_footprint_cancels_exactly(single_splat):
    cloud = single_splat((10.5, 5.0), 0.1, 0.02)
    view = ImagePlane(22, 11)
    grads = _analytic(cloud, view, np.ones((11, 22, 3)))
    assert grads.footprint_pixels[0] == 2
    assert grads.signed_view2d[0, 0] == 0.0
    assert grads.homodir_view2d[0, 0] > 0.0


def test_per_channel_abs_is_at_least_the_default(random_cloud):
    cloud = random_cloud(3, 30, 32, 32)
    view = ImagePlane(32, 32)
    weights = _weights(3, view)
    default = _analytic(cloud, view, weights)
    per_channel = _analytic(cloud, view, weights, per_channel_abs=True)
    assert np.all(per_channel.homodir_view2d >= default.homodir_view2d - 1e-12)
    np.testing.assert_array_equal(per_channel.signed_view2d, default.signed_view2d)


def test_gradients_scale_linearly(random_cloud):
    cloud = random_cloud(6, 30, 32, 24)
    view = ImagePlane(32, 24)
    weights = _weights(6, view)
    base = _analytic(cloud, view, weights)
    doubled = _analytic(cloud, view, 2.0 * weights)
    for field, values in base.parameter_gradients().items():
        np.testing.assert_array_equal(doubled.parameter_gradients()[field], 2.0 * values, err_msg=field)
    np.testing.assert_array_equal(doubled.homodir_view2d, 2.0 * base.homodir_view2d)


def test_capture_reconciles_with_backward(random_cloud):
    cloud = random_cloud(12, 30, 40, 40)
    view = ImagePlane(40, 40)
    weights = _weights(12, view)
    _, projected, artifacts = render_cloud(cloud, view)
    grads = backward(projected, artifacts, weights)
    target = int(np.argmax(grads.footprint_pixels))
    capture = capture_pixel_gradients(projected, artifacts, weights, target)
    assert capture.values.shape == (40, 40, 2)
    np.testing.assert_allclose(capture.signed_sum(), grads.signed_view2d[target], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(capture.absolute_sum(), grads.homodir_view2d[target], rtol=1e-9, atol=1e-12)
    assert capture.support().sum() <= grads.footprint_pixels[target]


def test_capture_of_invisible_gaussian(single_splat):
    cloud = single_splat((100.0, 100.0), 0.5, 0.5)
    view = ImagePlane(8, 8)
    _, projected, artifacts = render_cloud(cloud, view)
    with pytest.raises(GaussianNotInViewError):
        capture_pixel_gradients(projected, artifacts, np.ones((8, 8, 3)), 0)


def test_threads_do_not_change_gradients(random_cloud):
    cloud = random_cloud(13, 60, 50, 40)
    view = ImagePlane(50, 40)
    weights = _weights(13, view)
    _, projected, artifacts = render_cloud(cloud, view)
    single = backward(projected, artifacts, weights, threads=1)
    multi = backward(projected, artifacts, weights, threads=3)
    for field, values in single.parameter_gradients().items():
        assert np.array_equal(values, multi.parameter_gradients()[field])
    assert np.array_equal(single.homodir_view2d, multi.homodir_view2d)


def test_stale_artifacts_are_rejected(random_cloud):
    cloud = random_cloud(1, 10, 16, 16)
    _, projected, artifacts = render_cloud(cloud, ImagePlane(16, 16))
    smaller = project_identity(cloud.take(np.arange(9)), 16, 16)
    with pytest.raises(StaleArtifactsError):
        backward(smaller, artifacts, np.ones((16, 16, 3)))
    with pytest.raises(StaleArtifactsError):
        backward(projected, artifacts, np.ones((16, 16, 3)), ImagePlane(17, 16))


def test_projection_moved_after_render_is_rejected(random_cloud):
    cloud = random_cloud(2, 12, 16, 16)
    _, projected, artifacts = render_cloud(cloud, ImagePlane(16, 16))
    assert np.any(artifacts.final_transmittance < 1.0)
    backward(projected, artifacts, np.ones((16, 16, 3)))
    projected.mean2d[:] += 0.75
    with pytest.raises(StaleArtifactsError):
        backward(projected, artifacts, np.ones((16, 16, 3)))


def test_bad_image_gradient_is_rejected(random_cloud):
    cloud = random_cloud(1, 10, 16, 16)
    _, projected, artifacts = render_cloud(cloud, ImagePlane(16, 16))
    with pytest.raises(DimensionMismatchError):
        backward(projected, artifacts, np.ones((16, 15, 3)))
    bad = np.ones((16, 16, 3))
    bad[2, 3, 1] = np.nan
    with pytest.raises(NumericalError):
        backward(projected, artifacts, bad)


def test_untouched_gaussians_get_zero_gradient(single_splat):
    cloud = single_splat((-50.0, 4.0), 0.5, 0.5)
    grads = _analytic(cloud, ImagePlane(8, 8), np.ones((8, 8, 3)))
    assert not grads.touched[0]
    assert np.all(grads.d_positions == 0.0)


def test_ledger_accumulates_touched_views(single_splat):
    cloud = single_splat((10.3, 5.0), 0.1, 0.008)
    view = ImagePlane(22, 11)
    grads = _analytic(cloud, view, _weights(0, view))
    accumulate_ledger(cloud, grads)
    accumulate_ledger(cloud, grads, scale=2.0)
    ledger = cloud.ledger
    assert ledger.view_count[0] == 2
    assert ledger.signed_accum[0] == pytest.approx(3.0 * grads.signed_norm[0])
    assert ledger.homodir_accum[0] == pytest.approx(3.0 * grads.homodir_norm[0])
    assert ledger.max_screen_radius[0] == grads.screen_radius[0]

    with pytest.raises(StaleArtifactsError):
        accumulate_ledger(GaussianCloud.empty(), grads)


def test_gradient_scale():
    assert gradient_scale("pixel", 64, 32) == 1.0
    assert gradient_scale("ndc", 64, 32) == 32.0
