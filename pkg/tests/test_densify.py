import json
import math

import numpy as np
import pytest

from hsplat.errors import ConfigError
from hsplat.gaussians import GaussianCloud, concat_clouds, covariances_from_params
from hsplat.render.backward import accumulate_ledger, backward
from hsplat.render.projection import ImagePlane, project_identity
from hsplat.render.rasterizer import render_cloud, render_naive
from hsplat.services.densify import (
    DensifyConfig,
    apply,
    average_gradients,
    prune_mask,
    reset_opacity,
    select,
    selection_mask,
)


def _logit(p):
    return math.log(p / (1.0 - p))


@pytest.fixture()
def labelled_cloud():
    """Six Gaussians, one per selection outcome."""
    scales = [0.005, 0.05, 0.05, 0.005, 0.05, 0.05]
    cloud = GaussianCloud.create(
        positions=np.arange(18.0).reshape(6, 3),
        log_scales=np.log(np.repeat(np.array(scales)[:, None], 3, axis=1)),
        opacity_logits=[_logit(0.5)] * 4 + [_logit(0.001), _logit(0.5)],
        dtype=np.float64,
    )
    cloud.ledger.signed_accum[:] = [0.001, 0.001, 0.0001, 0.0001, 0.001, 0.0]
    cloud.ledger.homodir_accum[:] = [0.001, 0.001, 0.001, 0.001, 0.001, 0.0]
    cloud.ledger.view_count[:] = [1, 1, 1, 1, 1, 0]
    return cloud


def test_clone_split_and_prune_sets(labelled_cloud):
    baseline = select(labelled_cloud, DensifyConfig(strategy="baseline"))
    absolute = select(labelled_cloud, DensifyConfig(strategy="abs"))
    np.testing.assert_array_equal(baseline.clone_ids, [0])
    np.testing.assert_array_equal(baseline.split_ids, [1])
    np.testing.assert_array_equal(baseline.pruned_ids, [4])
    np.testing.assert_array_equal(absolute.clone_ids, [0])
    np.testing.assert_array_equal(absolute.split_ids, [1, 2])
    assert absolute.counts() == {"split": 2, "clone": 1, "pruned": 1, "gaussians": 6}
    np.testing.assert_array_equal(absolute.selected_ids, [0, 1, 2])


def test_selection_is_a_pure_read(labelled_cloud):
    before = labelled_cloud.copy()
    select(labelled_cloud, DensifyConfig(strategy="abs"))
    np.testing.assert_array_equal(labelled_cloud.ledger.signed_accum, before.ledger.signed_accum)
    np.testing.assert_array_equal(labelled_cloud.positions, before.positions)


def _assert_baseline_within_abs(seed, count):
    rng = np.random.default_rng(seed)
    cloud = GaussianCloud.create(
        positions=rng.normal(size=(count, 3)),
        log_scales=np.log(rng.uniform(0.001, 0.05, size=(count, 3))),
        opacity_logits=rng.uniform(-6.0, 3.0, size=count),
    )
    signed = rng.uniform(0.0, 0.001, size=count)
    cloud.ledger.signed_accum[:] = signed
    cloud.ledger.homodir_accum[:] = signed + rng.uniform(0.0, 0.001, size=count)
    cloud.ledger.view_count[:] = rng.integers(0, 3, size=count)
    baseline = select(cloud, DensifyConfig(strategy="baseline"))
    absolute = select(cloud, DensifyConfig(strategy="abs"))
    assert set(baseline.split_ids) <= set(absolute.split_ids)
    np.testing.assert_array_equal(baseline.clone_ids, absolute.clone_ids)


@pytest.mark.parametrize("seed", range(5))
def test_baseline_split_set_is_within_abs(seed):
    _assert_baseline_within_abs(seed, 300)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_baseline_split_set_is_within_abs_on_rendered_ledgers(random_cloud, seed):
    width, height = 24 + seed % 17, 20 + seed % 23
    cloud = random_cloud(seed, 30 + seed % 71, width, height)
    view = ImagePlane(width, height)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        _, projected, artifacts = render_cloud(cloud, view)
        grads = backward(projected, artifacts, rng.normal(size=(height, width, 3)))
        accumulate_ledger(cloud, grads)
    avg_signed, _ = average_gradients(cloud.ledger)
    tau_p = float(np.median(avg_signed[avg_signed > 0.0]))
    extent = float(np.median(cloud.scales.max(axis=1))) / 0.01
    baseline = select(cloud, DensifyConfig(strategy="baseline", tau_p=tau_p), scene_extent=extent)
    absolute = select(cloud, DensifyConfig(strategy="abs", tau_p=tau_p), scene_extent=extent)
    assert set(baseline.split_ids) <= set(absolute.split_ids)
    np.testing.assert_array_equal(baseline.clone_ids, absolute.clone_ids)


def test_empty_ledger_selects_nothing():
    cloud = GaussianCloud.create(positions=np.zeros((4, 3)), log_scales=np.full((4, 3), -1.0))
    report = select(cloud, DensifyConfig(strategy="abs"))
    assert report.split_ids.size == 0
    assert report.clone_ids.size == 0
    avg_signed, avg_abs = average_gradients(cloud.ledger)
    assert np.all(avg_signed == 0.0) and np.all(avg_abs == 0.0)


def test_huge_threshold_selects_nothing(labelled_cloud):
    report = select(labelled_cloud, DensifyConfig(strategy="abs", tau_p=1e9))
    assert report.split_ids.size == 0
    assert report.clone_ids.size == 0


def test_apply_row_order(labelled_cloud):
    config = DensifyConfig(strategy="baseline")
    old = labelled_cloud.copy()
    report = select(labelled_cloud, config)
    mapping = apply(labelled_cloud, report, config, seed=3)

    np.testing.assert_array_equal(mapping.survivors, [0, 2, 3, 5])
    assert mapping.num_new == 3
    assert mapping.num_after == len(labelled_cloud) == 7
    np.testing.assert_array_equal(labelled_cloud.positions[:4], old.positions[[0, 2, 3, 5]])
    np.testing.assert_array_equal(labelled_cloud.positions[4], old.positions[0])
    np.testing.assert_allclose(labelled_cloud.log_scales[5:], old.log_scales[[1, 1]] - math.log(1.6))
    np.testing.assert_array_equal(labelled_cloud.opacity_logits[5:], old.opacity_logits[[1, 1]])
    assert np.all(labelled_cloud.ledger.view_count == 0)
    assert np.all(labelled_cloud.ledger.homodir_accum == 0.0)


def test_apply_rejects_foreign_report(labelled_cloud):
    config = DensifyConfig()
    report = select(labelled_cloud, config)
    with pytest.raises(ConfigError):
        apply(labelled_cloud.take([0, 1]), report, config)


def test_split_children_follow_parent_distribution():
    count = 4000
    quat = np.array([0.8, 0.2, -0.3, 0.4])
    log_scales = np.log([0.1, 0.2, 0.3])
    cloud = GaussianCloud.create(
        positions=np.tile([1.0, 2.0, 3.0], (count, 1)),
        log_scales=np.tile(log_scales, (count, 1)),
        rotations=np.tile(quat, (count, 1)),
        dtype=np.float64,
    )
    cloud.ledger.signed_accum[:] = 1.0
    cloud.ledger.view_count[:] = 1
    config = DensifyConfig()
    report = select(cloud, config)
    assert report.split_ids.size == count
    apply(cloud, report, config, seed=0)

    assert len(cloud) == 2 * count
    offsets = cloud.positions - np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(offsets.mean(axis=0), 0.0, atol=0.015)
    expected = covariances_from_params(log_scales, quat)[0]
    np.testing.assert_allclose(np.cov(offsets.T), expected, atol=0.01)


def test_split_is_reproducible_for_a_seed(labelled_cloud):
    config = DensifyConfig(strategy="abs")
    first, second, third = labelled_cloud.copy(), labelled_cloud.copy(), labelled_cloud.copy()
    for cloud, seed in ((first, 5), (second, 5), (third, 6)):
        apply(cloud, select(cloud, config), config, seed=seed)
    assert np.array_equal(first.positions, second.positions)
    assert not np.array_equal(first.positions, third.positions)


def test_size_guards_prune_oversized_gaussians():
    cloud = GaussianCloud.create(positions=np.zeros((2, 3)), log_scales=np.log([[0.5] * 3, [0.01] * 3]))
    cloud.ledger.max_screen_radius[:] = [1.0, 500.0]
    config = DensifyConfig()
    late = config.opacity_reset_interval + 1
    guarded = select(cloud, config, iteration=late, image_size=(640, 480))
    np.testing.assert_array_equal(guarded.pruned_ids, [0, 1])
    early = select(cloud, config, iteration=10, image_size=(640, 480))
    assert early.pruned_ids.size == 0
    unguarded = select(cloud, config, iteration=late, image_size=(640, 480), size_guards=False)
    assert unguarded.pruned_ids.size == 0


def test_reset_opacity_only_lowers():
    cloud = GaussianCloud.create(positions=np.zeros((2, 3)), log_scales=np.zeros((2, 3)), opacity_logits=[4.0, -8.0])
    reset_opacity(cloud, 0.01)
    assert cloud.opacities[0] == pytest.approx(0.01, rel=1e-5)
    assert cloud.opacity_logits[1] == -8.0


@pytest.mark.parametrize(
    "changes",
    [{"strategy": "both"}, {"tau_p": 0.0}, {"tau_s": -1.0}, {"split_count": 1}, {"prune_opacity": 1.0}],
)
def test_invalid_config(changes):
    with pytest.raises(ConfigError):
        DensifyConfig(**changes)


def test_report_serialises(labelled_cloud):
    report = select(labelled_cloud, DensifyConfig(strategy="abs"))
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload["counts"]["split"] == 2
    assert payload["strategy"] == "abs"


def test_selection_mask_highlights_selected(single_splat):
    cloud = single_splat((4.0, 4.0), 1.5, 0.9, rgb=(0.2, 0.2, 0.2))
    cloud.ledger.signed_accum[:] = 1.0
    cloud.ledger.view_count[:] = 1
    report = select(cloud, DensifyConfig(), scene_extent=1.0)
    assert report.split_ids.size == 1
    image = selection_mask(report, cloud, ImagePlane(9, 9))
    assert image[4, 4, 0] > 0.8
    dimmed = selection_mask(report, cloud, ImagePlane(9, 9), which="clone")
    assert dimmed[4, 4, 0] < 0.1


def test_clone_composites_the_parent_twice(single_splat):
    cloud = single_splat((4.0, 4.0), 1.5, 0.6, rgb=(0.9, 0.3, 0.1))
    cloud.ledger.signed_accum[:] = 1.0
    cloud.ledger.view_count[:] = 1
    config = DensifyConfig()
    report = select(cloud, config, scene_extent=1000.0)
    np.testing.assert_array_equal(report.clone_ids, [0])
    apply(cloud, report, config)
    assert len(cloud) == 2

    background = np.array([0.1, 0.2, 0.3])
    image, _, _ = render_cloud(cloud, ImagePlane(9, 9), background=background)
    rgb = np.array([0.9, 0.3, 0.1])
    # alpha 0.6 at the centre, composited twice
    np.testing.assert_allclose(image[4, 4], rgb * (1.0 - 0.4**2) + background * 0.4**2, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_clone_render_matches_duplicated_composite(random_cloud, seed):
    width, height = 32, 28
    cloud = random_cloud(seed, 40, width, height)
    original = cloud.copy()
    target = int(np.argmax(cloud.opacities))
    cloud.ledger.view_count[:] = 1
    cloud.ledger.signed_accum[target] = 1.0
    config = DensifyConfig()
    report = select(cloud, config, scene_extent=1.0e6)
    np.testing.assert_array_equal(report.clone_ids, [target])
    assert report.split_ids.size == 0 and report.pruned_ids.size == 0
    apply(cloud, report, config, seed=seed)

    duplicated = concat_clouds(original, original.take([target]))
    np.testing.assert_array_equal(cloud.positions, duplicated.positions)
    background = (0.1, 0.3, 0.2)
    image, _, _ = render_cloud(cloud, ImagePlane(width, height), background=background)
    expected = render_naive(project_identity(duplicated, width, height), width, height, background)
    np.testing.assert_allclose(image, expected, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_prune_removes_only_faint_or_oversized(seed):
    rng = np.random.default_rng(seed)
    count = 400
    scales = rng.uniform(0.001, 0.3, size=(count, 3))
    cloud = GaussianCloud.create(
        positions=rng.normal(size=(count, 3)),
        log_scales=np.log(scales),
        opacity_logits=rng.uniform(-8.0, 4.0, size=count),
        dtype=np.float64,
    )
    cloud.ledger.max_screen_radius[:] = rng.uniform(0.0, 200.0, size=count)
    config = DensifyConfig()
    extent, image_size = 2.0, (320, 240)
    faint = cloud.opacities < config.prune_opacity
    oversized = (cloud.scales.max(axis=1) > config.max_world_fraction * extent) | (
        cloud.ledger.max_screen_radius > config.max_screen_fraction * 320
    )
    assert faint.any() and (oversized & ~faint).any()

    for iteration in (None, 1, config.opacity_reset_interval):
        mask = prune_mask(cloud, config, extent, iteration=iteration, image_size=image_size)
        np.testing.assert_array_equal(mask, faint)
    late = prune_mask(cloud, config, extent, iteration=config.opacity_reset_interval + 1, image_size=image_size)
    np.testing.assert_array_equal(late, faint | oversized)

    report = select(
        cloud, config, scene_extent=extent, iteration=config.opacity_reset_interval + 1, image_size=image_size
    )
    mapping = apply(cloud, report, config)
    np.testing.assert_array_equal(mapping.survivors, np.nonzero(~(faint | oversized))[0])
    assert mapping.num_new == 0
