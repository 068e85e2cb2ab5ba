"""Tile-based front-to-back alpha compositing plus a naive per-pixel oracle."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from hsplat.defaults import ALPHA_MAX, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN
from hsplat.errors import EmptyViewportError
from hsplat.render.projection import ProjectedGaussians, View, project_view

logger = logging.getLogger(__name__)


@dataclass
class RenderArtifacts:
    width: int
    height: int
    tile_size: int
    tiles_x: int
    tiles_y: int
    tile_ranges: np.ndarray
    contributors: np.ndarray
    final_transmittance: np.ndarray
    contributor_count: np.ndarray
    background: np.ndarray
    num_projected: int
    depth_order: np.ndarray

    @property
    def num_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_contributors(self, tile: int) -> np.ndarray:
        start, end = self.tile_ranges[tile]
        return self.contributors[start:end]

    def tile_pixels(self, tile: int) -> Tuple[np.ndarray, np.ndarray]:
        """Flattened (x, y) pixel coordinates of one tile, row-major."""
        tx, ty = tile % self.tiles_x, tile // self.tiles_x
        xs = np.arange(tx * self.tile_size, min(self.width, (tx + 1) * self.tile_size))
        ys = np.arange(ty * self.tile_size, min(self.height, (ty + 1) * self.tile_size))
        grid_x, grid_y = np.meshgrid(xs, ys)
        return grid_x.ravel(), grid_y.ravel()


@dataclass
class TileEvaluation:
    """Per-(contributor, pixel) quantities of one tile, shape (K, P)."""

    dx: np.ndarray
    dy: np.ndarray
    gaussian: np.ndarray
    alpha: np.ndarray
    blended: np.ndarray
    alpha_unclamped: np.ndarray
    transmittance: np.ndarray
    final_transmittance: np.ndarray


def check_viewport(width: int, height: int) -> None:
    if int(width) < 1 or int(height) < 1:
        raise EmptyViewportError()


def resolve_background(background) -> np.ndarray:
    if background is None:
        return np.zeros(3, dtype=np.float64)
    return np.asarray(background, dtype=np.float64).reshape(3)


def depth_order(projected: ProjectedGaussians) -> np.ndarray:
    """Global blending order: depth ascending, gaussian-id breaking ties."""
    return np.lexsort((projected.source, projected.depth))


def evaluate_tile(projected: ProjectedGaussians, ids: np.ndarray, px: np.ndarray, py: np.ndarray) -> TileEvaluation:
    """Alpha, blending masks and transmittance for ``ids`` (already depth-sorted)."""
    dx = projected.mean2d[ids, 0][:, None] - px[None, :]
    dy = projected.mean2d[ids, 1][:, None] - py[None, :]
    a = projected.conic[ids, 0][:, None]
    b = projected.conic[ids, 1][:, None]
    c = projected.conic[ids, 2][:, None]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    gaussian = np.where(power > 0.0, 0.0, np.exp(np.minimum(power, 0.0)))
    raw = projected.opacity[ids][:, None] * gaussian
    alpha = np.minimum(raw, ALPHA_MAX)
    visible = alpha >= ALPHA_MIN
    alpha = np.where(visible, alpha, 0.0)

    if ids.size:
        inclusive = np.cumprod(1.0 - alpha, axis=0)
    else:
        inclusive = np.ones((0, px.size))
    blended = visible & (inclusive >= TRANSMITTANCE_MIN)
    alpha = np.where(blended, alpha, 0.0)

    # Same products in the same order as the sequential loop.
    running = np.ones((ids.size + 1, px.size), dtype=np.float64)
    if ids.size:
        running[1:] = np.cumprod(1.0 - alpha, axis=0)
    return TileEvaluation(
        dx=dx,
        dy=dy,
        gaussian=gaussian,
        alpha=alpha,
        blended=blended,
        alpha_unclamped=blended & (raw < ALPHA_MAX),
        transmittance=running[:-1],
        final_transmittance=running[-1],
    )


def run_tiles(worker: Callable[[int], object], num_tiles: int, threads: int = 1) -> List[object]:
    """Map ``worker`` over tiles; results come back in tile order."""
    if threads <= 1 or num_tiles <= 1:
        return [worker(tile) for tile in range(num_tiles)]
    with ThreadPoolExecutor(max_workers=int(threads), thread_name_prefix="hsplat-tile") as executor:
        return list(executor.map(worker, range(num_tiles)))


def bin_tiles(projected: ProjectedGaussians, width: int, height: int, tile_size: int = TILE_SIZE):
    """Duplicate each footprint into every tile it overlaps, sorted by (tile, depth)."""
    tiles_x = (int(width) + tile_size - 1) // tile_size
    tiles_y = (int(height) + tile_size - 1) // tile_size
    num_tiles = tiles_x * tiles_y
    order = depth_order(projected)
    if order.size == 0:
        return order, np.zeros(0, dtype=np.int64), np.zeros((num_tiles, 2), dtype=np.int64), tiles_x, tiles_y

    rect = projected.pixel_rect[order]
    tx0, ty0 = rect[:, 0] // tile_size, rect[:, 1] // tile_size
    tx1, ty1 = rect[:, 2] // tile_size, rect[:, 3] // tile_size
    span_x = tx1 - tx0 + 1
    span_y = ty1 - ty0 + 1
    counts = span_x * span_y
    rank = np.repeat(np.arange(order.size), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(rank.size) - offsets
    tile_x = tx0[rank] + local % span_x[rank]
    tile_y = ty0[rank] + local // span_x[rank]
    tile_id = tile_y * tiles_x + tile_x

    sort = np.lexsort((rank, tile_id))
    tile_id = tile_id[sort]
    contributors = order[rank[sort]]
    starts = np.searchsorted(tile_id, np.arange(num_tiles), side="left")
    ends = np.searchsorted(tile_id, np.arange(num_tiles), side="right")
    return order, contributors, np.stack([starts, ends], axis=1), tiles_x, tiles_y


def render(
    projected: ProjectedGaussians,
    width: int,
    height: int,
    background=None,
    *,
    threads: int = 1,
    tile_size: int = TILE_SIZE,
) -> Tuple[np.ndarray, RenderArtifacts]:
    """Composite ``projected`` into an (H, W, 3) float64 image."""
    check_viewport(width, height)
    width, height = int(width), int(height)
    bg = resolve_background(background)
    order, contributors, tile_ranges, tiles_x, tiles_y = bin_tiles(projected, width, height, tile_size)
    artifacts = RenderArtifacts(
        width=width,
        height=height,
        tile_size=tile_size,
        tiles_x=tiles_x,
        tiles_y=tiles_y,
        tile_ranges=tile_ranges,
        contributors=contributors,
        final_transmittance=np.ones((height, width), dtype=np.float64),
        contributor_count=np.zeros((height, width), dtype=np.int64),
        background=bg,
        num_projected=len(projected),
        depth_order=order,
    )

    def render_tile(tile: int):
        px, py = artifacts.tile_pixels(tile)
        ids = artifacts.tile_contributors(tile)
        ev = evaluate_tile(projected, ids, px, py)
        weights = ev.alpha * ev.transmittance
        color = (weights[:, :, None] * projected.rgb[ids][:, None, :]).sum(axis=0)
        color = color + ev.final_transmittance[:, None] * bg[None, :]
        return px, py, color, ev.final_transmittance, ev.blended.sum(axis=0)

    image = np.empty((height, width, 3), dtype=np.float64)
    for px, py, color, final_t, count in run_tiles(render_tile, artifacts.num_tiles, threads):
        image[py, px] = color
        artifacts.final_transmittance[py, px] = final_t
        artifacts.contributor_count[py, px] = count
    return image, artifacts


def render_naive(projected: ProjectedGaussians, width: int, height: int, background=None) -> np.ndarray:
    """Reference renderer: one pass over the global depth order, all pixels at once."""
    check_viewport(width, height)
    width, height = int(width), int(height)
    bg = resolve_background(background)
    grid_x, grid_y = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    px, py = grid_x.ravel(), grid_y.ravel()
    color = np.zeros((px.size, 3), dtype=np.float64)
    transmittance = np.ones(px.size, dtype=np.float64)
    done = np.zeros(px.size, dtype=bool)
    for row in depth_order(projected):
        dx = projected.mean2d[row, 0] - px
        dy = projected.mean2d[row, 1] - py
        a, b, c = projected.conic[row]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        gaussian = np.where(power > 0.0, 0.0, np.exp(np.minimum(power, 0.0)))
        alpha = np.minimum(projected.opacity[row] * gaussian, ALPHA_MAX)
        visible = (alpha >= ALPHA_MIN) & ~done
        test_t = transmittance * (1.0 - alpha)
        stop = visible & (test_t < TRANSMITTANCE_MIN)
        done |= stop
        blend = visible & ~stop
        color += np.where(blend[:, None], projected.rgb[row][None, :] * (alpha * transmittance)[:, None], 0.0)
        transmittance = np.where(blend, test_t, transmittance)
    color += transmittance[:, None] * bg[None, :]
    return color.reshape(height, width, 3)


def blend_weights(projected: ProjectedGaussians, artifacts: RenderArtifacts, x: int, y: int):
    """Blending weights of every contributor at one pixel, in blend order."""
    tile = (y // artifacts.tile_size) * artifacts.tiles_x + (x // artifacts.tile_size)
    ids = artifacts.tile_contributors(tile)
    ev = evaluate_tile(projected, ids, np.array([float(x)]), np.array([float(y)]))
    weights = (ev.alpha * ev.transmittance)[:, 0]
    return ids, weights, float(ev.final_transmittance[0])


def render_cloud(cloud, view: View, background=None, threads: int = 1):
    """Project and render in one call; returns (image, projected, artifacts)."""
    projected = project_view(cloud, view)
    image, artifacts = render(projected, view.width, view.height, background, threads=threads)
    return image, projected, artifacts
