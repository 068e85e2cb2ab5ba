"""Camera JSON files: a list of pinhole cameras with row-major world-to-camera."""

import logging
import os
from typing import Any, Dict, List, Sequence

import numpy as np

from hsplat.errors import CameraError
from hsplat.render.projection import Camera
from hsplat.utils.file_io import read_json, write_json

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("width", "height", "fx", "fy", "cx", "cy", "world_to_camera")


def camera_from_dict(entry: Dict[str, Any], *, base_dir: str = "", index: int = 0) -> Camera:
    missing = [key for key in REQUIRED_KEYS if key not in entry]
    if missing:
        raise CameraError(f"camera {entry.get('id', index)} is missing {', '.join(missing)}")
    image_path = entry.get("image_path")
    if image_path and base_dir and not os.path.isabs(image_path):
        image_path = os.path.join(base_dir, image_path)
    matrix = np.asarray(entry["world_to_camera"], dtype=np.float64)
    if matrix.size != 16:
        raise CameraError(f"camera {entry.get('id', index)}: world_to_camera must have 16 numbers")
    try:
        return Camera(
            world_to_camera=matrix.reshape(4, 4),
            fx=float(entry["fx"]),
            fy=float(entry["fy"]),
            cx=float(entry["cx"]),
            cy=float(entry["cy"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
            near=float(entry.get("near", 0.2)),
            camera_id=int(entry.get("id", index)),
            image_path=image_path,
        )
    except (TypeError, ValueError) as exc:
        raise CameraError(f"camera {entry.get('id', index)}: {exc}") from exc


def camera_to_dict(camera: Camera) -> Dict[str, Any]:
    entry = {
        "id": int(camera.camera_id),
        "width": int(camera.width),
        "height": int(camera.height),
        "fx": float(camera.fx),
        "fy": float(camera.fy),
        "cx": float(camera.cx),
        "cy": float(camera.cy),
        "near": float(camera.near),
        "world_to_camera": [float(v) for v in camera.world_to_camera.reshape(-1)],
    }
    if camera.image_path:
        entry["image_path"] = camera.image_path
    return entry


def load_cameras(path: str) -> List[Camera]:
    entries = read_json(path)
    if not isinstance(entries, list) or not entries:
        raise CameraError(f"camera file {path} must hold a non-empty JSON array")
    base_dir = os.path.dirname(os.path.abspath(path))
    cameras = [camera_from_dict(entry, base_dir=base_dir, index=i) for i, entry in enumerate(entries)]
    logger.info("Loaded %d cameras from %s", len(cameras), path)
    return cameras


def save_cameras(path: str, cameras: Sequence[Camera]) -> None:
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    for camera in cameras:
        entry = camera_to_dict(camera)
        if camera.image_path and os.path.isabs(camera.image_path):
            entry["image_path"] = os.path.relpath(camera.image_path, base_dir)
        entries.append(entry)
    write_json(path, entries, sort_keys=False)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera matrix for a camera at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    matrix = np.eye(4)
    matrix[:3, :3] = rotation
    matrix[:3, 3] = -rotation @ eye
    return matrix


def scene_extent(cameras: Sequence[Camera]) -> float:
    """Camera-centre bounding radius, enlarged by 10%."""
    centers = np.stack([camera.center for camera in cameras])
    mean = centers.mean(axis=0)
    radius = float(np.max(np.linalg.norm(centers - mean, axis=1)))
    return radius * 1.1 if radius > 0 else 1.0
