"""Binary PLY in the 3D-GS vertex layout."""

import logging
from typing import List, Optional

import numpy as np
from plyfile import PlyData, PlyElement

from hsplat.defaults import MAX_SH_DEGREE
from hsplat.errors import PlyFormatError
from hsplat.gaussians import GaussianCloud, num_sh_coeffs
from hsplat.utils.file_io import ensure_parent

logger = logging.getLogger(__name__)


def attribute_names(sh_degree: int) -> List[str]:
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (num_sh_coeffs(sh_degree) - 1))]
    names.append("opacity")
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def _degree_from_rest(rest_count: int) -> int:
    for degree in range(MAX_SH_DEGREE + 1):
        if 3 * (num_sh_coeffs(degree) - 1) == rest_count:
            return degree
    raise PlyFormatError(f"{rest_count} f_rest attributes match no sh degree")


def save_ply(cloud: GaussianCloud, path: str) -> None:
    count = len(cloud)
    coeffs = cloud.color_coeffs.astype(np.float32)
    f_dc = coeffs[:, 0, :]
    # Channel-major rest coefficients, as the reference viewers expect.
    f_rest = np.transpose(coeffs[:, 1:, :], (0, 2, 1)).reshape(count, -1)
    columns = np.concatenate(
        (
            cloud.positions.astype(np.float32),
            np.zeros((count, 3), dtype=np.float32),
            f_dc,
            f_rest,
            cloud.opacity_logits.astype(np.float32)[:, None],
            cloud.log_scales.astype(np.float32),
            cloud.rotations.astype(np.float32),
        ),
        axis=1,
    )
    names = attribute_names(cloud.sh_degree)
    elements = np.empty(count, dtype=[(name, "f4") for name in names])
    for index, name in enumerate(names):
        elements[name] = columns[:, index]
    ensure_parent(path)
    PlyData([PlyElement.describe(elements, "vertex")], text=False, byte_order="<").write(path)
    logger.debug("Wrote %d gaussians to %s", count, path)


def load_ply(path: str, *, sh_degree: Optional[int] = None) -> GaussianCloud:
    """Read a splat PLY; raises PlyFormatError rather than returning a partial cloud."""
    try:
        data = PlyData.read(path)
        vertex = data["vertex"]
        names = [prop.name for prop in vertex.properties]
        columns = {name: np.asarray(vertex[name]) for name in names}
    except PlyFormatError:
        raise
    except Exception as exc:
        raise PlyFormatError(f"malformed ply {path}: {exc}") from exc

    rest_names = [name for name in names if name.startswith("f_rest_")]
    degree = _degree_from_rest(len(rest_names))
    if sh_degree is not None and int(sh_degree) != degree:
        raise PlyFormatError(
            f"ply {path} carries sh degree {degree} ({len(rest_names)} f_rest attributes), expected {sh_degree}"
        )
    required = [name for name in attribute_names(degree) if name not in ("nx", "ny", "nz")]
    missing = [name for name in required if name not in columns]
    if missing:
        raise PlyFormatError(f"ply {path} is missing attributes: {', '.join(missing)}")

    def stack(keys):
        return np.stack([columns[key].astype(np.float32) for key in keys], axis=1)

    count = len(columns["x"])
    rest_count = num_sh_coeffs(degree) - 1
    coeffs = np.zeros((count, num_sh_coeffs(degree), 3), dtype=np.float32)
    coeffs[:, 0, :] = stack([f"f_dc_{i}" for i in range(3)])
    if rest_count:
        rest = stack([f"f_rest_{i}" for i in range(3 * rest_count)]).reshape(count, 3, rest_count)
        coeffs[:, 1:, :] = np.transpose(rest, (0, 2, 1))
    return GaussianCloud.create(
        positions=stack(["x", "y", "z"]),
        log_scales=stack([f"scale_{i}" for i in range(3)]),
        rotations=stack([f"rot_{i}" for i in range(4)]),
        opacity_logits=columns["opacity"].astype(np.float32),
        color_coeffs=coeffs,
        sh_degree=degree,
    )
