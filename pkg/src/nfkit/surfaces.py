"""Turn continuous fields back into discrete geometry.

Fields are torch callables (N, 3) -> (N,) scalars evaluated on a dense lattice
over [-1, 1]^3. SDF and occupancy fields go through marching cubes (levels 0
and 0.5); distance fields are thresholded into a point cloud.
"""

import numpy as np
import torch
from skimage import measure

from .errors import EmptySurfaceError, ValidationError
from .fields import FieldKind, PointCloud, TriangleMesh


def grid_coords(resolution: int) -> np.ndarray:
    """(R^3, 3) lattice over [-1, 1]^3, x-major (index [i, j, k] -> (x_i, y_j, z_k))."""
    if resolution < 2:
        raise ValidationError("resolution must be >= 2")
    axis = np.linspace(-1.0, 1.0, resolution)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


def eval_on_grid(field, resolution: int, chunk: int = 131072) -> np.ndarray:
    """Evaluate a scalar field on the lattice, returned as an (R, R, R) array."""
    coords = torch.from_numpy(grid_coords(resolution)).float()
    vals = np.empty(len(coords), dtype=np.float32)
    with torch.no_grad():
        for s in range(0, len(coords), chunk):
            out = field(coords[s : s + chunk])
            vals[s : s + len(out)] = out.reshape(-1).detach().cpu().numpy()
    if not np.isfinite(vals).all():
        raise ValidationError("field produced non-finite values on the grid")
    return vals.reshape(resolution, resolution, resolution)


def _marching_cubes(volume: np.ndarray, level: float) -> TriangleMesh:
    lo, hi = float(volume.min()), float(volume.max())
    if level <= lo or level >= hi:
        raise EmptySurfaceError(f"no crossing of level {level} (field range [{lo:.4g}, {hi:.4g}])")
    spacing = 2.0 / (volume.shape[0] - 1)
    try:
        verts, faces, _, _ = measure.marching_cubes(volume, level=level, spacing=(spacing,) * 3)
    except (ValueError, RuntimeError) as e:
        raise EmptySurfaceError(str(e)) from e
    if len(faces) == 0:
        raise EmptySurfaceError(f"no crossing of level {level}")
    return TriangleMesh(vertices=verts - 1.0, faces=faces)


def extract_surface(
    field,
    kind: FieldKind,
    resolution: int = 128,
    n_points: int = 8192,
    threshold: float = 0.01,
    seed: int = 0,
    chunk: int = 131072,
) -> TriangleMesh | PointCloud:
    """Extract geometry from a fitted or decoded field.

    SDF -> mesh at the zero level set; OF -> mesh at occupancy 0.5;
    UDF -> cloud of n_points sampled from lattice sites with distance below
    threshold. Raises EmptySurfaceError when the field never crosses the level.
    """
    kind = FieldKind(kind)
    if kind == FieldKind.RF:
        raise ValidationError("radiance fields are rendered, not surfaced")
    vol = eval_on_grid(field, resolution, chunk=chunk)
    if kind == FieldKind.SDF:
        return _marching_cubes(vol, 0.0)
    if kind == FieldKind.OF:
        return _marching_cubes(vol, 0.5)
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    mask = vol.reshape(-1) < threshold
    n_hit = int(mask.sum())
    if n_hit == 0:
        raise EmptySurfaceError(f"no lattice point below distance threshold {threshold}")
    sites = grid_coords(resolution)[mask]
    rng = np.random.default_rng(seed)
    picks = rng.choice(n_hit, size=n_points, replace=n_hit < n_points)
    return PointCloud(points=sites[picks])


def udf_resolution_for(n_points: int) -> int:
    """Lattice resolution whose near-surface site count comfortably covers n_points."""
    if n_points < 1:
        raise ValidationError("n_points must be >= 1")
    return max(32, int(np.ceil(4.0 * n_points ** (1.0 / 3.0))))
