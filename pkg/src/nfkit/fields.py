"""Field kinds, discrete shape containers, analytic fields, and ground-truth field evaluation.

A field maps 3D points inside [-1, 1]^3 to either a scalar (distance / signed
distance / occupancy) or to rgb + density. Ground-truth evaluators here are
supervision oracles: they accept numpy arrays or torch tensors of shape (N, 3)
and return values of the same array library (no gradients flow through them).
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import ValidationError


class FieldKind(str, enum.Enum):
    UDF = "udf"
    SDF = "sdf"
    OF = "of"
    RF = "rf"


SCALAR_KINDS = (FieldKind.UDF, FieldKind.SDF, FieldKind.OF)


# ---------------------------------------------------------------------------
# discrete shape containers
# ---------------------------------------------------------------------------


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int, indices into vertices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValidationError("face indices out of range")

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float
    part_labels: np.ndarray | None = None  # (N,) int, optional per-point part ids

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValidationError(f"points must be (N, 3), got {self.points.shape}")
        if self.part_labels is not None:
            self.part_labels = np.asarray(self.part_labels, dtype=np.int64)
            if self.part_labels.shape != (len(self.points),):
                raise ValidationError("part_labels must be one int per point")


@dataclass
class VoxelGrid:
    """Cubic occupancy grid over [-1, 1]^3; cell [i, j, k] covers an axis-aligned box."""

    occupancy: np.ndarray  # (R, R, R) bool

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy).astype(bool)
        s = self.occupancy.shape
        if self.occupancy.ndim != 3 or not (s[0] == s[1] == s[2]):
            raise ValidationError(f"occupancy must be cubic (R, R, R), got {s}")

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]


@dataclass
class CameraPose:
    """Pinhole camera: intrinsics plus a camera-to-world transform.

    c2w is a (3, 4) row-major matrix [R | t]; the camera looks along its -z
    axis, x to the right, y up. R must be orthonormal.
    """

    focal: float
    width: int
    height: int
    c2w: np.ndarray

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (3, 4):
            raise ValidationError(f"c2w must be (3, 4), got {self.c2w.shape}")
        if self.focal <= 0 or self.width <= 0 or self.height <= 0:
            raise ValidationError("focal, width, height must be positive")
        r = self.c2w[:, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise ValidationError("camera rotation is not orthonormal (tol 1e-5)")

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:, 3]


@dataclass
class MultiViewSet:
    """Posed RGBA renders of one object; alpha marks foreground pixels."""

    images: np.ndarray  # (V, H, W, 4) float32 in [0, 1]
    poses: list[CameraPose]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[3] != 4:
            raise ValidationError(f"images must be (V, H, W, 4), got {self.images.shape}")
        if len(self.poses) != len(self.images):
            raise ValidationError("one pose per image required")
        v, h, w, _ = self.images.shape
        for p in self.poses:
            if (p.height, p.width) != (h, w):
                raise ValidationError("pose resolution does not match images")
        if self.images.min() < 0 or self.images.max() > 1:
            raise ValidationError("image values must lie in [0, 1]")


DiscreteShape = TriangleMesh | PointCloud | VoxelGrid | MultiViewSet


@dataclass(frozen=True)
class ScaleCenter:
    """Normalization p -> (p - center) / scale mapping a shape into [-1, 1]^3."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.center)


def fit_unit_cube_norm(points: np.ndarray, margin: float = 0.05) -> ScaleCenter:
    """Normalization placing the bounding box of `points` inside [-1, 1]^3."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValidationError("cannot normalize an empty point set")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    half = float((hi - lo).max()) / 2.0
    scale = half / (1.0 - margin) if half > 0 else 1.0
    return ScaleCenter(center=tuple(center), scale=scale)


# ---------------------------------------------------------------------------
# numpy/torch bridging
# ---------------------------------------------------------------------------


def _to_numpy(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64), True
    return np.asarray(x, dtype=np.float64), False


def _like_input(values: np.ndarray, was_torch: bool):
    if was_torch:
        return torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32))
    return values


def _check_points(points: np.ndarray):
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValidationError(f"expected points of shape (N, 3), got {points.shape}")


# ---------------------------------------------------------------------------
# analytic fields (exact signed distances)
# ---------------------------------------------------------------------------


def sdf_sphere(points, radius: float, clamp_delta: float | None = None):
    if radius <= 0:
        raise ValidationError("radius must be positive")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    d = np.linalg.norm(pts, axis=-1) - radius
    return _like_input(_maybe_clamp(d, clamp_delta), was_torch)


def sdf_box(points, half_extents, clamp_delta: float | None = None):
    he = np.asarray(half_extents, dtype=np.float64).reshape(3)
    if (he <= 0).any():
        raise ValidationError("half_extents must be positive")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    q = np.abs(pts) - he
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return _like_input(_maybe_clamp(outside + inside, clamp_delta), was_torch)


def sdf_torus(points, major_radius: float, minor_radius: float, clamp_delta: float | None = None):
    if major_radius <= 0 or minor_radius <= 0:
        raise ValidationError("radii must be positive")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    ring = np.hypot(np.hypot(pts[:, 0], pts[:, 2]) - major_radius, pts[:, 1])
    return _like_input(_maybe_clamp(ring - minor_radius, clamp_delta), was_torch)


def sdf_cylinder(points, radius: float, half_height: float, clamp_delta: float | None = None):
    if radius <= 0 or half_height <= 0:
        raise ValidationError("radius and half_height must be positive")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    dr = np.hypot(pts[:, 0], pts[:, 2]) - radius
    dh = np.abs(pts[:, 1]) - half_height
    outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dh, 0.0))
    inside = np.minimum(np.maximum(dr, dh), 0.0)
    return _like_input(_maybe_clamp(outside + inside, clamp_delta), was_torch)


def sdf_capsule(points, half_length: float, radius: float, clamp_delta: float | None = None):
    """Capsule along the y axis: segment of half-length plus rounded caps."""
    if half_length <= 0 or radius <= 0:
        raise ValidationError("half_length and radius must be positive")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    y = np.clip(pts[:, 1], -half_length, half_length)
    seg = pts.copy()
    seg[:, 1] -= y
    return _like_input(_maybe_clamp(np.linalg.norm(seg, axis=-1) - radius, clamp_delta), was_torch)


def _maybe_clamp(values: np.ndarray, clamp_delta: float | None) -> np.ndarray:
    if clamp_delta is None:
        return values
    if clamp_delta <= 0:
        raise ValidationError("clamp_delta must be positive")
    return np.clip(values, -clamp_delta, clamp_delta)


# ---------------------------------------------------------------------------
# ground-truth evaluation against discrete shapes
# ---------------------------------------------------------------------------


def udf_from_pointcloud(points, cloud: PointCloud, clamp_delta: float | None = None):
    """Distance from each query point to its nearest cloud point. Always >= 0."""
    if len(cloud.points) == 0:
        raise ValidationError("point cloud is empty")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    dist, _ = cKDTree(cloud.points).query(pts, k=1)
    if clamp_delta is not None:
        if clamp_delta <= 0:
            raise ValidationError("clamp_delta must be positive")
        dist = np.minimum(dist, clamp_delta)
    return _like_input(dist, was_torch)


def occupancy_from_voxels(points, grid: VoxelGrid):
    """1.0 where the containing voxel is occupied, else 0.0; 0.0 outside [-1, 1]^3."""
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    r = grid.resolution
    inside = (np.abs(pts) <= 1.0).all(axis=-1)
    # cell index along each axis; points exactly at +1 fall into the last cell
    idx = np.clip(((pts + 1.0) * 0.5 * r).astype(np.int64), 0, r - 1)
    vals = np.zeros(len(pts), dtype=np.float64)
    if inside.any():
        ii = idx[inside]
        vals[inside] = grid.occupancy[ii[:, 0], ii[:, 1], ii[:, 2]].astype(np.float64)
    return _like_input(vals, was_torch)


def sdf_from_mesh(points, mesh: TriangleMesh, clamp_delta: float | None = None):
    """Exact distance to the mesh surface, negative inside (parity ray test).

    The mesh must be watertight for the sign to be meaningful.
    """
    if len(mesh.faces) == 0:
        raise ValidationError("mesh has no faces")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    tris = mesh.triangles()
    dist = np.sqrt(_min_sq_dist_to_triangles(pts, tris))
    signs = np.where(_parity_inside(pts, tris), -1.0, 1.0)
    return _like_input(_maybe_clamp(signs * dist, clamp_delta), was_torch)


def udf_from_mesh(points, mesh: TriangleMesh, clamp_delta: float | None = None):
    if len(mesh.faces) == 0:
        raise ValidationError("mesh has no faces")
    pts, was_torch = _to_numpy(points)
    _check_points(pts)
    dist = np.sqrt(_min_sq_dist_to_triangles(pts, mesh.triangles()))
    if clamp_delta is not None:
        dist = np.minimum(dist, clamp_delta)
    return _like_input(dist, was_torch)


def _chunk_rows(n_rows: int, n_triangles: int, budget: int = 1_000_000) -> int:
    return max(1, min(n_rows, budget // max(1, n_triangles)))


def _min_sq_dist_to_triangles(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Squared distance from each point to the closest triangle (Ericson's region test)."""
    out = np.empty(len(pts), dtype=np.float64)
    step = _chunk_rows(len(pts), len(tris))
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac, bc = b - a, c - a, c - b
    for s in range(0, len(pts), step):
        p = pts[s : s + step][:, None, :]  # (q, 1, 3)
        ap = p - a
        d1 = (ab * ap).sum(-1)
        d2 = (ac * ap).sum(-1)
        bp = p - b
        d3 = (ab * bp).sum(-1)
        d4 = (ac * bp).sum(-1)
        cp = p - c
        d5 = (ab * cp).sum(-1)
        d6 = (ac * cp).sum(-1)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        with np.errstate(divide="ignore", invalid="ignore"):
            v_ab = d1 / (d1 - d3)
            v_ac = d2 / (d2 - d6)
            v_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            denom = va + vb + vc
            v_in = vb / denom
            w_in = vc / denom
        # interior candidate, overwritten by edge/vertex regions where they apply
        closest = a + v_in[..., None] * ab + w_in[..., None] * ac
        m_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        closest = np.where(m_bc[..., None], b + np.clip(v_bc, 0, 1)[..., None] * bc, closest)
        m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        closest = np.where(m_ac[..., None], a + np.clip(v_ac, 0, 1)[..., None] * ac, closest)
        m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        closest = np.where(m_ab[..., None], a + np.clip(v_ab, 0, 1)[..., None] * ab, closest)
        closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
        closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
        closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
        # degenerate triangles can leave NaNs from the interior division
        closest = np.where(np.isfinite(closest), closest, a)
        out[s : s + step] = ((p - closest) ** 2).sum(-1).min(axis=1)
    return out


# fixed generic direction so axis-aligned meshes do not produce edge-grazing rays
_PARITY_DIR = np.array([0.57735027, 0.32506809, 0.74613087])
_PARITY_DIR = _PARITY_DIR / np.linalg.norm(_PARITY_DIR)


def _parity_inside(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Crossing-parity inside test (Moller-Trumbore), vectorized over points x triangles."""
    d = _PARITY_DIR
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    h = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = (e1 * h).sum(-1)  # (F,)
    ok = np.abs(det) > 1e-12
    inside = np.zeros(len(pts), dtype=bool)
    step = _chunk_rows(len(pts), len(tris))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = np.where(ok, 1.0 / det, 0.0)
        for s in range(0, len(pts), step):
            p = pts[s : s + step][:, None, :]
            sv = p - a
            u = (sv * h).sum(-1) * inv_det
            q = np.cross(sv, e1)
            v = (q * d).sum(-1) * inv_det
            t = (q * e2).sum(-1) * inv_det
            hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
            inside[s : s + step] = hit.sum(axis=1) % 2 == 1
    return inside


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------


def frequency_encode(points, n_freqs: int, include_input: bool = True):
    """Sinusoidal encoding: per coordinate c and octave k, (sin(2^k pi c), cos(2^k pi c)).

    Ordering is coordinate-major, then octave, then (sin, cos); raw coordinates
    are prepended when include_input is set. Output width is
    2 * n_freqs * dim (+ dim with include_input). Differentiable for torch inputs.
    """
    if n_freqs < 1:
        raise ValidationError("n_freqs must be >= 1")
    is_torch = isinstance(points, torch.Tensor)
    if not is_torch:
        points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] < 1:
        raise ValidationError("points must have at least one coordinate")
    if is_torch:
        freqs = (2.0 ** torch.arange(n_freqs, dtype=points.dtype, device=points.device)) * math.pi
        args = points.unsqueeze(-1) * freqs  # (..., dim, n_freqs)
        enc = torch.stack([torch.sin(args), torch.cos(args)], dim=-1)
        enc = enc.reshape(*points.shape[:-1], points.shape[-1] * n_freqs * 2)
        return torch.cat([points, enc], dim=-1) if include_input else enc
    freqs = (2.0 ** np.arange(n_freqs)) * math.pi
    args = points[..., None] * freqs
    enc = np.stack([np.sin(args), np.cos(args)], axis=-1)
    enc = enc.reshape(*points.shape[:-1], points.shape[-1] * n_freqs * 2)
    return np.concatenate([points, enc], axis=-1) if include_input else enc


def encoded_dim(coord_dim: int, n_freqs: int, include_input: bool) -> int:
    if n_freqs == 0:
        return coord_dim
    return 2 * n_freqs * coord_dim + (coord_dim if include_input else 0)
