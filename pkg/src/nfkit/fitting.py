"""Fit one neural field per object.

Shape fields (distance / signed distance / occupancy) train on point batches:
half drawn near the surface (gaussian perturbations of surface points at two
scales), half uniform over [-1, 1]^3. Radiance fields train on random pixel
rays rendered through the network. Every fit starts from the zoo's shared
deterministic initialization.
"""

from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import DivergenceError, ValidationError
from .fields import (
    FieldKind,
    MultiViewSet,
    PointCloud,
    TriangleMesh,
    VoxelGrid,
    occupancy_from_voxels,
    sdf_from_mesh,
)
from .mlp import ArchSpec, FieldMLP, MLPWeights, shared_init
from .rendering import RayBatch, camera_rays, composite, sample_along_rays

DEFAULT_CLAMP = 0.1


@dataclass
class FitConfig:
    steps: int = 1500
    batch_size: int = 512
    lr: float = 1e-4
    clamp_delta: float = DEFAULT_CLAMP
    near_sigmas: tuple[float, float] = (0.01, 0.1)
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")


@dataclass
class NerfFitConfig:
    steps: int = 1000
    rays_per_step: int = 1024
    n_samples: int = 32
    lr: float = 5e-4
    fg_weight: float = 0.8
    bg_weight: float = 0.2
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def clamped_l1_sdf(pred: torch.Tensor, target: torch.Tensor, delta: float = DEFAULT_CLAMP) -> torch.Tensor:
    """L1 between signed distances clamped to [-delta, delta] on both sides."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    return (pred.clamp(-delta, delta) - target.clamp(-delta, delta)).abs().mean()


def clamped_l1_udf(pred: torch.Tensor, target: torch.Tensor, delta: float = DEFAULT_CLAMP) -> torch.Tensor:
    """L1 between unsigned distances clamped from above at delta.

    Only the upper side is clamped: flooring negative predictions at zero
    would zero their gradient and they could never recover.
    """
    if delta <= 0:
        raise ValidationError("delta must be positive")
    return (pred.clamp(max=delta) - target.clamp(max=delta)).abs().mean()


def occupancy_bce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, target)


def weighted_l1_rgb(
    pred: torch.Tensor,
    target: torch.Tensor,
    fg_mask: torch.Tensor,
    fg_weight: float = 0.8,
    bg_weight: float = 0.2,
) -> torch.Tensor:
    """Per-ray L1, foreground rays weighted up: sum(w * e) / sum(w)."""
    err = (pred - target).abs().mean(dim=-1)
    w = torch.where(fg_mask, torch.as_tensor(fg_weight, dtype=err.dtype), torch.as_tensor(bg_weight, dtype=err.dtype))
    return (w * err).sum() / w.sum()


def shape_loss(kind: FieldKind, raw_out: torch.Tensor, target: torch.Tensor, delta: float = DEFAULT_CLAMP):
    kind = FieldKind(kind)
    if kind == FieldKind.SDF:
        return clamped_l1_sdf(raw_out, target, delta)
    if kind == FieldKind.UDF:
        return clamped_l1_udf(raw_out, target, delta)
    if kind == FieldKind.OF:
        return occupancy_bce(raw_out, target)
    raise ValidationError("radiance fields use the rendering loss")


# ---------------------------------------------------------------------------
# supervision samplers
# ---------------------------------------------------------------------------


class FieldSampler:
    """Yields (points (n, 3) float64, targets (n,) float64) supervision batches."""

    kind: FieldKind

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


def _mixed_points(surface_pts: np.ndarray, n: int, rng: np.random.Generator, sigmas) -> np.ndarray:
    """Half near-surface (two perturbation scales), half uniform in the cube."""
    n_near = n // 2
    n_uni = n - n_near
    picks = surface_pts[rng.integers(0, len(surface_pts), size=n_near)]
    sigma = np.where(rng.random(n_near) < 0.5, sigmas[0], sigmas[1])[:, None]
    near = np.clip(picks + rng.normal(size=(n_near, 3)) * sigma, -1.0, 1.0)
    uniform = rng.uniform(-1.0, 1.0, size=(n_uni, 3))
    return np.concatenate([near, uniform], axis=0)


class PointCloudSampler(FieldSampler):
    kind = FieldKind.UDF

    def __init__(self, cloud: PointCloud, sigmas=(0.01, 0.1)):
        if len(cloud.points) == 0:
            raise ValidationError("point cloud is empty")
        self.cloud = cloud
        self.sigmas = sigmas
        self._tree = cKDTree(cloud.points)

    def sample(self, n, rng):
        pts = _mixed_points(self.cloud.points, n, rng, self.sigmas)
        dist, _ = self._tree.query(pts, k=1)
        return pts, dist


class MeshSdfSampler(FieldSampler):
    """Exact signed distances are precomputed into a pool; batches draw from it.

    Exact point-to-mesh distance per step is far too slow on one core, the
    pool keeps the same near/uniform mix at a fraction of the cost.
    """

    kind = FieldKind.SDF

    def __init__(self, mesh: TriangleMesh, pool_size: int = 60000, sigmas=(0.01, 0.1), seed: int = 0):
        rng = np.random.default_rng(seed)
        surface = sample_mesh_surface(mesh, max(4096, pool_size // 8), rng)
        self.pool_points = _mixed_points(surface, pool_size, rng, sigmas)
        self.pool_values = np.asarray(sdf_from_mesh(self.pool_points, mesh))

    def sample(self, n, rng):
        idx = rng.integers(0, len(self.pool_points), size=n)
        return self.pool_points[idx], self.pool_values[idx]


class VoxelSampler(FieldSampler):
    kind = FieldKind.OF

    def __init__(self, grid: VoxelGrid, sigmas=(0.01, 0.1)):
        self.grid = grid
        occ = grid.occupancy
        r = grid.resolution
        # cell centers of occupied voxels act as surface anchors; an empty
        # grid trains on uniform queries alone (all targets zero)
        idx = np.argwhere(occ)
        self.anchors = (idx + 0.5) / r * 2.0 - 1.0 if len(idx) else None
        self.sigmas = (max(sigmas[0], 2.0 / r), max(sigmas[1], 2.0 / r))

    def sample(self, n, rng):
        if self.anchors is None:
            pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        else:
            pts = _mixed_points(self.anchors, n, rng, self.sigmas)
        return pts, np.asarray(occupancy_from_voxels(pts, self.grid))


class AnalyticSampler(FieldSampler):
    """Supervise against a closed-form field (numpy (n, 3) -> (n,))."""

    def __init__(self, fn, kind: FieldKind, surface_pts: np.ndarray | None = None, sigmas=(0.01, 0.1)):
        self.fn = fn
        self.kind = FieldKind(kind)
        self.surface_pts = surface_pts
        self.sigmas = sigmas

    def sample(self, n, rng):
        if self.surface_pts is None:
            pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        else:
            pts = _mixed_points(self.surface_pts, n, rng, self.sigmas)
        return pts, np.asarray(self.fn(pts))


def sample_mesh_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    tris = mesh.triangles()
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=-1)
    total = areas.sum()
    if total <= 0:
        raise ValidationError("mesh has zero surface area")
    pick = rng.choice(len(tris), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tris[pick]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def sampler_for(shape, kind: FieldKind, seed: int = 0) -> FieldSampler:
    kind = FieldKind(kind)
    if isinstance(shape, FieldSampler):
        if shape.kind != kind:
            raise ValidationError(f"sampler supervises {shape.kind.value}, requested {kind.value}")
        return shape
    if kind == FieldKind.UDF:
        if not isinstance(shape, PointCloud):
            raise ValidationError("distance fields are supervised by point clouds")
        return PointCloudSampler(shape)
    if kind == FieldKind.SDF:
        if not isinstance(shape, TriangleMesh):
            raise ValidationError("signed distance fields are supervised by watertight meshes")
        return MeshSdfSampler(shape, seed=seed)
    if kind == FieldKind.OF:
        if not isinstance(shape, VoxelGrid):
            raise ValidationError("occupancy fields are supervised by voxel grids")
        return VoxelSampler(shape)
    raise ValidationError("radiance fields are fitted with fit_nerf")


# ---------------------------------------------------------------------------
# fitting loops
# ---------------------------------------------------------------------------


def fit_shape_nf(
    shape,
    kind: FieldKind,
    arch: ArchSpec,
    init_seed: int = 0,
    config: FitConfig | None = None,
    sample_seed: int | None = None,
) -> tuple[MLPWeights, list[float]]:
    """Fit a scalar field network to one shape from the shared init. Returns (weights, loss log)."""
    kind = FieldKind(kind)
    if arch.output_dim != 1:
        raise ValidationError(f"{kind.value} fields are scalar, arch has output_dim={arch.output_dim}")
    cfg = config or FitConfig()
    sampler = sampler_for(shape, kind, seed=init_seed)
    module = FieldMLP(arch).load_weights(shared_init(arch, init_seed))
    opt = torch.optim.Adam(module.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(init_seed if sample_seed is None else sample_seed)
    log = []
    for step in range(cfg.steps):
        pts, tgt = sampler.sample(cfg.batch_size, rng)
        pred = module(torch.from_numpy(pts).float())[:, 0]
        loss = shape_loss(kind, pred, torch.from_numpy(np.asarray(tgt)).float(), cfg.clamp_delta)
        if not torch.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    return module.to_weights(kind, init_seed), log


class RaySampler:
    """Pixel bank over all posed views of one object, rendered against white."""

    def __init__(self, views: MultiViewSet, t_near: float | None = None, t_far: float | None = None):
        origins, dirs, rgbs, fgs = [], [], [], []
        radii = [float(np.linalg.norm(p.origin)) for p in views.poses]
        if t_near is None or t_far is None:
            scene = float(np.sqrt(3.0))
            t_near = max(min(radii) - scene, 0.05)
            t_far = max(radii) + scene
        self.t_near, self.t_far = float(t_near), float(t_far)
        for img, pose in zip(views.images, views.poses):
            rays = camera_rays(pose, self.t_near, self.t_far)
            origins.append(rays.origins)
            dirs.append(rays.directions)
            flat = img.reshape(-1, 4).astype(np.float64)
            alpha = flat[:, 3:4]
            rgbs.append(flat[:, :3] * alpha + (1.0 - alpha))  # composite over white
            fgs.append(flat[:, 3] > 0.5)
        self.origins = np.concatenate(origins)
        self.directions = np.concatenate(dirs)
        self.rgb = np.concatenate(rgbs)
        self.fg = np.concatenate(fgs)

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, len(self.origins), size=n)
        batch = RayBatch(self.origins[idx], self.directions[idx], self.t_near, self.t_far)
        return batch, torch.from_numpy(self.rgb[idx]).float(), torch.from_numpy(self.fg[idx])


def render_rays_module(field_fn, rays: RayBatch, n_samples: int, jitter: torch.Generator | None = None):
    """Differentiable mini renderer used by the fitting and embedding loops."""
    t, points = sample_along_rays(rays, n_samples, jitter)
    deltas = torch.diff(t, dim=-1)
    deltas = torch.cat([deltas, rays.t_far - t[:, -1:]], dim=-1)
    rgb, sigma = field_fn(points.reshape(-1, 3))
    pixels, _, _ = composite(sigma.reshape(len(rays), n_samples), rgb.reshape(len(rays), n_samples, 3), deltas)
    return pixels


def fit_nerf(
    views: MultiViewSet,
    arch: ArchSpec | None = None,
    init_seed: int = 0,
    config: NerfFitConfig | None = None,
    sample_seed: int | None = None,
) -> tuple[MLPWeights, list[float]]:
    """Fit a radiance field network to posed views. Returns (weights, loss log)."""
    from .mlp import module_field, radiance_arch

    cfg = config or NerfFitConfig()
    arch = arch or radiance_arch()
    if arch.activation != "relu" or arch.output_dim != 4:
        raise ValidationError("radiance networks are relu MLPs with a 4-channel head")
    sampler = RaySampler(views)
    module = FieldMLP(arch).load_weights(shared_init(arch, init_seed, FieldKind.RF))
    fn = module_field(module, FieldKind.RF)
    opt = torch.optim.Adam(module.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.steps, eta_min=cfg.lr * 0.02)
    rng = np.random.default_rng(init_seed if sample_seed is None else sample_seed)
    jitter = torch.Generator().manual_seed(int(init_seed) + 7919)
    log = []
    for step in range(cfg.steps):
        rays, rgb_t, fg = sampler.sample(cfg.rays_per_step, rng)
        pixels = render_rays_module(fn, rays, cfg.n_samples, jitter)
        loss = weighted_l1_rgb(pixels, rgb_t, fg, cfg.fg_weight, cfg.bg_weight)
        if not torch.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    return module.to_weights(FieldKind.RF, init_seed), log
