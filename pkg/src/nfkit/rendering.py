"""Ray generation and volumetric rendering.

A radiance field callable takes torch points of shape (N, 3) and returns
(rgb (N, 3) in [0, 1], sigma (N,) >= 0). Pixels composite front to back:
alpha_i = 1 - exp(-sigma_i * delta_i), transmittance T_i is the product of
(1 - alpha_j) for j < i, and whatever weight is left after the last sample
goes to the background color. The last interval runs to t_far, so with enough
samples the result converges to the exact transmittance integral over
[t_near, t_far].
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import RenderError, ValidationError
from .fields import CameraPose

DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)


@dataclass
class RayBatch:
    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3), unit norm
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if self.origins.shape != self.directions.shape or self.origins.ndim != 2 or self.origins.shape[1] != 3:
            raise ValidationError("origins and directions must both be (N, 3)")
        if not (0 <= self.t_near < self.t_far):
            raise ValidationError("need 0 <= t_near < t_far")
        norms = np.linalg.norm(self.directions, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValidationError("ray directions must be unit length (tol 1e-6)")

    def __len__(self):
        return len(self.origins)

    def take(self, idx: np.ndarray) -> "RayBatch":
        return RayBatch(self.origins[idx], self.directions[idx], self.t_near, self.t_far)


def camera_rays(pose: CameraPose, t_near: float, t_far: float) -> RayBatch:
    """One ray per pixel through its center, row-major (top row first).

    Pixel (0, 0) is the top-left corner; the camera looks along -z in its own
    frame with x right and y up.
    """
    j, i = np.meshgrid(np.arange(pose.height), np.arange(pose.width), indexing="ij")
    x = (i + 0.5 - pose.width / 2.0) / pose.focal
    y = -(j + 0.5 - pose.height / 2.0) / pose.focal
    dirs_cam = np.stack([x, y, -np.ones_like(x)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.origin, dirs.shape).copy()
    return RayBatch(origins, dirs, t_near, t_far)


def orbit_pose(azimuth: float, elevation: float, radius: float, focal: float, width: int, height: int) -> CameraPose:
    """Camera on a sphere around the origin, looking at the origin, y-up."""
    eye = radius * np.array(
        [np.cos(elevation) * np.sin(azimuth), np.sin(elevation), np.cos(elevation) * np.cos(azimuth)]
    )
    forward = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 1.0, 0.0])
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    c2w = np.concatenate([np.stack([right, true_up, -forward], axis=1), eye[:, None]], axis=1)
    return CameraPose(focal=focal, width=width, height=height, c2w=c2w)


def sample_along_rays(
    rays: RayBatch, n_samples: int, jitter: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stratified sample depths (N, S) and points (N, S, 3), float32.

    Depths are bin midpoints, or uniform within each bin when a jitter
    generator is given.
    """
    if n_samples < 2:
        raise ValidationError("n_samples must be >= 2")
    n = len(rays)
    edges = torch.linspace(rays.t_near, rays.t_far, n_samples + 1, dtype=torch.float32)
    lo, hi = edges[:-1], edges[1:]
    if jitter is None:
        t = ((lo + hi) / 2).expand(n, n_samples).contiguous()
    else:
        u = torch.rand(n, n_samples, generator=jitter)
        t = lo + u * (hi - lo)
    origins = torch.from_numpy(rays.origins).float()
    dirs = torch.from_numpy(rays.directions).float()
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    return t, points


def composite(
    sigmas: torch.Tensor,
    rgbs: torch.Tensor,
    deltas: torch.Tensor,
    background: tuple[float, float, float] = DEFAULT_BACKGROUND,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Front-to-back alpha compositing.

    sigmas (N, S), rgbs (N, S, 3), deltas (N, S) -> (pixels (N, 3),
    weights (N, S), transmittance (N, S)). Sum of weights per ray lies in
    [0, 1]; the remainder multiplies the background color.
    """
    alphas = 1.0 - torch.exp(-sigmas * deltas)
    trans = torch.cumprod(1.0 - alphas, dim=-1)
    trans = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=-1)
    weights = trans * alphas
    wsum = weights.sum(dim=-1).clamp(0.0, 1.0)
    bg = torch.as_tensor(background, dtype=rgbs.dtype, device=rgbs.device)
    pixels = (weights[..., None] * rgbs).sum(dim=-2) + (1.0 - wsum)[:, None] * bg
    return pixels, weights, trans


def render_rays(
    field,
    rays: RayBatch,
    n_samples: int = 64,
    background: tuple[float, float, float] = DEFAULT_BACKGROUND,
    jitter: torch.Generator | None = None,
    chunk: int = 65536,
) -> torch.Tensor:
    """Render a batch of rays to (N, 3) rgb in [0, 1]."""
    t, points = sample_along_rays(rays, n_samples, jitter)
    deltas = torch.diff(t, dim=-1)
    deltas = torch.cat([deltas, rays.t_far - t[:, -1:]], dim=-1)
    flat = points.reshape(-1, 3)
    rgb_parts, sig_parts = [], []
    for s in range(0, len(flat), chunk):
        rgb, sigma = field(flat[s : s + chunk])
        rgb_parts.append(rgb)
        sig_parts.append(sigma)
    rgbs = torch.cat(rgb_parts, dim=0).reshape(len(rays), n_samples, 3)
    sigmas = torch.cat(sig_parts, dim=0).reshape(len(rays), n_samples)
    bad = ~(torch.isfinite(sigmas).all(dim=-1) & torch.isfinite(rgbs).flatten(1).all(dim=-1))
    if bad.any():
        raise RenderError(f"non-finite field output on ray {int(bad.nonzero()[0, 0])}")
    pixels, _, _ = composite(sigmas, rgbs, deltas, background)
    return pixels


def render_image(
    field,
    pose: CameraPose,
    t_near: float,
    t_far: float,
    n_samples: int = 64,
    background: tuple[float, float, float] = DEFAULT_BACKGROUND,
    chunk: int = 65536,
) -> np.ndarray:
    """Render a full view to an (H, W, 3) float32 image."""
    rays = camera_rays(pose, t_near, t_far)
    out = []
    rows_per = max(1, chunk // (pose.width * n_samples))
    per = rows_per * pose.width
    with torch.no_grad():
        for s in range(0, len(rays), per):
            idx = np.arange(s, min(s + per, len(rays)))
            out.append(render_rays(field, rays.take(idx), n_samples, background, chunk=chunk))
    img = torch.cat(out, dim=0).reshape(pose.height, pose.width, 3)
    return img.clamp(0, 1).cpu().numpy().astype(np.float32)


def default_near_far(camera_radius: float, scene_radius: float = np.sqrt(3.0)) -> tuple[float, float]:
    """Near/far planes that bracket the [-1, 1]^3 scene from an orbit camera."""
    near = max(camera_radius - scene_radius, 0.05)
    return near, camera_radius + scene_radius
