"""Zoos: one fitted network per object, all sharing kind, architecture, and init.

A manifest JSON ties everything together: class list, architecture, init
seed, stacking mode, and one entry per object (id, label, split, source
shape, fitted weight file). The procedural corpus generator builds labeled
shapes from five analytic primitive families (sphere, box, torus, cylinder,
capsule) with scale/rotation variants, in any of the four field
representations.
"""

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .fields import (
    FieldKind,
    MultiViewSet,
    PointCloud,
    TriangleMesh,
    VoxelGrid,
    sdf_box,
    sdf_capsule,
    sdf_cylinder,
    sdf_sphere,
    sdf_torus,
)
from .fitting import FitConfig, NerfFitConfig, fit_nerf, fit_shape_nf, sample_mesh_surface
from .mlp import ArchSpec, MLPWeights
from .rendering import camera_rays, orbit_pose
from .shapeio import load_shape, save_mesh, save_multiview, save_pointcloud, save_voxels
from .surfaces import extract_surface

CLASS_NAMES = ("sphere", "box", "torus", "cylinder", "capsule")
SPLITS = ("train", "val")


@dataclass
class ZooEntry:
    id: str
    label: str
    split: str
    source: str  # path relative to the manifest directory
    nf: str | None = None  # fitted weights, relative path

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split '{self.split}' (use {'/'.join(SPLITS)})")


@dataclass
class ZooManifest:
    kind: FieldKind
    arch: ArchSpec
    init_seed: int
    include_io: bool
    classes: list[str]
    entries: list[ZooEntry] = dc_field(default_factory=list)

    def __post_init__(self):
        self.kind = FieldKind(self.kind)
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ValidationError(f"duplicate zoo entry id '{e.id}'")
            seen.add(e.id)
            if e.label not in self.classes:
                raise ValidationError(f"entry '{e.id}' has unknown label '{e.label}'")

    def split_entries(self, split: str) -> list[ZooEntry]:
        return [e for e in self.entries if e.split == split]

    def label_index(self, entry: ZooEntry) -> int:
        return self.classes.index(entry.label)


def save_manifest(path, manifest: ZooManifest) -> None:
    data = {
        "format": "nf-zoo",
        "version": 1,
        "kind": manifest.kind.value,
        "arch": manifest.arch.to_dict(),
        "init_seed": manifest.init_seed,
        "include_io": manifest.include_io,
        "classes": list(manifest.classes),
        "entries": [
            {"id": e.id, "label": e.label, "split": e.split, "source": e.source, "nf": e.nf}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_manifest(path) -> ZooManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    if data.get("format") != "nf-zoo":
        raise FormatError(f"{path}: not a zoo manifest")
    try:
        return ZooManifest(
            kind=FieldKind(data["kind"]),
            arch=ArchSpec.from_dict(data["arch"]),
            init_seed=int(data["init_seed"]),
            include_io=bool(data["include_io"]),
            classes=list(data["classes"]),
            entries=[ZooEntry(**e) for e in data["entries"]],
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed manifest ({e})") from e


# ---------------------------------------------------------------------------
# analytic primitives
# ---------------------------------------------------------------------------


@dataclass
class AnalyticShape:
    """A transformed primitive: exact sdf, object-frame part rule, per-part albedo."""

    class_name: str
    sdf_obj: object  # callable (N, 3) -> (N,)
    scale: float
    rotation: np.ndarray  # (3, 3) world-from-object
    colors: np.ndarray  # (2, 3) albedo per part

    def to_object(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) / self.scale) @ self.rotation

    def sdf(self, points) -> np.ndarray:
        return self.scale * np.asarray(self.sdf_obj(self.to_object(points)))

    def parts(self, points) -> np.ndarray:
        """Part 1 above the object-frame equator, part 0 below."""
        return (self.to_object(points)[:, 1] > 0).astype(np.int64)

    def albedo(self, points) -> np.ndarray:
        return self.colors[self.parts(points)]


_BASE_COLORS = {
    "sphere": (0.85, 0.30, 0.25),
    "box": (0.25, 0.55, 0.85),
    "torus": (0.30, 0.75, 0.35),
    "cylinder": (0.85, 0.65, 0.20),
    "capsule": (0.60, 0.35, 0.80),
}


def _rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_analytic_shape(class_name: str, rng: np.random.Generator, scale: float = 1.0, rot_y: float = 0.0) -> AnalyticShape:
    if class_name == "sphere":
        r = rng.uniform(0.45, 0.7)
        fn = lambda p: sdf_sphere(p, r)
    elif class_name == "box":
        he = rng.uniform(0.3, 0.6, size=3)
        fn = lambda p: sdf_box(p, he)
    elif class_name == "torus":
        major = rng.uniform(0.4, 0.55)
        minor = rng.uniform(0.12, 0.22)
        fn = lambda p: sdf_torus(p, major, minor)
    elif class_name == "cylinder":
        r = rng.uniform(0.25, 0.45)
        hh = rng.uniform(0.4, 0.65)
        fn = lambda p: sdf_cylinder(p, r, hh)
    elif class_name == "capsule":
        hl = rng.uniform(0.3, 0.5)
        r = rng.uniform(0.15, 0.3)
        fn = lambda p: sdf_capsule(p, hl, r)
    else:
        raise ValidationError(f"unknown shape class '{class_name}'")
    base = np.asarray(_BASE_COLORS[class_name])
    tint = rng.uniform(0.85, 1.1)
    colors = np.clip(np.stack([base * tint, base * tint * 0.45]), 0.0, 1.0)
    return AnalyticShape(
        class_name=class_name, sdf_obj=fn, scale=scale, rotation=_rotation_y(rot_y), colors=colors
    )


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def analytic_mesh(shape: AnalyticShape, resolution: int = 64) -> TriangleMesh:
    import torch

    return extract_surface(
        lambda p: torch.as_tensor(shape.sdf(p.numpy()), dtype=torch.float32), FieldKind.SDF, resolution
    )


def analytic_cloud(shape: AnalyticShape, n_points: int, rng: np.random.Generator, resolution: int = 64) -> PointCloud:
    mesh = analytic_mesh(shape, resolution)
    pts = sample_mesh_surface(mesh, n_points, rng)
    return PointCloud(points=pts, part_labels=shape.parts(pts))


def analytic_voxels(shape: AnalyticShape, resolution: int = 48) -> VoxelGrid:
    axis = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    occ = shape.sdf(pts) < 0
    return VoxelGrid(occupancy=occ.reshape(resolution, resolution, resolution))


def sphere_trace(shape: AnalyticShape, origins: np.ndarray, dirs: np.ndarray, t_near: float, t_far: float):
    """March rays against the exact sdf. Returns (hit mask, hit points)."""
    t = np.full(len(origins), t_near)
    alive = np.ones(len(origins), dtype=bool)
    hit = np.zeros(len(origins), dtype=bool)
    for _ in range(96):
        if not alive.any():
            break
        p = origins[alive] + t[alive, None] * dirs[alive]
        d = shape.sdf(p)
        close = d < 1e-3
        idx = np.flatnonzero(alive)
        hit[idx[close]] = True
        alive[idx[close]] = False
        t[idx[~close]] += np.maximum(d[~close], 1e-4)
        alive[t > t_far] = False
    return hit, origins + t[:, None] * dirs


def analytic_views(
    shape: AnalyticShape,
    n_views: int = 9,
    width: int = 32,
    height: int = 32,
    radius: float = 2.4,
    seed: int = 0,
    supersample: int = 2,
) -> MultiViewSet:
    rng = np.random.default_rng(seed)
    t_near, t_far = max(radius - 1.8, 0.1), radius + 1.8
    ss = max(1, int(supersample))
    images, poses = [], []
    for v in range(n_views):
        az = 2 * np.pi * v / n_views + rng.uniform(0, 0.2)
        el = np.deg2rad(rng.uniform(10, 35))
        pose = orbit_pose(az, el, radius, focal=1.2 * width, width=width, height=height)
        # trace at ss times the resolution, then box-average for soft edges
        hi = orbit_pose(az, el, radius, focal=1.2 * width * ss, width=width * ss, height=height * ss)
        rays = camera_rays(hi, t_near, t_far)
        hit, pts = sphere_trace(shape, rays.origins, rays.directions, t_near, t_far)
        rgb = np.ones((len(rays), 3))
        rgb[hit] = shape.albedo(pts[hit])
        alpha = hit.astype(np.float64)
        img = np.concatenate([rgb * alpha[:, None], alpha[:, None]], axis=1)
        img = img.reshape(height, ss, width, ss, 4).mean(axis=(1, 3))
        cov = img[..., 3:]
        img[..., :3] = np.where(cov > 0, img[..., :3] / np.maximum(cov, 1e-12), 1.0)
        images.append(img.astype(np.float32))
        poses.append(pose)
    return MultiViewSet(images=np.stack(images), poses=poses)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    kind: FieldKind = FieldKind.UDF
    classes: tuple[str, ...] = CLASS_NAMES
    base_per_class: int = 10
    variants_per_base: int = 2  # scale/rotation augmented copies
    cloud_points: int = 2048
    mesh_resolution: int = 64
    voxel_resolution: int = 48
    n_views: int = 9
    view_size: int = 32
    val_fraction: float = 0.1
    seed: int = 0

    @property
    def per_class(self) -> int:
        return self.base_per_class * (1 + self.variants_per_base)


def generate_shapes(cfg: CorpusConfig):
    """Yields (entry_id, class_name, AnalyticShape); variants follow their base shape."""
    rng = np.random.default_rng(cfg.seed)
    for cls in cfg.classes:
        idx = 0
        for _ in range(cfg.base_per_class):
            param_seed = rng.integers(0, 2**31)
            base_rng = np.random.default_rng(param_seed)
            yield f"{cls}_{idx:03d}", cls, make_analytic_shape(cls, base_rng)
            idx += 1
            for _ in range(cfg.variants_per_base):
                var_rng = np.random.default_rng(param_seed)  # same primitive params
                shape = make_analytic_shape(
                    cls, var_rng, scale=rng.uniform(0.8, 1.1), rot_y=rng.uniform(-np.pi / 12, np.pi / 12)
                )
                yield f"{cls}_{idx:03d}", cls, shape
                idx += 1


def _assign_splits(n: int, val_fraction: float, rng: np.random.Generator) -> list[str]:
    n_val = max(1, int(round(n * val_fraction))) if val_fraction > 0 else 0
    val_idx = set(rng.choice(n, size=n_val, replace=False).tolist()) if n_val else set()
    return ["val" if i in val_idx else "train" for i in range(n)]


def make_corpus(root, cfg: CorpusConfig, arch: ArchSpec, include_io: bool | None = None, init_seed: int = 0) -> ZooManifest:
    """Write shapes plus a manifest under `root`; networks are not fitted yet."""
    root = Path(root)
    (root / "shapes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed + 1)
    triples = list(generate_shapes(cfg))
    entries = []
    for (entry_id, cls, shape), split in zip(triples, _per_class_splits(triples, cfg, rng)):
        source = _write_shape(root, entry_id, shape, cfg, rng)
        entries.append(ZooEntry(id=entry_id, label=cls, split=split, source=source))
    if include_io is None:
        include_io = cfg.kind == FieldKind.RF
    manifest = ZooManifest(
        kind=cfg.kind,
        arch=arch,
        init_seed=init_seed,
        include_io=include_io,
        classes=list(cfg.classes),
        entries=entries,
    )
    save_manifest(root / "manifest.json", manifest)
    return manifest


def _per_class_splits(triples, cfg: CorpusConfig, rng: np.random.Generator) -> list[str]:
    splits = []
    for cls in cfg.classes:
        n = sum(1 for _, c, _ in triples if c == cls)
        splits.extend(_assign_splits(n, cfg.val_fraction, rng))
    return splits


def _write_shape(root: Path, entry_id: str, shape: AnalyticShape, cfg: CorpusConfig, rng: np.random.Generator) -> str:
    kind = FieldKind(cfg.kind)
    if kind == FieldKind.UDF:
        rel = f"shapes/{entry_id}.xyz"
        save_pointcloud(root / rel, analytic_cloud(shape, cfg.cloud_points, rng, cfg.mesh_resolution))
    elif kind == FieldKind.SDF:
        rel = f"shapes/{entry_id}.off"
        save_mesh(root / rel, analytic_mesh(shape, cfg.mesh_resolution))
    elif kind == FieldKind.OF:
        rel = f"shapes/{entry_id}.vox"
        save_voxels(root / rel, analytic_voxels(shape, cfg.voxel_resolution))
    else:
        rel = f"shapes/{entry_id}"
        view_seed = int(rng.integers(0, 2**31))
        save_multiview(root / rel, analytic_views(shape, cfg.n_views, cfg.view_size, cfg.view_size, seed=view_seed))
    return rel


# ---------------------------------------------------------------------------
# fitting and embedding a whole zoo
# ---------------------------------------------------------------------------


def fit_zoo(
    root,
    manifest: ZooManifest,
    config: FitConfig | NerfFitConfig | None = None,
    progress=None,
) -> ZooManifest:
    """Fit every entry's network from the shared init and record .nf paths."""
    root = Path(root)
    (root / "nf").mkdir(parents=True, exist_ok=True)
    from .nfio import save_nf

    for i, entry in enumerate(manifest.entries):
        shape = load_shape(root / entry.source)
        if manifest.kind == FieldKind.RF:
            nf, _ = fit_nerf(shape, manifest.arch, manifest.init_seed, config, sample_seed=_entry_seed(entry.id))
        else:
            nf, _ = fit_shape_nf(
                shape, manifest.kind, manifest.arch, manifest.init_seed, config, sample_seed=_entry_seed(entry.id)
            )
        entry.nf = f"nf/{entry.id}.nf"
        save_nf(root / entry.nf, nf)
        if progress:
            progress(i + 1, len(manifest.entries), entry.id)
    save_manifest(root / "manifest.json", manifest)
    return manifest


def _entry_seed(entry_id: str) -> int:
    # sampling seed varies per entry; the init seed stays shared across the zoo
    import zlib

    return zlib.crc32(entry_id.encode()) & 0x7FFFFFFF


def load_zoo_nfs(root, manifest: ZooManifest) -> list[MLPWeights]:
    from .nfio import load_nf

    root = Path(root)
    nfs = []
    for entry in manifest.entries:
        if entry.nf is None:
            raise ValidationError(f"entry '{entry.id}' has no fitted network yet")
        nf = load_nf(root / entry.nf)
        if nf.arch != manifest.arch or nf.field_kind != manifest.kind or nf.init_seed_id != manifest.init_seed:
            raise ValidationError(f"entry '{entry.id}' does not match the zoo architecture/kind/init")
        nfs.append(nf)
    return nfs


def zoo_items(root, manifest: ZooManifest, entries=None):
    """ZooItem list (stacked weights + supervision sampler) for embedder training."""
    from .codec import stack_weights
    from .embedder import ZooItem
    from .fitting import RaySampler, sampler_for
    from .nfio import load_nf

    root = Path(root)
    entries = manifest.entries if entries is None else entries
    items = []
    for entry in entries:
        if entry.nf is None:
            raise ValidationError(f"entry '{entry.id}' has no fitted network yet")
        nf = load_nf(root / entry.nf)
        shape = load_shape(root / entry.source)
        if manifest.kind == FieldKind.RF:
            sampler = RaySampler(shape)
        else:
            sampler = sampler_for(shape, manifest.kind, seed=_entry_seed(entry.id))
        items.append(ZooItem(stacked=stack_weights(nf, manifest.include_io), sampler=sampler))
    return items
