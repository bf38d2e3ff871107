"""Disk formats for discrete shapes.

Meshes: OFF or OBJ, triangles only. Clouds: whitespace xyz text, optional
fourth integer column with part labels. Voxels: little binary container
(magic, uint16 resolution, bit-packed occupancy). Views: per-view PNG (RGBA,
alpha = foreground) next to a JSON pose file.
"""

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError
from .fields import CameraPose, MultiViewSet, PointCloud, TriangleMesh, VoxelGrid

VOXEL_MAGIC = b"NFVOX1\x00\x00"


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    text = path.read_text()
    if suffix == ".off":
        return _parse_off(text, path)
    if suffix == ".obj":
        return _parse_obj(text, path)
    raise ValidationError(f"unsupported mesh format '{suffix}' (use .off or .obj)")


def save_mesh(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".off":
        lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
        lines += [f"{v[0]:.8g} {v[1]:.8g} {v[2]:.8g}" for v in mesh.vertices]
        lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in mesh.faces]
    elif suffix == ".obj":
        lines = [f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}" for v in mesh.vertices]
        lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    else:
        raise ValidationError(f"unsupported mesh format '{suffix}' (use .off or .obj)")
    path.write_text("\n".join(lines) + "\n")


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield from line.split()


def _parse_off(text: str, path: Path) -> TriangleMesh:
    toks = list(_tokens(text))
    if not toks or toks[0] != "OFF":
        raise FormatError(f"{path}: missing OFF header")
    try:
        nv, nf = int(toks[1]), int(toks[2])
        pos = 4  # skip edge count
        verts = np.array(toks[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(toks[pos])
            if k != 3:
                raise FormatError(f"{path}: only triangle faces supported, got {k}-gon")
            faces.append([int(toks[pos + 1]), int(toks[pos + 2]), int(toks[pos + 3])])
            pos += 1 + k
    except (IndexError, ValueError) as e:
        raise FormatError(f"{path}: truncated or malformed OFF file") from e
    return TriangleMesh(vertices=verts, faces=np.array(faces, dtype=np.int64).reshape(nf, 3))


def _parse_obj(text: str, path: Path) -> TriangleMesh:
    verts, faces = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise FormatError(f"{path}:{ln}: vertex needs 3 coordinates")
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [p.split("/")[0] for p in parts[1:]]
            if len(idx) != 3:
                raise FormatError(f"{path}:{ln}: only triangle faces supported")
            faces.append([int(i) - 1 if int(i) > 0 else len(verts) + int(i) for i in idx])
    if not verts or not faces:
        raise FormatError(f"{path}: no triangles found")
    return TriangleMesh(vertices=np.array(verts), faces=np.array(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------


def load_pointcloud(path) -> PointCloud:
    path = Path(path)
    rows = []
    width = None
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) not in (3, 4):
            raise FormatError(f"{path}:{ln}: expected 3 or 4 columns, got {len(parts)}")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise FormatError(f"{path}:{ln}: inconsistent column count")
        try:
            rows.append([float(x) for x in parts])
        except ValueError as e:
            raise FormatError(f"{path}:{ln}: non-numeric value") from e
    if not rows:
        raise FormatError(f"{path}: empty point cloud file")
    arr = np.array(rows, dtype=np.float64)
    labels = None
    if width == 4:
        col = arr[:, 3]
        if not np.all(col == np.round(col)):
            raise FormatError(f"{path}: part labels must be integers")
        labels = col.astype(np.int64)
    return PointCloud(points=arr[:, :3], part_labels=labels)


def save_pointcloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    lines = []
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g}"
        if cloud.part_labels is not None:
            row += f" {int(cloud.part_labels[i])}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# voxel grids
# ---------------------------------------------------------------------------


def load_voxels(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < len(VOXEL_MAGIC) + 2 or raw[: len(VOXEL_MAGIC)] != VOXEL_MAGIC:
        raise FormatError(f"{path}: not a voxel grid file (bad magic)")
    res = int(np.frombuffer(raw, dtype="<u2", count=1, offset=len(VOXEL_MAGIC))[0])
    if res < 1:
        raise FormatError(f"{path}: invalid resolution {res}")
    n_bits = res**3
    payload = raw[len(VOXEL_MAGIC) + 2 :]
    if len(payload) != (n_bits + 7) // 8:
        raise FormatError(f"{path}: payload size mismatch for resolution {res}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n_bits)
    return VoxelGrid(occupancy=bits.reshape(res, res, res).astype(bool))


def save_voxels(path, grid: VoxelGrid) -> None:
    res = grid.resolution
    if res > 0xFFFF:
        raise ValidationError("resolution exceeds uint16 range")
    packed = np.packbits(grid.occupancy.reshape(-1).astype(np.uint8))
    Path(path).write_bytes(VOXEL_MAGIC + np.uint16(res).tobytes() + packed.tobytes())


# ---------------------------------------------------------------------------
# images and poses
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """(H, W, 4) float32 in [0, 1]; alpha marks foreground."""
    img = Image.open(path).convert("RGBA")
    return np.asarray(img, dtype=np.float32) / 255.0


def save_image(path, rgba: np.ndarray) -> None:
    arr = np.asarray(rgba)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValidationError(f"image must be (H, W, 3|4), got {arr.shape}")
    if arr.shape[2] == 3:
        arr = np.concatenate([arr, np.ones_like(arr[:, :, :1])], axis=2)
    out = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(out, mode="RGBA").save(path)


def load_pose(path) -> CameraPose:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        c2w = np.array(data["c2w"], dtype=np.float64).reshape(3, 4)
        return CameraPose(focal=float(data["focal"]), width=int(data["width"]), height=int(data["height"]), c2w=c2w)
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, ValidationError):
            raise
        raise FormatError(f"{path}: malformed pose file ({e})") from e


def save_pose(path, pose: CameraPose) -> None:
    data = {
        "focal": pose.focal,
        "width": pose.width,
        "height": pose.height,
        "c2w": [float(x) for x in pose.c2w.reshape(-1)],
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


_VIEW_RE = re.compile(r"^view_(\d+)\.png$")


def load_multiview(directory) -> MultiViewSet:
    """Read view_NNN.png / view_NNN.json pairs from a directory."""
    directory = Path(directory)
    pairs = []
    for png in sorted(directory.iterdir()):
        m = _VIEW_RE.match(png.name)
        if not m:
            continue
        pose_path = png.with_suffix(".json")
        if not pose_path.exists():
            raise FormatError(f"{png}: missing pose file {pose_path.name}")
        pairs.append((load_image(png), load_pose(pose_path)))
    if not pairs:
        raise FormatError(f"{directory}: no view_NNN.png files found")
    images = np.stack([p[0] for p in pairs])
    return MultiViewSet(images=images, poses=[p[1] for p in pairs])


def save_multiview(directory, views: MultiViewSet) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, (img, pose) in enumerate(zip(views.images, views.poses)):
        save_image(directory / f"view_{i:03d}.png", img)
        save_pose(directory / f"view_{i:03d}.json", pose)


def load_shape(path):
    """Dispatch on extension (.off/.obj/.xyz/.vox) or directory (multiview)."""
    path = Path(path)
    if path.is_dir():
        return load_multiview(path)
    suffix = path.suffix.lower()
    if suffix in (".off", ".obj"):
        return load_mesh(path)
    if suffix == ".xyz":
        return load_pointcloud(path)
    if suffix == ".vox":
        return load_voxels(path)
    raise ValidationError(f"cannot infer shape format from '{path.name}'")
