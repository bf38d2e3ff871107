"""Decode fields from weight-space embeddings.

The decoder is a ReLU MLP over [embedding | frequency-encoded coordinates]
shared across all objects of a zoo; conditioning on the embedding selects the
object. Raw network outputs pass through a per-kind range map: softplus for
distances, sigmoid for occupancy, identity for signed distance, sigmoid rgb +
softplus density for radiance.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ValidationError
from .fields import FieldKind, PointCloud, TriangleMesh, encoded_dim, frequency_encode
from .rendering import CameraPose, render_image
from .surfaces import extract_surface

EMBED_DIM = 1024


@dataclass(frozen=True)
class DecoderSpec:
    field_kind: FieldKind
    embed_dim: int = EMBED_DIM
    hidden_dim: int = 512
    n_hidden_layers: int = 5
    n_freqs: int = 10
    include_input: bool = True
    raw_coords: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["field_kind"] = FieldKind(self.field_kind).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderSpec":
        d = dict(d)
        d["field_kind"] = FieldKind(d["field_kind"])
        return cls(**d)


class ImplicitDecoder(nn.Module):
    def __init__(self, spec: DecoderSpec):
        super().__init__()
        self.spec = spec
        coord_in = 3 if spec.raw_coords else encoded_dim(3, spec.n_freqs, spec.include_input)
        out_dim = 4 if FieldKind(spec.field_kind) == FieldKind.RF else 1
        dims = [spec.embed_dim + coord_in] + [spec.hidden_dim] * spec.n_hidden_layers + [out_dim]
        self.linears = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(len(dims) - 1))

    def encode_coords(self, coords: torch.Tensor) -> torch.Tensor:
        if self.spec.raw_coords:
            return coords
        return frequency_encode(coords, self.spec.n_freqs, self.spec.include_input)

    def forward(self, embedding: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """Raw head outputs for (..., E) embeddings paired with (..., 3) coords."""
        if embedding.shape[-1] != self.spec.embed_dim:
            raise ValidationError(f"embedding dim {embedding.shape[-1]}, decoder expects {self.spec.embed_dim}")
        x = torch.cat([embedding, self.encode_coords(coords)], dim=-1)
        for lin in self.linears[:-1]:
            x = torch.relu(lin(x))
        return self.linears[-1](x)


def map_range(kind: FieldKind, raw: torch.Tensor):
    kind = FieldKind(kind)
    if kind == FieldKind.UDF:
        return torch.nn.functional.softplus(raw[..., 0])
    if kind == FieldKind.SDF:
        return raw[..., 0]
    if kind == FieldKind.OF:
        return torch.sigmoid(raw[..., 0])
    return torch.sigmoid(raw[..., :3]), torch.nn.functional.softplus(raw[..., 3])


def decode(decoder: ImplicitDecoder, embedding, points):
    """Field values at (N, 3) points for a single (E,) embedding."""
    emb = torch.as_tensor(embedding, dtype=torch.float32).reshape(-1)
    pts = torch.as_tensor(points, dtype=torch.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"points must be (N, 3), got {tuple(pts.shape)}")
    with torch.no_grad():
        raw = decoder(emb.expand(len(pts), -1), pts)
    return map_range(decoder.spec.field_kind, raw)


def decoded_field(decoder: ImplicitDecoder, embedding):
    """Kind-adapted field callable bound to one embedding (differentiable)."""
    emb = torch.as_tensor(embedding, dtype=torch.float32).reshape(-1)

    def fn(points: torch.Tensor):
        raw = decoder(emb.expand(len(points), -1), points)
        return map_range(decoder.spec.field_kind, raw)

    return fn


def reconstruct(
    decoder: ImplicitDecoder,
    embedding,
    resolution: int = 128,
    n_points: int = 8192,
    threshold: float = 0.01,
    seed: int = 0,
) -> TriangleMesh | PointCloud:
    """Extract geometry for one embedding (scalar-field decoders only)."""
    kind = FieldKind(decoder.spec.field_kind)
    if kind == FieldKind.RF:
        raise ValidationError("use render_embedding for radiance decoders")
    decoder.eval()
    return extract_surface(
        decoded_field(decoder, embedding), kind, resolution, n_points=n_points, threshold=threshold, seed=seed
    )


def render_embedding(
    decoder: ImplicitDecoder,
    embedding,
    pose: CameraPose,
    t_near: float,
    t_far: float,
    n_samples: int = 64,
) -> np.ndarray:
    """Render one view of a radiance embedding to (H, W, 3) float32."""
    if FieldKind(decoder.spec.field_kind) != FieldKind.RF:
        raise ValidationError("rendering needs a radiance decoder")
    decoder.eval()
    return render_image(decoded_field(decoder, embedding), pose, t_near, t_far, n_samples=n_samples)
