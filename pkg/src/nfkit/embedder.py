"""Embed neural-field weights into fixed-size latent codes.

The encoder never sees coordinates or field values, only the stacked weight
matrix: each row passes through the same linear+batchnorm+relu tower, then a
max pool over rows collapses the matrix into one 1024-d embedding. Row count
therefore never changes the embedding width, and at inference (batchnorm on
running statistics) a permutation of rows leaves the embedding bit-identical.

Training is paired with an implicit decoder: embeddings of fitted networks
must reproduce the underlying field at random query points (or along random
pixel rays for radiance zoos), so the loss is the same one the fields were
fitted with. One encoder serves one zoo: a single field kind, architecture,
and shared init.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from torch import nn

from .codec import StackedWeights
from .decoder import EMBED_DIM, DecoderSpec, ImplicitDecoder, decoded_field, map_range
from .errors import ValidationError
from .fields import FieldKind
from .fitting import FieldSampler, RaySampler, render_rays_module, shape_loss, weighted_l1_rgb


class RowEncoder(nn.Module):
    """Per-row MLP tower (linear + batchnorm + relu) followed by max pooling."""

    def __init__(self, row_width: int, features: tuple[int, ...] = (512, 512, 1024, 1024)):
        super().__init__()
        if row_width < 1 or len(features) < 1:
            raise ValidationError("row_width and features must be non-empty")
        self.row_width = row_width
        self.features = tuple(features)
        blocks = []
        prev = row_width
        for f in features:
            blocks += [nn.Linear(prev, f), nn.BatchNorm1d(f), nn.ReLU()]
            prev = f
        self.tower = nn.Sequential(*blocks)

    @property
    def out_dim(self) -> int:
        return self.features[-1]

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.tower(rows)

    def embed_batch(self, mats: torch.Tensor) -> torch.Tensor:
        """(B, S, W) stacked matrices -> (B, out_dim) embeddings (max over rows)."""
        b, s, w = mats.shape
        if w != self.row_width:
            raise ValidationError(f"matrix width {w} does not match encoder row width {self.row_width}")
        rows = self.tower(mats.reshape(b * s, w))
        return rows.reshape(b, s, -1).amax(dim=1)


def encode(encoder: RowEncoder, stacked: StackedWeights) -> np.ndarray:
    """Embed one stacked weight matrix into a 1024-d float32 vector."""
    if encoder.out_dim != EMBED_DIM:
        raise ValidationError(f"zoo encoders must emit {EMBED_DIM}-d embeddings, got {encoder.out_dim}")
    if stacked.data.shape[1] != encoder.row_width:
        raise ValidationError(
            f"matrix width {stacked.data.shape[1]} does not match encoder row width {encoder.row_width}"
        )
    encoder.eval()
    with torch.no_grad():
        emb = encoder.embed_batch(stacked.data.unsqueeze(0))[0]
    return emb.cpu().numpy().astype(np.float32)


def encode_many(encoder: RowEncoder, stacks: list[StackedWeights]) -> np.ndarray:
    return np.stack([encode(encoder, s) for s in stacks])


def interpolate_embeddings(e1: np.ndarray, e2: np.ndarray, t: float) -> np.ndarray:
    """Linear blend (1-t)*e1 + t*e2 between two embeddings."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"interpolation weight must lie in [0, 1], got {t}")
    e1 = np.asarray(e1, dtype=np.float32)
    e2 = np.asarray(e2, dtype=np.float32)
    if e1.shape != e2.shape:
        raise ValidationError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    if t == 0.0:
        return e1.copy()
    if t == 1.0:
        return e2.copy()
    return (1.0 - t) * e1 + t * e2


@dataclass
class ZooItem:
    """One training example: a stacked weight matrix plus its supervision source."""

    stacked: StackedWeights
    sampler: FieldSampler | RaySampler


@dataclass
class Nf2vecConfig:
    steps: int = 2000
    batch_nfs: int = 16
    queries_per_nf: int = 512
    lr: float = 1e-4
    encoder_features: tuple[int, ...] = (512, 512, 1024, 1024)
    decoder_hidden: int = 512
    decoder_layers: int = 5
    n_freqs: int = 10
    raw_coords: bool = False
    clamp_delta: float = 0.1
    rays_per_nf: int = 64
    samples_per_ray: int = 24
    seed: int = 0
    log_every: int = 50


@dataclass
class Nf2vecResult:
    encoder: RowEncoder
    decoder: ImplicitDecoder
    train_log: list[float] = dc_field(default_factory=list)
    val_loss: float | None = None


def _check_zoo(items: list[ZooItem]) -> tuple[FieldKind, int, int]:
    if not items:
        raise ValidationError("zoo is empty")
    first = items[0].stacked.layout
    for it in items[1:]:
        lay = it.stacked.layout
        if lay.arch != first.arch or lay.include_io != first.include_io:
            raise ValidationError("all networks in a zoo must share one architecture and stacking mode")
        if lay.field_kind != first.field_kind:
            raise ValidationError("all networks in a zoo must share one field kind")
        if lay.init_seed_id != first.init_seed_id:
            raise ValidationError(
                f"mixed init seeds in one zoo ({lay.init_seed_id} vs {first.init_seed_id}); "
                "embeddings are only comparable under a shared initialization"
            )
    s, h = items[0].stacked.data.shape
    return FieldKind(first.field_kind), s, h


def _batch_loss(
    kind: FieldKind,
    decoder: ImplicitDecoder,
    embs: torch.Tensor,
    picked: list[ZooItem],
    cfg: Nf2vecConfig,
    rng: np.random.Generator,
    jitter: torch.Generator | None,
) -> torch.Tensor:
    if kind == FieldKind.RF:
        losses = []
        for i, it in enumerate(picked):
            rays, rgb_t, fg = it.sampler.sample(cfg.rays_per_nf, rng)
            pixels = render_rays_module(decoded_field(decoder, embs[i]), rays, cfg.samples_per_ray, jitter)
            losses.append(weighted_l1_rgb(pixels, rgb_t, fg))
        return torch.stack(losses).mean()
    pts_np, tgt_np = zip(*(it.sampler.sample(cfg.queries_per_nf, rng) for it in picked))
    pts = torch.from_numpy(np.stack(pts_np)).float()  # (B, Q, 3)
    tgt = torch.from_numpy(np.stack(tgt_np)).float()
    raw = decoder(embs.unsqueeze(1).expand(-1, pts.shape[1], -1), pts)
    if kind == FieldKind.UDF:
        return shape_loss(kind, map_range(kind, raw), tgt, cfg.clamp_delta)
    return shape_loss(kind, raw[..., 0], tgt, cfg.clamp_delta)


def train_nf2vec(
    items: list[ZooItem], cfg: Nf2vecConfig | None = None, val_items: list[ZooItem] | None = None
) -> Nf2vecResult:
    """Train encoder + decoder so embeddings reproduce their source fields."""
    cfg = cfg or Nf2vecConfig()
    kind, _, width = _check_zoo(items)
    if val_items:
        _check_zoo(list(items) + list(val_items))
    torch.manual_seed(cfg.seed)
    encoder = RowEncoder(width, cfg.encoder_features)
    if encoder.out_dim != EMBED_DIM:
        raise ValidationError(f"encoder must end at {EMBED_DIM} features")
    decoder = ImplicitDecoder(
        DecoderSpec(
            field_kind=kind,
            hidden_dim=cfg.decoder_hidden,
            n_hidden_layers=cfg.decoder_layers,
            n_freqs=cfg.n_freqs,
            raw_coords=cfg.raw_coords,
        )
    )
    mats = [it.stacked.data for it in items]
    opt = torch.optim.Adam(list(encoder.parameters()) + list(decoder.parameters()), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.steps, 1))
    rng = np.random.default_rng(cfg.seed)
    jitter = torch.Generator().manual_seed(cfg.seed + 104729) if kind == FieldKind.RF else None
    log = []
    encoder.train()
    decoder.train()
    for step in range(cfg.steps):
        idx = rng.choice(len(items), size=min(cfg.batch_nfs, len(items)), replace=False)
        picked = [items[i] for i in idx]
        embs = encoder.embed_batch(torch.stack([mats[i] for i in idx]))
        loss = _batch_loss(kind, decoder, embs, picked, cfg, rng, jitter)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    encoder.eval()
    decoder.eval()
    val_loss = None
    if val_items:
        vrng = np.random.default_rng(cfg.seed + 1)
        vjit = torch.Generator().manual_seed(cfg.seed + 1) if kind == FieldKind.RF else None
        with torch.no_grad():
            losses = []
            for s in range(0, len(val_items), cfg.batch_nfs):
                chunk = val_items[s : s + cfg.batch_nfs]
                embs = encoder.embed_batch(torch.stack([it.stacked.data for it in chunk]))
                losses.append(float(_batch_loss(kind, decoder, embs, chunk, cfg, vrng, vjit)))
            val_loss = float(np.mean(losses))
    return Nf2vecResult(encoder=encoder, decoder=decoder, train_log=log, val_loss=val_loss)
