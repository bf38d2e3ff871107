"""Downstream tasks on weight-space embeddings.

Everything here consumes fixed embeddings; no field network is evaluated at
task time. Classification uses a small softmax MLP trained with E-Stitchup
augmentation (component-wise Bernoulli swaps between two embeddings with
matching soft labels). Part segmentation decodes per-point part logits from
[embedding | encoded point]. Generation trains a latent GAN over embeddings;
latent transfer regresses one zoo's embeddings onto another's.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from torch import nn

from .decoder import EMBED_DIM
from .errors import ValidationError
from .fields import encoded_dim, frequency_encode
from .metrics import nearest_neighbors


def _as_embedding_matrix(embeddings) -> torch.Tensor:
    emb = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    if emb.ndim != 2:
        raise ValidationError(f"embeddings must be (N, D), got {tuple(emb.shape)}")
    return emb


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


class ClassifierHead(nn.Module):
    def __init__(self, n_classes: int, embed_dim: int = EMBED_DIM, hidden: tuple[int, ...] = (512, 128)):
        super().__init__()
        if n_classes < 2:
            raise ValidationError("need at least two classes")
        dims = [embed_dim, *hidden, n_classes]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)
        self.n_classes = n_classes
        # Max-pooled ReLU embeddings sit on a large positive offset with small
        # per-dimension variance; without standardization the logits are nearly
        # input-independent and training stalls at the uniform distribution.
        self.register_buffer("input_mean", torch.zeros(embed_dim))
        self.register_buffer("input_std", torch.ones(embed_dim))

    def set_input_stats(self, embeddings: torch.Tensor) -> None:
        """Fit the standardization buffers on the training embeddings."""
        self.input_mean.copy_(embeddings.mean(dim=0))
        self.input_std.copy_(embeddings.std(dim=0).clamp_min(1e-6))

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.net((emb - self.input_mean) / self.input_std)


@dataclass
class ClassifierConfig:
    steps: int = 1500
    batch_size: int = 64
    lr: float = 1e-3
    stitchup: bool = True
    seed: int = 0
    log_every: int = 100


def e_stitchup(
    emb_a: torch.Tensor, emb_b: torch.Tensor, y_a: torch.Tensor, y_b: torch.Tensor, lam: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Component-wise Bernoulli(lam) swap of two embeddings with soft labels.

    Each component comes from emb_a with probability lam, else emb_b; the
    label is the matching convex combination lam * y_a + (1 - lam) * y_b.
    """
    if emb_a.shape != emb_b.shape or y_a.shape != y_b.shape:
        raise ValidationError("stitched pairs must have matching shapes")
    lam = lam.reshape(-1, 1)
    mask = (torch.rand_like(emb_a) < lam).float()
    mixed = mask * emb_a + (1.0 - mask) * emb_b
    labels = lam * y_a + (1.0 - lam) * y_b
    return mixed, labels


def train_classifier(
    embeddings, labels, n_classes: int, config: ClassifierConfig | None = None
) -> tuple[ClassifierHead, list[float]]:
    cfg = config or ClassifierConfig()
    emb = _as_embedding_matrix(embeddings)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if len(y) != len(emb):
        raise ValidationError("one label per embedding required")
    if int(y.min()) < 0 or int(y.max()) >= n_classes:
        raise ValidationError("labels out of range")
    torch.manual_seed(cfg.seed)
    head = ClassifierHead(n_classes, embed_dim=emb.shape[1])
    head.set_input_stats(emb)
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr)
    onehot = torch.nn.functional.one_hot(y, n_classes).float()
    gen = torch.Generator().manual_seed(cfg.seed)
    log = []
    for step in range(cfg.steps):
        ia = torch.randint(0, len(emb), (min(cfg.batch_size, len(emb)),), generator=gen)
        if cfg.stitchup:
            ib = torch.randint(0, len(emb), ia.shape, generator=gen)
            lam = torch.rand(len(ia), generator=gen)
            x, target = e_stitchup(emb[ia], emb[ib], onehot[ia], onehot[ib], lam)
        else:
            x, target = emb[ia], onehot[ia]
        logp = torch.log_softmax(head(x), dim=-1)
        loss = -(target * logp).sum(dim=-1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    head.eval()
    return head, log


def classify(head: ClassifierHead, embeddings) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities (N, C) summing to 1, argmax labels (N,))."""
    emb = _as_embedding_matrix(embeddings)
    head.eval()
    with torch.no_grad():
        probs = torch.softmax(head(emb), dim=-1).cpu().numpy().astype(np.float64)
    return probs, probs.argmax(axis=1)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def retrieve(embeddings, query_index: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and euclidean distances of the k nearest rows, query excluded."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if not 0 <= query_index < len(emb):
        raise ValidationError(f"query index {query_index} out of range")
    idx = nearest_neighbors(emb, k, exclude_self=True)[query_index]
    dists = np.linalg.norm(emb[idx] - emb[query_index], axis=-1)
    return idx, dists


# ---------------------------------------------------------------------------
# part segmentation
# ---------------------------------------------------------------------------


class PartSegHead(nn.Module):
    """Per-point part logits from [embedding | frequency-encoded point]."""

    def __init__(
        self,
        n_parts: int,
        embed_dim: int = EMBED_DIM,
        hidden_dim: int = 256,
        n_hidden_layers: int = 3,
        n_freqs: int = 6,
    ):
        super().__init__()
        if n_parts < 2:
            raise ValidationError("need at least two parts")
        self.n_freqs = n_freqs
        dims = [embed_dim + encoded_dim(3, n_freqs, True), *([hidden_dim] * n_hidden_layers), n_parts]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)
        self.n_parts = n_parts

    def forward(self, emb: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
        enc = frequency_encode(points, self.n_freqs, True)
        return self.net(torch.cat([emb, enc], dim=-1))


@dataclass
class PartSegConfig:
    steps: int = 1500
    batch_shapes: int = 8
    points_per_shape: int = 256
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 100


@dataclass
class PartSegItem:
    embedding: np.ndarray
    points: np.ndarray  # (N, 3)
    labels: np.ndarray  # (N,) int part ids


def train_partseg(
    items: list[PartSegItem], n_parts: int, config: PartSegConfig | None = None
) -> tuple[PartSegHead, list[float]]:
    cfg = config or PartSegConfig()
    if not items:
        raise ValidationError("no training shapes")
    for it in items:
        if len(it.points) != len(it.labels):
            raise ValidationError("each point needs a part label")
        if np.asarray(it.labels).min() < 0 or np.asarray(it.labels).max() >= n_parts:
            raise ValidationError("part labels out of range")
    torch.manual_seed(cfg.seed)
    head = PartSegHead(n_parts, embed_dim=len(np.asarray(items[0].embedding).reshape(-1)))
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    embs = [torch.as_tensor(np.asarray(it.embedding), dtype=torch.float32).reshape(-1) for it in items]
    log = []
    for step in range(cfg.steps):
        sel = rng.choice(len(items), size=min(cfg.batch_shapes, len(items)), replace=False)
        xs, es, ys = [], [], []
        for i in sel:
            it = items[i]
            pick = rng.integers(0, len(it.points), size=cfg.points_per_shape)
            xs.append(torch.from_numpy(np.asarray(it.points)[pick]).float())
            ys.append(torch.from_numpy(np.asarray(it.labels)[pick]).long())
            es.append(embs[i].expand(cfg.points_per_shape, -1))
        logits = head(torch.cat(es), torch.cat(xs))
        loss = torch.nn.functional.cross_entropy(logits, torch.cat(ys))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    head.eval()
    return head, log


def predict_parts(head: PartSegHead, embedding, points) -> np.ndarray:
    emb = torch.as_tensor(np.asarray(embedding), dtype=torch.float32).reshape(-1)
    pts = torch.as_tensor(np.asarray(points), dtype=torch.float32)
    head.eval()
    with torch.no_grad():
        logits = head(emb.expand(len(pts), -1), pts)
    return logits.argmax(dim=-1).cpu().numpy().astype(np.int64)


# ---------------------------------------------------------------------------
# latent generation
# ---------------------------------------------------------------------------


class LatentGenerator(nn.Module):
    def __init__(self, noise_dim: int = 128, embed_dim: int = EMBED_DIM, hidden: tuple[int, ...] = (256, 512)):
        super().__init__()
        self.noise_dim = noise_dim
        dims = [noise_dim, *hidden, embed_dim]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class LatentDiscriminator(nn.Module):
    def __init__(self, embed_dim: int = EMBED_DIM, hidden: tuple[int, ...] = (512, 256)):
        super().__init__()
        dims = [embed_dim, *hidden, 1]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.net(emb).squeeze(-1)


@dataclass
class LatentGanConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    noise_dim: int = 128
    seed: int = 0
    log_every: int = 100
    collapse_fraction: float = 0.01  # warn when sample spread falls below this fraction of data spread


@dataclass
class LatentGanResult:
    generator: LatentGenerator
    discriminator: LatentDiscriminator
    log: list[tuple[float, float]] = dc_field(default_factory=list)
    collapsed: bool = False


def _median_pairwise(x: torch.Tensor, cap: int = 256) -> float:
    if len(x) > cap:
        x = x[:cap]
    d = torch.cdist(x, x)
    mask = ~torch.eye(len(x), dtype=torch.bool)
    return float(d[mask].median())


def train_latent_gan(embeddings, config: LatentGanConfig | None = None) -> LatentGanResult:
    """Non-saturating GAN over embedding vectors; warns on mode collapse."""
    cfg = config or LatentGanConfig()
    data = _as_embedding_matrix(embeddings)
    if len(data) < 2:
        raise ValidationError("need at least two embeddings to model a distribution")
    torch.manual_seed(cfg.seed)
    gen = LatentGenerator(cfg.noise_dim, data.shape[1])
    disc = LatentDiscriminator(data.shape[1])
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    trng = torch.Generator().manual_seed(cfg.seed)
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    log = []
    for step in range(cfg.steps):
        idx = torch.randint(0, len(data), (min(cfg.batch_size, len(data)),), generator=trng)
        real = data[idx]
        z = torch.randn(len(real), cfg.noise_dim, generator=trng)
        fake = gen(z)
        d_loss = bce(disc(real), torch.ones(len(real))) + bce(disc(fake.detach()), torch.zeros(len(real)))
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()
        # non-saturating generator objective: maximize log D(G(z))
        g_loss = bce(disc(fake), torch.ones(len(real)))
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append((d_loss.item(), g_loss.item()))
    gen.eval()
    disc.eval()
    samples = sample_latents(gen, min(128, 4 * len(data)), seed=cfg.seed + 1)
    collapsed = _median_pairwise(torch.from_numpy(samples)) < cfg.collapse_fraction * _median_pairwise(data)
    if collapsed:
        warnings.warn("latent generator shows mode collapse: sample spread is far below data spread")
    return LatentGanResult(generator=gen, discriminator=disc, log=log, collapsed=collapsed)


def sample_latents(gen: LatentGenerator, n: int, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise ValidationError("n must be >= 1")
    g = torch.Generator().manual_seed(seed)
    gen.eval()
    with torch.no_grad():
        z = torch.randn(n, gen.noise_dim, generator=g)
        return gen(z).cpu().numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# latent transfer
# ---------------------------------------------------------------------------


class TransferHead(nn.Module):
    """Maps embeddings of one zoo onto another (same object, different field kind)."""

    def __init__(self, embed_dim: int = EMBED_DIM, hidden_dim: int = 1024, n_hidden_layers: int = 2):
        super().__init__()
        dims = [embed_dim, *([hidden_dim] * n_hidden_layers), embed_dim]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.net(emb)


@dataclass
class TransferConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    log_every: int = 100


def train_transfer(
    source_embeddings, target_embeddings, config: TransferConfig | None = None
) -> tuple[TransferHead, list[float]]:
    """MSE regression from source-zoo embeddings to target-zoo embeddings."""
    cfg = config or TransferConfig()
    src = _as_embedding_matrix(source_embeddings)
    dst = _as_embedding_matrix(target_embeddings)
    if len(src) != len(dst):
        raise ValidationError("source and target must pair up row by row")
    torch.manual_seed(cfg.seed)
    head = TransferHead(embed_dim=src.shape[1])
    if dst.shape[1] != src.shape[1]:
        raise ValidationError("transfer expects equal embedding dims")
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = []
    for step in range(cfg.steps):
        idx = torch.randint(0, len(src), (min(cfg.batch_size, len(src)),), generator=gen)
        loss = torch.nn.functional.mse_loss(head(src[idx]), dst[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(loss.item())
    head.eval()
    return head, log


def apply_transfer(head: TransferHead, embeddings) -> np.ndarray:
    emb = _as_embedding_matrix(embeddings)
    head.eval()
    with torch.no_grad():
        return head(emb).cpu().numpy().astype(np.float32)
