"""MLP neural fields: architecture, deterministic initialization, evaluation.

A field network is a plain MLP over (optionally frequency-encoded)
coordinates. Sine networks apply x -> sin(omega0 * (Wx + b)) at every hidden
layer with the matching init recipe (first layer U(-1/fan_in, 1/fan_in),
later layers U(+-sqrt(6/fan_in)/omega0)); relu networks use fan-in uniform
init. The final layer is linear, range mapping happens in the field adapter.

All networks fitted into one zoo share the same initialization, reproduced
bit-exactly from (architecture, seed).
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ValidationError
from .fields import FieldKind, ScaleCenter, encoded_dim, frequency_encode

Activation = str  # "sine" | "relu"


@dataclass(frozen=True)
class ArchSpec:
    coord_dim: int = 3
    n_freqs: int = 0  # 0 = raw coordinates
    include_input: bool = True
    hidden_dim: int = 512
    n_hidden_layers: int = 4
    output_dim: int = 1
    activation: Activation = "sine"
    omega0: float = 30.0

    def __post_init__(self):
        if self.activation not in ("sine", "relu"):
            raise ValidationError(f"unknown activation '{self.activation}'")
        if min(self.coord_dim, self.hidden_dim, self.n_hidden_layers, self.output_dim) < 1:
            raise ValidationError("architecture dimensions must be positive")
        if self.n_freqs < 0:
            raise ValidationError("n_freqs must be >= 0")

    @property
    def input_dim(self) -> int:
        return encoded_dim(self.coord_dim, self.n_freqs, self.include_input)

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden_dim] * self.n_hidden_layers + [self.output_dim]

    def to_dict(self) -> dict:
        return {
            "coord_dim": self.coord_dim,
            "n_freqs": self.n_freqs,
            "include_input": self.include_input,
            "hidden_dim": self.hidden_dim,
            "n_hidden_layers": self.n_hidden_layers,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "omega0": self.omega0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


def shape_arch(hidden_dim: int = 512, n_hidden_layers: int = 4) -> ArchSpec:
    """Sine network on raw coordinates with one scalar output."""
    return ArchSpec(hidden_dim=hidden_dim, n_hidden_layers=n_hidden_layers)


def radiance_arch(hidden_dim: int = 64, n_hidden_layers: int = 3, n_freqs: int = 10) -> ArchSpec:
    """ReLU network on frequency-encoded coordinates, rgb + density head."""
    return ArchSpec(
        n_freqs=n_freqs,
        include_input=True,
        hidden_dim=hidden_dim,
        n_hidden_layers=n_hidden_layers,
        output_dim=4,
        activation="relu",
    )


@dataclass
class MLPWeights:
    """A fitted field network: parameters plus the metadata needed to run it."""

    arch: ArchSpec
    layers: list[tuple[torch.Tensor, torch.Tensor]]  # per layer (W (out, in), b (out,))
    field_kind: FieldKind
    init_seed_id: int = 0
    norm: ScaleCenter = field(default_factory=ScaleCenter)

    def __post_init__(self):
        self.field_kind = FieldKind(self.field_kind)
        dims = self.arch.layer_dims
        if len(self.layers) != len(dims) - 1:
            raise ValidationError(f"expected {len(dims) - 1} layers, got {len(self.layers)}")
        fixed = []
        for i, (w, b) in enumerate(self.layers):
            w = torch.as_tensor(w, dtype=torch.float32)
            b = torch.as_tensor(b, dtype=torch.float32)
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValidationError(
                    f"layer {i}: expected W {(dims[i + 1], dims[i])} and b {(dims[i + 1],)}, "
                    f"got {tuple(w.shape)} and {tuple(b.shape)}"
                )
            fixed.append((w, b))
        self.layers = fixed

    @property
    def n_params(self) -> int:
        return sum(w.numel() + b.numel() for w, b in self.layers)

    def clone(self) -> "MLPWeights":
        return MLPWeights(
            arch=self.arch,
            layers=[(w.clone(), b.clone()) for w, b in self.layers],
            field_kind=self.field_kind,
            init_seed_id=self.init_seed_id,
            norm=self.norm,
        )


def _uniform(shape, bound: float, gen: torch.Generator) -> torch.Tensor:
    return (torch.rand(shape, generator=gen, dtype=torch.float32) * 2.0 - 1.0) * bound


def shared_init(arch: ArchSpec, seed: int, field_kind: FieldKind = FieldKind.SDF) -> MLPWeights:
    """Deterministic initialization: identical bits for identical (arch, seed)."""
    gen = torch.Generator().manual_seed(int(seed))
    dims = arch.layer_dims
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        if arch.activation == "sine":
            if i == 0:
                w_bound = 1.0 / fan_in
            else:
                w_bound = (6.0 / fan_in) ** 0.5 / arch.omega0
        else:
            w_bound = 1.0 / fan_in**0.5
        w = _uniform((dims[i + 1], fan_in), w_bound, gen)
        b = _uniform((dims[i + 1],), 1.0 / fan_in**0.5, gen)
        layers.append((w, b))
    return MLPWeights(arch=arch, layers=layers, field_kind=field_kind, init_seed_id=int(seed))


class FieldMLP(nn.Module):
    """Trainable module mirroring MLPWeights."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        dims = arch.layer_dims
        self.linears = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(len(dims) - 1))

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        x = coords
        if self.arch.n_freqs > 0:
            x = frequency_encode(x, self.arch.n_freqs, self.arch.include_input)
        for lin in self.linears[:-1]:
            x = lin(x)
            x = torch.sin(self.arch.omega0 * x) if self.arch.activation == "sine" else torch.relu(x)
        return self.linears[-1](x)

    def load_weights(self, nf: MLPWeights) -> "FieldMLP":
        with torch.no_grad():
            for lin, (w, b) in zip(self.linears, nf.layers):
                lin.weight.copy_(w)
                lin.bias.copy_(b)
        return self

    def to_weights(self, field_kind: FieldKind, init_seed_id: int, norm: ScaleCenter | None = None) -> MLPWeights:
        layers = [(lin.weight.detach().clone(), lin.bias.detach().clone()) for lin in self.linears]
        return MLPWeights(
            arch=self.arch,
            layers=layers,
            field_kind=field_kind,
            init_seed_id=init_seed_id,
            norm=norm or ScaleCenter(),
        )


def raw_mlp_forward(nf: MLPWeights, coords: torch.Tensor) -> torch.Tensor:
    """Functional forward pass straight from the weight container."""
    x = coords
    if nf.arch.n_freqs > 0:
        x = frequency_encode(x, nf.arch.n_freqs, nf.arch.include_input)
    for w, b in nf.layers[:-1]:
        x = x @ w.t() + b
        x = torch.sin(nf.arch.omega0 * x) if nf.arch.activation == "sine" else torch.relu(x)
    w, b = nf.layers[-1]
    return x @ w.t() + b


def nf_field(nf: MLPWeights):
    """Kind-adapted field callable.

    Scalar kinds return (N,) values (occupancy through a sigmoid); radiance
    returns (rgb (N, 3) in [0, 1], sigma (N,) >= 0 via softplus).
    """
    kind = nf.field_kind
    expected_out = 4 if kind == FieldKind.RF else 1
    if nf.arch.output_dim != expected_out:
        raise ValidationError(f"{kind.value} field needs output_dim={expected_out}")

    def fn(points: torch.Tensor):
        out = raw_mlp_forward(nf, points)
        if kind == FieldKind.RF:
            return torch.sigmoid(out[:, :3]), torch.nn.functional.softplus(out[:, 3])
        if kind == FieldKind.OF:
            return torch.sigmoid(out[:, 0])
        return out[:, 0]

    return fn


def module_field(module: FieldMLP, kind: FieldKind):
    """Like nf_field but differentiable through a live module (used while fitting)."""
    kind = FieldKind(kind)

    def fn(points: torch.Tensor):
        out = module(points)
        if kind == FieldKind.RF:
            return torch.sigmoid(out[:, :3]), torch.nn.functional.softplus(out[:, 3])
        if kind == FieldKind.OF:
            return torch.sigmoid(out[:, 0])
        return out[:, 0]

    return fn
