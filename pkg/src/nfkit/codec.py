"""Flatten an MLP field into a single matrix and back.

Every linear layer contributes a block [W^T; b^T]: one row per input unit
holding its outgoing weights, plus a bias row below. Blocks are stacked in
layer order into an (S, H) matrix whose column count is the hidden width; the
output layer has fewer columns than H, so it is zero-padded on the right
before stacking. With include_io=False the input and output layers are left
out of the matrix entirely (they ride along on the layout so the transform
stays invertible) and only the hidden-to-hidden blocks are stacked.

Row counts, with I = input width, H = hidden width, O = output width and
L = number of hidden-to-hidden layers:

    include_io=True:   S = (I + 1) + L * (H + 1) + (H + 1)
    include_io=False:  S = L * (H + 1)

The transform is bit-exact in both directions; unstack_weights refuses
matrices whose zero-pad region was modified.
"""

from dataclasses import dataclass

import torch

from .errors import ValidationError
from .fields import FieldKind, ScaleCenter
from .mlp import ArchSpec, MLPWeights

LayerTensors = tuple[torch.Tensor, torch.Tensor]


@dataclass(eq=False)
class StackLayout:
    """Everything needed to invert a stacked matrix back into MLPWeights."""

    arch: ArchSpec
    field_kind: FieldKind
    init_seed_id: int
    include_io: bool
    norm: ScaleCenter
    excluded: tuple[LayerTensors, LayerTensors] | None = None  # (input, output) when include_io=False

    @property
    def n_rows(self) -> int:
        i, h = self.arch.input_dim, self.arch.hidden_dim
        l = self.arch.n_hidden_layers - 1
        if self.include_io:
            return (i + 1) + l * (h + 1) + (h + 1)
        return l * (h + 1)


@dataclass(eq=False)
class StackedWeights:
    data: torch.Tensor  # (S, H) float32
    layout: StackLayout

    def __post_init__(self):
        self.data = torch.as_tensor(self.data, dtype=torch.float32)
        expected = (self.layout.n_rows, self.layout.arch.hidden_dim)
        if tuple(self.data.shape) != expected:
            raise ValidationError(f"stacked matrix must be {expected}, got {tuple(self.data.shape)}")


def _block(w: torch.Tensor, b: torch.Tensor, width: int) -> torch.Tensor:
    """[W^T; b^T], zero-padded on the right up to `width` columns."""
    block = torch.cat([w.t(), b.unsqueeze(0)], dim=0)
    if block.shape[1] < width:
        pad = torch.zeros(block.shape[0], width - block.shape[1], dtype=block.dtype)
        block = torch.cat([block, pad], dim=1)
    return block


def stack_weights(nf: MLPWeights, include_io: bool = True) -> StackedWeights:
    arch = nf.arch
    h, o = arch.hidden_dim, arch.output_dim
    if o > h:
        raise ValidationError(f"output width {o} exceeds hidden width {h}, cannot pad")
    if not include_io and arch.n_hidden_layers < 2:
        raise ValidationError("include_io=False needs at least one hidden-to-hidden layer")
    if include_io:
        picked = nf.layers
        excluded = None
    else:
        picked = nf.layers[1:-1]
        first, last = nf.layers[0], nf.layers[-1]
        excluded = ((first[0].clone(), first[1].clone()), (last[0].clone(), last[1].clone()))
    data = torch.cat([_block(w, b, h) for w, b in picked], dim=0)
    layout = StackLayout(
        arch=arch,
        field_kind=nf.field_kind,
        init_seed_id=nf.init_seed_id,
        include_io=include_io,
        norm=nf.norm,
        excluded=excluded,
    )
    return StackedWeights(data=data, layout=layout)


def unstack_weights(stacked: StackedWeights) -> MLPWeights:
    layout = stacked.layout
    arch = layout.arch
    i, h, o = arch.input_dim, arch.hidden_dim, arch.output_dim
    data = stacked.data
    layers: list[LayerTensors] = []
    row = 0

    def take(in_dim: int, out_dim: int) -> LayerTensors:
        nonlocal row
        block = data[row : row + in_dim + 1]
        row += in_dim + 1
        if out_dim < h:
            pad = block[:, out_dim:]
            if pad.abs().max() != 0:
                raise ValidationError("zero-pad region of the output block is non-zero, matrix was tampered with")
        return block[:in_dim, :out_dim].t().contiguous(), block[in_dim, :out_dim].contiguous()

    if layout.include_io:
        layers.append(take(i, h))
        for _ in range(arch.n_hidden_layers - 1):
            layers.append(take(h, h))
        layers.append(take(h, o))
    else:
        if layout.excluded is None:
            raise ValidationError("layout is missing the excluded input/output layers")
        for _ in range(arch.n_hidden_layers - 1):
            layers.append(take(h, h))
        (w_in, b_in), (w_out, b_out) = layout.excluded
        layers = [(w_in, b_in)] + layers + [(w_out, b_out)]
    return MLPWeights(
        arch=arch,
        layers=layers,
        field_kind=layout.field_kind,
        init_seed_id=layout.init_seed_id,
        norm=layout.norm,
    )
