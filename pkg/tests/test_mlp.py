"""Tests for nfkit.mlp: architecture specs, deterministic initialization,
and the two equivalent forward paths (module and functional)."""

import numpy as np
import pytest
import torch

from nfkit.errors import ValidationError
from nfkit.fields import FieldKind
from nfkit.mlp import (
    ArchSpec,
    FieldMLP,
    MLPWeights,
    nf_field,
    radiance_arch,
    raw_mlp_forward,
    shape_arch,
    shared_init,
)


def rand_points(n=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, generator=gen) * 2 - 1


class TestArchSpec:
    def test_layer_dims(self):
        arch = shape_arch(hidden_dim=64, n_hidden_layers=4)
        assert arch.layer_dims == [3, 64, 64, 64, 64, 1]
        assert arch.activation == "sine" and arch.n_freqs == 0

    def test_radiance_dims(self):
        arch = radiance_arch(hidden_dim=32, n_hidden_layers=3, n_freqs=10)
        assert arch.input_dim == 3 + 3 * 2 * 10
        assert arch.layer_dims == [63, 32, 32, 32, 4]
        assert arch.activation == "relu"

    def test_dict_round_trip(self):
        arch = radiance_arch()
        assert ArchSpec.from_dict(arch.to_dict()) == arch

    def test_validation(self):
        with pytest.raises(ValidationError):
            ArchSpec(activation="tanh")
        with pytest.raises(ValidationError):
            ArchSpec(hidden_dim=0)
        with pytest.raises(ValidationError):
            ArchSpec(n_freqs=-1)


class TestSharedInit:
    def test_identical_bits_for_identical_seed(self):
        arch = shape_arch(hidden_dim=32, n_hidden_layers=3)
        a = shared_init(arch, 7)
        b = shared_init(arch, 7)
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
            assert torch.equal(wa, wb) and torch.equal(ba, bb)
        assert a.init_seed_id == 7

    def test_different_seeds_differ(self):
        arch = shape_arch(hidden_dim=32, n_hidden_layers=3)
        a = shared_init(arch, 0)
        b = shared_init(arch, 1)
        assert not torch.equal(a.layers[0][0], b.layers[0][0])

    def test_sine_bounds(self):
        arch = shape_arch(hidden_dim=128, n_hidden_layers=3)
        nf = shared_init(arch, 0)
        w0 = nf.layers[0][0]
        assert w0.abs().max() <= 1.0 / 3 + 1e-7
        w1 = nf.layers[1][0]
        assert w1.abs().max() <= (6.0 / 128) ** 0.5 / 30.0 + 1e-7

    def test_relu_bounds(self):
        nf = shared_init(radiance_arch(hidden_dim=64), 0, field_kind=FieldKind.RF)
        for w, b in nf.layers:
            fan_in = w.shape[1]
            assert w.abs().max() <= fan_in**-0.5 + 1e-7
            assert b.abs().max() <= fan_in**-0.5 + 1e-7


class TestMLPWeights:
    def test_layer_shape_checks(self):
        arch = shape_arch(hidden_dim=8, n_hidden_layers=2)
        nf = shared_init(arch, 0)
        with pytest.raises(ValidationError, match="layers"):
            MLPWeights(arch=arch, layers=nf.layers[:-1], field_kind=FieldKind.SDF)
        bad = list(nf.layers)
        bad[1] = (torch.zeros(8, 9), torch.zeros(8))
        with pytest.raises(ValidationError, match="layer 1"):
            MLPWeights(arch=arch, layers=bad, field_kind=FieldKind.SDF)

    def test_n_params(self):
        arch = shape_arch(hidden_dim=8, n_hidden_layers=2)
        nf = shared_init(arch, 0)
        assert nf.n_params == (3 * 8 + 8) + (8 * 8 + 8) + (8 * 1 + 1)

    def test_clone_is_deep(self):
        nf = shared_init(shape_arch(hidden_dim=8, n_hidden_layers=2), 0)
        dup = nf.clone()
        dup.layers[0][0][0, 0] += 1.0
        assert not torch.equal(dup.layers[0][0], nf.layers[0][0])


class TestForwardPaths:
    @pytest.mark.parametrize("arch,kind", [
        (shape_arch(hidden_dim=32, n_hidden_layers=3), FieldKind.SDF),
        (radiance_arch(hidden_dim=32), FieldKind.RF),
    ])
    def test_module_matches_functional(self, arch, kind):
        nf = shared_init(arch, 3, field_kind=kind)
        module = FieldMLP(arch).load_weights(nf)
        pts = rand_points(128)
        with torch.no_grad():
            a = module(pts)
        b = raw_mlp_forward(nf, pts)
        assert torch.allclose(a, b, atol=1e-6)

    def test_to_weights_round_trip(self):
        arch = shape_arch(hidden_dim=16, n_hidden_layers=2)
        nf = shared_init(arch, 9)
        back = FieldMLP(arch).load_weights(nf).to_weights(FieldKind.SDF, 9)
        for (wa, ba), (wb, bb) in zip(nf.layers, back.layers):
            assert torch.equal(wa, wb) and torch.equal(ba, bb)

    def test_nf_field_adapters(self):
        pts = rand_points(32)
        sdf = shared_init(shape_arch(hidden_dim=16, n_hidden_layers=2), 0, field_kind=FieldKind.SDF)
        raw = raw_mlp_forward(sdf, pts)[:, 0]
        assert torch.equal(nf_field(sdf)(pts), raw)

        occ_nf = shared_init(shape_arch(hidden_dim=16, n_hidden_layers=2), 0, field_kind=FieldKind.OF)
        occ = nf_field(occ_nf)(pts)
        assert torch.allclose(occ, torch.sigmoid(raw))
        assert (occ >= 0).all() and (occ <= 1).all()

        rf = shared_init(radiance_arch(hidden_dim=16), 0, field_kind=FieldKind.RF)
        rgb, sigma = nf_field(rf)(pts)
        assert rgb.shape == (32, 3) and sigma.shape == (32,)
        assert (rgb >= 0).all() and (rgb <= 1).all() and (sigma >= 0).all()

    def test_nf_field_output_dim_check(self):
        wide = ArchSpec(hidden_dim=16, n_hidden_layers=2, output_dim=4)
        nf = shared_init(wide, 0, field_kind=FieldKind.SDF)
        with pytest.raises(ValidationError, match="output_dim"):
            nf_field(nf)
        narrow = shared_init(shape_arch(hidden_dim=16, n_hidden_layers=2), 0, field_kind=FieldKind.RF)
        with pytest.raises(ValidationError, match="output_dim"):
            nf_field(narrow)

    def test_frequency_encoding_used_when_configured(self):
        from nfkit.fields import frequency_encode

        arch = radiance_arch(hidden_dim=16)
        nf = shared_init(arch, 0, field_kind=FieldKind.RF)
        pts = rand_points(8)
        x = frequency_encode(pts, arch.n_freqs, arch.include_input)
        for w, b in nf.layers[:-1]:
            x = torch.relu(x @ w.t() + b)
        w, b = nf.layers[-1]
        manual = x @ w.t() + b
        assert torch.allclose(raw_mlp_forward(nf, pts), manual, atol=1e-6)
