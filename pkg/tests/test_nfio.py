"""Serialization round trips: .nf weight containers, checkpoints, embeddings."""

import struct

import numpy as np
import numpy.testing as npt
import pytest
import torch

from nfkit.embedder import RowEncoder
from nfkit.decoder import DecoderSpec, ImplicitDecoder
from nfkit.errors import FormatError, ValidationError
from nfkit.fields import FieldKind, ScaleCenter
from nfkit.mlp import radiance_arch, shape_arch, shared_init
from nfkit.nfio import (
    load_checkpoint,
    load_decoder,
    load_embeddings,
    load_encoder,
    load_nf,
    read_nf_header,
    save_checkpoint,
    save_decoder,
    save_embeddings,
    save_encoder,
    save_nf,
)


def make_nf(seed=0, kind=FieldKind.SDF):
    arch = shape_arch(hidden_dim=16, n_hidden_layers=2)
    nf = shared_init(arch, seed, field_kind=kind)
    nf.norm = ScaleCenter(center=(0.1, -0.2, 0.05), scale=1.7)
    return nf


class TestNfContainer:
    def test_bit_exact_round_trip(self, tmp_path):
        nf = make_nf(3)
        p = tmp_path / "a.nf"
        save_nf(p, nf)
        back = load_nf(p)
        assert back.arch == nf.arch
        assert back.field_kind == nf.field_kind
        assert back.init_seed_id == nf.init_seed_id
        assert back.norm.center == nf.norm.center and back.norm.scale == nf.norm.scale
        for (wa, ba), (wb, bb) in zip(nf.layers, back.layers):
            assert torch.equal(wa, wb) and torch.equal(ba, bb)

    def test_radiance_round_trip(self, tmp_path):
        nf = shared_init(radiance_arch(hidden_dim=16), 5, field_kind=FieldKind.RF)
        p = tmp_path / "r.nf"
        save_nf(p, nf)
        back = load_nf(p)
        assert back.arch.activation == "relu" and back.arch.output_dim == 4
        assert torch.equal(back.layers[-1][0], nf.layers[-1][0])

    def test_header_is_self_describing(self, tmp_path):
        p = tmp_path / "a.nf"
        save_nf(p, make_nf())
        header = read_nf_header(p)
        assert header["format"] == "nf-weights"
        assert header["field_kind"] == "sdf"
        assert header["arch"]["hidden_dim"] == 16
        names = [t["name"] for t in header["tensors"]]
        assert names[0] == "layers.0.weight" and names[1] == "layers.0.bias"

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "a.nf"
        save_nf(p, make_nf())
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="payload shorter"):
            load_nf(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "a.nf"
        save_nf(p, make_nf())
        p.write_bytes(p.read_bytes() + b"\x00" * 4)
        with pytest.raises(FormatError, match="trailing"):
            load_nf(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "a.nf"
        p.write_bytes(struct.pack("<I", 1000) + b'{"format"')
        with pytest.raises(FormatError, match="truncated header"):
            read_nf_header(p)
        p.write_bytes(b"\x01")
        with pytest.raises(FormatError, match="truncated container"):
            read_nf_header(p)

    def test_wrong_format_marker(self, tmp_path):
        p = tmp_path / "a.nf"
        blob = b'{"format": "something-else"}'
        p.write_bytes(struct.pack("<I", len(blob)) + blob)
        with pytest.raises(FormatError, match="not a weight container"):
            read_nf_header(p)

    def test_malformed_json_header(self, tmp_path):
        p = tmp_path / "a.nf"
        blob = b"{not json"
        p.write_bytes(struct.pack("<I", len(blob)) + blob)
        with pytest.raises(FormatError, match="malformed header"):
            read_nf_header(p)


class TestCheckpoints:
    def test_kind_mismatch(self, tmp_path):
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, "classifier-head", {"classes": ["a"]}, {})
        config, state = load_checkpoint(p, "classifier-head")
        assert config["classes"] == ["a"]
        with pytest.raises(FormatError, match="expected a 'latent-gan'"):
            load_checkpoint(p, "latent-gan")

    def test_unreadable(self, tmp_path):
        p = tmp_path / "c.ckpt"
        p.write_bytes(b"garbage")
        with pytest.raises(FormatError, match="unreadable"):
            load_checkpoint(p, "classifier-head")

    def test_encoder_round_trip(self, tmp_path):
        enc = RowEncoder(17, (8, 16, 32))
        p = tmp_path / "enc.ckpt"
        save_encoder(p, enc)
        back = load_encoder(p)
        assert back.row_width == 17 and tuple(back.features) == (8, 16, 32)
        assert not back.training
        for a, b in zip(enc.state_dict().values(), back.state_dict().values()):
            assert torch.equal(a, b)

    def test_decoder_round_trip(self, tmp_path):
        spec = DecoderSpec(field_kind=FieldKind.SDF, embed_dim=32, hidden_dim=24, n_hidden_layers=3)
        dec = ImplicitDecoder(spec)
        p = tmp_path / "dec.ckpt"
        save_decoder(p, dec)
        back = load_decoder(p)
        assert back.spec == spec
        for a, b in zip(dec.state_dict().values(), back.state_dict().values()):
            assert torch.equal(a, b)


class TestEmbeddings:
    def test_round_trip_with_sidecar(self, tmp_path):
        emb = np.random.default_rng(0).normal(size=(5, 8)).astype(np.float32)
        ids = [f"obj_{i}" for i in range(5)]
        save_embeddings(tmp_path / "e.npy", emb, ids, labels=["a", "a", "b", "b", "a"], extra={"init_seed": 0})
        back, meta = load_embeddings(tmp_path / "e.npy")
        npt.assert_array_equal(back, emb)
        assert meta["ids"] == ids and meta["labels"][2] == "b"
        assert meta["dim"] == 8 and meta["init_seed"] == 0

    def test_suffix_normalization(self, tmp_path):
        emb = np.zeros((2, 4), dtype=np.float32)
        save_embeddings(tmp_path / "e", emb, ["x", "y"])
        back, meta = load_embeddings(tmp_path / "e")
        assert back.shape == (2, 4)

    def test_validation(self, tmp_path):
        with pytest.raises(ValidationError):
            save_embeddings(tmp_path / "e.npy", np.zeros(4), ["a"])
        with pytest.raises(ValidationError, match="one id per"):
            save_embeddings(tmp_path / "e.npy", np.zeros((2, 4)), ["a"])
        with pytest.raises(ValidationError, match="one label per"):
            save_embeddings(tmp_path / "e.npy", np.zeros((2, 4)), ["a", "b"], labels=["a"])

    def test_missing_pieces(self, tmp_path):
        with pytest.raises(FormatError, match="no such"):
            load_embeddings(tmp_path / "nope.npy")
        save_embeddings(tmp_path / "e.npy", np.zeros((2, 4)), ["a", "b"])
        (tmp_path / "e.json").unlink()
        with pytest.raises(FormatError, match="sidecar"):
            load_embeddings(tmp_path / "e.npy")

    def test_sidecar_shape_mismatch(self, tmp_path):
        save_embeddings(tmp_path / "e.npy", np.zeros((2, 4)), ["a", "b"])
        np.save(tmp_path / "e.npy", np.zeros((3, 4), dtype=np.float32))
        with pytest.raises(FormatError, match="does not match"):
            load_embeddings(tmp_path / "e.npy")
