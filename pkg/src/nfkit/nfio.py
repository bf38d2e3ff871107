"""Serialization: .nf weight containers, model checkpoints, embedding matrices.

A .nf file is a 4-byte little-endian header length, a UTF-8 JSON header, then
the raw tensor payload: float32 little-endian tensors, concatenated in header
manifest order. The header records the architecture, activation, omega0,
field kind, init seed, normalization, and the manifest (name + shape per
tensor), so a container is self-describing.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, ValidationError
from .fields import FieldKind, ScaleCenter
from .mlp import ArchSpec, MLPWeights

FORMAT_VERSION = 1


def _norm_to_dict(norm: ScaleCenter) -> dict:
    return {"center": list(norm.center), "scale": norm.scale}


def _norm_from_dict(d: dict) -> ScaleCenter:
    return ScaleCenter(center=tuple(float(c) for c in d["center"]), scale=float(d["scale"]))


def save_nf(path, nf: MLPWeights) -> None:
    manifest = []
    payload = bytearray()
    for i, (w, b) in enumerate(nf.layers):
        for name, t in ((f"layers.{i}.weight", w), (f"layers.{i}.bias", b)):
            arr = t.detach().cpu().numpy().astype("<f4")
            manifest.append({"name": name, "shape": list(arr.shape)})
            payload += arr.tobytes()
    header = {
        "format": "nf-weights",
        "version": FORMAT_VERSION,
        "arch": nf.arch.to_dict(),
        "activation": nf.arch.activation,
        "omega0": nf.arch.omega0,
        "field_kind": nf.field_kind.value,
        "init_seed_id": nf.init_seed_id,
        "norm": _norm_to_dict(nf.norm),
        "tensors": manifest,
    }
    blob = json.dumps(header).encode("utf-8")
    Path(path).write_bytes(struct.pack("<I", len(blob)) + blob + bytes(payload))


def read_nf_header(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated container")
    (hlen,) = struct.unpack_from("<I", raw)
    if len(raw) < 4 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed header ({e})") from e
    if header.get("format") != "nf-weights":
        raise FormatError(f"{path}: not a weight container")
    return header


def load_nf(path) -> MLPWeights:
    raw = Path(path).read_bytes()
    header = read_nf_header(path)
    (hlen,) = struct.unpack_from("<I", raw)
    payload = raw[4 + hlen :]
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(payload):
            raise FormatError(f"{path}: payload shorter than manifest ({entry['name']})")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
        offset = end
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes after manifest")
    try:
        arch = ArchSpec.from_dict(header["arch"])
        n_layers = len(arch.layer_dims) - 1
        layers = [(tensors[f"layers.{i}.weight"], tensors[f"layers.{i}.bias"]) for i in range(n_layers)]
        return MLPWeights(
            arch=arch,
            layers=layers,
            field_kind=FieldKind(header["field_kind"]),
            init_seed_id=int(header["init_seed_id"]),
            norm=_norm_from_dict(header["norm"]),
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: header/manifest mismatch ({e})") from e


# ---------------------------------------------------------------------------
# torch module checkpoints (encoder, decoder, task heads)
# ---------------------------------------------------------------------------


def save_checkpoint(path, kind: str, config: dict, state_dict: dict) -> None:
    torch.save({"kind": kind, "config": config, "state": state_dict}, path)


def load_checkpoint(path, expect_kind: str) -> tuple[dict, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise FormatError(f"{path}: unreadable checkpoint ({e})") from e
    if not isinstance(blob, dict) or blob.get("kind") != expect_kind:
        raise FormatError(f"{path}: expected a '{expect_kind}' checkpoint, got '{blob.get('kind')}'")
    return blob["config"], blob["state"]


def save_encoder(path, encoder) -> None:
    save_checkpoint(
        path, "row-encoder", {"row_width": encoder.row_width, "features": list(encoder.features)}, encoder.state_dict()
    )


def load_encoder(path):
    from .embedder import RowEncoder

    config, state = load_checkpoint(path, "row-encoder")
    enc = RowEncoder(int(config["row_width"]), tuple(config["features"]))
    enc.load_state_dict(state)
    enc.eval()
    return enc


def save_decoder(path, decoder) -> None:
    save_checkpoint(path, "implicit-decoder", decoder.spec.to_dict(), decoder.state_dict())


def load_decoder(path):
    from .decoder import DecoderSpec, ImplicitDecoder

    config, state = load_checkpoint(path, "implicit-decoder")
    dec = ImplicitDecoder(DecoderSpec.from_dict(config))
    dec.load_state_dict(state)
    dec.eval()
    return dec


# ---------------------------------------------------------------------------
# embedding matrices
# ---------------------------------------------------------------------------


def _embedding_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    return path, path.with_suffix(".json")


def save_embeddings(
    path, embeddings: np.ndarray, ids: list[str], labels: list[str] | None = None, extra: dict | None = None
) -> None:
    """Float32 .npy matrix plus a JSON sidecar with row ids and optional labels."""
    mat_path, side_path = _embedding_paths(path)
    emb = np.asarray(embeddings, dtype=np.float32)
    if emb.ndim != 2:
        raise ValidationError(f"embeddings must be 2D, got {emb.shape}")
    if len(ids) != len(emb):
        raise ValidationError("one id per embedding row required")
    if labels is not None and len(labels) != len(emb):
        raise ValidationError("one label per embedding row required")
    np.save(mat_path, emb)
    sidecar = {"ids": [str(i) for i in ids], "dim": int(emb.shape[1])}
    if labels is not None:
        sidecar["labels"] = list(labels)
    if extra:
        sidecar.update(extra)
    side_path.write_text(json.dumps(sidecar, indent=1) + "\n")


def load_embeddings(path) -> tuple[np.ndarray, dict]:
    mat_path, side_path = _embedding_paths(path)
    if not mat_path.exists():
        raise FormatError(f"{mat_path}: no such embedding matrix")
    emb = np.load(mat_path)
    if not side_path.exists():
        raise FormatError(f"{mat_path}: missing sidecar {side_path.name}")
    meta = json.loads(side_path.read_text())
    if len(meta["ids"]) != len(emb) or int(meta["dim"]) != emb.shape[1]:
        raise FormatError(f"{mat_path}: sidecar does not match matrix shape {emb.shape}")
    return emb.astype(np.float32), meta
