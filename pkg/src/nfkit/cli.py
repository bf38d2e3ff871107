"""The `nf` command line tool.

Every subcommand reads defaults from the optional --config JSON file (keys
per subcommand, nested for command groups); explicit flags win over config
values, config values win over built-in defaults. Reports are printed as JSON
on stdout. Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import analysis, tasks
from .codec import stack_weights
from .decoder import render_embedding, reconstruct as decode_reconstruct
from .embedder import Nf2vecConfig, encode, encode_many, interpolate_embeddings, train_nf2vec
from .errors import NfError, ValidationError
from .fields import FieldKind, PointCloud
from .fitting import FitConfig, NerfFitConfig, fit_nerf, fit_shape_nf, sampler_for
from .metrics import accuracy as accuracy_metric, dataset_miou, mean_precision_at_k, report_json
from .mlp import radiance_arch, shape_arch
from .nfio import (
    load_decoder,
    load_embeddings,
    load_encoder,
    load_checkpoint,
    load_nf,
    save_checkpoint,
    save_decoder,
    save_embeddings,
    save_encoder,
    save_nf,
)
from .shapeio import load_pointcloud, load_pose, load_shape, save_image, save_mesh, save_pointcloud
from .surfaces import extract_surface
from .zoo import CorpusConfig, load_manifest, load_zoo_nfs, make_corpus, zoo_items

KIND_CHOICES = click.Choice([k.value for k in FieldKind])


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with per-subcommand default options.")
@click.pass_context
def cli(ctx, config_path):
    """Fit neural fields, embed their weights, and run downstream tasks."""
    if config_path:
        loaded = json.loads(Path(config_path).read_text())
        if not isinstance(loaded, dict):
            raise ValidationError("config must be a JSON object keyed by subcommand")
        ctx.default_map = loaded


def _echo_report(report: dict, out=None):
    text = report_json(report, out)
    click.echo(text, nl=False)


def _default_arch(kind: FieldKind, hidden_dim: int | None, n_layers: int | None):
    if kind == FieldKind.RF:
        return radiance_arch(hidden_dim or 64, n_layers or 3)
    return shape_arch(hidden_dim or 512, n_layers or 4)


def _infer_kind(path: Path) -> FieldKind:
    if path.is_dir():
        return FieldKind.RF
    return {".xyz": FieldKind.UDF, ".off": FieldKind.SDF, ".obj": FieldKind.SDF, ".vox": FieldKind.OF}.get(
        path.suffix.lower()
    ) or _fail(f"cannot infer field kind from '{path.name}', pass --kind")


def _fail(msg: str):
    raise ValidationError(msg)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@cli.command("make-dataset")
@click.option("--root", required=True, type=click.Path(file_okay=False))
@click.option("--kind", type=KIND_CHOICES, default="udf", show_default=True)
@click.option("--base-per-class", default=10, show_default=True)
@click.option("--variants", default=2, show_default=True, help="Augmented copies per base shape.")
@click.option("--cloud-points", default=2048, show_default=True)
@click.option("--mesh-resolution", default=64, show_default=True)
@click.option("--voxel-resolution", default=48, show_default=True)
@click.option("--n-views", default=9, show_default=True)
@click.option("--view-size", default=32, show_default=True)
@click.option("--val-fraction", default=0.1, show_default=True)
@click.option("--hidden-dim", type=int, default=None, help="Network width for this zoo.")
@click.option("--n-layers", type=int, default=None)
@click.option("--init-seed", default=0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def make_dataset(root, kind, base_per_class, variants, cloud_points, mesh_resolution, voxel_resolution,
                 n_views, view_size, val_fraction, hidden_dim, n_layers, init_seed, seed):
    """Generate a labeled shape corpus plus its zoo manifest."""
    kind = FieldKind(kind)
    cfg = CorpusConfig(
        kind=kind,
        base_per_class=base_per_class,
        variants_per_base=variants,
        cloud_points=cloud_points,
        mesh_resolution=mesh_resolution,
        voxel_resolution=voxel_resolution,
        n_views=n_views,
        view_size=view_size,
        val_fraction=val_fraction,
        seed=seed,
    )
    manifest = make_corpus(root, cfg, _default_arch(kind, hidden_dim, n_layers), init_seed=init_seed)
    _echo_report({
        "root": str(root),
        "kind": kind.value,
        "classes": manifest.classes,
        "entries": len(manifest.entries),
        "train": len(manifest.split_entries("train")),
        "val": len(manifest.split_entries("val")),
    })


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@cli.command()
@click.option("--shape", "shape_path", type=click.Path(exists=True), default=None, help="Single shape to fit.")
@click.option("--zoo", "zoo_root", type=click.Path(exists=True, file_okay=False), default=None,
              help="Fit every entry of the zoo manifest under this directory.")
@click.option("--kind", type=KIND_CHOICES, default=None, help="Field kind (inferred from the file when omitted).")
@click.option("--out", type=click.Path(), default=None, help="Output .nf path (single-shape mode).")
@click.option("--hidden-dim", type=int, default=None)
@click.option("--n-layers", type=int, default=None)
@click.option("--init-seed", default=0, show_default=True)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--clamp-delta", type=float, default=None)
@click.option("--rays-per-step", type=int, default=None, help="Radiance fits only.")
@click.option("--n-samples", type=int, default=None, help="Samples per ray, radiance fits only.")
@click.option("--quiet", is_flag=True, default=False)
def fit(shape_path, zoo_root, kind, out, hidden_dim, n_layers, init_seed, steps, batch_size, lr,
        clamp_delta, rays_per_step, n_samples, quiet):
    """Fit neural fields to shapes from the shared initialization."""
    if (shape_path is None) == (zoo_root is None):
        _fail("pass exactly one of --shape or --zoo")

    def shape_cfg():
        cfg = FitConfig()
        if steps is not None:
            cfg.steps = steps
        if batch_size is not None:
            cfg.batch_size = batch_size
        if lr is not None:
            cfg.lr = lr
        if clamp_delta is not None:
            cfg.clamp_delta = clamp_delta
        return cfg

    def nerf_cfg():
        cfg = NerfFitConfig()
        if steps is not None:
            cfg.steps = steps
        if rays_per_step is not None:
            cfg.rays_per_step = rays_per_step
        if n_samples is not None:
            cfg.n_samples = n_samples
        if lr is not None:
            cfg.lr = lr
        return cfg

    if zoo_root:
        from .zoo import fit_zoo

        manifest = load_manifest(Path(zoo_root) / "manifest.json")
        cfg = nerf_cfg() if manifest.kind == FieldKind.RF else shape_cfg()
        progress = None if quiet else (lambda i, n, eid: click.echo(f"[{i}/{n}] {eid}", err=True))
        t0 = time.perf_counter()
        fit_zoo(zoo_root, manifest, cfg, progress=progress)
        _echo_report({"zoo": str(zoo_root), "fitted": len(manifest.entries),
                      "seconds": round(time.perf_counter() - t0, 2)})
        return

    spath = Path(shape_path)
    fkind = FieldKind(kind) if kind else _infer_kind(spath)
    if out is None:
        _fail("single-shape mode needs --out")
    shape = load_shape(spath)
    arch = _default_arch(fkind, hidden_dim, n_layers)
    t0 = time.perf_counter()
    if fkind == FieldKind.RF:
        nf, log = fit_nerf(shape, arch, init_seed, nerf_cfg())
    else:
        nf, log = fit_shape_nf(shape, fkind, arch, init_seed, shape_cfg())
    save_nf(out, nf)
    _echo_report({"out": str(out), "kind": fkind.value, "final_loss": log[-1] if log else None,
                  "seconds": round(time.perf_counter() - t0, 2)})


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------


@cli.command("train-embedder")
@click.option("--zoo", "zoo_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--steps", default=2000, show_default=True)
@click.option("--batch-nfs", default=16, show_default=True)
@click.option("--queries", default=512, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--encoder-features", default="512,512,1024,1024", show_default=True)
@click.option("--decoder-hidden", default=512, show_default=True)
@click.option("--decoder-layers", default=5, show_default=True)
@click.option("--rays-per-nf", default=64, show_default=True)
@click.option("--samples-per-ray", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_embedder(zoo_root, out_dir, steps, batch_nfs, queries, lr, encoder_features,
                   decoder_hidden, decoder_layers, rays_per_nf, samples_per_ray, seed):
    """Train the weight encoder and implicit decoder on a fitted zoo."""
    root = Path(zoo_root)
    manifest = load_manifest(root / "manifest.json")
    features = tuple(int(x) for x in str(encoder_features).split(","))
    cfg = Nf2vecConfig(
        steps=steps, batch_nfs=batch_nfs, queries_per_nf=queries, lr=lr,
        encoder_features=features, decoder_hidden=decoder_hidden, decoder_layers=decoder_layers,
        rays_per_nf=rays_per_nf, samples_per_ray=samples_per_ray, seed=seed,
    )
    t0 = time.perf_counter()
    train_items = zoo_items(root, manifest, manifest.split_entries("train"))
    val_entries = manifest.split_entries("val")
    val_items = zoo_items(root, manifest, val_entries) if val_entries else None
    result = train_nf2vec(train_items, cfg, val_items)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(out / "encoder.ckpt", result.encoder)
    save_decoder(out / "decoder.ckpt", result.decoder)
    _echo_report({
        "encoder": str(out / "encoder.ckpt"),
        "decoder": str(out / "decoder.ckpt"),
        "train_loss_final": result.train_log[-1] if result.train_log else None,
        "val_loss": result.val_loss,
        "seconds": round(time.perf_counter() - t0, 2),
    })


@cli.command()
@click.option("--zoo", "zoo_root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--nf", "nf_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Embed a single .nf file instead of a whole zoo.")
@click.option("--encoder", "encoder_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--include-io/--no-include-io", "include_io", default=None,
              help="Single-file mode stacking; defaults to the kind's convention.")
@click.option("--out", required=True, type=click.Path())
def embed(zoo_root, nf_path, encoder_path, include_io, out):
    """Embed fitted networks into 1024-d vectors (matrix + JSON sidecar)."""
    if (zoo_root is None) == (nf_path is None):
        _fail("pass exactly one of --zoo or --nf")
    encoder = load_encoder(encoder_path)
    if zoo_root:
        root = Path(zoo_root)
        manifest = load_manifest(root / "manifest.json")
        nfs = load_zoo_nfs(root, manifest)
        stacks = [stack_weights(nf, manifest.include_io) for nf in nfs]
        emb = encode_many(encoder, stacks)
        save_embeddings(
            out, emb,
            ids=[e.id for e in manifest.entries],
            labels=[e.label for e in manifest.entries],
            extra={"init_seed": manifest.init_seed, "kind": manifest.kind.value,
                   "splits": [e.split for e in manifest.entries]},
        )
        _echo_report({"out": str(out), "rows": len(emb), "dim": int(emb.shape[1])})
        return
    nf = load_nf(nf_path)
    if include_io is None:
        include_io = nf.field_kind == FieldKind.RF
    emb = encode(encoder, stack_weights(nf, include_io))
    save_embeddings(out, emb[None, :], ids=[Path(nf_path).stem],
                    extra={"init_seed": nf.init_seed_id, "kind": nf.field_kind.value})
    _echo_report({"out": str(out), "rows": 1, "dim": int(emb.shape[0])})


# ---------------------------------------------------------------------------
# reconstruction and interpolation
# ---------------------------------------------------------------------------


def _save_geometry(out: Path, geom):
    if isinstance(geom, PointCloud):
        if out.suffix.lower() != ".xyz":
            _fail(f"distance fields reconstruct to point clouds; use a .xyz output, got '{out.name}'")
        save_pointcloud(out, geom)
    else:
        if out.suffix.lower() not in (".off", ".obj"):
            _fail(f"meshes save to .off or .obj, got '{out.name}'")
        save_mesh(out, geom)


def _embedding_row(path, row_id):
    emb, meta = load_embeddings(path)
    ids = meta["ids"]
    if row_id not in ids:
        _fail(f"id '{row_id}' not present in {path}")
    return emb[ids.index(row_id)]


@cli.command()
@click.option("--nf", "nf_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reconstruct straight from fitted weights.")
@click.option("--embeddings", "emb_path", type=click.Path(), default=None)
@click.option("--id", "row_id", default=None, help="Row id inside --embeddings.")
@click.option("--decoder", "decoder_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--resolution", default=128, show_default=True)
@click.option("--n-points", default=8192, show_default=True)
@click.option("--threshold", default=0.01, show_default=True)
@click.option("--pose", "pose_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Camera pose JSON (radiance fields render instead of meshing).")
@click.option("--t-near", type=float, default=None)
@click.option("--t-far", type=float, default=None)
@click.option("--n-samples", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def reconstruct(nf_path, emb_path, row_id, decoder_path, out, resolution, n_points, threshold,
                pose_path, t_near, t_far, n_samples, seed):
    """Recover geometry (or a rendered view) from weights or an embedding."""
    out = Path(out)
    if (nf_path is None) == (emb_path is None):
        _fail("pass exactly one of --nf or --embeddings")
    if nf_path:
        from .mlp import nf_field

        nf = load_nf(nf_path)
        if nf.field_kind == FieldKind.RF:
            pose, near, far = _require_pose(pose_path, t_near, t_far)
            from .rendering import render_image

            img = render_image(nf_field(nf), pose, near, far, n_samples=n_samples)
            save_image(out, img)
        else:
            geom = extract_surface(nf_field(nf), nf.field_kind, resolution,
                                   n_points=n_points, threshold=threshold, seed=seed)
            _save_geometry(out, geom)
        _echo_report({"out": str(out), "kind": nf.field_kind.value})
        return
    if decoder_path is None or row_id is None:
        _fail("embedding mode needs --decoder and --id")
    decoder = load_decoder(decoder_path)
    emb = _embedding_row(emb_path, row_id)
    kind = FieldKind(decoder.spec.field_kind)
    if kind == FieldKind.RF:
        pose, near, far = _require_pose(pose_path, t_near, t_far)
        img = render_embedding(decoder, emb, pose, near, far, n_samples=n_samples)
        save_image(out, img)
    else:
        geom = decode_reconstruct(decoder, emb, resolution, n_points=n_points, threshold=threshold, seed=seed)
        _save_geometry(out, geom)
    _echo_report({"out": str(out), "kind": kind.value})


def _require_pose(pose_path, t_near, t_far):
    if pose_path is None:
        _fail("radiance fields need --pose")
    pose = load_pose(pose_path)
    radius = float(np.linalg.norm(pose.origin))
    from .rendering import default_near_far

    near, far = default_near_far(radius)
    return pose, t_near if t_near is not None else near, t_far if t_far is not None else far


@cli.command()
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--decoder", "decoder_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--id-a", required=True)
@click.option("--id-b", required=True)
@click.option("--steps", default=5, show_default=True, help="Interpolation points including endpoints.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--resolution", default=96, show_default=True)
@click.option("--n-points", default=8192, show_default=True)
@click.option("--threshold", default=0.01, show_default=True)
@click.option("--pose", "pose_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--t-near", type=float, default=None)
@click.option("--t-far", type=float, default=None)
@click.option("--n-samples", default=48, show_default=True)
def interpolate(emb_path, decoder_path, id_a, id_b, steps, out_dir, resolution, n_points, threshold,
                pose_path, t_near, t_far, n_samples):
    """Decode shapes along the line between two embeddings."""
    if steps < 2:
        _fail("need at least the two endpoints")
    decoder = load_decoder(decoder_path)
    e_a = _embedding_row(emb_path, id_a)
    e_b = _embedding_row(emb_path, id_b)
    kind = FieldKind(decoder.spec.field_kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(steps):
        t = i / (steps - 1)
        emb = interpolate_embeddings(e_a, e_b, t)
        if kind == FieldKind.RF:
            pose, near, far = _require_pose(pose_path, t_near, t_far)
            img = render_embedding(decoder, emb, pose, near, far, n_samples=n_samples)
            dest = out / f"step_{i:02d}.png"
            save_image(dest, img)
        else:
            geom = decode_reconstruct(decoder, emb, resolution, n_points=n_points, threshold=threshold)
            dest = out / (f"step_{i:02d}.xyz" if kind == FieldKind.UDF else f"step_{i:02d}.off")
            _save_geometry(dest, geom)
        written.append({"t": round(t, 4), "file": dest.name})
    _echo_report({"out_dir": str(out), "steps": written})


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def _load_labeled(path):
    emb, meta = load_embeddings(path)
    if "labels" not in meta:
        _fail(f"{path}: sidecar has no labels")
    return emb, meta


@cli.group()
def classify():
    """Train or evaluate the embedding classifier."""


@classify.command("train")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--split", default="train", show_default=True,
              help="Which sidecar split to train on; 'all' uses every row.")
@click.option("--steps", default=1500, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--stitchup/--no-stitchup", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
def classify_train(emb_path, out, split, steps, batch_size, lr, stitchup, seed):
    emb, meta = _load_labeled(emb_path)
    emb, meta = _filter_split(emb, meta, split)
    classes = sorted(set(meta["labels"]))
    y = np.array([classes.index(l) for l in meta["labels"]])
    cfg = tasks.ClassifierConfig(steps=steps, batch_size=batch_size, lr=lr, stitchup=stitchup, seed=seed)
    head, log = tasks.train_classifier(emb, y, len(classes), cfg)
    save_checkpoint(out, "classifier-head",
                    {"classes": classes, "embed_dim": int(emb.shape[1]), "hidden": [512, 128]},
                    head.state_dict())
    _echo_report({"out": str(out), "classes": classes, "rows": len(emb),
                  "final_loss": log[-1] if log else None})


def _filter_split(emb, meta, split):
    if split == "all" or "splits" not in meta:
        if split not in ("all", "train", "val"):
            _fail(f"unknown split '{split}'")
        return emb, meta
    keep = [i for i, s in enumerate(meta["splits"]) if s == split]
    if not keep:
        _fail(f"no rows in split '{split}'")
    out = dict(meta)
    out["ids"] = [meta["ids"][i] for i in keep]
    if "labels" in meta:
        out["labels"] = [meta["labels"][i] for i in keep]
    out["splits"] = [meta["splits"][i] for i in keep]
    return emb[keep], out


def _load_classifier(path):
    config, state = load_checkpoint(path, "classifier-head")
    head = tasks.ClassifierHead(len(config["classes"]), embed_dim=int(config["embed_dim"]),
                                hidden=tuple(config["hidden"]))
    head.load_state_dict(state)
    head.eval()
    return head, list(config["classes"])


@classify.command("eval")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="val", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def classify_eval(emb_path, head_path, split, out):
    emb, meta = _load_labeled(emb_path)
    emb, meta = _filter_split(emb, meta, split)
    head, classes = _load_classifier(head_path)
    _, pred = tasks.classify(head, emb)
    true = np.array([classes.index(l) for l in meta["labels"]])
    per_class = {}
    for ci, cname in enumerate(classes):
        mask = true == ci
        if mask.any():
            per_class[cname] = float((pred[mask] == ci).mean())
    _echo_report({"accuracy": accuracy_metric(pred, true), "n": len(emb),
                  "split": split, "per_class": per_class}, out)


@classify.command("predict")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(), default=None)
def classify_predict(emb_path, head_path, out):
    emb, meta = load_embeddings(emb_path)
    head, classes = _load_classifier(head_path)
    probs, pred = tasks.classify(head, emb)
    rows = [{"id": i, "label": classes[p], "confidence": round(float(probs[j, p]), 6)}
            for j, (i, p) in enumerate(zip(meta["ids"], pred))]
    _echo_report({"predictions": rows}, out)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


@cli.group()
def retrieve():
    """Nearest-neighbor retrieval in embedding space."""


@retrieve.command("query")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--id", "row_id", required=True)
@click.option("--k", default=5, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def retrieve_query(emb_path, row_id, k, out):
    emb, meta = load_embeddings(emb_path)
    ids = meta["ids"]
    if row_id not in ids:
        _fail(f"id '{row_id}' not present in {emb_path}")
    q = ids.index(row_id)
    idx, dists = tasks.retrieve(emb, q, k)
    labels = meta.get("labels")
    neighbors = [
        {"id": ids[i], "distance": round(float(d), 6), **({"label": labels[i]} if labels else {})}
        for i, d in zip(idx, dists)
    ]
    _echo_report({"query": row_id, "k": k, "neighbors": neighbors}, out)


@retrieve.command("eval")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--k", default=5, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def retrieve_eval(emb_path, k, out):
    emb, meta = _load_labeled(emb_path)
    score = mean_precision_at_k(emb, meta["labels"], k)
    _echo_report({"map_at_k": score, "k": k, "n": len(emb)}, out)


# ---------------------------------------------------------------------------
# part segmentation
# ---------------------------------------------------------------------------


def _partseg_items(zoo_root, emb_path, split):
    root = Path(zoo_root)
    manifest = load_manifest(root / "manifest.json")
    emb, meta = load_embeddings(emb_path)
    by_id = {i: r for i, r in zip(meta["ids"], range(len(emb)))}
    items, gts, classes = [], [], []
    for entry in manifest.entries:
        if split != "all" and entry.split != split:
            continue
        if entry.id not in by_id:
            _fail(f"no embedding for zoo entry '{entry.id}'")
        cloud = load_pointcloud(root / entry.source)
        if cloud.part_labels is None:
            _fail(f"{entry.source}: point cloud has no part labels")
        items.append(tasks.PartSegItem(embedding=emb[by_id[entry.id]], points=cloud.points,
                                       labels=cloud.part_labels))
        gts.append(cloud.part_labels)
        classes.append(entry.label)
    if not items:
        _fail(f"no '{split}' entries with labeled points")
    return items, gts, classes


@cli.group()
def segment():
    """Per-point part labels decoded from shape embeddings."""


@segment.command("train")
@click.option("--zoo", "zoo_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--n-parts", default=2, show_default=True)
@click.option("--steps", default=1500, show_default=True)
@click.option("--batch-shapes", default=8, show_default=True)
@click.option("--points-per-shape", default=256, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def segment_train(zoo_root, emb_path, out, n_parts, steps, batch_shapes, points_per_shape, lr, seed):
    items, _, _ = _partseg_items(zoo_root, emb_path, "train")
    cfg = tasks.PartSegConfig(steps=steps, batch_shapes=batch_shapes, points_per_shape=points_per_shape,
                              lr=lr, seed=seed)
    head, log = tasks.train_partseg(items, n_parts, cfg)
    emb_dim = len(np.asarray(items[0].embedding).reshape(-1))
    save_checkpoint(out, "partseg-head",
                    {"n_parts": n_parts, "embed_dim": emb_dim, "hidden_dim": 256,
                     "n_hidden_layers": 3, "n_freqs": 6},
                    head.state_dict())
    _echo_report({"out": str(out), "shapes": len(items), "final_loss": log[-1] if log else None})


def _load_partseg(path):
    config, state = load_checkpoint(path, "partseg-head")
    head = tasks.PartSegHead(int(config["n_parts"]), embed_dim=int(config["embed_dim"]),
                             hidden_dim=int(config["hidden_dim"]),
                             n_hidden_layers=int(config["n_hidden_layers"]), n_freqs=int(config["n_freqs"]))
    head.load_state_dict(state)
    head.eval()
    return head


@segment.command("eval")
@click.option("--zoo", "zoo_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="val", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def segment_eval(zoo_root, emb_path, head_path, split, out):
    items, gts, classes = _partseg_items(zoo_root, emb_path, split)
    head = _load_partseg(head_path)
    preds = [tasks.predict_parts(head, it.embedding, it.points) for it in items]
    parts = list(range(head.n_parts))
    report = dataset_miou(preds, gts, classes, {c: parts for c in set(classes)})
    report.update({"split": split, "n": len(items)})
    _echo_report(report, out)


@segment.command("apply")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--id", "row_id", required=True)
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--points", "points_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
def segment_apply(emb_path, row_id, head_path, points_path, out):
    emb = _embedding_row(emb_path, row_id)
    head = _load_partseg(head_path)
    cloud = load_pointcloud(points_path)
    labels = tasks.predict_parts(head, emb, cloud.points)
    save_pointcloud(out, PointCloud(points=cloud.points, part_labels=labels))
    _echo_report({"out": str(out), "points": len(labels)})


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@cli.group()
def generate():
    """Latent GAN over embeddings: train it or sample new embeddings."""


@generate.command("train")
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=2000, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--noise-dim", default=128, show_default=True)
@click.option("--seed", default=0, show_default=True)
def generate_train(emb_path, out, steps, batch_size, lr, noise_dim, seed):
    emb, _ = load_embeddings(emb_path)
    cfg = tasks.LatentGanConfig(steps=steps, batch_size=batch_size, lr=lr, noise_dim=noise_dim, seed=seed)
    result = tasks.train_latent_gan(emb, cfg)
    save_checkpoint(out, "latent-gan",
                    {"noise_dim": noise_dim, "embed_dim": int(emb.shape[1])},
                    {"generator": result.generator.state_dict(),
                     "discriminator": result.discriminator.state_dict()})
    _echo_report({"out": str(out), "collapsed": result.collapsed,
                  "final_d_loss": result.log[-1][0] if result.log else None,
                  "final_g_loss": result.log[-1][1] if result.log else None})


@generate.command("sample")
@click.option("--gan", "gan_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def generate_sample(gan_path, n, seed, out):
    config, state = load_checkpoint(gan_path, "latent-gan")
    gen = tasks.LatentGenerator(int(config["noise_dim"]), int(config["embed_dim"]))
    gen.load_state_dict(state["generator"])
    samples = tasks.sample_latents(gen, n, seed=seed)
    save_embeddings(out, samples, ids=[f"gen_{i:03d}" for i in range(n)])
    _echo_report({"out": str(out), "rows": n, "dim": int(samples.shape[1])})


# ---------------------------------------------------------------------------
# latent transfer
# ---------------------------------------------------------------------------


@cli.group()
def transfer():
    """Map embeddings of one zoo onto another zoo of the same objects."""


@transfer.command("train")
@click.option("--source", "src_path", required=True, type=click.Path())
@click.option("--target", "dst_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=2000, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def transfer_train(src_path, dst_path, out, steps, batch_size, lr, seed):
    src, src_meta = load_embeddings(src_path)
    dst, dst_meta = load_embeddings(dst_path)
    dst_by_id = {i: r for i, r in zip(dst_meta["ids"], dst)}
    missing = [i for i in src_meta["ids"] if i not in dst_by_id]
    if missing:
        _fail(f"target embeddings missing ids: {missing[:5]}")
    dst_aligned = np.stack([dst_by_id[i] for i in src_meta["ids"]])
    cfg = tasks.TransferConfig(steps=steps, batch_size=batch_size, lr=lr, seed=seed)
    head, log = tasks.train_transfer(src, dst_aligned, cfg)
    save_checkpoint(out, "transfer-head", {"embed_dim": int(src.shape[1])}, head.state_dict())
    _echo_report({"out": str(out), "pairs": len(src), "final_loss": log[-1] if log else None})


@transfer.command("apply")
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", "emb_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def transfer_apply(head_path, emb_path, out):
    config, state = load_checkpoint(head_path, "transfer-head")
    head = tasks.TransferHead(embed_dim=int(config["embed_dim"]))
    head.load_state_dict(state)
    emb, meta = load_embeddings(emb_path)
    mapped = tasks.apply_transfer(head, emb)
    save_embeddings(out, mapped, ids=meta["ids"], labels=meta.get("labels"))
    _echo_report({"out": str(out), "rows": len(mapped)})


# ---------------------------------------------------------------------------
# analyses
# ---------------------------------------------------------------------------


@cli.group()
def analyze():
    """Weight-space analyses: interpolation, distances, unit matching."""


@analyze.command("lmc")
@click.option("--nf-a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--nf-b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--shape", "shape_path", required=True, type=click.Path(exists=True),
              help="Shape providing the fixed probe batch.")
@click.option("--n-ts", default=21, show_default=True)
@click.option("--probe-size", default=4096, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def analyze_lmc(nf_a, nf_b, shape_path, n_ts, probe_size, seed, out):
    if n_ts < 2:
        _fail("need at least the two endpoints")
    a, b = load_nf(nf_a), load_nf(nf_b)
    sampler = sampler_for(load_shape(Path(shape_path)), a.field_kind)
    ts = [i / (n_ts - 1) for i in range(n_ts)]
    curve = analysis.lmc_curve(a, b, sampler, ts=ts, probe_size=probe_size, seed=seed)
    _echo_report({"ts": curve.ts, "losses": curve.losses, "barrier_ratio": curve.barrier_ratio}, out)


@analyze.command("distmat")
@click.option("--embeddings", "emb_paths", required=True, multiple=True, type=click.Path(),
              help="One or more embedding files (rows are concatenated).")
@click.option("--metric", type=click.Choice(["euclidean", "cosine"]), default="euclidean", show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output .npy distance matrix.")
@click.option("--report", "report_path", type=click.Path(), default=None)
def analyze_distmat(emb_paths, metric, out, report_path):
    mats, ids, labels, seeds = [], [], [], []
    for p in emb_paths:
        emb, meta = load_embeddings(p)
        mats.append(emb)
        ids.extend(meta["ids"])
        labels.extend(meta.get("labels", [None] * len(emb)))
        seeds.extend([meta.get("init_seed", 0)] * len(emb))
    emb = np.concatenate(mats)
    dist = analysis.embedding_distance_matrix(emb, init_seed_ids=seeds, metric=metric)
    np.save(out, dist)
    report = {"out": str(out), "n": len(emb), "metric": metric,
              "mean_distance": float(dist[np.triu_indices(len(emb), k=1)].mean()) if len(emb) > 1 else 0.0}
    if all(l is not None for l in labels) and len(set(labels)) > 1:
        lab = np.array(labels)
        same = lab[:, None] == lab[None, :]
        iu = np.triu_indices(len(emb), k=1)
        report["mean_same_class"] = float(dist[iu][same[iu]].mean())
        report["mean_cross_class"] = float(dist[iu][~same[iu]].mean())
    _echo_report(report, report_path)


@analyze.command("match")
@click.option("--nf-a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--nf-b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--max-sweeps", default=100, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def analyze_match(nf_a, nf_b, max_sweeps, out):
    a, b = load_nf(nf_a), load_nf(nf_b)
    result = analysis.match_weights(a, b, max_sweeps=max_sweeps)
    _echo_report({
        "identity": result.all_identity,
        "converged": result.converged,
        "objective_first": result.objective_log[0],
        "objective_last": result.objective_log[-1],
        "perms": [p.tolist() for p in result.perms],
    }, out)


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------


@cli.group()
def bench():
    """Timing benchmarks."""


@bench.command("classify-timing")
@click.option("--zoo", "zoo_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--encoder", "encoder_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--head", "head_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--repeats", default=5, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def bench_classify_timing(zoo_root, encoder_path, head_path, repeats, out):
    """Median per-object time to embed fitted weights and classify the embedding."""
    root = Path(zoo_root)
    manifest = load_manifest(root / "manifest.json")
    nfs = load_zoo_nfs(root, manifest)[:8]
    encoder = load_encoder(encoder_path)
    head, _ = _load_classifier(head_path)
    stacks = [stack_weights(nf, manifest.include_io) for nf in nfs]
    enc_times, cls_times = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        embs = [encode(encoder, s) for s in stacks]
        t1 = time.perf_counter()
        tasks.classify(head, np.stack(embs))
        t2 = time.perf_counter()
        enc_times.append((t1 - t0) / len(stacks) * 1e3)
        cls_times.append((t2 - t1) / len(stacks) * 1e3)
    enc_ms = float(np.median(enc_times))
    cls_ms = float(np.median(cls_times))
    _echo_report({"n_networks": len(stacks), "repeats": repeats,
                  "encode_ms": round(enc_ms, 4), "classify_ms": round(cls_ms, 4),
                  "total_ms": round(enc_ms + cls_ms, 4)}, out)


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ValidationError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except NfError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except Exception as e:  # unexpected runtime failures
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
