"""Shared fixtures for the test suite.

Cheap builders live at the top. The session-scoped fixtures at the bottom run
the expensive training pipelines (UDF corpus end to end, the radiance suite,
a small sphere zoo) exactly once; the module tests and the acceptance suite
all draw on them.
"""

import json
import sys

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from nfkit.cli import cli
from nfkit.codec import stack_weights
from nfkit.embedder import Nf2vecConfig, ZooItem, encode_many, train_nf2vec
from nfkit.fields import FieldKind
from nfkit.fitting import FieldSampler, FitConfig, NerfFitConfig, RaySampler, fit_nerf, fit_shape_nf
from nfkit.mlp import radiance_arch, shape_arch
from nfkit.nfio import load_embeddings
from nfkit.zoo import analytic_views, make_analytic_shape

SMALL_ARCH = shape_arch(hidden_dim=64, n_hidden_layers=4)


def sphere_surface(n: int, radius: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v


class CentreWeightedSphere(FieldSampler):
    """Analytic sphere SDF supervised over the whole interior.

    Uniform cube samples leave the cone tip of ``|p| - r`` with vanishing
    loss weight (its error contributes ~s^4 for smoothing scale s), so
    decoded values at the centre drift by ~0.07. Half the batch is drawn
    from centre Gaussians (sigma 0.1 and 0.4) to pin the interior down.
    """

    kind = FieldKind.SDF

    def __init__(self, radius: float):
        self.radius = radius

    def sample(self, n, rng):
        n_c = n // 2
        sigma = np.where(rng.random(n_c) < 0.5, 0.1, 0.4)[:, None]
        centre = np.clip(rng.normal(size=(n_c, 3)) * sigma, -1.0, 1.0)
        uniform = rng.uniform(-1.0, 1.0, size=(n - n_c, 3))
        pts = np.concatenate([centre, uniform], axis=0)
        return pts, np.linalg.norm(pts, axis=1) - self.radius


def sphere_sampler(radius: float) -> CentreWeightedSphere:
    return CentreWeightedSphere(radius)


def run_cli(args, expect_code: int = 0):
    """Invoke the `nf` command in-process and parse its JSON report."""
    result = CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == expect_code, f"nf {' '.join(map(str, args))}\n{result.output}"
    try:
        return json.loads(result.output)
    except json.JSONDecodeError:
        return result.output


def _log(msg: str) -> None:
    print(f"[fixture] {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# UDF corpus pipeline (built through the CLI so the command path is exercised)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def udf_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("udf_zoo")
    emb_dir = root / "embedder"
    emb_path = emb_dir / "embeddings.npy"

    _log("udf corpus: generating shapes")
    run_cli(["make-dataset", "--root", root, "--kind", "udf", "--hidden-dim", 64, "--seed", 0])
    _log("udf corpus: fitting 150 networks")
    run_cli(["fit", "--zoo", root, "--steps", 1000, "--quiet"])
    _log("udf corpus: training the embedder")
    run_cli([
        "train-embedder", "--zoo", root, "--out-dir", emb_dir,
        "--steps", 2000, "--batch-nfs", 16, "--queries", 512,
        "--encoder-features", "128,128,256,1024", "--decoder-hidden", 256, "--seed", 0,
    ])
    run_cli(["embed", "--zoo", root, "--encoder", emb_dir / "encoder.ckpt", "--out", emb_path])
    _log("udf corpus: training the classifier")
    run_cli([
        "classify", "train", "--embeddings", emb_path, "--out", root / "classifier.ckpt",
        "--steps", 1500, "--seed", 0,
    ])

    emb, meta = load_embeddings(emb_path)
    return {
        "root": root,
        "emb_path": emb_path,
        "encoder_path": emb_dir / "encoder.ckpt",
        "decoder_path": emb_dir / "decoder.ckpt",
        "classifier_path": root / "classifier.ckpt",
        "embeddings": emb,
        "meta": meta,
    }


# ---------------------------------------------------------------------------
# refits of a few corpus shapes (repeatability and interpolation studies)
# ---------------------------------------------------------------------------

REFIT_IDS = ("sphere_000", "box_000", "torus_000", "cylinder_000")


@pytest.fixture(scope="session")
def refit_bank(udf_run):
    from nfkit.shapeio import load_pointcloud

    root = udf_run["root"]
    cfg = FitConfig(steps=1000)
    bank = {}
    for sid in REFIT_IDS:
        cloud = load_pointcloud(root / "shapes" / f"{sid}.xyz")
        _log(f"refits: {sid} x10")
        bank[sid] = [
            fit_shape_nf(cloud, FieldKind.UDF, SMALL_ARCH, init_seed=0, config=cfg, sample_seed=100 + r)[0]
            for r in range(10)
        ]
    cloud = load_pointcloud(root / "shapes" / f"{REFIT_IDS[0]}.xyz")
    other_init = fit_shape_nf(cloud, FieldKind.UDF, SMALL_ARCH, init_seed=5, config=cfg, sample_seed=100)[0]
    return {"bank": bank, "other_init": other_init, "fit_config": cfg}


# ---------------------------------------------------------------------------
# radiance suite: 20 colored objects, their NeRFs, and an RF embedder
# ---------------------------------------------------------------------------

RF_CLASSES = ("sphere", "box", "torus", "cylinder", "capsule")
RF_PER_CLASS = 4
RF_FIT = NerfFitConfig(steps=1200, rays_per_step=1024, n_samples=32, lr=2e-3)


@pytest.fixture(scope="session")
def rf_run():
    shapes, views, nfs = [], [], []
    i = 0
    for cname in RF_CLASSES:
        for j in range(RF_PER_CLASS):
            rng = np.random.default_rng(1000 + 17 * i)
            shape = make_analytic_shape(cname, rng, scale=float(rng.uniform(0.85, 1.1)),
                                        rot_y=float(rng.uniform(-0.26, 0.26)))
            vs = analytic_views(shape, n_views=9, width=32, height=32, seed=200 + i)
            _log(f"radiance suite: fitting {cname} {j}")
            nf, _ = fit_nerf(vs, radiance_arch(), init_seed=0, config=RF_FIT, sample_seed=i)
            shapes.append((cname, shape))
            views.append(vs)
            nfs.append(nf)
            i += 1

    items = [ZooItem(stack_weights(nf, include_io=True), RaySampler(vs)) for nf, vs in zip(nfs, views)]
    cfg = Nf2vecConfig(
        steps=1200, batch_nfs=8, queries_per_nf=512, encoder_features=(128, 128, 256, 1024),
        decoder_hidden=256, decoder_layers=5, rays_per_nf=32, samples_per_ray=24, seed=0,
    )
    _log("radiance suite: training the embedder")
    result = train_nf2vec(items, cfg)
    emb = encode_many(result.encoder, [it.stacked for it in items])
    return {
        "shapes": shapes,
        "views": views,
        "nfs": nfs,
        "encoder": result.encoder,
        "decoder": result.decoder,
        "embeddings": emb,
        "fit_config": RF_FIT,
    }


# ---------------------------------------------------------------------------
# sphere zoo: analytic SDF spheres with paired radii (r, 2r)
# ---------------------------------------------------------------------------

SPHERE_SMALL = (0.2, 0.225, 0.25, 0.275, 0.3, 0.325, 0.35, 0.375, 0.4, 0.45)


@pytest.fixture(scope="session")
def sphere_run():
    radii = list(SPHERE_SMALL) + [2 * r for r in SPHERE_SMALL]
    # clamp_delta=1.0 keeps full-range SDF values supervised; the default 0.1
    # window would leave values far from the surface (like the centre) free.
    cfg = FitConfig(steps=2000, clamp_delta=1.0)
    nfs = []
    _log(f"sphere zoo: fitting {len(radii)} networks")
    for i, r in enumerate(radii):
        nf, _ = fit_shape_nf(sphere_sampler(r), FieldKind.SDF, SMALL_ARCH, init_seed=0, config=cfg, sample_seed=i)
        nfs.append(nf)
    items = [ZooItem(stack_weights(nf, include_io=False), sphere_sampler(r)) for nf, r in zip(nfs, radii)]
    cfg2 = Nf2vecConfig(
        steps=2500, batch_nfs=8, queries_per_nf=320, encoder_features=(64, 64, 128, 1024),
        decoder_hidden=192, decoder_layers=5, lr=8e-4, clamp_delta=1.0, seed=0,
    )
    _log("sphere zoo: training the embedder")
    result = train_nf2vec(items, cfg2)
    emb = encode_many(result.encoder, [it.stacked for it in items])
    return {
        "radii": radii,
        "nfs": nfs,
        "encoder": result.encoder,
        "decoder": result.decoder,
        "embeddings": emb,
        "by_radius": {r: emb[i] for i, r in enumerate(radii)},
    }
