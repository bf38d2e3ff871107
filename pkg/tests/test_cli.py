"""Command line surface: reports, file outputs, config precedence, exit codes."""

import json
import subprocess

import numpy as np
import pytest

from nfkit.fields import FieldKind
from nfkit.mlp import shared_init
from nfkit.nfio import load_embeddings, save_nf
from nfkit.shapeio import load_pointcloud

from conftest import SMALL_ARCH, run_cli


@pytest.fixture(scope="module")
def micro(tmp_path_factory):
    """A 10-object UDF zoo pushed through the whole command pipeline, fast and rough."""
    root = tmp_path_factory.mktemp("micro_zoo")
    emb_path = root / "embeddings.npy"
    reports = {}
    reports["dataset"] = run_cli([
        "make-dataset", "--root", root, "--kind", "udf", "--base-per-class", 2,
        "--variants", 0, "--cloud-points", 128, "--mesh-resolution", 24,
        "--val-fraction", 0.5, "--hidden-dim", 64, "--seed", 0,
    ])
    reports["fit"] = run_cli(["fit", "--zoo", root, "--steps", 25, "--quiet"])
    reports["embedder"] = run_cli([
        "train-embedder", "--zoo", root, "--out-dir", root / "embedder", "--steps", 40,
        "--batch-nfs", 4, "--queries", 64, "--encoder-features", "32,64,1024",
        "--decoder-hidden", 32, "--seed", 0,
    ])
    reports["embed"] = run_cli([
        "embed", "--zoo", root, "--encoder", root / "embedder" / "encoder.ckpt", "--out", emb_path,
    ])
    reports["classifier"] = run_cli([
        "classify", "train", "--embeddings", emb_path, "--out", root / "classifier.ckpt",
        "--steps", 80, "--seed", 0,
    ])
    return {"root": root, "emb_path": emb_path, "reports": reports}


class TestPipelineReports:
    def test_dataset_counts(self, micro):
        rep = micro["reports"]["dataset"]
        assert rep["entries"] == 10
        assert rep["train"] == 5 and rep["val"] == 5
        assert rep["classes"] == ["sphere", "box", "torus", "cylinder", "capsule"]

    def test_fit_covers_zoo(self, micro):
        assert micro["reports"]["fit"]["fitted"] == 10

    def test_embedder_artifacts(self, micro):
        rep = micro["reports"]["embedder"]
        root = micro["root"]
        assert (root / "embedder" / "encoder.ckpt").exists()
        assert (root / "embedder" / "decoder.ckpt").exists()
        assert isinstance(rep["val_loss"], float)  # val split exists, so it is scored

    def test_embeddings_sidecar(self, micro):
        rep = micro["reports"]["embed"]
        assert rep["rows"] == 10 and rep["dim"] == 1024
        emb, meta = load_embeddings(micro["emb_path"])
        assert emb.shape == (10, 1024)
        assert len(meta["ids"]) == 10 and len(meta["labels"]) == 10
        assert meta["init_seed"] == 0 and meta["kind"] == "udf"
        assert sorted(set(meta["splits"])) == ["train", "val"]

    def test_embed_rerun_is_bit_identical(self, micro, tmp_path):
        out2 = tmp_path / "again.npy"
        run_cli(["embed", "--zoo", micro["root"], "--encoder",
                 micro["root"] / "embedder" / "encoder.ckpt", "--out", out2])
        a, _ = load_embeddings(micro["emb_path"])
        b, _ = load_embeddings(out2)
        assert np.array_equal(a, b)


class TestClassifyCommands:
    def test_eval_report(self, micro):
        rep = run_cli(["classify", "eval", "--embeddings", micro["emb_path"],
                       "--head", micro["root"] / "classifier.ckpt", "--split", "val"])
        assert 0.0 <= rep["accuracy"] <= 1.0
        assert rep["n"] == 5
        assert set(rep["per_class"]) <= {"sphere", "box", "torus", "cylinder", "capsule"}

    def test_predict_rows(self, micro):
        rep = run_cli(["classify", "predict", "--embeddings", micro["emb_path"],
                       "--head", micro["root"] / "classifier.ckpt"])
        rows = rep["predictions"]
        assert len(rows) == 10
        for row in rows:
            assert row["label"] in ("sphere", "box", "torus", "cylinder", "capsule")
            assert 0.0 <= row["confidence"] <= 1.0


class TestRetrieveCommands:
    def test_query_neighbors(self, micro):
        rep = run_cli(["retrieve", "query", "--embeddings", micro["emb_path"],
                       "--id", "sphere_000", "--k", 3])
        assert len(rep["neighbors"]) == 3
        dists = [n["distance"] for n in rep["neighbors"]]
        assert dists == sorted(dists)
        assert all(n["id"] != "sphere_000" for n in rep["neighbors"])

    def test_eval_score(self, micro):
        rep = run_cli(["retrieve", "eval", "--embeddings", micro["emb_path"], "--k", 5])
        assert 0.0 <= rep["map_at_k"] <= 1.0
        assert rep["k"] == 5 and rep["n"] == 10

    def test_config_file_precedence(self, micro, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"retrieve": {"query": {"k": 2}}}))
        base = ["retrieve", "query", "--embeddings", micro["emb_path"], "--id", "sphere_000"]
        assert run_cli(base)["k"] == 5  # built-in default
        assert run_cli(["--config", cfg] + base)["k"] == 2  # config wins over default
        assert run_cli(["--config", cfg] + base + ["--k", 4])["k"] == 4  # flag wins over config


class TestReconstructCommands:
    def test_from_weights(self, micro, tmp_path):
        out = tmp_path / "direct.xyz"
        # generous threshold: the 25-step fits here are smoke-test quality
        rep = run_cli(["reconstruct", "--nf", micro["root"] / "nf" / "sphere_000.nf",
                       "--out", out, "--resolution", 24, "--n-points", 256, "--threshold", 0.5])
        assert rep["kind"] == "udf"
        assert len(load_pointcloud(out).points) == 256

    def test_from_embedding(self, micro, tmp_path):
        out = tmp_path / "decoded.xyz"
        # threshold far above the decoder's output range: smoke-tests the flow
        # without depending on the quality of this deliberately tiny embedder
        run_cli(["reconstruct", "--embeddings", micro["emb_path"], "--id", "torus_001",
                 "--decoder", micro["root"] / "embedder" / "decoder.ckpt",
                 "--out", out, "--resolution", 20, "--n-points", 64, "--threshold", 2.0])
        assert len(load_pointcloud(out).points) == 64

    def test_interpolate_writes_every_step(self, micro, tmp_path):
        out_dir = tmp_path / "steps"
        rep = run_cli(["interpolate", "--embeddings", micro["emb_path"],
                       "--decoder", micro["root"] / "embedder" / "decoder.ckpt",
                       "--id-a", "sphere_000", "--id-b", "box_000", "--steps", 3,
                       "--out-dir", out_dir, "--resolution", 20, "--n-points", 64,
                       "--threshold", 2.0])
        assert [s["t"] for s in rep["steps"]] == [0.0, 0.5, 1.0]
        for s in rep["steps"]:
            assert (out_dir / s["file"]).exists()


class TestSegmentCommands:
    def test_train_eval_apply(self, micro, tmp_path):
        root = micro["root"]
        head = tmp_path / "partseg.ckpt"
        rep = run_cli(["segment", "train", "--zoo", root, "--embeddings", micro["emb_path"],
                       "--out", head, "--steps", 60, "--points-per-shape", 64, "--seed", 0])
        assert rep["shapes"] == 5
        rep = run_cli(["segment", "eval", "--zoo", root, "--embeddings", micro["emb_path"],
                       "--head", head, "--split", "val"])
        assert 0.0 <= rep["instance_miou"] <= 1.0
        assert set(rep["per_class"]) <= {"sphere", "box", "torus", "cylinder", "capsule"}
        out = tmp_path / "seg.xyz"
        rep = run_cli(["segment", "apply", "--embeddings", micro["emb_path"], "--id", "sphere_000",
                       "--head", head, "--points", root / "shapes" / "sphere_000.xyz", "--out", out])
        cloud = load_pointcloud(out)
        assert cloud.part_labels is not None and len(cloud.part_labels) == rep["points"]


class TestGenerateCommands:
    def test_train_then_sample(self, micro, tmp_path):
        gan = tmp_path / "gan.ckpt"
        rep = run_cli(["generate", "train", "--embeddings", micro["emb_path"], "--out", gan,
                       "--steps", 40, "--batch-size", 8, "--seed", 0])
        assert isinstance(rep["collapsed"], bool)
        out = tmp_path / "samples.npy"
        rep = run_cli(["generate", "sample", "--gan", gan, "--n", 4, "--out", out])
        assert rep["rows"] == 4 and rep["dim"] == 1024
        emb, meta = load_embeddings(out)
        assert meta["ids"] == [f"gen_{i:03d}" for i in range(4)]
        assert np.isfinite(emb).all()


class TestTransferCommands:
    def test_train_and_apply(self, micro, tmp_path):
        head = tmp_path / "transfer.ckpt"
        rep = run_cli(["transfer", "train", "--source", micro["emb_path"],
                       "--target", micro["emb_path"], "--out", head, "--steps", 50, "--seed", 0])
        assert rep["pairs"] == 10
        out = tmp_path / "mapped.npy"
        rep = run_cli(["transfer", "apply", "--head", head, "--embeddings", micro["emb_path"],
                       "--out", out])
        assert rep["rows"] == 10
        emb, meta = load_embeddings(out)
        assert emb.shape == (10, 1024) and len(meta["ids"]) == 10


class TestAnalyzeCommands:
    def test_lmc_report(self, micro):
        root = micro["root"]
        rep = run_cli(["analyze", "lmc", "--nf-a", root / "nf" / "sphere_000.nf",
                       "--nf-b", root / "nf" / "sphere_001.nf",
                       "--shape", root / "shapes" / "sphere_000.xyz", "--n-ts", 5])
        assert len(rep["ts"]) == len(rep["losses"]) == 5
        assert all(np.isfinite(rep["losses"]))
        assert rep["barrier_ratio"] >= 1.0  # the maximum includes both endpoints

    def test_distmat_outputs(self, micro, tmp_path):
        out = tmp_path / "dist.npy"
        rep = run_cli(["analyze", "distmat", "--embeddings", micro["emb_path"], "--out", out])
        d = np.load(out)
        assert d.shape == (10, 10)
        assert np.array_equal(d, d.T)
        assert rep["mean_same_class"] > 0 and rep["mean_cross_class"] > 0

    def test_match_report(self, micro):
        root = micro["root"]
        rep = run_cli(["analyze", "match", "--nf-a", root / "nf" / "sphere_000.nf",
                       "--nf-b", root / "nf" / "box_000.nf"])
        assert isinstance(rep["identity"], bool) and isinstance(rep["converged"], bool)
        assert rep["objective_last"] >= rep["objective_first"]
        assert len(rep["perms"]) == 4 and len(rep["perms"][0]) == 64


class TestBenchCommands:
    def test_classify_timing(self, micro):
        rep = run_cli(["bench", "classify-timing", "--zoo", micro["root"],
                       "--encoder", micro["root"] / "embedder" / "encoder.ckpt",
                       "--head", micro["root"] / "classifier.ckpt", "--repeats", 2])
        assert rep["encode_ms"] > 0 and rep["classify_ms"] > 0
        assert rep["total_ms"] == pytest.approx(rep["encode_ms"] + rep["classify_ms"], abs=1e-3)


def nf_process(args):
    return subprocess.run(["nf"] + [str(a) for a in args], capture_output=True, text=True)


class TestExitCodes:
    def test_help_exits_zero(self):
        proc = nf_process(["--help"])
        assert proc.returncode == 0
        assert "Usage" in proc.stdout

    def test_usage_error_exits_two(self, tmp_path):
        proc = nf_process(["fit", "--shape", tmp_path / "missing.xyz", "--out", tmp_path / "o.nf"])
        assert proc.returncode == 2

    def test_duplicate_manifest_id_exits_two(self, micro, tmp_path):
        manifest = json.loads((micro["root"] / "manifest.json").read_text())
        manifest["entries"][1]["id"] = manifest["entries"][0]["id"]
        bad_root = tmp_path / "dup"
        bad_root.mkdir()
        (bad_root / "manifest.json").write_text(json.dumps(manifest))
        proc = nf_process(["fit", "--zoo", bad_root, "--steps", 1])
        assert proc.returncode == 2
        assert manifest["entries"][0]["id"] in proc.stderr

    def test_corrupt_weights_exit_two(self, tmp_path):
        bad = tmp_path / "bad.nf"
        bad.write_bytes(b"not a checkpoint")
        proc = nf_process(["reconstruct", "--nf", bad, "--out", tmp_path / "o.xyz"])
        assert proc.returncode == 2
        assert "error:" in proc.stderr

    def test_empty_surface_exits_one(self, tmp_path):
        # push the whole field ten units out so nothing sits near the surface
        nf = shared_init(SMALL_ARCH, 0, field_kind=FieldKind.UDF)
        w, b = nf.layers[-1]
        nf.layers[-1] = (w, b + 10.0)
        path = tmp_path / "init.nf"
        save_nf(path, nf)
        proc = nf_process(["reconstruct", "--nf", path, "--out", tmp_path / "o.xyz",
                           "--resolution", 20, "--n-points", 32, "--threshold", 0.01])
        assert proc.returncode == 1
        assert "error:" in proc.stderr
