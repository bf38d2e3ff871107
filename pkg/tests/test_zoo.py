"""Corpus generation, zoo manifests, and the analytic shape factory."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfkit.errors import FormatError, ValidationError
from nfkit.fields import FieldKind, sdf_sphere
from nfkit.fitting import FitConfig, fit_shape_nf
from nfkit.mlp import shape_arch
from nfkit.zoo import (
    CLASS_NAMES,
    AnalyticShape,
    CorpusConfig,
    ZooEntry,
    ZooManifest,
    analytic_views,
    fit_zoo,
    generate_shapes,
    load_manifest,
    load_zoo_nfs,
    make_analytic_shape,
    make_corpus,
    save_manifest,
    sphere_trace,
    zoo_items,
)

from conftest import SMALL_ARCH


def tiny_manifest(entries):
    return ZooManifest(
        kind=FieldKind.UDF,
        arch=SMALL_ARCH,
        init_seed=0,
        include_io=False,
        classes=list(CLASS_NAMES),
        entries=entries,
    )


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = tiny_manifest([
            ZooEntry(id="sphere_000", label="sphere", split="train", source="shapes/sphere_000.xyz"),
            ZooEntry(id="box_000", label="box", split="val", source="shapes/box_000.xyz", nf="nf/box_000.nf"),
        ])
        path = tmp_path / "manifest.json"
        save_manifest(path, manifest)
        loaded = load_manifest(path)
        assert loaded.kind == manifest.kind
        assert loaded.arch == manifest.arch
        assert loaded.init_seed == manifest.init_seed
        assert loaded.include_io == manifest.include_io
        assert loaded.classes == manifest.classes
        for a, b in zip(loaded.entries, manifest.entries):
            assert (a.id, a.label, a.split, a.source, a.nf) == (b.id, b.label, b.split, b.source, b.nf)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            tiny_manifest([
                ZooEntry(id="sphere_000", label="sphere", split="train", source="a.xyz"),
                ZooEntry(id="sphere_000", label="sphere", split="train", source="b.xyz"),
            ])

    def test_unknown_label_rejected(self):
        with pytest.raises(ValidationError, match="label"):
            tiny_manifest([ZooEntry(id="cone_000", label="cone", split="train", source="a.xyz")])

    def test_unknown_split_rejected(self):
        with pytest.raises(ValidationError, match="split"):
            ZooEntry(id="sphere_000", label="sphere", split="test", source="a.xyz")

    def test_non_manifest_json_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(FormatError, match="manifest"):
            load_manifest(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(FormatError, match="JSON"):
            load_manifest(path)


class TestGenerateShapes:
    @settings(max_examples=20, deadline=None)
    @given(base=st.integers(1, 4), variants=st.integers(0, 3))
    def test_ids_unique_and_counted(self, base, variants):
        cfg = CorpusConfig(base_per_class=base, variants_per_base=variants)
        triples = list(generate_shapes(cfg))
        ids = [t[0] for t in triples]
        assert len(ids) == len(set(ids)) == len(CLASS_NAMES) * cfg.per_class
        for cls in CLASS_NAMES:
            assert sum(1 for _, c, _ in triples if c == cls) == cfg.per_class

    def test_variants_share_primitive_parameters(self):
        cfg = CorpusConfig(base_per_class=1, variants_per_base=2)
        triples = [t for t in generate_shapes(cfg) if t[1] == "torus"]
        base_shape = triples[0][2]
        pts = np.random.default_rng(0).uniform(-1, 1, size=(64, 3))
        for _, _, variant in triples[1:]:
            # same object-frame primitive, different world transform
            np.testing.assert_allclose(variant.sdf_obj(pts), base_shape.sdf_obj(pts))
            assert variant.scale != base_shape.scale or not np.array_equal(
                variant.rotation, base_shape.rotation
            )

    def test_unknown_class_rejected(self):
        with pytest.raises(ValidationError, match="class"):
            make_analytic_shape("cone", np.random.default_rng(0))


def unit_sphere_shape(radius: float = 0.5) -> AnalyticShape:
    return AnalyticShape(
        class_name="sphere",
        sdf_obj=lambda p: sdf_sphere(p, radius),
        scale=1.0,
        rotation=np.eye(3),
        colors=np.array([[0.9, 0.2, 0.2], [0.2, 0.9, 0.2]]),
    )


class TestSphereTrace:
    def test_hits_land_on_surface(self):
        shape = unit_sphere_shape(0.5)
        origins = np.array([[0.0, 0.0, 2.4], [0.0, 0.0, 2.4]])
        dirs = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
        hit, pts = sphere_trace(shape, origins, dirs, 0.1, 5.0)
        assert hit.tolist() == [True, False]
        assert abs(np.linalg.norm(pts[0]) - 0.5) < 2e-3

    def test_scaled_rotated_shape(self):
        shape = make_analytic_shape("box", np.random.default_rng(3), scale=0.9, rot_y=0.4)
        n = 32
        origins = np.tile([[0.0, 0.0, 2.4]], (n, 1))
        z = np.linspace(-0.4, 0.4, n)
        dirs = np.stack([z, np.zeros(n), -np.ones(n)], axis=1)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, pts = sphere_trace(shape, origins, dirs, 0.1, 5.0)
        assert hit.any()
        assert np.abs(shape.sdf(pts[hit])).max() < 2e-3


class TestAnalyticViews:
    def test_image_stack_layout(self):
        views = analytic_views(unit_sphere_shape(0.6), n_views=3, width=16, height=16, seed=4)
        assert views.images.shape == (3, 16, 16, 4)
        assert views.images.dtype == np.float32
        assert len(views.poses) == 3
        alpha = views.images[..., 3]
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0
        # corners see background: zero coverage, white color
        corners = views.images[:, 0, 0]
        np.testing.assert_allclose(corners[:, 3], 0.0)
        np.testing.assert_allclose(corners[:, :3], 1.0)
        # the sphere fills the center of every view
        assert (views.images[:, 8, 8, 3] == 1.0).all()

    def test_supersampling_softens_silhouette(self):
        shape = unit_sphere_shape(0.6)
        hard = analytic_views(shape, n_views=1, width=16, height=16, seed=4, supersample=1)
        soft = analytic_views(shape, n_views=1, width=16, height=16, seed=4, supersample=2)
        a_hard, a_soft = hard.images[..., 3], soft.images[..., 3]
        assert set(np.unique(a_hard)) <= {0.0, 1.0}
        assert ((a_soft > 0.0) & (a_soft < 1.0)).any()

    def test_cameras_orbit_at_radius(self):
        views = analytic_views(unit_sphere_shape(), n_views=4, width=8, height=8, radius=2.4)
        for pose in views.poses:
            assert np.linalg.norm(pose.origin) == pytest.approx(2.4)


class TestMakeCorpus:
    CFG = CorpusConfig(base_per_class=1, variants_per_base=1, cloud_points=96,
                       mesh_resolution=24, voxel_resolution=16, val_fraction=0.1)

    def test_udf_corpus_layout(self, tmp_path):
        import dataclasses

        cfg = dataclasses.replace(self.CFG, kind=FieldKind.UDF)
        manifest = make_corpus(tmp_path, cfg, SMALL_ARCH)
        assert len(manifest.entries) == 10
        assert not manifest.include_io
        for e in manifest.entries:
            assert (tmp_path / e.source).exists()
            assert e.source.endswith(".xyz")
        # stratified split: every class holds back exactly one shape
        for cls in CLASS_NAMES:
            vals = [e for e in manifest.split_entries("val") if e.label == cls]
            assert len(vals) == 1
        assert load_manifest(tmp_path / "manifest.json").classes == list(CLASS_NAMES)

    def test_sdf_and_of_sources(self, tmp_path):
        import dataclasses

        for kind, suffix in ((FieldKind.SDF, ".off"), (FieldKind.OF, ".vox")):
            cfg = dataclasses.replace(self.CFG, kind=kind, classes=("sphere",))
            root = tmp_path / kind.value
            manifest = make_corpus(root, cfg, SMALL_ARCH)
            for e in manifest.entries:
                assert e.source.endswith(suffix)
                assert (root / e.source).exists()

    def test_rf_corpus_uses_view_folders(self, tmp_path):
        import dataclasses

        from nfkit.mlp import radiance_arch

        cfg = dataclasses.replace(
            self.CFG, kind=FieldKind.RF, classes=("sphere",), n_views=2, view_size=12
        )
        manifest = make_corpus(tmp_path, cfg, radiance_arch())
        assert manifest.include_io
        for e in manifest.entries:
            assert (tmp_path / e.source).is_dir()


class TestFitZoo:
    def test_fit_records_weights_and_items_load(self, tmp_path):
        cfg = CorpusConfig(kind=FieldKind.UDF, classes=("sphere",), base_per_class=1,
                           variants_per_base=0, cloud_points=128, mesh_resolution=24,
                           val_fraction=0.0)
        manifest = make_corpus(tmp_path, cfg, SMALL_ARCH)
        with pytest.raises(ValidationError, match="no fitted network"):
            load_zoo_nfs(tmp_path, manifest)
        fit_zoo(tmp_path, manifest, FitConfig(steps=5))
        reloaded = load_manifest(tmp_path / "manifest.json")
        nfs = load_zoo_nfs(tmp_path, reloaded)
        assert len(nfs) == 1 and nfs[0].init_seed_id == 0
        items = zoo_items(tmp_path, reloaded)
        assert items[0].stacked.data.shape[1] == SMALL_ARCH.hidden_dim

    def test_mismatched_network_rejected(self, tmp_path):
        from nfkit.nfio import save_nf
        from nfkit.shapeio import load_pointcloud

        cfg = CorpusConfig(kind=FieldKind.UDF, classes=("sphere",), base_per_class=1,
                           variants_per_base=0, cloud_points=128, mesh_resolution=24,
                           val_fraction=0.0)
        manifest = make_corpus(tmp_path, cfg, SMALL_ARCH)
        fit_zoo(tmp_path, manifest, FitConfig(steps=5))
        entry = manifest.entries[0]
        rogue, _ = fit_shape_nf(load_pointcloud(tmp_path / entry.source), FieldKind.UDF,
                                SMALL_ARCH, init_seed=9, config=FitConfig(steps=5))
        save_nf(tmp_path / entry.nf, rogue)
        with pytest.raises(ValidationError, match="match"):
            load_zoo_nfs(tmp_path, manifest)
