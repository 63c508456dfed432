"""Synthesizer tests: determinism, identity consistency under the matcher,
lens-pattern visibility and brand distinctness, and batch generation."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from padforge import imageio, matcher, pad, synthgen
from padforge.errors import InvariantViolationError
from padforge.matcher import DEFAULT_MATCH_THRESHOLD
from padforge.synthgen import AppearanceJitter, Brand, SynthesisConfig


def dir_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestNotcl:
    def test_bit_identical_for_identical_inputs(self):
        a, ga = synthgen.synthesize_notcl(123, 456)
        b, gb = synthgen.synthesize_notcl(123, 456)
        assert np.array_equal(a, b)
        assert ga == gb

    def test_output_contract(self):
        img, geom = synthgen.synthesize_notcl(1, 2)
        assert img.shape == (512, 512) and img.dtype == np.uint8
        assert geom.pupil.r < geom.iris.r

    def test_genuine_pairs_match(self, hd_pool):
        below = float((hd_pool.genuine_hd < DEFAULT_MATCH_THRESHOLD).mean())
        assert below >= 0.95

    def test_impostor_pairs_near_half(self, hd_pool):
        mean = float(hd_pool.impostor_hd.mean())
        assert 0.45 <= mean <= 0.55

    def test_identity_separation_invariant(self, hd_pool):
        # no more than 1% of impostor pairs below the match threshold
        frac = float((hd_pool.impostor_hd < DEFAULT_MATCH_THRESHOLD).mean())
        assert frac <= 0.01


class TestTcl:
    def test_bit_identical_for_identical_inputs(self):
        a, _ = synthgen.synthesize_tcl(Brand.FreshLook, 9, 10)
        b, _ = synthgen.synthesize_tcl(Brand.FreshLook, 9, 10)
        assert np.array_equal(a, b)

    def test_overlay_visible_for_every_brand(self):
        for k, brand in enumerate(Brand):
            plain, geom = synthgen.synthesize_notcl(600 + k, 700 + k)
            lens, _ = synthgen.synthesize_tcl(brand, 600 + k, 700 + k)
            ring = imageio.annulus_mask(plain.shape, geom)
            mad = np.abs(plain[ring].astype(float) - lens[ring].astype(float)).mean()
            assert mad > 10.0, brand.name

    def test_brand_radial_profiles_distinct(self):
        def radial_profile(img, geom, nbins=40):
            h, w = img.shape
            ys, xs = np.mgrid[0:h, 0:w]
            d = np.hypot(xs - geom.iris.cx, ys - geom.iris.cy)
            t = (d - geom.pupil.r) / (geom.iris.r - geom.pupil.r)
            ring = (t >= 0) & (t <= 1)
            idx = np.minimum((t[ring] * nbins).astype(int), nbins - 1)
            weights = np.bincount(idx, weights=img[ring].astype(float), minlength=nbins)
            return weights / np.bincount(idx, minlength=nbins)

        profiles = []
        for brand in Brand:
            img, geom = synthgen.synthesize_tcl(brand, 4242, 777)
            profiles.append(radial_profile(img, geom))
        for i in range(len(profiles)):
            for j in range(i + 1, len(profiles)):
                corr = float(np.corrcoef(profiles[i], profiles[j])[0, 1])
                assert corr < 0.9, (Brand(i).name, Brand(j).name, corr)

    def test_brands_learnably_distinct(self):
        # 7-class linear classifier on LBP features: >= 90% held-out accuracy
        rng = np.random.default_rng(424242)
        X_train, y_train, X_test, y_test = [], [], [], []
        for brand in Brand:
            for k in range(200):
                img, geom = synthgen.synthesize_tcl(
                    brand, int(rng.integers(0, 2**63)), int(rng.integers(0, 2**63))
                )
                feats = pad.extract_features(imageio.center_crop_resize(img, geom, 256))
                if k < 100:
                    X_train.append(feats)
                    y_train.append(int(brand))
                else:
                    X_test.append(feats)
                    y_test.append(int(brand))
        cfg = pad.TrainConfig(seed=7, lr=0.5, max_epochs=300)
        model = pad.train_features(np.stack(X_train), np.array(y_train), cfg)
        logits = np.stack(X_test) @ model.weights.T + model.bias
        accuracy = float((np.argmax(logits, axis=1) == np.array(y_test)).mean())
        assert accuracy >= 0.90


class TestSynthesisConfig:
    def test_brand_mix_requires_tcl_mode(self):
        with pytest.raises(InvariantViolationError):
            SynthesisConfig(count=5, seed=1, mode="noTCL", brand_mix={Brand.FreshLook: 5}).validate()

    def test_brand_mix_must_sum_to_count(self):
        with pytest.raises(InvariantViolationError):
            SynthesisConfig(count=5, seed=1, mode="TCL", brand_mix={Brand.FreshLook: 3}).validate()

    def test_reuse_requires_gallery(self):
        with pytest.raises(InvariantViolationError):
            SynthesisConfig(count=5, seed=1, mode="noTCL", gallery_reuse_prob=0.2).validate()


class TestGenerateBatch:
    def test_counts_and_labels(self, tmp_path):
        cfg = SynthesisConfig(count=12, seed=5, mode="noTCL")
        records = synthgen.generate_batch(cfg, tmp_path / "b")
        assert len(records) == 12
        assert all(rec.label == "BF" for rec in records)
        back = imageio.read_manifest(tmp_path / "b" / "manifest.jsonl")
        assert back == records
        img = imageio.load_image(tmp_path / "b" / records[0].path)
        assert img.shape == (512, 512)

    def test_reuse_off_means_no_gallery_tags(self, tmp_path):
        gallery = synthgen.fresh_identities(3, 25)
        cfg = SynthesisConfig(
            count=40, seed=6, mode="noTCL", gallery_reuse_prob=0.0, gallery=gallery
        )
        records = synthgen.generate_batch(cfg, tmp_path / "b")
        tags = {rec.identity_tag for rec in records}
        assert tags.isdisjoint({str(g) for g in gallery})

    def test_planted_leak_count_in_binomial_band(self, tmp_path):
        gallery = synthgen.fresh_identities(7, 50)
        cfg = SynthesisConfig(
            count=1000, seed=8, mode="noTCL", gallery_reuse_prob=0.1, gallery=gallery
        )
        records = synthgen.generate_batch(cfg, tmp_path / "b")
        gallery_tags = {str(g) for g in gallery}
        leaks = sum(rec.identity_tag in gallery_tags for rec in records)
        # central 99% interval of Binomial(1000, 0.1)
        assert 76 <= leaks <= 125

    def test_brand_mix_block_assignment(self, tmp_path):
        mix = {b: 3 for b in Brand}
        cfg = SynthesisConfig(count=21, seed=9, mode="TCL", brand_mix=mix)
        records = synthgen.generate_batch(cfg, tmp_path / "b")
        assert [rec.brand for rec in records] == [b.name for b in Brand for _ in range(3)]
        assert all(rec.label == "PA" for rec in records)

    def test_byte_identical_rerun(self, tmp_path):
        cfg = SynthesisConfig(count=8, seed=11, mode="noTCL", jitter=AppearanceJitter())
        synthgen.generate_batch(cfg, tmp_path / "one")
        synthgen.generate_batch(cfg, tmp_path / "two")
        one = dir_digest(tmp_path / "one")
        two = dir_digest(tmp_path / "two")
        assert one == two and len(one) == 9  # 8 images + manifest

    def test_full_frame_mode(self, tmp_path):
        cfg = SynthesisConfig(count=2, seed=12, mode="noTCL")
        records = synthgen.generate_batch(cfg, tmp_path / "b", full_frame=True)
        img = imageio.load_image(tmp_path / "b" / records[0].path)
        assert img.shape == (480, 640)
        # geometry must describe the embedded frame
        tpl = matcher.build_template(img, records[0].geometry)
        assert tpl.enrolled


class TestTextureField:
    def test_keyed_solely_by_identity(self):
        t = np.linspace(0, 1, 50)
        theta = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        a = synthgen.identity_texture(42, t, theta)
        b = synthgen.identity_texture(42, t, theta)
        c = synthgen.identity_texture(43, t, theta)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_angularly_periodic(self):
        t = np.full(64, 0.5)
        theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        a = synthgen.identity_texture(7, t, theta)
        b = synthgen.identity_texture(7, t, theta + 2 * np.pi)
        assert np.allclose(a, b, atol=1e-5)

    def test_raster_matches_pointwise_definition(self):
        rows, cols = 64, 512
        tt = np.repeat((np.arange(rows) + 0.5) / rows, cols)
        hh = np.tile(2 * np.pi * np.arange(cols) / cols, rows)
        ref = synthgen.identity_texture(99, tt.astype(np.float32), hh.astype(np.float32))
        raster = synthgen._texture_raster(99)
        assert np.abs(ref.reshape(rows, cols) - raster).max() < 1e-5
