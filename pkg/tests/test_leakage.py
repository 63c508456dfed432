"""Leakage filter tests: planted-leak recovery, audit completeness, the
independent verifier, and threshold monotonicity."""

import numpy as np
import pytest

from padforge import imageio, leakage, synthgen
from padforge.errors import InsufficientSurvivorsError
from padforge.synthgen import SynthesisConfig


@pytest.fixture(scope="module")
def planted_run(tmp_path_factory):
    """1,000 candidates with 50 gallery identities and a 5% reuse knob."""
    root = tmp_path_factory.mktemp("planted")
    gallery_cfg = SynthesisConfig(count=50, seed=101, mode="noTCL", id_prefix="gal")
    gallery_records = synthgen.generate_batch(gallery_cfg, root / "gallery")
    gallery_ids = [int(r.identity_tag) for r in gallery_records]
    cand_cfg = SynthesisConfig(
        count=1000, seed=102, mode="noTCL",
        gallery_reuse_prob=0.05, gallery=gallery_ids, id_prefix="cand",
    )
    candidates = synthgen.generate_batch(cand_cfg, root / "cands")
    return {
        "root": root,
        "gallery_manifest": root / "gallery" / "manifest.jsonl",
        "cand_manifest": root / "cands" / "manifest.jsonl",
        "gallery_tags": {r.identity_tag for r in gallery_records},
        "candidates": candidates,
    }


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    gallery_cfg = SynthesisConfig(count=12, seed=201, mode="noTCL", id_prefix="gal")
    gallery_records = synthgen.generate_batch(gallery_cfg, root / "gallery")
    gallery_ids = [int(r.identity_tag) for r in gallery_records]
    cand_cfg = SynthesisConfig(
        count=80, seed=202, mode="noTCL",
        gallery_reuse_prob=0.15, gallery=gallery_ids, id_prefix="cand",
    )
    records = synthgen.generate_batch(cand_cfg, root / "cands")
    # append one guaranteed enrollment failure (fully specular annulus)
    blank = np.full((512, 512), 255, dtype=np.uint8)
    imageio.save_image(blank, root / "cands" / "images" / "dud.png")
    records.append(
        imageio.SampleRecord(
            id="dud", path="images/dud.png", label="BF", source="synthetic",
            identity_tag="dud", geometry=records[0].geometry,
        )
    )
    imageio.write_manifest(records, root / "cands" / "manifest.jsonl")
    return {
        "root": root,
        "gallery_manifest": root / "gallery" / "manifest.jsonl",
        "cand_manifest": root / "cands" / "manifest.jsonl",
        "gallery_tags": {r.identity_tag for r in gallery_records},
        "candidates": records,
    }


class TestFilterLeakage:
    def test_planted_leaks_excluded(self, planted_run):
        result = leakage.filter_leakage(
            planted_run["cand_manifest"], planted_run["gallery_manifest"], k_target=None
        )
        by_id = {a.probe_id: a for a in result.audit}
        leak_ids = [
            r.id for r in planted_run["candidates"]
            if r.identity_tag in planted_run["gallery_tags"]
        ]
        assert len(leak_ids) > 20  # the knob actually planted leaks
        caught = sum(by_id[i].outcome == leakage.OUTCOME_MATCH for i in leak_ids)
        assert caught / len(leak_ids) >= 0.95
        retained_ids = {r.id for r in result.retained}
        assert not retained_ids.intersection(leak_ids)

    def test_audit_completeness_and_quota(self, planted_run):
        result = leakage.filter_leakage(
            planted_run["cand_manifest"], planted_run["gallery_manifest"], k_target=600
        )
        outcomes = [a.outcome for a in result.audit]
        assert len(result.audit) == 1000
        assert len({a.probe_id for a in result.audit}) == 1000
        counts = {o: outcomes.count(o) for o in leakage.OUTCOMES}
        assert counts[leakage.OUTCOME_RETAINED] == 600 == len(result.retained)
        assert sum(counts.values()) == 1000

    def test_retention_is_first_come(self, planted_run):
        result = leakage.filter_leakage(
            planted_run["cand_manifest"], planted_run["gallery_manifest"], k_target=100
        )
        order = {r.id: i for i, r in enumerate(planted_run["candidates"])}
        positions = [order[r.id] for r in result.retained]
        assert positions == sorted(positions)
        survivors = [
            a.probe_id for a in result.audit
            if a.outcome in (leakage.OUTCOME_RETAINED, leakage.OUTCOME_OVERFLOW)
        ]
        assert [r.id for r in result.retained] == survivors[:100]

    def test_match_excluded_has_low_hd(self, small_run):
        result = leakage.filter_leakage(
            small_run["cand_manifest"], small_run["gallery_manifest"], k_target=None
        )
        for entry in result.audit:
            if entry.outcome == leakage.OUTCOME_MATCH:
                assert entry.best_hd is not None and entry.best_hd < 0.32
            if entry.outcome == leakage.OUTCOME_RETAINED and entry.best_hd is not None:
                assert entry.best_hd >= 0.32

    def test_enroll_failure_detected(self, small_run):
        result = leakage.filter_leakage(
            small_run["cand_manifest"], small_run["gallery_manifest"], k_target=None
        )
        by_id = {a.probe_id: a for a in result.audit}
        assert by_id["dud"].outcome == leakage.OUTCOME_ENROLL

    def test_empty_gallery_only_enroll_exclusions(self, small_run, tmp_path):
        empty = tmp_path / "empty.jsonl"
        imageio.write_manifest([], empty)
        result = leakage.filter_leakage(small_run["cand_manifest"], empty, k_target=None)
        outcomes = {a.outcome for a in result.audit}
        assert leakage.OUTCOME_MATCH not in outcomes
        by_id = {a.probe_id: a for a in result.audit}
        assert by_id["dud"].outcome == leakage.OUTCOME_ENROLL

    def test_insufficient_survivors(self, small_run):
        with pytest.raises(InsufficientSurvivorsError) as err:
            leakage.filter_leakage(
                small_run["cand_manifest"], small_run["gallery_manifest"], k_target=81
            )
        assert err.value.survivors < 81

    def test_threshold_monotonicity(self, small_run):
        counts = []
        for threshold in (0.2, 0.3, 0.4, 0.5):
            result = leakage.filter_leakage(
                small_run["cand_manifest"],
                small_run["gallery_manifest"],
                k_target=None,
                threshold=threshold,
            )
            counts.append(len(result.retained))
        assert counts == sorted(counts, reverse=True)


class TestVerifyNoLeakage:
    def test_filter_output_verifies(self, small_run, tmp_path):
        result = leakage.filter_leakage(
            small_run["cand_manifest"], small_run["gallery_manifest"], k_target=None
        )
        retained_path = tmp_path / "retained.jsonl"
        rebased = []
        for rec in result.retained:
            resolved = imageio.resolve_path(small_run["cand_manifest"], rec)
            rebased.append(
                imageio.SampleRecord(
                    id=rec.id, path=str(resolved), label=rec.label, source=rec.source,
                    brand=rec.brand, identity_tag=rec.identity_tag, geometry=rec.geometry,
                )
            )
        imageio.write_manifest(rebased, retained_path)
        ok, violations = leakage.verify_no_leakage(
            retained_path, small_run["gallery_manifest"]
        )
        assert ok and violations == []

    def test_planted_violation_detected(self, small_run, tmp_path):
        gallery_records = imageio.read_manifest(small_run["gallery_manifest"])
        stolen = gallery_records[0]
        resolved = imageio.resolve_path(small_run["gallery_manifest"], stolen)
        bad = imageio.SampleRecord(
            id="stolen", path=str(resolved), label="BF", source="synthetic",
            identity_tag=stolen.identity_tag, geometry=stolen.geometry,
        )
        retained_path = tmp_path / "retained.jsonl"
        imageio.write_manifest([bad], retained_path)
        ok, violations = leakage.verify_no_leakage(retained_path, small_run["gallery_manifest"])
        assert not ok
        assert len(violations) == 1
        assert violations[0][0] == "stolen" and violations[0][2] == 0.0

    def test_zero_threshold_always_passes(self, small_run, tmp_path):
        gallery_records = imageio.read_manifest(small_run["gallery_manifest"])
        stolen = gallery_records[0]
        resolved = imageio.resolve_path(small_run["gallery_manifest"], stolen)
        bad = imageio.SampleRecord(
            id="stolen", path=str(resolved), label="BF", source="synthetic",
            identity_tag=stolen.identity_tag, geometry=stolen.geometry,
        )
        retained_path = tmp_path / "retained.jsonl"
        imageio.write_manifest([bad], retained_path)
        ok, violations = leakage.verify_no_leakage(
            retained_path, small_run["gallery_manifest"], threshold=0.0
        )
        assert ok and violations == []


class TestAuditCsv:
    def test_round_trip(self, tmp_path):
        audit = [
            leakage.LeakageAuditRecord("a", leakage.OUTCOME_RETAINED, "g1", 0.41),
            leakage.LeakageAuditRecord("b", leakage.OUTCOME_MATCH, "g2", 0.125),
            leakage.LeakageAuditRecord("c", leakage.OUTCOME_ENROLL),
            leakage.LeakageAuditRecord("d", leakage.OUTCOME_OVERFLOW, "g1", 0.5),
        ]
        path = tmp_path / "audit.csv"
        leakage.write_audit(audit, path)
        assert leakage.read_audit(path) == audit
        header = path.read_text().splitlines()[0]
        assert header == "probe_id,outcome,best_gallery_id,best_hd"
