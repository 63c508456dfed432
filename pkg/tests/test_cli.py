"""CLI tests: config handling, brand allocation, locking, exit codes, and a
small full-pipeline run through the real subcommands."""

import json

import numpy as np
import pytest

from padforge import cli, imageio, leakage, metrics
from padforge.cli import brand_allocation
from padforge.errors import ConfigError
from padforge.synthgen import Brand


def tiny_config(workdir, master_seed=77):
    return {
        "workdir": str(workdir),
        "master_seed": master_seed,
        "synth": {
            "gallery_count": 6,
            "notcl_count": 40,
            "tcl_per_brand": 3,
            "gallery_reuse_prob": 0.1,
            "test_bf_count": 10,
            "test_pa_count": 10,
        },
        "filter": {"k_target": 20},
        "curate": {"n_bf": 14, "n_tcl": 14},
        "train": {"n_seeds": 2, "max_epochs": 2, "lr": 0.1},
    }


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    workdir = root / "run"
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(tiny_config(workdir)))
    for command in ("synth", "enroll", "filter", "curate", "train", "eval", "report"):
        assert cli.main([command, "--config", str(cfg_path)]) == 0, command
    return workdir


class TestBrandAllocation:
    def test_k_4167(self):
        # 4167 = 7*595 + 2: the floor-plus-extras rule gives two 596s and five
        # 595s (every brand gets 595 or 596; the counts sum back to K).
        counts = brand_allocation(4167)
        assert [counts[b] for b in Brand] == [596, 596, 595, 595, 595, 595, 595]
        assert sum(counts.values()) == 4167
        assert set(counts.values()) == {595, 596}

    def test_one_each(self):
        assert all(v == 1 for v in brand_allocation(7).values())

    def test_even_split(self):
        assert all(v == 100 for v in brand_allocation(700).values())


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            cli.config_from_dict({"workdir": str(tmp_path), "bogus": 1})

    def test_unknown_section_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            cli.config_from_dict({"workdir": str(tmp_path), "synth": {"frobnicate": 3}})

    def test_missing_workdir_rejected(self):
        with pytest.raises(ConfigError):
            cli.config_from_dict({"master_seed": 3})

    def test_k_target_consistency(self, tmp_path):
        data = {"workdir": str(tmp_path), "synth": {"notcl_count": 10}, "filter": {"k_target": 50}}
        with pytest.raises(ConfigError):
            cli.config_from_dict(data)

    def test_relative_workdir_resolves_against_config(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"workdir": "rel_run"}))
        cfg = cli.load_config(cfg_path)
        assert cfg.workdir == tmp_path.resolve() / "rel_run"

    def test_config_error_exit_code(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text("{not json")
        assert cli.main(["synth", "--config", str(cfg_path)]) == cli.EXIT_CONFIG


class TestLock:
    def test_concurrent_invocations_rejected(self, tmp_path):
        workdir = tmp_path / "wd"
        with cli._WorkdirLock(workdir):
            with pytest.raises(ConfigError):
                with cli._WorkdirLock(workdir):
                    pass
        # released afterwards
        with cli._WorkdirLock(workdir):
            pass


class TestPipeline:
    def test_synth_outputs(self, pipeline_run):
        candidates = imageio.read_manifest(pipeline_run / "candidates" / "manifest.jsonl")
        assert len(candidates) == 40
        assert all(r.label == "BF" for r in candidates)
        tcl = imageio.read_manifest(pipeline_run / "tcl" / "manifest.jsonl")
        assert len(tcl) == 21
        per_brand = {b.name: 0 for b in Brand}
        for rec in tcl:
            per_brand[rec.brand] += 1
        assert all(v == 3 for v in per_brand.values())
        test = imageio.read_manifest(pipeline_run / "test.jsonl")
        assert len(test) == 20
        img = imageio.load_image(pipeline_run / "candidates" / candidates[0].path)
        assert img.shape == (480, 640)
        summary = json.loads((pipeline_run / "synth_summary.json").read_text())
        assert set(summary) == {"gallery", "candidates", "tcl"}

    def test_enroll_templates_written(self, pipeline_run):
        files = sorted((pipeline_run / "templates" / "candidates").glob("*.irtpl"))
        assert len(files) == 40

    def test_filter_outputs(self, pipeline_run):
        retained = imageio.read_manifest(pipeline_run / "retained.jsonl")
        assert len(retained) == 20
        audit = leakage.read_audit(pipeline_run / "retained_audit.csv")
        assert len(audit) == 40
        summary = json.loads((pipeline_run / "filter_summary.json").read_text())
        assert summary["notcl"]["verified"] and summary["tcl"]["verified"]
        # retained manifest must resolve from its new location
        img = imageio.load_image(imageio.resolve_path(pipeline_run / "retained.jsonl", retained[0]))
        assert img.shape == (480, 640)

    def test_curate_outputs(self, pipeline_run):
        curated = imageio.read_manifest(pipeline_run / "curated.jsonl")
        assert len(curated) == 28
        labels = [r.label for r in curated]
        assert labels.count("BF") == 14 and labels.count("PA") == 14
        img = imageio.load_image(imageio.resolve_path(pipeline_run / "curated.jsonl", curated[0]))
        assert img.shape == (256, 256)
        train = imageio.read_manifest(pipeline_run / "train.jsonl")
        val = imageio.read_manifest(pipeline_run / "val.jsonl")
        assert len(train) == 22 and len(val) == 6  # floor(0.8*14)=11 per class

    def test_train_outputs(self, pipeline_run):
        models = sorted((pipeline_run / "models").glob("model_*.json"))
        assert len(models) == 2
        digests = {p.read_bytes() for p in models}
        assert len(digests) == 2  # distinct seeds give distinct models
        for k in range(2):
            log = (pipeline_run / "models" / f"log_{k}.csv").read_text().splitlines()
            assert log[0] == "epoch,train_loss,val_acc"
            assert 1 <= len(log) - 1 <= 50

    def test_eval_outputs(self, pipeline_run):
        report = json.loads((pipeline_run / "eval" / "report.json").read_text())
        assert "trained" in report["variants"]
        per_seed = report["variants"]["trained"]["per_seed"]
        assert len(per_seed) == 2
        agg = report["variants"]["trained"]["aggregate"]
        assert 0.0 <= agg["auroc"]["mean"] <= 1.0
        table = (pipeline_run / "eval" / "table.txt").read_text()
        for row in ("0.1%", "1%", "5%", "10%"):
            assert row in table
        scores = metrics.read_score_csv(pipeline_run / "eval" / "scores_trained_0.csv")
        assert len(scores) == 20
        det = (pipeline_run / "eval" / "det_trained_0.csv").read_text().splitlines()
        assert det[0] == "apcer,bpcer"

    def test_insufficient_survivors_exit_code(self, pipeline_run, tmp_path):
        cfg = tiny_config(pipeline_run)
        cfg["filter"]["k_target"] = 40  # the reuse knob guarantees some leaks
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["filter", "--config", str(cfg_path)]) == cli.EXIT_INSUFFICIENT

    def test_verification_failure_exit_code(self, pipeline_run, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(tiny_config(pipeline_run)))
        monkeypatch.setattr(
            cli.leakage, "verify_no_leakage", lambda *a, **k: (False, [("x", "g", 0.1)])
        )
        assert cli.main(["filter", "--config", str(cfg_path)]) == cli.EXIT_VERIFICATION


class TestExternalVariants:
    def test_score_csv_variant_and_t_tests(self, pipeline_run, tmp_path):
        rng = np.random.default_rng(4)
        csv_dir = tmp_path / "ext"
        paths = []
        for k in range(2):
            ids = [f"s{i}" for i in range(40)]
            labels = ["BF"] * 20 + ["PA"] * 20
            scores = list(np.clip(rng.normal(70, 8, 20), 0, 100)) + list(
                np.clip(rng.normal(30, 8, 20), 0, 100)
            )
            s = metrics.ScoreSet(ids=ids, labels=labels, scores=[float(v) for v in scores])
            p = csv_dir / f"run{k}.csv"
            metrics.write_score_csv(s, p)
            paths.append(str(p))
        cfg = tiny_config(pipeline_run)
        cfg["eval"] = {"score_csv_variants": {"external": paths, "external_copy": paths}}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["eval", "--config", str(cfg_path)]) == 0
        report = json.loads((pipeline_run / "eval" / "report.json").read_text())
        assert set(report["variants"]) >= {"external", "external_copy", "trained"}
        pairs = {(t["a"], t["b"]): t for t in report["t_tests"]}
        identical = pairs[("external", "external_copy")]
        assert identical["p_two_sided"] == 1.0 and identical["degenerate"]


class TestPerManifestReports:
    def test_multiple_test_manifests(self, pipeline_run, tmp_path):
        records = imageio.read_manifest(pipeline_run / "test.jsonl")
        half_a, half_b = records[::2], records[1::2]  # both halves keep BF and PA
        for rec in half_a + half_b:
            rec.path = str(imageio.resolve_path(pipeline_run / "test.jsonl", rec))
        imageio.write_manifest(half_a, pipeline_run / "test_a.jsonl")
        imageio.write_manifest(half_b, pipeline_run / "test_b.jsonl")
        cfg = tiny_config(pipeline_run)
        cfg["eval"] = {"test_manifests": ["test_a.jsonl", "test_b.jsonl"]}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["eval", "--config", str(cfg_path)]) == 0
        report = json.loads((pipeline_run / "eval" / "report.json").read_text())
        per_manifest = report["variants"]["trained"]["per_manifest"]
        assert set(per_manifest) == {"test_a", "test_b"}
        assert len(per_manifest["test_a"]) == 2  # one report per seed


class TestCurateExternalManifests:
    def test_e2_style_sources(self, pipeline_run, tmp_path):
        # E2: externally supplied authentic-analog manifests with the same schema
        cfg = tiny_config(tmp_path / "e2run")
        cfg["experiment"] = "E2"
        bf = pipeline_run / "retained.jsonl"
        pa = pipeline_run / "tcl_retained.jsonl"
        cfg["curate"] = {"n_bf": 10, "n_tcl": 14, "bf_manifest": str(bf), "pa_manifest": str(pa)}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["curate", "--config", str(cfg_path)]) == 0
        curated = imageio.read_manifest(tmp_path / "e2run" / "curated.jsonl")
        labels = [r.label for r in curated]
        assert labels.count("BF") == 10 and labels.count("PA") == 14
