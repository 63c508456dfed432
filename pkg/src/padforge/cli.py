"""Pipeline orchestrator.

Subcommands mirror the pipeline stages::

    padforge synth|enroll|filter|curate|train|eval|report --config cfg.json

One JSON config document drives everything; a single master seed fixes every
artifact byte-for-byte.  Per-stage seeds derive from (master_seed, stage
index, counter) so stages can be rerun independently.  Exit codes: 0 ok,
2 config error, 3 leakage verification failure, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio, leakage, matcher, metrics, pad, synthgen
from .errors import (
    ConfigError,
    InsufficientSurvivorsError,
    InvariantViolationError,
    LeakageVerificationError,
    PadforgeError,
)
from .imageio import SampleRecord
from .seeds import seed_from
from .synthgen import Brand

# Stage indices for seed derivation (documented contract).
STAGE_SYNTH = 1
STAGE_FILTER = 2
STAGE_CURATE = 3
STAGE_TRAIN = 4
STAGE_EVAL = 5

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFICATION = 3
EXIT_INSUFFICIENT = 4

LOCK_NAME = ".padforge.lock"


@dataclass
class SynthSettings:
    gallery_count: int = 50
    notcl_count: int = 2000
    tcl_per_brand: int = 110
    gallery_reuse_prob: float = 0.05
    tcl_reuse_prob: float = 0.0
    test_bf_count: int = 200
    test_pa_count: int = 200
    full_frame: bool = True
    jitter: synthgen.AppearanceJitter = field(default_factory=synthgen.AppearanceJitter)
    # Held-out evaluation uses deliberately shifted appearance parameters.
    test_jitter: synthgen.AppearanceJitter = field(
        default_factory=lambda: synthgen.AppearanceJitter(
            brightness=(0.75, 1.2), contrast=(0.9, 1.1), blur_max=1.6, noise_max=5.0
        )
    )


@dataclass
class MatcherSettings:
    match_threshold: float = matcher.DEFAULT_MATCH_THRESHOLD
    enroll_min_valid: float = matcher.DEFAULT_ENROLL_MIN_VALID
    max_shift: int = matcher.DEFAULT_MAX_SHIFT


@dataclass
class FilterSettings:
    k_target: int = 700
    filter_tcl: bool = True


@dataclass
class CurateSettings:
    n_bf: int = 700
    n_tcl: int = 700
    train_fraction: float = 0.8
    bf_manifest: str | None = None  # external (e.g. authentic-analog) overrides
    pa_manifest: str | None = None


@dataclass
class TrainSettings:
    n_seeds: int = 5
    batch_size: int = 32
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-6
    max_epochs: int = 50


@dataclass
class EvalSettings:
    apcer_targets: tuple[float, ...] = metrics.DEFAULT_APCER_TARGETS
    test_manifests: tuple[str, ...] = ()  # defaults to the synth test set
    score_csv_variants: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    workdir: Path
    master_seed: int = 0
    experiment: str = "E1"
    synth: SynthSettings = field(default_factory=SynthSettings)
    matcher: MatcherSettings = field(default_factory=MatcherSettings)
    filter: FilterSettings = field(default_factory=FilterSettings)
    curate: CurateSettings = field(default_factory=CurateSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    augment: pad.AugmentationPolicy = field(default_factory=pad.AugmentationPolicy)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def validate(self):
        if self.experiment not in ("E1", "E2"):
            raise ConfigError(f"experiment must be E1 or E2, got {self.experiment!r}")
        if self.filter.k_target > self.synth.notcl_count:
            raise ConfigError("filter.k_target exceeds synth.notcl_count")
        if self.curate.n_bf > self.filter.k_target and self.curate.bf_manifest is None:
            raise ConfigError("curate.n_bf exceeds filter.k_target")


def _pair(value, name) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name} must be a [lo, hi] pair")
    return float(value[0]), float(value[1])


def _build(section_cls, data: dict, name: str, special=None):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    kwargs = {}
    fields = {f.name for f in section_cls.__dataclass_fields__.values()}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {name}.{key}")
        if special and key in special:
            value = special[key](value)
        kwargs[key] = value
    try:
        return section_cls(**kwargs)
    except (TypeError, InvariantViolationError) as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


def _jitter(data) -> synthgen.AppearanceJitter:
    if not isinstance(data, dict):
        raise ConfigError("jitter must be an object")
    kwargs = {}
    for key, value in data.items():
        if key in ("brightness", "contrast"):
            kwargs[key] = _pair(value, key)
        elif key in ("blur_max", "noise_max"):
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"unknown jitter key {key}")
    return synthgen.AppearanceJitter(**kwargs)


def _policy(data) -> pad.AugmentationPolicy:
    if not isinstance(data, dict):
        raise ConfigError("augment must be an object")
    kwargs = {}
    for key, value in data.items():
        if key == "flip_prob":
            kwargs[key] = float(value)
        elif key == "seed":
            kwargs[key] = int(value)
        elif key in ("rotation_deg", "noise_sigma", "blur_sigma", "sharpen_amount",
                     "brightness", "contrast"):
            kwargs[key] = _pair(value, key)
        else:
            raise ConfigError(f"unknown augment key {key}")
    try:
        return pad.AugmentationPolicy(**kwargs)
    except InvariantViolationError as exc:
        raise ConfigError(f"bad augment section: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {"workdir", "master_seed", "experiment", "synth", "matcher", "filter",
             "curate", "train", "augment", "eval"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "workdir" not in data:
        raise ConfigError("config requires a workdir")
    workdir = Path(data["workdir"])
    if base_dir is not None and not workdir.is_absolute():
        workdir = base_dir / workdir

    cfg = PipelineConfig(
        workdir=workdir,
        master_seed=int(data.get("master_seed", 0)),
        experiment=data.get("experiment", "E1"),
        synth=_build(SynthSettings, data.get("synth", {}), "synth",
                     special={"jitter": _jitter, "test_jitter": _jitter}),
        matcher=_build(MatcherSettings, data.get("matcher", {}), "matcher"),
        filter=_build(FilterSettings, data.get("filter", {}), "filter"),
        curate=_build(CurateSettings, data.get("curate", {}), "curate"),
        train=_build(TrainSettings, data.get("train", {}), "train"),
        augment=_policy(data.get("augment", {})),
        eval=_build(EvalSettings, data.get("eval", {}),
                    "eval", special={"apcer_targets": lambda v: tuple(float(x) for x in v),
                                     "test_manifests": lambda v: tuple(str(x) for x in v)}),
    )
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data, base_dir=p.parent.resolve())


class _WorkdirLock:
    """Rejects concurrent pipeline invocations on the same work directory."""

    def __init__(self, workdir: Path):
        self.path = Path(workdir) / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"work directory is locked by another run ({self.path}); "
                "remove the lock file if that run is dead"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def brand_allocation(total: int) -> dict[Brand, int]:
    """Balanced per-brand counts: floor(total/7) each, one extra for the first
    (total mod 7) brands in enum-code order."""
    base, extra = divmod(total, len(Brand))
    return {brand: base + (1 if i < extra else 0) for i, brand in enumerate(Brand)}


def _rebase(records: list[SampleRecord], src_manifest: Path, dst_manifest: Path) -> list[SampleRecord]:
    """Rewrite record paths so they stay resolvable from a new manifest location."""
    out = []
    for rec in records:
        resolved = imageio.resolve_path(src_manifest, rec)
        rel = os.path.relpath(resolved, Path(dst_manifest).parent)
        out.append(
            SampleRecord(
                id=rec.id,
                path=rel,
                label=rec.label,
                source=rec.source,
                brand=rec.brand,
                identity_tag=rec.identity_tag,
                geometry=rec.geometry,
            )
        )
    return out


def _quality_stats(manifest_path) -> dict:
    records = imageio.read_manifest(manifest_path)
    scores = []
    for rec in records:
        img = imageio.load_image(imageio.resolve_path(manifest_path, rec))
        scores.append(imageio.overall_quality(img, rec.geometry))
    arr = np.array(scores)
    return {
        "count": len(arr),
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def cmd_synth(cfg: PipelineConfig) -> None:
    """Stage 1: gallery, noTCL candidates (with planted identity reuse),
    brand-conditioned TCL, and the held-out shifted-appearance test set."""
    wd = cfg.workdir
    s = cfg.synth

    gallery_cfg = synthgen.SynthesisConfig(
        count=s.gallery_count, seed=seed_from(cfg.master_seed, STAGE_SYNTH, 1),
        mode="noTCL", jitter=s.jitter, id_prefix="gal",
    )
    gallery_records = synthgen.generate_batch(gallery_cfg, wd / "gallery", full_frame=s.full_frame)
    gallery_identities = [int(rec.identity_tag) for rec in gallery_records]

    cand_cfg = synthgen.SynthesisConfig(
        count=s.notcl_count, seed=seed_from(cfg.master_seed, STAGE_SYNTH, 2),
        mode="noTCL", gallery_reuse_prob=s.gallery_reuse_prob,
        gallery=gallery_identities, jitter=s.jitter, id_prefix="cand",
    )
    synthgen.generate_batch(cand_cfg, wd / "candidates", full_frame=s.full_frame)

    tcl_cfg = synthgen.SynthesisConfig(
        count=s.tcl_per_brand * len(Brand), seed=seed_from(cfg.master_seed, STAGE_SYNTH, 3),
        mode="TCL", brand_mix={b: s.tcl_per_brand for b in Brand},
        gallery_reuse_prob=s.tcl_reuse_prob, gallery=gallery_identities,
        jitter=s.jitter, id_prefix="tcl",
    )
    synthgen.generate_batch(tcl_cfg, wd / "tcl", full_frame=s.full_frame)

    test_bf_cfg = synthgen.SynthesisConfig(
        count=s.test_bf_count, seed=seed_from(cfg.master_seed, STAGE_SYNTH, 4),
        mode="noTCL", jitter=s.test_jitter, id_prefix="test_bf",
    )
    bf_records = synthgen.generate_batch(test_bf_cfg, wd / "test_bf", full_frame=s.full_frame)
    test_pa_cfg = synthgen.SynthesisConfig(
        count=s.test_pa_count, seed=seed_from(cfg.master_seed, STAGE_SYNTH, 5),
        mode="TCL", brand_mix=brand_allocation(s.test_pa_count),
        jitter=s.test_jitter, id_prefix="test_pa",
    )
    pa_records = synthgen.generate_batch(test_pa_cfg, wd / "test_pa", full_frame=s.full_frame)

    combined = _rebase(bf_records, wd / "test_bf" / "manifest.jsonl", wd / "test.jsonl")
    combined += _rebase(pa_records, wd / "test_pa" / "manifest.jsonl", wd / "test.jsonl")
    imageio.write_manifest(combined, wd / "test.jsonl")

    summary = {
        name: _quality_stats(wd / name / "manifest.jsonl")
        for name in ("gallery", "candidates", "tcl")
    }
    (wd / "synth_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_enroll(cfg: PipelineConfig) -> None:
    """Emit iris template cache files for the candidate and gallery sets."""
    wd = cfg.workdir
    for name in ("gallery", "candidates"):
        manifest = wd / name / "manifest.jsonl"
        records = imageio.read_manifest(manifest)
        templates = matcher.templates_for_records(
            manifest, records, cfg.matcher.enroll_min_valid
        )
        out_dir = wd / "templates" / name
        n_enrolled = 0
        for rec, tpl in zip(records, templates):
            matcher.write_template(tpl, out_dir / f"{rec.id}.irtpl")
            n_enrolled += int(tpl.enrolled)
        print(f"{name}: {n_enrolled}/{len(records)} enrolled -> {out_dir}")


def _filter_one(cfg: PipelineConfig, src_name: str, k_target, out_stem: str):
    wd = cfg.workdir
    src = wd / src_name / "manifest.jsonl"
    gallery = wd / "gallery" / "manifest.jsonl"
    result = leakage.filter_leakage(
        src,
        gallery,
        k_target=k_target,
        threshold=cfg.matcher.match_threshold,
        max_shift=cfg.matcher.max_shift,
        enroll_min_valid=cfg.matcher.enroll_min_valid,
    )
    retained_path = wd / f"{out_stem}.jsonl"
    imageio.write_manifest(_rebase(result.retained, src, retained_path), retained_path)
    leakage.write_audit(result.audit, wd / f"{out_stem}_audit.csv")
    ok, violations = leakage.verify_no_leakage(
        retained_path,
        gallery,
        threshold=cfg.matcher.match_threshold,
        max_shift=cfg.matcher.max_shift,
        enroll_min_valid=cfg.matcher.enroll_min_valid,
    )
    if not ok:
        raise LeakageVerificationError(
            f"{out_stem}: {len(violations)} retained/gallery matches, e.g. {violations[:3]}"
        )
    outcomes = [a.outcome for a in result.audit]
    return {
        "source": src_name,
        "candidates": len(result.audit),
        "retained": len(result.retained),
        "excluded_match": outcomes.count(leakage.OUTCOME_MATCH),
        "excluded_enroll_failure": outcomes.count(leakage.OUTCOME_ENROLL),
        "excluded_overflow": outcomes.count(leakage.OUTCOME_OVERFLOW),
        "verified": True,
    }


def cmd_filter(cfg: PipelineConfig) -> None:
    """Stage 2: leakage-filter the candidates (and, by default, the TCL set),
    then independently verify the retained sets."""
    summary = {"notcl": _filter_one(cfg, "candidates", cfg.filter.k_target, "retained")}
    if cfg.filter.filter_tcl:
        summary["tcl"] = _filter_one(cfg, "tcl", None, "tcl_retained")
    (cfg.workdir / "filter_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _curated_sources(cfg: PipelineConfig):
    wd = cfg.workdir
    if cfg.curate.bf_manifest is not None:
        bf_path = Path(cfg.curate.bf_manifest)
    else:
        bf_path = wd / "retained.jsonl"
    if cfg.curate.pa_manifest is not None:
        pa_path = Path(cfg.curate.pa_manifest)
    elif cfg.filter.filter_tcl and (wd / "tcl_retained.jsonl").exists():
        pa_path = wd / "tcl_retained.jsonl"
    else:
        pa_path = wd / "tcl" / "manifest.jsonl"
    return bf_path, pa_path


def cmd_curate(cfg: PipelineConfig) -> None:
    """Stage 3 prep: brand-balanced PA selection, BF selection, center-crop to
    the PAD input size, and the record-keeping train/val split."""
    wd = cfg.workdir
    bf_path, pa_path = _curated_sources(cfg)
    bf_records = imageio.read_manifest(bf_path)
    pa_records = imageio.read_manifest(pa_path)

    if len(bf_records) < cfg.curate.n_bf:
        raise InsufficientSurvivorsError(len(bf_records), cfg.curate.n_bf)
    chosen_bf = bf_records[: cfg.curate.n_bf]

    allocation = brand_allocation(cfg.curate.n_tcl)
    by_brand: dict[str, list[SampleRecord]] = {b.name: [] for b in Brand}
    for rec in pa_records:
        if rec.brand in by_brand:
            by_brand[rec.brand].append(rec)
    chosen_pa = []
    for brand in Brand:
        want = allocation[brand]
        have = by_brand[brand.name]
        if len(have) < want:
            raise InsufficientSurvivorsError(len(have), want)
        chosen_pa.extend(have[:want])

    curated: list[SampleRecord] = []
    for src_manifest, chosen in ((bf_path, chosen_bf), (pa_path, chosen_pa)):
        for rec in chosen:
            img = imageio.load_image(imageio.resolve_path(src_manifest, rec))
            crop = imageio.center_crop_resize(img, rec.geometry, pad.PAD_SIDE)
            rel = f"pad_inputs/{rec.id}.png"
            imageio.save_image(crop, wd / rel)
            curated.append(
                SampleRecord(
                    id=rec.id,
                    path=rel,
                    label=rec.label,
                    source=rec.source,
                    brand=rec.brand,
                    identity_tag=rec.identity_tag,
                    geometry=imageio.cropped_geometry(rec.geometry, pad.PAD_SIDE),
                )
            )
    imageio.write_manifest(curated, wd / "curated.jsonl")

    y = np.array([0 if rec.label == "BF" else 1 for rec in curated])
    train_idx, val_idx = pad.stratified_split(
        y, cfg.curate.train_fraction, seed_from(cfg.master_seed, STAGE_CURATE)
    )
    imageio.write_manifest([curated[i] for i in train_idx], wd / "train.jsonl")
    imageio.write_manifest([curated[i] for i in val_idx], wd / "val.jsonl")


def train_seeds(cfg: PipelineConfig) -> list[int]:
    return [seed_from(cfg.master_seed, STAGE_TRAIN, i) for i in range(cfg.train.n_seeds)]


def cmd_train(cfg: PipelineConfig) -> None:
    """Stage 3: train one model per derived seed on the curated manifest."""
    wd = cfg.workdir
    models_dir = wd / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    for k, seed in enumerate(train_seeds(cfg)):
        train_cfg = pad.TrainConfig(
            batch_size=cfg.train.batch_size,
            lr=cfg.train.lr,
            momentum=cfg.train.momentum,
            weight_decay=cfg.train.weight_decay,
            max_epochs=cfg.train.max_epochs,
            train_fraction=cfg.curate.train_fraction,
            seed=seed,
        )
        model = pad.train(wd / "curated.jsonl", train_cfg, cfg.augment)
        model.save(models_dir / f"model_{k}.json")
        with open(models_dir / f"log_{k}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_acc"])
            for row in model.metadata["epoch_log"]:
                writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_acc"])])
        print(
            f"model_{k}: best epoch {model.metadata['best_epoch']} "
            f"val_acc {model.metadata['best_val_acc']:.4f}"
        )


def _test_manifests(cfg: PipelineConfig) -> list[Path]:
    if cfg.eval.test_manifests:
        return [Path(p) if Path(p).is_absolute() else cfg.workdir / p
                for p in cfg.eval.test_manifests]
    return [cfg.workdir / "test.jsonl"]


def _pad_ready_manifest(cfg: PipelineConfig, manifest: Path, tag: str) -> Path:
    """Center-crop a full-frame manifest into PAD inputs under eval/."""
    records = imageio.read_manifest(manifest)
    out_manifest = cfg.workdir / "eval" / f"pad_{tag}.jsonl"
    first = imageio.load_image(imageio.resolve_path(manifest, records[0])) if records else None
    if first is not None and first.shape == (pad.PAD_SIDE, pad.PAD_SIDE):
        imageio.write_manifest(_rebase(records, manifest, out_manifest), out_manifest)
        return out_manifest
    ready: list[SampleRecord] = []
    for rec in records:
        img = imageio.load_image(imageio.resolve_path(manifest, rec))
        crop = imageio.center_crop_resize(img, rec.geometry, pad.PAD_SIDE)
        rel = f"pad_{tag}/{rec.id}.png"
        imageio.save_image(crop, cfg.workdir / "eval" / rel)
        ready.append(
            SampleRecord(
                id=rec.id, path=rel, label=rec.label, source=rec.source,
                brand=rec.brand, identity_tag=rec.identity_tag,
                geometry=imageio.cropped_geometry(rec.geometry, pad.PAD_SIDE),
            )
        )
    imageio.write_manifest(ready, out_manifest)
    return out_manifest


def cmd_eval(cfg: PipelineConfig) -> None:
    """Stage 4: score every model variant on the test manifests, aggregate the
    per-seed reports, and run pairwise t-tests between variants."""
    wd = cfg.workdir
    eval_dir = wd / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    targets = cfg.eval.apcer_targets

    score_sets: dict[str, list[metrics.ScoreSet]] = {}
    per_manifest_reports: dict[str, dict[str, list[dict]]] = {}

    models_dir = wd / "models"
    model_files = sorted(models_dir.glob("model_*.json")) if models_dir.is_dir() else []
    if model_files:
        sources = _test_manifests(cfg)
        manifests = [_pad_ready_manifest(cfg, m, m.stem) for m in sources]
        runs = []
        split_reports: dict[str, list[dict]] = {m.stem: [] for m in sources}
        for model_file in model_files:
            model = pad.PadModel.load(model_file)
            per_manifest = [pad.score_dataset(model, m) for m in manifests]
            if len(per_manifest) == 1:
                pooled = per_manifest[0]
            else:
                pooled = metrics.ScoreSet(
                    ids=[f"{i}:{sid}" for i, s in enumerate(per_manifest) for sid in s.ids],
                    labels=[l for s in per_manifest for l in s.labels],
                    scores=[v for s in per_manifest for v in s.scores],
                )
            runs.append(pooled)
            if len(manifests) > 1:
                for src, scores in zip(sources, per_manifest):
                    split_reports[src.stem].append(
                        metrics.evaluate(scores, targets).to_jsonable()
                    )
        score_sets["trained"] = runs
        if len(manifests) > 1:
            per_manifest_reports["trained"] = split_reports

    for name, csv_paths in cfg.eval.score_csv_variants.items():
        score_sets[name] = [
            metrics.read_score_csv(Path(p) if Path(p).is_absolute() else wd / p)
            for p in csv_paths
        ]

    if not score_sets:
        raise ConfigError("nothing to evaluate: no trained models and no score CSVs")

    report: dict = {"experiment": cfg.experiment, "master_seed": cfg.master_seed,
                    "apcer_targets": list(targets), "variants": {}, "t_tests": []}
    aggregates: dict[str, metrics.RunAggregate] = {}
    for name, runs in score_sets.items():
        per_seed = [metrics.evaluate(s, targets) for s in runs]
        for k, (scores, rep) in enumerate(zip(runs, per_seed)):
            metrics.write_score_csv(scores, eval_dir / f"scores_{name}_{k}.csv")
            metrics.write_det_csv(rep.det, eval_dir / f"det_{name}_{k}.csv")
        entry = {"per_seed": [r.to_jsonable() for r in per_seed]}
        if len(per_seed) >= 2:
            agg = metrics.aggregate_runs(per_seed)
            aggregates[name] = agg
            entry["aggregate"] = agg.to_jsonable()
        if name in per_manifest_reports:
            entry["per_manifest"] = per_manifest_reports[name]
        report["variants"][name] = entry

    names = sorted(score_sets)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a = [r["auroc"] for r in report["variants"][names[i]]["per_seed"]]
            b = [r["auroc"] for r in report["variants"][names[j]]["per_seed"]]
            if len(a) != len(b) or len(a) < 2:
                continue
            res = metrics.paired_t_test(a, b)
            report["t_tests"].append(
                {
                    "a": names[i],
                    "b": names[j],
                    "t": res.t,
                    "df": res.df,
                    "p_two_sided": res.p_two_sided,
                    "degenerate": res.degenerate,
                    "significant_at_0.05": bool(res.p_two_sided < 0.05),
                }
            )

    (eval_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if aggregates:
        table = metrics.render_table(aggregates)
        (eval_dir / "table.txt").write_text(table, encoding="utf-8")
        print(table, end="")


def cmd_report(cfg: PipelineConfig) -> None:
    """Render the saved evaluation report."""
    report_path = cfg.workdir / "eval" / "report.json"
    if not report_path.is_file():
        raise ConfigError(f"no evaluation report at {report_path}; run `padforge eval` first")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    table_path = cfg.workdir / "eval" / "table.txt"
    if table_path.is_file():
        print(table_path.read_text(encoding="utf-8"), end="")
    for t in payload.get("t_tests", []):
        verdict = "significant" if t["significant_at_0.05"] else "not significant"
        print(
            f"t-test {t['a']} vs {t['b']}: t={t['t']:.4f}, df={t['df']}, "
            f"p={t['p_two_sided']:.4f} ({verdict} at alpha=0.05)"
        )


_COMMANDS = {
    "synth": cmd_synth,
    "enroll": cmd_enroll,
    "filter": cmd_filter,
    "curate": cmd_curate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="padforge",
        description="Synthetic-data iris PAD pipeline: synthesize, filter identity "
        "leakage, curate, train, and evaluate.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="override workdir")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.out is not None:
            cfg.workdir = Path(args.out)
        with _WorkdirLock(cfg.workdir):
            _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LeakageVerificationError as exc:
        print(f"leakage verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except InsufficientSurvivorsError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except PadforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
