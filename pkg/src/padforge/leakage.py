"""Privacy-safe sample selection: drop synthetic samples that biometrically
match the generator's training gallery or fail to enroll, then keep the first
K survivors in manifest order.

`verify_no_leakage` is the independent post-hoc checker: it re-matches the
retained set against the gallery from scratch and must find nothing below
threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio, matcher
from .errors import InsufficientSurvivorsError, InvariantViolationError
from .imageio import SampleRecord

OUTCOME_RETAINED = "retained"
OUTCOME_MATCH = "excluded_match"
OUTCOME_ENROLL = "excluded_enroll_failure"
OUTCOME_OVERFLOW = "excluded_overflow"
OUTCOMES = (OUTCOME_RETAINED, OUTCOME_MATCH, OUTCOME_ENROLL, OUTCOME_OVERFLOW)

AUDIT_HEADER = ("probe_id", "outcome", "best_gallery_id", "best_hd")


@dataclass
class LeakageAuditRecord:
    probe_id: str
    outcome: str
    best_gallery_id: str | None = None
    best_hd: float | None = None


@dataclass
class FilterResult:
    retained: list[SampleRecord]
    audit: list[LeakageAuditRecord]


def _gallery_templates(gallery_manifest, enroll_min_valid):
    records = imageio.read_manifest(gallery_manifest)
    templates = matcher.templates_for_records(gallery_manifest, records, enroll_min_valid)
    bad = [rec.id for rec, t in zip(records, templates) if not t.enrolled]
    if bad:
        raise InvariantViolationError(f"gallery templates failed to enroll: {bad}")
    return records, templates


def filter_leakage(
    candidates_manifest,
    gallery_manifest,
    k_target: int | None,
    threshold: float = matcher.DEFAULT_MATCH_THRESHOLD,
    max_shift: int = matcher.DEFAULT_MAX_SHIFT,
    enroll_min_valid: float = matcher.DEFAULT_ENROLL_MIN_VALID,
) -> FilterResult:
    """Exclude candidates that match the gallery or fail enrollment; retain the
    first `k_target` survivors in manifest order.

    Every candidate is matched against the full gallery (all-vs-all) and shows
    up in the audit exactly once.  `k_target=None` retains all survivors.
    Raises InsufficientSurvivorsError when fewer than `k_target` survive.
    """
    candidates = imageio.read_manifest(candidates_manifest)
    if k_target is not None and k_target <= 0:
        raise InvariantViolationError("k_target must be positive")
    if gallery_manifest is not None:
        gallery_records, gallery_templates = _gallery_templates(gallery_manifest, enroll_min_valid)
    else:
        gallery_records, gallery_templates = [], []

    probe_templates = matcher.templates_for_records(candidates_manifest, candidates, enroll_min_valid)
    outcomes = matcher.match_outcomes(
        candidates,
        probe_templates,
        gallery_records,
        gallery_templates,
        threshold=threshold,
        max_shift=max_shift,
    )

    retained: list[SampleRecord] = []
    audit: list[LeakageAuditRecord] = []
    for rec, outcome in zip(candidates, outcomes):
        entry = LeakageAuditRecord(probe_id=rec.id, outcome=OUTCOME_RETAINED)
        if outcome.result is not None:
            entry.best_gallery_id = outcome.best_gallery_id
            entry.best_hd = outcome.result.hd
        if not outcome.enrolled:
            entry.outcome = OUTCOME_ENROLL
        elif outcome.result is not None and outcome.result.is_match:
            entry.outcome = OUTCOME_MATCH
        elif k_target is not None and len(retained) >= k_target:
            entry.outcome = OUTCOME_OVERFLOW
        else:
            retained.append(rec)
        audit.append(entry)

    if k_target is not None and len(retained) < k_target:
        raise InsufficientSurvivorsError(len(retained), k_target)
    return FilterResult(retained=retained, audit=audit)


def verify_no_leakage(
    retained_manifest,
    gallery_manifest,
    threshold: float = matcher.DEFAULT_MATCH_THRESHOLD,
    max_shift: int = matcher.DEFAULT_MAX_SHIFT,
    enroll_min_valid: float = matcher.DEFAULT_ENROLL_MIN_VALID,
):
    """Re-match every retained sample against every gallery entry.

    Returns (ok, violations); ok is True iff no retained/gallery pair has a
    Hamming distance below threshold.  Each violation is a
    (retained_id, gallery_id, hd) triple.
    """
    retained = imageio.read_manifest(retained_manifest)
    violations: list[tuple[str, str, float]] = []
    if gallery_manifest is None or not retained:
        return True, violations
    gallery_records = imageio.read_manifest(gallery_manifest)
    if not gallery_records:
        return True, violations
    gallery_templates = matcher.templates_for_records(
        gallery_manifest, gallery_records, enroll_min_valid
    )
    probe_templates = matcher.templates_for_records(retained_manifest, retained, enroll_min_valid)

    usable = [i for i, t in enumerate(gallery_templates) if t.enrolled]
    enrolled_probes = [i for i, t in enumerate(probe_templates) if t.enrolled]
    if usable and enrolled_probes:
        hd, _ = matcher.match_many(
            [probe_templates[i] for i in enrolled_probes],
            [gallery_templates[i] for i in usable],
            max_shift=max_shift,
        )
        rows, cols = np.nonzero(hd < threshold)
        for row, col in zip(rows, cols):
            violations.append(
                (
                    retained[enrolled_probes[row]].id,
                    gallery_records[usable[col]].id,
                    float(hd[row, col]),
                )
            )
    return not violations, violations


def write_audit(audit: list[LeakageAuditRecord], path) -> None:
    """Audit log CSV: probe_id,outcome,best_gallery_id,best_hd."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_HEADER)
        for rec in audit:
            writer.writerow(
                [
                    rec.probe_id,
                    rec.outcome,
                    rec.best_gallery_id if rec.best_gallery_id is not None else "",
                    repr(rec.best_hd) if rec.best_hd is not None else "",
                ]
            )


def read_audit(path) -> list[LeakageAuditRecord]:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != AUDIT_HEADER:
            raise InvariantViolationError(f"unexpected audit header {header}")
        for row in reader:
            probe_id, outcome, gallery_id, hd = row
            if outcome not in OUTCOMES:
                raise InvariantViolationError(f"unknown outcome {outcome!r}")
            records.append(
                LeakageAuditRecord(
                    probe_id=probe_id,
                    outcome=outcome,
                    best_gallery_id=gallery_id or None,
                    best_hd=float(hd) if hd else None,
                )
            )
    return records
