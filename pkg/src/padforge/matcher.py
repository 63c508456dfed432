"""Open iris matcher: rubber-sheet normalization, Gabor phase codes, and
masked fractional Hamming distance with rotation search.

The polar unwrap samples 64 radii x 512 angles between the pupil and iris
boundary circles.  Codes are 2 phase bits per cell of a 32x256 grid (sign of
the real and imaginary parts of a 1-D log-Gabor response along each row),
16,384 bits total, compared under the intersection of validity masks at
angular shifts within +-8 columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .errors import (
    DegenerateGeometryError,
    InsufficientOverlapError,
    NotEnrolledError,
    UnsupportedEncodingError,
)
from .imageio import IrisGeometry, SampleRecord

POLAR_ROWS = 64
POLAR_COLS = 512
CODE_ROWS = 32
CODE_COLS = 256
CODE_BITS = 2 * CODE_ROWS * CODE_COLS  # 16,384

GABOR_WAVELENGTH = 18.0  # pixels along a code row
GABOR_SIGMA_F = 0.55     # sigma/f of the log-Gabor transfer function
MASK_ERODE_COLS = 4      # angular half-width of filter support masking

DEFAULT_MATCH_THRESHOLD = 0.32
DEFAULT_ENROLL_MIN_VALID = 0.40
DEFAULT_MAX_SHIFT = 8
MIN_OVERLAP_BITS = 100

SPECULAR_LEVEL = 250.0

TEMPLATE_MAGIC = b"IRTPL1"


@dataclass
class PolarIris:
    """Rubber-sheet unwrapped iris: 64x512 intensities plus validity mask."""

    values: np.ndarray  # float64 (64, 512)
    valid: np.ndarray   # bool (64, 512)

    def __post_init__(self):
        if self.values.shape != (POLAR_ROWS, POLAR_COLS) or self.valid.shape != self.values.shape:
            raise ValueError(f"polar iris must be {POLAR_ROWS}x{POLAR_COLS}")


@dataclass
class IrisTemplate:
    """Binary iris code and validity mask, shape (2 phase planes, 32, 256)."""

    code: np.ndarray  # bool (2, 32, 256)
    mask: np.ndarray  # bool (2, 32, 256)
    enrolled: bool

    def __post_init__(self):
        shape = (2, CODE_ROWS, CODE_COLS)
        if self.code.shape != shape or self.mask.shape != shape:
            raise ValueError(f"template arrays must have shape {shape}")

    def valid_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class MatchResult:
    hd: float
    best_shift: int
    is_match: bool


@dataclass
class ProbeMatchOutcome:
    """Best gallery match for one probe from a batch enroll-and-match run."""

    probe_id: str
    enrolled: bool
    result: MatchResult | None = None
    best_gallery_id: str | None = None


def normalize(img: np.ndarray, geom: IrisGeometry) -> PolarIris:
    """Unwrap the iris annulus to 64x512 polar coordinates.

    Row i, column j samples the image by bilinear interpolation at the point
    a fraction (i + 0.5)/64 of the way from the pupil boundary to the iris
    boundary along angle 2*pi*j/512.  Samples off-frame or brighter than the
    specular level are marked invalid.
    """
    imageio.ensure_gray(img)
    h, w = img.shape
    if not (geom.iris.r > 0 and geom.pupil.r > 0):
        raise DegenerateGeometryError("non-positive radius")

    theta = 2.0 * math.pi * np.arange(POLAR_COLS) / POLAR_COLS
    t = ((np.arange(POLAR_ROWS) + 0.5) / POLAR_ROWS)[:, None]
    px = geom.pupil.cx + geom.pupil.r * np.cos(theta)[None, :]
    py = geom.pupil.cy + geom.pupil.r * np.sin(theta)[None, :]
    ix = geom.iris.cx + geom.iris.r * np.cos(theta)[None, :]
    iy = geom.iris.cy + geom.iris.r * np.sin(theta)[None, :]
    xs = (1.0 - t) * px + t * ix
    ys = (1.0 - t) * py + t * iy

    values = imageio.bilinear_sample(img, xs, ys, fill=0.0)
    in_frame = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    valid = in_frame & (values <= SPECULAR_LEVEL)
    return PolarIris(values=values, valid=valid)


def _gabor_transfer() -> np.ndarray:
    """One-sided analytic log-Gabor transfer function over 256 FFT bins."""
    transfer = np.zeros(CODE_COLS, dtype=np.complex128)
    log_sigma = math.log(GABOR_SIGMA_F)
    k = np.arange(1, CODE_COLS // 2 + 1)
    f_rel = (k / CODE_COLS) * GABOR_WAVELENGTH  # f / f0
    g = np.exp(-(np.log(f_rel) ** 2) / (2.0 * log_sigma**2))
    transfer[1 : CODE_COLS // 2] = 2.0 * g[:-1]
    transfer[CODE_COLS // 2] = g[-1]
    return transfer


_TRANSFER = _gabor_transfer()


def encode(p: PolarIris, enroll_min_valid: float = DEFAULT_ENROLL_MIN_VALID) -> IrisTemplate:
    """Quantize Gabor phase into a 2x32x256 bit code.

    The polar image is 2x2 block-averaged to 32x256, each row is filtered by
    a circular 1-D log-Gabor, and the signs of the real and imaginary parts
    become the two bit planes.  A mask bit requires every source pixel of its
    block plus the filter support window around it to be valid.
    """
    blocks = p.values.reshape(CODE_ROWS, 2, CODE_COLS, 2).mean(axis=(1, 3))
    valid = p.valid.reshape(CODE_ROWS, 2, CODE_COLS, 2).all(axis=(1, 3))

    spectrum = np.fft.fft(blocks, axis=1)
    response = np.fft.ifft(spectrum * _TRANSFER[None, :], axis=1)

    code = np.stack([response.real > 0.0, response.imag > 0.0])
    eroded = valid.copy()
    for s in range(1, MASK_ERODE_COLS + 1):
        eroded &= np.roll(valid, s, axis=1)
        eroded &= np.roll(valid, -s, axis=1)
    mask = np.stack([eroded, eroded])
    enrolled = bool(mask.mean() >= enroll_min_valid)
    return IrisTemplate(code=code, mask=mask, enrolled=enrolled)


def build_template(
    img: np.ndarray, geom: IrisGeometry, enroll_min_valid: float = DEFAULT_ENROLL_MIN_VALID
) -> IrisTemplate:
    return encode(normalize(img, geom), enroll_min_valid=enroll_min_valid)


def hd_at_shift(a: IrisTemplate, b: IrisTemplate, shift: int):
    """Masked fractional Hamming distance at one angular shift, or None if the
    common mask is too small."""
    bcode = np.roll(b.code, shift, axis=2)
    bmask = np.roll(b.mask, shift, axis=2)
    common = a.mask & bmask
    n = int(common.sum())
    if n < MIN_OVERLAP_BITS:
        return None
    disagree = int(((a.code ^ bcode) & common).sum())
    return disagree / n


def match(
    a: IrisTemplate,
    b: IrisTemplate,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    max_shift: int = DEFAULT_MAX_SHIFT,
) -> MatchResult:
    """Best (lowest) masked Hamming distance over angular shifts.

    Both templates must be enrolled.  Shifts whose common mask has fewer than
    MIN_OVERLAP_BITS bits are skipped; if every shift is skipped the pair is
    incomparable and InsufficientOverlapError is raised.
    """
    if not a.enrolled or not b.enrolled:
        raise NotEnrolledError("both templates must be enrolled to match")
    best_hd = None
    best_shift = 0
    for s in range(-max_shift, max_shift + 1):
        hd = hd_at_shift(a, b, s)
        if hd is None:
            continue
        if best_hd is None or hd < best_hd:
            best_hd = hd
            best_shift = s
    if best_hd is None:
        raise InsufficientOverlapError(
            f"fewer than {MIN_OVERLAP_BITS} common mask bits at every shift"
        )
    return MatchResult(hd=best_hd, best_shift=best_shift, is_match=best_hd < threshold)


def _signed_flat(templates: list[IrisTemplate]):
    """(code as +-1 where masked, else 0) and (mask as 0/1), float32, flattened.

    Float32 dot products of these vectors are exact: every partial sum is an
    integer bounded by the code length, far below 2**24.
    """
    n = len(templates)
    signed = np.empty((n, CODE_BITS), dtype=np.float32)
    masks = np.empty((n, CODE_BITS), dtype=np.float32)
    for i, t in enumerate(templates):
        m = t.mask.reshape(-1)
        signed[i] = np.where(m, np.where(t.code.reshape(-1), 1.0, -1.0), 0.0)
        masks[i] = m
    return signed, masks


def match_many(
    probes: list[IrisTemplate],
    gallery: list[IrisTemplate],
    max_shift: int = DEFAULT_MAX_SHIFT,
):
    """All probes against all gallery templates, vectorized.

    Returns (hd, shift) arrays of shape (n_probes, n_gallery); pairs with no
    shift reaching MIN_OVERLAP_BITS hold NaN.  Semantics per pair are exactly
    those of `match` (first strictly-better shift wins).
    """
    if not probes or not gallery:
        return (
            np.full((len(probes), len(gallery)), np.nan),
            np.zeros((len(probes), len(gallery)), dtype=np.int64),
        )
    a_signed, a_mask = _signed_flat(probes)
    g_codes = np.stack([g.code for g in gallery])  # (n_g, 2, 32, 256)
    g_masks = np.stack([g.mask for g in gallery])
    n_g = len(gallery)

    hd = np.full((len(probes), n_g), np.inf)
    shift = np.zeros(hd.shape, dtype=np.int64)
    for s in range(-max_shift, max_shift + 1):
        mask_s = np.roll(g_masks, s, axis=3).reshape(n_g, CODE_BITS)
        code_s = np.roll(g_codes, s, axis=3).reshape(n_g, CODE_BITS)
        g_signed = np.where(mask_s, np.where(code_s, 1.0, -1.0), 0.0).astype(np.float32)
        g_mask = mask_s.astype(np.float32)
        # Float32 GEMMs of {-1,0,1} vectors stay exact (integer sums < 2**24);
        # divide in float64 to agree bitwise with the scalar path.
        agree_minus_disagree = (a_signed @ g_signed.T).astype(np.float64)
        overlap = (a_mask @ g_mask.T).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            hd_s = (overlap - agree_minus_disagree) / 2.0 / overlap
        hd_s = np.where(overlap >= MIN_OVERLAP_BITS, hd_s, np.inf)
        better = hd_s < hd
        hd = np.where(better, hd_s, hd)
        shift = np.where(better, s, shift)
    return np.where(np.isinf(hd), np.nan, hd), shift


def enroll_and_match_sets(
    probes_manifest,
    gallery_manifest,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    max_shift: int = DEFAULT_MAX_SHIFT,
    enroll_min_valid: float = DEFAULT_ENROLL_MIN_VALID,
) -> list[ProbeMatchOutcome]:
    """Enroll both manifests and report each probe's best gallery match.

    Probes (or gallery entries) that fail enrollment are flagged / skipped;
    outcomes are returned in probe manifest order.
    """
    probe_records = imageio.read_manifest(probes_manifest)
    gallery_records = imageio.read_manifest(gallery_manifest)
    probe_templates = templates_for_records(probes_manifest, probe_records, enroll_min_valid)
    gallery_templates = templates_for_records(gallery_manifest, gallery_records, enroll_min_valid)
    return match_outcomes(
        probe_records,
        probe_templates,
        gallery_records,
        gallery_templates,
        threshold=threshold,
        max_shift=max_shift,
    )


def templates_for_records(
    manifest_path, records: list[SampleRecord], enroll_min_valid: float = DEFAULT_ENROLL_MIN_VALID
) -> list[IrisTemplate]:
    templates = []
    for rec in records:
        if rec.geometry is None:
            raise UnsupportedEncodingError(f"record {rec.id} has no geometry")
        img = imageio.load_image(imageio.resolve_path(manifest_path, rec))
        templates.append(build_template(img, rec.geometry, enroll_min_valid=enroll_min_valid))
    return templates


def match_outcomes(
    probe_records,
    probe_templates,
    gallery_records,
    gallery_templates,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    max_shift: int = DEFAULT_MAX_SHIFT,
) -> list[ProbeMatchOutcome]:
    """Pair each enrolled probe with its lowest-hd enrolled gallery entry."""
    enrolled_idx = [i for i, t in enumerate(gallery_templates) if t.enrolled]
    usable_gallery = [gallery_templates[i] for i in enrolled_idx]

    outcomes = []
    enrolled_probes = [(i, t) for i, t in enumerate(probe_templates) if t.enrolled]
    hd = shift = None
    if enrolled_probes and usable_gallery:
        hd, shift = match_many([t for _, t in enrolled_probes], usable_gallery, max_shift)

    by_probe = {}
    for row, (i, _) in enumerate(enrolled_probes):
        by_probe[i] = row

    for i, rec in enumerate(probe_records):
        if not probe_templates[i].enrolled:
            outcomes.append(ProbeMatchOutcome(probe_id=rec.id, enrolled=False))
            continue
        outcome = ProbeMatchOutcome(probe_id=rec.id, enrolled=True)
        if usable_gallery:
            row = by_probe[i]
            row_hd = hd[row]
            if not np.all(np.isnan(row_hd)):
                g = int(np.nanargmin(row_hd))
                best = float(row_hd[g])
                outcome.result = MatchResult(
                    hd=best, best_shift=int(shift[row, g]), is_match=best < threshold
                )
                outcome.best_gallery_id = gallery_records[enrolled_idx[g]].id
        outcomes.append(outcome)
    return outcomes


def write_template(template: IrisTemplate, path) -> None:
    """Serialize a template: magic, bit length, enrolled flag, then code and
    mask bits packed little-endian."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    code_bytes = np.packbits(template.code.reshape(-1), bitorder="little").tobytes()
    mask_bytes = np.packbits(template.mask.reshape(-1), bitorder="little").tobytes()
    with open(p, "wb") as fh:
        fh.write(TEMPLATE_MAGIC)
        fh.write(np.uint32(CODE_BITS).tobytes())
        fh.write(bytes([1 if template.enrolled else 0]))
        fh.write(code_bytes)
        fh.write(mask_bytes)


def read_template(path) -> IrisTemplate:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(TEMPLATE_MAGIC)] != TEMPLATE_MAGIC:
        raise UnsupportedEncodingError(f"{path}: not an iris template file")
    offset = len(TEMPLATE_MAGIC)
    (length,) = np.frombuffer(blob, dtype=np.uint32, count=1, offset=offset)
    if int(length) != CODE_BITS:
        raise UnsupportedEncodingError(f"{path}: unexpected code length {int(length)}")
    offset += 4
    enrolled = bool(blob[offset])
    offset += 1
    n_bytes = CODE_BITS // 8
    code = np.unpackbits(
        np.frombuffer(blob, dtype=np.uint8, count=n_bytes, offset=offset), bitorder="little"
    ).astype(bool)
    offset += n_bytes
    mask = np.unpackbits(
        np.frombuffer(blob, dtype=np.uint8, count=n_bytes, offset=offset), bitorder="little"
    ).astype(bool)
    shape = (2, CODE_ROWS, CODE_COLS)
    return IrisTemplate(code=code.reshape(shape), mask=mask.reshape(shape), enrolled=enrolled)
