"""Seeded procedural iris synthesis, with and without textured contact lenses.

An identity seed fixes a band-limited multi-octave noise field over the
normalized annulus coordinates (radial fraction between pupil and iris
boundary, angle).  An appearance seed fixes everything else: pupil/iris radii,
illumination, specular highlights, blur and sensor noise.  Two images sharing
an identity therefore unwrap to nearly the same annulus texture even when
their geometry differs, which is what lets a downstream matcher recognize
them as the same eye.

Textured-contact-lens images composite an opaque, brand-specific pattern
layer over the annulus; each of the seven brands uses a distinct parametric
pattern family with seeded per-sample variation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .errors import InvariantViolationError
from .imageio import Circle, IrisGeometry, SampleRecord
from .seeds import TAG_APPEARANCE, TAG_BATCH, TAG_IDENTITY, TAG_TCL, rng_from

NATIVE_SIDE = 512


class Brand(enum.IntEnum):
    """Contact-lens brands with stable conditioning codes 0..6."""

    BauschLomb = 0
    FreshLook = 1
    CooperVision = 2
    CibaVision = 3
    UnitedContactLens = 4
    JohnsonJohnson = 5
    ClearLab = 6


assert tuple(b.name for b in Brand) == imageio.BRAND_NAMES


@dataclass(frozen=True)
class AppearanceJitter:
    """Per-sample appearance variation ranges (all nonnegative / well-ordered)."""

    brightness: tuple[float, float] = (0.88, 1.12)
    contrast: tuple[float, float] = (0.94, 1.06)
    blur_max: float = 0.9
    noise_max: float = 3.0

    def __post_init__(self):
        for lo, hi in (self.brightness, self.contrast):
            if not (0 < lo <= hi):
                raise InvariantViolationError("jitter factor ranges must be 0 < lo <= hi")
        if self.blur_max < 0 or self.noise_max < 0:
            raise InvariantViolationError("blur/noise jitter must be nonnegative")


@dataclass
class SynthesisConfig:
    """One batch of synthetic samples; all randomness derives from `seed`."""

    count: int
    seed: int
    mode: str  # "noTCL" or "TCL"
    brand_mix: dict[Brand, int] | None = None
    gallery_reuse_prob: float = 0.0
    gallery: list[int] | None = None
    jitter: AppearanceJitter = field(default_factory=AppearanceJitter)
    id_prefix: str | None = None

    def validate(self):
        if self.count <= 0:
            raise InvariantViolationError("count must be positive")
        if self.mode not in ("noTCL", "TCL"):
            raise InvariantViolationError(f"unknown mode {self.mode!r}")
        if (self.mode == "TCL") != (self.brand_mix is not None):
            raise InvariantViolationError("brand_mix must be present exactly for TCL mode")
        if self.brand_mix is not None:
            if any(n < 0 for n in self.brand_mix.values()):
                raise InvariantViolationError("brand_mix counts must be nonnegative")
            if sum(self.brand_mix.values()) != self.count:
                raise InvariantViolationError("brand_mix must sum to count")
        if not (0.0 <= self.gallery_reuse_prob <= 1.0):
            raise InvariantViolationError("gallery_reuse_prob must be in [0, 1]")
        if self.gallery_reuse_prob > 0 and not self.gallery:
            raise InvariantViolationError("gallery_reuse_prob > 0 requires a gallery")


# Identity texture: (radial lattice nodes, angular lattice nodes, weight).
# Angular node counts set the cycles-per-revolution content; the 16..128 range
# covers the wavelengths the iris-code filter responds to.
_OCTAVES = ((3, 8, 1.0), (4, 16, 0.9), (6, 32, 0.7), (10, 64, 0.5), (16, 128, 0.35))

_GRID = None  # cached (ys, xs) for the native frame

_RASTER_ROWS = 64
_RASTER_COLS = 512


def _native_grid():
    global _GRID
    if _GRID is None:
        _GRID = np.mgrid[0:NATIVE_SIDE, 0:NATIVE_SIDE].astype(np.float32)
    return _GRID


def identity_texture(identity: int, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Multi-octave annulus noise in roughly [-1, 1], keyed solely by identity.

    `t` is the radial fraction in [0, 1] between pupil and iris boundary,
    `theta` the angle; the field is periodic in theta.
    """
    t = np.asarray(t, dtype=np.float32)
    total = np.zeros_like(t)
    norm = 0.0
    frac = (np.mod(theta, 2.0 * math.pi) / (2.0 * math.pi)).astype(np.float32)
    for idx, (rn, an, w) in enumerate(_OCTAVES):
        lattice = (
            rng_from(TAG_IDENTITY, identity, idx)
            .uniform(-1.0, 1.0, size=(rn + 1, an))
            .astype(np.float32)
        )
        u = np.clip(t, 0.0, 1.0) * np.float32(rn)
        i0 = np.minimum(u.astype(np.int32), rn - 1)
        fu = u - i0
        v = frac * np.float32(an)
        j0 = np.minimum(v.astype(np.int32), an - 1)
        fv = v - j0
        j1 = (j0 + 1) % an
        v00 = lattice[i0, j0]
        v01 = lattice[i0, j1]
        v10 = lattice[i0 + 1, j0]
        v11 = lattice[i0 + 1, j1]
        total += np.float32(w) * (
            (v00 * (1 - fu) + v10 * fu) * (1 - fv) + (v01 * (1 - fu) + v11 * fu) * fv
        )
        norm += w
    return total / np.float32(norm)


def _texture_raster(identity: int) -> np.ndarray:
    """Identity texture sampled on the 64x512 polar raster used for rendering.

    Separable bilinear upsampling of each octave lattice; equals
    `identity_texture` evaluated at the raster nodes (up to float32 rounding).
    """
    rows, cols = _RASTER_ROWS, _RASTER_COLS
    t = ((np.arange(rows, dtype=np.float32) + 0.5) / rows)
    frac = np.arange(cols, dtype=np.float32) / cols
    total = np.zeros((rows, cols), dtype=np.float32)
    norm = 0.0
    for idx, (rn, an, w) in enumerate(_OCTAVES):
        lattice = (
            rng_from(TAG_IDENTITY, identity, idx)
            .uniform(-1.0, 1.0, size=(rn + 1, an))
            .astype(np.float32)
        )
        u = t * rn
        i0 = np.minimum(u.astype(np.int32), rn - 1)
        fu = (u - i0)[:, None]
        by_row = lattice[i0] * (1 - fu) + lattice[i0 + 1] * fu  # (rows, an)
        v = frac * an
        j0 = np.minimum(v.astype(np.int32), an - 1)
        fv = v - j0
        total += np.float32(w) * (by_row[:, j0] * (1 - fv) + by_row[:, (j0 + 1) % an] * fv)
        norm += w
    return total / np.float32(norm)


def _sample_raster(raster: np.ndarray, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Bilinear lookup in a polar raster, periodic in theta."""
    rows, cols = raster.shape
    flat = raster.reshape(-1)
    u = np.clip(t * rows - 0.5, 0.0, rows - 1.0)
    i0 = np.minimum(u.astype(np.int32), rows - 2)
    fu = u - i0
    v = np.mod(theta, np.float32(2.0 * math.pi)) * np.float32(cols / (2.0 * math.pi))
    j0 = np.minimum(v.astype(np.int32), cols - 1)
    fv = v - j0
    j1 = (j0 + 1) % cols
    base = i0 * cols
    top = np.take(flat, base + j0) * (1 - fv) + np.take(flat, base + j1) * fv
    bot = np.take(flat, base + cols + j0) * (1 - fv) + np.take(flat, base + cols + j1) * fv
    return top * (1 - fu) + bot * fu


def _lens_pattern(brand: Brand, t, theta, prng):
    """Opaque lens print for one sample: (boolean mask, intensity values).

    Each brand is a distinct parametric family; per-sample variation comes
    from `prng`.  Coverage is drawn in [0.45, 0.75] of the annulus and hit
    exactly by thresholding the pattern field at the matching quantile.
    """
    coverage = prng.uniform(0.45, 0.75)
    tone_dark = prng.uniform(55.0, 85.0)
    tone_light = prng.uniform(150.0, 195.0)
    two_pi = 2.0 * math.pi

    if brand == Brand.BauschLomb:  # coarse polar dot lattice
        nr = 4.0 + prng.uniform(-0.3, 0.3)
        na = int(prng.integers(18, 23))
        field_ = np.cos(two_pi * nr * t + prng.uniform(0, two_pi)) + np.cos(
            na * theta + prng.uniform(0, two_pi)
        )
        mix = np.full_like(t, 0.75)
        n2, grain = int(prng.integers(6, 9)), 1.5
    elif brand == Brand.FreshLook:  # many thin spokes, denser near the pupil
        na = int(prng.integers(34, 40))
        field_ = np.cos(na * theta + prng.uniform(0, two_pi)) - 1.1 * (t - 0.45)
        mix = 1.0 - 0.75 * t
        n2, grain = int(prng.integers(13, 16)), 2.0
    elif brand == Brand.CooperVision:  # straight concentric rings, smooth print
        nr = 6.0 + prng.uniform(-0.4, 0.4)
        phase = prng.uniform(0, two_pi)
        field_ = np.cos(two_pi * nr * t + phase)
        mix = 0.5 * (1.0 + np.cos(two_pi * nr * t + phase))
        n2, grain = int(prng.integers(48, 51)), 1.0
    elif brand == Brand.CibaVision:  # fine checkered wedges, heavy speckle
        nr = 3.5 + prng.uniform(-0.25, 0.25)
        na = int(prng.integers(16, 21))
        field_ = np.cos(two_pi * nr * t + prng.uniform(0, two_pi)) * np.cos(
            na * theta + prng.uniform(0, two_pi)
        )
        mix = np.full_like(t, 0.45)
        n2, grain = int(prng.integers(27, 30)), 12.0
    elif brand == Brand.UnitedContactLens:  # diagonal spiral bands
        na = int(prng.integers(7, 10))
        ns = 2.5 + prng.uniform(-0.3, 0.3)
        field_ = np.cos(na * theta + two_pi * ns * t + prng.uniform(0, two_pi))
        mix = 0.5 * (1.0 + np.cos(two_pi * 1.5 * t + prng.uniform(0, two_pi)))
        n2, grain = int(prng.integers(20, 23)), 6.0
    elif brand == Brand.JohnsonJohnson:  # fat starburst wedges, outer zone only
        na = int(prng.integers(13, 17))
        field_ = np.cos(na * theta + prng.uniform(0, two_pi)) - 2.2 * (0.85 - t)
        mix = 0.35 + 0.6 * t
        n2, grain = int(prng.integers(9, 12)), 3.0
    else:  # ClearLab: strongly wavy rings
        nr = 4.3 + prng.uniform(-0.2, 0.2)
        m = int(prng.integers(4, 7))
        field_ = np.cos(
            two_pi * nr * t + 2.2 * np.sin(m * theta + prng.uniform(0, two_pi)) + prng.uniform(0, two_pi)
        )
        mix = np.full_like(t, 0.6)
        n2, grain = int(prng.integers(38, 41)), 7.0

    threshold = np.quantile(field_, 1.0 - coverage)
    mask = field_ > threshold
    # Print pixels take one of two tones; the light-tone duty cycle follows the
    # brand's radial mix profile, so the ring-averaged intensity keeps the
    # brand signature while every covered pixel stays far from iris mid-tones.
    # Stripe frequency (n2) and print-noise grain are brand-keyed so brands
    # differ in micro-texture, not just in layout.
    sweep = np.mod(n2 * theta + prng.uniform(0, two_pi), two_pi) / two_pi
    values = np.where(sweep < mix, tone_light, tone_dark)
    values = values + prng.normal(0.0, grain, size=t.shape)
    return mask, values


def _render(identity: int, appearance_seed: int, jitter: AppearanceJitter, brand: Brand | None):
    rng = rng_from(TAG_APPEARANCE, appearance_seed)

    iris_r = rng.uniform(150.0, 185.0)
    pupil_r = iris_r * rng.uniform(0.28, 0.42)
    cx = 255.5 + rng.uniform(-5.0, 5.0)
    cy = 255.5 + rng.uniform(-5.0, 5.0)
    sclera_base = rng.uniform(172.0, 200.0)
    iris_base = rng.uniform(95.0, 120.0)
    iris_amp = rng.uniform(30.0, 42.0)
    pupil_base = rng.uniform(22.0, 34.0)

    n_spec = int(rng.integers(1, 4))
    spec_angle = rng.uniform(0.0, 2.0 * math.pi, size=n_spec)
    spec_rfrac = rng.uniform(0.0, 0.9, size=n_spec)
    spec_rad = rng.uniform(2.5, 5.5, size=n_spec)

    brightness = rng.uniform(*jitter.brightness)
    contrast = rng.uniform(*jitter.contrast)
    blur_sigma = rng.uniform(0.0, jitter.blur_max)
    noise_sigma = rng.uniform(0.0, jitter.noise_max)

    ys, xs = _native_grid()
    dx = xs - np.float32(cx)
    dy = ys - np.float32(cy)
    dist = np.sqrt(dx * dx + dy * dy)

    out = (
        np.float32(sclera_base)
        - np.float32(0.03) * np.maximum(dist - np.float32(iris_r), np.float32(0.0))
        - np.float32(14.0) * (ys / np.float32(NATIVE_SIDE) - np.float32(0.5))
    )

    ring = (dist > pupil_r) & (dist <= iris_r)
    t = ((dist[ring] - pupil_r) / (iris_r - pupil_r)).astype(np.float32)
    theta = np.arctan2(dy[ring], dx[ring]).astype(np.float32)
    texture = _sample_raster(_texture_raster(identity), t, theta)
    iris_vals = np.float32(iris_base) + np.float32(iris_amp) * texture - np.float32(18.0) * t
    if brand is not None:
        prng = rng_from(TAG_TCL, int(brand), identity, appearance_seed)
        lens_mask, lens_vals = _lens_pattern(brand, t, theta, prng)
        iris_vals = np.where(lens_mask, lens_vals.astype(np.float32), iris_vals)
    out[ring] = iris_vals

    pupil = dist <= pupil_r
    out[pupil] = pupil_base + rng.normal(0.0, 2.0, size=int(pupil.sum()))

    if blur_sigma > 0.0:
        out = imageio.gaussian_blur(out, blur_sigma).astype(np.float32)
    out = (out - np.float32(128.0)) * np.float32(contrast) + np.float32(128.0)
    out *= np.float32(brightness)
    if noise_sigma > 0.0:
        out += np.float32(noise_sigma) * rng.standard_normal(out.shape, dtype=np.float32)
    out = np.clip(out, 2.0, 247.0)

    for a, rf, sr in zip(spec_angle, spec_rfrac, spec_rad):
        sx = cx + rf * iris_r * math.cos(a)
        sy = cy + rf * iris_r * math.sin(a)
        x0, x1 = int(sx - sr - 1), int(sx + sr + 2)
        y0, y1 = int(sy - sr - 1), int(sy + sr + 2)
        x0, y0 = max(0, x0), max(0, y0)
        patch_y, patch_x = np.mgrid[y0:y1, x0:x1]
        spot = (patch_x - sx) ** 2 + (patch_y - sy) ** 2 <= sr * sr
        out[y0:y1, x0:x1][spot] = 255.0

    geom = IrisGeometry(pupil=Circle(cx, cy, pupil_r), iris=Circle(cx, cy, iris_r))
    return imageio.to_uint8(out), geom


def synthesize_notcl(identity: int, appearance_seed: int, jitter: AppearanceJitter | None = None):
    """Synthesize a 512x512 iris image without a contact lens.

    Deterministic for fixed (identity, appearance_seed, jitter); the returned
    geometry is the generator's exact pupil/iris circles.
    """
    return _render(identity, appearance_seed, jitter or AppearanceJitter(), brand=None)


def synthesize_tcl(
    brand: Brand, identity: int, appearance_seed: int, jitter: AppearanceJitter | None = None
):
    """Synthesize a 512x512 iris image wearing a textured contact lens."""
    return _render(identity, appearance_seed, jitter or AppearanceJitter(), brand=Brand(brand))


def _brand_sequence(brand_mix: dict[Brand, int]) -> list[Brand]:
    seq = []
    for brand in sorted(brand_mix, key=int):
        seq.extend([brand] * brand_mix[brand])
    return seq


def generate_batch(cfg: SynthesisConfig, out_dir, full_frame: bool = False) -> list[SampleRecord]:
    """Write `cfg.count` PNGs plus a manifest under `out_dir`.

    With probability `gallery_reuse_prob` a sample's identity seed is drawn
    uniformly from `cfg.gallery` (a planted identity leak); otherwise it is
    fresh.  `identity_tag` records the seed for audit.  Output is
    byte-identical for identical configs.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    prefix = cfg.id_prefix if cfg.id_prefix is not None else cfg.mode.lower()
    brands = _brand_sequence(cfg.brand_mix) if cfg.mode == "TCL" else None

    records = []
    for i in range(cfg.count):
        rng = rng_from(TAG_BATCH, cfg.seed, i)
        reuse = cfg.gallery and rng.random() < cfg.gallery_reuse_prob
        if reuse:
            identity = int(cfg.gallery[int(rng.integers(0, len(cfg.gallery)))])
        else:
            identity = int(rng.integers(0, 2**63))
        appearance_seed = int(rng.integers(0, 2**63))

        if brands is None:
            img, geom = synthesize_notcl(identity, appearance_seed, cfg.jitter)
            label, brand_name = "BF", None
        else:
            brand = brands[i]
            img, geom = synthesize_tcl(brand, identity, appearance_seed, cfg.jitter)
            label, brand_name = "PA", brand.name
        if full_frame:
            img, geom = imageio.to_full_frame(img, geom)

        sid = f"{prefix}_{i:06d}"
        rel = f"images/{sid}.png"
        imageio.save_image(img, out / rel)
        records.append(
            SampleRecord(
                id=sid,
                path=rel,
                label=label,
                source="synthetic",
                brand=brand_name,
                identity_tag=str(identity),
                geometry=geom,
            )
        )

    imageio.write_manifest(records, out / "manifest.jsonl")
    return records


def fresh_identities(seed: int, count: int) -> list[int]:
    """Deterministic list of distinct identity seeds (e.g. a synthetic gallery)."""
    rng = rng_from(TAG_BATCH, seed, 0xA11E)
    vals = set()
    while len(vals) < count:
        vals.add(int(rng.integers(0, 2**63)))
    return sorted(vals)
