"""Image representation, manifest I/O, geometric preprocessing, and image quality.

Images are 2-D numpy uint8 arrays (shape ``(height, width)``, row-major).
Pixel centers sit on integer coordinates: x grows rightward, y downward, and
the true center of a W-pixel axis is ``(W - 1) / 2``.  Circle parameters are
real-valued (sub-pixel).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DegenerateGeometryError,
    InvariantViolationError,
    ManifestFormatError,
    UnsupportedEncodingError,
)

FULL_FRAME_SIZE = (640, 480)   # (width, height) of a full sensor frame
NATIVE_SIZE = (512, 512)       # generator-native output
PAD_INPUT_SIDE = 256           # classifier input side

CROP_MARGIN = 1.1              # crop square half-side = iris radius * margin

LABELS = ("BF", "PA")
SOURCES = ("synthetic", "authentic-analog")

BRAND_NAMES = (
    "BauschLomb",
    "FreshLook",
    "CooperVision",
    "CibaVision",
    "UnitedContactLens",
    "JohnsonJohnson",
    "ClearLab",
)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not (self.r > 0) or not all(map(math.isfinite, (self.cx, self.cy, self.r))):
            raise DegenerateGeometryError(f"bad circle ({self.cx}, {self.cy}, r={self.r})")


@dataclass(frozen=True)
class IrisGeometry:
    pupil: Circle
    iris: Circle

    def __post_init__(self):
        if self.pupil.r >= self.iris.r:
            raise DegenerateGeometryError(
                f"pupil radius {self.pupil.r} must be smaller than iris radius {self.iris.r}"
            )
        d = math.hypot(self.pupil.cx - self.iris.cx, self.pupil.cy - self.iris.cy)
        if d >= self.iris.r:
            raise DegenerateGeometryError("pupil center lies outside the iris circle")


@dataclass
class SampleRecord:
    """One manifest row: an image on disk plus its labels and geometry."""

    id: str
    path: str
    label: str
    source: str
    brand: str | None = None
    identity_tag: str | None = None
    geometry: IrisGeometry | None = None

    def validate(self):
        if not self.id:
            raise InvariantViolationError("record id must be nonempty")
        if self.label not in LABELS:
            raise InvariantViolationError(f"record {self.id}: label {self.label!r} not in {LABELS}")
        if self.source not in SOURCES:
            raise InvariantViolationError(
                f"record {self.id}: source {self.source!r} not in {SOURCES}"
            )
        if (self.label == "PA") != (self.brand is not None):
            raise InvariantViolationError(
                f"record {self.id}: brand must be present exactly for PA labels"
            )
        if self.brand is not None and self.brand not in BRAND_NAMES:
            raise InvariantViolationError(f"record {self.id}: unknown brand {self.brand!r}")


def ensure_gray(img: np.ndarray) -> np.ndarray:
    """Validate the in-memory image contract (2-D uint8, nonempty)."""
    if not isinstance(img, np.ndarray) or img.ndim != 2 or img.dtype != np.uint8:
        raise UnsupportedEncodingError("expected a 2-D uint8 array")
    if img.size == 0:
        raise UnsupportedEncodingError("empty image")
    return img


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG; reject color, palette, and 16-bit files."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such image: {p}")
    with Image.open(p) as im:
        if im.format != "PNG":
            raise UnsupportedEncodingError(f"{p}: expected PNG, got {im.format}")
        if im.mode != "L":
            raise UnsupportedEncodingError(f"{p}: expected 8-bit grayscale, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write a 2-D uint8 array as an 8-bit grayscale PNG.

    A fixed low compression level keeps encoding fast and output bytes
    deterministic for identical pixels.
    """
    ensure_gray(img)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="L").save(p, format="PNG", compress_level=1)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float = 0.0):
    """Sample image intensities at real coordinates; out-of-frame reads `fill`.

    Returns float64 values of the same shape as `xs`/`ys`.
    """
    h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    if (
        x0.size
        and x0.min() >= 0
        and y0.min() >= 0
        and x0.max() < w - 1
        and y0.max() < h - 1
    ):
        flat = img.ravel()
        base = y0 * w + x0
        v00 = np.take(flat, base)
        v01 = np.take(flat, base + 1)
        v10 = np.take(flat, base + w)
        v11 = np.take(flat, base + w + 1)
    else:
        def grab(yy, xx):
            inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            vals = np.full(xx.shape, float(fill))
            vals[inside] = img[yy[inside], xx[inside]]
            return vals

        v00 = grab(y0, x0)
        v01 = grab(y0, x0 + 1)
        v10 = grab(y0 + 1, x0)
        v11 = grab(y0 + 1, x0 + 1)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding.

    Returns floats; float32 input stays float32, anything else becomes float64.
    """
    dtype = np.float32 if img.dtype == np.float32 else np.float64
    out = np.ascontiguousarray(img, dtype=dtype)
    if sigma <= 0:
        return out
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=dtype)
    kernel = np.exp(-0.5 * (t / dtype(sigma)) ** 2)
    kernel /= kernel.sum()

    tmp = np.empty_like(out)
    for axis in (0, 1):
        moved = np.moveaxis(out, axis, 0)
        padded = np.pad(moved, ((radius, radius), (0, 0)), mode="reflect")
        acc = kernel[0] * padded[: moved.shape[0]]
        view = np.moveaxis(tmp, axis, 0)
        for k in range(1, kernel.size):
            np.multiply(padded[k : k + moved.shape[0]], kernel[k], out=view)
            acc += view
        out = np.moveaxis(acc, 0, axis)
    return np.ascontiguousarray(out)


def to_uint8(vals: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(vals, 0.0, 255.0)).astype(np.uint8)


def center_crop_resize(img: np.ndarray, geom: IrisGeometry, out_side: int) -> np.ndarray:
    """Crop the square of side ``2 * iris.r * CROP_MARGIN`` centered on the iris
    and resample it to ``out_side`` x ``out_side`` (bilinear, zero fill outside
    the frame).
    """
    ensure_gray(img)
    if out_side <= 0:
        raise ValueError("out_side must be positive")
    side = 2.0 * geom.iris.r * CROP_MARGIN
    scale = side / out_side
    u = np.arange(out_side, dtype=np.float64)
    xs = (geom.iris.cx - side / 2.0 + 0.5) + (u + 0.5) * scale - 0.5
    ys = (geom.iris.cy - side / 2.0 + 0.5) + (u + 0.5) * scale - 0.5
    xg, yg = np.meshgrid(xs, ys)
    return to_uint8(bilinear_sample(img, xg, yg, fill=0.0))


def cropped_geometry(geom: IrisGeometry, out_side: int) -> IrisGeometry:
    """Geometry of the iris inside a center_crop_resize output."""
    side = 2.0 * geom.iris.r * CROP_MARGIN
    scale = out_side / side
    c = (out_side - 1) / 2.0
    pupil = Circle(
        c + (geom.pupil.cx - geom.iris.cx) * scale,
        c + (geom.pupil.cy - geom.iris.cy) * scale,
        geom.pupil.r * scale,
    )
    return IrisGeometry(pupil=pupil, iris=Circle(c, c, geom.iris.r * scale))


def to_full_frame(img: np.ndarray, geom: IrisGeometry):
    """Embed a 512x512 generator frame into a 640x480 sensor-style frame.

    Width is padded with replicated edge columns, height is center-cropped;
    circle geometry stays exact (no anisotropic rescale).
    """
    ensure_gray(img)
    h, w = img.shape
    fw, fh = FULL_FRAME_SIZE
    if (w, h) != NATIVE_SIZE:
        raise ValueError(f"expected {NATIVE_SIZE} input, got {(w, h)}")
    crop_top = (h - fh) // 2
    pad_left = (fw - w) // 2
    cropped = img[crop_top : crop_top + fh, :]
    framed = np.pad(cropped, ((0, 0), (pad_left, fw - w - pad_left)), mode="edge")
    shifted = IrisGeometry(
        pupil=Circle(geom.pupil.cx + pad_left, geom.pupil.cy - crop_top, geom.pupil.r),
        iris=Circle(geom.iris.cx + pad_left, geom.iris.cy - crop_top, geom.iris.r),
    )
    return framed, shifted


def annulus_mask(shape, geom: IrisGeometry) -> np.ndarray:
    """Boolean mask of pixels inside the iris ring (outside the pupil)."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    d_iris = np.hypot(xs - geom.iris.cx, ys - geom.iris.cy)
    d_pupil = np.hypot(xs - geom.pupil.cx, ys - geom.pupil.cy)
    return (d_iris <= geom.iris.r) & (d_pupil > geom.pupil.r)


_SPECULAR_LEVEL = 250
_TEXTURE_MIN_RANGE = 2
_SHARPNESS_HALF = 1500.0  # Tenengrad value mapped to sharpness 0.5
_QUALITY_WEIGHTS = (0.4, 0.3, 0.3)


def overall_quality(img: np.ndarray, geom: IrisGeometry) -> float:
    """Overall quality score in [0, 100]; higher is better.

    Weighted sum of three components over the iris annulus, each in [0, 1]:
    Tenengrad sharpness, inter-quartile intensity spread, and the fraction of
    the annulus that is usable (not specular-bright and carrying measurable
    local texture).
    """
    ensure_gray(img)
    h, w = img.shape
    # Work inside the annulus bounding box (1 px border reserved for the
    # 3x3 neighborhoods).
    x0 = max(1, int(math.floor(geom.iris.cx - geom.iris.r)) - 1)
    x1 = min(w - 1, int(math.ceil(geom.iris.cx + geom.iris.r)) + 2)
    y0 = max(1, int(math.floor(geom.iris.cy - geom.iris.r)) - 1)
    y1 = min(h - 1, int(math.ceil(geom.iris.cy + geom.iris.r)) + 2)
    if x0 >= x1 or y0 >= y1:
        raise DegenerateGeometryError("iris annulus does not intersect the frame")
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d_iris = np.hypot(xs - geom.iris.cx, ys - geom.iris.cy)
    d_pupil = np.hypot(xs - geom.pupil.cx, ys - geom.pupil.cy)
    ring = (d_iris <= geom.iris.r) & (d_pupil > geom.pupil.r)
    if not ring.any():
        raise DegenerateGeometryError("iris annulus does not intersect the frame")

    f = img[y0 - 1 : y1 + 1, x0 - 1 : x1 + 1].astype(np.float32)
    box = img[y0:y1, x0:x1]
    gx = (
        (f[:-2, 2:] + 2.0 * f[1:-1, 2:] + f[2:, 2:])
        - (f[:-2, :-2] + 2.0 * f[1:-1, :-2] + f[2:, :-2])
    )
    gy = (
        (f[2:, :-2] + 2.0 * f[2:, 1:-1] + f[2:, 2:])
        - (f[:-2, :-2] + 2.0 * f[:-2, 1:-1] + f[:-2, 2:])
    )
    tenengrad = float((gx * gx + gy * gy)[ring].mean())
    sharpness = tenengrad / (tenengrad + _SHARPNESS_HALF)

    q25, q75 = np.percentile(box[ring], [25.0, 75.0])
    contrast = min(1.0, float(q75 - q25) / 128.0)

    # Local 3x3 intensity range; flat (textureless) pixels are not usable iris.
    local_min = f[1:-1, 1:-1].copy()
    local_max = local_min.copy()
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dy == 1 and dx == 1:
                continue
            view = f[dy : dy + local_min.shape[0], dx : dx + local_min.shape[1]]
            np.minimum(local_min, view, out=local_min)
            np.maximum(local_max, view, out=local_max)
    textured = (local_max - local_min) >= _TEXTURE_MIN_RANGE
    usable = float(((box <= _SPECULAR_LEVEL) & textured)[ring].mean())

    w1, w2, w3 = _QUALITY_WEIGHTS
    return 100.0 * (w1 * sharpness + w2 * contrast + w3 * usable)


def _circle_to_json(c: Circle) -> dict:
    return {"cx": c.cx, "cy": c.cy, "r": c.r}


def _record_to_json(rec: SampleRecord) -> dict:
    geometry = None
    if rec.geometry is not None:
        geometry = {
            "pupil": _circle_to_json(rec.geometry.pupil),
            "iris": _circle_to_json(rec.geometry.iris),
        }
    return {
        "id": rec.id,
        "path": rec.path,
        "label": rec.label,
        "brand": rec.brand,
        "source": rec.source,
        "identity_tag": rec.identity_tag,
        "geometry": geometry,
    }


def _record_from_json(obj: dict) -> SampleRecord:
    geometry = None
    g = obj.get("geometry")
    if g is not None:
        geometry = IrisGeometry(
            pupil=Circle(**{k: float(v) for k, v in g["pupil"].items()}),
            iris=Circle(**{k: float(v) for k, v in g["iris"].items()}),
        )
    rec = SampleRecord(
        id=obj["id"],
        path=obj["path"],
        label=obj["label"],
        source=obj["source"],
        brand=obj.get("brand"),
        identity_tag=obj.get("identity_tag"),
        geometry=geometry,
    )
    rec.validate()
    return rec


def write_manifest(records, path) -> None:
    """Write records as JSON Lines, one object per sample, order preserved."""
    seen = set()
    for rec in records:
        rec.validate()
        if rec.id in seen:
            raise InvariantViolationError(f"duplicate id {rec.id!r} in manifest")
        seen.add(rec.id)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec), separators=(",", ":")) + "\n")


def read_manifest(path) -> list[SampleRecord]:
    """Read a JSON Lines manifest; parse errors report the line number."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestFormatError(str(exc), line_no=line_no) from exc
            try:
                rec = _record_from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestFormatError(f"bad record: {exc}", line_no=line_no) from exc
            if rec.id in seen:
                raise InvariantViolationError(f"duplicate id {rec.id!r} at line {line_no}")
            seen.add(rec.id)
            records.append(rec)
    return records


def resolve_path(manifest_path, rec: SampleRecord) -> Path:
    """Resolve a record's image path relative to its manifest location."""
    p = Path(rec.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
