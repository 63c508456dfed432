"""PAD classifier: training augmentations, LBP texture features, minibatch
SGD training with best-validation-epoch selection, and 0-100 scoring.

The classifier is a linear softmax over uniform LBP(8,1) histograms pooled in
a 4x4 cell grid (59 bins per cell, 944 dimensions).  Scores follow the
"higher = bona fide" convention: 100 means confidently clean, 0 confidently
a textured contact lens, with 50 as the decision threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio, metrics
from .errors import InvariantViolationError, UnsupportedEncodingError
from .seeds import TAG_AUGMENT, TAG_SPLIT, rng_from, seed_from

CLASSES = ("BF", "PA")
PAD_SIDE = 256
LBP_BINS = 59
GRID_CELLS = 4
FEATURE_DIM = LBP_BINS * GRID_CELLS * GRID_CELLS  # 944

MODEL_FORMAT = "padforge-model-v1"


@dataclass(frozen=True)
class AugmentationPolicy:
    """Ranges for the per-sample augmentation draws; zero-width ranges at the
    identity values disable an effect."""

    flip_prob: float = 0.5
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    noise_sigma: tuple[float, float] = (0.0, 8.0)
    blur_sigma: tuple[float, float] = (0.0, 2.0)
    sharpen_amount: tuple[float, float] = (0.0, 0.3)
    brightness: tuple[float, float] = (0.7, 1.3)
    contrast: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.flip_prob <= 1.0):
            raise InvariantViolationError("flip_prob must be in [0, 1]")
        for name in ("rotation_deg", "noise_sigma", "blur_sigma", "sharpen_amount",
                     "brightness", "contrast"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvariantViolationError(f"{name} range must be well-ordered")
        if self.noise_sigma[0] < 0 or self.blur_sigma[0] < 0 or self.sharpen_amount[0] < 0:
            raise InvariantViolationError("noise/blur/sharpen must be nonnegative")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-6
    max_epochs: int = 50
    train_fraction: float = 0.8
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvariantViolationError("batch_size and max_epochs must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise InvariantViolationError("train_fraction must be in (0, 1)")
        if self.lr <= 0:
            raise InvariantViolationError("lr must be positive")


@dataclass
class PadModel:
    """Linear softmax classifier: logits = weights @ features + bias."""

    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray     # (n_classes,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvariantViolationError("weights must be (n_classes, dim) with matching bias")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise InvariantViolationError("model parameters must be finite")

    def to_json(self) -> str:
        payload = {
            "format": MODEL_FORMAT,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "metadata": self.metadata,
        }
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PadModel":
        payload = json.loads(text)
        if payload.get("format") != MODEL_FORMAT:
            raise UnsupportedEncodingError(f"unknown model format {payload.get('format')!r}")
        return cls(
            weights=np.array(payload["weights"], dtype=np.float64),
            bias=np.array(payload["bias"], dtype=np.float64),
            metadata=payload.get("metadata", {}),
        )

    def save(self, path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PadModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


_ROT_GRID: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _centered_grid(shape):
    if shape not in _ROT_GRID:
        h, w = shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
        _ROT_GRID[shape] = (xs - (w - 1) / 2.0, ys - (h - 1) / 2.0)
    return _ROT_GRID[shape]


def _rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center, bilinear, clamp-to-edge."""
    h, w = img.shape
    c_y, c_x = (h - 1) / 2.0, (w - 1) / 2.0
    a = math.radians(angle_deg)
    cos_a, sin_a = np.float32(math.cos(a)), np.float32(math.sin(a))
    du, dv = _centered_grid(img.shape)
    src_x = np.clip(c_x + cos_a * du - sin_a * dv, 0.0, w - 1.0)
    src_y = np.clip(c_y + sin_a * du + cos_a * dv, 0.0, h - 1.0)
    x0 = src_x.astype(np.int32)
    y0 = src_y.astype(np.int32)
    fx = (src_x - x0).ravel()
    fy = (src_y - y0).ravel()
    flat = np.ascontiguousarray(img, dtype=np.float32).ravel()
    base = (y0.ravel() * w + x0.ravel()).astype(np.int64)
    step_x = (x0 < w - 1).ravel()
    step_y = np.where((y0 < h - 1).ravel(), w, 0)
    top = np.take(flat, base) * (1 - fx) + np.take(flat, base + step_x) * fx
    bot = np.take(flat, base + step_y) * (1 - fx) + np.take(flat, base + step_y + step_x) * fx
    return (top * (1 - fy) + bot * fy).reshape(h, w)


def augment(img: np.ndarray, policy: AugmentationPolicy, draw_seed: int) -> np.ndarray:
    """Apply one random draw of the policy; deterministic per (img, policy,
    draw_seed); output has the input's dimensions."""
    imageio.ensure_gray(img)
    rng = rng_from(TAG_AUGMENT, policy.seed, draw_seed)
    flip = rng.random() < policy.flip_prob
    angle = rng.uniform(*policy.rotation_deg)
    noise = rng.uniform(*policy.noise_sigma)
    blur = rng.uniform(*policy.blur_sigma)
    sharpen = rng.uniform(*policy.sharpen_amount)
    brightness = rng.uniform(*policy.brightness)
    contrast = rng.uniform(*policy.contrast)

    out = img.astype(np.float32)
    if flip:
        out = out[:, ::-1]
    if angle != 0.0:
        out = _rotate(out, angle)
    if blur > 0.0:
        out = imageio.gaussian_blur(out, blur)
    if sharpen > 0.0:
        out = out + np.float32(sharpen) * (out - imageio.gaussian_blur(out, 1.0))
    if noise > 0.0:
        out = out + np.float32(noise) * rng.standard_normal(out.shape, dtype=np.float32)
    if brightness != 1.0:
        out = out * np.float32(brightness)
    if contrast != 1.0:
        out = (out - np.float32(128.0)) * np.float32(contrast) + np.float32(128.0)
    return imageio.to_uint8(out)


def _uniform_lut() -> np.ndarray:
    lut = np.full(256, LBP_BINS - 1, dtype=np.uint8)
    uniform_codes = []
    for code in range(256):
        transitions = bin(code ^ ((code >> 1) | ((code & 1) << 7))).count("1")
        if transitions <= 2:
            uniform_codes.append(code)
    for bin_idx, code in enumerate(uniform_codes):
        lut[code] = bin_idx
    return lut


_LUT = _uniform_lut()
UNIFORM_BIN_OF_CODE = _LUT  # 256 -> bin index; non-uniform codes map to bin 58

# Circular neighbor order for LBP(8,1): bit k is neighbor at angle 2*pi*k/8,
# starting east, advancing in +y (screen-down) direction.
_NEIGHBOR_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

_CELL_INDEX = None


def _cell_index():
    global _CELL_INDEX
    if _CELL_INDEX is None:
        side = PAD_SIDE - 2
        ys, xs = np.mgrid[1 : PAD_SIDE - 1, 1 : PAD_SIDE - 1]
        cell = (ys // (PAD_SIDE // GRID_CELLS)) * GRID_CELLS + xs // (PAD_SIDE // GRID_CELLS)
        _CELL_INDEX = cell.reshape(side * side).astype(np.int32)
    return _CELL_INDEX


def lbp_codes(img: np.ndarray) -> np.ndarray:
    """Raw LBP(8,1) codes for interior pixels (border excluded)."""
    center = img[1:-1, 1:-1]
    acc = np.zeros(center.shape, dtype=np.uint8)
    for k, (dy, dx) in enumerate(_NEIGHBOR_OFFSETS):
        neighbor = img[1 + dy : img.shape[0] - 1 + dy, 1 + dx : img.shape[1] - 1 + dx]
        acc |= (neighbor >= center).astype(np.uint8) << k
    return acc


def extract_features(img: np.ndarray) -> np.ndarray:
    """944-dim uniform-LBP histogram feature for a 256x256 image.

    59 bins per 64x64 grid cell, each cell's block L1-normalized to sum 1.
    """
    imageio.ensure_gray(img)
    if img.shape != (PAD_SIDE, PAD_SIDE):
        raise InvariantViolationError(f"expected {PAD_SIDE}x{PAD_SIDE} input, got {img.shape}")
    bins = _LUT[lbp_codes(img)].reshape(-1).astype(np.int32)
    combined = _cell_index() * LBP_BINS + bins
    counts = np.bincount(combined, minlength=FEATURE_DIM).astype(np.float64)
    per_cell = counts.reshape(GRID_CELLS * GRID_CELLS, LBP_BINS)
    per_cell /= per_cell.sum(axis=1, keepdims=True)
    return per_cell.reshape(FEATURE_DIM)


def softmax_loss_and_grad(weights, bias, X, y):
    """Mean softmax cross-entropy and its analytic gradients.

    Returns (loss, grad_weights, grad_bias).  X is (n, dim), y integer class
    indices.
    """
    logits = X @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = X.shape[0]
    loss = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ X, delta.sum(axis=0)


def stratified_split(y: np.ndarray, train_fraction: float, seed: int):
    """Per-class shuffled split; floor(train_fraction * n) per class goes to
    train, the remainder to validation."""
    rng = rng_from(TAG_SPLIT, seed)
    train_idx, val_idx = [], []
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        perm = members[rng.permutation(len(members))]
        n_train = int(math.floor(train_fraction * len(members)))
        train_idx.extend(perm[:n_train])
        val_idx.extend(perm[n_train:])
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(val_idx, dtype=np.int64))


def _fit(batch_provider, X_val, y_val, cfg: TrainConfig, dim: int, n_classes: int):
    """Shared SGD loop. `batch_provider(epoch, rng)` yields (X, y) minibatches.

    Momentum update: g = dL + weight_decay * W (weights only); v = m*v + g;
    W -= lr * v.  Weights from the best-validation epoch are returned
    (earliest epoch wins ties).
    """
    weights = np.zeros((n_classes, dim))
    bias = np.zeros(n_classes)
    v_w = np.zeros_like(weights)
    v_b = np.zeros_like(bias)

    best = {"epoch": 0, "val_acc": -1.0, "weights": weights.copy(), "bias": bias.copy()}
    log = []
    rng = rng_from(TAG_SPLIT, cfg.seed, 0xF17)
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        sizes = []
        for X_batch, y_batch in batch_provider(epoch, rng):
            loss, g_w, g_b = softmax_loss_and_grad(weights, bias, X_batch, y_batch)
            g_w += cfg.weight_decay * weights
            v_w = cfg.momentum * v_w + g_w
            v_b = cfg.momentum * v_b + g_b
            weights -= cfg.lr * v_w
            bias -= cfg.lr * v_b
            losses.append(loss * len(y_batch))
            sizes.append(len(y_batch))
        train_loss = float(np.sum(losses) / np.sum(sizes))
        val_acc = float((np.argmax(X_val @ weights.T + bias, axis=1) == y_val).mean())
        log.append({"epoch": epoch, "train_loss": train_loss, "val_acc": val_acc})
        if val_acc > best["val_acc"]:
            best = {"epoch": epoch, "val_acc": val_acc,
                    "weights": weights.copy(), "bias": bias.copy()}
    return best, log


def train_features(X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> PadModel:
    """Train on fixed feature vectors (no augmentation); used for toy sets and
    pre-extracted features.  Splits X stratified 80/20 internally."""
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise InvariantViolationError("training data must contain at least two classes")
    train_idx, val_idx = stratified_split(y, cfg.train_fraction, cfg.seed)

    def provider(epoch, rng):
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            yield X[chunk], y[chunk]

    best, log = _fit(provider, X[val_idx], y[val_idx], cfg, X.shape[1], len(classes))
    return PadModel(
        weights=best["weights"],
        bias=best["bias"],
        metadata=_metadata(cfg, best, log, n_train=len(train_idx), n_val=len(val_idx)),
    )


def _metadata(cfg, best, log, n_train, n_val):
    return {
        "seed": cfg.seed,
        "epochs_run": len(log),
        "best_epoch": best["epoch"],
        "best_val_acc": best["val_acc"],
        "final_val_acc": log[-1]["val_acc"],
        "n_train": n_train,
        "n_val": n_val,
        "hyperparameters": {
            "batch_size": cfg.batch_size,
            "lr": cfg.lr,
            "momentum": cfg.momentum,
            "weight_decay": cfg.weight_decay,
            "max_epochs": cfg.max_epochs,
            "train_fraction": cfg.train_fraction,
        },
        "epoch_log": log,
    }


def load_pad_images(manifest_path) -> tuple[list[imageio.SampleRecord], np.ndarray]:
    """Load a manifest of preprocessed PAD inputs as a (records, stack) pair."""
    records = imageio.read_manifest(manifest_path)
    stack = np.empty((len(records), PAD_SIDE, PAD_SIDE), dtype=np.uint8)
    for i, rec in enumerate(records):
        img = imageio.load_image(imageio.resolve_path(manifest_path, rec))
        if img.shape != (PAD_SIDE, PAD_SIDE):
            raise InvariantViolationError(
                f"record {rec.id}: expected {PAD_SIDE}x{PAD_SIDE} PAD input, got {img.shape}"
            )
        stack[i] = img
    return records, stack


def train(manifest_path, cfg: TrainConfig, policy: AugmentationPolicy) -> PadModel:
    """Train a BF-vs-PA model per the standard recipe.

    Stratified 80/20 split by label with cfg.seed; each epoch re-augments the
    training images (draws keyed by (seed, epoch, sample)) and extracts fresh
    features; validation uses un-augmented features; the best-validation
    epoch's weights are returned.  Deterministic for fixed inputs and seed.
    """
    cfg.validate()
    records, images = load_pad_images(manifest_path)
    y = np.array([CLASSES.index(rec.label) for rec in records], dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise InvariantViolationError("manifest must contain both BF and PA samples")
    train_idx, val_idx = stratified_split(y, cfg.train_fraction, cfg.seed)
    X_val = np.stack([extract_features(images[i]) for i in val_idx])

    def provider(epoch, rng):
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            feats = np.stack(
                [
                    extract_features(
                        augment(images[i], policy, seed_from(cfg.seed, epoch, int(i)))
                    )
                    for i in chunk
                ]
            )
            yield feats, y[chunk]

    best, log = _fit(provider, X_val, y[val_idx], cfg, FEATURE_DIM, len(CLASSES))
    return PadModel(
        weights=best["weights"],
        bias=best["bias"],
        metadata=_metadata(cfg, best, log, n_train=len(train_idx), n_val=len(val_idx)),
    )


def score_features(model: PadModel, X: np.ndarray) -> np.ndarray:
    """PAD scores in [0, 100]: 100 * softmax probability of the BF class."""
    if model.weights.shape[0] != len(CLASSES):
        raise InvariantViolationError("scoring requires a binary BF/PA model")
    logits = np.atleast_2d(X) @ model.weights.T + model.bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return 100.0 * probs[:, CLASSES.index("BF")]


def predict(model: PadModel, img: np.ndarray) -> float:
    """Score one 256x256 image; >= 50 classifies as bona fide (noTCL)."""
    return float(score_features(model, extract_features(img)[None, :])[0])


def score_dataset(model: PadModel, manifest_path) -> metrics.ScoreSet:
    """Score every manifest record, order preserved."""
    records, images = load_pad_images(manifest_path)
    X = np.stack([extract_features(img) for img in images]) if records else np.empty((0, FEATURE_DIM))
    scores = score_features(model, X) if records else np.array([])
    return metrics.ScoreSet(
        ids=[rec.id for rec in records],
        labels=[rec.label for rec in records],
        scores=[float(s) for s in scores],
    )
