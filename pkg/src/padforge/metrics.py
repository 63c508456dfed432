"""PAD evaluation: APCER/BPCER, DET curves, AUROC, decidability, operating
points, multi-seed aggregation, and paired t-tests.

Score convention throughout: scores live in [0, 100], higher means bona fide,
and a sample is called bona fide when score >= threshold.  APCER is the
fraction of attacks called bona fide; BPCER the fraction of bona fide samples
called attacks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvariantViolationError

LABELS = ("BF", "PA")
DEFAULT_APCER_TARGETS = (0.001, 0.01, 0.05, 0.10)
DECISION_THRESHOLD = 50.0
SCORE_CSV_HEADER = ("sample_id", "label", "score")


@dataclass
class ScoreSet:
    """Parallel (sample id, true label, PAD score) records.

    Pipeline scores follow the 0-100 convention, but the metric functions are
    defined for any finite scores (the metric invariants cover affine score
    transforms); the 0-100 bound is enforced at the score-CSV boundary.
    """

    ids: list[str]
    labels: list[str]
    scores: list[float]

    def __post_init__(self):
        if not (len(self.ids) == len(self.labels) == len(self.scores)):
            raise InvariantViolationError("ids, labels, scores must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise InvariantViolationError("duplicate sample ids in score set")
        for label in self.labels:
            if label not in LABELS:
                raise InvariantViolationError(f"label {label!r} not in {LABELS}")
        for s in self.scores:
            if not math.isfinite(s):
                raise InvariantViolationError(f"score {s} is not finite")

    def __len__(self):
        return len(self.ids)

    def bf_scores(self) -> np.ndarray:
        return np.array([s for s, l in zip(self.scores, self.labels) if l == "BF"])

    def pa_scores(self) -> np.ndarray:
        return np.array([s for s, l in zip(self.scores, self.labels) if l == "PA"])

    def require_both_labels(self):
        if len(self.bf_scores()) == 0 or len(self.pa_scores()) == 0:
            raise InvariantViolationError("score set must contain both BF and PA samples")


@dataclass
class DetCurve:
    """(apcer, bpcer) operating points swept over all distinct thresholds.

    Points run from high thresholds (everything called attack) to low
    (everything called bona fide): apcer nondecreasing, bpcer nonincreasing.
    """

    points: list[tuple[float, float]]

    def __post_init__(self):
        prev_a, prev_b = -1.0, 2.0
        for a, b in self.points:
            if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
                raise InvariantViolationError("DET points must lie in [0, 1]^2")
            if a < prev_a or b > prev_b:
                raise InvariantViolationError("DET points out of order")
            prev_a, prev_b = a, b


@dataclass(frozen=True)
class OperatingPoint:
    bpcer: float
    at_boundary: bool = False  # target below the smallest achievable APCER


@dataclass
class EvalReport:
    auroc: float
    d_prime: float
    det: DetCurve
    bpcer_at_apcer: dict[float, OperatingPoint]
    n_bf: int
    n_pa: int

    def to_jsonable(self) -> dict:
        return {
            "auroc": self.auroc,
            "d_prime": self.d_prime,
            "n_bf": self.n_bf,
            "n_pa": self.n_pa,
            "bpcer_at_apcer": {
                repr(t): {"bpcer": op.bpcer, "at_boundary": op.at_boundary}
                for t, op in self.bpcer_at_apcer.items()
            },
            "det": [[a, b] for a, b in self.det.points],
        }


@dataclass
class RunAggregate:
    """Mean and sample standard deviation of each scalar metric over runs."""

    reports: list[EvalReport]
    auroc_mean: float = field(init=False)
    auroc_std: float = field(init=False)
    d_prime_mean: float = field(init=False)
    d_prime_std: float = field(init=False)
    bpcer_mean: dict[float, float] = field(init=False)
    bpcer_std: dict[float, float] = field(init=False)

    def __post_init__(self):
        if len(self.reports) < 2:
            raise InvariantViolationError("aggregation needs at least two runs")
        keys = [tuple(sorted(r.bpcer_at_apcer)) for r in self.reports]
        if len(set(keys)) != 1:
            raise InvariantViolationError("reports have mismatched operating-point keys")
        aurocs = np.array([r.auroc for r in self.reports])
        dprimes = np.array([r.d_prime for r in self.reports])
        self.auroc_mean = float(aurocs.mean())
        self.auroc_std = float(aurocs.std(ddof=1))
        self.d_prime_mean = float(dprimes.mean())
        self.d_prime_std = float(dprimes.std(ddof=1))
        self.bpcer_mean, self.bpcer_std = {}, {}
        for t in keys[0]:
            vals = np.array([r.bpcer_at_apcer[t].bpcer for r in self.reports])
            self.bpcer_mean[t] = float(vals.mean())
            self.bpcer_std[t] = float(vals.std(ddof=1))

    def to_jsonable(self) -> dict:
        return {
            "runs": len(self.reports),
            "auroc": {"mean": self.auroc_mean, "std": self.auroc_std},
            "d_prime": {"mean": self.d_prime_mean, "std": self.d_prime_std},
            "bpcer_at_apcer": {
                repr(t): {"mean": self.bpcer_mean[t], "std": self.bpcer_std[t]}
                for t in sorted(self.bpcer_mean)
            },
        }


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_two_sided: float
    degenerate: bool = False


def apcer_bpcer(s: ScoreSet, threshold: float) -> tuple[float, float]:
    """Error rates at one threshold: (attacks called bona fide, bona fide
    called attacks)."""
    bf = s.bf_scores()
    pa = s.pa_scores()
    if len(pa) == 0:
        raise InvariantViolationError("APCER undefined: no PA samples")
    if len(bf) == 0:
        raise InvariantViolationError("BPCER undefined: no BF samples")
    apcer = float((pa >= threshold).mean())
    bpcer = float((bf < threshold).mean())
    return apcer, bpcer


def det_curve(s: ScoreSet) -> DetCurve:
    """Sweep thresholds at every distinct score plus below-min/above-max
    sentinels; one point per sweep threshold, exact duplicates dropped."""
    s.require_both_labels()
    scores = np.asarray(s.scores, dtype=np.float64)
    bf = np.sort(s.bf_scores())
    pa = np.sort(s.pa_scores())
    distinct = np.unique(scores)
    thresholds = np.concatenate(([distinct[-1] + 1.0], distinct[::-1], [distinct[0] - 1.0]))
    n_ge_pa = len(pa) - np.searchsorted(pa, thresholds, side="left")
    n_lt_bf = np.searchsorted(bf, thresholds, side="left")
    apcers = n_ge_pa / len(pa)
    bpcers = n_lt_bf / len(bf)
    points = []
    for a, b in zip(apcers, bpcers):
        point = (float(a), float(b))
        if not points or points[-1] != point:
            points.append(point)
    return DetCurve(points=points)


def auroc(s: ScoreSet) -> float:
    """Mann-Whitney AUROC with BF as the positive class: the probability a
    random BF sample outscores a random PA sample, ties counting half."""
    s.require_both_labels()
    scores = np.asarray(s.scores, dtype=np.float64)
    is_bf = np.array([l == "BF" for l in s.labels])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    n_bf = int(is_bf.sum())
    n_pa = len(scores) - n_bf
    u = ranks[is_bf].sum() - n_bf * (n_bf + 1) / 2.0
    return float(u / (n_bf * n_pa))


def decidability(s: ScoreSet) -> float:
    """d' = |mean_BF - mean_PA| / sqrt(0.5 * (var_BF + var_PA)), sample
    variances.  Zero pooled variance gives 0 for equal means, +inf otherwise."""
    bf = s.bf_scores()
    pa = s.pa_scores()
    if len(bf) < 2 or len(pa) < 2:
        raise InvariantViolationError("decidability needs >= 2 samples per label")
    pooled = 0.5 * (bf.var(ddof=1) + pa.var(ddof=1))
    gap = abs(float(bf.mean()) - float(pa.mean()))
    if pooled == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / math.sqrt(pooled)


def _apcer_envelope(curve: DetCurve):
    """Distinct apcer values with their minimal bpcer (the curve's lower
    staircase), both ascending in apcer."""
    env_a, env_b = [], []
    for a, b in curve.points:
        if env_a and env_a[-1] == a:
            env_b[-1] = min(env_b[-1], b)
        else:
            env_a.append(a)
            env_b.append(b)
    return env_a, env_b


def bpcer_at_apcer(
    curve: DetCurve, targets=DEFAULT_APCER_TARGETS
) -> dict[float, OperatingPoint]:
    """BPCER at each target APCER, linearly interpolated between the curve
    points bracketing the target (exact point if attained).

    A target below the smallest achievable apcer reports the boundary bpcer
    flagged `at_boundary`.
    """
    env_a, env_b = _apcer_envelope(curve)
    out = {}
    for target in targets:
        if target < env_a[0]:
            out[target] = OperatingPoint(bpcer=env_b[0], at_boundary=True)
            continue
        if target > env_a[-1]:
            out[target] = OperatingPoint(bpcer=env_b[-1], at_boundary=True)
            continue
        hi = 0
        while env_a[hi] < target:
            hi += 1
        if env_a[hi] == target:
            out[target] = OperatingPoint(bpcer=env_b[hi])
        else:
            lo = hi - 1
            frac = (target - env_a[lo]) / (env_a[hi] - env_a[lo])
            out[target] = OperatingPoint(bpcer=env_b[lo] + frac * (env_b[hi] - env_b[lo]))
    return out


def evaluate(s: ScoreSet, targets=DEFAULT_APCER_TARGETS) -> EvalReport:
    """Full per-run evaluation of one score set."""
    curve = det_curve(s)
    return EvalReport(
        auroc=auroc(s),
        d_prime=decidability(s),
        det=curve,
        bpcer_at_apcer=bpcer_at_apcer(curve, targets),
        n_bf=len(s.bf_scores()),
        n_pa=len(s.pa_scores()),
    )


def aggregate_runs(reports: list[EvalReport]) -> RunAggregate:
    return RunAggregate(reports=list(reports))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: int) -> float:
    """P(T >= t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 0.5
    p_two = betainc(df / 2.0, 0.5, df / (df + t * t))
    return p_two / 2.0 if t > 0 else 1.0 - p_two / 2.0


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired-samples t-test.

    t = mean(d) / (sd(d) / sqrt(n)) with d = a - b and df = n - 1; the
    p-value comes from the regularized incomplete beta.  All-zero differences
    return (t=0, p=1) flagged degenerate; zero-variance nonzero differences
    return infinite t with p=0, also flagged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise InvariantViolationError("paired t-test needs two equal-length vectors, n >= 2")
    d = a - b
    df = len(d) - 1
    if np.all(d == 0.0):
        return TTestResult(t=0.0, df=df, p_two_sided=1.0, degenerate=True)
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        return TTestResult(
            t=math.copysign(math.inf, mean), df=df, p_two_sided=0.0, degenerate=True
        )
    t = mean / (sd / math.sqrt(len(d)))
    p = betainc(df / 2.0, 0.5, df / (df + t * t))
    return TTestResult(t=t, df=df, p_two_sided=min(1.0, p))


def write_score_csv(s: ScoreSet, path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_HEADER)
        for sid, label, score in zip(s.ids, s.labels, s.scores):
            writer.writerow([sid, label, repr(score)])


def read_score_csv(path) -> ScoreSet:
    """Read an external score CSV; scores must respect the 0-100 convention."""
    ids, labels, scores = [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SCORE_CSV_HEADER:
            raise InvariantViolationError(f"unexpected score CSV header {header}")
        for row in reader:
            value = float(row[2])
            if not (0.0 <= value <= 100.0):
                raise InvariantViolationError(f"score {value} outside [0, 100] in {path}")
            ids.append(row[0])
            labels.append(row[1])
            scores.append(value)
    return ScoreSet(ids=ids, labels=labels, scores=scores)


def write_det_csv(curve: DetCurve, path) -> None:
    """DET polyline for external plotting: apcer,bpcer per row."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["apcer", "bpcer"])
        for a, b in curve.points:
            writer.writerow([repr(a), repr(b)])


def render_table(aggregates: dict[str, RunAggregate]) -> str:
    """Aligned text table: BPCER (%, mean +- std over runs) per APCER level,
    one column per model variant."""
    names = list(aggregates)
    targets = sorted(next(iter(aggregates.values())).bpcer_mean) if aggregates else []
    header = ["APCER"] + names
    rows = [header]
    for t in targets:
        row = [f"{t * 100:g}%"]
        for name in names:
            agg = aggregates[name]
            row.append(f"{agg.bpcer_mean[t] * 100:.2f} +- {agg.bpcer_std[t] * 100:.2f}")
        rows.append(row)
    rows.append(
        ["AUROC"] + [f"{aggregates[n].auroc_mean:.4f} +- {aggregates[n].auroc_std:.4f}" for n in names]
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(header))))
    return "\n".join(lines) + "\n"
