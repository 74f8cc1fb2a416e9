"""Boxplot summaries, repeated-measures / between-subjects ANOVA, and
Pearson correlation, with the distribution functions their p-values need.

All p-values route through a regularized incomplete beta function computed
by a modified-Lentz continued fraction, so the module has no dependency on
an external statistics library. Quartiles use linear interpolation of the
empirical CDF; the hinge method is isolated in one function so it can be
swapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxplotSummary",
    "AnovaResult",
    "CorrelationResult",
    "DegenerateDataError",
    "boxplot_summary",
    "anova_rm_one",
    "anova_rm_two",
    "anova_between_two",
    "pearson",
    "f_cdf",
    "f_sf",
    "t_sf",
    "regularized_incomplete_beta",
    "gg_epsilon",
]


class DegenerateDataError(ValueError):
    """Raised when an analysis has no variance left to test against."""


# -- special functions --------------------------------------------------------

_BETACF_MAX_ITER = 500
_BETACF_TOL = 1e-12
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_TOL:
            return h
    raise RuntimeError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(f_value: float, df1: float, df2: float) -> float:
    """CDF of the F distribution; the p-value is 1 - f_cdf."""
    if f_value < 0.0:
        raise ValueError("F must be non-negative")
    if df1 <= 0.0 or df2 <= 0.0:
        raise ValueError("degrees of freedom must be positive")
    if f_value == 0.0:
        return 0.0
    if math.isinf(f_value):
        return 1.0
    x = df1 * f_value / (df1 * f_value + df2)
    return regularized_incomplete_beta(df1 / 2.0, df2 / 2.0, x)


def f_sf(f_value: float, df1: float, df2: float) -> float:
    if f_value == 0.0:
        return 1.0
    if math.isinf(f_value):
        return 0.0
    x = df2 / (df1 * f_value + df2)
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x)


def t_sf(t_value: float, df: float) -> float:
    """Upper-tail probability of Student's t."""
    if df <= 0.0:
        raise ValueError("df must be positive")
    if t_value < 0.0:
        return 1.0 - t_sf(-t_value, df)
    x = df / (df + t_value * t_value)
    return 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)


# -- boxplot -------------------------------------------------------------------


@dataclass(frozen=True)
class BoxplotSummary:
    q1: float
    median: float
    q3: float
    mean: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "mean": self.mean,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "outliers": list(self.outliers),
        }


def _quartiles(values: np.ndarray) -> tuple[float, float, float]:
    """Hinge method: linear interpolation of the empirical CDF."""
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0], method="linear")
    return float(q1), float(med), float(q3)


def boxplot_summary(data) -> BoxplotSummary:
    """Five-number summary with the 1.5 IQR outlier rule.

    Points strictly more than 1.5 IQR below q1 or above q3 are outliers;
    whiskers sit at the min/max of what remains.
    """
    values = np.asarray(list(data), dtype=np.float64)
    if values.size == 0:
        raise ValueError("boxplot_summary requires non-empty data")
    if not np.all(np.isfinite(values)):
        raise ValueError("data must be finite")
    q1, med, q3 = _quartiles(values)
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outlier_mask = (values < lo) | (values > hi)
    kept = values[~outlier_mask]
    return BoxplotSummary(
        q1=q1,
        median=med,
        q3=q3,
        mean=float(np.mean(values)),
        whisker_low=float(np.min(kept)),
        whisker_high=float(np.max(kept)),
        outliers=tuple(float(v) for v in values[outlier_mask]),
    )


# -- ANOVA ---------------------------------------------------------------------


@dataclass(frozen=True)
class AnovaResult:
    effect: str
    F: float
    df1: float
    df2: float
    p: float
    epsilon: float | None = None
    degenerate: bool = False

    def as_dict(self) -> dict:
        out = {
            "effect": self.effect,
            "F": self.F,
            "df1": self.df1,
            "df2": self.df2,
            "p": self.p,
        }
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        if self.degenerate:
            out["degenerate"] = True
        return out


def _f_result(effect: str, ss_effect: float, df1: float, ss_err: float, df2: float,
              epsilon: float | None = None, ss_scale: float = 1.0) -> AnovaResult:
    """Build one ANOVA line, handling zero-variance corner cases.

    Thresholds are relative to ss_scale so results are invariant under
    rescaling the data.
    """
    tol = 1e-12 * max(ss_scale, _TINY)
    if epsilon is not None:
        df1 = epsilon * df1
        df2 = epsilon * df2
    if ss_effect <= tol:
        return AnovaResult(effect, 0.0, df1, df2, 1.0, epsilon)
    if ss_err <= tol:
        return AnovaResult(effect, math.inf, df1, df2, 0.0, epsilon, degenerate=True)
    f_value = (ss_effect / df1) / (ss_err / df2)
    return AnovaResult(effect, f_value, df1, df2, f_sf(f_value, df1, df2), epsilon)


def _helmert(k: int) -> np.ndarray:
    """(k, k-1) matrix of orthonormal contrasts, each orthogonal to ones."""
    c = np.zeros((k, k - 1))
    for j in range(1, k):
        norm = math.sqrt(j * (j + 1))
        c[:j, j - 1] = 1.0 / norm
        c[j, j - 1] = -j / norm
    return c


def gg_epsilon(cells: np.ndarray, contrasts: np.ndarray) -> float:
    """Greenhouse-Geisser epsilon for a within-subject effect.

    `cells` is the subjects x cells response matrix and `contrasts` an
    orthonormal basis of the effect subspace. Equivalent to the eigenvalue
    form on the double-centered covariance; clipped to [1/m, 1].
    """
    m = contrasts.shape[1]
    cov = np.cov(cells, rowvar=False, ddof=1)
    reduced = contrasts.T @ cov @ contrasts
    trace = float(np.trace(reduced))
    denom = m * float(np.sum(reduced * reduced))
    if denom <= 0.0:
        return 1.0
    eps = trace * trace / denom
    return float(min(1.0, max(1.0 / m, eps)))


def anova_rm_one(data) -> AnovaResult:
    """One-factor repeated-measures ANOVA on a subjects x conditions matrix."""
    y = np.asarray(data, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("expected a 2-D subjects x conditions matrix")
    n, k = y.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 subjects and 2 conditions")
    if not np.all(np.isfinite(y)):
        raise ValueError("matrix must be complete and finite")
    grand = y.mean()
    ss_total = float(np.sum((y - grand) ** 2))
    ss_cond = float(n * np.sum((y.mean(axis=0) - grand) ** 2))
    ss_subj = float(k * np.sum((y.mean(axis=1) - grand) ** 2))
    ss_err = ss_total - ss_cond - ss_subj
    return _f_result("condition", ss_cond, k - 1, ss_err, (n - 1) * (k - 1),
                     ss_scale=ss_total)


def anova_rm_two(data) -> list[AnovaResult]:
    """Two-factor repeated-measures ANOVA on a subjects x a x b array.

    Within-subject partitioning with separate error terms per effect. Any
    effect spanning 3 or more levels gets its degrees of freedom shrunk by
    the Greenhouse-Geisser epsilon; two-level effects have epsilon 1.
    """
    y = np.asarray(data, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError("expected a 3-D subjects x a x b array")
    n, a, b = y.shape
    if n < 2 or a < 2 or b < 2:
        raise ValueError("need at least 2 subjects and 2 levels per factor")
    if not np.all(np.isfinite(y)):
        raise ValueError("design must be complete and balanced")

    grand = y.mean()
    mean_a = y.mean(axis=(0, 2))
    mean_b = y.mean(axis=(0, 1))
    mean_ab = y.mean(axis=0)
    mean_s = y.mean(axis=(1, 2))
    mean_sa = y.mean(axis=2)
    mean_sb = y.mean(axis=1)

    ss_total = float(np.sum((y - grand) ** 2))
    ss_a = float(n * b * np.sum((mean_a - grand) ** 2))
    ss_b = float(n * a * np.sum((mean_b - grand) ** 2))
    ss_ab = float(n * np.sum((mean_ab - mean_a[:, None] - mean_b[None, :] + grand) ** 2))
    ss_s = float(a * b * np.sum((mean_s - grand) ** 2))
    ss_as = float(b * np.sum((mean_sa - mean_a[None, :] - mean_s[:, None] + grand) ** 2))
    ss_bs = float(a * np.sum((mean_sb - mean_b[None, :] - mean_s[:, None] + grand) ** 2))
    ss_abs = ss_total - ss_a - ss_b - ss_ab - ss_s - ss_as - ss_bs

    ca = _helmert(a)
    cb = _helmert(b)
    ones_a = np.full((a, 1), 1.0 / math.sqrt(a))
    ones_b = np.full((b, 1), 1.0 / math.sqrt(b))
    cells = y.reshape(n, a * b)  # row-major: cell (i, j) at column i*b + j

    eps_a = gg_epsilon(cells, np.kron(ca, ones_b)) if a >= 3 else 1.0
    eps_b = gg_epsilon(cells, np.kron(ones_a, cb)) if b >= 3 else 1.0
    eps_ab = gg_epsilon(cells, np.kron(ca, cb)) if (a - 1) * (b - 1) >= 2 else 1.0

    return [
        _f_result("A", ss_a, a - 1, ss_as, (n - 1) * (a - 1), eps_a, ss_total),
        _f_result("B", ss_b, b - 1, ss_bs, (n - 1) * (b - 1), eps_b, ss_total),
        _f_result("AxB", ss_ab, (a - 1) * (b - 1), ss_abs,
                  (n - 1) * (a - 1) * (b - 1), eps_ab, ss_total),
    ]


def _effects_design(labels: list, levels: list) -> np.ndarray:
    """Sum-to-zero coded columns for one categorical factor."""
    k = len(levels)
    index = {lvl: i for i, lvl in enumerate(levels)}
    x = np.zeros((len(labels), k - 1))
    for row, lab in enumerate(labels):
        i = index[lab]
        if i < k - 1:
            x[row, i] = 1.0
        else:
            x[row, :] = -1.0
    return x


def _rss(x: np.ndarray, y: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    return float(resid @ resid)


def anova_between_two(values, factor_a, factor_b) -> list[AnovaResult]:
    """Two-factor between-subjects ANOVA (Type-II sums of squares).

    Every (a, b) cell must contain at least one observation. With a balanced
    design this reduces to the textbook two-way ANOVA; unequal cell counts
    are handled by model comparison.
    """
    y = np.asarray(list(values), dtype=np.float64)
    fa = list(factor_a)
    fb = list(factor_b)
    if not (len(y) == len(fa) == len(fb)):
        raise ValueError("values and factor labels must have equal length")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    levels_a = sorted(set(fa), key=str)
    levels_b = sorted(set(fb), key=str)
    a, b = len(levels_a), len(levels_b)
    if a < 2 or b < 2:
        raise ValueError("both factors need at least 2 levels")
    counts = {(la, lb): 0 for la in levels_a for lb in levels_b}
    for la, lb in zip(fa, fb):
        counts[(la, lb)] += 1
    for cell, cnt in counts.items():
        if cnt == 0:
            raise ValueError(f"empty design cell {cell}")

    n_total = len(y)
    ones = np.ones((n_total, 1))
    xa = _effects_design(fa, levels_a)
    xb = _effects_design(fb, levels_b)
    xab = np.column_stack(
        [xa[:, i] * xb[:, j] for i in range(a - 1) for j in range(b - 1)]
    )
    full = np.column_stack([ones, xa, xb, xab])
    rss_full = _rss(full, y)
    rss_ab = _rss(np.column_stack([ones, xa, xb]), y)
    rss_a_only = _rss(np.column_stack([ones, xa]), y)
    rss_b_only = _rss(np.column_stack([ones, xb]), y)

    ss_a = max(0.0, rss_b_only - rss_ab)
    ss_b = max(0.0, rss_a_only - rss_ab)
    ss_ab = max(0.0, rss_ab - rss_full)
    df_err = n_total - a * b
    if df_err <= 0:
        raise ValueError("no residual degrees of freedom")
    ss_scale = float(np.sum((y - y.mean()) ** 2))
    return [
        _f_result("A", ss_a, a - 1, rss_full, df_err, None, ss_scale),
        _f_result("B", ss_b, b - 1, rss_full, df_err, None, ss_scale),
        _f_result("AxB", ss_ab, (a - 1) * (b - 1), rss_full, df_err, None, ss_scale),
    ]


# -- correlation ----------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    df: int
    p: float

    def as_dict(self) -> dict:
        return {"r": self.r, "df": self.df, "p": self.p}


def pearson(x, y) -> CorrelationResult:
    """Pearson correlation with a two-sided t-test p-value."""
    xv = np.asarray(list(x), dtype=np.float64)
    yv = np.asarray(list(y), dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D sequences")
    n = xv.size
    if n < 3:
        raise ValueError("need at least 3 pairs")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateDataError("zero variance in one of the inputs")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) >= 1.0:
        return CorrelationResult(r, df, 0.0)
    t = r * math.sqrt(df / (1.0 - r * r))
    return CorrelationResult(r, df, 2.0 * t_sf(abs(t), df))
