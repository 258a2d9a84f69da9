"""Classical two-sample baselines, each reduced to a non-negative distance D.

Every baseline scores a pair of datasets from the same value space; eval
code turns D into the match-probability analog exp(-D) so all methods rank
on a common scale. Test-style methods (KS, SCF, Hotelling) use D = 1 - p so
that small p-values (confident rejections) mean large distances.

Numeric methods take float arrays; set methods take string values; the
word-vector methods embed instances through a pretrained table first.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as _stats

from .core import ColumnDataset, ValueSpace
from .encode import WordVectorTable, embed_text_field
from .errors import InvalidArgument, NotComparable

__all__ = [
    "meansd",
    "ks",
    "mmd",
    "scf",
    "jaccard",
    "mean_wordvec",
    "paired_wordvec",
    "ks_two_sample",
    "ks_tail_probability",
    "mmd_linear_statistic",
    "scf_two_sample",
]

SCF_FREQS = 10
SCF_FREQ_STEP = 3.0
SCF_FREQ_JITTER = 0.25
SCF_RIDGE = 1e-8
MMD_BANDWIDTH_POOL = 500


def _numeric_values(d: ColumnDataset) -> np.ndarray:
    if d.space is not ValueSpace.NUMERIC:
        raise NotComparable(f"dataset {d.id!r} is not numeric")
    return np.asarray(d.values, dtype=np.float64)


def _string_values(d: ColumnDataset):
    if d.space is ValueSpace.NUMERIC:
        raise NotComparable(f"dataset {d.id!r} is not string-valued")
    return d.values


# ---------------------------------------------------------------------------
# moment matching


def meansd(d1: ColumnDataset, d2: ColumnDataset) -> float:
    """Absolute difference of means plus absolute difference of (population) SDs."""
    x, y = _numeric_values(d1), _numeric_values(d2)
    return float(abs(x.mean() - y.mean()) + abs(x.std() - y.std()))


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_tail_probability(lam: float) -> float:
    """Asymptotic KS tail sum 2*sum_k (-1)^(k-1) exp(-2 k^2 lam^2).

    Terms below 1e-12 are dropped; if the alternating series has not
    converged after 100 terms (tiny lam), the limit is 1.
    """

    if lam <= 0:
        return 1.0
    total = 0.0
    sign = 1.0
    a = -2.0 * lam * lam
    for k in range(1, 101):
        term = math.exp(a * k * k)
        if term < 1e-12:
            return min(1.0, max(0.0, 2.0 * (total + sign * term)))
        total += sign * term
        sign = -sign
    return 1.0


def ks_two_sample(x, y) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value.

    The p-value uses the effective sample size n1*n2/(n1+n2) with the
    finite-sample correction lam = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * K.
    """

    xs = np.sort(np.asarray(x, dtype=np.float64))
    ys = np.sort(np.asarray(y, dtype=np.float64))
    n1, n2 = xs.size, ys.size
    if n1 == 0 or n2 == 0:
        raise InvalidArgument("KS needs non-empty samples")
    grid = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, grid, side="right") / n1
    cdf_y = np.searchsorted(ys, grid, side="right") / n2
    stat = float(np.max(np.abs(cdf_x - cdf_y)))
    ne = n1 * n2 / (n1 + n2)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * stat
    return stat, ks_tail_probability(lam)


def ks(d1: ColumnDataset, d2: ColumnDataset) -> float:
    """KS distance D = 1 - p."""
    _, p = ks_two_sample(_numeric_values(d1), _numeric_values(d2))
    return 1.0 - p


# ---------------------------------------------------------------------------
# linear-time maximum mean discrepancy


def _median_bandwidth(pooled: np.ndarray, rng: np.random.Generator) -> float:
    if pooled.size > MMD_BANDWIDTH_POOL:
        pooled = rng.choice(pooled, size=MMD_BANDWIDTH_POOL, replace=False)
    iu = np.triu_indices(pooled.size, k=1)
    diffs = np.abs(pooled[:, None] - pooled[None, :])[iu]
    med = float(np.median(diffs))
    return med if med > 0 else 1.0


def mmd_linear_statistic(x, y, seed: int = 0) -> float:
    """Linear-time MMD estimate with an RBF kernel at the median bandwidth.

    Both samples are shuffled (seeded) and truncated to the smaller size m;
    the statistic averages the usual paired h-terms over floor(m/2) disjoint
    index pairs. The raw, possibly negative value is returned.
    """

    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = min(x.size, y.size)
    if m < 2:
        raise InvalidArgument("linear MMD needs at least 2 values per sample")
    x = rng.permutation(x)[:m]
    y = rng.permutation(y)[:m]
    sigma = _median_bandwidth(np.concatenate([x, y]), rng)
    gamma = 1.0 / (2.0 * sigma * sigma)
    half = m // 2
    x1, x2 = x[0:2 * half:2], x[1:2 * half:2]
    y1, y2 = y[0:2 * half:2], y[1:2 * half:2]

    def k(a, b):
        return np.exp(-gamma * (a - b) ** 2)

    h = k(x1, x2) + k(y1, y2) - k(x1, y2) - k(x2, y1)
    return float(h.mean())


def mmd(d1: ColumnDataset, d2: ColumnDataset, seed: int = 0) -> float:
    """Linear-time MMD distance, clamped at zero."""
    stat = mmd_linear_statistic(_numeric_values(d1), _numeric_values(d2), seed)
    return max(stat, 0.0)


# ---------------------------------------------------------------------------
# smooth characteristic function test


def scf_two_sample(x, y, seed: int = 0, n_freqs: int = SCF_FREQS) -> tuple[float, float]:
    """SCF statistic and its chi-square p-value on 2*n_freqs features.

    Pooled data is standardized, frequencies sit on a seeded jittered grid,
    and the statistic is m * zbar' Sigma^-1 zbar for the paired feature
    differences z_i. Requires m >= 2*n_freqs + 2.
    """

    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = min(x.size, y.size)
    if m < 2 * n_freqs + 2:
        raise InvalidArgument(f"SCF needs at least {2 * n_freqs + 2} values per sample, got {m}")
    x = rng.permutation(x)[:m]
    y = rng.permutation(y)[:m]
    pooled = np.concatenate([x, y])
    mu, sd = pooled.mean(), pooled.std()
    if sd == 0:
        return 0.0, 1.0
    xs, ys = (x - mu) / sd, (y - mu) / sd
    # Jittered grid rather than iid draws: standardized data lives in a window
    # of roughly +-3.5, and frequencies packed tighter than ~2 apart make the
    # damped sin/cos features numerically collinear, collapsing the covariance
    # below the ridge and wrecking the chi-square calibration.
    slots = np.arange(n_freqs) - (n_freqs - 1) / 2.0
    freqs = SCF_FREQ_STEP * (slots + rng.uniform(-SCF_FREQ_JITTER, SCF_FREQ_JITTER, n_freqs))

    def features(v):
        u = v[:, None] * freqs[None, :]
        damp = np.exp(-0.5 * v * v)[:, None]
        return np.concatenate([damp * np.sin(u), damp * np.cos(u)], axis=1)

    z = features(xs) - features(ys)
    zbar = z.mean(axis=0)
    cov = np.cov(z, rowvar=False, ddof=1) + SCF_RIDGE * np.eye(2 * n_freqs)
    try:
        stat = float(m * (zbar @ np.linalg.solve(cov, zbar)))
    except np.linalg.LinAlgError:
        return 0.0, 1.0
    stat = max(stat, 0.0)
    p = float(_stats.chi2.sf(stat, 2 * n_freqs))
    return stat, p


def scf(d1: ColumnDataset, d2: ColumnDataset, seed: int = 0) -> float:
    """SCF distance D = 1 - p."""
    _, p = scf_two_sample(_numeric_values(d1), _numeric_values(d2), seed)
    return 1.0 - p


# ---------------------------------------------------------------------------
# set overlap


def jaccard(d1: ColumnDataset, d2: ColumnDataset) -> float:
    """One minus the Jaccard similarity of the distinct value sets."""
    a = set(_string_values(d1))
    b = set(_string_values(d2))
    return 1.0 - len(a & b) / len(a | b)


# ---------------------------------------------------------------------------
# word-vector methods


def _instance_matrix(d: ColumnDataset, vocab: WordVectorTable) -> np.ndarray:
    rows = []
    for value in _string_values(d):
        vec = embed_text_field(value, vocab)
        if vec is not None:
            rows.append(vec)
    if not rows:
        raise NotComparable(f"dataset {d.id!r} has no instance representable in the vocabulary")
    return np.stack(rows).astype(np.float64)


def mean_wordvec(d1: ColumnDataset, d2: ColumnDataset, vocab: WordVectorTable) -> float:
    """Euclidean distance between the mean instance word vectors."""
    a = _instance_matrix(d1, vocab).mean(axis=0)
    b = _instance_matrix(d2, vocab).mean(axis=0)
    return float(np.linalg.norm(a - b))


def paired_wordvec(d1: ColumnDataset, d2: ColumnDataset, vocab: WordVectorTable) -> float:
    """Hotelling two-sample T^2 on instance word vectors, as D = 1 - p.

    The pooled covariance is shrunk toward the identity
    (lambda = 1e-3 * trace / dim, floored at 1e-12 so the solve is always
    defined); when n1 + n2 - 2 < dim only the diagonal is kept. The p-value
    uses the F transform when its second degree of freedom is positive and
    falls back to the chi-square limit otherwise.
    """

    x = _instance_matrix(d1, vocab)
    y = _instance_matrix(d2, vocab)
    n1, n2 = x.shape[0], y.shape[0]
    if n1 + n2 < 4:
        raise InvalidArgument("paired_wordvec needs n1 + n2 >= 4 representable instances")
    dim = x.shape[1]
    delta = x.mean(axis=0) - y.mean(axis=0)
    pooled = np.zeros((dim, dim))
    if n1 >= 2:
        pooled += (n1 - 1) * np.cov(x, rowvar=False, ddof=1)
    if n2 >= 2:
        pooled += (n2 - 1) * np.cov(y, rowvar=False, ddof=1)
    pooled /= (n1 + n2 - 2)
    if n1 + n2 - 2 < dim:
        pooled = np.diag(np.diag(pooled))
    lam = max(1e-3 * float(np.trace(pooled)) / dim, 1e-12)
    sigma = pooled + lam * np.eye(dim)
    t2 = float((n1 * n2 / (n1 + n2)) * (delta @ np.linalg.solve(sigma, delta)))
    t2 = max(t2, 0.0)
    df2 = n1 + n2 - dim - 1
    if df2 >= 1:
        f_stat = t2 * df2 / (dim * (n1 + n2 - 2))
        p = float(_stats.f.sf(f_stat, dim, df2))
    else:
        p = float(_stats.chi2.sf(t2, dim))
    return 1.0 - p
