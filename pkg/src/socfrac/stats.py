"""Avalanche statistics: size and waiting-time distributions, discrete power-law fits.

The fit is the discrete maximum-likelihood estimator for P(s) = s^-alpha / zeta(alpha, s_min),
s >= s_min, with s_min chosen by minimizing the Kolmogorov-Smirnov distance and a
semi-parametric bootstrap for the goodness-of-fit p-value.
"""
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import special

ALPHA_BOUNDS = (1.0 + 1e-6, 8.0)


class StatsError(ValueError):
    pass


@dataclass
class SizeDistribution:
    sizes: np.ndarray
    probs: np.ndarray
    n_events: int

    def as_dict(self):
        return {int(s): float(p) for s, p in zip(self.sizes, self.probs)}


def _sizes(records):
    out = []
    for r in records:
        out.append(r if isinstance(r, (int, np.integer)) else r.size)
    return np.asarray(out, dtype=np.int64)


def size_distribution(records):
    """Normalized histogram of avalanche sizes over stations with s >= 1."""
    s = _sizes(records)
    s = s[s >= 1]
    if s.size == 0:
        raise StatsError("no avalanches with s >= 1")
    vals, counts = np.unique(s, return_counts=True)
    return SizeDistribution(vals, counts / counts.sum(), int(s.size))


def waiting_times(records, stations=None):
    """Gaps (in stations) between successive stations with s >= 1."""
    if stations is None:
        stations = [getattr(r, "station", i) for i, r in enumerate(records)]
    s = _sizes(records)
    ev = np.asarray(stations)[s >= 1]
    if ev.size < 2:
        raise StatsError("need at least two event stations")
    return np.diff(np.sort(ev))


# --- discrete power law ---------------------------------------------------------

@dataclass
class PowerLawFit:
    alpha: float
    s_min: int
    ks: float
    p_value: float
    n_tail: int
    s_max: int

    @property
    def decades(self):
        return float(np.log10(self.s_max / self.s_min))


class _Tail:
    """Sorted sample with prefix sums, for fast per-s_min likelihoods."""

    def __init__(self, x):
        x = np.sort(np.asarray(x, dtype=np.int64))
        self.x = x
        self.vals, self.counts = np.unique(x, return_counts=True)
        # number of samples >= vals[k] and the sum of their logs
        self.n_ge = np.cumsum(self.counts[::-1])[::-1]
        logs = np.log(self.vals) * self.counts
        self.log_ge = np.cumsum(logs[::-1])[::-1]

    def mle(self, ks_):
        """MLE exponent for each candidate index in ``ks_`` (vectorized bisection).

        The score sum(log s)/n + d/da log zeta(a, s_min) is increasing in a, so its root is
        bracketed by ALPHA_BOUNDS and found by bisection on all candidates at once.
        """
        ks_ = np.atleast_1d(ks_)
        mean_log = self.log_ge[ks_] / self.n_ge[ks_]
        smin = self.vals[ks_].astype(float)
        lo = np.full(ks_.shape, ALPHA_BOUNDS[0])
        hi = np.full(ks_.shape, ALPHA_BOUNDS[1])
        h = 1e-6
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            dlog = (np.log(special.zeta(mid + h, smin)) - np.log(special.zeta(mid - h, smin))) / (2 * h)
            up = mean_log + dlog > 0
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return 0.5 * (lo + hi)

    def ks(self, ks_, alphas):
        """KS distance between the tail above vals[k] and the fitted law, for each candidate."""
        ks_, alphas = np.atleast_1d(ks_), np.atleast_1d(alphas)
        vals = self.vals
        cum = np.cumsum(self.counts)                               # #samples <= vals[j]
        below = np.concatenate([[0], cum[:-1]])                    # #samples < vals[j]
        n = self.n_ge[ks_].astype(float)
        start = below[ks_].astype(float)
        emp_cdf = (cum[None, :] - start[:, None]) / n[:, None]
        emp_before = (below[None, :] - start[:, None]) / n[:, None]
        # model P(X < v) = 1 - zeta(a, v) / zeta(a, s_min); one zeta call on the union grid
        grid = np.union1d(vals, vals + 1).astype(float)
        z = special.zeta(alphas[:, None], grid[None, :])
        i_v, i_v1 = np.searchsorted(grid, vals), np.searchsorted(grid, vals + 1)
        z0 = z[np.arange(ks_.size), i_v[ks_]][:, None]
        mod_before = 1.0 - z[:, i_v] / z0
        mod_cdf = 1.0 - z[:, i_v1] / z0
        dev = np.maximum(np.abs(emp_cdf - mod_cdf), np.abs(emp_before - mod_before))
        dev[np.arange(vals.size)[None, :] < ks_[:, None]] = 0.0
        return dev.max(axis=1)


def _scan(x, s_min=None, min_tail=50, max_candidates=60, min_decades=1.0):
    tail = _Tail(x)
    if tail.vals.size < 2 and s_min is None:
        raise StatsError("degenerate sample: a single repeated value")
    if s_min is not None:
        ks_ = np.flatnonzero(tail.vals >= s_min)
        if ks_.size == 0 or tail.n_ge[ks_[0]] < min_tail:
            raise StatsError(f"fewer than {min_tail} samples at or above s_min={s_min}")
        k = ks_[0]
        if tail.vals.size - k < 2:
            raise StatsError("degenerate tail: a single repeated value")
        a = float(tail.mle(k)[0])
        return a, int(tail.vals[k]), float(tail.ks(k, a)[0]), int(tail.n_ge[k])
    ok = (tail.n_ge >= min_tail) & (np.arange(tail.vals.size) < tail.vals.size - 1)
    if not ok.any():
        raise StatsError(f"fewer than {min_tail} samples for any s_min")
    # keep at least `min_decades` of support above s_min when the sample allows it;
    # otherwise the KS scan drifts into the extreme tail of any light-tailed sample
    wide = ok & (tail.vals <= tail.vals[-1] / 10.0 ** min_decades)
    cands = np.flatnonzero(wide if wide.any() else ok)
    cands = cands[:max_candidates]
    alphas = tail.mle(cands)
    d = tail.ks(cands, alphas)
    b = int(np.argmin(d))
    k = cands[b]
    return float(alphas[b]), int(tail.vals[k]), float(d[b]), int(tail.n_ge[k])


class _PowerLawSampler:
    """Inverse-CDF sampler; exact below ``table_max``, continuous approximation above."""

    def __init__(self, alpha, s_min, table_max=100_000):
        self.alpha, self.s_min, self.table_max = alpha, int(s_min), max(int(table_max), int(s_min))
        s = np.arange(self.s_min, self.table_max + 1, dtype=float)
        self.cdf = np.cumsum(s ** -alpha / special.zeta(alpha, self.s_min))

    def __call__(self, n, rng):
        u = rng.random(n)
        idx = np.searchsorted(self.cdf, u, side="right")
        out = (self.s_min + idx).astype(np.int64)
        big = idx >= self.cdf.size
        if big.any():
            ub = (u[big] - self.cdf[-1]) / (1.0 - self.cdf[-1])
            x = (self.table_max + 0.5) * (1.0 - ub) ** (-1.0 / (self.alpha - 1.0)) + 0.5
            out[big] = np.minimum(np.floor(x), 2.0 ** 62).astype(np.int64)
        return out


def sample_discrete_power_law(alpha, s_min, n, rng, table_max=100_000):
    """n draws from P(s) = s^-alpha / zeta(alpha, s_min), s >= s_min."""
    return _PowerLawSampler(alpha, s_min, table_max)(n, rng)


def fit_power_law(samples, s_min=None, n_boot=1000, seed=0, min_tail=50, max_candidates=60,
                  min_decades=1.0):
    """Discrete MLE exponent, KS-optimal s_min and bootstrap plausibility.

    When s_min is free it is scanned over observed values leaving at least ``min_tail``
    samples and ``min_decades`` of support above it (the first ``max_candidates`` such
    values). ``n_boot=0`` skips the bootstrap (p-value reported as NaN).
    """
    x = np.asarray(samples, dtype=np.int64)
    x = x[x >= 1]
    if x.size < min_tail:
        raise StatsError(f"need at least {min_tail} samples, got {x.size}")
    if np.unique(x).size < 2:
        raise StatsError("degenerate sample: a single repeated value")
    alpha, smin, ks, n_tail = _scan(x, s_min, min_tail, max_candidates, min_decades)
    s_max = int(x.max())
    if n_boot <= 0:
        return PowerLawFit(alpha, smin, ks, float("nan"), n_tail, s_max)
    rng = np.random.default_rng(seed)
    sampler = _PowerLawSampler(alpha, smin)
    body = x[x < smin]
    p_tail = n_tail / x.size
    exceed = 0
    done = 0
    for _ in range(n_boot):
        n_t = rng.binomial(x.size, p_tail)
        synth = np.concatenate([rng.choice(body, x.size - n_t) if body.size and n_t < x.size else
                                np.zeros(0, np.int64),
                                sampler(n_t, rng)])
        try:
            _, _, d, _ = _scan(synth, s_min, min_tail, max_candidates, min_decades)
        except StatsError:
            continue
        done += 1
        exceed += d >= ks
    p = exceed / done if done else float("nan")
    return PowerLawFit(alpha, smin, ks, p, n_tail, s_max)


# --- regime comparison ------------------------------------------------------------

P_PLAUSIBLE = 0.1
MIN_DECADES = 1.0


@dataclass
class RegimeRow:
    rate: float
    fit: PowerLawFit
    destroyed: bool
    reason: str = ""


def compare_regimes(fits):
    """Rows ordered by plausibility; a power law counts as destroyed when p < 0.1 or the
    fitted tail spans less than one decade. ``fits`` maps rate -> PowerLawFit (or None
    when no fit was possible, which also counts as destroyed)."""
    rows = []
    for rate, fit in fits.items():
        if fit is None:
            rows.append(RegimeRow(rate, None, True, "no fit"))
            continue
        reasons = []
        if not fit.p_value >= P_PLAUSIBLE:
            reasons.append(f"p={fit.p_value:.3f}")
        if fit.decades < MIN_DECADES:
            reasons.append(f"support {fit.decades:.2f} decades")
        rows.append(RegimeRow(rate, fit, bool(reasons), ", ".join(reasons)))
    rows.sort(key=lambda r: -1.0 if r.fit is None or np.isnan(r.fit.p_value) else r.fit.p_value, reverse=True)
    return rows


def event_histogram(samples):
    return dict(sorted(Counter(int(s) for s in samples if s >= 1).items()))
