"""Fitting the model to post logs: reconstruction, residuals, MLE and grid search.

A post log is a list of (time, likes) pairs.  With a decay rate gamma the
latent popularity just before each post is rebuilt from the likes of earlier
posts; dividing each post's likes by that popularity raised to theta leaves
residuals that should look like i.i.d. draws of beta * V_hat.  The pair
(gamma, theta) is chosen to make the residuals of all influencers fit their
best candidate law as closely as possible in Kolmogorov distance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from . import _kernels
from .model import (ExponentialJump, JumpDistribution, LognormalJump, ParetoJump,
                    PointMassJump, unit_mean_params)

FIT_FAMILIES = ("lognormal", "exponential", "powerlaw")
MIN_FIT_SAMPLES = 30
MIN_BIN_COUNT = 10
PHI_GRID = tuple(np.round(np.arange(0.0, 1.01, 0.1), 10))

# Ten influencer strengths spread over one decade.
DEFAULT_BETAS = (0.424, 0.207, 0.871, 1.194, 1.953, 0.5, 0.7, 1.0, 1.5, 0.3)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostRecord:
    timestamp: float
    likes: float


@dataclass(eq=False)
class PostDataset:
    """Posts of one influencer, sorted by time (days)."""

    influencer_id: str
    times: np.ndarray
    likes: np.ndarray
    topic: str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.likes = np.asarray(self.likes, dtype=float)
        if self.times.shape != self.likes.shape or self.times.ndim != 1:
            raise ValueError("times and likes must be 1-d arrays of equal length")
        if np.any(np.diff(self.times) < 0):
            raise ValueError(f"timestamps of {self.influencer_id!r} are not sorted")
        if np.any(self.likes < 0):
            raise ValueError("likes must be >= 0")

    @classmethod
    def from_records(cls, influencer_id, records: Iterable[PostRecord], topic=None):
        recs = list(records)
        return cls(influencer_id, np.array([r.timestamp for r in recs]),
                   np.array([r.likes for r in recs]), topic)

    def records(self) -> list[PostRecord]:
        return [PostRecord(float(t), float(v)) for t, v in zip(self.times, self.likes)]

    def __len__(self):
        return self.times.size


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp() / 86400.0


def read_posts_csv(path) -> list[PostDataset]:
    """Read ``influencer_id, timestamp, likes`` rows (ISO 8601 or day numbers).

    Rows are sorted by time within each influencer.
    """
    groups: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"influencer_id", "timestamp", "likes"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"posts CSV needs columns {sorted(need)}")
        for row in reader:
            groups.setdefault(row["influencer_id"], []).append(
                (_parse_time(row["timestamp"]), float(row["likes"])))
    out = []
    for iid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        arr = np.array(rows)
        out.append(PostDataset(iid, arr[:, 0], arr[:, 1]))
    return out


def write_posts_csv(datasets: Sequence[PostDataset], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["influencer_id", "timestamp", "likes"])
        for ds in datasets:
            for t, v in zip(ds.times, ds.likes):
                w.writerow([ds.influencer_id, repr(float(t)), repr(float(v))])


# ---------------------------------------------------------------------------
# Reconstruction and residuals
# ---------------------------------------------------------------------------


def reconstruct_popularity(ds: PostDataset, gamma: float) -> np.ndarray:
    """Popularity just before each post, from the likes of earlier posts."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return _kernels.popularity_before(ds.times, ds.likes, float(gamma))


def normalize_series(x, v) -> tuple[np.ndarray, np.ndarray]:
    """Divide each series by its own maximum."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    mx, mv = np.max(x), np.max(v)
    if not (mx > 0 and mv > 0):
        raise ValueError("cannot normalize an all-zero series")
    return x / mx, v / mv


@dataclass
class BinnedProfile:
    edges: np.ndarray
    means: np.ndarray
    counts: np.ndarray

    @property
    def populated(self) -> np.ndarray:
        return ~np.isnan(self.means)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def _bin_index(x, n_bins):
    return np.clip(np.floor(np.asarray(x) * n_bins).astype(int), 0, n_bins - 1)


def binned_conditional_mean(x, v, n_bins: int = 10, min_count: int = 1) -> BinnedProfile:
    """Mean of v within equal-width bins of x on [0, 1]; thin bins are nan."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    idx = _bin_index(x, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=v, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts >= max(min_count, 1), sums / counts, np.nan)
    return BinnedProfile(np.linspace(0.0, 1.0, n_bins + 1), means, counts)


@dataclass
class Residuals:
    values: np.ndarray
    skipped_zero_state: int
    skipped_zero_likes: int

    def __len__(self):
        return self.values.size


def compute_residuals(ds: PostDataset, gamma: float, theta: float,
                      popularity: np.ndarray | None = None) -> Residuals:
    """likes_k / X(t_k-)**theta, skipping posts where either factor is zero.

    The small additive constant of the jump mean is neglected here.  With
    theta = 0 the divisor is 1 and zero popularity is kept.
    """
    x = reconstruct_popularity(ds, gamma) if popularity is None else popularity
    zero_x = (x <= 0) if theta > 0 else np.zeros(x.shape, dtype=bool)
    zero_l = (ds.likes <= 0) & ~zero_x
    keep = ~(zero_x | zero_l)
    vals = ds.likes[keep] / np.power(x[keep], theta)
    if vals.size < 2:
        raise ValueError(f"{ds.influencer_id!r}: fewer than 2 usable residuals")
    return Residuals(vals, int(zero_x.sum()), int(zero_l.sum()))


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


class EmpiricalCDF:
    """Right-continuous step CDF of a sample, with left limits."""

    def __init__(self, sample):
        self.x = np.sort(np.asarray(sample, dtype=float))
        self.n = self.x.size

    def __call__(self, v):
        return np.searchsorted(self.x, v, side="right") / self.n

    def left(self, v):
        return np.searchsorted(self.x, v, side="left") / self.n


def kolmogorov_distance(sample, cdf: Callable, cdf_left: Callable | None = None) -> float:
    """Exact sup |F_n - F| for the empirical CDF F_n of ``sample``.

    The supremum is attained at sample points, comparing F with the upper
    and lower steps of F_n there.  For a discontinuous F pass its left limit
    as ``cdf_left`` (taken from ``cdf.left`` when available).
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    if cdf_left is None:
        cdf_left = getattr(cdf, "left", cdf)
    # with ties only the outermost steps matter
    hi_idx = np.searchsorted(x, x, side="right")
    lo_idx = np.searchsorted(x, x, side="left")
    f = np.asarray(cdf(x), dtype=float)
    fl = np.asarray(cdf_left(x), dtype=float)
    d_plus = np.max(hi_idx / n - f)
    d_minus = np.max(fl - lo_idx / n)
    return float(min(1.0, max(d_plus, d_minus, 0.0)))


def _dist_left(dist: JumpDistribution):
    if isinstance(dist, PointMassJump):
        return lambda v: np.where(np.asarray(v) > dist.value, 1.0, 0.0)
    return dist.cdf


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    family: str
    params: dict
    beta_hat: float
    cv_hat: float
    loglik: float
    kappa: float
    n: int
    dist: JumpDistribution = field(repr=False)

    def as_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "beta_hat": self.beta_hat,
                "cv_hat": self.cv_hat, "loglik": self.loglik, "kappa": self.kappa, "n": self.n}


def _fit_dist(r: np.ndarray, family: str) -> tuple[JumpDistribution, float]:
    n = r.size
    if family == "lognormal":
        lr = np.log(r)
        m = float(lr.mean())
        s = float(lr.std())
        if s <= 1e-12 * max(1.0, abs(m)):
            return PointMassJump(float(np.median(r))), math.inf
        ll = -lr.sum() - n * math.log(s * math.sqrt(2 * math.pi)) - n / 2.0
        return LognormalJump(m, s), float(ll)
    if family == "exponential":
        rate = 1.0 / float(r.mean())
        return ExponentialJump(rate), float(n * math.log(rate) - rate * r.sum())
    if family == "powerlaw":
        xmin = float(r.min())
        slog = float(np.log(r / xmin).sum())
        if slog <= 0:
            return PointMassJump(xmin), math.inf
        a = n / slog
        ll = n * math.log(a) + n * a * math.log(xmin) - (a + 1.0) * float(np.log(r).sum())
        return ParetoJump(a + 1.0, xmin), float(ll)
    raise ValueError(f"unknown family {family!r}; expected one of {FIT_FAMILIES}")


def mle_fit(residuals, family: str = "lognormal") -> FitResult:
    """Maximum-likelihood fit of one family, scored by Kolmogorov distance."""
    r = np.asarray(getattr(residuals, "values", residuals), dtype=float)
    if r.size < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} residuals, got {r.size}")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("residuals must be positive and finite")
    dist, ll = _fit_dist(r, family)
    kappa = kolmogorov_distance(r, dist.cdf, _dist_left(dist))
    return FitResult(family, dist.params(), float(dist.mean()), float(dist.cv()), ll, kappa,
                     int(r.size), dist)


def fit_families(residuals, families: Sequence[str] = FIT_FAMILIES) -> dict[str, FitResult]:
    return {fam: mle_fit(residuals, fam) for fam in families}


def best_fit(residuals, families: Sequence[str] = FIT_FAMILIES) -> tuple[FitResult, dict]:
    """Fit every family and keep the one closest in Kolmogorov distance."""
    fits = fit_families(residuals, families)
    best = min(fits.values(), key=lambda f: (f.kappa, families.index(f.family)))
    return best, fits


def fit_report(ds: PostDataset, gamma: float, theta: float,
               families: Sequence[str] = FIT_FAMILIES) -> dict:
    res = compute_residuals(ds, gamma, theta)
    best, fits = best_fit(res, families)
    return {
        "influencer_id": ds.influencer_id,
        "gamma": gamma,
        "theta": theta,
        "n_residuals": len(res),
        "skipped_zero_state": res.skipped_zero_state,
        "skipped_zero_likes": res.skipped_zero_likes,
        "chosen_family": best.family,
        "beta_hat": best.beta_hat,
        "cv_hat": best.cv_hat,
        "kappa": {f: r.kappa for f, r in fits.items()},
        "fits": {f: r.as_dict() for f, r in fits.items()},
    }


# ---------------------------------------------------------------------------
# Grid search over (gamma, theta)
# ---------------------------------------------------------------------------


@dataclass
class GridSearchResult:
    gamma: float
    theta: float
    gammas: np.ndarray
    thetas: np.ndarray
    surface: np.ndarray  # kappa sum, shape (len(gammas), len(thetas))
    per_influencer: np.ndarray  # best kappa, shape (G, T, n_influencers)

    def rows(self):
        for a, g in enumerate(self.gammas):
            for b, t in enumerate(self.thetas):
                yield float(g), float(t), float(self.surface[a, b])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "theta", "kappa_sum"])
            for g, t, k in self.rows():
                w.writerow([repr(g), repr(t), repr(k)])


def grid_search_system_params(datasets: Sequence[PostDataset], gamma_grid, theta_grid,
                              families: Sequence[str] = FIT_FAMILIES) -> GridSearchResult:
    """Minimize the summed best-family Kolmogorov distance over a (gamma, theta) grid."""
    gammas = np.asarray(list(gamma_grid), dtype=float)
    thetas = np.asarray(list(theta_grid), dtype=float)
    if gammas.size == 0 or thetas.size == 0:
        raise ValueError("grids must be nonempty")
    if not datasets:
        raise ValueError("no datasets")
    per = np.zeros((gammas.size, thetas.size, len(datasets)))
    for a, g in enumerate(gammas):
        for k, ds in enumerate(datasets):
            x = reconstruct_popularity(ds, g)
            for b, th in enumerate(thetas):
                res = compute_residuals(ds, g, th, popularity=x)
                per[a, b, k] = best_fit(res, families)[0].kappa
    surface = per.sum(axis=2)
    a, b = np.unravel_index(np.argmin(surface), surface.shape)
    return GridSearchResult(float(gammas[a]), float(thetas[b]), gammas, thetas, surface, per)


# ---------------------------------------------------------------------------
# Posting process
# ---------------------------------------------------------------------------


def dispersion_index(ds: PostDataset, window_days: float = 7.0) -> float:
    """Variance over mean of post counts in consecutive windows from the first post.

    A trailing partial window is dropped; nan when no posts fall in the
    windows.
    """
    if len(ds) == 0:
        raise ValueError("no posts")
    span = ds.times[-1] - ds.times[0]
    n_win = int(math.floor(span / window_days + 1e-12))
    if n_win < 2:
        raise ValueError("observation span shorter than two windows")
    idx = np.floor((ds.times - ds.times[0]) / window_days).astype(int)
    counts = np.bincount(idx[idx < n_win], minlength=n_win)
    m = counts.mean()
    if m == 0:
        return math.nan
    return float(counts.var() / m)


@dataclass
class IntensityProfile:
    edges: np.ndarray
    rates: np.ndarray
    counts: np.ndarray
    x_means: np.ndarray
    lambda0: float = math.nan
    lambda1: float = math.nan
    phi: float = math.nan
    fitted: bool = False


def _intensity_mle(xb, xa, gaps, gamma, phi):
    """Max log-likelihood of posting intensity a + b x**phi, (a, b) >= 0.

    ``xb`` are states just before posts 2..n, ``xa`` states just after posts
    1..n-1 and ``gaps`` the times between them.  The compensator integral
    over a decaying segment has a closed form.
    """
    T = float(gaps.sum())
    if phi == 0.0:
        return len(xb) * math.log(len(xb) / T) - len(xb), np.array([len(xb) / T, 0.0])
    s = np.power(xb, phi)
    A = float(np.sum(np.power(xa, phi) * -np.expm1(-gamma * phi * gaps)) / (gamma * phi))

    def nll(p):
        lam = p[0] + p[1] * s
        if np.any(lam <= 0):
            return np.inf, np.zeros(2)
        g0 = -np.sum(1.0 / lam) + T
        g1 = -np.sum(s / lam) + A
        return -np.sum(np.log(lam)) + p[0] * T + p[1] * A, np.array([g0, g1])

    n = len(xb)
    starts = [np.array([0.5 * n / T, 0.5 * n / A]), np.array([n / T, 1e-9]),
              np.array([1e-9 * n / T, n / A])]
    res = min((optimize.minimize(nll, x0, jac=True, method="L-BFGS-B",
                                 bounds=[(0.0, None), (0.0, None)]) for x0 in starts),
              key=lambda r: r.fun)
    return -float(res.fun), np.asarray(res.x, dtype=float)


def estimate_posting_intensity(ds: PostDataset, gamma: float, n_bins: int = 10,
                               min_count: int = MIN_BIN_COUNT,
                               phi_grid: Sequence[float] = PHI_GRID) -> IntensityProfile:
    """Posting rate as a function of normalized popularity.

    Popularity decays deterministically between posts, so the time it
    spends in each bin is known exactly.  The bin rate is the number of
    posts made from that bin (popularity just before the post) divided by
    this exposure.  lambda0 + lambda1 * x**phi is fitted by maximizing the
    exact point-process likelihood at each phi of the grid, and phi is
    chosen by BIC so that a constant rate wins unless feedback is clearly
    supported.  The fit is skipped when fewer than two bins are populated.
    The fitted lambda1 refers to normalized popularity.
    """
    if len(ds) < 2:
        raise ValueError("need at least 2 posts")
    x_before = reconstruct_popularity(ds, gamma)
    x_after = x_before + ds.likes
    top = x_after.max()
    if not top > 0:
        raise ValueError("popularity is identically zero")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    occ = np.zeros(n_bins + 1)
    _kernels.occupation(ds.times, x_after / top, 0.0, float(gamma), float(ds.times[0]),
                        float(ds.times[-1]), np.log(edges[1:]), occ)
    exposure = occ[:n_bins]  # underflow slot is the first bin [0, 1/n_bins)
    xs = x_before[1:] / top
    gaps = np.diff(ds.times)
    idx = _bin_index(xs, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    x_sum = np.bincount(idx, weights=xs, minlength=n_bins)
    ok = (counts >= max(min_count, 1)) & (exposure > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(ok, counts / exposure, np.nan)
        x_means = np.where(ok, x_sum / counts, np.nan)
    prof = IntensityProfile(edges, rates, counts, x_means)
    if np.count_nonzero(~np.isnan(rates)) < 2:
        return prof
    xb = x_before[1:] / top
    xa = x_after[:-1] / top
    # BIC: the feedback term adds two parameters (lambda1, phi)
    penalty = math.log(len(xb))
    best = None
    for phi in phi_grid:
        ll, coef = _intensity_mle(xb, xa, gaps, float(gamma), float(phi))
        score = ll - (penalty if phi > 0 else 0.0)
        if best is None or score > best[0] + 1e-9 * max(1.0, abs(best[0])):
            best = (score, float(phi), coef)
    prof.lambda0, prof.lambda1 = float(best[2][0]), float(best[2][1])
    prof.phi = best[1]
    prof.fitted = True
    return prof


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


def posting_times(rng: np.random.Generator, n_posts: int, rate: float,
                  active_days: float | None = None, pause_days: float = 0.0) -> np.ndarray:
    """Poisson posting at ``rate``, optionally interrupted by pauses.

    With ``pause_days > 0`` active periods (exponential, mean
    ``active_days``) alternate with silent periods drawn uniformly between
    half and one and a half times ``pause_days``.
    """
    if pause_days <= 0:
        return np.cumsum(rng.standard_exponential(n_posts) / rate)
    chunks = []
    t = 0.0
    count = 0
    while count < n_posts:
        length = rng.exponential(active_days)
        k = rng.poisson(rate * length)
        chunks.append(t + np.sort(rng.uniform(0.0, length, k)))
        count += k
        t += length + rng.uniform(0.5 * pause_days, 1.5 * pause_days)
    return np.concatenate(chunks)[:n_posts]


def synthetic_corpus(gamma: float = 1 / 128, theta: float = 0.7, epsilon: float = 0.01,
                     betas: Sequence[float] = DEFAULT_BETAS, cv: float = 0.5,
                     family: str = "lognormal", n_posts: int = 10_000, rate: float = 4.0,
                     active_days: float = 60.0, pause_days: float = 730.0,
                     seed: int = 0) -> list[PostDataset]:
    """Post logs whose likes follow the model exactly.

    Post k adds (epsilon + beta * X^theta) * V_hat likes to the popularity,
    with X decayed since the previous post.  Posting alternates between
    active stretches and long pauses, which makes the decay rate visible in
    the data.  Likes are kept as real numbers.
    """
    vhat = unit_mean_params(family, cv)
    out = []
    for i, beta in enumerate(betas):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        t = posting_times(rng, n_posts, rate, active_days, pause_days)
        v = np.asarray(vhat.sample(rng, t.size), dtype=float)
        likes = _kernels.model_likes(t, gamma, theta, epsilon, beta, v)
        out.append(PostDataset(f"inf{i + 1}", t, likes))
    return out


def dataset_from_log(log, influencer_id=None) -> PostDataset:
    """Posts and their jump sizes from a simulated event log."""
    sel = log.kinds == _kernels.INTERNAL
    iid = str(log.influencer_id if influencer_id is None else influencer_id)
    return PostDataset(iid, log.times[sel], log.jumps[sel])


def nearest_grid_point(grid, value) -> float:
    grid = np.asarray(grid, dtype=float)
    return float(grid[np.argmin(np.abs(grid - value))])
