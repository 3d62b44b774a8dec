"""Survival-tail fitting, the limit constant K, and endpoint-law diagnostics.

The ordered walk survives past time n with probability ~ K V(x) n^{-k(k-1)/4}
and, conditioned on survival, its rescaled endpoint X(n)/sqrt(n) has density
proportional to exp(-|y|^2/2) Delta(y) on the chamber. This module fits the
exponent and prefactor from survival curves, evaluates K and the endpoint
normalization Z1 by quadrature, measures goodness of fit of endpoint samples,
and provides a local-CLT deviation diagnostic for lattice step laws.
"""

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np
from scipy import integrate, stats

from .distributions import StepDistribution, UnsupportedOperationError
from .geometry import in_weyl

__all__ = [
    "TailFit",
    "tail_fit",
    "constant_K",
    "z1_constant",
    "endpoint_density_distance",
    "sample_endpoint_limit",
    "local_clt_deviation",
    "walk_pmf",
]

_CACHE_PATH = os.path.join(
    os.environ.get("XDG_CACHE_HOME", os.path.expanduser("~/.cache")),
    "ordwalk", "constants.json",
)


# ---------------------------------------------------------------------------
# survival-tail fitting

@dataclass(frozen=True)
class TailFit:
    exponent: float
    prefactor: float
    r_squared: float
    n_range: tuple
    cut_sensitivity: float = math.nan  # exponent shift: top-half vs full fit
    dropped: int = 0

    def __post_init__(self):
        if self.n_range[0] >= self.n_range[1]:
            raise ValueError("n_range must be increasing")
        if not 0.0 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError(f"r_squared out of range: {self.r_squared}")


def _wls_loglog(ns, ps, ses):
    """Weighted LS of log p on log n; returns slope, intercept, r^2."""
    x = np.log(ns)
    y = np.log(ps)
    # delta method: var(log p) ~ (se/p)^2; exact points get the best weight
    rel = np.where(ps > 0, ses / ps, np.inf)
    if np.all(rel == 0):
        w = np.ones_like(x)
    else:
        floor = max(rel[rel > 0].min() if (rel > 0).any() else 1.0, 1e-12)
        w = 1.0 / np.maximum(rel, floor) ** 2
    W = w.sum()
    xb = (w * x).sum() / W
    yb = (w * y).sum() / W
    sxx = (w * (x - xb) ** 2).sum()
    sxy = (w * (x - xb) * (y - yb)).sum()
    slope = sxy / sxx
    intercept = yb - slope * xb
    resid = y - (intercept + slope * x)
    sst = (w * (y - yb) ** 2).sum()
    r2 = 1.0 - (w * resid ** 2).sum() / sst if sst > 0 else 1.0
    return slope, intercept, min(max(r2, 0.0), 1.0)


def tail_fit(survival, sigma: float = 1.0, top_fraction: float = 0.5) -> TailFit:
    """Fit P(tau > n) ~ A n^p from a survival curve.

    `survival` is a list of (n, estimate) pairs where estimate is either a
    probability or an object with .mean/.stderr. Time is rescaled by sigma^2
    so that non-unit-variance step laws compare against the unit-variance
    limit theorem. Only the top `top_fraction` of the horizon ladder enters
    the headline fit (finite-n bias lives at small n); the shift of the
    exponent against the all-points fit is reported as cut sensitivity.
    """
    ns, ps, ses = [], [], []
    dropped = 0
    for n, est in survival:
        p = getattr(est, "mean", est)
        se = getattr(est, "stderr", 0.0)
        if p <= 0:
            dropped += 1
            continue
        ns.append(float(n) * sigma ** 2)
        ps.append(float(p))
        ses.append(float(se))
    if len(ns) < 2:
        raise ValueError(f"need >= 2 usable points, have {len(ns)} "
                         f"({dropped} dropped at P<=0)")
    order = np.argsort(ns)
    ns = np.asarray(ns)[order]
    ps = np.asarray(ps)[order]
    ses = np.asarray(ses)[order]
    cut = max(0, min(len(ns) - 2, int(len(ns) * (1.0 - top_fraction))))
    slope, intercept, r2 = _wls_loglog(ns[cut:], ps[cut:], ses[cut:])
    sens = math.nan
    if cut > 0:
        slope_all, _, _ = _wls_loglog(ns, ps, ses)
        sens = abs(slope - slope_all)
    return TailFit(exponent=float(slope), prefactor=float(math.exp(intercept)),
                   r_squared=float(r2), n_range=(float(ns[cut]), float(ns[-1])),
                   cut_sensitivity=sens, dropped=dropped)


# ---------------------------------------------------------------------------
# the constant K and the endpoint normalization Z1
#
# K = prod_{l=1}^{k-1} (1/l!) * (2pi)^{-k/2} * integral_W exp(-|y|^2/2) Delta(y) dy.
# Substituting y = v*1 + prefix sums c(g) of the gap vector g in (0,inf)^{k-1}
# and integrating the center v out analytically leaves
#   integral_W ... dy = sqrt(2pi/k) * int_{g>0} Delta(c(g)) exp(-Q(g)/2) dg,
# with Q(g) = sum_i c_i^2 - (sum_i c_i)^2 / k. Two independent quadrature
# schemes (adaptive and tensor Gauss-Legendre on a mapped grid) must agree.

def _gap_integrand(k):
    pairs = list(combinations(range(k), 2))

    def f(*gaps):
        c = np.concatenate([[np.zeros_like(np.asarray(gaps[0], dtype=float))],
                            np.cumsum(np.asarray(gaps, dtype=float), axis=0)])
        delta = np.ones_like(c[0])
        for i, j in pairs:
            delta = delta * (c[j] - c[i])
        s = c.sum(axis=0)
        q = (c ** 2).sum(axis=0) - s ** 2 / k
        return delta * np.exp(-q / 2.0)

    return f


def _gap_integral_adaptive(k):
    f = _gap_integrand(k)
    ranges = [(0.0, np.inf)] * (k - 1)
    val, _ = integrate.nquad(f, ranges, opts={"epsabs": 1e-10, "epsrel": 1e-10})
    return val


def _gap_integral_gauss(k, nodes: int = 96):
    """Tensor Gauss-Legendre after mapping (0,1) -> (0,inf) via g=t/(1-t)."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    g = t / (1.0 - t)
    jac = w / (1.0 - t) ** 2
    grids = np.meshgrid(*([g] * (k - 1)), indexing="ij")
    vals = _gap_integrand(k)(*grids)
    for axis in range(k - 1):
        shape = [1] * (k - 1)
        shape[axis] = nodes
        vals = vals * jac.reshape(shape)
    return float(vals.sum())


def _load_cache(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return {}


def _store_cache(path, data):
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)
    except OSError:
        pass  # cache is an optimization, never a failure


def _constants(k: int, cache_path=None):
    if k not in (2, 3, 4):
        raise UnsupportedOperationError(f"constant K supports k in 2..4, got {k}")
    path = cache_path if cache_path is not None else _CACHE_PATH
    cache = _load_cache(path)
    key = str(k)
    if key in cache:
        return cache[key]["K"], cache[key]["Z1"], cache[key]["scheme_gap"]
    adaptive = _gap_integral_adaptive(k)
    gauss = _gap_integral_gauss(k, nodes=64 if k == 4 else 96)
    gap = abs(adaptive - gauss) / abs(adaptive)
    chamber_integral = math.sqrt(2.0 * math.pi / k) * adaptive
    fact = math.prod(math.factorial(l) for l in range(1, k))
    K = chamber_integral / ((2.0 * math.pi) ** (k / 2.0) * fact)
    Z1 = chamber_integral
    cache[key] = {"K": K, "Z1": Z1, "scheme_gap": gap}
    _store_cache(path, cache)
    return K, Z1, gap


def constant_K(k: int, cache_path=None) -> float:
    """The limit constant in n^{k(k-1)/4} P_x(tau > n) -> K V(x)."""
    K, _, _ = _constants(k, cache_path)
    return K


def z1_constant(k: int, cache_path=None) -> float:
    """Normalization of the endpoint density exp(-|y|^2/2) Delta(y) on W."""
    _, Z1, _ = _constants(k, cache_path)
    return Z1


def quadrature_scheme_gap(k: int, cache_path=None) -> float:
    """Relative disagreement between the two independent quadrature schemes."""
    _, _, gap = _constants(k, cache_path)
    return gap


# ---------------------------------------------------------------------------
# endpoint goodness of fit

def _gap_density_grid(k, i, grid):
    """Unnormalized marginal density of gap i on `grid` (k = 2 or 3)."""
    f = _gap_integrand(k)
    if k == 2:
        return f(grid)
    if k == 3:
        other = 1 - i
        out = np.empty(len(grid))
        for idx, g in enumerate(grid):
            def slice_f(u, g=g):
                args = [0.0, 0.0]
                args[i] = g
                args[other] = u
                return f(*args)
            out[idx], _ = integrate.quad(slice_f, 0.0, np.inf)
        return out
    raise UnsupportedOperationError(f"gap marginals implemented for k <= 3, got {k}")


def _marginal_cdf(k, i, upper: float = 30.0, grid_points: int = 4001):
    grid = np.linspace(0.0, upper, grid_points)
    dens = _gap_density_grid(k, i, grid)
    cum = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cum /= cum[-1]

    def cdf(g):
        return np.interp(g, grid, cum)

    return cdf


def _binned_tv(samples, k, sigma, z1):
    """Total-variation distance on a fixed chamber grid.

    Bin width 0.25*sigma over [-4 sigma, 4 sigma]^k intersected with W;
    model bin masses by midpoint evaluation of the limit density. Mass of
    either measure outside the box is lumped into one overflow cell.
    """
    width = 0.25 * sigma
    edges = np.arange(-4.0 * sigma, 4.0 * sigma + width / 2, width)
    nbins = len(edges) - 1
    idx = np.clip(((samples - edges[0]) / width).astype(int), -1, nbins)
    inside = np.all((idx >= 0) & (idx < nbins), axis=1)
    counts = {}
    for row in idx[inside]:
        key = tuple(row.tolist())
        counts[key] = counts.get(key, 0) + 1
    n = len(samples)
    emp_out = float((~inside).sum()) / n

    centers = edges[:-1] + width / 2
    mesh = np.meshgrid(*([centers] * k), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    ordered = np.all(np.diff(pts, axis=1) > 0, axis=1)
    dens = np.zeros(len(pts))
    y = pts[ordered]
    delta = np.ones(len(y))
    for i, j in combinations(range(k), 2):
        delta *= y[:, j] - y[:, i]
    dens[ordered] = np.exp(-0.5 * (y ** 2).sum(axis=1)) * delta / z1
    model = dens * width ** k
    model_out = max(0.0, 1.0 - model.sum())

    tv = 0.5 * abs(emp_out - model_out)
    model_grid = model.reshape([nbins] * k)
    seen = set(counts)
    for key, c in counts.items():
        tv += 0.5 * abs(c / n - model_grid[key])
    flat_keys = np.argwhere(model_grid > 0)
    for key in map(tuple, flat_keys):
        if key not in seen:
            tv += 0.5 * model_grid[key]
    return float(tv)


def endpoint_density_distance(samples, k: int, sigma: float = 1.0,
                              z1=None, cache_path=None) -> dict:
    """Goodness of fit of rescaled survivor endpoints to the limit law.

    Per-gap one-sample KS statistics against numerically integrated gap
    marginals, a binned total-variation distance on a fixed chamber grid,
    and the sample gap means with standard errors. Samples are divided by
    sigma first so non-unit-variance laws compare against the same limit.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0 or samples.shape[1] != k:
        raise ValueError("samples must be a nonempty (m, k) array")
    if not np.all(np.diff(samples, axis=1) > 0):
        raise ValueError("all samples must lie in the Weyl chamber")
    y = samples / sigma
    if z1 is None:
        z1 = z1_constant(k, cache_path)
    gaps = np.diff(y, axis=1)
    ks = []
    for i in range(k - 1):
        cdf = _marginal_cdf(k, i)
        stat = stats.kstest(gaps[:, i], cdf).statistic
        ks.append(float(stat))
    m = len(y)
    report = {
        "n_samples": m,
        "ks_per_gap": ks,
        "gap_mean": gaps.mean(axis=0).tolist(),
        "gap_mean_stderr": (gaps.std(axis=0, ddof=1) / math.sqrt(m)).tolist()
        if m > 1 else [math.inf] * (k - 1),
        "tv": _binned_tv(y, k, 1.0, z1),
        "tv_underpowered": m < 1000,
    }
    return report


def sample_endpoint_limit(k: int, size: int, rng) -> np.ndarray:
    """Exact samples from the endpoint limit density (k=2 only).

    Factorizes as center v ~ N(0, 1/2) independent of gap g with density
    (g/2) exp(-g^2/4), sampled by CDF inversion g = 2 sqrt(-log u).
    """
    if k != 2:
        raise UnsupportedOperationError(
            "direct limit sampling implemented for k=2 only")
    u = rng.random(size)
    g = 2.0 * np.sqrt(-np.log(u))
    v = rng.normal(0.0, math.sqrt(0.5), size)
    return np.stack([v - g / 2.0, v + g / 2.0], axis=1)


# ---------------------------------------------------------------------------
# local CLT diagnostic

def walk_pmf(dist: StepDistribution, n: int, exact: bool = False):
    """PMF of the n-step single-walk sum by convolution doubling.

    Returns (sites, masses); masses are floats, or Fractions when exact=True.
    """
    if not dist.is_lattice:
        raise UnsupportedOperationError("walk_pmf needs a lattice law")
    if n < 1:
        raise ValueError("n must be >= 1")
    support = dist.support()
    lo, hi = support[0], support[-1]
    base = np.zeros(hi - lo + 1, dtype=object if exact else float)
    for s, mass in dist.masses.items():
        base[s - lo] = mass if exact else float(mass)

    def conv(a, b):
        if exact:
            out = np.zeros(len(a) + len(b) - 1, dtype=object)
            for i, ai in enumerate(a):
                if ai:
                    out[i:i + len(b)] += ai * b
            return out
        return np.convolve(a, b)

    result = None
    result_off = 0
    power = base
    power_off = lo
    m = n
    while m:
        if m & 1:
            if result is None:
                result, result_off = power, power_off
            else:
                result = conv(result, power)
                result_off += power_off
        m >>= 1
        if m:
            power = conv(power, power)
            power_off *= 2
    sites = np.arange(result_off, result_off + len(result))
    return sites, result


def local_clt_deviation(dist: StepDistribution, n: int) -> dict:
    """Sup-norm gap between the exact n-step PMF and its Gaussian profile.

    Reports sup over lattice sites s of
        | (sqrt(n) * sigma / alpha) * p_n(s) - phi(s / (sqrt(n) sigma)) |
    with alpha the lattice span and phi the standard normal density. Only
    aperiodic laws (support offset 0 modulo the span) are handled: on a
    shifted sublattice the site set moves with n and the plain comparison
    above is not well defined.
    """
    if not dist.is_lattice:
        raise UnsupportedOperationError("local CLT diagnostic needs a lattice law")
    if dist.lattice.offset != 0:
        raise UnsupportedOperationError(
            f"{dist.kind} lives on a shifted sublattice (offset "
            f"{dist.lattice.offset} mod {dist.lattice.span}); the plain "
            "local-CLT comparison applies to offset-0 supports only")
    if n < 2:
        raise ValueError("n must be >= 2")
    alpha = dist.lattice.span
    sigma = math.sqrt(dist.variance)
    sites, masses = walk_pmf(dist, n)
    keep = sites % alpha == 0
    sites = sites[keep]
    masses = masses[keep]
    scale = math.sqrt(n) * sigma
    gauss = np.exp(-0.5 * (sites / scale) ** 2) / math.sqrt(2.0 * math.pi)
    dev = np.abs(scale / alpha * masses - gauss)
    worst = int(np.argmax(dev))
    return {
        "n": n,
        "sup_deviation": float(dev[worst]),
        "argmax_site": int(sites[worst]),
        "total_mass": float(np.asarray(masses, dtype=float).sum()),
    }
