"""Monte Carlo estimation of the harmonic function V and its diagnostics.

V(x) = Delta(x) - E_x[Delta(X(tau))] is the positive function whose Doob
transform realizes the walk conditioned to stay ordered forever. It is
approached through the truncations V_n(x) = Delta(x) - E_x[Delta(X(tau))
1{tau <= n}], which are strictly positive and iterate one step at a time
under the killed transition kernel.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import engine
from .engine import EstimateCI, WalkConfig
from .geometry import in_weyl, vandermonde

__all__ = [
    "VEstimate",
    "estimate_vn",
    "estimate_v",
    "harmonicity_residual",
    "scaling_check",
    "snap_to_lattice",
]

# seed offset separating inner (nested) streams from outer ones
_INNER_SEED_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class VEstimate:
    x: tuple
    n_used: int
    value: EstimateCI
    tail_diagnostic: float  # |change| over the last doubling, nan if untracked
    converged: bool = True

    def __post_init__(self):
        if self.value.n_samples < 1:
            raise ValueError("estimate needs at least one sample")
        if self.n_used < 0:
            raise ValueError("truncation horizon must be >= 0")


def _vn_over_schedule(cfg: WalkConfig, horizons, paths, threads=None,
                      block_size=engine.BLOCK_SIZE):
    """V_n estimates at every horizon from one shared batch of paths.

    Each path is run to min(tau, max horizon); the stopped Vandermonde
    contributes to every horizon >= tau, so all truncations are read off a
    single simulation pass.
    """
    horizons = sorted(int(h) for h in horizons)
    if horizons[0] < 1:
        raise ValueError("horizons must be >= 1")
    max_h = horizons[-1]
    n_blocks, sizes = engine._blocks_for(paths, block_size)

    def work(b):
        tau, delta, _ = engine._simulate_block(cfg, max_h, b, sizes[b])
        sums = np.empty((len(horizons), 2))
        for i, h in enumerate(horizons):
            contrib = np.where(tau <= h, delta, 0.0)
            sums[i] = contrib.sum(), (contrib ** 2).sum()
        return sums

    totals = sum(engine._map_blocks(work, n_blocks, threads))
    delta_x = float(vandermonde(cfg.start))
    out = []
    for i, h in enumerate(horizons):
        mean_stopped = totals[i, 0] / paths
        var = max(totals[i, 1] / paths - mean_stopped ** 2, 0.0)
        est = EstimateCI(mean=delta_x - mean_stopped,
                         stderr=math.sqrt(var / paths), n_samples=paths)
        out.append((h, est))
    return out


def estimate_vn(cfg: WalkConfig, n: int, paths: int, threads=None) -> VEstimate:
    """Estimate the truncation V_n(x) by Monte Carlo.

    n = 0 returns Delta(x) exactly: no exit can have happened yet, so the
    stopped term vanishes.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    delta_x = float(vandermonde(cfg.start))
    if n == 0:
        value = EstimateCI(mean=delta_x, stderr=0.0, n_samples=paths)
        return VEstimate(x=tuple(cfg.start), n_used=0, value=value,
                         tail_diagnostic=math.nan)
    (_, est), = _vn_over_schedule(cfg, [n], paths, threads)
    return VEstimate(x=tuple(cfg.start), n_used=n, value=est,
                     tail_diagnostic=math.nan)


def estimate_v(cfg: WalkConfig, horizon_schedule, paths: int,
               threads=None) -> VEstimate:
    """Estimate V(x) as V_{n_max} over a doubling schedule of horizons.

    The tail diagnostic is the absolute change of the estimate over the last
    schedule step. If it exceeds 3 stderr the estimate is flagged as not
    converged; that is a report, not a failure, since heavy-tailed step laws
    can converge arbitrarily slowly.
    """
    schedule = sorted(int(h) for h in horizon_schedule)
    if not schedule:
        raise ValueError("horizon schedule must be nonempty")
    if len(set(schedule)) != len(schedule):
        raise ValueError("horizon schedule must be strictly increasing")
    per_horizon = _vn_over_schedule(cfg, schedule, paths, threads)
    _, final = per_horizon[-1]
    if len(per_horizon) >= 2:
        tail = abs(final.mean - per_horizon[-2][1].mean)
    else:
        tail = math.nan
    converged = not (tail > 3.0 * final.stderr) if not math.isnan(tail) else True
    return VEstimate(x=tuple(cfg.start), n_used=schedule[-1], value=final,
                     tail_diagnostic=tail, converged=converged)


def harmonicity_residual(cfg: WalkConfig, n: int, paths: int,
                         inner_paths: int = 512, threads=None) -> EstimateCI:
    """Estimate E_x[1{tau > 1} V_n(X(1))] - V_{n+1}(x) (zero in theory).

    The outer expectation is sampled with `paths` first steps; each surviving
    configuration gets a nested V_n estimate. All nested estimates share one
    inner seed, so the inner noise is common across outer points and largely
    cancels in the difference. The nested estimates must stay independent of
    the outer step draw: reusing the outer path's own continuation would make
    the residual vanish identically (it telescopes to the Vandermonde
    martingale increment) and test nothing.
    """
    if paths < 1 or inner_paths < 1:
        raise ValueError("paths and inner_paths must be >= 1")
    rng = np.random.Generator(np.random.Philox(
        key=np.array([cfg.master_seed & 0xFFFFFFFFFFFFFFFF, 2 ** 63],
                     dtype=np.uint64)))
    steps = cfg.dist.sample_array(rng, (paths, cfg.k))
    firsts = np.asarray(cfg.start, dtype=float) + steps
    inner_seed = (cfg.master_seed ^ _INNER_SEED_SALT) & 0x7FFFFFFFFFFFFFFF

    term1 = np.zeros(paths)
    for b in range(paths):
        y = tuple(firsts[b].tolist())
        if not in_weyl(y):
            continue
        if cfg.dist.is_lattice:
            y = tuple(int(round(c)) for c in y)
        inner_cfg = replace(cfg, start=y, master_seed=inner_seed)
        term1[b] = estimate_vn(inner_cfg, n, inner_paths, threads).value.mean

    mean1 = float(term1.mean())
    se1 = float(term1.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0

    ref_cfg = replace(cfg, master_seed=inner_seed)
    ref = estimate_vn(ref_cfg, n + 1, paths * inner_paths, threads).value

    residual = mean1 - ref.mean
    stderr = math.hypot(se1, ref.stderr)
    return EstimateCI(mean=residual, stderr=stderr, n_samples=paths)


def snap_to_lattice(x, k: int):
    """Nearest integer configuration in W, ties in ordering broken upward."""
    snapped = [int(math.floor(c + 0.5)) for c in x]
    for i in range(1, k):
        if snapped[i] <= snapped[i - 1]:
            snapped[i] = snapped[i - 1] + 1
    return tuple(snapped)


def scaling_check(cfg: WalkConfig, x_unit, n_list, paths: int, threads=None):
    """Tabulate n^{-k(k-1)/4} V-hat(sqrt(n) x_unit) against Delta(x_unit).

    The scaled estimate should approach Delta(x_unit) as n grows. Returns a
    dict with per-n rows (n, start used, scaled value, scaled stderr, ratio)
    plus a trend verdict over the last two doublings. A single-entry n_list
    skips the trend test with a warning.
    """
    if not in_weyl(x_unit):
        raise ValueError("x_unit must lie in the Weyl chamber")
    n_list = sorted(int(n) for n in n_list)
    k = cfg.k
    power = k * (k - 1) / 4.0
    delta_unit = float(vandermonde(x_unit))
    rows = []
    for n in n_list:
        scaled_x = [math.sqrt(n) * float(c) for c in x_unit]
        if cfg.dist.is_lattice:
            start = snap_to_lattice(scaled_x, k)
        else:
            start = tuple(scaled_x)
        run_cfg = replace(cfg, start=start)
        schedule = [max(1, n // 2), n] if n > 1 else [1]
        est = estimate_v(run_cfg, schedule, paths, threads)
        scale = n ** (-power)
        rows.append({
            "n": n,
            "start": start,
            "scaled_value": scale * est.value.mean,
            "scaled_stderr": scale * est.value.stderr,
            "ratio": scale * est.value.mean / delta_unit,
        })
    warning = None
    if len(rows) >= 3:
        r = [abs(row["ratio"] - 1.0) for row in rows[-3:]]
        trend_ok = r[2] <= r[1] + rows[-1]["scaled_stderr"] / delta_unit
        trend_ok = trend_ok and r[2] <= r[0]
    elif len(rows) == 2:
        trend_ok = abs(rows[1]["ratio"] - 1.0) <= abs(rows[0]["ratio"] - 1.0)
    else:
        trend_ok = True
        warning = "single horizon: trend test skipped"
    return {"rows": rows, "delta_unit": delta_unit, "trend_ok": trend_ok,
            "warning": warning}
