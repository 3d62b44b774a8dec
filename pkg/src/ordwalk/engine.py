"""Path simulation for k ordered walks and embarrassingly parallel batches.

Paths are grouped into fixed-size blocks; each block owns a private
counter-based stream keyed by (master_seed, block_index). Results are merged
in block order, so estimates are bit-identical at any thread count.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .distributions import RandomStream, StepDistribution
from .geometry import in_weyl, vandermonde

__all__ = [
    "WalkConfig",
    "StoppedOutcome",
    "EstimateCI",
    "PartialResultError",
    "run_path",
    "batch_survival",
    "batch_stopped_vandermonde",
    "conditioned_endpoints",
]

BLOCK_SIZE = 1 << 14


class PartialResultError(RuntimeError):
    """Rejection sampling fell short; carries the partial sample set."""

    def __init__(self, message, endpoints=None, acceptance_rate=None):
        super().__init__(message)
        self.endpoints = endpoints
        self.acceptance_rate = acceptance_rate


@dataclass(frozen=True)
class WalkConfig:
    k: int
    start: tuple
    dist: StepDistribution
    master_seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if len(self.start) != self.k:
            raise ValueError("start must have k coordinates")
        if not in_weyl(self.start):
            raise ValueError("start must lie strictly ordered in the Weyl chamber")
        if self.dist.is_lattice:
            if not all(float(c) == int(c) for c in self.start):
                raise ValueError("lattice walks need integer start coordinates")


@dataclass(frozen=True)
class StoppedOutcome:
    stop_time: int
    exited: bool
    terminal: tuple
    delta_at_stop: float


@dataclass(frozen=True)
class EstimateCI:
    mean: float
    stderr: float
    n_samples: int
    confidence: float = 0.95

    def halfwidth(self):
        from scipy.stats import norm

        return norm.ppf(0.5 + self.confidence / 2.0) * self.stderr

    def covers(self, value, n_sigma=None):
        width = self.halfwidth() if n_sigma is None else n_sigma * self.stderr
        return abs(self.mean - value) <= width


def run_path(cfg: WalkConfig, horizon: int, stream: RandomStream) -> StoppedOutcome:
    """Advance all k components stepwise until the order breaks or the horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    rng = stream.generator()
    pos = np.asarray(cfg.start, dtype=float)
    for n in range(1, horizon + 1):
        pos = pos + cfg.dist.sample_array(rng, cfg.k)
        stream.counter += 1
        if np.any(np.diff(pos) <= 0):
            term = tuple(pos.tolist())
            return StoppedOutcome(n, True, term, float(vandermonde(term)))
    term = tuple(pos.tolist())
    return StoppedOutcome(horizon, False, term, float(vandermonde(term)))


def _block_stream(cfg: WalkConfig, block_index: int) -> np.random.Generator:
    return RandomStream(cfg.master_seed, block_index).generator()


def _vandermonde_rows(pos: np.ndarray) -> np.ndarray:
    """Vandermonde product per row of a (m, k) position array."""
    k = pos.shape[1]
    out = np.ones(pos.shape[0])
    for i in range(k):
        for j in range(i + 1, k):
            out *= pos[:, j] - pos[:, i]
    return out


def _simulate_block(cfg: WalkConfig, horizon: int, block_index: int, block_size: int):
    """Simulate one block of paths up to min(tau, horizon).

    Returns (tau, delta_at_stop, terminal) arrays; tau == horizon + 1 encodes
    survival past the horizon.
    """
    rng = _block_stream(cfg, block_index)
    pos = np.tile(np.asarray(cfg.start, dtype=float), (block_size, 1))
    tau = np.full(block_size, horizon + 1, dtype=np.int64)
    delta = np.empty(block_size)
    terminal = np.empty((block_size, cfg.k))
    alive_idx = np.arange(block_size)
    for n in range(1, horizon + 1):
        if alive_idx.size == 0:
            break
        pos += cfg.dist.sample_array(rng, pos.shape)
        exited = np.any(np.diff(pos, axis=1) <= 0, axis=1)
        if exited.any():
            dead = alive_idx[exited]
            tau[dead] = n
            terminal[dead] = pos[exited]
            delta[dead] = _vandermonde_rows(pos[exited])
            alive_idx = alive_idx[~exited]
            pos = pos[~exited]
    if alive_idx.size:
        terminal[alive_idx] = pos
        delta[alive_idx] = _vandermonde_rows(pos)
    return tau, delta, terminal


def _n_threads(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("ORDWALK_THREADS")
    return max(1, int(env)) if env else 1


def _map_blocks(fn, n_blocks, threads=None):
    """Apply fn to each block index, merging results in block order."""
    nt = _n_threads(threads)
    if nt == 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=nt) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _blocks_for(paths, block_size):
    n_blocks = (paths + block_size - 1) // block_size
    sizes = [block_size] * n_blocks
    if paths % block_size:
        sizes[-1] = paths % block_size
    return n_blocks, sizes


def batch_survival(cfg: WalkConfig, horizons, paths: int, threads=None,
                   block_size: int = BLOCK_SIZE):
    """Estimate P_x(tau > n) at every listed horizon from a single batch."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    horizons = sorted(int(h) for h in horizons)
    max_h = horizons[-1]
    n_blocks, sizes = _blocks_for(paths, block_size)

    def work(b):
        tau, _, _ = _simulate_block(cfg, max_h, b, sizes[b])
        return np.array([(tau > h).sum() for h in horizons], dtype=np.int64)

    counts = sum(_map_blocks(work, n_blocks, threads))
    out = []
    for h, c in zip(horizons, counts):
        p = c / paths
        se = math.sqrt(p * (1.0 - p) / paths)
        out.append((h, EstimateCI(mean=p, stderr=se, n_samples=paths)))
    return out


def batch_stopped_vandermonde(cfg: WalkConfig, n: int, paths: int, threads=None,
                              block_size: int = BLOCK_SIZE) -> EstimateCI:
    """Estimate E_x[Delta(X(tau)) 1{tau <= n}]; survivors contribute zero."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if n == 0:
        return EstimateCI(mean=0.0, stderr=0.0, n_samples=paths)
    n_blocks, sizes = _blocks_for(paths, block_size)

    def work(b):
        tau, delta, _ = _simulate_block(cfg, n, b, sizes[b])
        contrib = np.where(tau <= n, delta, 0.0)
        return np.array([contrib.sum(), (contrib ** 2).sum()])

    s, s2 = sum(_map_blocks(work, n_blocks, threads))
    mean = s / paths
    var = max(s2 / paths - mean ** 2, 0.0)
    return EstimateCI(mean=mean, stderr=math.sqrt(var / paths), n_samples=paths)


def conditioned_endpoints(cfg: WalkConfig, n: int, target_samples: int,
                          max_attempts: int, threads=None,
                          block_size: int = BLOCK_SIZE):
    """Rejection-sample survivor endpoints rescaled by 1/sqrt(n).

    Returns (endpoints, acceptance_rate) where endpoints is a
    (target_samples, k) array of X(n)/sqrt(n) rows with tau > n.
    """
    if target_samples < 1:
        raise ValueError("target_samples must be >= 1")
    collected = []
    got = 0
    attempted = 0
    block = 0
    while got < target_samples and attempted < max_attempts:
        size = min(block_size, max_attempts - attempted)
        tau, _, terminal = _simulate_block(cfg, n, block, size)
        keep = terminal[tau > n] / math.sqrt(n)
        collected.append(keep)
        got += keep.shape[0]
        attempted += size
        block += 1
    endpoints = np.concatenate(collected) if collected else np.empty((0, cfg.k))
    rate = got / attempted if attempted else 0.0
    if got < target_samples:
        raise PartialResultError(
            f"collected {got}/{target_samples} survivors in {attempted} attempts "
            f"(acceptance rate {rate:.3g})",
            endpoints=endpoints,
            acceptance_rate=rate,
        )
    return endpoints[:target_samples], rate
