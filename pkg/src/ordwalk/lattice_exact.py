"""Exact rational dynamic programming for lattice walks.

Builds the constrained kernel P_x(tau > n, X(n) = y), the stopped measure
P_x(tau = m, X(m) = z) for z outside the chamber, and the signed determinantal
kernel D_n(x, y), then verifies the determinantal transition identity, the
reflection identity, the martingale property of the Vandermonde determinant
and the one-step iteration of V_n -- all as exact rational equalities.

All masses are Fractions whose denominators divide d^(k*n) with d the common
denominator of the single-step masses.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .distributions import StepDistribution, UnsupportedOperationError
from .engine import WalkConfig
from .geometry import exact_det, in_weyl, reflection_shift, vandermonde

__all__ = [
    "ExactKernel",
    "VerificationReport",
    "CapacityError",
    "IdentityViolationError",
    "exact_survival_kernel",
    "exact_free_kernel",
    "exact_stopped_measure",
    "exact_d_matrix",
    "exact_km_check",
    "exact_reflection_check",
    "exact_vn",
    "exact_martingale_check",
    "exact_harmonicity_check",
    "gap_chain_survival",
    "gap_chain_stopped_delta",
]

CAPACITY_BITS = 120


class CapacityError(ValueError):
    """d^(k*n) would overflow the exact-integer width guard."""


class IdentityViolationError(AssertionError):
    """An exact identity failed; names the offending site and both sides."""

    def __init__(self, identity, site, lhs, rhs):
        super().__init__(f"{identity} violated at y={site}: lhs={lhs} rhs={rhs}")
        self.site = site
        self.lhs = lhs
        self.rhs = rhs


@dataclass(frozen=True)
class ExactKernel:
    k: int
    n: int
    denominator_base: int
    masses: dict = field(repr=False)  # config tuple -> Fraction

    def total_mass(self) -> Fraction:
        return sum(self.masses.values(), Fraction(0))

    def mass(self, y) -> Fraction:
        return self.masses.get(tuple(int(c) for c in y), Fraction(0))


@dataclass(frozen=True)
class VerificationReport:
    identity: str
    k: int
    n: int
    sites_checked: int
    max_abs_discrepancy: Fraction
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "k": self.k,
            "n": self.n,
            "sites_checked": self.sites_checked,
            "max_abs_discrepancy": str(self.max_abs_discrepancy),
            "pass": self.passed,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _require_lattice(dist: StepDistribution):
    if not dist.is_lattice:
        raise UnsupportedOperationError(
            f"exact kernels need a lattice law, got {dist.kind!r}"
        )


def _check_capacity(dist: StepDistribution, k: int, n: int):
    d = dist.denominator
    if k * n * d.bit_length() > CAPACITY_BITS:
        raise CapacityError(
            f"d^(k*n) = {d}^{k * n} exceeds the 2^{CAPACITY_BITS} capacity guard"
        )


def _step_vectors(dist: StepDistribution, k: int):
    """All k-fold step combinations with their exact joint masses."""
    items = sorted(dist.masses.items())
    combos = []
    for combo in itertools.product(items, repeat=k):
        vec = tuple(site for site, _ in combo)
        mass = Fraction(1)
        for _, m in combo:
            mass *= m
        combos.append((vec, mass))
    return combos


def _forward_tables(cfg: WalkConfig, n: int):
    """One forward pass: per-time survival tables and the stopped measure.

    Returns (survival, stopped) where survival[m] maps ordered configs to
    P_x(tau > m, X(m) = y) and stopped maps (m, z) with z outside the chamber
    to P_x(tau = m, X(m) = z).
    """
    _require_lattice(cfg.dist)
    _check_capacity(cfg.dist, cfg.k, n)
    steps = _step_vectors(cfg.dist, cfg.k)
    start = tuple(int(c) for c in cfg.start)
    survival = [{start: Fraction(1)}]
    stopped = {}
    for m in range(1, n + 1):
        nxt = {}
        for y, mass in survival[m - 1].items():
            for vec, smass in steps:
                z = tuple(a + b for a, b in zip(y, vec))
                w = mass * smass
                if all(z[i] < z[i + 1] for i in range(cfg.k - 1)):
                    nxt[z] = nxt.get(z, Fraction(0)) + w
                else:
                    key = (m, z)
                    stopped[key] = stopped.get(key, Fraction(0)) + w
        survival.append(nxt)
    return survival, stopped


def exact_survival_kernel(cfg: WalkConfig, n: int) -> ExactKernel:
    """Exact table of P_x(tau > n, X(n) = y) over ordered configurations."""
    survival, _ = _forward_tables(cfg, n)
    return ExactKernel(cfg.k, n, cfg.dist.denominator, survival[n])


def exact_stopped_measure(cfg: WalkConfig, n: int) -> dict:
    """Exact table of P_x(tau = m, X(m) = z), m <= n, z outside the chamber."""
    _, stopped = _forward_tables(cfg, n)
    return stopped


def exact_free_kernel(cfg: WalkConfig, n: int) -> ExactKernel:
    """Unconstrained n-step kernel (product of k single-walk convolutions)."""
    _require_lattice(cfg.dist)
    _check_capacity(cfg.dist, cfg.k, n)
    steps = _step_vectors(cfg.dist, cfg.k)
    table = {tuple(int(c) for c in cfg.start): Fraction(1)}
    for _ in range(n):
        nxt = {}
        for y, mass in table.items():
            for vec, smass in steps:
                z = tuple(a + b for a, b in zip(y, vec))
                nxt[z] = nxt.get(z, Fraction(0)) + mass * smass
        table = nxt
    return ExactKernel(cfg.k, n, cfg.dist.denominator, table)


def _single_walk_pmfs(dist: StepDistribution, n: int):
    """pmfs[l] maps displacement -> exact mass of an l-step single walk."""
    pmfs = [{0: Fraction(1)}]
    for _ in range(n):
        prev = pmfs[-1]
        nxt = {}
        for disp, mass in prev.items():
            for site, smass in dist.masses.items():
                z = disp + site
                nxt[z] = nxt.get(z, Fraction(0)) + mass * smass
        pmfs.append(nxt)
    return pmfs


def exact_d_matrix(x, y, n: int, dist: StepDistribution, pmfs=None) -> Fraction:
    """Exact determinant det[(P_{x_i}(X_1(n) = y_j))_{i,j}]."""
    _require_lattice(dist)
    if pmfs is None:
        pmfs = _single_walk_pmfs(dist, n)
    pmf = pmfs[n]
    k = len(x)
    rows = [
        [pmf.get(int(y[j]) - int(x[i]), Fraction(0)) for j in range(k)]
        for i in range(k)
    ]
    return exact_det(rows)


def _candidate_sites(cfg: WalkConfig, n: int, pmfs):
    """Ordered configurations on which either side could carry mass."""
    reach = set()
    for xi in cfg.start:
        for disp in pmfs[n]:
            reach.add(int(xi) + disp)
    values = sorted(reach)
    return [y for y in itertools.combinations(values, cfg.k)]


def exact_km_check(cfg: WalkConfig, n: int) -> VerificationReport:
    """Verify the determinantal transition identity exactly at every site.

    P_x(tau > n, X(n) = y) == D_n(x, y) - sum over stopped (m, z) of
    P_x(tau = m, X(m) = z) * D_{n-m}(z, y), for all ordered y.
    """
    survival, stopped = _forward_tables(cfg, n)
    pmfs = _single_walk_pmfs(cfg.dist, n)
    sites = _candidate_sites(cfg, n, pmfs)
    x = tuple(int(c) for c in cfg.start)
    max_disc = Fraction(0)
    for y in sites:
        lhs = survival[n].get(y, Fraction(0))
        rhs = exact_d_matrix(x, y, n, cfg.dist, pmfs)
        for (m, z), mass in stopped.items():
            corr = exact_d_matrix(z, y, n - m, cfg.dist, pmfs)
            if corr:
                rhs -= mass * corr
        if lhs != rhs:
            raise IdentityViolationError("karlin-mcgregor", y, lhs, rhs)
        max_disc = max(max_disc, abs(lhs - rhs))
    return VerificationReport(
        identity="karlin-mcgregor",
        k=cfg.k,
        n=n,
        sites_checked=len(sites),
        max_abs_discrepancy=max_disc,
        passed=True,
    )


def exact_reflection_check(cfg: WalkConfig, n: int, l: int) -> VerificationReport:
    """Verify the reflection identity at exit time l exactly at every site.

    The path reflection interchanges the step sequences of the minimal
    disordered pair of the exit configuration z = X(l); the reflected exit
    configuration is z - psi(z) (that pair swapped back). The identity reads

        -E_x[1{tau = l} D_{n-l}(X(l), y)]
            == E_x[1{tau = l} D_{n-l}(X(l) - psi(X(l)), y)]

    for every ordered y. (The literal pointwise "shift y by psi" form fails
    for walks that can jump over each other; the shift belongs on the exit
    configuration.) Exits that land exactly on the boundary contribute zero
    to both sides (psi = 0 there and the determinant has equal rows).
    """
    if not 1 <= l <= n:
        raise ValueError(f"need 1 <= l <= n, got l={l}, n={n}")
    _, stopped = _forward_tables(cfg, n)
    pmfs = _single_walk_pmfs(cfg.dist, n)
    sites = _candidate_sites(cfg, n, pmfs)
    at_l = {z: mass for (m, z), mass in stopped.items() if m == l}
    shifts = {z: reflection_shift(z) for z in at_l}
    boundary_ties = sum(1 for z, s in shifts.items() if all(c == 0 for c in s))
    max_disc = Fraction(0)
    for y in sites:
        lhs = Fraction(0)
        rhs = Fraction(0)
        for z, mass in at_l.items():
            lhs -= mass * exact_d_matrix(z, y, n - l, cfg.dist, pmfs)
            z_reflected = tuple(a - b for a, b in zip(z, shifts[z]))
            rhs += mass * exact_d_matrix(z_reflected, y, n - l, cfg.dist, pmfs)
        if lhs != rhs:
            raise IdentityViolationError("reflection", y, lhs, rhs)
        max_disc = max(max_disc, abs(lhs - rhs))
    return VerificationReport(
        identity="reflection",
        k=cfg.k,
        n=n,
        sites_checked=len(sites),
        max_abs_discrepancy=max_disc,
        passed=True,
        extra={"l": l, "boundary_tie_exits": boundary_ties},
    )


def exact_vn(cfg: WalkConfig, n: int):
    """Exact V_m(x) = Delta(x) - E_x[Delta(X(tau)) 1{tau <= m}] for m = 1..n.

    Returns the list [V_1, ..., V_n] of Fractions.
    """
    _, stopped = _forward_tables(cfg, n)
    delta_x = Fraction(vandermonde(tuple(int(c) for c in cfg.start)))
    per_time = [Fraction(0)] * (n + 1)
    for (m, z), mass in stopped.items():
        per_time[m] += mass * vandermonde(z)
    out = []
    acc = Fraction(0)
    for m in range(1, n + 1):
        acc += per_time[m]
        out.append(delta_x - acc)
    return out


def exact_martingale_check(cfg: WalkConfig, n: int) -> VerificationReport:
    """Assert E_x[Delta(X(m))] == Delta(x) exactly for every m <= n."""
    delta_x = Fraction(vandermonde(tuple(int(c) for c in cfg.start)))
    kernel = exact_free_kernel(cfg, 0)
    steps = _step_vectors(cfg.dist, cfg.k)
    table = dict(kernel.masses)
    for m in range(1, n + 1):
        nxt = {}
        for y, mass in table.items():
            for vec, smass in steps:
                z = tuple(a + b for a, b in zip(y, vec))
                nxt[z] = nxt.get(z, Fraction(0)) + mass * smass
        table = nxt
        expect = sum((mass * vandermonde(y) for y, mass in table.items()), Fraction(0))
        if expect != delta_x:
            raise IdentityViolationError("martingale", m, expect, delta_x)
    return VerificationReport(
        identity="martingale",
        k=cfg.k,
        n=n,
        sites_checked=n,
        max_abs_discrepancy=Fraction(0),
        passed=True,
    )


def exact_harmonicity_check(cfg: WalkConfig, n: int) -> VerificationReport:
    """Assert the one-step iteration E_x[1{tau > 1} V_n(X(1))] == V_{n+1}(x)."""
    from dataclasses import replace

    steps = _step_vectors(cfg.dist, cfg.k)
    x = tuple(int(c) for c in cfg.start)
    vn_plus = exact_vn(cfg, n + 1)[n]  # V_{n+1}(x)
    acc = Fraction(0)
    sites = 0
    for vec, smass in steps:
        y = tuple(a + b for a, b in zip(x, vec))
        if not all(y[i] < y[i + 1] for i in range(cfg.k - 1)):
            continue
        sites += 1
        if n == 0:
            v_n_y = Fraction(vandermonde(y))  # V_0 = Delta
        else:
            cfg_y = replace(cfg, start=y)
            v_n_y = exact_vn(cfg_y, n)[n - 1]
        acc += smass * v_n_y
    if acc != vn_plus:
        raise IdentityViolationError("harmonicity", x, acc, vn_plus)
    return VerificationReport(
        identity="harmonicity",
        k=cfg.k,
        n=n,
        sites_checked=sites,
        max_abs_discrepancy=Fraction(0),
        passed=True,
    )


# ---------------------------------------------------------------------------
# k = 2 gap chain: float64 DP for horizons far beyond the exact-capacity guard
# ---------------------------------------------------------------------------


def _gap_step_law(dist: StepDistribution):
    """Law of the difference of two independent steps, as (offsets, probs)."""
    _require_lattice(dist)
    law = {}
    for s1, m1 in dist.masses.items():
        for s2, m2 in dist.masses.items():
            d = s2 - s1
            law[d] = law.get(d, Fraction(0)) + m1 * m2
    offsets = np.array(sorted(law), dtype=np.int64)
    probs = np.array([float(law[o]) for o in sorted(law)])
    return offsets, probs


def _gap_chain_dp(dist: StepDistribution, start_gap: int, horizons):
    """Core float64 DP for the two-walker gap chain.

    The gap of two independent walks is itself a random walk; the ordering
    survives while the gap stays strictly positive. Returns, per horizon,
    (survival probability, cumulative E[gap at absorption, tau <= horizon]).
    The gap at absorption equals Delta of the two-walker configuration at tau.
    Float64 is used because the target horizons (up to 2^14) are far beyond
    exact-rational capacity; round-off is ~1e-12 relative at these sizes.
    """
    if start_gap <= 0:
        raise ValueError("start gap must be positive")
    offsets, probs = _gap_step_law(dist)
    horizons = sorted(int(h) for h in horizons)
    max_h = horizons[-1]
    lo = int(offsets.min())
    hi = int(offsets.max())
    size = start_gap + max_h * hi + 1  # index = gap, gaps 1..size-1 alive
    mass = np.zeros(size)
    mass[start_gap] = 1.0
    exit_gaps = np.arange(lo, 1, dtype=float)  # absorbed at gap in [lo, 0]
    stopped_acc = 0.0
    out = {0: (1.0, 0.0)}
    for m in range(1, max_h + 1):
        # full[g - lo] = mass arriving at gap g, for g in lo .. size-1+hi
        full = np.zeros(size + hi - lo)
        for off, p in zip(offsets, probs):
            if p == 0.0:
                continue
            sh = int(off) - lo
            full[sh: sh + size] += p * mass
        stopped_acc += float((full[: 1 - lo] * exit_gaps).sum())
        alive = full[1 - lo: size - lo]  # gaps 1 .. size-1 survive
        mass = np.concatenate([[0.0], alive])
        out[m] = (float(mass.sum()), stopped_acc)
    return {h: out[h] for h in horizons}


def gap_chain_alive_distribution(dist: StepDistribution, start_gap: int, n: int):
    """Law of the gap at time n conditioned on survival, by float64 DP.

    Returns (gaps, probs) with probs summing to one; useful as a noise-free
    reference for the conditioned endpoint distribution of two walkers.
    """
    if start_gap <= 0:
        raise ValueError("start gap must be positive")
    offsets, probs_step = _gap_step_law(dist)
    lo = int(offsets.min())
    hi = int(offsets.max())
    size = start_gap + n * hi + 1
    mass = np.zeros(size)
    mass[start_gap] = 1.0
    for _ in range(n):
        full = np.zeros(size + hi - lo)
        for off, p in zip(offsets, probs_step):
            if p == 0.0:
                continue
            sh = int(off) - lo
            full[sh: sh + size] += p * mass
        alive = full[1 - lo: size - lo]
        mass = np.concatenate([[0.0], alive])
    total = mass.sum()
    keep = mass > 0
    return np.arange(size)[keep], mass[keep] / total


def gap_chain_survival(dist: StepDistribution, start_gap: int, horizons):
    """P(tau > n) for the two-walker chain at each horizon, by float64 DP."""
    table = _gap_chain_dp(dist, start_gap, horizons)
    return [(h, table[h][0]) for h in sorted(table)]


def gap_chain_stopped_delta(dist: StepDistribution, start_gap: int, n: int):
    """E[Delta(X(tau)) 1{tau <= n}] for the two-walker chain, by float64 DP."""
    table = _gap_chain_dp(dist, start_gap, [n])
    return table[n][1]
