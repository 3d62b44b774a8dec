"""Conditioned-walk transform: exact step law, limit ensembles, BM marginals."""

import math
from fractions import Fraction

import numpy as np
import pytest

import ordwalk.transform as tr
from ordwalk.distributions import RandomStream, make_distribution
from ordwalk.engine import PartialResultError, WalkConfig
from ordwalk.lattice_exact import exact_vn

RAD = make_distribution("rademacher")


def test_closed_form_table_values():
    table = tr.rademacher_gap_table()
    assert table.v((0, 1)) == 2
    assert table.v((0, 2)) == 2
    assert table.v((0, 3)) == 4
    assert table.v((5, 9)) == 4
    with pytest.raises(ValueError):
        table.v((1, 1))


def test_closed_form_is_harmonic_for_killed_gap_chain():
    # the gap moves -2/0/+2 with masses 1/4, 1/2, 1/4 and is killed at <= 0;
    # the closed form must reproduce itself exactly under one step
    table = tr.rademacher_gap_table()
    for g in range(1, 12):
        v = lambda gap: table.v((0, gap)) if gap > 0 else Fraction(0)
        one_step = (Fraction(1, 4) * v(g + 2) + Fraction(1, 2) * v(g)
                    + Fraction(1, 4) * v(g - 2))
        assert one_step == v(g)


def test_closed_form_dominates_exact_truncations():
    # V_n increases to V; at n = 20 the truncation sits just below the limit
    table = tr.rademacher_gap_table()
    for gap in (1, 2, 3):
        exact = float(exact_vn(WalkConfig(2, (0, gap), RAD), 20)[-1])
        limit = float(table.v((0, gap)))
        assert exact <= limit
        assert limit - exact < 0.5


def test_table_positivity_enforced():
    with pytest.raises(ValueError):
        tr.TransformTable(k=2, domain="bad", values={(0, 1): Fraction(0)})


def test_table_from_exact_vn_budget():
    domain = [(0, g) for g in range(1, 6)]
    cfg = WalkConfig(2, (0, 1), RAD)
    table = tr.table_from_exact_vn(cfg, 8, domain)
    assert not table.exact and table.stderr_budget > 0
    assert table.v((0, 1)) > 0


def test_transform_step_exact_normalizes_and_moves():
    table = tr.rademacher_gap_table()
    stream = RandomStream(0, 0)
    seen = set()
    x = (0, 1)
    for _ in range(200):
        y = tr.transform_step_exact(table, x, RAD, stream)
        assert y[0] < y[1]
        seen.add((y[0] - x[0], y[1] - x[1]))
        x = y
    # all four one-step moves that keep the order should occur from gap >= 3
    assert (1, 1) in seen and (-1, -1) in seen and (-1, 1) in seen


def test_transform_step_rejects_inconsistent_table():
    bad = tr.TransformTable(k=2, domain="wrong", exact=True,
                            closed_form=lambda x: Fraction(x[1] - x[0]))
    with pytest.raises(ArithmeticError):
        tr.transform_step_exact(bad, (0, 1), RAD, RandomStream(0, 0))


def test_transformed_gap_distribution_moments():
    gaps, probs = tr.transformed_gap_distribution(1, 1024)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert (gaps % 2 == 1).all()  # parity preserved from an odd start
    m2 = float((probs * (gaps / math.sqrt(1024)) ** 2).sum())
    assert m2 == pytest.approx(5.864, abs=0.01)  # limit value 6 from below


def test_transformed_gap_paths_match_exact_law():
    n, paths = 64, 40_000
    draws = tr.transformed_gap_paths(1, n, paths, master_seed=1)
    gaps, probs = tr.transformed_gap_distribution(1, n)
    table = dict(zip(gaps.tolist(), probs.tolist()))
    for g in (1, 3, 5, 9):
        p = table[g]
        freq = float((draws == g).mean())
        assert abs(freq - p) < 5 * math.sqrt(p * (1 - p) / paths)


def test_transformed_pair_paths_consistent_with_gap_chain():
    pts = tr.transformed_pair_paths((0, 1), 32, 5_000, master_seed=2)
    assert pts.shape == (5_000, 2)
    assert (np.diff(pts, axis=1) > 0).all()
    gaps = np.diff(pts, axis=1)[:, 0].astype(int)
    exact_gaps, probs = tr.transformed_gap_distribution(1, 32)
    table = dict(zip(exact_gaps.tolist(), probs.tolist()))
    for g in (1, 3, 7):
        p = table[g]
        freq = float((gaps == g).mean())
        assert abs(freq - p) < 5 * math.sqrt(p * (1 - p) / 5_000)
    # sum increments are symmetric: the center stays near the start
    centers = pts.mean(axis=1)
    assert abs(centers.mean() - 0.5) < 5 * centers.std() / math.sqrt(5_000)


def test_hermite_gap_tv_exact_decreases():
    vals = [tr.hermite_gap_tv_exact(1, n) for n in (64, 256, 1024)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.03


def test_hermite_distance_self_test():
    rng = np.random.default_rng(11)
    samples = tr.sample_hermite_limit(2, 20_000, rng)
    rep = tr.hermite_distance(samples, 2)
    assert rep["ks_per_gap"][0] < 0.02
    assert abs(rep["gap_sq_mean"][0] - 6.0) < 4 * rep["gap_sq_stderr"][0]
    assert rep["tv"] < 0.08


def test_hermite_distance_rejects_disordered():
    with pytest.raises(ValueError):
        tr.hermite_distance(np.array([[1.0, 0.0]]), 2)


def test_rejection_transform_small_case():
    cfg = WalkConfig(2, (0, 1), RAD, master_seed=3)
    out = tr.transform_paths_rejection(cfg, t_steps=4, paths=2_000)
    assert out["samples"].shape == (2_000, 2)
    assert 0 < out["acceptance_rate"] <= 1
    assert out["guard_m"] == 32
    assert out["bias_proxy_tv"] < 0.2


def test_rejection_transform_feasibility_guard():
    cfg = WalkConfig(2, (0, 1), RAD, master_seed=3)
    with pytest.raises(tr.FeasibilityError):
        tr.transform_paths_rejection(cfg, 4, 100, predicted_acceptance=1e-5)


def test_rejection_transform_partial_result():
    # three walkers survive guard horizon 32 well under 1% of the time;
    # claiming 90% caps the attempt budget far below what the target needs
    cfg = WalkConfig(3, (0, 1, 2), RAD, master_seed=3)
    with pytest.raises(PartialResultError) as exc:
        tr.transform_paths_rejection(cfg, 4, 2_000, guard_m=32,
                                     predicted_acceptance=0.9)
    assert exc.value.acceptance_rate < 0.1


def test_dyson_density_values():
    # k=1 reduction sanity via k=2 with one walker far away is awkward;
    # instead check symmetry, normalization on a grid, and clamping counter
    tr.reset_clamp_warnings()
    val = tr.dyson_density((0.0, 1.0), 0.5, (0.0, 1.0))
    assert val > 0
    with pytest.raises(ValueError):
        tr.dyson_density((1.0, 0.0), 0.5, (0.0, 1.0))
    with pytest.raises(ValueError):
        tr.dyson_density((0.0, 1.0), 0.0, (0.0, 1.0))
    assert tr.clamp_warning_count() == 0


def test_dyson_density_matches_gap_marginal():
    # integrate the 2-d density over the center: matches the gap marginal
    g0, t, g = 1.0, 0.3, 1.7
    centers = np.linspace(-8, 8, 2001)
    vals = [tr.dyson_density((-g0 / 2, g0 / 2), t, (c - g / 2, c + g / 2))
            for c in centers]
    integral = np.trapezoid(vals, centers)
    expected = float(tr.dyson_gap_marginal(g0, t, np.array([g]))[0])
    assert integral == pytest.approx(expected, rel=1e-6)


def test_dyson_gap_marginal_normalized():
    g = np.linspace(0, 40, 40001)
    dens = tr.dyson_gap_marginal(1.0, 0.5, g)
    assert np.trapezoid(dens, g) == pytest.approx(1.0, abs=1e-8)
    assert (dens >= 0).all()


def test_dyson_compare_small():
    rep = tr.dyson_compare((0.0, 1.0), t=0.5, n=256, paths=20_000,
                           master_seed=0)
    assert rep["steps"] == 128 and rep["start_gap"] == 16
    assert rep["tv"] < 0.08
    assert rep["ks"] < 0.05
