import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ticketlab.scaling import (InsufficientDataError, exponent_table, fit_power_law, layerwise_exponents,
                               regimes_csv, segment_regimes)

GRID = 0.85 ** np.arange(30)


def three_regime(d, low=1e-3, knee=0.5, gamma=5.0, cap=1.0):
    return np.minimum(np.where(d >= knee, low, low * (d / knee) ** -gamma), cap)


def test_exact_power_law():
    d = np.linspace(0.1, 1, 12)
    fit = fit_power_law(d, 2 * d ** -3.0)
    assert fit.gamma == pytest.approx(3.0, abs=1e-12)
    assert fit.c == pytest.approx(2.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.residual < 1e-10


def test_constant_error_has_zero_exponent():
    fit = fit_power_law([1.0, 0.8, 0.6, 0.4], [0.3] * 4)
    assert fit.gamma == 0.0 and fit.r2 == 1.0


@pytest.mark.parametrize("gamma", [0.5, 3.0, 9.61])
def test_recovers_planted_exponent(gamma):
    d = GRID[5:20]
    assert abs(fit_power_law(d, 0.01 * d ** -gamma).gamma - gamma) < 1e-8


def test_window_and_errors():
    d = GRID[:10]
    eps = d ** -2.0
    fit = fit_power_law(d, eps, window=(d[6], d[2]))
    assert fit.n_points == 5 and fit.window == (d[6], d[2])
    with pytest.raises(InsufficientDataError):
        fit_power_law(d[:2], eps[:2])
    with pytest.raises(InsufficientDataError):
        fit_power_law(d, eps, window=(d[1], d[0]))
    with pytest.raises(ValueError):
        fit_power_law([1.0, -0.5, 0.2], [1, 1, 1])
    with pytest.warns(RuntimeWarning):
        fit_power_law([1.0, 0.5, 0.2], [0.0, 1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(12))), st.floats(0.01, 100.0))
def test_fit_order_invariant_and_scale_covariant(perm, k):
    rng = np.random.default_rng(0)
    d = GRID[:12]
    eps = d ** -1.7 * np.exp(rng.normal(0, 0.1, 12))
    base = fit_power_law(d, eps)
    shuffled = fit_power_law(d[perm], eps[perm])
    assert (shuffled.gamma, shuffled.c) == (base.gamma, base.c)
    scaled = fit_power_law(d, k * eps)
    assert scaled.gamma == pytest.approx(base.gamma, abs=1e-10)
    assert scaled.c == pytest.approx(k * base.c, rel=1e-10)


def test_refit_is_identical():
    d = GRID[:15]
    eps = three_regime(d)
    a = fit_power_law(d, eps, (0.1, 0.6))
    b = fit_power_law(d, eps, a.window)
    assert (a.c, a.gamma) == (b.c, b.gamma)


def test_segmentation_recovers_regimes():
    d = GRID
    eps = three_regime(d)
    seg = segment_regimes(d, eps)
    # true boundaries: flat for d >= 0.5, capped at 1.0 once (d/0.5)^-5 > 1000
    n_low = int(np.sum(d >= 0.5))
    n_cap = int(np.sum(eps >= 1.0))
    assert abs(seg.low[1] - n_low) <= 1
    assert abs((len(d) - seg.high[0]) - n_cap) <= 1
    assert seg.ok
    assert 1e-3 <= seg.eps_low < 2e-3
    fit = fit_power_law(d, eps, seg.power_window)
    assert fit.gamma == pytest.approx(5.0, abs=1e-9)
    lines = regimes_csv(seg).splitlines()
    assert lines[0] == "d,epsilon,regime" and len(lines) == len(d) + 1


def test_segmentation_edge_cases():
    seg = segment_regimes(GRID[:8], np.full(8, 0.2))
    assert seg.n_low() == 8 and seg.power_window is None
    with pytest.raises(InsufficientDataError):
        segment_regimes([1.0, 0.9], [1.0, 2.0])


def test_segmentation_is_order_independent():
    d = GRID
    eps = three_regime(d)
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(d))
    a, b = segment_regimes(d, eps), segment_regimes(d[perm], eps[perm])
    assert (a.low, a.power, a.high) == (b.low, b.power, b.high)


def test_manual_windows_override():
    d = GRID
    eps = three_regime(d)
    seg = segment_regimes(d, eps, low=(0.7, 1.0))
    assert seg.interval("low")[0] >= 0.7


def test_layerwise_exponents():
    d = GRID[:25]
    curves = {1: (d, three_regime(d, gamma=1.36, cap=10.0)), 2: (d, np.full(25, 1e-3)),
              3: (d, three_regime(d, gamma=1.22, cap=10.0))}
    rows = layerwise_exponents(curves)
    assert rows[0].gamma == pytest.approx(1.36, abs=0.01)
    assert rows[1].gamma == 0.0 and rows[1].fit is None
    assert rows[2].gamma == pytest.approx(1.22, abs=0.01)
    table = exponent_table(rows)
    assert "1.360" in table and "no power-law region" in table
