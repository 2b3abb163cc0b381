import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeband.engine import (gamma_penalty, multiscale_statistic, scan_brute,
                              standardized_average, tstar, tstar_batch, two_sided_statistic,
                              window_penalty, write_scan_trace)
from shapeband.grid import (Bandwidth, BandwidthPolicy, Field, GridMismatchError, Window,
                            enumerate_windows, make_grid)
from shapeband.kernels import KernelId, get_kernel, kernel_pair, window_weights

KERNELS = [KernelId.ISO_UPPER, KernelId.ISO_LOWER, KernelId.CVX_UPPER, KernelId.CVX_LOWER]


def gaussian_field(m, d, seed):
    g = make_grid(m, d)
    return Field(g, np.random.default_rng(seed).normal(size=g.shape))


def usable_windows(grid, kernel, policy=BandwidthPolicy.FULL):
    return [w for w in enumerate_windows(grid, policy) if window_weights(kernel, w, grid).usable]


# -- penalty -------------------------------------------------------------------

def test_penalty_values():
    assert gamma_penalty(1.0) == pytest.approx(math.sqrt(2))
    assert gamma_penalty(math.e) == 0.0
    assert window_penalty(9, 2500) == pytest.approx(math.sqrt(2 * math.log(math.e * 2500 / 9)))
    with pytest.raises(ValueError):
        gamma_penalty(0.0)


@settings(max_examples=100)
@given(st.floats(1e-9, 1.0), st.floats(1e-9, 1.0))
def test_penalty_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert gamma_penalty(lo) >= gamma_penalty(hi) > 0


# -- standardized average ------------------------------------------------------

def test_standardized_average_examples():
    g = make_grid(6, 2)
    k = get_kernel(KernelId.CVX_UPPER, 2)
    win = Window((3, 3), Bandwidth((2, 2), 6))
    assert standardized_average(Field(g, np.zeros(g.n)), k, win) == 0.0
    ww = window_weights(k, win, g)
    c = 2.5
    assert standardized_average(Field(g, np.full(g.n, c)), k, win) == pytest.approx(
        c * ww.sum_w / math.sqrt(ww.sum_w2))


def test_three_point_window_by_hand():
    g = make_grid(5, 1)
    y = np.array([0.3, -1.2, 0.7, 2.0, -0.4])
    k = get_kernel(KernelId.CVX_UPPER, 1)
    # offsets -1, 0, 1 at h = 1/5: psi = 1 - r^2 gives weights 0, 1, 0
    assert standardized_average(Field(g, y), k, Window((3,), Bandwidth((1,), 5))) == pytest.approx(0.7)
    k = get_kernel(KernelId.ISO_UPPER, 1)
    win = Window((3,), Bandwidth((2,), 5))   # offsets -2..2 scaled by 1/2: weights 0,0,1,.5,0
    expected = (0.7 * 1 + 2.0 * 0.5) / math.sqrt(1 + 0.25)
    assert standardized_average(Field(g, y), k, win) == pytest.approx(expected)


# -- scan ------------------------------------------------------------------------

@pytest.mark.parametrize("kid", KERNELS)
def test_zero_field(kid):
    g = make_grid(7, 2)
    k = get_kernel(kid, 2)
    res = multiscale_statistic(Field(g, np.zeros(g.n)), k, 1)
    pens = [gamma_penalty(w.count / g.n) for w in usable_windows(g, k)]
    assert res.value == pytest.approx(-min(pens), abs=1e-12)


def test_m4_worked_example():
    g = make_grid(4, 1)
    k = get_kernel(KernelId.ISO_UPPER, 1)
    y = Field(g, [0, 0, 1, 0])
    scores = [standardized_average(y, k, w) - gamma_penalty(w.count / g.n)
              for w in enumerate_windows(g)]
    assert len(scores) == 2
    assert multiscale_statistic(y, k, 1).value == pytest.approx(max(scores), abs=1e-14)


@pytest.mark.parametrize("kid", KERNELS)
def test_sign_symmetry(kid):
    y = gaussian_field(9, 2, 5)
    k = get_kernel(kid, 2)
    neg = Field(y.design, -y.values)
    assert multiscale_statistic(y, k, -1).value == pytest.approx(
        multiscale_statistic(neg, k, 1).value, abs=1e-12)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("m", [4, 5, 6, 7, 8])
def test_fast_equals_brute(m, d):
    for seed in range(3):
        y = gaussian_field(m, d, 100 + seed)
        for kid in KERNELS:
            k = get_kernel(kid, d)
            for sign in (1, -1):
                fast = multiscale_statistic(y, k, sign)
                slow = multiscale_statistic(y, k, sign, method="brute")
                assert fast.value == pytest.approx(slow.value, abs=1e-10)
                assert fast.argmax == slow.argmax


@pytest.mark.parametrize("crossover", [0, 10**9])
def test_fft_and_direct_paths_agree(crossover):
    y = gaussian_field(16, 2, 9)
    k = get_kernel(KernelId.CVX_LOWER, 2)
    ref = multiscale_statistic(y, k, 1, keep_records=True)
    alt = multiscale_statistic(y, k, 1, keep_records=True, crossover=crossover)
    assert alt.value == pytest.approx(ref.value, abs=1e-10)
    np.testing.assert_allclose([r.standardized for r in alt.records],
                               [r.standardized for r in ref.records], atol=1e-10)


def test_scale_equivariance():
    y = gaussian_field(8, 2, 3)
    k = get_kernel(KernelId.ISO_UPPER, 2)
    a = multiscale_statistic(y, k, 1, keep_records=True).records
    b = multiscale_statistic(Field(y.design, 3.5 * y.values), k, 1, keep_records=True).records
    np.testing.assert_allclose([r.standardized * 3.5 for r in a], [r.standardized for r in b],
                               rtol=1e-12, atol=1e-12)
    za = np.array([r.standardized for r in a])
    zb = np.array([r.standardized for r in b])
    assert za.argmax() == zb.argmax()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(KERNELS))
def test_dyadic_not_above_full(seed, kid):
    y = gaussian_field(12, 2, seed)
    k = get_kernel(kid, 2)
    assert (multiscale_statistic(y, k, 1, BandwidthPolicy.DYADIC).value
            <= multiscale_statistic(y, k, 1, BandwidthPolicy.FULL).value + 1e-12)


def test_recorded_penalties():
    y = gaussian_field(10, 2, 4)
    res = multiscale_statistic(y, get_kernel(KernelId.CVX_UPPER, 2), 1, keep_records=True)
    n = y.design.n
    for r in res.records:
        assert r.penalty == pytest.approx(math.sqrt(2 * math.log(math.e * n / r.window.count)),
                                          rel=1e-15, abs=1e-15)
    assert max(r.score for r in res.records) == pytest.approx(res.value, abs=1e-12)


def test_tstar_examples():
    g = make_grid(6, 2)
    pair = kernel_pair("isotonic", 2)
    zero = Field(g, np.zeros(g.n))
    assert tstar(zero, pair.lower, pair.upper) < 0
    y = gaussian_field(6, 2, 42)
    ts = tstar(y, pair.lower, pair.upper)
    assert ts == pytest.approx(tstar(y, pair.lower, pair.upper, method="brute"), abs=1e-10)
    assert ts >= multiscale_statistic(y, pair.lower, 1).value
    assert ts >= multiscale_statistic(y, pair.upper, -1).value


def test_tstar_batch_matches_single():
    g = make_grid(10, 2)
    pair = kernel_pair("convex", 2)
    Y = np.random.default_rng(8).normal(size=(4,) + g.shape)
    tl, tu = tstar_batch(g, pair.lower, pair.upper, Y)
    for i in range(4):
        f = Field(g, Y[i])
        assert tl[i] == pytest.approx(multiscale_statistic(f, pair.lower, 1).value, abs=1e-12)
        assert tu[i] == pytest.approx(multiscale_statistic(f, pair.upper, -1).value, abs=1e-12)


def test_two_sided_and_mismatch():
    y = gaussian_field(8, 2, 1)
    k = get_kernel(KernelId.CVX_UPPER, 2)
    assert two_sided_statistic(y, k) >= multiscale_statistic(y, k, 1).value
    with pytest.raises(GridMismatchError):
        multiscale_statistic(y, get_kernel(KernelId.CVX_UPPER, 1), 1)


def test_scan_trace(tmp_path):
    y = gaussian_field(6, 2, 2)
    res = multiscale_statistic(y, get_kernel(KernelId.ISO_UPPER, 2), 1, keep_records=True)
    p = tmp_path / "trace.csv"
    write_scan_trace(p, res.records, 1)
    lines = p.read_text().splitlines()
    assert lines[0] == "h1,h2,t1,t2,count,standardized_value,penalty,score"
    assert len(lines) == len(res.records) + 1
