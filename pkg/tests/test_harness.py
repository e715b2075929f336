import math

import numpy as np
import pytest
import sympy as sp

from noncollide.harness import (
    CHUNK,
    PlanError,
    collision_stats,
    collisions_to_csv,
    dyson_moment_check,
    dyson_moments,
    fit_rate,
    local_error_scaling,
    ordering_audit,
    strong_error,
)
from noncollide.integrators import SchemeKind
from noncollide.model import DriftSpec, SystemSpec, dyson


@pytest.mark.parametrize("p,C", [(1.0, 3.0), (0.5, 0.2), (1.5, 17.0)])
def test_fit_rate_exact_power_law(p, C):
    dts = [2.0**-k for k in range(4, 9)]
    slope, icpt = fit_rate(dts, [C * dt**p for dt in dts])
    assert abs(slope - p) <= 1e-12
    assert abs(icpt - math.log2(C)) <= 1e-12


def test_fit_rate_halving_example():
    dts = [1.0, 0.5, 0.25]
    errs = [1.0, 1 / math.sqrt(2), 0.5]
    assert fit_rate(dts, errs)[0] == pytest.approx(0.5, abs=1e-12)


def test_fit_rate_skips_unusable_rows():
    slope, _ = fit_rate([1.0, 0.5, 0.25], [4.0, math.nan, 1.0])
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert math.isnan(fit_rate([1.0], [1.0])[0])


@pytest.mark.parametrize(
    "kw",
    [
        dict(factors=(16, 32), ref_factor=4096),
        dict(factors=(16, 24), ref_factor=1),
        dict(factors=(16,), ref_factor=16),
        dict(factors=(16,), ref_factor=1, M=1),
        dict(factors=(16,), ref_factor=1, n_fine=1000),
    ],
)
def test_strong_error_rejects_bad_plans(dyson2, kw):
    args = dict(M=10, n_fine=4096) | kw
    with pytest.raises(PlanError):
        strong_error(dyson2, **args)


@pytest.fixture(scope="module")
def small_table():
    return strong_error(dyson(3, x0=[-2.0, 0.0, 2.0]), seed=3, M=300, factors=(8, 16, 32, 64), n_fine=512)


def test_strong_error_sanity(small_table):
    t = small_table
    assert t.step_sizes == [64 / 512, 32 / 512, 16 / 512, 8 / 512]
    assert t.n_paths == [300] * 4 and t.aborted == [0] * 4
    assert 0 < t.err_sq_mean[-1] < t.err_sq_mean[0]
    for a, b, sa, sb in zip(t.err_sq_mean, t.err_sq_mean[1:], t.err_sq_se, t.err_sq_se[1:]):
        assert b <= a + 2 * math.hypot(sa, sb)
    assert 0.4 <= t.fitted_rate <= 1.8


def test_strong_error_csv(small_table):
    lines = small_table.to_csv().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    assert "# scheme=sd-per-step" in comments
    assert lines[len(comments)] == "dt,err_sq_mean,err_sq_se,err_gap_sq_mean,n_paths,aborted"
    assert len(lines) == len(comments) + 1 + 4


def test_strong_error_worker_independent(dyson2):
    kw = dict(seed=1, M=CHUNK + 20, factors=(8, 16), n_fine=64)
    a = strong_error(dyson2, workers=1, **kw)
    b = strong_error(dyson2, workers=2, **kw)
    assert a.to_csv() == b.to_csv()


def test_strong_error_baseline_counts_aborts():
    spec = dyson(3, x0=[-0.1, 0.0, 0.1])
    t = strong_error(spec, SchemeKind.EULER_MARUYAMA, seed=0, M=200, factors=(64, 128), n_fine=256)
    assert all(n + a == 200 for n, a in zip(t.n_paths, t.aborted))
    assert all(math.isnan(g) for g in t.err_gap_sq_mean)


def test_local_error_zero_without_noise():
    spec = SystemSpec(np.array([[0.0, 1.0], [1.0, 0.0]]), DriftSpec(), np.zeros((2, 2)), np.array([-1.0, 1.0]), 1.0)
    t = local_error_scaling(spec, seed=0, M=10, factors=(4, 8), n_fine=64)
    assert t.sup_mean_sq_increment == [0.0, 0.0]


def test_local_error_pure_noise(dyson2):
    # gap 1 of d=2 Dyson has alpha = beta = 0; its increment is c dB with c^2 = 2
    M = 4000
    t = local_error_scaling(dyson2, seed=5, M=M, factors=(16, 32, 64), n_fine=256)
    for dt, v in zip(t.step_sizes, t.sup_mean_sq_increment):
        n_steps = round(1 / dt)
        # sup over steps of a mean of M scaled chi^2_1 variables
        assert 2 * dt <= v <= 2 * dt * (1 + (2 + math.sqrt(2 * math.log(n_steps))) * math.sqrt(2 / M))
    assert t.fitted_rate == pytest.approx(1.0, abs=0.1)


def test_collision_stats_sd(dyson3):
    st = collision_stats(dyson3, SchemeKind.SD_PER_STEP, seed=0, M=100, factor=16, n_fine=256)
    assert st.violation_steps == 0 and st.aborted_paths == 0
    assert st.min_gap >= 2 * math.sqrt(16 / 256)


def test_collision_csv():
    from noncollide.harness import CollisionStats

    text = collisions_to_csv([CollisionStats("em", 0.5, 3, 1, 10)], {"seed": 4})
    assert text == "# seed=4\nscheme,min_gap,violation_steps,aborted_paths,n_paths\nem,0.5,3,1,10\n"


def test_ordering_audit_per_step(dyson3):
    a = ordering_audit(dyson3, SchemeKind.SD_PER_STEP, seed=0, M=50, factors=(1, 8), n_fine=64)
    assert a.passed() and a.min_floor_slack >= 0
    with pytest.raises(ValueError):
        ordering_audit(dyson3, SchemeKind.EULER_MARUYAMA, M=10)


def _generator(d):
    x = sp.symbols(f"x1:{d + 1}")
    g = sp.Symbol("gamma", positive=True)
    s = sp.symbols(f"s1:{d + 1}", positive=True)
    drift = [sum(g / (x[i] - x[j]) for j in range(d) if j != i) for i in range(d)]

    def L(f):
        first = sum(drift[i] * sp.diff(f, x[i]) for i in range(d))
        second = sum(s[i] ** 2 * sp.diff(f, x[i], 2) for i in range(d)) / 2
        return sp.simplify(sp.together(first + second))

    return x, g, s, L


@pytest.mark.parametrize("d", [2, 3])
def test_dyson_identities_symbolic(d):
    x, g, s, L = _generator(d)
    assert sp.simplify(L(sum(xi**2 for xi in x)) - (g * d * (d - 1) + sum(si**2 for si in s))) == 0
    assert L(sum(x)) == 0
    # L applied to (sum x)^2 is constant, so Var(sum X_t) grows linearly
    assert sp.simplify(L(sum(x) ** 2) - sum(si**2 for si in s)) == 0


def test_dyson_moments_values(dyson2):
    assert dyson_moments(dyson2, 1.0) == (6.0, 0.0, 2.0)
    spec = dyson(3, gamma=0.5, sigma=2.0, x0=[-2.0, 0.0, 2.0])
    assert dyson_moments(spec, 0.5) == pytest.approx((8 + (0.5 * 6 + 12) * 0.5, 0.0, 6.0))


def test_moment_check_small(dyson2):
    rep = dyson_moment_check(dyson2, seed=1, M=500, n_fine=256)
    assert rep.aborted == 0 and rep.passed()
    assert rep.to_dict()["meta"]["scheme"] == "sd-per-step"


def test_moment_check_rejects_non_dyson(dyson2):
    drifted = SystemSpec(dyson2.gamma, DriftSpec("affine", -1.0, (0.0, 0.0)), dyson2.sigma, dyson2.x0, 1.0)
    with pytest.raises(ValueError):
        dyson_moment_check(drifted, M=10)
    full = SystemSpec(dyson2.gamma, DriftSpec(), np.array([[1.0, 0.5], [0.5, 1.0]]), dyson2.x0, 1.0)
    with pytest.raises(ValueError):
        dyson_moment_check(full, M=10)
