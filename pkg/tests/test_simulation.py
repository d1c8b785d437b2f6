import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from lkcr import simulation as sim
from lkcr.domain import GridDomain
from lkcr.errors import EmbeddingFailure, InputError, NoConvergence, TooLarge
from lkcr.simulation import (
    GrfSpec, empirical_threshold, fiac_like_bundle, field_maxima, fit_convergence, simulate,
)

DOMAINS = [GridDomain("square", 20), GridDomain("cube", 8), GridDomain("sphere", 16)]


def covariance_gof(values, domain, alpha, pairs=10, seed=0):
    """Sum of squared z-scores of sample covariances at random site pairs (about chi2 with `pairs` dof)."""
    rng = np.random.default_rng(seed)
    pts = domain.coordinates()
    F = values.shape[0]
    z2 = 0.0
    for _ in range(pairs):
        a, b = rng.choice(domain.n_sites, 2, replace=False)
        # pick a nearby partner so the correlation is not trivially zero
        d2 = np.sum((pts - pts[a]) ** 2, axis=1)
        b = np.argsort(d2)[rng.integers(1, 6)]
        rho = np.exp(-alpha * d2[b])
        c = np.mean(values[:, a] * values[:, b])
        se = np.sqrt((1 + rho ** 2) / F)  # variance of a product of unit bivariate normals
        z2 += ((c - rho) / se) ** 2
    return z2


def test_defaults():
    assert GrfSpec(GridDomain("square", 5)).alpha_cov == 100.0
    assert GrfSpec(GridDomain("cube", 5)).alpha_cov == 20.0
    assert GrfSpec(GridDomain("sphere", 6)).alpha_cov == 20.0
    with pytest.raises(InputError):
        GrfSpec(GridDomain("square", 5), -1.0)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.kind.value)
def test_unit_variance(domain):
    b = simulate(GrfSpec(domain, F=4000, seed=1))
    sites = np.random.default_rng(0).choice(domain.n_sites, 10, replace=False)
    var = b.values[:, sites].var(axis=0)
    assert np.all(np.abs(var - 1) <= 0.07)
    assert np.abs(b.values.mean()) < 0.05


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.kind.value)
def test_covariance_goodness_of_fit(domain):
    spec = GrfSpec(domain, F=3000, seed=2)
    b = simulate(spec)
    assert covariance_gof(b.values, domain, spec.alpha_cov) < stats.chi2.ppf(0.999, 10)


def test_lag_one_correlation():
    b = simulate(GrfSpec(GridDomain("square", 20), 100.0, F=4000, seed=3))
    g = b.values.reshape(4000, 20, 20)
    r = np.corrcoef(g[:, 5, 5], g[:, 5, 6])[0, 1]
    assert abs(r - np.exp(-100 / 400)) <= 0.03


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.kind.value)
def test_seed_determinism(domain):
    a = simulate(GrfSpec(domain, F=3, seed=99))
    b = simulate(GrfSpec(domain, F=3, seed=99))
    c = simulate(GrfSpec(domain, F=3, seed=100))
    assert a == b
    assert not np.array_equal(a.values, c.values)


@settings(max_examples=40)
@given(st.sampled_from(["square", "cube", "sphere"]), st.integers(4, 9), st.integers(1, 5),
       st.integers(0, 2 ** 63 - 1))
def test_determinism_property(kind, G, F, seed):
    d = GridDomain(kind, G)
    assert simulate(GrfSpec(d, F=F, seed=seed)) == simulate(GrfSpec(d, F=F, seed=seed))


def test_iid_spec():
    b = simulate(GrfSpec(GridDomain("square", 10), np.inf, F=3000, seed=0))
    c = np.corrcoef(b.values[:, :5], rowvar=False)
    assert np.all(np.abs(c[np.triu_indices(5, 1)]) < 0.1)


def test_dense_fallback(monkeypatch):
    def broken(*args, **kw):
        raise EmbeddingFailure("forced")

    monkeypatch.setattr(sim, "_circulant_fields", broken)
    d = GridDomain("square", 12)
    b = simulate(GrfSpec(d, F=3000, seed=4))
    assert covariance_gof(b.values, d, 100.0) < stats.chi2.ppf(0.999, 10)


def test_padding_retry(monkeypatch):
    calls = []
    real = sim._circulant_sqrt_eigs.__wrapped__

    def flaky(G, d, alpha, m):
        calls.append(m)
        if len(calls) == 1:
            raise EmbeddingFailure("forced")
        return real(G, d, alpha, m)

    monkeypatch.setattr(sim, "_circulant_sqrt_eigs", flaky)
    simulate(GrfSpec(GridDomain("square", 10), F=2, seed=0))
    assert calls[1] == 2 * calls[0]


def test_too_large():
    with pytest.raises(TooLarge):
        simulate(GrfSpec(GridDomain("sphere", 400), F=1))


def test_empirical_threshold_below_continuous():
    u = empirical_threshold(GrfSpec(GridDomain("square", 50), 100.0, seed=7), 0.05, 2000)
    assert u < 3.72
    assert 3.55 < u  # discrete maxima of a G=50 grid sit close to the continuum


def test_empirical_degenerate_alpha():
    spec = GrfSpec(GridDomain("square", 10), 100.0, seed=1)
    assert empirical_threshold(spec, 1.0, 200) == field_maxima(spec, 200).min()


def test_empirical_monotone_in_alpha():
    spec = GrfSpec(GridDomain("square", 15), 100.0, seed=2)
    vals = [empirical_threshold(spec, a, 500) for a in (0.01, 0.05, 0.1, 0.2, 0.5)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_empirical_iid_order_statistic():
    K = 400
    spec = GrfSpec(GridDomain("square", 20), np.inf, seed=3)
    u = empirical_threshold(spec, 0.05, 2000)
    exact = stats.norm.isf(1 - 0.95 ** (1 / K))
    assert abs(u - exact) < 0.08


def test_empirical_needs_replicates():
    with pytest.raises(InputError):
        empirical_threshold(GrfSpec(GridDomain("square", 5)), 0.05, 50)


def test_masked_maxima_ignore_excluded_sites():
    d = GridDomain("square", 10)
    mask = np.zeros(100, bool)
    mask[:10] = True
    full = field_maxima(GrfSpec(d, 100.0, seed=5), 200)
    part = field_maxima(GrfSpec(d, 100.0, seed=5, mask=mask), 200)
    assert np.all(part <= full)


GS = np.array([5, 10, 20, 50, 100])


def test_convergence_exact():
    cf = fit_convergence(zip(GS, 4 - 7 * GS ** -1.5))
    assert abs(cf.u_star - 4) < 1e-6 and abs(cf.beta + 7) < 1e-6 and abs(cf.varsigma + 1.5) < 1e-6


def test_convergence_noisy_and_scipy_agree():
    rng = np.random.default_rng(8)
    u = 4 - 7 * GS ** -1.5 + rng.normal(0, 0.005, GS.size)
    cf = fit_convergence(zip(GS, u))
    assert abs(cf.u_star - 4) < 0.02
    ref = optimize.least_squares(lambda t: t[0] + t[1] * GS ** t[2] - u, [u.max(), -7, -1.5],
                                 method="lm", xtol=1e-14, ftol=1e-14)
    assert np.allclose([cf.u_star, cf.beta, cf.varsigma], ref.x, rtol=1e-4, atol=1e-5)


def test_convergence_preconditions():
    with pytest.raises(InputError):
        fit_convergence([(5, 3.0), (10, 3.5), (20, 3.6)])
    with pytest.raises(InputError):
        fit_convergence([(5, 3.0), (5, 3.1), (10, 3.5), (20, 3.6)])
    with pytest.raises(NoConvergence):
        fit_convergence(zip(GS, 4 - 7 * GS ** -1.5), init=(0.0, -1.0, -0.2), max_iter=2)


@settings(max_examples=60)
@given(st.floats(2, 5), st.floats(-20, -1), st.floats(-2.5, -0.8))
def test_convergence_recovers_any_curve(u_star, beta, vs):
    cf = fit_convergence(zip(GS, u_star + beta * GS.astype(float) ** vs), init=(u_star + 0.01, beta * 0.9, vs * 0.95))
    assert cf.u_star == pytest.approx(u_star, abs=1e-6)


def test_fiac_like_fixture():
    b = fiac_like_bundle(seed=1, G=16)
    assert b.field_count == 16 and b.domain.kind.value == "cube"
    assert 0.1 < b.included.mean() < 0.6
