import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import linalg

from lkcr import covariance as cm
from lkcr.covariance import CovKind, CovMethod, estimate, from_matrix, local_quadratic, sample_moments
from lkcr.domain import normalize
from lkcr.errors import InputError, InsufficientFields, InsufficientLevels
from lkcr.excursion import EcProfile, ec_profile
from lkcr.regression import design_levels
from lkcr.simulation import GrfSpec, fiac_like_bundle, simulate
from lkcr.domain import GridDomain

METHODS = ["i", "sd", "sc", "sgw", "pi"]


@pytest.fixture(scope="module")
def square_profile():
    b = normalize(simulate(GrfSpec(GridDomain("square", 30), 100.0, 15, seed=4)))
    return ec_profile(b, design_levels(b).levels)


def test_parse():
    assert CovMethod.parse("sgw:5") == CovMethod(CovKind.SAMPSON_GUTTORP, 5)
    assert str(CovMethod.parse("SD")) == "sd"
    assert CovMethod() == CovMethod.parse("sd")
    with pytest.raises(InputError):
        CovMethod.parse("nope")


def test_local_quadratic_reproduces_quadratics():
    x = np.linspace(-3, 3, 40)
    y = 2 - x + 0.5 * x ** 2
    assert np.allclose(local_quadratic(x, y, np.linspace(-3, 3, 13)), 2 - np.linspace(-3, 3, 13)
                       + 0.5 * np.linspace(-3, 3, 13) ** 2, atol=1e-9)


def test_identical_rows_give_zero_variance():
    prof = EcProfile(np.arange(4.0), np.tile([1, 3, 2, 0], (5, 1)))
    m = sample_moments(prof)
    assert np.all(m.var == 0) and np.all(m.zero_variance)


def test_two_field_hand_values():
    prof = EcProfile([0.0], [[0], [2]])
    m = sample_moments(prof)
    assert m.var[0] == 2.0 and m.var_of_mean[0] == 1.0


def test_single_field():
    prof = EcProfile(np.arange(6.0), [[1, 1, 2, 0, 1, 0]])
    with pytest.raises(InsufficientFields):
        sample_moments(prof)
    with pytest.raises(InsufficientFields):
        estimate(prof, "sd")
    assert np.array_equal(estimate(prof, "i").matrix, np.eye(6))


def test_identity_is_unit_matrix(square_profile):
    est = estimate(square_profile, "i")
    n = est.retained.size
    assert np.array_equal(est.matrix, np.eye(n))


def test_zero_variance_levels_dropped(square_profile):
    est = estimate(square_profile, "sd")
    m = sample_moments(square_profile)
    assert np.array_equal(est.dropped_levels, np.flatnonzero(m.var == 0))
    assert est.dropped_levels.size >= 1  # the lowest level is below every field minimum
    assert np.array_equal(est.levels, square_profile.levels[est.retained])


def test_sd_recovers_smooth_variance():
    u = np.linspace(-3, 3, 50)
    a = np.exp(-u ** 2 / 2)
    # two fields at +a and -a: variance 2a^2, variance of the mean exactly a^2 = exp(-u^2)
    prof = EcProfile(u, np.vstack([a, -a]))
    est = estimate(prof, "sd")
    interior = slice(5, 45)
    assert np.allclose(np.diag(est.matrix)[interior], np.exp(-u ** 2)[interior], rtol=0.05)


def test_sd_converges_with_many_fields():
    rng = np.random.default_rng(3)
    u = np.linspace(-2, 2, 50)
    v = 1 + 0.5 * np.sin(u)
    ec = rng.standard_normal((500, u.size)) * np.sqrt(v)
    est = estimate(EcProfile(u, ec), "sd")
    rel = np.abs(np.diag(est.matrix) / (v / 500) - 1)
    assert rel.mean() <= 0.10
    assert rel.max() <= 0.20


def test_pi_moore_penrose(square_profile):
    est = estimate(square_profile, "pi")
    S = est.matrix
    assert est.diagnostics["rank"] <= square_profile.field_count - 1
    assert np.linalg.norm(S @ est.inverse @ S - S) < 1e-8


def test_sc_construction(square_profile):
    est = estimate(square_profile, "sc")
    assert np.all(est.diagnostics["spectrum"] >= 0)
    d = np.sqrt(np.diag(est.matrix))
    R = est.matrix / np.outer(d, d)
    assert np.allclose(np.diag(R), 1.0, atol=1e-12)
    assert np.all(np.abs(R) <= 1 + 1e-8)
    assert np.array_equal(est.matrix, est.matrix.T)


def test_sgw_needs_levels():
    rng = np.random.default_rng(0)
    prof = EcProfile(np.arange(8.0), rng.integers(0, 4, (6, 8)))
    with pytest.raises(InsufficientLevels):
        estimate(prof, "sgw")
    assert estimate(prof, "sgw:3").matrix.shape[0] == estimate(prof, "sd").matrix.shape[0]


def test_fiac_like_correlogram_negative_near_one():
    b = normalize(fiac_like_bundle(seed=0))
    est = estimate(ec_profile(b, design_levels(b).levels), "sc")
    lag = est.diagnostics["correlogram_lag"]
    corr = est.diagnostics["correlogram"]
    near = (lag > 0.9) & (lag < 2.1)
    assert corr[near].mean() < 0


def test_from_matrix_and_csv():
    est = from_matrix([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(est.inverse, np.linalg.inv(est.matrix))
    assert est.to_csv().splitlines()[0] == "u,0.0,1.0"
    with pytest.raises(InputError):
        from_matrix([0.0], np.eye(2))


profiles = st.tuples(st.integers(2, 20), st.integers(8, 30)).flatmap(
    lambda fu: hnp.arrays(np.int64, fu, elements=st.integers(-6, 6)))


@settings(max_examples=120)
@given(profiles, st.sampled_from(["i", "sd", "sc", "sgw:4", "pi"]))
def test_estimates_are_positive_definite(ec, method):
    prof = EcProfile(np.linspace(-3, 3, ec.shape[1]), ec)
    try:
        est = estimate(prof, method)
    except InsufficientLevels:
        return
    S = est.matrix
    assert np.all(np.isfinite(S))
    assert np.max(np.abs(S - S.T)) <= 1e-10 * max(1.0, np.abs(S).max())
    if method == "pi":
        lam = np.linalg.eigvalsh(S)
        assert lam.min() >= -1e-10 * max(lam.max(), 1e-300)
    else:
        linalg.cholesky(S, lower=True)
        if method == "sd":
            assert np.all(np.diag(S) > 0)
    # the whitener inverts the matrix on its range
    W = est.whitener
    assert np.allclose(W @ S @ W.T, np.eye(W.shape[0]), atol=1e-6)
