"""LKC regression: GLS fit of mean EC profiles to the expected-EC formula."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from . import covariance as cov_mod
from .covariance import CovarianceEstimate, CovMethod
from .domain import DomainKind, FieldBundle, GridDomain, normalize
from .errors import DimensionMismatch, InputError, SingularDesign, TooFewLevels
from .excursion import EcProfile, check_connectivity, ec_profile
from .gkf import GAUSSIAN, LkcVector, RhoFamily, rho, tail_probability, threshold

DEFAULT_U = 50
MAX_CONDITION = 1e12
VARIANCE_PREGRID = 200


class Spacing(str, enum.Enum):
    EQUAL = "equal"
    QUANTILE = "quantile"
    VARIANCE = "variance"


@dataclass(frozen=True)
class LevelDesign:
    levels: np.ndarray
    spacing: Spacing
    requested: int
    duplicates_removed: int = 0

    @property
    def U(self) -> int:
        return self.levels.size

    def to_dict(self):
        return {"spacing": self.spacing.value, "U": self.U, "requested": self.requested,
                "duplicates_removed": self.duplicates_removed, "levels": self.levels.tolist()}


def known_lkcs(domain: GridDomain, fix_l0: bool = True) -> dict:
    """LKCs fixed in advance: ``L_0`` is the domain EC, and ``L_1`` vanishes on the sphere."""
    known = {}
    if fix_l0:
        known[0] = float(domain.euler_characteristic)
    if domain.kind is DomainKind.SPHERE:
        known[1] = 0.0
    return known


def design_levels(bundle: FieldBundle, spacing=Spacing.EQUAL, U: int = DEFAULT_U, conn=None) -> LevelDesign:
    """Choose ``U`` regression levels from the pooled field values.

    ``equal`` spans [min, max] uniformly, ``quantile`` uses the
    ``(2t - 1) / 2U`` sample quantiles, ``variance`` places levels with
    density proportional to the smoothed EC variance (computed on a fine
    pre-grid of equally spaced levels).
    """
    spacing = Spacing(spacing)
    dim = bundle.domain.dim
    if U < dim + 2:
        raise TooFewLevels(f"need at least {dim + 2} levels for a {dim}-dimensional domain, got {U}")
    vals = bundle.site_values()
    lo, hi = float(vals.min()), float(vals.max())
    if not hi > lo:
        raise TooFewLevels("field values are constant; no level range")
    if spacing is Spacing.EQUAL:
        levels = np.linspace(lo, hi, U)
    elif spacing is Spacing.QUANTILE:
        probs = (2 * np.arange(1, U + 1) - 1) / (2 * U)
        levels = np.quantile(vals, probs)
    else:
        grid = np.linspace(lo, hi, max(VARIANCE_PREGRID, 4 * U))
        prof = ec_profile(bundle, grid, conn)
        density = _variance_density(prof)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        levels = np.interp(np.linspace(0, 1, U), cdf, grid)
    uniq = np.unique(levels)
    removed = levels.size - uniq.size
    if uniq.size < dim + 2:
        raise TooFewLevels(f"only {uniq.size} distinct levels after removing duplicates")
    return LevelDesign(uniq, spacing, U, removed)


def _variance_density(profile: EcProfile):
    if profile.field_count < 2:
        return np.ones(profile.levels.size)
    mom = cov_mod.sample_moments(profile)
    keep = ~mom.zero_variance
    if keep.sum() < 2:
        return np.ones(profile.levels.size)
    return cov_mod._smoothed_variance(profile.levels, mom.var_of_mean, keep)


def regressor_matrix(levels, family: RhoFamily, dim: int, known: dict | None = None):
    """Regressors ``X[j, i] = rho_i(u_j)`` for the free LKCs.

    Returns ``(X, offset, free)`` where ``offset[j] = sum_known L_i rho_i(u_j)``
    and ``free`` lists the LKC indices matching the columns of ``X``.
    """
    levels = np.asarray(levels, dtype=float)
    known = {} if known is None else known
    free = [i for i in range(dim + 1) if i not in known]
    X = np.column_stack([rho(family, i, levels) for i in free]) if free else np.zeros((levels.size, 0))
    offset = np.zeros(levels.size)
    for i, L in known.items():
        if L != 0.0:
            offset += L * rho(family, i, levels)
    return X, offset, free


@dataclass(frozen=True)
class LkcFit:
    estimate: LkcVector
    free: tuple
    gls_covariance: np.ndarray
    residuals: np.ndarray
    levels: np.ndarray
    sigma_method: CovMethod
    family: RhoFamily
    fixed_l0: bool
    design: LevelDesign | None = None
    dropped_levels: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))

    def full_covariance(self) -> np.ndarray:
        """GLS covariance embedded in the full ``(dim+1) x (dim+1)`` LKC space."""
        n = len(self.estimate)
        out = np.zeros((n, n))
        idx = np.array(self.free, dtype=int)
        out[np.ix_(idx, idx)] = self.gls_covariance
        return out


def _whitened_solve(Xw, yw):
    Q, R = linalg.qr(Xw, mode="economic")
    sv = linalg.svdvals(R)
    if sv.size and (sv[-1] == 0 or (sv[0] / sv[-1]) ** 2 > MAX_CONDITION):
        raise SingularDesign("X' inv(Sigma) X is singular or too ill-conditioned")
    beta = linalg.solve_triangular(R, Q.T @ yw)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    return beta, Rinv @ Rinv.T


def fit(profile: EcProfile, sigma: CovarianceEstimate, domain: GridDomain,
        family: RhoFamily = GAUSSIAN, fix_l0: bool = True, design: LevelDesign | None = None) -> LkcFit:
    """Generalized least squares fit of the mean EC on the EC densities.

    Levels dropped by the covariance estimate are removed from the response
    and the regressors.  With the pseudo-inverse estimate the whitener spans
    only the non-null eigenspace.
    """
    retained = np.asarray(sigma.retained)
    if retained.size and retained.max() >= profile.levels.size:
        raise DimensionMismatch("covariance estimate refers to levels missing from the profile")
    lv = profile.levels[retained]
    if lv.size != sigma.levels.size or not np.allclose(lv, sigma.levels):
        raise DimensionMismatch("covariance levels do not match the profile levels")
    known = known_lkcs(domain, fix_l0)
    X, offset, free = regressor_matrix(lv, family, domain.dim, known)
    if not free:
        raise InputError("no free LKCs to estimate")
    y = profile.mean_ec[retained] - offset
    W = sigma.whitener
    if W.shape[0] < len(free):
        raise SingularDesign("covariance rank is smaller than the number of free LKCs")
    beta, vcov = _whitened_solve(W @ X, W @ y)
    est = np.zeros(domain.dim + 1)
    for i, L in known.items():
        est[i] = L
    est[free] = beta
    return LkcFit(LkcVector(est), tuple(free), vcov, y - X @ beta, lv, sigma.method, family,
                  fix_l0, design, np.asarray(sigma.dropped_levels))


def design_criterion(levels, sigma: CovarianceEstimate, family: RhoFamily, domain: GridDomain,
                     criterion: str = "A", fix_l0: bool = True) -> float:
    """A- (trace) or D- (determinant) criterion of the GLS estimator covariance.

    Smaller is better.  ``sigma`` must be defined on exactly ``levels``.
    """
    levels = np.asarray(levels, dtype=float)
    if sigma.levels.size != levels.size or not np.allclose(sigma.levels, levels):
        raise DimensionMismatch("covariance levels do not match the design")
    X, _, _ = regressor_matrix(levels, family, domain.dim, known_lkcs(domain, fix_l0))
    _, vcov = _whitened_solve(sigma.whitener @ X, np.zeros(sigma.whitener.shape[0]))
    criterion = criterion.upper()
    if criterion == "A":
        return float(np.trace(vcov))
    if criterion == "D":
        return float(np.linalg.det(vcov))
    raise InputError(f"unknown design criterion {criterion!r}; use A or D")


@dataclass(frozen=True)
class PipelineOptions:
    spacing: Spacing = Spacing.EQUAL
    U: int = DEFAULT_U
    cov_method: CovMethod = field(default_factory=CovMethod)
    family: RhoFamily = GAUSSIAN
    fix_l0: bool = True
    connectivity: int | None = None
    alpha: float = 0.05
    per_field_normalization: bool = False


@dataclass(frozen=True)
class PipelineResult:
    fit: LkcFit
    threshold: float
    alpha: float
    profile: EcProfile
    sigma: CovarianceEstimate
    design: LevelDesign
    pvalue: Callable[[float], float] = field(repr=False, compare=False)

    @property
    def threshold_95(self) -> float:
        if self.alpha == 0.05:
            return self.threshold
        return threshold(self.fit.estimate, self.fit.family, 0.05)

    def to_dict(self) -> dict:
        f = self.fit
        out = {
            "lkcs": list(f.estimate.values),
            "lkc_cov": f.full_covariance().tolist(),
            "threshold_95": self.threshold_95,
            "design": self.design.to_dict(),
            "cov_method": str(f.sigma_method),
            "residual_norm": f.residual_norm,
            "family": str(f.family),
            "fixed_l0": f.fixed_l0,
            "dropped_levels": [int(i) for i in f.dropped_levels],
        }
        if self.alpha != 0.05:
            out["alpha"] = self.alpha
            out["threshold"] = self.threshold
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def fit_pipeline(bundle: FieldBundle, options: PipelineOptions | None = None, **kw) -> PipelineResult:
    """normalize -> design levels -> EC profile -> covariance -> GLS -> threshold."""
    opts = options or PipelineOptions()
    if kw:
        opts = PipelineOptions(**{**opts.__dict__, **kw})
    if not 0 < opts.alpha <= 0.2:
        raise InputError(f"alpha outside ECH validity (<=0.2): {opts.alpha}")
    conn = check_connectivity(bundle.domain, opts.connectivity)
    if not bundle.normalized:
        bundle = normalize(bundle, per_field=opts.per_field_normalization)
    design = design_levels(bundle, opts.spacing, opts.U, conn)
    profile = ec_profile(bundle, design.levels, conn)
    sigma = cov_mod.estimate(profile, CovMethod.parse(opts.cov_method))
    return finish_fit(profile, sigma, bundle.domain, design, opts)


def finish_fit(profile, sigma, domain, design, opts) -> PipelineResult:
    """Fit and threshold stage, shared with the experiment runner."""
    fitted = fit(profile, sigma, domain, opts.family, opts.fix_l0, design)
    u = threshold(fitted.estimate, opts.family, opts.alpha)
    lkcs, family = fitted.estimate, opts.family

    def pvalue(level: float) -> float:
        return tail_probability(lkcs, family, level).probability

    return PipelineResult(fitted, u, opts.alpha, profile, sigma, design, pvalue)


def fit_summary(result: PipelineResult) -> str:
    """One-line human summary used in logs."""
    L = ", ".join(f"{v:.4g}" for v in result.fit.estimate.values)
    return f"LKCs=({L}) u_{1 - result.alpha:.0%}={result.threshold:.4f} cov={result.fit.sigma_method}"

