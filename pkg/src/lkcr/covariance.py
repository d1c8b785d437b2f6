"""Covariance of mean EC across levels.

Five estimators are available.  All but the pseudo-inverse return a strictly
positive-definite matrix over the retained levels (levels whose sample EC
variance is zero are dropped before anything else happens).
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InputError, InsufficientFields, InsufficientLevels
from .excursion import EcProfile

SMOOTH_FRACTION = 0.10
PINV_RTOL = 1e-10
SC_NUGGET = 1e-6
SGW_FLOOR = 1e-8


class CovKind(str, enum.Enum):
    IDENTITY = "i"
    SMOOTHED_DIAGONAL = "sd"
    SMOOTHED_CORRELOGRAM = "sc"
    SAMPSON_GUTTORP = "sgw"
    PSEUDO_INVERSE = "pi"


@dataclass(frozen=True)
class CovMethod:
    kind: CovKind = CovKind.SMOOTHED_DIAGONAL
    k: int = 10

    def __post_init__(self):
        object.__setattr__(self, "kind", CovKind(self.kind))
        if self.k < 1:
            raise InputError("SGW needs at least one MDS component")

    @classmethod
    def parse(cls, text) -> "CovMethod":
        if isinstance(text, CovMethod):
            return text
        name, _, k = str(text).strip().lower().partition(":")
        try:
            kind = CovKind(name)
        except ValueError:
            raise InputError(f"unknown covariance method {text!r}; use one of i, sd, sc, sgw[:k], pi") from None
        if k:
            if kind is not CovKind.SAMPSON_GUTTORP:
                raise InputError("only sgw takes a component count")
            return cls(kind, int(k))
        return cls(kind)

    def __str__(self):
        if self.kind is CovKind.SAMPSON_GUTTORP and self.k != 10:
            return f"sgw:{self.k}"
        return self.kind.value


# ---------------------------------------------------------------------------
# smoothing


def local_quadratic(x, y, x_eval=None, frac: float = SMOOTH_FRACTION, degree: int = 2):
    """Local polynomial regression with a tricube nearest-neighbour bandwidth.

    The window holds ``ceil(frac * n)`` data points on each side of the
    evaluation point (``2 * ceil(frac * n) + 1`` nearest points, at least
    ``degree + 3``).  The bandwidth reaches the first point outside the window
    so every point inside keeps a positive weight.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_eval = x if x_eval is None else np.asarray(x_eval, dtype=float)
    n = x.size
    if n == 0:
        raise InsufficientLevels("nothing to smooth")
    degree = min(degree, n - 1)
    if degree <= 0:
        return np.full(x_eval.shape, y.mean())
    m = min(n, max(2 * math.ceil(frac * n) + 1, degree + 3))
    dist = np.abs(x_eval[:, None] - x[None, :])
    srt = np.sort(dist, axis=1)
    if m < n:
        h = srt[:, m]
    else:
        h = srt[:, -1] * 1.25
    h = np.where(h > 0, h, 1.0)
    w = np.clip(1 - (dist / h[:, None]) ** 3, 0, None) ** 3
    # design in powers of (x - x0), scaled by h for conditioning
    t = (x[None, :] - x_eval[:, None]) / h[:, None]
    A = np.stack([t ** p for p in range(degree + 1)], axis=-1)
    M = np.einsum("ei,eip,eiq->epq", w, A, A)
    b = np.einsum("ei,eip,ei->ep", w, A, y[None, :])
    M += 1e-12 * np.eye(degree + 1)
    coef = np.linalg.solve(M, b[..., None])[..., 0]
    return coef[:, 0]


# ---------------------------------------------------------------------------
# sample moments


@dataclass(frozen=True)
class SampleMoments:
    """Per-level variance and cross-level covariance of the raw EC.

    ``*_of_mean`` versions are divided by ``F`` to describe the mean EC.
    """

    var: np.ndarray
    cov: np.ndarray
    corr: np.ndarray
    field_count: int

    @property
    def var_of_mean(self):
        return self.var / self.field_count

    @property
    def cov_of_mean(self):
        return self.cov / self.field_count

    @property
    def zero_variance(self):
        return self.var <= 0


def sample_moments(profile: EcProfile) -> SampleMoments:
    F = profile.field_count
    if F < 2:
        raise InsufficientFields(f"need at least 2 fields for sample moments, got {F}")
    ec = profile.ec.astype(float)
    cov = np.cov(ec, rowvar=False, ddof=1).reshape(ec.shape[1], ec.shape[1])
    var = np.diag(cov).copy()
    var[var < 1e-12 * max(var.max(initial=0.0), 1.0)] = 0.0
    sd = np.sqrt(var)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = np.nan
    np.fill_diagonal(corr, np.where(var > 0, 1.0, np.nan))
    return SampleMoments(var, cov, corr, F)


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class CovarianceEstimate:
    method: CovMethod
    levels: np.ndarray
    matrix: np.ndarray
    whitener: np.ndarray
    retained: np.ndarray
    dropped_levels: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def apply_inverse(self, v):
        """Apply the inverse (or pseudo-inverse) of the matrix."""
        W = self.whitener
        return W.T @ (W @ np.asarray(v, dtype=float))

    @property
    def inverse(self):
        return self.whitener.T @ self.whitener

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(["u"] + [repr(float(u)) for u in self.levels]) + "\n")
        for u, row in zip(self.levels, self.matrix):
            out.write(",".join([repr(float(u))] + [repr(float(v)) for v in row]) + "\n")
        return out.getvalue()


def _chol_whitener(S):
    L = linalg.cholesky(S, lower=True)
    return linalg.solve_triangular(L, np.eye(S.shape[0]), lower=True)


def _smoothed_variance(levels, var_of_mean, keep):
    """Smooth log-variance over retained levels; returns values at all levels."""
    fitted = local_quadratic(levels[keep], np.log(var_of_mean[keep]), levels)
    return np.exp(fitted)


def _correlogram(levels, corr, keep):
    """Average sample correlation binned by level separation."""
    spacing = float(np.median(np.diff(levels))) if levels.size > 1 else 1.0
    idx = np.flatnonzero(keep)
    lag = np.abs(levels[idx][:, None] - levels[idx][None, :])
    bins = np.rint(lag / spacing).astype(int)
    c = corr[np.ix_(idx, idx)]
    iu = np.triu_indices(idx.size, 1)
    b, v = bins[iu], c[iu]
    ok = np.isfinite(v)
    nbins = int(bins.max()) + 1 if idx.size > 1 else 1
    sums = np.bincount(b[ok], weights=v[ok], minlength=nbins)
    counts = np.bincount(b[ok], minlength=nbins)
    lags = np.arange(nbins)
    have = counts > 0
    have[0] = True
    sums[0], counts[0] = 1.0, 1
    return spacing, lags[have] * spacing, sums[have] / counts[have], nbins


def _smoothed_correlation(levels, corr, keep):
    spacing, lag_x, lag_c, nbins = _correlogram(levels, corr, keep)
    grid = np.arange(nbins) * spacing
    if lag_x.size > 1:
        smooth = local_quadratic(lag_x, lag_c, grid)
    else:
        smooth = np.ones(nbins)
    smooth[0] = 1.0
    # symmetric periodic extension; its DFT is real
    if nbins > 1:
        ext = np.concatenate([smooth, smooth[-2:0:-1]])
    else:
        ext = smooth
    spectrum = np.fft.fft(ext).real
    spectrum = np.clip(spectrum, 0.0, None)
    if spectrum.sum() <= 0:
        spectrum = np.zeros_like(spectrum)
        spectrum[0] = 1.0
    P = ext.size
    freqs = np.arange(P) / (P * spacing)
    idx = np.flatnonzero(keep)
    tau = levels[idx][:, None] - levels[idx][None, :]
    # nonnegative cosine series: positive semi-definite at any set of levels
    R = np.tensordot(np.cos(2 * np.pi * tau[..., None] * freqs), spectrum, axes=([-1], [0]))
    R /= spectrum.sum()
    R = (R + SC_NUGGET * np.eye(idx.size)) / (1 + SC_NUGGET)
    return R, {"correlogram_lag": lag_x, "correlogram": lag_c, "smoothed_correlogram": smooth,
               "spectrum": spectrum}


def _classical_mds(D2, k):
    n = D2.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ D2 @ J
    lam, vec = np.linalg.eigh(B)
    order = np.argsort(lam)[::-1][:k]
    lam, vec = lam[order], vec[:, order]
    pos = lam > 0
    return vec[:, pos] * np.sqrt(lam[pos])


def estimate(profile: EcProfile, method=None) -> CovarianceEstimate:
    """Estimate the covariance of the mean EC over the profile's levels."""
    method = CovMethod() if method is None else CovMethod.parse(method)
    levels = profile.levels
    U = levels.size
    F = profile.field_count
    diag = {}
    if F < 2:
        if method.kind is not CovKind.IDENTITY:
            raise InsufficientFields(f"covariance method {method} needs at least 2 fields, got {F}")
        retained = np.arange(U)
        return CovarianceEstimate(method, levels, np.eye(U), np.eye(U), retained, np.array([], dtype=int), diag)

    mom = sample_moments(profile)
    keep = ~mom.zero_variance
    retained = np.flatnonzero(keep)
    dropped = np.flatnonzero(~keep)
    lv = levels[retained]
    n = retained.size
    if n == 0:
        raise InsufficientLevels("every level has zero EC variance")
    vm = mom.var_of_mean
    diag["sample_variance"] = vm

    if method.kind is CovKind.IDENTITY:
        S = np.eye(n)
        W = np.eye(n)
    elif method.kind is CovKind.PSEUDO_INVERSE:
        S = mom.cov_of_mean[np.ix_(retained, retained)]
        S = 0.5 * (S + S.T)
        lam, vec = np.linalg.eigh(S)
        nz = lam > PINV_RTOL * lam.max()
        W = (vec[:, nz] / np.sqrt(lam[nz])).T
        diag["rank"] = int(nz.sum())
        diag["eigenvalues"] = lam
    else:
        smoothed = _smoothed_variance(levels, vm, keep)
        diag["smoothed_variance"] = smoothed
        sv = smoothed[retained]
        if method.kind is CovKind.SMOOTHED_DIAGONAL:
            S = np.diag(sv)
            W = np.diag(1.0 / np.sqrt(sv))
        elif method.kind is CovKind.SMOOTHED_CORRELOGRAM:
            R, extra = _smoothed_correlation(levels, mom.corr, keep)
            diag.update(extra)
            sd = np.sqrt(sv)
            S = R * np.outer(sd, sd)
            W = _chol_whitener(S)
        else:
            if n < method.k + 2:
                raise InsufficientLevels(f"SGW with k={method.k} needs at least {method.k + 2} levels, got {n}")
            C = mom.cov_of_mean[np.ix_(retained, retained)]
            v = np.diag(C)
            D2 = np.clip(v[:, None] + v[None, :] - 2 * C, 0, None)
            X = _classical_mds(D2, method.k)
            d2k = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
            S = 0.5 * (sv[:, None] + sv[None, :] - d2k)
            S = 0.5 * (S + S.T)
            lam, vec = np.linalg.eigh(S)
            floor = SGW_FLOOR * np.trace(S) / n
            diag["floored_eigenvalues"] = int((lam < floor).sum())
            S = (vec * np.maximum(lam, floor)) @ vec.T
            S = 0.5 * (S + S.T)
            W = _chol_whitener(S)
    return CovarianceEstimate(method, lv, S, W, retained, dropped, diag)


def from_matrix(levels, matrix, method=None) -> CovarianceEstimate:
    """Wrap a known positive-definite covariance (e.g. a true or synthetic one)."""
    S = np.asarray(matrix, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if S.shape != (levels.size, levels.size):
        raise InputError("covariance matrix must be U x U")
    method = CovMethod() if method is None else CovMethod.parse(method)
    retained = np.arange(levels.size)
    return CovarianceEstimate(method, levels, S, _chol_whitener(0.5 * (S + S.T)), retained,
                              np.array([], dtype=int), {})
