"""Gaussian random fields with Gaussian covariance on the test domains.

Fields on the square and cube are drawn by circulant embedding (exact up to
clipping of round-off-sized negative eigenvalues); sphere fields, and any
grid where the embedding fails, use a dense factor of the site covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg

from .domain import DomainKind, FieldBundle, GridDomain
from .errors import EmbeddingFailure, InputError, NoConvergence, TooLarge

DEFAULT_ALPHA_COV = {DomainKind.SQUARE: 100.0, DomainKind.CUBE: 20.0, DomainKind.SPHERE: 20.0}
DENSE_MAX_SITES = 20_000
EMBED_MAX_POINTS = 2 ** 27
EMBED_NEG_TOL = 1e-8


@dataclass(frozen=True)
class GrfSpec:
    """Field law: ``Cov(T(x), T(y)) = exp(-alpha_cov * |x - y|^2)``.

    ``alpha_cov = inf`` gives independent standard normal sites.
    """

    domain: GridDomain
    alpha_cov: float | None = None
    F: int = 15
    seed: int = 0
    mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.alpha_cov is None:
            object.__setattr__(self, "alpha_cov", DEFAULT_ALPHA_COV[self.domain.kind])
        if not self.alpha_cov > 0:
            raise InputError("alpha_cov must be positive")
        if self.F < 1:
            raise InputError("need at least one field")


def _embedding_size(G):
    m = 2 * G
    # prefer sizes with small prime factors for the FFT
    while max(_prime_factors(m)) > 7:
        m += 1
    return m


def _prime_factors(n):
    out, p = [1], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


@lru_cache(maxsize=16)
def _circulant_sqrt_eigs(G: int, d: int, alpha: float, m: int):
    h = 1.0 / G
    i = np.arange(m)
    lag = np.minimum(i, m - i) * h
    c1 = np.exp(-alpha * lag ** 2)
    c = c1
    for _ in range(d - 1):
        c = np.multiply.outer(c, c1)
    lam = np.fft.fftn(c).real
    if lam.min() < -EMBED_NEG_TOL * lam.max():
        raise EmbeddingFailure(f"negative circulant eigenvalue {lam.min():.3g} at embedding size {m}")
    out = np.sqrt(np.clip(lam, 0, None) / lam.size)
    out.setflags(write=False)
    return out


def _circulant_fields(domain: GridDomain, alpha: float, F: int, rng):
    G, d = domain.grid_size, domain.dim
    m = _embedding_size(G)
    for _ in range(3):
        if m ** d > EMBED_MAX_POINTS:
            raise TooLarge(f"circulant embedding of size {m}^{d} is too large")
        try:
            root = _circulant_sqrt_eigs(G, d, float(alpha), m)
            break
        except EmbeddingFailure:
            m *= 2
    else:
        raise EmbeddingFailure("circulant embedding failed after padding")
    out = np.empty((F, domain.n_sites))
    sl = (slice(0, G),) * d
    for i in range(0, F, 2):
        z = rng.standard_normal((2,) + root.shape)
        y = np.fft.fftn(root * (z[0] + 1j * z[1]))[sl]
        out[i] = y.real.ravel()
        if i + 1 < F:
            out[i + 1] = y.imag.ravel()
    return out


@lru_cache(maxsize=8)
def _dense_factor(domain: GridDomain, alpha: float):
    pts = domain.coordinates()
    sq = np.sum(pts ** 2, axis=1)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2 * pts @ pts.T, 0, None)
    C = np.exp(-alpha * d2)
    try:
        L = linalg.cholesky(C, lower=True)
    except linalg.LinAlgError:
        # numerically rank-deficient (smooth kernels): symmetric square root
        lam, vec = np.linalg.eigh(C)
        L = vec * np.sqrt(np.clip(lam, 0, None))
    L.setflags(write=False)
    return L


def _dense_fields(domain: GridDomain, alpha: float, F: int, rng):
    if domain.n_sites > DENSE_MAX_SITES:
        raise TooLarge(f"{domain.n_sites} sites exceed the dense simulation limit of {DENSE_MAX_SITES}")
    L = _dense_factor(domain, float(alpha))
    z = rng.standard_normal((F, L.shape[1]))
    return z @ L.T


def simulate_values(domain: GridDomain, alpha_cov: float, F: int, rng) -> np.ndarray:
    if math.isinf(alpha_cov):
        return rng.standard_normal((F, domain.n_sites))
    if domain.kind is DomainKind.SPHERE:
        return _dense_fields(domain, alpha_cov, F, rng)
    try:
        return _circulant_fields(domain, alpha_cov, F, rng)
    except EmbeddingFailure:
        return _dense_fields(domain, alpha_cov, F, rng)


def simulate(spec: GrfSpec) -> FieldBundle:
    """Draw ``F`` independent fields; the same seed gives identical output."""
    rng = np.random.default_rng(spec.seed)
    values = simulate_values(spec.domain, spec.alpha_cov, spec.F, rng)
    return FieldBundle(spec.domain, values, spec.mask)


def empirical_threshold(spec: GrfSpec, alpha: float = 0.05, B: int = 2000, batch: int = 500) -> float:
    """``1 - alpha`` sample quantile of the site maximum over ``B`` simulated fields."""
    return float(np.quantile(field_maxima(spec, B, batch), 1.0 - alpha))


def field_maxima(spec: GrfSpec, B: int = 2000, batch: int = 500) -> np.ndarray:
    if B < 100:
        raise InputError(f"need at least 100 replicate fields, got {B}")
    rng = np.random.default_rng(spec.seed)
    inc = np.ones(spec.domain.n_sites, bool) if spec.mask is None else np.asarray(spec.mask, bool)
    maxima = []
    done = 0
    while done < B:
        n = min(batch, B - done)
        vals = simulate_values(spec.domain, spec.alpha_cov, n, rng)
        maxima.append(vals[:, inc].max(axis=1))
        done += n
    return np.concatenate(maxima)


def fiac_like_bundle(seed: int = 0, G: int = 32, F: int = 16, alpha_cov: float = 200.0) -> FieldBundle:
    """Rough 3D fields on an ellipsoidal sub-region of the cube (a brain-like mask).

    The short correlation length gives the many-component, many-handle
    excursion sets typical of real images: a clearly negative EC near ``u = 0``.
    """
    domain = GridDomain(DomainKind.CUBE, G)
    xyz = domain.coordinates() - 0.5
    mask = (xyz[:, 0] / 0.46) ** 2 + (xyz[:, 1] / 0.40) ** 2 + (xyz[:, 2] / 0.32) ** 2 <= 1.0
    return simulate(GrfSpec(domain, alpha_cov, F, seed, mask))


# ---------------------------------------------------------------------------
# convergence extrapolation


@dataclass(frozen=True)
class ConvergenceFit:
    u_star: float
    beta: float
    varsigma: float
    iterations: int
    rss: float

    def predict(self, g):
        return self.u_star + self.beta * np.asarray(g, dtype=float) ** self.varsigma


def fit_convergence(pairs, init=None, max_iter: int = 500, step_tol: float = 1e-8) -> ConvergenceFit:
    """Fit ``u(g) = u_star + beta * g**varsigma`` by Levenberg-Marquardt.

    Starts from ``u_star = max(u)``, ``beta = -7``, ``varsigma = -1.5``.
    """
    pairs = [(float(g), float(u)) for g, u in pairs]
    g = np.array([p[0] for p in pairs])
    u = np.array([p[1] for p in pairs])
    if np.unique(g).size < 4:
        raise InputError("convergence fit needs at least 4 distinct grid sizes")
    if np.any(g <= 0):
        raise InputError("grid sizes must be positive")
    theta = np.array(init if init is not None else (u.max(), -7.0, -1.5), dtype=float)
    logg = np.log(g)

    def resid(t):
        return u - (t[0] + t[1] * g ** t[2])

    r = resid(theta)
    rss = r @ r
    lam = 1e-3
    for it in range(1, max_iter + 1):
        p = g ** theta[2]
        J = np.column_stack([np.ones_like(g), p, theta[1] * p * logg])
        JTJ = J.T @ J
        grad = J.T @ r
        while True:
            A = JTJ + lam * np.diag(np.diag(JTJ) + 1e-12)
            try:
                step = np.linalg.solve(A, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A, grad, rcond=None)[0]
            cand = theta + step
            r_new = resid(cand)
            rss_new = r_new @ r_new
            if np.isfinite(rss_new) and rss_new <= rss:
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e16:
                return ConvergenceFit(*map(float, theta), it, float(rss))
        theta, r, rss = cand, r_new, rss_new
        if np.linalg.norm(step) < step_tol * (1 + np.linalg.norm(theta)):
            return ConvergenceFit(*map(float, theta), it, float(rss))
    raise NoConvergence(f"Levenberg-Marquardt did not converge in {max_iter} iterations")
