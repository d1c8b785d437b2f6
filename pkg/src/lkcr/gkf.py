"""Expected Euler characteristics of Gaussian and chi-squared excursion sets.

The expected EC of ``{s : T(s) >= u}`` is ``sum_j L_j * rho_j(u)`` where the
``L_j`` are the Lipschitz-Killing curvatures (LKCs) of the domain under the
field's induced metric and the ``rho_j`` depend only on the marginal law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .domain import DomainKind
from .errors import InputError, NoCrossing, UnsupportedFamilyOrder

MAX_ORDER = 8
MAX_ALPHA = 0.2
# above this tail probability the EC heuristic is not trusted
ECH_VALID_MAX = 0.10


@dataclass(frozen=True)
class RhoFamily:
    kind: str = "gaussian"
    dof: int | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.dof is not None:
                raise InputError("the Gaussian family takes no degrees of freedom")
        elif self.kind == "chi2":
            if not isinstance(self.dof, (int, np.integer)) or self.dof < 1:
                raise InputError("chi-squared family needs a positive integer dof")
        else:
            raise InputError(f"unknown rho family {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "RhoFamily":
        """Parse ``gaussian`` or ``chi2:<k>``."""
        text = text.strip().lower()
        if text in ("gaussian", "normal", "z"):
            return GAUSSIAN
        if text.startswith("chi2"):
            _, _, k = text.partition(":")
            try:
                return cls("chi2", int(k))
            except ValueError:
                raise InputError(f"bad chi-squared family spec {text!r}; use chi2:<k>") from None
        raise InputError(f"unknown rho family {text!r}")

    def __str__(self):
        return "gaussian" if self.kind == "gaussian" else f"chi2:{self.dof}"


GAUSSIAN = RhoFamily()


def chi_squared(k: int) -> RhoFamily:
    return RhoFamily("chi2", k)


def hermite(n: int, u):
    """Probabilists' Hermite polynomial He_n by the three-term recurrence."""
    u = np.asarray(u, dtype=float)
    if n == 0:
        return np.ones_like(u)
    prev, cur = np.ones_like(u), u.copy()
    for m in range(1, n):
        prev, cur = cur, u * cur - m * prev
    return cur


def _rho_gaussian(j, u):
    if j == 0:
        return special.ndtr(-u)
    return (2 * np.pi) ** (-(j + 1) / 2) * hermite(j - 1, u) * np.exp(-0.5 * u * u)


def _rho_chi2(j, k, u):
    if j == 0:
        return special.gammaincc(k / 2, np.maximum(u, 0) / 2)
    out = np.zeros_like(u)
    pos = u > 0
    if not np.any(pos):
        return out
    x = u[pos]
    logx = np.log(x)
    log_pre = ((k - j) / 2) * logx - x / 2 - (j / 2) * math.log(2 * math.pi) \
        - special.gammaln(k / 2) - ((k - 2) / 2) * math.log(2)
    acc = np.zeros_like(x)
    for l in range((j - 1) // 2 + 1):
        for m in range(j - 1 - 2 * l + 1):
            top = j - 1 - m - 2 * l
            if k < j - m - 2 * l:
                continue
            log_coef = (special.gammaln(k) - special.gammaln(top + 1) - special.gammaln(k - top)
                        + special.gammaln(j) - special.gammaln(m + 1) - special.gammaln(l + 1)
                        - l * math.log(2))
            sign = -1.0 if (j - 1 + m + l) % 2 else 1.0
            acc += sign * np.exp(log_pre + log_coef + (m + l) * logx)
    out[pos] = acc
    return out


def rho(family: RhoFamily, j: int, u):
    """EC density ``rho_j(u)``; ``rho_0`` is the upper tail probability.

    Chi-squared densities with ``j >= 1`` are zero for ``u <= 0``.
    """
    if not 0 <= j <= MAX_ORDER:
        raise UnsupportedFamilyOrder(f"rho_{j} is not supported (0 <= j <= {MAX_ORDER})")
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    if family.kind == "gaussian":
        out = _rho_gaussian(j, u)
    else:
        out = _rho_chi2(j, family.dof, np.atleast_1d(u)).reshape(u.shape)
    return float(out) if scalar else out


@dataclass(frozen=True)
class LkcVector:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in np.ravel(self.values))
        if not vals:
            raise InputError("an LKC vector needs at least L_0")
        if len(vals) - 1 > MAX_ORDER:
            raise UnsupportedFamilyOrder(f"dimension {len(vals) - 1} exceeds {MAX_ORDER}")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    @classmethod
    def parse(cls, text: str) -> "LkcVector":
        try:
            return cls(tuple(float(t) for t in text.split(",") if t.strip()))
        except ValueError:
            raise InputError(f"cannot parse LKC list {text!r}") from None


def expected_ec(lkcs: LkcVector, family: RhoFamily, u):
    u = np.asarray(u, dtype=float)
    total = np.zeros_like(u)
    for j, L in enumerate(lkcs.values):
        if L != 0.0:
            total = total + L * rho(family, j, u)
    return float(total) if total.ndim == 0 else total


class TailProbability(NamedTuple):
    probability: float
    expected_ec: float
    in_validity_range: bool

    def __float__(self):
        return self.probability


def tail_probability(lkcs: LkcVector, family: RhoFamily, u: float) -> TailProbability:
    """``P(max T >= u)`` approximated by the expected EC, clamped to [0, 1].

    The approximation is only trustworthy for small probabilities; results
    whose raw expected EC is negative or above 0.10 are flagged.
    """
    raw = float(expected_ec(lkcs, family, u))
    p = min(max(raw, 0.0), 1.0)
    return TailProbability(p, raw, 0.0 <= raw <= ECH_VALID_MAX)


def threshold(lkcs: LkcVector, family: RhoFamily, alpha: float = 0.05,
              u_lo: float = 0.0, u_hi: float = 50.0, tol: float = 1e-6) -> float:
    """Largest ``u`` with expected EC ``>= alpha``.

    The expected EC is not monotone (it dips negative at moderate levels), so
    the search anchors at a high level and walks down to the rightmost
    crossing before bisecting.
    """
    if not 0.0 < alpha <= MAX_ALPHA:
        raise InputError(f"alpha outside ECH validity (<={MAX_ALPHA}): {alpha}")
    f = lambda x: expected_ec(lkcs, family, x) - alpha
    for _ in range(20):
        if f(u_hi) < 0:
            break
        u_hi *= 2
    else:
        raise NoCrossing("expected EC stays above alpha on the search window")
    grid = np.linspace(u_lo, u_hi, int(np.ceil((u_hi - u_lo) / 0.01)) + 1)
    above = np.flatnonzero(f(grid) >= 0)
    if above.size == 0:
        raise NoCrossing(f"expected EC never reaches alpha={alpha} on [{u_lo}, {u_hi}]")
    i = above[-1]
    if i == grid.size - 1:
        raise NoCrossing("crossing lies beyond the search window")
    a, b = grid[i], grid[i + 1]
    while b - a > tol:
        mid = 0.5 * (a + b)
        if f(mid) >= 0:
            a = mid
        else:
            b = mid
    return float(0.5 * (a + b))


def truth_lkcs(kind, alpha_cov: float) -> LkcVector:
    """LKCs of a unit-variance field with covariance ``exp(-alpha |x - y|^2)``.

    The second spectral moment is ``2 * alpha``; the domains are the unit
    square, unit cube and unit sphere.
    """
    if alpha_cov <= 0:
        raise InputError("covariance scale must be positive")
    kind = DomainKind(kind)
    lam = 2.0 * alpha_cov
    if kind is DomainKind.SQUARE:
        return LkcVector((1.0, 2.0 * math.sqrt(lam), lam))
    if kind is DomainKind.CUBE:
        return LkcVector((1.0, 3.0 * math.sqrt(lam), 3.0 * lam, lam ** 1.5))
    return LkcVector((2.0, 0.0, 4.0 * math.pi * lam))
