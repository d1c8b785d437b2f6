"""Sampled domains and field bundles.

Site ordering is fixed everywhere in the package: for the square and cube the
flat index runs x fastest, then y, then z, so ``values.reshape(G, G)`` gives a
``[y, x]`` array and ``values.reshape(G, G, G)`` a ``[z, y, x]`` array.  For the
sphere the first ``n_lat * G`` entries are the interior latitude rows (longitude
fastest, north to south) followed by the north and south pole sites.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateField, DimensionMismatch, InputError


class DomainKind(str, enum.Enum):
    SQUARE = "square"
    CUBE = "cube"
    SPHERE = "sphere"


_AMBIENT_DIM = {DomainKind.SQUARE: 2, DomainKind.CUBE: 3, DomainKind.SPHERE: 3}
_MANIFOLD_DIM = {DomainKind.SQUARE: 2, DomainKind.CUBE: 3, DomainKind.SPHERE: 2}
_EULER = {DomainKind.SQUARE: 1, DomainKind.CUBE: 1, DomainKind.SPHERE: 2}


@dataclass(frozen=True)
class GridDomain:
    """A square, cube or lat-lon sphere grid with ``grid_size`` sites per direction.

    For the sphere ``grid_size`` is the number of longitude columns; there are
    ``grid_size // 2`` interior latitude rows plus one site at each pole.
    """

    kind: DomainKind
    grid_size: int

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        G = int(self.grid_size)
        if G != self.grid_size or G < 1:
            raise InputError(f"grid size must be a positive integer, got {self.grid_size!r}")
        if self.kind is DomainKind.SPHERE and G < 4:
            raise InputError("sphere grids need at least 4 longitude columns")
        object.__setattr__(self, "grid_size", G)

    @property
    def n_lat(self) -> int:
        if self.kind is not DomainKind.SPHERE:
            raise AttributeError("n_lat is only defined for sphere grids")
        return self.grid_size // 2

    @property
    def n_sites(self) -> int:
        G = self.grid_size
        if self.kind is DomainKind.SQUARE:
            return G * G
        if self.kind is DomainKind.CUBE:
            return G ** 3
        return self.n_lat * G + 2

    @property
    def ambient_dim(self) -> int:
        # the sphere surface lives in R^3; distances are chordal
        return _AMBIENT_DIM[self.kind]

    @property
    def dim(self) -> int:
        return _MANIFOLD_DIM[self.kind]

    @property
    def euler_characteristic(self) -> int:
        return _EULER[self.kind]

    @property
    def grid_shape(self) -> tuple:
        G = self.grid_size
        if self.kind is DomainKind.SQUARE:
            return (G, G)
        if self.kind is DomainKind.CUBE:
            return (G, G, G)
        return (self.n_lat, G)

    def coordinates(self) -> np.ndarray:
        """Site coordinates, shape ``(K, ambient_dim)``, in flat-index order.

        Square and cube sites sit at cell centres ``(i + 0.5) / G``; sphere
        sites lie on the unit sphere.
        """
        G = self.grid_size
        if self.kind is DomainKind.SPHERE:
            n = self.n_lat
            colat = np.pi * (np.arange(n) + 1.0) / (n + 1.0)
            lon = 2.0 * np.pi * np.arange(G) / G
            th, ph = np.meshgrid(colat, lon, indexing="ij")
            pts = np.column_stack([
                (np.sin(th) * np.cos(ph)).ravel(),
                (np.sin(th) * np.sin(ph)).ravel(),
                np.cos(th).ravel(),
            ])
            poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
            return np.vstack([pts, poles])
        ax = (np.arange(G) + 0.5) / G
        if self.kind is DomainKind.SQUARE:
            y, x = np.meshgrid(ax, ax, indexing="ij")
            return np.column_stack([x.ravel(), y.ravel()])
        z, y, x = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


@dataclass(frozen=True)
class FieldBundle:
    """``F`` realizations of a field sampled at the ``K`` sites of a domain.

    ``mask`` is an optional site-inclusion vector; excluded sites never enter
    an excursion set and are ignored by normalization and level design.
    """

    domain: GridDomain
    values: np.ndarray
    mask: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C")
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2:
            raise DimensionMismatch("field values must be an F x K matrix")
        K = self.domain.n_sites
        if vals.shape[1] != K:
            raise DimensionMismatch(f"expected {K} sites per field for {self.domain}, got {vals.shape[1]}")
        if not np.all(np.isfinite(vals)):
            raise InputError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool).ravel().copy()
            if m.size != K:
                raise DimensionMismatch(f"mask has {m.size} entries, expected {K}")
            if not m.any():
                raise InputError("mask excludes every site")
            if m.all():
                m = None
            else:
                m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def field_count(self) -> int:
        return self.values.shape[0]

    @property
    def included(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.domain.n_sites, dtype=bool)
        return self.mask

    def site_values(self) -> np.ndarray:
        """All values at included sites, flattened."""
        return self.values[:, self.included].ravel()

    def __eq__(self, other):
        if not isinstance(other, FieldBundle):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        return (self.domain == other.domain and same_mask and self.normalized == other.normalized
                and self.values.shape == other.values.shape
                and np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64)))

    __hash__ = None


def normalize(bundle: FieldBundle, per_field: bool = False) -> FieldBundle:
    """Shift and scale to mean 0 and variance 1.

    By default one pooled mean and standard deviation are taken over every
    included site of every field.  ``per_field=True`` standardizes each field
    separately (a diagnostic mode).
    """
    inc = bundle.included
    data = bundle.values[:, inc]
    if per_field:
        mean = data.mean(axis=1, keepdims=True)
        sd = data.std(axis=1, keepdims=True)
        if np.any(sd == 0):
            raise DegenerateField("a field has zero variance")
    else:
        mean = data.mean()
        sd = data.std()
        if sd == 0:
            raise DegenerateField("pooled variance is zero")
    out = (bundle.values - mean) / sd
    return FieldBundle(bundle.domain, out, bundle.mask, normalized=True)
