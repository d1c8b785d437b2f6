"""Direct topological feature counts for small excursion masks.

This is the slow reference route for Euler characteristics: components by
union-find, holes and voids by labeling the complement with the paired
connectivity, and 3D handles from the first Betti number (mod 2) of an
explicitly enumerated complex.  Nothing here shares code with the cell
counting in :mod:`lkcr.excursion`.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from .domain import DomainKind
from .excursion import DUAL_CONNECTIVITY, ExcursionMask, check_connectivity


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _grid_offsets(d, conn):
    out = []
    for off in itertools.product((-1, 0, 1), repeat=d):
        nz = sum(o != 0 for o in off)
        if nz == 0:
            continue
        limit = {4: 1, 6: 1, 8: 2, 18: 2, 26: 3}[int(conn)]
        if nz <= limit:
            out.append(off)
    return out


def _grid_components(grid, conn):
    sites = list(zip(*np.nonzero(grid)))
    index = {s: i for i, s in enumerate(sites)}
    uf = UnionFind(len(sites))
    for s, i in index.items():
        for off in _grid_offsets(grid.ndim, conn):
            t = tuple(a + b for a, b in zip(s, off))
            j = index.get(t)
            if j is not None:
                uf.union(i, j)
    return len({uf.find(i) for i in range(len(sites))})


def sphere_neighbors(G, conn):
    """Adjacency lists of the lat-lon sphere grid."""
    n = G // 2
    K = n * G + 2
    north, south = K - 2, K - 1
    nbr = [set() for _ in range(K)]

    def link(a, b):
        nbr[a].add(b)
        nbr[b].add(a)

    for r in range(n):
        for c in range(G):
            k = c + G * r
            link(k, (c + 1) % G + G * r)
            if r + 1 < n:
                link(k, c + G * (r + 1))
                if int(conn) == 8:
                    link(k, (c + 1) % G + G * (r + 1))
                    link((c + 1) % G + G * r, c + G * (r + 1))
    for c in range(G):
        link(north, c)
        link(south, c + G * (n - 1))
    return nbr


def _graph_components(included, nbr):
    idx = np.flatnonzero(included)
    uf = UnionFind(included.size)
    for k in idx:
        for j in nbr[k]:
            if included[j]:
                uf.union(k, j)
    return len({uf.find(k) for k in idx})


def _gf2_rank(rows):
    """Rank over GF(2) of a matrix given as a list of int bitmasks."""
    pivots = {}
    rank = 0
    for r in rows:
        while r:
            top = r.bit_length() - 1
            p = pivots.get(top)
            if p is None:
                pivots[top] = r
                rank += 1
                break
            r ^= p
    return rank


def _betti1_3d(grid, conn):
    """First Betti number (mod 2) of an explicit complex on the included voxels."""
    g = np.pad(grid, 1)
    vox = list(zip(*np.nonzero(g)))
    vid = {v: i for i, v in enumerate(vox)}
    edges = {}
    two_cells = []

    def edge(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in edges:
            edges[key] = len(edges)
        return edges[key]

    if int(conn) == 6:
        # dual cubical complex: axis-adjacent pairs and fully included plaquettes
        for v in vox:
            for ax in range(3):
                w = list(v)
                w[ax] += 1
                w = tuple(w)
                if w in vid:
                    edge(vid[v], vid[w])
        for v in vox:
            for a1, a2 in ((0, 1), (0, 2), (1, 2)):
                corners = []
                for d1, d2 in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    w = list(v)
                    w[a1] += d1
                    w[a2] += d2
                    corners.append(vid.get(tuple(w)))
                if None in corners:
                    continue
                bits = 0
                for p, q in zip(corners, corners[1:] + corners[:1]):
                    bits |= 1 << edge(p, q)
                two_cells.append(bits)
    else:
        # nerve of the closed voxel cover: simplices are voxel sets sharing a point
        tri = set()
        Z, Y, X = g.shape
        for z, y, x in itertools.product(range(Z - 1), range(Y - 1), range(X - 1)):
            block = [(z + dz, y + dy, x + dx) for dz, dy, dx in itertools.product((0, 1), repeat=3)]
            members = [vid[b] for b in block if b in vid]
            if int(conn) == 18 and len(members) == 2:
                a, b = (vox[m] for m in members)
                if all(p != q for p, q in zip(a, b)):
                    continue
            for a, b in itertools.combinations(members, 2):
                edge(a, b)
            for t in itertools.combinations(sorted(members), 3):
                tri.add(t)
        for a, b, c in tri:
            two_cells.append((1 << edge(a, b)) | (1 << edge(a, c)) | (1 << edge(b, c)))
    boundary1 = [(1 << a) | (1 << b) for a, b in edges]
    return len(edges) - _gf2_rank(boundary1) - _gf2_rank(two_cells)


class Features(NamedTuple):
    components: int
    holes: int  # holes in 2D, handles (tunnels) in 3D
    voids: int

    @property
    def euler(self) -> int:
        return self.components - self.holes + self.voids


def count_features(mask: ExcursionMask, conn=None) -> Features:
    """Count components, holes/handles and voids of an excursion mask.

    The complement is labeled with the paired connectivity (8 with 4, 26 and
    18 with 6).
    """
    domain = mask.domain
    conn = check_connectivity(domain, conn)
    dual = DUAL_CONNECTIVITY[conn]
    inc = mask.included
    if domain.kind is DomainKind.SPHERE:
        if not inc.any():
            return Features(0, 0, 0)
        if inc.all():
            return Features(1, 0, 1)
        comps = _graph_components(inc, sphere_neighbors(domain.grid_size, conn))
        outside = _graph_components(~inc, sphere_neighbors(domain.grid_size, dual))
        return Features(comps, outside - 1, 0)
    grid = inc.reshape(domain.grid_shape)
    comps = _grid_components(grid, conn)
    background = _grid_components(~np.pad(grid, 1), dual) - 1
    if domain.kind is DomainKind.SQUARE:
        return Features(comps, background, 0)
    handles = _betti1_3d(grid, conn)
    return Features(comps, handles, background)
