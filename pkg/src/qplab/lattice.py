"""Sites of (1/2)Z^d, finite site sets and the block-absorbing enlargement.

Coordinates are stored doubled (``2*x``) as int64 so that half-integer
lattices are handled exactly. Every :class:`SiteSet` keeps its members
sorted lexicographically, which fixes the index map used by operators.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree


class DomainError(ValueError):
    pass


class EnlargementError(RuntimeError):
    """align_enlarge left its allowed margin."""


def _as_doubled(coords) -> np.ndarray:
    a = np.asarray(coords, dtype=np.float64)
    d2 = 2.0 * a
    r = np.rint(d2)
    if not np.all(np.abs(d2 - r) < 1e-9):
        raise DomainError("coordinates must be multiples of 1/2")
    return r.astype(np.int64)


def _encode(pts2: np.ndarray) -> np.ndarray:
    """Injective int64 key per row, for membership tests via np.isin."""
    n, d = pts2.shape
    bits = 62 // max(d, 1)
    off = 1 << (bits - 1)
    if n and (pts2.min() < -off or pts2.max() >= off):
        raise DomainError("coordinates too large to encode")
    key = np.zeros(n, dtype=np.int64)
    for i in range(d):
        key = (key << bits) + (pts2[:, i] + off)
    return key


class SiteSet:
    """Finite set of sites on (1/2)Z^d, canonically ordered."""

    __slots__ = ("_pts2", "_keys", "_index", "center2")

    def __init__(self, pts2, d: int | None = None, center2=None, _canonical=False):
        p = np.asarray(pts2, dtype=np.int64)
        if p.ndim == 1:
            p = p.reshape(-1, 1) if d in (None, 1) else p.reshape(-1, d)
        if p.size == 0:
            p = np.zeros((0, d if d is not None else p.shape[1] if p.ndim == 2 else 1), dtype=np.int64)
        if not _canonical and len(p):
            p = np.unique(p, axis=0)
        p.setflags(write=False)
        self._pts2 = p
        self._keys = None
        self._index = None
        self.center2 = None if center2 is None else tuple(int(c) for c in center2)

    # construction helpers
    @classmethod
    def from_sites(cls, sites, d: int | None = None) -> "SiteSet":
        sites = list(sites) if not isinstance(sites, np.ndarray) else sites
        if len(sites) == 0:
            return cls(np.zeros((0, d or 1), dtype=np.int64), d=d or 1)
        a = np.asarray(sites, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(-1, 1) if (d in (None, 1)) else a.reshape(1, -1)
        return cls(_as_doubled(a))

    @classmethod
    def empty(cls, d: int) -> "SiteSet":
        return cls(np.zeros((0, d), dtype=np.int64), d=d, _canonical=True)

    @property
    def pts2(self) -> np.ndarray:
        return self._pts2

    @property
    def sites(self) -> np.ndarray:
        """Float coordinates (exact halves)."""
        return self._pts2 / 2.0

    @property
    def d(self) -> int:
        return self._pts2.shape[1]

    def __len__(self) -> int:
        return self._pts2.shape[0]

    def __iter__(self):
        for row in self._pts2:
            yield tuple(Fraction(int(c), 2) for c in row)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self._pts2.shape == other._pts2.shape and bool(np.array_equal(self._pts2, other._pts2))

    def __hash__(self):
        return hash(self._pts2.tobytes())

    def __repr__(self) -> str:
        return f"SiteSet(d={self.d}, n={len(self)})"

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = _encode(self._pts2)
        return self._keys

    def index_of(self, pts2) -> np.ndarray:
        """Row positions of doubled sites; -1 where absent."""
        q = np.asarray(pts2, dtype=np.int64).reshape(-1, self.d)
        if len(self) == 0:
            return np.full(len(q), -1)
        qk = _encode(q)
        pos = np.searchsorted(self.keys, qk)
        pos = np.minimum(pos, len(self) - 1)
        hit = self.keys[pos] == qk
        return np.where(hit, pos, -1)

    def contains2(self, pts2) -> np.ndarray:
        return self.index_of(pts2) >= 0

    def __contains__(self, site) -> bool:
        return bool(self.contains2(_as_doubled(np.atleast_1d(site)).reshape(1, -1))[0])

    # set algebra
    def _wrap(self, pts2) -> "SiteSet":
        return SiteSet(pts2, d=self.d)

    def union(self, other: "SiteSet") -> "SiteSet":
        return self._wrap(np.vstack([self._pts2, other._pts2]))

    def intersection(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self._pts2[other.contains2(self._pts2)], d=self.d, _canonical=True)

    def difference(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self._pts2[~other.contains2(self._pts2)], d=self.d, _canonical=True)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def issubset(self, other: "SiteSet") -> bool:
        return bool(other.contains2(self._pts2).all())

    def isdisjoint(self, other: "SiteSet") -> bool:
        return not other.contains2(self._pts2).any()

    def translate2(self, shift2) -> "SiteSet":
        s = np.asarray(shift2, dtype=np.int64).reshape(1, self.d)
        return SiteSet(self._pts2 + s, d=self.d, _canonical=True)

    def translate(self, shift) -> "SiteSet":
        return self.translate2(_as_doubled(np.atleast_1d(shift)))

    def negate(self) -> "SiteSet":
        return self._wrap(-self._pts2)

    def is_symmetric(self, center2=None) -> bool:
        c = np.zeros(self.d, dtype=np.int64) if center2 is None else np.asarray(center2, dtype=np.int64)
        return bool(self.contains2(2 * c - self._pts2).all())

    def integer_part(self) -> "SiteSet":
        ok = np.all(self._pts2 % 2 == 0, axis=1)
        return SiteSet(self._pts2[ok], d=self.d, _canonical=True)

    # serialization
    def to_json(self) -> list:
        return [list(map(int, r)) for r in self._pts2]

    @classmethod
    def from_json(cls, data, d: int | None = None) -> "SiteSet":
        if isinstance(data, str):
            data = json.loads(data)
        if not data:
            return cls.empty(d or 1)
        return cls(np.asarray(data, dtype=np.int64))


def box(center, radius: int, d: int | None = None) -> SiteSet:
    """Integer sites within sup-distance ``radius`` of ``center``."""
    if radius < 0:
        raise DomainError("radius must be nonnegative")
    c2 = _as_doubled(np.atleast_1d(center))
    if d is not None and c2.size == 1 and d > 1:
        c2 = np.repeat(c2, d)
    r2 = 2 * int(radius)
    axes = []
    for ci in c2:
        lo = -((-(ci - r2)) // 2)  # ceil((c - r)/2) in doubled units
        hi = (ci + r2) // 2
        axes.append(np.arange(lo, hi + 1, dtype=np.int64) * 2)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(c2))
    return SiteSet(grid, d=len(c2), center2=c2, _canonical=True)


def box2(center2, radius: int) -> SiteSet:
    """Same as :func:`box` but with a doubled-coordinate center."""
    return box(np.asarray(center2) / 2.0, radius)


def diam(a: SiteSet) -> float:
    if len(a) == 0:
        raise DomainError("diameter of an empty set")
    p = a.pts2
    return float((p.max(axis=0) - p.min(axis=0)).max()) / 2.0


def dist(a: SiteSet, b: SiteSet) -> float:
    if len(a) == 0 or len(b) == 0:
        raise DomainError("distance to an empty set")
    if len(b) > len(a):
        a, b = b, a
    tree = cKDTree(b.pts2.astype(np.float64))
    dd, _ = tree.query(a.pts2.astype(np.float64), k=1, p=np.inf)
    return float(dd.min()) / 2.0


def metrics(a: SiteSet, b: SiteSet) -> tuple[float, float]:
    """(dist(a, b), diam(a)) in the sup metric."""
    return dist(a, b), diam(a)


def neighborhood(base: SiteSet, radius: float) -> SiteSet:
    """Integer sites k with dist(k, base) <= radius."""
    out = [box2(p, int(np.ceil(radius)) + 1) for p in base.pts2]
    pts = np.vstack([o.pts2 for o in out]) if out else np.zeros((0, base.d), dtype=np.int64)
    cand = SiteSet(pts, d=base.d)
    tree = cKDTree(base.pts2.astype(np.float64))
    dd, _ = tree.query(cand.pts2.astype(np.float64), k=1, p=np.inf)
    return SiteSet(cand.pts2[dd / 2.0 <= radius + 1e-12], d=base.d, _canonical=True)


def align_enlarge(base: SiteSet, blocks: Sequence, margin: float | None = None) -> SiteSet:
    """Least superset of ``base`` that contains every block it touches.

    ``blocks`` is a list of SiteSets or (SiteSet, generation) pairs. With a
    ``margin`` the result must stay within that sup-distance of ``base``.
    """
    fam = [b[0] if isinstance(b, tuple) else b for b in blocks]
    fam = [b for b in fam if len(b)]
    cur = base
    if not fam:
        return cur
    # blocks are absorbed whole, so flag each block once it is inside
    absorbed = np.zeros(len(fam), dtype=bool)
    changed = True
    while changed:
        changed = False
        for i, blk in enumerate(fam):
            if absorbed[i]:
                continue
            if cur.contains2(blk.pts2).any():
                cur = cur.union(blk)
                absorbed[i] = True
                changed = True
    if margin is not None and len(base) and len(cur) > len(base):
        extra = cur - base
        tree = cKDTree(base.pts2.astype(np.float64))
        dd, _ = tree.query(extra.pts2.astype(np.float64), k=1, p=np.inf)
        if dd.max() / 2.0 > margin:
            raise EnlargementError(f"enlargement reaches {dd.max() / 2.0} > margin {margin}")
    return cur


def straddles(result: SiteSet, blk: SiteSet) -> bool:
    """True when blk meets result without being contained in it."""
    hit = result.contains2(blk.pts2)
    return bool(hit.any() and not hit.all())
