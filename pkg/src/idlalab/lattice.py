"""Discrete geometry of Z^d: balls, spherical boundaries, shells, site sets.

Conventions used everywhere in the package:

* a lattice site is a tuple of ``d`` ints (``d >= 2``);
* balls are *closed* in the euclidean norm: ``x in B(c, rho)`` iff
  ``|x - c| <= rho``.  The boundary of a ball is the layer of sites just
  outside it that touch it through a nearest-neighbor edge, so boundary and
  ball are always disjoint;
* radii are real-valued; they need not be integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

Site = tuple[int, ...]

# closed-ball membership uses |x-c|^2 <= rho^2 + EPS so that real-valued radii
# arriving through float arithmetic (e.g. rho = r - 3*delta) behave as written
_EPS = 1e-9


def closed_radius_sq(radius: float) -> float:
    """The squared-radius threshold implementing closed-ball membership."""
    return float(radius) * float(radius) + _EPS


def norm(site: Sequence[float]) -> float:
    """Euclidean norm of a site."""
    return math.sqrt(sum(float(c) * float(c) for c in site))


def norm_sq(site: Sequence[int]) -> int:
    """Squared euclidean norm (exact integer for lattice sites)."""
    return sum(int(c) * int(c) for c in site)


def neighbors(site: Site) -> list[Site]:
    """The 2d nearest neighbors of a site."""
    out = []
    for axis in range(len(site)):
        for sign in (1, -1):
            s = list(site)
            s[axis] += sign
            out.append(tuple(s))
    return out


@dataclass(frozen=True)
class BallSpec:
    """A euclidean ball on the lattice: center (may be real-valued) + radius."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    def contains(self, site: Sequence[int]) -> bool:
        if len(site) != self.d:
            raise ValueError(f"dimension mismatch: site has d={len(site)}, ball has d={self.d}")
        dist_sq = sum((float(c) - z) ** 2 for c, z in zip(site, self.center))
        return dist_sq <= closed_radius_sq(self.radius)


class SiteSet:
    """A finite set of lattice sites with O(1) membership.

    Backed by a frozenset of coordinate tuples; a dense bitmask over the
    bounding box and a coordinate array are materialized lazily for the hot
    loops.  Immutable after construction, safe to share across trials.
    """

    __slots__ = ("_sites", "_d", "_array", "_mask_cache")

    def __init__(self, sites: Iterable[Sequence[int]], d: int | None = None):
        pts = frozenset(tuple(int(c) for c in s) for s in sites)
        if pts:
            dims = {len(s) for s in pts}
            if len(dims) != 1:
                raise ValueError("sites of mixed dimension")
            inferred = dims.pop()
            if d is not None and d != inferred:
                raise ValueError(f"dimension mismatch: d={d} but sites have d={inferred}")
            d = inferred
        elif d is None:
            raise ValueError("empty SiteSet needs an explicit dimension")
        self._sites = pts
        self._d = d
        self._array: np.ndarray | None = None
        self._mask_cache: dict = {}

    @property
    def d(self) -> int:
        return self._d

    @property
    def cardinality(self) -> int:
        return len(self._sites)

    def __len__(self) -> int:
        return len(self._sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(self._sites)

    def __contains__(self, site) -> bool:
        return tuple(site) in self._sites

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self._d == other._d and self._sites == other._sites

    def __hash__(self) -> int:
        return hash((self._d, self._sites))

    def __repr__(self) -> str:
        return f"SiteSet(d={self._d}, n={len(self._sites)})"

    def as_array(self) -> np.ndarray:
        """Sites as a lexicographically sorted (n, d) int64 array."""
        if self._array is None:
            if self._sites:
                arr = np.array(sorted(self._sites), dtype=np.int64)
            else:
                arr = np.empty((0, self._d), dtype=np.int64)
            self._array = arr
        return self._array

    def sorted_sites(self) -> list[Site]:
        return sorted(self._sites)

    def union(self, other: "SiteSet") -> "SiteSet":
        self._check_dim(other)
        return SiteSet(self._sites | other._sites, d=self._d)

    def difference(self, other: "SiteSet") -> "SiteSet":
        self._check_dim(other)
        return SiteSet(self._sites - other._sites, d=self._d)

    def intersection(self, other: "SiteSet") -> "SiteSet":
        self._check_dim(other)
        return SiteSet(self._sites & other._sites, d=self._d)

    def isdisjoint(self, other: "SiteSet") -> bool:
        self._check_dim(other)
        return self._sites.isdisjoint(other._sites)

    def issubset(self, other: "SiteSet") -> bool:
        self._check_dim(other)
        return self._sites <= other._sites

    def _check_dim(self, other: "SiteSet") -> None:
        if self._d != other._d:
            raise ValueError(f"dimension mismatch: d={self._d} vs d={other._d}")

    def mask(self, origin: Sequence[int], shape: Sequence[int]) -> np.ndarray:
        """Dense boolean occupancy grid: cell (s - origin) is True iff s in set.

        Sites that fall outside the box are silently ignored; callers pick a
        box that covers the region their walk can probe.
        """
        key = (tuple(int(o) for o in origin), tuple(int(n) for n in shape))
        cached = self._mask_cache.get(key)
        if cached is not None:
            return cached
        grid = np.zeros(tuple(key[1]), dtype=bool)
        if self._sites:
            arr = self.as_array() - np.array(key[0], dtype=np.int64)
            ok = np.all((arr >= 0) & (arr < np.array(key[1])), axis=1)
            arr = arr[ok]
            grid[tuple(arr.T)] = True
        self._mask_cache[key] = grid
        return grid

    # --- plain text serialization -------------------------------------
    # first line "d=<dim> n=<count>", then one line per site with
    # space-separated integer coordinates, in sorted order.

    def to_text(self) -> str:
        lines = [f"d={self._d} n={len(self._sites)}"]
        lines.extend(" ".join(str(c) for c in s) for s in self.sorted_sites())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SiteSet":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("d="):
            raise ValueError("site set text must start with a 'd=<dim> n=<count>' line")
        head = dict(part.split("=", 1) for part in lines[0].split())
        d, n = int(head["d"]), int(head["n"])
        sites = [tuple(int(c) for c in ln.split()) for ln in lines[1:]]
        if len(sites) != n:
            raise ValueError(f"header says n={n} but {len(sites)} site lines found")
        return cls(sites, d=d)


def _box_enumerate(center: tuple[float, ...], radius: float) -> np.ndarray:
    """All integer points of the bounding box of B(center, radius), (m, d)."""
    lo = [math.floor(c - radius) for c in center]
    hi = [math.ceil(c + radius) for c in center]
    axes = [np.arange(l, h + 1, dtype=np.int64) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def ball_sites(spec: BallSpec) -> SiteSet:
    """All lattice sites x with |x - center| <= radius (closed ball)."""
    pts = _box_enumerate(spec.center, spec.radius)
    c = np.array(spec.center, dtype=np.float64)
    dist_sq = np.sum((pts - c) ** 2, axis=1)
    inside = pts[dist_sq <= closed_radius_sq(spec.radius)]
    return SiteSet(map(tuple, inside), d=spec.d)


def boundary_sites(spec: BallSpec) -> SiteSet:
    """Sites outside the ball adjacent (nearest-neighbor) to a site inside it.

    For radius 0 the "ball" is whatever sites coincide with the center (one
    site for an integer center, none otherwise); the boundary is still the
    layer of outside sites with a neighbor inside.
    """
    inner = ball_sites(spec)
    out = set()
    for s in inner:
        for nb in neighbors(s):
            if nb not in inner:
                out.add(nb)
    return SiteSet(out, d=spec.d)


def shell_sites(center: Sequence[float], r_outer: float, r_inner: float) -> SiteSet:
    """Sites of B(center, r_outer) minus B(center, r_inner)."""
    if r_outer <= r_inner:
        raise ValueError(f"shell needs r_outer > r_inner, got {r_outer} <= {r_inner}")
    if r_inner < 0:
        raise ValueError("r_inner must be nonnegative")
    c = tuple(float(x) for x in center)
    outer = ball_sites(BallSpec(c, r_outer))
    inner = ball_sites(BallSpec(c, r_inner))
    return outer.difference(inner)


def origin(d: int) -> Site:
    return (0,) * d
