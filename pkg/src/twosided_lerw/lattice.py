"""Lattice geometry on Z^2 and Z^3.

Sites are tuples of ints. Walks and self-avoiding walks are tuples of
sites. Everything here is deterministic and free of shared state.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

Site = tuple
Walk = tuple
Saw = tuple


def origin(d: int) -> Site:
    return (0,) * d


def unit_vectors(d: int) -> list[Site]:
    out = []
    for i in range(d):
        for s in (1, -1):
            v = [0] * d
            v[i] = s
            out.append(tuple(v))
    return out


def neighbors(x: Site) -> list[Site]:
    """Nearest neighbours of ``x`` in a fixed order (+e1, -e1, +e2, ...)."""
    out = []
    for i in range(len(x)):
        for s in (1, -1):
            y = list(x)
            y[i] += s
            out.append(tuple(y))
    return out


def norm2(x: Site) -> int:
    return sum(c * c for c in x)


def norm(x: Site) -> float:
    return math.sqrt(norm2(x))


def adjacent(x: Site, y: Site) -> bool:
    return sum(abs(a - b) for a, b in zip(x, y)) == 1


def add(x: Site, y: Site) -> Site:
    return tuple(a + b for a, b in zip(x, y))


def sub(x: Site, y: Site) -> Site:
    return tuple(a - b for a, b in zip(x, y))


def check_dim(d: int) -> None:
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")


# ---------------------------------------------------------------------------
# Domains and balls


@dataclass(frozen=True)
class Domain:
    """A finite set of lattice sites together with its boundaries."""

    sites: frozenset
    d: int

    def __post_init__(self):
        check_dim(self.d)
        for x in self.sites:
            if len(x) != self.d:
                raise ValueError(f"site {x} has wrong dimension")

    @classmethod
    def from_sites(cls, sites: Iterable[Site], d: int | None = None) -> "Domain":
        sites = frozenset(tuple(int(c) for c in s) for s in sites)
        if d is None:
            if not sites:
                raise ValueError("cannot infer dimension of an empty domain")
            d = len(next(iter(sites)))
        return cls(sites, d)

    def __contains__(self, x) -> bool:
        return tuple(x) in self.sites

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.ordered)

    @cached_property
    def ordered(self) -> list[Site]:
        """Sites in lexicographic order (the canonical internal order)."""
        return sorted(self.sites)

    @cached_property
    def index(self) -> dict:
        return {x: i for i, x in enumerate(self.ordered)}

    @cached_property
    def boundary(self) -> frozenset:
        """Outer boundary: sites outside the domain adjacent to it."""
        out = set()
        for x in self.sites:
            for y in neighbors(x):
                if y not in self.sites:
                    out.add(y)
        return frozenset(out)

    @cached_property
    def inner_boundary(self) -> frozenset:
        """Sites of the domain with a neighbour outside it."""
        return frozenset(
            x for x in self.sites if any(y not in self.sites for y in neighbors(x))
        )

    @cached_property
    def closure(self) -> frozenset:
        return self.sites | self.boundary

    def minus(self, removed: Iterable[Site]) -> "Domain":
        return Domain(self.sites - frozenset(removed), self.d)

    def union(self, other: Iterable[Site]) -> "Domain":
        return Domain(self.sites | frozenset(other), self.d)

    def transition_matrix(self):
        """Killed simple random walk operator P_A as a sparse CSR matrix."""
        from scipy import sparse

        idx = self.index
        rows, cols = [], []
        for x in self.ordered:
            i = idx[x]
            for y in neighbors(x):
                j = idx.get(y)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        n = len(idx)
        vals = np.full(len(rows), 1.0 / (2 * self.d))
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class BallScale:
    """Scale n of the ball C_n = {|z| < e^n}; ``radius`` overrides e^n."""

    n: float = 0.0
    radius_override: float | None = field(default=None)

    def __post_init__(self):
        if self.radius_override is None and self.n < 0:
            raise ValueError("scale n must be nonnegative")
        if self.radius_override is not None and self.radius_override < 1:
            raise ValueError("radius must be at least 1")

    @classmethod
    def of_radius(cls, radius: float) -> "BallScale":
        return cls(math.log(radius), radius)

    @property
    def radius(self) -> float:
        return self.radius_override if self.radius_override is not None else math.exp(self.n)


def as_radius(scale) -> float:
    """Accept a BallScale or a raw radius and return the radius."""
    if isinstance(scale, BallScale):
        return scale.radius
    r = float(scale)
    if r < 1:
        raise ValueError("radius must be at least 1")
    return r


def in_ball(x: Site, radius: float) -> bool:
    return norm2(x) < radius * radius


def ball_sites(radius: float, d: int) -> list[Site]:
    check_dim(d)
    r2 = radius * radius
    m = int(math.floor(radius))
    out = []
    for x in itertools.product(range(-m, m + 1), repeat=d):
        if sum(c * c for c in x) < r2:
            out.append(x)
    return sorted(out)


def ball(n=None, d: int = 2, radius: float | None = None) -> Domain:
    """The discrete ball C_n = {z : |z| < e^n}, or {|z| < radius} if given."""
    if radius is None:
        if n is None:
            raise ValueError("give a scale n or a radius")
        if isinstance(n, BallScale):
            radius = n.radius
        else:
            if n < 0:
                raise ValueError("scale n must be nonnegative")
            radius = math.exp(n)
    if radius < 1:
        raise ValueError("radius must be at least 1")
    return Domain(frozenset(ball_sites(radius, d)), d)


def punctured_ball(radius: float, d: int) -> Domain:
    """C_n with the origin removed."""
    return ball(d=d, radius=radius).minus([origin(d)])


# ---------------------------------------------------------------------------
# Paths


def is_walk(w: Sequence[Site]) -> bool:
    return len(w) >= 1 and all(adjacent(w[i], w[i + 1]) for i in range(len(w) - 1))


def is_saw(w: Sequence[Site]) -> bool:
    return is_walk(w) and len(set(w)) == len(w)


def loop_erase(w: Sequence[Site]) -> Saw:
    """Chronological loop erasure.

    Walks the path once, and whenever a site is revisited, the loop
    created since its previous visit is cut off.
    """
    out: list = []
    pos: dict = {}
    for x in w:
        x = tuple(x)
        j = pos.get(x)
        if j is None:
            pos[x] = len(out)
            out.append(x)
        else:
            for y in out[j + 1:]:
                del pos[y]
            del out[j + 1:]
    return tuple(out)


def nonreturn_ok(w: Sequence[Site], r_n: float, r_k: float, r_m: float) -> bool:
    """Both non-return conditions: after the first visit to the outer
    boundary of C_k the walk avoids C_n, and after the first visit to the
    outer boundary of C_m it avoids C_k."""
    ik = first_exit_index(w, r_k)
    im = first_exit_index(w, r_m)
    if ik is not None and any(norm2(x) < r_n * r_n for x in w[ik:]):
        return False
    if im is not None and any(norm2(x) < r_k * r_k for x in w[im:]):
        return False
    return True


def conforming_walk(start: Site, r_n: float, r_k: float, r_m: float, rng,
                    extra_steps: int = 50) -> Walk:
    """Nearest-neighbour walk from ``start`` in C_n obeying both non-return
    conditions. Steps are uniform among the moves the conditions allow;
    the walk runs ``extra_steps`` steps past its first visit to the outer
    boundary of C_m.
    """
    if not r_n < r_k < r_m:
        raise ValueError("need r_n < r_k < r_m")
    x = tuple(start)
    w = [x]
    floor = 0.0
    past_m = -1
    while past_m < extra_steps:
        nb = [y for y in neighbors(x) if norm2(y) >= floor]
        x = nb[int(rng.integers(len(nb)))]
        w.append(x)
        n2 = norm2(x)
        if n2 >= r_k * r_k:
            floor = max(floor, r_n * r_n)
        if n2 >= r_m * r_m:
            floor = r_k * r_k
        if floor == r_k * r_k:
            past_m += 1
    return tuple(w)


def erasure_stable(w: Sequence[Site], stop: int, r_n: float) -> bool:
    """Loop-erasing w[:stop+1] and then all of w give the same trace in C_n."""
    r2 = r_n * r_n
    a = [x for x in loop_erase(w[: stop + 1]) if norm2(x) < r2]
    b = [x for x in loop_erase(w) if norm2(x) < r2]
    return a == b


def reverse(eta: Sequence[Site]) -> Saw:
    return tuple(reversed(tuple(eta)))


def concat(eta1: Sequence[Site], eta2: Sequence[Site], shared_endpoint: bool = False) -> Walk:
    """Concatenate two paths.

    With ``shared_endpoint`` the last site of ``eta1`` must equal the first
    site of ``eta2`` and appears once; otherwise they must be adjacent.
    """
    eta1, eta2 = tuple(eta1), tuple(eta2)
    if not eta1:
        return eta2
    if not eta2:
        return eta1
    if shared_endpoint:
        if eta1[-1] != eta2[0]:
            raise ValueError("paths do not share the junction site")
        out = eta1 + eta2[1:]
    else:
        if not adjacent(eta1[-1], eta2[0]):
            raise ValueError("paths are not adjacent at the junction")
        out = eta1 + eta2
    if not is_walk(out):
        raise ValueError("concatenation is not a nearest-neighbour path")
    return out


def pair_to_saw(eta1: Sequence[Site], eta2: Sequence[Site]) -> Saw:
    """The bijection (eta1, eta2) -> reverse(eta1) + eta2 through the origin."""
    eta1, eta2 = tuple(eta1), tuple(eta2)
    if eta1[0] != eta2[0]:
        raise ValueError("both paths must start at the same site")
    if set(eta1[1:]) & set(eta2[1:]) or eta2[0] in eta1[1:] or eta1[0] in eta2[1:]:
        raise ValueError("paths intersect away from the origin")
    out = reverse(eta1) + eta2[1:]
    if not is_saw(out):
        raise ValueError("result is not self-avoiding")
    return out


def saw_to_pair(eta: Sequence[Site]) -> tuple[Saw, Saw]:
    """Inverse of :func:`pair_to_saw`, splitting at the origin."""
    eta = tuple(eta)
    o = origin(len(eta[0]))
    k = eta.index(o)
    return reverse(eta[: k + 1]), eta[k:]


def first_exit_index(eta: Sequence[Site], radius: float) -> int | None:
    """Index of the first site with |z| >= radius, or None."""
    r2 = radius * radius
    for i, x in enumerate(eta):
        if norm2(x) >= r2:
            return i
    return None


def truncate(eta: Sequence[Site], radius: float) -> Saw:
    """Initial segment up to the first visit of the outer boundary of the ball."""
    i = first_exit_index(eta, radius)
    if i is None:
        raise ValueError("too short: path never leaves the ball")
    return tuple(eta[: i + 1])


def decompose(eta: Sequence[Site], n, n_next=None):
    """Split a path from 0 as eta_n + eta_mid + eta_tail.

    ``eta_n`` ends at the first visit to the outer boundary of C_n,
    ``eta_tail`` starts at the last visit to C_{n+1} (the ball with radius
    ``n_next``, default e times the radius of C_n). Junction sites are
    shared, so ``concat(..., shared_endpoint=True)`` restores ``eta``.
    """
    eta = tuple(eta)
    r = as_radius(n)
    r_next = as_radius(n_next) if n_next is not None else r * math.e
    i = first_exit_index(eta, r)
    if i is None:
        raise ValueError("too short: path never reaches the boundary of C_n")
    r2 = r_next * r_next
    inside = [k for k, x in enumerate(eta) if norm2(x) < r2]
    last = inside[-1]
    if last == len(eta) - 1 or norm2(eta[-1]) < r2:
        raise ValueError("too short: path never leaves C_{n+1}")
    if last < i:
        raise ValueError("path leaves C_{n+1} before reaching the boundary of C_n")
    return eta[: i + 1], eta[i: last + 1], eta[last:]


# ---------------------------------------------------------------------------
# Enumeration of self-avoiding walks


def enumerate_saws(radius: float, d: int, start: Sequence[Site] | None = None) -> Iterator[Saw]:
    """All SAWs from the origin whose interior lies in the ball and whose
    terminal point is on its outer boundary (the set W_n).

    If ``start`` is given, only extensions of that prefix are produced.
    """
    check_dim(d)
    r2 = radius * radius
    path = list(start) if start is not None else [origin(d)]
    if len(path) > 1 and norm2(path[-1]) >= r2:
        yield tuple(path)
        return
    on = set(path)

    def rec():
        x = path[-1]
        for y in neighbors(x):
            if y in on:
                continue
            path.append(y)
            if sum(c * c for c in y) >= r2:
                yield tuple(path)
            else:
                on.add(y)
                yield from rec()
                on.discard(y)
            path.pop()

    yield from rec()


# ---------------------------------------------------------------------------
# Symmetries


def symmetry_group(d: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Hyperoctahedral group as (permutation, signs) pairs (8 or 48 elements)."""
    out = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            out.append((perm, signs))
    return out


def apply_symmetry(g, x: Site) -> Site:
    perm, signs = g
    return tuple(signs[i] * x[perm[i]] for i in range(len(x)))


def transform_path(g, eta: Sequence[Site]) -> Saw:
    return tuple(apply_symmetry(g, x) for x in eta)


# ---------------------------------------------------------------------------
# Planar disconnection


def disconnects(loop_sites: Iterable[Site], n=None, radius: float | None = None,
                d: int | None = None) -> bool:
    """True iff every path from 0 to the outer boundary of C_n meets ``loop_sites``.

    Flood fill from the origin through C_n minus the loop sites.
    """
    loop_sites = set(tuple(s) for s in loop_sites)
    if radius is None:
        radius = as_radius(n) if isinstance(n, BallScale) else math.exp(n)
    if d is None:
        d = len(next(iter(loop_sites))) if loop_sites else 2
    if d != 2:
        raise ValueError("disconnection is only defined in two dimensions")
    o = (0, 0)
    if o in loop_sites:
        return True
    r2 = radius * radius
    seen = {o}
    queue = deque([o])
    while queue:
        x = queue.popleft()
        for y in neighbors(x):
            if y in seen or y in loop_sites:
                continue
            if y[0] * y[0] + y[1] * y[1] >= r2:
                return False
            seen.add(y)
            queue.append(y)
    return True


def sites_array(sites: Iterable[Site]) -> np.ndarray:
    return np.array([tuple(s) for s in sites], dtype=np.int64)
