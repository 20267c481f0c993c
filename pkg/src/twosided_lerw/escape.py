"""Uniform escape estimates for simple random walk from a ball boundary.

Part 1: A' inside C_n, z on the outer boundary of C_n, A = A' + z. With
sigma_r the exit time of the r-ball around z and tau the first return
(time >= 1) to A,

    P^z{ |S_sigma| >= e^n + r/2 | sigma < tau } >= c.

Part 2: A' outside C_n, z on the inner boundary of C_n, r < e^n / 2:

    P^z{ |S_sigma| <= e^n - r/2 | sigma < tau } >= c.

Both probabilities are estimated by Monte Carlo and also solved exactly
as harmonic functions on the r-ball around z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy import stats as sps

from . import _kernels
from .lattice import Site, ball_sites, loop_erase, neighbors, norm, norm2, origin
from .potential import SetPotential
from .stats import Estimate, ols_fit

GENERATORS = ("random-SAW", "spiral", "comb", "half-space")
MIN_HITS = 50


@dataclass(frozen=True)
class AdversarialScenario:
    d: int
    radius: float          # e^n
    part: int              # 1: A' inside C_n; 2: A' outside C_n
    A_prime: frozenset
    z: Site
    r: float
    tag: str

    def __post_init__(self):
        R2 = self.radius ** 2
        z = tuple(self.z)
        if self.part == 1:
            if norm2(z) < R2 or not any(norm2(y) < R2 for y in neighbors(z)):
                raise ValueError("z must lie on the outer boundary of C_n")
            if any(norm2(x) >= R2 for x in self.A_prime):
                raise ValueError("A' must lie inside C_n")
        elif self.part == 2:
            if norm2(z) >= R2 or all(norm2(y) < R2 for y in neighbors(z)):
                raise ValueError("z must lie on the inner boundary of C_n")
            if any(norm2(x) < R2 for x in self.A_prime):
                raise ValueError("A' must lie outside C_n")
            if not self.r < self.radius / 2:
                raise ValueError("part 2 needs r < e^n / 2")
        else:
            raise ValueError("part must be 1 or 2")

    @property
    def near_guard(self) -> bool:
        return self.part == 2 and self.r > 0.45 * self.radius

    @property
    def target2(self) -> float:
        if self.part == 1:
            return (self.radius + self.r / 2) ** 2
        return (self.radius - self.r / 2) ** 2

    @property
    def A(self) -> frozenset:
        return self.A_prime | {tuple(self.z)}


def _grid(sc: AdversarialScenario):
    d = sc.d
    h = int(math.ceil(sc.r)) + 2
    lo = np.array(sc.z) - h
    shape = np.full(d, 2 * h + 1, dtype=np.int64)
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(d)], dtype=np.int64)
    blocked = np.zeros(int(np.prod(shape)), dtype=np.bool_)
    for x in sc.A:
        g = np.array(x) - lo
        if np.all(g >= 0) and np.all(g < shape):
            blocked[int(g @ strides)] = True
    return blocked, shape, strides, lo


def verify_escape(sc: AdversarialScenario, n_walks: int, rng) -> Estimate:
    """MC estimate of the conditional escape probability (Wilson interval
    half-width / 1.96 as the standard error)."""
    blocked, shape, strides, lo = _grid(sc)
    seed = int(rng.integers(2**31 - 1))
    zc = np.array(sc.z) - lo
    cc = -lo
    n_esc, n_suc, n_cap = _kernels.escape_walks(
        blocked, shape, strides, zc.astype(np.int64), cc.astype(np.int64), float(sc.r ** 2),
        float(sc.target2), sc.part == 1, n_walks, seed, 10**7)
    flags = []
    if n_esc < MIN_HITS:
        flags.append("inconclusive")
    if sc.near_guard:
        flags.append("near-guard")
    if n_esc == 0:
        return Estimate(float("nan"), float("nan"), 0, seed, flags=tuple(flags))
    p = n_suc / n_esc
    se = math.sqrt(max(p * (1 - p), 1.0 / n_esc) / n_esc)
    return Estimate(p, se, int(n_esc), seed, flags=tuple(flags))


def lower_bound(est: Estimate, level: float = 0.95) -> float:
    """One-sided Clopper-Pearson lower bound for a binomial proportion."""
    k = round(est.mean * est.n_samples)
    if k == 0:
        return 0.0
    return float(sps.beta.ppf(1 - level, k, est.n_samples - k + 1))


def exact_escape(sc: AdversarialScenario) -> tuple[float, float]:
    """(P{sigma < tau}, P{success | sigma < tau}) by a sparse harmonic solve."""
    d = sc.d
    z = np.array(sc.z)
    r2 = sc.r ** 2
    h = int(math.ceil(sc.r))
    A = sc.A
    inner = [tuple(z + np.array(o)) for o in product(range(-h, h + 1), repeat=d)
             if sum(c * c for c in o) < r2]
    free = [x for x in inner if x not in A]
    idx = {x: i for i, x in enumerate(free)}
    n = len(free)
    rows, cols = [], []
    b_esc = np.zeros(n)
    b_suc = np.zeros(n)
    p = 1.0 / (2 * d)

    def outside_value(y):
        if norm2(tuple(np.array(y) - z)) < r2:
            return None
        ok = norm2(y) >= sc.target2 if sc.part == 1 else norm2(y) <= sc.target2
        return ok

    for x, i in idx.items():
        for y in neighbors(x):
            j = idx.get(y)
            if j is not None:
                rows.append(i)
                cols.append(j)
            else:
                v = outside_value(y)
                if v is not None:
                    b_esc[i] += p
                    b_suc[i] += p * v
    M = sparse.identity(n, format="csc") - sparse.csc_matrix(
        (np.full(len(rows), p), (rows, cols)), shape=(n, n))
    sol = splinalg.spsolve(M, np.column_stack([b_esc, b_suc])) if n else np.zeros((0, 2))
    sol = np.asarray(sol).reshape(n, 2)
    esc = suc = 0.0
    for y in neighbors(tuple(sc.z)):
        j = idx.get(y)
        if j is not None:
            esc += p * sol[j, 0]
            suc += p * sol[j, 1]
        else:
            v = outside_value(y)
            if v is not None:
                esc += p
                suc += p * v
    return esc, (suc / esc if esc > 0 else float("nan"))


# ---------------------------------------------------------------------------
# Scenario generators


def _lerw_to_sphere(start: Site, radius: float, rng, inside: bool = True) -> tuple:
    """Loop erasure of a simple walk from ``start`` run until it leaves the
    ball of the given radius (inside=True) or enters it (inside=False,
    with a cap at twice the radius)."""
    d = len(start)
    x = list(start)
    walk = [tuple(x)]
    R2 = radius * radius
    cap2 = (2 * radius) ** 2
    while True:
        k = int(rng.integers(2 * d))
        x[k // 2] += 1 if k % 2 == 0 else -1
        walk.append(tuple(x))
        n2 = norm2(tuple(x))
        if inside and n2 >= R2:
            break
        if not inside and (n2 < R2 or n2 >= cap2):
            break
    return loop_erase(walk)


def _boundary_points(radius: float, d: int, part: int) -> list[Site]:
    R2 = radius * radius
    h = int(math.ceil(radius)) + 1
    pts = []
    for x in product(range(-h, h + 1), repeat=d):
        n2 = norm2(x)
        if part == 1 and n2 >= R2 and any(norm2(y) < R2 for y in neighbors(x)):
            pts.append(x)
        if part == 2 and n2 < R2 and any(norm2(y) >= R2 for y in neighbors(x)):
            pts.append(x)
    return pts


def _shell_sites(z: Site, radius: float, r: float, part: int) -> list[Site]:
    """Sites on the A' side of the sphere within distance r + 1 of z."""
    d = len(z)
    h = int(math.ceil(r)) + 1
    R2 = radius * radius
    out = []
    for o in product(range(-h, h + 1), repeat=d):
        x = tuple(a + b for a, b in zip(z, o))
        if sum(c * c for c in o) > (r + 1) ** 2 or x == tuple(z):
            continue
        if (part == 1 and norm2(x) < R2) or (part == 2 and norm2(x) >= R2):
            out.append(x)
    return out


def make_scenario(tag: str, radius: float, part: int, d: int, rng,
                  r: float | None = None) -> AdversarialScenario:
    """One scenario of the given generator family.

    random-SAW: part 1 uses the loop erasure of a walk from 0 to the sphere
    (z its tip); part 2 a loop-erased walk from just outside z outward.
    spiral: a square-ish spiral of A' sites winding around z at spacing 2.
    comb: A' teeth on every other line perpendicular to the sphere's
    tangent direction at z, touching z.
    half-space: every site on the A' side of the sphere near z.
    """
    if r is None:
        r = max(2.0, radius * (0.45 if part == 2 else 0.5) * float(rng.uniform(0.3, 1.0)))
    if tag == "random-SAW":
        if part == 1:
            eta = _lerw_to_sphere(origin(d), radius, rng)
            z = eta[-1]
            Ap = frozenset(eta[:-1])
        else:
            pts = _boundary_points(radius, d, 2)
            z = pts[int(rng.integers(len(pts)))]
            outs = [y for y in neighbors(z) if norm2(y) >= radius * radius]
            y0 = outs[int(rng.integers(len(outs)))]
            eta = _lerw_to_sphere(y0, 2 * radius, rng)
            Ap = frozenset(x for x in eta if norm2(x) >= radius * radius)
        return AdversarialScenario(d, radius, part, Ap, z, r, tag)
    pts = _boundary_points(radius, d, part)
    z = pts[int(rng.integers(len(pts)))]
    cand = _shell_sites(z, radius, r, part)
    zc = np.array(z)
    if tag == "half-space":
        Ap = frozenset(cand)
    elif tag == "comb":
        # teeth: lines along the radial direction through z, every second
        # offset in the remaining coordinates
        k = int(np.argmax(np.abs(zc)))
        Ap = frozenset(x for x in cand
                       if all((x[i] - z[i]) % 2 == 0 for i in range(d) if i != k))
    elif tag == "spiral":
        # square rings of Chebyshev radius 2, 4, 6, ... around z, each
        # with one gap, gaps rotating so the free path winds
        Ap = set()
        for x in cand:
            o = np.array(x) - zc
            c = int(np.max(np.abs(o)))
            if c % 2 == 0 and c > 0:
                ring = c // 2
                gap_axis = ring % d
                sign = 1 if (ring // d) % 2 == 0 else -1
                gap = np.zeros(d, dtype=int)
                gap[gap_axis] = sign * c
                if not np.array_equal(o, gap):
                    Ap.add(x)
        Ap = frozenset(Ap)
    else:
        raise ValueError(f"unknown generator {tag}")
    return AdversarialScenario(d, radius, part, Ap, z, r, tag)


def scenario_suite(d: int, radii: Sequence[float], per_cell: int, rng) -> list[AdversarialScenario]:
    """per_cell scenarios for every (radius, generator, part)."""
    out = []
    for R in radii:
        for tag in GENERATORS:
            for part in (1, 2):
                for _ in range(per_cell):
                    out.append(make_scenario(tag, R, part, d, rng))
    return out


@dataclass
class EscapeReport:
    d: int
    estimates: list
    exact: list
    min_lower_bound: float
    min_by_radius: dict
    trend_flags: dict
    mc_exact_max_z: float
    n_inconclusive: int


def escape_experiment(d: int, radii: Sequence[float], per_cell: int, n_walks: int,
                      rng) -> EscapeReport:
    """Run verify_escape and the exact solve over a scenario suite.

    The minimum is taken over per-scenario one-sided 95% lower bounds with
    a Bonferroni correction. A generator family is flagged as trending to
    0 when its minimum decreases at every step of the radius ladder and
    ends below half of its first value.
    """
    scs = scenario_suite(d, radii, per_cell, rng)
    est = [verify_escape(s, n_walks, rng) for s in scs]
    exact = [exact_escape(s) for s in scs]
    level = 1 - 0.05 / len(scs)
    lbs = [lower_bound(e, level) for e in est if e.n_samples > 0]
    zs = [abs(e.mean - ex[1]) / e.stderr for e, ex in zip(est, exact)
          if e.n_samples >= MIN_HITS and e.stderr > 0]
    by_r: dict = {}
    for s, ex in zip(scs, exact):
        key = (s.tag, s.part)
        by_r.setdefault(key, {}).setdefault(s.radius, []).append(ex[1])
    min_by_radius = {k: [min(v[R]) for R in sorted(v)] for k, v in by_r.items()}
    flags = {}
    for k, seq in min_by_radius.items():
        dec = all(b < a for a, b in zip(seq, seq[1:]))
        flags[k] = bool(dec and seq[-1] < 0.5 * seq[0])
    return EscapeReport(d, est, exact, min(lbs) if lbs else 0.0, min_by_radius, flags,
                        max(zs) if zs else float("nan"),
                        sum("inconclusive" in e.flags for e in est))


# ---------------------------------------------------------------------------
# Corollaries


def escape_probability(A: Iterable[Site], z: Site, d: int) -> float:
    return SetPotential(list(A), d).escape(tuple(z))


def connected_to_origin(A: frozenset, z: Site, radius: float) -> bool:
    """z connected to 0 in A: a nearest-neighbour path from 0 to z inside
    A + {0} using sites of C_n (plus z)."""
    d = len(z)
    o = origin(d)
    R2 = radius * radius
    allowed = {x for x in A if norm2(x) < R2} | {o, tuple(z)}
    seen = {o}
    todo = [o]
    while todo:
        x = todo.pop()
        if x == tuple(z):
            return True
        for y in neighbors(x):
            if y in allowed and y not in seen:
                seen.add(y)
                todo.append(y)
    return False


@dataclass
class CorollaryReport:
    d: int
    j: list
    spread: list              # max |log(Es1/Es2)| per j
    bound: list               # e^{j(2-d)} or e^{-j}
    fit: object
    n_skipped: int
    identical_ratio: float


def verify_corollaries(d: int, radius: float, js: Sequence[float], n_family: int, rng,
                       negative_control: bool = False) -> CorollaryReport:
    """Escape ratios for pairs A1', A2' that agree on C_n minus C_{n-j}.

    A1' is the loop erasure of a walk from 0 to the sphere (z its tip);
    A2' keeps A1' outside C_{n-j} and fills C_{n-j} completely (or, as the
    negative control in d=2, empties it, which disconnects z from 0).
    """
    R2 = radius * radius
    spreads, bounds = [], []
    skipped = 0
    etas = [_lerw_to_sphere(origin(d), radius, rng) for _ in range(n_family)]
    ident = []
    js = [j for j in js if radius * math.exp(-j) > 1.0]  # C_{n-j} = {0} makes A1 = A2
    for j in js:
        rj = radius * math.exp(-j)
        inner = [x for x in ball_sites(rj, d)]
        worst = 0.0
        for eta in etas:
            z = eta[-1]
            A1 = frozenset(eta)
            outer = frozenset(x for x in eta[:-1] if norm2(x) >= rj * rj)
            A2 = outer | {z} | (frozenset() if negative_control else frozenset(inner))
            if d == 2 and not (connected_to_origin(A1, z, radius)
                               and connected_to_origin(A2, z, radius)):
                skipped += 1
                continue
            e1 = escape_probability(A1, z, d)
            e2 = escape_probability(A2, z, d)
            worst = max(worst, abs(math.log(e1 / e2)))
            if j == js[0] and not ident:
                ident.append(e1 / escape_probability(A1, z, d))
        spreads.append(worst)
        bounds.append(math.exp(j * (2 - d)) if d >= 3 else math.exp(-j))
    ok = [(j, s) for j, s in zip(js, spreads) if s > 0]
    fit = ols_fit([j for j, _ in ok], [math.log(s) for _, s in ok]) if len(ok) >= 3 else None
    return CorollaryReport(d, list(js), spreads, bounds, fit, skipped,
                           ident[0] if ident else float("nan"))
