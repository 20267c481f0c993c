"""The excursion measure on SAWs from x to y through 0 in a domain A.

A pair (eta1, eta2) with eta1: 0 -> x, eta2: 0 -> y, meeting only at 0
and otherwise inside A, gets weight (2d)^{-|eta|} F_eta(A minus 0) where
F is the Green product over the sites of eta in A minus 0. The same
weight is mu_{A,x}(eta1) mu_{A,y}(eta2) exp(-L_A) with L_A the mass of
loops in A minus 0 hitting both paths (all loops; in d=2 the disconnecting
loops only contribute a constant factor, which normalisation removes).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .lattice import Domain, Saw, Site, first_exit_index, neighbors, norm2, origin
from .potential import green_domain
from .stats import Estimate
from .twosided import PathPair, _flatten

ENUM_MAX_SITES = 40


# ---------------------------------------------------------------------------
# Domains


def domain_from_spec(spec: dict, d: int = 2) -> Domain:
    """Build a domain from a small structured description.

    Accepted keys (one per node): ``ball: {radius}``, ``rect: {lo, hi}``
    (inclusive corners), ``sites: [[...], ...]``, ``union: [node, ...]``,
    ``minus: [node, node]``.
    """
    if "ball" in spec:
        r = float(spec["ball"]["radius"])
        m = int(math.ceil(r))
        return Domain.from_sites(
            [x for x in product(range(-m, m + 1), repeat=d) if norm2(x) < r * r], d)
    if "rect" in spec:
        lo, hi = spec["rect"]["lo"], spec["rect"]["hi"]
        return Domain.from_sites(product(*[range(a, b + 1) for a, b in zip(lo, hi)]), d)
    if "sites" in spec:
        return Domain.from_sites([tuple(s) for s in spec["sites"]], d)
    if "union" in spec:
        out = set()
        for part in spec["union"]:
            out |= domain_from_spec(part, d).sites
        return Domain.from_sites(out, d)
    if "minus" in spec:
        a, b = spec["minus"]
        return domain_from_spec(a, d).minus(domain_from_spec(b, d).sites)
    raise ValueError(f"unknown domain node {sorted(spec)}")


def _connected(sites: set, moves) -> bool:
    if not sites:
        return True
    start = next(iter(sites))
    seen = {start}
    todo = deque([start])
    while todo:
        x = todo.popleft()
        for m in moves:
            y = tuple(a + b for a, b in zip(x, m))
            if y in sites and y not in seen:
                seen.add(y)
                todo.append(y)
    return len(seen) == len(sites)


def is_simply_connected(A: Domain) -> bool:
    """A is nearest-neighbour connected and its complement is connected.

    The complement is taken inside the bounding box grown by one; in d=2
    it uses the 8 king moves (a nearest-neighbour loop of A cannot be
    crossed by them), in d=3 nearest-neighbour moves.
    """
    d = A.d
    unit = [tuple(int(i == j) * s for j in range(d)) for i in range(d) for s in (1, -1)]
    if not _connected(set(A.sites), unit):
        return False
    lo = [min(x[i] for x in A.sites) - 1 for i in range(d)]
    hi = [max(x[i] for x in A.sites) + 1 for i in range(d)]
    comp = {x for x in product(*[range(a, b + 1) for a, b in zip(lo, hi)]) if x not in A.sites}
    if d == 2:
        moves = [m for m in product((-1, 0, 1), repeat=2) if any(m)]
    else:
        moves = unit
    return _connected(comp, moves)


@dataclass(frozen=True)
class ExcursionSpec:
    A: Domain
    x: Site
    y: Site

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", tuple(self.y))
        o = origin(self.A.d)
        if o not in self.A:
            raise ValueError("0 must lie in A")
        if self.x == self.y:
            raise ValueError("x and y must be distinct")
        if self.x not in self.A.boundary or self.y not in self.A.boundary:
            raise ValueError("x and y must lie on the outer boundary of A")
        if not is_simply_connected(self.A):
            raise ValueError("A is not simply connected")

    @property
    def d(self) -> int:
        return self.A.d

    @cached_property
    def hat(self) -> Domain:
        return self.A.minus([origin(self.d)])

    @cached_property
    def green(self) -> np.ndarray:
        return green_domain(self.hat).matrix

    def site_indices(self, eta: Iterable[Site]) -> list[int]:
        idx = self.hat.index
        return [idx[z] for z in eta if z in idx]

    def log_weight(self, pair: PathPair) -> float:
        """log of (2d)^{-|eta|} F_eta(A minus 0); -inf off the pair space."""
        if not self.admissible(pair):
            return -math.inf
        ii = self.site_indices(pair.eta1[1:-1]) + self.site_indices(pair.eta2[1:-1])
        ld = np.linalg.slogdet(self.green[np.ix_(ii, ii)])[1] if ii else 0.0
        n_steps = len(pair.eta1) + len(pair.eta2) - 2
        return float(-n_steps * math.log(2 * self.d) + ld)

    def log_weight_product(self, pair: PathPair) -> float:
        """Same weight as mu_{A,x} x mu_{A,y} x exp(-L_A) (second route)."""
        if not self.admissible(pair):
            return -math.inf
        G = self.green
        i1, i2 = self.site_indices(pair.eta1), self.site_indices(pair.eta2)
        ld = lambda ii: np.linalg.slogdet(G[np.ix_(ii, ii)])[1] if ii else 0.0
        lmu1 = -(len(pair.eta1) - 1) * math.log(2 * self.d) + ld(i1)
        lmu2 = -(len(pair.eta2) - 1) * math.log(2 * self.d) + ld(i2)
        L = ld(i1) + ld(i2) - ld(i1 + i2)
        return float(lmu1 + lmu2 - L)

    def admissible(self, pair: PathPair) -> bool:
        e1, e2 = pair.eta1, pair.eta2
        o = origin(self.d)
        if e1[0] != o or e2[0] != o or e1[-1] != self.x or e2[-1] != self.y:
            return False
        inner = list(e1[1:-1]) + list(e2[1:-1])
        return (all(z in self.hat.sites for z in inner) and len(set(inner)) == len(inner)
                and pair.disjoint())


# ---------------------------------------------------------------------------
# Exact enumeration


def paths_to(A: Domain, start: Site, target: Site, avoid: frozenset = frozenset()) -> list[Saw]:
    """SAWs from ``start`` to ``target`` whose interior stays in A minus ``avoid``."""
    inner = A.sites - avoid
    out = []
    path = [start]
    seen = {start}

    def rec(x):
        for y in neighbors(x):
            if y == target:
                out.append(tuple(path) + (y,))
            elif y in inner and y not in seen:
                seen.add(y)
                path.append(y)
                rec(y)
                path.pop()
                seen.discard(y)

    rec(start)
    return out


def excursion_law(spec: ExcursionSpec) -> dict:
    """Exact lambda^#_{A,x,y} as {PathPair: probability} by enumeration."""
    if len(spec.A) > ENUM_MAX_SITES:
        raise ValueError("domain too large for enumeration")
    o = origin(spec.d)
    P1 = paths_to(spec.A, o, spec.x, frozenset([o]))
    P2 = paths_to(spec.A, o, spec.y, frozenset([o]))
    logs = {}
    for a in P1:
        sa = set(a[1:])
        for b in P2:
            if sa.isdisjoint(b[1:]):
                pr = PathPair(a, b)
                logs[pr] = spec.log_weight(pr)
    if not logs:
        raise ValueError("no admissible pair")
    m = max(logs.values())
    w = {k: math.exp(v - m) for k, v in logs.items()}
    Z = sum(w.values())
    return {k: v / Z for k, v in w.items()}


def _join(prefix_x: Saw, middle: Saw, prefix_y: Saw) -> tuple:
    return tuple(prefix_x[:-1]) + tuple(middle) + tuple(reversed(prefix_y[:-1]))


def as_single(pair: PathPair) -> Saw:
    """eta = (eta1)^R + eta2 as one SAW from x to y."""
    return tuple(reversed(pair.eta1)) + tuple(pair.eta2[1:])


@dataclass(frozen=True)
class MarkovReport:
    max_deviation: float
    n_completions: int
    x_new: Site
    y_new: Site


def domain_markov_check(spec: ExcursionSpec, prefix_x: Saw, prefix_y: Saw) -> MarkovReport:
    """Compare the conditional law of the middle piece given both end
    pieces with the excursion law of the reduced domain.

    ``prefix_x`` is a SAW from x (``prefix_y`` from y) staying in A minus 0
    after its first site; the middle runs from the tip x' of one to the tip
    y' of the other, in A minus both pieces.
    """
    prefix_x, prefix_y = tuple(map(tuple, prefix_x)), tuple(map(tuple, prefix_y))
    if prefix_x[0] != spec.x or prefix_y[0] != spec.y:
        raise ValueError("prefixes must start at x and y")
    law = excursion_law(spec)
    lx, ly = len(prefix_x), len(prefix_y)
    cond: dict = {}
    for pr, p in law.items():
        eta = as_single(pr)
        if eta[:lx] == prefix_x and tuple(reversed(eta))[:ly] == prefix_y and len(eta) >= lx + ly:
            mid = eta[lx - 1: len(eta) - ly + 1]
            cond[mid] = cond.get(mid, 0.0) + p
    if not cond:
        raise ValueError("prefixes admit no completion")
    Z = sum(cond.values())
    cond = {k: v / Z for k, v in cond.items()}
    xn, yn = prefix_x[-1], prefix_y[-1]
    if lx == 1 and ly == 1:
        sub = {as_single(k): v for k, v in law.items()}
    else:
        removed = set(prefix_x) | set(prefix_y)
        A2 = spec.A.minus(removed)
        sub_spec = ExcursionSpec.__new__(ExcursionSpec)
        object.__setattr__(sub_spec, "A", A2)
        object.__setattr__(sub_spec, "x", xn)
        object.__setattr__(sub_spec, "y", yn)
        sub = {as_single(k): v for k, v in excursion_law(sub_spec).items()}
    keys = set(cond) | set(sub)
    dev = max(abs(cond.get(k, 0.0) - sub.get(k, 0.0)) for k in keys)
    return MarkovReport(dev, len(cond), xn, yn)


# ---------------------------------------------------------------------------
# Sampling


class ExcursionSampler:
    """h-processes from x and y to 0, loop-erased, reversed and tilted."""

    def __init__(self, spec: ExcursionSpec):
        self.spec = spec
        A = spec.A
        d = spec.d
        o = origin(d)
        sites = spec.hat.ordered
        idx = spec.hat.index
        n = len(sites)
        # states: sites of A minus 0, then x, then y; absorbing state = 0
        self.states = sites + [spec.x, spec.y]
        self.absorb = n + 2
        P = A.minus([o]).transition_matrix().toarray() if n else np.zeros((0, 0))
        to0 = np.array([sum(1 for z in neighbors(s) if z == o) / (2 * d) for s in sites])
        h = np.linalg.solve(np.eye(n) - P, to0) if n else np.zeros(0)
        self.h = h
        if not any(z == o or (z in idx and h[idx[z]] > 0) for z in neighbors(spec.x)):
            raise ValueError("0 unreachable from x")
        T = np.zeros((n + 3, n + 3))
        for i, s in enumerate(sites):
            for z in neighbors(s):
                if z == o:
                    T[i, self.absorb] += 1 / (2 * d) / h[i]
                elif z in idx:
                    T[i, idx[z]] += h[idx[z]] / (2 * d) / h[i]
        for k, s in ((n, spec.x), (n + 1, spec.y)):
            w = np.zeros(n + 3)
            for z in neighbors(s):
                if z == o:
                    w[self.absorb] += 1.0
                elif z in idx:
                    w[idx[z]] += h[idx[z]]
            if w.sum() <= 0:
                raise ValueError("0 unreachable from a boundary point")
            T[k] = w / w.sum()
        T[self.absorb, self.absorb] = 1.0
        self.csr = _kernels.to_csr(T)
        self.n = n

    def _erased(self, start: int, rng, size: int) -> list[Saw]:
        seed = int(rng.integers(2**31 - 1))
        inside = np.ones(self.n + 3, dtype=np.bool_)
        flat, off, capped = _kernels.erased_chain_batch(
            *self.csr, self.absorb, np.array([start]), inside, size, seed, 10**7)
        o = origin(self.spec.d)
        S = self.states
        out = []
        for k in range(size):
            walk = [S[i] for i in flat[off[k]: off[k + 1]]]
            out.append(tuple([o] + walk[::-1]))
        return out

    def sample(self, rng, size: int) -> tuple[list[PathPair], np.ndarray]:
        """(pairs, tilt weights exp(-L_A)); weight 0 when the paths meet."""
        e1 = self._erased(self.n, rng, size)
        e2 = self._erased(self.n + 1, rng, size)
        sp = self.spec
        ok = np.array([set(a[1:]).isdisjoint(b[1:]) for a, b in zip(e1, e2)])
        f1, o1 = _flatten([sp.site_indices(a) if k else [] for a, k in zip(e1, ok)])
        f2, o2 = _flatten([sp.site_indices(b) if k else [] for b, k in zip(e2, ok)])
        L = _kernels.pair_log_q(sp.green, f1, o1, f2, o2)
        w = np.where(ok, np.exp(-L), 0.0)
        return [PathPair(a, b) for a, b in zip(e1, e2)], w


def sample_excursion_pair(spec: ExcursionSpec, rng, size: int = 1):
    return ExcursionSampler(spec).sample(rng, size)


def weighted_law(pairs: Sequence[PathPair], w: np.ndarray) -> dict:
    out: dict = {}
    for p, x in zip(pairs, w):
        if x > 0:
            out[p] = out.get(p, 0.0) + x
    Z = sum(out.values())
    return {k: v / Z for k, v in out.items()}


# ---------------------------------------------------------------------------
# Shapes and convergence


def shape_spec(shape: str, R: int, placement: str = "perpendicular", d: int = 2) -> ExcursionSpec:
    """Ball, square or L-shaped domain containing the ball of radius R.

    Ball (radius R + 1/2) and square [-R, R]^2 put x on the positive first
    axis and y on the positive second axis ('perpendicular') or on the
    negative first axis ('antipodal'). L is [-R, R] x [-R, 3R] union
    [-R, 3R] x [-R, R] with x at the top of the vertical arm and y at the
    end of the horizontal one (always perpendicular).
    """
    if d != 2:
        raise ValueError("shape ladder is planar")
    if shape in ("ball", "square"):
        if shape == "ball":
            A = domain_from_spec({"ball": {"radius": R + 0.5}})
        else:
            A = domain_from_spec({"rect": {"lo": [-R, -R], "hi": [R, R]}})
        m = max(x[0] for x in A.sites) + 1
        if placement == "perpendicular":
            return ExcursionSpec(A, (m, 0), (0, m))
        if placement == "antipodal":
            return ExcursionSpec(A, (m, 0), (-m, 0))
        raise ValueError(f"unknown placement {placement}")
    if shape == "L":
        A = domain_from_spec({"union": [{"rect": {"lo": [-R, -R], "hi": [R, 3 * R]}},
                                        {"rect": {"lo": [-R, -R], "hi": [3 * R, R]}}]})
        return ExcursionSpec(A, (0, 3 * R + 1), (3 * R + 1, 0))
    raise ValueError(f"unknown shape {shape}")


def inner_radius(spec: ExcursionSpec) -> float:
    """Largest r with the open ball of radius r inside A."""
    return math.sqrt(min(norm2(z) for z in spec.A.boundary))


def prefix_probabilities(pairs: Sequence[PathPair], w: np.ndarray, k_radius: float,
                         classes: Sequence[set], seed=None) -> list[Estimate]:
    """Self-normalised estimates of P{(eta1, eta2) truncated at k lies in C}
    for each class C (a set of PathPairs), delta-method errors."""
    from .stats import ratio_estimate

    keys = []
    for p in pairs:
        i = first_exit_index(p.eta1, k_radius)
        j = first_exit_index(p.eta2, k_radius)
        keys.append((p.eta1[: i + 1], p.eta2[: j + 1]) if i is not None and j is not None else None)
    out = []
    for C in classes:
        cs = {(q.eta1, q.eta2) for q in C}
        ind = np.array([k in cs for k in keys], dtype=float)
        out.append(ratio_estimate(w * ind, w, seed))
    return out


@dataclass
class ConvergenceReport:
    shape: str
    radii: list
    n_minus_k: list
    estimates: list          # per domain: list of Estimate per class
    deviations: list         # per domain: TV between class laws
    flags: tuple = ()


def excursion_convergence(classes: Sequence[set], p_ref: Sequence[float], k_radius: float,
                          shape: str, sizes: Sequence[int], n_samples: int, rng,
                          placement: str = "perpendicular") -> ConvergenceReport:
    """lambda^#_A of the class prefixes on a ladder of domains of one shape.

    ``p_ref`` are reference class probabilities from the two-sided measure.
    The deviation at each size is the total variation between the class
    laws.
    """
    rep = ConvergenceReport(shape, [], [], [], [])
    for R in sizes:
        spec = shape_spec(shape, R, placement)
        s = ExcursionSampler(spec)
        seed = int(rng.integers(2**31 - 1))
        pairs, w = s.sample(np.random.default_rng(seed), n_samples)
        est = prefix_probabilities(pairs, w, k_radius, classes, seed)
        r_in = inner_radius(spec)
        rep.radii.append(R)
        rep.n_minus_k.append(math.log(r_in / math.e) - math.log(k_radius))
        rep.estimates.append(est)
        rep.deviations.append(0.5 * sum(abs(e.mean - p) for e, p in zip(est, p_ref)))
    return rep


# ---------------------------------------------------------------------------
# Z ratio


def truncated_law(law: dict, radius: float) -> dict:
    out: dict = {}
    for pr, p in law.items():
        i = first_exit_index(pr.eta1, radius)
        j = first_exit_index(pr.eta2, radius)
        if i is None or j is None:
            continue
        k = PathPair(pr.eta1[: i + 1], pr.eta2[: j + 1])
        out[k] = out.get(k, 0.0) + p
    return out


@dataclass
class ZReport:
    z_max: float
    z_min: float
    by_j: dict
    values: dict = field(repr=False, default_factory=dict)


def z_ratio(spec: ExcursionSpec, radius: float, levels: Sequence[float]) -> ZReport:
    """Z_A(gamma) = lambda^#_A(gamma) / lambda^#_n(gamma) over gamma in A_n.

    ``by_j[j]`` is the largest |Z(g) - Z(g')| over pairs of states that
    agree from the first visits to the boundary of the level
    ``levels[-1-j]`` onward (both coordinates).
    """
    from .twosided import exact_ladder, lambda_own

    lawA = truncated_law(excursion_law(spec), radius)
    lam = {g: lambda_own(g, radius) for g in lawA}
    tot = exact_ladder(radius, (), spec.d).total
    Z = {}
    for g, p in lawA.items():
        if lam[g] <= 0:
            raise ValueError("lambda^# vanishes on a supported pair")
        Z[g] = p / (lam[g] / tot)
    by_j = {}
    gs = list(Z)
    for j, r in enumerate(sorted(levels, reverse=True)):
        def tail(eta):
            i = first_exit_index(eta, r)
            return eta[i:] if i is not None else None
        groups: dict = {}
        for g in gs:
            groups.setdefault((tail(g.eta1), tail(g.eta2)), []).append(Z[g])
        by_j[j] = max((max(v) - min(v) for v in groups.values() if len(v) > 1), default=0.0)
    return ZReport(max(Z.values()), min(Z.values()), by_j, Z)
