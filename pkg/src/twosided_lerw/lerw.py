"""One-sided loop-erased random walk: exact weights and samplers.

Two exact samplers for mu_n are provided. The Laplacian walk grows the
path one site at a time with the harmonic-measure rule. The
conditioned-walk sampler runs the walk conditioned never to return to the
avoided set and erases loops. The latter is simulated on the closure K
of a ball: excursions outside K are replaced by one jump, either to the
exact re-entry point or to an absorbing "never returns" state. Loop
erasure only needs the order of visits to K, so nothing is truncated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import _kernels
from .lattice import (
    Domain,
    Saw,
    Site,
    ball,
    enumerate_saws,
    first_exit_index,
    is_saw,
    loop_erase,
    neighbors,
    norm2,
    origin,
)
from .potential import G0, SetPotential, green_domain_columns, punctured_green

STEP_CAP = 10**7


# ---------------------------------------------------------------------------
# Exact weights


def in_W(eta: Sequence[Site], radius: float) -> bool:
    """Membership in W_n: SAW from 0, interior in the ball, tip outside it."""
    eta = tuple(eta)
    if len(eta) < 2 or not is_saw(eta) or any(eta[0]):
        return False
    r2 = radius * radius
    return all(norm2(x) < r2 for x in eta[:-1]) and norm2(eta[-1]) >= r2


def log_F_punctured(B: Sequence[Site], d: int) -> float:
    """log F_B(Z^d minus 0) for a finite set B not containing 0.

    Uses G_{Z^d minus 0}(x, y) = a(x) + a(y) - a(x - y) for d=2 and
    G(x - y) - G(x) G(y) / G(0) for d=3; F_B is the determinant of that
    kernel restricted to B.
    """
    B = [tuple(b) for b in B]
    if not B:
        return 0.0
    if any(not any(b) for b in B):
        raise ValueError("B must avoid the origin")
    arr = np.array(B, dtype=np.int64)
    K = punctured_green(arr, arr, d)
    sign, logdet = np.linalg.slogdet(K)
    if sign <= 0:
        raise ArithmeticError("Green matrix is not positive definite")
    return float(logdet)


@dataclass(frozen=True)
class MuWeight:
    path: Saw
    n_steps: int
    log_F: float
    log_G0: float
    log_Es: float

    @property
    def log_weight(self) -> float:
        d = len(self.path[0])
        return -self.n_steps * math.log(2 * d) + self.log_F + self.log_G0 + self.log_Es

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


def mu_weight(eta: Sequence[Site], radius: float | None = None) -> MuWeight:
    """mu_n(eta) = (2d)^{-|eta|} F_eta G_0 Es_eta(z).

    F_eta is taken over Z^d minus 0 (all vertices of eta except 0, the
    tip included); for d=2 this is the plain loop-measure form with every
    loop counted, see the notes on the disconnecting-loop constant.
    """
    eta = tuple(tuple(int(c) for c in x) for x in eta)
    if radius is not None and not in_W(eta, radius):
        raise ValueError("eta is not in W_n for this radius")
    d = len(eta[0])
    log_F = log_F_punctured(eta[1:], d)
    es = SetPotential(eta, d).escape(eta[-1])
    if es <= 0:
        raise ArithmeticError("nonpositive escape probability")
    return MuWeight(eta, len(eta) - 1, log_F, math.log(G0(d)), math.log(es))


@dataclass
class SawTable:
    """All of W_n at one radius with exact weights mu_n."""

    radius: float
    d: int
    paths: list
    weights: np.ndarray
    index: dict

    def __len__(self):
        return len(self.paths)

    def prob(self, eta) -> float:
        i = self.index.get(tuple(eta))
        return 0.0 if i is None else float(self.weights[i])


@lru_cache(maxsize=16)
def saw_table(radius: float, d: int = 2) -> SawTable:
    paths = list(enumerate_saws(radius, d))
    w = np.array([mu_weight(p).weight for p in paths])
    return SawTable(radius, d, paths, w, {p: i for i, p in enumerate(paths)})


# ---------------------------------------------------------------------------
# Laplacian walk


def laplacian_step_law(eta: Sequence[Site]) -> tuple[list, np.ndarray]:
    """Next-step law g_eta(y) / (2d Es_eta(tip)) over neighbours y of the tip."""
    eta = tuple(eta)
    d = len(eta[0])
    sp = SetPotential(eta, d)
    nb = [y for y in neighbors(eta[-1])]
    vals = sp.profile(np.array(nb))
    probs = vals / (2 * d * sp.escape(eta[-1]))
    keep = [i for i, y in enumerate(nb) if probs[i] > 0]
    return [nb[i] for i in keep], probs[keep]


def sample_mu_exact(radius: float, rng: np.random.Generator, size: int = 1, d: int = 2,
                    start: Sequence[Site] | None = None, cache: dict | None = None) -> list:
    """Laplacian-walk sampler of mu_n (optionally continuing a given prefix).

    Samples advance together; each distinct prefix solves its harmonic
    problem once, the law being cached by the prefix.
    """
    cache = {} if cache is None else cache
    root = tuple(start) if start is not None else (origin(d),)
    r2 = radius * radius
    out: list = [None] * size
    groups = {root: np.arange(size)}
    while groups:
        nxt: dict = {}
        for prefix, members in groups.items():
            law = cache.get(prefix)
            if law is None:
                law = laplacian_step_law(prefix)
                cache[prefix] = law
            sites, probs = law
            cum = np.cumsum(probs)
            u = rng.random(len(members)) * cum[-1]
            pick = np.searchsorted(cum, u, side="right")
            for k in np.unique(pick):
                sel = members[pick == k]
                child = prefix + (sites[k],)
                if norm2(sites[k]) >= r2:
                    for i in sel:
                        out[i] = child
                else:
                    nxt[child] = sel
        groups = nxt
    return out


# ---------------------------------------------------------------------------
# Conditioned walk compressed to a finite region


class Region:
    """Closure K of a ball with the exact excursion laws of the outside.

    For each site w just outside K, ``reentry[w]`` is the law of the
    first site of K hit by simple random walk from w: the full hitting
    distribution in the whole lattice (sub-probability for d=3), or, if a
    ``horizon`` radius is given, the law of hitting K before leaving the
    horizon ball.
    """

    def __init__(self, radius: float, d: int = 2, horizon: float | None = None):
        self.radius = radius
        self.d = d
        self.horizon = horizon
        C = ball(d=d, radius=radius)
        self.sites = sorted(C.closure)
        self.index = {x: i for i, x in enumerate(self.sites)}
        self.arr = np.array(self.sites, dtype=np.int64)
        K = set(self.sites)
        W = sorted({y for x in self.sites for y in neighbors(x) if y not in K})
        self.outside = W
        self.outside_arr = np.array(W, dtype=np.int64)
        m, k = len(self.sites), len(W)
        Nk = np.zeros((m, m))
        Nw = np.zeros((m, k))
        widx = {w: j for j, w in enumerate(W)}
        for i, x in enumerate(self.sites):
            for y in neighbors(x):
                if y in self.index:
                    Nk[i, self.index[y]] += 1
                else:
                    Nw[i, widx[y]] += 1
        self.Nk, self.Nw = Nk, Nw
        if horizon is None:
            R = SetPotential(self.sites, d).hitting(self.outside_arr)
        else:
            R = self._horizon_reentry(horizon)
        self.reentry = R
        self.reach = Nk + Nw @ R
        self.inside_mask = np.array([norm2(x) < radius * radius for x in self.sites])

    def _horizon_reentry(self, horizon: float) -> np.ndarray:
        d = self.d
        Ch = ball(d=d, radius=horizon)
        K = set(self.sites)
        D = Domain(frozenset(s for s in Ch.sites if s not in K), d)
        if any(w not in D.sites for w in self.outside):
            raise ValueError("horizon too close to the region")
        cols = green_domain_columns(D, self.outside)  # G_D(., w)
        R = np.zeros((len(self.outside), len(self.sites)))
        for b, x in enumerate(self.sites):
            for y in neighbors(x):
                j = D.index.get(y)
                if j is not None:
                    R[:, b] += cols[j, :] / (2 * d)
        return R

    def transition(self, eta: Sequence[Site], sp: SetPotential | None = None) -> np.ndarray:
        """Row-stochastic matrix (m x (m+1)) of the compressed h-process.

        h is the avoidance profile of ``eta``; the walk starts at the tip of
        ``eta`` whose row uses Es_eta(tip) as denominator. Column m is the
        absorbing state (no return to K, or horizon reached).
        """
        eta = [tuple(x) for x in eta]
        sp = sp or SetPotential(eta, self.d)
        hK = sp.profile(self.arr)
        hW = sp.profile(self.outside_arr)
        esc = np.maximum(hW - self.reentry @ hK, 0.0)
        den = 2 * self.d * hK
        tip = self.index[eta[-1]]
        den[tip] = 2 * self.d * sp.escape(eta[-1])
        m = len(self.sites)
        T = np.zeros((m, m + 1))
        live = den > 0
        T[live, :m] = self.reach[live] * hK[None, :] / den[live, None]
        T[live, m] = (self.Nw[live] @ esc) / den[live]
        for x in eta[:-1]:
            T[self.index[x]] = 0.0
        return T


@lru_cache(maxsize=64)
def region(radius: float, d: int = 2, horizon: float | None = None) -> Region:
    return Region(radius, d, horizon)


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def run_erased_chain(reg: Region, eta: Sequence[Site], target_radius: float, rng, size: int,
                     T: np.ndarray | None = None) -> list:
    """Loop-erased compressed walks from the tip of eta, cut at the target ball."""
    eta = [tuple(x) for x in eta]
    if T is None:
        T = reg.transition(eta)
    indptr, indices, cum = _kernels.to_csr(T)
    m = len(reg.sites)
    prefix = np.array([reg.index[x] for x in eta], dtype=np.int64)
    inside = np.array([norm2(x) < target_radius * target_radius for x in reg.sites])
    flat, offs, capped = _kernels.erased_chain_batch(
        indptr, indices, cum, m, prefix, inside, size, _seed_from(rng), STEP_CAP)
    if capped:
        raise RuntimeError(f"{capped} trajectories hit the step cap")
    sites = reg.sites
    cache: dict = {}
    out = []
    for s in range(size):
        key = flat[offs[s]:offs[s + 1]].tobytes()
        p = cache.get(key)
        if p is None:
            p = tuple(sites[i] for i in flat[offs[s]:offs[s + 1]])
            cache[key] = p
        out.append(p)
    return out


def sample_mu_cw(radius: float, rng, size: int = 1, d: int = 2) -> list:
    """Conditioned-walk erasure sampler of mu_n (exact)."""
    reg = region(radius, d)
    return run_erased_chain(reg, [origin(d)], radius, rng, size)


def sample_mu_truncated(radius: float, j: float, rng, size: int = 1, d: int = 2) -> list:
    """Conditioned walk from 0 run only until it reaches the ball of radius
    radius*e^j, then erased and cut at the first exit of the radius ball.
    """
    if j < 1:
        raise ValueError("buffer j must be at least 1")
    reg = region(radius, d, radius * math.exp(j))
    return run_erased_chain(reg, [origin(d)], radius, rng, size)


def extend(eta: Sequence[Site], radius_to: float, rng, size: int = 1) -> list:
    """Sample the continuation kernel W_n -> W_m: the conditioned walk from
    the tip avoiding eta, erased, cut at the first exit of the larger ball."""
    eta = [tuple(x) for x in eta]
    d = len(eta[0])
    reg = region(radius_to, d)
    if any(x not in reg.index for x in eta):
        raise ValueError("eta must lie in the closure of the target ball")
    return run_erased_chain(reg, eta, radius_to, rng, size)


def extension_law(eta: Sequence[Site], radius_to: float) -> dict:
    """Exact continuation law from the enumeration of W_m: mu_m(. | prefix eta)."""
    eta = tuple(tuple(x) for x in eta)
    d = len(eta[0])
    ext = list(enumerate_saws(radius_to, d, start=eta))
    w = np.array([mu_weight(p).weight for p in ext])
    w = w / w.sum()
    return dict(zip(ext, w))


# ---------------------------------------------------------------------------
# mu_{n,m}


def tail_segment(eta: Sequence[Site], radius_n: float) -> Saw:
    """eta[last visit to C_n before the end :], the mu_{n,m} piece of eta."""
    eta = tuple(eta)
    r2 = radius_n * radius_n
    last = max(i for i, x in enumerate(eta) if norm2(x) < r2)
    return eta[last:]


def sample_mu_nm(radius_n: float, radius_m: float, rng, size: int = 1, d: int = 2) -> list:
    if radius_n * math.e > radius_m + 1e-12:
        raise ValueError("need n <= m - 1")
    return [tail_segment(p, radius_n) for p in sample_mu_cw(radius_m, rng, size, d)]


def mu_nm_target(eta: Sequence[Site]) -> float:
    """(2d)^{-|eta|} F_eta Es_eta(z) H_{d(Z^d minus 0 minus eta)}(0, w)."""
    eta = [tuple(x) for x in eta]
    d = len(eta[0])
    o = origin(d)
    body = [x for x in eta if x != o]
    logF = log_F_punctured(body, d)
    es = SetPotential(eta, d).escape(eta[-1])
    # boundary Poisson kernel from 0 to w = eta[0]
    hset = [o] + body
    sp = SetPotential(hset, d)
    H = sp.hitting(np.array(neighbors(o)))
    w = sp.index[eta[0]]
    hb = H[:, w].sum() / (2 * d)
    return math.exp(-(len(eta) - 1) * math.log(2 * d) + logF) * es * hb


def mu_nm_weight_bounds(eta: Sequence[Site], c_lower: float) -> tuple[float, float]:
    """(c_lower * target, target): the upper bound is the one from the
    exact expression with Es monotonicity; c_lower is a fitted constant."""
    t = mu_nm_target(eta)
    return c_lower * t, t


def mu_nm_exact(radius_n: float, radius_m: float, d: int = 2) -> dict:
    tab = saw_table(radius_m, d)
    out: dict = {}
    for p, w in zip(tab.paths, tab.weights):
        k = tail_segment(p, radius_n)
        out[k] = out.get(k, 0.0) + w
    return out


# ---------------------------------------------------------------------------
# Conditioned walk, site by site


@dataclass
class ConditionedWalkSpec:
    avoided: tuple
    start: Site

    def __post_init__(self):
        self.avoided = tuple(tuple(x) for x in self.avoided)
        self.start = tuple(self.start)


def sample_conditioned_walk(spec: ConditionedWalkSpec, rng, stop_radius: float | None = None,
                            stop_sites=None, step_cap: int = STEP_CAP) -> tuple[Saw, bool]:
    """h-process trajectory never returning to the avoided set.

    Stops on leaving the ball of ``stop_radius``, on hitting ``stop_sites``,
    or at the step cap. Returns (walk, capped).
    """
    d = len(spec.start)
    sp = SetPotential(spec.avoided, d)
    h: dict = {}
    stop_sites = set(map(tuple, stop_sites or ()))

    def hv(y):
        v = h.get(y)
        if v is None:
            v = float(sp.profile(np.array([y]))[0])
            h[y] = v
        return v

    x = spec.start
    walk = [x]
    avoid = set(spec.avoided)
    r2 = stop_radius * stop_radius if stop_radius else None
    for _ in range(step_cap):
        nb = neighbors(x)
        w = np.array([hv(y) for y in nb])
        y = nb[int(rng.choice(len(nb), p=w / w.sum()))]
        walk.append(y)
        x = y
        if y in avoid:
            raise AssertionError("h-process entered the avoided set")
        if r2 is not None and norm2(y) >= r2:
            return tuple(walk), False
        if y in stop_sites:
            return tuple(walk), False
    return tuple(walk), True
