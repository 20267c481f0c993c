"""Pairs of mutually avoiding LERWs tilted by their mutual loop mass.

For a pair (g1, g2) of paths in W_n that meet only at 0, the tilt is
Q_n = exp(-L_n) with L_n the mass of loops in the punctured ball meeting
both paths: L_n = log det G[g1] + log det G[g2] - log det G[g1 u g2],
G the Green function of the punctured ball. The tilted measure is
lambda_n(pair) = mu_n(g1) mu_n(g2) Q_n(pair).

In d=2 the loops that disconnect 0 from the boundary meet every path of
W_n, so dropping them (as in the nondisconnecting convention) multiplies
every Q_n by the same constant exp(m_disc); normalised quantities do not
depend on the convention and absolute values are reported under both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .lattice import (
    Saw,
    Site,
    ball_sites,
    enumerate_saws,
    first_exit_index,
    norm,
    norm2,
    origin,
    symmetry_group,
    transform_path,
)
from .lerw import in_W, mu_weight, sample_mu_cw, saw_table
from .loops import disconnecting_mass, LoopMass
from .potential import green_domain
from .lattice import Domain
from .stats import Estimate, LinearFit, ols_fit

SEP_SHELL = 0.1
EXACT_PAIR_RADIUS = {2: 2.5, 3: 1.5}


# ---------------------------------------------------------------------------
# Pairs


@dataclass(frozen=True)
class PathPair:
    eta1: Saw
    eta2: Saw

    def __post_init__(self):
        object.__setattr__(self, "eta1", tuple(tuple(x) for x in self.eta1))
        object.__setattr__(self, "eta2", tuple(tuple(x) for x in self.eta2))

    @property
    def d(self) -> int:
        return len(self.eta1[0])

    def disjoint(self) -> bool:
        return not (set(self.eta1) & set(self.eta2)) - {origin(self.d)}

    def in_A(self, radius: float) -> bool:
        return in_W(self.eta1, radius) and in_W(self.eta2, radius) and self.disjoint()

    def swap(self) -> "PathPair":
        return PathPair(self.eta2, self.eta1)

    def transform(self, g) -> "PathPair":
        return PathPair(transform_path(g, self.eta1), transform_path(g, self.eta2))

    def truncate(self, radius: float) -> "PathPair":
        i = first_exit_index(self.eta1, radius)
        j = first_exit_index(self.eta2, radius)
        if i is None or j is None:
            raise ValueError("too short")
        return PathPair(self.eta1[: i + 1], self.eta2[: j + 1])

    def extends(self, other: "PathPair") -> bool:
        return (self.eta1[: len(other.eta1)] == other.eta1
                and self.eta2[: len(other.eta2)] == other.eta2)


def pair_orbit(pair: PathPair) -> set:
    """Images of a pair under the lattice symmetries and the swap."""
    out = set()
    for g in symmetry_group(pair.d):
        p = pair.transform(g)
        out.add(p)
        out.add(p.swap())
    return out


def enumerate_pairs(radius: float, d: int = 2) -> list[PathPair]:
    paths = list(enumerate_saws(radius, d))
    return [PathPair(a, b) for a in paths for b in paths if PathPair(a, b).disjoint()]


def pair_classes(radius: float, d: int = 2) -> list[PathPair]:
    """One representative (the smallest) per symmetry class of A_n."""
    seen, reps = set(), []
    for p in sorted(enumerate_pairs(radius, d), key=lambda p: (p.eta1, p.eta2)):
        if p in seen:
            continue
        orb = pair_orbit(p)
        seen |= orb
        reps.append(min(orb, key=lambda q: (q.eta1, q.eta2)))
    return reps


# ---------------------------------------------------------------------------
# Tilt


class TiltGeometry:
    """Green function of the punctured ball and the loop mass L_n."""

    def __init__(self, radius: float, d: int = 2):
        self.radius, self.d = radius, d
        sites = [x for x in ball_sites(radius, d) if any(x)]
        self.domain = Domain.from_sites(sites, d)
        self.sites = self.domain.ordered
        self.index = self.domain.index
        self.G = green_domain(self.domain).matrix if sites else np.zeros((0, 0))

    def indices(self, eta: Sequence[Site]) -> list[int]:
        idx = self.index
        return [idx[x] for x in eta if x in idx]

    def L_all(self, eta1, eta2) -> float:
        i1, i2 = self.indices(eta1), self.indices(eta2)
        if not i1 or not i2:
            return 0.0
        ld = lambda ii: np.linalg.slogdet(self.G[np.ix_(ii, ii)])[1]
        return float(ld(i1) + ld(i2) - ld(i1 + i2))

    @property
    def disconnecting_shift(self) -> LoopMass:
        """m_disc: Q_nondisconnecting = Q_all * exp(m_disc) on A_n (d=2)."""
        if self.d != 2:
            return LoopMass(0.0, "exact")
        if not hasattr(self, "_mdisc"):
            self._mdisc = disconnecting_mass(math.log(self.radius),
                                             rng=np.random.default_rng(0))
        return self._mdisc


@lru_cache(maxsize=32)
def tilt_geometry(radius: float, d: int = 2) -> TiltGeometry:
    return TiltGeometry(radius, d)


def q_tilt(pair: PathPair, radius: float, convention: str = "all") -> float:
    """Q_n(pair): 0 off A_n, else exp(-L_n) with all loops in the punctured
    ball ('all') or without those disconnecting 0 ('nondisconnecting')."""
    if not pair.in_A(radius):
        return 0.0
    geo = tilt_geometry(radius, pair.d)
    q = math.exp(-geo.L_all(pair.eta1, pair.eta2))
    if convention == "nondisconnecting":
        q *= math.exp(geo.disconnecting_shift.value)
    elif convention != "all":
        raise ValueError("unknown convention")
    return q


@dataclass(frozen=True)
class TiltedEstimate:
    value: float
    stderr: float
    backend: str
    convention: str = "all"
    n_samples: int | None = None
    ess: float | None = None
    log_shift: float = 0.0
    seed: int | None = None
    flags: tuple = ()

    def under_nondisconnecting(self) -> float:
        """Absolute value under the nondisconnecting convention."""
        return self.value * math.exp(self.log_shift)


# ---------------------------------------------------------------------------
# Exact backend


def in_sep_path(eta: Sequence[Site], radius: float) -> bool:
    """I_n(eta): sites of eta in the shell e^{-1/10} r <= |x| < r lie in the
    cone x_1 >= |x| / e."""
    lo2 = (radius * math.exp(-SEP_SHELL)) ** 2
    r2 = radius * radius
    for x in eta:
        n2 = norm2(x)
        if lo2 <= n2 < r2 and x[0] < math.sqrt(n2) / math.e:
            return False
    return True


def in_sep(pair: PathPair, radius: float) -> bool:
    neg = tuple(tuple(-c for c in x) for x in pair.eta2)
    return pair.in_A(radius) and in_sep_path(pair.eta1, radius) and in_sep_path(neg, radius)


def separation_delta(pair: PathPair, radius: float) -> float:
    """Largest r with dist(z_j, eta^{3-j}) >= r e^n for both tips."""
    def dist(z, eta):
        return min(norm(tuple(a - b for a, b in zip(z, y))) for y in eta)
    return min(dist(pair.eta1[-1], pair.eta2), dist(pair.eta2[-1], pair.eta1)) / radius


@dataclass(frozen=True)
class SeparationStat:
    delta: float
    sep: bool


def separation(pair: PathPair, radius: float) -> SeparationStat:
    return SeparationStat(separation_delta(pair, radius), in_sep(pair, radius))


TOP_STORE = 4000


class ExactLadder:
    """Exhaustive sums of lambda_N over A_N, aggregated by prefixes.

    For each level radius r_l below N (and N itself when W_N is small)
    ``Lam[l]`` is the matrix lambda_N[A_N(p, q)] indexed by the paths p, q
    of W_{r_l}. ``Lam_sep`` restricts the sum to Sep_N and is indexed by
    the paths of the lowest level.
    """

    def __init__(self, radius: float, levels: Sequence[float] = (), d: int = 2):
        if radius > EXACT_PAIR_RADIUS[d] + 1e-12:
            raise ValueError(f"radius {radius} exceeds the exact pair guard; use the IS backend")
        tab = saw_table(radius, d)
        levels = sorted(set(float(r) for r in levels if r < radius))
        self.store_top = len(tab.paths) <= TOP_STORE or not levels
        if self.store_top:
            levels.append(float(radius))
        self.radius, self.d, self.levels = radius, d, levels
        geo = tilt_geometry(radius, d)
        self.geometry = geo
        self.paths = tab.paths
        self.weights = tab.weights
        n = len(tab.paths)
        self.prefixes, self.prefix_index = [], []
        pid = np.zeros((n, len(levels)), dtype=np.int64)
        for l, r in enumerate(levels):
            pref: dict = {}
            for a, p in enumerate(tab.paths):
                t = p[: first_exit_index(p, r) + 1]
                pid[a, l] = pref.setdefault(t, len(pref))
            self.prefix_index.append(pref)
            self.prefixes.append(list(pref))
        self.pid = pid
        sizes = np.array([len(p) for p in self.prefixes], dtype=np.int64)
        off = np.concatenate([[0], np.cumsum(sizes[:-1] ** 2)]).astype(np.int64)
        if len(geo.sites) > 63:
            raise ValueError("too many sites for bit masks")
        uniq: dict = {}
        self.path_sites = [geo.indices(p) for p in tab.paths]
        self.path_mask = []
        for a, ii in enumerate(self.path_sites):
            mk = 0
            for i in ii:
                mk |= 1 << i
            self.path_mask.append(mk)
            uniq.setdefault(mk, []).append(a)
        masks = np.array(list(uniq), dtype=np.uint64)
        mp_ptr = np.zeros(len(uniq) + 1, dtype=np.int64)
        mp_ptr[1:] = np.cumsum([len(v) for v in uniq.values()])
        mp_paths = np.array([a for v in uniq.values() for a in v], dtype=np.int64)
        G = geo.G
        m = len(geo.sites)
        mask_ld = np.array([
            np.linalg.slogdet(G[np.ix_(*[[i for i in range(m) if mk >> i & 1]] * 2)])[1]
            if mk else 0.0 for mk in uniq])
        tips: dict = {}
        tip = np.array([tips.setdefault(p[-1], len(tips)) for p in tab.paths], dtype=np.int64)
        sep1 = np.array([in_sep_path(p, radius) for p in tab.paths])
        sep2 = np.array([in_sep_path(tuple(tuple(-c for c in x) for x in p), radius)
                         for p in tab.paths])
        out, out_sep, total = _kernels.exact_pair_sums(
            G, masks, mask_ld, mp_ptr, mp_paths, tip, tab.weights, pid, off, sizes,
            sep1, sep2, 0)
        self.Lam = [out[off[l]: off[l] + sizes[l] ** 2].reshape(sizes[l], sizes[l])
                    for l in range(len(levels))]
        self.Lam_sep = out_sep.reshape(sizes[0], sizes[0])
        self.total = float(total)
        # children of each prefix at the next level (the top counts as a level)
        self.children = []
        for l in range(len(levels)):
            nxt = pid[:, l + 1] if l + 1 < len(levels) else np.arange(n)
            ch: dict = {}
            for a in range(n):
                ch.setdefault(int(pid[a, l]), set()).add(int(nxt[a]))
            self.children.append({k: sorted(v) for k, v in ch.items()})

    def level_of(self, r: float) -> int:
        for l, x in enumerate(self.levels):
            if abs(x - r) < 1e-9:
                return l
        raise ValueError(f"radius {r} is not a stored level of this ladder")

    def lam_given(self, pair: PathPair, r: float) -> float:
        """lambda_N(pair) for pair in A_r."""
        if abs(r - self.radius) < 1e-9 and not self.store_top:
            return lambda_own(pair, self.radius)
        l = self.level_of(r)
        idx = self.prefix_index[l]
        i, j = idx.get(pair.eta1), idx.get(pair.eta2)
        if i is None or j is None:
            return 0.0
        return float(self.Lam[l][i, j])

    def p_hat(self, pair: PathPair, r: float) -> float:
        return self.lam_given(pair, r) / self.total

    def lam_sep_given(self, pair: PathPair, r: float) -> float:
        """lambda_N restricted to Sep_N, summed over extensions of pair in A_r
        (r must be the lowest level)."""
        if self.level_of(r) != 0:
            raise ValueError("Sep sums are kept at the lowest level only")
        idx = self.prefix_index[0]
        i, j = idx.get(pair.eta1), idx.get(pair.eta2)
        if i is None or j is None:
            return 0.0
        return float(self.Lam_sep[i, j])

    def top_row(self, l: int, i: int, j: int) -> tuple[list, np.ndarray]:
        """Children pairs (a, b) in A_N of the level-l prefix pair (i, j)
        with their weights lambda_N = mu mu Q_N."""
        ca, cb = self.children[l][i], self.children[l][j]
        P, M, S = self.paths, self.path_mask, self.path_sites
        cand = [(a, b) for a in ca for b in cb
                if not M[a] & M[b] and P[a][-1] != P[b][-1]]
        f1, o1 = _flatten([S[a] for a, _ in cand])
        f2, o2 = _flatten([S[b] for _, b in cand])
        L = _kernels.pair_log_q(self.geometry.G, f1, o1, f2, o2)
        w = np.array([self.weights[a] * self.weights[b] for a, b in cand])
        return cand, w * np.exp(-L)


@lru_cache(maxsize=16)
def exact_ladder(radius: float, levels: tuple = (), d: int = 2) -> ExactLadder:
    return ExactLadder(radius, levels, d)


def lambda_exact(radius: float, d: int = 2) -> TiltedEstimate:
    lad = exact_ladder(radius, (), d)
    shift = tilt_geometry(radius, d).disconnecting_shift.value if d == 2 else 0.0
    return TiltedEstimate(lad.total, 0.0, "exact", log_shift=shift)


def lambda_exact_given(pair: PathPair, radius: float, k_radius: float,
                       d: int = 2) -> TiltedEstimate:
    """lambda_N(pair) for pair in A_k (k given by its radius)."""
    lad = exact_ladder(radius, (k_radius,), d)
    shift = tilt_geometry(radius, d).disconnecting_shift.value if d == 2 else 0.0
    return TiltedEstimate(lad.lam_given(pair, k_radius), 0.0, "exact", log_shift=shift)


def lambda_own(pair: PathPair, radius: float) -> float:
    """lambda_n(pair) = mu_n(eta1) mu_n(eta2) Q_n(pair) for pair in A_n."""
    if not pair.in_A(radius):
        return 0.0
    return (mu_weight(pair.eta1).weight * mu_weight(pair.eta2).weight
            * q_tilt(pair, radius))


# ---------------------------------------------------------------------------
# Importance sampling backend


def _flatten(lists):
    off = np.zeros(len(lists) + 1, dtype=np.int64)
    off[1:] = np.cumsum([len(x) for x in lists])
    flat = np.fromiter((i for x in lists for i in x), dtype=np.int64, count=off[-1])
    return flat, off


def pair_L_batch(g1: Sequence[Saw], g2: Sequence[Saw], radius: float,
                 d: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """(L_n, in_A flags) for paired samples already in W_n."""
    geo = tilt_geometry(radius, d)
    o = origin(d)
    ok = np.array([not ((set(a) & set(b)) - {o}) for a, b in zip(g1, g2)])
    i1 = [geo.indices(a) if k else [] for a, k in zip(g1, ok)]
    i2 = [geo.indices(b) if k else [] for b, k in zip(g2, ok)]
    f1, o1 = _flatten(i1)
    f2, o2 = _flatten(i2)
    L = _kernels.pair_log_q(geo.G, f1, o1, f2, o2)
    return L, ok


def lambda_is(radius: float, n_samples: int, rng, d: int = 2) -> TiltedEstimate:
    """lambda_n = E_{mu x mu}[Q_n] by direct sampling of both paths."""
    seed = int(rng.integers(2**31 - 1))
    r = np.random.default_rng(seed)
    g1 = sample_mu_cw(radius, r, n_samples, d)
    g2 = sample_mu_cw(radius, r, n_samples, d)
    L, ok = pair_L_batch(g1, g2, radius, d)
    q = np.where(ok, np.exp(-L), 0.0)
    mean = float(q.mean())
    se = float(q.std(ddof=1) / math.sqrt(n_samples))
    ess = float(q.sum() ** 2 / (q ** 2).sum()) if q.any() else 0.0
    flags = ("low-ess",) if ess < 100 else ()
    shift = tilt_geometry(radius, d).disconnecting_shift.value if d == 2 else 0.0
    return TiltedEstimate(mean, se, "importance-sampled", n_samples=n_samples, ess=ess,
                          log_shift=shift, seed=seed, flags=flags)


class ISLadder:
    """Coupled importance-sampling ladder over several radii.

    Pairs are sampled from mu_R x mu_R at the top radius R; their
    truncations at a smaller radius n are exactly mu_n x mu_n samples, so
    one sample set serves every radius and successive differences of
    ratio estimates have small variance.
    """

    def __init__(self, radii: Sequence[float], seed_radius: float, n_samples: int,
                 rng, d: int = 2, n_batches: int = 50):
        self.radii = sorted(radii)
        self.seed_radius = seed_radius
        self.d = d
        self.seed = int(rng.integers(2**31 - 1))
        r = np.random.default_rng(self.seed)
        top = self.radii[-1]
        g1 = sample_mu_cw(top, r, n_samples, d)
        g2 = sample_mu_cw(top, r, n_samples, d)
        self.n = n_samples
        self.Q = np.zeros((len(self.radii), n_samples))
        for k, rad in enumerate(self.radii):
            t1 = [p[: first_exit_index(p, rad) + 1] for p in g1]
            t2 = [p[: first_exit_index(p, rad) + 1] for p in g2]
            L, ok = pair_L_batch(t1, t2, rad, d)
            self.Q[k] = np.where(ok, np.exp(-L), 0.0)
        cache: dict = {}

        def cut(p):
            return p[: first_exit_index(p, seed_radius) + 1]

        self.prefix = [(cut(a), cut(b)) for a, b in zip(g1, g2)]
        self.batch = np.arange(n_samples) * n_batches // n_samples
        self.n_batches = n_batches

    def indicator(self, pair: PathPair, symmetrize: bool = True) -> np.ndarray:
        orb = pair_orbit(pair) if symmetrize else {pair}
        keys = {(p.eta1, p.eta2) for p in orb}
        return np.array([k in keys for k in self.prefix], dtype=float) / len(keys)

    def p_hat(self, pair: PathPair, symmetrize: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(estimates, jackknife covariance) of p_n(pair) over the ladder."""
        ind = self.indicator(pair, symmetrize)
        B = self.n_batches
        num = np.array([np.bincount(self.batch, self.Q[k] * ind, B) for k in range(len(self.radii))])
        den = np.array([np.bincount(self.batch, self.Q[k], B) for k in range(len(self.radii))])
        est = num.sum(1) / den.sum(1)
        jk = np.array([(num.sum(1) - num[:, b]) / (den.sum(1) - den[:, b]) for b in range(B)])
        dev = jk - jk.mean(0)
        cov = (B - 1) / B * dev.T @ dev
        return est, cov

    def lam(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.Q.mean(1)
        se = self.Q.std(1, ddof=1) / math.sqrt(self.n)
        return m, se


# ---------------------------------------------------------------------------
# Estimates of p(pair) and the convergence fit


def p_hat(pair: PathPair, radius: float, k_radius: float, backend: str = "exact",
          n_samples: int = 100000, rng=None) -> Estimate:
    """p_n(pair) = lambda_n[A_n(pair)] / lambda_n[A_n] for pair in A_k."""
    if backend == "exact":
        lad = exact_ladder(radius, (k_radius,), pair.d)
        return Estimate(lad.p_hat(pair, k_radius), 0.0, 0)
    rng = rng or np.random.default_rng()
    lad = ISLadder([radius], k_radius, n_samples, rng, pair.d)
    est, cov = lad.p_hat(pair)
    return Estimate(float(est[0]), float(math.sqrt(cov[0, 0])), n_samples, lad.seed)


@dataclass(frozen=True)
class ConvergenceFit:
    alpha: float
    alpha_ci: tuple[float, float]
    p_limit: float
    differences: np.ndarray
    diff_se: np.ndarray
    n_mid: np.ndarray
    fit: LinearFit | None
    flags: tuple = ()


def convergence_fit(radii: Sequence[float], p: Sequence[float], cov=None) -> ConvergenceFit:
    """Fit log|p_{i+1} - p_i| = c - alpha n_mid by OLS with HC3 errors.

    n = log radius. ``cov`` is the covariance of the p estimates (None for
    exact values); it only feeds the noise flag. The limit is extrapolated
    by summing the fitted geometric tail.
    """
    radii = np.asarray(radii, float)
    p = np.asarray(p, float)
    if len(radii) < 4:
        raise ValueError("need at least 4 scales")
    n = np.log(radii)
    dn = np.diff(n)
    diff = np.diff(p)
    n_mid = 0.5 * (n[1:] + n[:-1])
    if cov is None:
        se = np.zeros(len(diff))
    else:
        cov = np.asarray(cov)
        D = np.zeros((len(diff), len(p)))
        for i in range(len(diff)):
            D[i, i], D[i, i + 1] = -1, 1
        se = np.sqrt(np.maximum(np.diag(D @ cov @ D.T), 0.0))
    flags = []
    if np.any(np.abs(diff) < 2 * se):
        flags.append("noise-dominated")
    if len(set(np.sign(diff[np.abs(diff) > 0]))) > 1:
        flags.append("non-monotone")
    y = np.log(np.maximum(np.abs(diff), 1e-300))
    fit = ols_fit(n_mid, y, robust=True)
    alpha = -fit.slope
    ci = (-fit.slope_ci[1], -fit.slope_ci[0])
    rho = math.exp(-alpha * dn[-1]) if alpha > 0 else 0.0
    tail = diff[-1] * rho / (1 - rho) if 0 < rho < 1 else 0.0
    if not ci[0] > 0:
        flags.append("inconclusive")
    return ConvergenceFit(alpha, ci, float(p[-1] + tail), diff, se, n_mid, fit, tuple(flags))


# ---------------------------------------------------------------------------
# Separation


def sep_mass_ratio(initial: Sequence[PathPair], radius: float, n_samples: int, rng,
                   k_radius: float) -> list[Estimate]:
    """lambda^Sep_n(pair) / lambda_n(pair) for each initial pair in A_k.

    Exact when the radius is within the exact pair guard; otherwise both
    paths are extended independently with the exact continuation kernel
    and the ratio E[Q 1_Sep] / E[Q] is estimated.
    """
    from .lerw import extend
    from .stats import ratio_estimate

    out = []
    if radius <= EXACT_PAIR_RADIUS[initial[0].d] + 1e-12:
        lad = exact_ladder(radius, (k_radius,), initial[0].d)
        for pr in initial:
            lam = lad.lam_given(pr, k_radius)
            out.append(Estimate(lad.lam_sep_given(pr, k_radius) / lam, 0.0, 0))
        return out
    for pr in initial:
        seed = int(rng.integers(2**31 - 1))
        r = np.random.default_rng(seed)
        e1 = extend(pr.eta1, radius, r, n_samples)
        e2 = extend(pr.eta2, radius, r, n_samples)
        L, ok = pair_L_batch(e1, e2, radius, pr.d)
        q = np.where(ok, np.exp(-L), 0.0)
        sep = np.array([k and in_sep(PathPair(a, b), radius) for a, b, k in zip(e1, e2, ok)])
        est = ratio_estimate(q * sep, q, seed)
        out.append(est)
    return out


# ---------------------------------------------------------------------------
# Sub-multiplicativity of Q


def k_shell_check(radius_n: float, radius_m: float, d: int = 2) -> dict:
    """Empirical constants in c1 1{K} Q_n Qbar_{n+1,m} <= Q_m <= c2 Q_n Qbar_{n+1,m}.

    Over all pairs of A_m: Q_n uses the truncations at n, Qbar the loops
    of the punctured m-ball meeting both tail pieces (from the last visit
    to C_{n+1}, the ball of radius e*r_n), all under the all-loops
    convention. K requires the tails to stay outside C_{n-1} and the
    initial parts inside C_{n+2}; those members give c1.
    """
    r_next = radius_n * math.e
    if r_next >= radius_m:
        r_next = 0.5 * (radius_n + radius_m)
    pairs = [p for p in enumerate_pairs(radius_m, d)]
    geo_m = tilt_geometry(radius_m, d)
    ratios, kflags = [], []
    for pr in pairs:
        qm = math.exp(-geo_m.L_all(pr.eta1, pr.eta2))
        tn = pr.truncate(radius_n)
        qn = math.exp(-tilt_geometry(radius_n, d).L_all(tn.eta1, tn.eta2))

        def tail(eta):
            r2 = r_next * r_next
            last = max(i for i, x in enumerate(eta) if norm2(x) < r2)
            return eta[last:]

        t1, t2 = tail(pr.eta1), tail(pr.eta2)
        qbar = math.exp(-geo_m.L_all(t1, t2))
        ratios.append(qm / (qn * qbar))
        lo2 = (radius_n / math.e) ** 2
        kflags.append(all(norm2(x) >= lo2 for x in t1 + t2))
    ratios = np.array(ratios)
    kflags = np.array(kflags)
    return {"n_pairs": len(pairs), "c2": float(ratios.max()),
            "c1": float(ratios[kflags].min()) if kflags.any() else float("nan"),
            "n_K": int(kflags.sum())}
