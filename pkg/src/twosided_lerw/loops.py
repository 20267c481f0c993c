"""Random walk loop measure, loop soups and loop-mass computations.

The unrooted loop measure gives a loop of 2n steps the mass
(number of distinct rooted representatives) / (2n (2d)^{2n}). The mass of
loops in a finite A that meet B equals log F_B(A) = log det G_A[B].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg, stats as sps

from . import _kernels
from .lattice import (
    Domain,
    Site,
    as_radius,
    ball,
    ball_sites,
    disconnects,
    neighbors,
    norm2,
    origin,
)
from .potential import (
    SetPotential,
    green_domain,
    green_domain_columns,
    kernel_many,
    punctured_green,
)
from .stats import Estimate

ENUM_MAX_SITES = 16
ENUM_MAX_LEN = 14


@dataclass(frozen=True)
class LoopMass:
    """A loop-measure total with provenance.

    ``provenance`` is 'exact', 'enumerated' (with ``tail_bound`` on the
    omitted lengths) or 'monte-carlo' (with ``stderr``).
    """

    value: float
    provenance: str
    tail_bound: float = 0.0
    stderr: float | None = None
    n_samples: int | None = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class UnrootedLoop:
    """Cyclic-shift class of a rooted loop.

    ``rep`` is the canonical rooted representative (without the repeated
    final site); ``multiplicity`` counts the distinct rooted loops in the
    class; ``mass`` = multiplicity / (2n (2d)^{2n}).
    """

    rep: tuple
    multiplicity: int
    mass: Fraction

    @property
    def length(self) -> int:
        return len(self.rep)

    @property
    def sites(self) -> frozenset:
        return frozenset(self.rep)


def rooted_weight(n_steps: int, d: int) -> Fraction:
    """Rooted loop weight 1 / (2n (2d)^{2n}) for a loop of 2n steps."""
    if n_steps < 2 or n_steps % 2:
        raise ValueError("loops have an even number of steps, at least 2")
    return Fraction(1, n_steps * (2 * d) ** n_steps)


def canonical_rotation(rep: Sequence[Site]) -> tuple:
    rep = tuple(rep)
    return min(rep[i:] + rep[:i] for i in range(len(rep)))


def unrooted(rep: Sequence[Site]) -> UnrootedLoop:
    """Class of the rooted loop ``rep`` (final return site omitted)."""
    rep = tuple(tuple(x) for x in rep)
    d = len(rep[0])
    rots = {rep[i:] + rep[:i] for i in range(len(rep))}
    k = len(rots)
    return UnrootedLoop(min(rots), k, k * rooted_weight(len(rep), d))


# ---------------------------------------------------------------------------
# Green products


def _as_domain(A) -> Domain:
    return A if isinstance(A, Domain) else Domain.from_sites(A)


def f_mass(B: Iterable[Site], A, order: Sequence[Site] | None = None) -> LoopMass:
    """log F_B(A) = sum_k log G_{A_k}(y_k, y_k), A_k = A minus {y_1..y_{k-1}}.

    Evaluated literally: each step removes y_k from the current Green
    matrix by a rank-one update. ``order`` fixes the enumeration of B.
    """
    A = _as_domain(A)
    ys = [tuple(y) for y in (order if order is not None else B)]
    ys = [y for y in dict.fromkeys(ys) if y in A.sites]
    if not ys:
        return LoopMass(0.0, "exact")
    G = green_domain(A)
    idx = [A.index[y] for y in ys]
    M = G.matrix[np.ix_(idx, idx)].copy()
    total = 0.0
    for k in range(len(idx)):
        piv = M[k, k]
        if piv <= 0:
            raise ArithmeticError("nonpositive Green diagonal")
        total += math.log(piv)
        M[k + 1:, k + 1:] -= np.outer(M[k + 1:, k], M[k, k + 1:]) / piv
    return LoopMass(total, "exact")


def log_det_green(G: np.ndarray) -> float:
    sign, ld = np.linalg.slogdet(G)
    if sign <= 0:
        raise ArithmeticError("Green matrix is not positive definite")
    return float(ld)


def pair_mass(g1: Iterable[Site], g2: Iterable[Site], A) -> LoopMass:
    """Mass of loops in A meeting both sets, by inclusion-exclusion."""
    A = _as_domain(A)
    s1 = {tuple(x) for x in g1} & A.sites
    s2 = {tuple(x) for x in g2} & A.sites
    if not s1 or not s2:
        return LoopMass(0.0, "exact")
    v = f_mass(s1, A).value + f_mass(s2, A).value - f_mass(s1 | s2, A).value
    return LoopMass(max(v, 0.0) if abs(v) < 1e-13 else v, "exact")


# ---------------------------------------------------------------------------
# Enumeration


def killed_spectral_radius(A) -> float:
    A = _as_domain(A)
    if len(A) == 0:
        return 0.0
    P = A.transition_matrix().toarray()
    return float(np.max(np.abs(np.linalg.eigvalsh(P))))


def loop_tail_bound(A, max_len: int) -> float:
    """Bound on the rooted mass of loops longer than ``max_len`` in A.

    With rho the spectral radius of the killed operator, tr P^{2k} <= |A| rho^{2k},
    so the omitted mass is at most |A| rho^{L+2} / ((L+2)(1 - rho^2)), L even.
    """
    A = _as_domain(A)
    rho = killed_spectral_radius(A)
    L = max_len - (max_len % 2) + 2
    if rho >= 1:
        return math.inf
    return len(A) * rho ** L / (L * (1 - rho * rho))


def _mass_by_length(sites: list, d: int, max_len: int) -> Fraction:
    """Exact mass of all loops inside ``sites`` with at most ``max_len`` steps.

    A loop is rooted at its smallest site s (in the order of ``sites``);
    the mass of its class equals the sum, over rooted versions at s, of
    1/(k_s (2d)^len) with k_s the number of visits to s. Walk counts are
    propagated by length with the visit count as extra state.
    """
    m = len(sites)
    idx = {x: i for i, x in enumerate(sites)}
    adj = np.zeros((m, m), dtype=np.int64)
    for x, i in idx.items():
        for y in neighbors(x):
            j = idx.get(y)
            if j is not None:
                adj[i, j] = 1
    total = Fraction(0)
    kmax = max_len // 2 + 1
    for s in range(m):
        sub = adj[s:, s:]
        cnt = np.zeros((m - s, kmax + 1), dtype=object)
        cnt[:, :] = 0
        cnt[0, 0] = 1
        for ell in range(1, max_len + 1):
            new = sub.T.astype(object).dot(cnt)
            ret = new[0].copy()
            new[0, 1:] = ret[:-1]
            new[0, 0] = 0
            cnt = new
            if ell % 2 == 0:
                num = sum((Fraction(int(cnt[0, k]), k) for k in range(1, kmax + 1) if cnt[0, k]),
                          Fraction(0))
                total += num / (2 * d) ** ell
    return total


def enumerated_loop_mass(B: Iterable[Site], A, max_len: int = ENUM_MAX_LEN) -> LoopMass:
    """Mass of loops in A of length <= max_len meeting B, as an exact rational
    (converted to float) together with the tail bound for longer loops."""
    A = _as_domain(A)
    B = {tuple(b) for b in B} & A.sites
    if len(A) > ENUM_MAX_SITES and max_len > ENUM_MAX_LEN:
        raise ValueError("enumeration guard exceeded")
    full = _mass_by_length(A.ordered, A.d, max_len)
    rest = _mass_by_length(sorted(A.sites - B), A.d, max_len) if A.sites - B else Fraction(0)
    val = full - rest
    return LoopMass(float(val), "enumerated", loop_tail_bound(A, max_len),
                    extra={"exact": val, "max_len": max_len})


def enumerate_loops(A, max_len: int = ENUM_MAX_LEN) -> list[UnrootedLoop]:
    """All unrooted loops in A with at most ``max_len`` steps, exact masses.

    Guard: |A| <= 16 or max_len <= 14.
    """
    A = _as_domain(A)
    if len(A) > ENUM_MAX_SITES and max_len > ENUM_MAX_LEN:
        raise ValueError("enumeration guard exceeded (|A| <= 16 or max_len <= 14)")
    order = A.ordered
    rank = {x: i for i, x in enumerate(order)}
    classes: dict = {}
    for s in order:
        rs = rank[s]
        path = [s]

        def rec():
            x = path[-1]
            for y in neighbors(x):
                ry = rank.get(y)
                if ry is None or ry < rs:
                    continue
                if y == s:
                    rep = tuple(path)
                    if len(rep) >= 2:
                        key = canonical_rotation(rep)
                        if key not in classes:
                            classes[key] = unrooted(rep)
                if len(path) < max_len:
                    path.append(y)
                    rec()
                    path.pop()

        rec()
    return sorted(classes.values(), key=lambda l: (l.length, l.rep))


def loop_site_sets(A, max_len: int) -> set:
    """Site sets of all loops in A with at most ``max_len`` steps (as bitmasks
    over ``A.ordered``), found by propagating (current site, visited set)."""
    A = _as_domain(A)
    order = A.ordered
    idx = A.index
    nb = [[idx[y] for y in neighbors(x) if y in idx] for x in order]
    out = set()
    for s in range(len(order)):
        frontier = {(s, 1 << s)}
        for ell in range(1, max_len + 1):
            nxt = set()
            for cur, mask in frontier:
                for y in nb[cur]:
                    if y < s:
                        continue
                    m2 = mask | (1 << y)
                    nxt.add((y, m2))
            frontier = nxt
            if ell % 2 == 0:
                out.update(mask for cur, mask in frontier if cur == s)
    return out


def mask_sites(mask: int, order: Sequence[Site]) -> frozenset:
    return frozenset(order[i] for i in range(len(order)) if mask >> i & 1)


# ---------------------------------------------------------------------------
# Loop soups


def _neighbor_table(order: Sequence[Site], allowed=None) -> np.ndarray:
    idx = {x: i for i, x in enumerate(order)}
    d = len(order[0])
    nb = -np.ones((len(order), 2 * d), dtype=np.int64)
    for i, x in enumerate(order):
        for k, y in enumerate(neighbors(x)):
            j = idx.get(y)
            if j is not None and (allowed is None or allowed[j]):
                nb[i, k] = j
    return nb


def _cycle_groups(k: int, rng) -> list[int]:
    """Cycle lengths of a uniform random permutation of k elements."""
    perm = rng.permutation(k)
    seen = np.zeros(k, bool)
    sizes = []
    for i in range(k):
        if not seen[i]:
            c = 0
            j = i
            while not seen[j]:
                seen[j] = True
                j = perm[j]
                c += 1
            sizes.append(c)
    return sizes


def _split_excursions(traj: Sequence[int], root: int) -> list[list[int]]:
    exc, cur = [], []
    for v in traj:
        cur.append(v)
        if v == root:
            exc.append(cur)
            cur = []
    return exc


def sample_loop_soup(A, rng, order: Sequence[Site] | None = None,
                     step_cap: int = 10**7) -> list[UnrootedLoop]:
    """One realisation of the intensity-one loop soup in A.

    Sites y_1, y_2, ... are taken in ``order`` (default lexicographic).
    The walk from y_j killed on leaving A_j = A minus {y_1..y_{j-1}} and
    stopped at its last visit to y_j is a geometric number of excursions;
    grouping them by the cycles of a uniform random permutation yields
    the loops rooted at y_j, with Poisson counts of the right intensity.
    """
    A = _as_domain(A)
    order = [tuple(x) for x in (order or A.ordered)]
    nb = _neighbor_table(order)
    loops = []
    for j in range(len(order)):
        flat, offs = _kernels.site_excursions(nb, j, 1, int(rng.integers(2**31 - 1)), step_cap)
        traj = flat[offs[0]:offs[1]]
        if len(traj) == 0:
            continue
        exc = _split_excursions(traj, j)
        pos = 0
        for size in _cycle_groups(len(exc), rng):
            body = [j] + [v for e in exc[pos:pos + size] for v in e][:-1]
            pos += size
            loops.append(unrooted([order[v] for v in body]))
    return loops


def soup_no_hit(B: Iterable[Site], A, n_soups: int, rng,
                order: Sequence[Site] | None = None) -> Estimate:
    """Monte Carlo P{no soup loop in A meets B} (same construction as
    ``sample_loop_soup``; grouping into loops does not affect the event)."""
    A = _as_domain(A)
    order = [tuple(x) for x in (order or A.ordered)]
    Bs = {tuple(b) for b in B}
    nb = _neighbor_table(order)
    in_B = np.array([x in Bs for x in order])
    seed = int(rng.integers(2**31 - 1))
    hit = _kernels.soup_hit_flags(nb, in_B, n_soups, seed, 10**7)
    p = 1.0 - hit.mean()
    return Estimate(float(p), float(math.sqrt(p * (1 - p) / n_soups)), n_soups, seed)


def soup_mass(B: Iterable[Site], A, n_soups: int, rng) -> LoopMass:
    """-log P{no loop meets B} with delta-method standard error."""
    est = soup_no_hit(B, A, n_soups, rng)
    p = est.mean
    if p <= 0:
        return LoopMass(math.inf, "monte-carlo", stderr=math.inf, n_samples=n_soups)
    se = math.sqrt((1 - p) / (n_soups * p))
    return LoopMass(-math.log(p), "monte-carlo", stderr=se, n_samples=n_soups,
                    extra={"seed": est.seed})


# ---------------------------------------------------------------------------
# Loops of the punctured lattice via compressed excursions


class LoopSampler:
    """Loops of Z^d minus 0 rooted at the sites of a punctured ball.

    Sites x_1, x_2, ... of the punctured ball of radius ``inner`` are
    ordered by distance to 0. The loops rooted at x_j live in
    Z^d minus {0, x_1, ..., x_{j-1}} and are sampled as a logarithmic
    number of conditioned excursions from x_j. Excursions are simulated on
    the ball of radius ``outer``; each trip outside is one jump to the
    exact re-entry site (or to the killed state when the walk never
    returns), and the trip is flagged. The total mass of loops rooted at
    x_j is log G_j(x_j, x_j) = -log(1 - q_j), q_j the return probability,
    obtained by a linear solve on the compressed chain.
    """

    def __init__(self, inner: float, outer: float, d: int = 2, punctured: bool = True):
        if outer <= inner:
            raise ValueError("outer radius must exceed the inner radius")
        if not punctured and d == 2:
            raise ValueError("loops through 0 have infinite mass in d=2")
        self.inner, self.outer, self.d = inner, outer, d
        self.punctured = punctured
        K = sorted(ball_sites(outer, d))
        self.sites = K
        self.index = {x: i for i, x in enumerate(K)}
        lo = 0 if punctured else -1
        inner_sites = [x for x in K if lo < norm2(x) < inner * inner]
        self.roots = sorted(inner_sites, key=lambda x: (norm2(x), x))
        Kset = set(K)
        W = sorted({y for x in K for y in neighbors(x) if y not in Kset})
        widx = {w: j for j, w in enumerate(W)}
        m = len(K)
        Nk = np.zeros((m, m))
        Nw = np.zeros((m, len(W)))
        for i, x in enumerate(K):
            for y in neighbors(x):
                if y in self.index:
                    Nk[i, self.index[y]] += 1
                else:
                    Nw[i, widx[y]] += 1
        R = SetPotential(K, d).hitting(np.array(W))
        self.direct = Nk / (2 * d)
        self.via_out = Nw @ R / (2 * d)
        self.nb = _neighbor_table(K)
        self.inner_idx = np.array([self.index[x] for x in K if norm2(x) < inner * inner])

    def chain(self, j: int):
        """Compressed chain for the loops rooted at roots[j]."""
        m = len(self.sites)
        dead = np.zeros(m, bool)
        if self.punctured:
            dead[self.index[origin(self.d)]] = True
        for x in self.roots[:j]:
            dead[self.index[x]] = True
        T = np.zeros((m, 2 * m + 1))
        T[:, :m] = self.direct
        T[:, m:2 * m] = self.via_out
        T[:, :m][:, dead] = 0.0
        T[:, m:2 * m][:, dead] = 0.0
        T[:, 2 * m] = 1.0 - T[:, :2 * m].sum(axis=1)
        T[:, 2 * m] = np.maximum(T[:, 2 * m], 0.0)
        T[dead] = 0.0
        T[dead, 2 * m] = 1.0
        start = self.index[self.roots[j]]
        # return probability: h(v) = P_v(hit start before death)
        P = T[:, :m] + T[:, m:2 * m]
        alive = ~dead
        alive_ns = alive.copy()
        alive_ns[start] = False
        ii = np.flatnonzero(alive_ns)
        h = np.zeros(m)
        h[start] = 1.0
        Aii = np.eye(len(ii)) - P[np.ix_(ii, ii)]
        h[ii] = linalg.solve(Aii, P[ii, start])
        q = float(P[start] @ h)
        col_map = np.concatenate([np.arange(m), np.arange(m), [m]])
        col_tag = np.concatenate([np.zeros(m), np.ones(m), [0]])
        return T, col_map, col_tag, start, q, dead

    def mass(self, predicate: Callable | None, n_loops: int, rng,
             crossing_only: bool = True) -> LoopMass:
        """Mass of loops satisfying ``predicate(site_indices, crossed)``.

        With ``crossing_only`` the predicate is only evaluated on loops
        that visit the outside of the outer ball (others count as no).
        """
        total, var = 0.0, 0.0
        per_root = []
        for j in range(len(self.roots)):
            T, col_map, col_tag, start, q, dead = self.chain(j)
            if q <= 0:
                per_root.append((self.roots[j], q, 0.0))
                continue
            lg = -math.log1p(-q)
            ks = sps.logser.rvs(q, size=n_loops, random_state=rng)
            indptr, indices, cum, tags = _kernels.csr_with_tags(T[:len(self.sites)], col_map, col_tag)
            flat, offs, flags, attempts, capped = _kernels.tagged_excursions(
                indptr, indices, cum, tags, start, len(self.sites), int(ks.sum()),
                int(rng.integers(2**31 - 1)), 10**7)
            if capped:
                raise RuntimeError("excursion step cap reached")
            hits = np.zeros(n_loops)
            pos = 0
            for t, k in enumerate(ks):
                crossed = bool(flags[pos:pos + k].any())
                if crossed or not crossing_only:
                    if predicate is None:
                        hits[t] = crossed
                    else:
                        body = np.concatenate([[start], flat[offs[pos]:offs[pos + k]]])
                        hits[t] = bool(predicate(body, crossed))
                pos += k
            p = hits.mean()
            total += lg * p
            var += lg * lg * p * (1 - p) / n_loops
            per_root.append((self.roots[j], q, p))
        return LoopMass(total, "monte-carlo", stderr=math.sqrt(var), n_samples=n_loops,
                        extra={"per_root": per_root})

    def disconnect_predicate(self, radius: float):
        """Loop sites separate every site of C_inner from the complement of
        the ball of ``radius`` (flood fill inside that ball)."""
        r2 = radius * radius
        allowed = np.array([norm2(x) < r2 for x in self.sites])
        nb = _neighbor_table(self.sites, allowed)
        src = self.inner_idx

        def pred(body, crossed):
            blocked = np.zeros(len(self.sites), bool)
            blocked[body] = True
            return not _kernels.flood_escapes(nb, blocked, src)

        return pred


def _radius_of(n) -> float:
    return as_radius(n) if not isinstance(n, (int, float)) else math.exp(n)


def crossing_mass_exact(n, r: float, d: int = 3, punctured: bool = False) -> LoopMass:
    """Mass of loops meeting C_n and the complement of C_{n+r}:
    log det G[C_n] - log det G_{C_{n+r}}[C_n], in Z^d, or in Z^d minus 0
    (all sets punctured) when ``punctured``."""
    if d == 2 and not punctured:
        raise ValueError("loops through 0 have infinite mass in d=2")
    a = _radius_of(n)
    R = a * math.exp(r)
    keep = (lambda x: any(x)) if punctured else (lambda x: True)
    inner = [x for x in ball_sites(a, d) if keep(x)]
    if not inner:
        return LoopMass(0.0, "exact")
    X = np.array(inner)
    if punctured:
        G_inf = punctured_green(X, X, d)
    else:
        G_inf = kernel_many(X[:, None, :] - X[None, :, :], d)
    D = Domain.from_sites([x for x in ball_sites(R, d) if keep(x)], d)
    cols = green_domain_columns(D, inner)
    ii = [D.index[x] for x in inner]
    G_fin = cols[ii, :]
    G_fin = 0.5 * (G_fin + G_fin.T)
    v = log_det_green(G_inf) - log_det_green(G_fin)
    return LoopMass(v, "exact", extra={"inner_radius": a, "outer_radius": R})


def crossing_mass(n, r: float, d: int, n_loops: int = 20000, rng=None,
                  method: str = "auto", punctured: bool | None = None) -> LoopMass:
    """Mass of loops meeting C_n and Z^d minus C_{n+r}.

    Loops live in Z^3 for d=3 and in Z^2 minus 0 for d=2 (through 0 the
    d=2 mass is infinite), unless ``punctured`` says otherwise. d=3
    defaults to the exact determinant formula; 'mc' uses loop sampling.
    ``extra['soup_probability']`` = 1 - exp(-mass) is the probability that
    the soup contains such a loop.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if punctured is None:
        punctured = d == 2
    a = _radius_of(n)
    if method == "auto":
        method = "exact" if d == 3 else "mc"
    if method == "exact":
        lm = crossing_mass_exact(n, r, d, punctured)
    else:
        rng = rng or np.random.default_rng()
        lm = LoopSampler(a, a * math.exp(r), d, punctured).mass(None, n_loops, rng)
    lm.extra["soup_probability"] = -math.expm1(-lm.value)
    return lm


def nondisconnecting_crossing_mass(n, r: float, n_loops: int = 20000, rng=None) -> LoopMass:
    """d=2: mass of loops in Z^2 minus 0 meeting C_n and Z^2 minus C_{n+r}
    that do not disconnect C_n from the boundary of C_{n+r}."""
    if r <= 0:
        raise ValueError("r must be positive")
    a = _radius_of(n)
    R = a * math.exp(r)
    if R - a < 1:
        raise ValueError("window too small")
    rng = rng or np.random.default_rng()
    S = LoopSampler(a, R, 2)
    disc = S.disconnect_predicate(R)
    lm = S.mass(lambda body, crossed: not disc(body, crossed), n_loops, rng)
    lm.extra["soup_probability"] = -math.expm1(-lm.value)
    return lm


# ---------------------------------------------------------------------------
# Disconnecting loops


def _all_subset_logdets(P: np.ndarray) -> np.ndarray:
    """M(T) = -log det(I - P_T) for every subset T (bitmask index)."""
    m = P.shape[0]
    out = np.zeros(1 << m)
    masks = np.arange(1 << m)
    pop = np.array([bin(t).count("1") for t in masks])
    for k in range(1, m + 1):
        sel = masks[pop == k]
        idx = np.array([[i for i in range(m) if t >> i & 1] for t in sel])
        sub = P[idx[:, :, None], idx[:, None, :]]
        sign, ld = np.linalg.slogdet(np.eye(k)[None] - sub)
        out[sel] = -ld
    return out


def _mobius(f: np.ndarray, m: int) -> np.ndarray:
    """g(S) = sum_{T subset S} (-1)^{|S-T|} f(T)."""
    g = f.copy()
    for i in range(m):
        bit = 1 << i
        idx = np.arange(1 << m)
        hi = idx[(idx & bit) != 0]
        g[hi] -= g[hi ^ bit]
    return g


def exact_site_set_masses(A) -> tuple[list, np.ndarray]:
    """Mass of loops in A whose site set is exactly S, for every S.

    The mass of all loops inside T is -log det(I - P_T); Mobius inversion
    over subsets gives the masses by exact site set. Guard |A| <= 16.
    """
    A = _as_domain(A)
    if len(A) > ENUM_MAX_SITES:
        raise ValueError("subset inversion guard exceeded (|A| <= 16)")
    P = A.transition_matrix().toarray()
    return A.ordered, _mobius(_all_subset_logdets(P), len(A))


def disconnecting_mass(n, method: str = "auto", n_soups: int = 20000, rng=None,
                       confined: bool = True) -> LoopMass:
    """d=2 mass of loops that disconnect 0 from the boundary of C_n.

    ``confined=True``: loops inside the punctured ball, exact by
    site-set inversion when it has at most 16 sites, else soup frequency.
    ``confined=False``: loops of Z^2 minus 0 (not confined), by the
    compressed loop sampler (diagnostic only).
    """
    a = _radius_of(n)
    if not confined:
        rng = rng or np.random.default_rng()
        S = LoopSampler(a, a + 1e-9 + 1.0, 2)
        disc = S.disconnect_predicate(a)
        return S.mass(disc, n_soups, rng, crossing_only=False)
    A = Domain.from_sites([x for x in ball_sites(a, 2) if any(x)], 2)
    if method == "auto":
        method = "exact" if len(A) <= ENUM_MAX_SITES else "soup"
    if method == "exact":
        order, mass = exact_site_set_masses(A)
        total = 0.0
        for S in range(1, 1 << len(order)):
            if mass[S] != 0.0 and disconnects(mask_sites(S, order), radius=a, d=2):
                total += mass[S]
        return LoopMass(total, "exact")
    rng = rng or np.random.default_rng()
    none = 0
    for _ in range(n_soups):
        soup = sample_loop_soup(A, rng)
        if not any(disconnects(l.sites, radius=a, d=2) for l in soup):
            none += 1
    p = none / n_soups
    se = math.sqrt((1 - p) / (n_soups * p)) if p > 0 else math.inf
    return LoopMass(-math.log(p) if p > 0 else math.inf, "monte-carlo", stderr=se,
                    n_samples=n_soups)


def disconnecting_universality(radius: float, max_len: int = 14) -> dict:
    """Check that every enumerated disconnecting loop in the punctured ball
    meets every path of W_n. Returns counts and the number of exceptions."""
    from .lattice import enumerate_saws

    A = Domain.from_sites([x for x in ball_sites(radius, 2) if any(x)], 2)
    order = A.ordered
    masks = loop_site_sets(A, max_len)
    disc = [mk for mk in masks if disconnects(mask_sites(mk, order), radius=radius, d=2)]
    idx = A.index
    gam = []
    for p in enumerate_saws(radius, 2):
        mk = 0
        for x in p:
            i = idx.get(x)
            if i is not None:
                mk |= 1 << i
        gam.append(mk)
    gam = np.array(sorted(set(gam)), dtype=np.uint64)
    exceptions = 0
    for mk in disc:
        exceptions += int(np.count_nonzero((gam & np.uint64(mk)) == 0))
    return {"radius": radius, "n_loop_site_sets": len(masks),
            "n_disconnecting": len(disc), "n_path_site_sets": len(gam),
            "exceptions": exceptions}


# ---------------------------------------------------------------------------
# Shell masses


def shell_mass_profile(n: int, m: int, V: Domain | None = None) -> LoopMass:
    """K = mass of loops in Z^2 minus C_{n-1} meeting C_n and the boundary of V.

    Computed as log det G_D[X] - log det G_{V - C_{n-1}}[X] with
    D = Z^2 minus C_{n-1} and X = C_n minus C_{n-1}. The comparison
    target 1/m is stored in ``extra``.
    """
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    r_in, r_n = math.exp(n - 1), math.exp(n)
    if V is None:
        V = ball(d=2, radius=math.exp(n + m))
    big = ball_sites(math.exp(n + m), 2)
    if not set(big) <= V.sites:
        raise ValueError("V must contain C_{n+m}")
    if set(ball_sites(math.exp(n + m + 1), 2)) <= V.sites:
        raise ValueError("V must not contain C_{n+m+1}")
    hole = ball_sites(r_in, 2)
    X = [x for x in ball_sites(r_n, 2) if norm2(x) >= r_in * r_in]
    Xa = np.array(X)
    G_inf = SetPotential(hole, 2).green(Xa, Xa)
    D = V.minus(hole)
    cols = green_domain_columns(D, X)
    G_fin = cols[[D.index[x] for x in X], :]
    G_fin = 0.5 * (G_fin + G_fin.T)
    G_inf = 0.5 * (G_inf + G_inf.T)
    K = log_det_green(G_inf) - log_det_green(G_fin)
    return LoopMass(K, "exact", extra={"target": 1.0 / m, "n": n, "m": m,
                                       "scaled_error": abs(K - 1.0 / m) * m * m})


def annulus_loop_mass(n: int, A: Domain | None = None) -> LoopMass:
    """L_A: mass of loops in Z^2 minus 0 meeting C_n and the boundary of A
    (default A = C_{n+1}); compared with log n."""
    a = math.exp(n)
    if A is None:
        A = ball(d=2, radius=math.exp(n + 1))
    X = [x for x in ball_sites(a, 2) if any(x)]
    Xa = np.array(X)
    G_inf = punctured_green(Xa, Xa, 2)
    D = A.minus([origin(2)])
    cols = green_domain_columns(D, X)
    G_fin = cols[[D.index[x] for x in X], :]
    G_fin = 0.5 * (G_fin + G_fin.T)
    L = log_det_green(G_inf) - log_det_green(G_fin)
    return LoopMass(L, "exact", extra={"log_n": math.log(n) if n > 0 else -math.inf})
