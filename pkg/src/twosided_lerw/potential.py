"""Discrete potential theory for simple random walk on Z^2 and Z^3.

The planar potential kernel is built from the exact recurrence in high
precision arithmetic; the three-dimensional Green's function comes from
one-dimensional quadrature of a Bessel product. Quantities on the
complement of a finite set are obtained by linear algebra on that set
only, never by truncating the lattice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, linalg, special
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .lattice import Domain, Site, check_dim, neighbors, origin

# ---------------------------------------------------------------------------
# d = 2: potential kernel

TABLE_SIZE = 256


def _pk_octant_table(N: int) -> np.ndarray:
    """a(x, y) for 0 <= y <= x <= N via the exact recurrence.

    Values are carried as mpmath floats with enough bits to absorb the
    ~5.83^x growth of rounding errors in the outward recurrence.
    """
    import mpmath

    bits = int(2.6 * N) + 96
    with mpmath.workprec(bits):
        inv_pi = 1 / mpmath.pi
        diag = [mpmath.mpf(0)] * (N + 1)
        s = mpmath.mpf(0)
        for k in range(1, N + 1):
            s += mpmath.mpf(1) / (2 * k - 1)
            diag[k] = 4 * inv_pi * s
        rows: list[list] = []
        rows.append([mpmath.mpf(0)])
        rows.append([mpmath.mpf(1), diag[1]])
        for x in range(1, N):
            cur, prev = rows[x], rows[x - 1]
            nxt = [mpmath.mpf(0)] * (x + 2)
            for y in range(0, x):
                below = cur[y - 1] if y > 0 else cur[1]
                p = prev[y] if y <= x - 1 else None
                nxt[y] = 4 * cur[y] - p - cur[y + 1] - below
            nxt[x] = 2 * cur[x] - cur[x - 1]
            nxt[x + 1] = diag[x + 1]
            rows.append(nxt)
        table = np.zeros((N + 1, N + 1))
        for x in range(N + 1):
            for y in range(x + 1):
                table[x, y] = float(rows[x][y])
                table[y, x] = table[x, y]
    return table


@lru_cache(maxsize=None)
def potential_kernel_table(N: int = TABLE_SIZE) -> np.ndarray:
    return _pk_octant_table(N)


@lru_cache(maxsize=None)
def k0() -> float:
    """Constant k_0 in a(x) = (2/pi) log|x| + k_0 + o(1), fitted at |x| in [50, 200].

    The fit includes the cos(4 theta)/|x|^2 correction so that the
    intercept is not biased by the anisotropic term.
    """
    tab = potential_kernel_table()
    xs, ys = np.meshgrid(np.arange(tab.shape[0]), np.arange(tab.shape[0]), indexing="ij")
    r = np.hypot(xs, ys)
    mask = (r >= 50) & (r <= 200) & (ys <= xs)
    th = np.arctan2(ys[mask], xs[mask])
    resid = tab[mask] - (2 / np.pi) * np.log(r[mask])
    X = np.column_stack([np.ones(mask.sum()), np.cos(4 * th) / r[mask] ** 2])
    coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
    return float(coef[0])


@lru_cache(maxsize=None)
def _asymptotic_coefficient() -> float:
    tab = potential_kernel_table()
    xs, ys = np.meshgrid(np.arange(tab.shape[0]), np.arange(tab.shape[0]), indexing="ij")
    r = np.hypot(xs, ys)
    mask = (r >= 50) & (r <= 200) & (ys <= xs)
    th = np.arctan2(ys[mask], xs[mask])
    resid = tab[mask] - (2 / np.pi) * np.log(r[mask])
    X = np.column_stack([np.ones(mask.sum()), np.cos(4 * th) / r[mask] ** 2])
    coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
    return float(coef[1])


def potential_kernel_many(x: np.ndarray) -> np.ndarray:
    """Vectorised a(x) for an integer array of shape (..., 2)."""
    x = np.abs(np.asarray(x, dtype=np.int64))
    if x.shape[-1] != 2:
        raise ValueError("the potential kernel is two-dimensional")
    tab = potential_kernel_table()
    N = tab.shape[0] - 1
    u, v = x[..., 0], x[..., 1]
    out = np.empty(u.shape, dtype=float)
    inside = (u <= N) & (v <= N)
    out[inside] = tab[u[inside], v[inside]]
    if not np.all(inside):
        uo, vo = u[~inside].astype(float), v[~inside].astype(float)
        r = np.hypot(uo, vo)
        th = np.arctan2(vo, uo)
        out[~inside] = (2 / np.pi) * np.log(r) + k0() + _asymptotic_coefficient() * np.cos(4 * th) / r**2
    return out


def potential_kernel(x: Site) -> float:
    """a(x) for x in Z^2 (a(0) = 0, a(e1) = 1)."""
    if len(x) != 2:
        raise ValueError("potential_kernel is only defined for d=2; use green_infinite")
    return float(potential_kernel_many(np.array(x)[None, :])[0])


def potential_kernel_quad(x: Site) -> float:
    """Independent route: a(m, n) as a one-dimensional integral.

    a(m, n) = (2/pi) int_0^pi (1 - e^{-|m| s(t)} cos(n t)) / sinh s(t) dt with
    cosh s = 2 - cos t.
    """
    m, n = abs(int(x[0])), abs(int(x[1]))
    if m < n:
        m, n = n, m

    def f(t):
        s = np.arccosh(2 - np.cos(t))
        if s == 0:
            return float(m)
        return (1 - np.exp(-m * s) * np.cos(n * t)) / np.sinh(s)

    val, _ = integrate.quad(f, 0, np.pi, limit=400, epsabs=1e-13, epsrel=1e-13)
    return 2 * val / np.pi


# ---------------------------------------------------------------------------
# d = 3: Green's function


def _green3_integrand(t: float, x: tuple) -> float:
    return float(np.prod([special.ive(xi, t / 3.0) for xi in x]))


@lru_cache(maxsize=200000)
def _green3_key(key: tuple, tol: float) -> float:
    f = lambda t: _green3_integrand(t, key)
    g = lambda u: 2.0 * _green3_integrand(1.0 / (u * u), key) / u**3 if u > 0 else 0.0
    r = math.sqrt(sum(c * c for c in key))
    pts = [1.0 / (r + 1.0)] if r > 2 else None
    a, ea = integrate.quad(f, 0.0, 1.0, epsabs=tol / 10, epsrel=tol, limit=200)
    b, eb = integrate.quad(g, 0.0, 1.0, epsabs=tol / 10, epsrel=tol, limit=400, points=pts)
    err = ea + eb
    if err > 100 * tol * max(1.0, a + b):
        raise RuntimeError(f"quadrature for G{key} reached only {err:.2e}")
    return a + b


def green_infinite(x: Site, tol: float = 1e-10) -> float:
    """G(x) = expected number of visits to x of simple random walk from 0 in Z^3."""
    if len(x) != 3:
        raise ValueError("green_infinite is three-dimensional; use potential_kernel for d=2")
    key = tuple(sorted(abs(int(c)) for c in x))
    return _green3_key(key, tol)


def green_many(x: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.int64))
    flat = np.sort(x.reshape(-1, 3), axis=1)
    keys, inv = np.unique(flat, axis=0, return_inverse=True)
    vals = np.array([_green3_key(tuple(int(c) for c in k), tol) for k in keys])
    return vals[inv.ravel()].reshape(x.shape[:-1])


def watson_green_origin() -> float:
    """Closed form G(0) = sqrt(6)/(32 pi^3) Gamma(1/24)Gamma(5/24)Gamma(7/24)Gamma(11/24)."""
    g = special.gamma
    return math.sqrt(6) / (32 * math.pi**3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24)


def G0(d: int) -> float:
    """G_0 in the LERW weight: 1 for d=2, G(0) for d=3."""
    return 1.0 if d == 2 else green_infinite((0, 0, 0))


def kernel_many(diffs: np.ndarray, d: int) -> np.ndarray:
    """a(x) for d=2, G(x) for d=3, on an array of differences."""
    return potential_kernel_many(diffs) if d == 2 else green_many(diffs)


def punctured_green(X: np.ndarray, Y: np.ndarray, d: int) -> np.ndarray:
    """G_{Z^d minus 0}(x, y): a(x) + a(y) - a(x - y) for d=2,
    G(x - y) - G(x) G(y) / G(0) for d=3."""
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    diff = kernel_many(X[:, None, :] - Y[None, :, :], d)
    ax = kernel_many(X, d)
    ay = kernel_many(Y, d)
    if d == 2:
        return ax[:, None] + ay[None, :] - diff
    return diff - ax[:, None] * ay[None, :] / G0(3)


# ---------------------------------------------------------------------------
# Finite domains


@dataclass
class FiniteGreen:
    """G_A as a dense matrix indexed by the sites of A."""

    domain: Domain
    matrix: np.ndarray

    def __call__(self, x: Site, y: Site) -> float:
        idx = self.domain.index
        i, j = idx.get(tuple(x)), idx.get(tuple(y))
        if i is None or j is None:
            return 0.0
        return float(self.matrix[i, j])

    def sub(self, B: Iterable[Site]) -> np.ndarray:
        idx = self.domain.index
        ii = [idx[tuple(b)] for b in B if tuple(b) in idx]
        return self.matrix[np.ix_(ii, ii)]


def green_domain(A: Domain, dense_limit: int = 2000) -> FiniteGreen:
    """Solve (I - P_A) G = I for the walk killed on leaving A."""
    if len(A) == 0:
        raise ValueError("empty domain")
    P = A.transition_matrix()
    n = len(A)
    M = sparse.identity(n, format="csc") - P.tocsc()
    if n <= dense_limit:
        G = linalg.inv(M.toarray())
    else:
        G = splinalg.splu(M).solve(np.eye(n))
    G = 0.5 * (G + G.T)
    return FiniteGreen(A, G)


def green_domain_columns(A: Domain, cols: Sequence[Site]) -> np.ndarray:
    """Columns G_A(., y) for y in ``cols`` via a sparse factorisation."""
    P = A.transition_matrix()
    n = len(A)
    M = (sparse.identity(n, format="csc") - P.tocsc()).tocsc()
    lu = splinalg.splu(M)
    rhs = np.zeros((n, len(cols)))
    for k, y in enumerate(cols):
        rhs[A.index[tuple(y)], k] = 1.0
    return lu.solve(rhs)


def poisson_kernel(A: Domain, x: Site, z: Site, G: FiniteGreen | None = None) -> float:
    """H_A(x, z): probability that the walk from x first leaves A at z."""
    z = tuple(z)
    if z not in A.boundary:
        raise ValueError("z must lie on the outer boundary of A")
    x = tuple(x)
    if x not in A.sites:
        return 1.0 if x == z else 0.0
    G = G or green_domain(A)
    return sum(G(x, y) for y in neighbors(z) if y in A.sites) / (2 * A.d)


def boundary_poisson(A: Domain, w: Site, z: Site, G: FiniteGreen | None = None) -> float:
    """H_{dA}(w, z) = (1/2d) sum over neighbours x in A of w of H_A(x, z)."""
    w, z = tuple(w), tuple(z)
    if w not in A.boundary or z not in A.boundary:
        raise ValueError("w and z must lie on the outer boundary of A")
    if w == z:
        raise ValueError("w and z must be distinct")
    G = G or green_domain(A)
    return sum(poisson_kernel(A, x, z, G) for x in neighbors(w) if x in A.sites) / (2 * A.d)


# ---------------------------------------------------------------------------
# Harmonic analysis off a finite set in the whole lattice


class SetPotential:
    """Potential theory of Z^d minus a finite set B.

    d=2: a_B(x) = a(x) - E^x[a(S_tau)] = sum_b c_b a(x - b) + k with
    sum_b c_b = 1 and a_B = 0 on B, so Es_B(b) = c_b and cap(B) = -k.
    d=3: g_B(x) = P^x{never hit B} = 1 - sum_b G(x - b) w_b with
    G_BB w = 1, so Es_B(b) = w_b and cap(B) = sum_b w_b.
    """

    def __init__(self, B: Iterable[Site], d: int | None = None):
        B = [tuple(int(c) for c in b) for b in B]
        if not B:
            raise ValueError("the avoided set must be nonempty")
        seen = set()
        self.sites = [b for b in B if not (b in seen or seen.add(b))]
        self.d = d or len(self.sites[0])
        check_dim(self.d)
        self.index = {b: i for i, b in enumerate(self.sites)}
        arr = np.array(self.sites, dtype=np.int64)
        self.arr = arr
        m = len(arr)
        K = kernel_many(arr[:, None, :] - arr[None, :, :], self.d)
        if self.d == 2:
            M = np.zeros((m + 1, m + 1))
            M[:m, :m] = K
            M[:m, m] = 1.0
            M[m, :m] = 1.0
            self._lu = linalg.lu_factor(M)
            rhs = np.zeros(m + 1)
            rhs[m] = 1.0
            sol = linalg.lu_solve(self._lu, rhs)
            self.coef = sol[:m]
            self.offset = sol[m]
        else:
            self._lu = linalg.cho_factor(K)
            self.coef = linalg.cho_solve(self._lu, np.ones(m))
            self.offset = 1.0
        self.K = K

    def __len__(self):
        return len(self.sites)

    def _kern(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.d)
        return kernel_many(X[:, None, :] - self.arr[None, :, :], self.d)

    def profile(self, X) -> np.ndarray:
        """a_B (d=2) or g_B (d=3) at the rows of X; exactly zero on B."""
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.d)
        Kx = self._kern(X)
        if self.d == 2:
            vals = Kx @ self.coef + self.offset
        else:
            vals = 1.0 - Kx @ self.coef
        on = np.array([tuple(x) in self.index for x in map(tuple, X)], dtype=bool)
        vals[on] = 0.0
        return vals

    def escape(self, z: Site) -> float:
        """Es_B(z) for z in B (the Laplacian of the profile at z)."""
        z = tuple(z)
        if z not in self.index:
            raise ValueError("z must belong to the avoided set")
        return float(self.coef[self.index[z]])

    def escape_from_neighbors(self, z: Site) -> float:
        """Es_B(z) computed literally as the neighbour average of the profile."""
        z = tuple(z)
        if z not in self.index:
            raise ValueError("z must belong to the avoided set")
        return float(self.profile(np.array(neighbors(z))).sum() / (2 * self.d))

    def hitting(self, X) -> np.ndarray:
        """Rows H_B(x, .) of the hitting distribution (sub-probability in d=3)."""
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.d)
        Kx = self._kern(X)
        m = len(self.sites)
        if self.d == 2:
            aug = np.hstack([Kx, np.ones((len(X), 1))])
            # H = aug @ M^{-1}[:, :m]; M symmetric so solve M Y = aug^T
            Y = linalg.lu_solve(self._lu, aug.T)
            H = Y[:m].T
        else:
            H = linalg.cho_solve(self._lu, Kx.T).T
        for r, x in enumerate(map(tuple, X)):
            i = self.index.get(x)
            if i is not None:
                H[r] = 0.0
                H[r, i] = 1.0
        return H

    def capacity(self) -> float:
        return float(-self.offset) if self.d == 2 else float(self.coef.sum())

    def green(self, X, Y) -> np.ndarray:
        """G_{Z^d minus B}(x, y) for rows of X and Y.

        d=2: sum_b H_B(x, b) a(b - y) - a(x - y) + a_B(x).
        d=3: G(x - y) - sum_b H_B(x, b) G(b - y).
        """
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.d)
        Y = np.asarray(Y, dtype=np.int64).reshape(-1, self.d)
        H = self.hitting(X)
        KbY = kernel_many(self.arr[:, None, :] - Y[None, :, :], self.d)
        Kxy = kernel_many(X[:, None, :] - Y[None, :, :], self.d)
        if self.d == 2:
            out = H @ KbY - Kxy + self.profile(X)[:, None]
        else:
            out = Kxy - H @ KbY
        on_y = np.array([tuple(y) in self.index for y in map(tuple, Y)], dtype=bool)
        out[:, on_y] = 0.0
        return out


def hitting_distribution(B: Iterable[Site], x: Site) -> dict:
    sp = SetPotential(B)
    row = sp.hitting(np.array([x]))[0]
    return {b: float(v) for b, v in zip(sp.sites, row)}


@dataclass
class HarmonicProfile:
    avoided: frozenset
    queries: list
    values: np.ndarray

    def __getitem__(self, x):
        return float(self.values[self.queries.index(tuple(x))])


def harmonic_profile(eta: Iterable[Site], queries: Sequence[Site]) -> HarmonicProfile:
    eta = [tuple(s) for s in eta]
    sp = SetPotential(eta)
    q = [tuple(s) for s in queries]
    vals = sp.profile(np.array(q)) if q else np.zeros(0)
    return HarmonicProfile(frozenset(eta), q, vals)


def escape_probability(eta: Sequence[Site], z: Site | None = None) -> float:
    """Es_eta(z), the neighbour average of a_eta (d=2) or g_eta (d=3) at z."""
    eta = [tuple(s) for s in eta]
    z = tuple(z) if z is not None else eta[-1]
    if z not in set(eta):
        raise ValueError("z must lie on eta")
    return SetPotential(eta).escape_from_neighbors(z)


def capacity(eta: Iterable[Site], R: float = 64.0, n_angles: int = 64) -> tuple[float, float]:
    """cap(eta) for d=2 with the convention a_eta(x) = a(x) - cap + o(1).

    Read off from a - a_eta averaged over circles of radius R and 2R,
    with the O(1/R) remainder removed by Richardson extrapolation.
    Returns (value, |difference between the two radii|) as tolerance.
    """
    eta = [tuple(s) for s in eta]
    if len(eta[0]) != 2:
        raise ValueError("capacity is implemented for d=2")
    sp = SetPotential(eta)
    th = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    vals = []
    for rad in (R, 2 * R):
        pts = np.unique(np.rint(np.column_stack([rad * np.cos(th), rad * np.sin(th)])).astype(np.int64), axis=0)
        diff = potential_kernel_many(pts) - sp.profile(pts)
        vals.append(float(diff.mean()))
    extrap = 2 * vals[1] - vals[0]
    return extrap, abs(vals[1] - vals[0])
