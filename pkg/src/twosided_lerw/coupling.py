"""Couplings of the tilted pair chain and of the one-sided LERW chain.

Both chains move through a ladder of exact lattice scales. At each step
every coordinate draws a child (an extension to the next scale) from an
exactly computed transition row. Two copies are coupled step by step with
a maximal coupling of a *key*: when the current tips agree the key is the
new increment, otherwise it is the new tip. Given the key each copy then
draws its child from its own conditional law, so each marginal is the
chain's law exactly. J counts the trailing steps whose increments agree,
so it either grows by one or resets to 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .lattice import Saw, first_exit_index
from .lerw import mu_weight, saw_table
from .stats import Estimate, exp_tail_fit
from .twosided import PathPair, exact_ladder, lambda_own, tilt_geometry

PAIR_LEVELS = (1.0, 1.2, 2.0, 2.2)
SINGLE_LEVELS = (1.0, 1.2, 2.0, 2.2, 2.5, 3.0)


@dataclass(frozen=True)
class ChainState:
    level: int
    state: object
    b: float = 1.0
    J: int = 0


@dataclass
class CouplingTrace:
    """Per-step records of a coupled run: scale radius, J, coupled flag."""

    radii: list = field(default_factory=list)
    J: list = field(default_factory=list)
    coupled: list = field(default_factory=list)
    censored: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.J) - 1

    @property
    def final_J(self) -> int:
        return self.J[-1]

    @property
    def gap(self) -> int:
        """Number of final steps not covered by the agreement: steps - J."""
        return self.n_steps - self.J[-1]

    @property
    def last_reset(self) -> int:
        """Index of the last step at which J was 0."""
        return max(i for i, j in enumerate(self.J) if j == 0)

    def validate(self) -> bool:
        return all(b == a + 1 or b == 0 for a, b in zip(self.J, self.J[1:]))

    def records(self) -> list[str]:
        return [f"{r}\t{j}\t{int(c)}" for r, j, c in zip(self.radii, self.J, self.coupled)]


TRACE_HEADER = "# radius\tJ\tcoupled"


def write_traces(path, traces: Sequence[CouplingTrace]) -> None:
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for k, t in enumerate(traces):
            fh.write(f"# trace {k} censored={int(t.censored)}\n")
            fh.write("\n".join(t.records()) + "\n")


# ---------------------------------------------------------------------------
# Generic keyed coupling


def maximal_coupling(p: dict, q: dict, rng) -> tuple:
    """Draw (x, y) with x ~ p, y ~ q and P{x = y} = sum min(p, q)."""
    keys = list(set(p) | set(q))
    pv = np.array([p.get(k, 0.0) for k in keys])
    qv = np.array([q.get(k, 0.0) for k in keys])
    m = np.minimum(pv, qv)
    overlap = m.sum()
    if rng.random() < overlap:
        k = keys[rng.choice(len(keys), p=m / overlap)]
        return k, k
    rp = np.maximum(pv - m, 0.0)
    rq = np.maximum(qv - m, 0.0)
    x = keys[rng.choice(len(keys), p=rp / rp.sum())]
    y = keys[rng.choice(len(keys), p=rq / rq.sum())]
    return x, y


def maximal_coupling_law(p: dict, q: dict) -> dict:
    """Exact joint law of :func:`maximal_coupling`."""
    keys = list(set(p) | set(q))
    m = {k: min(p.get(k, 0.0), q.get(k, 0.0)) for k in keys}
    overlap = sum(m.values())
    out = {(k, k): v for k, v in m.items() if v > 0}
    if overlap < 1.0 - 1e-15:
        rp = {k: p.get(k, 0.0) - m[k] for k in keys if p.get(k, 0.0) - m[k] > 0}
        rq = {k: q.get(k, 0.0) - m[k] for k in keys if q.get(k, 0.0) - m[k] > 0}
        sp, sq = sum(rp.values()), sum(rq.values())
        for x, a in rp.items():
            for y, b in rq.items():
                out[(x, y)] = out.get((x, y), 0.0) + (1 - overlap) * (a / sp) * (b / sq)
    return out


class LevelChain:
    """A Markov chain moving up a ladder of scales with exact rows.

    Subclasses supply ``row(l, s) -> (children, probs)``, ``tips(l, s)`` and
    ``increment(l, s, child)``.
    """

    radii: list

    def row(self, l, s):
        raise NotImplementedError

    def tips(self, l, s):
        raise NotImplementedError

    def increment(self, l, s, child):
        raise NotImplementedError

    @property
    def n_levels(self) -> int:
        return len(self.radii)

    def step(self, l, s, rng):
        ch, p = self.row(l, s)
        return ch[rng.choice(len(ch), p=p)]

    def _key_table(self, l, s, match: bool) -> tuple[dict, dict]:
        cache = self.__dict__.setdefault("_keys", {})
        k = (l, s, match)
        if k not in cache:
            ch, p = self.row(l, s)
            law: dict = {}
            groups: dict = {}
            for c, w in zip(ch, p):
                key = self.increment(l, s, c) if match else self.tips(l + 1, c)
                law[key] = law.get(key, 0.0) + w
                groups.setdefault(key, ([], []))
                groups[key][0].append(c)
                groups[key][1].append(w)
            groups = {key: (cs, np.array(ws) / sum(ws)) for key, (cs, ws) in groups.items()}
            cache[k] = (law, groups)
        return cache[k]

    def key_law(self, l, s, match: bool) -> dict:
        return self._key_table(l, s, match)[0]

    def given_key(self, l, s, key, match: bool) -> tuple[list, np.ndarray]:
        return self._key_table(l, s, match)[1][key]

    def coupled_step(self, l, sa, sb, rng):
        match = self.tips(l, sa) == self.tips(l, sb)
        ka, kb = maximal_coupling(self.key_law(l, sa, match), self.key_law(l, sb, match), rng)
        ca, pa = self.given_key(l, sa, ka, match)
        cb, pb = self.given_key(l, sb, kb, match)
        na = ca[rng.choice(len(ca), p=pa)] if len(ca) > 1 else ca[0]
        nb = cb[rng.choice(len(cb), p=pb)] if len(cb) > 1 else cb[0]
        return na, nb, match and ka == kb

    def coupled_step_law(self, l, sa, sb) -> dict:
        """Exact joint law of one coupled step."""
        match = self.tips(l, sa) == self.tips(l, sb)
        joint = maximal_coupling_law(self.key_law(l, sa, match), self.key_law(l, sb, match))
        out: dict = {}
        for (ka, kb), w in joint.items():
            ca, pa = self.given_key(l, sa, ka, match)
            cb, pb = self.given_key(l, sb, kb, match)
            for x, u in zip(ca, pa):
                for y, v in zip(cb, pb):
                    out[(x, y)] = out.get((x, y), 0.0) + w * u * v
        return out

    def run_coupled(self, sa, sb, rng, l0: int = 0) -> tuple[CouplingTrace, object, object]:
        tr = CouplingTrace([self.radii[l0]], [0], [sa == sb])
        J = 0
        for l in range(l0, self.n_levels - 1):
            if sa == sb:
                na = nb = self.step(l, sa, rng)
                agree = True
            else:
                na, nb, agree = self.coupled_step(l, sa, sb, rng)
            J = J + 1 if agree else 0
            sa, sb = na, nb
            tr.radii.append(self.radii[l + 1])
            tr.J.append(J)
            tr.coupled.append(sa == sb)
        return tr, sa, sb

    def marginal_law(self, s, l0: int = 0) -> dict:
        law = {s: 1.0}
        for l in range(l0, self.n_levels - 1):
            nxt: dict = {}
            for x, w in law.items():
                ch, p = self.row(l, x)
                for c, u in zip(ch, p):
                    nxt[c] = nxt.get(c, 0.0) + w * u
            law = nxt
        return law

    def coupled_law(self, sa, sb, l0: int = 0) -> dict:
        law = {(sa, sb): 1.0}
        for l in range(l0, self.n_levels - 1):
            nxt: dict = {}
            for (x, y), w in law.items():
                if x == y:
                    ch, p = self.row(l, x)
                    step = {(c, c): u for c, u in zip(ch, p)}
                else:
                    step = self.coupled_step_law(l, x, y)
                for k, u in step.items():
                    nxt[k] = nxt.get(k, 0.0) + w * u
            law = nxt
        return law


# ---------------------------------------------------------------------------
# The tilted pair chain


class PairChain(LevelChain):
    """Chain on prefix pairs with transitions lambda_N(eta') / lambda_N(eta).

    States at level l are index pairs (i, j) into the prefixes of the exact
    ladder at radius ``radii[l]``; at the top level they index the paths of
    W_N. The transition equals lambda(eta'|eta) b(eta') / b(eta) with
    b = lambda_N / lambda_n.
    """

    def __init__(self, radius: float = 2.5, levels: Sequence[float] = PAIR_LEVELS, d: int = 2):
        self.ladder = exact_ladder(radius, tuple(levels), d)
        self.radii = list(self.ladder.levels)
        if not self.ladder.store_top:
            self.radii.append(float(radius))
        self.d = d
        self._rows: dict = {}
        self._own: dict = {}

    def paths_at(self, l: int) -> list:
        lad = self.ladder
        return lad.prefixes[l] if l < len(lad.prefixes) else lad.paths

    def pair(self, l: int, s) -> PathPair:
        P = self.paths_at(l)
        return PathPair(P[s[0]], P[s[1]])

    def state_of(self, pair: PathPair, l: int = 0):
        idx = self.ladder.prefix_index[l]
        return idx[pair.eta1], idx[pair.eta2]

    def lam_N(self, l: int, s) -> float:
        lad = self.ladder
        if l < len(lad.Lam):
            return float(lad.Lam[l][s])
        return lambda_own(self.pair(l, s), lad.radius)

    def own(self, l: int, s) -> float:
        """lambda_n(eta) at the state's own scale."""
        key = (l, s)
        if key not in self._own:
            pr = self.pair(l, s)
            r = self.radii[l]
            if not pr.disjoint():
                v = 0.0
            else:
                tab = saw_table(r, self.d)
                geo = tilt_geometry(r, self.d)
                v = (tab.prob(pr.eta1) * tab.prob(pr.eta2)
                     * math.exp(-geo.L_all(pr.eta1, pr.eta2)))
            self._own[key] = v
        return self._own[key]

    def b(self, l: int, s) -> float:
        if l == self.n_levels - 1:
            return 1.0
        own = self.own(l, s)
        return self.lam_N(l, s) / own if own > 0 else 0.0

    def b_table(self) -> dict:
        """{level radius: {PathPair: b}} over all states with lambda_n > 0."""
        out = {}
        for l in range(len(self.ladder.Lam)):
            L = self.ladder.Lam[l]
            tab = {}
            for i, j in zip(*np.nonzero(L)):
                tab[self.pair(l, (i, j))] = self.b(l, (int(i), int(j)))
            out[self.radii[l]] = tab
        return out

    def density_residual(self, max_states: int | None = 300, rng=None) -> float:
        """max relative |sum_{eta'} lambda_{n+1}(eta')/lambda_n(eta) b(eta') - b(eta)|.

        All states are checked below the last interior level; on the last
        one (whose children live in A_N) at most ``max_states`` states are
        drawn at random.
        """
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        for l in range(self.n_levels - 1):
            L = self.ladder.Lam[l]
            states = [(int(i), int(j)) for i, j in zip(*np.nonzero(L))]
            if l + 2 == self.n_levels and max_states and len(states) > max_states:
                pick = rng.choice(len(states), max_states, replace=False)
                states = [states[k] for k in pick]
            for s in states:
                own = self.own(l, s)
                ch, _ = self._children(l, s)
                tot = sum(self.own(l + 1, c) / own * self.b(l + 1, c) for c, _ in ch)
                b = self.b(l, s)
                worst = max(worst, abs(tot - b) / b)
        return worst

    def _children(self, l: int, s):
        lad = self.ladder
        if l + 1 < len(lad.Lam):
            ca, cb = lad.children[l][s[0]], lad.children[l][s[1]]
            L = lad.Lam[l + 1]
            return [((a, b), L[a, b]) for a in ca for b in cb if L[a, b] > 0], None
        cand, w = lad.top_row(l, *s)
        return [(c, x) for c, x in zip(cand, w) if x > 0], None

    def row(self, l, s):
        key = (l, s)
        if key not in self._rows:
            ch, _ = self._children(l, s)
            if not ch:
                raise ValueError("state with b = 0")
            w = np.array([x for _, x in ch])
            self._rows[key] = ([c for c, _ in ch], w / w.sum())
        return self._rows[key]

    def row_sum_error(self, l, s) -> float:
        ch, _ = self._children(l, s)
        return abs(sum(x for _, x in ch) / self.lam_N(l, s) - 1.0)

    def tips(self, l, s):
        P = self.paths_at(l)
        return P[s[0]][-1], P[s[1]][-1]

    def increment(self, l, s, child):
        P, C = self.paths_at(l), self.paths_at(l + 1)
        return (C[child[0]][len(P[s[0]]) - 1:], C[child[1]][len(P[s[1]]) - 1:])


@lru_cache(maxsize=4)
def pair_chain(radius: float = 2.5, levels: tuple = PAIR_LEVELS, d: int = 2) -> PairChain:
    return PairChain(radius, levels, d)


def chain_step(chain: PairChain, state: ChainState, rng) -> ChainState:
    if state.b <= 0:
        raise ValueError("state with b = 0")
    c = chain.step(state.level, state.state, rng)
    l = state.level + 1
    return ChainState(l, c, chain.b(l, c), 0)


def couple_pair(start1: PathPair, start2: PathPair, n_traces: int, rng,
                chain: PairChain | None = None) -> list[CouplingTrace]:
    """Run ``n_traces`` coupled pair chains from two starts in A_k (k the
    lowest level radius of the chain)."""
    chain = chain or pair_chain()
    s1, s2 = chain.state_of(start1), chain.state_of(start2)
    return [chain.run_coupled(s1, s2, rng)[0] for _ in range(n_traces)]


# ---------------------------------------------------------------------------
# The one-sided chain


class SingleChain(LevelChain):
    """LERW continuation chain: eta -> eta' with probability mu'(eta')/mu(eta)."""

    def __init__(self, levels: Sequence[float] = SINGLE_LEVELS, d: int = 2):
        self.radii = list(levels)
        self.d = d
        self.tables = [saw_table(r, d) for r in self.radii]
        self.children = []
        for l in range(len(self.radii) - 1):
            up = self.tables[l + 1]
            idx = self.tables[l].index
            ch: dict = {}
            for a, p in enumerate(up.paths):
                par = idx[p[: first_exit_index(p, self.radii[l]) + 1]]
                ch.setdefault(par, []).append(a)
            self.children.append(ch)
        self._rows: dict = {}

    def row(self, l, s):
        key = (l, s)
        if key not in self._rows:
            ch = self.children[l][s]
            w = self.tables[l + 1].weights[ch]
            self._rows[key] = (ch, w / self.tables[l].weights[s])
        return self._rows[key]

    def tips(self, l, s):
        return self.tables[l].paths[s][-1]

    def increment(self, l, s, child):
        return self.tables[l + 1].paths[child][len(self.tables[l].paths[s]) - 1:]

    def state_of(self, eta: Saw, l: int = 0) -> int:
        return self.tables[l].index[tuple(eta)]


@lru_cache(maxsize=4)
def single_chain(levels: tuple = SINGLE_LEVELS, d: int = 2) -> SingleChain:
    return SingleChain(levels, d)


def one_sided_couple(eta: Saw, eta_t: Saw, n_traces: int, rng,
                     chain: SingleChain | None = None) -> list[tuple[CouplingTrace, Saw, Saw]]:
    """Coupled continuations of two initial paths to the top level.

    Returns (trace, final path, final path) per run.
    """
    chain = chain or single_chain()
    a, b = chain.state_of(eta), chain.state_of(eta_t)
    out = []
    top = chain.tables[-1].paths
    for _ in range(n_traces):
        tr, x, y = chain.run_coupled(a, b, rng)
        out.append((tr, top[x], top[y]))
    return out


# ---------------------------------------------------------------------------
# Tails


def tail_exponent(traces: Sequence[CouplingTrace], quantity: str = "gap") -> Estimate:
    """Exponential tail rate of ``gap`` (steps - J_N) or ``last_reset``."""
    if quantity == "gap":
        x = [t.gap for t in traces]
    elif quantity == "last_reset":
        x = [t.last_reset for t in traces]
    else:
        raise ValueError("quantity must be 'gap' or 'last_reset'")
    cens = [t.censored for t in traces]
    return exp_tail_fit(x, 0.0, censored=cens)
