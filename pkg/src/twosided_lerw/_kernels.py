"""Compiled inner loops (numba) for Markov chains on finite state sets.

All kernels take an explicit integer seed and reseed numba's generator,
so results depend only on the seed handed in by the caller.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _draw(indptr, indices, cum, state):
    lo = indptr[state]
    hi = indptr[state + 1]
    u = np.random.random() * cum[hi - 1]
    # binary search for first cum > u
    a, b = lo, hi - 1
    while a < b:
        mid = (a + b) // 2
        if cum[mid] > u:
            b = mid
        else:
            a = mid + 1
    return indices[a]


@njit(cache=True)
def erased_chain_batch(indptr, indices, cum, absorb, prefix, inside, n_samples, seed, step_cap):
    """Run an absorbing chain from the last prefix state, erasing loops on the fly.

    Returns (flat, offsets, capped): the erased path of each sample cut at
    its first state with ``inside == False`` (the whole erased path if no
    such state), concatenated in ``flat``.
    """
    _seed(seed)
    n_states = inside.shape[0]
    pos = -np.ones(n_states, np.int64)
    cap_len = n_states + 1
    path = np.empty(cap_len, np.int64)
    flat = np.empty(n_samples * 8, np.int64)
    offsets = np.zeros(n_samples + 1, np.int64)
    capped = 0
    fill = 0
    for s in range(n_samples):
        L = prefix.shape[0]
        for i in range(L):
            path[i] = prefix[i]
            pos[prefix[i]] = i
        cur = prefix[L - 1]
        steps = 0
        while True:
            nxt = _draw(indptr, indices, cum, cur)
            if nxt == absorb:
                break
            steps += 1
            j = pos[nxt]
            if j >= 0:
                for k in range(j + 1, L):
                    pos[path[k]] = -1
                L = j + 1
            else:
                path[L] = nxt
                pos[nxt] = L
                L += 1
            cur = nxt
            if steps >= step_cap:
                capped += 1
                break
        # cut at the first state outside the target ball
        cut = L
        for i in range(L):
            if not inside[path[i]]:
                cut = i + 1
                break
        while fill + cut > flat.shape[0]:
            bigger = np.empty(flat.shape[0] * 2, np.int64)
            bigger[: flat.shape[0]] = flat
            flat = bigger
        for i in range(cut):
            flat[fill + i] = path[i]
        fill += cut
        offsets[s + 1] = fill
        for i in range(L):
            pos[path[i]] = -1
    return flat[:fill], offsets, capped


@njit(cache=True)
def chain_paths_batch(indptr, indices, cum, absorb, start, n_samples, seed, step_cap):
    """Raw trajectories (no erasure) of an absorbing chain, for loop sampling."""
    _seed(seed)
    flat = np.empty(n_samples * 16, np.int64)
    offsets = np.zeros(n_samples + 1, np.int64)
    fill = 0
    for s in range(n_samples):
        cur = start
        if fill + 1 > flat.shape[0]:
            bigger = np.empty(flat.shape[0] * 2, np.int64)
            bigger[: flat.shape[0]] = flat
            flat = bigger
        flat[fill] = cur
        fill += 1
        steps = 0
        while True:
            nxt = _draw(indptr, indices, cum, cur)
            if nxt == absorb:
                break
            if fill + 1 > flat.shape[0]:
                bigger = np.empty(flat.shape[0] * 2, np.int64)
                bigger[: flat.shape[0]] = flat
                flat = bigger
            flat[fill] = nxt
            fill += 1
            cur = nxt
            steps += 1
            if steps >= step_cap:
                break
        offsets[s + 1] = fill
    return flat[:fill], offsets


@njit(cache=True)
def srw_until(start, radius2, stop_mask_lo, stop_mask, n_steps_cap, seed):
    """Simple random walk in Z^d from ``start`` until |x|^2 >= radius2 or a
    masked site is hit (mask is a box array offset by ``stop_mask_lo``).

    Returns the trajectory as an (L, d) array.
    """
    _seed(seed)
    d = start.shape[0]
    cap = 1024
    out = np.empty((cap, d), np.int64)
    x = start.copy()
    out[0] = x
    L = 1
    while L < n_steps_cap:
        k = np.random.randint(2 * d)
        x[k // 2] += 1 if k % 2 == 0 else -1
        if L >= cap:
            bigger = np.empty((cap * 2, d), np.int64)
            bigger[:cap] = out
            out = bigger
            cap *= 2
        out[L] = x
        L += 1
        r2 = 0
        for i in range(d):
            r2 += x[i] * x[i]
        if r2 >= radius2:
            break
        inbox = True
        for i in range(d):
            c = x[i] - stop_mask_lo[i]
            if c < 0 or c >= stop_mask.shape[i]:
                inbox = False
        if inbox:
            if d == 2:
                if stop_mask[x[0] - stop_mask_lo[0], x[1] - stop_mask_lo[1], 0]:
                    break
            else:
                if stop_mask[x[0] - stop_mask_lo[0], x[1] - stop_mask_lo[1], x[2] - stop_mask_lo[2]]:
                    break
    return out[:L]


def to_csr(T: np.ndarray, tol: float = 0.0):
    """Dense row-stochastic matrix -> (indptr, indices, cumulative probs)."""
    rows, cols = np.nonzero(T > tol)
    vals = T[rows, cols]
    n = T.shape[0]
    indptr = np.zeros(n + 1, np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    cum = np.empty(len(vals))
    for r in range(n):
        lo, hi = indptr[r], indptr[r + 1]
        cum[lo:hi] = np.cumsum(vals[lo:hi])
    return indptr, cols.astype(np.int64), cum


@njit(cache=True)
def soup_hit_flags(nb, in_B, n_soups, seed, step_cap):
    """Per-site loop-soup construction on a finite domain, hit test only.

    ``nb[i, k]`` is the index of the k-th neighbour of site i or -1 if it
    lies outside the domain. Site j's walk is killed on stepping to an
    index below j or outside; its excursions from j before the last visit
    form the soup loops rooted at j. Returns, per soup, whether some loop
    visits a site flagged in ``in_B``.
    """
    _seed(seed)
    m = nb.shape[0]
    deg = nb.shape[1]
    out = np.zeros(n_soups, np.bool_)
    for s in range(n_soups):
        hit = False
        for j in range(m):
            cur = j
            exc = False
            steps = 0
            while steps < step_cap:
                nxt = nb[cur, np.random.randint(deg)]
                steps += 1
                if nxt < j:
                    break
                if nxt == j:
                    if exc or in_B[j]:
                        hit = True
                    exc = False
                elif in_B[nxt]:
                    exc = True
                cur = nxt
            if hit:
                break
        out[s] = hit
    return out


@njit(cache=True)
def site_excursions(nb, j, n_soups, seed, step_cap):
    """Site j's killed walk truncated at its last visit to j (see above)."""
    _seed(seed)
    deg = nb.shape[1]
    flat = np.empty(n_soups * 8, np.int64)
    offsets = np.zeros(n_soups + 1, np.int64)
    buf = np.empty(64, np.int64)
    fill = 0
    for s in range(n_soups):
        cur = j
        L = 0
        last = 0
        steps = 0
        while steps < step_cap:
            nxt = nb[cur, np.random.randint(deg)]
            steps += 1
            if nxt < j:
                break
            if L >= buf.shape[0]:
                bigger = np.empty(buf.shape[0] * 2, np.int64)
                bigger[: buf.shape[0]] = buf
                buf = bigger
            buf[L] = nxt
            L += 1
            if nxt == j:
                last = L
            cur = nxt
        while fill + last > flat.shape[0]:
            bigger = np.empty(flat.shape[0] * 2, np.int64)
            bigger[: flat.shape[0]] = flat
            flat = bigger
        for i in range(last):
            flat[fill + i] = buf[i]
        fill += last
        offsets[s + 1] = fill
    return flat[:fill], offsets


@njit(cache=True)
def tagged_excursions(indptr, indices, cum, tags, start, absorb, n_exc, seed, step_cap):
    """Excursions of an absorbing chain from ``start`` back to ``start``.

    Killed attempts are discarded (rejection), so the output consists of
    ``n_exc`` excursions conditioned to return. The sites visited strictly
    between the two visits to ``start`` are stored, and a per-excursion
    flag records whether a transition with nonzero tag was used.
    Returns (flat, offsets, flags, attempts, capped).
    """
    _seed(seed)
    flat = np.empty(n_exc * 8, np.int64)
    offsets = np.zeros(n_exc + 1, np.int64)
    flags = np.zeros(n_exc, np.bool_)
    buf = np.empty(64, np.int64)
    fill = 0
    attempts = 0
    capped = 0
    k = 0
    while k < n_exc:
        attempts += 1
        cur = start
        L = 0
        tagged = False
        ok = False
        steps = 0
        while steps < step_cap:
            lo = indptr[cur]
            hi = indptr[cur + 1]
            u = np.random.random() * cum[hi - 1]
            a, b = lo, hi - 1
            while a < b:
                mid = (a + b) // 2
                if cum[mid] > u:
                    b = mid
                else:
                    a = mid + 1
            nxt = indices[a]
            if tags[a] != 0:
                tagged = True
            steps += 1
            if nxt == absorb:
                break
            if nxt == start:
                ok = True
                break
            if L >= buf.shape[0]:
                bigger = np.empty(buf.shape[0] * 2, np.int64)
                bigger[: buf.shape[0]] = buf
                buf = bigger
            buf[L] = nxt
            L += 1
            cur = nxt
        if steps >= step_cap:
            capped += 1
        if not ok:
            continue
        while fill + L > flat.shape[0]:
            bigger = np.empty(flat.shape[0] * 2, np.int64)
            bigger[: flat.shape[0]] = flat
            flat = bigger
        for i in range(L):
            flat[fill + i] = buf[i]
        fill += L
        offsets[k + 1] = fill
        flags[k] = tagged
        k += 1
    return flat[:fill], offsets, flags, attempts, capped


@njit(cache=True)
def flood_escapes(nb, blocked, sources):
    """Flood fill through unblocked sites from the unblocked ``sources``.

    ``nb[i, k] == -1`` marks a neighbour outside the region; reaching one
    means escape. Returns True if the fill escapes.
    """
    m = nb.shape[0]
    seen = np.zeros(m, np.bool_)
    stack = np.empty(m, np.int64)
    top = 0
    for s in sources:
        if not blocked[s] and not seen[s]:
            seen[s] = True
            stack[top] = s
            top += 1
    while top > 0:
        top -= 1
        x = stack[top]
        for k in range(nb.shape[1]):
            y = nb[x, k]
            if y < 0:
                return True
            if blocked[y] or seen[y]:
                continue
            seen[y] = True
            stack[top] = y
            top += 1
    return False


def csr_with_tags(T: np.ndarray, col_map: np.ndarray, col_tag: np.ndarray):
    """Like ``to_csr`` for a matrix whose columns are relabelled.

    Column c of ``T`` leads to state ``col_map[c]`` and carries tag
    ``col_tag[c]``; several columns may lead to the same state.
    """
    rows, cols = np.nonzero(T > 0)
    vals = T[rows, cols]
    n = T.shape[0]
    indptr = np.zeros(n + 1, np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    cum = np.empty(len(vals))
    for r in range(n):
        lo, hi = indptr[r], indptr[r + 1]
        cum[lo:hi] = np.cumsum(vals[lo:hi])
    return indptr, col_map[cols].astype(np.int64), cum, col_tag[cols].astype(np.int64)


@njit(cache=True)
def chol_logdet(M, idx, n):
    """log det of M[idx[:n]][:, idx[:n]] by Cholesky (nan if not PD)."""
    L = np.empty((n, n))
    ld = 0.0
    for i in range(n):
        for j in range(i + 1):
            s = M[idx[i], idx[j]]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return np.nan
                L[i, i] = np.sqrt(s)
                ld += np.log(s)
            else:
                L[i, j] = s / L[j, j]
    return ld


@njit(cache=True)
def _bits(mask, out):
    n = 0
    i = 0
    while mask:
        if mask & np.uint64(1):
            out[n] = i
            n += 1
        mask >>= np.uint64(1)
        i += 1
    return n


@njit(cache=True)
def exact_pair_sums(G, masks, mask_ld, mp_ptr, mp_paths, tip, w, pid, level_off, level_size,
                    sep1, sep2, sep_level):
    """Sum mu(g1) mu(g2) Q(g1, g2) over disjoint path pairs, by prefix pairs.

    Paths are grouped by their site mask in the punctured ball
    (``mp_ptr``/``mp_paths`` list the paths of each mask). Q depends on
    the masks only; pairs with a common tip are excluded. For every level
    l the sum is accumulated at [pid[a, l], pid[b, l]] of a square matrix
    stored flat at ``level_off[l]``. The second output restricts to pairs
    with sep1[a] and sep2[b], accumulated at level ``sep_level``; the third
    is the grand total.
    """
    n_mask = masks.shape[0]
    n_lev = level_off.shape[0]
    out = np.zeros(level_off[n_lev - 1] + level_size[n_lev - 1] ** 2)
    s_sep = level_size[sep_level]
    out_sep = np.zeros(s_sep * s_sep)
    total = 0.0
    idx = np.empty(64, np.int64)
    for i in range(n_mask):
        for j in range(n_mask):
            if masks[i] & masks[j]:
                continue
            n = _bits(masks[i] | masks[j], idx)
            if n > 0:
                L = mask_ld[i] + mask_ld[j] - chol_logdet(G, idx, n)
                q = np.exp(-L)
            else:
                q = 1.0
            for aa in range(mp_ptr[i], mp_ptr[i + 1]):
                a = mp_paths[aa]
                for bb in range(mp_ptr[j], mp_ptr[j + 1]):
                    b = mp_paths[bb]
                    if tip[a] == tip[b]:
                        continue
                    v = w[a] * w[b] * q
                    total += v
                    for l in range(n_lev):
                        s = level_size[l]
                        out[level_off[l] + pid[a, l] * s + pid[b, l]] += v
                    if sep1[a] and sep2[b]:
                        out_sep[pid[a, sep_level] * s_sep + pid[b, sep_level]] += v
    return out, out_sep, total


@njit(cache=True)
def pair_log_q(G, flat1, off1, flat2, off2):
    """L = logdet G[s1] + logdet G[s2] - logdet G[s1 u s2] for index-list
    pairs (sites given as row indices of G; the lists must be disjoint).
    Returns L per pair (0 when either list is empty)."""
    n = off1.shape[0] - 1
    out = np.zeros(n)
    idx = np.empty(G.shape[0], np.int64)
    for p in range(n):
        n1 = off1[p + 1] - off1[p]
        n2 = off2[p + 1] - off2[p]
        if n1 == 0 or n2 == 0:
            continue
        for k in range(n1):
            idx[k] = flat1[off1[p] + k]
        l1 = chol_logdet(G, idx, n1)
        for k in range(n2):
            idx[n1 + k] = flat2[off2[p] + k]
        l12 = chol_logdet(G, idx, n1 + n2)
        for k in range(n2):
            idx[k] = flat2[off2[p] + k]
        l2 = chol_logdet(G, idx, n2)
        out[p] = l1 + l2 - l12
    return out


@njit(cache=True)
def escape_walks(blocked, shape, strides, z, center, r2, target2, outward, n_walks, seed,
                 step_cap):
    """Walks from z (grid coordinates) stopped at sigma_r (|S - z|^2 >= r2)
    or on entering a blocked site (tau, times >= 1).

    Counts walks with sigma_r < tau and, among them, those whose exit point
    satisfies |S - center|^2 >= target2 (``outward``) or <= target2.
    Returns (n_escaped, n_success, n_capped).
    """
    _seed(seed)
    d = shape.shape[0]
    x = np.empty(d, np.int64)
    n_esc = 0
    n_suc = 0
    n_cap = 0
    for w in range(n_walks):
        for i in range(d):
            x[i] = z[i]
        steps = 0
        while True:
            k = np.random.randint(0, 2 * d)
            x[k // 2] += 1 if k % 2 == 0 else -1
            steps += 1
            dz = 0
            for i in range(d):
                dz += (x[i] - z[i]) ** 2
            if dz >= r2:
                n_esc += 1
                dc = 0
                for i in range(d):
                    dc += (x[i] - center[i]) ** 2
                if (outward and dc >= target2) or ((not outward) and dc <= target2):
                    n_suc += 1
                break
            flat = 0
            for i in range(d):
                flat += x[i] * strides[i]
            if blocked[flat]:
                break
            if steps >= step_cap:
                n_cap += 1
                break
    return n_esc, n_suc, n_cap
