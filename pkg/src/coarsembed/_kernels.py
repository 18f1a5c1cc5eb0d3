"""Hot loops of the embedding trainer.

Every function here is compiled by numba (nogil) unless the JIT is disabled,
in which case it runs as plain Python.  Randomness comes from the
counter-based streams in ``_jit`` so results do not depend on thread
placement.
"""

import math

import numpy as np

from ._jit import bounded, jit, stream_seed, xorshift32

SIGMOID_CLAMP = 30.0


@jit
def sigmoid(x):
    if x > SIGMOID_CLAMP:
        x = SIGMOID_CLAMP
    elif x < -SIGMOID_CLAMP:
        x = -SIGMOID_CLAMP
    return 1.0 / (1.0 + math.exp(-x))


@jit
def update_rows(S, a, T, b, label, lr):
    """One logistic update between source row S[a] and sample row T[b].

    The score is computed once from the pre-update rows and the sample moves
    along the pre-update source vector.
    """
    d = S.shape[1]
    dot = 0.0
    for k in range(d):
        dot += S[a, k] * T[b, k]
    score = (label - sigmoid(dot)) * lr
    for k in range(d):
        va = S[a, k]
        S[a, k] = va + T[b, k] * score
        T[b, k] += va * score


@jit
def lr_decay(lr, j, e_i):
    frac = 1.0 - j / e_i
    if frac < 1e-4:
        frac = 1e-4
    return lr * frac


@jit
def train_epochs(M, offsets, nbrs, lo, hi, ep_start, ep_stop, ep_step, e_i, lr, n_s, seed):
    """Sources lo..hi-1, epochs ep_start, ep_start+ep_step, ... < ep_stop.

    Each non-isolated source gets one adjacency positive and ``n_s`` uniform
    negatives per epoch.  Returns the number of positive updates performed.
    """
    n = M.shape[0]
    done = 0
    for j in range(ep_start, ep_stop, ep_step):
        rate = lr_decay(lr, j, e_i)
        for src in range(lo, hi):
            deg = offsets[src + 1] - offsets[src]
            if deg == 0:
                continue
            st = stream_seed(seed, j, src)
            st = xorshift32(st)
            pos = nbrs[offsets[src] + bounded(st, deg)]
            update_rows(M, src, M, pos, 1.0, rate)
            for _ in range(n_s):
                st = xorshift32(st)
                update_rows(M, src, M, bounded(st, n), 0.0, rate)
            done += 1
    return done


@jit
def train_waves(M, offsets, nbrs, ep_start, ep_stop, e_i, lr, n_s, seed, width):
    """Emulate ``width`` update sequences in flight at once.

    Work items (epoch, source) are taken in epoch-major order and grouped in
    waves of ``width`` items.  Every item in a wave reads the matrix as it was
    when the wave started and advances a private copy of its source row.
    Sample displacements are summed into the matrix when the wave ends.  A
    source row is then overwritten by its private copy (the last item in the
    wave wins), so concurrent updates to that row are lost, as with a worker
    that caches its source row and copies it back.  This reproduces the stale
    reads and lost updates of many concurrent epochs on a small graph.
    """
    n, d = M.shape
    total = (ep_stop - ep_start) * n
    cap = width * (1 + n_s)
    delta = np.zeros((cap, d), np.float32)
    slot_of = np.full(n, -1, np.int64)
    rows_used = np.empty(cap, np.int64)
    # private source copies written back at the end of the wave
    back = np.empty((width, d), np.float32)
    back_row = np.full(n, -1, np.int64)
    back_src = np.empty(width, np.int64)
    local = np.empty(d, np.float64)
    done = 0
    first = 0
    while first < total:
        last = min(first + width, total)
        used = 0
        n_back = 0
        for t in range(first, last):
            j = ep_start + t // n
            src = t % n
            deg = offsets[src + 1] - offsets[src]
            if deg == 0:
                continue
            rate = lr_decay(lr, j, e_i)
            for k in range(d):
                local[k] = M[src, k]
            st = stream_seed(seed, j, src)
            for q in range(n_s + 1):
                st = xorshift32(st)
                if q == 0:
                    b = nbrs[offsets[src] + bounded(st, deg)]
                    label = 1.0
                else:
                    b = bounded(st, n)
                    label = 0.0
                if b == src:
                    # a self-sample stays in the private copy
                    dot = 0.0
                    for k in range(d):
                        dot += local[k] * local[k]
                    score = (label - sigmoid(dot)) * rate
                    for k in range(d):
                        local[k] = local[k] * (1.0 + 2.0 * score)
                    continue
                dot = 0.0
                for k in range(d):
                    dot += local[k] * M[b, k]
                score = (label - sigmoid(dot)) * rate
                sb = slot_of[b]
                if sb < 0:
                    sb = used
                    slot_of[b] = sb
                    rows_used[sb] = b
                    used += 1
                for k in range(d):
                    lk = local[k]
                    local[k] = lk + M[b, k] * score
                    delta[sb, k] += lk * score
            bs = back_row[src]
            if bs < 0:
                bs = n_back
                back_row[src] = bs
                back_src[bs] = src
                n_back += 1
            for k in range(d):
                back[bs, k] = local[k]
            done += 1
        for s in range(used):
            row = rows_used[s]
            for k in range(d):
                M[row, k] += delta[s, k]
                delta[s, k] = 0.0
            slot_of[row] = -1
        for s in range(n_back):
            row = back_src[s]
            for k in range(d):
                M[row, k] = back[s, k]
            back_row[row] = -1
        first = last
    return done


@jit
def train_pairs(M, src, dst, lo, hi, lr, n_s, seed, stream):
    """Positive pairs src[t] -> dst[t] for t in lo..hi-1, plus uniform negatives."""
    n = M.shape[0]
    for t in range(lo, hi):
        a = src[t]
        update_rows(M, a, M, dst[t], 1.0, lr)
        st = stream_seed(seed, stream, t)
        for _ in range(n_s):
            st = xorshift32(st)
            update_rows(M, a, M, bounded(st, n), 0.0, lr)
    return hi - lo


@jit
def pool_kernel(Ma, Mb, src, pos, n_fwd, count, lr, n_s, seed, stream):
    """Apply the first ``count`` pool entries to a resident part pair.

    Entries before ``n_fwd`` have their source in ``Ma`` and their positive in
    ``Mb``; later entries the reverse.  Negatives come from the opposite part.
    """
    for t in range(count):
        if t < n_fwd:
            S = Ma
            T = Mb
        else:
            S = Mb
            T = Ma
        a = src[t]
        update_rows(S, a, T, pos[t], 1.0, lr)
        m = T.shape[0]
        st = stream_seed(seed, stream, t)
        for _ in range(n_s):
            st = xorshift32(st)
            update_rows(S, a, T, bounded(st, m), 0.0, lr)
    return count


@jit
def walk_pairs_kernel(offsets, nbrs, starts, walk_length, window, seed, stream, out_src, out_dst):
    """Random walks from ``starts``; emit every pair within ``window`` steps.

    A walk that reaches a vertex without neighbors stops early.  Returns the
    number of pairs written.
    """
    walk = np.empty(walk_length, np.int64)
    count = 0
    for w in range(len(starts)):
        st = stream_seed(seed, stream, w)
        v = starts[w]
        walk[0] = v
        steps = 1
        for _ in range(1, walk_length):
            deg = offsets[v + 1] - offsets[v]
            if deg == 0:
                break
            st = xorshift32(st)
            v = nbrs[offsets[v] + bounded(st, deg)]
            walk[steps] = v
            steps += 1
        for a in range(steps):
            for b in range(a + 1, min(a + window + 1, steps)):
                out_src[count] = walk[a]
                out_dst[count] = walk[b]
                count += 1
    return count


@jit
def _draw_positive(offsets, nbrs, v, st, walk_window):
    """One positive for v: a neighbor, or the end of a 1..walk_window step walk."""
    st = xorshift32(st)
    deg = offsets[v + 1] - offsets[v]
    u = nbrs[offsets[v] + bounded(st, deg)]
    if walk_window > 1:
        st = xorshift32(st)
        steps = bounded(st, walk_window)
        for _ in range(steps):
            deg = offsets[u + 1] - offsets[u]
            st = xorshift32(st)
            u = nbrs[offsets[u] + bounded(st, deg)]
    return u, st


@jit
def fill_pool_kernel(offsets, nbrs, part_of, local_id, verts_i, verts_j, i, j, B, walk_window,
                     seed, stream, out_src, out_pos):
    """Draw B positives per source of the pair; keep those landing in the other part.

    Sources of part i come first.  Returns (entries, entries with source in i).
    """
    count = 0
    n_fwd = 0
    for side in range(2):
        if side == 1:
            n_fwd = count
            if i == j:
                break
        verts = verts_i if side == 0 else verts_j
        target = j if side == 0 else i
        for t in range(len(verts)):
            v = verts[t]
            if offsets[v + 1] == offsets[v]:
                continue
            st = stream_seed(seed, stream, v)
            for _ in range(B):
                u, st = _draw_positive(offsets, nbrs, v, st, walk_window)
                if part_of[u] == target and u != v:
                    out_src[count] = local_id[v]
                    out_pos[count] = local_id[u]
                    count += 1
    if i == j:
        n_fwd = count
    return count, n_fwd
