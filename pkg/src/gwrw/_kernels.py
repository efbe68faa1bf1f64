"""Compiled kernels: lazy tree growth and the biased walk.

Everything here operates on flat arrays so numba can compile it.  The
per-vertex randomness is keyed by the vertex's path from the root (see
``rngstream``), which makes tree realizations independent of expansion
order; walk randomness comes from sequential per-replica streams.

Vertex kinds: 0 root, 1 backbone, 2 bud, 3 trap interior.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .rngstream import child_key, stream_key, uniform_at

KIND_ROOT = 0
KIND_BACKBONE = 1
KIND_BUD = 2
KIND_INTERIOR = 3

STATUS_OK = 0
STATUS_BUDGET = 1
STATUS_TRAP_CAP = 2


@njit(cache=True, nogil=True)
def _pick(support, cdf, u):
    """Inverse-CDF draw from a small finite law."""
    for i in range(len(cdf)):
        if u < cdf[i]:
            return support[i]
    return support[len(support) - 1]


@njit(cache=True, nogil=True)
def _pick_row(row, u):
    """Index drawn from one cumulative row (bud counts)."""
    for i in range(len(row)):
        if u < row[i]:
            return np.int64(i)
    return np.int64(len(row) - 1)


@njit(cache=True, nogil=True)
def _grow_i8(a, cap):
    out = np.empty(cap, dtype=np.int8)
    out[: len(a)] = a
    return out


@njit(cache=True, nogil=True)
def _grow_i64(a, cap):
    out = np.empty(cap, dtype=np.int64)
    out[: len(a)] = a
    return out


@njit(cache=True, nogil=True)
def _grow_i64_fill(a, cap):
    out = np.full(cap, -1, dtype=np.int64)
    out[: len(a)] = a
    return out


@njit(cache=True, nogil=True)
def _grow_u64(a, cap):
    out = np.empty(cap, dtype=np.uint64)
    out[: len(a)] = a
    return out


@njit(cache=True, nogil=True)
def expand_at(
    parent,
    depth,
    kind,
    key,
    first_child,
    n_children,
    trap_bud,
    n_used,
    v,
    g_supp,
    g_cdf,
    bud_cdf,
    h_supp,
    h_cdf,
):
    """Realize vertex v's children.  Caller guarantees spare capacity.

    Backbone vertices (and the root) draw a surviving-offspring degree and
    a bud count; buds and trap interiors draw from the trap law.  Children
    are appended contiguously, backbone children before buds.  Repeated
    calls are no-ops.  Returns the new vertex count.
    """
    if n_children[v] >= 0:
        return n_used
    k = kind[v]
    u0 = uniform_at(key[v], 0)
    n_backbone = np.int64(0)
    if k == KIND_ROOT or k == KIND_BACKBONE:
        j = _pick(g_supp, g_cdf, u0)
        buds = _pick_row(bud_cdf[j], uniform_at(key[v], 1))
        n_backbone = j
        total = j + buds
    else:
        total = _pick(h_supp, h_cdf, u0)
    first_child[v] = n_used
    n_children[v] = total
    for c in range(total):
        w = n_used + c
        parent[w] = v
        depth[w] = depth[v] + 1
        key[w] = child_key(key[v], c)
        first_child[w] = -1
        n_children[w] = -1
        if k == KIND_ROOT or k == KIND_BACKBONE:
            if c < n_backbone:
                kind[w] = KIND_BACKBONE
                trap_bud[w] = -1
            else:
                kind[w] = KIND_BUD
                trap_bud[w] = w
        else:
            kind[w] = KIND_INTERIOR
            trap_bud[w] = trap_bud[v]
    return n_used + total


@njit(cache=True, nogil=True)
def expand_trap(
    parent,
    depth,
    kind,
    key,
    first_child,
    n_children,
    trap_bud,
    trap_height,
    trap_delta,
    n_used,
    bud,
    g_supp,
    g_cdf,
    bud_cdf,
    h_supp,
    h_cdf,
    max_support,
    trap_cap,
):
    """Fully realize the trap below a bud; record its height and bottom.

    Grows the arrays as needed and returns them (they may be reallocated)
    together with the new vertex count and a status flag.  The trap's
    vertices are appended breadth-first with siblings left to right, so
    the deepest vertex with the smallest id is the leftmost bottom point.
    """
    status = STATUS_OK
    if trap_height[bud] >= 0:
        return (
            parent, depth, kind, key, first_child, n_children,
            trap_bud, trap_height, trap_delta, n_used, status,
        )
    start = n_used
    cursor = bud
    scan = n_used  # first id of the trap block
    cap = len(parent)
    while True:
        if n_used + max_support + 1 > cap:
            while cap < n_used + max_support + 1:
                cap *= 2
            parent = _grow_i64(parent, cap)
            depth = _grow_i64(depth, cap)
            kind = _grow_i8(kind, cap)
            key = _grow_u64(key, cap)
            first_child = _grow_i64(first_child, cap)
            n_children = _grow_i64(n_children, cap)
            trap_bud = _grow_i64(trap_bud, cap)
            trap_height = _grow_i64_fill(trap_height, cap)
            trap_delta = _grow_i64_fill(trap_delta, cap)
        n_used = expand_at(
            parent, depth, kind, key, first_child, n_children, trap_bud,
            n_used, cursor, g_supp, g_cdf, bud_cdf, h_supp, h_cdf,
        )
        if n_used - start > trap_cap:
            status = STATUS_TRAP_CAP
            break
        if scan >= n_used:
            break
        cursor = scan
        scan += 1
    if status == STATUS_OK:
        best_depth = depth[bud]
        best = bud
        for w in range(start, n_used):
            if depth[w] > best_depth:
                best_depth = depth[w]
                best = w
        trap_height[bud] = best_depth - depth[bud]
        trap_delta[bud] = best
    return (
        parent, depth, kind, key, first_child, n_children,
        trap_bud, trap_height, trap_delta, n_used, status,
    )


@njit(cache=True, nogil=True)
def hitting_walk(
    env_key,
    walk_key,
    n_target,
    h_big,
    beta,
    g_supp,
    g_cdf,
    bud_cdf,
    h_supp,
    h_cdf,
    max_support,
    step_budget,
    trap_cap,
    record,
):
    """Walk from the root until depth ``n_target`` is first reached.

    Returns the instrumented record
    (delta, chi, chi_star, delta_y, max_backtrack, status, n_used)
    followed by the realized tree arrays and, when ``record`` is set, the
    visited-vertex trajectory.

    chi counts steps with an endpoint inside a trap of height >= h_big;
    chi_star counts, per entry into such a trap, the steps spent in
    completed loops from the trap's bottom point back to itself.
    """
    cap = 4096
    parent = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    kind = np.empty(cap, dtype=np.int8)
    key = np.empty(cap, dtype=np.uint64)
    first_child = np.empty(cap, dtype=np.int64)
    n_children = np.empty(cap, dtype=np.int64)
    trap_bud = np.empty(cap, dtype=np.int64)
    trap_height = np.full(cap, -1, dtype=np.int64)
    trap_delta = np.full(cap, -1, dtype=np.int64)

    parent[0] = -1
    depth[0] = 0
    kind[0] = KIND_ROOT
    key[0] = env_key
    first_child[0] = -1
    n_children[0] = -1
    trap_bud[0] = -1
    n_used = 1

    traj_len = step_budget + 1 if record else 1
    traj = np.empty(traj_len, dtype=np.int64)
    traj[0] = 0

    cur = np.int64(0)
    steps = 0
    chi = 0
    chi_star = 0
    delta_y = 0
    max_level = np.int64(0)
    max_backtrack = np.int64(0)
    ucount = 0
    status = STATUS_OK

    in_trap = np.int64(-1)
    in_big = False
    seen_delta = False
    since_delta = 0

    while depth[cur] < n_target:
        if steps >= step_budget:
            status = STATUS_BUDGET
            break
        if n_used + max_support + 1 > len(parent):
            cap = 2 * len(parent)
            parent = _grow_i64(parent, cap)
            depth = _grow_i64(depth, cap)
            kind = _grow_i8(kind, cap)
            key = _grow_u64(key, cap)
            first_child = _grow_i64(first_child, cap)
            n_children = _grow_i64(n_children, cap)
            trap_bud = _grow_i64(trap_bud, cap)
            trap_height = _grow_i64_fill(trap_height, cap)
            trap_delta = _grow_i64_fill(trap_delta, cap)
        if n_children[cur] < 0:
            n_used = expand_at(
                parent, depth, kind, key, first_child, n_children, trap_bud,
                n_used, cur, g_supp, g_cdf, bud_cdf, h_supp, h_cdf,
            )

        k = n_children[cur]
        u = uniform_at(walk_key, ucount)
        ucount += 1
        if kind[cur] == KIND_ROOT:
            idx = np.int64(u * k)
            if idx >= k:
                idx = k - 1
            nxt = first_child[cur] + idx
        elif k == 0:
            nxt = parent[cur]
        else:
            thr = 1.0 / (1.0 + beta * k)
            if u < thr:
                nxt = parent[cur]
            else:
                idx = np.int64((1.0 - u) * (1.0 + beta * k) / beta)
                if idx >= k:
                    idx = k - 1
                nxt = first_child[cur] + idx

        # entering a bud: realize its trap before classifying the step
        if kind[nxt] == KIND_BUD and trap_height[nxt] < 0:
            out = expand_trap(
                parent, depth, kind, key, first_child, n_children, trap_bud,
                trap_height, trap_delta, n_used, nxt,
                g_supp, g_cdf, bud_cdf, h_supp, h_cdf, max_support, trap_cap,
            )
            parent, depth, kind, key = out[0], out[1], out[2], out[3]
            first_child, n_children, trap_bud = out[4], out[5], out[6]
            trap_height, trap_delta, n_used, st = out[7], out[8], out[9], out[10]
            if st != STATUS_OK:
                status = st
                break

        cur_bb = kind[cur] <= KIND_BACKBONE
        nxt_bb = kind[nxt] <= KIND_BACKBONE
        if cur_bb and nxt_bb:
            delta_y += 1
        else:
            if cur_bb and not nxt_bb:
                in_trap = trap_bud[nxt]
                in_big = trap_height[in_trap] >= h_big
                seen_delta = False
                since_delta = 0
            if in_big:
                chi += 1
                if seen_delta:
                    since_delta += 1
                    if nxt == trap_delta[in_trap]:
                        chi_star += since_delta
                        since_delta = 0
                elif nxt == trap_delta[in_trap]:
                    seen_delta = True
                    since_delta = 0
            if nxt_bb:
                in_trap = -1
                in_big = False
                seen_delta = False
                since_delta = 0

        cur = nxt
        steps += 1
        if record:
            traj[steps] = cur
        lvl = depth[cur]
        if lvl > max_level:
            max_level = lvl
        if max_level - lvl > max_backtrack:
            max_backtrack = max_level - lvl

    n_traj = steps + 1 if record else 0
    return (
        steps,
        chi,
        chi_star,
        delta_y,
        max_backtrack,
        status,
        n_used,
        parent[:n_used],
        depth[:n_used],
        kind[:n_used],
        key[:n_used],
        first_child[:n_used],
        n_children[:n_used],
        trap_bud[:n_used],
        trap_height[:n_used],
        trap_delta[:n_used],
        traj[:n_traj],
    )


@njit(cache=True, nogil=True)
def hitting_batch(
    seed,
    replica_lo,
    replica_hi,
    n_target,
    h_big,
    beta,
    g_supp,
    g_cdf,
    bud_cdf,
    h_supp,
    h_cdf,
    max_support,
    step_budget,
    trap_cap,
):
    """Independent hitting-time replicas; one row per replica."""
    m = replica_hi - replica_lo
    delta = np.empty(m, dtype=np.int64)
    chi = np.empty(m, dtype=np.int64)
    chi_star = np.empty(m, dtype=np.int64)
    delta_y = np.empty(m, dtype=np.int64)
    backtrack = np.empty(m, dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    for i in range(m):
        r = replica_lo + i
        env_key = stream_key(np.uint64(seed), np.uint64(2 * r))
        walk_key = stream_key(np.uint64(seed), np.uint64(2 * r + 1))
        out = hitting_walk(
            env_key, walk_key, n_target, h_big, beta,
            g_supp, g_cdf, bud_cdf, h_supp, h_cdf, max_support,
            step_budget, trap_cap, False,
        )
        delta[i] = out[0]
        chi[i] = out[1]
        chi_star[i] = out[2]
        delta_y[i] = out[3]
        backtrack[i] = out[4]
        status[i] = out[5]
    return delta, chi, chi_star, delta_y, backtrack, status


@njit(cache=True, nogil=True)
def _draw_height(tail, u):
    """Trap height from its exact tail law: largest h with u < tail[h]."""
    h = np.int64(0)
    hi = len(tail) - 1
    while h < hi and u < tail[h + 1]:
        h += 1
    return h


@njit(cache=True, nogil=True)
def backbone_pick(zstar, beta, u):
    """The embedded backbone move: -1 for the parent, else a child index."""
    thr = 1.0 / (zstar * beta + 1.0)
    if u < thr:
        return np.int64(-1)
    idx = np.int64((1.0 - u) * (zstar * beta + 1.0) / beta)
    if idx >= zstar:
        idx = zstar - 1
    return idx


@njit(cache=True, nogil=True)
def backbone_trajectory(seed, replica, horizon, beta, g_supp, g_cdf):
    """Drive the embedded backbone walk for ``horizon`` moves.

    Returns (visited vertex ids per epoch, coupled one-dimensional walk
    values per epoch).  Epoch 0 is the root before any move.
    """
    cap = 4 * horizon + 16
    zstar = np.empty(cap, dtype=np.int64)
    first_child = np.full(cap, -1, dtype=np.int64)
    parent = np.empty(cap, dtype=np.int64)
    key = np.empty(cap, dtype=np.uint64)
    parent[0] = -1
    key[0] = stream_key(np.uint64(seed), np.uint64(2 * replica))
    zstar[0] = _pick(g_supp, g_cdf, uniform_at(key[0], 0))
    n_used = 1
    walk_key = stream_key(np.uint64(seed), np.uint64(2 * replica + 1))

    ys = np.empty(horizon + 1, dtype=np.int64)
    zs = np.empty(horizon + 1, dtype=np.int64)
    ys[0] = 0
    zs[0] = 0
    cur = np.int64(0)
    z = np.int64(0)
    for t in range(1, horizon + 1):
        u = uniform_at(walk_key, t - 1)
        z += -1 if u < 1.0 / (beta + 1.0) else 1
        if cur == 0:
            j = zstar[0]
            idx = np.int64(u * j)
            if idx >= j:
                idx = j - 1
            mv = idx
        else:
            mv = backbone_pick(zstar[cur], beta, u)
        if mv < 0:
            cur = parent[cur]
        else:
            if first_child[cur] < 0:
                if n_used + zstar[cur] > cap:
                    cap = 2 * (n_used + zstar[cur]) + 16
                    zstar = _grow_i64(zstar, cap)
                    first_child = _grow_i64_fill(first_child, cap)
                    parent = _grow_i64(parent, cap)
                    key = _grow_u64(key, cap)
                first_child[cur] = n_used
                for c in range(zstar[cur]):
                    w = n_used + c
                    parent[w] = cur
                    key[w] = child_key(key[cur], c)
                    zstar[w] = _pick(g_supp, g_cdf, uniform_at(key[w], 0))
                n_used += zstar[cur]
            cur = first_child[cur] + mv
        ys[t] = cur
        zs[t] = z
    return ys, zs


@njit(cache=True, nogil=True)
def _wn_geometric(u, p_backbone):
    """Failures before the first backbone move, from one uniform."""
    if p_backbone >= 1.0:
        return np.int64(0)
    return np.int64(np.log(1.0 - u) / np.log(1.0 - p_backbone))


@njit(cache=True, nogil=True)
def wn_single(
    seed,
    replica,
    h_big,
    beta,
    g_supp,
    g_cdf,
    bud_cdf,
    tail,
    confirm_window,
    max_epochs,
    max_attempts,
):
    """One replica of the big-trap visit count W.

    Grows the backbone with per-vertex bud counts and trap heights, drives
    the embedded walk conditioned on the origin being a super-regeneration
    time (rejection over uniform streams), walks to the first vertex
    carrying a trap of height >= h_big, and counts entries into the first
    such trap until a later super-regeneration is confirmed.

    Trap interiors are never realized: entries into the designated bud are
    a thinned subsequence of the geometric bud-excursion counts between
    embedded moves, which has exactly the law of the transition count.

    Returns (W, status, epochs_used, attempts).
    """
    cap = 8192
    zstar = np.empty(cap, dtype=np.int64)
    nbud = np.empty(cap, dtype=np.int64)
    kmax = np.empty(cap, dtype=np.int64)
    first_child = np.full(cap, -1, dtype=np.int64)
    parent = np.empty(cap, dtype=np.int64)
    key = np.empty(cap, dtype=np.uint64)

    env_key = stream_key(np.uint64(seed), np.uint64(2 * replica))
    parent[0] = -1
    key[0] = env_key
    zstar[0] = _pick(g_supp, g_cdf, uniform_at(env_key, 0))
    nbud[0] = _pick_row(bud_cdf[zstar[0]], uniform_at(env_key, 1))
    km = np.int64(-1)
    for i in range(nbud[0]):
        hh = _draw_height(tail, uniform_at(env_key, 2 + i))
        if hh > km:
            km = hh
    kmax[0] = km
    n_used = 1

    base_key = stream_key(np.uint64(seed), np.uint64(2 * replica + 1))
    for attempt in range(max_attempts):
        walk_key = child_key(base_key, 2 * attempt)
        aux_key = child_key(base_key, 2 * attempt + 1)
        cur = np.int64(0)
        z = np.int64(0)
        w_count = np.int64(0)
        found_epoch = np.int64(-1)
        target = np.int64(-1)
        cand_epoch = np.int64(-1)
        cand_z = np.int64(0)
        runmax = np.int64(0)
        aux_count = 0
        rejected = False

        if kmax[0] >= h_big:
            found_epoch = 0
            target = 0

        for t in range(1, max_epochs + 1):
            # bud-entry counting happens before the embedded move
            if target >= 0 and cur == target:
                ztot = zstar[cur]
                nb = nbud[cur]
                if cur == 0:
                    p_bb = ztot / (ztot + nb)
                else:
                    p_bb = (1.0 + beta * ztot) / (1.0 + beta * (ztot + nb))
                ua = uniform_at(aux_key, aux_count)
                aux_count += 1
                m = _wn_geometric(ua, p_bb)
                for _ in range(m):
                    ub = uniform_at(aux_key, aux_count)
                    aux_count += 1
                    if ub < 1.0 / nb:
                        w_count += 1

            u = uniform_at(walk_key, t - 1)
            z += -1 if u < 1.0 / (beta + 1.0) else 1

            # origin-super-regeneration rejection phase
            if t <= confirm_window and z <= 0:
                rejected = True
                break

            if cur == 0:
                j = zstar[0]
                idx = np.int64(u * j)
                if idx >= j:
                    idx = j - 1
                mv = idx
            else:
                mv = backbone_pick(zstar[cur], beta, u)
            if mv < 0:
                cur = parent[cur]
            else:
                if first_child[cur] < 0:
                    need = n_used + zstar[cur]
                    if need > cap:
                        while cap < need:
                            cap *= 2
                        zstar = _grow_i64(zstar, cap)
                        nbud = _grow_i64(nbud, cap)
                        kmax = _grow_i64(kmax, cap)
                        first_child = _grow_i64_fill(first_child, cap)
                        parent = _grow_i64(parent, cap)
                        key = _grow_u64(key, cap)
                    first_child[cur] = n_used
                    for c in range(zstar[cur]):
                        w = n_used + c
                        parent[w] = cur
                        key[w] = child_key(key[cur], c)
                        zstar[w] = _pick(g_supp, g_cdf, uniform_at(key[w], 0))
                        nbud[w] = _pick_row(bud_cdf[zstar[w]], uniform_at(key[w], 1))
                        kmw = np.int64(-1)
                        for i in range(nbud[w]):
                            hh = _draw_height(tail, uniform_at(key[w], 2 + i))
                            if hh > kmw:
                                kmw = hh
                        kmax[w] = kmw
                    n_used += zstar[cur]
                cur = first_child[cur] + mv

            if found_epoch < 0 and kmax[cur] >= h_big:
                found_epoch = t
                target = cur

            # super-regeneration confirmation after the trap vertex
            if found_epoch >= 0 and t > found_epoch:
                if cand_epoch >= 0 and z <= cand_z:
                    cand_epoch = -1
                if z > runmax and cand_epoch < 0:
                    cand_epoch = t
                    cand_z = z
                if cand_epoch >= 0 and t - cand_epoch >= confirm_window:
                    return w_count, STATUS_OK, np.int64(t), np.int64(attempt + 1)
            if z > runmax:
                runmax = z

        if not rejected:
            return w_count, STATUS_BUDGET, np.int64(max_epochs), np.int64(attempt + 1)
    return np.int64(0), STATUS_BUDGET, np.int64(0), np.int64(max_attempts)


@njit(cache=True, nogil=True)
def wn_batch(
    seed,
    replica_lo,
    replica_hi,
    h_big,
    beta,
    g_supp,
    g_cdf,
    bud_cdf,
    tail,
    confirm_window,
    max_epochs,
    max_attempts,
):
    m = replica_hi - replica_lo
    w = np.empty(m, dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    epochs = np.empty(m, dtype=np.int64)
    attempts = np.empty(m, dtype=np.int64)
    for i in range(m):
        out = wn_single(
            seed, replica_lo + i, h_big, beta, g_supp, g_cdf, bud_cdf, tail,
            confirm_window, max_epochs, max_attempts,
        )
        w[i] = out[0]
        status[i] = out[1]
        epochs[i] = out[2]
        attempts[i] = out[3]
    return w, status, epochs, attempts


@njit(cache=True, nogil=True)
def root_degree_batch(seed, count, g_supp, g_cdf, bud_cdf):
    """Total root degree (surviving + buds) over many fresh environments."""
    out = np.empty(count, dtype=np.int64)
    for r in range(count):
        env_key = stream_key(np.uint64(seed), np.uint64(2 * r))
        j = _pick(g_supp, g_cdf, uniform_at(env_key, 0))
        buds = _pick_row(bud_cdf[j], uniform_at(env_key, 1))
        out[r] = j + buds
    return out
