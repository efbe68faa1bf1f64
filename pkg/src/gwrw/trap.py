"""Height-conditioned traps and the in-trap excursion laws.

A trap is the finite subcritical tree hanging below one backbone vertex: a
root vertex on the backbone, an edge to a bud, and the bud's descendants.
This module grows traps bottom-up conditioned on their exact height,
decomposes them into a spine plus subtrap weights, and evaluates the
excursion-time quantities of the walk restricted to a trap: escape
probabilities, the conditioned (no-exit) excursion law, its exact mean
and variance, and the infinite-spine mean-return-time series.

Conventions used throughout:

* Trap vertices are indexed 0..n-1 with vertex 0 the trap root (the
  backbone vertex), vertex 1 the bud, and ``depth`` measured from the
  root (so the deepest point delta has depth H+1).
* ``spine[i]`` is the vertex at distance i from delta, i = 0..H+1, so
  spine[0] = delta, spine[H] = bud, spine[H+1] = root.
* Edge conductances are reported relative to the delta edge, i.e. the
  edge into a vertex at depth d carries beta**(d - (H+1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrapBudget
from .offspring import HeightTail, OffspringLaw, geiger_cn


# ---------------------------------------------------------------------------
# joint first-generation law of the bottom-up construction


@dataclass(frozen=True)
class PhiPsiTable:
    """Joint law of (spine position, first-generation size) at one level.

    ``pairs[r] = (j, k)`` with probability ``probs[r]``: the new level has
    k children in total, the previously built tree is the j-th of them.
    """

    level: int
    pairs: np.ndarray  # (r, 2) int
    probs: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    def mean_psi(self) -> float:
        return float((self.pairs[:, 1] * self.probs).sum() / self.mass)


def phi_psi_table(h: OffspringLaw, tail: HeightTail, n: int) -> PhiPsiTable:
    """Exact joint law at level n by enumerating the finite support.

    The weight of (j, k) is c_n q_k P[Z_n = 0]^(j-1) P[Z_{n+1} = 0]^(k-j)
    for 1 <= j <= k; its total mass is 1 exactly when c_n is consistent
    with the height tail, which the tests pin to 1e-10.
    """
    c_n = geiger_cn(tail, n)
    s_n = 1.0 - tail.tail(n)
    s_n1 = 1.0 - tail.tail(n + 1)
    pairs = []
    probs = []
    for k, q_k in zip(h.support, h.probs):
        if k < 1 or q_k <= 0.0:
            continue
        for j in range(1, k + 1):
            pairs.append((j, k))
            probs.append(c_n * q_k * s_n ** (j - 1) * s_n1 ** (k - j))
    return PhiPsiTable(
        level=n,
        pairs=np.asarray(pairs, dtype=np.int64),
        probs=np.asarray(probs, dtype=np.float64),
    )


def sample_phi_psi(
    table: PhiPsiTable, rng: np.random.Generator, size: int | None = None
):
    """Draw (phi, psi) pairs from the enumerated joint law."""
    p = table.probs / table.mass
    idx = rng.choice(len(p), size=size, p=p)
    out = table.pairs[idx]
    if size is None:
        return int(out[0]), int(out[1])
    return out


def sup_mean_psi(h: OffspringLaw, tail: HeightTail, n_levels: int = 60) -> float:
    """sup_n E[psi_n], the constant entering the subtrap-weight bounds.

    The level laws converge geometrically, so the max over an initial
    stretch together with the limiting law is exact for practical use.
    """
    best = max(phi_psi_table(h, tail, n).mean_psi() for n in range(n_levels))
    ks, qs = h.as_arrays()
    fq = float(np.sum(ks * qs))
    limit = float(np.sum(ks * ks * qs)) / fq
    return max(best, limit)


# ---------------------------------------------------------------------------
# plain and height-conditioned subtrees


@dataclass
class SubTree:
    """A finite rooted tree, parents/depths in breadth-first order."""

    parent: np.ndarray
    depth: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def height(self) -> int:
        return int(self.depth.max())


def sample_h_tree(
    h: OffspringLaw, rng: np.random.Generator, vertex_cap: int = 10_000_000
) -> SubTree:
    """Grow one unconditioned trap-law tree breadth-first."""
    ks, ps = h.as_arrays()
    parent = [-1]
    depth = [0]
    frontier = [0]
    while frontier:
        counts = rng.choice(ks, size=len(frontier), p=ps)
        nxt = []
        for v, c in zip(frontier, counts):
            for _ in range(int(c)):
                parent.append(v)
                depth.append(depth[v] + 1)
                nxt.append(len(parent) - 1)
        if len(parent) > vertex_cap:
            raise TrapBudget(f"trap exceeded {vertex_cap} vertices")
        frontier = nxt
    return SubTree(np.asarray(parent), np.asarray(depth))


def conditioned_subtree(
    h: OffspringLaw,
    max_h: int,
    rng: np.random.Generator,
    vertex_cap: int = 10_000_000,
) -> SubTree:
    """A trap-law tree conditioned on height < max_h, by rejection.

    Acceptance probability is 1 - P[H >= max_h] >= q_0, so this always
    terminates quickly for the subcritical laws in scope.
    """
    if max_h < 1:
        raise ValueError("max_h must be >= 1")
    while True:
        t = sample_h_tree(h, rng, vertex_cap)
        if t.height < max_h:
            return t


def subtrap_weight(subtree: SubTree | None, beta: float) -> float:
    """Conductance weight of one subtrap.

    The subtrap consists of a spine vertex, the edge to the subtree root,
    and the subtree; the edge between its levels j and j+1 carries
    beta**(j+1).  Each subtree vertex at depth d owns the edge above it,
    so the weight is sum_v beta**(1 + d(v)); an absent subtrap weighs 0.
    """
    if subtree is None:
        return 0.0
    return float(np.sum(beta ** (1.0 + subtree.depth)))


# ---------------------------------------------------------------------------
# full bottom-up trap


@dataclass
class Trap:
    """A height-conditioned trap with its spine decomposition."""

    parent: np.ndarray  # parent ids, root has -1
    depth: np.ndarray  # depth from the trap root
    spine: np.ndarray  # spine[i] = vertex at distance i from delta
    height: int  # H, the bud is at distance H from delta
    spine_index: np.ndarray  # for each vertex: index i of its spine attach point

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def delta(self) -> int:
        return int(self.spine[0])

    @property
    def bud(self) -> int:
        return int(self.spine[self.height])

    @property
    def root(self) -> int:
        return int(self.spine[self.height + 1])

    def lambdas(self, beta: float) -> np.ndarray:
        """Subtrap weights per spine index, Lambda_0..Lambda_H.

        Every off-spine vertex at subtrap level l hanging at spine index
        i contributes beta**l; delta never carries subtraps.
        """
        lam = np.zeros(self.height + 1)
        on_spine = np.zeros(self.n_vertices, dtype=bool)
        on_spine[self.spine] = True
        for v in range(self.n_vertices):
            if on_spine[v]:
                continue
            i = int(self.spine_index[v])
            attach = self.spine[i]
            level = int(self.depth[v] - self.depth[attach])
            lam[i] += beta**level
        return lam

    def c_edges(self, beta: float) -> np.ndarray:
        """Unconditioned conductances (edge above each vertex), delta edge = 1."""
        c = beta ** (self.depth.astype(float) - (self.height + 1))
        c[self.root] = 0.0
        return c

    def children_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for v in range(self.n_vertices):
            p = self.parent[v]
            if p >= 0:
                out[p].append(v)
        return out


def _flatten(children_of, delta_chain, height) -> Trap:
    """Assign breadth-first ids to the nested-list tree and locate the spine."""
    # children_of: nested lists, node = list of child nodes; root node given.
    from collections import deque

    root_node = children_of
    ids = {}
    parent = [-1, 0]  # 0 = trap root, 1 = bud
    depth = [0, 1]
    queue = deque([(id(root_node), root_node, 1)])
    ids[id(root_node)] = 1
    while queue:
        _, node, vid = queue.popleft()
        for child in node:
            parent.append(vid)
            depth.append(depth[vid] + 1)
            cid = len(parent) - 1
            ids[id(child)] = cid
            queue.append((id(child), child, cid))
    spine = np.empty(height + 2, dtype=np.int64)
    spine[height + 1] = 0
    for dist_from_bud, node in enumerate(delta_chain):
        spine[height - dist_from_bud] = ids[id(node)]
    parent_arr = np.asarray(parent, dtype=np.int64)
    depth_arr = np.asarray(depth, dtype=np.int64)
    # spine attach point of every vertex: walk up until the path meets the spine
    on_spine = np.zeros(len(parent), dtype=bool)
    on_spine[spine] = True
    spine_pos = np.full(len(parent), -1, dtype=np.int64)
    for i, v in enumerate(spine):
        spine_pos[v] = i
    spine_index = np.full(len(parent), -1, dtype=np.int64)
    for v in range(len(parent)):
        w = v
        while not on_spine[w]:
            w = parent_arr[w]
        spine_index[v] = spine_pos[w]
    return Trap(
        parent=parent_arr,
        depth=depth_arr,
        spine=spine,
        height=height,
        spine_index=spine_index,
    )


def _subtree_to_node(t: SubTree):
    nodes = [[] for _ in range(t.n_vertices)]
    for v in range(1, t.n_vertices):
        nodes[t.parent[v]].append(nodes[v])
    return nodes[0]


def geiger_tree(
    h: OffspringLaw,
    tail: HeightTail,
    height: int,
    rng: np.random.Generator,
    vertex_cap: int = 10_000_000,
) -> Trap:
    """Grow a trap of exactly the requested height, bottom-up.

    Start from the single deepest-leftmost vertex delta and climb: at step
    n+1 draw (phi, psi), give the new spine vertex psi children with the
    old tree in position phi, and fill the remaining positions with
    independent trees conditioned strictly shallower (height < n on the
    left of the distinguished child, < n+1 on its right).
    """
    if height < 0:
        raise ValueError("height must be >= 0")
    node = []  # delta
    delta_chain = [node]  # from current root down to delta, reversed later
    current = node
    for step in range(1, height + 1):
        table = phi_psi_table(h, tail, step - 1)
        phi, psi = sample_phi_psi(table, rng)
        children = []
        for pos in range(1, psi + 1):
            if pos == phi:
                children.append(current)
            elif pos < phi:
                if step - 1 < 1:
                    children.append([])  # height < 0 is impossible; phi=1 forced
                else:
                    children.append(
                        _subtree_to_node(conditioned_subtree(h, step - 1, rng, vertex_cap))
                    )
            else:
                children.append(
                    _subtree_to_node(conditioned_subtree(h, step, rng, vertex_cap))
                )
        current = children
        delta_chain.append(current)
    delta_chain.reverse()  # now bud first ... delta last
    trap = _flatten(current, delta_chain, height)
    assert int(trap.depth.max()) == height + 1
    return trap


# ---------------------------------------------------------------------------
# escape probabilities and the conditioned excursion


def escape_probabilities(height: int, beta: float) -> tuple[float, float]:
    """(p_1, p_2) for a trap of the given height.

    p_1: an excursion entering at the bud reaches the bottom before
    leaving, (1 - 1/beta) / (1 - beta**-(H+1)).
    p_2: from the bottom, the walk exits the trap before returning,
    (1 - 1/beta) / (beta**H - 1/beta).
    """
    if height < 0:
        raise ValueError("height must be >= 0")
    p1 = (1.0 - 1.0 / beta) / (1.0 - beta ** (-(height + 1.0)))
    p2 = (1.0 - 1.0 / beta) / (beta**height - 1.0 / beta)
    return p1, p2


def _spine_h_values(height: int, beta: float) -> np.ndarray:
    """Probability of reaching delta before the root from spine index i."""
    i = np.arange(height + 2, dtype=float)
    return (1.0 - beta ** (i - (height + 1.0))) / (1.0 - beta ** (-(height + 1.0)))


def conditioned_conductances(trap: Trap, beta: float) -> np.ndarray:
    """Edge weights of the walk conditioned to return to delta before exiting.

    This is the harmonic (Doob) transform of the trap network by
    h(v) = P_v[hit delta before root]: each edge's conductance is
    multiplied by the h-values of both endpoints, then normalised so the
    delta edge keeps weight 1.  Off-spine vertices share the h-value of
    their spine attach point, so subtrap edges are scaled as a block.
    The bud-root edge gets weight 0: the conditioned walk never exits.
    """
    H = trap.height
    hvals = _spine_h_values(H, beta)
    c = trap.c_edges(beta)
    h_of_vertex = hvals[trap.spine_index]
    h_of_parent = np.empty_like(h_of_vertex)
    h_of_parent[trap.parent >= 0] = h_of_vertex[trap.parent[trap.parent >= 0]]
    h_of_parent[trap.root] = 0.0
    chat = c * h_of_vertex * h_of_parent / hvals[1]
    chat[trap.root] = 0.0
    return chat


def mean_excursion_time(height: int, lambdas: np.ndarray, beta: float) -> float:
    """Exact mean of the conditioned excursion from delta.

    Twice the total conductance of the harmonic-transformed network:
    spine edges contribute beta**-i (1-beta**(i-H)) (1-beta**(i-H-1)) /
    ((1-beta**-H)(1-beta**-(H+1))), and the subtraps at spine index i
    enter with weight beta**-i h(i)^2 / h(1) Lambda_i, including the
    subtraps hanging at the bud itself.  Reduces to the bare spine value
    when all Lambda_i = 0 and grows to the infinite-spine series as H
    increases.
    """
    if height < 1:
        raise ValueError("height must be >= 1")
    lam = np.asarray(lambdas, dtype=float)
    if len(lam) < height + 1:
        lam = np.concatenate([lam, np.zeros(height + 1 - len(lam))])
    h = _spine_h_values(height, beta)
    i = np.arange(height, dtype=float)  # spine edges i -> i+1, i = 0..H-1
    spine_part = (beta**-i) * h[: height] * h[1 : height + 1] / h[1]
    iv = np.arange(height + 1, dtype=float)
    subtrap_part = (beta**-iv) * h[: height + 1] ** 2 / h[1] * lam[: height + 1]
    return 2.0 * float(spine_part.sum() + subtrap_part.sum())


def mean_excursion_time_of(trap: Trap, beta: float) -> float:
    return mean_excursion_time(trap.height, trap.lambdas(beta), beta)


# ---------------------------------------------------------------------------
# generic finite-network helpers (used for oracles and exact moments)


def transition_matrix(trap: Trap, edge_c: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix of the network walk with the given edge weights.

    ``edge_c[v]`` is the conductance of the edge between v and its parent;
    vertices whose incident conductances all vanish (the root under the
    conditioned weights) get an absorbing self-loop.
    """
    n = trap.n_vertices
    P = np.zeros((n, n))
    for v in range(n):
        p = trap.parent[v]
        if p >= 0 and edge_c[v] > 0.0:
            P[v, p] += edge_c[v]
            P[p, v] += edge_c[v]
    rows = P.sum(axis=1)
    for v in range(n):
        if rows[v] > 0.0:
            P[v] /= rows[v]
        else:
            P[v, v] = 1.0
    return P


def mean_return_time_exact(trap: Trap, edge_c: np.ndarray, x: int) -> float:
    """E_x[first return to x] by solving the linear hitting system.

    Vertices with no incident conductance (the trap root under the
    conditioned weights) are outside the network and are dropped.
    """
    P = transition_matrix(trap, edge_c)
    n = trap.n_vertices
    strength = np.zeros(n)
    for v in range(n):
        p = trap.parent[v]
        if p >= 0 and edge_c[v] > 0.0:
            strength[v] += edge_c[v]
            strength[p] += edge_c[v]
    others = [v for v in range(n) if v != x and strength[v] > 0.0]
    A = np.eye(len(others)) - P[np.ix_(others, others)]
    m = np.linalg.solve(A, np.ones(len(others)))
    full = np.zeros(n)
    full[others] = m
    return 1.0 + float(P[x] @ full)


def mean_return_time_conductance(trap: Trap, edge_c: np.ndarray, x: int) -> float:
    """2 sum_e c(e) / c(x): the stationary-measure identity."""
    total = float(edge_c.sum()) - float(edge_c[trap.root])
    at_x = 0.0
    for v in range(trap.n_vertices):
        p = trap.parent[v]
        if edge_c[v] <= 0.0:
            continue
        if v == x or p == x:
            at_x += edge_c[v]
    return 2.0 * total / at_x


def excursion_moments(trap: Trap, beta: float) -> tuple[float, float]:
    """Exact (mean, variance) of the conditioned excursion via linear solves."""
    chat = conditioned_conductances(trap, beta)
    P = transition_matrix(trap, chat)
    delta = trap.delta
    n = trap.n_vertices
    live = [v for v in range(n) if v != delta and v != trap.root]
    idx = {v: r for r, v in enumerate(live)}
    Pu = P[np.ix_(live, live)]
    A = np.eye(len(live)) - Pu
    m = np.linalg.solve(A, np.ones(len(live)))
    s = np.linalg.solve(A, np.ones(len(live)) + 2.0 * (Pu @ m))
    start = trap.spine[1]
    mu = 1.0 + m[idx[start]]
    second = 1.0 + 2.0 * m[idx[start]] + s[idx[start]]
    return float(mu), float(second - mu * mu)


# ---------------------------------------------------------------------------
# excursion samplers (rejection route and conditioned route)


def _walk_tables(trap: Trap, edge_c: np.ndarray):
    """Per-vertex neighbour lists and cumulative transition weights."""
    n = trap.n_vertices
    nbrs: list[list[int]] = [[] for _ in range(n)]
    wts: list[list[float]] = [[] for _ in range(n)]
    for v in range(n):
        p = trap.parent[v]
        if p >= 0 and edge_c[v] > 0.0:
            nbrs[v].append(p)
            wts[v].append(edge_c[v])
            nbrs[p].append(v)
            wts[p].append(edge_c[v])
    deg = max(len(x) for x in nbrs)
    nbr_arr = np.zeros((n, deg), dtype=np.int64)
    cdf_arr = np.ones((n, deg))
    for v in range(n):
        if not nbrs[v]:
            nbr_arr[v, :] = v
            continue
        w = np.asarray(wts[v])
        cdf = np.cumsum(w) / w.sum()
        k = len(nbrs[v])
        nbr_arr[v, :k] = nbrs[v]
        nbr_arr[v, k:] = nbrs[v][-1]
        cdf_arr[v, :k] = cdf
    return nbr_arr, cdf_arr


def _batch_excursions(
    nbr: np.ndarray,
    cdf: np.ndarray,
    start: int,
    home: int,
    absorb: int,
    count: int,
    rng: np.random.Generator,
    step_cap: int = 100_000_000,
):
    """Run `count` excursions delta -> (delta | absorb) in lockstep.

    Returns (lengths, absorbed): the step count of each excursion and
    whether it ended at the absorbing vertex instead of home.
    """
    pos = np.full(count, start, dtype=np.int64)
    length = np.ones(count, dtype=np.int64)  # the forced first step
    absorbed = np.zeros(count, dtype=bool)
    active = np.arange(count)
    total = 0
    while active.size:
        u = rng.random(active.size)
        rows = pos[active]
        choice = (u[:, None] > cdf[rows]).sum(axis=1)
        nxt = nbr[rows, choice]
        pos[active] = nxt
        length[active] += 1
        done = (nxt == home) | (nxt == absorb)
        if done.any():
            absorbed[active[done]] = nxt[done] == absorb
            active = active[~done]
        total += active.size
        if total > step_cap:
            raise TrapBudget("excursion sampler exceeded its step cap")
    return length, absorbed


def excursion_lengths_rejection(
    trap: Trap, beta: float, count: int, rng: np.random.Generator
):
    """Sample excursion lengths by running the plain walk and discarding exits.

    Returns (lengths of accepted excursions, number of rejected runs).
    Rejected runs end at the trap root; their probability is p_2(H).
    """
    nbr, cdf = _walk_tables(trap, trap.c_edges(beta))
    lengths, absorbed = _batch_excursions(
        nbr, cdf, int(trap.spine[1]), trap.delta, trap.root, count, rng
    )
    return lengths[~absorbed], int(absorbed.sum())


def excursion_lengths_conditioned(
    trap: Trap, beta: float, count: int, rng: np.random.Generator
):
    """Sample excursion lengths from the harmonic-transformed network directly."""
    nbr, cdf = _walk_tables(trap, conditioned_conductances(trap, beta))
    lengths, absorbed = _batch_excursions(
        nbr, cdf, int(trap.spine[1]), trap.delta, trap.root, count, rng
    )
    assert not absorbed.any()
    return lengths


def simulate_excursion(
    trap: Trap, beta: float, rng: np.random.Generator
) -> int | None:
    """One unconditioned run from delta; None when it exits the trap first."""
    lengths, rejected = excursion_lengths_rejection(trap, beta, 1, rng)
    if rejected:
        return None
    return int(lengths[0])


# ---------------------------------------------------------------------------
# the infinite-spine return-time series


@dataclass(frozen=True)
class SInfinitySample:
    """One draw of the mean return time to the bottom of an infinite trap."""

    value: float
    truncation_level: int
    error_bound: float


def _lambda_remainder_constant(
    params, h: OffspringLaw, tail: HeightTail
) -> float:
    """Constant C in E[Lambda_i] <= C (beta f'(q))**i."""
    c_psi = sup_mean_psi(h, tail)
    bf = params.beta * params.fprime_q
    return c_psi / (1.0 - 1.0 / bf)


def s_infinity_truncation(params, h: OffspringLaw, tail: HeightTail, tol: float):
    """Smallest level I whose analytic mean remainder drops below tol."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    beta, fq = params.beta, params.fprime_q
    c_hat = _lambda_remainder_constant(params, h, tail)

    def remainder(level: int) -> float:
        geo = beta ** -(level + 1.0) / (1.0 - 1.0 / beta)
        lam = c_hat * fq ** (level + 1.0) / (1.0 - fq)
        return 2.0 * (geo + lam)

    level = 0
    while remainder(level) >= tol:
        level += 1
        if level > 100_000:
            raise ValueError("tolerance unreachable; check parameters")
    return level, remainder(level)


def _batch_subtrap_pis(
    h: OffspringLaw,
    max_heights: np.ndarray,
    beta: float,
    rng: np.random.Generator,
    vertex_cap: int = 10_000_000,
) -> np.ndarray:
    """Pi weights of many independent subtraps, conditioned height < max_heights[i].

    Level-synchronous rejection sampling: all trees grow one generation per
    pass; a tree that reaches its height bound restarts from scratch.
    """
    ks, ps = h.as_arrays()
    m = len(max_heights)
    pis = np.full(m, beta)  # level-1 vertex (the subtree root) weighs beta
    z = np.ones(m, dtype=np.int64)  # current-generation sizes
    level = np.zeros(m, dtype=np.int64)
    active = np.arange(m)
    budget = 0
    while active.size:
        counts = z[active]
        total = int(counts.sum())
        budget += total
        if budget > vertex_cap:
            raise TrapBudget("subtrap sampler exceeded its vertex cap")
        draws = rng.choice(ks, size=total, p=ps)
        seg = np.repeat(np.arange(active.size), counts)
        z_next = np.bincount(seg, weights=draws, minlength=active.size).astype(
            np.int64
        )
        level_next = level[active] + 1
        grew = z_next > 0
        # trees whose new generation reaches the bound restart from scratch
        bad = grew & (level_next >= max_heights[active])
        if bad.any():
            idx = active[bad]
            pis[idx] = beta
            z[idx] = 1
            level[idx] = 0
        done = ~grew
        if done.any():
            pass  # weight already complete
        cont = grew & ~bad
        if cont.any():
            idx = active[cont]
            z[idx] = z_next[cont]
            level[idx] = level_next[cont]
            # vertices at subtrap level (level+1) weigh beta**(level+1)
            pis[idx] += z_next[cont] * beta ** (level_next[cont] + 1.0)
        active = active[cont | bad]
    return pis


def sample_lambdas(
    params,
    h: OffspringLaw,
    tail: HeightTail,
    levels: int,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(n_samples, levels+1) array of subtrap weights Lambda_0..Lambda_levels.

    Lambda_0 is identically 0; level i >= 1 draws (phi_i, psi_i) and
    attaches phi_i - 1 subtraps conditioned strictly below i - 1 on the
    left and psi_i - phi_i conditioned strictly below i on the right.
    """
    out = np.zeros((n_samples, levels + 1))
    for i in range(1, levels + 1):
        table = phi_psi_table(h, tail, i - 1)
        pairs = sample_phi_psi(table, rng, size=n_samples)
        left = pairs[:, 0] - 1
        right = pairs[:, 1] - pairs[:, 0]
        bounds = []
        owners = []
        if i - 1 >= 1:
            owners.append(np.repeat(np.arange(n_samples), left))
            bounds.append(np.full(int(left.sum()), i - 1, dtype=np.int64))
        owners.append(np.repeat(np.arange(n_samples), right))
        bounds.append(np.full(int(right.sum()), i, dtype=np.int64))
        owner = np.concatenate(owners)
        bound = np.concatenate(bounds)
        if len(owner) == 0:
            continue
        pis = _batch_subtrap_pis(h, bound, params.beta, rng)
        out[:, i] = np.bincount(owner, weights=pis, minlength=n_samples)
    return out


def sample_s_infinity(
    params,
    h: OffspringLaw,
    tail: HeightTail,
    tol: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draws of the series 2 sum_i beta**-i (1 + Lambda_i), truncated at tol.

    The reported error bound is the analytic bound on the truncated mean
    remainder; halving tol can only move a sample by less than the
    previous bound.
    """
    level, bound = s_infinity_truncation(params, h, tail, tol)
    n = 1 if size is None else size
    lam = sample_lambdas(params, h, tail, level, n, rng)
    weights = params.beta ** -np.arange(level + 1.0)
    values = 2.0 * ((1.0 + lam) * weights).sum(axis=1)
    if size is None:
        return SInfinitySample(float(values[0]), level, bound)
    return values, level, bound


def s_infinity_mean_bound(params, h: OffspringLaw, tail: HeightTail) -> float:
    """Closed-form upper bound for the mean of the return-time series."""
    beta, fq = params.beta, params.fprime_q
    c_psi = sup_mean_psi(h, tail)
    return (
        2.0
        * c_psi
        / (1.0 - 1.0 / (beta * fq))
        * (beta / (beta - 1.0) + 1.0 / (1.0 - fq))
    )


# ---------------------------------------------------------------------------
# scaled in-trap time: the walk route to the limit variable


def sample_scaled_trap_time(
    params,
    h: OffspringLaw,
    tail: HeightTail,
    height: int,
    w_support: np.ndarray,
    w_probs: np.ndarray,
    replicas: int,
    rng: np.random.Generator,
    exact_threshold: int = 4096,
) -> np.ndarray:
    """Samples of (time spent in bottom excursions) / beta**H for one trap law.

    Per replica: grow a trap of exactly the given height, draw the number
    of entries W, thin to the entries that reach the bottom (each does so
    with probability p_1(H)), and give each a geometric number of
    conditioned bottom excursions whose lengths the walk accumulates.
    Excursion-count blocks up to ``exact_threshold`` are walked exactly;
    larger blocks use the exact per-trap excursion mean and variance in a
    central-limit surrogate, whose relative error at that size is far
    below any tolerance used downstream.
    """
    beta = params.beta
    p1, p2 = escape_probabilities(height, beta)
    log1mp2 = math.log1p(-p2)
    out = np.empty(replicas)
    w_probs = np.asarray(w_probs, dtype=float)
    w_probs = w_probs / w_probs.sum()
    scale = beta ** -float(height)
    for r in range(replicas):
        w = int(rng.choice(w_support, p=w_probs))
        b = rng.binomial(w, p1) if w > 0 else 0
        if b == 0:
            out[r] = 0.0
            continue
        trap = geiger_tree(h, tail, height, rng)
        mu, var = excursion_moments(trap, beta)
        total = 0.0
        for _ in range(b):
            n_exc = int(math.log(1.0 - rng.random()) / log1mp2)
            if n_exc == 0:
                continue
            if n_exc <= exact_threshold:
                total += float(
                    excursion_lengths_conditioned(trap, beta, n_exc, rng).sum()
                )
            else:
                block = n_exc * mu + math.sqrt(n_exc * var) * rng.standard_normal()
                total += max(block, 2.0 * n_exc)
        out[r] = total * scale
    return out
