"""Lazy growth of the infinite tree conditioned on survival.

The tree is grown through its backbone decomposition: vertices with an
infinite line of descent form the backbone (drawn from the transformed
no-extinction law), each backbone vertex carries a random number of buds,
and every bud roots a finite subcritical trap.  Vertices are realized on
first touch only, and every vertex draws its children from a stream keyed
by its path from the root, so the realized tree is a deterministic
function of (seed, stream) regardless of expansion order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import TrapBudget
from .offspring import DerivedParams, backbone_bud_law, g_law, h_law, height_tail
from .rngstream import stream_key

KIND_NAMES = ("root", "backbone", "bud", "trap")


@dataclass(frozen=True)
class KernelTables:
    """Sampling tables shared by the kernels, precomputed from the law."""

    beta: float
    g_supp: np.ndarray
    g_cdf: np.ndarray
    bud_cdf: np.ndarray
    h_supp: np.ndarray
    h_cdf: np.ndarray
    tail: np.ndarray
    max_support: int


def kernel_tables(params: DerivedParams, tail_len: int = 200) -> KernelTables:
    law, q = params.law, params.q
    g = g_law(law, q)
    h = h_law(law, q)
    g_supp, g_probs = g.as_arrays()
    h_supp, h_probs = h.as_arrays()
    kmax = law.max_support
    bud_cdf = np.ones((kmax + 1, kmax + 1))
    for j in g.support:
        bud = backbone_bud_law(law, q, j)
        pdf = np.zeros(kmax + 1)
        for i, p in bud.items():
            pdf[i] = p
        bud_cdf[j] = np.cumsum(pdf)
    tail = height_tail(h, n_max=tail_len)
    return KernelTables(
        beta=params.beta,
        g_supp=g_supp,
        g_cdf=np.cumsum(g_probs),
        bud_cdf=bud_cdf,
        h_supp=h_supp,
        h_cdf=np.cumsum(h_probs),
        tail=tail.values.copy(),
        max_support=kmax,
    )


@dataclass(frozen=True)
class Vertex:
    """Read-only view of one tree vertex."""

    id: int
    kind: str
    parent: int | None
    children: tuple[int, ...] | None  # None until expanded
    depth: int


class Environment:
    """One lazily grown environment (tree plus conductance structure).

    Single-owner mutable: expansion mutates internal arrays.  Distinct
    instances are independent given distinct (seed, stream) pairs.  Edge
    conductances are implicit: the edge above a vertex at depth d carries
    beta**(d-1), and consumers work with ratios or logs, never the raw
    powers.
    """

    def __init__(
        self,
        params: DerivedParams,
        seed: int,
        stream: int = 0,
        trap_vertex_cap: int = 10_000_000,
        tables: KernelTables | None = None,
    ):
        self.params = params
        self.seed = int(seed)
        self.stream = int(stream)
        self.trap_vertex_cap = int(trap_vertex_cap)
        self.tables = tables if tables is not None else kernel_tables(params)
        cap = 256
        self._parent = np.empty(cap, dtype=np.int64)
        self._depth = np.empty(cap, dtype=np.int64)
        self._kind = np.empty(cap, dtype=np.int8)
        self._key = np.empty(cap, dtype=np.uint64)
        self._first_child = np.empty(cap, dtype=np.int64)
        self._n_children = np.empty(cap, dtype=np.int64)
        self._trap_bud = np.empty(cap, dtype=np.int64)
        self._trap_height = np.full(cap, -1, dtype=np.int64)
        self._trap_delta = np.full(cap, -1, dtype=np.int64)
        self.root_key = np.uint64(stream_key(np.uint64(self.seed), np.uint64(self.stream)))
        self._parent[0] = -1
        self._depth[0] = 0
        self._kind[0] = K.KIND_ROOT
        self._key[0] = self.root_key
        self._first_child[0] = -1
        self._n_children[0] = -1
        self._trap_bud[0] = -1
        self.n_vertices = 1

    # -- growth ------------------------------------------------------------

    def _ensure_capacity(self, extra: int) -> None:
        need = self.n_vertices + extra
        cap = len(self._parent)
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        grow = lambda a, fill=None: np.concatenate(  # noqa: E731
            [a, np.full(cap - len(a), -1 if fill else 0, dtype=a.dtype)]
        )
        self._parent = grow(self._parent)
        self._depth = grow(self._depth)
        self._kind = grow(self._kind)
        self._key = grow(self._key)
        self._first_child = grow(self._first_child)
        self._n_children = grow(self._n_children)
        self._trap_bud = grow(self._trap_bud)
        self._trap_height = grow(self._trap_height, fill=True)
        self._trap_delta = grow(self._trap_delta, fill=True)

    def expand(self, v: int) -> tuple[int, ...]:
        """Realize and return v's children; repeated calls are no-ops."""
        if self._n_children[v] < 0:
            self._ensure_capacity(self.tables.max_support + 1)
            t = self.tables
            self.n_vertices = int(
                K.expand_at(
                    self._parent, self._depth, self._kind, self._key,
                    self._first_child, self._n_children, self._trap_bud,
                    self.n_vertices, v,
                    t.g_supp, t.g_cdf, t.bud_cdf, t.h_supp, t.h_cdf,
                )
            )
        fc = int(self._first_child[v])
        return tuple(range(fc, fc + int(self._n_children[v])))

    def vertex(self, v: int) -> Vertex:
        children = None
        if self._n_children[v] >= 0:
            fc = int(self._first_child[v])
            children = tuple(range(fc, fc + int(self._n_children[v])))
        return Vertex(
            id=v,
            kind=KIND_NAMES[self._kind[v]],
            parent=None if self._parent[v] < 0 else int(self._parent[v]),
            children=children,
            depth=int(self._depth[v]),
        )

    def kind_code(self, v: int) -> int:
        return int(self._kind[v])

    def depth(self, v: int) -> int:
        return int(self._depth[v])

    def parent(self, v: int) -> int:
        return int(self._parent[v])

    def n_children(self, v: int) -> int:
        return int(self._n_children[v])

    # -- traps --------------------------------------------------------------

    def trap_height(self, bud: int) -> int:
        """Height of the trap rooted at this bud; forces full expansion."""
        if self._kind[bud] != K.KIND_BUD:
            raise ValueError(f"vertex {bud} is not a bud")
        if self._trap_height[bud] < 0:
            t = self.tables
            out = K.expand_trap(
                self._parent, self._depth, self._kind, self._key,
                self._first_child, self._n_children, self._trap_bud,
                self._trap_height, self._trap_delta, self.n_vertices, bud,
                t.g_supp, t.g_cdf, t.bud_cdf, t.h_supp, t.h_cdf,
                t.max_support, self.trap_vertex_cap,
            )
            (self._parent, self._depth, self._kind, self._key,
             self._first_child, self._n_children, self._trap_bud,
             self._trap_height, self._trap_delta) = out[:9]
            self.n_vertices = int(out[9])
            if out[10] != K.STATUS_OK:
                raise TrapBudget(
                    f"trap at bud {bud} exceeded {self.trap_vertex_cap} vertices"
                )
        return int(self._trap_height[bud])

    def trap_bottom(self, bud: int) -> int:
        """The leftmost deepest vertex of the trap at this bud."""
        self.trap_height(bud)
        return int(self._trap_delta[bud])

    def buds_at(self, x: int) -> tuple[int, ...]:
        if self._kind[x] > K.KIND_BACKBONE:
            return ()
        return tuple(
            c for c in self.expand(x) if self._kind[c] == K.KIND_BUD
        )

    def max_trap_height_at(self, x: int) -> int:
        """Height of the biggest trap rooted at x; -1 when x has no buds."""
        buds = self.buds_at(x)
        if not buds:
            return -1
        return max(self.trap_height(b) for b in buds)

    # -- debugging interface -------------------------------------------------

    def dump(self, fileobj) -> None:
        """Line-oriented `id parent kind depth` records for realized vertices."""
        for v in range(self.n_vertices):
            fileobj.write(
                f"{v} {int(self._parent[v])} "
                f"{KIND_NAMES[self._kind[v]]} {int(self._depth[v])}\n"
            )
