"""The biased walk engine and its instrumentation.

The walk prefers children by a factor beta per edge; on a tree with
leaves it keeps falling into traps, and everything downstream quantifies
that slowdown.  This module exposes the single-step kernel, instrumented
hitting-time runs, the embedded backbone walk, super-regeneration
detection on the driving uniforms, the big-trap visit count sampler, and
the visited-vertices-per-level ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .environment import Environment, kernel_tables
from .errors import BudgetExceeded, TrapBudget
from .offspring import DerivedParams, big_trap_height
from .rngstream import stream_key, uniform_array


@dataclass
class WalkState:
    position: int = 0
    steps: int = 0
    uniforms_consumed: int = 0


def step(env: Environment, state: WalkState, u: float) -> WalkState:
    """One move of the biased walk, driven by a single uniform.

    From a non-root vertex with k children the parent is taken when
    u < 1/(1+beta k) and child i on the complementary beta-weighted
    split; the root picks uniformly among its children; a childless
    non-root vertex always steps to its parent.
    """
    v = state.position
    children = env.expand(v)
    k = len(children)
    beta = env.params.beta
    if env.kind_code(v) == K.KIND_ROOT:
        idx = min(int(u * k), k - 1)
        nxt = children[idx]
    elif k == 0:
        nxt = env.parent(v)
    else:
        thr = 1.0 / (1.0 + beta * k)
        if u < thr:
            nxt = env.parent(v)
        else:
            idx = min(int((1.0 - u) * (1.0 + beta * k) / beta), k - 1)
            nxt = children[idx]
    return WalkState(
        position=int(nxt),
        steps=state.steps + 1,
        uniforms_consumed=state.uniforms_consumed + 1,
    )


@dataclass
class HittingRecord:
    """Instrumented outcome of one walk to level n."""

    n: int
    h_big: int
    delta_n: int
    chi_n: int
    chi_star_n: int
    delta_n_Y: int
    max_backtrack: int
    status: int = K.STATUS_OK
    n_vertices: int = 0


@dataclass
class Trajectory:
    """Recorded path with the tree arrays needed for post-hoc passes."""

    vertices: np.ndarray
    kind: np.ndarray
    depth: np.ndarray
    trap_bud: np.ndarray
    trap_height: np.ndarray
    trap_delta: np.ndarray


def _epsilon_window(params: DerivedParams) -> float:
    return min(0.25, 2.0 * params.gamma / 3.0)


def check_epsilon(params: DerivedParams, epsilon: float) -> None:
    hi = _epsilon_window(params)
    if not 0.0 < epsilon < hi:
        raise ValueError(
            f"epsilon = {epsilon!r} outside the admissible window (0, {hi:.4g})"
        )


def run_hitting(
    env: Environment,
    n: int,
    epsilon: float = 0.1,
    step_budget: int = 50_000_000,
    walk_stream: int | None = None,
    record_trajectory: bool = False,
):
    """Walk from the root of ``env``'s tree until level n is first hit.

    The tree is realized lazily from the environment's vertex streams, so
    the walk sees exactly the tree ``env`` would grow.  Raises
    BudgetExceeded with the partial record attached when the step budget
    runs out.  Returns the record, or (record, trajectory) when
    ``record_trajectory`` is set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    check_epsilon(env.params, epsilon)
    t = env.tables
    h_big = big_trap_height(n, epsilon, env.params.fprime_q)
    ws = env.stream + 1 if walk_stream is None else walk_stream
    walk_key = np.uint64(stream_key(np.uint64(env.seed), np.uint64(ws)))
    out = K.hitting_walk(
        env.root_key, walk_key, n, h_big, env.params.beta,
        t.g_supp, t.g_cdf, t.bud_cdf, t.h_supp, t.h_cdf, t.max_support,
        step_budget, env.trap_vertex_cap, record_trajectory,
    )
    record = HittingRecord(
        n=n,
        h_big=h_big,
        delta_n=int(out[0]),
        chi_n=int(out[1]),
        chi_star_n=int(out[2]),
        delta_n_Y=int(out[3]),
        max_backtrack=int(out[4]),
        status=int(out[5]),
        n_vertices=int(out[6]),
    )
    traj = None
    if record_trajectory:
        traj = Trajectory(
            vertices=out[16],
            kind=out[9],
            depth=out[8],
            trap_bud=out[13],
            trap_height=out[14],
            trap_delta=out[15],
        )
    if record.status == K.STATUS_TRAP_CAP:
        raise TrapBudget("a trap exceeded the vertex cap during the walk")
    if record.status == K.STATUS_BUDGET:
        raise BudgetExceeded(
            f"step budget {step_budget} exhausted before level {n}",
            partial=(record, traj) if record_trajectory else record,
        )
    return (record, traj) if record_trajectory else record


def hitting_records(
    params: DerivedParams,
    n: int,
    epsilon: float,
    replicas: int,
    seed: int,
    step_budget: int = 50_000_000,
    replica_lo: int = 0,
    tables=None,
    trap_cap: int = 10_000_000,
):
    """Batch of independent instrumented walks; returns column arrays.

    Budget and trap-cap overflows are reported per replica in the status
    column rather than raised.
    """
    check_epsilon(params, epsilon)
    t = tables if tables is not None else kernel_tables(params)
    h_big = big_trap_height(n, epsilon, params.fprime_q)
    delta, chi, chi_star, delta_y, backtrack, status = K.hitting_batch(
        seed, replica_lo, replica_lo + replicas, n, h_big, params.beta,
        t.g_supp, t.g_cdf, t.bud_cdf, t.h_supp, t.h_cdf, t.max_support,
        step_budget, trap_cap,
    )
    return {
        "n": np.full(replicas, n),
        "h_big": np.full(replicas, h_big),
        "delta_n": delta,
        "chi_n": chi,
        "chi_star_n": chi_star,
        "delta_n_Y": delta_y,
        "max_backtrack": backtrack,
        "status": status,
    }


def embedded_backbone(traj: Trajectory):
    """Times and positions of the walk restricted to backbone-backbone moves.

    Returns (sigma, y): sigma[0] = 0 and sigma[m] for m >= 1 enumerates
    the steps whose two endpoints both lie on the backbone; y = vertices
    at those times.
    """
    v = traj.vertices
    on_bb = traj.kind[v] <= K.KIND_BACKBONE
    both = on_bb[1:] & on_bb[:-1]
    sigma = np.concatenate([[0], np.flatnonzero(both) + 1])
    return sigma, v[sigma]


def recount_chi(traj: Trajectory, h_big: int) -> tuple[int, int]:
    """Recompute (chi, chi_star) from a stored trajectory.

    Independent of the walker's online counters: classifies each step by
    the endpoint kinds and trap heights, and accumulates bottom-to-bottom
    loops per trap entry.
    """
    v = traj.vertices
    kinds = traj.kind
    chi = 0
    chi_star = 0
    in_trap = -1
    in_big = False
    seen = False
    since = 0
    for i in range(1, len(v)):
        a, b = v[i - 1], v[i]
        a_bb = kinds[a] <= K.KIND_BACKBONE
        b_bb = kinds[b] <= K.KIND_BACKBONE
        if a_bb and b_bb:
            continue
        if a_bb and not b_bb:
            in_trap = traj.trap_bud[b]
            in_big = traj.trap_height[in_trap] >= h_big
            seen = False
            since = 0
        if in_big:
            chi += 1
            if seen:
                since += 1
                if b == traj.trap_delta[in_trap]:
                    chi_star += since
                    since = 0
            elif b == traj.trap_delta[in_trap]:
                seen = True
                since = 0
        if b_bb:
            in_trap = -1
            in_big = False
            seen = False
            since = 0
    return chi, chi_star


@dataclass
class RegenerationTrace:
    """Super-regeneration structure read off a driving uniform stream."""

    coupled_walk: np.ndarray  # one-dimensional biased walk values, index 0..T
    confirmed: np.ndarray  # times with a strict running max held for the window
    tentative: np.ndarray  # trailing candidates the horizon could not confirm
    confirm_window: int


def coupled_z_walk(uniforms: np.ndarray, beta: float) -> np.ndarray:
    """The beta-biased walk on the integers driven by the same uniforms."""
    steps = np.where(uniforms < 1.0 / (beta + 1.0), -1, 1)
    z = np.empty(len(uniforms) + 1, dtype=np.int64)
    z[0] = 0
    np.cumsum(steps, out=z[1:])
    return z


def detect_super_regenerations(
    uniforms: np.ndarray, beta: float, confirm_window: int
) -> RegenerationTrace:
    """Times that regenerate the coupled one-dimensional walk.

    A time t qualifies when the coupled walk sits at a strict running
    maximum and does not return to or below that value within the
    confirmation window; trailing candidates that the horizon cannot
    confirm are reported separately.  Any such time is a regeneration
    time of the tree walk driven by the same uniforms.
    """
    if confirm_window < 1:
        raise ValueError("confirm_window must be >= 1")
    if len(uniforms) <= confirm_window:
        raise ValueError("horizon must exceed the confirmation window")
    z = coupled_z_walk(np.asarray(uniforms, dtype=float), beta)
    T = len(z) - 1
    W = confirm_window
    run_max = np.maximum.accumulate(z)
    cand = np.empty(T + 1, dtype=bool)
    cand[0] = True
    cand[1:] = z[1:] > run_max[:-1]
    # windowed minimum: win_min[t] = min(z[t+1 .. t+W]) for t <= T - W
    sw = np.lib.stride_tricks.sliding_window_view(z, W).min(axis=1)
    confirmable = np.zeros(T + 1, dtype=bool)
    confirmable[: T - W + 1] = True
    win_min = np.empty(T + 1, dtype=np.int64)
    win_min[: T - W + 1] = sw[1:]
    win_min[T - W + 1 :] = np.iinfo(np.int64).min
    confirmed = cand & confirmable & (win_min > z)
    # trailing candidates: still a strict max, not violated before the horizon
    msuf = np.minimum.accumulate(z[::-1])[::-1]
    alive = np.empty(T + 1, dtype=bool)
    alive[T] = True
    alive[:T] = msuf[1:] > z[:T]
    tentative = cand & ~confirmable & alive
    return RegenerationTrace(
        coupled_walk=z,
        confirmed=np.flatnonzero(confirmed),
        tentative=np.flatnonzero(tentative),
        confirm_window=confirm_window,
    )


def default_confirm_window(params: DerivedParams, replicas: int) -> int:
    """Window making the per-replica misclassification probability negligible."""
    beta = params.beta
    return int(
        math.ceil(10.0 * (beta + 1.0) / (beta - 1.0) * math.log(max(replicas, 10)))
    )


def sr_misclassification_bound(params: DerivedParams, window: int) -> float:
    """P[a window-confirmed time is not a true regeneration] <= beta**-(window/2)ish.

    After staying positive for w steps the walk sits at height >= 1; the
    chance it ever drops w more levels is at most (1/beta)**w... the
    crude bound beta**-window is reported alongside results.
    """
    return params.beta ** -float(window)


@dataclass
class WnSample:
    """Empirical law of the big-trap visit count at one scale n."""

    n: int
    h_big: int
    values: np.ndarray
    status: np.ndarray
    attempts: np.ndarray
    confirm_window: int
    misclassification_bound: float

    def pmf(self) -> tuple[np.ndarray, np.ndarray]:
        ok = self.values[self.status == K.STATUS_OK]
        top = int(ok.max()) if len(ok) else 0
        counts = np.bincount(ok, minlength=top + 1)
        return np.arange(top + 1), counts / counts.sum()

    def tail(self) -> np.ndarray:
        support, pmf = self.pmf()
        return np.cumsum(pmf[::-1])[::-1]


def sample_Wn(
    params: DerivedParams,
    n: int,
    epsilon: float,
    replicas: int,
    seed: int,
    replica_lo: int = 0,
    tables=None,
    confirm_window: int | None = None,
    max_epochs: int | None = None,
    max_attempts: int = 256,
) -> WnSample:
    """Visit counts of the first big trap, conditioned on a good start.

    Per replica: grow the backbone (bud counts and trap heights only; the
    trap interiors cannot influence entry counts), drive the embedded
    walk under rejection until the origin is a confirmed
    super-regeneration, find the first vertex carrying a trap of height
    >= h_n, and count entries into its designated (first) big bud until a
    later super-regeneration is confirmed.
    """
    check_epsilon(params, epsilon)
    t = tables if tables is not None else kernel_tables(params)
    h_big = big_trap_height(n, epsilon, params.fprime_q)
    w = confirm_window or default_confirm_window(params, replicas)
    if max_epochs is None:
        # typical search length is ~ 1/P[a vertex carries a big trap]
        law, q = params.law, params.q
        eta = float(t.tail[min(h_big, len(t.tail) - 1)])
        p_hit = max(
            1.0 - (law.f((1 - eta) * q + 1 - q) - law.f((1 - eta) * q)) / (1 - q),
            1e-12,
        )
        max_epochs = int(min(5e7, 200.0 / p_hit + 100 * w))
    values, status, epochs, attempts = K.wn_batch(
        seed, replica_lo, replica_lo + replicas, h_big, params.beta,
        t.g_supp, t.g_cdf, t.bud_cdf, t.tail, w, max_epochs, max_attempts,
    )
    return WnSample(
        n=n,
        h_big=h_big,
        values=values,
        status=status,
        attempts=attempts,
        confirm_window=w,
        misclassification_bound=sr_misclassification_bound(params, w),
    )


@dataclass
class RhoEstimate:
    """Vertices-visited-per-level ratio with a bootstrap interval."""

    value: float
    ci_low: float
    ci_high: float
    n_blocks: int
    block_cards: np.ndarray = field(repr=False)
    block_lengths: np.ndarray = field(repr=False)


def rho_estimate(
    params: DerivedParams,
    seed: int,
    blocks: int = 400,
    replicas: int = 64,
    horizon: int = 4096,
    confirm_window: int | None = None,
    tables=None,
    n_boot: int = 1000,
) -> RhoEstimate:
    """Ratio estimator over independent regeneration blocks of the backbone walk.

    Each replica contributes the blocks between consecutive confirmed
    super-regenerations after the first one (the first block has a
    different law and is dropped).  The ratio of block means estimates
    the average number of distinct backbone vertices the walk visits per
    level; the confidence interval is a percentile bootstrap over blocks.
    """
    if blocks < 100:
        raise ValueError("need at least 100 regeneration blocks")
    t = tables if tables is not None else kernel_tables(params)
    w = confirm_window or default_confirm_window(params, 10 * blocks)
    cards: list[int] = []
    lens: list[int] = []
    r = 0
    while len(cards) < blocks and r < max(10_000, 100 * replicas):
        ys, zs = K.backbone_trajectory(
            seed, r, horizon, params.beta, t.g_supp, t.g_cdf
        )
        u = uniform_array(seed, 2 * r + 1, horizon)
        trace = detect_super_regenerations(u, params.beta, w)
        taus = trace.confirmed
        for a, b in zip(taus[1:-1], taus[2:]):
            cards.append(len(np.unique(ys[a:b])))
            lens.append(int(b - a))
        r += 1
    cards_a = np.asarray(cards[:blocks], dtype=float)
    lens_a = np.asarray(lens[:blocks], dtype=float)
    value = cards_a.mean() / lens_a.mean()
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xB00], dtype=np.uint64)))
    idx = rng.integers(0, len(cards_a), size=(n_boot, len(cards_a)))
    boot = cards_a[idx].mean(axis=1) / lens_a[idx].mean(axis=1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return RhoEstimate(
        value=float(value),
        ci_low=float(lo),
        ci_high=float(hi),
        n_blocks=len(cards_a),
        block_cards=cards_a,
        block_lengths=lens_a,
    )
