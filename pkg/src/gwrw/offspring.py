"""Exact numerics for finite-support offspring laws.

Everything downstream (environment growth, trap geometry, limit laws) is
parameterised by a supercritical offspring law with leaves.  This module
computes the scalar quantities attached to such a law: the extinction
probability q, the transformed laws driving the backbone (g) and the traps
(h), the trap-height tail, and the bias-dependent exponent of the walk.

All operations are exact polynomial manipulations plus root finding; no
Monte Carlo here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegreeImpossible,
    InvalidLaw,
    NoLeaves,
    NotSubballistic,
    NotSupercritical,
)

PROB_ATOL = 1e-12
ROOT_TOL = 1e-14

#: Repo-convention reference law used throughout tests and demos.
REFERENCE_LAW_PROBS = {0: 0.2, 2: 0.8}


@dataclass(frozen=True)
class OffspringLaw:
    """Probability vector over child counts, finite support.

    ``support`` holds the child counts with nonzero (declared) mass and
    ``probs`` the matching probabilities.  Use :func:`offspring_law` or
    :meth:`from_mapping` instead of the bare constructor; they validate.
    """

    support: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def from_mapping(cls, mapping) -> "OffspringLaw":
        """Build from a {child count: probability} map.

        Keys may be ints or strings (the config file format uses strings).
        """
        try:
            items = sorted((int(k), float(v)) for k, v in mapping.items())
        except (TypeError, ValueError) as exc:
            raise InvalidLaw(f"offspring law keys/values not numeric: {exc}") from exc
        return validate_law(
            cls(tuple(k for k, _ in items), tuple(v for _, v in items))
        )

    def prob_of(self, k: int) -> float:
        for kk, p in zip(self.support, self.probs):
            if kk == k:
                return p
        return 0.0

    @property
    def max_support(self) -> int:
        return self.support[-1]

    def f(self, s: float) -> float:
        """Generating function sum_k p_k s^k."""
        return float(sum(p * s**k for k, p in zip(self.support, self.probs)))

    def f_prime(self, s: float) -> float:
        return float(
            sum(p * k * s ** (k - 1) for k, p in zip(self.support, self.probs) if k >= 1)
        )

    @property
    def mean(self) -> float:
        return float(sum(p * k for k, p in zip(self.support, self.probs)))

    @property
    def second_moment(self) -> float:
        return float(sum(p * k * k for k, p in zip(self.support, self.probs)))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.asarray(self.support, dtype=np.int64),
            np.asarray(self.probs, dtype=np.float64),
        )

    def dense_probs(self) -> np.ndarray:
        """Probabilities on 0..max_support, zeros filled in."""
        out = np.zeros(self.max_support + 1)
        for k, p in zip(self.support, self.probs):
            out[k] = p
        return out


def validate_law(law: OffspringLaw) -> OffspringLaw:
    """Check the law's invariants, naming the violated one on failure."""
    if len(law.support) == 0:
        raise InvalidLaw("empty support")
    if any(k < 0 for k in law.support):
        raise InvalidLaw("negative child count in support")
    if len(set(law.support)) != len(law.support):
        raise InvalidLaw("duplicate child count in support")
    if any(p < 0 for p in law.probs):
        raise InvalidLaw("negative probability")
    total = sum(law.probs)
    if abs(total - 1.0) > PROB_ATOL:
        raise InvalidLaw(f"probabilities sum to {total!r}, not 1 within {PROB_ATOL}")
    return law


def offspring_law(mapping_or_law) -> OffspringLaw:
    if isinstance(mapping_or_law, OffspringLaw):
        return validate_law(mapping_or_law)
    return OffspringLaw.from_mapping(mapping_or_law)


def reference_law() -> OffspringLaw:
    return OffspringLaw.from_mapping(REFERENCE_LAW_PROBS)


def _require_supercritical_with_leaves(law: OffspringLaw) -> None:
    if law.mean <= 1.0:
        raise NotSupercritical(f"mean offspring {law.mean:.6g} <= 1")
    if law.prob_of(0) <= 0.0:
        raise NoLeaves("p_0 = 0: the law has no leaves")


def extinction_probability(law: OffspringLaw) -> float:
    """Smallest fixed point of the generating function in (0, 1).

    Bisection on f(q) - q over [0, 1 - delta]: f is convex with
    f(0) = p_0 > 0, and f - id is negative just below 1 in the
    supercritical case, so the bracket always contains exactly the
    smallest root.
    """
    _require_supercritical_with_leaves(law)
    lo, hi = 0.0, 1.0 - 1e-9
    while law.f(hi) - hi >= 0.0:
        # Nearly critical law: shrink the gap to 1 until the sign flips.
        hi = 1.0 - (1.0 - hi) / 16.0
        if 1.0 - hi < 1e-15:
            raise NotSupercritical("no root separated from 1; law is (near) critical")
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if law.f(mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    assert abs(law.f(q) - q) < 1e-12
    return q


def extinction_probability_fixed_point(law: OffspringLaw, tol: float = 1e-15) -> float:
    """Same root via monotone fixed-point iteration from 0 (cross-check)."""
    _require_supercritical_with_leaves(law)
    q = 0.0
    for _ in range(100000):
        q_next = law.f(q)
        if abs(q_next - q) < tol:
            return q_next
        q = q_next
    return q


@dataclass(frozen=True)
class DerivedParams:
    """Scalars derived from (offspring law, bias)."""

    law: OffspringLaw
    q: float
    m: float
    fprime_q: float
    beta_c: float
    beta: float
    gamma: float
    p_inf: float


def gamma_exponent(fprime_q: float, beta: float) -> float:
    """Exponent gamma = ln(1/f'(q)) / ln(beta), in (0, 1) when subballistic."""
    beta_c = 1.0 / fprime_q
    if beta <= beta_c:
        raise NotSubballistic(
            f"beta = {beta:.6g} <= beta_c = {beta_c:.6g}; exponent leaves (0, 1)"
        )
    return math.log(beta_c) / math.log(beta)


def derive_params(law: OffspringLaw, beta: float) -> DerivedParams:
    law = validate_law(law)
    q = extinction_probability(law)
    fprime_q = law.f_prime(q)
    gamma = gamma_exponent(fprime_q, beta)
    return DerivedParams(
        law=law,
        q=q,
        m=law.mean,
        fprime_q=fprime_q,
        beta_c=1.0 / fprime_q,
        beta=beta,
        gamma=gamma,
        p_inf=1.0 - 1.0 / beta,
    )


def h_law(law: OffspringLaw, q: float) -> OffspringLaw:
    """Trap offspring law q_k = p_k q^(k-1); subcritical with mean f'(q)."""
    if not 0.0 < q < 1.0:
        raise InvalidLaw(f"q = {q!r} outside (0, 1)")
    ks = law.support
    ps = tuple(p * q ** (k - 1) for k, p in zip(ks, law.probs))
    return validate_law(OffspringLaw(ks, ps))


def g_law(law: OffspringLaw, q: float) -> OffspringLaw:
    """Backbone offspring law; no zeros, mean equal to the original mean.

    Coefficients come from expanding f((1-q)s + q) and dropping the
    constant term: g_j = sum_{k>=j} p_k C(k,j) (1-q)^(j-1) q^(k-j).
    """
    if not 0.0 < q < 1.0:
        raise InvalidLaw(f"q = {q!r} outside (0, 1)")
    kmax = law.max_support
    dense = law.dense_probs()
    support = []
    probs = []
    for j in range(1, kmax + 1):
        gj = sum(
            dense[k] * math.comb(k, j) * (1.0 - q) ** (j - 1) * q ** (k - j)
            for k in range(j, kmax + 1)
        )
        if gj > 0.0:
            support.append(j)
            probs.append(gj)
    return validate_law(OffspringLaw(tuple(support), tuple(probs)))


def backbone_bud_law(law: OffspringLaw, q: float, j: int) -> dict[int, float]:
    """Distribution of the bud count at a backbone vertex of degree j.

    P[buds = i | j surviving children] is proportional to
    p_{i+j} C(i+j, j) q^i (1-q)^j, read off the joint generating function
    of (dying, surviving) offspring.
    """
    if j < 1:
        raise DegreeImpossible(f"backbone degree {j} < 1")
    kmax = law.max_support
    dense = law.dense_probs()
    weights = {}
    for i in range(0, kmax - j + 1):
        w = dense[i + j] * math.comb(i + j, j) * q**i * (1.0 - q) ** j
        if w > 0.0:
            weights[i] = w
    total = sum(weights.values())
    if total <= 0.0:
        raise DegreeImpossible(f"backbone degree {j} has probability 0 (g_{j} = 0)")
    return {i: w / total for i, w in weights.items()}


@dataclass(frozen=True)
class HeightTail:
    """Tail P[H >= n] of the trap-height law, with its geometric prefactor.

    ``values[n]`` is the exact tail probability; ``log_values`` carries the
    same numbers in log form so the tail stays meaningful far beyond double
    underflow.  ``alpha_estimate`` is the limit of values[n] / f'(q)^n, with
    ``alpha_error`` the last Cauchy difference of that ratio sequence.
    """

    values: np.ndarray
    log_values: np.ndarray
    fprime_q: float
    alpha_estimate: float
    alpha_error: float

    def tail(self, n: int) -> float:
        if n < 0:
            return 1.0
        if n >= len(self.values):
            # Geometric continuation with the fitted prefactor.
            return self.alpha_estimate * self.fprime_q**n
        return float(self.values[n])

    def pmf(self, n: int) -> float:
        return self.tail(n) - self.tail(n + 1)


_LOG_TRACK_THRESHOLD = 1e-250


def height_tail(h: OffspringLaw, n_max: int = 200) -> HeightTail:
    """Iterate the trap generating function to get P[H >= n], n = 0..n_max.

    The complement s_n = P[H < n] obeys s_{n+1} = h(s_n) from s_0 = 0;
    we iterate the tail directly through v -> sum_k q_k (1 - (1-v)^k),
    which is exact and cancellation-free for tiny v.  Once v drops below
    the tracking threshold the recursion is linear to double precision
    and we advance log v by log f'(q) instead.
    """
    ks, qs = h.as_arrays()
    fq = float(np.sum(ks * qs))
    if fq >= 1.0:
        raise InvalidLaw(f"trap law mean {fq:.6g} >= 1, not subcritical")
    values = np.zeros(n_max + 1)
    logs = np.full(n_max + 1, -np.inf)
    v = 1.0
    logv = 0.0
    lfq = math.log(fq)
    for n in range(n_max + 1):
        values[n] = v
        logs[n] = logv
        if v >= 1.0:
            nxt = float(np.sum(qs[ks >= 1]))
            logv = math.log(nxt)
            v = nxt
            continue
        if v > _LOG_TRACK_THRESHOLD:
            nxt = 0.0
            for k, qk in zip(ks, qs):
                if k >= 1:
                    nxt += qk * (-math.expm1(k * math.log1p(-v)))
            logv = math.log(nxt) if nxt > 0.0 else -math.inf
            v = nxt
        else:
            logv = logv + lfq
            v = math.exp(logv) if logv > -744.0 else 0.0
    ratio_last = math.exp(logs[n_max] - n_max * lfq)
    ratio_prev = math.exp(logs[n_max - 1] - (n_max - 1) * lfq)
    return HeightTail(
        values=values,
        log_values=logs,
        fprime_q=fq,
        alpha_estimate=ratio_last,
        alpha_error=abs(ratio_last - ratio_prev),
    )


def geiger_cn(tail: HeightTail, n: int) -> float:
    """Ratio P[H = n] / P[H = n+1] used by the bottom-up trap construction.

    Computed from consecutive tail ratios, which stay well-conditioned in
    log space long after the raw tail underflows.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n + 2 >= len(tail.values):
        raise ValueError(f"height tail too short for c_{n}; raise n_max")
    r_n = math.exp(tail.log_values[n + 1] - tail.log_values[n])
    r_n1 = math.exp(tail.log_values[n + 2] - tail.log_values[n + 1])
    return (1.0 - r_n) / (r_n * (1.0 - r_n1))


def big_trap_root_probability(
    params: DerivedParams, tail: HeightTail, h: int
) -> tuple[float, float]:
    """P[some trap of height >= h is rooted at a backbone vertex].

    Returns ``(exact, asymptotic)``: the closed form obtained from the
    joint law of surviving/dying offspring, and its geometric-in-h
    approximation C_a f'(q)^h with
    C_a = alpha q (m - f'(q)) / (1 - q).
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    law, q = params.law, params.q
    eta = tail.tail(h)
    exact = 1.0 - (law.f((1.0 - eta) * q + 1.0 - q) - law.f((1.0 - eta) * q)) / (
        1.0 - q
    )
    c_a = tail.alpha_estimate * q * (params.m - params.fprime_q) / (1.0 - q)
    asymptotic = c_a * params.fprime_q**h
    return exact, asymptotic


def trap_constant_c_a(params: DerivedParams, tail: HeightTail) -> float:
    """Prefactor C_a of the big-trap root probability."""
    return tail.alpha_estimate * params.q * (params.m - params.fprime_q) / (1.0 - params.q)


def big_trap_height(n: int, epsilon: float, fprime_q: float) -> int:
    """Height threshold above which a trap counts as big at scale n."""
    if n < 2:
        return 1
    return max(1, math.ceil((1.0 - epsilon) * math.log(n) / (-math.log(fprime_q))))


def typical_trap_height(n: int, fprime_q: float) -> int:
    """The height a conditioned big trap is pinned to at scale n."""
    if n < 2:
        return 1
    return max(1, math.ceil(math.log(n) / (-math.log(fprime_q))))
