import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwrw import offspring as off
from gwrw.errors import DegreeImpossible, InvalidLaw, NoLeaves, NotSubballistic, NotSupercritical

GOLDEN_Q = 0.25  # smallest root of 0.8 q^2 - q + 0.2
PHI_Q = (math.sqrt(5.0) - 1.0) / 2.0  # root of q^2 + q - 1 for {p0: .5, p3: .5}


@pytest.fixture(scope="module")
def ref():
    return off.reference_law()


@pytest.fixture(scope="module")
def ref_params(ref):
    return off.derive_params(ref, beta=5.0)


def test_extinction_probability_reference(ref):
    assert off.extinction_probability(ref) == pytest.approx(GOLDEN_Q, abs=1e-12)


def test_extinction_probability_cubic():
    law = off.offspring_law({0: 0.5, 3: 0.5})
    assert off.extinction_probability(law) == pytest.approx(PHI_Q, abs=1e-12)


def test_extinction_probability_rejects_critical():
    with pytest.raises(NotSupercritical):
        off.extinction_probability(off.offspring_law({1: 1.0}))


def test_extinction_probability_rejects_leafless():
    with pytest.raises(NoLeaves):
        off.extinction_probability(off.offspring_law({1: 0.5, 2: 0.5}))


def test_bisection_and_fixed_point_agree(ref):
    law2 = off.offspring_law({0: 0.5, 3: 0.5})
    for law in (ref, law2):
        a = off.extinction_probability(law)
        b = off.extinction_probability_fixed_point(law)
        assert a == pytest.approx(b, abs=1e-10)


def test_law_validation_names_invariant():
    with pytest.raises(InvalidLaw, match="sum"):
        off.offspring_law({0: 0.2, 2: 0.7})
    with pytest.raises(InvalidLaw, match="negative"):
        off.offspring_law({0: -0.2, 2: 1.2})


def test_gamma_exponent_values():
    assert off.gamma_exponent(0.4, 5.0) == pytest.approx(
        math.log(2.5) / math.log(5.0), abs=1e-14
    )
    assert off.gamma_exponent(0.4, 6.25) == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(NotSubballistic):
        off.gamma_exponent(0.4, 2.5)
    with pytest.raises(NotSubballistic):
        off.gamma_exponent(0.4, 2.0)


def test_h_law_reference(ref):
    h = off.h_law(ref, GOLDEN_Q)
    assert h.prob_of(0) == pytest.approx(0.8, abs=1e-12)
    assert h.prob_of(2) == pytest.approx(0.2, abs=1e-12)
    assert h.mean == pytest.approx(0.4, abs=1e-12)


def test_h_law_cubic():
    law = off.offspring_law({0: 0.5, 3: 0.5})
    h = off.h_law(law, PHI_Q)
    assert h.prob_of(0) == pytest.approx(0.5 / PHI_Q, abs=1e-7)
    assert h.prob_of(3) == pytest.approx(0.5 * PHI_Q**2, abs=1e-7)
    assert sum(h.probs) == pytest.approx(1.0, abs=1e-12)


def test_g_law_reference(ref):
    g = off.g_law(ref, GOLDEN_Q)
    assert g.prob_of(0) == 0.0
    assert g.prob_of(1) == pytest.approx(0.4, abs=1e-12)
    assert g.prob_of(2) == pytest.approx(0.6, abs=1e-12)
    assert g.mean == pytest.approx(ref.mean, abs=1e-12)


def test_backbone_bud_law_reference(ref):
    one = off.backbone_bud_law(ref, GOLDEN_Q, j=1)
    assert one == {1: pytest.approx(1.0, abs=1e-12)}
    two = off.backbone_bud_law(ref, GOLDEN_Q, j=2)
    assert two == {0: pytest.approx(1.0, abs=1e-12)}
    with pytest.raises(DegreeImpossible):
        off.backbone_bud_law(ref, GOLDEN_Q, j=3)


def test_bud_law_marginal_reconstructs_g(ref):
    # The joint (surviving, dying) law must marginalise back to g.
    q = GOLDEN_Q
    g = off.g_law(ref, q)
    for j in g.support:
        dense = ref.dense_probs()
        total = sum(
            dense[i + j] * math.comb(i + j, j) * q**i * (1 - q) ** j
            for i in range(0, ref.max_support - j + 1)
        )
        assert total / (1 - q) == pytest.approx(g.prob_of(j), abs=1e-10)


def test_height_tail_reference(ref):
    h = off.h_law(ref, GOLDEN_Q)
    tail = off.height_tail(h, n_max=200)
    assert tail.values[0] == 1.0
    assert tail.values[1] == pytest.approx(0.2, abs=1e-14)
    assert tail.values[2] == pytest.approx(0.072, abs=1e-14)
    assert tail.values[3] == pytest.approx(0.0277632, abs=1e-14)
    ratios = [tail.values[n] / 0.4**n for n in (1, 2, 3)]
    assert ratios[0] == pytest.approx(0.5, abs=1e-12)
    assert ratios[1] == pytest.approx(0.45, abs=1e-12)
    assert ratios[2] == pytest.approx(0.43380, abs=1e-5)
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_height_tail_dominated_by_mean_power(ref):
    h = off.h_law(ref, GOLDEN_Q)
    tail = off.height_tail(h, n_max=200)
    n = np.arange(0, 60)
    assert np.all(tail.values[n] <= 0.4**n + 1e-15)
    # log tracking keeps the ratio finite far beyond double underflow
    assert np.isfinite(tail.log_values[200])
    assert tail.alpha_error < 1e-12
    assert 0.40 < tail.alpha_estimate < 0.45


def test_geiger_cn_reference(ref):
    h = off.h_law(ref, GOLDEN_Q)
    tail = off.height_tail(h)
    assert off.geiger_cn(tail, 0) == pytest.approx(6.25, abs=1e-12)
    c1 = off.geiger_cn(tail, 1)
    assert c1 == pytest.approx(0.128 / 0.0442368, rel=1e-12)
    assert off.geiger_cn(tail, 150) == pytest.approx(2.5, rel=1e-6)
    for n in range(40):
        assert off.geiger_cn(tail, n) > 0.0


def test_big_trap_root_probability(ref_params, ref):
    h = off.h_law(ref, GOLDEN_Q)
    tail = off.height_tail(h)
    exact3, _ = off.big_trap_root_probability(ref_params, tail, 3)
    eta = tail.values[3]
    law = ref
    expected = 1.0 - (
        law.f((1 - eta) * GOLDEN_Q + 1 - GOLDEN_Q) - law.f((1 - eta) * GOLDEN_Q)
    ) / (1 - GOLDEN_Q)
    assert exact3 == pytest.approx(expected, abs=1e-15)
    # exact/asymptotic ratio heads to 1
    ratios = []
    for h_level in (4, 8, 16, 24):
        exact, asym = off.big_trap_root_probability(ref_params, tail, h_level)
        ratios.append(exact / asym)
    assert abs(ratios[-1] - 1.0) < 1e-3
    assert abs(ratios[-1] - 1.0) <= abs(ratios[0] - 1.0)


@st.composite
def small_laws(draw):
    kmax = draw(st.integers(min_value=2, max_value=6))
    raw = [draw(st.floats(0.05, 1.0)) for _ in range(kmax + 1)]
    raw[1] = draw(st.floats(0.0, 0.2))
    total = sum(raw)
    probs = {k: v / total for k, v in enumerate(raw)}
    law = off.OffspringLaw(tuple(probs), tuple(probs.values()))
    if law.mean <= 1.05:
        # tilt mass towards kmax to force supercriticality
        shifted = dict(probs)
        shifted[kmax] += 1.0
        total = sum(shifted.values())
        law = off.OffspringLaw(
            tuple(shifted), tuple(v / total for v in shifted.values())
        )
    return law


@given(small_laws())
@settings(max_examples=60, deadline=None)
def test_transformed_law_means(law):
    if law.mean <= 1.0 or law.prob_of(0) <= 0.0:
        return
    q = off.extinction_probability(law)
    h = off.h_law(law, q)
    g = off.g_law(law, q)
    assert h.mean == pytest.approx(law.f_prime(q), abs=1e-10)
    assert g.mean == pytest.approx(law.mean, abs=1e-10)
    assert g.prob_of(0) == 0.0
    tail = off.height_tail(h, n_max=40)
    n = np.arange(41)
    assert np.all(tail.values <= law.f_prime(q) ** n * (1 + 1e-12))


@given(small_laws())
@settings(max_examples=30, deadline=None)
def test_bud_law_normalises(law):
    if law.mean <= 1.0 or law.prob_of(0) <= 0.0:
        return
    q = off.extinction_probability(law)
    g = off.g_law(law, q)
    for j in g.support:
        bud = off.backbone_bud_law(law, q, j)
        assert sum(bud.values()) == pytest.approx(1.0, abs=1e-10)
