import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from entloss import losses
from entloss.errors import DegenerateTargetError, InvalidInputError
from entloss.losses import (
    Beta1Mode,
    LossKind,
    LossParams,
    ProbVector,
    SmoothedTarget,
    THETA_UNIT,
)

LN2 = math.log(2.0)


def pv(*values):
    return ProbVector(np.array(values, dtype=float))


def params_with(ln_base=1.0, beta2=1.0, **kwargs):
    return LossParams(
        theta_beta2=losses.inv_softplus(beta2) if beta2 > 0 else THETA_UNIT,
        theta_base=losses.inv_softplus(ln_base),
        **kwargs,
    )


# --------------------------------------------------------------------------
# distributions strategy: strictly interior points of the simplex
# --------------------------------------------------------------------------

def distributions(min_k=2, max_k=26):
    return (
        st.integers(min_value=min_k, max_value=max_k)
        .flatmap(lambda k: st.lists(
            st.floats(min_value=0.05, max_value=1.0), min_size=k, max_size=k))
        .map(lambda raw: ProbVector(np.array(raw) / np.sum(raw)))
    )


# --------------------------------------------------------------------------
# softplus reparameterization
# --------------------------------------------------------------------------

def test_softplus_inverse_roundtrip():
    for y in (1e-6, 0.1, 0.5, 1.0, 3.0, 40.0):
        assert losses.softplus(losses.inv_softplus(y)) == approx(y, rel=1e-12)


def test_softplus_overflow_safe():
    assert losses.softplus(1000.0) == approx(1000.0)
    assert losses.softplus(-1000.0) == approx(0.0, abs=1e-300)


def test_theta_unit_gives_base_e():
    p = LossParams()
    assert p.ln_base == approx(1.0, rel=1e-15)
    assert p.base == approx(math.e, rel=1e-15)


def test_params_constrained_reads():
    p = LossParams(theta_beta1=-3.0, theta_beta2=-3.0, beta1_mode=Beta1Mode.FIXED)
    assert p.beta1 == 1.0  # pinned exactly
    assert p.beta2 == approx(losses.softplus(-3.0))
    assert p.beta2 > 0.0
    learn = LossParams(theta_beta1=-3.0, beta1_mode=Beta1Mode.LEARNABLE)
    assert learn.beta1 == approx(losses.softplus(-3.0))
    off = LossParams(beta2_enabled=False)
    assert off.beta2 == 0.0


# --------------------------------------------------------------------------
# ProbVector / SmoothedTarget invariants
# --------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    [1.0],                 # K < 2
    [0.5, 0.6],            # sum != 1
    [-0.1, 1.1],           # negative
    [np.nan, 1.0],         # non-finite
])
def test_prob_vector_rejects(bad):
    with pytest.raises(InvalidInputError):
        ProbVector(np.array(bad))


def test_prob_vector_is_immutable():
    p = pv(0.5, 0.5)
    with pytest.raises(ValueError):
        p.probs[0] = 1.0


def test_smoothed_target_materialize():
    t = SmoothedTarget(class_index=1, epsilon=0.1, num_classes=4)
    got = t.materialize().probs
    assert got == approx([0.025, 0.925, 0.025, 0.025])
    assert got.sum() == approx(1.0, abs=1e-12)


def test_smoothed_target_validation():
    with pytest.raises(InvalidInputError):
        SmoothedTarget(class_index=4, epsilon=0.1, num_classes=4)
    with pytest.raises(InvalidInputError):
        SmoothedTarget(class_index=0, epsilon=1.0, num_classes=4)
    with pytest.raises(InvalidInputError):
        SmoothedTarget(class_index=0, epsilon=0.1, num_classes=1)


# --------------------------------------------------------------------------
# softmax
# --------------------------------------------------------------------------

def test_softmax_symmetry():
    assert losses.softmax([0.0, 0.0, 0.0]).probs == approx([1 / 3] * 3)


def test_softmax_ln2():
    assert losses.softmax([0.0, LN2]).probs == approx([1 / 3, 2 / 3])


def test_softmax_no_overflow():
    p = losses.softmax([1000.0, 0.0]).probs
    assert np.all(np.isfinite(p))
    assert p[0] == approx(1.0)
    assert p[1] == approx(0.0, abs=1e-300)


def test_softmax_argmax_preserved_first_index_ties():
    z = np.array([1.0, 3.0, 3.0, -2.0])
    assert int(np.argmax(losses.softmax(z).probs)) == int(np.argmax(z)) == 1


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        losses.softmax([np.inf, 0.0])


# --------------------------------------------------------------------------
# entropy / cross entropy / swapped / KL: frozen oracle values
# --------------------------------------------------------------------------

def test_entropy_one_hot():
    assert losses.entropy(pv(1.0, 0.0, 0.0, 0.0), 1.0) == approx(0.0, abs=1e-12)


def test_entropy_uniform():
    assert losses.entropy(pv(*[0.25] * 4), 1.0) == approx(math.log(4.0), rel=1e-12)


def test_entropy_dyadic_bits():
    assert losses.entropy(pv(0.5, 0.25, 0.25), LN2) == approx(1.5, rel=1e-12)


def test_cross_entropy_self_is_entropy():
    assert losses.cross_entropy(pv(0.5, 0.5), pv(0.5, 0.5), 1.0) == approx(LN2, rel=1e-12)


def test_cross_entropy_one_hot():
    got = losses.cross_entropy(pv(0.0, 1.0), pv(0.25, 0.75), 1.0)
    assert got == approx(-math.log(0.75), rel=1e-12)


def test_cross_entropy_direct_summation_oracle():
    # frozen from -sum(p_i ln q_i) computed term by term at high precision
    got = losses.cross_entropy(pv(0.7, 0.2, 0.1), pv(0.5, 0.3, 0.2), 1.0)
    assert got == approx(0.886941378500559, rel=1e-12)


def test_cross_entropy_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        losses.cross_entropy(pv(0.5, 0.5), pv(0.4, 0.3, 0.3), 1.0)


def test_swapped_self_match_equals_entropy():
    t = SmoothedTarget(class_index=0, epsilon=0.1, num_classes=4)
    p = t.materialize()
    got = losses.swapped_cross_entropy(t, p, 1.0)
    assert got == approx(losses.entropy(p, 1.0), rel=1e-12)


def test_swapped_single_term_oracle():
    t = SmoothedTarget(class_index=0, epsilon=0.02, num_classes=2)
    got = losses.swapped_cross_entropy(t, pv(1.0, 0.0), 1.0)
    assert got == approx(0.010050335853501441, rel=1e-12)  # -ln(0.98 + 0.01)


def test_swapped_two_term_oracle():
    t = SmoothedTarget(class_index=0, epsilon=0.02, num_classes=2)
    got = losses.swapped_cross_entropy(t, pv(0.5, 0.5), 1.0)
    assert got == approx(2.3076102609207964, rel=1e-12)  # -0.5(ln 0.99 + ln 0.01)


def test_swapped_rejects_one_hot_target():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=2)
    with pytest.raises(DegenerateTargetError):
        losses.swapped_cross_entropy(t, pv(0.5, 0.5), 1.0)


def test_kl_identity_is_zero():
    p = pv(0.3, 0.2, 0.5)
    assert losses.kl_divergence(p, p, 1.0) == approx(0.0, abs=1e-15)


def test_kl_single_surviving_term():
    got = losses.kl_divergence(pv(1.0, 0.0), pv(0.5, 0.5), 1.0)
    assert got == approx(LN2, rel=1e-12)


def test_kl_direct_summation_oracle():
    got = losses.kl_divergence(pv(0.7, 0.3), pv(0.4, 0.6), 1.0)
    assert got == approx(0.18378689738681229, rel=1e-12)


def test_kl_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        losses.kl_divergence(pv(0.5, 0.5), pv(0.4, 0.3, 0.3), 1.0)


# --------------------------------------------------------------------------
# decomposition identities (property form)
# --------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.data())
def test_decomposition_target_weighted(data):
    k = data.draw(st.integers(2, 26))
    p = data.draw(distributions(k, k))
    q = data.draw(distributions(k, k))
    ce = losses.cross_entropy(p, q, 1.0)
    rhs = losses.kl_divergence(p, q, 1.0) + losses.entropy(p, 1.0)
    assert abs(ce - rhs) <= 1e-9 * max(abs(ce), abs(rhs))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_decomposition_prediction_weighted(data):
    k = data.draw(st.integers(2, 26))
    eps = data.draw(st.sampled_from([0.001, 0.01, 0.1]))
    cls = data.draw(st.integers(0, k - 1))
    q = data.draw(distributions(k, k))
    t = SmoothedTarget(class_index=cls, epsilon=eps, num_classes=k)
    lhs = losses.swapped_cross_entropy(t, q, 1.0)
    rhs = losses.kl_divergence(q, t.materialize(), 1.0) + losses.entropy(q, 1.0)
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_gibbs_inequality(data):
    k = data.draw(st.integers(2, 10))
    p = data.draw(distributions(k, k))
    q = data.draw(distributions(k, k))
    assert losses.cross_entropy(p, q, 1.0) >= losses.entropy(p, 1.0) - 1e-9


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_kl_non_negative(data):
    k = data.draw(st.integers(2, 10))
    w = data.draw(distributions(k, k))
    o = data.draw(distributions(k, k))
    assert losses.kl_divergence(w, o, 1.0) >= -1e-9


@settings(max_examples=100, deadline=None)
@given(st.data(), st.floats(min_value=0.1, max_value=10.0))
def test_base_scaling(data, scale):
    k = data.draw(st.integers(2, 10))
    p = data.draw(distributions(k, k))
    q = data.draw(distributions(k, k))
    for fn in (losses.entropy,):
        assert fn(p, scale) == approx(fn(p, 1.0) / scale, rel=1e-12)
    assert losses.cross_entropy(p, q, scale) == approx(
        losses.cross_entropy(p, q, 1.0) / scale, rel=1e-12)
    assert losses.kl_divergence(p, q, scale) == approx(
        losses.kl_divergence(p, q, 1.0) / scale, rel=1e-12)


# --------------------------------------------------------------------------
# mixed-entropy and minimum-entropy totals
# --------------------------------------------------------------------------

def test_mix_recovers_cross_entropy_with_beta2_off():
    t = SmoothedTarget(class_index=1, epsilon=0.0, num_classes=3)
    params = LossParams(beta2_enabled=False)
    z = np.array([0.2, -0.4, 1.1])
    got = losses.mix_ent_loss(z, t, params)
    want = losses.cross_entropy(t.materialize(), losses.softmax(z), params.ln_base)
    assert got.total == approx(want, rel=1e-15)


def test_mix_symmetric_logits_oracle():
    t = SmoothedTarget(class_index=0, epsilon=0.02, num_classes=2)
    got = losses.mix_ent_loss(np.zeros(2), t, params_with())
    # ln 2 (cross entropy at uniform) + the two-term swapped oracle
    assert got.total == approx(LN2 + 2.3076102609207964, rel=1e-12)
    assert got.components["ce1"] == approx(LN2, rel=1e-12)
    assert got.components["ce2"] == approx(2.3076102609207964, rel=1e-12)


def test_mix_total_is_weighted_sum_of_components():
    t = SmoothedTarget(class_index=2, epsilon=0.05, num_classes=4)
    params = params_with(ln_base=1.7, beta2=0.6)
    z = np.array([0.3, -1.0, 0.4, 2.0])
    v = losses.mix_ent_loss(z, t, params)
    assert v.total == approx(
        params.beta1 * v.components["ce1"] + params.beta2 * v.components["ce2"],
        rel=1e-12,
    )


def test_mix_requires_smoothing_when_beta2_active():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=3)
    with pytest.raises(DegenerateTargetError):
        losses.mix_ent_loss(np.zeros(3), t, params_with())


def test_min_recovers_cross_entropy_with_beta2_off():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=2)
    params = LossParams(beta2_enabled=False)
    z = np.array([0.7, -0.7])
    got = losses.min_ent_loss(z, t, params)
    want = losses.cross_entropy(t.materialize(), losses.softmax(z), params.ln_base)
    assert got.total == approx(want, rel=1e-15)


def test_min_saturated_logits_vanish():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=2)
    got = losses.min_ent_loss(np.array([30.0, -30.0]), t, params_with())
    assert got.total == approx(0.0, abs=1e-12)


def test_min_uniform_logits_oracle():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=2)
    got = losses.min_ent_loss(np.zeros(2), t, params_with())
    assert got.total == approx(2 * LN2, rel=1e-12)  # CE = H = ln 2


def test_min_does_not_require_smoothing():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=3)
    v = losses.min_ent_loss(np.array([1.0, 0.0, -1.0]), t, params_with())
    assert math.isfinite(v.total)


def test_loss_value_components_satisfy_decompositions():
    t = SmoothedTarget(class_index=1, epsilon=0.03, num_classes=5)
    z = np.array([0.1, 1.2, -0.8, 0.0, 2.0])
    params = params_with(ln_base=1.3, beta2=0.8)
    v = losses.mix_ent_loss(z, t, params)
    h_target = losses.entropy(t.materialize(), params.ln_base)
    assert v.components["ce1"] == approx(v.components["kl_p"] + h_target, rel=1e-9)
    assert v.components["ce2"] == approx(
        v.components["kl_phat"] + v.components["entropy_hat"], rel=1e-9)


def test_loss_value_base_scaling():
    t = SmoothedTarget(class_index=0, epsilon=0.02, num_classes=3)
    z = np.array([0.5, -0.5, 1.5])
    scale = 2.5
    v1 = losses.mix_ent_loss(z, t, params_with(ln_base=1.0))
    vs = losses.mix_ent_loss(z, t, params_with(ln_base=scale))
    assert vs.total == approx(v1.total / scale, rel=1e-12)
    for key in v1.components:
        assert vs.components[key] == approx(v1.components[key] / scale, rel=1e-12)


# --------------------------------------------------------------------------
# gradient special cases (the generic FD suites live in test_gradients)
# --------------------------------------------------------------------------

def test_backward_min_beta2_off_is_textbook_softmax_ce():
    t = SmoothedTarget(class_index=1, epsilon=0.0, num_classes=4)
    params = LossParams(beta2_enabled=False)
    z = np.array([0.2, -0.3, 0.9, -1.5])
    g = losses.loss_backward(z, t, params, LossKind.MIN)
    expected = (losses.softmax(z).probs - t.materialize().probs) / params.ln_base
    assert g.grad_logits == approx(expected, rel=1e-15)
    assert g.grad_theta_beta2 == 0.0


def test_backward_mix_and_min_agree_when_beta2_off():
    t = SmoothedTarget(class_index=0, epsilon=0.0, num_classes=3)
    params = LossParams(beta2_enabled=False)
    z = np.array([1.0, 0.0, -1.0])
    g_mix = losses.loss_backward(z, t, params, LossKind.MIX)
    g_min = losses.loss_backward(z, t, params, LossKind.MIN)
    assert np.array_equal(g_mix.grad_logits, g_min.grad_logits)


def test_backward_uniform_everything_is_near_zero():
    # grad = (p_hat - p) / ln b: uniform logits give uniform p_hat, and an
    # epsilon -> 1 target is uniform up to (1 - eps)(1 - 1/K)
    k = 4
    z = np.zeros(k)
    target = SmoothedTarget(class_index=0, epsilon=1.0 - 1e-9, num_classes=k)
    g = losses.loss_backward(z, target, LossParams(beta2_enabled=False), LossKind.MIN)
    assert g.grad_logits == approx(np.zeros(k), abs=1e-8)


def test_backward_min_entropy_gradient_zero_at_uniform():
    # H(softmax(z)) is maximal at uniform logits: its gradient term vanishes
    k = 5
    t = SmoothedTarget(class_index=2, epsilon=0.0, num_classes=k)
    params_on = params_with(beta2=2.0)
    params_off = LossParams(beta2_enabled=False)
    z = np.zeros(k)
    g_on = losses.loss_backward(z, t, params_on, LossKind.MIN)
    g_off = losses.loss_backward(z, t, params_off, LossKind.MIN)
    assert g_on.grad_logits == approx(g_off.grad_logits, abs=1e-12)


def test_ce_kind_matches_min_with_beta2_disabled():
    t = SmoothedTarget(class_index=1, epsilon=0.02, num_classes=3)
    z = np.array([0.4, -0.2, 0.1])
    params = LossParams(beta2_enabled=False)
    v_ce = losses.batch_loss(z[None], np.array([1]), 0.02, params, LossKind.CE)
    v_min = losses.min_ent_loss(z, t, params)
    assert v_ce.total == v_min.total
