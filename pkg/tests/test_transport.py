"""Critic, dual-form losses, gradient penalty, and histogram distances."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikesal.autodiff import ShapeError, Tensor
from spikesal.transport import (
    Critic,
    critic_adversarial_loss,
    critic_score,
    distance_loss,
    distribution_distance,
    emd_1d,
    estimate_em_gap,
    generator_transport_loss,
    orient_critic_head,
    soft_value_histogram,
)
from _naive import emd_lp


def make_critic(seed=0):
    return Critic(rng=np.random.default_rng(seed))


def zero_critic(bias=0.0, seed=0):
    c = make_critic(seed)
    for p in c.parameters():
        p.data[...] = 0.0
    c.head.bias.data[...] = bias
    return c


def linear_unit_critic(h=4, w=4):
    """Potential phi(x) = sqrt(H*W) * mean(x): input gradient norm exactly 1
    for positive inputs (identity channel through every leaky-relu)."""
    c = zero_critic()
    c.conv1.weight.data[0, 0, 1, 1] = 1.0
    c.conv2.weight.data[0, 0, 1, 1] = 1.0
    c.conv3.weight.data[0, 0, 1, 1] = 1.0
    c.head.weight.data[0, 0] = float(np.sqrt(h * w))
    return c


# -- generator objective -------------------------------------------------------


def test_generator_loss_with_silent_critic_is_pure_cost():
    rng = np.random.default_rng(1)
    pred = Tensor(rng.random((3, 1, 4, 4)), requires_grad=True)
    source = rng.random((3, 1, 4, 4))
    loss = generator_transport_loss(pred, source, zero_critic())
    assert float(loss.data) == pytest.approx(((pred.data - source) ** 2).mean(), abs=1e-12)


def test_generator_loss_constant_potential_shifts_cost():
    rng = np.random.default_rng(2)
    pred = Tensor(rng.random((3, 1, 4, 4)), requires_grad=True)
    source = rng.random((3, 1, 4, 4))
    k = 0.75
    loss = generator_transport_loss(pred, source, zero_critic(bias=k))
    want = ((pred.data - source) ** 2).mean() - k
    assert float(loss.data) == pytest.approx(want, abs=1e-12)


def test_generator_loss_never_touches_critic():
    rng = np.random.default_rng(3)
    critic = make_critic(4)
    pred = Tensor(rng.random((2, 1, 4, 4)), requires_grad=True)
    loss = generator_transport_loss(pred, rng.random((2, 1, 4, 4)), critic)
    loss.backward()
    assert pred.grad is not None and np.abs(pred.grad).sum() > 0
    for p in critic.parameters():
        assert p.grad is None or np.abs(p.grad).sum() == 0.0
        assert p.requires_grad  # frozen() must restore the training flag


# -- critic objective ----------------------------------------------------------


def test_constant_potential_pays_full_penalty():
    rng = np.random.default_rng(5)
    target = rng.uniform(0.2, 0.9, (4, 1, 4, 4))
    pred = rng.uniform(0.1, 0.8, (4, 1, 4, 4))
    loss, terms = critic_adversarial_loss(target, pred, zero_critic(bias=0.7), penalty_coef=10.0,
                                          rng=np.random.default_rng(0))
    # zero input gradient everywhere: penalty = coef * (0 - 1)^2, gap = 0
    assert terms["em_gap"] == 0.0
    assert terms["penalty"] == pytest.approx(10.0, abs=1e-12)
    assert float(loss.data) == pytest.approx(10.0, abs=1e-12)


def test_unit_slope_potential_pays_no_penalty():
    rng = np.random.default_rng(6)
    target = rng.uniform(0.3, 0.9, (4, 1, 4, 4))
    pred = rng.uniform(0.1, 0.7, (4, 1, 4, 4))
    loss, terms = critic_adversarial_loss(target, pred, linear_unit_critic(), penalty_coef=10.0,
                                          rng=np.random.default_rng(0))
    assert terms["penalty"] == pytest.approx(0.0, abs=1e-9)
    # phi = sqrt(HW)*mean: the gap is the scaled difference of batch means
    want_gap = float(np.sqrt(16) * (target.mean() - pred.mean()))
    assert terms["em_gap"] == pytest.approx(want_gap, abs=1e-9)


def test_critic_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    critic = make_critic(8)
    target = rng.uniform(0.2, 0.95, (3, 1, 4, 4))
    pred = rng.uniform(0.05, 0.8, (3, 1, 4, 4))

    def loss_value():
        loss, _ = critic_adversarial_loss(target, pred, critic, rng=np.random.default_rng(42))
        return loss

    loss = loss_value()
    loss.backward()
    h = 1e-5
    for param, idx in [(critic.conv2.weight, (3, 1, 0, 2)), (critic.head.weight, (5, 0))]:
        g = param.grad[idx]
        keep = param.data[idx]
        param.data[idx] = keep + h
        up = float(loss_value().data)
        param.data[idx] = keep - h
        down = float(loss_value().data)
        param.data[idx] = keep
        fd = (up - down) / (2 * h)
        assert abs(fd - g) / (abs(fd) + 1e-12) < 1e-6
    for p in [t for t in (target, pred)]:
        assert isinstance(p, np.ndarray)  # inputs are plain data: no gradient path


def test_critic_loss_shape_check():
    with pytest.raises(ShapeError, match="differ"):
        critic_adversarial_loss(np.zeros((2, 1, 4, 4)), np.zeros((3, 1, 4, 4)), make_critic())


def test_critic_works_on_single_pixel_maps():
    c = make_critic(9)
    s = critic_score(c, Tensor(np.random.default_rng(0).random((5, 1, 1, 1))))
    assert s.shape == (5,)
    assert np.isfinite(s.data).all()


def test_head_flip_negates_potential_exactly():
    rng = np.random.default_rng(20)
    c = make_critic(21)
    maps = rng.random((4, 1, 4, 4))
    before = c.score(Tensor(maps)).data.copy()
    assert orient_critic_head(c, em_gap=-0.5)
    after = c.score(Tensor(maps)).data
    assert np.allclose(after, -before, atol=1e-12)
    # a healthy positive gap leaves the head untouched
    assert not orient_critic_head(c, em_gap=0.2)
    assert np.allclose(c.score(Tensor(maps)).data, after, atol=0.0)


def test_em_gap_estimate_matches_score_difference():
    rng = np.random.default_rng(10)
    c = make_critic(11)
    target = rng.random((4, 1, 4, 4))
    pred = rng.random((4, 1, 4, 4))
    gap = estimate_em_gap(c, target, pred)
    st_ = float(c.score(Tensor(target)).mean().data)
    sp = float(c.score(Tensor(pred)).mean().data)
    assert gap == pytest.approx(st_ - sp, abs=1e-12)


# -- exact 1-D earth mover distance ----------------------------------------------


def test_point_masses_pay_their_separation():
    p = np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array([0.0, 0.0, 0.0, 1.0])
    assert emd_1d(p, q) == 3.0


def test_split_mass_example():
    p = np.array([0.5, 0.5, 0.0, 0.0])
    q = np.array([0.0, 0.0, 0.5, 0.5])
    assert emd_1d(p, q) == 2.0


def test_unequal_mass_rejected():
    with pytest.raises(ValueError, match="sum to 1"):
        emd_1d(np.array([0.5, 0.4]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError, match="negative"):
        emd_1d(np.array([1.5, -0.5]), np.array([0.5, 0.5]))


def test_translation_moves_cost_linearly():
    rng = np.random.default_rng(12)
    base = rng.random(6)
    base /= base.sum()
    for k in (1, 2, 3):
        p = np.concatenate([base, np.zeros(k)])
        q = np.concatenate([np.zeros(k), base])
        assert emd_1d(p, q) == pytest.approx(k, abs=1e-12)


def test_matches_linear_program_on_random_histograms():
    rng = np.random.default_rng(13)
    for _ in range(25):
        n = int(rng.integers(2, 8))
        p = rng.random(n)
        q = rng.random(n)
        p /= p.sum()
        q /= q.sum()
        assert emd_1d(p, q) == pytest.approx(emd_lp(p, q), abs=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    p, q, r = rng.random((3, n)) + 1e-3
    p, q, r = p / p.sum(), q / q.sum(), r / r.sum()
    assert emd_1d(p, p) == pytest.approx(0.0, abs=1e-12)
    assert emd_1d(p, q) == pytest.approx(emd_1d(q, p), abs=1e-12)
    assert emd_1d(p, r) <= emd_1d(p, q) + emd_1d(q, r) + 1e-12
    assert emd_1d(p, q) >= 0.0


# -- ablation distances -----------------------------------------------------------


def test_euclidean_distance_on_histograms():
    p = np.array([0.5, 0.5, 0.0, 0.0])
    q = np.array([0.0, 0.0, 0.5, 0.5])
    assert distribution_distance("ed", p, q) == pytest.approx(1.0, abs=1e-12)


def test_kl_worked_example():
    # KL([1,0], [1/2,1/2]) = ln 2 up to smoothing
    got = distribution_distance("kl", np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert got == pytest.approx(np.log(2.0), abs=1e-6)


def test_kl_is_asymmetric_js_is_symmetric():
    p = np.array([0.7, 0.2, 0.1])
    q = np.array([0.1, 0.3, 0.6])
    assert distribution_distance("kl", p, q) != pytest.approx(distribution_distance("kl", q, p), abs=1e-6)
    assert distribution_distance("js", p, q) == pytest.approx(distribution_distance("js", q, p), abs=1e-12)
    assert distribution_distance("em", p, q) == emd_1d(p, q)


def test_unknown_distance_kind_rejected():
    with pytest.raises(ValueError, match="unknown distance"):
        distribution_distance("cosine", np.array([1.0]), np.array([1.0]))


# -- differentiable value histograms -----------------------------------------------


def test_soft_histogram_masses_sum_to_one():
    rng = np.random.default_rng(14)
    h = soft_value_histogram(Tensor(rng.random((2, 1, 5, 5))), bins=16)
    assert h.shape == (16,)
    assert h.data.sum() == pytest.approx(1.0, abs=1e-12)
    assert (h.data >= 0).all()


def test_soft_histogram_matches_interpolation_oracle():
    rng = np.random.default_rng(15)
    x = rng.random(64)
    bins = 8
    got = soft_value_histogram(Tensor(x), bins=bins).data
    want = np.zeros(bins)
    for v in x:
        f = v * (bins - 1)
        lo = int(np.floor(f))
        hi = min(lo + 1, bins - 1)
        want[lo] += 1 - (f - lo)
        want[hi] += f - lo
    want /= x.size
    assert np.allclose(got, want, atol=1e-12)


def test_point_mass_lands_in_one_bin():
    h = soft_value_histogram(Tensor(np.zeros(10)), bins=4).data
    assert np.allclose(h, [1.0, 0.0, 0.0, 0.0], atol=1e-15)


def test_distance_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(16)
    x = rng.random((2, 1, 4, 4))
    tgt = (rng.random((2, 1, 4, 4)) < 0.4).astype(float)
    for kind in ("ed", "kl", "js"):
        xt = Tensor(x.copy(), requires_grad=True)
        distance_loss(kind, xt, tgt).backward()
        # probe the largest-gradient element: away from hat-kernel kinks
        idx = np.unravel_index(np.abs(xt.grad).argmax(), x.shape)
        h = 1e-5
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (float(distance_loss(kind, Tensor(xp), tgt).data)
              - float(distance_loss(kind, Tensor(xm), tgt).data)) / (2 * h)
        assert abs(fd - xt.grad[idx]) / (abs(fd) + 1e-12) < 1e-4, kind


def test_distance_loss_is_unpaired():
    # permuting the batch changes nothing: only pooled value statistics matter
    rng = np.random.default_rng(17)
    x = rng.random((4, 1, 3, 3))
    tgt = rng.random((4, 1, 3, 3))
    for kind in ("ed", "kl", "js"):
        a = float(distance_loss(kind, Tensor(x), tgt).data)
        b = float(distance_loss(kind, Tensor(x[::-1].copy()), tgt).data)
        assert a == pytest.approx(b, abs=1e-12)


def test_distance_loss_rejects_em():
    with pytest.raises(ValueError, match="ed/kl/js"):
        distance_loss("em", Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 2)))


def test_matching_batches_have_near_zero_distance():
    rng = np.random.default_rng(18)
    x = rng.random((3, 1, 4, 4))
    for kind in ("ed", "js"):
        d = float(distance_loss(kind, Tensor(x), x.copy()).data)
        assert d < 1e-6, kind
