"""Unit tests for the softmax relaxation and the training loss.

Gradients are checked against central finite differences on 2x2 auctions
with S=4 menu entries at T=10: one hand-set instance and 100 seeded random
ones.
"""
import numpy as np
import pytest

from src.schemas.training import Stage
from src.services.cor_net import CorPaymentNet
from src.services.mechanism import AmaParams, ama_outcome_batch, asw_table
from src.services.relaxation import (
    WEIGHT_FLOOR,
    RawAmaParams,
    loss_and_grad,
    realize,
    soft_allocate,
    soft_payment_utility,
)

T = 10.0
GAMMA = 2.0


@pytest.fixture
def raw():
    raw = RawAmaParams.init(2, 2, S=4, seed=3)
    raw.boosts[:] = np.random.default_rng(8).normal(0.0, 0.2, 4)
    raw.weight_logits[:] = [0.3, -0.2]
    return raw


@pytest.fixture
def cor():
    net = CorPaymentNet.init(2, 2, widths=(4, 3), seed=5)
    for block in net.blocks:
        block.b3[:] = 0.05
    return net


@pytest.fixture
def values():
    return np.random.default_rng(12).random((8, 2, 2))


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        saved = arr[idx]
        arr[idx] = saved + h
        up = fn()
        arr[idx] = saved - h
        down = fn()
        arr[idx] = saved
        grad[idx] = (up - down) / (2.0 * h)
    return grad


class TestRealize:

    def test_menu_is_feasible(self):
        raw = RawAmaParams.init(3, 2, S=16, seed=1)
        raw.menu_logits *= 20.0
        params = realize(raw)
        assert params.menu.shape == (16, 3, 2)
        assert params.menu.min() >= 0.0
        assert params.menu.sum(axis=1).max() <= 1.0 + 1e-12

    def test_initial_weights_are_one(self):
        params = realize(RawAmaParams.init(2, 2, S=4))
        np.testing.assert_allclose(params.weights, 1.0)
        assert np.all(params.boosts == 0.0)

    def test_weights_floor(self):
        raw = RawAmaParams.init(2, 1, S=2)
        raw.weight_logits[:] = -800.0
        assert np.all(realize(raw).weights >= WEIGHT_FLOOR)

    def test_document_round_trip(self, raw):
        restored = RawAmaParams.from_document(raw.to_document())
        np.testing.assert_array_equal(restored.menu_logits, raw.menu_logits)
        assert (restored.S, restored.n, restored.m) == (4, 2, 2)


class TestSoftOutcome:

    def test_soft_allocation_is_feasible(self, raw, values):
        out = soft_allocate(values, realize(raw), T)
        np.testing.assert_allclose(out.menu_weights.sum(axis=1), 1.0)
        assert out.soft_alloc.sum(axis=1).max() <= 1.0 + 1e-12
        assert out.soft_alloc_minus.shape == (8, 2, 2, 2)
        assert out.pay_hat is None

    def test_temperature_must_be_positive(self, raw, values):
        with pytest.raises(ValueError):
            soft_allocate(values, realize(raw), 0.0)
        with pytest.raises(ValueError):
            soft_payment_utility(values, realize(raw), -1.0)

    def test_large_temperature_recovers_exact_ama(self, raw, values):
        """Away from near-ties the relaxed outcome matches the argmax outcome."""
        params = realize(raw)
        big = np.random.default_rng(0).random((400, 2, 2))
        table, contrib = asw_table(big, params)
        minus = table[:, :, None] - contrib

        def gap(z):
            top2 = np.sort(z, axis=1)[:, -2:]
            return top2[:, 1] - top2[:, 0]

        clear = (gap(table) > 0.02) & (gap(minus).min(axis=1) > 0.02)
        assert clear.sum() > 20

        soft = soft_payment_utility(big[clear], params, 1e4)
        exact = ama_outcome_batch(big[clear], params)
        np.testing.assert_allclose(soft.soft_alloc, exact.allocation, atol=1e-8)
        np.testing.assert_allclose(soft.pay_hat, exact.pay_ama, atol=1e-8)
        np.testing.assert_allclose(soft.util_hat, exact.utilities, atol=1e-8)

    @pytest.mark.parametrize("temperature, bound", [(500.0, 31 * np.exp(-5.0)), (2000.0, 6.4e-8)])
    def test_weight_off_the_argmax_is_exponentially_small(self, temperature, bound):
        """With a 0.01 welfare gap to 31 other entries the tail is at most 31 exp(-0.01 T)."""
        menu = np.zeros((32, 2, 1))
        menu[:, 0, 0] = np.arange(32) / 40.0
        boosts = np.zeros(32)
        boosts[0] = 0.01
        params = AmaParams(menu=menu, weights=np.ones(2), boosts=boosts)
        tail = soft_allocate(np.zeros((1, 2, 1)), params, temperature).menu_weights[0, 1:].sum()
        assert tail <= bound
        ratio = 31 * np.exp(-0.01 * temperature)
        assert tail == pytest.approx(ratio / (1.0 + ratio), rel=1e-9)

    def test_tail_bound_with_a_wider_gap(self):
        menu = np.zeros((32, 2, 1))
        menu[:, 0, 0] = np.arange(32) / 40.0
        boosts = np.full(32, -0.05)
        boosts[0] = 0.01
        params = AmaParams(menu=menu, weights=np.ones(2), boosts=boosts)
        tail = soft_allocate(np.zeros((1, 2, 1)), params, 500.0).menu_weights[0, 1:].sum()
        assert tail <= 31 * np.exp(-0.01 * 500.0)
        assert tail <= 31 * np.exp(-0.06 * 500.0) * 1.0001


def check_raw(values, raw, cor, stage):
    result = loss_and_grad(values, raw, cor, GAMMA, T, stage)

    def loss():
        return loss_and_grad(values, raw, cor, GAMMA, T, stage).loss

    for name, arr in raw.parameters().items():
        np.testing.assert_allclose(
            result.grad_raw[name], numeric_grad(loss, arr), rtol=1e-4, atol=1e-6, err_msg=name
        )


def check_cor(values, raw, cor, stage):
    result = loss_and_grad(values, raw, cor, GAMMA, T, stage)

    def loss():
        return loss_and_grad(values, raw, cor, GAMMA, T, stage).loss

    for i, block in enumerate(cor.blocks):
        for name, arr in block.items():
            np.testing.assert_allclose(
                getattr(result.grad_cor[i], name), numeric_grad(loss, arr),
                rtol=1e-4, atol=1e-6, err_msg=f"{i}.{name}",
            )


class TestLossGradients:

    def test_baseline_raw_gradients(self, values, raw):
        check_raw(values, raw, None, Stage.BASELINE)

    def test_mutual_raw_gradients(self, values, raw, cor):
        check_raw(values, raw, cor, Stage.MUTUAL)

    def test_mutual_cor_gradients(self, values, raw, cor):
        check_cor(values, raw, cor, Stage.MUTUAL)

    def test_post_cor_gradients(self, values, raw, cor):
        check_cor(values, raw, cor, Stage.POST)

    def test_post_stage_freezes_ama(self, values, raw, cor):
        result = loss_and_grad(values, raw, cor, GAMMA, T, Stage.POST)
        assert all(not g.any() for g in result.grad_raw.values())

    def test_penalty_is_active_on_this_batch(self, values, raw, cor):
        """The hinge term must contribute for the gradient checks above to cover it."""
        for block in cor.blocks:
            block.b3[:] = 0.6
        result = loss_and_grad(values, raw, cor, GAMMA, T, Stage.MUTUAL)
        assert result.regret_ir_mean > 0.0
        check_cor(values, raw, cor, Stage.MUTUAL)


def random_instance(seed):
    """2x2 auction, S=4, with random AMA parameters and payment networks."""
    rng = np.random.default_rng(seed)
    raw = RawAmaParams.init(2, 2, S=4, seed=seed)
    raw.boosts[:] = rng.normal(0.0, 0.2, 4)
    raw.weight_logits[:] = rng.normal(0.0, 0.3, 2)
    cor = CorPaymentNet.init(2, 2, widths=(4, 3), seed=seed + 1000)
    for block in cor.blocks:
        block.b1[:] = rng.normal(0.0, 0.1, block.b1.shape)
        block.b2[:] = rng.normal(0.0, 0.1, block.b2.shape)
        block.b3[:] = rng.uniform(0.0, 0.6, block.b3.shape)
    return rng.random((8, 2, 2)), raw, cor


class TestRandomInstanceGradients:
    """The same finite-difference checks on 100 seeded random auctions."""

    @pytest.fixture(params=range(100))
    def instance(self, request):
        return random_instance(request.param)

    def test_baseline_raw_gradients(self, instance):
        values, raw, _ = instance
        check_raw(values, raw, None, Stage.BASELINE)

    def test_mutual_raw_gradients(self, instance):
        check_raw(*instance, Stage.MUTUAL)

    def test_mutual_cor_gradients(self, instance):
        check_cor(*instance, Stage.MUTUAL)

    def test_post_cor_gradients(self, instance):
        check_cor(*instance, Stage.POST)

    def test_penalty_is_active_on_many_instances(self):
        active = [loss_and_grad(*random_instance(seed), GAMMA, T, Stage.MUTUAL).regret_ir_mean > 0.0
                  for seed in range(100)]
        assert sum(active) >= 20


class TestLossValues:

    def test_baseline_has_no_regret(self, values, raw):
        result = loss_and_grad(values, raw, None, GAMMA, T, Stage.BASELINE)
        assert result.grad_cor is None
        assert result.regret_ir_mean == 0.0
        assert result.loss == pytest.approx(-result.revenue_mean * len(values))

    def test_zero_networks_match_baseline_revenue(self, values, raw):
        baseline = loss_and_grad(values, raw, None, GAMMA, T, Stage.BASELINE)
        mutual = loss_and_grad(values, raw, CorPaymentNet.zeros(2, 2), GAMMA, T, Stage.MUTUAL)
        assert mutual.revenue_mean == pytest.approx(baseline.revenue_mean)

    def test_post_stage_uses_exact_payments(self, values, raw):
        result = loss_and_grad(values, raw, CorPaymentNet.zeros(2, 2), GAMMA, T, Stage.POST)
        exact = ama_outcome_batch(values, realize(raw))
        assert result.revenue_mean == pytest.approx(exact.revenue().mean())
        assert result.regret_ir_mean == pytest.approx(0.0, abs=1e-12)

    def test_negative_gamma_rejected(self, values, raw, cor):
        with pytest.raises(ValueError):
            loss_and_grad(values, raw, cor, -1.0, T, Stage.MUTUAL)
