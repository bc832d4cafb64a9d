"""Differentiable softmax relaxation of the AMA and the penalized training loss.

Trainable AMA parameters live in an unconstrained space (`RawAmaParams`) and
are mapped to a feasible AMA by `realize`: each menu entry's item column is
a softmax over n bidders plus a reserve slot, weights go through a softplus
with a small floor. The argmax over menu entries is then replaced by a
softmax with temperature T, which makes payments differentiable:

    g_hat       = sum_s softmax_s(T asw(s)) A_s
    g_hat_-i    = sum_s softmax_s(T asw_-i(s)) A_s
    p_hat_i     = (asw_-i(g_hat_-i) - asw_-i(g_hat)) / w_i
    u_hat_i     = v_i . g_hat_i - p_hat_i

where asw_-i of a convex combination of menu entries is the same convex
combination of the entries' asw_-i values. All gradients below are written
out by hand and checked against central finite differences in the tests.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.schemas.checkpoint import RawAmaDocument
from src.schemas.training import Stage
from src.services.cor_net import CorPaymentNet, PaymentBlock
from src.services.distributions import Dataset
from src.services.mechanism import AmaParams, ProfileLike, ama_outcome_batch, as_batch

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-3


@dataclass
class RawAmaParams:
    """Unconstrained AMA parameters.

    Attributes:
        menu_logits: Shape (S, m, n+1); per entry and item, logits over the n bidders then the reserve.
        weight_logits: Shape (n,); w = softplus(weight_logits) + WEIGHT_FLOOR.
        boosts: Shape (S,); passed through as lambda.
        temperature_feas: Sharpness of the per-item feasibility softmax.
    """
    menu_logits: np.ndarray
    weight_logits: np.ndarray
    boosts: np.ndarray
    temperature_feas: float = 1.0

    @property
    def S(self) -> int:
        return self.menu_logits.shape[0]

    @property
    def n(self) -> int:
        return self.menu_logits.shape[2] - 1

    @property
    def m(self) -> int:
        return self.menu_logits.shape[1]

    @classmethod
    def init(cls, n: int, m: int, S: int, seed: int = 0, temperature_feas: float = 1.0) -> "RawAmaParams":
        """Random menu logits, unit weights, zero boosts."""
        rng = np.random.default_rng(seed)
        unit_weight_logit = np.log(np.expm1(1.0 - WEIGHT_FLOOR))
        return cls(
            menu_logits=rng.normal(0.0, 1.0, size=(S, m, n + 1)),
            weight_logits=np.full(n, unit_weight_logit),
            boosts=np.zeros(S),
            temperature_feas=temperature_feas,
        )

    def copy(self) -> "RawAmaParams":
        return RawAmaParams(
            self.menu_logits.copy(), self.weight_logits.copy(), self.boosts.copy(), self.temperature_feas
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed `raw.<name>` (live views, updated in place)."""
        return {
            "raw.menu_logits": self.menu_logits,
            "raw.weight_logits": self.weight_logits,
            "raw.boosts": self.boosts,
        }

    def to_document(self) -> RawAmaDocument:
        return RawAmaDocument(
            menu_logits=self.menu_logits.tolist(),
            weight_logits=self.weight_logits.tolist(),
            boosts=self.boosts.tolist(),
            temperature_feas=self.temperature_feas,
        )

    @classmethod
    def from_document(cls, doc: RawAmaDocument) -> "RawAmaParams":
        return cls(
            menu_logits=np.asarray(doc.menu_logits, dtype=np.float64),
            weight_logits=np.asarray(doc.weight_logits, dtype=np.float64),
            boosts=np.asarray(doc.boosts, dtype=np.float64),
            temperature_feas=doc.temperature_feas,
        )


@dataclass
class SoftOutcome:
    """Relaxed outcome for a batch of K profiles.

    Attributes:
        soft_alloc: g_hat, shape (K, n, m).
        soft_alloc_minus: g_hat_-i for every bidder i, shape (K, n, n, m) indexed [k, i].
        pay_hat: Relaxed AMA payments, shape (K, n) (None from `soft_allocate`).
        util_hat: Relaxed AMA utilities, shape (K, n) (None from `soft_allocate`).
        menu_weights: softmax_s(T asw), shape (K, S).
    """
    soft_alloc: np.ndarray
    soft_alloc_minus: np.ndarray
    pay_hat: Optional[np.ndarray]
    util_hat: Optional[np.ndarray]
    menu_weights: np.ndarray


@dataclass
class LossResult:
    """Penalized loss over a batch and its exact gradients.

    Attributes:
        loss: sum_k (-Revenue(V_k) + gamma Regret_IR(V_k)).
        revenue_mean: Mean revenue (soft AMA payments in the mutual and baseline stages).
        regret_ir_mean: Mean IR regret of the CA-AMA utilities.
        grad_raw: Gradients keyed like `RawAmaParams.parameters()` (zeros in the post stage).
        grad_cor: Per-bidder gradients of the payment networks (None without networks).
    """
    loss: float
    revenue_mean: float
    regret_ir_mean: float
    grad_raw: dict[str, np.ndarray]
    grad_cor: Optional[list[PaymentBlock]]


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int) -> np.ndarray:
    """Gradient w.r.t. z of y = softmax(z) along `axis`."""
    return y * (dy - (y * dy).sum(axis=axis, keepdims=True))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# realize
# ---------------------------------------------------------------------------

def _feasibility_probs(raw: RawAmaParams) -> np.ndarray:
    return softmax(raw.menu_logits * raw.temperature_feas, axis=-1)


def realize(raw: RawAmaParams) -> AmaParams:
    """Map raw parameters to a feasible AMA (column sums <= 1 by construction)."""
    probs = _feasibility_probs(raw)
    menu = np.transpose(probs[:, :, : raw.n], (0, 2, 1))
    weights = softplus(raw.weight_logits) + WEIGHT_FLOOR
    return AmaParams(menu=menu, weights=weights, boosts=raw.boosts.copy())


def _realize_backward(
    raw: RawAmaParams, d_menu: np.ndarray, d_weights: np.ndarray, d_boosts: np.ndarray
) -> dict[str, np.ndarray]:
    probs = _feasibility_probs(raw)
    d_probs = np.zeros_like(probs)
    d_probs[:, :, : raw.n] = np.transpose(d_menu, (0, 2, 1))
    d_logits = raw.temperature_feas * _softmax_backward(probs, d_probs, axis=-1)
    return {
        "raw.menu_logits": d_logits,
        "raw.weight_logits": d_weights * sigmoid(raw.weight_logits),
        "raw.boosts": d_boosts.copy(),
    }


# ---------------------------------------------------------------------------
# relaxed forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _RelaxedCache:
    raw_values: np.ndarray    # x[k, s, i] = v_i . (A_s)_i
    asw: np.ndarray           # a[k, s]
    asw_minus: np.ndarray     # r[k, s, i]
    P: np.ndarray             # softmax_s(T a)
    Q: np.ndarray             # softmax_s(T r[..., i])
    pay: np.ndarray
    vg: np.ndarray            # v_i . g_hat_i


def _relaxed_forward(values: np.ndarray, params: AmaParams, T: float) -> _RelaxedCache:
    x = np.einsum("knm,snm->ksn", values, params.menu)
    c = x * params.weights
    a = c.sum(axis=2) + params.boosts
    r = a[:, :, None] - c

    P = softmax(T * a, axis=1)
    Q = softmax(T * r, axis=1)

    expected_minus = (Q * r).sum(axis=1)
    expected_all = (P[:, :, None] * r).sum(axis=1)
    pay = (expected_minus - expected_all) / params.weights
    vg = (P[:, :, None] * x).sum(axis=1)
    return _RelaxedCache(raw_values=x, asw=a, asw_minus=r, P=P, Q=Q, pay=pay, vg=vg)


def _relaxed_backward(
    values: np.ndarray,
    params: AmaParams,
    cache: _RelaxedCache,
    T: float,
    grad_pay: np.ndarray,
    grad_vg: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. (menu, weights, boosts) given dL/dpay and dL/d(v_i . g_hat_i)."""
    w = params.weights
    x, r, P, Q = cache.raw_values, cache.asw_minus, cache.P, cache.Q

    d_expected_minus = grad_pay / w
    d_expected_all = -grad_pay / w
    d_weights = -(grad_pay * cache.pay / w).sum(axis=0)

    d_r = Q * d_expected_minus[:, None, :] + P[:, :, None] * d_expected_all[:, None, :]
    d_Q = r * d_expected_minus[:, None, :]
    d_P = (r * d_expected_all[:, None, :]).sum(axis=2) + (x * grad_vg[:, None, :]).sum(axis=2)
    d_x = P[:, :, None] * grad_vg[:, None, :]

    d_a = T * _softmax_backward(P, d_P, axis=1)
    d_r = d_r + T * _softmax_backward(Q, d_Q, axis=1)

    d_a = d_a + d_r.sum(axis=2)
    d_c = d_a[:, :, None] - d_r

    d_boosts = d_a.sum(axis=0)
    d_x = d_x + d_c * w
    d_weights = d_weights + (d_c * x).sum(axis=(0, 1))
    d_menu = np.einsum("ksi,kij->sij", d_x, values)
    return d_menu, d_weights, d_boosts


def soft_allocate(V: ProfileLike, params: AmaParams, T: float) -> SoftOutcome:
    """Softmax-weighted allocations g_hat and g_hat_-i (no payments)."""
    if T <= 0:
        raise ValueError("Temperature T must be > 0")
    values = as_batch(V)
    cache = _relaxed_forward(values, params, T)
    return SoftOutcome(
        soft_alloc=np.einsum("ks,snm->knm", cache.P, params.menu),
        soft_alloc_minus=np.einsum("ksi,snm->kinm", cache.Q, params.menu),
        pay_hat=None,
        util_hat=None,
        menu_weights=cache.P,
    )


def soft_payment_utility(V: ProfileLike, params: AmaParams, T: float) -> SoftOutcome:
    """Relaxed allocations plus p_hat and u_hat for every bidder."""
    if T <= 0:
        raise ValueError("Temperature T must be > 0")
    values = as_batch(V)
    cache = _relaxed_forward(values, params, T)
    return SoftOutcome(
        soft_alloc=np.einsum("ks,snm->knm", cache.P, params.menu),
        soft_alloc_minus=np.einsum("ksi,snm->kinm", cache.Q, params.menu),
        pay_hat=cache.pay,
        util_hat=cache.vg - cache.pay,
        menu_weights=cache.P,
    )


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _zero_raw_grads(raw: RawAmaParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in raw.parameters().items()}


def loss_and_grad(
    batch: Union[Dataset, np.ndarray],
    raw: RawAmaParams,
    cor: Optional[CorPaymentNet],
    gamma: float,
    T: float,
    stage: Stage,
) -> LossResult:
    """Penalized loss sum_k (-Revenue + gamma Regret_IR) and its gradients.

    Stages:
        mutual: relaxed AMA payments/utilities; gradients for both raw and cor.
        post: exact AMA payments/utilities with the AMA frozen; grad_raw is zero.
        baseline: relaxed AMA without payment networks or penalty (the plain AMA comparator).

    The hinge max(0, .) and the ReLUs use subgradient 0 at the kink.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    values = batch.profiles if isinstance(batch, Dataset) else as_batch(batch)
    K = values.shape[0]
    params = realize(raw)

    if stage == Stage.BASELINE or cor is None:
        cache = _relaxed_forward(values, params, T)
        revenue = cache.pay.sum(axis=1)
        grad_pay = -np.ones_like(cache.pay)
        d_menu, d_weights, d_boosts = _relaxed_backward(
            values, params, cache, T, grad_pay, np.zeros_like(cache.vg)
        )
        return LossResult(
            loss=float(-revenue.sum()),
            revenue_mean=float(revenue.mean()),
            regret_ir_mean=0.0,
            grad_raw=_realize_backward(raw, d_menu, d_weights, d_boosts),
            grad_cor=None,
        )

    pay_cor = cor.payments(values)

    if stage == Stage.MUTUAL:
        cache = _relaxed_forward(values, params, T)
        pay_ama, util_ama = cache.pay, cache.vg - cache.pay
    else:
        exact = ama_outcome_batch(values, params)
        pay_ama, util_ama = exact.pay_ama, exact.utilities

    violation = pay_cor - util_ama
    active = (violation > 0.0).astype(np.float64)
    regret = np.maximum(0.0, violation).sum(axis=1)
    revenue = (pay_ama + pay_cor).sum(axis=1)
    loss = float((-revenue + gamma * regret).sum())

    grad_pay_cor = -1.0 + gamma * active
    grad_cor = cor.payments_backward(values, grad_pay_cor)

    if stage == Stage.MUTUAL:
        # violation = pay_cor - vg + pay_ama
        grad_pay = -1.0 + gamma * active
        grad_vg = -gamma * active
        d_menu, d_weights, d_boosts = _relaxed_backward(values, params, cache, T, grad_pay, grad_vg)
        grad_raw = _realize_backward(raw, d_menu, d_weights, d_boosts)
    else:
        grad_raw = _zero_raw_grads(raw)

    return LossResult(
        loss=loss,
        revenue_mean=float(revenue.sum() / K),
        regret_ir_mean=float(regret.sum() / K),
        grad_raw=grad_raw,
        grad_cor=grad_cor,
    )
