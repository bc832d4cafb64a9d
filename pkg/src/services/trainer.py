"""Two-stage training of CA-AMA parameters.

Mutual stage: AMA parameters (through the softmax relaxation) and payment
networks are updated together. Post stage: the AMA is frozen and only the
payment networks keep training against exact AMA payments. The penalty
strength gamma follows an exponential moving average of the batch IR
regret.

The AmaOnly comparator runs a single baseline stage: soft AMA revenue, no
payment networks, no penalty, gamma never touched.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from src.core.errors import TrainingAbortedError
from src.schemas.distribution import DistributionSpec
from src.schemas.training import MechanismMode, Stage, TrainConfig
from src.services.cor_net import CorPaymentNet
from src.services.distributions import TRAIN_STREAM, Dataset, Sampler, held_out
from src.services.mechanism import OutcomeBatch, ama_outcome_batch, caama_outcome_batch, post_process_ir
from src.services.relaxation import RawAmaParams, loss_and_grad, realize

logger = logging.getLogger(__name__)

REGRET_FLOOR = 1e-8


class BatchSource(Protocol):
    def batch(self, iteration: int, size: int) -> np.ndarray: ...


class FixedSampler:
    """Serves the same fixed profile set at every iteration (full-batch training)."""

    def __init__(self, profiles: np.ndarray):
        self.profiles = np.asarray(profiles, dtype=np.float64)

    def batch(self, iteration: int, size: int) -> np.ndarray:
        return self.profiles


def update_gamma(gamma: float, regret_batch: float, cfg: TrainConfig) -> float:
    """Move gamma by gamma_delta * log(regret / R_target), clipped to [gamma_min, gamma_max]."""
    if regret_batch < 0:
        raise ValueError("regret_batch must be >= 0")
    log_ratio = math.log(max(regret_batch, REGRET_FLOOR)) - math.log(cfg.R_target)
    return min(max(gamma + cfg.gamma_delta * log_ratio, cfg.gamma_min), cfg.gamma_max)


def smooth_regret(previous: Optional[float], regret_batch: float, decay: float) -> float:
    """Exponential moving average of batch regrets, seeded by the first batch."""
    if previous is None or decay == 0.0:
        return regret_batch
    return decay * previous + (1.0 - decay) * regret_batch


class AdamOptimizer:
    """Adam over named parameter arrays, updated in place.

    Moments are keyed by parameter name so a stage that updates only a
    subset of the parameters leaves the other moments untouched.
    """

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bias1 = 1 - self.beta1 ** self.t
        bias2 = 1 - self.beta2 ** self.t
        for name, param in params.items():
            grad = grads[name]
            m = self.first.setdefault(name, np.zeros_like(param))
            v = self.second.setdefault(name, np.zeros_like(param))
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad ** 2
            param -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class MetricRow:
    iter: int
    revenue_soft: float
    revenue_exact: float
    regret_ir: float
    gamma: float
    stage: str
    pay_ama_exact: float
    pay_cor_exact: float


@dataclass
class TrainState:
    """Mutable state of one run.

    Training batches are keyed by (seed, stream, iteration), so `iter` is
    the whole sampler state.
    """
    raw: RawAmaParams
    cor: Optional[CorPaymentNet]
    gamma: float
    iter: int
    stage: Stage
    mode: MechanismMode
    optimizer: AdamOptimizer
    regret_avg: Optional[float] = None
    log: list[MetricRow] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: TrainConfig, spec: DistributionSpec, mode: MechanismMode) -> "TrainState":
        if mode == MechanismMode.VCG:
            raise ValueError("VCG has no trainable parameters")
        raw = RawAmaParams.init(spec.n, spec.m, cfg.menu_size, seed=cfg.seed, temperature_feas=cfg.temperature_feas)
        cor = None
        stage = Stage.BASELINE
        if mode == MechanismMode.CAAMA:
            cor = CorPaymentNet.init(spec.n, spec.m, cfg.cor_widths, seed=cfg.seed + 1, use_bias=cfg.cor_use_bias)
            stage = Stage.MUTUAL
        return cls(
            raw=raw, cor=cor, gamma=cfg.gamma0, iter=0, stage=stage, mode=mode,
            optimizer=AdamOptimizer(lr=cfg.step_size),
        )


@dataclass
class FinalMetrics:
    """Exact metrics of a trained mechanism on a held-out set."""
    revenue: float
    revenue_postproc: float
    regret_ir_mean: float
    regret_ir_max: float
    pay_ama_mean: float
    pay_cor_mean: float
    min_utility_postproc: float

    @property
    def pay_cor_share(self) -> float:
        return self.pay_cor_mean / self.revenue if self.revenue != 0 else 0.0


@dataclass
class TrainResult:
    state: TrainState
    final: FinalMetrics
    wallclock_s: float


def exact_outcomes(values: np.ndarray, raw: RawAmaParams, cor: Optional[CorPaymentNet]) -> OutcomeBatch:
    params = realize(raw)
    if cor is None:
        return ama_outcome_batch(values, params)
    return caama_outcome_batch(values, params, cor)


def final_metrics(values: np.ndarray, raw: RawAmaParams, cor: Optional[CorPaymentNet]) -> FinalMetrics:
    out = exact_outcomes(values, raw, cor)
    post = post_process_ir(out)
    regret = out.regret_ir()
    return FinalMetrics(
        revenue=float(out.revenue().mean()),
        revenue_postproc=float(post.revenue().mean()),
        regret_ir_mean=float(regret.mean()),
        regret_ir_max=float(regret.max()),
        pay_ama_mean=float(out.pay_ama.sum(axis=1).mean()),
        pay_cor_mean=float(out.pay_cor.sum(axis=1).mean()),
        min_utility_postproc=float(post.utilities.min()),
    )


def _trainable(state: TrainState) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    if state.stage in (Stage.MUTUAL, Stage.BASELINE):
        params.update(state.raw.parameters())
    if state.stage in (Stage.MUTUAL, Stage.POST) and state.cor is not None:
        params.update(state.cor.parameters())
    return params


def _record(state: TrainState, batch: np.ndarray, revenue_soft: float) -> MetricRow:
    out = exact_outcomes(batch, state.raw, state.cor)
    row = MetricRow(
        iter=state.iter,
        revenue_soft=revenue_soft,
        revenue_exact=float(out.revenue().mean()),
        regret_ir=float(out.regret_ir().mean()),
        gamma=state.gamma,
        stage=state.stage.value,
        pay_ama_exact=float(out.pay_ama.sum(axis=1).mean()),
        pay_cor_exact=float(out.pay_cor.sum(axis=1).mean()),
    )
    state.log.append(row)
    logger.info(
        "iter=%d stage=%s revenue_soft=%.5f revenue_exact=%.5f regret_ir=%.6f gamma=%.4f",
        row.iter, row.stage, row.revenue_soft, row.revenue_exact, row.regret_ir, row.gamma,
    )
    return row


def step(state: TrainState, cfg: TrainConfig, sampler: BatchSource) -> TrainState:
    """One optimizer update on a fresh batch; mutates and returns `state`."""
    batch = sampler.batch(state.iter, cfg.batch_size)
    cor = state.cor if state.stage != Stage.BASELINE else None
    result = loss_and_grad(batch, state.raw, cor, state.gamma, cfg.T, state.stage)

    if not np.isfinite(result.loss):
        raise TrainingAbortedError(state.iter, state.stage.value, f"non-finite loss {result.loss}")

    grads = dict(result.grad_raw)
    if result.grad_cor is not None:
        grads.update(CorPaymentNet.flatten_grads(result.grad_cor, use_bias=state.cor.use_bias))
    params = _trainable(state)
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingAbortedError(state.iter, state.stage.value, f"non-finite gradient for {name}")
    state.optimizer.step(params, grads)

    if state.stage != Stage.BASELINE:
        state.regret_avg = smooth_regret(state.regret_avg, result.regret_ir_mean, cfg.regret_smoothing)
        state.gamma = update_gamma(state.gamma, state.regret_avg, cfg)
    state.iter += 1

    if state.iter % cfg.eval_every == 0 or state.iter == cfg.total_iters:
        _record(state, batch, result.revenue_mean)

    if state.stage == Stage.MUTUAL and state.iter >= cfg.mutual_iters:
        state.stage = Stage.POST
        logger.info("Switching to post training at iteration %d (gamma=%.4f)", state.iter, state.gamma)
    return state


def run(state: TrainState, cfg: TrainConfig, sampler: BatchSource, until: int) -> TrainState:
    """Step until `state.iter` reaches `until`."""
    while state.iter < until:
        step(state, cfg, sampler)
    return state


def train(
    cfg: TrainConfig,
    spec: DistributionSpec,
    mode: MechanismMode,
    test: Optional[Dataset] = None,
) -> TrainResult:
    """Run the full schedule and evaluate the result exactly on a held-out set."""
    started = time.perf_counter()
    state = TrainState.initial(cfg, spec, mode)
    sampler = Sampler(spec, stream=TRAIN_STREAM)
    logger.info(
        "Training %s on %s %dx%d: %d iterations, batch %d, S=%d",
        mode.value, spec.kind.value, spec.n, spec.m, cfg.total_iters, cfg.batch_size, cfg.menu_size,
    )
    run(state, cfg, sampler, cfg.total_iters)

    test = test if test is not None else held_out(spec, cfg.test_size)
    final = final_metrics(test.profiles, state.raw, state.cor)
    wallclock = time.perf_counter() - started
    logger.info(
        "Finished %s: revenue=%.5f revenue_postproc=%.5f regret_ir=%.6f (%.1fs)",
        mode.value, final.revenue, final.revenue_postproc, final.regret_ir_mean, wallclock,
    )
    return TrainResult(state=state, final=final, wallclock_s=wallclock)


def post_train(
    raw: RawAmaParams,
    cor: CorPaymentNet,
    cfg: TrainConfig,
    sampler: BatchSource,
    iters: int,
) -> TrainState:
    """Train only the payment networks against a frozen AMA for `iters` steps."""
    state = TrainState(
        raw=raw, cor=cor, gamma=cfg.gamma0, iter=0, stage=Stage.POST, mode=MechanismMode.CAAMA,
        optimizer=AdamOptimizer(lr=cfg.step_size),
    )
    return run(state, cfg, sampler, iters)
