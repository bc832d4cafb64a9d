"""Oracles and certificates for trained and hand-built mechanisms.

Measurements are vectorised over profiles and fanned out over profile
chunks with a thread pool; chunk results are reduced in chunk order.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from src.core.config import settings
from src.core.errors import GridTooLargeError, UnsupportedDistributionError
from src.schemas.distribution import DistributionKind, DistributionSpec
from src.schemas.report import DamaGrid, DsicGrid, GapRow, GenBoundInputs, IrStats, VerificationReport
from src.schemas.training import TrainConfig
from src.services.cor_net import CorPaymentNet, affine_payment_net, max_spectral_norms
from src.services.distributions import (
    Dataset,
    conditional_support,
    full_surplus_of,
    held_out,
    make_rng,
    sample,
)
from src.services.mechanism import (
    AmaParams,
    OutcomeBatch,
    ama_outcome_batch,
    as_batch,
    caama_outcome_batch,
    post_process_ir,
)
from src.services.relaxation import RawAmaParams
from src.services.trainer import FixedSampler, final_metrics, post_train

logger = logging.getLogger(__name__)

ORACLE_GRID_POINTS = 65
DSIC_CHUNK_PROFILES = 200_000
DAMA_CHUNK_CELLS = 20_000


# ---------------------------------------------------------------------------
# mechanism handles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MechanismHandle:
    """An exactly evaluable mechanism: AMA, CA-AMA, or either with bidder opt-out.

    With `post_processed`, a bidder whose utility would be negative opts out
    and receives 0; `outcomes` applies the opt-out to the base outcomes.
    """
    params: AmaParams
    cor: Optional[CorPaymentNet] = None
    post_processed: bool = False
    label: str = ""

    def base_outcomes(self, values: np.ndarray) -> OutcomeBatch:
        if self.cor is None:
            return ama_outcome_batch(values, self.params)
        return caama_outcome_batch(values, self.params, self.cor)

    def outcomes(self, values: np.ndarray) -> OutcomeBatch:
        out = self.base_outcomes(values)
        return post_process_ir(out) if self.post_processed else out

    def with_opt_out(self) -> "MechanismHandle":
        return MechanismHandle(self.params, self.cor, True, f"{self.label}+opt-out" if self.label else "opt-out")

    def true_utilities(self, reported: np.ndarray, true_values: np.ndarray) -> np.ndarray:
        """Utility of every bidder under `true_values` when the mechanism runs on `reported`."""
        out = self.base_outcomes(reported)
        u = np.einsum("knm,knm->kn", true_values, out.allocation) - out.payments
        return np.maximum(u, 0.0) if self.post_processed else u


def ama_handle(params: AmaParams, label: str = "AMA") -> MechanismHandle:
    return MechanismHandle(params=params, label=label)


def caama_handle(params: AmaParams, cor: CorPaymentNet, label: str = "CA-AMA") -> MechanismHandle:
    return MechanismHandle(params=params, cor=cor, label=label)


def _chunks(total: int, size: int) -> list[slice]:
    return [slice(start, min(start + size, total)) for start in range(0, total, size)]


def _map_chunks(fn: Callable[[slice], Any], chunks: list[slice]) -> list:
    if len(chunks) <= 1 or settings.EVAL_MAX_WORKERS == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=settings.EVAL_MAX_WORKERS) as executor:
        return list(executor.map(fn, chunks))


# ---------------------------------------------------------------------------
# DSIC / IR
# ---------------------------------------------------------------------------

def misreport_probes(m: int, grid: DsicGrid) -> np.ndarray:
    """Candidate misreports, shape (Q, m)."""
    if m <= grid.max_grid_items:
        axis = np.linspace(0.0, 1.0, grid.points_per_item)
        return np.stack(np.meshgrid(*([axis] * m), indexing="ij"), axis=-1).reshape(-1, m)
    return make_rng(grid.seed, 0xD51C).random((grid.random_probes, m))


def measure_dsic_regret(mech: MechanismHandle, test: Dataset, grid: Optional[DsicGrid] = None) -> float:
    """Max over profiles, bidders and probed misreports of the utility gain, floored at 0."""
    grid = grid or DsicGrid()
    values = as_batch(test.profiles if isinstance(test, Dataset) else test)
    K, n, m = values.shape
    probes = misreport_probes(m, grid)
    Q = probes.shape[0]
    truthful = mech.true_utilities(values, values)

    per_chunk = max(1, DSIC_CHUNK_PROFILES // Q)

    def chunk_regret(rows: slice) -> float:
        true_values = values[rows]
        k = true_values.shape[0]
        worst = 0.0
        for i in range(n):
            reported = np.repeat(true_values[:, None], Q, axis=1)
            reported[:, :, i, :] = probes[None]
            reported = reported.reshape(k * Q, n, m)
            u = mech.true_utilities(reported, np.repeat(true_values, Q, axis=0))[:, i].reshape(k, Q)
            gain = u.max(axis=1) - truthful[rows, i]
            worst = max(worst, float(gain.max()))
        return worst

    regret = max(_map_chunks(chunk_regret, _chunks(K, per_chunk)))
    logger.debug("DSIC regret of %s over %d profiles x %d probes: %.3e", mech.label, K, Q, regret)
    return max(regret, 0.0)


def measure_ir(mech: MechanismHandle, test: Dataset) -> IrStats:
    """Exact IR statistics of the mechanism's outcomes."""
    values = as_batch(test.profiles if isinstance(test, Dataset) else test)
    out = mech.outcomes(values)
    regret = out.regret_ir()
    return IrStats(
        ir_regret_mean=float(regret.mean()),
        ir_regret_max=float(regret.max()),
        min_utility=float(out.utilities.min()),
    )


def evaluate(mech: MechanismHandle, test: Dataset, grid: Optional[DsicGrid] = None) -> VerificationReport:
    """DSIC regret, IR statistics and revenue with and without opt-out."""
    values = as_batch(test.profiles if isinstance(test, Dataset) else test)
    base = mech.base_outcomes(values)
    ir = measure_ir(mech, values)
    report = VerificationReport(
        mechanism=mech.label,
        dsic_regret_max=measure_dsic_regret(mech, values, grid),
        ir_regret_mean=ir.ir_regret_mean,
        ir_regret_max=ir.ir_regret_max,
        revenue_mean=float(base.revenue().mean()),
        revenue_post_processed=float(post_process_ir(base).revenue().mean()),
        min_utility=ir.min_utility,
        pay_ama_mean=float(base.pay_ama.sum(axis=1).mean()),
        pay_cor_mean=float(base.pay_cor.sum(axis=1).mean()),
        sample_count=values.shape[0],
    )
    logger.info(
        "%s: revenue=%.5f post=%.5f dsic=%.2e ir_mean=%.2e",
        report.mechanism, report.revenue_mean, report.revenue_post_processed,
        report.dsic_regret_max, report.ir_regret_mean,
    )
    return report


# ---------------------------------------------------------------------------
# IR-tight correlation payment
# ---------------------------------------------------------------------------

def opt_core_oracle(params: AmaParams, i: int, V_minus_i: np.ndarray, spec: DistributionSpec) -> float:
    """Infimum of bidder i's exact AMA utility over the conditional support of v_i given V_-i."""
    support = conditional_support(spec, i, V_minus_i)
    candidates = support.candidates(points_per_dim=ORACLE_GRID_POINTS)
    if candidates.shape[0] == 0:
        raise UnsupportedDistributionError(f"Empty conditional support for bidder {i}")

    others = np.asarray(V_minus_i, dtype=np.float64).reshape(spec.n - 1, spec.m)
    profiles = np.empty((candidates.shape[0], spec.n, spec.m))
    profiles[:, :i] = others[:i]
    profiles[:, i] = candidates
    profiles[:, i + 1:] = others[i:]

    utilities = ama_outcome_batch(profiles, params).utilities[:, i]
    return max(float(utilities.min()), 0.0)


# ---------------------------------------------------------------------------
# deterministic single-item AMA search on the equal revenue construction
# ---------------------------------------------------------------------------

@dataclass
class DamaSearchResult:
    best_revenue: float
    best_params: AmaParams
    cells_evaluated: int


def _segment_revenue(alpha: np.ndarray, beta: np.ndarray, weights: np.ndarray, boosts: np.ndarray, t: np.ndarray):
    """Revenue of the deterministic single-item AMA at v_1 = t, per cell.

    Menu entry 0 is the reserve; entry i+1 sells to bidder i. Shapes: alpha,
    beta, boosts (C, n+1); weights (C, n); t (C, P).
    """
    scores = alpha[:, None, :] + beta[:, None, :] * t[:, :, None]
    winner = np.argmax(scores, axis=2)
    others = np.where(np.arange(scores.shape[2]) == winner[:, :, None], -np.inf, scores)
    runner_up = others.max(axis=2)
    winner_boost = np.take_along_axis(boosts, winner, axis=1)
    winner_weight = np.take_along_axis(weights, np.maximum(winner - 1, 0), axis=1)
    return np.where(winner == 0, 0.0, np.maximum(runner_up - winner_boost, 0.0) / winner_weight)


def dama_brute_search(
    spec: DistributionSpec,
    grid: Optional[DamaGrid] = None,
    dataset: Optional[Dataset] = None,
) -> DamaSearchResult:
    """Best Monte Carlo revenue of a deterministic single-item AMA over a parameter grid.

    On the equal revenue construction every value is an affine function of
    v_1, so each menu entry's affine welfare is a line in t = v_1 and the
    revenue is piecewise linear between the lines' crossings. Each cell's
    Monte Carlo mean is therefore computed exactly from the sorted samples
    and their prefix sums.
    """
    grid = grid or DamaGrid()
    if spec.kind != DistributionKind.EQUAL_REVENUE_CORRELATED:
        raise UnsupportedDistributionError("dama_brute_search is defined on the equal revenue construction")
    n = spec.n
    cells = grid.cell_count(n)
    if cells > grid.max_cells:
        raise GridTooLargeError(f"{cells} grid cells exceed the guard of {grid.max_cells}")

    dataset = dataset or sample(spec, grid.samples)
    t_sorted = np.sort(dataset.profiles[:, 0, 0])
    prefix = np.concatenate([[0.0], np.cumsum(t_sorted)])
    N = t_sorted.shape[0]
    slope = spec.equal_revenue_slope

    weight_axis = np.geomspace(grid.weight_low, grid.weight_high, grid.weight_points)
    boost_axis = np.linspace(grid.boost_low, grid.boost_high, grid.boost_points)
    shape = (grid.weight_points,) * (n - 1) + (grid.boost_points,) * (n + 1)
    pairs = [(a, b) for a in range(n + 1) for b in range(a + 1, n + 1)]
    upper = 1.0 + 1e-9

    def decode(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        digits = np.unravel_index(idx, shape)
        weights = np.ones((idx.shape[0], n))
        for b in range(1, n):
            weights[:, b] = weight_axis[digits[b - 1]]
        boosts = np.stack([boost_axis[digits[n - 1 + k]] for k in range(n + 1)], axis=1)
        return weights, boosts

    def chunk_best(rows: slice) -> tuple[float, int]:
        idx = np.arange(rows.start, rows.stop)
        weights, boosts = decode(idx)
        C = idx.shape[0]

        # affine welfare of entry k as alpha_k + beta_k * t
        alpha = boosts.copy()
        beta = np.zeros((C, n + 1))
        beta[:, 1] = weights[:, 0]
        alpha[:, 2:] += weights[:, 1:] * slope
        beta[:, 2:] = -weights[:, 1:] * slope

        crossings = []
        for a, b in pairs:
            d_beta = beta[:, a] - beta[:, b]
            with np.errstate(divide="ignore", invalid="ignore"):
                x = (alpha[:, b] - alpha[:, a]) / d_beta
            crossings.append(np.where(np.isfinite(x), np.clip(x, 0.0, upper), 0.0))
        # kinks of max(0, runner-up - winner boost)
        for k in range(1, n + 1):
            for j in range(n + 1):
                with np.errstate(divide="ignore", invalid="ignore"):
                    x = (boosts[:, j] - alpha[:, k]) / beta[:, k]
                crossings.append(np.where(np.isfinite(x), np.clip(x, 0.0, upper), 0.0))
        bounds = np.sort(np.column_stack([np.zeros(C), *crossings, np.full(C, upper)]), axis=1)

        lo, hi = bounds[:, :-1], bounds[:, 1:]
        width = hi - lo
        t1, t2 = lo + 0.25 * width, lo + 0.75 * width
        r1 = _segment_revenue(alpha, beta, weights, boosts, t1)
        r2 = _segment_revenue(alpha, beta, weights, boosts, t2)
        with np.errstate(divide="ignore", invalid="ignore"):
            seg_slope = np.where(width > 0, (r2 - r1) / np.where(width > 0, t2 - t1, 1.0), 0.0)
        seg_icpt = r1 - seg_slope * t1

        pos = np.searchsorted(t_sorted, bounds, side="left")
        count = pos[:, 1:] - pos[:, :-1]
        total_t = prefix[pos[:, 1:]] - prefix[pos[:, :-1]]
        revenue = (seg_icpt * count + seg_slope * total_t).sum(axis=1) / N

        best = int(np.argmax(revenue))
        return float(revenue[best]), int(idx[best])

    results = _map_chunks(chunk_best, _chunks(cells, DAMA_CHUNK_CELLS))
    best_revenue, best_cell = max(results, key=lambda r: r[0])
    weights, boosts = decode(np.array([best_cell]))
    best_params = AmaParams.deterministic(n, 1, weights=weights[0], boosts=boosts[0])

    logger.info("Deterministic AMA search over %d cells: best revenue %.5f", cells, best_revenue)
    return DamaSearchResult(best_revenue=best_revenue, best_params=best_params, cells_evaluated=cells)


def full_surplus_mechanism(spec: DistributionSpec) -> MechanismHandle:
    """Hand-set CA-AMA extracting the full surplus on the equal revenue construction.

    Bidder 1 always wins the deterministic VCG-like AMA (w = 1, lambda = 0)
    and pays v_2 there; the correlation payment tops that up to the value
    v_1 = 1 - v_2 / slope implied by the other bids.
    """
    if spec.kind != DistributionKind.EQUAL_REVENUE_CORRELATED:
        raise UnsupportedDistributionError("The full-surplus construction needs the equal revenue distribution")
    slope = spec.equal_revenue_slope
    cor = affine_payment_net(spec.n, 1, bidder=0, input_index=0, slope=-(1.0 / slope + 1.0), intercept=1.0)
    return MechanismHandle(params=AmaParams.deterministic(spec.n, 1), cor=cor, label="full-surplus CA-AMA")


# ---------------------------------------------------------------------------
# generalization
# ---------------------------------------------------------------------------

def gen_bound(inputs: GenBoundInputs) -> float:
    """Uniform bound on the train/test gap of the IR regret of three-layer payment networks."""
    n, K, B_p = inputs.n, inputs.K, inputs.payment_bound
    complexity = 2 * n * B_p * math.sqrt(2 * math.log(2 * inputs.width)) / math.sqrt(K)
    confidence = n * B_p * math.sqrt(math.log(2 / inputs.delta) / (2 * K))
    return complexity + confidence


def bound_inputs_for(cor: CorPaymentNet, K: int, delta: float = 0.05) -> GenBoundInputs:
    """Bound inputs with spectral norms measured on the trained networks."""
    M1, M2, M3 = (max(float(x), 1e-12) for x in max_spectral_norms(cor))
    return GenBoundInputs(M1=M1, M2=M2, M3=M3, h1=cor.h1, h2=cor.h2, n=cor.n, m=cor.m, K=K, delta=delta)


def empirical_gap_probe(
    cfg: TrainConfig,
    spec: DistributionSpec,
    K_list: Sequence[int],
    seeds: Sequence[int] = (0,),
    iters: Optional[int] = None,
    raw: Optional[RawAmaParams] = None,
) -> list[GapRow]:
    """Train payment networks on K fixed profiles against a frozen AMA and measure |train - test| IR regret.

    A K equal to the test-set size trains on the test set itself.
    """
    if any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValueError("K_list must be increasing")
    iters = iters if iters is not None else cfg.total_iters - cfg.mutual_iters
    raw = raw or RawAmaParams.init(spec.n, spec.m, cfg.menu_size, seed=cfg.seed)
    test = held_out(spec, cfg.test_size)

    rows = []
    for seed in seeds:
        for K in K_list:
            if K == len(test):
                train_values = test.profiles
            else:
                train_values = sample(spec.model_copy(update={"seed": spec.seed + seed}), K).profiles
            cor = CorPaymentNet.init(spec.n, spec.m, cfg.cor_widths, seed=cfg.seed + 1 + seed, use_bias=cfg.cor_use_bias)
            state = post_train(raw.copy(), cor, cfg, FixedSampler(train_values), iters)

            train_regret = final_metrics(train_values, state.raw, state.cor).regret_ir_mean
            test_regret = final_metrics(test.profiles, state.raw, state.cor).regret_ir_mean
            row = GapRow(
                K=K, seed=seed, train_regret=train_regret, test_regret=test_regret,
                gap=abs(train_regret - test_regret), bound=gen_bound(bound_inputs_for(state.cor, K)),
            )
            logger.info("Gap probe K=%d seed=%d: gap=%.2e bound=%.3f", K, seed, row.gap, row.bound)
            rows.append(row)
    return rows


def full_surplus(test: Dataset) -> float:
    """Mean over profiles of sum_j max_i v_ij."""
    return full_surplus_of(as_batch(test.profiles if isinstance(test, Dataset) else test))
