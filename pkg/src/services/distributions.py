"""Valuation samplers, conditional-support oracles and closed-form benchmarks.

Sampling is counter based: profile block ``c`` of stream ``s`` is drawn from
a Philox generator keyed by ``SeedSequence([seed, s, ..., c])``. A block is
always drawn in full and then truncated, so the first K profiles of a
stream never depend on K or on how many worker threads produced them.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.core.config import settings
from src.core.errors import UnsupportedDistributionError
from src.storage.provenance import project_version
from src.schemas.distribution import (
    AnalyticMoments,
    DatasetManifest,
    DistributionKind,
    DistributionSpec,
    check_supported,
)

logger = logging.getLogger(__name__)

DATASET_STREAM = 0
TRAIN_STREAM = 1
TEST_STREAM = 2

BOX_GRID_POINTS = 65
DIRICHLET_GRID_POINTS = 64
MAX_GRID_CELLS = 1_000_000
RANDOM_PROBES = 4096


@dataclass(frozen=True)
class Dataset:
    """K valuation profiles stacked as a (K, n, m) array plus provenance."""
    profiles: np.ndarray
    spec: DistributionSpec
    manifest: DatasetManifest

    def __len__(self) -> int:
        return self.profiles.shape[0]


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by (seed, *key)."""
    # fixed-width seed words keep (seed, key) pairs from aliasing each other
    words = [seed & 0xFFFFFFFF, seed >> 32, *key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


# ---------------------------------------------------------------------------
# per-kind generative processes
# ---------------------------------------------------------------------------

def equal_revenue_inverse_cdf(u, epsilon: float):
    """Inverse of F(v) = (1 - epsilon / v) / (1 - epsilon) on [epsilon, 1].

    Args:
        u: Uniform quantile(s) in [0, 1).
        epsilon: Lower support bound in (0, 1).
    """
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise ValueError("Quantile u must lie in [0, 1)")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    out = epsilon / (1.0 - (1.0 - epsilon) * arr)
    return float(out) if out.ndim == 0 else out


def _draw_uniform(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.random((count, spec.n, spec.m))


def _draw_dirichlet(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    totals = rng.uniform(0.5, 1.0, size=(count, 1, spec.m))
    gammas = rng.gamma(spec.alpha, 1.0, size=(count, spec.n, spec.m))
    sums = gammas.sum(axis=1, keepdims=True)

    degenerate = sums <= 0.0
    if np.any(degenerate):
        # every gamma draw of an item underflowed (tiny alpha); split that item evenly
        logger.warning("Replacing %d underflowed Dirichlet draws by even shares", int(degenerate.sum()))
        gammas = np.where(degenerate, 1.0, gammas)
        sums = gammas.sum(axis=1, keepdims=True)

    return (gammas / sums) * totals


def _draw_mixture(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    first = rng.random((count, spec.m))
    correlated = rng.random((count, spec.m)) < spec.alpha
    independent = rng.random((count, spec.m))

    if spec.kind == DistributionKind.LINEAR_MIXTURE_SYM:
        second = np.where(correlated, 1.0 - first, independent)
    else:
        second = np.where(correlated, (1.0 - first) / 4.0, independent / 4.0)
    return np.stack([first, second], axis=1)


def _draw_equal_revenue(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    first = equal_revenue_inverse_cdf(rng.random((count, 1)), spec.epsilon)
    others = spec.equal_revenue_slope * (1.0 - first)
    values = np.repeat(others[:, None, :], spec.n, axis=1)
    values[:, 0, :] = first
    return values


def _draw_perfect_negative(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    first = rng.random((count, spec.m))
    return np.stack([first, 1.0 - first], axis=1)


_DRAWERS = {
    DistributionKind.UNIFORM_IID: _draw_uniform,
    DistributionKind.DIRICHLET_VALUE_SHARE: _draw_dirichlet,
    DistributionKind.LINEAR_MIXTURE_SYM: _draw_mixture,
    DistributionKind.LINEAR_MIXTURE_ASYM: _draw_mixture,
    DistributionKind.EQUAL_REVENUE_CORRELATED: _draw_equal_revenue,
    DistributionKind.PERFECT_NEGATIVE_LINEAR: _draw_perfect_negative,
}


class Sampler:
    """Reproducible profile source for one distribution and one stream.

    The trainer asks for a fresh batch per iteration (`batch`); datasets and
    held-out test sets are prefixes of a stream (`draw`).
    """

    def __init__(
        self,
        spec: DistributionSpec,
        stream: int = DATASET_STREAM,
        chunk_size: int = settings.SAMPLE_CHUNK_SIZE,
        max_workers: int = settings.EVAL_MAX_WORKERS,
    ):
        check_supported(spec)
        self.spec = spec
        self.stream = stream
        self.chunk_size = chunk_size
        self.max_workers = max_workers
        self._draw_block = _DRAWERS[spec.kind]

    def _block(self, key: tuple[int, ...], size: int) -> np.ndarray:
        return self._draw_block(self.spec, make_rng(self.spec.seed, self.stream, *key), size)

    def draw(self, count: int) -> np.ndarray:
        """First `count` profiles of this stream, shape (count, n, m)."""
        if count < 1:
            raise ValueError("count must be >= 1")
        n_chunks = math.ceil(count / self.chunk_size)

        if n_chunks == 1 or self.max_workers == 1:
            blocks = [self._block((0, c), self.chunk_size) for c in range(n_chunks)]
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                # map keeps chunk order, so the concatenation is worker-count independent
                blocks = list(executor.map(lambda c: self._block((0, c), self.chunk_size), range(n_chunks)))

        return np.concatenate(blocks, axis=0)[:count]

    def batch(self, iteration: int, size: int) -> np.ndarray:
        """Fresh training batch for `iteration`, independent of every other iteration."""
        return self._block((1, iteration), size)


def sample(spec: DistributionSpec, K: int, stream: int = DATASET_STREAM) -> Dataset:
    """Draw K i.i.d. profiles of `spec`.

    Raises:
        UnsupportedDistributionError: for unsupported (kind, n, m) combinations.
    """
    profiles = Sampler(spec, stream=stream).draw(K)
    manifest = DatasetManifest(spec=spec, seed=spec.seed, count=K, stream=stream, created_with=project_version())
    logger.info("Sampled %d %s profiles (%dx%d, seed=%d)", K, spec.kind.value, spec.n, spec.m, spec.seed)
    return Dataset(profiles=profiles, spec=spec, manifest=manifest)


def held_out(spec: DistributionSpec, K: int) -> Dataset:
    """Test set drawn from a stream that training batches never touch."""
    return sample(spec, K, stream=TEST_STREAM)


# ---------------------------------------------------------------------------
# conditional supports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportBox:
    """Axis-aligned box [low, high] of conditional values of one bidder."""
    low: np.ndarray
    high: np.ndarray
    points_per_dim: Optional[int] = None


@dataclass(frozen=True)
class ConditionalSupport:
    """Support of v_i given V_-i: a union of singleton points and boxes."""
    points: np.ndarray
    boxes: tuple[SupportBox, ...] = field(default_factory=tuple)

    @property
    def kind(self) -> str:
        if not self.boxes and len(self.points) == 1:
            return "singleton"
        if self.boxes and len(self.points) == 0 and len(self.boxes) == 1:
            box = self.boxes[0]
            if np.all(box.low == 0.0) and np.all(box.high == 1.0):
                return "full-box"
            return "box"
        return "union"

    def candidates(self, points_per_dim: int = BOX_GRID_POINTS, seed: int = 0) -> np.ndarray:
        """Finite set of values covering the support, shape (Q, m).

        Boxes are gridded with `points_per_dim` points per item unless the box
        carries its own resolution; grids above MAX_GRID_CELLS are replaced by
        the box corners plus RANDOM_PROBES uniform probes.
        """
        parts = [np.asarray(self.points, dtype=np.float64).reshape(-1, self._m())]
        for b, box in enumerate(self.boxes):
            per_dim = box.points_per_dim or points_per_dim
            m = box.low.shape[0]
            if per_dim ** m <= MAX_GRID_CELLS:
                axes = [np.linspace(box.low[j], box.high[j], per_dim) for j in range(m)]
                grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
            else:
                rng = make_rng(seed, b)
                corners = np.array([[box.high[j] if (c >> j) & 1 else box.low[j] for j in range(m)]
                                    for c in range(min(2 ** m, RANDOM_PROBES))])
                probes = box.low + (box.high - box.low) * rng.random((RANDOM_PROBES, m))
                grid = np.concatenate([corners, probes], axis=0)
            parts.append(grid)
        return np.concatenate(parts, axis=0)

    def _m(self) -> int:
        if len(self.points):
            return np.asarray(self.points).shape[-1]
        return self.boxes[0].low.shape[0]


def conditional_support(spec: DistributionSpec, i: int, V_minus_i: np.ndarray) -> ConditionalSupport:
    """Support of bidder i's valuation given the other bidders' valuations.

    Args:
        spec: Distribution the profiles come from.
        i: Bidder index (0-based).
        V_minus_i: Other bidders' values, either (n-1) x m or flattened row-major.
    """
    if not 0 <= i < spec.n:
        raise ValueError(f"Bidder index {i} out of range for n={spec.n}")
    others = np.asarray(V_minus_i, dtype=np.float64).reshape(spec.n - 1, spec.m)
    ones = np.ones(spec.m)
    zeros = np.zeros(spec.m)
    kind = spec.kind

    if kind == DistributionKind.UNIFORM_IID:
        return ConditionalSupport(points=np.empty((0, spec.m)), boxes=(SupportBox(zeros, ones),))

    if kind == DistributionKind.PERFECT_NEGATIVE_LINEAR:
        return ConditionalSupport(points=(1.0 - others[0])[None])

    if kind == DistributionKind.EQUAL_REVENUE_CORRELATED:
        slope = spec.equal_revenue_slope
        if i == 0:
            point = np.clip(1.0 - others[0] / slope, 0.0, 1.0)
        else:
            point = slope * (1.0 - others[0])
        return ConditionalSupport(points=point[None])

    if kind in (DistributionKind.LINEAR_MIXTURE_SYM, DistributionKind.LINEAR_MIXTURE_ASYM):
        return _mixture_support(spec, i, others[0])

    if kind == DistributionKind.DIRICHLET_VALUE_SHARE:
        claimed = others.sum(axis=0)
        low = np.clip(0.5 - claimed, 0.0, 1.0)
        high = np.maximum(low, np.clip(1.0 - claimed, 0.0, 1.0))
        box = SupportBox(low, high, points_per_dim=DIRICHLET_GRID_POINTS)
        return ConditionalSupport(points=np.empty((0, spec.m)), boxes=(box,))

    raise UnsupportedDistributionError(f"No conditional structure known for {kind}")


def _mixture_support(spec: DistributionSpec, i: int, other: np.ndarray) -> ConditionalSupport:
    symmetric = spec.kind == DistributionKind.LINEAR_MIXTURE_SYM
    if symmetric:
        point = 1.0 - other
        box = SupportBox(np.zeros(spec.m), np.ones(spec.m))
    elif i == 1:
        point = (1.0 - other) / 4.0
        box = SupportBox(np.zeros(spec.m), np.full(spec.m, 0.25))
    else:
        point = 1.0 - 4.0 * other
        box = SupportBox(np.zeros(spec.m), np.ones(spec.m))

    points = point[None] if np.all((point >= 0.0) & (point <= 1.0)) else np.empty((0, spec.m))
    if spec.alpha <= 0.0:
        points = np.empty((0, spec.m))
    boxes = (box,) if spec.alpha < 1.0 else ()
    return ConditionalSupport(points=points, boxes=boxes)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def analytic_moments(spec: DistributionSpec) -> AnalyticMoments:
    """Full-surplus optimum and VCG revenue where a closed form exists."""
    if spec.kind == DistributionKind.EQUAL_REVENUE_CORRELATED:
        eps = spec.epsilon
        # bidder 1 always holds the highest value and VCG charges the others' common value
        surplus = eps * math.log(1.0 / eps) / (1.0 - eps)
        return AnalyticMoments(
            optimal_full_surplus=surplus,
            vcg_revenue=spec.equal_revenue_slope * (1.0 - surplus),
        )

    if spec.kind == DistributionKind.PERFECT_NEGATIVE_LINEAR:
        return AnalyticMoments(optimal_full_surplus=0.75 * spec.m, vcg_revenue=0.25 * spec.m)

    raise UnsupportedDistributionError(f"No closed-form moments for {spec.kind.value}")


def full_surplus_of(profiles: np.ndarray) -> float:
    """Mean over profiles of sum_j max_i v_ij."""
    return float(np.asarray(profiles).max(axis=1).sum(axis=1).mean())
