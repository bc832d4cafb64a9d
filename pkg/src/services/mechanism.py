"""Exact evaluation of VCG, affine maximizer (AMA) and correlation-aware AMA auctions.

Everything here works on batches of valuation profiles shaped ``(K, n, m)``
(profiles x bidders x items). The single-profile operations are thin wrappers
around the batched ones so the training and verification loops never fall
back to Python-level iteration over profiles.

Conventions:
- Ties in the affine-welfare argmax go to the lowest menu index.
- The deterministic menu is enumerated item-major; per item, code 0 is the
  reserve (item kept) and code ``i + 1`` gives the item to bidder ``i``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Union

import numpy as np

from src.core.errors import InvalidMechanismError

if TYPE_CHECKING:
    from src.services.cor_net import CorPaymentNet


logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
DISTINCT_TOL = 1e-9


@dataclass(frozen=True)
class ValuationProfile:
    """Per-bidder, per-item values of a single auction instance.

    Attributes:
        values: Matrix with one row per bidder and one column per item, in [0, 1].
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidMechanismError(f"Valuation profile must be a non-empty n x m matrix, got shape {values.shape}")
        if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
            raise InvalidMechanismError("Valuations must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def without(self, i: int) -> np.ndarray:
        """Flattened V_-i: row-major, bidder i's row removed, others in original order."""
        _check_bidder(i, self.n)
        return others_view(self.values[None], i)[0]


ProfileLike = Union[ValuationProfile, np.ndarray]


@dataclass(frozen=True)
class Allocation:
    """Fractional allocation matrix (bidders x items) with no item over-allocated."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2:
            raise InvalidMechanismError(f"Allocation must be an n x m matrix, got shape {entries.shape}")
        _check_feasible(entries[None])
        object.__setattr__(self, "entries", entries)

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)


@dataclass(frozen=True)
class AmaParams:
    """Parameters (menu, bidder weights, allocation boosts) of an affine maximizer.

    Attributes:
        menu: Candidate allocations, shape (S, n, m).
        weights: Strictly positive bidder weights w, shape (n,).
        boosts: Per-menu-entry boosts lambda, shape (S,).
    """
    menu: np.ndarray
    weights: np.ndarray
    boosts: np.ndarray

    def __post_init__(self):
        menu = np.asarray(self.menu, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        boosts = np.asarray(self.boosts, dtype=np.float64).reshape(-1)

        if menu.ndim != 3 or menu.shape[0] < 1:
            raise InvalidMechanismError(f"Menu must have shape (S, n, m) with S >= 1, got {menu.shape}")
        if weights.shape != (menu.shape[1],):
            raise InvalidMechanismError(f"Expected {menu.shape[1]} weights, got {weights.shape}")
        if boosts.shape != (menu.shape[0],):
            raise InvalidMechanismError(f"Expected {menu.shape[0]} boosts, got {boosts.shape}")
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise InvalidMechanismError("Bidder weights must be strictly positive")
        if not np.all(np.isfinite(boosts)):
            raise InvalidMechanismError("Boosts must be finite")
        _check_feasible(menu)

        object.__setattr__(self, "menu", menu)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "boosts", boosts)

    @property
    def S(self) -> int:
        return self.menu.shape[0]

    @property
    def n(self) -> int:
        return self.menu.shape[1]

    @property
    def m(self) -> int:
        return self.menu.shape[2]

    def require_distinct(self) -> "AmaParams":
        """Check that menu entries are pairwise distinct up to DISTINCT_TOL.

        Kept out of ``__post_init__``: it is quadratic in S and the trainer
        realizes a fresh menu every step.
        """
        flat = self.menu.reshape(self.S, -1)
        for k in range(self.S - 1):
            gaps = np.abs(flat[k + 1:] - flat[k]).max(axis=1)
            if np.any(gaps <= DISTINCT_TOL):
                raise InvalidMechanismError(f"Menu entry {k} is duplicated")
        return self

    def scaled(self, c: float) -> "AmaParams":
        """Same menu, with (w, lambda) multiplied by c > 0."""
        return AmaParams(menu=self.menu, weights=self.weights * c, boosts=self.boosts * c)

    @classmethod
    def deterministic(cls, n: int, m: int, weights=None, boosts=None) -> "AmaParams":
        """AMA over all (n+1)^m deterministic allocations (w = 1, lambda = 0 by default)."""
        menu = deterministic_menu(n, m)
        weights = np.ones(n) if weights is None else weights
        boosts = np.zeros(menu.shape[0]) if boosts is None else boosts
        return cls(menu=menu, weights=weights, boosts=boosts)


@dataclass(frozen=True)
class AuctionOutcome:
    """Outcome of one auction.

    Attributes:
        allocation: Allocation matrix (n x m).
        pay_ama: Threshold (AMA) payments, one per bidder.
        pay_cor: Correlation-aware payments, one per bidder (zero for plain AMA/VCG).
        utilities: v_i . allocation_i - pay_ama_i - pay_cor_i.
        winner_index: Index of the chosen menu entry (-1 when not menu-based).
    """
    allocation: np.ndarray
    pay_ama: np.ndarray
    pay_cor: np.ndarray
    utilities: np.ndarray
    winner_index: int

    @property
    def payments(self) -> np.ndarray:
        return self.pay_ama + self.pay_cor

    @property
    def revenue(self) -> float:
        return float(self.payments.sum())


@dataclass(frozen=True)
class OutcomeBatch:
    """Outcomes for K profiles; field shapes carry a leading K axis."""
    allocation: np.ndarray
    pay_ama: np.ndarray
    pay_cor: np.ndarray
    utilities: np.ndarray
    winner_index: np.ndarray

    def __len__(self) -> int:
        return self.utilities.shape[0]

    def __getitem__(self, k: int) -> AuctionOutcome:
        return AuctionOutcome(
            allocation=self.allocation[k],
            pay_ama=self.pay_ama[k],
            pay_cor=self.pay_cor[k],
            utilities=self.utilities[k],
            winner_index=int(self.winner_index[k]),
        )

    @property
    def payments(self) -> np.ndarray:
        return self.pay_ama + self.pay_cor

    def revenue(self) -> np.ndarray:
        """Per-profile revenue, shape (K,)."""
        return self.payments.sum(axis=1)

    def regret_ir(self) -> np.ndarray:
        """Per-profile IR regret sum_i max(0, -u_i), shape (K,)."""
        return np.maximum(0.0, -self.utilities).sum(axis=1)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def deterministic_menu(n: int, m: int) -> np.ndarray:
    """All (n+1)^m deterministic allocations, item-major, code 0 = reserve."""
    codes = np.array(list(itertools.product(range(n + 1), repeat=m)), dtype=np.int64)
    menu = np.zeros((codes.shape[0], n, m))
    for j in range(m):
        for i in range(n):
            menu[codes[:, j] == i + 1, i, j] = 1.0
    return menu


def as_batch(values: ProfileLike) -> np.ndarray:
    """Coerce a profile or an array of profiles to a float (K, n, m) array."""
    if isinstance(values, ValuationProfile):
        return values.values[None]
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidMechanismError(f"Expected (K, n, m) valuations, got shape {arr.shape}")
    return arr


def others_view(values: np.ndarray, i: int) -> np.ndarray:
    """Batched V_-i, shape (K, (n-1) * m)."""
    return np.delete(values, i, axis=1).reshape(values.shape[0], -1)


def _check_bidder(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise InvalidMechanismError(f"Bidder index {i} out of range for n={n}") from IndexError(i)


def _check_menu_index(k: int, S: int) -> None:
    if not 0 <= k < S:
        raise InvalidMechanismError(f"Menu index {k} out of range for S={S}") from IndexError(k)


def _check_feasible(allocations: np.ndarray) -> None:
    if np.any(allocations < -FEASIBILITY_TOL) or np.any(allocations > 1.0 + FEASIBILITY_TOL):
        raise InvalidMechanismError("Allocation entries must lie in [0, 1]")
    if np.any(allocations.sum(axis=-2) > 1.0 + FEASIBILITY_TOL):
        raise InvalidMechanismError("Allocation over-allocates an item")


def _check_shape(values: np.ndarray, params: AmaParams) -> None:
    if values.shape[1:] != (params.n, params.m):
        raise InvalidMechanismError(
            f"Valuations of shape {values.shape[1:]} do not match an AMA over {params.n}x{params.m}"
        )


# ---------------------------------------------------------------------------
# affine social welfare
# ---------------------------------------------------------------------------

def asw_table(values: np.ndarray, params: AmaParams) -> tuple[np.ndarray, np.ndarray]:
    """Affine welfare of every menu entry for every profile.

    Returns:
        (asw, contrib) where asw has shape (K, S) and contrib[k, s, i] is
        w_i * (v_i . (A_s)_i), shape (K, S, n).
    """
    raw = np.einsum("knm,snm->ksn", values, params.menu)
    contrib = raw * params.weights
    return contrib.sum(axis=2) + params.boosts, contrib


def asw(k: int, V: ProfileLike, params: AmaParams) -> float:
    """sum_i w_i (v_i . (A_k)_i) + lambda_k."""
    _check_menu_index(k, params.S)
    values = as_batch(V)
    _check_shape(values, params)
    table, _ = asw_table(values, params)
    return float(table[0, k])


def asw_minus(i: int, k: int, V: ProfileLike, params: AmaParams) -> float:
    """asw(k) without bidder i's weighted contribution."""
    _check_bidder(i, params.n)
    _check_menu_index(k, params.S)
    values = as_batch(V)
    _check_shape(values, params)
    table, contrib = asw_table(values, params)
    return float(table[0, k] - contrib[0, k, i])


# ---------------------------------------------------------------------------
# outcomes
# ---------------------------------------------------------------------------

def ama_outcome_batch(values: np.ndarray, params: AmaParams) -> OutcomeBatch:
    values = as_batch(values)
    _check_shape(values, params)

    table, contrib = asw_table(values, params)
    winner = np.argmax(table, axis=1)

    minus = table[:, :, None] - contrib
    best_minus = minus.max(axis=1)
    chosen_minus = np.take_along_axis(minus, winner[:, None, None], axis=1)[:, 0, :]
    pay_ama = (best_minus - chosen_minus) / params.weights

    allocation = params.menu[winner]
    utilities = np.einsum("knm,knm->kn", values, allocation) - pay_ama

    return OutcomeBatch(
        allocation=allocation,
        pay_ama=pay_ama,
        pay_cor=np.zeros_like(pay_ama),
        utilities=utilities,
        winner_index=winner,
    )


def ama_outcome(V: ProfileLike, params: AmaParams) -> AuctionOutcome:
    """Exact AMA allocation and threshold payments for one profile."""
    return ama_outcome_batch(as_batch(V), params)[0]


def caama_outcome_batch(values: np.ndarray, params: AmaParams, cor: "CorPaymentNet") -> OutcomeBatch:
    values = as_batch(values)
    base = ama_outcome_batch(values, params)
    if (cor.n, cor.m) != (params.n, params.m):
        raise InvalidMechanismError(
            f"Payment networks built for {cor.n}x{cor.m} cannot price a {params.n}x{params.m} auction"
        )
    pay_cor = cor.payments(values)
    return replace(base, pay_cor=pay_cor, utilities=base.utilities - pay_cor)


def caama_outcome(V: ProfileLike, params: AmaParams, cor: "CorPaymentNet") -> AuctionOutcome:
    """AMA outcome plus p^Cor_i(V_-i) for every bidder."""
    return caama_outcome_batch(as_batch(V), params, cor)[0]


def vcg_outcome_batch(values: np.ndarray) -> OutcomeBatch:
    """Additive VCG: each item to its highest bidder at the second-highest value."""
    values = as_batch(values)
    K, n, m = values.shape

    top = np.argmax(values, axis=1)
    top_value = np.take_along_axis(values, top[:, None, :], axis=1)[:, 0, :]
    if n > 1:
        second_value = np.sort(values, axis=1)[:, -2, :]
    else:
        second_value = np.zeros((K, m))
    sold = top_value > 0.0

    won = (np.arange(n)[None, :, None] == top[:, None, :]) & sold[:, None, :]
    allocation = won.astype(np.float64)
    pay_ama = (allocation * second_value[:, None, :]).sum(axis=2)
    utilities = (values * allocation).sum(axis=2) - pay_ama

    # menu index under the deterministic enumeration: item 0 is the most significant digit
    codes = np.where(sold, top + 1, 0)
    place = (n + 1) ** np.arange(m - 1, -1, -1)
    winner = (codes * place).sum(axis=1)

    return OutcomeBatch(
        allocation=allocation,
        pay_ama=pay_ama,
        pay_cor=np.zeros_like(pay_ama),
        utilities=utilities,
        winner_index=winner,
    )


def vcg_outcome(V: ProfileLike) -> AuctionOutcome:
    return vcg_outcome_batch(as_batch(V))[0]


OutcomeT = Union[AuctionOutcome, OutcomeBatch]


def post_process_ir(out: OutcomeT) -> OutcomeT:
    """Let every bidder with negative utility opt out.

    Opted-out bidders get a zero allocation row and zero payments; everyone
    else is untouched. Works on single outcomes and batches alike.
    """
    opt_out = out.utilities < 0.0
    if not np.any(opt_out):
        return out
    return replace(
        out,
        allocation=np.where(opt_out[..., None], 0.0, out.allocation),
        pay_ama=np.where(opt_out, 0.0, out.pay_ama),
        pay_cor=np.where(opt_out, 0.0, out.pay_cor),
        utilities=np.where(opt_out, 0.0, out.utilities),
    )
