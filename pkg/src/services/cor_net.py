"""Correlation-aware payment networks p^Cor_i.

One independent three-layer ReLU network per bidder maps the other bidders'
values V_-i (flattened row-major) to a scalar payment:

    p_i(x) = W3 relu(W2 relu(W1 x + b1) + b2) + b3

Because bidder i's own row is never an input, any setting of the weights
keeps the CA-AMA dominant-strategy incentive compatible.
"""
import logging
import math
from dataclasses import dataclass, fields
from typing import Iterator, Optional

import numpy as np

from src.core.errors import InvalidMechanismError
from src.schemas.checkpoint import CorNetDocument, PaymentBlockDocument
from src.services.mechanism import others_view

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (64, 64)
POWER_ITERATION_STEPS = 100
POWER_ITERATION_TOL = 1e-6


@dataclass
class PaymentBlock:
    """Parameters phi_i of one bidder's network (or a gradient with the same layout)."""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def zeros_like(self) -> "PaymentBlock":
        return PaymentBlock(**{name: np.zeros_like(arr) for name, arr in self.items()})

    def copy(self) -> "PaymentBlock":
        return PaymentBlock(**{name: arr.copy() for name, arr in self.items()})


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def spectral_norm(W: np.ndarray, steps: int = POWER_ITERATION_STEPS, tol: float = POWER_ITERATION_TOL) -> float:
    """Largest singular value of W by power iteration on W^T W."""
    if W.size == 0 or not np.any(W):
        return 0.0
    v = np.random.default_rng(0).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)

    sigma = 0.0
    for _ in range(steps):
        u = W @ v
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            break
        v = W.T @ (u / u_norm)
        sigma_next = float(np.linalg.norm(v))
        v /= sigma_next
        if abs(sigma_next - sigma) <= tol * max(sigma_next, 1.0):
            return sigma_next
        sigma = sigma_next
    return sigma


class CorPaymentNet:
    """Per-bidder payment networks of a CA-AMA for an n x m auction."""

    def __init__(self, n: int, m: int, h1: int, h2: int, blocks: list[PaymentBlock], use_bias: bool = True):
        if len(blocks) != n:
            raise InvalidMechanismError(f"Expected {n} parameter blocks, got {len(blocks)}")
        self.n = n
        self.m = m
        self.h1 = h1
        self.h2 = h2
        self.use_bias = use_bias
        self.blocks = blocks

        for i, block in enumerate(blocks):
            expected = self._block_shapes()
            for name, arr in block.items():
                if arr.shape != expected[name]:
                    raise InvalidMechanismError(
                        f"Block {i} parameter {name} has shape {arr.shape}, expected {expected[name]}"
                    )

    @property
    def input_width(self) -> int:
        return (self.n - 1) * self.m

    def _block_shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.input_width
        return {
            "W1": (self.h1, d), "b1": (self.h1,),
            "W2": (self.h2, self.h1), "b2": (self.h2,),
            "W3": (1, self.h2), "b3": (1,),
        }

    # ------------------------------------------------------------------ init

    @classmethod
    def init(
        cls,
        n: int,
        m: int,
        widths: tuple[int, int] = DEFAULT_WIDTHS,
        seed: int = 0,
        use_bias: bool = True,
    ) -> "CorPaymentNet":
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.

        Zero output biases start every network near p^Cor = 0, i.e. near the
        plain AMA.
        """
        h1, h2 = widths
        if h1 < 1 or h2 < 1:
            raise ValueError("Hidden widths must be >= 1")
        rng = np.random.default_rng(seed)
        d = (n - 1) * m

        def layer(rows: int, fan_in: int) -> np.ndarray:
            scale = 1.0 / math.sqrt(max(fan_in, 1))
            return rng.uniform(-scale, scale, size=(rows, fan_in))

        blocks = [
            PaymentBlock(
                W1=layer(h1, d), b1=np.zeros(h1),
                W2=layer(h2, h1), b2=np.zeros(h2),
                W3=layer(1, h2), b3=np.zeros(1),
            )
            for _ in range(n)
        ]
        logger.debug("Initialized %d payment networks (%d -> %d -> %d -> 1)", n, d, h1, h2)
        return cls(n, m, h1, h2, blocks, use_bias=use_bias)

    @classmethod
    def zeros(cls, n: int, m: int, widths: tuple[int, int] = (1, 1), use_bias: bool = True) -> "CorPaymentNet":
        """Networks that output 0 everywhere (the plain AMA)."""
        net = cls.init(n, m, widths, use_bias=use_bias)
        net.blocks = [block.zeros_like() for block in net.blocks]
        return net

    def copy(self) -> "CorPaymentNet":
        return CorPaymentNet(self.n, self.m, self.h1, self.h2, [b.copy() for b in self.blocks], self.use_bias)

    # --------------------------------------------------------------- compute

    def _inputs(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        arr = arr.reshape(1, -1) if single else arr.reshape(arr.shape[0], -1)
        if arr.shape[1] != self.input_width:
            raise InvalidMechanismError(
                f"Payment network expects {self.input_width} inputs, got {arr.shape[1]}"
            )
        return arr, single

    def _check_bidder(self, i: int) -> PaymentBlock:
        if not 0 <= i < self.n:
            raise InvalidMechanismError(f"Bidder index {i} out of range for n={self.n}")
        return self.blocks[i]

    @staticmethod
    def _activations(block: PaymentBlock, X: np.ndarray):
        z1 = X @ block.W1.T + block.b1
        a1 = relu(z1)
        z2 = a1 @ block.W2.T + block.b2
        a2 = relu(z2)
        out = (a2 @ block.W3.T)[:, 0] + block.b3[0]
        return z1, a1, z2, a2, out

    def forward(self, i: int, V_minus_i: np.ndarray):
        """p^Cor_i for one flattened V_-i (returns float) or a (K, (n-1)m) batch (returns (K,))."""
        block = self._check_bidder(i)
        X, single = self._inputs(V_minus_i)
        out = self._activations(block, X)[-1]
        return float(out[0]) if single else out

    def backward(self, i: int, V_minus_i: np.ndarray, upstream_grad) -> PaymentBlock:
        """Gradient of upstream_grad * p^Cor_i w.r.t. phi_i, summed over a batch.

        The ReLU subgradient at 0 is taken as 0.
        """
        block = self._check_bidder(i)
        X, _ = self._inputs(V_minus_i)
        upstream = np.broadcast_to(np.asarray(upstream_grad, dtype=np.float64), (X.shape[0],))

        z1, a1, z2, a2, _ = self._activations(block, X)
        d_out = upstream[:, None]

        grad_W3 = d_out.T @ a2
        grad_b3 = d_out.sum(axis=0)
        d_z2 = (d_out @ block.W3) * (z2 > 0.0)
        grad_W2 = d_z2.T @ a1
        grad_b2 = d_z2.sum(axis=0)
        d_z1 = (d_z2 @ block.W2) * (z1 > 0.0)
        grad_W1 = d_z1.T @ X
        grad_b1 = d_z1.sum(axis=0)

        grad = PaymentBlock(W1=grad_W1, b1=grad_b1, W2=grad_W2, b2=grad_b2, W3=grad_W3, b3=grad_b3)
        if not self.use_bias:
            grad.b1[:] = 0.0
            grad.b2[:] = 0.0
            grad.b3[:] = 0.0
        return grad

    def payments(self, values: np.ndarray) -> np.ndarray:
        """p^Cor for every bidder of every profile in a (K, n, m) batch, shape (K, n)."""
        if values.shape[1:] != (self.n, self.m):
            raise InvalidMechanismError(
                f"Payment networks built for {self.n}x{self.m} got profiles of shape {values.shape[1:]}"
            )
        return np.stack([self.forward(i, others_view(values, i)) for i in range(self.n)], axis=1)

    def payments_backward(self, values: np.ndarray, upstream: np.ndarray) -> list[PaymentBlock]:
        """Per-bidder gradients of sum_k,i upstream[k, i] * p^Cor_i(V^(k)_-i)."""
        return [self.backward(i, others_view(values, i), upstream[:, i]) for i in range(self.n)]

    def spectral_norms(self, i: int) -> np.ndarray:
        """(||W1||_2, ||W2||_2, ||W3||_2) of bidder i's network; biases excluded."""
        block = self._check_bidder(i)
        return np.array([spectral_norm(block.W1), spectral_norm(block.W2), spectral_norm(block.W3)])

    # ------------------------------------------------------------ parameters

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed `cor.<bidder>.<name>` (live views, updated in place)."""
        params = {}
        for i, block in enumerate(self.blocks):
            for name, arr in block.items():
                if not self.use_bias and name.startswith("b"):
                    continue
                params[f"cor.{i}.{name}"] = arr
        return params

    @staticmethod
    def flatten_grads(grads: list[PaymentBlock], use_bias: bool = True) -> dict[str, np.ndarray]:
        out = {}
        for i, block in enumerate(grads):
            for name, arr in block.items():
                if not use_bias and name.startswith("b"):
                    continue
                out[f"cor.{i}.{name}"] = arr
        return out

    # --------------------------------------------------------- serialization

    def to_document(self) -> CorNetDocument:
        return CorNetDocument(
            n=self.n, m=self.m, h1=self.h1, h2=self.h2, use_bias=self.use_bias,
            blocks=[PaymentBlockDocument(**{name: arr.tolist() for name, arr in b.items()}) for b in self.blocks],
        )

    @classmethod
    def from_document(cls, doc: CorNetDocument) -> "CorPaymentNet":
        d = (doc.n - 1) * doc.m
        blocks = [
            PaymentBlock(
                W1=np.asarray(b.W1, dtype=np.float64).reshape(doc.h1, d),
                b1=np.asarray(b.b1, dtype=np.float64),
                W2=np.asarray(b.W2, dtype=np.float64).reshape(doc.h2, doc.h1),
                b2=np.asarray(b.b2, dtype=np.float64),
                W3=np.asarray(b.W3, dtype=np.float64).reshape(1, doc.h2),
                b3=np.asarray(b.b3, dtype=np.float64).reshape(1),
            )
            for b in doc.blocks
        ]
        return cls(doc.n, doc.m, doc.h1, doc.h2, blocks, use_bias=doc.use_bias)


def affine_payment_net(n: int, m: int, bidder: int, input_index: int, slope: float, intercept: float) -> "CorPaymentNet":
    """Networks paying `intercept + slope * x[input_index]` for one bidder and 0 for the rest.

    Exact for inputs in [0, 1]: the hidden ReLUs pass the selected input through.
    """
    net = CorPaymentNet.zeros(n, m, widths=(1, 1))
    block = net.blocks[bidder]
    block.W1[0, input_index] = 1.0
    block.W2[0, 0] = 1.0
    block.W3[0, 0] = slope
    block.b3[0] = intercept
    return net


def max_spectral_norms(net: CorPaymentNet, bidders: Optional[list[int]] = None) -> np.ndarray:
    """Per-layer maximum of the spectral norms over bidders."""
    bidders = range(net.n) if bidders is None else bidders
    return np.max(np.stack([net.spectral_norms(i) for i in bidders]), axis=0)
