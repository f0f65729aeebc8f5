"""Finite-blocklength SC-SPARC encoder, AWGN channel and AMP decoder.

The design matrix A is n x ML, partitioned into L_R x L_C blocks of size
M_R x M_C.  Block (r, c) has entry variance W_rc / L.  Messages carry one
unit coefficient per length-M section.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .base_matrix import BaseMatrix
from .exceptions import DimensionMismatch, NumericalDivergence
from .hadamard import fwht, is_power_of_2, next_power_of_2
from .state_evolution import se_run


@dataclass(frozen=True)
class SparcDims:
    m: int      # section size M
    l: int      # number of sections L
    m_r: int    # rows per row block
    l_r: int
    l_c: int

    def __post_init__(self):
        for name in ("m", "l", "m_r", "l_r", "l_c"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.l % self.l_c:
            raise DimensionMismatch(f"L={self.l} is not divisible by L_C={self.l_c}")

    @property
    def m_c(self) -> int:
        return self.m * self.l // self.l_c

    @property
    def n(self) -> int:
        return self.m_r * self.l_r

    @property
    def sections_per_block(self) -> int:
        return self.l // self.l_c

    @property
    def rate(self) -> float:
        """Code rate in nats per channel use."""
        return self.l * math.log(self.m) / self.n

    def check_base(self, base: BaseMatrix) -> None:
        if base.entries.shape != (self.l_r, self.l_c):
            raise DimensionMismatch(
                f"base matrix {base.entries.shape} does not match ({self.l_r}, {self.l_c})"
            )


@dataclass(frozen=True)
class Message:
    indices: np.ndarray
    m: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= self.m):
            raise ValueError("message indices must lie in [0, M)")
        object.__setattr__(self, "indices", idx)

    @property
    def l(self) -> int:
        return self.indices.size

    @property
    def beta(self) -> np.ndarray:
        b = np.zeros(self.l * self.m)
        b[np.arange(self.l) * self.m + self.indices] = 1.0
        return b


def sample_message(dims: SparcDims, seed) -> Message:
    rng = np.random.default_rng(seed)
    return Message(rng.integers(0, dims.m, size=dims.l), dims.m)


class DesignKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    HADAMARD = "hadamard"


class DesignOperator:
    """Linear map beta -> A beta and its adjoint for one base matrix."""

    kind: DesignKind

    def __init__(self, base: BaseMatrix, dims: SparcDims, seed: int):
        dims.check_base(base)
        self.base = base
        self.dims = dims
        self.seed = int(seed)
        # per-block entry variance W_rc / L
        self.block_variance = base.entries / dims.l

    def forward(self, beta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, z: np.ndarray, row_weights: np.ndarray | None = None) -> np.ndarray:
        """A^T (w * z) where ``row_weights`` (length L_R) scale each row block."""
        raise NotImplementedError

    def _check_beta(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.dims.m * self.dims.l,):
            raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({self.dims.m * self.dims.l},)")
        return beta

    def _weighted(self, z, row_weights):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dims.n,):
            raise DimensionMismatch(f"z has shape {z.shape}, expected ({self.dims.n},)")
        if row_weights is not None:
            z = z * np.repeat(row_weights, self.dims.m_r)
        return z


class GaussianOperator(DesignOperator):
    kind = DesignKind.GAUSSIAN

    def __init__(self, base, dims, seed):
        super().__init__(base, dims, seed)
        rng = np.random.default_rng(self.seed)
        d = dims
        a = np.zeros((d.n, d.m_c * d.l_c))
        for r, c in np.argwhere(base.entries > 0):
            a[r * d.m_r:(r + 1) * d.m_r, c * d.m_c:(c + 1) * d.m_c] = (
                rng.standard_normal((d.m_r, d.m_c)) * math.sqrt(self.block_variance[r, c])
            )
        self.matrix = a

    def forward(self, beta):
        return self.matrix @ self._check_beta(beta)

    def adjoint(self, z, row_weights=None):
        return self.matrix.T @ self._weighted(z, row_weights)


class HadamardOperator(DesignOperator):
    """Each non-zero block is rows/columns sub-sampled from a Hadamard matrix.

    Columns get an independent random sign so the block behaves like a +/-1
    matrix with the same second moments as the Gaussian design.
    """

    kind = DesignKind.HADAMARD

    def __init__(self, base, dims, seed):
        super().__init__(base, dims, seed)
        d = dims
        k = next_power_of_2(max(d.m_r, d.m_c))
        rng = np.random.default_rng(self.seed)
        blocks = np.argwhere(base.entries > 0)
        nb = len(blocks)
        self.order = k
        self.block_rows = blocks[:, 0]
        self.block_cols = blocks[:, 1]
        self.scale = np.sqrt(self.block_variance[self.block_rows, self.block_cols])
        self.row_idx = np.empty((nb, d.m_r), dtype=np.int64)
        self.col_idx = np.empty((nb, d.m_c), dtype=np.int64)
        self.signs = np.empty((nb, d.m_c))
        for b in range(nb):
            self.row_idx[b] = rng.permutation(k)[: d.m_r]
            self.col_idx[b] = rng.permutation(k)[: d.m_c]
            self.signs[b] = rng.choice((-1.0, 1.0), size=d.m_c)
        self._rows = np.arange(nb)[:, None]

    def forward(self, beta):
        d = self.dims
        x = self._check_beta(beta).reshape(d.l_c, d.m_c)
        buf = np.zeros((len(self.scale), self.order))
        buf[self._rows, self.col_idx] = self.signs * x[self.block_cols]
        vals = fwht(buf)[self._rows, self.row_idx] * self.scale[:, None]
        out = np.zeros((d.l_r, d.m_r))
        np.add.at(out, self.block_rows, vals)
        return out.ravel()

    def adjoint(self, z, row_weights=None):
        d = self.dims
        zr = self._weighted(z, row_weights).reshape(d.l_r, d.m_r)
        buf = np.zeros((len(self.scale), self.order))
        buf[self._rows, self.row_idx] = zr[self.block_rows] * self.scale[:, None]
        vals = fwht(buf)[self._rows, self.col_idx] * self.signs
        out = np.zeros((d.l_c, d.m_c))
        np.add.at(out, self.block_cols, vals)
        return out.ravel()

    def dense(self) -> np.ndarray:
        """Explicit matrix (small problems only)."""
        eye = np.eye(self.dims.m * self.dims.l)
        return np.column_stack([self.forward(e) for e in eye])


def make_operator(kind: DesignKind | str, base: BaseMatrix, dims: SparcDims, seed: int) -> DesignOperator:
    kind = DesignKind(kind)
    if kind is DesignKind.HADAMARD:
        return HadamardOperator(base, dims, seed)
    return GaussianOperator(base, dims, seed)


def encode(op: DesignOperator, msg: Message) -> np.ndarray:
    if msg.m != op.dims.m or msg.l != op.dims.l:
        raise DimensionMismatch(f"message (M={msg.m}, L={msg.l}) does not match operator dims")
    return op.forward(msg.beta)


def awgn(x: np.ndarray, sigma2: float, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return x + math.sqrt(sigma2) * rng.standard_normal(np.shape(x))


@dataclass
class DecodeResult:
    beta_hat: np.ndarray
    iterations: int
    converged: bool
    psi_hat: list = field(default_factory=list)        # per iteration, length L_C
    tau2: list = field(default_factory=list)           # per iteration, length L_C
    phi_hat: list = field(default_factory=list)        # per iteration, length L_R
    decisions: list = field(default_factory=list)      # hard decisions per iteration
    mse: list = field(default_factory=list)            # per-block MSE if beta_true given

    @property
    def indices(self) -> np.ndarray:
        return self.decisions[-1]


def section_softmax(logits: np.ndarray, m: int) -> np.ndarray:
    """Posterior mean of a one-hot section given per-entry log-weights."""
    x = logits.reshape(-1, m)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return (e / e.sum(axis=1, keepdims=True)).ravel()


def hard_decision(beta_hat: np.ndarray, m: int) -> np.ndarray:
    # np.argmax resolves ties to the lowest index
    return np.argmax(beta_hat.reshape(-1, m), axis=1)


def amp_decode(op: DesignOperator, y: np.ndarray, base: BaseMatrix, dims: SparcDims,
               sigma2: float, max_iter: int = 50, psi_mode: str = "online",
               beta_true: np.ndarray | None = None, tol: float = 1e-8) -> DecodeResult:
    """AMP decoding with per-block effective variances from the base matrix.

    ``psi_mode="online"`` tracks the block MSE from the posterior means;
    ``"se"`` substitutes the asymptotic SE indicators instead.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if psi_mode not in ("online", "se"):
        raise ValueError(f"unknown psi_mode {psi_mode!r}")
    dims.check_base(base)
    w = base.entries
    d = dims
    y = np.asarray(y, dtype=float)
    spb = d.sections_per_block
    se_psi = None
    if psi_mode == "se":
        se_psi = [s.psi for s in se_run(base, sigma2, d.rate, max_iter=max_iter).states]

    beta = np.zeros(d.m * d.l)
    z_prev = np.zeros(d.n)
    psi = np.ones(d.l_c)
    phi = sigma2 + w @ psi / d.l_c
    phi_prev = None
    result = DecodeResult(beta, 0, False)

    for t in range(max_iter):
        onsager = 0.0 if phi_prev is None else np.repeat((phi - sigma2) / phi_prev, d.m_r)
        z = y - op.forward(beta) + onsager * z_prev
        inv_tau2 = (d.m_r / d.l) * (w.T @ (1.0 / phi))
        # logits = s / tau^2 with s = beta + tau^2 * A^T (z / phi)
        logits = np.repeat(inv_tau2, d.m_c) * beta + op.adjoint(z, 1.0 / phi)
        beta = section_softmax(logits, d.m)

        if se_psi is not None:
            psi_new = se_psi[min(t + 1, len(se_psi) - 1)].astype(float)
        else:
            sq = (beta.reshape(d.l, d.m) ** 2).sum(axis=1)
            psi_new = np.clip((1.0 - sq).reshape(d.l_c, spb).sum(axis=1) / spb, 0.0, 1.0)

        with np.errstate(divide="ignore"):
            tau2 = 1.0 / inv_tau2
        result.psi_hat.append(psi_new)
        result.tau2.append(tau2)
        result.phi_hat.append(phi)
        result.decisions.append(hard_decision(beta, d.m))
        if beta_true is not None:
            err = ((beta_true - beta) ** 2).reshape(d.l_c, -1).sum(axis=1)
            result.mse.append(err * d.l_c / d.l)

        phi_prev, z_prev = phi, z
        phi = sigma2 + w @ psi_new / d.l_c
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(beta))):
            raise NumericalDivergence(f"non-finite state at iteration {t + 1}")
        result.iterations = t + 1
        if np.max(np.abs(psi_new - psi)) < tol:
            result.converged = True
            psi = psi_new
            break
        psi = psi_new

    result.beta_hat = beta
    return result


def hard_decision_and_errors(result: DecodeResult, msg: Message):
    """Return ``(section_errors, block_error)`` for the final estimate."""
    errors = int(np.count_nonzero(hard_decision(result.beta_hat, msg.m) != msg.indices))
    return errors, int(errors > 0)
