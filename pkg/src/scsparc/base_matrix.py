"""Coupling parameters and band-diagonal base matrices.

A base matrix W has ``L_R = omega + Lambda - 1`` rows and ``L_C = Lambda``
columns; column ``c`` (1-based) may only be non-zero on rows
``c .. c + omega - 1``.  Entries are block variances in units of power and
their mean over all ``L_R * L_C`` cells is the average codeword power.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    AsymmetricProfile,
    BandViolation,
    DimensionMismatch,
    PowerMismatch,
)

POWER_RTOL = 1e-9
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class CouplingContext:
    """Coupling pair plus channel/code scalars.

    ``rate`` (nats per channel use) and ``power`` are optional because many
    operations take them as explicit arguments instead.
    """

    omega: int
    lam: int
    sigma2: float = 1.0
    rate: float | None = None
    power: float | None = None

    def __post_init__(self):
        if int(self.omega) != self.omega or self.omega < 1:
            raise ValueError(f"omega must be a positive integer, got {self.omega!r}")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError(f"lambda must be a positive integer, got {self.lam!r}")
        if self.lam < 2 * self.omega - 1:
            raise ValueError(
                f"coupling length {self.lam} must be >= 2*omega - 1 = {2 * self.omega - 1}"
            )
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.rate is not None and not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.power is not None and not self.power > 0:
            raise ValueError("power must be positive")

    @property
    def l_r(self) -> int:
        return self.omega + self.lam - 1

    @property
    def l_c(self) -> int:
        return self.lam

    @property
    def theta(self) -> int:
        """Index of the middle column, ceil(Lambda / 2)."""
        return (self.lam + 1) // 2

    def replace(self, **changes) -> "CouplingContext":
        return dataclasses.replace(self, **changes)

    def band_mask(self) -> np.ndarray:
        """Boolean L_R x L_C mask of the allowed (non-zero) band."""
        r = np.arange(self.l_r)[:, None]
        c = np.arange(self.l_c)[None, :]
        return (r >= c) & (r <= c + self.omega - 1)


def _require_power(ctx: CouplingContext) -> float:
    if ctx.power is None:
        raise ValueError("CouplingContext.power is required here")
    return ctx.power


@dataclass(frozen=True)
class BaseMatrix:
    ctx: CouplingContext
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, ctx: CouplingContext) -> "BaseMatrix":
        entries = np.loadtxt(path, delimiter=",", ndmin=2)
        b = cls(ctx, entries)
        validate(b, require_power_equality=False)
        return b


@dataclass(frozen=True)
class ColumnProfile:
    """Per-column powers W_1..W_Lambda, constant down each band."""

    ctx: CouplingContext
    w: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != self.ctx.l_c:
            raise DimensionMismatch(f"profile has {len(w)} columns, expected {self.ctx.l_c}")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ValueError("profile entries must be finite and non-negative")
        object.__setattr__(self, "w", w)

    @property
    def half(self) -> tuple[float, ...]:
        """W_1..W_theta."""
        return self.w[: self.ctx.theta]

    @classmethod
    def from_half(cls, ctx: CouplingContext, half) -> "ColumnProfile":
        """Mirror W_1..W_theta about the middle column."""
        half = [float(x) for x in half]
        if len(half) != ctx.theta:
            raise DimensionMismatch(f"expected {ctx.theta} leading columns, got {len(half)}")
        full = [half[min(c, ctx.lam - 1 - c)] for c in range(ctx.lam)]
        return cls(ctx, full)

    def is_symmetric(self, tol: float = SYMMETRY_TOL) -> bool:
        w = np.asarray(self.w)
        scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
        return bool(np.all(np.abs(w - w[::-1]) <= tol * scale))

    def to_json(self) -> dict:
        return {"omega": self.ctx.omega, "lambda": self.ctx.lam, "w": list(self.w)}

    @classmethod
    def from_json(cls, doc: dict, **ctx_fields) -> "ColumnProfile":
        try:
            omega, lam, w = int(doc["omega"]), int(doc["lambda"]), doc["w"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed profile document: {exc}") from exc
        ctx = CouplingContext(omega=omega, lam=lam, **ctx_fields)
        return cls(ctx, w)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path, **ctx_fields) -> "ColumnProfile":
        return cls.from_json(json.loads(Path(path).read_text()), **ctx_fields)


def make_upa(ctx: CouplingContext) -> BaseMatrix:
    """Uniform power allocation: every band entry equals P * L_R / omega."""
    power = _require_power(ctx)
    entries = np.where(ctx.band_mask(), power * ctx.l_r / ctx.omega, 0.0)
    return BaseMatrix(ctx, entries)


def from_profile(profile: ColumnProfile) -> BaseMatrix:
    if not profile.is_symmetric():
        raise AsymmetricProfile(f"profile is not symmetric about column {profile.ctx.theta}")
    ctx = profile.ctx
    entries = np.where(ctx.band_mask(), np.asarray(profile.w)[None, :], 0.0)
    return BaseMatrix(ctx, entries)


def to_profile(b: BaseMatrix) -> ColumnProfile:
    """Inverse of :func:`from_profile` for row-constant band matrices."""
    validate(b, require_power_equality=False)
    ctx = b.ctx
    w = []
    for c in range(ctx.l_c):
        col = b.entries[c : c + ctx.omega, c]
        if np.any(col != col[0]):
            raise ValueError(f"column {c + 1} is not constant on its band")
        w.append(float(col[0]))
    return ColumnProfile(ctx, w)


def average_power(b: BaseMatrix) -> float:
    l_r, l_c = b.entries.shape
    return float(b.entries.sum() / (l_r * l_c))


def validate(b: BaseMatrix, require_power_equality: bool = True) -> None:
    ctx = b.ctx
    if b.entries.shape != (ctx.l_r, ctx.l_c):
        raise DimensionMismatch(
            f"base matrix is {b.entries.shape}, expected {(ctx.l_r, ctx.l_c)}"
        )
    if np.any(b.entries < 0) or not np.all(np.isfinite(b.entries)):
        raise ValueError("base matrix entries must be finite and non-negative")
    off_band = (~ctx.band_mask()) & (b.entries != 0.0)
    if off_band.any():
        r, c = np.argwhere(off_band)[0]
        raise BandViolation(f"non-zero entry at row {r + 1}, column {c + 1} is off the band")
    if require_power_equality:
        budget = _require_power(ctx)
        avg = average_power(b)
        if abs(avg - budget) > POWER_RTOL * budget:
            raise PowerMismatch(f"average power {avg!r} does not match budget {budget!r}")
