"""V-power allocation (VPA) for the columns of a base matrix.

The allocation is built backwards from the middle column: for
t = theta, ..., 1 the power W_t is the root of ``f_t(W_t, ..., W_theta) =
2 R L_R`` plus a positive margin delta_t.  Whatever power remains from the
budget is then moved to the two boundary columns.

Column indices are 1-based throughout to match the usual notation;
``w_tail`` arguments always hold ``W_t, ..., W_theta`` (the columns past the
middle are filled in by symmetry).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .base_matrix import POWER_RTOL, ColumnProfile, CouplingContext
from .exceptions import DimensionMismatch, IndexOutOfRange, RateInfeasible

DEFAULT_TOL = 1e-9
MAX_BISECTIONS = 200
DEFAULT_DELTA = 0.01


def _check_t(t: int, ctx: CouplingContext) -> None:
    if not 1 <= t <= ctx.theta:
        raise IndexOutOfRange(f"t={t} outside 1..{ctx.theta}")


def _extended(w_tail, t: int, ctx: CouplingContext) -> np.ndarray:
    """W_c for c = t .. Lambda - t + 1, mirrored about the middle column."""
    _check_t(t, ctx)
    w_tail = np.asarray(w_tail, dtype=float)
    if w_tail.shape != (ctx.theta - t + 1,):
        raise DimensionMismatch(
            f"f_{t} needs {ctx.theta - t + 1} powers (W_{t}..W_{ctx.theta}), got {w_tail.size}"
        )
    cols = np.arange(t, ctx.lam - t + 2)
    return w_tail[np.minimum(cols, ctx.lam - cols + 1) - t]


def ft_value(w_tail, t: int, ctx: CouplingContext) -> float:
    ext = _extended(w_tail, t, ctx)
    cum = np.cumsum(ext)
    rows = np.arange(t, t + ctx.omega)
    upper = np.minimum(rows, ctx.lam - t + 1)
    denom = ctx.sigma2 + cum[upper - t] / ctx.l_c
    return float(np.sum(ext[0] / denom))


def ft_derivative(w_tail, t: int, ctx: CouplingContext) -> float:
    """Partial derivative of f_t with respect to W_t."""
    ext = _extended(w_tail, t, ctx)
    cum = np.concatenate([[0.0], np.cumsum(ext)])
    s2, l_c, lam, omega = ctx.sigma2, ctx.l_c, ctx.lam, ctx.omega

    def partial(a, b):
        # sum of W_c' for a <= c' <= b (empty when b < a)
        return cum[b - t + 1] - cum[a - t] if b >= a else 0.0

    def term(r):
        return (s2 + partial(t + 1, r) / l_c) / (s2 + partial(t, r) / l_c) ** 2

    if t + omega - 1 < lam - t + 1:
        return float(sum(term(r) for r in range(t, t + omega)))
    total = sum(term(r) for r in range(t, lam - t + 1))
    tail = (s2 + partial(t + 1, lam - t) / l_c) / (s2 + partial(t, lam - t + 1) / l_c) ** 2
    return float(total + (2 * t + omega - lam - 1) * tail)


def ft_limit(t: int, ctx: CouplingContext) -> float:
    """Supremum of f_t as W_t grows without bound (tail held finite).

    Each row contributes L_C divided by how many times W_t enters its
    denominator: twice once the row reaches the mirror column Lambda-t+1,
    unless that mirror is column t itself.
    """
    _check_t(t, ctx)
    mirror = ctx.lam - t + 1
    total = 0.0
    for r in range(t, t + ctx.omega):
        mult = 2 if (r >= mirror and mirror != t) else 1
        total += ctx.l_c / mult
    return total


def solve_ft(w_fixed_tail, t: int, target: float, ctx: CouplingContext,
             tol: float = DEFAULT_TOL) -> float:
    """Solve ``f_t(W_t, W_{t+1}, ..., W_theta) = target`` for W_t by bisection.

    f_t is continuous and strictly increasing in W_t with f_t(0) = 0, so a
    root exists iff ``target`` is below :func:`ft_limit`; otherwise
    :class:`RateInfeasible` is raised.
    """
    _check_t(t, ctx)
    if not target > 0:
        raise ValueError("target must be positive")
    fixed = [float(x) for x in w_fixed_tail]
    if len(fixed) != ctx.theta - t:
        raise DimensionMismatch(f"expected {ctx.theta - t} fixed powers, got {len(fixed)}")
    if any(x < 0 or not math.isfinite(x) for x in fixed):
        raise ValueError("fixed powers must be finite and non-negative")

    limit = ft_limit(t, ctx)
    if target >= limit:
        raise RateInfeasible(f"f_{t} is bounded by {limit!r} < target {target!r}")

    def f(w):
        return ft_value([w] + fixed, t, ctx)

    lo, hi = 0.0, max(1.0, target * ctx.sigma2)
    f_hi = f(hi)
    while f_hi <= target:
        lo = hi
        hi *= 2.0
        if not math.isfinite(hi):
            # target is within rounding of the supremum
            raise RateInfeasible(f"f_{t} stopped increasing below target {target!r}")
        f_hi = f(hi)

    # invariant: f(hi) > target >= f(lo); returning hi keeps the strict
    # inequality the SE success test needs
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= tol * max(1.0, hi) and f_hi - target <= tol * target:
            break
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if val > target:
            hi, f_hi = mid, val
        else:
            lo = mid
    return hi


class FailureKind(str, enum.Enum):
    POWER_EXCEEDED = "PowerExceeded"
    RATE_INFEASIBLE = "RateInfeasible"


@dataclass(frozen=True)
class VpaFailure:
    kind: FailureKind
    detail: str


@dataclass(frozen=True)
class VpaInput:
    ctx: CouplingContext
    delta: float | Sequence[float] = DEFAULT_DELTA

    def __post_init__(self):
        if self.ctx.rate is None or self.ctx.power is None:
            raise ValueError("VPA needs a context with rate and power set")
        deltas = self.deltas
        if any(not d > 0 for d in deltas):
            raise ValueError("every delta_t must be positive")

    @property
    def deltas(self) -> tuple[float, ...]:
        if np.ndim(self.delta) == 0:
            return (float(self.delta),) * self.ctx.theta
        deltas = tuple(float(d) for d in self.delta)
        if len(deltas) != self.ctx.theta:
            raise DimensionMismatch(f"need {self.ctx.theta} margins, got {len(deltas)}")
        return deltas


@dataclass(frozen=True)
class VpaOutcome:
    ctx: CouplingContext
    profile: ColumnProfile | None = None
    failure: VpaFailure | None = None
    roots: tuple[float, ...] = ()
    margins: tuple[float, ...] = ()
    pre_transfer: tuple[float, ...] = ()
    used_power: float | None = None
    residual: float | None = None
    notes: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.failure is None

    def to_json(self) -> dict:
        return {
            "omega": self.ctx.omega,
            "lambda": self.ctx.lam,
            "sigma2": self.ctx.sigma2,
            "rate": self.ctx.rate,
            "power": self.ctx.power,
            "success": self.success,
            "failure": None if self.failure is None else {
                "kind": self.failure.kind.value, "detail": self.failure.detail},
            "roots": list(self.roots),
            "margins": list(self.margins),
            "pre_transfer": list(self.pre_transfer),
            "used_power": self.used_power,
            "residual": self.residual,
            "w": None if self.profile is None else list(self.profile.w),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def backward_roots(ctx: CouplingContext, rate: float, deltas: Sequence[float],
                   tol: float = DEFAULT_TOL):
    """Backward root pass of the allocation: returns ``(roots, powers)`` for t = 1..theta.

    ``deltas`` may be all zero, which yields the exact-root sequence used by
    the power-rate function.
    """
    theta = ctx.theta
    target = 2.0 * rate * ctx.l_r
    roots = [0.0] * theta
    powers = [0.0] * theta
    for t in range(theta, 0, -1):
        root = solve_ft(powers[t:], t, target, ctx, tol)
        roots[t - 1] = root
        powers[t - 1] = root + deltas[t - 1]
    return roots, powers


def profile_power(ctx: CouplingContext, w: Sequence[float]) -> float:
    """Average base-matrix power of a row-constant column profile."""
    return ctx.omega * float(np.sum(w)) / (ctx.l_r * ctx.l_c)


def run_vpa(inp: VpaInput, tol: float = DEFAULT_TOL) -> VpaOutcome:
    ctx, deltas = inp.ctx, inp.deltas
    try:
        roots, half = backward_roots(ctx, ctx.rate, deltas, tol)
    except RateInfeasible as exc:
        return VpaOutcome(ctx, failure=VpaFailure(FailureKind.RATE_INFEASIBLE, str(exc)),
                          margins=deltas)

    full = list(ColumnProfile.from_half(ctx, half).w)
    used = profile_power(ctx, full)
    common = dict(roots=tuple(roots), margins=deltas, pre_transfer=tuple(half), used_power=used)
    if used > ctx.power * (1.0 + POWER_RTOL):
        detail = f"allocation needs power {used!r} > budget {ctx.power!r}"
        return VpaOutcome(ctx, failure=VpaFailure(FailureKind.POWER_EXCEEDED, detail), **common)

    residual = max(ctx.power - used, 0.0)
    # both boundary columns receive the transfer unless they coincide
    n_boundary = 1 if ctx.lam == 1 else 2
    full[0] += residual * ctx.l_r * ctx.l_c / (n_boundary * ctx.omega)
    full[-1] = full[0]
    return VpaOutcome(ctx, profile=ColumnProfile(ctx, full), residual=residual, **common)
