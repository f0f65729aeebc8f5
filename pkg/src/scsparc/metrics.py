"""Rate-power (RPF) and power-rate (PRF) functions for UPA and VPA.

All rates are in nats per channel use.  The PRF of a policy is the smallest
power above which asymptotic SE decodes every column; it is infinite when
the rate is at or above the policy's rate ceiling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .base_matrix import CouplingContext, from_profile, make_upa
from .exceptions import RateInfeasible
from .state_evolution import se_run
from .vpa import (
    DEFAULT_DELTA,
    MAX_BISECTIONS,
    VpaInput,
    backward_roots,
    ft_limit,
    run_vpa,
)

PRF_TOL = 1e-9


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    BISECTION = "Bisection"


@dataclass(frozen=True)
class PrfResult:
    value: float  # math.inf when the rate is not achievable
    method: Method
    tolerance: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def rpf_upa(ctx: CouplingContext, power: float) -> float:
    """Largest rate decodable under uniform allocation at ``power``."""
    if not power > 0:
        raise ValueError("power must be positive")
    ratio = ctx.l_c / ctx.l_r
    r = np.arange(1, ctx.omega + 1)
    return float(ratio / 2.0 * np.sum(1.0 / (r + ratio * ctx.sigma2 / power * ctx.omega)))


def _bisect_increasing(fn, target, lo, hi, rtol=PRF_TOL):
    """Smallest x in [lo, hi] with fn(x) >= target for increasing fn."""
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if fn(mid) >= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def prf_upa(ctx: CouplingContext, rate: float, tol: float = PRF_TOL) -> PrfResult:
    rbar = rate_ceilings(ctx)[0]
    if rate >= rbar:
        return PrfResult(math.inf, Method.CLOSED_FORM, 0.0)
    hi = 1.0
    while rpf_upa(ctx, hi) < rate:
        hi *= 2.0
    value = _bisect_increasing(lambda p: rpf_upa(ctx, p), rate, 0.0, hi, tol)
    return PrfResult(value, Method.BISECTION, tol)


def exact_vpa_roots(ctx: CouplingContext, rate: float, tol: float = PRF_TOL) -> list[float]:
    """W_1^(V) .. W_theta^(V): the margin-free solutions of f_t = 2 R L_R."""
    roots, _ = backward_roots(ctx, rate, [0.0] * ctx.theta, tol)
    return roots


def prf_vpa(ctx: CouplingContext, rate: float, tol: float = PRF_TOL) -> PrfResult:
    try:
        roots = exact_vpa_roots(ctx, rate, tol)
    except RateInfeasible:
        return PrfResult(math.inf, Method.CLOSED_FORM, 0.0)
    scale = ctx.omega / (ctx.l_r * ctx.l_c)
    if ctx.lam % 2 == 0:
        value = scale * 2.0 * sum(roots)
    else:
        # the middle column appears once in an odd-length profile
        value = scale * (2.0 * sum(roots[:-1]) + roots[-1])
    return PrfResult(value, Method.CLOSED_FORM, tol)


def rpf_vpa(ctx: CouplingContext, power: float, tol: float = PRF_TOL) -> float:
    """Largest rate whose exact V-allocation fits in ``power``.

    P_V is increasing in R, so this bisects on R below the VPA ceiling.
    """
    if not power > 0:
        raise ValueError("power must be positive")
    rbar = rate_ceilings(ctx)[1]
    lo, hi = 0.0, rbar
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if prf_vpa(ctx, mid, tol).value <= power:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rate_ceilings(ctx: CouplingContext):
    """Return ``(rbar_upa, rbar_vpa, [R_1, ..., R_theta])``.

    ``R_t`` is the rate at which f_t saturates; the VPA ceiling is their
    minimum.
    """
    omega, l_c, l_r = ctx.omega, ctx.l_c, ctx.l_r
    rbar_upa = l_c / (2.0 * l_r) * sum(1.0 / r for r in range(1, omega + 1))
    r_t = [ft_limit(t, ctx) / (2.0 * l_r) for t in range(1, ctx.theta + 1)]
    rbar_vpa = min(r_t)
    if omega >= 2 or ctx.lam % 2 == 0:
        closed = l_c * (omega + (1 if ctx.lam % 2 == 0 else 2)) / (4.0 * l_r)
        assert math.isclose(rbar_vpa, closed, rel_tol=1e-12), (rbar_vpa, closed)
    return rbar_upa, rbar_vpa, r_t


def capacity_and_bound(ctx: CouplingContext, power: float):
    """AWGN capacity and an upper bound on the UPA RPF.

    The sum over r in the closed form is bounded by the integral of
    1 / (x + a*omega) over [0, omega], which gives
    (L_C / 2L_R) * ln(1 + (P/sigma2) * L_R / L_C).  The bound equals the
    capacity when omega = 1 and is strictly below it otherwise.
    """
    snr = power / ctx.sigma2
    capacity = 0.5 * math.log1p(snr)
    ratio = ctx.l_c / ctx.l_r
    bound = ratio / 2.0 * math.log1p(snr / ratio)
    return capacity, bound


class Policy(str, enum.Enum):
    UPA = "upa"
    VPA = "vpa"


def se_succeeds(ctx: CouplingContext, rate: float, power: float, policy: Policy,
                delta: float | Sequence[float] = DEFAULT_DELTA) -> bool:
    """Build the allocation at ``power`` and report asymptotic SE success."""
    pctx = ctx.replace(rate=rate, power=power)
    if policy is Policy.UPA:
        b = make_upa(pctx)
    else:
        outcome = run_vpa(VpaInput(pctx, delta))
        if not outcome.success:
            return False
        b = from_profile(outcome.profile)
    return se_run(b, ctx.sigma2, rate).success


def oracle_prf(ctx: CouplingContext, rate: float, policy: Policy | str = Policy.UPA,
               delta: float | Sequence[float] = DEFAULT_DELTA,
               tol: float = PRF_TOL) -> PrfResult:
    """PRF by bisection on the SE success predicate itself."""
    policy = Policy(policy)
    rbar_upa, rbar_vpa, _ = rate_ceilings(ctx)
    if rate >= (rbar_upa if policy is Policy.UPA else rbar_vpa):
        return PrfResult(math.inf, Method.CLOSED_FORM, 0.0)

    def ok(p):
        return se_succeeds(ctx, rate, p, policy, delta)

    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > 1e300:
            return PrfResult(math.inf, Method.BISECTION, tol)
    lo = 0.0
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return PrfResult(0.5 * (lo + hi), Method.BISECTION, tol)


def policy_dominates(ctx: CouplingContext, rate: float) -> bool:
    """True when P_V(rate) <= P_U(rate) (vacuous unless both are finite)."""
    pu, pv = prf_upa(ctx, rate).value, prf_vpa(ctx, rate).value
    if math.isinf(pu):
        return True
    return pv <= pu * (1.0 + 2 * PRF_TOL)
