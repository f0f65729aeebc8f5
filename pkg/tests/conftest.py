"""Independent oracles shared by the test modules.

These are deliberately written from the defining formulas with plain loops
(and mpmath where precision matters) so they share no code with the package.
"""

from __future__ import annotations

import mpmath
import numpy as np
import pytest

from scsparc.base_matrix import CouplingContext

mpmath.mp.dps = 50


def mirror(tail, t, lam):
    """Map 1-based column c in [t, lam - t + 1] to its power given W_t..W_theta."""
    theta = (lam + 1) // 2

    def w(c):
        k = c if c <= theta else lam - c + 1
        return tail[k - t]

    return w


def mp_ft(tail, t, omega, lam, sigma2=1.0):
    """f_t by direct summation in 50-digit arithmetic."""
    w = mirror([mpmath.mpf(x) for x in tail], t, lam)
    total = mpmath.mpf(0)
    for r in range(t, t + omega):
        denom = mpmath.mpf(sigma2)
        for c in range(t, min(r, lam - t + 1) + 1):
            denom += w(c) / lam
        total += w(t) / denom
    return total


def mp_solve(fixed, t, target, omega, lam, sigma2=1.0, tol=mpmath.mpf("1e-30")):
    """Root of f_t(W, fixed...) = target by high-precision bisection."""
    target = mpmath.mpf(target)
    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    while mp_ft([hi] + list(fixed), t, omega, lam, sigma2) <= target:
        hi *= 2
        if hi > 1e30:
            raise ArithmeticError("no finite root")
    while hi - lo > tol * hi:
        mid = (lo + hi) / 2
        if mp_ft([mid] + list(fixed), t, omega, lam, sigma2) > target:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def mp_backward(omega, lam, sigma2, rate, deltas):
    """Backward root sequence with margins, returns (roots, powers) as floats."""
    theta = (lam + 1) // 2
    l_r = omega + lam - 1
    target = 2 * mpmath.mpf(rate) * l_r
    powers = [None] * theta
    roots = [None] * theta
    for t in range(theta, 0, -1):
        root = mp_solve(powers[t:], t, target, omega, lam, sigma2)
        roots[t - 1] = root
        powers[t - 1] = root + mpmath.mpf(deltas[t - 1])
    return [float(x) for x in roots], [float(x) for x in powers]


def brute_se(w, sigma2, rate, iters):
    """Hard-threshold SE by explicit loops; returns the list of psi vectors."""
    l_r, l_c = len(w), len(w[0])
    psi = [1.0] * l_c
    out = [list(psi)]
    for _ in range(iters):
        phi = [sigma2 + sum(w[r][c] * psi[c] for c in range(l_c)) / l_c for r in range(l_r)]
        nxt = []
        for c in range(l_c):
            stat = sum(w[r][c] / phi[r] for r in range(l_r)) / (rate * l_r)
            nxt.append(0.0 if stat > 2 else 1.0)
        psi = nxt
        out.append(list(psi))
    return out


def random_ctx(rng, max_omega=5, max_lam=21, sigma2=None):
    omega = int(rng.integers(1, max_omega + 1))
    lam = int(rng.integers(2 * omega - 1, max_lam + 1))
    lam = max(lam, 1)
    s2 = float(rng.uniform(0.5, 2.0)) if sigma2 is None else sigma2
    return CouplingContext(omega, lam, sigma2=s2)


@pytest.fixture
def worked_ctx():
    """The small worked configuration used throughout: omega=2, Lambda=5."""
    return CouplingContext(2, 5, sigma2=1.0, rate=0.45, power=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one verdict line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    def _report(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
