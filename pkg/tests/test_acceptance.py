"""Acceptance criteria, one test per criterion.

Each test computes its verdict, prints a ``[PASS|FAIL] criterion N`` line
through the ``report`` fixture and then asserts it.  Tolerances and runtime
budgets are module constants so they are visible in one place.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from scsparc.base_matrix import ColumnProfile, CouplingContext, average_power, from_profile, make_upa
from scsparc.cli import main
from scsparc.codec import SparcDims, amp_decode, awgn, encode, make_operator, sample_message
from scsparc.harness import run_trials, snr_to_power, reference_profile, reference_profiles, trial_seeds
from scsparc.metrics import (
    Policy,
    exact_vpa_roots,
    oracle_prf,
    prf_upa,
    prf_vpa,
    rate_ceilings,
)
from scsparc.state_evolution import column_statistics, se_run, wave_summary
from scsparc.vpa import FailureKind, VpaInput, ft_derivative, ft_value, profile_power, run_vpa, solve_ft

from conftest import mp_backward, random_ctx

# criterion 1
GOLDEN_F1 = 5.1708
GOLDEN_F1_TOL = 5e-4
GOLDEN_F1_BUDGET_S = 1e-3
# criterion 2
GOLDEN_ROOTS = (9.87, 8.74, 5.88)
GOLDEN_W1 = 10.82
GOLDEN_VPA_TOL = 0.05
ORACLE_TOL = 1e-6
VPA_BUDGET_S = 10e-3
# criterion 3
PRF_PAIRS = 10
PRF_RATES = 50
PRF_TOL = 1e-9
PRF_BUDGET_S = 5.0
# criterion 4
SHARP_TUPLES = 20
SHARP_DELTA = 1e-6
SHARP_STEP = 1e-3
SHARP_BUDGET_S = 5.0
# criterion 5
WAVE_INSTANCES = 100
WAVE_BUDGET_S = 1.0
# criterion 6
PROPERTY_CASES = 100
SQRT_HYPOTHESIS_CASES = 2000
PROPERTY_BUDGET_S = 10.0
# criterion 7
FD_POINTS = 1000
FD_RTOL = 1e-6
FD_BUDGET_S = 1.0
# criterion 8
REFERENCE_POWER_RTOL = 5e-3
# criterion 9
TRACK_SNR_DB = 12.0
TRACK_TRIALS = 200
TRACK_ITERATIONS = 3
TRACK_TOL = 0.1
TRACK_BUDGET_S = 600.0
# criterion 10
ORDER_SNR_DB = 10.5
ORDER_TRIALS = 2000
ORDER_AMP_ITER = 100
ORDER_Z = 1.6448536269514722  # one-sided 95% normal quantile
ORDER_BUDGET_S = 1800.0
# reference code dimensions
REFERENCE_DIMS = dict(m=512, l=30, m_r=12, l_r=18, l_c=15)


def timed(fn):
    start = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - start


def best_time(fn, repeats=5):
    """Fastest of a few runs, so one-off interpreter noise is not billed."""
    value, best = timed(fn)
    for _ in range(repeats - 1):
        best = min(best, timed(fn)[1])
    return value, best


class TestGoldenExamples:
    def test_criterion_1_upa_statistic(self, report):
        ctx = CouplingContext(2, 5, sigma2=1.0, rate=0.45, power=3.0)
        b = make_upa(ctx)

        def compute():
            stat = column_statistics(b, np.ones(ctx.l_c), ctx.sigma2)[0]
            return stat, se_run(b, ctx.sigma2, ctx.rate).success

        (f1, success), elapsed = best_time(compute)
        threshold = 2 * ctx.rate * ctx.l_r
        passed = (abs(f1 - GOLDEN_F1) <= GOLDEN_F1_TOL and f1 <= threshold and not success
                  and elapsed < GOLDEN_F1_BUDGET_S)
        report(1, "UPA worked example", passed,
               f"f1={f1:.6f} (target {GOLDEN_F1}+/-{GOLDEN_F1_TOL}), threshold={threshold:.4f}, "
               f"se_success={success}, {elapsed * 1e3:.3f} ms")
        assert passed

    def test_criterion_2_vpa_roots(self, report):
        ctx = CouplingContext(2, 5, sigma2=1.0, rate=0.45, power=3.0)
        out, elapsed = best_time(lambda: run_vpa(VpaInput(ctx, 0.01)))
        ref_roots, ref_powers = mp_backward(2, 5, 1.0, 0.45, [0.01] * 3)
        golden = (out.success
                  and all(abs(a - b) <= GOLDEN_VPA_TOL for a, b in zip(out.pre_transfer, GOLDEN_ROOTS))
                  and abs(out.profile.w[0] - GOLDEN_W1) <= GOLDEN_VPA_TOL)
        oracle_gap = max(max(abs(a - b) for a, b in zip(out.roots, ref_roots)),
                         max(abs(a - b) for a, b in zip(out.pre_transfer, ref_powers)))
        passed = golden and oracle_gap <= ORACLE_TOL and elapsed < VPA_BUDGET_S
        report(2, "VPA worked example", passed,
               f"powers={[round(x, 4) for x in out.pre_transfer]}, W1={out.profile.w[0]:.4f}, "
               f"oracle gap={oracle_gap:.2e}, {elapsed * 1e3:.2f} ms")
        assert passed


class TestThresholds:
    def test_criterion_3_prf_matches_se_bisection(self, report):
        rng = np.random.default_rng(3)
        worst = 0.0

        def compute():
            nonlocal worst
            for _ in range(PRF_PAIRS):
                ctx = random_ctx(rng, max_omega=5, max_lam=21)
                rbar_u = rate_ceilings(ctx)[0]
                for rate in np.linspace(0.02, 0.98, PRF_RATES) * rbar_u:
                    a = oracle_prf(ctx, float(rate), Policy.UPA, tol=PRF_TOL).value
                    b = prf_upa(ctx, float(rate), tol=PRF_TOL).value
                    worst = max(worst, abs(a - b) / (PRF_TOL * max(a, b)))

        _, elapsed = timed(compute)
        passed = worst <= 2.0 and elapsed < PRF_BUDGET_S
        report(3, "closed-form UPA PRF vs SE bisection", passed,
               f"{PRF_PAIRS}x{PRF_RATES} points, worst gap={worst:.3f} x tol, {elapsed:.2f} s")
        assert passed

    def test_criterion_4_vpa_sharpness(self, report):
        rng = np.random.default_rng(4)
        failures = []

        def compute():
            done = 0
            while done < SHARP_TUPLES:
                ctx = random_ctx(rng)
                rate = float(rng.uniform(0.05, 0.95)) * rate_ceilings(ctx)[1]
                p_v = prf_vpa(ctx, rate).value
                above = run_vpa(VpaInput(ctx.replace(rate=rate, power=p_v * (1 + SHARP_STEP)),
                                         SHARP_DELTA))
                below = run_vpa(VpaInput(ctx.replace(rate=rate, power=p_v * (1 - SHARP_STEP)),
                                         SHARP_DELTA))
                ok = above.success and not below.success
                ok = ok and below.failure.kind is FailureKind.POWER_EXCEEDED
                if above.success:
                    traj = se_run(from_profile(above.profile), ctx.sigma2, rate)
                    ok = ok and traj.success and traj.success_iteration <= ctx.theta
                if not ok:
                    failures.append((ctx.omega, ctx.lam, rate))
                done += 1

        _, elapsed = timed(compute)
        passed = not failures and elapsed < SHARP_BUDGET_S
        report(4, "VPA succeeds just above P_V and fails just below", passed,
               f"{SHARP_TUPLES} tuples, failures={failures}, {elapsed:.2f} s")
        assert passed

    def test_criterion_5_wave_law(self, report):
        rng = np.random.default_rng(5)
        bad, below = [], []

        def compute():
            done = 0
            while done < WAVE_INSTANCES:
                ctx = random_ctx(rng)
                rate = float(rng.uniform(0.05, 0.99)) * rate_ceilings(ctx)[0]
                power = float(np.exp(rng.uniform(np.log(0.1), np.log(500))))
                traj = se_run(make_upa(ctx.replace(rate=rate, power=power)), ctx.sigma2, rate)
                g, prefixes = wave_summary(traj)
                if g < 1:
                    continue
                expected = [min(g * t, ctx.theta) for t in range(1, len(prefixes) + 1)]
                if prefixes != expected or prefixes[-1] != ctx.theta:
                    bad.append((ctx.omega, ctx.lam, g, prefixes))
                # the weaker form: at least min(g t, theta) columns are decoded
                if any(p < e for p, e in zip(prefixes, expected)):
                    below.append((ctx.omega, ctx.lam, g, prefixes))
                done += 1

        _, elapsed = timed(compute)
        passed = not bad and elapsed < WAVE_BUDGET_S
        report(5, "decoded prefix equals min(g t, theta)", passed,
               f"{WAVE_INSTANCES} instances, exact mismatches={len(bad)} "
               f"(first: omega, lambda, g, prefixes = {bad[0] if bad else None}), "
               f"lower-bound violations={len(below)}, {elapsed:.3f} s")
        assert passed


def _ft_case(rng, max_w=60.0, sigma2=None):
    ctx = random_ctx(rng, sigma2=float(rng.uniform(0.25, 4.0)) if sigma2 is None else sigma2)
    t = int(rng.integers(1, ctx.theta + 1))
    tail = rng.uniform(0.0, max_w, size=ctx.theta - t + 1)
    return ctx, t, tail


def _tail_multiplicity(ctx, t):
    """How often W_{t+1}..W_theta appear among columns t+1..Lambda-t."""
    cols = range(t + 1, ctx.lam - t + 1)
    return np.array([sum(min(c, ctx.lam - c + 1) == k for c in cols)
                     for k in range(t + 1, ctx.theta + 1)])


def prop_psi_monotone(rng):
    for _ in range(PROPERTY_CASES):
        ctx = random_ctx(rng)
        rate = float(rng.uniform(0.05, 1.0)) * rate_ceilings(ctx)[1]
        half = np.sort(rng.uniform(0.1, 80, size=ctx.theta))[::-1]
        prof = ColumnProfile.from_half(ctx, half)
        for b in (make_upa(ctx.replace(power=float(rng.uniform(0.1, 50)))), from_profile(prof)):
            traj = se_run(b, ctx.sigma2, rate)
            for a, c in zip(traj.states, traj.states[1:]):
                if np.any(c.psi > a.psi):
                    return False
    return True


def prop_ft_increasing(rng):
    for _ in range(PROPERTY_CASES):
        ctx, t, tail = _ft_case(rng)
        bumped = tail.copy()
        bumped[0] += rng.uniform(1e-3, 50)
        if not ft_value(bumped, t, ctx) > ft_value(tail, t, ctx):
            return False
    return True


def prop_slope_decreasing(rng):
    for _ in range(PROPERTY_CASES):
        ctx, t, tail = _ft_case(rng)
        bumped = tail.copy()
        bumped[0] += rng.uniform(1e-2, 50)
        if not ft_derivative(bumped, t, ctx) < ft_derivative(tail, t, ctx):
            return False
    return True


def prop_ft_decreasing_in_tail(rng):
    done = 0
    while done < PROPERTY_CASES:
        ctx, t, tail = _ft_case(rng)
        if len(tail) < 2:
            continue
        s = int(rng.integers(1, len(tail)))
        bumped = tail.copy()
        bumped[s] += rng.uniform(1e-3, 50)
        col = t + s
        reach = min(t + ctx.omega - 1, ctx.lam - t + 1)
        before, after = ft_value(tail, t, ctx), ft_value(bumped, t, ctx)
        if col <= reach or ctx.lam - col + 1 <= reach:
            if not after < before:
                return False
        elif after != before:
            return False
        done += 1
    return True


def prop_slope_sqrt_hypothesis(rng):
    """Slope of f_t is non-decreasing in the tail whenever
    sigma^2 + (1/L_C) * sum_{i=t+1}^{Lambda-t} W_i <= sqrt(W_t / L_C)."""
    done = violations = 0
    while done < SQRT_HYPOTHESIS_CASES:
        ctx = random_ctx(rng, sigma2=float(rng.uniform(0.1, 4.0)))
        t = int(rng.integers(1, ctx.theta + 1))
        if t == ctx.theta:
            continue
        wt = float(ctx.l_c * rng.uniform(0, 4))
        budget = ctx.l_c * (math.sqrt(wt / ctx.l_c) - ctx.sigma2)
        if budget <= 0:
            continue
        hi = rng.uniform(0, 1, size=ctx.theta - t)
        hi *= budget * rng.uniform(0, 1) / (hi @ _tail_multiplicity(ctx, t))
        lo = hi * rng.uniform(0, 1, size=hi.size)
        if ft_derivative([wt, *hi], t, ctx) < ft_derivative([wt, *lo], t, ctx) * (1 - 1e-12):
            violations += 1
        done += 1
    return violations == 0, violations


def prop_f_comparison(rng):
    done = 0
    while done < PROPERTY_CASES:
        ctx, t, tail = _ft_case(rng)
        if t == ctx.theta:
            continue
        tail = np.sort(tail)[::-1]
        tail[0] = tail[1]
        if not ft_value(tail, t, ctx) <= ft_value(tail[1:], t + 1, ctx) * (1 + 1e-12):
            return False
        done += 1
    return True


def prop_v_shape(rng):
    for _ in range(PROPERTY_CASES):
        ctx = random_ctx(rng)
        rate = float(rng.uniform(0.02, 0.98)) * rate_ceilings(ctx)[1]
        roots = exact_vpa_roots(ctx, rate)
        if not all(a >= b * (1 - 1e-12) for a, b in zip(roots, roots[1:])):
            return False
    return True


def prop_dominance(rng):
    for _ in range(PROPERTY_CASES):
        ctx = random_ctx(rng)
        rbar_u, rbar_v, _ = rate_ceilings(ctx)
        rate = float(rng.uniform(0.02, 1.0)) * rbar_v
        pu, pv = prf_upa(ctx, rate).value, prf_vpa(ctx, rate).value
        if math.isfinite(pu) and not (math.isfinite(pv) and pv <= pu * (1 + 2 * PRF_TOL)):
            return False
    return True


def prop_ceilings(rng):
    for _ in range(PROPERTY_CASES):
        ctx = random_ctx(rng, max_omega=8, max_lam=40)
        rbar_u, rbar_v, _ = rate_ceilings(ctx)
        if not rbar_u <= rbar_v * (1 + 1e-12):
            return False
    return True


def prop_upa_recovery(rng):
    done = 0
    while done < PROPERTY_CASES:
        ctx = random_ctx(rng)
        power = float(rng.uniform(0.5, 100))
        wbar = power * ctx.l_r / ctx.omega
        rate = float(rng.uniform(0.02, 1.0)) * rate_ceilings(ctx)[0]
        target = 2 * rate * ctx.l_r
        flat = [wbar] * ctx.theta
        if not all(ft_value(flat[t - 1:], t, ctx) > target for t in range(1, ctx.theta + 1)):
            continue
        deltas = [wbar - solve_ft(flat[t:], t, target, ctx) for t in range(1, ctx.theta + 1)]
        out = run_vpa(VpaInput(ctx.replace(rate=rate, power=power), deltas))
        if not (out.success and np.allclose(out.profile.w, wbar, rtol=1e-9)):
            return False
        done += 1
    return True


PROPERTIES = {
    "psi monotone along SE": prop_psi_monotone,
    "f_t increasing in W_t": prop_ft_increasing,
    "slope decreasing in W_t": prop_slope_decreasing,
    "f_t decreasing in later W_s": prop_ft_decreasing_in_tail,
    "slope non-decreasing in tail under sqrt hypothesis": prop_slope_sqrt_hypothesis,
    "f_t <= f_t+1 for equal leading powers": prop_f_comparison,
    "exact roots V-shaped": prop_v_shape,
    "P_V <= P_U": prop_dominance,
    "UPA ceiling <= VPA ceiling": prop_ceilings,
    "UPA recovered as a VPA": prop_upa_recovery,
}


class TestProperties:
    def test_criterion_6_property_suite(self, report):
        rng = np.random.default_rng(6)
        verdicts = {}

        def compute():
            for name, prop in PROPERTIES.items():
                verdicts[name] = prop(rng)

        _, elapsed = timed(compute)
        failed = []
        for name, v in verdicts.items():
            ok, extra = v if isinstance(v, tuple) else (v, None)
            if not ok:
                failed.append(name if extra is None else f"{name} ({extra}/{SQRT_HYPOTHESIS_CASES} violations)")
        passed = not failed and elapsed < PROPERTY_BUDGET_S
        report(6, "randomized property suite", passed,
               f"{len(PROPERTIES)} properties, failed={failed}, {elapsed:.2f} s")
        assert passed

    def test_criterion_7_derivative_vs_finite_differences(self, report):
        rng = np.random.default_rng(7)
        worst = 0.0

        def compute():
            nonlocal worst
            for _ in range(FD_POINTS):
                ctx, t, tail = _ft_case(rng)
                tail[0] = rng.uniform(0.01, 60)
                h = 1e-5 * max(1.0, tail[0])
                up, down = tail.copy(), tail.copy()
                up[0] += h
                down[0] -= h
                fd = (ft_value(up, t, ctx) - ft_value(down, t, ctx)) / (2 * h)
                exact = ft_derivative(tail, t, ctx)
                worst = max(worst, abs(exact - fd) / abs(exact))

        _, elapsed = timed(compute)
        passed = worst <= FD_RTOL and elapsed < FD_BUDGET_S
        report(7, "analytic slope vs central differences", passed,
               f"{FD_POINTS} points, worst rel err={worst:.2e}, {elapsed:.3f} s")
        assert passed


class TestReferenceProfiles:
    def test_criterion_8_reference_power(self, report):
        gaps = {}
        for row in reference_profiles():
            prof = reference_profile(row["snr_db"])
            assert (prof.ctx.omega, prof.ctx.lam, prof.ctx.l_r) == (4, 15, 18)
            power = profile_power(prof.ctx, prof.w)
            b = from_profile(ColumnProfile(prof.ctx.replace(power=power), prof.w))
            gaps[row["snr_db"]] = average_power(b) / snr_to_power(row["snr_db"]) - 1
        passed = len(gaps) == 6 and all(abs(g) <= REFERENCE_POWER_RTOL for g in gaps.values())
        report(8, "reference profiles carry 10^(SNR/10) power", passed,
               "relative gaps " + ", ".join(f"{s} dB: {g:+.4%}" for s, g in gaps.items()))
        assert passed


def _reference_base(snr_db, rate):
    prof = reference_profile(snr_db)
    ctx = prof.ctx.replace(rate=rate, power=profile_power(prof.ctx, prof.w))
    return from_profile(ColumnProfile(ctx, prof.w))


class TestFiniteLength:
    def test_criterion_9_se_tracking(self, report):
        dims = SparcDims(**REFERENCE_DIMS)
        base = _reference_base(TRACK_SNR_DB, dims.rate)
        asym = [s.psi for s in se_run(base, 1.0, dims.rate, max_iter=TRACK_ITERATIONS).states]
        asym += [asym[-1]] * (TRACK_ITERATIONS + 1 - len(asym))

        def compute():
            total = np.zeros((TRACK_ITERATIONS, dims.l_c))
            for trial in range(TRACK_TRIALS):
                op_seed, msg_seed, noise_seed = trial_seeds(9, trial)
                op = make_operator("gaussian", base, dims, op_seed)
                msg = sample_message(dims, msg_seed)
                y = awgn(encode(op, msg), 1.0, noise_seed)
                res = amp_decode(op, y, base, dims, 1.0, max_iter=TRACK_ITERATIONS,
                                 beta_true=msg.beta, tol=0.0)
                total += np.array(res.mse)
            return total / TRACK_TRIALS

        mse, elapsed = timed(compute)
        gap = np.abs(mse - np.array(asym[1:TRACK_ITERATIONS + 1]))
        passed = float(gap.max()) <= TRACK_TOL and elapsed <= TRACK_BUDGET_S
        worst_t, worst_c = np.unravel_index(int(gap.argmax()), gap.shape)
        report(9, "finite-length MSE tracks asymptotic SE", passed,
               f"{TRACK_TRIALS} Gaussian trials at {TRACK_SNR_DB} dB, max |mse - psi|="
               f"{gap.max():.3f} at iteration {worst_t + 1} block {worst_c + 1} "
               f"(mse={mse[worst_t, worst_c]:.3f}, psi={asym[worst_t + 1][worst_c]:.0f}), "
               f"{elapsed:.1f} s")
        assert passed

    @pytest.mark.slow
    def test_criterion_10_profile_beats_uniform(self, report):
        dims = SparcDims(**REFERENCE_DIMS)
        power = snr_to_power(ORDER_SNR_DB)
        vpa_like = _reference_base(ORDER_SNR_DB, dims.rate)
        upa = make_upa(CouplingContext(4, 15, rate=dims.rate, power=power))

        def compute():
            errors = {}
            for name, base in (("reference", vpa_like), ("upa", upa)):
                res = run_trials(base, dims, 1.0, "hadamard", 10, ORDER_TRIALS, ORDER_AMP_ITER)
                errors[name] = sum(r.block_error for r in res)
            return errors

        errors, elapsed = timed(compute)
        p1, p2 = errors["reference"] / ORDER_TRIALS, errors["upa"] / ORDER_TRIALS
        pooled = (errors["reference"] + errors["upa"]) / (2 * ORDER_TRIALS)
        se = math.sqrt(pooled * (1 - pooled) * 2 / ORDER_TRIALS)
        z = (p2 - p1) / se if se > 0 else 0.0
        passed = z > ORDER_Z and elapsed <= ORDER_BUDGET_S
        report(10, "reference profile BLER below UPA BLER", passed,
               f"{ORDER_TRIALS} Hadamard trials each at {ORDER_SNR_DB} dB: reference={p1:.4f}, "
               f"upa={p2:.4f}, z={z:.2f} (need > {ORDER_Z:.3f}), {elapsed:.0f} s")
        assert passed


class TestDeterminism:
    SIM = ["simulate", "--M", "16", "--L", "10", "--Mr", "8", "--omega", "2", "--lambda", "5",
           "--snr", "11", "--snr", "13", "--trials", "12", "--seed", "42", "--per-iteration",
           "--amp-iter", "20"]
    OTHERS = {
        "se": ["se", "--omega", "2", "--lambda", "5", "--power", "3", "--rate", "0.45",
               "--allocation", "vpa", "--seed", "42"],
        "vpa": ["vpa", "--omega", "2", "--lambda", "5", "--power", "3", "--rate", "0.45",
                "--seed", "42"],
        "curves": ["curves", "--omega", "2", "--lambda", "5", "--oracle", "--seed", "42"],
    }

    def test_criterion_11_bitwise_reruns(self, report, tmp_path):
        mismatched = []
        for name, argv in self.OTHERS.items():
            outputs = []
            for k in range(2):
                out = tmp_path / f"{name}{k}.out"
                assert main([*argv, "--out", str(out)]) == 0
                outputs.append(out.read_bytes())
            if outputs[0] != outputs[1]:
                mismatched.append(name)
        sims = []
        for k, workers in enumerate((1, 1, 4)):
            out = tmp_path / f"sim{k}.csv"
            assert main([*self.SIM, "--workers", str(workers), "--out", str(out)]) == 0
            sims.append((out.read_bytes(), (tmp_path / f"sim{k}_iterations.csv").read_bytes()))
        if not sims[0] == sims[1] == sims[2]:
            mismatched.append("simulate")
        passed = not mismatched
        report(11, "identical output on rerun and across worker counts", passed,
               f"commands se, vpa, curves, simulate (workers 1, 1, 4); mismatched={mismatched}")
        assert passed
