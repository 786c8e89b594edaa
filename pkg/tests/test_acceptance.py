"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py``.  Full-grid criteria
(hole burning and chirp hysteresis) are marked ``slow``.
"""

import math
import sys
import time
from contextlib import contextmanager

import mpmath
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rirsim.dynamics import SolverOptions, simulate
from rirsim.grid import FULL_GRID, REDUCED_GRID, build_grid, thermal_distribution
from rirsim.params import (DriveSchedule, Segment, default_params, khz, mhz_per_ms,
                           t_pump_estimate)
from rirsim.perturbative import PerturbativeInputs, eta_perturbative
from rirsim.protocols import (chirp_compare, fit_rates, run_quench, run_scan, run_step_on,
                              scenario_quench, scenario_step_on)
from rirsim.special import erfi_c, faddeeva

mpmath.mp.dps = 40

QUIET = dict(snapshot_stride=10**9)


@pytest.fixture(scope="module")
def reduced():
    return build_grid(*REDUCED_GRID)


@pytest.fixture(scope="module")
def full():
    return build_grid(*FULL_GRID)


@pytest.fixture
def criterion(capsys):
    """Collect (label, passed) checks, print one summary line, then assert."""

    @contextmanager
    def run(n, title):
        checks = []
        t0 = time.perf_counter()
        error = None
        try:
            yield checks
        except Exception as exc:
            error = exc
            checks.append((f"error {type(exc).__name__}: {exc}", False))
        ok = bool(checks) and all(passed for _, passed in checks)
        parts = [label if passed else f"{label} [FAILED]" for label, passed in checks]
        line = (f"CRITERION {n} ({title}): {'PASS' if ok else 'FAIL'} - "
                + "; ".join(parts) + f" [{time.perf_counter() - t0:.0f} s]")
        with capsys.disabled():
            print("\n" + line)
        if error is not None:
            raise error
        assert ok, line

    return run


def rel(a, b):
    return abs(a - b) / abs(b)


# -- 1 ---------------------------------------------------------------------------

def test_criterion_01_first_maximum(criterion, reduced):
    params = default_params()
    with criterion(1, "first-maximum law") as checks:
        for d_khz in (-140, -280, -455):
            delta = khz(d_khz)
            t0 = time.perf_counter()
            _, first = run_step_on(params, reduced, 100, delta, 15e-6)
            elapsed = time.perf_counter() - t0
            expected = math.pi / abs(delta)
            if first is None:
                checks.append((f"{d_khz} kHz: no maximum", False))
                continue
            err = rel(first[0], expected)
            checks.append((f"{d_khz} kHz: T_max {first[0] * 1e6:.2f} us vs pi/|d| "
                           f"{expected * 1e6:.2f} us ({err:.1%}, limit 15%)", err <= 0.15))
            checks.append((f"{d_khz} kHz runtime {elapsed:.2f} s <= 30 s", elapsed <= 30))


# -- 2 ---------------------------------------------------------------------------

def test_criterion_02_pump_time(criterion):
    with criterion(2, "pump-time formula") as checks:
        t10 = t_pump_estimate(10)
        checks.append((f"t_pump(10) = {t10:.4f} us rounds to 52.8", round(t10, 1) == 52.8))
        checks.append(("rounds to 53 us", round(t10) == 53))
        points = [0.5, 1, 2, 10, 30, 100, 200, 1e3]
        exact = all(t_pump_estimate(i) == 167.0 / math.sqrt(i) for i in points)
        checks.append((f"exact 167/sqrt(I) at {len(points)} points", exact))


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_03_hole_burning(criterion, full):
    params = default_params()
    with criterion(3, "hole-burning threshold") as checks:
        for i_high in (1, 5, 10, 200):
            t0 = time.perf_counter()
            m = run_quench(params, full, i_high, 1, khz(-140)).metrics
            elapsed = time.perf_counter() - t0
            if i_high <= 10:
                checks.append((f"I={i_high}: d_hole {m.d_hole:.4f} in 1 +/- 0.02",
                               abs(m.d_hole - 1) <= 0.02))
            else:
                checks.append((f"I={i_high}: d_hole {m.d_hole:.4f} <= 0.9", m.d_hole <= 0.9))
                checks.append((f"recovery {m.recovery_time * 1e6:.1f} us in [30, 150]",
                               30e-6 <= m.recovery_time <= 150e-6))
            checks.append((f"I={i_high} runtime {elapsed:.0f} s <= 300 s", elapsed <= 300))


# -- 4 ---------------------------------------------------------------------------

def timed_scan(params, grid, intensity, rate, mode="full"):
    t0 = time.perf_counter()
    _, metrics = run_scan(params, grid, intensity, rate, mode=mode)
    return metrics, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_04_chirp_hysteresis(criterion, full):
    params = default_params()
    with criterion(4, "chirp hysteresis") as checks:
        slow = {s: timed_scan(params, full, 0.5, s * mhz_per_ms(0.1)) for s in (1, -1)}
        fast = {s: timed_scan(params, full, 0.5, s * mhz_per_ms(8)) for s in (1, -1)}
        plus, minus = slow[1][0], slow[-1][0]
        for name in ("peak_gain", "fwhm", "peak_delta"):
            e = rel(getattr(minus, name), getattr(plus, name))
            checks.append((f"0.1 MHz/ms {name} chirps differ by {e:.2%} (limit 2%)", e <= 0.02))
        plus, minus = fast[1][0], fast[-1][0]
        checks.append((f"8 MHz/ms peak gain g- {minus.peak_gain:.5f} > g+ {plus.peak_gain:.5f}",
                       minus.peak_gain > plus.peak_gain))
        checks.append((f"FWHM- {minus.fwhm / 2e3 / math.pi:.1f} < FWHM+ "
                       f"{plus.fwhm / 2e3 / math.pi:.1f} kHz", minus.fwhm < plus.fwhm))
        checks.append((f"|peak_delta-| {abs(minus.peak_delta) / 2e3 / math.pi:.1f} > "
                       f"|peak_delta+| {abs(plus.peak_delta) / 2e3 / math.pi:.1f} kHz",
                       abs(minus.peak_delta) > abs(plus.peak_delta)))
        worst = max(elapsed for _, elapsed in [*slow.values(), *fast.values()])
        checks.append((f"slowest spectrum {worst:.0f} s <= 600 s", worst <= 600))


# -- 5 ---------------------------------------------------------------------------

def test_criterion_05_tel_full_divergence(criterion, reduced):
    params = default_params()
    with criterion(5, "TEL/Full divergence") as checks:
        for r in (8.0, 5.0, 0.3, 0.1):
            for s in (1, -1):
                full_m, _ = timed_scan(params, reduced, 100, s * mhz_per_ms(r), "full")
                tel_m, _ = timed_scan(params, reduced, 100, s * mhz_per_ms(r), "tel")
                ratio = tel_m.peak_gain / full_m.peak_gain
                tag = f"R={'+' if s > 0 else '-'}{r:g}: TEL/Full {ratio:.4f}"
                if r >= 5:
                    checks.append((f"{tag} within 5%", abs(ratio - 1) <= 0.05))
                else:
                    checks.append((f"{tag} > 1.10", ratio > 1.10))


# -- 6 ---------------------------------------------------------------------------

def test_criterion_06_intensity_robust_asymmetry(criterion, reduced):
    params = default_params()
    with criterion(6, "intensity-robust asymmetry") as checks:
        out = {}
        for intensity in (0.5, 100):
            m = {s: timed_scan(params, reduced, intensity, s * mhz_per_ms(8))[0] for s in (1, -1)}
            out[intensity] = chirp_compare(m[-1], m[1])
        (g_lo, d_lo), (g_hi, d_hi) = out[0.5], out[100]
        e = rel(g_hi, g_lo)
        checks.append((f"g-/g+ {g_lo:.4f} (0.5) vs {g_hi:.4f} (100) differ {e:.1%} "
                       "(limit 25%)", e <= 0.25))
        e = rel(d_hi, d_lo)
        checks.append((f"dnu_max {d_lo / 2e3 / math.pi:.1f} vs {d_hi / 2e3 / math.pi:.1f} kHz "
                       f"differ {e:.1%} (limit 25%)", e <= 0.25))


# -- 7 ---------------------------------------------------------------------------

def ode_eta(t_eval, d_eff, rate, source):
    def fun(t, y):
        z = y[0] + 1j * y[1]
        dz = -1j * (d_eff + rate * t) * z + source
        return [dz.real, dz.imag]
    sol = solve_ivp(fun, (0, t_eval[-1]), [0.0, 0.0], t_eval=t_eval, method="DOP853",
                    rtol=1e-12, atol=1e-24)
    return sol.y[0] + 1j * sol.y[1]


def test_criterion_07_perturbative_oracle(criterion, reduced):
    params = default_params()
    pi_th = thermal_distribution(reduced, params.sigma_p)
    t0 = time.perf_counter()
    with criterion(7, "perturbative closed form") as checks:
        times = np.array([0.2e-6, 1e-6, 3e-6, 10e-6, 30e-6])
        # p = -1/2 is excluded: the equilibrium population difference vanishes there
        ps = (-4.0, -1.5, -0.45, 0.0, 0.75, 3.0)
        rates = [0.0] + [s * mhz_per_ms(r) for r in (0.1, 8, 100) for s in (1, -1)]
        worst = 0.0
        for rate in rates:
            inp = PerturbativeInputs.from_params(params, reduced, pi_th, khz(-140), rate,
                                                 params.a_in(0.5))
            for p in ps:
                idx = reduced.index(p)
                source = -1j * params.beta * np.conj(inp.a_in) * inp.delta_pi[idx]
                ref = ode_eta(times, complex(inp.delta_eff(p)), rate, source)
                got = eta_perturbative(times, np.full(len(times), p), inp)
                worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
        checks.append((f"{len(rates) * len(ps) * len(times)} lattice points, worst rel "
                       f"{worst:.1e} <= 1e-6", math.isfinite(worst) and worst <= 1e-6))
        cont = 0.0
        for p in ps:
            at = [eta_perturbative(times, np.full(len(times), p),
                                   PerturbativeInputs.from_params(params, reduced, pi_th,
                                                                  khz(-140), r, params.a_in(0.5)))
                  for r in (0.0, 1e-3, -1e-3)]
            cont = max(cont, float(np.max(np.abs(at[1] - at[0]) / np.abs(at[0]))),
                       float(np.max(np.abs(at[2] - at[0]) / np.abs(at[0]))))
        checks.append((f"R -> 0 continuity rel {cont:.1e} <= 1e-6",
                       math.isfinite(cont) and cont <= 1e-6))
        elapsed = time.perf_counter() - t0
        checks.append((f"runtime {elapsed:.1f} s <= 60 s", elapsed <= 60))


# -- 8 ---------------------------------------------------------------------------

def test_criterion_08_special_functions(criterion):
    rng = np.random.default_rng(8)
    with criterion(8, "special functions") as checks:
        r = np.exp(rng.uniform(np.log(1e-3), np.log(30.0), 200))
        z = r * np.exp(1j * rng.uniform(0.0, np.pi, 200))
        ref = np.array([complex(mpmath.exp(-mpmath.mpc(x.real, x.imag) ** 2)
                                * mpmath.erfc(-1j * mpmath.mpc(x.real, x.imag))) for x in z])
        err_w = float(np.max(np.abs(faddeeva(z) - ref) / np.abs(ref)))
        checks.append((f"faddeeva 200 points rel {err_w:.1e} <= 1e-10", err_w <= 1e-10))
        r = np.exp(rng.uniform(np.log(1e-4), np.log(5.0), 200))
        z = r * np.exp(1j * rng.uniform(-np.pi, np.pi, 200))
        ref = np.array([complex(mpmath.erfi(mpmath.mpc(x.real, x.imag))) for x in z])
        err_e = float(np.max(np.abs(erfi_c(z) - ref) / np.abs(ref)))
        checks.append((f"erfi_c 200 points rel {err_e:.1e} <= 1e-10", err_e <= 1e-10))
        checks.append(("w(0) == 1", faddeeva(0) == 1))
        zz = rng.uniform(-5, 5, 500) + 1j * rng.uniform(-5, 5, 500)
        checks.append(("erfi(-z) == -erfi(z) bitwise", np.array_equal(erfi_c(-zz), -erfi_c(zz))))


# -- 9 ---------------------------------------------------------------------------

def one_segment(duration, delta, a_in, rate=0.0):
    return DriveSchedule((Segment(duration, delta, rate, a_in),))


def test_criterion_09_conservation_consistency(criterion, reduced):
    params = default_params()
    with criterion(9, "conservation and consistency") as checks:
        p0 = params.replace(gamma_pop=0.0)
        tr = simulate(p0, reduced, one_segment(100e-6, khz(-140), p0.a_in(200)),
                      SolverOptions(**QUIET))
        drift = abs(tr.final_state.total_population - 1.0)
        checks.append((f"population drift {drift:.1e} < 1e-8", drift < 1e-8))

        sched = one_segment(0.5e-6, khz(-280), params.a_in(100))
        kw = dict(dt_max=5e-11, snapshot_stride=1000, error_tolerance=None)
        elim = simulate(params, reduced, sched, SolverOptions(**kw))
        ff = simulate(params, reduced, sched, SolverOptions(field_mode="full_field", **kw))
        late = elim.times > 50 / params.kappa
        err = float(np.max(np.abs(ff.gain[late] - elim.gain[late]) / elim.gain[late]))
        checks.append((f"eliminated vs full-field gain rel {err:.1e} < 1e-4", err < 1e-4))

        sched = one_segment(4e-6, khz(-280), params.a_in(200), mhz_per_ms(8))
        h = 4e-6 / 128
        for scheme, order in (("exponential_euler", 1), ("exponential_midpoint", 2)):
            def final(dt):
                opts = SolverOptions(dt_max=dt, scheme=scheme, error_tolerance=None, **QUIET)
                fs = simulate(params, reduced, sched, opts).final_state
                return np.concatenate([fs.coherences, fs.populations])
            ref = final(h / 64)
            errs = [np.max(np.abs(final(d) - ref)) for d in (h, h / 2, h / 4)]
            orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
            checks.append((f"{scheme} observed order {orders[0]:.3f}, {orders[1]:.3f} "
                           f"(nominal {order})", all(abs(o - order) < 0.1 for o in orders)))

        sched = one_segment(20e-6, khz(-280), params.a_in(100), mhz_per_ms(3))
        a = simulate(params, reduced, sched, SolverOptions(snapshot_stride=7))
        b = simulate(params, reduced, sched, SolverOptions(snapshot_stride=7))
        same = (a.gain.tobytes() == b.gain.tobytes()
                and a.final_state.coherences.tobytes() == b.final_state.coherences.tobytes()
                and a.final_state.populations.tobytes() == b.final_state.populations.tobytes())
        checks.append(("reruns bit-identical", same))


# -- 10 --------------------------------------------------------------------------

def test_criterion_10_closed_loop_fit(criterion, reduced):
    params = default_params()
    t0 = time.perf_counter()
    with criterion(10, "closed-loop fitting") as checks:
        opts = SolverOptions(snapshot_stride=2)
        sched = scenario_step_on(100, khz(-280), 15e-6, params)
        obs = simulate(params, reduced, sched, opts)
        res = fit_rates(obs, params, sched, free=("gamma_coh",), grid=reduced, opts=opts,
                        start={"gamma_coh": khz(14)})
        e = rel(res.rates["gamma_coh"], params.gamma_coh)
        checks.append((f"step-on trace: gamma_coh from 14 kHz -> "
                       f"{res.rates['gamma_coh'] / 2e3 / math.pi:.4f} kHz ({e:.1e})", e <= 0.05))

        opts = SolverOptions(snapshot_stride=20)
        sched = scenario_quench(200, None, 1, 300e-6, khz(-140), params)
        obs = simulate(params, reduced, sched, opts)
        res = fit_rates(obs, params, sched, grid=reduced, opts=opts,
                        start={"gamma_coh": khz(15), "gamma_pop": khz(5)})
        for name, planted in (("gamma_coh", params.gamma_coh), ("gamma_pop", params.gamma_pop)):
            e = rel(res.rates[name], planted)
            checks.append((f"quench trace joint fit: {name} "
                           f"{res.rates[name] / 2e3 / math.pi:.4f} kHz ({e:.1e})", e <= 0.05))
        elapsed = time.perf_counter() - t0
        checks.append((f"runtime {elapsed:.0f} s <= 900 s", elapsed <= 900))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
