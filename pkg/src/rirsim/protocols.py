"""Drive programs for the probe experiments and the observables read from them.

Three protocols are modelled: switching the probe on at a fixed detuning,
quenching a strong probe to a weak one (hole burning), and scanning the
detuning linearly through the resonance.  Metric extractors work on plain
GainTrace objects so they can be fed synthetic data as well.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .dynamics import GainTrace, SolverOptions, simulate, step_limit
from .grid import REDUCED_GRID, build_grid, thermal_distribution
from .errors import ConfigurationError, DomainError, NotFoundError
from .params import DriveSchedule, Segment, a_in_from_intensity, default_params, khz, t_pump_estimate
from .perturbative import PerturbativeInputs, perturbative_trace

NOISE_FLOOR = 1.001
DEFAULT_SPAN = khz(600.0)
RINGING_PERIODS = 3
BURN_IN_FACTOR = 10
SATURATION_TOL = 5e-3
SCAN_SAMPLES = 4000


@dataclass(frozen=True)
class SpectrumMetrics:
    peak_gain: float
    peak_delta: float
    fwhm: float
    chirp_sign: str

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class QuenchMetrics:
    d_hole: float
    recovery_time: float
    steady_gain: float = 1.0
    min_gain: float = 1.0
    t_min: float = 0.0

    def to_dict(self):
        return asdict(self)


# -- schedules ---------------------------------------------------------------

def _a_in(intensity, params):
    if intensity < 0:
        raise DomainError(f"intensity must be >= 0, got {intensity}")
    if intensity == 0:
        return 0.0
    return a_in_from_intensity(intensity, params.beta)


def scenario_step_on(intensity, delta, duration, params=None):
    """Probe switched on at t = 0 at fixed detuning."""
    params = params or default_params()
    return DriveSchedule((Segment(duration, delta, 0.0, _a_in(intensity, params)),))


def quench_burn_in(i_high, params):
    """Strong-probe duration long enough for the hole to saturate."""
    t_pump = t_pump_estimate(i_high) * 1e-6 if i_high > 0 else 0.0
    return BURN_IN_FACTOR * max(t_pump, 1.0 / params.gamma_pop)


def scenario_quench(i_high, t_high, i_low, t_low, delta, params=None):
    """Strong probe for ``t_high`` (None: automatic burn-in), then weak probe for ``t_low``."""
    params = params or default_params()
    if t_high is None:
        t_high = quench_burn_in(i_high, params)
    return DriveSchedule((Segment(t_high, delta, 0.0, _a_in(i_high, params)),
                          Segment(t_low, delta, 0.0, _a_in(i_low, params))))


def scenario_scan(intensity, delta_start, delta_end, rate, params=None):
    """Linear scan delta(t) = delta_start + rate*t ending at delta_end."""
    params = params or default_params()
    span = delta_end - delta_start
    if rate == 0 or span == 0 or math.copysign(1, span) != math.copysign(1, rate):
        raise ConfigurationError("scan endpoints and rate must have matching, nonzero sign")
    return DriveSchedule((Segment(span / rate, delta_start, rate, _a_in(intensity, params)),))


def symmetric_scan(intensity, rate, span=DEFAULT_SPAN, params=None, center=0.0):
    """Scan from center - span to center + span (reversed for a negative chirp)."""
    if rate > 0:
        return scenario_scan(intensity, center - span, center + span, rate, params)
    return scenario_scan(intensity, center + span, center - span, rate, params)


# -- metric extraction -------------------------------------------------------

def _parabola_vertex(x, y):
    """Vertex of the parabola through three points; falls back to the middle point."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    d0, d2 = x0 - x1, x2 - x1
    denom = d0 * d2 * (d0 - d2)
    if denom == 0:
        return x1, y1
    a = (d2 * (y0 - y1) - d0 * (y2 - y1)) / denom
    b = (d0 * d0 * (y2 - y1) - d2 * d2 * (y0 - y1)) / denom
    if a >= 0:
        return x1, y1
    u = -b / (2 * a)
    if not min(d0, d2) <= u <= max(d0, d2):
        return x1, y1
    return x1 + u, y1 + b * u / 2


def find_first_max(trace):
    """Time and gain of the first local maximum, refined by a 3-point parabola."""
    t = np.asarray(trace.times, dtype=float)
    g = np.asarray(trace.gain, dtype=float)
    if len(t) < 3:
        raise NotFoundError("need at least 3 samples to locate a maximum")
    rising = g[1:-1] > g[:-2]
    peak = rising & (g[1:-1] >= g[2:])
    hits = np.flatnonzero(peak)
    if hits.size == 0:
        raise NotFoundError("gain trace has no local maximum")
    i = hits[0] + 1
    return _parabola_vertex(t[i - 1:i + 2], g[i - 1:i + 2])


def _crossing(x, y, level, start, step):
    """Interpolated x where y falls to ``level`` walking from ``start`` by ``step``."""
    i = start
    while 0 <= i + step < len(y):
        j = i + step
        if y[j] < level:
            frac = (y[i] - level) / (y[i] - y[j])
            return x[i] + frac * (x[j] - x[i])
        i = j
    raise NotFoundError("spectrum does not fall to half maximum inside the scanned span")


def spectrum_metrics(trace, chirp_sign=None):
    """Peak gain, its detuning and the FWHM of the gain excess over the scanned detuning."""
    d = np.asarray(trace.delta, dtype=float)
    g = np.asarray(trace.gain, dtype=float)
    if len(d) < 3:
        raise NotFoundError("spectrum needs at least 3 samples")
    if chirp_sign is None:
        chirp_sign = "+" if d[-1] >= d[0] else "-"
    order = np.argsort(d, kind="stable")
    d, g = d[order], g[order]
    i = int(np.argmax(g))
    if g[i] < NOISE_FLOOR:
        raise NotFoundError(f"peak gain {g[i]:.6g} is below the noise floor {NOISE_FLOOR}")
    if 0 < i < len(d) - 1:
        peak_delta, peak_gain = _parabola_vertex(d[i - 1:i + 2], g[i - 1:i + 2])
    else:
        peak_delta, peak_gain = d[i], g[i]
    excess = g - 1.0
    half = 0.5 * (peak_gain - 1.0)
    lo = _crossing(d, excess, half, i, -1)
    hi = _crossing(d, excess, half, i, +1)
    return SpectrumMetrics(peak_gain=float(peak_gain), peak_delta=float(peak_delta),
                           fwhm=float(hi - lo), chirp_sign=chirp_sign)


def chirp_compare(minus, plus):
    """(g_-/g_+, delta_+^max - delta_-^max)."""
    return minus.peak_gain / plus.peak_gain, plus.peak_delta - minus.peak_delta


def quench_metrics(trace, steady_gain, delta=None, quench_time=None):
    """Hole depth and recovery time after the last intensity step of ``trace``.

    The first RINGING_PERIODS * 2*pi/|delta| after the quench are skipped so
    the fast coherent oscillation is not read as the hole.  recovery_time is
    measured from the minimum to the point where 1 - 1/e of the gap to
    ``steady_gain`` has closed (inf if that never happens in the trace).
    """
    if not steady_gain > 0:
        raise DomainError(f"steady_gain must be positive, got {steady_gain}")
    if quench_time is None:
        quench_time = trace.segment_starts[-1] if trace.segment_starts else trace.times[0]
    if delta is None:
        delta = float(trace.delta[-1])
    skip = RINGING_PERIODS * 2 * math.pi / abs(delta) if delta != 0 else 0.0
    sel = trace.times >= quench_time + skip
    t = trace.times[sel]
    g = trace.gain[sel]
    if t.size == 0:
        raise NotFoundError("trace ends inside the ringing window")
    k = int(np.argmin(g))
    g_min = float(g[k])
    d_hole = g_min / steady_gain
    gap = steady_gain - g_min
    if gap <= 0:
        return QuenchMetrics(d_hole=d_hole, recovery_time=0.0, steady_gain=steady_gain,
                             min_gain=g_min, t_min=float(t[k]))
    target = g_min + (1 - math.exp(-1)) * gap
    after = np.flatnonzero(g[k:] >= target)
    if after.size == 0:
        recovery = math.inf
    else:
        j = k + after[0]
        frac = (target - g[j - 1]) / (g[j] - g[j - 1])
        recovery = float(t[j - 1] + frac * (t[j] - t[j - 1]) - t[k])
    return QuenchMetrics(d_hole=d_hole, recovery_time=recovery, steady_gain=steady_gain,
                         min_gain=g_min, t_min=float(t[k]))


# -- drivers -----------------------------------------------------------------

def _stride_for(params, grid, schedule, opts, samples):
    n = 0
    for seg in schedule.segments:
        limit = step_limit(params, grid, seg.delta0, seg.delta_end)
        if opts.dt_max is not None:
            limit = min(limit, opts.dt_max)
        n += math.ceil(seg.duration / limit)
    return max(1, n // samples)


def _with_stride(params, grid, schedule, opts, samples):
    opts = opts or SolverOptions()
    stride = _stride_for(params, grid, schedule, opts, samples)
    return replace(opts, snapshot_stride=stride)


def run_step_on(params, grid, intensity, delta, duration, opts=None):
    """Step-on trace sampled at every step plus its first maximum (None if absent)."""
    opts = opts or SolverOptions(snapshot_stride=1)
    trace = simulate(params, grid, scenario_step_on(intensity, delta, duration, params), opts)
    try:
        first = find_first_max(trace)
    except NotFoundError:
        first = None
    return trace, first


def steady_gain(params, grid, intensity, delta, duration=None, opts=None):
    """Gain at the end of a long fixed-detuning run."""
    if intensity == 0:
        return 1.0
    duration = duration or quench_burn_in(intensity, params)
    schedule = scenario_step_on(intensity, delta, duration, params)
    trace = simulate(params, grid, schedule, _with_stride(params, grid, schedule, opts, 100))
    return float(trace.gain[-1])


def verify_burn_in(params, grid, intensity, delta, burn_in, opts=None):
    """Relative gain change between burn_in and 2*burn_in at fixed intensity."""
    seg = scenario_step_on(intensity, delta, burn_in, params).segments[0]
    schedule = DriveSchedule((seg, seg))
    trace = simulate(params, grid, schedule, _with_stride(params, grid, schedule, opts, 100))
    g_mid = trace.gain[np.searchsorted(trace.times, burn_in * (1 - 1e-12))]
    change = abs(trace.gain[-1] - g_mid) / abs(g_mid)
    return float(change), change < SATURATION_TOL


@dataclass
class QuenchResult:
    trace: GainTrace
    metrics: QuenchMetrics
    burn_in: float
    info: dict = field(default_factory=dict)


def run_quench(params, grid, i_high, i_low, delta, t_low=300e-6, burn_in=None,
               opts=None, samples=4000, check_saturation=False):
    """Quench protocol with a separate steady-state reference run at ``i_low``."""
    burn_in = burn_in or quench_burn_in(i_high, params)
    schedule = scenario_quench(i_high, burn_in, i_low, t_low, delta, params)
    # sample the post-quench window densely
    post = DriveSchedule(schedule.segments[1:])
    run_opts = _with_stride(params, grid, post, opts, samples)
    trace = simulate(params, grid, schedule, run_opts)
    if i_high == i_low:
        g_ss = float(trace.gain[-1])
    else:
        g_ss = steady_gain(params, grid, i_low, delta, burn_in + t_low, opts)
    metrics = quench_metrics(trace, g_ss, delta=delta)
    info = {"pre_quench_gain": float(trace.gain[np.searchsorted(trace.times, burn_in) - 1]),
            **trace.flags}
    if check_saturation:
        change, ok = verify_burn_in(params, grid, i_high, delta, burn_in, opts)
        info.update(burn_in_change=change, burn_in_saturated=ok)
        if not ok:
            warnings.warn(f"burn-in not saturated: gain changes by {change:.2%}", RuntimeWarning)
    return QuenchResult(trace=trace, metrics=metrics, burn_in=burn_in, info=info)


def run_scan(params, grid, intensity, rate, span=DEFAULT_SPAN, mode="full", opts=None,
             samples=SCAN_SAMPLES):
    """Scanned spectrum in one of the modes full, tel, perturbative."""
    schedule = symmetric_scan(intensity, rate, span, params)
    seg = schedule.segments[0]
    if mode == "perturbative":
        pi_th = thermal_distribution(grid, params.sigma_p)
        inputs = PerturbativeInputs.from_params(params, grid, pi_th, seg.delta0, rate, seg.a_in)
        times = np.linspace(0.0, seg.duration, samples + 1)
        trace = perturbative_trace(inputs, times)
    elif mode in ("full", "tel"):
        base = opts or SolverOptions()
        base = replace(base, population_mode=mode)
        trace = simulate(params, grid, schedule, _with_stride(params, grid, schedule, base, samples))
    else:
        raise ConfigurationError(f"unknown scan mode {mode!r}")
    return trace, spectrum_metrics(trace, "+" if rate > 0 else "-")


# -- fitting -----------------------------------------------------------------

FIT_RATES = ("gamma_coh", "gamma_pop")


@dataclass
class FitResult:
    rates: dict
    residual: float
    iterations: int
    evaluations: int
    converged: bool


def _resample(trace, times):
    return np.interp(times, trace.times, trace.gain)


def fit_rates(observed, params, schedule, free=FIT_RATES, grid=None, opts=None,
              start=None, max_iter=200, rel_tol=1e-6):
    """Least-squares fit of the free decay rates by Nelder-Mead on log-rates.

    Each evaluation is a full ``simulate`` run; the simulated gain is
    interpolated onto the observed time base.  ``start`` overrides the
    initial rates (rad/s); otherwise they are taken from ``params``.
    """
    free = tuple(free)
    unknown = set(free) - set(FIT_RATES)
    if unknown:
        raise ConfigurationError(f"cannot fit {sorted(unknown)}; choose from {FIT_RATES}")
    grid = grid or build_grid(*REDUCED_GRID)
    opts = opts or SolverOptions()
    times = np.asarray(observed.times, dtype=float)
    g_obs = np.asarray(observed.gain, dtype=float)
    start = dict(start or {})
    x0 = np.array([math.log(start.get(name, getattr(params, name))) for name in free])
    evals = 0

    def residual(x):
        nonlocal evals
        evals += 1
        trial = params.replace(**dict(zip(free, np.exp(x))))
        trace = simulate(trial, grid, schedule, opts)
        return float(np.mean((_resample(trace, times) - g_obs) ** 2))

    if not free:
        return FitResult(rates={}, residual=residual(x0), iterations=0, evaluations=evals,
                         converged=True)

    r0 = residual(x0)
    res = minimize(residual, x0, method="Nelder-Mead",
                   options={"maxiter": max_iter, "xatol": 1e-5,
                            "fatol": rel_tol * max(r0, 1e-30),
                            "initial_simplex": x0 + np.vstack([np.zeros(len(free)),
                                                               0.2 * np.eye(len(free))])})
    if not res.success:
        warnings.warn(f"rate fit stopped without convergence: {res.message}", RuntimeWarning)
    rates = {name: float(v) for name, v in zip(free, np.exp(res.x))}
    return FitResult(rates=rates, residual=float(res.fun), iterations=int(res.nit),
                     evaluations=evals, converged=bool(res.success))
