"""Time integration of the coupled population / coherence / probe equations.

State variables on the momentum grid:

    dPi_p/dt  = 2 Re[-i beta a2 (eta_{p-1} - eta_p)] - gamma_pop (Pi_p - Pi_th,p)
    deta_p/dt = [i (f(p) - delta(t)) - gamma_coh] eta_p - i beta conj(a2) (Pi_{p+1} - Pi_p)
    da2/dt    = -(kappa/2)(a2 - a_in) + i beta N sum_p conj(eta_{p-1})

with f(p) = -4 omega_r (2p + 1).  "p +/- 1" is one recoil, i.e. a shift of
``grid.unit_shift`` cells; references off the grid read as zero.

The linear decay/rotation of each block is propagated exactly and the
remaining coupling terms enter through exponential Runge-Kutta rules
(exponential Euler or exponential midpoint).  Because delta(t) is linear
inside a drive segment, the homogeneous propagator over [t, t+h] equals
exp(L(t + h/2) h) exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalBlowupError, ResourceError
from .grid import AtomFieldState, FieldMode, initial_state, thermal_distribution

STABILITY_LIMIT = 0.5


class Scheme(enum.Enum):
    EXPONENTIAL_EULER = "exponential_euler"
    EXPONENTIAL_MIDPOINT = "exponential_midpoint"


class PopulationMode(enum.Enum):
    FULL = "full"
    TEL = "tel"


@dataclass(frozen=True)
class SolverOptions:
    """Integrator configuration.

    ``dt_max=None`` lets the step follow the rotation limit
    ``dt * max|f(p) - delta| <= 0.5``; an explicit value is clamped to that
    limit.  ``frozen_source`` drives the coherences with a_in instead of
    the self-consistent a2 (the weak-probe approximation) and is meant for
    cross-checks against the closed-form solution.
    """

    dt_max: float | None = None
    scheme: Scheme = Scheme.EXPONENTIAL_MIDPOINT
    field_mode: FieldMode = FieldMode.ELIMINATED
    population_mode: PopulationMode = PopulationMode.FULL
    snapshot_stride: int = 100
    error_tolerance: float | None = 1e-2
    max_halvings: int = 6
    frozen_source: bool = False
    momentum_stride: int = 0
    max_trace_points: int = 5_000_000

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "field_mode", FieldMode(self.field_mode))
        object.__setattr__(self, "population_mode", PopulationMode(self.population_mode))
        if self.dt_max is not None and not self.dt_max > 0:
            raise ConfigurationError(f"dt_max must be positive, got {self.dt_max}")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        if self.error_tolerance is not None and not self.error_tolerance > 0:
            raise ConfigurationError("error_tolerance must be positive or None")

    def to_dict(self):
        d = asdict(self)
        for key in ("scheme", "field_mode", "population_mode"):
            d[key] = d[key].value
        return d

    @classmethod
    def from_strings(cls, mapping, **overrides):
        """Build options from a string-valued mapping (config file section)."""
        conv = {"dt_max": float, "snapshot_stride": int, "max_halvings": int,
                "momentum_stride": int, "max_trace_points": int}
        kwargs = {}
        for key, raw in mapping.items():
            if key == "dt_max_ns":
                kwargs["dt_max"] = float(raw) * 1e-9
            elif key == "error_tolerance":
                kwargs[key] = None if raw.strip().lower() in ("none", "off", "") else float(raw)
            elif key in conv:
                kwargs[key] = conv[key](raw)
            elif key in ("scheme", "field_mode", "population_mode"):
                kwargs[key] = raw.strip().lower()
            elif key == "frozen_source":
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                raise ConfigurationError(f"unknown [solver] key: {key}")
        kwargs.update(overrides)
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc


@dataclass
class GainTrace:
    """Time-indexed probe record.  ``delta`` is the detuning at each sample."""

    times: np.ndarray
    gain: np.ndarray
    probe_amp: np.ndarray
    delta: np.ndarray
    a_in: np.ndarray
    segment_starts: tuple = ()
    snapshots: dict = field(default_factory=dict)
    provenance: str = "dynamics"
    flags: dict = field(default_factory=dict)
    final_state: AtomFieldState | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def window(self, t_start, t_end=np.inf):
        """Sub-trace with t_start <= t <= t_end."""
        sel = (self.times >= t_start) & (self.times <= t_end)
        return GainTrace(self.times[sel], self.gain[sel], self.probe_amp[sel],
                         self.delta[sel], self.a_in[sel], provenance=self.provenance,
                         flags=dict(self.flags))


def f_detuning(p, omega_r):
    """Recoil shift f(p) = 4 omega_r (p^2 - (p+1)^2) in rad/s."""
    return -4.0 * omega_r * (2.0 * np.asarray(p, dtype=float) + 1.0)


def gain(a2, a_in, delta_z_over_l=1.0):
    """Probe intensity gain exp[2 Re((a2 - a_in)/a_in) dz/L]."""
    a_in = np.asarray(a_in)
    if np.any(a_in == 0):
        raise DomainError("gain is undefined for a_in = 0")
    ratio = (np.asarray(a2) - a_in) / a_in
    out = np.exp(2.0 * np.real(ratio) * delta_z_over_l)
    return float(out) if out.ndim == 0 else out


def _field_sum(eta, shift):
    """sum_p conj(eta_{p-1}) on a zero-padded grid."""
    n = eta.shape[0]
    return np.conj(np.sum(eta[:n - shift]))


def eliminate_field(state, params, a_in):
    """Quasi-static probe amplitude a_in + (2 i beta N / kappa) sum conj(eta_{p-1})."""
    s = state.grid.unit_shift
    coupling = 2j * params.beta * params.n_atoms / params.kappa
    return complex(a_in) + coupling * complex(_field_sum(state.coherences, s))


def _phi1(z):
    """(exp(z) - 1)/z for scalars, exact at z = 0."""
    if z == 0:
        return 1.0
    if abs(z) < 1e-5:
        return 1.0 + z / 2 + z * z / 6
    return math.expm1(z) / z if isinstance(z, float) else (np.exp(z) - 1) / z


class _Model:
    """Grid-dependent constants plus the coupling (non-stiff) terms."""

    def __init__(self, params, grid, pi_th, opts):
        self.params = params
        self.grid = grid
        self.pi_th = pi_th
        self.opts = opts
        self.s = grid.unit_shift
        self.n = grid.n_points
        self.f = f_detuning(grid.p, params.omega_r)
        self.L0 = 1j * self.f - params.gamma_coh
        self.field_coupling = 2j * params.beta * params.n_atoms / params.kappa
        self.tel = opts.population_mode is PopulationMode.TEL
        self.eliminated = opts.field_mode is FieldMode.ELIMINATED
        self.pop_source = params.gamma_pop * pi_th
        self.tel_diff = grid.shift(pi_th, self.s) - pi_th

    def max_rotation(self, delta_lo, delta_hi):
        return max(np.max(np.abs(self.f - delta_lo)), np.max(np.abs(self.f - delta_hi)))

    def probe(self, eta, a_field, a_in):
        if self.eliminated:
            return a_in + self.field_coupling * _field_sum(eta, self.s)
        return a_field

    def forcing(self, pops, eta, a_field, a_in):
        """Coupling terms (N_pi, N_eta, N_a) and the probe amplitude a2."""
        beta = self.params.beta
        a2 = self.probe(eta, a_field, a_in)
        a_src = a_in if self.opts.frozen_source else a2
        diff = self.tel_diff if self.tel else self.grid.shift(pops, self.s) - pops
        n_eta = (-1j * beta * np.conj(a_src)) * diff
        if self.tel:
            n_pi = None
        else:
            lower = self.grid.shift(eta, -self.s)
            n_pi = 2.0 * np.real((-1j * beta * a2) * (lower - eta)) + self.pop_source
        if self.eliminated:
            n_a = 0j
        else:
            p = self.params
            n_a = 0.5 * p.kappa * a_in + 1j * p.beta * p.n_atoms * _field_sum(eta, self.s)
        return n_pi, n_eta, n_a, a2


class _Propagators:
    """exp(hL) and h*phi1(hL) for all three blocks at a given step size."""

    def __init__(self, model, h):
        p = model.params
        self.h = h
        self.E0 = np.exp(model.L0 * h)
        self.Lh = model.L0 * h
        zp = -p.gamma_pop * h
        self.E_pi = math.exp(zp)
        self.phi_pi = h * _phi1(zp)
        za = -0.5 * p.kappa * h
        self.E_a = math.exp(za)
        self.phi_a = h * _phi1(za)
        self._cached_delta = None
        self._cached = None

    def eta(self, delta_mid):
        """(E, h*phi1) for the coherence block with detuning averaged to delta_mid."""
        if delta_mid == self._cached_delta:
            return self._cached
        rot = -delta_mid * self.h
        E = self.E0 * complex(math.cos(rot), math.sin(rot))
        z = self.Lh + 1j * rot
        phi = self.h * (E - 1.0) / z
        self._cached_delta, self._cached = delta_mid, (E, phi)
        return E, phi


class _Integrator:
    def __init__(self, params, grid, pi_th, opts):
        self.model = _Model(params, grid, pi_th, opts)
        self.opts = opts
        self.unresolved = 0
        self.rejected = 0
        self._props = {}

    def props(self, h):
        pr = self._props.get(h)
        if pr is None:
            if len(self._props) > 64:
                self._props.clear()
            pr = self._props[h] = _Propagators(self.model, h)
        return pr

    def advance(self, pops, eta, a, t, h, delta_fn, a_in, depth=0):
        """One step from t to t+h with optional step-halving control."""
        out, err = self._try_step(pops, eta, a, t, h, delta_fn, a_in)
        tol = self.opts.error_tolerance
        if tol is None or err <= tol:
            return out
        if depth >= self.opts.max_halvings:
            self.unresolved += 1
            return out
        self.rejected += 1
        half = 0.5 * h
        pops1, eta1, a1 = self.advance(pops, eta, a, t, half, delta_fn, a_in, depth + 1)
        return self.advance(pops1, eta1, a1, t + half, half, delta_fn, a_in, depth + 1)

    def _try_step(self, pops, eta, a, t, h, delta_fn, a_in):
        model, opts = self.model, self.opts
        want_err = opts.error_tolerance is not None
        n_pi0, n_eta0, n_a0, a2 = model.forcing(pops, eta, a, a_in)
        if not np.isfinite(a2):
            raise NumericalBlowupError(f"probe amplitude became non-finite at t={t:.6g} s", time=t)
        full = self.props(h)
        E, phi = full.eta(delta_fn(t + 0.5 * h))

        if opts.scheme is Scheme.EXPONENTIAL_EULER:
            eta1 = E * eta + phi * n_eta0
            pops1 = pops if model.tel else full.E_pi * pops + full.phi_pi * n_pi0
            a1 = a if model.eliminated else full.E_a * a + full.phi_a * n_a0
            err = 0.0
            if want_err:
                n_pi1, n_eta1, n_a1, _ = model.forcing(pops1, eta1, a1, a_in)
                err = self._error(0.5 * phi * (n_eta1 - n_eta0), eta1,
                                  None if model.tel else 0.5 * full.phi_pi * (n_pi1 - n_pi0), pops1,
                                  None if model.eliminated else 0.5 * full.phi_a * (n_a1 - n_a0), a1, a_in)
            return (pops1, eta1, a1), err

        half = self.props(0.5 * h)
        Eh, phih = half.eta(delta_fn(t + 0.25 * h))
        eta_h = Eh * eta + phih * n_eta0
        pops_h = pops if model.tel else half.E_pi * pops + half.phi_pi * n_pi0
        a_h = a if model.eliminated else half.E_a * a + half.phi_a * n_a0
        n_pi1, n_eta1, n_a1, _ = model.forcing(pops_h, eta_h, a_h, a_in)

        eta1 = E * eta + phi * n_eta1
        pops1 = pops if model.tel else full.E_pi * pops + full.phi_pi * n_pi1
        a1 = a if model.eliminated else full.E_a * a + full.phi_a * n_a1
        err = 0.0
        if want_err:
            # difference to the embedded exponential Euler step
            err = self._error(phi * (n_eta1 - n_eta0), eta1,
                              None if model.tel else full.phi_pi * (n_pi1 - n_pi0), pops1,
                              None if model.eliminated else full.phi_a * (n_a1 - n_a0), a1, a_in)
        return (pops1, eta1, a1), err

    @staticmethod
    def _error(d_eta, eta, d_pi, pops, d_a, a, a_in):
        scale = np.max(np.abs(eta))
        err = float(np.max(np.abs(d_eta)) / scale) if scale > 0 else 0.0
        if d_pi is not None:
            err = max(err, float(np.max(np.abs(d_pi)) / np.max(np.abs(pops))))
        if d_a is not None:
            err = max(err, abs(d_a) / (abs(a) + abs(a_in) + 1e-300))
        return err


def _derivative(model, state, delta, a_in):
    n_pi, n_eta, n_a, a2 = model.forcing(state.populations, state.coherences,
                                         state.probe_amp, a_in)
    p = model.params
    d_eta = (model.L0 - 1j * delta) * state.coherences + n_eta
    d_pi = np.zeros_like(state.populations) if model.tel else n_pi - p.gamma_pop * state.populations
    d_a = 0j if model.eliminated else n_a - 0.5 * p.kappa * state.probe_amp
    return d_pi, d_eta, d_a


def rhs(state, params, delta, a_in, opts=SolverOptions()):
    """Time derivative (dPi/dt, deta/dt, da2/dt) of ``state`` at fixed detuning.

    In eliminated-field mode the probe is slaved to the coherences and the
    returned da2/dt is zero.
    """
    _check_finite(state)
    model = _Model(params, state.grid, state.pi_th, opts)
    return _derivative(model, state, delta, complex(a_in))


def _check_finite(state):
    if not (np.all(np.isfinite(state.populations)) and np.all(np.isfinite(state.coherences))
            and np.isfinite(state.probe_amp)):
        raise NumericalBlowupError(f"non-finite state at t={state.time:.6g} s", time=state.time)


def step_limit(params, grid, delta_lo, delta_hi=None):
    """Largest step satisfying dt * max|f(p) - delta| <= 0.5 over [delta_lo, delta_hi]."""
    f = f_detuning(grid.p, params.omega_r)
    delta_hi = delta_lo if delta_hi is None else delta_hi
    worst = max(np.max(np.abs(f - delta_lo)), np.max(np.abs(f - delta_hi)))
    return STABILITY_LIMIT / worst


def step(state, dt, delta, a_in, params, opts=SolverOptions(), scan_rate=0.0):
    """Advance ``state`` by one step of size ``dt``.

    ``delta`` is the detuning at the start of the step; it grows at
    ``scan_rate`` (rad/s^2) through the step.
    """
    limit = step_limit(params, state.grid, delta, delta + scan_rate * dt)
    if opts.dt_max is not None:
        limit = min(limit, opts.dt_max)
    if dt > limit * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:.3g} s exceeds the step limit {limit:.3g} s")
    integ = _Integrator(params, state.grid, state.pi_th, opts)
    t0 = state.time
    pops, eta, a = integ.advance(state.populations, state.coherences, state.probe_amp,
                                 t0, dt, lambda t: delta + scan_rate * (t - t0), complex(a_in))
    new = AtomFieldState(populations=pops if pops is not state.populations else pops.copy(),
                         coherences=eta, probe_amp=a, time=t0 + dt,
                         grid=state.grid, pi_th=state.pi_th)
    if integ.model.eliminated:
        new.probe_amp = complex(integ.model.probe(eta, a, complex(a_in)))
    _check_finite(new)
    return new


def simulate(params, grid, schedule, opts=SolverOptions(), pi_th=None, state=None):
    """Integrate through every segment of ``schedule`` and record the gain.

    Samples are taken at t = 0, every ``opts.snapshot_stride`` steps and at
    the end of each segment.  Where a_in = 0 the gain is recorded as 1.
    """
    if pi_th is None:
        pi_th = thermal_distribution(grid, params.sigma_p) if state is None else state.pi_th
    if state is None:
        state = initial_state(grid, pi_th, schedule.segments[0].a_in, opts.field_mode)
    integ = _Integrator(params, grid, state.pi_th, opts)
    model = integ.model

    # every step honours the rotation limit of its own segment
    plan = []
    total_steps = 0
    for seg in schedule.segments:
        limit = STABILITY_LIMIT / model.max_rotation(seg.delta0, seg.delta_end)
        if opts.dt_max is not None:
            limit = min(limit, opts.dt_max)
        n_steps = max(1, math.ceil(seg.duration / limit - 1e-9))
        plan.append((seg, n_steps, seg.duration / n_steps))
        total_steps += n_steps
    est_points = total_steps // opts.snapshot_stride + len(plan) + 1
    if est_points > opts.max_trace_points:
        raise ResourceError(f"trace would hold ~{est_points} samples (cap {opts.max_trace_points})")

    times, probes, deltas, a_ins = [], [], [], []
    snaps = {}
    pops, eta, a = state.populations.copy(), state.coherences.copy(), complex(state.probe_amp)
    t_origin = state.time

    def record(t, a2, delta, a_in_now):
        times.append(t)
        probes.append(a2)
        deltas.append(delta)
        a_ins.append(a_in_now)

    first_a_in = plan[0][0].a_in
    record(t_origin, model.probe(eta, a, first_a_in), plan[0][0].delta0, first_a_in)
    if opts.momentum_stride:
        snaps[t_origin] = (pops.copy(), eta.copy())

    starts = []
    t_seg = t_origin
    counter = 0
    for seg, n_steps, h in plan:
        starts.append(t_seg)
        a_in = seg.a_in
        delta_fn = (lambda t, s0=t_seg, sg=seg: sg.delta0 + sg.scan_rate * (t - s0))
        for k in range(n_steps):
            t = t_seg + k * h
            pops, eta, a = integ.advance(pops, eta, a, t, h, delta_fn, a_in)
            counter += 1
            last = k == n_steps - 1
            if counter % opts.snapshot_stride == 0 or last:
                t_now = t_seg + (k + 1) * h
                a2 = model.probe(eta, a, a_in)
                if not (np.isfinite(a2) and np.isfinite(pops.sum())):
                    raise NumericalBlowupError(f"state became non-finite near t={t_now:.6g} s",
                                               time=t_now)
                record(t_now, a2, delta_fn(t_now), a_in)
                if opts.momentum_stride and counter % opts.momentum_stride == 0:
                    snaps[t_now] = (pops.copy(), eta.copy())
        t_seg += seg.duration

    times = np.array(times)
    probes = np.array(probes, dtype=complex)
    a_ins = np.array(a_ins, dtype=complex)
    gains = np.ones(len(times))
    live = a_ins != 0
    if np.any(live):
        gains[live] = gain(probes[live], a_ins[live], params.delta_z_over_l)
    final = AtomFieldState(populations=pops, coherences=eta,
                           probe_amp=complex(model.probe(eta, a, plan[-1][0].a_in)),
                           time=float(times[-1]), grid=grid, pi_th=state.pi_th)
    flags = {"rejected_steps": integ.rejected, "unresolved_steps": integ.unresolved,
             "n_steps": total_steps}
    return GainTrace(times=times, gain=gains, probe_amp=probes, delta=np.array(deltas),
                     a_in=a_ins, segment_starts=tuple(starts), snapshots=snaps,
                     flags=flags, final_state=final)
