"""Physical parameters, lab-unit conversions and scalar estimates.

Internally every rate is an angular frequency in rad/s, every time in
seconds and momenta are dimensionless in units of the two-photon recoil
``2*hbar*k0``.  Lab quantities quoted as "X kHz" are cyclic, so
``khz(X) == 2*pi*X*1e3`` rad/s.  Scan rates quoted in MHz/ms follow the same
rule: ``mhz_per_ms(R) == 2*pi*R*1e9`` rad/s^2.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from scipy import constants

from .errors import ConfigurationError, DomainError

HBAR = constants.hbar
K_B = constants.k
C_LIGHT = constants.c

RB87_MASS = 86.909180527 * constants.atomic_mass
D2_WAVELENGTH = 780.241e-9
K0_D2 = 2 * math.pi / D2_WAVELENGTH

# t_pump [us] ~ 167 * I[uW/cm^2]**-0.5
TPUMP_COEFF_US = 167.0

# Two-photon coupling.  The quoted "13 kHz" is read as 1.3e4 s^-1; the
# 2*pi*13 kHz reading drives the mean-field probe loop unstable for
# N = 8e6, L = 3 cm (see README, "Parameter conventions").
DEFAULT_BETA = 13.0e3

STIFFNESS_WARN_RATIO = 1.0e3


class StiffnessWarning(UserWarning):
    """kappa is not well separated from the atomic coherence decay."""


def khz(value):
    """Cyclic kHz -> rad/s."""
    return 2 * math.pi * 1e3 * value


def to_khz(value):
    """rad/s -> cyclic kHz."""
    return value / (2 * math.pi * 1e3)


def mhz_per_ms(value):
    """Cyclic MHz/ms -> rad/s^2."""
    return 2 * math.pi * 1e9 * value


def to_mhz_per_ms(value):
    return value / (2 * math.pi * 1e9)


def recoil_frequency(mass, k1):
    """Single-photon recoil frequency hbar*k1**2/(2*mass) in rad/s."""
    if not (mass > 0 and k1 > 0):
        raise DomainError(f"mass and k1 must be positive, got mass={mass}, k1={k1}")
    return HBAR * k1**2 / (2 * mass)


def a_in_from_intensity(intensity, beta):
    """Dimensionless input probe amplitude for an intensity in uW/cm^2.

    Calibrated so that ``2*pi/(4*beta*a_in)`` equals ``t_pump_estimate``;
    the amplitude follows a pure square-root law in intensity.
    """
    if intensity < 0:
        raise DomainError(f"intensity must be >= 0, got {intensity}")
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    rabi_at_unit_intensity = 2 * math.pi / (TPUMP_COEFF_US * 1e-6)
    return rabi_at_unit_intensity / (4 * beta) * math.sqrt(intensity)


def t_pump_estimate(intensity):
    """Population redistribution time in microseconds for ``intensity`` in uW/cm^2."""
    if not intensity > 0:
        raise DomainError(f"intensity must be > 0, got {intensity}")
    return TPUMP_COEFF_US / math.sqrt(intensity)


def thermal_sigma_p(temperature, k0, mass):
    """Thermal momentum spread in units of 2*hbar*k0."""
    if not (temperature > 0 and k0 > 0 and mass > 0):
        raise DomainError("temperature, k0 and mass must all be positive")
    return math.sqrt(mass * K_B * temperature) / (2 * HBAR * k0)


@dataclass(frozen=True)
class PhysicalParams:
    """All rates and couplings of the model, in SI / rad/s."""

    omega_r: float
    beta: float
    gamma_pop: float
    gamma_coh: float
    kappa: float
    n_atoms: float
    temperature: float
    trap_length: float
    atomic_mass: float
    wavevector_k0: float
    delta_z_over_l: float = 1.0
    stiffness_ratio: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("beta", "gamma_pop"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be >= 0 and finite, got {value}")
        for name in ("omega_r", "gamma_coh", "kappa",
                     "temperature", "trap_length", "atomic_mass", "wavevector_k0"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be positive and finite, got {value}")
        if not self.n_atoms >= 1:
            raise ConfigurationError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if not 0 < self.delta_z_over_l <= 1:
            raise ConfigurationError(f"delta_z_over_l must lie in (0, 1], got {self.delta_z_over_l}")
        ratio = self.kappa / self.gamma_coh
        object.__setattr__(self, "stiffness_ratio", ratio)
        if ratio < STIFFNESS_WARN_RATIO:
            warnings.warn(f"kappa/gamma_coh = {ratio:.3g} < {STIFFNESS_WARN_RATIO:g}; "
                          "field elimination is questionable", StiffnessWarning, stacklevel=3)

    @classmethod
    def from_lab(cls, *, temperature_uk=20.0, n_atoms=8e6, beta=DEFAULT_BETA,
                 gamma_coh_khz=20.0, gamma_pop_khz=3.4, trap_length_cm=3.0,
                 wavelength_nm=D2_WAVELENGTH * 1e9, mass=RB87_MASS, delta_z_over_l=1.0):
        """Build parameters from lab units; ``beta`` is given directly in s^-1."""
        k0 = 2 * math.pi / (wavelength_nm * 1e-9)
        length = trap_length_cm * 1e-2
        return cls(
            omega_r=recoil_frequency(mass, k0),
            beta=beta,
            gamma_pop=khz(gamma_pop_khz),
            gamma_coh=khz(gamma_coh_khz),
            kappa=C_LIGHT / length,
            n_atoms=n_atoms,
            temperature=temperature_uk * 1e-6,
            trap_length=length,
            atomic_mass=mass,
            wavevector_k0=k0,
            delta_z_over_l=delta_z_over_l,
        )

    @property
    def sigma_p(self):
        return thermal_sigma_p(self.temperature, self.wavevector_k0, self.atomic_mass)

    def a_in(self, intensity):
        return a_in_from_intensity(intensity, self.beta)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}


def default_params(**overrides):
    """Parameters of the 20 uK, N = 8e6 experiment."""
    return PhysicalParams.from_lab(**overrides)


@dataclass(frozen=True)
class Segment:
    """One piece of a drive program: delta(t') = delta0 + scan_rate*t' for local t'."""

    duration: float
    delta0: float
    scan_rate: float = 0.0
    a_in: complex = 0.0

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ConfigurationError(f"segment duration must be positive and finite, got {self.duration}")
        if not (math.isfinite(self.delta0) and math.isfinite(self.scan_rate)):
            raise ConfigurationError("segment detuning and scan rate must be finite")
        object.__setattr__(self, "a_in", complex(self.a_in))

    @property
    def delta_end(self):
        return self.delta0 + self.scan_rate * self.duration


@dataclass(frozen=True)
class DriveSchedule:
    """Ordered list of segments with piecewise-linear detuning and piecewise-constant amplitude."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ConfigurationError("a schedule needs at least one segment")
        if not all(isinstance(s, Segment) for s in segs):
            raise ConfigurationError("schedule segments must be Segment instances")
        object.__setattr__(self, "segments", segs)

    @property
    def total_duration(self):
        return math.fsum(s.duration for s in self.segments)

    @property
    def boundaries(self):
        """Start time of each segment."""
        starts, t = [], 0.0
        for s in self.segments:
            starts.append(t)
            t += s.duration
        return starts

    def _locate(self, t):
        for start, seg in zip(self.boundaries, self.segments):
            if t < start + seg.duration:
                return start, seg
        start = self.boundaries[-1]
        return start, self.segments[-1]

    def delta_at(self, t):
        start, seg = self._locate(t)
        return seg.delta0 + seg.scan_rate * (t - start)

    def a_in_at(self, t):
        return self._locate(t)[1].a_in

    def to_dict(self):
        return {"segments": [
            {"duration_s": s.duration, "delta0_rad_s": s.delta0,
             "scan_rate_rad_s2": s.scan_rate, "a_in_re": s.a_in.real, "a_in_im": s.a_in.imag}
            for s in self.segments]}


# -- configuration files -----------------------------------------------------

_PHYSICS_KEYS = {
    "temperature_uk": "temperature_uk",
    "n_atoms": "n_atoms",
    "gamma_coh_khz": "gamma_coh_khz",
    "gamma_pop_khz": "gamma_pop_khz",
    "trap_length_cm": "trap_length_cm",
    "wavelength_nm": "wavelength_nm",
    "delta_z_over_l": "delta_z_over_l",
}


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams
    dp: float = 0.05
    p_max: float = 25.0
    solver: dict = field(default_factory=dict)


def load_config(path):
    """Read an INI file with [physics], [grid] and [solver] sections.

    [physics] keys are in lab units: temperature_uk, n_atoms, gamma_coh_khz,
    gamma_pop_khz (cyclic kHz), trap_length_cm, wavelength_nm, mass_amu,
    delta_z_over_l, and either beta_per_s (s^-1, default 1.3e4) or beta_khz
    (cyclic, converted as 2*pi*kHz).  [grid] takes dp and p_max.  [solver]
    entries are passed through as strings for the dynamics layer.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc

    kwargs = {}
    if parser.has_section("physics"):
        sec = parser["physics"]
        known = set(_PHYSICS_KEYS) | {"beta_per_s", "beta_khz", "mass_amu"}
        unknown = set(sec) - known
        if unknown:
            raise ConfigurationError(f"unknown [physics] keys: {sorted(unknown)}")
        try:
            for key, arg in _PHYSICS_KEYS.items():
                if key in sec:
                    kwargs[arg] = float(sec[key])
            if "beta_per_s" in sec and "beta_khz" in sec:
                raise ConfigurationError("give only one of beta_per_s, beta_khz")
            if "beta_per_s" in sec:
                kwargs["beta"] = float(sec["beta_per_s"])
            elif "beta_khz" in sec:
                kwargs["beta"] = khz(float(sec["beta_khz"]))
            if "mass_amu" in sec:
                kwargs["mass"] = float(sec["mass_amu"]) * constants.atomic_mass
        except ValueError as exc:
            raise ConfigurationError(f"bad [physics] value: {exc}") from exc

    dp, p_max = 0.05, 25.0
    if parser.has_section("grid"):
        try:
            dp = float(parser["grid"].get("dp", dp))
            p_max = float(parser["grid"].get("p_max", p_max))
        except ValueError as exc:
            raise ConfigurationError(f"bad [grid] value: {exc}") from exc

    solver = dict(parser["solver"]) if parser.has_section("solver") else {}
    return RunConfig(params=PhysicalParams.from_lab(**kwargs), dp=dp, p_max=p_max, solver=solver)
