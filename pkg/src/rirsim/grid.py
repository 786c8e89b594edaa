"""Momentum grid, thermal distribution and initial atom-field states."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ResourceError

MAX_GRID_POINTS = 10_000_000
TRUNCATION_LEVEL = 1e-6

# Full-resolution grid and the cheaper grid used for routine runs.  The reduced
# grid keeps p_max at ~6.7 thermal widths so the 20 uK distribution is not
# truncated.
FULL_GRID = (0.01, 35.0)
REDUCED_GRID = (0.05, 25.0)


class TruncationWarning(UserWarning):
    """The thermal distribution is not negligible at the grid edge."""


class FieldMode(enum.Enum):
    ELIMINATED = "eliminated"
    FULL_FIELD = "full_field"


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform, symmetric momentum axis.

    ``unit_shift`` is the index offset for one two-photon recoil, so the
    coherence eta_p couples cell ``i`` to cell ``i + unit_shift``.
    """

    dp: float
    p_max: float
    n_points: int
    unit_shift: int
    p: np.ndarray = field(repr=False, compare=False)

    @property
    def center(self):
        return (self.n_points - 1) // 2

    def index(self, p):
        """Grid index of momentum value(s) ``p``."""
        return np.rint(np.asarray(p) / self.dp).astype(int) + self.center

    def shift(self, values, k):
        """``out[i] = values[i + k]`` with zero padding off-grid."""
        out = np.zeros_like(values)
        if k > 0:
            out[:-k] = values[k:]
        elif k < 0:
            out[-k:] = values[:k]
        else:
            out[:] = values
        return out

    def to_dict(self):
        return {"dp": self.dp, "p_max": self.p_max, "n_points": self.n_points,
                "unit_shift": self.unit_shift}


def build_grid(dp, p_max):
    """Build the momentum grid from -p_max to +p_max inclusive."""
    if not (dp > 0 and p_max > 0):
        raise ConfigurationError(f"dp and p_max must be positive, got dp={dp}, p_max={p_max}")
    inv = 1.0 / dp
    unit_shift = int(round(inv))
    if unit_shift < 1 or abs(inv - unit_shift) > 1e-9 * max(1.0, inv):
        raise ConfigurationError(f"1/dp must be an integer, got 1/dp = {inv!r}")
    half = p_max * unit_shift
    half_cells = int(round(half))
    if abs(half - half_cells) > 1e-9 * max(1.0, half):
        raise ConfigurationError(f"p_max/dp must be an integer, got {half!r}")
    n_points = 2 * half_cells + 1
    if n_points > MAX_GRID_POINTS:
        raise ResourceError(f"grid of {n_points} points exceeds limit {MAX_GRID_POINTS}")
    # dp is snapped to 1/unit_shift so that unit_shift*dp == 1 exactly
    dp_exact = 1.0 / unit_shift
    p = (np.arange(n_points) - half_cells) * dp_exact
    return MomentumGrid(dp=dp_exact, p_max=half_cells * dp_exact, n_points=n_points,
                        unit_shift=unit_shift, p=p)


def thermal_distribution(grid, sigma_p):
    """Maxwell-Boltzmann populations normalised to one atom."""
    if not sigma_p > 0:
        raise ConfigurationError(f"sigma_p must be positive, got {sigma_p}")
    pi_th = np.exp(-grid.p**2 / (2 * sigma_p**2))
    pi_th /= pi_th.sum()
    edge = max(pi_th[0], pi_th[-1]) / pi_th.max()
    if edge > TRUNCATION_LEVEL:
        warnings.warn(f"thermal distribution truncated: edge/peak = {edge:.2e} "
                      f"(sigma_p={sigma_p:.3g}, p_max={grid.p_max:g})",
                      TruncationWarning, stacklevel=2)
    return pi_th


@dataclass
class AtomFieldState:
    """Populations, coherences and probe amplitude at one instant.

    ``grid`` and ``pi_th`` are shared read-only references; the arrays
    ``populations`` and ``coherences`` belong to this state alone.
    """

    populations: np.ndarray
    coherences: np.ndarray
    probe_amp: complex
    time: float
    grid: MomentumGrid = field(repr=False)
    pi_th: np.ndarray = field(repr=False)

    def copy(self):
        return replace(self, populations=self.populations.copy(),
                       coherences=self.coherences.copy())

    @property
    def total_population(self):
        return float(self.populations.sum())


def initial_state(grid, pi_th, a_in, field_mode=FieldMode.ELIMINATED):
    """Thermal populations, zero coherence, t = 0.

    In eliminated mode the probe is slaved instantly, so it starts at a_in;
    a dynamical field starts empty and fills on the 1/kappa time scale.
    """
    pi_th = np.asarray(pi_th, dtype=float)
    if pi_th.shape != (grid.n_points,):
        raise ConfigurationError("pi_th does not match the grid")
    if not math.isclose(pi_th.sum(), 1.0, rel_tol=0, abs_tol=1e-8):
        raise ConfigurationError(f"pi_th must be normalised, sum = {pi_th.sum()!r}")
    field_mode = FieldMode(field_mode)
    probe = complex(a_in) if field_mode is FieldMode.ELIMINATED else 0j
    return AtomFieldState(populations=pi_th.copy(),
                          coherences=np.zeros(grid.n_points, dtype=complex),
                          probe_amp=probe, time=0.0, grid=grid, pi_th=pi_th)


SNAPSHOT_HEADER = ["p_units_2hbar_k0", "population_per_atom", "re_eta", "im_eta"]


def write_snapshot_csv(path, grid, populations, coherences):
    """Write one momentum-space snapshot (p, Pi_p, Re eta_p, Im eta_p)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SNAPSHOT_HEADER)
        for p, pop, eta in zip(grid.p, populations, coherences):
            writer.writerow([f"{p:.17g}", f"{pop:.17g}", f"{eta.real:.17g}", f"{eta.imag:.17g}"])


def read_snapshot_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2] + 1j * data[:, 3]
