#!/usr/bin/env python3

# Copyright (C) 2025 Spinreadout developers
#
# This program is free software; you can redistribute it and/or modify it under
# the terms of the GNU General Public License as published by the Free Software
# Foundation; either version 3 of the License, or (at your option) any later
# version.
#
# This program is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS
# FOR A PARTICULAR PURPOSE. See the GNU General Public License for more
# details.
#
# You should have received a copy of the GNU General Public License along with
# this program; if not, see <https://www.gnu.org/licenses/>.
"""Spin-dependent cavity reflection readout.

A weak laser pulse is reflected off the one-sided cavity. The input-output
relation ``a_out = a_in + sqrt(kappa_wg) a`` with ``<a_in> = i sqrt(epsilon)``
gives the reflected flux, and the emitter shifts the cavity response
differently for the two spin states.

- :py:func:`~.reflectivity_numeric` propagates the master equation to a
  quasi-steady state and returns ``|<a_out> / <a_in>|^2``,
  :py:func:`~.reflectivity_analytic` is the weak-excitation closed form of a
  single transition coupled to the cavity.
- :py:func:`~.optimize_detunings` finds the laser and cavity detunings that
  maximize the reflection contrast under a weak probe.
- :py:func:`~.reflected_count_curve` integrates the reflected flux over the
  pulse, including the optical pumping of the spin, and
  :py:func:`~.reflection_fidelity` turns the counts into a readout fidelity.
- The remaining functions are parameter studies built on the above.

"""

import dataclasses
import functools
import logging
import warnings
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize, minimize_scalar

from spinreadout import statistics
from spinreadout.errors import (
    ConvergenceError,
    GridConvergenceError,
    InvalidParameterError,
)
from spinreadout.lindblad import expectation_row, propagate_vectors, vectorize
from spinreadout.model import (
    SPIN_LEVELS,
    TRANSITIONS,
    TWO_PI,
    DriveParams,
    SystemParams,
    atomic_detuning_for,
    derive_rates,
    spin_transition,
    system_liouvillian,
    transition_detuning,
)
from spinreadout.operators import DensityMatrix, annihilation, atomic_sigma

logger = logging.getLogger(__name__)

# Weak probe used for reflectivities, and the largest power still called weak
PROBE_POWER = 0.1e-12
MAX_PROBE_POWER = 1e-12
WEAK_FOCK_DIM = 2

# Quasi-steady state: relative change of the field over one cavity lifetime,
# first free evolution and total budget in cavity lifetimes
STEADY_TOL = 1e-8
FIRST_JUMP = 50
STEADY_BUDGET = 1e4

# Detuning box (in cavity linewidths) and coarse grid of the optimizer
SEARCH_SPAN = 5.0
SEARCH_POINTS = 41
SEARCH_STARTS = 5
ALIGNED_POINTS = 201
# Refinements closer than this (in cavity linewidths) found the same optimum
SAME_OPTIMUM = 1e-3
# Contrast optima tried in full readouts, besides the mirror of the best one
READOUT_OPTIMA = 2
# Optima with the cavity within this many linewidths of transition A use the
# vacuum Rabi splitting
ALIGNED_OFFSET = 0.05

# Isolation (in cavity linewidths) required by the analytic comparison
ISOLATION_MARGIN = 10.0

# Time grid of the reflected flux: geometric up to KNEE_FRACTION of the pulse,
# then uniform
MIN_GRID_POINTS = 200
UNIFORM_POINTS = 4000
KNEE_FRACTION = 0.05
FIRST_SAMPLE = 0.05
GRID_TOL = 1e-4
# Box of the power and pulse sweeps, with a relative slack for round-off
POWER_BOX = (0.1e-12, 100e-12)
MAX_PULSE = 200e-6
BOX_SLACK = 1e-9
# Counts below this fraction of the full-reflection counts are not compared
# relatively
COUNT_FLOOR = 1e-3

Detunings = namedtuple("Detunings", ["delta_a", "delta_c", "contrast"])
CountCurve = namedtuple(
    "CountCurve",
    ["widths", "counts", "grid_delta", "grid_points", "early_points", "late_points"],
)
SweepSurface = namedtuple("SweepSurface", ["surface", "minimum"])
EtaStudy = namedtuple("EtaStudy", ["contrast", "spectra"])


@dataclass(frozen=True)
class ReflectionScenario:
    """A reflection readout.

    :param system: Physical parameters.
    :param P_in: Laser power at the cavity, in W.
    :param t_pulse: Pulse width, in s.
    :param delta_a: Bare atomic detuning in rad/s, None to optimize it.
    :param delta_c: Cavity detuning in rad/s, None to optimize it.
    :param fock_dim: Photon-number truncation for the counts.
    :param probe_power: Weak power used for reflectivities and optimization.
    :param grid_points: Samples of the reflected flux before the knee.
    :param uniform_points: Samples of the reflected flux after the knee.
    :param dark_counts: Mean detector dark counts per readout.
    """

    system: SystemParams = SystemParams()
    P_in: float = 3.8e-12
    t_pulse: float = 47e-6
    delta_a: Optional[float] = None
    delta_c: Optional[float] = None
    fock_dim: int = 4
    probe_power: float = PROBE_POWER
    grid_points: int = MIN_GRID_POINTS
    uniform_points: int = UNIFORM_POINTS
    dark_counts: float = 0.0

    def __post_init__(self):
        if not self.t_pulse > 0:
            raise InvalidParameterError(
                f"t_pulse must be positive (t_pulse = {self.t_pulse})"
            )
        if not self.P_in >= 0:
            raise InvalidParameterError(
                f"P_in must be non-negative (P_in = {self.P_in})"
            )
        if self.grid_points < MIN_GRID_POINTS:
            raise InvalidParameterError(
                f"At least {MIN_GRID_POINTS} grid points are needed ({self.grid_points})"
            )
        if self.uniform_points < 1:
            raise InvalidParameterError(
                f"uniform_points must be positive ({self.uniform_points})"
            )

    @property
    def optimized(self):
        """Whether the detunings still have to be optimized."""
        return self.delta_a is None or self.delta_c is None

    @property
    def drive(self):
        if self.optimized:
            raise InvalidParameterError("Detunings are not resolved yet")
        return DriveParams(
            P_in=self.P_in,
            delta_a=self.delta_a,
            delta_c=self.delta_c,
            t_pulse=self.t_pulse,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ReflectionOutcome:
    """Result of :py:func:`~.reflection_fidelity`."""

    R_up: float
    R_down: float
    contrast: float
    N_ph_up: float
    N_ph_down: float
    result: statistics.ReadoutResult
    delta_a: float
    delta_c: float
    cooperativity: float
    grid_delta: float

    def to_dict(self):
        """Flat dictionary of all the fields, ``result`` fields prefixed."""
        fields = dataclasses.asdict(self)
        result = fields.pop("result")
        fields.update({f"result_{key}": value for key, value in result.items()})
        fields["infidelity"] = self.result.infidelity
        return fields


def input_amplitude(system, P_in):
    """``<a_in> = i sqrt(epsilon)``, in sqrt(photons/s)."""
    rates = derive_rates(system)
    return 1j * np.sqrt(DriveParams(P_in=P_in).epsilon(rates))


def steady_field(system, drive, initial_spin, fock_dim=WEAK_FOCK_DIM):
    """Quasi-steady cavity field for a spin prepared in ``initial_spin``.

    The field is conditioned on the spin still being in the manifold it was
    prepared in, ``Tr(rho a P) / Tr(rho P)`` with ``P`` the projector on the
    ground and excited state of its conserving transition. The state is
    propagated in growing jumps; after each jump the field is sampled again
    one cavity lifetime later, and the quasi-steady state is reached when the two
    values differ by less than ``STEADY_TOL`` relative.

    :rtype: complex
    """
    if not drive.P_in > 0:
        raise InvalidParameterError("The quasi-steady field needs P_in > 0")
    kappa = derive_rates(system).kappa
    L = system_liouvillian(system, drive, fock_dim)
    ground, excited = SPIN_LEVELS[initial_spin]
    manifold = atomic_sigma(ground, ground, fock_dim)
    manifold = manifold + atomic_sigma(excited, excited, fock_dim)
    field_row = expectation_row(annihilation(fock_dim) @ manifold)
    weight_row = expectation_row(manifold)

    def conditional(vector):
        return (field_row @ vector) / np.real(weight_row @ vector)

    vector = vectorize(DensityMatrix.product(L.layout, ground).matrix)
    lifetime, jump = 1 / kappa, FIRST_JUMP / kappa
    elapsed, change = 0.0, np.inf
    while elapsed + jump + lifetime <= STEADY_BUDGET / kappa:
        vector = L.propagator(jump) @ vector
        before = conditional(vector)
        vector = L.propagator(lifetime) @ vector
        after = conditional(vector)
        elapsed += jump + lifetime
        change = abs(after - before)
        if change <= STEADY_TOL * abs(after):
            return after
        jump *= 2
    raise ConvergenceError(
        f"No quasi-steady state within {STEADY_BUDGET:.0e} cavity lifetimes "
        f"(last change {change:.3e})"
    )


def _reflectivity(system, drive, initial_spin, fock_dim):
    rates = derive_rates(system)
    a_in = input_amplitude(system, drive.P_in)
    field = steady_field(system, drive, initial_spin, fock_dim)
    a_out = a_in + np.sqrt(rates.kappa_wg) * field
    return float(abs(a_out / a_in) ** 2)


def reflectivity_numeric(scenario, initial_spin):
    """Quasi-steady reflectivity ``|<a_out> / <a_in>|^2`` of the scenario.

    :param scenario: Reflection readout with resolved detunings; its power
                     and truncation are used as they are.
    :type scenario: :py:class:`~.ReflectionScenario`
    :param initial_spin: ``up`` or ``down``.
    :type initial_spin: str

    :rtype: float
    """
    system, drive = scenario.system, scenario.drive
    return _reflectivity(system, drive, initial_spin, scenario.fock_dim)


def reflectivity_analytic(system, delta_a, delta_c, spin=None, coupling=None):
    """Weak-excitation reflection amplitude of a single transition.

    ``r = 1 - kappa_wg / (kappa/2 + i Delta_c + g^2 / (i Delta + Gamma/2))``

    :param delta_a: With ``spin`` given, the bare atomic detuning; the
                    detuning ``Delta`` of the conserving transition of
                    ``spin`` is derived from it. Otherwise ``Delta`` itself.
    :param delta_c: Cavity detuning.
    :param spin: ``up``, ``down`` or None.
    :param coupling: Coupling of the transition (default ``g_par``).

    :rtype: complex
    """
    rates = derive_rates(system)
    g = rates.g_par if coupling is None else coupling
    if spin is None:
        detuning = delta_a
    else:
        drive = DriveParams(delta_a=delta_a, delta_c=delta_c)
        detuning = transition_detuning(system, drive, spin_transition(spin))
    emitter = g**2 / (1j * detuning + system.Gamma / 2)
    return 1 - rates.kappa_wg / (rates.kappa / 2 + 1j * delta_c + emitter)


def isolated_transition(system, delta_a, delta_c, spin, margin=ISOLATION_MARGIN):
    """Whether the transitions other than the conserving one of ``spin`` are
    more than ``margin`` cavity linewidths away from the laser and the cavity."""
    kappa = derive_rates(system).kappa
    drive = DriveParams(delta_a=delta_a, delta_c=delta_c)
    for label in TRANSITIONS:
        if label == spin_transition(spin):
            continue
        detuning = transition_detuning(system, drive, label)
        if min(abs(detuning), abs(detuning - delta_c)) <= margin * kappa:
            return False
    return True


def weak_drive_discrepancy(system, delta_a, delta_c, spin, P_probe=PROBE_POWER):
    """``R_numeric - |r_analytic|^2`` at a weak probe.

    :returns: The difference, or None if the transition is not isolated
              enough for the single-transition formula.
    """
    if not isolated_transition(system, delta_a, delta_c, spin):
        logger.info(
            f"Skipping analytic comparison at Delta_a {delta_a:.3e}, "
            f"Delta_c {delta_c:.3e}: other transitions are too close"
        )
        return None
    drive = DriveParams(P_in=P_probe, delta_a=delta_a, delta_c=delta_c)
    numeric = _reflectivity(system, drive, spin, WEAK_FOCK_DIM)
    analytic = abs(reflectivity_analytic(system, delta_a, delta_c, spin)) ** 2
    return numeric - analytic


def reflection_contrast(
    system, delta_a, delta_c, P_probe=PROBE_POWER, fock_dim=WEAK_FOCK_DIM
):
    """``|R_up - R_down|`` at the given detunings."""
    drive = DriveParams(P_in=P_probe, delta_a=delta_a, delta_c=delta_c)
    return abs(
        _reflectivity(system, drive, "up", fock_dim)
        - _reflectivity(system, drive, "down", fock_dim)
    )


def _aligned_window(system, span):
    # Cavity detunings for which the laser detuning stays inside the box too
    kappa = derive_rates(system).kappa
    offset = atomic_detuning_for(system, "A") / kappa
    return max(-span, -span - offset), min(span, span - offset)


@functools.lru_cache(maxsize=32)
def aligned_contrast(
    system,
    P_probe=PROBE_POWER,
    fock_dim=WEAK_FOCK_DIM,
    span=SEARCH_SPAN,
    points=ALIGNED_POINTS,
):
    """Best contrast with the cavity locked to transition A.

    Only the laser frequency is optimized: a grid over the cavity detuning
    followed by a bounded scalar refinement around the best point.

    :rtype: :py:class:`~.Detunings`
    """
    kappa = derive_rates(system).kappa

    def contrast(x):
        delta_c = x * kappa
        return reflection_contrast(
            system, atomic_detuning_for(system, "A", delta_c), delta_c, P_probe, fock_dim
        )

    low, high = _aligned_window(system, span)
    axis = np.linspace(low, high, points)
    values = np.array([contrast(x) for x in axis])
    best = int(np.argmax(values))
    step = axis[1] - axis[0]
    refined = minimize_scalar(
        lambda x: -contrast(x),
        bounds=(max(low, axis[best] - step), min(high, axis[best] + step)),
        method="bounded",
        options={"xatol": 1e-6},
    )
    x, value = axis[best], values[best]
    if -refined.fun > value:
        x, value = refined.x, -refined.fun
    delta_c = x * kappa
    return Detunings(atomic_detuning_for(system, "A", delta_c), delta_c, float(value))


@functools.lru_cache(maxsize=32)
def contrast_optima(
    system,
    P_probe=PROBE_POWER,
    fock_dim=WEAK_FOCK_DIM,
    grid_points=SEARCH_POINTS,
    span=SEARCH_SPAN,
    n_starts=SEARCH_STARTS,
):
    """Local maxima of the reflection contrast, best first.

    The contrast ``|R_up - R_down|`` is evaluated on a ``grid_points`` square
    grid over ``|Delta_a|, |Delta_c| <= span kappa``. Nelder-Mead refinements
    start from the ``n_starts`` best cells and from the best point with the
    cavity locked to transition A; refinements that end on the same point are
    returned once.

    :param system: Physical parameters.
    :type system: :py:class:`~.SystemParams`
    :param P_probe: Weak probe power, in W.
    :type P_probe: float

    :rtype: tuple of :py:class:`~.Detunings`
    """
    if P_probe > MAX_PROBE_POWER:
        raise InvalidParameterError(
            f"Optimization needs a weak probe (P_probe = {P_probe} > {MAX_PROBE_POWER})"
        )
    kappa = derive_rates(system).kappa

    def contrast(x):
        return reflection_contrast(system, x[0] * kappa, x[1] * kappa, P_probe, fock_dim)

    axis = np.linspace(-span, span, grid_points)
    grid = np.array([[contrast((xa, xc)) for xc in axis] for xa in axis])
    order = np.argsort(-grid, axis=None, kind="stable")[:n_starts]
    rows, cols = np.unravel_index(order, grid.shape)
    starts = [np.array([axis[i], axis[j]]) for i, j in zip(rows, cols)]
    aligned = aligned_contrast(system, P_probe, fock_dim, span)
    starts.append(np.array([aligned.delta_a, aligned.delta_c]) / kappa)

    found = []
    for start in starts:
        refined = minimize(
            lambda x: -contrast(x),
            start,
            method="Nelder-Mead",
            bounds=[(-span, span)] * 2,
            options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 2000},
        )
        found.append((-refined.fun, tuple(refined.x)))
    found.sort(key=lambda item: -item[0])

    optima = []
    for value, x in found:
        if all(np.hypot(x[0] - o[0], x[1] - o[1]) > SAME_OPTIMUM for _, o in optima):
            optima.append((value, x))
    return tuple(
        Detunings(x[0] * kappa, x[1] * kappa, float(value)) for value, x in optima
    )


def optimize_detunings(system, P_probe=PROBE_POWER, fock_dim=WEAK_FOCK_DIM, **search):
    """Laser and cavity detunings that maximize the reflection contrast.

    This is the best of :py:func:`~.contrast_optima`; a warning is issued
    when it lies on the boundary of the search box.

    :rtype: :py:class:`~.Detunings`
    """
    best = contrast_optima(system, P_probe, fock_dim, **search)[0]
    kappa = derive_rates(system).kappa
    span = search.get("span", SEARCH_SPAN)
    x = np.array([best.delta_a, best.delta_c]) / kappa
    logger.info(
        f"Optimal detunings: Delta_a/kappa {x[0]:.4f}, "
        f"Delta_c/kappa {x[1]:.4f}, contrast {best.contrast:.6f}"
    )
    if np.any(np.abs(x) >= span * (1 - 1e-3)):
        warnings.warn(
            f"Optimal detunings {x} (in units of kappa) are at the boundary of "
            f"the search box +-{span}; the box may be too small"
        )
    return best


def cavity_offset(system, delta_a, delta_c, transition="A"):
    """Detuning of the cavity from ``transition``, in rad/s.

    Zero when the cavity is locked to the transition, whatever the laser.
    """
    drive = DriveParams(delta_a=delta_a, delta_c=delta_c)
    return delta_c - transition_detuning(system, drive, transition)


def mirrored_detunings(system, detunings, transition="A"):
    """Laser and cavity mirrored about ``transition``.

    The laser-transition and laser-cavity detunings change sign; the
    contrast is that of the mirrored point.

    :rtype: :py:class:`~.Detunings`
    """
    drive = DriveParams(delta_a=detunings.delta_a, delta_c=detunings.delta_c)
    laser = transition_detuning(system, drive, transition)
    delta_a = atomic_detuning_for(system, transition, -laser)
    delta_c = -detunings.delta_c
    contrast = reflection_contrast(system, delta_a, delta_c)
    return Detunings(delta_a, delta_c, contrast)


def readout_candidates(system, n_optima=READOUT_OPTIMA):
    """Detunings worth a full readout: the best contrast optima and the
    mirror image of the best one about transition A."""
    optima = contrast_optima(system, PROBE_POWER, WEAK_FOCK_DIM)[:n_optima]
    return optima + (mirrored_detunings(system, optima[0]),)


def resolve_detunings(scenario):
    """Return ``scenario`` with the optimal detunings filled in if missing."""
    if not scenario.optimized:
        return scenario
    optimum = optimize_detunings(scenario.system, scenario.probe_power)
    return scenario.replace(delta_a=optimum.delta_a, delta_c=optimum.delta_c)


def reflection_spectrum(system, delta_a, delta_c, offsets, P_probe=PROBE_POWER):
    """Reflectivities of both spins as the laser is scanned.

    The cavity and the emitter stay where they are for the laser detunings
    ``(delta_a, delta_c)``; the laser is moved by each of ``offsets``.

    :returns: Columns ``detuning_GHz, R_up, R_down, R_up_analytic,
              R_down_analytic`` and ``transition_A_GHz`` (laser offset at which
              transition A is resonant).
    :rtype: pandas DataFrame
    """
    offsets = np.asarray(offsets, dtype=float)
    columns = {"detuning_GHz": offsets / TWO_PI / 1e9}
    for spin in ("up", "down"):
        numeric, analytic = [], []
        for offset in offsets:
            drive = DriveParams(
                P_in=P_probe, delta_a=delta_a - offset, delta_c=delta_c - offset
            )
            numeric.append(_reflectivity(system, drive, spin, WEAK_FOCK_DIM))
            amplitude = reflectivity_analytic(system, drive.delta_a, drive.delta_c, spin)
            analytic.append(abs(amplitude) ** 2)
        columns[f"R_{spin}"] = numeric
        columns[f"R_{spin}_analytic"] = analytic
    resonance = transition_detuning(system, DriveParams(delta_a=delta_a), "A")
    columns["transition_A_GHz"] = resonance / TWO_PI / 1e9
    return pd.DataFrame(columns)


def _sample_times(t_max, kappa, n_points, n_uniform, widths):
    # Fine grid and mask of the coarse grid inside it. Before the knee the
    # samples are uniform within each octave and the step doubles from one
    # octave to the next; the coarse grid keeps every other sample
    t_first = min(FIRST_SAMPLE / kappa, KNEE_FRACTION * t_max / 10)
    octaves = max(1, int(np.ceil(np.log2(KNEE_FRACTION * t_max / t_first))))
    per_octave = max(1, int(np.ceil(n_points / octaves)))
    starts = t_first * 2.0 ** np.arange(octaves)
    fractions = np.arange(1, 2 * per_octave + 1) / (2 * per_octave)
    early = np.outer(starts, 1 + fractions)
    uniform = np.linspace(early[-1, -1], t_max, 2 * n_uniform + 1)
    head = np.union1d([0.0, t_first], widths)
    fine = np.union1d(np.union1d(head, early.ravel()), uniform)
    coarse = np.union1d(np.union1d(head, early[:, 1::2].ravel()), uniform[::2])
    return fine, np.isin(fine, coarse)


def _reflected_flux(scenario, initial_spin, times):
    system, drive = scenario.system, scenario.drive
    rates = derive_rates(system)
    L = system_liouvillian(system, drive, scenario.fock_dim)
    field_row = expectation_row(annihilation(scenario.fock_dim))
    ground = SPIN_LEVELS[initial_spin][0]
    vector = vectorize(DensityMatrix.product(L.layout, ground).matrix)
    fields = np.array([field_row @ v for v in propagate_vectors(L, vector, times)])
    a_out = input_amplitude(system, drive.P_in) + np.sqrt(rates.kappa_wg) * fields
    return system.eta_det * np.abs(a_out) ** 2


def reflected_count_curve(scenario, initial_spin, widths=None):
    """Mean detected reflected photons for several pulse widths.

    ``N_ph(t) = eta_det int_0^t |<a_in> + sqrt(kappa_wg) Tr(rho a)|^2`` is
    integrated with the trapezoidal rule on one trajectory that serves every
    width. Over the first ``KNEE_FRACTION`` of the longest pulse the samples
    are uniform within each octave of time, with a step that doubles from
    one octave to the next; they are uniform afterwards. The integral is
    repeated on every other sample, and the grid is doubled once if the two
    disagree by more than ``GRID_TOL`` relative. The starting density is
    ``grid_points`` early samples and ``uniform_points`` late ones.

    :param scenario: Reflection readout.
    :type scenario: :py:class:`~.ReflectionScenario`
    :param initial_spin: ``up`` or ``down``.
    :type initial_spin: str
    :param widths: Pulse widths in s (default: the pulse width of the scenario).
    :type widths: list of float

    :rtype: :py:class:`~.CountCurve`
    """
    scenario = resolve_detunings(scenario)
    if widths is None:
        widths = scenario.t_pulse
    widths = np.atleast_1d(np.asarray(widths, dtype=float))
    if widths.size == 0 or np.any(widths <= 0):
        raise InvalidParameterError("Pulse widths must be positive")
    n_points, n_uniform = scenario.grid_points, scenario.uniform_points
    if scenario.P_in == 0:
        return CountCurve(widths, np.zeros(widths.size), 0.0, 0, n_points, n_uniform)

    rates = derive_rates(scenario.system)
    full_reflection = scenario.system.eta_det * scenario.drive.epsilon(rates) * widths
    for _ in range(2):
        times, coarse = _sample_times(
            widths.max(), rates.kappa, n_points, n_uniform, widths
        )
        flux = _reflected_flux(scenario, initial_spin, times)
        fine_counts = cumulative_trapezoid(flux, times, initial=0)
        coarse_counts = cumulative_trapezoid(flux[coarse], times[coarse], initial=0)

        counts = fine_counts[np.searchsorted(times, widths)]
        rough = coarse_counts[np.searchsorted(times[coarse], widths)]
        scale = np.maximum(counts, COUNT_FLOOR * full_reflection)
        delta = float(np.max(np.abs(counts - rough) / scale))
        if delta <= GRID_TOL:
            return CountCurve(widths, counts, delta, times.size, n_points, n_uniform)
        logger.info(f"Grid doubling changed the counts by {delta:.3e}, refining")
        n_points, n_uniform = 2 * n_points, 2 * n_uniform
    raise GridConvergenceError(
        f"Reflected counts not converged on {times.size} samples (change {delta:.3e})"
    )


def converged_grid(scenario):
    """Return ``scenario`` with resolved detunings and the sample density
    that converged for its own pulse, the denser of the two spins."""
    scenario = resolve_detunings(scenario)
    curves = [reflected_count_curve(scenario, spin) for spin in SPIN_LEVELS]
    return scenario.replace(
        grid_points=max(curve.early_points for curve in curves),
        uniform_points=max(curve.late_points for curve in curves),
    )


def reflected_counts(scenario, initial_spin):
    """Mean detected reflected photons over the pulse of the scenario."""
    return float(reflected_count_curve(scenario, initial_spin).counts[0])


def _readout(counts_up, counts_down, duration, dark_counts):
    return statistics.fidelity(
        statistics.poisson(counts_up, dark_counts),
        statistics.poisson(counts_down, dark_counts),
        duration=duration,
    )


def reflection_fidelity(scenario):
    """Fidelity of the reflection readout.

    :param scenario: Reflection readout, detunings optimized if missing.
    :type scenario: :py:class:`~.ReflectionScenario`

    :rtype: :py:class:`~.ReflectionOutcome`
    """
    scenario.system.check()
    scenario = resolve_detunings(scenario)
    weak = scenario.drive.replace(P_in=scenario.probe_power)
    R = {
        spin: _reflectivity(scenario.system, weak, spin, WEAK_FOCK_DIM)
        for spin in SPIN_LEVELS
    }
    curves = {spin: reflected_count_curve(scenario, spin) for spin in SPIN_LEVELS}
    counts = {spin: float(curve.counts[0]) for spin, curve in curves.items()}
    result = _readout(
        counts["up"], counts["down"], scenario.t_pulse, scenario.dark_counts
    )
    logger.info(
        f"Reflection: N_ph down {counts['down']:.3f}, up {counts['up']:.3f}, "
        f"F = {result.fidelity:.6f}"
    )
    return ReflectionOutcome(
        R_up=R["up"],
        R_down=R["down"],
        contrast=abs(R["up"] - R["down"]),
        N_ph_up=counts["up"],
        N_ph_down=counts["down"],
        result=result,
        delta_a=scenario.delta_a,
        delta_c=scenario.delta_c,
        cooperativity=derive_rates(scenario.system).cooperativity,
        grid_delta=max(curve.grid_delta for curve in curves.values()),
    )


def _count_cell(base, widths, cell):
    P_in, spin = cell
    return reflected_count_curve(base.replace(P_in=P_in), spin, widths).counts.tolist()


def _check_box(P_grid, t_grid):
    P_grid = np.asarray(P_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if not P_grid.size or not t_grid.size:
        raise InvalidParameterError("Power and pulse grids must not be empty")
    low, high = POWER_BOX
    below = np.any(P_grid < low * (1 - BOX_SLACK))
    if below or np.any(P_grid > high * (1 + BOX_SLACK)):
        raise InvalidParameterError(
            f"Powers must be within [{low * 1e12:g}, {high * 1e12:g}] pW"
        )
    if np.any(t_grid <= 0) or np.any(t_grid > MAX_PULSE * (1 + BOX_SLACK)):
        raise InvalidParameterError(
            f"Pulse widths must be within (0, {MAX_PULSE * 1e6:g}] us"
        )


def sweep_power_pulse(
    system, P_grid, t_grid, fock_dim=4, dark_counts=0.0, detunings=None, mapper=map
):
    """Readout infidelity over a grid of laser powers and pulse widths.

    One trajectory per power and spin provides the counts of every pulse
    width. Powers must lie in :py:data:`~.POWER_BOX` and widths in
    ``(0, MAX_PULSE]``.

    :param P_grid: Powers, in W.
    :param t_grid: Pulse widths, in s.
    :param detunings: ``(delta_a, delta_c)``; optimized if None.
    :param mapper: Function with the signature of the builtin ``map``.

    :returns: The surface (columns ``P_in_pW, t_pulse_us, infidelity,
              N_ph_up, N_ph_down, threshold_M``) and the minimum infidelity
              at each power (columns ``P_in_pW, t_pulse_us, infidelity``).
    :rtype: :py:class:`~.SweepSurface`
    """
    _check_box(P_grid, t_grid)
    widths = np.sort(np.asarray(t_grid, dtype=float))
    base = ReflectionScenario(system=system, t_pulse=widths.max(), fock_dim=fock_dim)
    if detunings is not None:
        base = base.replace(delta_a=detunings[0], delta_c=detunings[1])
    base = resolve_detunings(base)

    cells = [(float(P_in), spin) for P_in in P_grid for spin in ("up", "down")]
    curves = mapper(functools.partial(_count_cell, base, widths), cells)
    counts = dict(zip(cells, curves))

    rows = []
    for P_in in P_grid:
        up, down = counts[(float(P_in), "up")], counts[(float(P_in), "down")]
        for num, width in enumerate(widths):
            result = _readout(up[num], down[num], width, dark_counts)
            rows.append(
                {
                    "P_in_pW": float(P_in) * 1e12,
                    "t_pulse_us": width * 1e6,
                    "infidelity": result.infidelity,
                    "N_ph_up": up[num],
                    "N_ph_down": down[num],
                    "threshold_M": result.threshold_M,
                }
            )
    surface = pd.DataFrame(rows)
    best = surface.loc[surface.groupby("P_in_pW", sort=False)["infidelity"].idxmin()]
    minimum = best[["P_in_pW", "t_pulse_us", "infidelity"]].reset_index(drop=True)
    return SweepSurface(surface, minimum)


def _best_cell(surface):
    return surface.loc[surface["infidelity"].idxmin()]


def best_readout(
    system, P_grid, t_grid, fock_dim=4, dark_counts=0.0, candidates=None, mapper=map
):
    """Best cell of the power and pulse grid over several detuning choices.

    The contrast optimum is blind to optical pumping, so every detuning of
    ``candidates`` (default :py:func:`~.readout_candidates`) gets a full
    sweep and the lowest infidelity wins.

    :returns: The best cell, with its ``delta_a_GHz`` and ``delta_c_GHz``.
    :rtype: pandas Series
    """
    if candidates is None:
        candidates = readout_candidates(system)
    best = None
    for candidate in candidates:
        surface = sweep_power_pulse(
            system,
            P_grid,
            t_grid,
            fock_dim=fock_dim,
            dark_counts=dark_counts,
            detunings=(candidate.delta_a, candidate.delta_c),
            mapper=mapper,
        ).surface
        cell = _best_cell(surface).copy()
        cell["delta_a_GHz"] = candidate.delta_a / TWO_PI / 1e9
        cell["delta_c_GHz"] = candidate.delta_c / TWO_PI / 1e9
        if best is None or cell["infidelity"] < best["infidelity"]:
            best = cell
    return best


def sweep_rg_reflection(
    system, rg_list, P_grid, t_grid, fock_dim=4, dark_counts=0.0, mapper=map
):
    """Minimum infidelity over the power and pulse grid for each ``r_g``.

    Detunings are chosen again for each ``r_g`` with :py:func:`~.best_readout`.

    :returns: Columns ``r_g, infidelity, P_in_pW, t_pulse_us, delta_a_GHz,
              delta_c_GHz``.
    :rtype: pandas DataFrame
    """
    if any(not r_g > 0 for r_g in rg_list):
        raise InvalidParameterError("r_g values must be positive")
    _check_box(P_grid, t_grid)
    rows = []
    for r_g in rg_list:
        best = best_readout(
            system.replace(r_g=float(r_g)),
            P_grid,
            t_grid,
            fock_dim=fock_dim,
            dark_counts=dark_counts,
            mapper=mapper,
        )
        rows.append(
            {
                "r_g": float(r_g),
                "infidelity": best["infidelity"],
                "P_in_pW": best["P_in_pW"],
                "t_pulse_us": best["t_pulse_us"],
                "delta_a_GHz": best["delta_a_GHz"],
                "delta_c_GHz": best["delta_c_GHz"],
            }
        )
        logger.info(f"r_g {r_g}: minimum infidelity {best['infidelity']:.4e}")
    return pd.DataFrame(rows)


def _q_gamma_cell(system, P_grid, t_grid, fock_dim, dark_counts, cell):
    Q, Gamma = cell
    cell_system = system.replace(Q=Q, Gamma=Gamma)
    surface = sweep_power_pulse(
        cell_system, P_grid, t_grid, fock_dim=fock_dim, dark_counts=dark_counts
    ).surface
    best = _best_cell(surface)
    return {
        "Q": Q,
        "gamma_GHz": Gamma / TWO_PI / 1e9,
        "cooperativity": derive_rates(cell_system).cooperativity,
        "fidelity": 1 - best["infidelity"],
        "P_in_pW": best["P_in_pW"],
        "t_pulse_us": best["t_pulse_us"],
    }


def sweep_Q_Gamma(
    system, Q_list, Gamma_list, P_grid, t_grid, fock_dim=4, dark_counts=0.0, mapper=map
):
    """Maximum fidelity over the power and pulse grid for each ``(Q, Gamma)``.

    :param Gamma_list: Total linewidths, in rad/s.
    :param mapper: Function with the signature of the builtin ``map``; cells
                   are independent.

    :returns: Columns ``Q, gamma_GHz, cooperativity, fidelity, P_in_pW,
              t_pulse_us``.
    :rtype: pandas DataFrame
    """
    if any(not Q > 0 for Q in Q_list) or any(not G > 0 for G in Gamma_list):
        raise InvalidParameterError("Q and Gamma values must be positive")
    _check_box(P_grid, t_grid)
    cells = [(float(Q), float(Gamma)) for Q in Q_list for Gamma in Gamma_list]
    cell = functools.partial(
        _q_gamma_cell, system, tuple(P_grid), tuple(t_grid), fock_dim, dark_counts
    )
    return pd.DataFrame(list(mapper(cell, cells)))


def _eta_cell(system, P_probe, eta_cav):
    cell_system = system.replace(eta_cav=eta_cav)
    optimum = optimize_detunings(cell_system, P_probe)
    aligned = aligned_contrast(cell_system, P_probe)
    offset = cavity_offset(cell_system, optimum.delta_a, optimum.delta_c)
    aligned_offset = cavity_offset(cell_system, aligned.delta_a, aligned.delta_c)
    kappa = derive_rates(cell_system).kappa
    return {
        "eta_cav": eta_cav,
        "contrast_opt": optimum.contrast,
        "contrast_aligned": aligned.contrast,
        "delta_a_GHz": optimum.delta_a / TWO_PI / 1e9,
        "delta_c_GHz": optimum.delta_c / TWO_PI / 1e9,
        "cavity_offset_GHz": offset / TWO_PI / 1e9,
        "aligned_delta_c_GHz": aligned.delta_c / TWO_PI / 1e9,
        "aligned_cavity_offset_GHz": aligned_offset / TWO_PI / 1e9,
        "regime": "aligned" if abs(offset) <= ALIGNED_OFFSET * kappa else "dispersive",
    }


def regime_switch(contrast):
    """Locate the change of optimal regime in an :py:func:`~.eta_cav_study` table.

    :returns: The ``eta_cav`` values on both sides of the switch, the jump of
              the optimal cavity offset there and the largest offset change
              between any other pair of neighbors (both in GHz), or None if
              the regime never changes.
    :rtype: tuple or None
    """
    frame = contrast.sort_values("eta_cav").reset_index(drop=True)
    regimes = frame["regime"].to_numpy()
    changes = np.flatnonzero(regimes[1:] != regimes[:-1])
    if not changes.size:
        return None
    num = int(changes[0])
    steps = np.abs(np.diff(frame["cavity_offset_GHz"].to_numpy()))
    others = np.delete(steps, num)
    return (
        float(frame["eta_cav"][num]),
        float(frame["eta_cav"][num + 1]),
        float(steps[num]),
        float(others.max()) if others.size else 0.0,
    )


def eta_cav_fidelity(
    system, eta_list, P_grid, t_grid, fock_dim=4, dark_counts=0.0, mapper=map
):
    """Best readout fidelity over the power and pulse grid for each ``eta_cav``.

    :returns: Columns ``eta_cav, fidelity, P_in_pW, t_pulse_us``.
    :rtype: pandas DataFrame
    """
    if any(not 0 < eta <= 1 for eta in eta_list):
        raise InvalidParameterError("eta_cav values must be in (0, 1]")
    _check_box(P_grid, t_grid)
    rows = []
    for eta in eta_list:
        best = best_readout(
            system.replace(eta_cav=float(eta)),
            P_grid,
            t_grid,
            fock_dim=fock_dim,
            dark_counts=dark_counts,
            mapper=mapper,
        )
        rows.append(
            {
                "eta_cav": float(eta),
                "fidelity": 1 - best["infidelity"],
                "P_in_pW": best["P_in_pW"],
                "t_pulse_us": best["t_pulse_us"],
            }
        )
    return pd.DataFrame(rows)


def eta_cav_study(system, eta_list, P_probe=PROBE_POWER, spectra=False, mapper=map):
    """Reflection contrast as a function of the cavity efficiency.

    For each ``eta_cav`` the globally optimized contrast is compared with the
    contrast obtained with the cavity locked to transition A. Below critical
    coupling the best contrast uses the vacuum Rabi splitting with the
    cavity on transition A; above it the cavity moves away from A into the
    dispersive regime. The contrast is continuous across the change, but the
    optimal cavity offset jumps (see :py:func:`~.regime_switch`).

    :param spectra: Also compute the reflection spectra around each optimum.
    :type spectra: bool

    :returns: Contrast table (columns ``eta_cav, contrast_opt,
              contrast_aligned, delta_a_GHz, delta_c_GHz, cavity_offset_GHz,
              aligned_delta_c_GHz, aligned_cavity_offset_GHz, regime``) and
              a dictionary ``eta_cav -> spectrum`` (empty unless
              ``spectra``).
    :rtype: :py:class:`~.EtaStudy`
    """
    if any(not 0 < eta <= 1 for eta in eta_list):
        raise InvalidParameterError("eta_cav values must be in (0, 1]")
    etas = [float(eta) for eta in eta_list]
    rows = mapper(functools.partial(_eta_cell, system, P_probe), etas)
    contrast = pd.DataFrame(list(rows))
    found = {}
    if spectra:
        for eta, row in zip(etas, contrast.itertuples()):
            kappa = derive_rates(system.replace(eta_cav=eta)).kappa
            found[eta] = reflection_spectrum(
                system.replace(eta_cav=eta),
                row.delta_a_GHz * TWO_PI * 1e9,
                row.delta_c_GHz * TWO_PI * 1e9,
                np.linspace(-SEARCH_SPAN * kappa, SEARCH_SPAN * kappa, ALIGNED_POINTS),
                P_probe,
            )
    return EtaStudy(contrast, found)
