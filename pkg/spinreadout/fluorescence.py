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
"""Fluorescence-based spin readout.

A readout repeats an excite-collect sequence: a square laser pulse of width
``t_pulse`` resonant with the bright spin-conserving transition, followed by a
collection window ``t_wait`` with the laser off. The sequence is repeated
``N_cyc = (1 - P_g)^-1`` times, the expected number of cycles before the spin
is pumped away. The mean number of detected photons is a geometric sum over
the repetitions (:py:func:`~.mean_counts`) and the fidelity follows from the
Poisson statistics of the two spin states (:py:func:`~.fluorescence_fidelity`).

Decay rates entering ``t_wait`` and ``beta_cav`` are fitted on the numerically
simulated free decay of the excited states (:py:func:`~.purcell_rates`).

"""

import dataclasses
import functools
import logging
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from spinreadout import statistics
from spinreadout.errors import InvalidParameterError
from spinreadout.lindblad import (
    Trajectory,
    evolve_observed,
    expectation_row,
    fit_decay_rate,
    fock_convergence,
    propagate,
    vectorize,
)
from spinreadout.model import (
    SPIN_LEVELS,
    TWO_PI,
    DriveParams,
    SystemParams,
    derive_rates,
    other_spin,
    purcell_rate_analytic,
    resonant_drive,
    spin_transition,
    system_liouvillian,
    transition_detuning,
)
from spinreadout.operators import DensityMatrix, atomic_sigma

logger = logging.getLogger(__name__)

# Collection window, in lifetimes of the cavity-coupled (on) or detuned (off)
# excited state
WAIT_LIFETIMES = 7
WAIT_MODES = {"seven_tau_off": "off", "seven_tau_on": "on"}

MAX_CYCLES = 10**6
# Longest pulse train simulated to fit the per-sequence survival
MAX_TRAIN_PULSES = 10**4
SURVIVAL_ITERATIONS = 5

# Free-decay fits skip the first cavity lifetimes and cover this many lifetimes
SKIP_CAVITY_LIFETIMES = 20
FIT_LIFETIMES = 6
FIT_POINTS = 401
# Populations below this are dominated by round-off
FIT_FLOOR = 1e-10

PurcellRates = namedtuple("PurcellRates", ["gamma_on", "gamma_off", "beta_cav"])


@dataclass(frozen=True)
class FluorescenceScenario:
    """A fluorescence readout.

    :param system: Physical parameters.
    :param drive: Laser pulse, normally resonant with the bright transition
                  (see :py:meth:`~.FluorescenceScenario.resonant`).
    :param t_wait_mode: ``seven_tau_off`` or ``seven_tau_on``.
    :param fock_dim: Photon-number truncation.
    :param bright_spin: Spin whose conserving transition the drive addresses.
    :param t_wait: If not None, collection window in seconds that overrides
                   ``t_wait_mode``.
    :param n_cyc: If not None, number of repetitions that overrides the
                  cyclicity rule.
    :param dark_counts: Mean detector dark counts per readout.
    """

    system: SystemParams = SystemParams()
    drive: DriveParams = DriveParams()
    t_wait_mode: str = "seven_tau_off"
    fock_dim: int = 4
    bright_spin: str = "down"
    t_wait: Optional[float] = None
    n_cyc: Optional[int] = None
    dark_counts: float = 0.0

    def __post_init__(self):
        if self.t_wait_mode not in WAIT_MODES:
            raise InvalidParameterError(
                f"Unknown t_wait_mode {self.t_wait_mode} (use one of {list(WAIT_MODES)})"
            )
        if self.bright_spin not in SPIN_LEVELS:
            raise InvalidParameterError(f"Unknown spin {self.bright_spin}")
        if self.t_wait is not None and not self.t_wait >= 0:
            raise InvalidParameterError(
                f"t_wait must be non-negative (t_wait = {self.t_wait})"
            )
        if self.n_cyc is not None and self.n_cyc < 1:
            raise InvalidParameterError(f"n_cyc must be >= 1 (n_cyc = {self.n_cyc})")

    @classmethod
    def resonant(cls, system, P_in, t_pulse, spin="down", **kwargs):
        """Laser and cavity both resonant with the conserving transition of ``spin``."""
        drive = resonant_drive(system, P_in, t_pulse, spin_transition(spin))
        return cls(system=system, drive=drive, bright_spin=spin, **kwargs)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FluorescenceOutcome:
    """Result of :py:func:`~.fluorescence_fidelity`.

    ``P_e`` and ``P_g`` refer to the bright spin, ``P_e_dark`` and
    ``P_g_dark`` to the other one. ``P_g`` is the pulse-train survival of
    :py:func:`~.cycle_survival`, ``P_g_first`` the value after the first
    sequence.
    """

    P_e: float
    P_g: float
    P_g_first: float
    P_e_dark: float
    P_g_dark: float
    beta_cav: float
    Gamma_cav: float
    Gamma_cav_off: float
    t_wait: float
    t_seq: float
    N_cyc: int
    eta_sys: float
    N_ph_up: float
    N_ph_down: float
    result: statistics.ReadoutResult
    total_time: float

    def to_dict(self):
        """Flat dictionary of all the fields, ``result`` fields prefixed."""
        fields = dataclasses.asdict(self)
        result = fields.pop("result")
        fields.update({f"result_{key}": value for key, value in result.items()})
        fields["infidelity"] = self.result.infidelity
        return fields


def _excited_decay_rate(system, delta_a, delta_c, fock_dim, spin):
    rates = derive_rates(system)
    drive = DriveParams(P_in=0.0, delta_a=delta_a, delta_c=delta_c)
    L = system_liouvillian(system, drive, fock_dim)
    excited = SPIN_LEVELS[spin][1]

    cavity_detuning = transition_detuning(system, drive, spin_transition(spin)) - delta_c
    estimate = purcell_rate_analytic(system, rates, cavity_detuning)
    t_skip = SKIP_CAVITY_LIFETIMES / rates.kappa
    times = np.linspace(0, t_skip + FIT_LIFETIMES / estimate, FIT_POINTS)

    name = f"P_{excited}{excited}"
    trajectory = evolve_observed(
        L,
        DensityMatrix.product(L.layout, excited),
        times,
        {name: atomic_sigma(excited, excited, fock_dim)},
    )
    values = np.real(trajectory.observables[name])
    below = values <= FIT_FLOOR
    t_max = times[np.argmax(below) - 1] if np.any(below) else None
    return fit_decay_rate(trajectory, name, t_min=t_skip, t_max=t_max)


@functools.lru_cache(maxsize=64)
def _decay_rates(system, delta_a, delta_c, fock_dim, bright_spin):
    gamma_on = _excited_decay_rate(system, delta_a, delta_c, fock_dim, bright_spin)
    gamma_off = _excited_decay_rate(
        system, delta_a, delta_c, fock_dim, other_spin(bright_spin)
    )
    beta_cav = max(0.0, (gamma_on - system.Gamma0) / gamma_on)
    logger.info(
        f"Gamma_cav on {gamma_on / TWO_PI / 1e6:.3f} MHz, "
        f"off {gamma_off / TWO_PI / 1e6:.3f} MHz, beta_cav {beta_cav:.4f}"
    )
    return PurcellRates(gamma_on, gamma_off, beta_cav)


def purcell_rates(scenario):
    """Cavity-modified decay rates of the two spin-conserving transitions.

    Each rate is fitted on the undriven decay of the excited state of that
    transition (``|2>`` for the bright down spin, ``|3>`` for the up spin).
    ``beta_cav = (Gamma_on - Gamma0) / Gamma_on`` is the fraction of the
    emission of the bright transition that goes into the cavity.

    :param scenario: Fluorescence readout.
    :type scenario: :py:class:`~.FluorescenceScenario`

    :returns: ``(gamma_on, gamma_off, beta_cav)`` with rates in 1/s.
    :rtype: :py:class:`~.PurcellRates`
    """
    system, drive = scenario.system, scenario.drive
    return _decay_rates(
        system, drive.delta_a, drive.delta_c, scenario.fock_dim, scenario.bright_spin
    )


def wait_time(scenario):
    """Collection window ``t_wait`` of the scenario, in seconds."""
    if scenario.t_wait is not None:
        return scenario.t_wait
    rates = purcell_rates(scenario)
    if WAIT_MODES[scenario.t_wait_mode] == "on":
        return WAIT_LIFETIMES / rates.gamma_on
    return WAIT_LIFETIMES / rates.gamma_off


@functools.lru_cache(maxsize=256)
def run_sequence(scenario, initial_spin):
    """Simulate one excite-collect sequence.

    The system starts in the ground state of ``initial_spin`` with an empty
    cavity, is driven for ``t_pulse`` and then evolves freely for ``t_wait``.

    :param scenario: Fluorescence readout.
    :type scenario: :py:class:`~.FluorescenceScenario`
    :param initial_spin: ``up`` or ``down``.
    :type initial_spin: str

    :returns: ``(P_e, P_g)``, the excited population of the spin-conserving
              transition at the end of the pulse and the population left in
              that transition (ground plus excited) at the end of the
              sequence.
    :rtype: tuple of float
    """
    ground, excited = SPIN_LEVELS[initial_spin]
    system, drive = scenario.system, scenario.drive
    pulsed = system_liouvillian(system, drive, scenario.fock_dim)
    free = system_liouvillian(system, drive.replace(P_in=0.0), scenario.fock_dim)

    rho = DensityMatrix.product(pulsed.layout, ground)
    rho = propagate(pulsed, rho, drive.t_pulse)
    P_e = float(rho.atom_populations()[excited])
    rho = propagate(free, rho, wait_time(scenario))
    populations = rho.atom_populations()
    P_g = float(populations[ground] + populations[excited])
    return float(np.clip(P_e, 0, 1)), float(np.clip(P_g, 0, 1))


def _sequence_maps(scenario, initial_spin):
    ground, excited = SPIN_LEVELS[initial_spin]
    system, drive = scenario.system, scenario.drive
    pulsed = system_liouvillian(system, drive, scenario.fock_dim)
    free = system_liouvillian(system, drive.replace(P_in=0.0), scenario.fock_dim)
    pulse = pulsed.propagator(drive.t_pulse)
    wait = free.propagator(wait_time(scenario))
    start = vectorize(DensityMatrix.product(pulsed.layout, ground).matrix)
    population = expectation_row(atomic_sigma(excited, excited, scenario.fock_dim))
    return pulse, wait, start, population


def excited_train(scenario, initial_spin, n_pulses):
    """Excited population at the end of each pulse of a repeated sequence.

    The density matrix is carried over from one sequence to the next.

    :returns: Populations of pulses ``0 ... n_pulses - 1``.
    :rtype: numpy array
    """
    pulse, wait, start, population = _sequence_maps(scenario, initial_spin)
    # From the end of one pulse to the end of the next
    period = pulse @ wait
    vector = pulse @ start
    populations = np.empty(n_pulses)
    for num in range(n_pulses):
        populations[num] = np.real(population @ vector)
        vector = period @ vector
    return populations


def _fitted_survival(populations):
    if populations.size < 2 or populations[0] <= FIT_FLOOR:
        return None
    ratios = populations / populations[0]
    pulses = np.arange(populations.size)
    valid = (pulses > 0) & (ratios > 0)
    if not np.any(valid):
        return None
    # Least squares of log(ratio) = n log(P_g), through the origin
    n, log_ratio = pulses[valid], np.log(ratios[valid])
    return float(np.clip(np.exp(np.dot(n, log_ratio) / np.dot(n, n)), 0, 1))


@functools.lru_cache(maxsize=256)
def cycle_survival(scenario, initial_spin):
    """Fraction of the spin-conserving manifold that survives one sequence.

    The value is the per-sequence ratio of the pulse-train excited
    populations (:py:func:`~.excited_train`), fitted as ``P_g^n`` over the
    repetitions of the readout. The first-sequence ``P_g`` of
    :py:func:`~.run_sequence` seeds the number of repetitions; for the bright
    spin the fit and ``N_cyc`` are iterated to a consistent pair. Without
    optical pumping, or when the train is too short to fit, the
    first-sequence value is returned.

    :rtype: float
    """
    _, P_first = run_sequence(scenario, initial_spin)
    if 1 - P_first <= 1 / MAX_CYCLES:
        return P_first

    bright = initial_spin == scenario.bright_spin and scenario.n_cyc is None
    n_cyc = cycle_count(P_first) if bright else repetitions(scenario)
    n_train = min(2 * n_cyc, MAX_TRAIN_PULSES)
    populations = excited_train(scenario, initial_spin, n_train)

    P_g = P_first
    for _ in range(SURVIVAL_ITERATIONS):
        fitted = _fitted_survival(populations[: min(n_cyc, n_train)])
        if fitted is None:
            break
        P_g = fitted
        if not bright or cycle_count(P_g) == n_cyc:
            break
        n_cyc = cycle_count(P_g)
    logger.debug(
        f"Survival of spin {initial_spin}: first sequence {P_first:.6f}, "
        f"pulse train {P_g:.6f}"
    )
    return P_g


def cycle_count(P_g):
    """Number of sequence repetitions, ``(1 - P_g)^-1`` rounded, at least 1.

    Spins that are never pumped away give :py:data:`~.MAX_CYCLES`.
    """
    leakage = 1 - P_g
    if leakage <= 1 / MAX_CYCLES:
        logger.warning(
            f"Spin leakage per sequence is {leakage:.3e}, capping N_cyc at {MAX_CYCLES}"
        )
        return MAX_CYCLES
    return max(1, int(round(1 / leakage)))


def repetitions(scenario):
    """Number of sequences ``N_cyc`` in a readout, set by the bright spin."""
    if scenario.n_cyc is not None:
        return scenario.n_cyc
    return cycle_count(cycle_survival(scenario, scenario.bright_spin))


def geometric_sum(P_g, n_cyc):
    """``sum_{n < n_cyc} P_g^n``, accurate also for ``P_g`` close to 1."""
    leakage = 1 - P_g
    if leakage <= 0:
        return float(n_cyc)
    return float(-np.expm1(n_cyc * np.log1p(-leakage)) / leakage)


def system_efficiency(system):
    return system.eta_cav * system.eta_det


def mean_counts(scenario, initial_spin):
    """Mean number of detected fluorescence photons in a full readout.

    ``N_ph = beta_cav eta_sys P_e sum_{n < N_cyc} P_g^n``, with ``P_e`` of
    ``initial_spin``, ``P_g`` its :py:func:`~.cycle_survival` and the
    repetition number of the bright spin.

    :rtype: float
    """
    P_e, _ = run_sequence(scenario, initial_spin)
    P_g = cycle_survival(scenario, initial_spin)
    beta_cav = purcell_rates(scenario).beta_cav
    return (
        beta_cav
        * system_efficiency(scenario.system)
        * P_e
        * geometric_sum(P_g, repetitions(scenario))
    )


def fluorescence_fidelity(scenario):
    """Fidelity of the fluorescence readout.

    :param scenario: Fluorescence readout.
    :type scenario: :py:class:`~.FluorescenceScenario`

    :rtype: :py:class:`~.FluorescenceOutcome`
    """
    scenario.system.check()
    scenario.drive.check()
    bright, dark = scenario.bright_spin, other_spin(scenario.bright_spin)
    rates = purcell_rates(scenario)
    P_e, P_g_first = run_sequence(scenario, bright)
    P_e_dark, _ = run_sequence(scenario, dark)
    P_g = cycle_survival(scenario, bright)
    P_g_dark = cycle_survival(scenario, dark)
    n_cyc = repetitions(scenario)
    t_wait = wait_time(scenario)
    t_seq = scenario.drive.t_pulse + t_wait

    counts = {spin: mean_counts(scenario, spin) for spin in SPIN_LEVELS}
    result = statistics.fidelity(
        statistics.poisson(counts["up"], scenario.dark_counts),
        statistics.poisson(counts["down"], scenario.dark_counts),
        duration=n_cyc * t_seq,
    )
    logger.info(
        f"Fluorescence: N_cyc {n_cyc}, N_ph down {counts['down']:.3f}, "
        f"up {counts['up']:.3f}, F = {result.fidelity:.6f}"
    )
    return FluorescenceOutcome(
        P_e=P_e,
        P_g=P_g,
        P_g_first=P_g_first,
        P_e_dark=P_e_dark,
        P_g_dark=P_g_dark,
        beta_cav=rates.beta_cav,
        Gamma_cav=rates.gamma_on,
        Gamma_cav_off=rates.gamma_off,
        t_wait=t_wait,
        t_seq=t_seq,
        N_cyc=n_cyc,
        eta_sys=system_efficiency(scenario.system),
        N_ph_up=counts["up"],
        N_ph_down=counts["down"],
        result=result,
        total_time=n_cyc * t_seq,
    )


def frozen_readout(scenario):
    """Return ``scenario`` with ``t_wait`` and ``N_cyc`` fixed to their values."""
    return scenario.replace(t_wait=wait_time(scenario), n_cyc=repetitions(scenario))


def per_pulse_counts(scenario, initial_spin, n_pulses=None):
    """Mean detected photons of each pulse when the sequence is repeated.

    The density matrix is carried over from one sequence to the next, so the
    counts decay as the spin is optically pumped away.

    :param n_pulses: Number of sequences (default: ``N_cyc``).
    :type n_pulses: int

    :returns: Counts of pulses ``0 ... n_pulses - 1``.
    :rtype: numpy array
    """
    if n_pulses is None:
        n_pulses = repetitions(scenario)
    prefactor = purcell_rates(scenario).beta_cav * system_efficiency(scenario.system)
    return prefactor * excited_train(scenario, initial_spin, n_pulses)


def sequence_trajectory(scenario, initial_spin, n_points=200):
    """Dynamics of one excite-collect sequence.

    :param n_points: Number of samples in each of the two segments.
    :type n_points: int

    :rtype: :py:class:`~.Trajectory`
    """
    ground, _ = SPIN_LEVELS[initial_spin]
    system, drive = scenario.system, scenario.drive
    pulsed = system_liouvillian(system, drive, scenario.fock_dim)
    free = system_liouvillian(system, drive.replace(P_in=0.0), scenario.fock_dim)

    during = evolve_observed(
        pulsed,
        DensityMatrix.product(pulsed.layout, ground),
        np.linspace(0, drive.t_pulse, n_points),
    )
    after = evolve_observed(
        free, during.states[-1], np.linspace(0, wait_time(scenario), n_points)
    )
    # The first point of the second segment repeats the last of the first
    return Trajectory(
        times=np.concatenate((during.times, drive.t_pulse + after.times[1:])),
        states=during.states + after.states[1:],
        observables={
            name: np.concatenate((during.observables[name], after.observables[name][1:]))
            for name in during.observables
        },
    )


def headline_convergence(scenario, tol=1e-4):
    """Run :py:func:`~.fock_convergence` on the readout fidelity of ``scenario``."""

    def headline(fock_dim):
        return fluorescence_fidelity(scenario.replace(fock_dim=fock_dim)).result.fidelity

    return fock_convergence(headline, tol=tol)


def _rg_cell(base, cell):
    r_g, t_pulse = cell
    system = base.system.replace(r_g=r_g)
    scenario = base.replace(system=system, drive=base.drive.replace(t_pulse=t_pulse))
    return fluorescence_fidelity(scenario).result.infidelity


def sweep_rg(
    Q,
    Gamma,
    t_pulse_list,
    rg_list,
    system=SystemParams(),
    P_in=100e-12,
    t_wait_mode="seven_tau_off",
    fock_dim=4,
    dark_counts=0.0,
    mapper=map,
):
    """Readout infidelity over a grid of ``r_g`` and pulse widths.

    :param Q: Cavity quality factor.
    :param Gamma: Total optical linewidth, in rad/s.
    :param t_pulse_list: Pulse widths, in s.
    :param rg_list: Branching-ratio parameters.
    :param system: Remaining physical parameters.
    :param dark_counts: Mean detector dark counts per readout.
    :param mapper: Function with the signature of the builtin ``map`` used to
                   evaluate the cells (for example a parallel one).

    :returns: Columns ``r_g, t_pulse_ns, Q, gamma_GHz, infidelity``.
    :rtype: pandas DataFrame
    """
    if not len(t_pulse_list) or not len(rg_list):
        raise InvalidParameterError("sweep_rg needs non-empty r_g and t_pulse lists")
    system = system.replace(Q=Q, Gamma=Gamma)
    base = FluorescenceScenario.resonant(
        system,
        P_in,
        t_pulse_list[0],
        t_wait_mode=t_wait_mode,
        fock_dim=fock_dim,
        dark_counts=dark_counts,
    )
    cells = [(float(r_g), float(t)) for r_g in rg_list for t in t_pulse_list]
    infidelities = list(mapper(functools.partial(_rg_cell, base), cells))
    return pd.DataFrame(
        {
            "r_g": [r_g for r_g, _ in cells],
            "t_pulse_ns": [t * 1e9 for _, t in cells],
            "Q": Q,
            "gamma_GHz": Gamma / TWO_PI / 1e9,
            "infidelity": infidelities,
        }
    )
