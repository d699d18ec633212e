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
"""Spectral diffusion of the optical transition.

The transition frequency wanders slowly compared with a readout, so each shot
sees a fixed random shift ``delta_omega`` of the bare atomic frequency. Shifts
are Gaussian with full width at half maximum ``2 gamma_sd``
(:py:class:`~.DiffusionModel`), and the detected counts of each spin follow
the Gaussian-weighted mixture of the Poisson laws obtained at each shift
(:py:func:`~.diffused_fidelity`).

Both readout protocols are supported; the protocol is selected by the type of
the scenario (:py:class:`~.FluorescenceScenario` or
:py:class:`~.ReflectionScenario`).

"""

import functools
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import pandas as pd

from spinreadout import fluorescence, reflection, statistics
from spinreadout.errors import ConvergenceError, InvalidParameterError
from spinreadout.fluorescence import FluorescenceScenario
from spinreadout.model import SystemParams
from spinreadout.reflection import ReflectionScenario

logger = logging.getLogger(__name__)

PROTOCOLS = ("fluorescence", "reflection")

MIN_POINTS = 41
MIN_SPAN = 3.0
QUADRATURE_TOL = 1e-5
# Largest shift studied, in units of the optical linewidth
MAX_SHIFT = 3.0

Counts = namedtuple("Counts", ["up", "down", "duration", "dark_counts"])
QuadratureCheck = namedtuple("QuadratureCheck", ["result", "delta"])


@dataclass(frozen=True)
class DiffusionModel:
    """Gaussian distribution of the transition shift.

    :param gamma_sd: Half width at half maximum, in rad/s. Zero means no
                     diffusion.
    :param n_points: Number of quadrature points.
    :param span: The grid covers ``+-span gamma_sd``.
    """

    gamma_sd: float
    n_points: int = MIN_POINTS
    span: float = MIN_SPAN

    def __post_init__(self):
        if not self.gamma_sd >= 0:
            raise InvalidParameterError(
                f"gamma_sd must be >= 0 (gamma_sd = {self.gamma_sd})"
            )
        if self.n_points < MIN_POINTS or self.span < MIN_SPAN:
            raise InvalidParameterError(
                f"Quadrature needs at least {MIN_POINTS} points"
                f" over +-{MIN_SPAN} gamma_sd"
            )

    @property
    def quadrature(self):
        """List of ``(delta_omega, weight)`` pairs, weights summing to 1."""
        if self.gamma_sd == 0:
            return [(0.0, 1.0)]
        shifts = np.linspace(-self.span, self.span, self.n_points) * self.gamma_sd
        density = (
            np.sqrt(np.log(2) / np.pi)
            / self.gamma_sd
            * np.exp(-np.log(2) * (shifts / self.gamma_sd) ** 2)
        )
        weights = density / density.sum()
        return list(zip(shifts.tolist(), weights.tolist()))

    def refined(self):
        """Model with twice the grid density; the old points are kept."""
        return DiffusionModel(self.gamma_sd, 2 * self.n_points - 1, self.span)


def default_scenario(protocol, system=SystemParams(), fock_dim=4, dark_counts=0.0):
    """Readout settings of the diffusion study for ``protocol``.

    Fluorescence: 10 ns pulses at 100 pW. Reflection: one 47 us pulse at
    3.8 pW with optimized detunings.
    """
    settings = {"fock_dim": fock_dim, "dark_counts": dark_counts}
    if protocol == "fluorescence":
        return FluorescenceScenario.resonant(system, 100e-12, 10e-9, **settings)
    if protocol == "reflection":
        return ReflectionScenario(
            system=system, P_in=3.8e-12, t_pulse=47e-6, **settings
        )
    raise InvalidParameterError(f"Unknown protocol {protocol} (use one of {PROTOCOLS})")


@functools.singledispatch
def frozen_readout(scenario):
    """Fix every readout parameter that depends on the transition frequency.

    Fluorescence keeps its collection window and number of repetitions,
    reflection its optimized detunings and the sample density of its counts.
    """
    raise InvalidParameterError(f"Unsupported scenario {type(scenario).__name__}")


@frozen_readout.register
def _(scenario: FluorescenceScenario):
    return fluorescence.frozen_readout(scenario)


@frozen_readout.register
def _(scenario: ReflectionScenario):
    return reflection.converged_grid(scenario)


@functools.singledispatch
def detuned_scenario(scenario, delta_omega):
    """Shift the bare atomic transition by ``delta_omega`` (rad/s).

    Only the atomic detuning changes; readout parameters that should stay at
    their unshifted values must be fixed first with :py:func:`~.frozen_readout`.
    """
    raise InvalidParameterError(f"Unsupported scenario {type(scenario).__name__}")


@detuned_scenario.register
def _(scenario: FluorescenceScenario, delta_omega):
    drive = scenario.drive
    return scenario.replace(drive=drive.replace(delta_a=drive.delta_a + delta_omega))


@detuned_scenario.register
def _(scenario: ReflectionScenario, delta_omega):
    if scenario.optimized:
        raise InvalidParameterError(
            "Resolve the detunings before shifting the transition"
        )
    return scenario.replace(delta_a=scenario.delta_a + delta_omega)


@functools.singledispatch
def protocol_counts(scenario):
    """Mean detected counts of both spins.

    :rtype: :py:class:`~.Counts`
    """
    raise InvalidParameterError(f"Unsupported scenario {type(scenario).__name__}")


@protocol_counts.register
def _(scenario: FluorescenceScenario):
    duration = fluorescence.repetitions(scenario) * (
        scenario.drive.t_pulse + fluorescence.wait_time(scenario)
    )
    return Counts(
        fluorescence.mean_counts(scenario, "up"),
        fluorescence.mean_counts(scenario, "down"),
        duration,
        scenario.dark_counts,
    )


@protocol_counts.register
def _(scenario: ReflectionScenario):
    return Counts(
        reflection.reflected_counts(scenario, "up"),
        reflection.reflected_counts(scenario, "down"),
        scenario.t_pulse,
        scenario.dark_counts,
    )


def _distributions(counts):
    return (
        statistics.poisson(counts.up, counts.dark_counts),
        statistics.poisson(counts.down, counts.dark_counts),
    )


def _shifted_counts(frozen, delta_omega):
    return protocol_counts(detuned_scenario(frozen, delta_omega))


def _base(protocol, base_scenario):
    scenario = default_scenario(protocol) if base_scenario is None else base_scenario
    expected = {"fluorescence": FluorescenceScenario, "reflection": ReflectionScenario}
    if protocol not in expected:
        raise InvalidParameterError(
            f"Unknown protocol {protocol} (use one of {PROTOCOLS})"
        )
    if not isinstance(scenario, expected[protocol]):
        raise InvalidParameterError(
            f"A {protocol} readout needs a {expected[protocol].__name__}"
        )
    return frozen_readout(scenario)


def infidelity_vs_detuning(protocol, base_scenario, delta_omegas, mapper=map):
    """Readout infidelity for fixed shifts of the transition.

    Every readout parameter, the photon threshold and the bright-spin
    assignment included, is the one of the unshifted transition.

    :param protocol: ``fluorescence`` or ``reflection``.
    :type protocol: str
    :param base_scenario: Unshifted readout (default: :py:func:`~.default_scenario`).
    :param delta_omegas: Shifts in rad/s, within ``+-3 Gamma``.
    :type delta_omegas: list of float
    :param mapper: Function with the signature of the builtin ``map``.

    :returns: Columns ``delta_omega_over_gamma, infidelity, N_ph_up, N_ph_down``.
    :rtype: pandas DataFrame
    """
    frozen = _base(protocol, base_scenario)
    Gamma = frozen.system.Gamma
    shifts = [float(d) for d in delta_omegas]
    if any(abs(d) > MAX_SHIFT * Gamma * (1 + 1e-12) for d in shifts):
        raise InvalidParameterError(f"Shifts must lie within +-{MAX_SHIFT} Gamma")

    reference = statistics.fidelity(*_distributions(protocol_counts(frozen)))
    all_counts = [
        Counts(*c) for c in mapper(functools.partial(_shifted_counts, frozen), shifts)
    ]
    rows = []
    for shift, counts in zip(shifts, all_counts):
        fidelity = statistics.threshold_fidelity(
            *_distributions(counts), reference.threshold_M, reference.bright_spin
        )
        rows.append(
            {
                "delta_omega_over_gamma": shift / Gamma,
                "infidelity": 1 - fidelity,
                "N_ph_up": counts.up,
                "N_ph_down": counts.down,
            }
        )
    return pd.DataFrame(rows)


def _mixed_fidelity(frozen, model, mapper):
    quadrature = model.quadrature
    shifts = [shift for shift, _ in quadrature]
    all_counts = [
        Counts(*c) for c in mapper(functools.partial(_shifted_counts, frozen), shifts)
    ]
    mixed_up = statistics.mixture(
        [(w, _distributions(c)[0]) for (_, w), c in zip(quadrature, all_counts)]
    )
    mixed_down = statistics.mixture(
        [(w, _distributions(c)[1]) for (_, w), c in zip(quadrature, all_counts)]
    )
    return statistics.fidelity(mixed_up, mixed_down, duration=all_counts[0].duration)


def diffused_fidelity(protocol, base_scenario, model, mapper=map):
    """Readout fidelity under spectral diffusion.

    The count distribution of each spin is the mixture over the quadrature of
    ``model`` of the Poisson laws at each shift; the threshold is optimized
    again on the mixtures.

    :param protocol: ``fluorescence`` or ``reflection``.
    :type protocol: str
    :param base_scenario: Unshifted readout (default: :py:func:`~.default_scenario`).
    :param model: Distribution of the shifts.
    :type model: :py:class:`~.DiffusionModel`

    :rtype: :py:class:`~.ReadoutResult`
    """
    return _mixed_fidelity(_base(protocol, base_scenario), model, mapper)


def quadrature_convergence(
    protocol, base_scenario, model, tol=QUADRATURE_TOL, mapper=map
):
    """Compare :py:func:`~.diffused_fidelity` with the doubled quadrature.

    :returns: Result on the refined quadrature and the change of fidelity.
    :rtype: :py:class:`~.QuadratureCheck`
    """
    frozen = _base(protocol, base_scenario)
    coarse = _mixed_fidelity(frozen, model, mapper)
    fine = _mixed_fidelity(frozen, model.refined(), mapper)
    delta = abs(fine.fidelity - coarse.fidelity)
    logger.info(f"Quadrature doubling changed the fidelity by {delta:.3e}")
    if delta > tol:
        raise ConvergenceError(f"Quadrature not converged (change {delta:.3e} > {tol})")
    return QuadratureCheck(fine, delta)


def diffusion_sweep(protocol, base_scenario, gamma_sd_list, mapper=map):
    """Diffused infidelity for several diffusion widths.

    :param gamma_sd_list: Half widths ``gamma_sd`` in rad/s.

    :returns: Columns ``two_gamma_sd_over_gamma, infidelity``.
    :rtype: pandas DataFrame
    """
    frozen = _base(protocol, base_scenario)
    Gamma = frozen.system.Gamma
    rows = []
    for gamma_sd in gamma_sd_list:
        result = _mixed_fidelity(frozen, DiffusionModel(float(gamma_sd)), mapper)
        width = 2 * gamma_sd / Gamma
        rows.append({"two_gamma_sd_over_gamma": width, "infidelity": result.infidelity})
        logger.info(f"2 gamma_sd / Gamma = {width:.3f}: 1 - F = {result.infidelity:.4e}")
    return pd.DataFrame(rows)
