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

"""Physical parameters of the cavity-coupled T center and the operators that
describe it.

:py:class:`~.SystemParams` collects the experimental parameters, always in SI
units with frequencies stored as angular frequencies (rad/s).
:py:func:`~.derive_rates` turns them into the rates that enter the master
equation, :py:func:`~.build_hamiltonian` assembles the Hamiltonian in the frame
rotating at the laser frequency and :py:func:`~.build_collapse_ops` the
dissipators.

The four optical transitions are labelled as follows:

- ``A``: ``|0> <-> |2>`` (spin down, spin conserving),
- ``B``: ``|1> <-> |3>`` (spin up, spin conserving),
- ``C``: ``|0> <-> |3>`` (spin flipping),
- ``D``: ``|1> <-> |2>`` (spin flipping).

"""

import dataclasses
import functools
from dataclasses import dataclass

import numpy as np
from scipy import constants

from spinreadout.errors import InvalidLinewidthError, InvalidParameterError
from spinreadout.lindblad import build_liouvillian
from spinreadout.operators import HilbertLayout, annihilation, atomic_sigma

TWO_PI = 2 * np.pi

# Ground and excited level of the spin-conserving transition of each spin
SPIN_LEVELS = {"down": (0, 2), "up": (1, 3)}

# (ground, excited) pair of each optical transition
TRANSITIONS = {"A": (0, 2), "B": (1, 3), "C": (0, 3), "D": (1, 2)}


def other_spin(spin):
    return "up" if spin == "down" else "down"


@dataclass(frozen=True)
class SystemParams:
    """Experimental parameters of the emitter, the cavity and the detection.

    Defaults are the near-term targeted parameters (Q = 2e5, Gamma/2pi = 0.1 GHz,
    r_g = 10) with the global parameters of the fluorescence study.
    """

    Q: float = 2e5
    lambda_0: float = 1326e-9
    Gamma0: float = TWO_PI * 169.3e3
    Gamma: float = TWO_PI * 0.1e9
    r_g: float = 10.0
    g_sim: float = TWO_PI * 376e6
    eta_QE: float = 0.234
    eta_cav: float = 0.5
    eta_det: float = 0.275
    delta_g: float = TWO_PI * 2.5e9
    delta_e: float = TWO_PI * 0.5e9
    phi: float = np.pi / 2

    def violations(self):
        """Return the list of violated invariants (empty if the parameters are valid).

        :rtype: list of str
        """
        problems = []
        if not self.Q > 0:
            problems.append(f"Q must be positive (Q = {self.Q})")
        if not self.lambda_0 > 0:
            problems.append(f"lambda_0 must be positive (lambda_0 = {self.lambda_0})")
        if not self.Gamma0 > 0:
            problems.append(f"Gamma0 must be positive (Gamma0 = {self.Gamma0})")
        if not self.Gamma >= self.Gamma0:
            problems.append(
                "Gamma >= Gamma0 violated "
                f"(Gamma = {self.Gamma}, Gamma0 = {self.Gamma0})"
            )
        if not self.r_g > 0:
            problems.append(f"r_g must be positive (r_g = {self.r_g})")
        if not self.g_sim >= 0:
            problems.append(f"g_sim must be non-negative (g_sim = {self.g_sim})")
        for name in ("eta_QE", "eta_cav", "eta_det"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                problems.append(f"{name} must be in (0, 1] ({name} = {value})")
        return problems

    def check(self):
        """Raise if any invariant is violated.

        :returns: The parameters themselves.
        """
        problems = self.violations()
        if problems:
            if any(p.startswith("Gamma >= Gamma0") for p in problems):
                raise InvalidLinewidthError("; ".join(problems))
            raise InvalidParameterError("; ".join(problems))
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def gamma_d(self):
        """Pure dephasing rate, from Gamma = Gamma0 + 2 Gamma_d."""
        return (self.Gamma - self.Gamma0) / 2

    @property
    def ab_splitting(self):
        """Angular-frequency splitting between transitions A and B."""
        return 2 * abs(self.delta_e - self.delta_g)


@dataclass(frozen=True)
class DerivedRates:
    omega_c0: float
    kappa: float
    kappa_wg: float
    kappa_sc: float
    g: float
    g_par: float
    g_perp: float
    cooperativity: float


@dataclass(frozen=True)
class DriveParams:
    """Laser drive in the frame rotating at the laser frequency.

    :param P_in: Input power right before the cavity, in W.
    :param delta_a: Bare atomic detuning ``omega_a - omega_L``, in rad/s.
    :param delta_c: Cavity detuning ``omega_c - omega_L``, in rad/s.
    :param t_pulse: Pulse width, in s.
    """

    P_in: float = 0.0
    delta_a: float = 0.0
    delta_c: float = 0.0
    t_pulse: float = 10e-9

    def violations(self):
        problems = []
        if not self.P_in >= 0:
            problems.append(f"P_in must be non-negative (P_in = {self.P_in})")
        if not self.t_pulse > 0:
            problems.append(f"t_pulse must be positive (t_pulse = {self.t_pulse})")
        return problems

    def check(self):
        problems = self.violations()
        if problems:
            raise InvalidParameterError("; ".join(problems))
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def epsilon(self, rates):
        """Photon flux ``P_in / (hbar omega_L)``, with omega_L the bare carrier."""
        return self.P_in / (constants.hbar * rates.omega_c0)


def derive_rates(params):
    """Compute the master-equation rates from the experimental parameters.

    :param params: System parameters.
    :type params: :py:class:`~.SystemParams`

    :rtype: :py:class:`~.DerivedRates`
    """
    params.check()
    omega_c0 = TWO_PI * constants.c / params.lambda_0
    kappa = omega_c0 / params.Q
    kappa_wg = params.eta_cav * kappa
    g = params.g_sim * np.sqrt(params.eta_QE)
    norm = np.sqrt(1 + params.r_g**2)
    return DerivedRates(
        omega_c0=omega_c0,
        kappa=kappa,
        kappa_wg=kappa_wg,
        kappa_sc=kappa - kappa_wg,
        g=g,
        g_par=g * params.r_g / norm,
        g_perp=g / norm,
        cooperativity=4 * g**2 / (kappa * params.Gamma),
    )


def transition_detuning(params, drive, transition):
    """Detuning of an optical transition from the laser, in rad/s.

    In the rotating frame the level energies are ``-Delta_g``, ``+Delta_g``,
    ``Delta_a - Delta_e`` and ``Delta_a + Delta_e``.
    """
    energies = (
        -params.delta_g,
        params.delta_g,
        drive.delta_a - params.delta_e,
        drive.delta_a + params.delta_e,
    )
    ground, excited = TRANSITIONS[transition]
    return energies[excited] - energies[ground]


def atomic_detuning_for(params, transition, detuning=0.0):
    """Return the bare atomic detuning that puts ``transition`` at ``detuning``."""
    offset = transition_detuning(params, DriveParams(), transition)
    return detuning - offset


def spin_transition(spin):
    """Return the label of the spin-conserving transition of ``spin``."""
    return {"down": "A", "up": "B"}[spin]


def resonant_drive(params, P_in, t_pulse, transition="A"):
    """Laser and cavity both resonant with ``transition``."""
    return DriveParams(
        P_in=P_in,
        delta_a=atomic_detuning_for(params, transition),
        delta_c=0.0,
        t_pulse=t_pulse,
    )


def purcell_rate_analytic(params, rates, detuning=0.0, coupling=None):
    """Bad-cavity estimate of the decay rate of a cavity-coupled excited state.

    ``Gamma0 + 4 g^2 / kappa / (1 + (2 detuning / kappa)^2)``, where
    ``detuning`` is the transition-cavity detuning.
    """
    g = rates.g_par if coupling is None else coupling
    lorentzian = 1 / (1 + (2 * detuning / rates.kappa) ** 2)
    return params.Gamma0 + 4 * g**2 / rates.kappa * lorentzian


def build_hamiltonian(params, rates, drive, layout):
    """Assemble ``H / hbar`` in the frame of the laser.

    :param params: System parameters.
    :type params: :py:class:`~.SystemParams`
    :param rates: Output of :py:func:`~.derive_rates`.
    :type rates: :py:class:`~.DerivedRates`
    :param drive: Laser drive.
    :type drive: :py:class:`~.DriveParams`
    :param layout: Hilbert-space layout.
    :type layout: :py:class:`~.HilbertLayout`

    :returns: Hamiltonian in rad/s.
    :rtype: :py:class:`~.QOperator`
    """
    drive.check()
    n = layout.fock_dim
    a = annihilation(n)
    adag = a.dag()

    def s(i, j):
        return atomic_sigma(i, j, n)

    bare = (
        drive.delta_c * (adag @ a)
        + params.delta_g * (s(1, 1) - s(0, 0))
        + (drive.delta_a - params.delta_e) * s(2, 2)
        + (drive.delta_a + params.delta_e) * s(3, 3)
    )

    emission = rates.g_par * ((s(3, 1) + s(2, 0)) @ adag) + rates.g_perp * np.exp(
        1j * params.phi
    ) * ((s(3, 0) + s(2, 1)) @ adag)
    interaction = emission + emission.dag()

    amplitude = np.sqrt(rates.kappa * params.eta_cav * drive.epsilon(rates))
    driving = amplitude * (adag + a)

    return bare + interaction + driving


# Order of the operators returned by build_collapse_ops
COLLAPSE_CHANNELS = (
    "cavity",
    "dephasing_down",
    "dephasing_up",
    "emission_B",
    "emission_A",
    "emission_C",
    "emission_D",
)


def build_collapse_ops(params, rates, layout):
    """Return the collapse operators of the master equation.

    The list always contains the seven channels (cavity decay, two excited-state
    dephasings, two spin-conserving and two spin-flipping spontaneous emissions);
    dephasing operators have zero amplitude when ``Gamma == Gamma0``.

    :returns: Operators in the order of ``COLLAPSE_CHANNELS``.
    :rtype: list of :py:class:`~.QOperator`
    """
    if params.Gamma < params.Gamma0:
        raise InvalidLinewidthError(
            f"Total linewidth Gamma = {params.Gamma} is below Gamma0 = {params.Gamma0}"
        )
    n = layout.fock_dim

    def s(i, j):
        return atomic_sigma(i, j, n)

    dephasing = np.sqrt(params.gamma_d / 2)
    emission = np.sqrt(params.Gamma0 / 2)
    return [
        np.sqrt(rates.kappa) * annihilation(n),
        dephasing * (s(2, 2) - s(0, 0)),
        dephasing * (s(3, 3) - s(1, 1)),
        emission * s(3, 1),
        emission * s(2, 0),
        emission * s(3, 0),
        emission * s(2, 1),
    ]


def system_liouvillian(params, drive, fock_dim):
    """Liouvillian of the driven system truncated to ``fock_dim`` photon levels.

    Results are cached; the pulse width does not enter the generator and is
    ignored.

    :rtype: :py:class:`~.Liouvillian`
    """
    generator_drive = drive.replace(t_pulse=DriveParams.t_pulse)
    return _cached_liouvillian(params, generator_drive, fock_dim)


@functools.lru_cache(maxsize=16)
def _cached_liouvillian(params, drive, fock_dim):
    layout = HilbertLayout(fock_dim)
    rates = derive_rates(params)
    return build_liouvillian(
        build_hamiltonian(params, rates, drive, layout),
        build_collapse_ops(params, rates, layout),
    )
