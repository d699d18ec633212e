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

"""Lindblad master equation in Liouville space.

Density matrices are vectorized by stacking columns (``order="F"``), so that
``vec(A rho B) = (B^T ⊗ A) vec(rho)``. With this convention
:py:func:`~.build_liouvillian` turns a Hamiltonian and a list of collapse
operators into a dense superoperator, and time evolution under a constant
Liouvillian is a single matrix exponential (:py:func:`~.propagate`). Square
laser pulses make the Hamiltonian piecewise constant, so a pulse sequence is a
chain of :py:func:`~.propagate` calls, one per segment. ``scipy.linalg.expm``
implements scaling and squaring with Padé approximants, accurate to roughly
1e-12 for the norms met here.

:py:func:`~.evolve_observed` records observables along a time grid,
:py:func:`~.fit_decay_rate` extracts exponential decay rates from a
:py:class:`~.Trajectory` and :py:func:`~.fock_convergence` increases the photon
truncation until a scalar result stops changing.

"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import expm

from spinreadout.errors import (
    ConvergenceError,
    DimensionError,
    FitQualityError,
    InvalidParameterError,
    NumericalFailureError,
)
from spinreadout.operators import DensityMatrix, annihilation, atomic_sigma, number

logger = logging.getLogger(__name__)

# A propagated state with an eigenvalue below this is a numerical failure
POSITIVITY_FAILURE = -1e-6
# and so is one further than this from Hermitian
HERMITICITY_FAILURE = 1e-6

# Number of matrix exponentials remembered by each Liouvillian
PROPAGATOR_CACHE_SIZE = 8

# Relative difference below which two time steps are the same step
STEP_MATCH = 1e-9


def vectorize(matrix):
    """Stack the columns of ``matrix`` into a vector."""
    return np.asarray(matrix).reshape(-1, order="F")


def unvectorize(vector, dim):
    """Inverse of :py:func:`~.vectorize`."""
    return np.asarray(vector).reshape((dim, dim), order="F")


def expectation_row(op):
    """Row vector ``r`` such that ``r @ vec(rho) = Tr(rho op)``."""
    return vectorize(op.matrix.T)


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Superoperator acting on vectorized density matrices."""

    layout: object
    matrix: np.ndarray
    _propagators: dict = field(default_factory=dict, repr=False)

    def apply(self, rho):
        """Return ``L[rho]`` as a matrix."""
        dim = self.layout.total_dim
        return unvectorize(self.matrix @ vectorize(rho.matrix), dim)

    def propagator(self, t):
        """Return ``exp(L t)``, cached on ``t`` (the most recent ones only).

        Times that agree to 12 significant digits share the same propagator.
        """
        key = float(f"{t:.12e}")
        if key not in self._propagators:
            if len(self._propagators) >= PROPAGATOR_CACHE_SIZE:
                # Drop the oldest entry
                self._propagators.pop(next(iter(self._propagators)))
            self._propagators[key] = expm(self.matrix * key)
        return self._propagators[key]


def build_liouvillian(H, collapse, hermitian_tol=1e-10):
    """Build the Lindblad superoperator.

    ``L[rho] = -i [H, rho] + sum_i (c_i rho c_i^dag - {c_i^dag c_i, rho} / 2)``

    :param H: Hamiltonian in rad/s.
    :type H: :py:class:`~.QOperator`
    :param collapse: Collapse operators, in sqrt(rad/s).
    :type collapse: list of :py:class:`~.QOperator`

    :rtype: :py:class:`~.Liouvillian`
    """
    if not H.is_hermitian(hermitian_tol):
        raise InvalidParameterError(
            "Hamiltonian is not Hermitian "
            f"(max |H - H^dag| = {H.hermiticity_error():.3e})"
        )
    layout = H.layout
    eye = np.eye(layout.total_dim)
    matrix = -1j * (np.kron(eye, H.matrix) - np.kron(H.matrix.T, eye))
    for c in collapse:
        if c.layout != layout:
            raise DimensionError(f"Collapse operator layout {c.layout} is not {layout}")
        cdc = c.matrix.conj().T @ c.matrix
        matrix += np.kron(c.matrix.conj(), c.matrix)
        matrix -= 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))
    return Liouvillian(layout, matrix)


def _checked_state(L, vector):
    # Diagnostics of the propagated matrix as it is; the state returned is
    # its Hermitian part
    raw = DensityMatrix(L.layout, unvectorize(vector, L.layout.total_dim))
    diagnostics = raw.diagnostics()
    if (
        diagnostics["min_eigenvalue"] < POSITIVITY_FAILURE
        or diagnostics["trace_error"] > abs(POSITIVITY_FAILURE)
        or diagnostics["hermiticity_error"] > HERMITICITY_FAILURE
    ):
        raise NumericalFailureError(
            "Propagation produced an unphysical state", diagnostics
        )
    return DensityMatrix(L.layout, 0.5 * (raw.matrix + raw.matrix.conj().T))


def propagate(L, rho0, t):
    """Evolve ``rho0`` for a time ``t`` under the constant Liouvillian ``L``.

    :param L: Generator of the dynamics.
    :type L: :py:class:`~.Liouvillian`
    :param rho0: Initial state.
    :type rho0: :py:class:`~.DensityMatrix`
    :param t: Duration in seconds.
    :type t: float

    :returns: ``exp(L t)[rho0]``.
    :rtype: :py:class:`~.DensityMatrix`
    """
    if t < 0:
        raise InvalidParameterError(f"Cannot propagate backwards in time (t = {t})")
    if rho0.layout != L.layout:
        raise DimensionError(f"State layout {rho0.layout} is not {L.layout}")
    if t == 0:
        return DensityMatrix(rho0.layout, rho0.matrix.copy())
    return _checked_state(L, L.propagator(t) @ vectorize(rho0.matrix))


def propagate_vectors(L, vector, times):
    """Yield ``vec(rho(t))`` for each of the sorted ``times``, starting at ``t = 0``.

    Propagators are cached on the time step, so uniform grids cost a single
    matrix exponential. Successive steps that differ only by round-off reuse
    the previous propagator.
    """
    previous, last_step = 0.0, None
    for t in times:
        step = t - previous
        if step > 0:
            if last_step is not None and abs(step - last_step) <= STEP_MATCH * last_step:
                step = last_step
            vector = L.propagator(step) @ vector
            last_step = step
        previous = t
        yield vector


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States and observables sampled along a time grid."""

    times: np.ndarray
    states: list
    observables: dict

    def to_dataframe(self):
        """Return the populations, ``<a^dag a>`` and ``<a>`` as a table.

        Columns are ``t_ns, P_00 ... P_33, n_cav, Re_a, Im_a``.
        """
        columns = {"t_ns": self.times * 1e9}
        for level in range(4):
            columns[f"P_{level}{level}"] = np.real(self.observables[f"P_{level}{level}"])
        columns["n_cav"] = np.real(self.observables["n_cav"])
        columns["Re_a"] = np.real(self.observables["a"])
        columns["Im_a"] = np.imag(self.observables["a"])
        return pd.DataFrame(columns)


def standard_observables(layout):
    """Populations of the four levels, photon number and cavity field."""
    n = layout.fock_dim
    observables = {f"P_{i}{i}": atomic_sigma(i, i, n) for i in range(4)}
    observables["n_cav"] = number(n)
    observables["a"] = annihilation(n)
    return observables


def evolve_observed(L, rho0, time_grid, observables=None):
    """Propagate ``rho0`` along ``time_grid`` recording states and observables.

    :param L: Generator of the dynamics.
    :type L: :py:class:`~.Liouvillian`
    :param rho0: State at ``t = 0``.
    :type rho0: :py:class:`~.DensityMatrix`
    :param time_grid: Sorted times, in seconds, the first one non-negative.
    :type time_grid: array
    :param observables: Observables to record. Lists are named ``O0``, ``O1``, ...
                        If None, use :py:func:`~.standard_observables`.
    :type observables: dict or list of :py:class:`~.QOperator`

    :rtype: :py:class:`~.Trajectory`
    """
    times = np.asarray(time_grid, dtype=float)
    if times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise InvalidParameterError(
            "time_grid must be strictly increasing and start >= 0"
        )
    if observables is None:
        observables = standard_observables(L.layout)
    elif not isinstance(observables, dict):
        observables = {f"O{num}": op for num, op in enumerate(observables)}

    rows = {name: expectation_row(op) for name, op in observables.items()}
    series = {name: np.empty(times.size, dtype=complex) for name in observables}
    states = []
    for num, vector in enumerate(propagate_vectors(L, vectorize(rho0.matrix), times)):
        states.append(_checked_state(L, vector))
        for name, row in rows.items():
            series[name][num] = row @ vector
    return Trajectory(times, states, series)


def fit_decay_rate(
    trajectory, observable_name, t_min=None, t_max=None, min_r_squared=0.999
):
    """Fit an exponential decay to an observable.

    The rate is minus the least-squares slope of ``log(observable)`` against time.

    :param trajectory: Trajectory holding the observable.
    :type trajectory: :py:class:`~.Trajectory`
    :param observable_name: Name of the observable in ``trajectory.observables``.
    :type observable_name: str
    :param t_min: Start of the fit window (default: first time).
    :param t_max: End of the fit window (default: last time).
    :param min_r_squared: Smallest accepted coefficient of determination.

    :returns: Decay rate in 1/s.
    :rtype: float
    """
    times = trajectory.times
    values = np.real(trajectory.observables[observable_name])
    window = np.ones(times.size, dtype=bool)
    if t_min is not None:
        window &= times >= t_min
    if t_max is not None:
        window &= times <= t_max
    times, values = times[window], values[window]
    if times.size < 3:
        raise FitQualityError(f"Only {times.size} points in the fit window")
    if np.any(values <= 0):
        raise FitQualityError(
            f"{observable_name} is not strictly positive in the fit window"
        )

    logs = np.log(values)
    slope, intercept = np.polyfit(times, logs, 1)
    residuals = logs - (slope * times + intercept)
    total = np.sum((logs - logs.mean()) ** 2)
    r_squared = 1 - np.sum(residuals**2) / total if total > 0 else 0.0
    if r_squared < min_r_squared:
        raise FitQualityError(
            f"Exponential fit of {observable_name} has R^2 = {r_squared:.6f} "
            f"< {min_r_squared}"
        )
    logger.debug(
        f"Fitted decay of {observable_name}: {-slope:.4e} 1/s (R^2 {r_squared:.8f})"
    )
    return -slope


FockConvergence = namedtuple("FockConvergence", ["fock_dim", "delta"])


def fock_convergence(headline, start_dim=2, tol=1e-4, max_dim=16):
    """Find the smallest photon truncation that makes ``headline`` stable.

    :param headline: Function of ``fock_dim`` returning the scalar to converge
                     (for example a fidelity or a mean photon count).
    :type headline: callable
    :param start_dim: First truncation to try.
    :type start_dim: int
    :param tol: Absolute change allowed when going from ``fock_dim`` to ``fock_dim + 1``.
    :type tol: float
    :param max_dim: Give up beyond this truncation.
    :type max_dim: int

    :rtype: :py:class:`~.FockConvergence`
    """
    if start_dim < 2:
        raise InvalidParameterError(f"start_dim must be >= 2, got {start_dim}")
    current = headline(start_dim)
    for fock_dim in range(start_dim, max_dim):
        following = headline(fock_dim + 1)
        delta = abs(following - current)
        logger.info(f"fock_dim {fock_dim} -> {fock_dim + 1}: change {delta:.3e}")
        if delta < tol:
            return FockConvergence(fock_dim, delta)
        current = following
    raise ConvergenceError(
        f"No convergence in the photon truncation up to fock_dim = {max_dim}; "
        "the drive is too strong for this truncation strategy"
    )


def geometric_grid(t_max, t_first, n_points):
    """Time grid with ``0`` followed by ``n_points - 1`` geometrically spaced times.

    Dense at the beginning of a pulse, where transients live, sparse later.
    """
    if n_points < 2 or not 0 < t_first <= t_max:
        raise InvalidParameterError(
            f"Invalid geometric grid ({n_points} points in [{t_first}, {t_max}])"
        )
    return np.concatenate(([0.0], np.geomspace(t_first, t_max, n_points - 1)))
