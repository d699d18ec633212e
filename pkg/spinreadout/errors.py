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

"""Exceptions raised by :py:mod:`spinreadout`.

Everything derives from :py:class:`~.ReadoutError`. The command-line driver maps
:py:class:`~.ConfigError` to exit status 1 and :py:class:`~.EngineError` to exit
status 2, so new exceptions have to derive from one of the two.

"""


class ReadoutError(Exception):
    """Base class of all the errors of the package."""


class ConfigError(ReadoutError):
    """Invalid user configuration (unknown keys, bad ranges, bad flags)."""


class EngineError(ReadoutError):
    """Error raised by the simulation engine."""


class InvalidParameterError(EngineError, ValueError):
    """A physical parameter is outside its allowed range."""


class InvalidLinewidthError(InvalidParameterError):
    """The total optical linewidth is narrower than the radiative one."""


class DimensionError(EngineError, ValueError):
    """Operators or states with incompatible dimensions."""


class NumericalFailureError(EngineError):
    """A propagated density matrix is no longer a physical state.

    :param message: Description of the failure.
    :type message: str
    :param diagnostics: Trace, Hermiticity and positivity of the offending state.
    :type diagnostics: dict
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v:.3e}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)


class FitQualityError(EngineError):
    """An exponential fit has coefficient of determination below threshold."""


class ConvergenceError(EngineError):
    """An iterative procedure did not converge within its budget."""


class GridConvergenceError(ConvergenceError):
    """Refining an integration grid keeps changing the result."""
