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

"""Dense operators on the composite atom ⊗ cavity Hilbert space.

The emitter has four levels: ``0`` (ground, spin down), ``1`` (ground, spin up),
``2`` (excited, spin down) and ``3`` (excited, spin up). The cavity mode is
truncated to ``fock_dim`` photon-number states. Composite basis states are
ordered atom-major, ``index = atom_level * fock_dim + photon_number``, which is
exactly the ordering of ``numpy.kron(atom_op, fock_op)``. Every other module
goes through :py:class:`~.HilbertLayout` instead of hard-coding this.

Atomic transition operators follow the convention ``sigma_ij = |j><i|``, so
:py:func:`~.atomic_sigma` ``(i, j)`` maps level ``i`` to level ``j``.

"""

from dataclasses import dataclass

import numpy as np

from spinreadout.errors import DimensionError, NumericalFailureError

ATOM_DIM = 4


@dataclass(frozen=True)
class HilbertLayout:
    """Shape of the composite Hilbert space.

    :param fock_dim: Number of photon-number states kept (``N_max + 1``).
    :type fock_dim: int
    """

    fock_dim: int
    atom_dim: int = ATOM_DIM

    def __post_init__(self):
        if self.atom_dim != ATOM_DIM:
            raise DimensionError(
                f"The emitter has {ATOM_DIM} levels, not {self.atom_dim}"
            )
        if int(self.fock_dim) != self.fock_dim or self.fock_dim < 2:
            raise DimensionError(
                f"fock_dim must be an integer >= 2, got {self.fock_dim}"
            )

    @property
    def total_dim(self):
        return self.atom_dim * self.fock_dim

    def index(self, level, photons=0):
        """Return the composite index of ``|level> ⊗ |photons>``."""
        if not (0 <= level < self.atom_dim and 0 <= photons < self.fock_dim):
            raise DimensionError(f"State |{level}, {photons}> is outside {self}")
        return level * self.fock_dim + photons

    def basis(self, level, photons=0):
        """Return the basis ket ``|level> ⊗ |photons>`` as a complex vector."""
        ket = np.zeros(self.total_dim, dtype=complex)
        ket[self.index(level, photons)] = 1.0
        return ket


def _check_shape(layout, matrix, what):
    dim = layout.total_dim
    if matrix.shape != (dim, dim):
        raise DimensionError(
            f"{what} has shape {matrix.shape}, layout requires {(dim, dim)}"
        )


@dataclass(frozen=True, eq=False)
class QOperator:
    """Operator on the composite space, stored as a dense complex matrix."""

    layout: HilbertLayout
    matrix: np.ndarray

    # Let numpy scalars defer to __rmul__
    __array_ufunc__ = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))
        _check_shape(self.layout, self.matrix, "Operator")

    def _other(self, other):
        if isinstance(other, QOperator):
            if other.layout != self.layout:
                raise DimensionError(f"Layouts {self.layout} and {other.layout} differ")
            return other.matrix
        return NotImplemented

    def __add__(self, other):
        matrix = self._other(other)
        if matrix is NotImplemented:
            return NotImplemented
        return QOperator(self.layout, self.matrix + matrix)

    def __sub__(self, other):
        matrix = self._other(other)
        if matrix is NotImplemented:
            return NotImplemented
        return QOperator(self.layout, self.matrix - matrix)

    def __matmul__(self, other):
        matrix = self._other(other)
        if matrix is NotImplemented:
            return NotImplemented
        return QOperator(self.layout, self.matrix @ matrix)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return QOperator(self.layout, self.matrix * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return QOperator(self.layout, -self.matrix)

    def dag(self):
        """Return the adjoint operator."""
        return QOperator(self.layout, self.matrix.conj().T)

    def hermiticity_error(self):
        """Return ``max |A - A^dagger|`` elementwise."""
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def is_hermitian(self, tol=1e-10):
        return self.hermiticity_error() <= tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density matrix on the composite space.

    Physicality is not enforced on construction (intermediate results of linear
    algebra are allowed), use :py:meth:`~.DensityMatrix.check` for that.
    """

    layout: HilbertLayout
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))
        _check_shape(self.layout, self.matrix, "Density matrix")

    @classmethod
    def from_ket(cls, layout, ket):
        ket = np.asarray(ket, dtype=complex)
        return cls(layout, np.outer(ket, ket.conj()))

    @classmethod
    def product(cls, layout, level, photons=0):
        """Return the pure product state ``|level> ⊗ |photons>``."""
        return cls.from_ket(layout, layout.basis(level, photons))

    def trace(self):
        return complex(np.trace(self.matrix))

    def hermiticity_error(self):
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self):
        hermitian_part = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(hermitian_part)[0])

    def diagnostics(self):
        return {
            "trace_error": abs(self.trace() - 1),
            "hermiticity_error": self.hermiticity_error(),
            "min_eigenvalue": self.min_eigenvalue(),
        }

    def check(self, trace_tol=1e-8, hermitian_tol=1e-10, positivity_tol=1e-8):
        """Raise :py:class:`~.NumericalFailureError` if the state is unphysical.

        :returns: The density matrix itself, to allow chaining.
        :rtype: :py:class:`~.DensityMatrix`
        """
        diagnostics = self.diagnostics()
        if (
            diagnostics["trace_error"] > trace_tol
            or diagnostics["hermiticity_error"] > hermitian_tol
            or diagnostics["min_eigenvalue"] < -positivity_tol
        ):
            raise NumericalFailureError("Density matrix is not physical", diagnostics)
        return self

    def atom_populations(self):
        """Return the populations ``P_00 ... P_33`` of the four emitter levels."""
        diagonal = np.real(np.diag(self.matrix))
        return diagonal.reshape(self.layout.atom_dim, self.layout.fock_dim).sum(axis=1)

    def photon_distribution(self):
        """Return the photon-number distribution of the cavity mode."""
        diagonal = np.real(np.diag(self.matrix))
        return diagonal.reshape(self.layout.atom_dim, self.layout.fock_dim).sum(axis=0)


def tensor(atom_op, fock_op):
    """Embed ``atom_op ⊗ fock_op`` in the composite space.

    :param atom_op: 4x4 operator on the emitter.
    :type atom_op: numpy array
    :param fock_op: Operator on the truncated cavity mode.
    :type fock_op: numpy array

    :returns: Kronecker product with atom-major ordering.
    :rtype: :py:class:`~.QOperator`
    """
    atom_op = np.asarray(atom_op, dtype=complex)
    fock_op = np.asarray(fock_op, dtype=complex)
    if atom_op.shape != (ATOM_DIM, ATOM_DIM):
        raise DimensionError(
            f"Atomic operator must be {ATOM_DIM}x{ATOM_DIM}, got {atom_op.shape}"
        )
    if fock_op.ndim != 2 or fock_op.shape[0] != fock_op.shape[1]:
        raise DimensionError(f"Cavity operator must be square, got {fock_op.shape}")
    layout = HilbertLayout(fock_op.shape[0])
    return QOperator(layout, np.kron(atom_op, fock_op))


def fock_annihilation(fock_dim):
    """Return the truncated annihilation operator on the cavity mode alone."""
    if fock_dim < 2:
        raise DimensionError(f"fock_dim must be >= 2, got {fock_dim}")
    return np.diag(np.sqrt(np.arange(1, fock_dim)), k=1).astype(complex)


def annihilation(fock_dim):
    """Return ``a`` embedded as ``I_4 ⊗ a``."""
    return tensor(np.eye(ATOM_DIM), fock_annihilation(fock_dim))


def number(fock_dim):
    """Return the photon-number operator ``a^dagger a``."""
    a = annihilation(fock_dim)
    return a.dag() @ a


def identity(fock_dim):
    return tensor(np.eye(ATOM_DIM), np.eye(fock_dim))


def atom_projector(i, j):
    """Return ``|j><i|`` on the emitter alone."""
    if not (0 <= i < ATOM_DIM and 0 <= j < ATOM_DIM):
        raise DimensionError(
            f"Level indices must be in [0, {ATOM_DIM - 1}], got ({i}, {j})"
        )
    op = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
    op[j, i] = 1.0
    return op


def atomic_sigma(i, j, fock_dim):
    """Return ``sigma_ij = |j><i| ⊗ I``, the operator taking level ``i`` to ``j``.

    :param i: Initial level.
    :type i: int
    :param j: Final level.
    :type j: int
    :param fock_dim: Photon-number truncation of the layout.
    :type fock_dim: int

    :rtype: :py:class:`~.QOperator`
    """
    return tensor(atom_projector(i, j), np.eye(fock_dim))


def expectation(op, rho):
    """Return ``Tr(rho op)``.

    :param op: Observable.
    :type op: :py:class:`~.QOperator`
    :param rho: State.
    :type rho: :py:class:`~.DensityMatrix`

    :rtype: complex
    """
    if op.layout != rho.layout:
        raise DimensionError(f"Layouts {op.layout} and {rho.layout} differ")
    # Tr(rho op) = sum_ij rho_ij op_ji
    return complex(np.sum(rho.matrix * op.matrix.T))
