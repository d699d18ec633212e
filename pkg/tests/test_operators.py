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
import numpy as np
import pytest

from spinreadout import operators as ops
from spinreadout.errors import DimensionError, NumericalFailureError


@pytest.fixture(scope="module")
def layout():
    return ops.HilbertLayout(3)


def test_layout(layout):

    assert layout.total_dim == 12
    assert layout.index(2, 1) == 7

    # Same ordering as numpy.kron
    op = ops.tensor(ops.atom_projector(0, 2), np.eye(3))
    assert np.allclose(op.matrix @ layout.basis(0, 1), layout.basis(2, 1))

    with pytest.raises(DimensionError):
        ops.HilbertLayout(1)

    with pytest.raises(DimensionError):
        layout.index(4, 0)

    with pytest.raises(DimensionError):
        ops.HilbertLayout(3, atom_dim=2)


def test_operators(layout):

    a = ops.annihilation(3)
    assert np.allclose(a.matrix @ layout.basis(1, 2), np.sqrt(2) * layout.basis(1, 1))
    assert np.allclose(a.matrix @ layout.basis(1, 0), 0)

    # sigma_ij takes level i to level j
    sigma = ops.atomic_sigma(1, 3, 3)
    assert np.allclose(sigma.matrix @ layout.basis(1, 2), layout.basis(3, 2))

    n = ops.number(3)
    assert n.is_hermitian()
    assert np.allclose(np.diag(n.matrix).real, np.tile([0, 1, 2], 4))

    # Arithmetic, also with numpy scalars on the left
    doubled = np.float64(2.0) * n
    assert isinstance(doubled, ops.QOperator)
    assert np.allclose(doubled.matrix, 2 * n.matrix)
    assert np.allclose((n - n).matrix, 0)
    assert np.allclose((-n + n).matrix, 0)
    assert np.allclose(a.dag().matrix, a.matrix.conj().T)

    with pytest.raises(DimensionError):
        n + ops.number(4)

    with pytest.raises(DimensionError):
        ops.tensor(np.eye(3), np.eye(3))

    with pytest.raises(DimensionError):
        ops.atom_projector(0, 4)


def test_density_matrix(layout):

    rho = ops.DensityMatrix.product(layout, 2, 1)
    assert rho.trace() == pytest.approx(1)
    assert np.allclose(rho.atom_populations(), [0, 0, 1, 0])
    assert np.allclose(rho.photon_distribution(), [0, 1, 0])
    assert rho.check() is rho

    assert ops.expectation(ops.number(3), rho) == pytest.approx(1)
    assert ops.expectation(ops.identity(3), rho) == pytest.approx(1)

    with pytest.raises(DimensionError):
        ops.expectation(ops.number(4), rho)

    # Negative eigenvalue
    bad = ops.DensityMatrix(layout, np.diag([1.5, -0.5] + [0] * 10))
    with pytest.raises(NumericalFailureError) as excinfo:
        bad.check()
    assert excinfo.value.diagnostics["min_eigenvalue"] == pytest.approx(-0.5)

    with pytest.raises(DimensionError):
        ops.DensityMatrix(layout, np.eye(3))
