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

"""Photon-count distributions and thresholded single-shot readout fidelity.

Detected photon numbers are Poissonian with the mean predicted by a readout
protocol (:py:func:`~.poisson`); slow fluctuations of that mean from shot to
shot are described by convex mixtures (:py:func:`~.mixture`). A spin state is
assigned by comparing the number of detected photons ``k`` with a threshold
``M``: more than ``M`` photons means the bright spin, fewer means the dark
spin, and exactly ``M`` is a coin toss. :py:func:`~.fidelity` scans all the
thresholds and keeps the best one.

"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson as poisson_law

from spinreadout.errors import InvalidParameterError

# Smallest truncation of the support, matters only for tiny means
MIN_SUPPORT = 20

NORMALIZATION_TOL = 1e-9


def support_size(mean):
    """Largest ``k`` kept for a Poisson law of the given mean.

    ``mean + 12 sqrt(mean)`` (plus a margin) leaves a tail below 1e-10.
    """
    return max(MIN_SUPPORT, int(np.ceil(mean + 12 * np.sqrt(mean) + 10)))


@dataclass(frozen=True, eq=False)
class CountDistribution:
    """Probability of detecting ``k`` photons, for ``k = 0 ... k_max``."""

    probabilities: np.ndarray
    kind: str = "poisson"

    @property
    def k_max(self):
        return self.probabilities.size - 1

    @property
    def mean(self):
        return float(np.dot(np.arange(self.probabilities.size), self.probabilities))

    @property
    def total(self):
        return float(np.sum(self.probabilities))

    def padded(self, k_max):
        """Return the probabilities on the support ``0 ... k_max``."""
        if k_max < self.k_max:
            raise InvalidParameterError(
                f"Cannot shrink support to {k_max} < {self.k_max}"
            )
        return np.pad(self.probabilities, (0, k_max - self.k_max))


def poisson(mean, dark_counts=0.0):
    """Poisson distribution of the detected counts.

    :param mean: Mean number of detected signal photons.
    :type mean: float
    :param dark_counts: Mean number of detector dark counts added to the signal.
    :type dark_counts: float

    :rtype: :py:class:`~.CountDistribution`
    """
    if mean < 0 or dark_counts < 0:
        raise InvalidParameterError(
            f"Poisson mean must be >= 0 (mean {mean}, dark {dark_counts})"
        )
    total_mean = mean + dark_counts
    k = np.arange(support_size(total_mean) + 1)
    return CountDistribution(poisson_law.pmf(k, total_mean), "poisson")


def mixture(weighted):
    """Convex combination of count distributions.

    :param weighted: Pairs ``(weight, distribution)``.
    :type weighted: list of tuples

    :rtype: :py:class:`~.CountDistribution`
    """
    weighted = list(weighted)
    weights = np.array([w for w, _ in weighted], dtype=float)
    if weights.size == 0 or np.any(weights < 0):
        raise InvalidParameterError("Mixture weights must be non-negative")
    if abs(weights.sum() - 1) > NORMALIZATION_TOL:
        raise InvalidParameterError(f"Mixture weights sum to {weights.sum()}, not 1")
    k_max = max(dist.k_max for _, dist in weighted)
    probabilities = sum(w * dist.padded(k_max) for w, dist in weighted)
    return CountDistribution(probabilities, "mixture")


@dataclass(frozen=True)
class ReadoutResult:
    """Outcome of a thresholded single-shot readout.

    :param fidelity: Probability of assigning the right spin.
    :param threshold_M: Photon-number threshold.
    :param mean_up: Mean detected counts when the spin is up.
    :param mean_down: Mean detected counts when the spin is down.
    :param duration: Duration of the readout, in seconds.
    """

    fidelity: float
    threshold_M: int
    mean_up: float
    mean_down: float
    duration: float = 0.0

    @property
    def infidelity(self):
        return 1 - self.fidelity

    @property
    def bright_spin(self):
        return "down" if self.mean_down >= self.mean_up else "up"


def _common_support(dist_up, dist_down):
    k_max = max(dist_up.k_max, dist_down.k_max)
    return dist_up.padded(k_max), dist_down.padded(k_max)


def fidelity_by_threshold(dist_up, dist_down, bright="down"):
    """Readout fidelity for every threshold ``M = 0 ... k_max``.

    With the down spin bright,
    ``F(M) = [P_up(k < M) + P_up(M)/2 + P_down(k > M) + P_down(M)/2] / 2``.

    :rtype: numpy array
    """
    p_up, p_down = _common_support(dist_up, dist_down)
    p_dark, p_bright = (p_up, p_down) if bright == "down" else (p_down, p_up)
    # Sum from the tails to keep small probabilities accurate
    dark_below = np.concatenate(([0.0], np.cumsum(p_dark)[:-1]))
    bright_above = np.concatenate((np.cumsum(p_bright[::-1])[::-1][1:], [0.0]))
    return 0.5 * (dark_below + 0.5 * p_dark + bright_above + 0.5 * p_bright)


def threshold_fidelity(dist_up, dist_down, threshold, bright="down"):
    """Readout fidelity at a fixed threshold and bright-spin assignment."""
    curve = fidelity_by_threshold(dist_up, dist_down, bright)
    if threshold >= curve.size:
        # Everything is assigned to the dark spin
        return 0.5
    return float(curve[threshold])


def fidelity(dist_up, dist_down, duration=0.0):
    """Best thresholded readout fidelity.

    The spin with the larger mean count is the bright one. Among equally good
    thresholds the smallest is returned.

    :param dist_up: Count distribution when the spin is up.
    :type dist_up: :py:class:`~.CountDistribution`
    :param dist_down: Count distribution when the spin is down.
    :type dist_down: :py:class:`~.CountDistribution`
    :param duration: Readout duration, stored in the result.
    :type duration: float

    :rtype: :py:class:`~.ReadoutResult`
    """
    for dist in (dist_up, dist_down):
        if abs(dist.total - 1) > NORMALIZATION_TOL:
            raise InvalidParameterError(f"Distribution sums to {dist.total}, not 1")
    mean_up, mean_down = dist_up.mean, dist_down.mean
    bright = "down" if mean_down >= mean_up else "up"
    curve = fidelity_by_threshold(dist_up, dist_down, bright)
    threshold = int(np.argmax(curve))
    return ReadoutResult(
        fidelity=float(curve[threshold]),
        threshold_M=threshold,
        mean_up=mean_up,
        mean_down=mean_down,
        duration=duration,
    )
