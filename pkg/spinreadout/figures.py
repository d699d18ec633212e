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
"""Parameter studies of the two readout protocols.

Each study is a function that takes the physical parameters and returns a
dictionary with the file names and the tables to save in them. Studies are
registered in :py:data:`~.FIGURES` with the preset they start from. Grids can
be made coarse for quick checks; the full grids are those of
:py:data:`~.GRIDS`.

"""

import logging
from collections import namedtuple

import numpy as np
import pandas as pd

from spinreadout import diffusion, fluorescence, reflection, statistics
from spinreadout.errors import ConfigError
from spinreadout.model import TWO_PI

logger = logging.getLogger(__name__)

pW, ns, us, GHz = 1e-12, 1e-9, 1e-6, TWO_PI * 1e9

# Full grid and coarse grid of every swept quantity
GRIDS = {
    "rg_fluor": (np.geomspace(1, 1000, 13), [1, 10, 100, 1000]),
    "t_fluor": (
        np.array([5, 10, 20, 50, 100, 200, 500, 1000]) * ns,
        np.array([10, 100]) * ns,
    ),
    "P_refl": (np.geomspace(0.1, 100, 25) * pW, np.geomspace(0.5, 20, 5) * pW),
    "t_refl": (np.geomspace(0.5, 50, 25) * us, np.geomspace(2, 50, 5) * us),
    "P_box": (np.geomspace(0.1, 100, 13) * pW, np.geomspace(0.5, 20, 4) * pW),
    "t_box": (np.geomspace(0.5, 50, 13) * us, np.geomspace(2, 50, 4) * us),
    "rg_refl": ([1, 2, 3, 5, 7, 10, 20, 50], [1, 10]),
    "Q": (np.geomspace(5e4, 1e6, 5), [1e5, 2e5]),
    "Gamma": (np.array([0.05, 0.1, 0.2, 0.5, 1.0]) * GHz, [0.1 * GHz, 1.0 * GHz]),
    "shift": (np.linspace(-3, 3, 25), np.linspace(-3, 3, 7)),
    "sd_width": (np.linspace(0, 2, 8), [0.0, 1.0, 2.0]),
    "eta": (np.linspace(0.1, 1.0, 10), [0.3, 0.5, 0.8]),
    "P_long": (
        np.array([0.1, 0.3, 1, 2, 3.8, 8, 16, 23.4, 50, 100]) * pW,
        np.array([1, 3.8, 23.4]) * pW,
    ),
    "t_long": (np.geomspace(1, 200, 30) * us, np.geomspace(1, 200, 6) * us),
}

FLUOR_POWER, FLUOR_PULSE = 100 * pW, 10 * ns
SPECTRUM_ETAS = (0.3, 0.5, 0.8)
PROTOCOL_COLUMNS = (("fluorescence", "infid_fluor"), ("reflection", "infid_refl"))


class Grids:
    """Access to :py:data:`~.GRIDS`, full or coarse."""

    def __init__(self, coarse=False):
        self.coarse = coarse

    def __getitem__(self, name):
        return np.asarray(GRIDS[name][1 if self.coarse else 0], dtype=float)


def fig2a(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Populations and cavity field during one sequence, for both spins."""
    scenario = fluorescence.FluorescenceScenario.resonant(
        system, FLUOR_POWER, FLUOR_PULSE, fock_dim=fock_dim
    )
    tables = {}
    for spin in ("down", "up"):
        trajectory = fluorescence.sequence_trajectory(scenario, spin)
        tables[f"fig2a_{spin}.csv"] = trajectory.to_dataframe()
    return tables


def fig2b(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Photon-count distributions and per-pulse counts of the bright spin."""
    scenario = fluorescence.FluorescenceScenario.resonant(
        system, FLUOR_POWER, FLUOR_PULSE, fock_dim=fock_dim, dark_counts=dark_counts
    )
    outcome = fluorescence.fluorescence_fidelity(scenario)
    dist_up = statistics.poisson(outcome.N_ph_up, dark_counts)
    dist_down = statistics.poisson(outcome.N_ph_down, dark_counts)
    k_max = max(dist_up.k_max, dist_down.k_max)
    distributions = pd.DataFrame(
        {
            "k": np.arange(k_max + 1),
            "P_up": dist_up.padded(k_max),
            "P_down": dist_down.padded(k_max),
        }
    )
    counts = fluorescence.per_pulse_counts(scenario, "down", outcome.N_cyc)
    pulses = np.arange(counts.size)
    inset = pd.DataFrame(
        {"pulse": pulses, "counts": counts, "geometric": counts[0] * outcome.P_g**pulses}
    )
    return {"fig2b.csv": distributions, "fig2b_inset.csv": inset}


def _fluorescence_rg(Q, system, mapper, grids, fock_dim, dark_counts):
    frames = [
        fluorescence.sweep_rg(
            Q,
            Gamma,
            grids["t_fluor"],
            grids["rg_fluor"],
            system=system,
            P_in=FLUOR_POWER,
            fock_dim=fock_dim,
            dark_counts=dark_counts,
            mapper=mapper,
        )
        for Gamma in (0.1 * GHz, 1.0 * GHz)
    ]
    return pd.concat(frames, ignore_index=True)


def fig2c(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Fluorescence infidelity against ``r_g`` and pulse width, Q = 1e5."""
    frame = _fluorescence_rg(1e5, system, mapper, grids, fock_dim, dark_counts)
    return {"fig2c.csv": frame}


def fig2d(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Fluorescence infidelity against ``r_g`` and pulse width, Q = 2e5."""
    frame = _fluorescence_rg(2e5, system, mapper, grids, fock_dim, dark_counts)
    return {"fig2d.csv": frame}


def fig3a(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Reflection infidelity over laser power and pulse width."""
    sweep = reflection.sweep_power_pulse(
        system,
        grids["P_refl"],
        grids["t_refl"],
        fock_dim=fock_dim,
        dark_counts=dark_counts,
        mapper=mapper,
    )
    return {"fig3a.csv": sweep.surface[["P_in_pW", "t_pulse_us", "infidelity"]]}


def fig3b(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Minimum reflection infidelity against ``r_g``."""
    frame = reflection.sweep_rg_reflection(
        system,
        grids["rg_refl"],
        grids["P_box"],
        grids["t_box"],
        fock_dim=fock_dim,
        dark_counts=dark_counts,
        mapper=mapper,
    )
    return {"fig3b.csv": frame.rename(columns={"infidelity": "min_infidelity"})}


def fig3c(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Best reflection fidelity over a grid of Q and Gamma."""
    frame = reflection.sweep_Q_Gamma(
        system,
        grids["Q"],
        grids["Gamma"],
        grids["P_box"],
        grids["t_box"],
        fock_dim=fock_dim,
        dark_counts=dark_counts,
        mapper=mapper,
    )
    return {"fig3c.csv": frame}


def fig4a(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Infidelity of both protocols for a fixed shift of the transition."""
    shifts = grids["shift"] * system.Gamma
    columns = {"delta_omega_over_gamma": grids["shift"]}
    for protocol, column in PROTOCOL_COLUMNS:
        base = diffusion.default_scenario(protocol, system, fock_dim, dark_counts)
        frame = diffusion.infidelity_vs_detuning(protocol, base, shifts, mapper)
        columns[column] = frame["infidelity"].to_numpy()
    return {"fig4a.csv": pd.DataFrame(columns)}


def fig4b(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Infidelity of both protocols against the width of the spectral diffusion."""
    widths = grids["sd_width"] * system.Gamma / 2
    columns = {"two_gamma_sd_over_gamma": grids["sd_width"]}
    for protocol, column in PROTOCOL_COLUMNS:
        base = diffusion.default_scenario(protocol, system, fock_dim, dark_counts)
        frame = diffusion.diffusion_sweep(protocol, base, widths, mapper)
        columns[column] = frame["infidelity"].to_numpy()
    return {"fig4b.csv": pd.DataFrame(columns)}


def fig5a(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Optimized and cavity-locked reflection contrast against ``eta_cav``, and
    the best readout fidelity at a few of them."""
    study = reflection.eta_cav_study(system, grids["eta"], mapper=mapper)
    fidelity = reflection.eta_cav_fidelity(
        system,
        SPECTRUM_ETAS,
        grids["P_box"],
        grids["t_box"],
        fock_dim=fock_dim,
        dark_counts=dark_counts,
        mapper=mapper,
    )
    return {"fig5a.csv": study.contrast, "fig5a_fidelity.csv": fidelity}


def fig5b(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Reflection spectra around the optimal detunings for a few ``eta_cav``."""
    study = reflection.eta_cav_study(system, SPECTRUM_ETAS, spectra=True, mapper=mapper)
    return {f"fig5b_{eta:g}.csv": spectrum for eta, spectrum in study.spectra.items()}


def fig6(system, mapper, grids, fock_dim=4, dark_counts=0.0):
    """Reflection infidelity for pulses up to 200 us."""
    sweep = reflection.sweep_power_pulse(
        system,
        grids["P_long"],
        grids["t_long"],
        fock_dim=fock_dim,
        dark_counts=dark_counts,
        mapper=mapper,
    )
    return {
        "fig6.csv": sweep.surface[["P_in_pW", "t_pulse_us", "infidelity"]],
        "fig6_min.csv": sweep.minimum,
    }


Figure = namedtuple("Figure", ["function", "preset"])

FIGURES = {
    "fig2a": Figure(fig2a, "fig2a"),
    "fig2b": Figure(fig2b, "table3"),
    "fig2c": Figure(fig2c, "table3"),
    "fig2d": Figure(fig2d, "table3"),
    "fig3a": Figure(fig3a, "table3"),
    "fig3b": Figure(fig3b, "table3"),
    "fig3c": Figure(fig3c, "table3"),
    "fig4a": Figure(fig4a, "table3"),
    "fig4b": Figure(fig4b, "table3"),
    "fig5a": Figure(fig5a, "table3"),
    "fig5b": Figure(fig5b, "table3"),
    "fig6": Figure(fig6, "table3"),
}


def make_figure(name, system, mapper=map, coarse=False, fock_dim=4, dark_counts=0.0):
    """Run the study ``name``.

    :param name: Key of :py:data:`~.FIGURES`.
    :type name: str
    :param system: Physical parameters.
    :type system: :py:class:`~.SystemParams`
    :param mapper: Function with the signature of the builtin ``map``.
    :param coarse: Use the coarse grids.
    :type coarse: bool

    :returns: File names and tables.
    :rtype: dict
    """
    if name not in FIGURES:
        raise ConfigError(f"Unknown figure {name} (use one of {', '.join(FIGURES)})")
    logger.info(f"Computing {name}{' on coarse grids' if coarse else ''}")
    return FIGURES[name].function(
        system, mapper, Grids(coarse), fock_dim=fock_dim, dark_counts=dark_counts
    )
