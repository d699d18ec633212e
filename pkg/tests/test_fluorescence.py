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

from spinreadout import fluorescence as fl
from spinreadout.errors import InvalidParameterError
from spinreadout.model import (
    TWO_PI,
    SystemParams,
    derive_rates,
    purcell_rate_analytic,
)


@pytest.fixture(scope="module")
def scenario():
    return fl.FluorescenceScenario.resonant(SystemParams(), 100e-12, 10e-9)


def test_scenario():

    with pytest.raises(InvalidParameterError):
        fl.FluorescenceScenario(t_wait_mode="forever")

    with pytest.raises(InvalidParameterError):
        fl.FluorescenceScenario(bright_spin="sideways")

    with pytest.raises(InvalidParameterError):
        fl.FluorescenceScenario(n_cyc=0)

    up = fl.FluorescenceScenario.resonant(SystemParams(), 1e-12, 1e-9, spin="up")
    assert up.bright_spin == "up"


def test_cycles():

    assert fl.cycle_count(0.9975) == 400
    assert fl.cycle_count(0.0) == 1
    assert fl.cycle_count(1.0) == fl.MAX_CYCLES

    assert fl.geometric_sum(0.5, 3) == pytest.approx(1.75)
    assert fl.geometric_sum(1.0, 10) == 10
    assert fl.geometric_sum(1 - 1e-12, 10) == pytest.approx(10)

    assert fl.system_efficiency(SystemParams()) == pytest.approx(0.1375)


def test_purcell_rates():

    # Bad-cavity limit
    system = SystemParams(Q=1e5, g_sim=TWO_PI * 100e6, Gamma=SystemParams.Gamma0)
    scenario = fl.FluorescenceScenario.resonant(system, 100e-12, 10e-9)
    rates = fl.purcell_rates(scenario)
    expected = purcell_rate_analytic(system, derive_rates(system))
    assert rates.gamma_on == pytest.approx(expected, rel=0.05)

    # The detuned transition decays slower
    assert rates.gamma_off < rates.gamma_on
    assert 0 < rates.beta_cav < 1


def test_run_sequence(scenario):

    # No light, no excitation
    dark = scenario.replace(drive=scenario.drive.replace(P_in=0.0), t_wait=1e-9)
    P_e, P_g = fl.run_sequence(dark, "down")
    assert P_e == pytest.approx(0, abs=1e-12)
    assert P_g == pytest.approx(1)

    P_e, P_g = fl.run_sequence(scenario, "down")
    P_e_dark, _ = fl.run_sequence(scenario, "up")
    assert 0 < P_e <= 1
    assert P_e_dark < P_e
    # Little optical pumping per sequence
    assert 0.99 < P_g < 1

    # Collection window of seven lifetimes
    rates = fl.purcell_rates(scenario)
    assert fl.wait_time(scenario) == pytest.approx(7 / rates.gamma_off)
    fast = scenario.replace(t_wait_mode="seven_tau_on")
    assert fl.wait_time(fast) == pytest.approx(7 / rates.gamma_on)
    assert fl.wait_time(scenario.replace(t_wait=3e-9)) == 3e-9


def test_fluorescence_fidelity(scenario):

    outcome = fl.fluorescence_fidelity(scenario)
    assert outcome.N_ph_down > outcome.N_ph_up
    assert outcome.result.bright_spin == "down"
    assert outcome.eta_sys == pytest.approx(0.1375)
    assert outcome.N_cyc == fl.cycle_count(outcome.P_g)
    assert outcome.total_time == pytest.approx(outcome.N_cyc * outcome.t_seq)
    assert outcome.t_seq == pytest.approx(10e-9 + outcome.t_wait)

    fields = outcome.to_dict()
    assert fields["infidelity"] == pytest.approx(1 - fields["result_fidelity"])
    assert "result_threshold_M" in fields

    # Frozen readouts keep the window and the repetitions
    frozen = fl.frozen_readout(scenario)
    assert frozen.n_cyc == outcome.N_cyc
    assert frozen.t_wait == pytest.approx(outcome.t_wait)


def test_per_pulse_counts(scenario):

    counts = fl.per_pulse_counts(scenario, "down", 20)
    assert counts.size == 20
    assert np.all(np.diff(counts) <= 0)
    assert counts[0] > 0


def test_sequence_trajectory(scenario):

    trajectory = fl.sequence_trajectory(scenario, "down", n_points=50)
    assert trajectory.times.size == 99
    assert np.all(np.diff(trajectory.times) > 0)
    assert trajectory.times[-1] == pytest.approx(10e-9 + fl.wait_time(scenario))

    frame = trajectory.to_dataframe()
    populations = frame[["P_00", "P_11", "P_22", "P_33"]].sum(axis=1)
    assert np.allclose(populations, 1, atol=1e-8)
    # Excited during the pulse, back in the ground state at the end
    assert frame["P_22"].max() > 0.01
    assert frame["P_22"].iloc[-1] < 1e-2


def test_sweep_rg():

    with pytest.raises(InvalidParameterError):
        fl.sweep_rg(2e5, TWO_PI * 0.1e9, [], [1])

    frame = fl.sweep_rg(2e5, TWO_PI * 0.1e9, [10e-9], [1.0, 10.0])
    assert list(frame.columns) == ["r_g", "t_pulse_ns", "Q", "gamma_GHz", "infidelity"]
    assert frame["t_pulse_ns"].tolist() == pytest.approx([10, 10])
    assert frame["gamma_GHz"].tolist() == pytest.approx([0.1, 0.1])
    # A weaker spin-flipping coupling makes a better readout
    assert frame["infidelity"].iloc[1] < frame["infidelity"].iloc[0]


def test_fluorescence_headline(scenario):

    outcome = fl.fluorescence_fidelity(scenario)
    assert outcome.result.fidelity == pytest.approx(0.9996, abs=3e-4)
    assert outcome.total_time == pytest.approx(179e-6, rel=0.15)

    fast = fl.fluorescence_fidelity(scenario.replace(t_wait_mode="seven_tau_on"))
    assert fast.result.fidelity == pytest.approx(0.9997, abs=3e-4)
    assert fast.total_time == pytest.approx(8.7e-6, rel=0.15)

    # Photon truncation is converged
    assert fl.headline_convergence(scenario).delta < 1e-4


def test_per_pulse_geometric_decay(scenario):

    outcome = fl.fluorescence_fidelity(scenario)
    counts = fl.per_pulse_counts(scenario, "down")
    pulses = np.arange(counts.size)
    assert counts.size == outcome.N_cyc
    assert np.allclose(counts / counts[0], outcome.P_g**pulses, rtol=0.02)


def test_sequence_counts_whole_manifold(scenario):

    # A short window leaves population in the excited state; it still counts
    # as not pumped away
    fast = scenario.replace(t_wait_mode="seven_tau_on")
    _, P_g = fl.run_sequence(fast, "down")
    final = fl.sequence_trajectory(fast, "down", n_points=20).to_dataframe().iloc[-1]
    assert final["P_22"] > 1e-4
    assert P_g == pytest.approx(final["P_00"] + final["P_22"], abs=1e-8)
    assert P_g > final["P_00"]


def test_cycle_survival(scenario):

    P_g = fl.cycle_survival(scenario, "down")
    assert 0.99 < P_g < 1
    assert fl.repetitions(scenario) == fl.cycle_count(P_g)

    train = fl.excited_train(scenario, "down", 50)
    assert train[0] == pytest.approx(fl.run_sequence(scenario, "down")[0])
    assert train[49] / train[0] == pytest.approx(P_g**49, rel=0.02)

    # Fixed repetitions are kept
    assert fl.repetitions(scenario.replace(n_cyc=7)) == 7

    # Nothing to fit without light
    dark = scenario.replace(drive=scenario.drive.replace(P_in=0.0), t_wait=1e-9)
    assert fl.cycle_survival(dark, "down") == pytest.approx(1)


def test_fidelity_decreases_with_pulse_width(scenario):

    widths = np.array([10, 30, 100, 300, 1000]) * 1e-9
    fidelities = [
        fl.fluorescence_fidelity(
            scenario.replace(drive=scenario.drive.replace(t_pulse=t_pulse))
        ).result.fidelity
        for t_pulse in widths
    ]
    assert np.all(np.diff(fidelities) <= 1e-6)


def test_coupling_phase_sign(scenario):

    mirrored = scenario.system.replace(phi=-scenario.system.phi)
    outcome = fl.fluorescence_fidelity(scenario)
    other = fl.fluorescence_fidelity(scenario.replace(system=mirrored))
    assert other.result.fidelity == pytest.approx(outcome.result.fidelity, abs=1e-6)
    assert other.N_cyc == outcome.N_cyc
