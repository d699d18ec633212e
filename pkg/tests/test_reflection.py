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
import pandas as pd
import pytest

from spinreadout import reflection as rf
from spinreadout.errors import InvalidParameterError
from spinreadout.model import (
    TWO_PI,
    DriveParams,
    SystemParams,
    atomic_detuning_for,
    derive_rates,
)


@pytest.fixture(scope="module")
def empty_cavity():
    return SystemParams(g_sim=0.0)


@pytest.fixture(scope="module")
def narrow_cavity():
    # Narrow cavity and negligible spin-flipping coupling: transition A is
    # isolated
    return SystemParams(Q=4e6, r_g=1e3)


def test_scenario():

    with pytest.raises(InvalidParameterError):
        rf.ReflectionScenario(t_pulse=0)

    with pytest.raises(InvalidParameterError):
        rf.ReflectionScenario(grid_points=10)

    scenario = rf.ReflectionScenario()
    assert scenario.optimized
    with pytest.raises(InvalidParameterError):
        scenario.drive

    resolved = scenario.replace(delta_a=1.0, delta_c=2.0)
    expected = DriveParams(P_in=3.8e-12, delta_a=1.0, delta_c=2.0, t_pulse=47e-6)
    assert resolved.drive == expected


def test_reflectivity_analytic(empty_cavity):

    # Critically coupled empty cavity on resonance: dark port
    assert abs(rf.reflectivity_analytic(empty_cavity, 0.0, 0.0)) == pytest.approx(
        0, abs=1e-12
    )

    # Far from the cavity: mirror
    kappa = derive_rates(empty_cavity).kappa
    far = rf.reflectivity_analytic(empty_cavity, 0.0, 1e3 * kappa)
    assert abs(far) ** 2 == pytest.approx(1, abs=1e-5)


def test_reflectivity_numeric(empty_cavity, narrow_cavity):

    drive = DriveParams(P_in=rf.PROBE_POWER)
    assert rf.steady_field(empty_cavity, drive, "down") != 0

    with pytest.raises(InvalidParameterError):
        rf.steady_field(empty_cavity, DriveParams(), "down")

    scenario = rf.ReflectionScenario(
        system=narrow_cavity, delta_a=0.0, delta_c=0.0, fock_dim=2
    )
    for spin in ("up", "down"):
        assert 0 <= rf.reflectivity_numeric(scenario, spin) <= 1 + 1e-6

    # Weak-drive agreement with the single-transition formula
    kappa = derive_rates(narrow_cavity).kappa
    for offset in (-1, 0, 1):
        for delta_c in (-kappa, 0, kappa):
            delta_a = atomic_detuning_for(narrow_cavity, "A", offset * kappa)
            assert rf.isolated_transition(narrow_cavity, delta_a, delta_c, "down")
            discrepancy = rf.weak_drive_discrepancy(
                narrow_cavity, delta_a, delta_c, "down", P_probe=1e-14
            )
            assert abs(discrepancy) < 1e-2

    # The table parameters are not isolated enough
    system = SystemParams()
    delta_a = atomic_detuning_for(system, "A")
    assert rf.weak_drive_discrepancy(system, delta_a, 0.0, "down") is None


def test_reflected_counts(empty_cavity):

    rates = derive_rates(empty_cavity)
    t_pulse = 1e-6

    # Dark port
    scenario = rf.ReflectionScenario(
        system=empty_cavity,
        P_in=1e-12,
        t_pulse=t_pulse,
        delta_a=0.0,
        delta_c=0.0,
        fock_dim=2,
    )
    full = empty_cavity.eta_det * DriveParams(P_in=1e-12).epsilon(rates) * t_pulse
    assert rf.reflected_counts(scenario, "down") < 1e-3 * full

    # Mirror
    mirror = scenario.replace(delta_c=100 * rates.kappa)
    assert rf.reflected_counts(mirror, "down") == pytest.approx(full, rel=1e-3)

    # One trajectory for several widths
    curve = rf.reflected_count_curve(mirror, "down", [t_pulse / 4, t_pulse / 2, t_pulse])
    assert np.all(np.diff(curve.counts) > 0)
    assert curve.counts[-1] == pytest.approx(full, rel=1e-3)
    assert curve.grid_delta <= rf.GRID_TOL
    assert curve.grid_points > 2 * rf.MIN_GRID_POINTS

    # No light
    assert rf.reflected_counts(scenario.replace(P_in=0.0), "down") == 0

    with pytest.raises(InvalidParameterError):
        rf.reflected_count_curve(scenario, "down", [-1.0])


def test_reflection_fidelity_short_pulse():

    # No time to collect photons
    system = SystemParams()
    scenario = rf.ReflectionScenario(
        system=system,
        t_pulse=1e-12,
        delta_a=atomic_detuning_for(system, "A"),
        delta_c=0.0,
        fock_dim=2,
    )
    outcome = rf.reflection_fidelity(scenario)
    assert outcome.result.fidelity == pytest.approx(0.5, abs=1e-3)
    assert outcome.cooperativity == pytest.approx(1.2, abs=0.05)
    assert outcome.contrast == pytest.approx(abs(outcome.R_up - outcome.R_down))
    assert outcome.to_dict()["infidelity"] == pytest.approx(1 - outcome.result.fidelity)


def test_reflection_spectrum(empty_cavity):

    kappa = derive_rates(empty_cavity).kappa
    offsets = np.linspace(-2 * kappa, 2 * kappa, 5)
    spectrum = rf.reflection_spectrum(empty_cavity, 0.0, 0.0, offsets)
    assert list(spectrum.columns) == [
        "detuning_GHz",
        "R_up",
        "R_up_analytic",
        "R_down",
        "R_down_analytic",
        "transition_A_GHz",
    ]
    # Lorentzian dip at the cavity
    assert spectrum["R_down"].iloc[2] == pytest.approx(0, abs=1e-4)
    assert np.allclose(spectrum["R_down"], spectrum["R_down_analytic"], atol=1e-3)
    assert np.allclose(spectrum["R_up"], spectrum["R_down"], atol=1e-6)


@pytest.fixture(scope="module")
def optimum():
    return rf.optimize_detunings(SystemParams())


@pytest.mark.slow
def test_optimize_detunings(optimum):

    system = SystemParams()
    aligned = rf.aligned_contrast(system)
    assert optimum.contrast >= aligned.contrast - 1e-9
    assert optimum.contrast == pytest.approx(
        rf.reflection_contrast(system, optimum.delta_a, optimum.delta_c), abs=1e-9
    )

    with pytest.raises(InvalidParameterError):
        rf.optimize_detunings(system, P_probe=1e-9)


@pytest.mark.slow
def test_reflection_headline(optimum):

    scenario = rf.ReflectionScenario(
        system=SystemParams(), delta_a=optimum.delta_a, delta_c=optimum.delta_c
    )
    outcome = rf.reflection_fidelity(scenario)
    assert outcome.result.fidelity == pytest.approx(0.996, abs=3e-3)

    fast = rf.reflection_fidelity(scenario.replace(P_in=16e-12, t_pulse=8.7e-6))
    assert fast.result.fidelity == pytest.approx(0.990, abs=3e-3)


@pytest.mark.slow
def test_long_pulses(optimum):

    P_grid = np.array([23.4]) * 1e-12
    t_grid = np.geomspace(2, 50, 25) * 1e-6
    sweep = rf.sweep_power_pulse(
        SystemParams(), P_grid, t_grid, detunings=(optimum.delta_a, optimum.delta_c)
    )
    best = sweep.minimum.iloc[0]
    assert best["t_pulse_us"] == pytest.approx(11, rel=0.25)
    assert 1 - best["infidelity"] == pytest.approx(0.989, abs=3e-3)


@pytest.mark.slow
def test_rg_saturation():

    P_grid = np.geomspace(1, 20, 4) * 1e-12
    t_grid = np.geomspace(2, 50, 6) * 1e-6
    frame = rf.sweep_rg_reflection(SystemParams(), [5, 10], P_grid, t_grid)
    infidelity = frame["infidelity"].to_numpy()
    assert infidelity[1] == pytest.approx(infidelity[0], rel=0.2)


def test_sample_times():

    kappa = derive_rates(SystemParams()).kappa
    t_max = 50e-6
    fine, coarse = rf._sample_times(t_max, kappa, 200, 400, [t_max])
    assert fine[0] == 0 and fine[-1] == t_max
    assert np.all(np.diff(fine) > 0)
    assert coarse[0] and coarse[-1]

    # Before the knee the step doubles from one octave to the next, and the
    # coarse grid takes every other sample
    early = fine[(fine >= fine[1]) & (fine < rf.KNEE_FRACTION * t_max)]
    steps = np.diff(early)
    octave = np.log2(steps / steps[0])
    assert np.allclose(octave, np.round(octave), atol=1e-6)
    assert np.all(np.diff(np.round(octave)) >= 0)
    assert np.round(octave[-1]) >= 10
    assert early.size < 4 * 200

    coarse_early = fine[coarse & (fine >= fine[1]) & (fine < rf.KNEE_FRACTION * t_max)]
    coarse_octave = np.log2(np.diff(coarse_early) / steps[0])
    assert np.allclose(coarse_octave, np.round(coarse_octave), atol=1e-6)
    assert np.min(coarse_octave) == pytest.approx(1)


def test_converged_grid(empty_cavity):

    rates = derive_rates(empty_cavity)
    scenario = rf.ReflectionScenario(
        system=empty_cavity,
        P_in=1e-12,
        t_pulse=1e-6,
        delta_a=0.0,
        delta_c=100 * rates.kappa,
        fock_dim=2,
    )
    converged = rf.converged_grid(scenario)
    assert converged.grid_points >= scenario.grid_points
    assert converged.uniform_points >= scenario.uniform_points

    # The converged density needs no further doubling
    curve = rf.reflected_count_curve(converged, "down")
    assert curve.early_points == converged.grid_points
    assert curve.late_points == converged.uniform_points
    assert curve.grid_delta <= rf.GRID_TOL

    with pytest.raises(InvalidParameterError):
        scenario.replace(uniform_points=0)


def test_power_pulse_box():

    system = SystemParams()
    detunings = (atomic_detuning_for(system, "A"), 0.0)
    for P_grid, t_grid in (
        ([200e-12], [1e-6]),
        ([0.01e-12], [1e-6]),
        ([1e-12], [300e-6]),
        ([1e-12], [0.0]),
        ([], [1e-6]),
    ):
        with pytest.raises(InvalidParameterError):
            rf.sweep_power_pulse(system, P_grid, t_grid, detunings=detunings)

    with pytest.raises(InvalidParameterError):
        rf.sweep_Q_Gamma(system, [2e5], [TWO_PI * 0.1e9], [1e-9], [1e-6])


def test_spin_swap_symmetry():

    # Flipping both splittings exchanges the spin labels
    system = SystemParams()
    flipped = system.replace(delta_g=-system.delta_g, delta_e=-system.delta_e)
    scenario = rf.ReflectionScenario(
        system=system,
        P_in=3.8e-12,
        t_pulse=2e-6,
        delta_a=atomic_detuning_for(system, "A"),
        delta_c=0.0,
        fock_dim=2,
    )
    outcome = rf.reflection_fidelity(scenario)
    swapped = rf.reflection_fidelity(scenario.replace(system=flipped))
    assert swapped.N_ph_up == pytest.approx(outcome.N_ph_down, rel=1e-6)
    assert swapped.N_ph_down == pytest.approx(outcome.N_ph_up, rel=1e-6)
    assert swapped.result.fidelity == pytest.approx(outcome.result.fidelity, abs=1e-6)
    assert swapped.result.bright_spin != outcome.result.bright_spin


def test_mirrored_detunings():

    system = SystemParams()
    kappa = derive_rates(system).kappa
    laser = atomic_detuning_for(system, "A", 0.7 * kappa)
    original = rf.Detunings(laser, 1.3 * kappa, 0)
    mirror = rf.mirrored_detunings(system, original)
    assert rf.cavity_offset(system, mirror.delta_a, mirror.delta_c) == pytest.approx(
        -rf.cavity_offset(system, original.delta_a, original.delta_c)
    )
    assert mirror.contrast == pytest.approx(
        rf.reflection_contrast(system, mirror.delta_a, mirror.delta_c)
    )
    back = rf.mirrored_detunings(system, mirror)
    assert back.delta_a == pytest.approx(original.delta_a)
    assert back.delta_c == pytest.approx(original.delta_c)

    # Locked to transition A whatever the laser
    aligned = atomic_detuning_for(system, "A", 0.4 * kappa)
    assert rf.cavity_offset(system, aligned, 0.4 * kappa) == pytest.approx(0, abs=1)


def test_best_readout():

    system = SystemParams()
    kappa = derive_rates(system).kappa
    good = rf.Detunings(atomic_detuning_for(system, "A"), 0.0, 0)
    # Far from the cavity both spins see a mirror
    far = rf.Detunings(atomic_detuning_for(system, "A"), 100 * kappa, 0)
    best = rf.best_readout(
        system, [3.8e-12], [1e-6, 2e-6], fock_dim=2, candidates=(far, good)
    )
    assert best["delta_c_GHz"] == 0
    assert best["t_pulse_us"] == pytest.approx(2)
    assert best["infidelity"] < 0.4


@pytest.mark.slow
def test_readout_candidates(optimum):

    system = SystemParams()
    candidates = rf.readout_candidates(system)
    assert 2 <= len(candidates) <= rf.READOUT_OPTIMA + 1
    assert candidates[0] == optimum
    mirror = rf.mirrored_detunings(system, optimum)
    assert candidates[-1].delta_a == pytest.approx(mirror.delta_a)
    assert candidates[-1].delta_c == pytest.approx(mirror.delta_c)
    assert all(c.contrast <= optimum.contrast + 1e-9 for c in candidates)


@pytest.mark.slow
def test_saturation_with_long_pulses(optimum):

    P_grid = np.array([1, 2, 3.8, 8]) * 1e-12
    t_grid = np.geomspace(20, 200, 8) * 1e-6
    sweep = rf.sweep_power_pulse(
        SystemParams(), P_grid, t_grid, detunings=(optimum.delta_a, optimum.delta_c)
    )
    assert 1 - sweep.surface["infidelity"].min() == pytest.approx(0.997, abs=2e-3)

    # Lower powers need longer pulses
    widths = sweep.minimum.sort_values("P_in_pW")["t_pulse_us"].to_numpy()
    assert np.all(np.diff(widths) <= 0)


@pytest.mark.slow
def test_sweep_Q_Gamma():

    P_grid = np.array([1, 3.8, 16]) * 1e-12
    t_grid = np.geomspace(2, 50, 8) * 1e-6
    frame = rf.sweep_Q_Gamma(
        SystemParams(), [2e4, 2e5], [TWO_PI * 0.1e9, TWO_PI * 1e9], P_grid, t_grid
    )
    assert len(frame) == 4

    weak = frame[frame["cooperativity"] < 0.1]
    assert len(weak) and np.all(weak["fidelity"] < 0.9)

    for _, cells in frame.groupby("gamma_GHz"):
        fidelities = cells.sort_values("Q")["fidelity"].to_numpy()
        assert np.all(np.diff(fidelities) > 0)

    headline = frame[(frame["Q"] == 2e5) & np.isclose(frame["gamma_GHz"], 0.1)]
    assert headline["fidelity"].iloc[0] == pytest.approx(0.996, abs=3e-3)


@pytest.mark.slow
def test_eta_cav_study():

    etas = [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7, 0.8]
    contrast = rf.eta_cav_study(SystemParams(), etas).contrast
    assert np.all(contrast["contrast_opt"] >= contrast["contrast_aligned"] - 1e-9)
    assert np.allclose(contrast["aligned_cavity_offset_GHz"], 0, atol=1e-6)

    above = contrast[contrast["eta_cav"] >= 0.5]["contrast_opt"].to_numpy()
    assert np.all(np.diff(above) > 0)

    # The optimal cavity leaves transition A once, near critical coupling
    switch = rf.regime_switch(contrast)
    assert switch is not None
    assert 0.4 <= switch[0] and switch[1] <= 0.55
    assert switch[2] > switch[3]
    assert set(contrast[contrast["eta_cav"] <= switch[0]]["regime"]) == {"aligned"}
    assert set(contrast[contrast["eta_cav"] >= switch[1]]["regime"]) == {"dispersive"}


@pytest.mark.slow
def test_aligned_contrast_continuity():

    etas = np.linspace(0.4, 0.6, 11)
    values = [
        rf.aligned_contrast(SystemParams(eta_cav=float(eta))).contrast for eta in etas
    ]
    assert np.max(np.abs(np.diff(values))) < 0.05


@pytest.mark.slow
def test_eta_cav_fidelity():

    P_grid = np.array([1, 3.8, 8]) * 1e-12
    t_grid = np.geomspace(10, 50, 5) * 1e-6
    frame = rf.eta_cav_fidelity(SystemParams(), [0.3, 0.5, 0.8], P_grid, t_grid)
    assert np.all(frame["fidelity"] > 0.996 - 3e-3)


def test_regime_switch():

    contrast = pd.DataFrame(
        {
            "eta_cav": [0.6, 0.3, 0.4, 0.5],
            "cavity_offset_GHz": [0.9, 0.0, 0.01, 0.8],
            "regime": ["dispersive", "aligned", "aligned", "dispersive"],
        }
    )
    eta_before, eta_after, jump, other = rf.regime_switch(contrast)
    assert (eta_before, eta_after) == (0.4, 0.5)
    assert jump == pytest.approx(0.79)
    assert other == pytest.approx(0.1)

    assert rf.regime_switch(contrast.assign(regime="aligned")) is None
