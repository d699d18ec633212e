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
import argparse

import pytest

from spinreadout import argparse as rargparse
from spinreadout.errors import ConfigError
from spinreadout.model import TWO_PI, SystemParams, atomic_detuning_for


def _namespace(**changes):
    fields = dict(
        num_workers=1,
        chunk_size=1,
        max_tasks_per_child=1,
        fock_dim=4,
        grid_points=200,
        dark_counts=0.0,
    )
    fields.update(changes)
    return argparse.Namespace(**fields)


def test_check_args():

    # Test warning for too many CPUs
    with pytest.warns(Warning):
        rargparse._check_args(_namespace(num_workers=10000))

    rargparse._check_args(_namespace())

    for changes in (
        {"num_workers": 0},
        {"chunk_size": 0},
        {"fock_dim": 1},
        {"grid_points": 100},
        {"dark_counts": -1.0},
    ):
        with pytest.raises(ConfigError):
            rargparse._check_args(_namespace(**changes))


def test_get_args(capsys, tmp_path, monkeypatch):

    monkeypatch.delenv("READOUT_CACHE_DIR", raising=False)

    # No command
    with pytest.raises(ConfigError):
        rargparse.get_args([])

    # Unknown command
    with pytest.raises(ConfigError):
        rargparse.get_args(["bubu"])

    # Help
    with pytest.raises(SystemExit):
        rargparse.get_args(["-h"])
    assert "General options" in capsys.readouterr().out

    # Help of a command
    with pytest.raises(SystemExit):
        rargparse.get_args(["figure", "-h"])
    assert "Figure options" in capsys.readouterr().out

    args = rargparse.get_args(["fluorescence"])
    assert args.command == "fluorescence"
    assert args.fock_dim == 4
    assert args.grid_points == 200
    assert args.t_wait_mode == "seven_tau_off"
    assert args.cache_dir == ".readout_cache"
    assert args.preset is None
    assert args.Q is None

    # Options of other commands are not available
    with pytest.raises(ConfigError):
        rargparse.get_args(["fluorescence", "--probe-power-pw", "1"])

    # Dashed and config-key forms are the same option
    args = rargparse.get_args(["reflection", "--t-pulse-ns", "20", "--gamma_GHz", "1"])
    assert args.t_pulse_ns == 20
    assert args.gamma_GHz == 1

    args = rargparse.get_args(["figure", "fig3a", "--coarse"])
    assert args.name == "fig3a"
    assert args.coarse is True

    # Config file, command line wins
    config = tmp_path / "readout.conf"
    config.write_text("Q = 1e5\nfock-dim = 5\nt_pulse_ns = 30\n")
    args = rargparse.get_args(["fluorescence", "-c", str(config), "--fock-dim", "6"])
    assert args.Q == 1e5
    assert args.t_pulse_ns == 30
    assert args.fock_dim == 6

    # Unknown keys are errors
    config.write_text("bubu = 1\n")
    with pytest.raises(ConfigError):
        rargparse.get_args(["fluorescence", "-c", str(config)])

    # Environment
    monkeypatch.setenv("READOUT_CACHE_DIR", str(tmp_path / "cache"))
    assert rargparse.get_args(["validate"]).cache_dir == str(tmp_path / "cache")

    # Checks
    with pytest.raises(ConfigError):
        rargparse.get_args(["fluorescence", "--fock-dim", "1"])


def test_physical_values():

    args = rargparse.get_args(["fluorescence"])
    values = rargparse.physical_values(args, command="fluorescence")
    assert values["Q"] == 2e5
    assert values["P_in_pW"] == 100
    assert values["t_pulse_ns"] == 10

    # Preset from the caller, unless the user chose one
    assert rargparse.physical_values(args, preset="fig2a")["Q"] == 1e5
    args = rargparse.get_args(["fluorescence", "--preset", "table3"])
    assert rargparse.physical_values(args, preset="fig2a")["Q"] == 2e5

    # Explicit values win over presets
    args = rargparse.get_args(["reflection", "--preset", "fig2a", "--Q", "3e5"])
    values = rargparse.physical_values(args, command="reflection")
    assert values["Q"] == 3e5
    assert values["gamma_GHz"] == 1
    assert values["t_pulse_ns"] == 47e3


def test_build_system_and_drive():

    args = rargparse.get_args(
        ["fluorescence", "--gamma-ghz", "1", "--lambda-nm", "1300", "--g-sim-mhz", "200"]
    )
    system = rargparse.build_system(args)
    assert system.Gamma == pytest.approx(TWO_PI * 1e9)
    assert system.lambda_0 == pytest.approx(1300e-9)
    assert system.g_sim == pytest.approx(TWO_PI * 200e6)
    # Untouched values are the defaults
    assert system.eta_QE == SystemParams().eta_QE
    assert system.Gamma0 == SystemParams().Gamma0

    drive = rargparse.build_drive(args, "fluorescence")
    assert drive.P_in == pytest.approx(100e-12)
    assert drive.t_pulse == pytest.approx(10e-9)
    assert drive.delta_c == 0
    assert drive.delta_a == pytest.approx(atomic_detuning_for(system, "A"))

    assert rargparse.detunings_given(args) is False
    args = rargparse.get_args(
        ["reflection", "--delta-a-ghz", "0.5", "--delta-c-ghz", "-0.5"]
    )
    assert rargparse.detunings_given(args) is True
    drive = rargparse.build_drive(args, "reflection")
    assert drive.delta_a == pytest.approx(TWO_PI * 0.5e9)
    assert drive.delta_c == pytest.approx(-TWO_PI * 0.5e9)


def test_validate():

    assert rargparse.validate(rargparse.get_args(["validate"])) == []

    args = rargparse.get_args(["validate", "--gamma-ghz", "1e-4"])
    problems = rargparse.validate(args)
    assert len(problems) == 1
    assert "Gamma >= Gamma0" in problems[0]

    problems = rargparse.validate(rargparse.get_args(["validate", "--eta-cav", "1.5"]))
    assert any("eta_cav" in problem for problem in problems)

    problems = rargparse.validate(rargparse.get_args(["fluorescence", "--Q", "inf"]))
    assert any("Q must be finite" in problem for problem in problems)

    problems = rargparse.validate(
        rargparse.get_args(["fluorescence", "--t-pulse-ns", "0", "--p-in-pw", "-1"])
    )
    assert len(problems) == 2
    assert any("t_pulse" in problem for problem in problems)
    assert any("P_in" in problem for problem in problems)
