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
"""In this module we have all the functions that have to do with user-supplied
arguments: command-line flags, config files, presets and their validation.

The main function is :py:func:`~.get_args`. It processes the arguments in two
passes: the first one finds out which command was requested, the second one
adds the options of that command and parses everything. Options are defined in
:py:func:`~._init_argparse` (options common to all the commands) and in
:py:func:`~._add_command_options`. We do not use Python's argparse, but
``configargparse``, so that every option can also be set in a config file
(``-c``), and the cache directory with the environment variable
``READOUT_CACHE_DIR``.

Physical parameters are listed in :py:data:`~.PHYSICAL_KEYS`. Each of them can be
given with its config key (``--t_pulse_ns``) or with the equivalent dashed flag
(``--t-pulse-ns``). Values are resolved with the precedence: command-line flag,
config file, preset (:py:data:`~.PRESETS`), built-in default. The functions
:py:func:`~.build_system`, :py:func:`~.build_drive` and friends turn the parsed
arguments into the objects of :py:mod:`~.model`, and :py:func:`~.validate` checks
them without running any computation.

"""

import os
import sys
import warnings
from argparse import RawTextHelpFormatter
from collections import namedtuple

import configargparse
import numpy as np

from spinreadout.errors import ConfigError
from spinreadout.model import TWO_PI, DriveParams, SystemParams, atomic_detuning_for

COMMANDS = ("fluorescence", "reflection", "diffusion", "figure", "validate")

# Physical parameter: attribute of SystemParams/DriveParams and factor to SI
PhysicalKey = namedtuple("PhysicalKey", ["target", "attribute", "factor", "help"])

PHYSICAL_KEYS = {
    "Q": PhysicalKey("system", "Q", 1.0, "Cavity quality factor."),
    "lambda_nm": PhysicalKey("system", "lambda_0", 1e-9, "Cavity wavelength, in nm."),
    "gamma0_kHz": PhysicalKey(
        "system", "Gamma0", TWO_PI * 1e3, "Radiative linewidth Gamma0/2pi, in kHz."
    ),
    "gamma_GHz": PhysicalKey(
        "system", "Gamma", TWO_PI * 1e9, "Total optical linewidth Gamma/2pi, in GHz."
    ),
    "r_g": PhysicalKey(
        "system", "r_g", 1.0, "Ratio of parallel to perpendicular coupling."
    ),
    "g_sim_MHz": PhysicalKey(
        "system", "g_sim", TWO_PI * 1e6, "Simulated coupling g/2pi, in MHz."
    ),
    "eta_QE": PhysicalKey("system", "eta_QE", 1.0, "Quantum efficiency of the emitter."),
    "eta_cav": PhysicalKey(
        "system", "eta_cav", 1.0, "Cavity-waveguide coupling efficiency."
    ),
    "eta_det": PhysicalKey("system", "eta_det", 1.0, "Detection efficiency."),
    "delta_g_GHz": PhysicalKey(
        "system", "delta_g", TWO_PI * 1e9, "Ground-state half splitting /2pi, in GHz."
    ),
    "delta_e_GHz": PhysicalKey(
        "system", "delta_e", TWO_PI * 1e9, "Excited-state half splitting /2pi, in GHz."
    ),
    "phi_rad": PhysicalKey("system", "phi", 1.0, "Phase of the perpendicular coupling."),
    "P_in_pW": PhysicalKey("drive", "P_in", 1e-12, "Laser power at the cavity, in pW."),
    "delta_a_GHz": PhysicalKey(
        "drive", "delta_a", TWO_PI * 1e9, "Bare atomic detuning /2pi, in GHz."
    ),
    "delta_c_GHz": PhysicalKey(
        "drive", "delta_c", TWO_PI * 1e9, "Cavity detuning /2pi, in GHz."
    ),
    "t_pulse_ns": PhysicalKey("drive", "t_pulse", 1e-9, "Pulse width, in ns."),
}

# Values in the units of PHYSICAL_KEYS
PRESETS = {
    "table3": {"Q": 2e5, "gamma_GHz": 0.1, "r_g": 10.0},
    "fig2a": {"Q": 1e5, "gamma_GHz": 1.0, "r_g": 10.0},
}

DEFAULT_PRESET = "table3"

# Laser settings used when they are not given
COMMAND_DRIVES = {
    "fluorescence": {"P_in_pW": 100.0, "t_pulse_ns": 10.0},
    "reflection": {"P_in_pW": 3.8, "t_pulse_ns": 47e3},
}


class ReadoutArgParser(configargparse.ArgParser):
    """``ArgParser`` that raises :py:class:`~.ConfigError` instead of exiting."""

    def error(self, message):
        raise ConfigError(message)


def _dashed(key):
    return key.lower().replace("_", "-")


def _init_argparse(*args, **kwargs):
    """Initialize a new parser and fill it with the options common to all the
    commands.

    If you want to add new command-line options, here is where you have to look
    at.

    :returns: Parser with all the options except the command-specific ones.
    :rtype: :py:class:`~.ReadoutArgParser`
    """

    parser = ReadoutArgParser(*args, **kwargs)

    general_options = parser.add_argument_group("General options")

    general_options.add(
        "command",
        nargs="?",
        choices=COMMANDS,
        help="What to compute: " + ", ".join(COMMANDS) + ".",
    )
    general_options.add("-c", "--config", is_config_file=True, help="Config file path.")
    general_options.add(
        "--preset",
        choices=sorted(PRESETS),
        help=f"Named parameter set (default: {DEFAULT_PRESET}, figures use their own).",
    )
    general_options.add_argument(
        "-o",
        "--outdir",
        default=".",
        help="Output directory for CSV files (default: %(default)s).",
    )
    general_options.add(
        "--cache-dir",
        default=".readout_cache",
        help="Folder where results are cached (default: %(default)s).",
        env_var="READOUT_CACHE_DIR",
    )
    general_options.add("--no-cache", action="store_true", help="Do not use the cache.")
    general_options.add(
        "--disable-progress-bar",
        action="store_true",
        help="Do not display the progress bar in sweeps.",
    )
    general_options.add(
        "--parallel", help="Run sweep cells in parallel.", action="store_true"
    )
    general_options.add(
        "--num-workers",
        default=os.cpu_count(),
        type=int,
        help="Number of cores to use (default: %(default)s).",
    )
    general_options.add(
        "--max-tasks-per-child",
        default=1,
        type=int,
        help="How many chunks does a worker have to process before it is"
        " respawned? Higher number typically leads to higher"
        " performance and higher memory usage. (default: %(default)s).",
    )
    general_options.add(
        "--chunk-size",
        default=1,
        type=int,
        help="How many cells does a worker have to do each time?",
    )
    general_options.add(
        "-v", "--verbose", help="Enable verbose output.", action="store_true"
    )
    general_options.add_argument(
        "-h",
        "--help",
        action="store_true",
        help="Show this help message and exit.",
    )

    physical_options = parser.add_argument_group(
        "Physical parameters (config keys, or the equivalent dashed flags)"
    )
    for key, spec in PHYSICAL_KEYS.items():
        flags = [f"--{key}"]
        if _dashed(key) != key:
            flags.append(f"--{_dashed(key)}")
        physical_options.add(*flags, dest=key, type=float, help=spec.help)

    numerics_options = parser.add_argument_group("Numerics")

    numerics_options.add(
        "--fock-dim",
        default=4,
        type=int,
        help="Photon-number truncation (default: %(default)s).",
    )
    numerics_options.add(
        "--grid-points",
        default=200,
        type=int,
        help="Geometric time samples of reflected pulses (default: %(default)s).",
    )
    numerics_options.add(
        "--dark-counts",
        default=0.0,
        type=float,
        help="Mean detector dark counts per readout (default: %(default)s).",
    )
    numerics_options.add(
        "--no-fock-check",
        action="store_true",
        help="Skip the photon-truncation convergence check of single results.",
    )

    return parser


def _add_command_options(parser, command):
    """Add the options that only make sense for ``command``."""
    if command == "fluorescence":
        group = parser.add_argument_group("Fluorescence options")
        group.add(
            "--t-wait-mode",
            default="seven_tau_off",
            choices=["seven_tau_off", "seven_tau_on"],
            help="Collection window after each pulse (default: %(default)s).",
        )
    elif command == "reflection":
        group = parser.add_argument_group("Reflection options")
        group.add(
            "--probe-power-pw",
            default=0.1,
            type=float,
            help="Weak probe power for reflectivities and optimization, in pW"
            " (default: %(default)s).",
        )
    elif command == "diffusion":
        group = parser.add_argument_group("Spectral diffusion options")
        group.add(
            "--protocol",
            default="fluorescence",
            choices=["fluorescence", "reflection"],
            help="Readout protocol (default: %(default)s).",
        )
        group.add(
            "--gamma-sd-over-gamma",
            default=0.5,
            type=float,
            help="Half width of the diffusion in units of Gamma (default: %(default)s).",
        )
        group.add(
            "--quadrature-points",
            default=41,
            type=int,
            help="Quadrature points over +-3 gamma_sd (default: %(default)s).",
        )
    elif command == "figure":
        group = parser.add_argument_group("Figure options")
        group.add("name", nargs="?", help="Figure to produce.")
        group.add(
            "--coarse",
            action="store_true",
            help="Use coarse grids (for quick checks).",
        )


def _check_args(args):
    """Check if there are problems with the provided arguments.

    We check:
    - If the number of workers is larger than the number of CPUs.
    - If the numerical settings are acceptable.

    :param args: Arguments to check.
    :type args: ``argparse.Namespace``
    """

    if args.num_workers > os.cpu_count():
        warnings.warn(
            f"You requested {args.num_workers} cores, "
            f"but the machine only has {os.cpu_count()}. "
            "This may result in performance loss."
        )
    if args.num_workers < 1 or args.chunk_size < 1 or args.max_tasks_per_child < 1:
        raise ConfigError("num-workers, chunk-size and max-tasks-per-child must be >= 1")
    if args.fock_dim < 2:
        raise ConfigError(f"fock-dim must be >= 2 (fock-dim = {args.fock_dim})")
    if args.grid_points < 200:
        raise ConfigError(
            f"grid-points must be >= 200 (grid-points = {args.grid_points})"
        )
    if args.dark_counts < 0:
        raise ConfigError(f"dark-counts must be >= 0 (dark-counts = {args.dark_counts})")


def get_args(cli_args=None):
    """Process the arguments.

    This function calls :py:func:`~._init_argparse` to setup the options,
    :py:func:`~._add_command_options` for the selected command and
    :py:func:`~._check_args` to check for problems.

    :param cli_args: List of arguments as if they were passed via command-line.
                     This is used only for testing.
    :type cli_args: list

    :returns: Arguments as read from command line, config file and environment.
    :rtype: ``argparse.Namespace``
    """

    if cli_args is None:
        # Remove the name of the program from the list of arguments
        cli_args = sys.argv[1:]

    # Two-step parsing: the first pass finds the command, which decides what
    # options are available; the second pass parses everything.
    desc = (
        "Simulate single-shot readout of a cavity-coupled T-center spin.\n"
        "Commands: fluorescence and reflection compute a single readout, "
        "diffusion adds spectral diffusion,\nfigure produces the CSV files of a "
        "named parameter study, validate checks the parameters."
    )

    parser = _init_argparse(
        description=desc, add_help=False, formatter_class=RawTextHelpFormatter
    )

    parsed, _ = parser.parse_known_args(cli_args)

    if parsed.command:
        _add_command_options(parser, parsed.command)

    if parsed.help:
        parser.print_help()
        sys.exit(0)

    if not parsed.command:
        raise ConfigError("Command not specified, use one of " + ", ".join(COMMANDS))

    args = parser.parse_args(cli_args)

    _check_args(args)

    return args


def physical_values(args, preset=None, command=None):
    """Resolve the physical keys of ``args`` (in the units of the keys).

    Unset keys are taken from the preset (``args.preset``, otherwise
    ``preset``, otherwise :py:data:`~.DEFAULT_PRESET`) and then, for the laser,
    from the defaults of ``command``.

    :rtype: dict
    """
    values = dict(COMMAND_DRIVES.get(command, {}))
    values.update(PRESETS[args.preset or preset or DEFAULT_PRESET])
    for key in PHYSICAL_KEYS:
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    return values


def _fields(values, target):
    return {
        spec.attribute: values[key] * spec.factor
        for key, spec in PHYSICAL_KEYS.items()
        if spec.target == target and key in values
    }


def build_system(args, preset=None):
    """Return the :py:class:`~.SystemParams` described by ``args``.

    The parameters are not checked, see :py:func:`~.validate`.
    """
    return SystemParams(**_fields(physical_values(args, preset), "system"))


def build_drive(args, command, preset=None):
    """Return the :py:class:`~.DriveParams` described by ``args``.

    Missing detunings are None-like: the atomic detuning defaults to the one
    that makes transition A resonant, the cavity detuning to zero.
    """
    values = physical_values(args, preset, command)
    fields = _fields(values, "drive")
    if "delta_a" not in fields:
        fields["delta_a"] = atomic_detuning_for(build_system(args, preset), "A")
    return DriveParams(**fields)


def detunings_given(args):
    """Whether the user fixed both detunings (otherwise reflection optimizes them)."""
    return getattr(args, "delta_a_GHz", None) is not None and (
        getattr(args, "delta_c_GHz", None) is not None
    )


def validate(args):
    """Check the physical parameters and the numerical settings without
    computing anything.

    :returns: Violations, each one naming the invariant. Empty if valid.
    :rtype: list of str
    """
    problems = []
    values = physical_values(args, command=args.command)
    for key, value in values.items():
        if not np.isfinite(value):
            problems.append(f"{key} must be finite ({key} = {value})")
    problems.extend(build_system(args).violations())
    problems.extend(build_drive(args, args.command).violations())
    return problems
