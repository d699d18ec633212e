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
"""This is the main module, the one that is executed when calling ``readout``.

The function :py:func:`~.run` reads the arguments (see :py:mod:`~.argparse`),
validates them and calls the command. Single readouts (``fluorescence``,
``reflection``, ``diffusion``) print a JSON record on the standard output and
write a one-row CSV; ``figure`` writes the CSV files of a parameter study;
``validate`` only reports problems with the parameters.

Exit statuses: 0 if everything went well, 1 for configuration errors, 2 for
errors raised by the simulation engine.

"""

import logging
import os
import sys
import traceback

import pandas as pd

from spinreadout import argparse as rargparse
from spinreadout import diffusion, figures, fluorescence, reflection
from spinreadout.errors import ConfigError, EngineError
from spinreadout.lindblad import fock_convergence
from spinreadout.runner import (
    ResultCache,
    ResultRecord,
    TaskRunner,
    config_hash,
    create_outdir,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

FOCK_TOL = 1e-4


def _runner(args):
    cache = None if args.no_cache else ResultCache(args.cache_dir)
    return TaskRunner(
        parallel=args.parallel,
        num_workers=args.num_workers,
        max_tasks_per_child=args.max_tasks_per_child,
        chunk_size=args.chunk_size,
        disable_progress_bar=args.disable_progress_bar,
        cache=cache,
    )


def _fock_provenance(args, headline):
    """Truncation used and, unless disabled, the outcome of the convergence check."""
    provenance = {"fock_dim": args.fock_dim}
    if args.no_fock_check:
        return provenance
    converged = fock_convergence(headline, tol=FOCK_TOL)
    provenance.update(fock_converged_dim=converged.fock_dim, fock_delta=converged.delta)
    if converged.fock_dim > args.fock_dim:
        logger.warning(
            f"Fidelity converges only at fock_dim = {converged.fock_dim}, "
            f"but {args.fock_dim} was used"
        )
    return provenance


def _fluorescence(args):
    scenario = fluorescence.FluorescenceScenario(
        system=rargparse.build_system(args),
        drive=rargparse.build_drive(args, "fluorescence"),
        t_wait_mode=getattr(args, "t_wait_mode", "seven_tau_off"),
        fock_dim=args.fock_dim,
        dark_counts=args.dark_counts,
    )

    def compute():
        outcome = fluorescence.fluorescence_fidelity(scenario)

        def headline(fock_dim):
            changed = scenario.replace(fock_dim=fock_dim)
            return fluorescence.fluorescence_fidelity(changed).result.fidelity

        return outcome.to_dict(), _fock_provenance(args, headline)

    return scenario, compute, "fluor_point.csv"


def _reflection(args):
    values = rargparse.physical_values(args, command="reflection")
    scenario = reflection.ReflectionScenario(
        system=rargparse.build_system(args),
        P_in=values["P_in_pW"] * 1e-12,
        t_pulse=values["t_pulse_ns"] * 1e-9,
        fock_dim=args.fock_dim,
        probe_power=getattr(args, "probe_power_pw", 0.1) * 1e-12,
        grid_points=args.grid_points,
        dark_counts=args.dark_counts,
    )
    if rargparse.detunings_given(args):
        drive = rargparse.build_drive(args, "reflection")
        scenario = scenario.replace(delta_a=drive.delta_a, delta_c=drive.delta_c)

    def compute():
        resolved = reflection.resolve_detunings(scenario)
        outcome = reflection.reflection_fidelity(resolved)

        def headline(fock_dim):
            changed = resolved.replace(fock_dim=fock_dim)
            return reflection.reflection_fidelity(changed).result.fidelity

        provenance = _fock_provenance(args, headline)
        provenance.update(grid_points=args.grid_points, grid_delta=outcome.grid_delta)
        return outcome.to_dict(), provenance

    return scenario, compute, "refl_point.csv"


def _diffusion(args, mapper):
    system = rargparse.build_system(args)
    if args.protocol == "fluorescence":
        base, _, _ = _fluorescence(args)
    else:
        base, _, _ = _reflection(args)
    model = diffusion.DiffusionModel(
        args.gamma_sd_over_gamma * system.Gamma, n_points=args.quadrature_points
    )

    def compute():
        check = diffusion.quadrature_convergence(
            args.protocol, base, model, mapper=mapper
        )
        payload = {
            "protocol": args.protocol,
            "two_gamma_sd_over_gamma": 2 * args.gamma_sd_over_gamma,
            "fidelity": check.result.fidelity,
            "infidelity": check.result.infidelity,
            "threshold_M": check.result.threshold_M,
            "mean_up": check.result.mean_up,
            "mean_down": check.result.mean_down,
        }
        provenance = {
            "quadrature_points": model.refined().n_points,
            "quadrature_delta": check.delta,
        }
        return payload, provenance

    return (args.protocol, base, model), compute, "diffusion_point.csv"


def _single(args, runner, setup):
    """Compute (or load) a single result, print it and save it."""
    identity, compute, csv_name = setup
    key = config_hash(
        {
            "command": args.command,
            "setup": identity,
            "fock_check": not args.no_fock_check,
        }
    )
    record = None if runner.cache is None else runner.cache.load(key)
    if record is None:
        payload, provenance = compute()
        record = ResultRecord.new(key, payload, provenance)
        if runner.cache is not None:
            runner.cache.store(record)
    else:
        logger.info(f"Result {key} found in cache")

    create_outdir(args.outdir)
    write_csv(pd.DataFrame([record.payload]), os.path.join(args.outdir, csv_name))
    write_json(record.to_dict())


def _figure(args, runner):
    if args.name not in figures.FIGURES:
        raise ConfigError(
            f"Unknown or missing figure name {args.name}"
            f" (use one of {', '.join(figures.FIGURES)})"
        )
    preset = figures.FIGURES[args.name].preset
    tables = figures.make_figure(
        args.name,
        rargparse.build_system(args, preset),
        mapper=runner.map,
        coarse=args.coarse,
        fock_dim=args.fock_dim,
        dark_counts=args.dark_counts,
    )
    create_outdir(args.outdir)
    for file_name, table in tables.items():
        write_csv(table, os.path.join(args.outdir, file_name))
        print(os.path.join(args.outdir, file_name))


def _dispatch(args):
    problems = rargparse.validate(args)

    if args.command == "validate":
        for problem in problems:
            print(problem)
        if not problems:
            print("Parameters are valid")
        return 1 if problems else 0

    if problems:
        raise ConfigError("; ".join(problems))

    runner = _runner(args)

    if args.command == "fluorescence":
        _single(args, runner, _fluorescence(args))
    elif args.command == "reflection":
        _single(args, runner, _reflection(args))
    elif args.command == "diffusion":
        _single(args, runner, _diffusion(args, runner.map))
    elif args.command == "figure":
        _figure(args, runner)

    logger.info(f"{args.command} completed")
    return 0


def run(cli_args=None):
    """Run ``readout`` and return the exit status.

    :param cli_args: List of arguments as if they were passed via command-line.
                     This is used only for testing.
    :type cli_args: list

    :rtype: int
    """
    verbose = False
    try:
        args = rargparse.get_args(cli_args)
        verbose = args.verbose

        if verbose:
            logging.basicConfig(format="%(asctime)s - %(message)s")
            logging.getLogger("spinreadout").setLevel(logging.INFO)
            logger.info(f"Arguments: {vars(args)}")

        return _dispatch(args)
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        if verbose:
            traceback.print_exc()
        origin = traceback.extract_tb(exc.__traceback__)[-1].filename
        module = os.path.splitext(os.path.basename(origin))[0]
        print(f"{module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover

    main()
