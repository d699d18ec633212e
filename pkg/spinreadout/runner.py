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
"""The :py:mod:`~.runner` contains the machinery to evaluate the cells of a
parameter study and to store what was computed.

The key class is :py:class:`~.TaskRunner`, a replacement for the builtin ``map``
that can evaluate cells in parallel with a progress bar and that remembers the
result of every cell in a :py:class:`~.ResultCache`. All the sweeps of the
engine accept it as their ``mapper``.

Results are stored as :py:class:`~.ResultRecord`, one JSON file per record, named
after the hash of everything that determines the result (see
:py:func:`~.config_hash`).

The additional functions write the outputs: :py:func:`~.write_csv` and
:py:func:`~.write_json`.

"""

import dataclasses
import functools
import hashlib
import json
import logging
import multiprocessing as mp
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from tqdm import tqdm

from spinreadout import __version__

logger = logging.getLogger(__name__)


def create_outdir(output_folder):
    """Check if outdir exists, if not create it.

    :param output_folder: Folder where output have to be saved.
    :type output_folder: str
    """
    if not os.path.isdir(output_folder):
        logger.info(f"{output_folder} does not exist, creating it")
        os.makedirs(output_folder)


def timestamp():
    """Current UTC time in ISO format."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def canonical(obj):
    """Return a JSON-compatible version of ``obj`` that identifies it.

    Functions are replaced by their qualified name, partial functions by their
    function and arguments, dataclasses by their fields.
    """
    if isinstance(obj, functools.partial):
        return {
            "function": canonical(obj.func),
            "args": canonical(obj.args),
            "keywords": canonical(obj.keywords),
        }
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        fields = {
            f.name: canonical(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        }
        return {"type": type(obj).__name__, **fields}
    if callable(obj) and hasattr(obj, "__qualname__"):
        return f"{obj.__module__}.{obj.__qualname__}"
    if isinstance(obj, dict):
        return {str(key): canonical(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(obj):
    """SHA-256 of the canonical JSON of ``obj`` and of the engine version.

    :rtype: str
    """
    text = json.dumps(
        {"engine_version": __version__, "config": canonical(obj)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(text.encode("utf8")).hexdigest()


@dataclass
class ResultRecord:
    """A stored result.

    :param hash: Hash of the configuration that produced the result.
    :param timestamp: When it was computed. Never part of the hash.
    :param engine_version: Version of the package.
    :param payload: The result, JSON-compatible.
    :param provenance: Numerical settings and convergence checks.
    """

    hash: str
    timestamp: str
    engine_version: str
    payload: object
    provenance: dict = field(default_factory=dict)

    @classmethod
    def new(cls, key, payload, provenance=None):
        return cls(key, timestamp(), __version__, canonical(payload), provenance or {})

    def to_dict(self):
        return dataclasses.asdict(self)


class ResultCache:
    """Folder with one JSON file per :py:class:`~.ResultRecord`.

    Files are written atomically, so that an interrupted run leaves no partial
    record behind.

    :param directory: Where the records are stored (created when needed).
    :type directory: str
    """

    def __init__(self, directory):
        self.directory = directory

    def path(self, key):
        return os.path.join(self.directory, f"{key}.json")

    def load(self, key):
        """Return the record with hash ``key``, or None if there is none."""
        path = self.path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path) as file_:
                return ResultRecord(**json.load(file_))
        except (ValueError, TypeError) as exc:
            logger.warning(f"Ignoring unreadable cache file {path}: {exc}")
            return None

    def store(self, record):
        os.makedirs(self.directory, exist_ok=True)
        with tempfile.NamedTemporaryFile(
            "w", dir=self.directory, suffix=".tmp", delete=False
        ) as file_:
            json.dump(record.to_dict(), file_, sort_keys=True)
        os.replace(file_.name, self.path(record.hash))


def _task_name(func):
    if isinstance(func, functools.partial):
        return _task_name(func.func)
    return f"{func.__module__}.{func.__qualname__}"


class TaskRunner:
    """Evaluate a function on many cells, like the builtin ``map``.

    Cells already in the cache are not computed again. The remaining ones are
    evaluated in order, optionally with a pool of processes. With a cache, the
    results are returned as they come out of JSON (tuples become lists), so
    that fresh and cached results are the same.

    :param parallel: If True, evaluate multiple cells at the same time.
    :type parallel: bool
    :param num_workers: Number of processes. If None, use all the cores.
    :type num_workers: int or None
    :param max_tasks_per_child: How many chunks does a worker have to process
                                before it is respawned?
    :type max_tasks_per_child: int
    :param chunk_size: How many cells does a worker have to do each time?
    :type chunk_size: int
    :param disable_progress_bar: If True, do not display progress bar.
    :type disable_progress_bar: bool
    :param cache: Where to remember cells, None to disable.
    :type cache: :py:class:`~.ResultCache` or None
    """

    def __init__(
        self,
        parallel=False,
        num_workers=None,
        max_tasks_per_child=1,
        chunk_size=1,
        disable_progress_bar=False,
        cache=None,
    ):
        self.parallel = parallel
        self.num_workers = num_workers
        self.max_tasks_per_child = max_tasks_per_child
        self.chunk_size = chunk_size
        self.disable_progress_bar = disable_progress_bar
        self.cache = cache

    def _map(self, func, items):
        # tqdm is the pretty progress bar, with estimate of remaining time.
        tqdm_args = {
            "total": len(items),
            "unit": "cells",
            "disable": self.disable_progress_bar,
        }
        results = []
        if self.parallel and len(items) > 1:
            with mp.Pool(
                processes=self.num_workers, maxtasksperchild=self.max_tasks_per_child
            ) as pool:
                # imap keeps the order of the cells
                for result in tqdm(
                    pool.imap(func, items, chunksize=self.chunk_size), **tqdm_args
                ):
                    results.append(result)
                    logger.info(f"Cell {len(results)}/{len(items)} done")
        else:
            for item in tqdm(items, **tqdm_args):
                results.append(func(item))
                logger.info(f"Cell {len(results)}/{len(items)} done")
        return results

    def map(self, func, items):
        """Return the list of ``func(item)`` for each of ``items``, in order."""
        items = list(items)
        if self.cache is None:
            return self._map(func, items)

        keys = [config_hash({"task": func, "cell": item}) for item in items]
        results = [None] * len(items)
        missing = []
        for num, key in enumerate(keys):
            record = self.cache.load(key)
            if record is None:
                missing.append(num)
            else:
                results[num] = record.payload
        logger.info(f"{len(items) - len(missing)} of {len(items)} cells found in cache")

        computed = self._map(func, [items[num] for num in missing])
        for num, value in zip(missing, computed):
            record = ResultRecord.new(keys[num], value, {"task": _task_name(func)})
            self.cache.store(record)
            results[num] = json.loads(json.dumps(record.payload))
        return results

    __call__ = map


def write_csv(frame, path):
    """Write ``frame`` to ``path`` with a one-line comment header.

    The header holds the version and the time of creation, the rest of the
    file only depends on the data.

    :param frame: Table to save.
    :type frame: pandas DataFrame
    :param path: Output file.
    :type path: str
    """
    with open(path, "w") as file_:
        file_.write(f"# readout {__version__} generated {timestamp()}\n")
        frame.to_csv(file_, index=False, float_format="%.9g")
    logger.info(f"Wrote {path}")


def write_json(payload, stream=None):
    """Print ``payload`` as indented JSON (on the standard output by default)."""
    stream = sys.stdout if stream is None else stream
    json.dump(canonical(payload), stream, indent=2, sort_keys=True)
    stream.write("\n")
