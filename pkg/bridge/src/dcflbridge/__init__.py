"""Flat-array bindings for the dcfl assignment engine.

Arrays in, arrays out: no object graph crosses the boundary. Each call
marshals its inputs into the engine's documented file formats (DOTA
annotation text, OFF1 offset binary, prediction-field JSON, TOML config),
runs the ``dcfl`` command line in a scratch directory, and decodes the
JSON output. Calls are independent and reentrant, and the interpreter
lock is released for the duration of the subprocess, so training loops
may invoke them from multiple threads.
"""

from .flat import abi_version, dcfl_assign_flat, dcfl_eval_flat

__all__ = ["abi_version", "dcfl_assign_flat", "dcfl_eval_flat"]
