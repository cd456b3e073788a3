"""Flattened postfix programs shared by both kernel backends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex

# Dormand-Prince 5(4) tableau.
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
DP_E = np.array([
    71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
])

STATUS_OK = 0
STATUS_ESCAPED = 1
STATUS_UNDERFLOW = 2
STATUS_MAXSTEPS = 3


@dataclass(frozen=True)
class Program:
    """``nout`` expressions over ``nvars`` state variables, in postfix form."""

    ops: np.ndarray      # int32
    args: np.ndarray     # int32
    consts: np.ndarray   # float64
    starts: np.ndarray   # int32, length nout + 1
    nvars: int
    stack: int

    @property
    def nout(self) -> int:
        return len(self.starts) - 1


def compile_nodes(nodes, nvars: int) -> Program:
    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    starts = [0]
    depth = 1
    for node in nodes:
        depth = max(depth, ex.compile_postfix(node, ops, args, consts))
        starts.append(len(ops))
    return Program(
        ops=np.asarray(ops, dtype=np.int32),
        args=np.asarray(args, dtype=np.int32),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        starts=np.asarray(starts, dtype=np.int32),
        nvars=nvars,
        stack=depth,
    )
