"""Pure numpy backend: vectorized over points, one adaptive step size per point.

Every point runs the same Dormand-Prince recurrence it would run alone, so a
point's result does not depend on which other points share the batch.
"""

from __future__ import annotations

import numpy as np

from . import expr as ex
from ._program import (
    DP_A, DP_B, DP_C, DP_E, Program,
    STATUS_ESCAPED, STATUS_MAXSTEPS, STATUS_OK, STATUS_UNDERFLOW,
)

BACKEND = "python"


def _run(program: Program, k: int, Y: np.ndarray) -> np.ndarray:
    ops, args, consts = program.ops, program.args, program.consts
    stack = []
    for pc in range(program.starts[k], program.starts[k + 1]):
        op = ops[pc]
        if op == ex.OP_CONST:
            stack.append(np.full(Y.shape[0], consts[args[pc]]))
        elif op == ex.OP_VAR:
            stack.append(Y[:, args[pc]])
        elif op == ex.OP_NEG:
            stack.append(-stack.pop())
        elif op == ex.OP_POW:
            stack.append(ex._ipow(stack.pop(), int(args[pc])))
        elif op == ex.OP_EXP:
            stack.append(np.exp(stack.pop()))
        elif op == ex.OP_SIN:
            stack.append(np.sin(stack.pop()))
        elif op == ex.OP_COS:
            stack.append(np.cos(stack.pop()))
        else:
            b = stack.pop()
            a = stack.pop()
            if op == ex.OP_ADD:
                stack.append(a + b)
            elif op == ex.OP_SUB:
                stack.append(a - b)
            elif op == ex.OP_MUL:
                stack.append(a * b)
            else:
                stack.append(a / b)
    return stack[0]


def evaluate(program: Program, X: np.ndarray) -> np.ndarray:
    """Evaluate all outputs at points ``X`` (N, nvars) -> (N, nout)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], program.nout))
    for k in range(program.nout):
        out[:, k] = _run(program, k, X)
    return out


def integrate(program: Program, X0, taus, rtol, atol, max_step, lo, hi, max_steps=100_000):
    """Integrate y' = F(y) from each row of ``X0`` over time ``taus[i]``.

    The first ``len(lo)`` coordinates are monitored against the closed box
    [lo, hi]; a point leaving it stops with STATUS_ESCAPED.
    """
    Y = np.array(X0, dtype=np.float64, copy=True)
    N, m = Y.shape
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (N,)).copy()
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    nb = lo.shape[0]
    status = np.zeros(N, dtype=np.int32)

    T = np.zeros(N)
    H = np.sign(taus) * np.minimum(np.abs(taus), max_step)
    steps = np.zeros(N, dtype=np.int64)
    K1 = evaluate(program, Y)
    active = np.nonzero(taus != 0.0)[0]

    while active.size:
        y = Y[active]
        t = T[active]
        tau = taus[active]
        h = H[active]
        # do not step past the end time
        remaining = tau - t
        h = np.where(np.abs(h) > np.abs(remaining), remaining, h)

        K = [K1[active]]
        for s in range(1, 7):
            ys = y.copy()
            for j, a in enumerate(DP_A[s]):
                if a != 0.0:
                    ys += (h * a)[:, None] * K[j]
            K.append(evaluate(program, ys))
        ynew = y.copy()
        for j in range(7):
            if DP_B[j] != 0.0:
                ynew += (h * DP_B[j])[:, None] * K[j]
        err = np.zeros_like(y)
        for j in range(7):
            if DP_E[j] != 0.0:
                err += (h * DP_E[j])[:, None] * K[j]
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        enorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))

        accept = enorm <= 1.0
        with np.errstate(divide="ignore"):
            fac = np.where(enorm == 0.0, 5.0, 0.9 * enorm ** -0.2)
        fac = np.minimum(5.0, np.maximum(0.2, fac))
        fac = np.where(accept, fac, np.minimum(fac, 1.0))
        hnext = h * fac
        hnext = np.sign(hnext) * np.minimum(np.abs(hnext), max_step)

        idx_acc = active[accept]
        tnew = np.where(np.abs(remaining - h) == 0.0, tau, t + h)
        Y[idx_acc] = ynew[accept]
        T[idx_acc] = tnew[accept]
        K1[idx_acc] = K[6][accept]
        H[active] = hnext
        steps[active] += 1

        done = np.zeros(active.size, dtype=bool)
        if nb:
            outside = np.any((ynew[:, :nb] < lo) | (ynew[:, :nb] > hi), axis=1) & accept
            status[active[outside]] = STATUS_ESCAPED
            done |= outside
        finished = accept & (tnew == tau)
        done |= finished
        tiny = np.abs(hnext) < 1e-14 * np.maximum(1.0, np.abs(t))
        under = tiny & ~done
        status[active[under]] = STATUS_UNDERFLOW
        done |= under
        over = (steps[active] >= max_steps) & ~done
        status[active[over]] = STATUS_MAXSTEPS
        done |= over
        active = active[~done]

    return Y, status


__all__ = ["BACKEND", "evaluate", "integrate", "STATUS_OK"]
