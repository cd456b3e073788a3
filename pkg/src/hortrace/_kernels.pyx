# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend: per-point Dormand-Prince 5(4) over postfix programs.

Mirrors ``_pykernels`` operation for operation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sin, cos, sqrt, fabs, pow as cpow
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

DEF OP_CONST = 0
DEF OP_VAR = 1
DEF OP_ADD = 2
DEF OP_SUB = 3
DEF OP_MUL = 4
DEF OP_DIV = 5
DEF OP_NEG = 6
DEF OP_POW = 7
DEF OP_EXP = 8
DEF OP_SIN = 9
DEF OP_COS = 10

cdef double[7] C_B
cdef double[7] C_E
cdef double[7][6] C_A

C_B[:] = [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0]
C_E[:] = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40]
C_A[0][:] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
C_A[1][:] = [1.0 / 5, 0.0, 0.0, 0.0, 0.0, 0.0]
C_A[2][:] = [3.0 / 40, 9.0 / 40, 0.0, 0.0, 0.0, 0.0]
C_A[3][:] = [44.0 / 45, -56.0 / 15, 32.0 / 9, 0.0, 0.0, 0.0]
C_A[4][:] = [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0.0, 0.0]
C_A[5][:] = [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0.0]
C_A[6][:] = [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84]


cdef inline double ipow(double x, int n) nogil:
    cdef double result = 1.0
    cdef double base = x
    cdef bint first = True
    cdef bint neg = n < 0
    if neg:
        n = -n
    while n:
        if n & 1:
            if first:
                result = base
                first = False
            else:
                result = result * base
        n >>= 1
        if n:
            base = base * base
    if neg:
        return 1.0 / result
    return result


cdef inline double run(const int* ops, const int* args, const double* consts,
                       int start, int end, const double* y, double* stack) nogil:
    cdef int sp = 0
    cdef int pc, op
    cdef double a, b
    for pc in range(start, end):
        op = ops[pc]
        if op == OP_CONST:
            stack[sp] = consts[args[pc]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = y[args[pc]]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_POW:
            stack[sp - 1] = ipow(stack[sp - 1], args[pc])
        elif op == OP_EXP:
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == OP_SIN:
            stack[sp - 1] = sin(stack[sp - 1])
        elif op == OP_COS:
            stack[sp - 1] = cos(stack[sp - 1])
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            else:
                stack[sp - 1] = a / b
    return stack[0]


cdef inline void rhs(const int* ops, const int* args, const double* consts,
                     const int* starts, int nout, const double* y,
                     double* out, double* stack) nogil:
    cdef int k
    for k in range(nout):
        out[k] = run(ops, args, consts, starts[k], starts[k + 1], y, stack)


def evaluate(program, X):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef int N = Xc.shape[0]
    cdef int nout = program.nout
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.empty((N, nout))
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ops = program.ops
    cdef cnp.ndarray[cnp.int32_t, ndim=1] args = program.args
    cdef cnp.ndarray[cnp.float64_t, ndim=1] consts = program.consts
    cdef cnp.ndarray[cnp.int32_t, ndim=1] starts = program.starts
    cdef double* stack = <double*> malloc(max(1, program.stack) * sizeof(double))
    cdef int i
    try:
        for i in range(N):
            rhs(<int*> ops.data, <int*> args.data, <double*> consts.data,
                <int*> starts.data, nout, &Xc[i, 0], &out[i, 0], stack)
    finally:
        free(stack)
    return out


cdef int step_point(const int* ops, const int* args, const double* consts, const int* starts,
                    int m, double* y, double tau, double rtol, double atol, double max_step,
                    const double* lo, const double* hi, int nb, long max_steps,
                    double* K, double* ys, double* ynew, double* stack) nogil:
    """Integrate one point in place. K holds 7 stage vectors of length m."""
    cdef double t = 0.0
    cdef double h, remaining, enorm, fac, hnext, tnew, told, e, sc, a
    cdef long steps = 0
    cdef int s, j, i
    cdef bint accept, outside
    if tau == 0.0:
        return 0
    h = fabs(tau)
    if h > max_step:
        h = max_step
    if tau < 0:
        h = -h
    rhs(ops, args, consts, starts, m, y, &K[0], stack)
    while True:
        remaining = tau - t
        if fabs(h) > fabs(remaining):
            h = remaining
        for s in range(1, 7):
            for i in range(m):
                ys[i] = y[i]
            for j in range(s):
                a = C_A[s][j]
                if a != 0.0:
                    for i in range(m):
                        ys[i] += (h * a) * K[j * m + i]
            rhs(ops, args, consts, starts, m, ys, &K[s * m], stack)
        for i in range(m):
            ynew[i] = y[i]
        for j in range(7):
            if C_B[j] != 0.0:
                for i in range(m):
                    ynew[i] += (h * C_B[j]) * K[j * m + i]
        enorm = 0.0
        for i in range(m):
            e = 0.0
            for j in range(7):
                if C_E[j] != 0.0:
                    e += (h * C_E[j]) * K[j * m + i]
            sc = atol + rtol * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
            enorm += (e / sc) * (e / sc)
        enorm = sqrt(enorm / m)
        accept = enorm <= 1.0
        if enorm == 0.0:
            fac = 5.0
        else:
            fac = 0.9 * cpow(enorm, -0.2)
        if fac > 5.0:
            fac = 5.0
        if fac < 0.2:
            fac = 0.2
        if not accept and fac > 1.0:
            fac = 1.0
        hnext = h * fac
        if fabs(hnext) > max_step:
            hnext = max_step if hnext > 0 else -max_step
        steps += 1
        told = t
        if fabs(remaining - h) == 0.0:
            tnew = tau
        else:
            tnew = t + h
        if accept:
            for i in range(m):
                y[i] = ynew[i]
                K[i] = K[6 * m + i]
            t = tnew
            outside = False
            for i in range(nb):
                if ynew[i] < lo[i] or ynew[i] > hi[i]:
                    outside = True
            if outside:
                return 1
            if tnew == tau:
                return 0
        h = hnext
        if fabs(hnext) < 1e-14 * (fabs(told) if fabs(told) > 1.0 else 1.0):
            return 2
        if steps >= max_steps:
            return 3


def integrate(program, X0, taus, double rtol, double atol, double max_step, lo, hi,
              long max_steps=100000):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Y = np.array(X0, dtype=np.float64, order="C", copy=True)
    cdef int N = Y.shape[0]
    cdef int m = Y.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] T = np.ascontiguousarray(
        np.broadcast_to(np.asarray(taus, dtype=np.float64), (N,)))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] clo = np.ascontiguousarray(lo, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] chi = np.ascontiguousarray(hi, dtype=np.float64)
    cdef int nb = clo.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] status = np.zeros(N, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ops = program.ops
    cdef cnp.ndarray[cnp.int32_t, ndim=1] args = program.args
    cdef cnp.ndarray[cnp.float64_t, ndim=1] consts = program.consts
    cdef cnp.ndarray[cnp.int32_t, ndim=1] starts = program.starts
    if program.nout != m:
        raise ValueError("program output count must equal state dimension")
    cdef double* work = <double*> malloc((9 * m + max(1, program.stack)) * sizeof(double))
    cdef double* dlo = <double*> clo.data if nb else NULL
    cdef double* dhi = <double*> chi.data if nb else NULL
    cdef int i
    try:
        with nogil:
            for i in range(N):
                status[i] = step_point(<int*> ops.data, <int*> args.data, <double*> consts.data,
                                       <int*> starts.data, m, &Y[i, 0], T[i], rtol, atol, max_step,
                                       dlo, dhi, nb, max_steps,
                                       work, work + 7 * m, work + 8 * m, work + 9 * m)
    finally:
        free(work)
    return Y, status
