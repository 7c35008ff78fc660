# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for bf16 neuron-state accumulation.

Every routine here has a twin in ``_kernels_py`` with identical results;
``neuromesh.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t
from libc.string cimport memcpy

cnp.import_array()


cdef inline float _bf16(double x) noexcept nogil:
    cdef float f = <float>x
    cdef uint32_t b
    memcpy(&b, &f, 4)
    if (b & 0x7F800000u) == 0x7F800000u and (b & 0x007FFFFFu) != 0:
        return f
    b = b + 0x7FFFu + ((b >> 16) & 1u)
    b &= 0xFFFF0000u
    memcpy(&f, &b, 4)
    return f


cdef inline bint _bad(float f) noexcept nogil:
    cdef uint32_t b
    memcpy(&b, &f, 4)
    return (b & 0x7F800000u) == 0x7F800000u


def round_bf16(x):
    """Round to nearest-even bf16; returns float32 holding bf16 values."""
    cdef cnp.ndarray[double, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = src.shape[0], i
    out = np.empty(n, dtype=np.float32)
    cdef float[::1] dst = out
    with nogil:
        for i in range(n):
            dst[i] = _bf16(src[i])
    return out.reshape(np.shape(x))


def accumulate_row(float[::1] states, const float[::1] weights, double value, bint binary):
    """states[j] <- bf16(states[j] + bf16(w[j] * value)), or + w[j] for binary.

    Returns True if any state became non-finite.
    """
    cdef Py_ssize_t n = states.shape[0], j
    cdef bint bad = False
    cdef float term
    with nogil:
        for j in range(n):
            if binary:
                term = weights[j]
            else:
                term = _bf16(<double>weights[j] * value)
            states[j] = _bf16(<double>states[j] + <double>term)
            if _bad(states[j]):
                bad = True
    return bad


def accumulate_group(float[::1] states, const float[:, ::1] rows, const double[::1] values,
                     bint binary):
    """Apply several rows per neuron, neuron-major; same result as sequential rows."""
    cdef Py_ssize_t n = states.shape[0], g = rows.shape[0], j, e
    cdef bint bad = False
    cdef float s, term
    with nogil:
        for j in range(n):
            s = states[j]
            for e in range(g):
                if binary:
                    term = rows[e, j]
                else:
                    term = _bf16(<double>rows[e, j] * values[e])
                s = _bf16(<double>s + <double>term)
            states[j] = s
            if _bad(s):
                bad = True
    return bad


def conv_pixel(const float[:, :, ::1] window, const float[:, :, :, ::1] kernel,
               float[::1] out):
    """One output pixel: for each out channel, chain over (ky, kx, ci) ascending.

    Zero inputs are skipped; adding a signed zero never changes a bf16 sum.
    """
    cdef Py_ssize_t k = kernel.shape[0], cin = kernel.shape[2], cout = kernel.shape[3]
    cdef Py_ssize_t co, ky, kx, ci
    cdef float s, x
    cdef bint bad = False
    with nogil:
        for co in range(cout):
            s = 0.0
            for ky in range(k):
                for kx in range(k):
                    for ci in range(cin):
                        x = window[ky, kx, ci]
                        if x != 0.0:
                            s = _bf16(<double>s + <double>_bf16(<double>kernel[ky, kx, ci, co] * x))
            out[co] = s
            if _bad(s):
                bad = True
    return bad


def scatter_conv_event(float[:, :, ::1] states, const float[:, :, :, ::1] kernel,
                       Py_ssize_t y, Py_ssize_t x, Py_ssize_t ci, double value,
                       Py_ssize_t stride, bint binary):
    """Stateful conv: add one input event to every output whose field covers it.

    Returns (positions touched, overflow flag).
    """
    cdef Py_ssize_t k = kernel.shape[0], cout = kernel.shape[3]
    cdef Py_ssize_t hout = states.shape[0], wout = states.shape[1]
    cdef Py_ssize_t ky, kx, oy, ox, co, touched = 0
    cdef bint bad = False
    cdef float term
    with nogil:
        for ky in range(k):
            oy = y - ky
            if oy < 0 or oy % stride != 0:
                continue
            oy = oy // stride
            if oy >= hout:
                continue
            for kx in range(k):
                ox = x - kx
                if ox < 0 or ox % stride != 0:
                    continue
                ox = ox // stride
                if ox >= wout:
                    continue
                touched += 1
                for co in range(cout):
                    if binary:
                        term = kernel[ky, kx, ci, co]
                    else:
                        term = _bf16(<double>kernel[ky, kx, ci, co] * value)
                    states[oy, ox, co] = _bf16(<double>states[oy, ox, co] + <double>term)
                    if _bad(states[oy, ox, co]):
                        bad = True
    return touched, bad
