# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the corruption engine.

Both functions mirror :mod:`corrgan._kernels_py` operation for operation so
that the two backends produce identical bits.
"""
from libc.math cimport floor

import numpy as np
cimport numpy as cnp

cnp.import_array()


def plasma_fill(double[:, ::1] out, const double[::1] noise, double decay):
    """Diamond-square fill of ``out`` in place, consuming ``noise`` in order.

    ``noise`` holds uniform(-1, 1) draws: per level, n*n for the square step
    then 2*n*n for the two diamond sub-steps, n = size // step.
    """
    cdef Py_ssize_t size = out.shape[0]
    cdef Py_ssize_t step = size, half, n, i, j, ip, jp, im, jm
    cdef Py_ssize_t k = 0
    cdef double wibble = 100.0
    cdef double amp, s, lo, hi
    for i in range(size):
        for j in range(size):
            out[i, j] = 0.0
    while step >= 2:
        half = step // 2
        n = size // step
        amp = wibble * wibble
        # squares: centre of each cell from its four corners
        for i in range(n):
            ip = (i + 1) % n
            for j in range(n):
                jp = (j + 1) % n
                s = (out[i * step, j * step] + out[ip * step, j * step]) + (
                    out[i * step, jp * step] + out[ip * step, jp * step])
                out[i * step + half, j * step + half] = s / 4 + amp * noise[k + i * n + j]
        k += n * n
        # diamonds on corner rows, between corner columns
        for i in range(n):
            im = (i - 1 + n) % n
            for j in range(n):
                jp = (j + 1) % n
                s = (out[i * step + half, j * step + half] + out[im * step + half, j * step + half]) + (
                    out[i * step, j * step] + out[i * step, jp * step])
                out[i * step, j * step + half] = s / 4 + amp * noise[k + i * n + j]
        k += n * n
        # diamonds on corner columns, between corner rows
        for i in range(n):
            ip = (i + 1) % n
            for j in range(n):
                jm = (j - 1 + n) % n
                s = (out[i * step + half, j * step + half] + out[i * step + half, jm * step + half]) + (
                    out[i * step, j * step] + out[ip * step, j * step])
                out[i * step + half, j * step] = s / 4 + amp * noise[k + i * n + j]
        k += n * n
        step = half
        wibble = wibble / decay
    lo = out[0, 0]
    for i in range(size):
        for j in range(size):
            if out[i, j] < lo:
                lo = out[i, j]
    for i in range(size):
        for j in range(size):
            out[i, j] = out[i, j] - lo
    hi = out[0, 0]
    for i in range(size):
        for j in range(size):
            if out[i, j] > hi:
                hi = out[i, j]
    for i in range(size):
        for j in range(size):
            out[i, j] = out[i, j] / hi


def brightness_hsv(double[:, ::1] rgb, double shift):
    """Add ``shift`` to the HSV value channel of each row of an (M, 3) array, in place."""
    cdef Py_ssize_t m = rgb.shape[0], idx
    cdef double r, g, b, v, mn, delta, h, sat, f, p, q, t
    cdef int sector
    for idx in range(m):
        r = rgb[idx, 0]
        g = rgb[idx, 1]
        b = rgb[idx, 2]
        v = r
        if g > v:
            v = g
        if b > v:
            v = b
        mn = r
        if g < mn:
            mn = g
        if b < mn:
            mn = b
        delta = v - mn
        if v == 0.0:
            sat = 0.0
        else:
            sat = delta / v
        if delta == 0.0:
            h = 0.0
        elif r == v:
            h = ((g - b) / delta) / 6.0
        elif g == v:
            h = (2.0 + (b - r) / delta) / 6.0
        else:
            h = (4.0 + (r - g) / delta) / 6.0
        if h < 0.0:
            h = h + 1.0
        v = v + shift
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        sector = <int>floor(h * 6.0)
        f = h * 6.0 - sector
        sector = sector % 6
        p = v * (1.0 - sat)
        q = v * (1.0 - sat * f)
        t = v * (1.0 - sat * (1.0 - f))
        if sector == 0:
            r, g, b = v, t, p
        elif sector == 1:
            r, g, b = q, v, p
        elif sector == 2:
            r, g, b = p, v, t
        elif sector == 3:
            r, g, b = p, q, v
        elif sector == 4:
            r, g, b = t, p, v
        else:
            r, g, b = v, p, q
        rgb[idx, 0] = r
        rgb[idx, 1] = g
        rgb[idx, 2] = b
