# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled pairwise assembly kernels (friction blocks and pair forces).

Kernel families arrive as small integer codes plus packed parameter rows
(see ``KernelSet.pack``); the formulas mirror ``overdamp.kernels`` exactly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, round, sin, sqrt

cnp.import_array()

DEF PI = 3.141592653589793


cdef inline double _taper(double s, double r_on, double rc) nogil:
    cdef double u
    if s <= r_on:
        return 1.0
    if s >= rc:
        return 0.0
    u = (s - r_on) / (rc - r_on)
    return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


cdef inline double _taper_ds(double s, double r_on, double rc) nogil:
    cdef double u
    if s <= r_on or s >= rc:
        return 0.0
    u = (s - r_on) / (rc - r_on)
    return -30.0 * u * u * (1.0 - u) * (1.0 - u) / (rc - r_on)


cdef inline double _z_env(int code, const double* p, double s) nogil:
    # p = [amp, sigma, r_on, rc, reg]
    cdef double e
    if code == 0 or s >= p[3]:
        return 0.0
    e = p[0] * exp(-0.5 * (s / p[1]) * (s / p[1])) * _taper(s, p[2], p[3])
    if code == 2:
        e = e * s * s / (s * s + p[4] * p[4])
    return e


cdef inline double _v2_dds(int code, const double* p, double s) nogil:
    # derivative of the pair potential with respect to the separation
    cdef double e
    if code == 0 or s >= p[3]:
        return 0.0
    e = p[0] * exp(-0.5 * (s / p[1]) * (s / p[1]))
    return e * (_taper_ds(s, p[2], p[3]) - s / (p[1] * p[1]) * _taper(s, p[2], p[3]))


def pair_gamma(double[:, :, ::1] pos, int[::1] codes,
               double[:, ::1] params, double[::1] lengths):
    cdef Py_ssize_t nb = pos.shape[0], n = pos.shape[1], dim = pos.shape[2]
    cdef Py_ssize_t b, i, j, a, c
    cdef int code1 = codes[3], code2 = codes[4]
    cdef const double* p1 = &params[3, 0]
    cdef const double* p2 = &params[4, 0]
    cdef double delta[3]
    cdef double unit[3]
    cdef double acc[9]
    cdef double s, e1, e2, shape
    out_arr = np.zeros((nb, n * dim, n * dim))
    cdef double[:, :, ::1] out = out_arr

    with nogil:
        for b in range(nb):
            for i in range(n):
                for a in range(dim * dim):
                    acc[a] = 0.0
                for j in range(n):
                    if j == i:
                        continue
                    s = 0.0
                    for a in range(dim):
                        delta[a] = pos[b, i, a] - pos[b, j, a]
                        delta[a] -= lengths[a] * round(delta[a] / lengths[a])
                        s += delta[a] * delta[a]
                    s = sqrt(s)
                    e1 = _z_env(code1, p1, s)
                    e2 = _z_env(code2, p2, s)
                    if s > 0.0:
                        for a in range(dim):
                            unit[a] = delta[a] / s
                    else:
                        for a in range(dim):
                            unit[a] = 0.0
                    for a in range(dim):
                        for c in range(dim):
                            if code1 == 2:
                                shape = unit[a] * unit[c]
                            else:
                                shape = 1.0 if a == c else 0.0
                            acc[a * dim + c] += e1 * shape
                            if code2 == 2:
                                shape = unit[a] * unit[c]
                            else:
                                shape = 1.0 if a == c else 0.0
                            out[b, i * dim + a, j * dim + c] = e2 * shape
                for a in range(dim):
                    for c in range(dim):
                        out[b, i * dim + a, i * dim + c] = (
                            (1.0 if a == c else 0.0) + acc[a * dim + c]
                        )
    return out_arr


def pair_forces(double[:, :, ::1] pos, int[::1] codes,
                double[:, ::1] params, double[::1] lengths):
    cdef Py_ssize_t nb = pos.shape[0], n = pos.shape[1], dim = pos.shape[2]
    cdef Py_ssize_t b, i, j, a
    cdef int code_v1 = codes[0], code_v2 = codes[1]
    cdef const double* pv1 = &params[0, 0]
    cdef const double* pv2 = &params[1, 0]
    cdef double dc[3]
    cdef double delta[3]
    cdef double s, s2, w2, dds, ang
    out_arr = np.zeros((nb, n, dim))
    cdef double[:, :, ::1] out = out_arr

    with nogil:
        for b in range(nb):
            for i in range(n):
                # external force -grad V1
                if code_v1 != 0:
                    s2 = 0.0
                    for a in range(dim):
                        if code_v1 == 1:
                            dc[a] = pos[b, i, a] - pv1[1 + a]
                        else:
                            dc[a] = pos[b, i, a] - pv1[2 + a]
                        dc[a] -= lengths[a] * round(dc[a] / lengths[a])
                        s2 += dc[a] * dc[a]
                    if code_v1 == 1:
                        for a in range(dim):
                            out[b, i, a] -= pv1[0] * dc[a]
                    elif code_v1 == 2:
                        w2 = pv1[1] * pv1[1]
                        for a in range(dim):
                            out[b, i, a] -= 4.0 * pv1[0] * (s2 - w2) / (w2 * w2) * dc[a]
                    elif code_v1 == 3:
                        for a in range(dim):
                            ang = 2.0 * PI * pv1[1] * dc[a] / lengths[a]
                            out[b, i, a] -= pv1[0] * PI * pv1[1] / lengths[a] * sin(ang)
                # pair force -sum_j grad_r V2
                if code_v2 != 0:
                    for j in range(n):
                        if j == i:
                            continue
                        s = 0.0
                        for a in range(dim):
                            delta[a] = pos[b, i, a] - pos[b, j, a]
                            delta[a] -= lengths[a] * round(delta[a] / lengths[a])
                            s += delta[a] * delta[a]
                        s = sqrt(s)
                        if s <= 0.0:
                            continue
                        dds = _v2_dds(code_v2, pv2, s)
                        for a in range(dim):
                            out[b, i, a] -= dds * delta[a] / s
    return out_arr
