# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-spin-flip sweeps on a sparse Ising graph.

Must stay numerically identical to ``_sweep_py.run_sweeps``: same update
order, same uniform consumed per update, same floating-point expressions.
"""
from libc.math cimport exp

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def run_sweeps(cnp.int8_t[::1] spins, cnp.int64_t[::1] indptr, cnp.int64_t[::1] nbr,
               double[::1] weight, double[::1] field, cnp.int64_t[::1] order,
               double beta, double[:, ::1] uniforms, int method, int random_site,
               cnp.int64_t[::1] record_sites, cnp.int8_t[:, ::1] record_out,
               double[::1] mag_out, double[::1] energy_out,
               double mag, double energy):
    cdef Py_ssize_t n_sweeps = uniforms.shape[0]
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t n_rec = record_sites.shape[0]
    cdef Py_ssize_t t, u, k, i, pick
    cdef double f, p, de, r
    cdef cnp.int8_t s_old, s_new
    with nogil:
        for t in range(n_sweeps):
            for u in range(m):
                if random_site:
                    pick = <Py_ssize_t>(uniforms[t, 2 * u] * m)
                    if pick >= m:
                        pick = m - 1
                    i = order[pick]
                    r = uniforms[t, 2 * u + 1]
                else:
                    i = order[u]
                    r = uniforms[t, u]
                f = field[i]
                for k in range(indptr[i], indptr[i + 1]):
                    f = f + weight[k] * spins[nbr[k]]
                s_old = spins[i]
                if method == 0:
                    p = 1.0 / (1.0 + exp(-2.0 * beta * f))
                    if r < p:
                        s_new = 1
                    else:
                        s_new = -1
                else:
                    de = 2.0 * s_old * f
                    if de <= 0.0 or r < exp(-beta * de):
                        s_new = -s_old
                    else:
                        s_new = s_old
                if s_new != s_old:
                    spins[i] = s_new
                    mag = mag + 2.0 * s_new
                    energy = energy + 2.0 * s_old * f
            for k in range(n_rec):
                record_out[t, k] = spins[record_sites[k]]
            mag_out[t] = mag
            energy_out[t] = energy
    return mag, energy
