# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled LSTM layer kernels.

Same contract and gate layout as lstm_py; the recurrence is the hot loop of
every training phase, so it runs as straight C here.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, tanh as c_tanh

cnp.import_array()


cdef inline double c_sig(double v) nogil:
    if v >= 0.0:
        return 1.0 / (1.0 + c_exp(-v))
    cdef double e = c_exp(v)
    return e / (1.0 + e)


def lstm_forward(cnp.ndarray[cnp.float64_t, ndim=2] x,
                 cnp.ndarray[cnp.float64_t, ndim=2] wx,
                 cnp.ndarray[cnp.float64_t, ndim=2] wh,
                 cnp.ndarray[cnp.float64_t, ndim=1] b):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t H = wh.shape[0]
    cdef Py_ssize_t G = 4 * H

    pre_arr = np.ascontiguousarray(x) @ np.ascontiguousarray(wx)
    pre_arr += b
    acts_arr = np.empty((T, G))
    c_arr = np.empty((T, H))
    tanh_c_arr = np.empty((T, H))
    h_arr = np.empty((T, H))

    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] acts = acts_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] tanh_c = tanh_c_arr
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] whv = np.ascontiguousarray(wh)

    cdef double[::1] a = np.empty(G)
    cdef Py_ssize_t t, j, k
    cdef double acc, i_g, f_g, g_g, o_g, cv

    with nogil:
        for t in range(T):
            for j in range(G):
                acc = pre[t, j]
                if t > 0:
                    for k in range(H):
                        acc += h[t - 1, k] * whv[k, j]
                a[j] = acc
            for j in range(H):
                i_g = c_sig(a[j])
                f_g = c_sig(a[H + j])
                g_g = c_tanh(a[2 * H + j])
                o_g = c_sig(a[3 * H + j])
                cv = i_g * g_g
                if t > 0:
                    cv += f_g * c[t - 1, j]
                c[t, j] = cv
                tanh_c[t, j] = c_tanh(cv)
                h[t, j] = o_g * tanh_c[t, j]
                acts[t, j] = i_g
                acts[t, H + j] = f_g
                acts[t, 2 * H + j] = g_g
                acts[t, 3 * H + j] = o_g

    return h_arr, (np.ascontiguousarray(x), np.ascontiguousarray(wx),
                   np.ascontiguousarray(wh), acts_arr, c_arr, tanh_c_arr, h_arr)


def lstm_backward(cnp.ndarray[cnp.float64_t, ndim=2] dh_out, cache):
    x_arr, wx_arr, wh_arr, acts_arr, c_arr, tanh_c_arr, h_arr = cache
    cdef Py_ssize_t T = dh_out.shape[0]
    cdef Py_ssize_t H = dh_out.shape[1]
    cdef Py_ssize_t D = x_arr.shape[1]
    cdef Py_ssize_t G = 4 * H

    da_arr = np.empty((T, G))
    dwx_arr = np.zeros((D, G))
    dwh_arr = np.zeros((H, G))
    db_arr = np.zeros(G)

    cdef double[:, ::1] dh_o = np.ascontiguousarray(dh_out)
    cdef double[:, ::1] acts = acts_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] tanh_c = tanh_c_arr
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] whv = wh_arr
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] dwx = dwx_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[::1] db = db_arr

    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.zeros(H)

    cdef Py_ssize_t t, j, k
    cdef double dh, dc, tc, i_g, f_g, g_g, o_g, cp, acc

    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(H):
                i_g = acts[t, j]
                f_g = acts[t, H + j]
                g_g = acts[t, 2 * H + j]
                o_g = acts[t, 3 * H + j]
                tc = tanh_c[t, j]
                dh = dh_o[t, j] + dh_next[j]
                dc = dh * o_g * (1.0 - tc * tc) + dc_next[j]
                cp = c[t - 1, j] if t > 0 else 0.0
                da[t, j] = dc * g_g * i_g * (1.0 - i_g)
                da[t, H + j] = dc * cp * f_g * (1.0 - f_g)
                da[t, 2 * H + j] = dc * i_g * (1.0 - g_g * g_g)
                da[t, 3 * H + j] = dh * tc * o_g * (1.0 - o_g)
                dc_next[j] = dc * f_g
            for k in range(H):
                acc = 0.0
                for j in range(G):
                    acc += da[t, j] * whv[k, j]
                dh_next[k] = acc
            # weight gradient accumulation
            for j in range(G):
                db[j] += da[t, j]
            for k in range(D):
                for j in range(G):
                    dwx[k, j] += x[t, k] * da[t, j]
            if t > 0:
                for k in range(H):
                    for j in range(G):
                        dwh[k, j] += h[t - 1, k] * da[t, j]

    dx_arr = da_arr @ wx_arr.T
    return dx_arr, dwx_arr, dwh_arr, db_arr
