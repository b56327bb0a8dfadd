# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused joint-attention kernels.

Same contract as `reference` (see its module docstring for shapes);
logits, softmax and the weighted value sum run in single fused passes
per query row, with no (B, Ht, Ht) temporaries beyond the probability
tensor itself. Single-threaded by design: training determinism relies
on a fixed accumulation order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, expf

cnp.import_array()

BACKEND_NAME = "native"


def joint_attention_forward(float[:, :, :, ::1] q,
                            float[:, :, :, ::1] k,
                            float[:, :, :, ::1] v,
                            unsigned char[:, :, ::1] q_keep,
                            unsigned char[:, :, ::1] k_keep,
                            float scale):
    cdef Py_ssize_t nb = q.shape[0], nh = q.shape[1], nt = q.shape[2], nd = q.shape[3]
    cdef Py_ssize_t width = nh * nt
    out_arr = np.zeros((nb, nh, nt, nd), dtype=np.float32)
    probs_arr = np.zeros((nb, nh, nt, nh, nt), dtype=np.float32)
    row_arr = np.empty(width, dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef float[:, :, :, :, ::1] probs = probs_arr
    cdef float[::1] row = row_arr
    cdef Py_ssize_t b, h1, i, h2, j, d, idx
    cdef float peak, total, acc, p

    for b in range(nb):
        for h1 in range(nh):
            for i in range(nt):
                if q_keep[b, h1, i] == 0:
                    continue
                peak = -INFINITY
                idx = 0
                for h2 in range(nh):
                    for j in range(nt):
                        if k_keep[b, h2, j]:
                            acc = 0.0
                            for d in range(nd):
                                acc += q[b, h1, i, d] * k[b, h2, j, d]
                            acc *= scale
                            row[idx] = acc
                            if acc > peak:
                                peak = acc
                        idx += 1
                if peak == -INFINITY:
                    continue
                total = 0.0
                idx = 0
                for h2 in range(nh):
                    for j in range(nt):
                        if k_keep[b, h2, j]:
                            acc = expf(row[idx] - peak)
                            row[idx] = acc
                            total += acc
                        idx += 1
                idx = 0
                for h2 in range(nh):
                    for j in range(nt):
                        if k_keep[b, h2, j]:
                            p = row[idx] / total
                            probs[b, h1, i, h2, j] = p
                            for d in range(nd):
                                out[b, h1, i, d] += p * v[b, h2, j, d]
                        idx += 1
    return out_arr, probs_arr


def joint_attention_backward(float[:, :, :, ::1] g_out,
                             float[:, :, :, :, ::1] probs,
                             float[:, :, :, ::1] q,
                             float[:, :, :, ::1] k,
                             float[:, :, :, ::1] v,
                             float scale):
    cdef Py_ssize_t nb = q.shape[0], nh = q.shape[1], nt = q.shape[2], nd = q.shape[3]
    gq_arr = np.zeros((nb, nh, nt, nd), dtype=np.float32)
    gk_arr = np.zeros((nb, nh, nt, nd), dtype=np.float32)
    gv_arr = np.zeros((nb, nh, nt, nd), dtype=np.float32)
    gp_arr = np.empty((nh, nt), dtype=np.float32)
    cdef float[:, :, :, ::1] gq = gq_arr
    cdef float[:, :, :, ::1] gk = gk_arr
    cdef float[:, :, :, ::1] gv = gv_arr
    cdef float[:, ::1] gp = gp_arr
    cdef Py_ssize_t b, h1, i, h2, j, d
    cdef float inner, p, gl, acc

    for b in range(nb):
        for h1 in range(nh):
            for i in range(nt):
                inner = 0.0
                for h2 in range(nh):
                    for j in range(nt):
                        p = probs[b, h1, i, h2, j]
                        if p != 0.0:
                            acc = 0.0
                            for d in range(nd):
                                acc += g_out[b, h1, i, d] * v[b, h2, j, d]
                            gp[h2, j] = acc
                            inner += acc * p
                for h2 in range(nh):
                    for j in range(nt):
                        p = probs[b, h1, i, h2, j]
                        if p != 0.0:
                            gl = p * (gp[h2, j] - inner) * scale
                            for d in range(nd):
                                gq[b, h1, i, d] += gl * k[b, h2, j, d]
                                gk[b, h2, j, d] += gl * q[b, h1, i, d]
                                gv[b, h2, j, d] += p * g_out[b, h1, i, d]
    return gq_arr, gk_arr, gv_arr
