# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled flat-scan kernel.

One pass over the reference rows; per query a bounded heap keeps the best k
(score descending, ties by ascending row index). Queries are converted to
float64 once, each reference row is converted once per pass, and every dot
product accumulates across eight fixed-position lanes (lane l sums elements
l, l+8, l+16, ...) folded in a fixed tree - so a query's score never depends
on how many queries share the pass. Eight queries are jammed per row pass to
amortize the row load; the jammed and single-query paths are bit-identical.

The scan itself lives in plain C (embedded below): keeping the hot loop out
of the generated glue is what lets the compiler hold the accumulator lanes
in registers.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #include <stdlib.h>
    #include <string.h>

    #if defined(__GNUC__) || defined(__clang__)
    #define OID_NOINLINE __attribute__((noinline))
    #else
    #define OID_NOINLINE
    #endif

    /* 64-byte aligned view into an over-allocated block (*raw owns it). */
    static void *oid_alloc64(size_t bytes, void **raw) {
        *raw = malloc(bytes + 64);
        if (*raw == NULL) return NULL;
        return (void *)(((uintptr_t)(*raw) + 63) & ~(uintptr_t)63);
    }

    static double oid_fold8(const double *a) {
        return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    }

    static OID_NOINLINE double oid_dot1(const double *restrict q,
                                        const double *restrict r, int64_t d) {
        double a[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        int64_t i = 0;
        for (; i + 8 <= d; i += 8) {
            a[0] += q[i] * r[i];
            a[1] += q[i + 1] * r[i + 1];
            a[2] += q[i + 2] * r[i + 2];
            a[3] += q[i + 3] * r[i + 3];
            a[4] += q[i + 4] * r[i + 4];
            a[5] += q[i + 5] * r[i + 5];
            a[6] += q[i + 6] * r[i + 6];
            a[7] += q[i + 7] * r[i + 7];
        }
        for (; i < d; i++)
            a[0] += q[i] * r[i];
        return oid_fold8(a);
    }

    #if defined(__GNUC__) || defined(__clang__)
    typedef double oid_v8df __attribute__((vector_size(64)));

    static inline oid_v8df oid_ld8(const double *p) {
        oid_v8df v;
        memcpy(&v, p, sizeof(v));
        return v;
    }

    /* Eight dots against one row; arithmetic per query identical to oid_dot1:
       vector lane l holds the same partial sum as scalar lane a[l]. */
    static OID_NOINLINE void oid_dot8(const double *restrict q, int64_t stride,
                                      const double *restrict r, int64_t d,
                                      double *restrict out) {
        oid_v8df acc0 = {0}, acc1 = {0}, acc2 = {0}, acc3 = {0};
        oid_v8df acc4 = {0}, acc5 = {0}, acc6 = {0}, acc7 = {0};
        int64_t i = 0;
        for (; i + 8 <= d; i += 8) {
            oid_v8df rv = oid_ld8(r + i);
            acc0 += oid_ld8(q + i) * rv;
            acc1 += oid_ld8(q + stride + i) * rv;
            acc2 += oid_ld8(q + 2 * stride + i) * rv;
            acc3 += oid_ld8(q + 3 * stride + i) * rv;
            acc4 += oid_ld8(q + 4 * stride + i) * rv;
            acc5 += oid_ld8(q + 5 * stride + i) * rv;
            acc6 += oid_ld8(q + 6 * stride + i) * rv;
            acc7 += oid_ld8(q + 7 * stride + i) * rv;
        }
        oid_v8df accs[8] = {acc0, acc1, acc2, acc3, acc4, acc5, acc6, acc7};
        for (int v = 0; v < 8; v++) {
            double lanes[8];
            memcpy(lanes, &accs[v], sizeof(lanes));
            for (int64_t j = i; j < d; j++)
                lanes[0] += q[v * stride + j] * r[j];
            out[v] = oid_fold8(lanes);
        }
    }
    #else
    static void oid_dot8(const double *q, int64_t stride, const double *r,
                         int64_t d, double *out) {
        for (int v = 0; v < 8; v++)
            out[v] = oid_dot1(q + v * stride, r, d);
    }
    #endif

    /* Bounded min-heap keyed worst-first: root is the weakest of the kept k.
       An entry is worse when its score is lower, or equal with a larger row
       index - which makes the final output tie-break ascending by index. */
    static inline int oid_worse(float s1, int64_t i1, float s2, int64_t i2) {
        if (s1 != s2)
            return s1 < s2;
        return i1 > i2;
    }

    static void oid_sift_down(float *hs, int64_t *hi, int64_t size, int64_t pos) {
        float s = hs[pos];
        int64_t ix = hi[pos];
        for (;;) {
            int64_t child = 2 * pos + 1;
            if (child >= size)
                break;
            if (child + 1 < size &&
                oid_worse(hs[child + 1], hi[child + 1], hs[child], hi[child]))
                child++;
            if (oid_worse(hs[child], hi[child], s, ix)) {
                hs[pos] = hs[child];
                hi[pos] = hi[child];
                pos = child;
            } else {
                break;
            }
        }
        hs[pos] = s;
        hi[pos] = ix;
    }

    static inline void oid_offer(float *hs, int64_t *hi, int64_t k,
                                 float sc, int64_t idx) {
        if (!oid_worse(sc, idx, hs[0], hi[0])) {
            hs[0] = sc;
            hi[0] = idx;
            oid_sift_down(hs, hi, k, 0);
        }
    }

    /* Full scan: refs (float32, n_refs x d) against q64 (float64, n_q rows,
       stride qs doubles), maintaining per-query heaps of size k. rbuf is
       scratch of OID_ROW_TILE * rs doubles. Rows are stored with a
       cache-line pad (stride > d) so the eight jammed streams do not map to
       one associativity set. References are tiled so each query row, once
       pulled into cache, is swept against the whole tile; per-(query, row)
       arithmetic is independent of tiling and the heaps are insertion-order
       blind, so results do not depend on either blocking choice. */
    #define OID_ROW_TILE 8

    static void oid_scan(const float *restrict refs, int64_t n_refs, int64_t d,
                         const double *restrict q64, int64_t qs, int64_t n_q,
                         int64_t k, double *restrict rbuf, int64_t rs,
                         float *restrict heap_s, int64_t *restrict heap_i) {
        int64_t q8 = n_q - (n_q % 8);
        double octet[8];
        for (int64_t t = 0; t < n_refs; t += OID_ROW_TILE) {
            int64_t rows = n_refs - t;
            if (rows > OID_ROW_TILE)
                rows = OID_ROW_TILE;
            for (int64_t rr = 0; rr < rows; rr++) {
                const float *row = refs + (t + rr) * d;
                double *dst = rbuf + rr * rs;
                for (int64_t i = 0; i < d; i++)
                    dst[i] = (double)row[i];
            }
            for (int64_t q = 0; q < q8; q += 8) {
                for (int64_t rr = 0; rr < rows; rr++) {
                    oid_dot8(q64 + q * qs, qs, rbuf + rr * rs, d, octet);
                    for (int j = 0; j < 8; j++)
                        oid_offer(heap_s + (q + j) * k, heap_i + (q + j) * k, k,
                                  (float)octet[j], t + rr);
                }
            }
            for (int64_t q = q8; q < n_q; q++)
                for (int64_t rr = 0; rr < rows; rr++)
                    oid_offer(heap_s + q * k, heap_i + q * k, k,
                              (float)oid_dot1(q64 + q * qs, rbuf + rr * rs, d),
                              t + rr);
        }
    }

    /* Heap-sort extraction: worst pops first, filling the output backwards. */
    static void oid_extract(float *hs, int64_t *hi, int64_t k,
                            float *scores_out, int64_t *idx_out) {
        int64_t size = k;
        for (int64_t j = k - 1; j >= 0; j--) {
            scores_out[j] = hs[0];
            idx_out[j] = hi[0];
            size--;
            hs[0] = hs[size];
            hi[0] = hi[size];
            oid_sift_down(hs, hi, size, 0);
        }
    }
    """
    void* oid_alloc64(size_t bytes, void** raw) nogil
    void oid_scan(const float* refs, cnp.int64_t n_refs, cnp.int64_t d,
                  const double* q64, cnp.int64_t qs, cnp.int64_t n_q,
                  cnp.int64_t k, double* rbuf, cnp.int64_t rs, float* heap_s,
                  cnp.int64_t* heap_i) nogil
    void oid_extract(float* hs, cnp.int64_t* hi, cnp.int64_t k,
                     float* scores_out, cnp.int64_t* idx_out) nogil

from libc.math cimport INFINITY

ctypedef cnp.float32_t f32
ctypedef cnp.int64_t i64


def topk_scan(object refs_obj, object queries_obj, Py_ssize_t k):
    """Return (idx, scores): int64 and float32 arrays of shape (Q, k)."""
    cdef cnp.ndarray[f32, ndim=2, mode="c"] refs = np.ascontiguousarray(
        refs_obj, dtype=np.float32)
    cdef cnp.ndarray[f32, ndim=2, mode="c"] queries = np.ascontiguousarray(
        queries_obj, dtype=np.float32)
    cdef Py_ssize_t n_refs = refs.shape[0]
    cdef Py_ssize_t dim = refs.shape[1]
    cdef Py_ssize_t n_q = queries.shape[0]
    if queries.shape[1] != dim:
        raise ValueError("query dim does not match reference dim")
    if k < 1 or k > n_refs:
        raise ValueError("k out of range")

    cdef cnp.ndarray[i64, ndim=2, mode="c"] out_idx = np.empty((n_q, k), dtype=np.int64)
    cdef cnp.ndarray[f32, ndim=2, mode="c"] out_scr = np.empty((n_q, k), dtype=np.float32)

    # one cache line of padding between rows breaks set-conflict aliasing
    cdef Py_ssize_t stride = dim + 8
    cdef void* q_raw = NULL
    cdef void* r_raw = NULL
    cdef double* q64 = <double*> oid_alloc64(n_q * stride * sizeof(double), &q_raw)
    cdef double* rbuf = <double*> oid_alloc64(8 * stride * sizeof(double), &r_raw)
    cdef float* heap_s = <float*> malloc(n_q * k * sizeof(float))
    cdef i64* heap_i = <i64*> malloc(n_q * k * sizeof(i64))
    if q64 == NULL or rbuf == NULL or heap_s == NULL or heap_i == NULL:
        free(q_raw)
        free(r_raw)
        free(heap_s)
        free(heap_i)
        raise MemoryError()

    cdef Py_ssize_t q, d, j
    try:
        with nogil:
            for q in range(n_q):
                for d in range(dim):
                    q64[q * stride + d] = <double> queries[q, d]
            for j in range(n_q * k):
                heap_s[j] = -INFINITY
                heap_i[j] = <i64> 0x7FFFFFFFFFFFFFFF
            oid_scan(&refs[0, 0], n_refs, dim, q64, stride, n_q, k,
                     rbuf, stride, heap_s, heap_i)
            for q in range(n_q):
                oid_extract(heap_s + q * k, heap_i + q * k, k,
                            &out_scr[q, 0], &out_idx[q, 0])
    finally:
        free(q_raw)
        free(r_raw)
        free(heap_s)
        free(heap_i)
    return np.asarray(out_idx), np.asarray(out_scr)
