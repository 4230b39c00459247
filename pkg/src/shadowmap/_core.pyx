# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: brute-force neighbour tables and the fused NSM training loop.

Matrices are row-major; products go through BLAS ``dgemm``.
"""
import numpy as np

from libc.math cimport sqrt, isfinite, pow, INFINITY
from libc.string cimport memset, memcpy
from scipy.linalg.cython_blas cimport dgemm


def knn_table(const double[:, ::1] points, int k, int theiler):
    """k nearest rows for every anchor, excluding ``|t - a| <= theiler``; ties to smaller index."""
    cdef Py_ssize_t n = points.shape[0], p = points.shape[1]
    out = np.empty((n, k), dtype=np.int64)
    cdef long long[:, ::1] res = out
    cdef double[::1] best_d = np.empty(k)
    cdef long long[::1] best_i = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t a, t, m, q, filled
    cdef double dist, diff
    with nogil:
        for a in range(n):
            filled = 0
            for t in range(n):
                if t - a <= theiler and a - t <= theiler:
                    continue
                dist = 0.0
                for m in range(p):
                    diff = points[a, m] - points[t, m]
                    dist = dist + diff * diff
                if filled == k and dist >= best_d[k - 1]:
                    continue
                q = filled if filled < k else k - 1
                while q > 0 and best_d[q - 1] > dist:
                    best_d[q] = best_d[q - 1]
                    best_i[q] = best_i[q - 1]
                    q -= 1
                best_d[q] = dist
                best_i[q] = t
                if filled < k:
                    filled += 1
            for q in range(k):
                res[a, q] = best_i[q] if q < filled else -1
    return out


cdef extern from "_elementwise.h" nogil:
    void ew_fill_rows(double* X, const double* b, int rows, int cols)
    void ew_relu(double* X, int count)
    void ew_relu_mask(double* G, const double* H, int count)
    void ew_colsum(const double* G, double* out, int rows, int cols)


cdef inline void mm(double* A, double* B, double* C, int m, int n, int kk,
                    bint ta, bint tb, bint accumulate) noexcept nogil:
    """C[m, n] = op(A) @ op(B), or += when ``accumulate``; all row-major."""
    cdef char opa = b'T' if tb else b'N'
    cdef char opb = b'T' if ta else b'N'
    cdef int ldb = kk if tb else n
    cdef int lda = m if ta else kk
    cdef int ldc = n
    cdef double one = 1.0
    if m == 0 or n == 0:
        return
    if not accumulate:
        # zeroing here is much cheaper than OpenBLAS's beta=0 pass on small matrices
        ew_fill_rows(C, NULL, m, n)
    dgemm(&opa, &opb, &n, &m, &kk, &one, B, &ldb, A, &lda, &one, C, &ldc)


cdef void dense3_forward(double* X, int rows, double* W, int d0, int d1, int d2, int d3,
                         double* H1, double* H2, double* O) noexcept nogil:
    cdef double* b1 = W + d0 * d1
    cdef double* W2 = b1 + d1
    cdef double* b2 = W2 + d1 * d2
    cdef double* W3 = b2 + d2
    cdef double* b3 = W3 + d2 * d3
    # outputs start as the bias rows, products accumulate on top
    ew_fill_rows(H1, b1, rows, d1)
    mm(X, W, H1, rows, d1, d0, False, False, True)
    ew_relu(H1, rows * d1)
    ew_fill_rows(H2, b2, rows, d2)
    mm(H1, W2, H2, rows, d2, d1, False, False, True)
    ew_relu(H2, rows * d2)
    ew_fill_rows(O, b3, rows, d3)
    mm(H2, W3, O, rows, d3, d2, False, False, True)


cdef void dense3_backward(double* X, int rows, double* W, double* gW, int d0, int d1, int d2, int d3,
                          double* H1, double* H2, double* gO, double* gH1, double* gH2,
                          double* gX) noexcept nogil:
    """Gradients into ``gW`` and, when not NULL, ``gX`` (both overwritten)."""
    cdef double* W2 = W + d0 * d1 + d1
    cdef double* W3 = W2 + d1 * d2 + d2
    cdef double* gb1 = gW + d0 * d1
    cdef double* gW2 = gb1 + d1
    cdef double* gb2 = gW2 + d1 * d2
    cdef double* gW3 = gb2 + d2
    cdef double* gb3 = gW3 + d2 * d3
    mm(H2, gO, gW3, d2, d3, rows, True, False, False)
    ew_colsum(gO, gb3, rows, d3)
    mm(gO, W3, gH2, rows, d2, d3, False, True, False)
    ew_relu_mask(gH2, H2, rows * d2)
    mm(H1, gH2, gW2, d1, d2, rows, True, False, False)
    ew_colsum(gH2, gb2, rows, d2)
    mm(gH2, W2, gH1, rows, d1, d2, False, True, False)
    ew_relu_mask(gH1, H1, rows * d1)
    mm(X, gH1, gW, d0, d1, rows, True, False, False)
    ew_colsum(gH1, gb1, rows, d1)
    if gX != NULL:
        mm(gH1, W, gX, rows, d0, d1, False, True, False)


def train_loop(const double[:, :, :, ::1] man, const long long[:, :, :, ::1] tab,
               const long long[::1] gen_idx, const long long[:, ::1] anchors,
               double[::1] theta, double[::1] m, double[::1] v, long long t,
               const long long[:, ::1] offsets, long long a_offset,
               int p, int h1, int h2, int d, config,
               double lr, double beta1, double beta2, double eps, double[::1] losses):
    """Fused version of ``_fallback.train_loop`` for encoders shared per variable."""
    cdef int n = man.shape[1]
    cdef int bs = anchors.shape[1]
    cdef int k = tab.shape[3]
    cdef int R = n * bs * k
    cdef int R2 = (n - 1) * bs
    cdef Py_ssize_t P = theta.shape[0]
    cdef Py_ssize_t iters = gen_idx.shape[0]

    grad_arr = np.zeros(P)
    cdef double[::1] grad = grad_arr
    cdef double[::1] X = np.empty(R * p)
    cdef double[::1] H1 = np.empty(R * h1)
    cdef double[::1] H2 = np.empty(R * h2)
    cdef double[::1] O = np.empty(R * d)
    cdef double[::1] gO = np.empty(R * d)
    cdef double[::1] gH1 = np.empty(R * h1)
    cdef double[::1] gH2 = np.empty(R * h2)
    cdef double[::1] E = np.empty(n * bs * d)
    cdef double[::1] gE = np.empty(n * bs * d)
    cdef double[::1] Pm = np.empty(n * bs * p)
    cdef double[::1] Eh = np.empty(R2 * d)
    cdef double[::1] gEh = np.empty(R2 * d)
    cdef double[::1] gP = np.empty(R2 * d)
    cdef double[::1] Tg = np.empty(R2 * p)
    cdef double[::1] D1 = np.empty(R2 * h2)
    cdef double[::1] D2 = np.empty(R2 * h1)
    cdef double[::1] mu = np.empty(d)
    cdef double[::1] sd = np.empty(d)
    cdef double[::1] gmu = np.empty(d)
    cdef double[::1] gsd = np.empty(d)
    cdef bint norm = bool(config.standardize)
    cdef double norm_eps = float(config.norm_eps)
    cdef bint detach = bool(config.detach_prediction)
    cdef double[::1] Out = np.empty(R2 * p)
    cdef double[::1] gOut = np.empty(R2 * p)
    cdef double[::1] gD1 = np.empty(R2 * h2)
    cdef double[::1] gD2 = np.empty(R2 * h1)

    cdef double* th = &theta[0]
    cdef double* gr = &grad[0]
    cdef double* A = th + a_offset
    cdef double* gA = gr + a_offset
    cdef Py_ssize_t it, q
    cdef int g, i, j, jj, b, c, qq, row, r
    cdef double loss, diff, inv_k = 1.0 / k
    cdef double s1 = 1.0 / (bs * d), s2 = 1.0 / (bs * p)
    cdef double c1, c2, gq, mh, vh, acc, z
    cdef double* We
    cdef double* Wd
    cdef bint bad = False
    cdef Py_ssize_t bad_it = -1

    with nogil:
        for it in range(iters):
            g = <int>gen_idx[it]
            memset(gr, 0, P * sizeof(double))
            loss = 0.0
            for i in range(n):
                We = th + offsets[i, 0]
                Wd = th + offsets[i, 1]
                # gather manifold i at every variable's neighbour indices
                for j in range(n):
                    for b in range(bs):
                        for qq in range(k):
                            row = <int>tab[g, j, anchors[it, b], qq]
                            memcpy(&X[((j * bs + b) * k + qq) * p], &man[g, i, row, 0], p * sizeof(double))
                dense3_forward(&X[0], R, We, p, h1, h2, d, &H1[0], &H2[0], &O[0])
                for r in range(n * bs):
                    for c in range(d):
                        E[r * d + c] = 0.0
                    for c in range(p):
                        Pm[r * p + c] = 0.0
                    for qq in range(k):
                        for c in range(d):
                            E[r * d + c] += O[(r * k + qq) * d + c]
                        for c in range(p):
                            Pm[r * p + c] += X[(r * k + qq) * p + c]
                    for c in range(d):
                        E[r * d + c] *= inv_k
                        gE[r * d + c] = 0.0
                    for c in range(p):
                        Pm[r * p + c] *= inv_k
                if norm:
                    # standardise with the batch statistics of E[i, i]
                    for c in range(d):
                        acc = 0.0
                        for b in range(bs):
                            acc += E[(i * bs + b) * d + c]
                        mu[c] = acc / bs
                        acc = 0.0
                        for b in range(bs):
                            z = E[(i * bs + b) * d + c] - mu[c]
                            acc += z * z
                        sd[c] = sqrt(acc / bs + norm_eps)
                    for r in range(n * bs):
                        for c in range(d):
                            E[r * d + c] = (E[r * d + c] - mu[c]) / sd[c]
                # cross prediction
                jj = 0
                for j in range(n):
                    if j == i:
                        continue
                    for b in range(bs):
                        for c in range(d):
                            Eh[(jj * bs + b) * d + c] = A[(i * n + j) * d + c] * E[(i * bs + b) * d + c]
                            diff = Eh[(jj * bs + b) * d + c] - E[(j * bs + b) * d + c]
                            loss += diff * diff * s1
                            gP[(jj * bs + b) * d + c] = 2.0 * diff * s1
                            if not detach:
                                gE[(j * bs + b) * d + c] -= 2.0 * diff * s1
                        memcpy(&Tg[(jj * bs + b) * p], &Pm[(j * bs + b) * p], p * sizeof(double))
                    jj += 1
                # decoder reconstruction
                dense3_forward(&Eh[0], R2, Wd, d, h2, h1, p, &D1[0], &D2[0], &Out[0])
                for q in range(R2 * p):
                    diff = Out[q] - Tg[q]
                    loss += diff * diff * s2
                    gOut[q] = 2.0 * diff * s2
                dense3_backward(&Eh[0], R2, Wd, gr + offsets[i, 1], d, h2, h1, p,
                                &D1[0], &D2[0], &gOut[0], &gD1[0], &gD2[0], &gEh[0])
                jj = 0
                for j in range(n):
                    if j == i:
                        continue
                    for c in range(d):
                        for b in range(bs):
                            q = (jj * bs + b) * d + c
                            gA[(i * n + j) * d + c] += (gP[q] + gEh[q]) * E[(i * bs + b) * d + c]
                            # with detach the encoder only sees the reconstruction path
                            z = gEh[q] if detach else gP[q] + gEh[q]
                            gE[(i * bs + b) * d + c] += z * A[(i * n + j) * d + c]
                    jj += 1
                if norm:
                    for c in range(d):
                        gmu[c] = 0.0
                        gsd[c] = 0.0
                    for r in range(n * bs):
                        for c in range(d):
                            gmu[c] -= gE[r * d + c]
                            gsd[c] -= gE[r * d + c] * E[r * d + c]
                    for r in range(n * bs):
                        for c in range(d):
                            gE[r * d + c] /= sd[c]
                    for b in range(bs):
                        for c in range(d):
                            gE[(i * bs + b) * d + c] += (gmu[c] + gsd[c] * E[(i * bs + b) * d + c]) / (sd[c] * bs)
                # encoder backward through the mean pool
                for r in range(n * bs):
                    for qq in range(k):
                        for c in range(d):
                            gO[(r * k + qq) * d + c] = gE[r * d + c] * inv_k
                dense3_backward(&X[0], R, We, gr + offsets[i, 0], p, h1, h2, d,
                                &H1[0], &H2[0], &gO[0], &gH1[0], &gH2[0], NULL)
            if not isfinite(loss):
                bad = True
                bad_it = it
                break
            losses[it] = loss
            t += 1
            c1 = 1.0 - pow(beta1, <double>t)
            c2 = 1.0 - pow(beta2, <double>t)
            for q in range(P):
                gq = gr[q]
                if not isfinite(gq):
                    bad = True
                    break
                m[q] = beta1 * m[q] + (1.0 - beta1) * gq
                v[q] = beta2 * v[q] + (1.0 - beta2) * gq * gq
                mh = m[q] / c1
                vh = v[q] / c2
                th[q] -= lr * mh / (sqrt(vh) + eps)
            if bad:
                bad_it = it
                break
    if bad:
        raise FloatingPointError(f"non-finite loss or gradient at iteration {bad_it}")
    return t
