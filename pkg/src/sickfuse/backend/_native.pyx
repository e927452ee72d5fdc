# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of `backend.numpy_kernels`; same contracts, C inner loops.

Convolutions correlate a pre-padded input in valid mode; pooling breaks ties
toward the first maximum in row-major window order; the SGBM pass sums four
directional scanline recurrences. float64 and float32 are both supported.
"""

import numpy as np

name = "native"

ctypedef fused floating:
    float
    double


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------

cdef void _conv3d_fwd(const floating[:, :, :, :, ::1] x,
                      const floating[:, :, :, :, ::1] k,
                      floating[:, :, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], To = out.shape[1], Ho = out.shape[2]
    cdef Py_ssize_t Wo = out.shape[3], Co = out.shape[4]
    cdef Py_ssize_t kt = k.shape[0], kh = k.shape[1], kw = k.shape[2], Ci = k.shape[3]
    cdef Py_ssize_t b, t, h, w, dt, dh, dw, ci, co
    cdef floating xv
    for b in range(B):
        for t in range(To):
            for h in range(Ho):
                for w in range(Wo):
                    for dt in range(kt):
                        for dh in range(kh):
                            for dw in range(kw):
                                for ci in range(Ci):
                                    xv = x[b, t + dt, h + dh, w + dw, ci]
                                    for co in range(Co):
                                        out[b, t, h, w, co] += xv * k[dt, dh, dw, ci, co]


cdef void _conv3d_gi(const floating[:, :, :, :, ::1] g,
                     const floating[:, :, :, :, ::1] k,
                     floating[:, :, :, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], To = g.shape[1], Ho = g.shape[2]
    cdef Py_ssize_t Wo = g.shape[3], Co = g.shape[4]
    cdef Py_ssize_t kt = k.shape[0], kh = k.shape[1], kw = k.shape[2], Ci = k.shape[3]
    cdef Py_ssize_t b, t, h, w, dt, dh, dw, ci, co
    cdef floating acc
    for b in range(B):
        for t in range(To):
            for h in range(Ho):
                for w in range(Wo):
                    for dt in range(kt):
                        for dh in range(kh):
                            for dw in range(kw):
                                for ci in range(Ci):
                                    acc = 0
                                    for co in range(Co):
                                        acc += g[b, t, h, w, co] * k[dt, dh, dw, ci, co]
                                    gx[b, t + dt, h + dh, w + dw, ci] += acc


cdef void _conv3d_gk(const floating[:, :, :, :, ::1] x,
                     const floating[:, :, :, :, ::1] g,
                     floating[:, :, :, :, ::1] gk) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], To = g.shape[1], Ho = g.shape[2]
    cdef Py_ssize_t Wo = g.shape[3], Co = g.shape[4]
    cdef Py_ssize_t kt = gk.shape[0], kh = gk.shape[1], kw = gk.shape[2], Ci = gk.shape[3]
    cdef Py_ssize_t b, t, h, w, dt, dh, dw, ci, co
    cdef floating xv
    for b in range(B):
        for t in range(To):
            for h in range(Ho):
                for w in range(Wo):
                    for dt in range(kt):
                        for dh in range(kh):
                            for dw in range(kw):
                                for ci in range(Ci):
                                    xv = x[b, t + dt, h + dh, w + dw, ci]
                                    for co in range(Co):
                                        gk[dt, dh, dw, ci, co] += xv * g[b, t, h, w, co]


def conv3d_forward(x, k):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k, dtype=x.dtype)
    B, T, H, W, Ci = x.shape
    kt, kh, kw, _, Co = k.shape
    out = np.zeros((B, T - kt + 1, H - kh + 1, W - kw + 1, Co), dtype=x.dtype)
    if x.dtype == np.float64:
        _conv3d_fwd[double](x, k, out)
    else:
        _conv3d_fwd[float](x, k, out)
    return out


def conv3d_grad_input(g, k, x_shape):
    g = np.ascontiguousarray(g)
    k = np.ascontiguousarray(k, dtype=g.dtype)
    gx = np.zeros(x_shape, dtype=g.dtype)
    if g.dtype == np.float64:
        _conv3d_gi[double](g, k, gx)
    else:
        _conv3d_gi[float](g, k, gx)
    return gx


def conv3d_grad_kernel(x, g, k_shape):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    gk = np.zeros(k_shape, dtype=x.dtype)
    if x.dtype == np.float64:
        _conv3d_gk[double](x, g, gk)
    else:
        _conv3d_gk[float](x, g, gk)
    return gk


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------

cdef void _conv1d_fwd(const floating[:, :, ::1] x, const floating[:, :, ::1] k,
                      floating[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], Lo = out.shape[1], Co = out.shape[2]
    cdef Py_ssize_t kl = k.shape[0], Ci = k.shape[1]
    cdef Py_ssize_t b, l, dl, ci, co
    cdef floating xv
    for b in range(B):
        for l in range(Lo):
            for dl in range(kl):
                for ci in range(Ci):
                    xv = x[b, l + dl, ci]
                    for co in range(Co):
                        out[b, l, co] += xv * k[dl, ci, co]


cdef void _conv1d_gi(const floating[:, :, ::1] g, const floating[:, :, ::1] k,
                     floating[:, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], Lo = g.shape[1], Co = g.shape[2]
    cdef Py_ssize_t kl = k.shape[0], Ci = k.shape[1]
    cdef Py_ssize_t b, l, dl, ci, co
    cdef floating acc
    for b in range(B):
        for l in range(Lo):
            for dl in range(kl):
                for ci in range(Ci):
                    acc = 0
                    for co in range(Co):
                        acc += g[b, l, co] * k[dl, ci, co]
                    gx[b, l + dl, ci] += acc


cdef void _conv1d_gk(const floating[:, :, ::1] x, const floating[:, :, ::1] g,
                     floating[:, :, ::1] gk) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], Lo = g.shape[1], Co = g.shape[2]
    cdef Py_ssize_t kl = gk.shape[0], Ci = gk.shape[1]
    cdef Py_ssize_t b, l, dl, ci, co
    cdef floating xv
    for b in range(B):
        for l in range(Lo):
            for dl in range(kl):
                for ci in range(Ci):
                    xv = x[b, l + dl, ci]
                    for co in range(Co):
                        gk[dl, ci, co] += xv * g[b, l, co]


def conv1d_forward(x, k):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k, dtype=x.dtype)
    B, L, Ci = x.shape
    kl, _, Co = k.shape
    out = np.zeros((B, L - kl + 1, Co), dtype=x.dtype)
    if x.dtype == np.float64:
        _conv1d_fwd[double](x, k, out)
    else:
        _conv1d_fwd[float](x, k, out)
    return out


def conv1d_grad_input(g, k, x_shape):
    g = np.ascontiguousarray(g)
    k = np.ascontiguousarray(k, dtype=g.dtype)
    gx = np.zeros(x_shape, dtype=g.dtype)
    if g.dtype == np.float64:
        _conv1d_gi[double](g, k, gx)
    else:
        _conv1d_gi[float](g, k, gx)
    return gx


def conv1d_grad_kernel(x, g, k_shape):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    gk = np.zeros(k_shape, dtype=x.dtype)
    if x.dtype == np.float64:
        _conv1d_gk[double](x, g, gk)
    else:
        _conv1d_gk[float](x, g, gk)
    return gk


# ---------------------------------------------------------------------------
# max pooling (1 and 3 spatial dims; other ranks fall back to numpy)
# ---------------------------------------------------------------------------

cdef void _maxpool3d_fwd(const floating[:, :, :, :, ::1] x,
                         floating[:, :, :, :, ::1] out,
                         Py_ssize_t[:, :, :, :, ::1] arg,
                         Py_ssize_t w0, Py_ssize_t w1, Py_ssize_t w2,
                         Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], O0 = out.shape[1], O1 = out.shape[2]
    cdef Py_ssize_t O2 = out.shape[3], C = out.shape[4]
    cdef Py_ssize_t b, o0, o1, o2, c, d0, d1, d2, flat, best_flat
    cdef floating v, best
    for b in range(B):
        for o0 in range(O0):
            for o1 in range(O1):
                for o2 in range(O2):
                    for c in range(C):
                        best = x[b, o0 * s0, o1 * s1, o2 * s2, c]
                        best_flat = 0
                        flat = 0
                        for d0 in range(w0):
                            for d1 in range(w1):
                                for d2 in range(w2):
                                    v = x[b, o0 * s0 + d0, o1 * s1 + d1, o2 * s2 + d2, c]
                                    if v > best:
                                        best = v
                                        best_flat = flat
                                    flat += 1
                        out[b, o0, o1, o2, c] = best
                        arg[b, o0, o1, o2, c] = best_flat


cdef void _maxpool3d_bwd(const floating[:, :, :, :, ::1] g,
                         const Py_ssize_t[:, :, :, :, ::1] arg,
                         floating[:, :, :, :, ::1] gx,
                         Py_ssize_t w0, Py_ssize_t w1, Py_ssize_t w2,
                         Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], O0 = g.shape[1], O1 = g.shape[2]
    cdef Py_ssize_t O2 = g.shape[3], C = g.shape[4]
    cdef Py_ssize_t b, o0, o1, o2, c, flat, d0, d1, d2
    for b in range(B):
        for o0 in range(O0):
            for o1 in range(O1):
                for o2 in range(O2):
                    for c in range(C):
                        flat = arg[b, o0, o1, o2, c]
                        d2 = flat % w2
                        d1 = (flat // w2) % w1
                        d0 = flat // (w1 * w2)
                        gx[b, o0 * s0 + d0, o1 * s1 + d1, o2 * s2 + d2, c] += g[b, o0, o1, o2, c]


cdef void _maxpool1d_fwd(const floating[:, :, ::1] x, floating[:, :, ::1] out,
                         Py_ssize_t[:, :, ::1] arg,
                         Py_ssize_t w0, Py_ssize_t s0) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], O0 = out.shape[1], C = out.shape[2]
    cdef Py_ssize_t b, o0, c, d0, best_flat
    cdef floating v, best
    for b in range(B):
        for o0 in range(O0):
            for c in range(C):
                best = x[b, o0 * s0, c]
                best_flat = 0
                for d0 in range(w0):
                    v = x[b, o0 * s0 + d0, c]
                    if v > best:
                        best = v
                        best_flat = d0
                out[b, o0, c] = best
                arg[b, o0, c] = best_flat


cdef void _maxpool1d_bwd(const floating[:, :, ::1] g,
                         const Py_ssize_t[:, :, ::1] arg,
                         floating[:, :, ::1] gx,
                         Py_ssize_t w0, Py_ssize_t s0) noexcept nogil:
    cdef Py_ssize_t B = g.shape[0], O0 = g.shape[1], C = g.shape[2]
    cdef Py_ssize_t b, o0, c
    for b in range(B):
        for o0 in range(O0):
            for c in range(C):
                gx[b, o0 * s0 + arg[b, o0, c], c] += g[b, o0, c]


def maxpool_forward(x, window, stride):
    from . import numpy_kernels
    n = len(window)
    if n not in (1, 3):
        return numpy_kernels.maxpool_forward(x, window, stride)
    x = np.ascontiguousarray(x)
    spatial = x.shape[1:x.ndim - 1]
    out_spatial = tuple((s - w) // st + 1 for s, w, st in zip(spatial, window, stride))
    out_shape = (x.shape[0],) + out_spatial + (x.shape[x.ndim - 1],)
    out = np.empty(out_shape, dtype=x.dtype)
    arg = np.empty(out_shape, dtype=np.intp)
    if n == 3:
        if x.dtype == np.float64:
            _maxpool3d_fwd[double](x, out, arg, window[0], window[1], window[2],
                                   stride[0], stride[1], stride[2])
        else:
            _maxpool3d_fwd[float](x, out, arg, window[0], window[1], window[2],
                                  stride[0], stride[1], stride[2])
    else:
        if x.dtype == np.float64:
            _maxpool1d_fwd[double](x, out, arg, window[0], stride[0])
        else:
            _maxpool1d_fwd[float](x, out, arg, window[0], stride[0])
    return out, arg


def maxpool_backward(g, arg, x_shape, window, stride):
    from . import numpy_kernels
    n = len(window)
    if n not in (1, 3):
        return numpy_kernels.maxpool_backward(g, arg, x_shape, window, stride)
    g = np.ascontiguousarray(g)
    arg = np.ascontiguousarray(arg, dtype=np.intp)
    gx = np.zeros(x_shape, dtype=g.dtype)
    if n == 3:
        if g.dtype == np.float64:
            _maxpool3d_bwd[double](g, arg, gx, window[0], window[1], window[2],
                                   stride[0], stride[1], stride[2])
        else:
            _maxpool3d_bwd[float](g, arg, gx, window[0], window[1], window[2],
                                  stride[0], stride[1], stride[2])
    else:
        if g.dtype == np.float64:
            _maxpool1d_bwd[double](g, arg, gx, window[0], stride[0])
        else:
            _maxpool1d_bwd[float](g, arg, gx, window[0], stride[0])
    return gx


# ---------------------------------------------------------------------------
# SGBM cost aggregation
# ---------------------------------------------------------------------------

cdef void _sgm_cols(const float[:, :, ::1] cost, float[:, :, ::1] total,
                    float p1, float p2, bint reverse,
                    float[::1] prev) noexcept nogil:
    cdef Py_ssize_t H = cost.shape[0], W = cost.shape[1], D = cost.shape[2]
    cdef Py_ssize_t y, step, x, d
    cdef float m, best, cur
    for y in range(H):
        for step in range(W):
            x = W - 1 - step if reverse else step
            if step == 0:
                for d in range(D):
                    prev[d] = cost[y, x, d]
                    total[y, x, d] += prev[d]
                continue
            m = prev[0]
            for d in range(1, D):
                if prev[d] < m:
                    m = prev[d]
            # overwrite prev in place using a 3-point stencil: keep the two
            # neighbors needed before they are clobbered
            _stencil_update(cost, total, prev, y, x, D, m, p1, p2)


cdef inline void _stencil_update(const float[:, :, ::1] cost, float[:, :, ::1] total,
                                 float[::1] prev, Py_ssize_t y, Py_ssize_t x,
                                 Py_ssize_t D, float m, float p1, float p2) noexcept nogil:
    cdef Py_ssize_t d
    cdef float best, left, here, cur
    left = prev[0]
    for d in range(D):
        here = prev[d]
        best = here
        if d > 0 and left + p1 < best:
            best = left + p1
        if d < D - 1 and prev[d + 1] + p1 < best:
            best = prev[d + 1] + p1
        if m + p2 < best:
            best = m + p2
        cur = cost[y, x, d] + best - m
        left = here
        prev[d] = cur
        total[y, x, d] += cur


cdef void _sgm_rows(const float[:, :, ::1] cost, float[:, :, ::1] total,
                    float p1, float p2, bint reverse,
                    float[::1] prev) noexcept nogil:
    cdef Py_ssize_t H = cost.shape[0], W = cost.shape[1], D = cost.shape[2]
    cdef Py_ssize_t x, step, y, d
    cdef float m, best, cur
    for x in range(W):
        for step in range(H):
            y = H - 1 - step if reverse else step
            if step == 0:
                for d in range(D):
                    prev[d] = cost[y, x, d]
                    total[y, x, d] += prev[d]
                continue
            m = prev[0]
            for d in range(1, D):
                if prev[d] < m:
                    m = prev[d]
            _stencil_update(cost, total, prev, y, x, D, m, p1, p2)


def sgbm_aggregate(cost, p1, p2):
    cost = np.ascontiguousarray(cost, dtype=np.float32)
    total = np.zeros_like(cost)
    prev = np.empty(cost.shape[2], dtype=np.float32)
    _sgm_cols(cost, total, p1, p2, False, prev)
    _sgm_cols(cost, total, p1, p2, True, prev)
    _sgm_rows(cost, total, p1, p2, False, prev)
    _sgm_rows(cost, total, p1, p2, True, prev)
    return total
