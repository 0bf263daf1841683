# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterizer kernels: tight pixel x Gaussian loops.

Inputs arrive pre-projected and depth-sorted (front to back); the Python
wrapper owns projection, sorting and the chain rule back to world space so
both backends share that code path exactly.
"""

from libc.math cimport exp
from libc.stdlib cimport free, malloc


def forward(double[::1] u, double[::1] v, double[::1] sigma, double[::1] opacity,
            double[:, ::1] colors, double[:, :, ::1] image):
    """Alpha-composite onto `image`, which arrives filled with background."""
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t height = image.shape[0]
    cdef Py_ssize_t width = image.shape[1]
    cdef Py_ssize_t py, px, g, c
    cdef double t, w, dx, dy, d2, s2, bg0, bg1, bg2
    for py in range(height):
        for px in range(width):
            bg0 = image[py, px, 0]
            bg1 = image[py, px, 1]
            bg2 = image[py, px, 2]
            image[py, px, 0] = 0.0
            image[py, px, 1] = 0.0
            image[py, px, 2] = 0.0
            t = 1.0
            for g in range(n):
                dx = (px + 0.5) - u[g]
                dy = (py + 0.5) - v[g]
                d2 = dx * dx + dy * dy
                s2 = sigma[g] * sigma[g]
                if d2 > 9.0 * s2:
                    continue
                w = opacity[g] * exp(-0.5 * d2 / s2)
                image[py, px, 0] += colors[g, 0] * w * t
                image[py, px, 1] += colors[g, 1] * w * t
                image[py, px, 2] += colors[g, 2] * w * t
                t *= 1.0 - w
            image[py, px, 0] += bg0 * t
            image[py, px, 1] += bg1 * t
            image[py, px, 2] += bg2 * t


def backward(double[::1] u, double[::1] v, double[::1] sigma, double[::1] opacity,
             double[:, ::1] colors, double[::1] background,
             double[:, :, ::1] d_image,
             double[::1] d_u, double[::1] d_v, double[::1] d_sigma,
             double[::1] d_opacity, double[:, ::1] d_colors):
    """Screen-space gradients of the compositing expression."""
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t height = d_image.shape[0]
    cdef Py_ssize_t width = d_image.shape[1]
    cdef Py_ssize_t py, px, g
    cdef double t, dx, dy, d2, s2, kern, w, denom, dw, dkern, dd2
    cdef double after0, after1, after2, g0, g1, g2, tfin
    cdef double *wbuf = <double *> malloc(n * sizeof(double))
    cdef double *tbuf = <double *> malloc(n * sizeof(double))
    cdef double *kbuf = <double *> malloc(n * sizeof(double))
    cdef double *d2buf = <double *> malloc(n * sizeof(double))
    cdef double *dxbuf = <double *> malloc(n * sizeof(double))
    cdef double *dybuf = <double *> malloc(n * sizeof(double))
    if not (wbuf and tbuf and kbuf and d2buf and dxbuf and dybuf):
        free(wbuf); free(tbuf); free(kbuf); free(d2buf); free(dxbuf); free(dybuf)
        raise MemoryError()
    try:
        for py in range(height):
            for px in range(width):
                g0 = d_image[py, px, 0]
                g1 = d_image[py, px, 1]
                g2 = d_image[py, px, 2]
                t = 1.0
                for g in range(n):
                    dx = (px + 0.5) - u[g]
                    dy = (py + 0.5) - v[g]
                    d2 = dx * dx + dy * dy
                    s2 = sigma[g] * sigma[g]
                    if d2 > 9.0 * s2:
                        kern = 0.0
                        w = 0.0
                    else:
                        kern = exp(-0.5 * d2 / s2)
                        w = opacity[g] * kern
                    wbuf[g] = w
                    tbuf[g] = t
                    kbuf[g] = kern
                    d2buf[g] = d2
                    dxbuf[g] = dx
                    dybuf[g] = dy
                    t *= 1.0 - w
                tfin = t
                after0 = background[0] * tfin
                after1 = background[1] * tfin
                after2 = background[2] * tfin
                for g in range(n - 1, -1, -1):
                    w = wbuf[g]
                    t = tbuf[g]
                    kern = kbuf[g]
                    # dC/dcolor, contracted with the pixel cotangent
                    d_colors[g, 0] += g0 * w * t
                    d_colors[g, 1] += g1 * w * t
                    d_colors[g, 2] += g2 * w * t
                    denom = 1.0 - w
                    if denom < 1e-12:
                        denom = 1e-12
                    dw = g0 * (colors[g, 0] * t - after0 / denom) \
                        + g1 * (colors[g, 1] * t - after1 / denom) \
                        + g2 * (colors[g, 2] * t - after2 / denom)
                    if kern != 0.0:
                        d_opacity[g] += dw * kern
                        dkern = dw * opacity[g]
                        s2 = sigma[g] * sigma[g]
                        dd2 = dkern * kern * (-0.5 / s2)
                        d_sigma[g] += dkern * kern * d2buf[g] / (s2 * sigma[g])
                        d_u[g] += dd2 * (-2.0 * dxbuf[g])
                        d_v[g] += dd2 * (-2.0 * dybuf[g])
                    after0 += colors[g, 0] * w * t
                    after1 += colors[g, 1] * w * t
                    after2 += colors[g, 2] * w * t
    finally:
        free(wbuf); free(tbuf); free(kbuf); free(d2buf); free(dxbuf); free(dybuf)
