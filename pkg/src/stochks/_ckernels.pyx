# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels (FFTW transforms, one row at a time without the GIL).

Same signatures and in-place semantics as ``_pykernels``.
"""
from libc.math cimport sqrt, isfinite, M_PI
from libc.string cimport memset

NAME = "compiled"

cdef extern from "fftw3.h" nogil:
    ctypedef double fftw_complex[2]
    ctypedef void* fftw_plan
    fftw_plan fftw_plan_dft_r2c_1d(int n, double* inp, fftw_complex* out, unsigned flags)
    fftw_plan fftw_plan_dft_c2r_1d(int n, fftw_complex* inp, double* out, unsigned flags)
    void fftw_execute(const fftw_plan p)
    void fftw_destroy_plan(fftw_plan p)
    void* fftw_malloc(size_t n)
    void fftw_free(void* p)
    unsigned FFTW_ESTIMATE


cdef class Transform:
    cdef int K, N, nh
    cdef double L, h, s
    cdef double* grid_in      # c2r output / r2c input
    cdef double* grid_a
    cdef double* spec         # interleaved complex, nh entries
    cdef double* kappa
    cdef fftw_plan fwd
    cdef fftw_plan inv

    def __cinit__(self, int K, int N, double L):
        if N <= 3 * K:
            raise ValueError("collocation grid must have at least 3K+1 points")
        self.K = K
        self.N = N
        self.nh = N // 2 + 1
        self.L = L
        self.h = 1.0 / sqrt(2.0 * L)
        self.s = sqrt(2.0 * L)
        self.grid_in = <double*> fftw_malloc(N * sizeof(double))
        self.grid_a = <double*> fftw_malloc(N * sizeof(double))
        self.spec = <double*> fftw_malloc(2 * self.nh * sizeof(double))
        self.kappa = <double*> fftw_malloc((K + 1) * sizeof(double))
        if not (self.grid_in and self.grid_a and self.spec and self.kappa):
            raise MemoryError()
        cdef int k
        for k in range(K + 1):
            self.kappa[k] = 2.0 * M_PI / L * k
        self.fwd = fftw_plan_dft_r2c_1d(N, self.grid_in, <fftw_complex*> self.spec, FFTW_ESTIMATE)
        self.inv = fftw_plan_dft_c2r_1d(N, <fftw_complex*> self.spec, self.grid_in, FFTW_ESTIMATE)
        if self.fwd == NULL or self.inv == NULL:
            raise RuntimeError("FFTW planning failed")

    def __dealloc__(self):
        if self.fwd != NULL:
            fftw_destroy_plan(self.fwd)
        if self.inv != NULL:
            fftw_destroy_plan(self.inv)
        fftw_free(self.grid_in)
        fftw_free(self.grid_a)
        fftw_free(self.spec)
        fftw_free(self.kappa)

    cdef void to_grid(self, const double* u, double* out, bint derivative) noexcept nogil:
        cdef int k
        cdef double re, im, kap
        memset(self.spec, 0, 2 * self.nh * sizeof(double))
        for k in range(1, self.K + 1):
            re = self.h * u[2 * k - 1]
            im = -self.h * u[2 * k - 2]
            if derivative:
                kap = self.kappa[k]
                self.spec[2 * k] = -kap * im
                self.spec[2 * k + 1] = kap * re
            else:
                self.spec[2 * k] = re
                self.spec[2 * k + 1] = im
        fftw_execute(self.inv)
        if out != self.grid_in:
            for k in range(self.N):
                out[k] = self.grid_in[k]

    cdef void project(self, double* out, int K_out, bint derivative, double factor) noexcept nogil:
        """r2c of grid_in, then coefficients of the first K_out pairs (optionally of factor * d/dx)."""
        cdef int k
        cdef double re, im, t
        cdef double scale = self.s / self.N
        fftw_execute(self.fwd)
        for k in range(1, K_out + 1):
            re = self.spec[2 * k] * scale
            im = self.spec[2 * k + 1] * scale
            if derivative:
                t = factor * self.kappa[k]
                out[2 * k - 2] = -t * re
                out[2 * k - 1] = -t * im
            else:
                out[2 * k - 2] = -im
                out[2 * k - 1] = re

    cdef void self_term(self, const double* u, double* out) noexcept nogil:
        cdef int m
        self.to_grid(u, self.grid_in, False)
        for m in range(self.N):
            self.grid_in[m] = self.grid_in[m] * self.grid_in[m]
        self.project(out, self.K, True, 0.5)

    cdef void sym_term(self, const double* u, const double* U, double* out) noexcept nogil:
        cdef int m
        self.to_grid(u, self.grid_a, False)
        self.to_grid(U, self.grid_in, False)
        for m in range(self.N):
            self.grid_in[m] = self.grid_in[m] * self.grid_a[m]
        self.project(out, self.K, True, 1.0)

    cdef void general(self, const double* u, const double* v, double* out, int K_out) noexcept nogil:
        cdef int m
        self.to_grid(u, self.grid_a, False)
        self.to_grid(v, self.grid_in, True)
        for m in range(self.N):
            self.grid_in[m] = self.grid_a[m] * self.grid_in[m]
        self.project(out, K_out, False, 1.0)


cdef inline void _theta(double s, double R, double* th, double* dth) noexcept nogil:
    cdef double x = s - R
    if x <= 0.0:
        th[0] = 1.0
        dth[0] = 0.0
    elif x >= 1.0:
        th[0] = 0.0
        dth[0] = 0.0
    else:
        th[0] = 1.0 - x * x * (3.0 - 2.0 * x)
        dth[0] = -6.0 * x * (1.0 - x)


cdef inline bint _finite(const double* x, int n) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    for i in range(n):
        acc += x[i] * 0.0
    return isfinite(acc)


cdef inline double _dot(const double* x, const double* y, int n) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    for i in range(n):
        acc += x[i] * y[i]
    return acc


def nonlinear(u, double L, int N):
    import numpy as np
    cdef double[:, ::1] uu = np.ascontiguousarray(np.atleast_2d(u), dtype=np.float64)
    cdef int n = uu.shape[1], K = n // 2, m
    out = np.empty((uu.shape[0], n))
    cdef double[:, ::1] oo = out
    cdef Transform tr = Transform(K, N, L)
    with nogil:
        for m in range(uu.shape[0]):
            tr.self_term(&uu[m, 0], &oo[m, 0])
    return out.reshape(np.shape(u))


def bilinear(u, v, double L, int N, int K_out):
    import numpy as np
    shape = np.shape(u)
    cdef double[:, ::1] uu = np.ascontiguousarray(np.atleast_2d(u), dtype=np.float64)
    cdef double[:, ::1] vv = np.ascontiguousarray(np.atleast_2d(v), dtype=np.float64)
    cdef int n = uu.shape[1], K = n // 2, m
    if K_out > K:
        raise ValueError("compiled bilinear supports K_out <= K")
    out = np.empty((uu.shape[0], 2 * K_out))
    cdef double[:, ::1] oo = out
    cdef Transform tr = Transform(K, N, L)
    with nogil:
        for m in range(uu.shape[0]):
            tr.general(&uu[m, 0], &vv[m, 0], &oo[m, 0], K_out)
    return out.reshape(shape[:-1] + (2 * K_out,))


def advance_u(double[:, ::1] u, const double[::1] E, const double[::1] Phi, const double[:, :, ::1] noise,
              double L, int N, double R, bint nonlinear, int stride, double[:, :, ::1] rec,
              long[::1] status, long step0):
    cdef int M = u.shape[0], n = u.shape[1], S = noise.shape[0]
    cdef int m, st, i
    cdef bint cut = isfinite(R)
    cdef double th, dth
    cdef Transform tr = Transform(n // 2, N, L)
    import numpy as np
    Bu_arr = np.zeros(n)
    cdef double[::1] Bu = Bu_arr
    with nogil:
        for m in range(M):
            if status[m] >= 0:
                continue
            for st in range(S):
                th = 1.0
                if nonlinear:
                    tr.self_term(&u[m, 0], &Bu[0])
                    if cut:
                        _theta(_dot(&u[m, 0], &u[m, 0], n), R, &th, &dth)
                for i in range(n):
                    u[m, i] = E[i] * u[m, i] + noise[st, m, i]
                    if nonlinear:
                        u[m, i] = u[m, i] - Phi[i] * (th * Bu[i])
                if not _finite(&u[m, 0], n):
                    status[m] = step0 + st + 1
                    break
                if (st + 1) % stride == 0:
                    for i in range(n):
                        rec[(st + 1) // stride - 1, m, i] = u[m, i]


def advance_vz(double[:, ::1] v, double[:, ::1] z, const double[::1] Ev, const double[::1] Phiv,
               const double[::1] Ez, const double[:, :, ::1] noise_z, double a, double L, int N, double R,
               bint nonlinear, int stride, double[:, :, ::1] rec_v, double[:, :, ::1] rec_z,
               long[::1] status, long step0):
    cdef int M = v.shape[0], n = v.shape[1], S = noise_z.shape[0]
    cdef int m, st, i
    cdef bint cut = isfinite(R)
    cdef double th, dth, f
    cdef Transform tr = Transform(n // 2, N, L)
    import numpy as np
    u_arr = np.zeros(n)
    Bu_arr = np.zeros(n)
    cdef double[::1] uu = u_arr
    cdef double[::1] Bu = Bu_arr
    with nogil:
        for m in range(M):
            if status[m] >= 0:
                continue
            for st in range(S):
                for i in range(n):
                    uu[i] = v[m, i] + z[m, i]
                th = 1.0
                if nonlinear:
                    tr.self_term(&uu[0], &Bu[0])
                    if cut:
                        _theta(_dot(&uu[0], &uu[0], n), R, &th, &dth)
                for i in range(n):
                    f = a * uu[i]
                    if nonlinear:
                        f = f - th * Bu[i]
                    v[m, i] = Ev[i] * v[m, i] + Phiv[i] * f
                    z[m, i] = Ez[i] * z[m, i] + noise_z[st, m, i]
                if not _finite(&v[m, 0], n):
                    status[m] = step0 + st + 1
                    break
                if (st + 1) % stride == 0:
                    for i in range(n):
                        rec_v[(st + 1) // stride - 1, m, i] = v[m, i]
                        rec_z[(st + 1) // stride - 1, m, i] = z[m, i]


def advance_tangent(double[:, ::1] u, double[:, ::1] U, const double[::1] E, const double[::1] Phi,
                    const double[:, :, ::1] noise, double L, int N, double R, bint nonlinear, int stride,
                    double[:, :, ::1] rec_u, double[:, :, ::1] rec_U, long[::1] status, long step0):
    cdef int M = u.shape[0], n = u.shape[1], S = noise.shape[0]
    cdef int m, st, i
    cdef bint cut = isfinite(R)
    cdef double th, dth, proj
    cdef Transform tr = Transform(n // 2, N, L)
    import numpy as np
    Bu_arr = np.zeros(n)
    sym_arr = np.zeros(n)
    cdef double[::1] Bu = Bu_arr
    cdef double[::1] sym = sym_arr
    with nogil:
        for m in range(M):
            if status[m] >= 0:
                continue
            for st in range(S):
                th = 1.0
                dth = 0.0
                if nonlinear:
                    tr.self_term(&u[m, 0], &Bu[0])
                    tr.sym_term(&u[m, 0], &U[m, 0], &sym[0])
                    if cut:
                        _theta(_dot(&u[m, 0], &u[m, 0], n), R, &th, &dth)
                    proj = _dot(&u[m, 0], &U[m, 0], n)
                for i in range(n):
                    U[m, i] = E[i] * U[m, i]
                    u[m, i] = E[i] * u[m, i] + noise[st, m, i]
                    if nonlinear:
                        U[m, i] = U[m, i] - Phi[i] * (th * sym[i] + (2.0 * dth * proj) * Bu[i])
                        u[m, i] = u[m, i] - Phi[i] * (th * Bu[i])
                if not (_finite(&u[m, 0], n) and _finite(&U[m, 0], n)):
                    status[m] = step0 + st + 1
                    break
                if (st + 1) % stride == 0:
                    for i in range(n):
                        rec_u[(st + 1) // stride - 1, m, i] = u[m, i]
                        rec_U[(st + 1) // stride - 1, m, i] = U[m, i]
