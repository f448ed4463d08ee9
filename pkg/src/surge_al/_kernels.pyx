# cython: language_level=3
"""Compiled training kernels.

Same functions, signatures and flat parameter layout as ``_kernels_py``.
Matrix products go through BLAS ``dgemm``; everything else is plain C loops,
and a whole epoch runs without the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, tanh, fabs
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"

# rows per chunk when predicting on large inputs
cdef Py_ssize_t PREDICT_CHUNK = 2048


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       const double* A, int lda, const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # row-major C[m, n] = op(A)[m, k] @ op(B)[k, n] + beta * C
    cdef double one = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &one, <double*>B, &ldb, <double*>A, &lda,
          &beta, C, &ldc)


cdef inline double _softplus(double z) noexcept nogil:
    if z > 0.0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef struct Net:
    int n_layers        # number of weight layers (hidden + output)
    int* sizes          # n_layers + 1 entries
    Py_ssize_t* w_off   # offset of Wt for each layer
    Py_ssize_t* b_off   # offset of the bias for each layer
    int max_width


cdef int _net_init(Net* net, object sizes) except -1:
    cdef int i
    cdef Py_ssize_t off = 0
    net.n_layers = len(sizes) - 1
    if net.n_layers < 1:
        raise ValueError("need at least one layer")
    net.sizes = <int*>malloc((net.n_layers + 1) * sizeof(int))
    net.w_off = <Py_ssize_t*>malloc(net.n_layers * sizeof(Py_ssize_t))
    net.b_off = <Py_ssize_t*>malloc(net.n_layers * sizeof(Py_ssize_t))
    if net.sizes == NULL or net.w_off == NULL or net.b_off == NULL:
        _net_free(net)
        raise MemoryError()
    net.max_width = 0
    for i in range(net.n_layers + 1):
        net.sizes[i] = int(sizes[i])
        if net.sizes[i] > net.max_width:
            net.max_width = net.sizes[i]
    for i in range(net.n_layers):
        net.w_off[i] = off
        off += <Py_ssize_t>net.sizes[i] * net.sizes[i + 1]
        net.b_off[i] = off
        off += net.sizes[i + 1]
    return 0


cdef void _net_free(Net* net) noexcept:
    free(net.sizes)
    free(net.w_off)
    free(net.b_off)
    net.sizes = NULL
    net.w_off = NULL
    net.b_off = NULL


cdef void _forward(const Net* net, const double* theta, int bs,
                   double** acts, double* z_out) noexcept nogil:
    # acts[0] holds the input rows; acts[l] receives the output of layer l-1
    cdef int l, r, j, n_in, n_out
    cdef double* out
    cdef const double* bias
    for l in range(net.n_layers):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        out = z_out if l == net.n_layers - 1 else acts[l + 1]
        bias = theta + net.b_off[l]
        for r in range(bs):
            for j in range(n_out):
                out[r * n_out + j] = bias[j]
        _gemm(b'N', b'N', bs, n_out, n_in, acts[l], n_in,
              theta + net.w_off[l], n_out, 1.0, out, n_out)
        if l < net.n_layers - 1:
            for j in range(bs * n_out):
                if out[j] < 0.0:
                    out[j] = 0.0


cdef double _loss_grad(const Net* net, const double* theta, double* grad,
                       int bs, double** acts, double* z_out,
                       double* dz_a, double* dz_b, const double* y,
                       double tanh_scale, double floor) noexcept nogil:
    cdef int l, r, j, n_in, n_out
    cdef double u, mean, var, res, res2, loss = 0.0
    cdef double* dz = dz_a
    cdef double* dnext = dz_b
    cdef double* tmp
    cdef double* gb
    cdef const double* a

    _forward(net, theta, bs, acts, z_out)

    for r in range(bs):
        u = tanh(z_out[2 * r] / tanh_scale)
        mean = tanh_scale * u
        var = _softplus(z_out[2 * r + 1]) + floor
        res = mean - y[r]
        res2 = res * res
        loss += 0.5 * log(var) + res2 / (2.0 * var)
        dz[2 * r] = (res / var) * (1.0 - u * u) / bs
        dz[2 * r + 1] = (0.5 / var - res2 / (2.0 * var * var)) * _sigmoid(z_out[2 * r + 1]) / bs

    for l in range(net.n_layers - 1, -1, -1):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        a = acts[l]
        _gemm(b'T', b'N', n_in, n_out, bs, a, n_in, dz, n_out,
              0.0, grad + net.w_off[l], n_out)
        gb = grad + net.b_off[l]
        for j in range(n_out):
            gb[j] = 0.0
        for r in range(bs):
            for j in range(n_out):
                gb[j] += dz[r * n_out + j]
        if l > 0:
            _gemm(b'N', b'T', bs, n_in, n_out, dz, n_out,
                  theta + net.w_off[l], n_out, 0.0, dnext, n_in)
            for j in range(bs * n_in):
                if a[j] <= 0.0:
                    dnext[j] = 0.0
            tmp = dz
            dz = dnext
            dnext = tmp
    return loss / bs


cdef void _adam(double* theta, const double* grad, double* m, double* v,
                Py_ssize_t n, long t, double lr, double beta1, double beta2,
                double eps) noexcept nogil:
    cdef Py_ssize_t i
    cdef double g, bc1 = 1.0 - beta1 ** t, bc2 = 1.0 - beta2 ** t
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g)
        theta[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


cdef class _Workspace:
    """Activation buffers for up to ``rows`` samples."""
    cdef double** acts
    cdef object buffers
    cdef double[::1] z_out
    cdef double[::1] dz_a
    cdef double[::1] dz_b
    cdef int n_acts

    def __cinit__(self, object sizes, int rows):
        cdef int l
        cdef double[::1] buf
        cdef int width = max(int(s) for s in sizes)
        self.n_acts = len(sizes) - 1
        self.acts = <double**>malloc(self.n_acts * sizeof(double*))
        if self.acts == NULL:
            raise MemoryError()
        self.buffers = []
        for l in range(self.n_acts):
            buf = np.empty(rows * int(sizes[l]), dtype=np.float64)
            self.buffers.append(buf)
            self.acts[l] = &buf[0]
        self.z_out = np.empty(rows * 2, dtype=np.float64)
        self.dz_a = np.empty(rows * width, dtype=np.float64)
        self.dz_b = np.empty(rows * width, dtype=np.float64)

    def __dealloc__(self):
        free(self.acts)


cdef inline void _gather(const double* X, int n_features, const Py_ssize_t* idx,
                         int count, const double* y, double* x_out,
                         double* y_out) noexcept nogil:
    cdef int r, j
    cdef Py_ssize_t row
    for r in range(count):
        row = idx[r]
        for j in range(n_features):
            x_out[r * n_features + j] = X[row * n_features + j]
        y_out[r] = y[row]


def param_count(sizes):
    return int(sum(int(sizes[i]) * int(sizes[i + 1]) + int(sizes[i + 1])
                   for i in range(len(sizes) - 1)))


def _check(theta, sizes, X):
    if theta.shape[0] != param_count(sizes):
        raise ValueError("parameter vector does not match layer sizes")
    if X.shape[1] != int(sizes[0]):
        raise ValueError("input width does not match layer sizes")


def predict(double[::1] theta, sizes, X, double tanh_scale, double floor):
    cdef const double[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.float64)
    _check(theta, sizes, Xc)
    cdef Py_ssize_t n = Xc.shape[0]
    cdef Py_ssize_t start, r
    cdef int bs, n_features = Xc.shape[1]
    cdef Net net
    cdef double u
    mean_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    if n == 0:
        return mean_arr, var_arr
    _net_init(&net, sizes)
    cdef _Workspace ws = _Workspace(sizes, min(n, PREDICT_CHUNK))
    try:
        with nogil:
            start = 0
            while start < n:
                bs = <int>min(n - start, PREDICT_CHUNK)
                for r in range(bs * n_features):
                    ws.acts[0][r] = Xc[start + r // n_features, r % n_features]
                _forward(&net, &theta[0], bs, ws.acts, &ws.z_out[0])
                for r in range(bs):
                    u = tanh(ws.z_out[2 * r] / tanh_scale)
                    mean[start + r] = tanh_scale * u
                    var[start + r] = _softplus(ws.z_out[2 * r + 1]) + floor
                start += bs
    finally:
        _net_free(&net)
    return mean_arr, var_arr


def loss_grad(double[::1] theta, sizes, X, y, double tanh_scale, double floor,
              double[::1] grad):
    """Mean Gaussian NLL over the batch; writes its gradient into ``grad``."""
    cdef const double[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yc = np.ascontiguousarray(y, dtype=np.float64)
    _check(theta, sizes, Xc)
    if grad.shape[0] != theta.shape[0]:
        raise ValueError("gradient buffer does not match parameters")
    cdef int bs = Xc.shape[0]
    cdef int n_features = Xc.shape[1]
    cdef Net net
    cdef double loss
    cdef Py_ssize_t r
    _net_init(&net, sizes)
    cdef _Workspace ws = _Workspace(sizes, bs)
    try:
        with nogil:
            for r in range(<Py_ssize_t>bs * n_features):
                ws.acts[0][r] = Xc[r // n_features, r % n_features]
            loss = _loss_grad(&net, &theta[0], &grad[0], bs, ws.acts,
                              &ws.z_out[0], &ws.dz_a[0], &ws.dz_b[0], &yc[0],
                              tanh_scale, floor)
    finally:
        _net_free(&net)
    return loss


def adam_update(double[::1] theta, const double[::1] grad, double[::1] m,
                double[::1] v, long t, double lr, double beta1, double beta2,
                double eps):
    """One in-place Adam update; ``t`` is the (already incremented) step count."""
    cdef Py_ssize_t n = theta.shape[0]
    if grad.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("shape mismatch between parameters and optimizer state")
    with nogil:
        _adam(&theta[0], &grad[0], &m[0], &v[0], n, t, lr, beta1, beta2, eps)


def train_epoch(double[::1] theta, double[::1] m, double[::1] v, long t, sizes,
                X, y, order, int batch_size, double lr, double beta1,
                double beta2, double eps, double tanh_scale, double floor):
    """Run one pass over ``order`` in mini-batches, updating in place.

    Returns ``(mean_loss, t)``.
    """
    cdef const double[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yc = np.ascontiguousarray(y, dtype=np.float64)
    cdef const Py_ssize_t[::1] idx = np.ascontiguousarray(order, dtype=np.intp)
    _check(theta, sizes, Xc)
    cdef Py_ssize_t n_params = theta.shape[0]
    if m.shape[0] != n_params or v.shape[0] != n_params:
        raise ValueError("shape mismatch between parameters and optimizer state")
    cdef Py_ssize_t n = idx.shape[0]
    if n == 0:
        return 0.0, t
    cdef int n_features = Xc.shape[1]
    cdef int bs
    cdef Py_ssize_t start
    cdef double total = 0.0
    cdef Net net
    grad_arr = np.zeros(n_params, dtype=np.float64)
    ybuf_arr = np.empty(batch_size, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[::1] ybuf = ybuf_arr
    _net_init(&net, sizes)
    cdef _Workspace ws = _Workspace(sizes, min(n, batch_size))
    try:
        with nogil:
            start = 0
            while start < n:
                bs = <int>min(n - start, batch_size)
                _gather(&Xc[0, 0], n_features, &idx[start], bs, &yc[0],
                        ws.acts[0], &ybuf[0])
                total += bs * _loss_grad(&net, &theta[0], &grad[0], bs, ws.acts,
                                         &ws.z_out[0], &ws.dz_a[0], &ws.dz_b[0],
                                         &ybuf[0], tanh_scale, floor)
                t += 1
                _adam(&theta[0], &grad[0], &m[0], &v[0], n_params, t, lr,
                      beta1, beta2, eps)
                start += bs
    finally:
        _net_free(&net)
    return total / n, t
