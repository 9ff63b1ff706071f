"""Fixed-step RK4 stepping for linear multi-delay systems.

Two implementations of the same scheme:

* ``dde_rk4_loop``: scalar loops, compiled with numba when available.
* ``dde_rk4_numpy``: vectorized numpy, the fallback path.

Both integrate dz/dt = A0 z + W v(t), where column k of W multiplies
``v_k(t) = z[src[k]](t - lag[k])``. Delayed values come from cubic Hermite
interpolation over completed knots (a ring buffer for t >= 0, the initial
history knots for t < 0). The caller guarantees h <= min(lag) / 4 so that no
lookup ever lands inside the step being taken.

Return status: -1 on success, otherwise the index of the step whose state
went non-finite.
"""
import numpy as np

from ._jit import USE_NUMBA, njit


def _hermite_weights(th, h):
    th2 = th * th
    th3 = th2 * th
    return (2.0 * th3 - 3.0 * th2 + 1.0,
            (th3 - 2.0 * th2 + th) * h,
            -2.0 * th3 + 3.0 * th2,
            (th3 - th2) * h)


_hw = njit(_hermite_weights)


def dde_rk4_loop(A0, W, lag, src, ht, hz, hd, z0, h, nsteps, stride, out):
    D = z0.shape[0]
    K = lag.shape[0]
    R = 3
    for k in range(K):
        need = int(np.ceil(lag[k] / h)) + 3
        if need > R:
            R = need
    rz = np.zeros((R, D))
    rd = np.zeros((R, D))
    M0 = ht.shape[0]

    z = z0.copy()
    v = np.zeros(K)
    k1 = np.zeros(D)
    k2 = np.zeros(D)
    k3 = np.zeros(D)
    k4 = np.zeros(D)
    tmp = np.zeros(D)
    out[0, :] = z

    for n in range(nsteps):
        for stage in range(3):
            c = 0.0 if stage == 0 else (0.5 if stage == 1 else 1.0)
            # delayed values at t_n + c h
            for k in range(K):
                u = (n + c) - lag[k] / h
                j = src[k]
                if u < 0.0:
                    s = u * h
                    i = np.searchsorted(ht, s, side="right") - 1
                    if i < 0:
                        i = 0
                    if i > M0 - 2:
                        i = M0 - 2
                    dt = ht[i + 1] - ht[i]
                    th = (s - ht[i]) / dt
                    a0, a1, a2, a3 = _hw(th, dt)
                    v[k] = a0 * hz[i, j] + a1 * hd[i, j] + a2 * hz[i + 1, j] + a3 * hd[i + 1, j]
                else:
                    i = int(np.floor(u))
                    th = u - i
                    p = i % R
                    q = (i + 1) % R
                    a0, a1, a2, a3 = _hw(th, h)
                    v[k] = a0 * rz[p, j] + a1 * rd[p, j] + a2 * rz[q, j] + a3 * rd[q, j]
            if K > 0:
                wv = np.dot(W, v)
            else:
                wv = np.zeros(D)
            if stage == 0:
                k1[:] = np.dot(A0, z) + wv
                rz[n % R, :] = z
                rd[n % R, :] = k1
                for d in range(D):
                    tmp[d] = z[d] + 0.5 * h * k1[d]
            elif stage == 1:
                k2[:] = np.dot(A0, tmp) + wv
                for d in range(D):
                    tmp[d] = z[d] + 0.5 * h * k2[d]
                k3[:] = np.dot(A0, tmp) + wv
                for d in range(D):
                    tmp[d] = z[d] + h * k3[d]
            else:
                k4[:] = np.dot(A0, tmp) + wv
        finite = True
        for d in range(D):
            z[d] = z[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
            if not np.isfinite(z[d]):
                finite = False
        if not finite:
            return n
        if (n + 1) % stride == 0:
            out[(n + 1) // stride, :] = z
    return -1


def _lookup_numpy(u, lag_src, ht, hz, hd, rz, rd, h, R):
    v = np.empty(u.shape[0])
    neg = u < 0.0
    if neg.any():
        s = u[neg] * h
        i = np.clip(np.searchsorted(ht, s, side="right") - 1, 0, ht.shape[0] - 2)
        dt = ht[i + 1] - ht[i]
        a0, a1, a2, a3 = _hermite_weights((s - ht[i]) / dt, dt)
        j = lag_src[neg]
        v[neg] = a0 * hz[i, j] + a1 * hd[i, j] + a2 * hz[i + 1, j] + a3 * hd[i + 1, j]
    pos = ~neg
    if pos.any():
        up = u[pos]
        i = np.floor(up).astype(np.int64)
        a0, a1, a2, a3 = _hermite_weights(up - i, h)
        p, q, j = i % R, (i + 1) % R, lag_src[pos]
        v[pos] = a0 * rz[p, j] + a1 * rd[p, j] + a2 * rz[q, j] + a3 * rd[q, j]
    return v


def dde_rk4_numpy(A0, W, lag, src, ht, hz, hd, z0, h, nsteps, stride, out):
    # overflow is reported through the return status, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _dde_rk4_numpy(A0, W, lag, src, ht, hz, hd, z0, h, nsteps, stride, out)


def _dde_rk4_numpy(A0, W, lag, src, ht, hz, hd, z0, h, nsteps, stride, out):
    D = z0.shape[0]
    R = max(3, int(np.max(np.ceil(lag / h))) + 3) if lag.size else 3
    rz = np.zeros((R, D))
    rd = np.zeros((R, D))
    ratio = lag / h
    z = z0.copy()
    out[0] = z
    for n in range(nsteps):
        if lag.size:
            v1 = _lookup_numpy(n - ratio, src, ht, hz, hd, rz, rd, h, R)
        else:
            v1 = np.zeros(0)
        k1 = A0 @ z + W @ v1
        rz[n % R] = z
        rd[n % R] = k1
        if lag.size:
            wv2 = W @ _lookup_numpy(n + 0.5 - ratio, src, ht, hz, hd, rz, rd, h, R)
            wv4 = W @ _lookup_numpy(n + 1.0 - ratio, src, ht, hz, hd, rz, rd, h, R)
        else:
            wv2 = wv4 = np.zeros(D)
        k2 = A0 @ (z + 0.5 * h * k1) + wv2
        k3 = A0 @ (z + 0.5 * h * k2) + wv2
        k4 = A0 @ (z + h * k3) + wv4
        z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            return n
        if (n + 1) % stride == 0:
            out[(n + 1) // stride] = z
    return -1


if USE_NUMBA:
    dde_rk4 = njit(dde_rk4_loop)
else:
    dde_rk4 = dde_rk4_numpy
