"""Minimum-singular-value sweeps over frequency and delay."""
import numpy as np
from scipy.optimize import minimize, minimize_scalar

# bound on complex entries per batched SVD call
_CHUNK = 2_000_000


def sigma_min_open_loop(A, omegas):
    """sigma_min(j*w*I - A) for each w in ``omegas``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    w = np.asarray(omegas, dtype=float)
    M = 1j * w[:, None, None] * np.eye(n) - A
    return np.linalg.svd(M, compute_uv=False)[:, -1]


def sigma_min_delayed(A, G, rho, omegas, taus):
    """sigma_min(j*w*I - A + rho*exp(-j*w*tau)*G) on the (w, tau) grid.

    Returns an array of shape ``(len(omegas), len(taus))``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    w = np.asarray(omegas, dtype=float)
    t = np.asarray(taus, dtype=float)
    out = np.empty((w.size, t.size))
    rows = max(1, _CHUNK // max(1, t.size * n * n))
    eye = np.eye(n)
    for s in range(0, w.size, rows):
        wb = w[s:s + rows]
        phase = rho * np.exp(-1j * np.outer(wb, t))
        M = (1j * wb[:, None, None, None] * eye - A) + phase[:, :, None, None] * G
        out[s:s + rows] = np.linalg.svd(M, compute_uv=False)[..., -1]
    return out


def _sigma_point(A, G, rho, w, tau):
    n = A.shape[0]
    M = 1j * w * np.eye(n) - A + rho * np.exp(-1j * w * tau) * G
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def polish_open_loop(A, omegas, values, lo, hi, starts=3):
    """Refine the smallest grid values of sigma_min(jwI - A) on [lo, hi]."""
    order = np.argsort(values)[:starts]
    best_v, best_w = float(values[order[0]]), float(omegas[order[0]])
    dw = (hi - lo) / max(1, len(omegas) - 1)
    for k in order:
        a, b = max(lo, omegas[k] - dw), min(hi, omegas[k] + dw)
        if b <= a:
            continue
        res = minimize_scalar(
            lambda w: sigma_min_open_loop(A, [w])[0], bounds=(a, b), method="bounded",
            options={"xatol": 1e-12},
        )
        if res.fun < best_v:
            best_v, best_w = float(res.fun), float(res.x)
    return best_v, best_w


def polish_delayed(A, G, rho, grid, omegas, taus, starts=4):
    """Local Nelder-Mead refinement from the smallest grid points.

    A grid minimum overestimates the true minimum by roughly the gradient
    times half the spacing, which hides genuine zeros. Returns
    ``(value, omega, tau)`` of the best point found.
    """
    flat = np.argsort(grid, axis=None)[:starts]
    iw, it = np.unravel_index(flat, grid.shape)
    best = (float(grid[iw[0], it[0]]), float(omegas[iw[0]]), float(taus[it[0]]))
    w_lo, w_hi = float(omegas[0]), float(omegas[-1])
    t_lo, t_hi = float(taus[0]), float(taus[-1])
    dw = (w_hi - w_lo) / max(1, len(omegas) - 1)
    dt = (t_hi - t_lo) / max(1, len(taus) - 1)
    for a, b in zip(iw, it):
        if t_hi == t_lo:
            lo, hi = max(w_lo, omegas[a] - dw), min(w_hi, omegas[a] + dw)
            if hi <= lo:
                continue
            res = minimize_scalar(lambda w: _sigma_point(A, G, rho, w, t_lo),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun < best[0]:
                best = (float(res.fun), float(res.x), t_lo)
            continue
        x0 = np.array([omegas[a], taus[b]], dtype=float)
        simplex = np.array([x0, x0 + [dw, 0.0], x0 + [0.0, dt]])
        simplex[:, 0] = np.clip(simplex[:, 0], w_lo, w_hi)
        simplex[:, 1] = np.clip(simplex[:, 1], t_lo, t_hi)
        res = minimize(
            lambda x: _sigma_point(A, G, rho, x[0], x[1]),
            x0,
            method="Nelder-Mead",
            bounds=[(w_lo, w_hi), (t_lo, t_hi)],
            options={"initial_simplex": simplex, "xatol": 1e-13, "fatol": 1e-16,
                     "maxiter": 4000},
        )
        if res.fun < best[0]:
            best = (float(res.fun), float(res.x[0]), float(res.x[1]))
    return best
