"""Method-of-steps integration of linear multi-delay systems."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import IntegrationError, InvalidInput


def _hermite(t0, t1, z0, z1, d0, d1, t):
    dt = t1 - t0
    a0, a1, a2, a3 = _kernels._hermite_weights((t - t0) / dt, dt)
    return a0 * z0 + a1 * d0 + a2 * z1 + a3 * d1


def _hermite_slope(t0, t1, z0, z1, d0, d1, t):
    dt = t1 - t0
    th = (t - t0) / dt
    return ((6 * th * th - 6 * th) * z0 + (3 * th * th - 4 * th + 1) * dt * d0
            + (-6 * th * th + 6 * th) * z1 + (3 * th * th - 2 * th) * dt * d1) / dt


class HistoryBuffer:
    """Piecewise cubic Hermite trajectory through (t_k, z_k, dz_k) knots."""

    def __init__(self, times, values, derivs=None):
        t = np.asarray(times, dtype=float).ravel()
        z = np.asarray(values, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != t.size:
            raise InvalidInput("history values must have one row per knot")
        if t.size < 2:
            raise InvalidInput("history needs at least two knots")
        if np.any(np.diff(t) <= 0):
            raise InvalidInput("history knots must be strictly increasing")
        if derivs is None:
            d = np.gradient(z, t, axis=0, edge_order=2 if t.size > 2 else 1)
        else:
            d = np.asarray(derivs, dtype=float).reshape(z.shape)
        self._t, self._z, self._d = list(t), list(z), list(d)

    @classmethod
    def constant(cls, value, t_start, t_end=0.0):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if not t_start < t_end:
            t_start = t_end - 1.0
        return cls([t_start, t_end], [value, value], np.zeros((2, value.size)))

    @property
    def times(self):
        return np.array(self._t)

    @property
    def values(self):
        return np.array(self._z)

    @property
    def derivs(self):
        return np.array(self._d)

    @property
    def dim(self):
        return len(self._z[0])

    @property
    def span(self):
        return self._t[0], self._t[-1]

    def append(self, t, z, dz):
        if t <= self._t[-1]:
            raise InvalidInput(f"knot time {t} not after {self._t[-1]}")
        self._t.append(float(t))
        self._z.append(np.asarray(z, dtype=float))
        self._d.append(np.asarray(dz, dtype=float))

    def prune(self, t_min):
        """Drop knots no longer needed to evaluate on [t_min, t_now]."""
        k = int(np.searchsorted(self._t, t_min, side="right")) - 1
        k = min(max(k, 0), len(self._t) - 2)
        if k > 0:
            del self._t[:k], self._z[:k], self._d[:k]

    def _segment(self, t):
        lo, hi = self.span
        if not lo <= t <= hi:
            raise InvalidInput(f"t = {t} outside history span [{lo}, {hi}]")
        i = int(np.searchsorted(self._t, t, side="right")) - 1
        return min(max(i, 0), len(self._t) - 2)

    def evaluate(self, t):
        i = self._segment(t)
        return _hermite(self._t[i], self._t[i + 1], self._z[i], self._z[i + 1],
                        self._d[i], self._d[i + 1], t)

    def slope(self, t):
        i = self._segment(t)
        return _hermite_slope(self._t[i], self._t[i + 1], self._z[i], self._z[i + 1],
                              self._d[i], self._d[i + 1], t)

    __call__ = evaluate


def history_eval(buffer, t):
    """Value of ``buffer`` at ``t``; never extrapolates."""
    return buffer.evaluate(t)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    layout: object = None
    step_size: float | None = None

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise InvalidInput("times and states lengths differ")


def _split_delays(system, h):
    """Fold zero delays into A0 and compress the rest to their nonzero columns."""
    A0 = np.array(system.A0, dtype=float)
    cols, lags, blocks = [], [], []
    for tau, Ad in system.delay_terms:
        Ad = np.asarray(Ad, dtype=float)
        if tau == 0:
            A0 += Ad
            continue
        nz = np.flatnonzero(np.any(Ad != 0, axis=0))
        cols.append(nz)
        lags.append(np.full(nz.size, float(tau)))
        blocks.append(Ad[:, nz])
    D = A0.shape[0]
    if blocks:
        W = np.ascontiguousarray(np.hstack(blocks))
        src = np.concatenate(cols).astype(np.int64)
        lag = np.concatenate(lags)
    else:
        W = np.zeros((D, 0))
        src = np.zeros(0, dtype=np.int64)
        lag = np.zeros(0)
    return np.ascontiguousarray(A0), W, lag, src


def _initial_knots(initial, layout, D, depth):
    """Merge the initial data into one full-state knot set on [-depth, 0]."""
    if isinstance(initial, HistoryBuffer):
        parts = [(slice(0, D), initial)]
    elif isinstance(initial, (list, tuple)) and layout is not None and len(initial) == len(
            layout.blocks) and not np.isscalar(initial[0]):
        parts = []
        for b, item in zip(layout.blocks, initial):
            if not isinstance(item, HistoryBuffer):
                item = HistoryBuffer.constant(item, -depth)
            parts.append((b.slice, item))
    else:
        z0 = np.asarray(initial, dtype=float).ravel()
        if z0.size != D:
            raise InvalidInput(f"initial state has size {z0.size}, system needs {D}")
        parts = [(slice(0, D), HistoryBuffer.constant(z0, -depth))]

    for sl, buf in parts:
        lo, hi = buf.span
        if buf.dim != len(range(D)[sl]):
            raise InvalidInput(f"history block dimension {buf.dim} does not match layout")
        if hi != 0.0:
            raise InvalidInput(f"initial history must end at t = 0, ends at {hi}")
        if lo > -depth:
            raise InvalidInput(f"initial history starts at {lo}, needs to reach {-depth}")

    # only [-depth, 0] is ever read; every block covers that window
    times = np.unique(np.concatenate([buf.times for _, buf in parts] + [[-depth]]))
    times = times[times >= -depth]
    hz = np.empty((times.size, D))
    hd = np.empty((times.size, D))
    for sl, buf in parts:
        for k, t in enumerate(times):
            hz[k, sl] = buf.evaluate(t)
            hd[k, sl] = buf.slope(t)
    return times, hz, hd


def integrate(system, initial, step_size, t_max, output_stride=1):
    """Integrate ``system`` from its initial history up to ``t_max``.

    ``initial`` is a full state vector (constant history), a
    :class:`HistoryBuffer` over the full state, or one entry per layout block
    (vector or buffer). The step is shrunk so that an integer number of steps
    lands exactly on ``t_max``. Requires step_size <= min positive delay / 4.
    """
    h = float(step_size)
    t_max = float(t_max)
    if not h > 0:
        raise InvalidInput(f"step size must be positive, got {h}")
    if not t_max > 0:
        raise InvalidInput(f"t_max must be positive, got {t_max}")
    if output_stride < 1:
        raise InvalidInput("output_stride must be >= 1")
    taus = [float(t) for t, _ in system.delay_terms]
    if any(t < 0 for t in taus):
        raise InvalidInput("delays must be nonnegative")
    positive = [t for t in taus if t > 0]
    if positive and h > min(positive) / 4:
        raise InvalidInput(
            f"step size {h} exceeds min positive delay / 4 = {min(positive) / 4}"
        )
    nsteps = int(np.ceil(t_max / h - 1e-9))
    h = t_max / nsteps

    A0, W, lag, src = _split_delays(system, h)
    D = A0.shape[0]
    depth = max(positive) if positive else h
    ht, hz, hd = _initial_knots(initial, getattr(system, "layout", None), D, depth)
    z0 = hz[-1].copy()

    nout = nsteps // output_stride + 1
    out = np.empty((nout, D))
    status = _kernels.dde_rk4(A0, W, lag, src, ht, np.ascontiguousarray(hz),
                              np.ascontiguousarray(hd), z0, h, nsteps, output_stride, out)
    if status >= 0:
        raise IntegrationError(
            f"non-finite state at t = {(status + 1) * h:.6g}", time=(status + 1) * h
        )
    times = np.arange(nout) * (h * output_stride)
    return Trajectory(times=times, states=out, layout=getattr(system, "layout", None),
                      step_size=h)
