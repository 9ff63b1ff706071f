"""Scale-free protocol design and closed-loop assembly.

Design uses only the agent model and the delay bound ``tau_bar``; no graph
quantity enters :func:`design_protocol`. The graph appears only when the
closed loop is assembled for simulation.
"""
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import frequency
from .errors import DesignFailure, InvalidInput, Unsolvable
from .lin_model import AgentModel, omega_max as _omega_max, validate
from .riccati import EPS_FLOOR, solve_care
from .topology import check_membership, expanded_laplacian, laplacian

DEFAULT_RHO_MARGIN = 0.01
MAX_STATE_DIM = 20_000


class CouplingMode(str, enum.Enum):
    FULL = "full"
    PARTIAL = "partial"


@dataclass(frozen=True)
class ProtocolParams:
    """Everything one agent's controller needs; identical for every agent."""

    rho: float
    epsilon_star: float
    P: np.ndarray
    K: np.ndarray | None
    tau_bar: float
    coupling_mode: CouplingMode

    def to_dict(self):
        return {
            "coupling_mode": self.coupling_mode.value,
            "epsilon_star": float(self.epsilon_star),
            "K": None if self.K is None else np.asarray(self.K).tolist(),
            "P": np.asarray(self.P).tolist(),
            "rho": float(self.rho),
            "tau_bar": float(self.tau_bar),
        }

    def to_json(self):
        """Canonical serialization (sorted keys, shortest round-trip floats)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def feedback_gain(model, params):
    """F with u_i = -F chi_i, i.e. rho * B' P."""
    return params.rho * model.B.T @ params.P


@dataclass
class EpsilonSelection:
    epsilon_star: float
    P: np.ndarray
    mu: float
    theta: float
    certificate: str
    gain_norm: float
    tried: list = field(default_factory=list)


@dataclass
class FrequencyReport:
    min_sigma: float
    argmin: tuple
    grid_min: float
    grid_argmin: tuple
    threshold: float
    omega_bar: float
    tail_bound_holds: bool
    passed: bool

    def to_dict(self):
        return {
            "min_sigma": self.min_sigma,
            "argmin_omega": self.argmin[0],
            "argmin_tau": self.argmin[1],
            "grid_min": self.grid_min,
            "threshold": self.threshold,
            "omega_bar": self.omega_bar,
            "tail_bound_holds": self.tail_bound_holds,
            "passed": self.passed,
        }


@dataclass
class DesignReport:
    params: ProtocolParams
    omega_max: float
    theta: float | None
    mu: float | None
    certificate: str
    frequency: FrequencyReport | None = None

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "omega_max": self.omega_max,
            "theta": self.theta,
            "mu": self.mu,
            "certificate": self.certificate,
            "frequency": None if self.frequency is None else self.frequency.to_dict(),
        }


# -- gain scaling ----------------------------------------------------------


def _check_bound(omega_max, tau_bar):
    if tau_bar < 0:
        raise InvalidInput(f"tau_bar must be nonnegative, got {tau_bar}")
    if tau_bar * omega_max >= math.pi / 2:
        raise Unsolvable(
            f"delay bound violated: tau_bar * omega_max = {tau_bar * omega_max:.6g} "
            f">= pi/2 = {math.pi / 2:.6g}"
        )


def design_rho(omega_max, tau_bar, margin=DEFAULT_RHO_MARGIN, rho=None):
    """Gain scaling rho = (1 + margin) * max(1, 1 / cos(tau_bar * omega_max)).

    An explicit ``rho`` overrides the rule; it is still rejected when the delay
    bound fails or when rho * cos(tau_bar * omega_max) < 1. Equality is let
    through so that rho = 1 with omega_max = 0 can be reproduced.
    """
    _check_bound(omega_max, tau_bar)
    c = math.cos(tau_bar * omega_max)
    if rho is not None:
        rho = float(rho)
        if not rho > 0:
            raise InvalidInput(f"rho must be positive, got {rho}")
        if rho * c < 1.0:
            raise Unsolvable(
                f"rho = {rho:.6g} gives rho * cos(tau_bar * omega_max) = {rho * c:.6g} < 1"
            )
        return rho
    if margin < 0:
        raise InvalidInput("margin must be nonnegative")
    return (1.0 + margin) * max(1.0, 1.0 / c)


def select_theta(rho, tau_bar, omega_max):
    """Largest theta with rho * cos(tau_bar * w) > 1 for all |w| < omega_max + theta.

    Closed form of the bisection target; ``inf`` when tau_bar = 0.
    """
    if rho * math.cos(tau_bar * omega_max) <= 1.0:
        return 0.0
    if tau_bar == 0:
        return math.inf
    return math.acos(1.0 / rho) / tau_bar - omega_max


def _omega_bar(A, omega_max, theta):
    base = np.linalg.norm(A, 2) + 1.0
    edge = omega_max + theta
    return float(max(base, edge)) if math.isfinite(edge) else float(base)


def high_frequency_floor(A, omega_max, theta, n_grid=4000):
    """mu = min sigma_min(jwI - A) over omega_max + theta <= |w| <= omega_bar, capped at 1."""
    lo = omega_max + theta
    hi = _omega_bar(A, omega_max, theta)
    if not math.isfinite(lo) or lo >= hi:
        return 1.0
    w = np.linspace(lo, hi, n_grid)
    s = frequency.sigma_min_open_loop(A, w)
    val, _ = frequency.polish_open_loop(A, w, s, lo, hi)
    return float(min(1.0, val))


def _band_certificate(A, G, rho, tau_bar, lo, hi, target, n_omega=800, n_tau=40):
    """Check sigma_min(jwI - A + rho e^{-jwtau} G) >= target on the band directly."""
    if not math.isfinite(lo) or lo >= hi:
        return True
    w = np.linspace(lo, hi, n_omega)
    taus = np.linspace(0.0, tau_bar, n_tau) if tau_bar > 0 else np.zeros(1)
    grid = frequency.sigma_min_delayed(A, G, rho, w, taus)
    if grid.min() < target:
        return False
    val, _, _ = frequency.polish_delayed(A, G, rho, grid, w, taus)
    return val >= target


def select_epsilon(model, rho, tau_bar, omega_max, rule="auto", eps_floor=EPS_FLOOR):
    """Shrink epsilon by decades from 1 until the high-frequency bound is certified.

    ``rule="norm"`` accepts epsilon only when ||rho B B' P|| <= mu / 2.
    ``rule="auto"`` additionally accepts it when ||rho B B' P|| <= 1/2 and
    the inequality sigma_min(jwI - A + rho e^{-jw tau} B B' P) >= mu / 2 that
    the norm bound is meant to guarantee holds directly on the band
    omega_max + theta <= |w| <= omega_bar for all tau in [0, tau_bar].
    """
    if rule not in ("auto", "norm"):
        raise InvalidInput(f"unknown epsilon rule {rule!r}")
    A, B = model.A, model.B
    theta = select_theta(rho, tau_bar, omega_max)
    if theta <= 0:
        raise Unsolvable(
            f"no theta > 0 exists: rho * cos(tau_bar * omega_max) = "
            f"{rho * math.cos(tau_bar * omega_max):.6g} <= 1"
        )
    mu = high_frequency_floor(A, omega_max, theta)
    if not mu > 0:
        raise DesignFailure(f"high-frequency floor mu = {mu} is not positive")
    lo = omega_max + theta
    hi = _omega_bar(A, omega_max, theta)
    tried = []
    k = 0
    while True:
        eps = 10.0 ** (-k)
        if eps < eps_floor:
            raise DesignFailure(
                f"epsilon floor {eps_floor:g} reached without certification "
                f"(rho={rho:.6g}, mu={mu:.3e}, theta={theta:.3e}); tried {tried}"
            )
        sol = solve_care(model, eps)
        G = B @ B.T @ sol.P
        gnorm = float(rho * np.linalg.norm(G, 2))
        tried.append((eps, gnorm))
        if gnorm <= mu / 2:
            return EpsilonSelection(eps, sol.P, mu, theta, "norm_bound", gnorm, tried)
        if rule == "auto" and gnorm <= 0.5:
            if _band_certificate(A, G, rho, tau_bar, lo, hi, mu / 2):
                return EpsilonSelection(eps, sol.P, mu, theta, "band_sweep", gnorm, tried)
        k += 1


# -- observer gain -----------------------------------------------------------


def _obsv(A, C):
    n = A.shape[0]
    rows = [C]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def design_observer_gain(model, desired_poles=None):
    """Observer gain K with eig(A - K C) at ``desired_poles``.

    Single-output models use Ackermann's formula on the dual pair; multi-output
    models go through :func:`scipy.signal.place_poles`. Default poles are
    -1, -2, ..., -n.
    """
    A, C = model.A, model.C
    n = model.n
    poles = np.arange(-1.0, -n - 1.0, -1.0) if desired_poles is None else np.asarray(
        desired_poles, dtype=complex).ravel()
    if poles.size != n:
        raise InvalidInput(f"need {n} desired poles, got {poles.size}")
    if np.any(poles.real >= 0):
        raise InvalidInput("desired poles must lie in the open left half plane")
    if not np.allclose(np.sort_complex(poles), np.sort_complex(poles.conj())):
        raise InvalidInput("desired poles must be closed under conjugation")
    O = _obsv(A, C)
    if np.linalg.matrix_rank(O) < n:
        report = validate(model)
        what = "unstable" if not report.detectable else "stable"
        raise InvalidInput(f"(C, A) has an unobservable {what} mode; poles cannot be placed")
    if model.q == 1:
        coeffs = np.real_if_close(np.poly(poles)).astype(float)
        pA = np.zeros_like(A)
        for c in coeffs:
            pA = pA @ A + c * np.eye(n)
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        # dual of Ackermann: K = p(A) O^{-1} e_n
        K = pA @ np.linalg.solve(O, e_n)
        return K.reshape(n, 1)
    from scipy.signal import place_poles
    res = place_poles(A.T, C.T, poles)
    return np.asarray(res.gain_matrix).T


# -- frequency-domain certificate --------------------------------------------


def verify_frequency_condition(model, P, rho, tau_bar, omega_grid=2001, tau_grid_count=50,
                               threshold=1e-10, polish=True):
    """Sweep sigma_min(jwI - A + rho e^{-jw tau} B B' P) over w and tau.

    ``omega_grid`` is either a point count for a symmetric grid on
    [-omega_bar, omega_bar] or an explicit array. The grid minimum is refined
    locally unless ``polish`` is False. ``passed`` also requires
    rho ||B B' P|| < 1, which makes the region beyond omega_bar safe.
    """
    if tau_grid_count < 2 and tau_bar > 0:
        raise InvalidInput("tau_grid_count must be at least 2")
    A, B = model.A, model.B
    P = np.asarray(P, dtype=float)
    G = B @ B.T @ P
    wmax = _omega_max(A)
    theta = select_theta(rho, tau_bar, wmax) if tau_bar * wmax < math.pi / 2 else 0.0
    omega_bar = _omega_bar(A, wmax, theta)
    if np.isscalar(omega_grid):
        w = np.linspace(-omega_bar, omega_bar, int(omega_grid))
    else:
        w = np.asarray(omega_grid, dtype=float)
    taus = np.linspace(0.0, tau_bar, tau_grid_count) if tau_bar > 0 else np.zeros(1)
    grid = frequency.sigma_min_delayed(A, G, rho, w, taus)
    iw, it = np.unravel_index(np.argmin(grid), grid.shape)
    grid_min = float(grid[iw, it])
    grid_arg = (float(w[iw]), float(taus[it]))
    best, arg = grid_min, grid_arg
    if polish:
        val, bw, bt = frequency.polish_delayed(A, G, rho, grid, w, taus)
        if val < best:
            best, arg = val, (bw, bt)
    tail = bool(rho * np.linalg.norm(G, 2) < 1.0)
    return FrequencyReport(
        min_sigma=best,
        argmin=arg,
        grid_min=grid_min,
        grid_argmin=grid_arg,
        threshold=threshold,
        omega_bar=omega_bar,
        tail_bound_holds=tail,
        passed=bool(best > threshold and tail),
    )


# -- full design -------------------------------------------------------------


def design_protocol(model, tau_bar, coupling_mode=None, rho=None, epsilon=None, K=None,
                    desired_poles=None, rho_margin=DEFAULT_RHO_MARGIN, epsilon_rule="auto",
                    verify=True):
    """Design (rho, epsilon*, P, K) from the agent model and delay bound only.

    Returns a :class:`DesignReport` whose ``params`` field is the
    :class:`ProtocolParams`. Any of ``rho``, ``epsilon`` and ``K`` may be
    fixed by the caller.
    """
    if not isinstance(model, AgentModel):
        raise InvalidInput("design_protocol expects an AgentModel")
    tau_bar = float(tau_bar)
    report = validate(model)
    if not report.ok:
        raise InvalidInput("model unusable for design: " + "; ".join(report.failures()))
    if coupling_mode is None:
        coupling_mode = CouplingMode.FULL if model.full_state else CouplingMode.PARTIAL
    coupling_mode = CouplingMode(coupling_mode)

    wmax = _omega_max(model.A)
    rho_val = design_rho(wmax, tau_bar, margin=rho_margin, rho=rho)
    theta = mu = None
    if epsilon is None:
        sel = select_epsilon(model, rho_val, tau_bar, wmax, rule=epsilon_rule)
        eps, P, theta, mu, cert = sel.epsilon_star, sel.P, sel.theta, sel.mu, sel.certificate
    else:
        sol = solve_care(model, epsilon)
        eps, P, cert = sol.epsilon, sol.P, "override"
        th = select_theta(rho_val, tau_bar, wmax)
        if th > 0:
            theta, mu = th, high_frequency_floor(model.A, wmax, th)

    if coupling_mode is CouplingMode.PARTIAL:
        if K is None:
            K = design_observer_gain(model, desired_poles)
        else:
            K = np.array(K, dtype=float).reshape(model.n, model.q)
            if np.any(np.linalg.eigvals(model.A - K @ model.C).real >= 0):
                raise InvalidInput("supplied K does not make A - K C Hurwitz")
        K = np.asarray(K, dtype=float)
        K.setflags(write=False)
    else:
        K = None

    params = ProtocolParams(
        rho=float(rho_val), epsilon_star=float(eps), P=P, K=K, tau_bar=tau_bar,
        coupling_mode=coupling_mode,
    )
    freq = verify_frequency_condition(model, P, rho_val, tau_bar) if verify else None
    return DesignReport(params=params, omega_max=wmax, theta=theta, mu=mu,
                        certificate=cert, frequency=freq)


# -- closed loop -------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    kind: str  # "x", "chi", "xhat" or "exo"
    agent: int | None
    start: int
    size: int

    @property
    def slice(self):
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True)
class StateLayout:
    blocks: tuple
    N: int
    n: int

    @property
    def dim(self):
        return sum(b.size for b in self.blocks)

    def block(self, kind, agent=None):
        for b in self.blocks:
            if b.kind == kind and b.agent == agent:
                return b
        raise KeyError((kind, agent))

    def slice(self, kind, agent=None):
        return self.block(kind, agent).slice

    def kinds(self):
        seen = []
        for b in self.blocks:
            if b.kind not in seen:
                seen.append(b.kind)
        return seen

    def stack(self, states, kind):
        """Extract ``kind`` blocks from a (T, dim) array as (T, N, n)."""
        states = np.asarray(states)
        return np.stack([states[..., self.slice(kind, i)] for i in range(self.N)], axis=-2)


def make_layout(N, n, mode, include_exo=True):
    kinds = ["x", "chi"] + (["xhat"] if CouplingMode(mode) is CouplingMode.PARTIAL else [])
    blocks, pos = [], 0
    for kind in kinds:
        for i in range(N):
            blocks.append(Block(kind, i, pos, n))
            pos += n
    if include_exo:
        blocks.append(Block("exo", None, pos, n))
    return StateLayout(tuple(blocks), N, n)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Linear multi-delay system dz/dt = A0 z + sum_d Ad z(t - tau_d)."""

    A0: np.ndarray
    delay_terms: tuple
    layout: StateLayout
    coupling_mode: CouplingMode | None = None

    @property
    def state_dim(self):
        return self.A0.shape[0]

    @property
    def delays(self):
        return tuple(t for t, _ in self.delay_terms)

    def delay_free_matrix(self):
        return self.A0 + sum((Ad for _, Ad in self.delay_terms), np.zeros_like(self.A0))


def build_closed_loop(model, topology, params, delays, include_exo=True):
    """Assemble the networked closed loop in absolute coordinates.

    Agents sharing a delay value share one delay term. The delayed state is
    always a protocol state chi_j(t - tau_j), since u_j = -rho B' P chi_j.
    """
    N, n = topology.N, model.n
    delays = np.asarray(delays, dtype=float).ravel()
    if delays.size != N:
        raise InvalidInput(f"need {N} delays, got {delays.size}")
    if np.any(delays < 0) or np.any(delays > params.tau_bar):
        raise InvalidInput(f"delays must lie in [0, tau_bar={params.tau_bar}], got {delays.tolist()}")
    if not check_membership(topology):
        raise InvalidInput("topology has nodes unreachable from the root set")
    mode = CouplingMode(params.coupling_mode)
    if mode is CouplingMode.PARTIAL and params.K is None:
        raise InvalidInput("partial-state coupling needs an observer gain K")

    layout = make_layout(N, n, mode, include_exo)
    dim = layout.dim
    if dim > MAX_STATE_DIM:
        raise InvalidInput(f"closed-loop dimension {dim} exceeds limit {MAX_STATE_DIM}")

    A, B, C = model.A, model.B, model.C
    I = np.eye(n)
    Lbar = expanded_laplacian(laplacian(topology), topology.root_set).Lbar
    iota = topology.iota
    G = params.rho * B @ B.T @ params.P

    x = [layout.slice("x", i) for i in range(N)]
    c = [layout.slice("chi", i) for i in range(N)]
    r = layout.slice("exo") if include_exo else None

    A0 = np.zeros((dim, dim))
    uniq = sorted(set(delays.tolist()))
    Ad = {tau: np.zeros((dim, dim)) for tau in uniq}

    for i in range(N):
        A0[x[i], x[i]] += A
        A0[c[i], c[i]] += A
        for j in range(N):
            if Lbar[i, j] != 0:
                A0[c[i], c[j]] -= Lbar[i, j] * I
        D = Ad[float(delays[i])]
        D[x[i], c[i]] -= G
        D[c[i], c[i]] -= G

    if mode is CouplingMode.FULL:
        for i in range(N):
            for j in range(N):
                if Lbar[i, j] != 0:
                    A0[c[i], x[j]] += Lbar[i, j] * I
            if include_exo and iota[i]:
                A0[c[i], r] -= iota[i] * I
    else:
        h = [layout.slice("xhat", i) for i in range(N)]
        KC = params.K @ C
        for i in range(N):
            A0[h[i], h[i]] += A - KC
            A0[c[i], h[i]] += I
            for j in range(N):
                if Lbar[i, j] != 0:
                    A0[h[i], x[j]] += Lbar[i, j] * KC
                    Ad[float(delays[j])][h[i], c[j]] -= Lbar[i, j] * G
            if include_exo and iota[i]:
                A0[h[i], r] -= iota[i] * KC

    if include_exo:
        A0[r, r] = A

    for M in [A0, *Ad.values()]:
        M.setflags(write=False)
    return ClosedLoopSystem(
        A0=A0,
        delay_terms=tuple((tau, Ad[tau]) for tau in uniq),
        layout=layout,
        coupling_mode=mode,
    )


def delay_free_spectrum(model, topology, params):
    """Eigenvalues of the delay-free error dynamics via the block structure."""
    Lbar = expanded_laplacian(laplacian(topology), topology.root_set).Lbar
    n, N = model.n, topology.N
    G = params.rho * model.B @ model.B.T @ params.P
    parts = [np.tile(np.linalg.eigvals(model.A - G), N),
             np.linalg.eigvals(np.kron(np.eye(N), model.A) - np.kron(Lbar, np.eye(n)))]
    if params.coupling_mode is CouplingMode.PARTIAL:
        parts.append(np.tile(np.linalg.eigvals(model.A - params.K @ model.C), N))
    return np.concatenate(parts)
