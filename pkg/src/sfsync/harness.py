"""Scenario files, end-to-end runs, parameter sweeps and CSV export."""
import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .dde import HistoryBuffer, integrate
from .errors import InvalidInput, SyncError
from .lin_model import AgentModel
from .protocol import (CouplingMode, build_closed_loop, delay_free_spectrum, design_protocol,
                       feedback_gain)
from .topology import Topology, check_membership, representative_graph

SCHEMA_VERSION = 1
DEFAULT_TOLERANCE = 1e-2
HORIZON_FACTOR = 50.0
SWEEP_AXES = ("N", "delays", "epsilon", "rho")
_OVERRIDE_KEYS = ("rho", "epsilon", "K", "desired_poles", "step_size", "rho_margin")


class ScenarioError(InvalidInput):
    """Scenario document failed validation; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Scenario:
    model: AgentModel
    topology: Topology
    delays: np.ndarray
    tau_bar: float
    coupling_mode: CouplingMode
    x0: np.ndarray
    xr0: np.ndarray
    t_max: float | None = None
    overrides: dict = field(default_factory=dict)
    history: list | None = None
    chi0: np.ndarray | None = None
    xhat0: np.ndarray | None = None
    tolerance: float = DEFAULT_TOLERANCE
    name: str = "scenario"
    seed: int = 0

    def __post_init__(self):
        N, n = self.topology.N, self.model.n
        self.delays = np.asarray(self.delays, dtype=float).ravel()
        if self.delays.size != N:
            raise ScenarioError("delays", f"expected {N} entries, got {self.delays.size}")
        if np.any(self.delays < 0):
            raise ScenarioError("delays", "delays must be nonnegative")
        if self.delays.max() > self.tau_bar:
            raise ScenarioError(
                "tau_bar", f"max delay {self.delays.max():g} exceeds tau_bar {self.tau_bar:g}")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (N, n):
            raise ScenarioError("initial.agents", f"expected shape {(N, n)}, got {self.x0.shape}")
        self.xr0 = np.asarray(self.xr0, dtype=float).ravel()
        if self.xr0.size != n:
            raise ScenarioError("initial.exosystem", f"expected {n} entries")
        for name in ("chi0", "xhat0"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (N, n):
                    raise ScenarioError(f"initial.{name[:-1]}", f"expected shape {(N, n)}")
                setattr(self, name, v)
        if not check_membership(self.topology):
            raise ScenarioError("topology", "some agents are unreachable from the root set")
        if self.history is not None and len(self.history) != N:
            raise ScenarioError("initial.history", f"expected {N} entries")
        unknown = set(self.overrides) - set(_OVERRIDE_KEYS)
        if unknown:
            raise ScenarioError("overrides", f"unknown keys {sorted(unknown)}")
        if not self.tolerance > 0:
            raise ScenarioError("tolerance", "must be positive")


# -- loading -----------------------------------------------------------------


def _matrix(doc, key, where):
    if key not in doc:
        raise ScenarioError(f"{where}.{key}", "missing")
    try:
        M = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}.{key}", f"not numeric ({exc})") from None
    return M


def _array(value, where):
    try:
        return np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(where, f"not numeric ({exc})") from None


def _number(doc, key, default=None, required=False):
    if key not in doc or doc[key] is None:
        if required:
            raise ScenarioError(key, "missing")
        return default
    try:
        return float(doc[key])
    except (TypeError, ValueError):
        raise ScenarioError(key, f"expected a number, got {doc[key]!r}") from None


def random_initial(N, n, seed, scale=1.0):
    """Seeded agent and exosystem initial states (normal, given scale)."""
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((N, n)), scale * rng.standard_normal(n)


def scenario_from_dict(doc):
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    mdoc = doc.get("model")
    if not isinstance(mdoc, dict):
        raise ScenarioError("model", "missing or not a mapping")
    try:
        model = AgentModel(_matrix(mdoc, "A", "model"), _matrix(mdoc, "B", "model"),
                           _matrix(mdoc, "C", "model"))
    except ScenarioError:
        raise
    except InvalidInput as exc:
        raise ScenarioError("model", str(exc)) from None

    tdoc = doc.get("topology")
    if not isinstance(tdoc, dict):
        raise ScenarioError("topology", "missing or not a mapping")
    W = _matrix(tdoc, "adjacency", "topology")
    roots = tdoc.get("roots")
    if not roots:
        raise ScenarioError("topology.roots", "missing or empty")
    try:
        topology = Topology(W, frozenset(int(r) - 1 for r in roots))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("topology", str(exc)) from None
    N, n = topology.N, model.n

    if "delays" not in doc:
        raise ScenarioError("delays", "missing")
    delays = _array(doc["delays"], "delays")
    tau_bar = _number(doc, "tau_bar", default=float(delays.max()) if delays.size else 0.0)

    idoc = doc.get("initial") or {}
    if not isinstance(idoc, dict):
        raise ScenarioError("initial", "not a mapping")
    try:
        seed = int(idoc.get("seed", 0))
        scale = float(idoc.get("scale", 1.0))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("initial", f"bad seed or scale ({exc})") from None
    rx0, rxr0 = random_initial(N, n, seed, scale)
    x0 = _array(idoc["agents"], "initial.agents") if "agents" in idoc else rx0
    xr0 = _array(idoc["exosystem"], "initial.exosystem") if "exosystem" in idoc else rxr0
    history = None
    if "history" in idoc:
        history = []
        for k, h in enumerate(idoc["history"]):
            try:
                history.append(HistoryBuffer(h["t"], h["x"], h.get("dx")))
            except (KeyError, TypeError, InvalidInput) as exc:
                raise ScenarioError(f"initial.history[{k}]", str(exc)) from None

    overrides = doc.get("overrides") or {}
    if not isinstance(overrides, dict):
        raise ScenarioError("overrides", "not a mapping")
    overrides = dict(overrides)
    coupling = CouplingMode.FULL if model.full_state else CouplingMode.PARTIAL
    return Scenario(
        model=model, topology=topology, delays=delays, tau_bar=tau_bar,
        coupling_mode=coupling, x0=x0, xr0=xr0,
        t_max=_number(doc, "t_max"), overrides=overrides, history=history,
        chi0=_array(idoc["chi"], "initial.chi") if "chi" in idoc else None,
        xhat0=_array(idoc["xhat"], "initial.xhat") if "xhat" in idoc else None,
        tolerance=_number(doc, "tolerance", DEFAULT_TOLERANCE),
        name=str(doc.get("name", "scenario")), seed=seed,
    )


def load_scenario(path):
    """Read and validate a YAML (or JSON) scenario document."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"{path} is not valid YAML: {exc}") from None
    scenario = scenario_from_dict(doc)
    if scenario.name == "scenario":
        scenario.name = path.stem
    return scenario


# -- running -----------------------------------------------------------------


@dataclass
class ResultSet:
    scenario: Scenario
    trajectory: object
    sync_error: np.ndarray
    inputs: np.ndarray
    design: object
    converged: bool
    crossing_time: float | None
    tolerance: float
    wall_time: float = 0.0

    @property
    def params(self):
        return self.design.params

    @property
    def times(self):
        return self.trajectory.times

    @property
    def relative_error(self):
        e0 = self.sync_error[0]
        return self.sync_error / e0 if e0 > 0 else self.sync_error

    def agent_states(self, kind="x"):
        return self.trajectory.layout.stack(self.trajectory.states, kind)

    def exo_states(self):
        return self.trajectory.states[:, self.trajectory.layout.slice("exo")]


def design_for(scenario, verify=True):
    ov = scenario.overrides
    return design_protocol(
        scenario.model, scenario.tau_bar, coupling_mode=scenario.coupling_mode,
        rho=ov.get("rho"), epsilon=ov.get("epsilon"), K=ov.get("K"),
        desired_poles=ov.get("desired_poles"),
        rho_margin=ov.get("rho_margin", 0.01), verify=verify,
    )


def default_horizon(scenario, params):
    lam = delay_free_spectrum(scenario.model, scenario.topology, params)
    slowest = float(np.max(lam.real))
    if not slowest < 0:
        raise SyncError(f"delay-free closed loop is not Hurwitz (max real part {slowest:g})")
    return HORIZON_FACTOR / abs(slowest)


def default_step(delays):
    positive = [d for d in np.asarray(delays).ravel() if d > 0]
    return min(positive) / 4 if positive else 0.05


def _initial_blocks(scenario, layout):
    N, n = scenario.topology.N, scenario.model.n
    zeros = np.zeros((N, n))
    chi0 = scenario.chi0 if scenario.chi0 is not None else zeros
    xhat0 = scenario.xhat0 if scenario.xhat0 is not None else zeros
    out = []
    for b in layout.blocks:
        if b.kind == "x":
            out.append(scenario.history[b.agent] if scenario.history else scenario.x0[b.agent])
        elif b.kind == "chi":
            out.append(chi0[b.agent])
        elif b.kind == "xhat":
            out.append(xhat0[b.agent])
        else:
            out.append(scenario.xr0)
    return out


def sync_metrics(trajectory, tolerance=DEFAULT_TOLERANCE):
    """Max tracking error over agents, convergence flag and first crossing time."""
    layout = trajectory.layout
    X = layout.stack(trajectory.states, "x")
    xr = trajectory.states[:, layout.slice("exo")]
    err = np.linalg.norm(X - xr[:, None, :], axis=-1).max(axis=1)
    rel = err / err[0] if err[0] > 0 else err
    t = trajectory.times
    below = rel < tolerance
    crossing = float(t[np.argmax(below)]) if below.any() else None
    tail = t >= 0.9 * t[-1]
    converged = bool(below[tail].all())
    return err, converged, crossing


def run_scenario(scenario, step_size=None, t_max=None, tolerance=None, design=None,
                 output_stride=1):
    """Design, assemble and simulate one scenario."""
    start = time.perf_counter()
    report = design if design is not None else design_for(scenario)
    params = report.params
    system = build_closed_loop(scenario.model, scenario.topology, params, scenario.delays)
    h = step_size or scenario.overrides.get("step_size") or default_step(scenario.delays)
    horizon = t_max or scenario.t_max or default_horizon(scenario, params)
    traj = integrate(system, _initial_blocks(scenario, system.layout), h, horizon,
                     output_stride=output_stride)
    tol = tolerance or scenario.tolerance
    err, converged, crossing = sync_metrics(traj, tol)
    F = feedback_gain(scenario.model, params)
    chi = system.layout.stack(traj.states, "chi")
    inputs = -np.einsum("mk,tik->tim", F, chi)
    return ResultSet(
        scenario=scenario, trajectory=traj, sync_error=err, inputs=inputs, design=report,
        converged=converged, crossing_time=crossing, tolerance=tol,
        wall_time=time.perf_counter() - start,
    )


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepSummary:
    value: object
    converged: bool | None
    final_sync_error: float | None
    wall_time: float
    crossing_time: float | None = None
    params_json: str | None = None
    error: str | None = None
    error_kind: str | None = None


def scenario_for_size(template, N):
    """Template scenario resized to ``N`` agents on the representative graph.

    Delays repeat the template's list cyclically; initial states are drawn
    from the template seed offset by N.
    """
    N = int(N)
    delays = np.resize(template.delays, N)
    if N == template.topology.N:
        x0, xr0 = template.x0, template.xr0
    else:
        x0, _ = random_initial(N, template.model.n, template.seed + N)
        xr0 = template.xr0
    return replace(template, topology=representative_graph(N), delays=delays, x0=x0, xr0=xr0,
                   history=None, chi0=None, xhat0=None, name=f"{template.name}-N{N}")


def _variant(template, axis, value):
    if axis == "N":
        return scenario_for_size(template, value)
    if axis == "delays":
        return replace(template, delays=np.asarray(value, dtype=float),
                       name=f"{template.name}-delays")
    key = "epsilon" if axis == "epsilon" else "rho"
    return replace(template, overrides={**template.overrides, key: float(value)},
                   name=f"{template.name}-{key}{value}")


def _run_one(template, axis, value, run_kwargs):
    start = time.perf_counter()
    try:
        res = run_scenario(_variant(template, axis, value), **run_kwargs)
    except SyncError as exc:
        return SweepSummary(value, None, None, time.perf_counter() - start,
                            error=str(exc), error_kind=type(exc).__name__)
    return SweepSummary(value, res.converged, float(res.sync_error[-1]),
                        time.perf_counter() - start, crossing_time=res.crossing_time,
                        params_json=res.params.to_json())


def sweep(template, axis, values, workers=None, **run_kwargs):
    """Independent runs along one axis; failures are recorded, not raised."""
    if axis not in SWEEP_AXES:
        raise InvalidInput(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if workers is None:
        workers = min(len(values), os.cpu_count() or 1)
    if workers <= 1:
        return [_run_one(template, axis, v, run_kwargs) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda v: _run_one(template, axis, v, run_kwargs), values))


# -- export ------------------------------------------------------------------


def csv_header(layout, m):
    cols = ["t"]
    for kind in layout.kinds():
        if kind == "exo":
            continue
        for i in range(layout.N):
            cols += [f"{kind}{i + 1}_{k + 1}" for k in range(layout.n)]
    if "exo" in layout.kinds():
        cols += [f"xr_{k + 1}" for k in range(layout.n)]
    for i in range(layout.N):
        cols += [f"u{i + 1}_{j + 1}" for j in range(m)]
    cols.append("sync_error")
    return cols


def export_csv(result, path):
    """Write one row per sample with shortest round-trip float formatting."""
    layout = result.trajectory.layout
    m = result.inputs.shape[-1]
    header = csv_header(layout, m)
    states = result.trajectory.states
    order = []
    for kind in layout.kinds():
        if kind == "exo":
            continue
        order += [np.arange(b.start, b.start + b.size) for b in layout.blocks if b.kind == kind]
    if "exo" in layout.kinds():
        order.append(np.arange(layout.block("exo").start, layout.block("exo").start + layout.n))
    idx = np.concatenate(order)
    U = result.inputs.reshape(len(result.times), -1)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, t in enumerate(result.times):
                row = [t, *states[k, idx], *U[k], result.sync_error[k]]
                w.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def summarize(result):
    """Plain-dict summary used by the CLI."""
    rel = result.relative_error
    return {
        "name": result.scenario.name,
        "coupling_mode": result.params.coupling_mode.value,
        "N": result.scenario.topology.N,
        "t_max": float(result.times[-1]),
        "step_size": result.trajectory.step_size,
        "converged": result.converged,
        "crossing_time": result.crossing_time,
        "final_sync_error": float(result.sync_error[-1]),
        "final_relative_error": float(rel[-1]),
        "wall_time": result.wall_time,
    }
