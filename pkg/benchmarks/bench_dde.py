"""Compare the numba-compiled DDE kernel with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time from SFSYNC_NO_NUMBA. Usage::

    python benchmarks/bench_dde.py [--scenario scenarios/case3_partial.yaml] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

_CHILD = r"""
import json, sys, time
import numpy as np
from sfsync import backend, build_closed_loop, integrate, load_scenario
from sfsync.harness import _initial_blocks, default_horizon, default_step, design_for

sc = load_scenario(sys.argv[1])
repeat = int(sys.argv[2])
params = design_for(sc, verify=False).params
system = build_closed_loop(sc.model, sc.topology, params, sc.delays)
init = _initial_blocks(sc, system.layout)
h, T = default_step(sc.delays), default_horizon(sc, params)
integrate(system, init, h, 2 * h)  # warm-up: pays the compile cost once
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    traj = integrate(system, init, h, T)
    times.append(time.perf_counter() - t0)
print(json.dumps({"backend": backend(), "best": min(times), "steps": len(traj.times) - 1,
                  "dim": system.state_dim, "final": traj.states[-1].tolist()}))
"""


def run_backend(scenario, repeat, disable_numba):
    env = dict(os.environ, SFSYNC_NO_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", _CHILD, str(scenario), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "case3_partial.yaml"))
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    fast = run_backend(args.scenario, args.repeat, disable_numba=False)
    slow = run_backend(args.scenario, args.repeat, disable_numba=True)
    diff = max(abs(a - b) for a, b in zip(fast["final"], slow["final"]))
    print(f"scenario: {Path(args.scenario).name}  state dim {fast['dim']}  steps {fast['steps']}")
    for r in (fast, slow):
        print(f"  {r['backend']:>6}: {r['best'] * 1e3:9.1f} ms  "
              f"({r['best'] / r['steps'] * 1e6:.2f} us/step)")
    if fast["backend"] == "numba":
        print(f"  speedup: {slow['best'] / fast['best']:.1f}x")
    else:
        print("  numba unavailable: both runs used the numpy kernel")
    print(f"  max |final state difference|: {diff:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
