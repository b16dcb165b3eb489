"""Compare the numba kernels with the pure-Python fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by PULSEDDE_DISABLE_NUMBA. Every workload is warmed up once (JIT
compile or cache load), then timed; the script also checks that both
backends produce bit-identical trajectories.

    python3 benchmarks/bench_engine.py --repeat 5
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from pulsedde import ForcingSchedule, ModelParams, backend, solve
from pulsedde.single_pulse import response_curve
from pulsedde.model import limit_cycle

repeat, t_end, grid = int(sys.argv[1]), float(sys.argv[2]), int(sys.argv[3])
p = ModelParams(1.0, 0.7, 1.4)
train = ForcingSchedule.periodic(limit_cycle(p).z2, 0.6, 0.3, 0.9)
unit = ModelParams(1.0, 1.0, 1.0)
deltas = np.linspace(0.0, limit_cycle(unit).period, grid, endpoint=False)

def forced():
    return solve(p, None, train, t_end)

def clm():
    return response_curve(unit, 1.0, 0.5, deltas)

out = {"backend": backend()}
for name, fn in (("forced_solve", forced), ("clm_grid", clm)):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        times.append(time.perf_counter() - t0)
    out[name] = sorted(times)[len(times) // 2]
traj = forced()
h = hashlib.sha256()
for arr in (traj.a, traj.b, traj.t0, traj.t1, traj.zeros):
    h.update(np.ascontiguousarray(arr).tobytes())
out["segments"] = int(traj.a.size)
out["digest"] = h.hexdigest()
print(json.dumps(out))
"""


def run(disable: bool, repeat: int, t_end: float, grid: int) -> dict:
    env = dict(os.environ)
    env.pop("PULSEDDE_DISABLE_NUMBA", None)
    if disable:
        env["PULSEDDE_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(t_end), str(grid)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--t-end", type=float, default=20000.0, help="forced solve horizon")
    ap.add_argument("--grid", type=int, default=200, help="onsets in the response grid")
    ap.add_argument("--out", help="write the results as JSON")
    args = ap.parse_args(argv)

    fast = run(False, args.repeat, args.t_end, args.grid)
    pure = run(True, args.repeat, args.t_end, args.grid)
    print(f"{'workload':<14}{fast['backend']:>12}{pure['backend']:>12}{'speedup':>10}")
    for name in ("forced_solve", "clm_grid"):
        print(f"{name:<14}{fast[name]:>11.4f}s{pure[name]:>11.4f}s{pure[name] / fast[name]:>9.1f}x")
    same = fast["digest"] == pure["digest"]
    print(f"segments: {fast['segments']}, identical trajectories: {same}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"numba": fast, "pure": pure, "identical": same}, fh, indent=2)
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
