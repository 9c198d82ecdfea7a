"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--level 5] [--repeat 5]

The assembly and L1-step rows run in a subprocess per backend so the
``VOSUB_NO_NUMBA`` switch takes effect at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from vosub import kernels
from vosub.geometry import build_disk_mesh


def best(fn, repeat):
    fn()  # warm-up (jit compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(level, repeat):
    mesh = build_disk_mesh(level)
    rng = np.random.default_rng(0)
    sig = rng.uniform(0.5, 2.0, mesh.n_triangles)
    cv = rng.random((mesh.n_triangles, 3))
    w = rng.random(256)
    D = rng.standard_normal((256, mesh.n_vertices))
    out = np.empty(mesh.n_vertices)
    rows = []
    for name, args in (("element_stiffness", (mesh.vertices, mesh.triangles, sig)),
                       ("corner_lump", (mesh.triangles, mesh.areas, cv, mesh.n_vertices)),
                       ("history_dot", (w, D, out))):
        t_np = best(lambda: getattr(kernels, name + "_numpy")(*args), repeat)
        t_nb = best(lambda: getattr(kernels, name + "_numba")(*args), repeat)
        rows.append((name, t_np, t_nb))
    return mesh, rows


_END_TO_END = """
import json, sys, timeit
from vosub import CoefficientSet, Excitation, build_disk_mesh
from vosub.elliptic import assemble
from vosub.timedomain import l1_step_solve
level, repeat = int(sys.argv[1]), int(sys.argv[2])
mesh = build_disk_mesh(level)
cfg = CoefficientSet.uniform(mesh, 0.5)
exc = Excitation.constant(mesh, {2: 1.0})
asm = lambda: assemble(mesh, 1.0, 1.0)
l1 = lambda: l1_step_solve(cfg, exc, 0.01, 10.0)
asm(); l1()
print(json.dumps({"assemble": min(timeit.repeat(asm, number=1, repeat=repeat)),
                  "l1_step_solve (1000 steps)": min(timeit.repeat(l1, number=1, repeat=max(1, repeat // 2)))}))
"""


def end_to_end(level, repeat, no_numba):
    env = dict(os.environ)
    env.pop("VOSUB_NO_NUMBA", None)
    if no_numba:
        env["VOSUB_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _END_TO_END, str(level), str(repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout
    return json.loads(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mesh, rows = kernel_rows(args.level, args.repeat)
    e_np = end_to_end(args.level, args.repeat, True)
    e_nb = end_to_end(args.level, args.repeat, False)
    rows += [(k, e_np[k], e_nb[k]) for k in e_np]
    print(f"disk level {args.level}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    print(f"{'kernel':28s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s}")
    for name, a, b in rows:
        print(f"{name:28s} {1e3 * a:12.3f} {1e3 * b:12.3f} {a / b:8.2f}")


if __name__ == "__main__":
    main()
