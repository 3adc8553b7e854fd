"""Compare the compiled and pure-Python assembly kernels.

    python3 benchmarks/bench_assembly.py [--divisions 24 24 6] [--repeat 5]

Times the per-element kernels (hex stiffness/capacity and convection faces) and
a full global assembly with each available backend, and checks that the two
backends agree.
"""
import argparse
import timeit

import numpy as np

from fieldrecon import _kernels
from fieldrecon.assembly import MaterialProperties, assemble_global, element_batches
from fieldrecon.mesh import build_box_mesh, classify_boundary

STEEL = MaterialProperties(25.84, 7760.0, 416.8, 135.0, 20.0)


def bench(divisions, repeat):
    mesh = build_box_mesh((0.1, 0.1, 0.025), divisions)
    sets = classify_boundary(mesh, "+z")
    backends = ["python"] + (["cython"] if _kernels.BACKEND == "cython" else [])
    print(f"mesh {divisions}: {mesh.n_hexes} hexes, {len(sets.gamma_h_faces)} convection faces")
    results = {}
    for name in backends:
        mod = _kernels.backend_module(name)
        t_kern = min(timeit.repeat(lambda: element_batches(mesh, STEEL, sets.gamma_h_faces, mod),
                                   number=1, repeat=repeat))
        t_glob = min(timeit.repeat(lambda: assemble_global(mesh, sets, STEEL, mod),
                                   number=1, repeat=repeat))
        results[name] = (t_kern, t_glob, assemble_global(mesh, sets, STEEL, mod))
        print(f"  {name:7s} kernels {t_kern * 1e3:8.2f} ms   global assembly {t_glob * 1e3:8.2f} ms")
    if len(results) == 2:
        a, b = results["python"][2], results["cython"][2]
        diff = abs(a.K - b.K).max() / abs(a.K).max()
        print(f"  speedup kernels x{results['python'][0] / results['cython'][0]:.1f}, "
              f"global x{results['python'][1] / results['cython'][1]:.1f}; "
              f"max relative K difference {diff:.1e}")
    else:
        print("  compiled backend not built; only the Python kernels were timed")
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--divisions", type=int, nargs=3, default=[24, 24, 6])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    np.seterr(all="raise")
    bench(tuple(args.divisions), args.repeat)


if __name__ == "__main__":
    main()
