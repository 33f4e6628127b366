"""Compare the compiled and pure-Python sector kernels.

Times one master-equation right-hand side (sector mode), one pass of each
kernel on the largest block, and a short evolution, for every available
backend. Also checks that the backends agree on the RHS.

    python benchmarks/bench_kernels.py --sizes 6 8 10 12 --repeat 5
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from superrad.dynamics import TimeGrid, _Layout, _site_rhs, evolve_master, make_setup
from superrad.geometry import build_chain
from superrad.kernels import available_backends
from superrad.states import fully_inverted


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(n, backend, repeat, t_end, evolve):
    setup = make_setup(build_chain(n, 0.2), backend=backend)
    layout = _Layout(setup.basis, "sector")
    rng = np.random.default_rng(n)
    y = rng.standard_normal(layout.size) + 1j * rng.standard_normal(layout.size)
    rhs = _site_rhs(setup, layout)
    rhs(0.0, y)  # build tables outside the timing
    K = setup.kernels
    h = n // 2
    dim = len(setup.basis.sectors[h])
    X = np.ascontiguousarray(rng.standard_normal((dim, dim)) + 0j)
    src = np.ascontiguousarray(rng.standard_normal((len(setup.basis.sectors[h - 1]),) * 2) + 0j)
    out = np.empty_like(X)
    psi = fully_inverted(setup.basis)
    return {
        "rhs": _best(lambda: rhs(0.0, y), repeat),
        "heff": _best(lambda: K.heff(h, X, out), repeat),
        "jump": _best(lambda: K.jump(h, h, src, out), repeat),
        "evolve": _best(lambda: evolve_master(psi, setup, TimeGrid([0.0, t_end])), 1) if evolve else np.nan,
        "value": rhs(0.0, y),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[6, 8, 10])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--t-end", type=float, default=0.5, help="evolution length in 1/Gamma0")
    p.add_argument("--evolve-max", type=int, default=10, help="largest N for the evolution timing")
    args = p.parse_args(argv)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'N':>3} {'backend':>8} {'rhs ms':>10} {'heff ms':>10} {'jump ms':>10} {'evolve s':>10}")
    for n in args.sizes:
        res = {b: bench(n, b, args.repeat, args.t_end, n <= args.evolve_max) for b in backends}
        for b, r in res.items():
            print(f"{n:>3} {b:>8} {1e3 * r['rhs']:10.3f} {1e3 * r['heff']:10.3f} "
                  f"{1e3 * r['jump']:10.3f} {r['evolve']:10.3f}")
        if len(res) == 2:
            a, b = res["cython"], res["python"]
            diff = np.max(np.abs(a["value"] - b["value"])) / np.max(np.abs(b["value"]))
            print(f"{n:>3} speedup  rhs x{b['rhs'] / a['rhs']:.1f}  heff x{b['heff'] / a['heff']:.1f}  "
                  f"jump x{b['jump'] / a['jump']:.1f}  evolve x{b['evolve'] / a['evolve']:.1f}  "
                  f"max rel diff {diff:.1e}")


if __name__ == "__main__":
    main()
