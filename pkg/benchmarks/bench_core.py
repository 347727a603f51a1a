"""Compare the compiled tail-solve kernel against the NumPy backend.

Run from the repository root:

    python3 benchmarks/bench_core.py

Times the batched fixed-point solve — the innermost hot loop behind every
action evaluation — over a range of batch sizes on the perturbed oscillator,
and verifies the two backends agree to rounding.
"""

from __future__ import annotations

import time

import numpy as np

from wkbprop import AczConfig, FourierBasis, HamiltonianSpec, PotentialSpec, select_cutoff
from wkbprop._core import HAVE_COMPILED, tail_fixed_point_py
from wkbprop.genfun import _frame

BATCHES = (64, 1024, 16384, 131072)
REPEATS = 3


def main() -> None:
    pot = PotentialSpec(
        matrix=np.array([[0.5]]),
        amplitude=np.array([0.1]),
        wavevector=np.array([[1.0]]),
    )
    ham = HamiltonianSpec(potential=pot)
    period = 1.0
    cfg = AczConfig(
        hamiltonian=ham,
        basis=FourierBasis(period=period, cutoff=select_cutoff(ham, period),
                           components=2),
    )
    frame = _frame(cfg, period)
    p = ham.potential
    args = (frame.PHI, frame.A0, frame.V, frame.w, frame.AT, frame.WT)
    tail = (p.symmetric_part, p.amplitude, p.wavevector, ham.mass, 1e-12, 200)

    if HAVE_COMPILED:
        from wkbprop._core import tail_fixed_point_cy
    else:
        print("compiled backend not built; timing NumPy only")

    print(f"fixed-iteration tail solve, n_exact={frame.n_exact}, "
          f"{frame.grid.nodes.size} grid nodes")
    print(f"{'batch':>8} {'numpy':>12} {'cython':>12} {'speedup':>9} {'max|Δ|':>10}")
    rng = np.random.default_rng(42)
    for B in BATCHES:
        TH = rng.normal(size=(B, 2, cfg.basis.n_modes('low')))
        X = rng.uniform(-2.0, 2.0, size=(B, 1))

        best_py = float("inf")
        for _ in range(REPEATS):
            t0 = time.perf_counter()
            F_py, _, _, _ = tail_fixed_point_py(*args, TH, X, *tail,
                                                n_exact=frame.n_exact)
            best_py = min(best_py, time.perf_counter() - t0)
        if not HAVE_COMPILED:
            print(f"{B:>8} {best_py * 1e3:>10.2f}ms {'-':>12} {'-':>9} {'-':>10}")
            continue
        best_cy = float("inf")
        for _ in range(REPEATS):
            t0 = time.perf_counter()
            F_cy, _, _, _ = tail_fixed_point_cy(*args, TH, X, *tail,
                                                n_exact=frame.n_exact)
            best_cy = min(best_cy, time.perf_counter() - t0)
        dev = float(np.max(np.abs(F_py - F_cy)))
        print(f"{B:>8} {best_py * 1e3:>10.2f}ms {best_cy * 1e3:>10.2f}ms "
              f"{best_py / best_cy:>8.2f}x {dev:>10.2e}")


if __name__ == "__main__":
    main()
