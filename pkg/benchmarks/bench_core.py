"""Compiled versus pure-Python core on identical trajectories.

Usage::

    python3 benchmarks/bench_core.py [--repeat N] [--T T]

Each case integrates the full augmented state (orbit, variational matrix,
spin transport, phases) with both backends and reports the wall time per
run, the speed-up and the largest deviation of the endpoint state.
"""
from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from diracsc import FieldConfig, ParticleParams, Tolerances
from diracsc._backend import get_backend
from diracsc.dynamics import CONNECTIONS, HAMILTONIANS, initial_state

log = logging.getLogger("bench_core")

CASES = {
    "uniform-B plus": (FieldConfig.uniform_b((0.0, 0.0, 1.0)), "plus", "plus",
                       (0.4, 0.1, 0.2), (0.0, 0.0, 0.0)),
    "mirror+E plus": (FieldConfig.mirror(1.0, 0.3) + FieldConfig.uniform_e((0.1, 0.0, 0.05)),
                      "plus", "plus", (0.4, 0.1, 0.2), (0.0, 0.3, 0.0)),
    "oscillator pauli0": (FieldConfig.harmonic(1.0), "pauli0", "pauli",
                          (0.5, 0.0, 0.3), (1.0, 0.0, 0.0)),
    "coulomb plus": (FieldConfig.coulomb(1.0, 1e-3), "plus", "plus",
                     (0.0, 1.0, 0.0), (1.0, 0.0, 0.0)),
}


def run_once(backend, config, kind, spin, p, x, T, tol, params):
    y0 = initial_state(np.asarray(p, float), np.asarray(x, float))
    t0 = time.perf_counter()
    status, _, ts, ys, _, nfev = backend.integrate(
        y0, float(T), HAMILTONIANS[kind], CONNECTIONS[spin], params.core_params(),
        config.arrays, tol.rtol, tol.atol, tol.max_steps, True)
    dt = time.perf_counter() - t0
    if status != 0:
        raise RuntimeError(f"integration failed with status {status}")
    return dt, ys[-1], len(ts) - 1, nfev


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--T", type=float, default=10.0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    params = ParticleParams()
    tol = Tolerances(rtol=1e-10, atol=1e-12)
    try:
        compiled = get_backend("compiled")
    except ImportError:
        log.error("compiled core not built; run `pip install -e . --no-build-isolation`")
        return 1
    python = get_backend("python")

    print(f"{'case':<20}{'steps':>7}{'python s':>12}{'compiled s':>12}{'speed-up':>10}"
          f"{'max |dy|':>12}")
    for name, (config, kind, spin, p, x) in CASES.items():
        # the Python core is slow enough that one run gives a stable time
        tp, yp, steps, _ = run_once(python, config, kind, spin, p, x, args.T, tol, params)
        tc, yc = np.inf, None
        for _ in range(args.repeat):
            dt, yc, _, _ = run_once(compiled, config, kind, spin, p, x, args.T, tol, params)
            tc = min(tc, dt)
        dev = float(np.max(np.abs(yp - yc)))
        print(f"{name:<20}{steps:>7d}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.0f}{dev:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
