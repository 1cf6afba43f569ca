"""Compare the compiled kernels with the numpy/scipy fallback.

Run with ``python -m hugesture.bench``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from . import kernels
from .hmm import init_model


def _cases(rng):
    K, V, T = 6, 400, 120
    m = init_model(K, V, 0)
    obs = rng.integers(0, V, size=T)
    power = rng.exponential(1.0, size=(256, 180))
    power[100:110, 40:48] += 1e3
    power[150:153, 120:130] += 1e3
    mask = power > 8.0
    labels, n = kernels.python_backend.label_regions(mask)

    def estep(b):
        acc = (np.zeros(K), np.zeros((K, K)), np.zeros((K, V)))
        return lambda: b.estep(m.pi, m.A, m.phi, obs, *acc)

    return {
        "forward_scaled (K=6, T=120)": lambda b: (lambda: b.forward_scaled(m.pi, m.A, m.phi, obs)),
        "estep (K=6, T=120)": estep,
        "label_regions (256x180)": lambda b: (lambda: b.label_regions(mask)),
        "region_stats (256x180)": lambda b: (lambda: b.region_stats(labels, n, power)),
    }


def run(repeat: int = 5, number: int = 200) -> list[tuple[str, float, float]]:
    """Returns (kernel, compiled_us, python_us); compiled is nan without the extension."""
    rng = np.random.default_rng(0)
    rows = []
    for name, make in _cases(rng).items():
        py = min(timeit.repeat(make(kernels.python_backend), number=number, repeat=repeat)) / number
        if kernels.compiled_backend is not None:
            c = min(timeit.repeat(make(kernels.compiled_backend), number=number, repeat=repeat)) / number
        else:
            c = float("nan")
        rows.append((name, c * 1e6, py * 1e6))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<30}{'compiled us':>14}{'python us':>14}{'speedup':>10}")
    for name, c, py in run(args.repeat, args.number):
        print(f"{name:<30}{c:14.1f}{py:14.1f}{py / c:10.1f}x")


if __name__ == "__main__":
    main()
