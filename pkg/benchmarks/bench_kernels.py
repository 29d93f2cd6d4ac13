"""Compare the compiled and pure-Python box kernels.

Usage: python3 benchmarks/bench_kernels.py [--boxes N] [--repeat R]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from osad import _pykernels

try:
    from osad import _ckernels
except ImportError:
    _ckernels = None


def random_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    xy = rng.uniform(0, 1000, (n, 2))
    wh = rng.uniform(10, 120, (n, 2))
    return np.hstack([xy, xy + wh])


def bench(fn, repeat: int) -> float:
    """Best-of-``repeat`` wall time in milliseconds."""
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--boxes", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = random_boxes(rng, args.boxes)
    b = random_boxes(rng, args.boxes // 10)
    cases = {
        f"iou_matrix {len(a)}x{len(b)}": lambda k: k.iou_matrix(a, b),
        f"nms_sorted n={len(a)}": lambda k: k.nms_sorted(a, 0.5),
        f"greedy_match {len(a)}x{len(b)}": lambda k: k.greedy_match(a, b, 0.5),
    }
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing the pure-Python backend only")

    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, case in cases.items():
        times = {name: bench(lambda k=k: case(k), args.repeat) for name, k in backends.items()}
        row = f"{label:<28}" + "".join(f"{t:>10.2f}ms" for t in times.values())
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
