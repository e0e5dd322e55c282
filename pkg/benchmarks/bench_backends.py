"""Time the hot kernels on every available backend.

    python benchmarks/bench_backends.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from orbitdet import _backend


def workloads(rng):
    x = rng.standard_normal((1, 52, 52, 32)).astype(np.float32)
    w = rng.standard_normal((64, 3, 3, 32)).astype(np.float32)
    b = rng.standard_normal(64).astype(np.float32)
    obj = rng.random(3549)
    cls = rng.random((3549, 3))
    xy = rng.uniform(0, 400, (2000, 2))
    boxes = np.hstack([xy, xy + rng.uniform(5, 60, (2000, 2))])
    return {
        "conv2d 52x52x32->64 k3": lambda k: k.conv2d(x, w, b, 1, 1),
        "max_pool2d 52x52x32 k2": lambda k: k.max_pool2d(x, 2, 2),
        "filter_range 3549x3": lambda k: k.filter_range(obj, cls, 0, len(obj), 0.25),
        "nms_sorted 2000 boxes": lambda k: k.nms_sorted(boxes, 0.45),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _backend.available()
    impls = {n: _backend.load(n) for n in names}
    print(f"{'kernel':28}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for label, fn in workloads(np.random.default_rng(0)).items():
        ms = {}
        for n, k in impls.items():
            fn(k)
            ms[n] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        ratio = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{label:28}" + "".join(f"{ms[n]:14.3f}" for n in names) + f"{ratio:10.1f}x")


if __name__ == "__main__":
    main()
