"""Compare the compiled and numpy corruption kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, backend) with the best wall time over
``--repeat`` runs and the speedup of the compiled backend. Outputs of the
two backends are checked for bit equality first.
"""
import argparse
import timeit

import numpy as np

from corrgan import _kernels_py, corruptions, kernels
from corrgan.corruptions import CorruptionSpec, apply_corruption

try:
    from corrgan import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _noise(size, seed=0):
    n = 3 * sum((size // (size >> lvl)) ** 2 for lvl in range(size.bit_length() - 1))
    return np.random.default_rng(seed).uniform(-1, 1, n)


def _plasma(impl, size):
    noise = _noise(size)

    def run():
        out = np.empty((size, size))
        impl.plasma_fill(out, noise, 2.0)
        return out

    return run


def _brightness(impl, n_images):
    rgb = np.random.default_rng(1).random((n_images * 32 * 32, 3))

    def run():
        buf = rgb.copy()
        impl.brightness_hsv(buf, 0.3)
        return buf

    return run


def _corrupt(impl, kind, n_images):
    batch = np.random.default_rng(2).random((n_images, 32, 32, 3), dtype=np.float32)

    def run():
        saved = kernels.plasma_fill, kernels.brightness_hsv
        kernels.plasma_fill, kernels.brightness_hsv = impl.plasma_fill, impl.brightness_hsv
        try:
            return apply_corruption(batch, CorruptionSpec(kind, 3, 0))
        finally:
            kernels.plasma_fill, kernels.brightness_hsv = saved

    return run


CASES = {
    "plasma 32x32": lambda impl: _plasma(impl, 32),
    "plasma 256x256": lambda impl: _plasma(impl, 256),
    "brightness 1000 images": lambda impl: _brightness(impl, 1000),
    "fog corrupt 1000 images": lambda impl: _corrupt(impl, "fog", 1000),
    "brightness corrupt 1000 images": lambda impl: _corrupt(impl, "brightness", 1000),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    assert corruptions.kernels is kernels
    if _kernels_c is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'case':32s} {'numpy s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name, make in CASES.items():
        py = make(_kernels_py)
        t_py = min(timeit.repeat(py, number=1, repeat=args.repeat))
        if _kernels_c is None:
            print(f"{name:32s} {t_py:10.4f} {'-':>10s} {'-':>8s}")
            continue
        c = make(_kernels_c)
        if not np.array_equal(py(), c()):
            raise SystemExit(f"{name}: backends disagree")
        t_c = min(timeit.repeat(c, number=1, repeat=args.repeat))
        print(f"{name:32s} {t_py:10.4f} {t_c:10.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
