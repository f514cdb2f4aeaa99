"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the best-of-N time per call for each kernel and backend, plus one
forward/backward pass of the model with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from nacl import _backend, _fallback
from nacl.model import backward_batch, forward_batch, init_params

try:
    from nacl import _ext
except ImportError:
    _ext = None


def cases(rng):
    y = rng.uniform(size=(4, 64, 64))
    x = rng.normal(size=(4, 16, 64, 64))
    cols = rng.normal(size=(4, 16 * 9, 64 * 64))
    return {
        "patch_aggregate 4x64x64, 3x3": ("patch_aggregate", (y, np.ones((3, 3)))),
        "patch_aggregate 4x64x64, 7x7": ("patch_aggregate", (y, np.ones((7, 7)))),
        "im2col 4x16x64x64": ("im2col", (x, 3, 3)),
        "col2im 4x16x64x64": ("col2im", (cols, 16, 64, 64, 3, 3)),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def model_step(repeat):
    rng = np.random.default_rng(0)
    params = init_params(4, 1, 16)
    x = rng.uniform(size=(4, 1, 64, 64))

    def step():
        logits, cache = forward_batch(params, x)
        backward_batch(params, cache, np.ones_like(logits))
    return best(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = {"python": _fallback}
    if _ext is not None:
        backends["cython"] = _ext
    print(f"{'case':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, (name, a) in cases(rng).items():
        times = [best(lambda m=m: getattr(m, name)(*a), args.repeat) for m in backends.values()]
        row = f"{label:34s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:11.2f}x"
        print(row)

    saved = {k: getattr(_backend, k) for k in ("patch_aggregate", "im2col", "col2im")}
    times = []
    for mod in backends.values():
        for k in saved:
            setattr(_backend, k, getattr(mod, k))
        times.append(model_step(max(3, args.repeat // 4)))
    for k, v in saved.items():
        setattr(_backend, k, v)
    row = f"{'model fwd+bwd, batch 4 64x64':34s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
    if len(times) > 1:
        row += f"{times[0] / times[1]:11.2f}x"
    print(row)


if __name__ == "__main__":
    main()
