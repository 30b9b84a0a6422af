"""Compare the compiled and numpy kernel backends on reference-size frames.

    python benchmarks/bench_kernels.py [--repeat 20]

Reports the median wall time per call and checks that both backends agree.
"""
import argparse
import statistics
import time

import numpy as np

from hdrradar.kernels import backend_modules


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--cols", type=int, default=512)
    args = ap.parse_args(argv)

    g = np.random.default_rng(0)
    shape = (args.rows, args.cols)
    x = (g.normal(size=shape) + 1j * g.normal(size=shape)) * 40
    up = g.normal(size=shape) + 1j * g.normal(size=shape)
    power = np.abs(x) ** 2
    w, eps = 5.0, 1e-12
    cases = {
        "lcb_forward": lambda m: m.lcb_forward(x, w, eps),
        "lcb_backward": lambda m: m.lcb_backward(x, up, w, eps),
        "box_sums": lambda m: m.box_sums(power, 8, 4, 2, 2),
    }
    mods = backend_modules()
    names = list(mods)
    print(f"frame {shape[0]}x{shape[1]}, median of {args.repeat} runs")
    print(f"{'kernel':<14}" + "".join(f"{n:>12}" for n in names) + ("     speed-up" if len(names) > 1 else ""))
    for case, fn in cases.items():
        times = [_time(lambda m=mods[n]: fn(m), args.repeat) for n in names]
        outs = [fn(mods[n]) for n in names]
        ref = outs[0] if isinstance(outs[0], tuple) else (outs[0],)
        for o in outs[1:]:
            for a, b in zip(ref, o if isinstance(o, tuple) else (o,)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        row = f"{case:<14}" + "".join(f"{1e3 * t:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
