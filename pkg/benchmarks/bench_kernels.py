"""Time the compiled and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--batch 64] [--channels 8] [--size 32] [--repeat 5]
"""

import argparse
import time

import numpy as np

from tilecluster import kernels
from tilecluster.neural.presets import build_preset
from tilecluster.neural.train import TrainConfig, train
from tilecluster.synthdata import make_texture_tiles


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_timings(backend, args, rng):
    k = kernels.get_backend(backend)
    x = rng.normal(size=(args.batch, args.channels, args.size, args.size))
    w = rng.normal(size=(args.channels, args.channels, 3, 3))
    b = rng.normal(size=args.channels)
    g = rng.normal(size=x.shape)
    pooled, idx = k.maxpool2d_forward(x)
    gp = rng.normal(size=pooled.shape)
    return {
        "conv2d forward": best_of(lambda: k.conv2d_forward(x, w, b), args.repeat),
        "conv2d backward": best_of(lambda: k.conv2d_backward(x, w, g), args.repeat),
        "maxpool2d forward": best_of(lambda: k.maxpool2d_forward(x), args.repeat),
        "maxpool2d backward": best_of(lambda: k.maxpool2d_backward(gp, idx, x.shape), args.repeat),
    }


def epoch_timing(backend, tiles):
    with kernels.use_backend(backend):
        model = build_preset("cae-mse")
        t0 = time.perf_counter()
        train(model, tiles, cfg=TrainConfig(max_epochs=1, batch_size=16))
        return time.perf_counter() - t0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--epoch-tiles", type=int, default=25, help="tiles per class for the epoch timing")
    args = p.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")
    rng = np.random.default_rng(0)
    rows = {name: kernel_timings(name, args, rng) for name in backends}
    tiles, _ = make_texture_tiles(args.epoch_tiles, seed=0)
    for name in backends:
        rows[name]["cae-mse epoch"] = epoch_timing(name, tiles)

    print(f"input ({args.batch}, {args.channels}, {args.size}, {args.size}), "
          f"epoch over {len(tiles)} tiles; best of {args.repeat}, milliseconds")
    header = f"{'operation':22s}" + "".join(f"{n:>12s}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for op in rows[backends[0]]:
        line = f"{op:22s}" + "".join(f"{rows[n][op] * 1e3:12.2f}" for n in backends)
        if len(backends) == 2:
            line += f"{rows['python'][op] / rows['cython'][op]:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
