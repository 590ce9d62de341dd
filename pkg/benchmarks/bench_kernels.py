"""Numba vs numpy kernel timings.

    python benchmarks/bench_kernels.py [--repeat N] [--skip-train]

Kernels are timed in-process against both backends (outputs are checked for
agreement first). The training step is timed in two subprocesses, one with
``PLAE_DISABLE_NUMBA=1``, because the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from plae.kernels import numba_kernels, numpy_kernels

TRAIN_STEP = """
import json, time
import numpy as np
from plae import _accel
from plae.autodiff import Adam, Graph
from plae.data import synthetic_dataset
from plae.models import autoencoder_parameters, build_autoencoder, desk_arch
from plae.perceptual import seeded_extractor
from plae.augment import policy_for
from plae.train import loss_for

arch = desk_arch(32, 32)
enc, dec = build_autoencoder(arch, 0)
opt = Adam(autoencoder_parameters(enc, dec))
ext = seeded_extractor(0, "desk", input_side=32)
policy = policy_for("mnist")
x = synthetic_dataset(2, 50, seed=1).at_side(32).images

def step(b):
    opt.zero_grad()
    with Graph() as g:
        bl = loss_for("plae", x, enc, dec, ext, policy, (0, 1, b))
    g.backward(bl.loss)
    opt.step()

step(0)  # warm-up / jit
times = []
for b in range(1, {repeat} + 1):
    t0 = time.perf_counter()
    step(b)
    times.append(time.perf_counter() - t0)
print(json.dumps({{"backend": _accel.backend_name(), "best": min(times)}}))
"""


def cases(rng):
    xp = rng.normal(size=(64, 16, 18, 18)).astype(np.float32)
    cols = rng.normal(size=(64, 8 * 8, 16 * 4 * 4)).astype(np.float32)
    img = rng.random((3, 64, 64)).astype(np.float32)
    c, s = np.cos(0.3), np.sin(0.3)
    m = np.array([[c, -s, 10.0], [s, c, -8.0]])
    return {
        "im2col 64x16x18x18 k4 s2": ("im2col", (xp, 4, 4, 2, 8, 8)),
        "col2im 64x16x18x18 k4 s2": ("col2im", (cols, 16, 18, 18, 4, 4, 2, 8, 8)),
        "warp_affine 3x64x64": ("warp_affine", (img, m, 64, 64)),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, (name, args) in cases(rng).items():
        fn_np = getattr(numpy_kernels, name)
        fn_nb = getattr(numba_kernels, name)
        np.testing.assert_allclose(fn_nb(*args), fn_np(*args), rtol=1e-5, atol=1e-5)  # also compiles
        t_np = min(timeit.repeat(lambda: fn_np(*args), number=1, repeat=repeat))
        t_nb = min(timeit.repeat(lambda: fn_nb(*args), number=1, repeat=repeat))
        rows.append((label, t_np, t_nb))
    return rows


def bench_train_step(repeat):
    out = {}
    for disabled in ("0", "1"):
        env = {**os.environ, "PLAE_DISABLE_NUMBA": disabled}
        proc = subprocess.run(
            [sys.executable, "-c", TRAIN_STEP.format(repeat=repeat)], env=env, capture_output=True, text=True, check=True
        )
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        out[res["backend"]] = res["best"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args(argv)
    if numba_kernels is None:
        sys.exit("numba is unavailable; nothing to compare")

    print(f"{'case':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    rows = bench_kernels(args.repeat)
    if not args.skip_train:
        step = bench_train_step(max(3, args.repeat // 4))
        rows.append(("train step (plae, batch 100, desk)", step["numpy"], step["numba"]))
    for label, t_np, t_nb in rows:
        print(f"{label:34s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
