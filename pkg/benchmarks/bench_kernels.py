"""Compare the compiled and pure-numpy trajectory kernels.

    python3 benchmarks/bench_kernels.py [--paths 64] [--steps 1000] [--repeats 5]

Prints median wall-clock seconds per backend and the speed-up, and checks
that both backends return the same trajectories.
"""

import argparse
import statistics
import time

import numpy as np

from sdesplit import _pykernels, kernels
from sdesplit.problems import build_scalar_noise_problem, build_vectorial_mxm


def timed(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def cases(n_paths, n_steps, rng):
    dt = 1.0 / n_steps
    p = build_vectorial_mxm(10)
    incr = rng.standard_normal((n_paths, n_steps, 2)) * np.sqrt(dt)
    coef = np.concatenate([incr, 0.5 * incr * incr], axis=-1)
    mats = np.concatenate([p.noise_stack, p.ppt_stack])
    d0 = np.eye(10) + p.a * dt - 0.5 * p.ppt_stack.sum(axis=0) * dt
    y0 = np.tile(p.y0, (n_paths, 1))
    yield "affine_sequence (10x10, milstein)", "affine_sequence", (d0, mats, coef, y0)

    q = build_scalar_noise_problem()
    w = rng.standard_normal((n_paths, n_steps, 1)) * np.sqrt(dt)
    yield "expm_sequence (10x10, exact map)", "expm_sequence", (q.exponent_drift * dt, q.noise_stack, w, np.tile(q.y0, (n_paths, 1)))

    s0 = np.tile([1.0, 1.0 - 1e-8, 1.0], (n_paths, 1))
    cw = rng.standard_normal((n_paths, n_steps, 3)) * np.sqrt(dt)
    aux = rng.standard_normal((n_paths, n_steps, 3)) * np.sqrt(dt) * 0.225
    for kind, name in ((0, "em"), (1, "milstein"), (2, "relax")):
        yield f"coulomb_sequence ({name})", "coulomb_sequence", (kind, s0, cw, aux, dt, 1e-8, 2, False, False)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=64)
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        compiled = kernels.get_backend("compiled")
    except ImportError:
        print("compiled kernels are not built; nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{args.paths} paths x {args.steps} steps, median of {args.repeats}")
    print(f"{'kernel':38s} {'python [s]':>11s} {'compiled [s]':>13s} {'speed-up':>9s} {'max diff':>13s}")
    for title, name, call_args in cases(args.paths, args.steps, rng):
        t_py, out_py = timed(lambda: getattr(_pykernels, name)(*call_args), args.repeats)
        t_c, out_c = timed(lambda: getattr(compiled, name)(*call_args), args.repeats)
        a = out_py[0] if isinstance(out_py, tuple) else out_py
        b = out_c[0] if isinstance(out_c, tuple) else out_c
        # componentwise, scaled by each component's largest magnitude so that
        # entries crossing zero (mu) do not inflate the figure
        a, b = np.where(np.isfinite(a), a, 0.0), np.where(np.isfinite(b), b, 0.0)
        scale = np.maximum(np.abs(a).reshape(-1, a.shape[-1]).max(axis=0), 1e-300)
        diff = float(np.max(np.abs(a - b) / scale))
        print(f"{title:38s} {t_py:11.4f} {t_c:13.4f} {t_py / t_c:8.1f}x {diff:13.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
