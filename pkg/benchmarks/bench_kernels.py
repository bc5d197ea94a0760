"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Prints one line per kernel with the best-of-N time for each backend and
the speedup. Both backends are checked to agree before timing.
"""

import argparse
import timeit

import numpy as np

from neural_galerkin.kernels import backends


def spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def cases(rng, quick):
    n = 64 if quick else 256
    nodes = 1024 if quick else 16384
    m = 64 if quick else 256
    A = spd(rng, n)
    L = np.linalg.cholesky(A)
    B = rng.standard_normal((n, 8))
    tall = rng.standard_normal((4 * n, n // 2))
    small = rng.standard_normal((n // 2, n // 4))
    sig = rng.standard_normal((16, 1024 if quick else 4096))
    Phi = rng.standard_normal((nodes, m)) / np.sqrt(m)
    w = np.full(nodes, 1.0 / nodes)
    beta = rng.standard_normal(m)
    S = rng.standard_normal((5, nodes, 32))
    partner = np.array([-1, -1, -1, 1, 2], dtype=np.int64)
    G = rng.standard_normal(S.shape)
    return [
        ("cholesky", f"n={n}", lambda k: k.cholesky(A)),
        ("cho_solve", f"n={n}, 8 rhs", lambda k: k.cho_solve(L, B)),
        ("householder_r", f"{tall.shape}", lambda k: k.householder_r(tall)),
        ("jacobi_svd", f"{small.shape}", lambda k: k.jacobi_svd(small)),
        ("fft_radix2", f"{sig.shape}", lambda k: k.fft_radix2(sig)),
        ("double_well_load", f"nodes={nodes}, m={m}", lambda k: k.double_well_load(Phi, w, beta, 1.0)),
        ("stream_tanh_forward", f"{S.shape}", lambda k: k.stream_tanh_forward(S, partner)),
        ("stream_tanh_backward", f"{S.shape}", lambda k: k.stream_tanh_backward(G, S, partner)),
    ]


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return [np.atleast_1d(np.asarray(p, dtype=complex)).ravel() for p in parts if not isinstance(p, int)]


def agree(a, b):
    fa, fb = _flat(a), _flat(b)
    return all(np.allclose(x, y, rtol=1e-8, atol=1e-10) for x, y in zip(fa, fb))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small sizes, for smoke testing")
    args = ap.parse_args(argv)
    impls = backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing the python backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'size':<24}" + "".join(f"{name:>12}" for name in impls) + ("   speedup" if len(impls) > 1 else ""))
    for name, size, fn in cases(rng, args.quick):
        outs = {b: fn(k) for b, k in impls.items()}
        if len(outs) > 1 and name != "jacobi_svd":  # singular vectors are defined up to sign
            if not agree(outs["python"], outs["compiled"]):
                raise SystemExit(f"{name}: backends disagree")
        times = {}
        for b, k in impls.items():
            number = 3
            times[b] = min(timeit.repeat(lambda: fn(k), number=number, repeat=args.repeat)) / number
        line = f"{name:<22}{size:<24}" + "".join(f"{times[b] * 1e3:>10.3f}ms" for b in impls)
        if len(impls) > 1:
            line += f"{times['python'] / times['compiled']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
