"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Shapes match desk-scale training: 568 epochs, d_model 128, a batch of four
sequences (early fusion) or 44 satellite channels (late fusion).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

CASES = {
    "lstm_forward early (T=568, R=4, H=128)": (568, 4, 128),
    "lstm_forward late (T=568, R=44, H=128)": (568, 44, 128),
}


def _bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat: int) -> dict[str, float]:
    from psrspoof.nn import kernels

    rng = np.random.default_rng(0)
    out = {}
    for name, (T, R, H) in CASES.items():
        xw = rng.standard_normal((T, R, 4 * H)) * 0.3
        w = rng.standard_normal((H, 4 * H)) * 0.05
        h, c, gates = kernels.lstm_forward(xw, w)
        dh = rng.standard_normal(h.shape)
        out[name] = _bench(lambda: kernels.lstm_forward(xw, w), repeat)
        out[name.replace("forward", "backward")] = _bench(lambda: kernels.lstm_backward(dh, gates, c, w), repeat)
    x = rng.standard_normal((4, 568, 1024))
    out["gelu (4 x 568 x 1024)"] = _bench(lambda: kernels.gelu(x), repeat)
    out["backend"] = kernels.BACKEND
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        for k, v in run(args.repeat).items():
            print(f"{k}\t{v}")
        return
    results = {}
    for label, pure in (("compiled", "0"), ("numpy", "1")):
        env = dict(os.environ, PSRSPOOF_PURE_PYTHON=pure)
        text = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True).stdout
        results[label] = dict(line.split("\t") for line in text.strip().splitlines())
    if results["compiled"]["backend"] != "cython":
        print("warning: compiled extension not importable; both columns use numpy")
    print(f"{'kernel':<44} {'compiled ms':>12} {'numpy ms':>10} {'speedup':>8}")
    for name in results["numpy"]:
        if name == "backend":
            continue
        c, p = float(results["compiled"][name]), float(results["numpy"][name])
        print(f"{name:<44} {1e3 * c:12.2f} {1e3 * p:10.2f} {p / c:7.1f}x")


if __name__ == "__main__":
    main()
