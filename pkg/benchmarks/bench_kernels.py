"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on fixed inputs under both backends; the table reports the
best-of-``repeat`` wall time, the speedup and the largest absolute
difference between the two results.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from tpscore import kernels


def cases():
    rng = np.random.default_rng(0)
    x = rng.random(20_000)
    vec = rng.normal(size=200_000)
    mat = rng.normal(size=(2_000, 64))
    return {
        "betainc (scalar x 2000)": lambda k: [k.betainc(2.5, 4.5, float(v)) for v in x[:2000]],
        "betainc_array (20000)": lambda k: k.betainc_array(0.7, 3.2, x),
        "compensated_sum (200000)": lambda k: k.compensated_sum(vec),
        "row_compensated_sums (2000x64)": lambda k: k.row_compensated_sums(mat),
    }


def max_diff(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args(argv)

    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    py, cc = kernels.BACKENDS["python"], kernels.BACKENDS["compiled"]
    rows = []
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_cc = min(timeit.repeat(lambda: fn(cc), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "python_s": t_py, "compiled_s": t_cc, "speedup": t_py / t_cc,
                     "max_abs_diff": max_diff(fn(py), fn(cc))})

    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python s':>10}  {'compiled s':>10}  {'speedup':>8}  {'max |diff|':>10}")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['python_s']:>10.4f}  {r['compiled_s']:>10.5f}  "
              f"{r['speedup']:>7.1f}x  {r['max_abs_diff']:>10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
