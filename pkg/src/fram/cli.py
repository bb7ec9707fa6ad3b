"""Command line driver.

    fram select --n 10000 --k 5000 --delta 256 --adversary targeted --trials 50
    fram sort --n 4096 --delta 32 --variant deterministic --json out.json
    fram kdtree --n 4096 --delta 16 --adversary uniform --queries 200
    fram bench --algorithm quicksort --sizes 1024,4096 --deltas 0,32

Exit status is 0 when every oracle check passed, 1 when any failed and 2
on a usage error.
"""

import argparse
import csv
import json
import sys

from .harness import (
    ALGORITHMS,
    SpecError,
    TrialSpec,
    _row_dict,
    run_trials,
    scaling_report,
    trace_dir,
)
from .sandbox import DETERMINISTIC, RANDOMIZED


def _common(p, *, k=True):
    p.add_argument("--n", type=int, default=1000, help="input size (ignored for file input)")
    if k:
        p.add_argument("--k", type=int, default=None, help="rank (select) or split point (split)")
    p.add_argument("--delta", type=int, default=0, help="fault budget")
    p.add_argument("--adversary", default="none",
                   help="none, uniform[:rate], targeted[:period], replica[:period], "
                        "burst[:t1,t2,..], scripted-worst")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="seed of the first trial")
    p.add_argument("--variant", choices=(RANDOMIZED, DETERMINISTIC), default=RANDOMIZED)
    p.add_argument("--input", default="random-permutation",
                   help="random-permutation, reverse, duplicates(p) or file:PATH")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--json", metavar="PATH", help="write the full result as JSON")
    p.add_argument("--csv", metavar="PATH", help="write one row per trial as CSV")
    p.add_argument("--trace", action="store_true",
                   help="write access traces for every trial, not only failing ones")


def build_parser():
    ap = argparse.ArgumentParser(prog="fram", description="Resilient algorithms on a simulated faulty RAM.")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("select", help="k-th smallest (randomized or deterministic)"))
    _common(sub.add_parser("split", help="resilient split after position k"))
    _common(sub.add_parser("sort", help="resilient quicksort"), k=False)
    kd = sub.add_parser("kdtree", help="k-d tree build and range queries")
    _common(kd, k=False)
    kd.add_argument("--dims", type=int, default=2)
    kd.add_argument("--b", type=int, default=4, help="leaf capacity is max(1, b*delta)")
    kd.add_argument("--queries", type=int, default=20, help="random boxes per trial")
    kd.add_argument("--build-only", action="store_true", help="check the build with one full box")
    bench = sub.add_parser("bench", help="step-count scaling report")
    bench.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    bench.add_argument("--sizes", default="1000,10000", help="comma separated sizes")
    bench.add_argument("--deltas", default="0", help="comma separated fault budgets")
    bench.add_argument("--adversary", default="targeted")
    bench.add_argument("--trials", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--variant", choices=(RANDOMIZED, DETERMINISTIC), default=RANDOMIZED)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--json", metavar="PATH")
    bench.add_argument("--csv", metavar="PATH")
    return ap


def spec_from_args(args):
    cmd = args.command
    if cmd == "select":
        algo = "det-select" if args.variant == DETERMINISTIC else "rand-select"
    elif cmd == "split":
        algo = "split"
    elif cmd == "sort":
        algo = "quicksort"
    else:
        algo = "kd-build" if args.build_only else "kd-query"
    extra = {}
    if cmd == "kdtree":
        extra = dict(dims=args.dims, b=args.b, queries=args.queries)
    return TrialSpec(algo, args.n, k=getattr(args, "k", None), delta=args.delta,
                     adversary=args.adversary, trials=args.trials, seed=args.seed,
                     input=args.input, variant=args.variant, **extra)


def format_result(res):
    s = res.summary()
    lines = [
        f"{s['algorithm']}  n={s['n']}  delta={s['delta']}  adversary={s['adversary']}  "
        f"variant={s['variant']}",
        f"{'seed':>8} {'alpha':>7} {'steps':>12} {'rank err':>9} {'output':>12}  passed",
    ]
    for r in res.rows:
        out = "-" if r.output is None else str(r.output)
        lines.append(f"{r.seed:>8} {r.alpha:>7} {r.steps:>12} {r.rank_error:>9} {out:>12}  "
                     f"{'yes' if r.passed else 'NO'}")
    lines.append(f"pass rate {s['pass_rate']:.3f} over {s['trials']} trials; "
                 f"mean steps {s['mean_steps']:.1f}, max {s['max_steps']}, "
                 f"steps per leading term {s['per_unit']:.3f}")
    for path in getattr(res, "traces", []):
        lines.append(f"trace: {path}")
    return "\n".join(lines)


def _write_csv(path, dicts):
    if not dicts:
        return
    keys = list(dicts[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for d in dicts:
            w.writerow({k: json.dumps(v) if isinstance(v, (dict, list, tuple)) else v
                        for k, v in d.items()})


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "bench":
            rep = scaling_report(args.algorithm, _ints(args.sizes), _ints(args.deltas),
                                 trials=args.trials, seed=args.seed, adversary=args.adversary,
                                 variant=args.variant, workers=args.workers)
            print(rep.table())
            if args.json:
                with open(args.json, "w") as fh:
                    json.dump(rep.to_dict(), fh, indent=2)
            if args.csv:
                _write_csv(args.csv, rep.to_dict()["rows"])
            return 0
        spec = spec_from_args(args)
        res = run_trials(spec, workers=args.workers, trace_all=args.trace)
    except SpecError as exc:
        ap.error(str(exc))
    except OSError as exc:
        print(f"fram: {exc}", file=sys.stderr)
        return 2
    print(format_result(res))
    if res.traces and not args.trace:
        print(f"failing seeds traced under {trace_dir()}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res.to_dict(), fh, indent=2, default=str)
    if args.csv:
        _write_csv(args.csv, [_row_dict(r) for r in res.rows])
    return 0 if res.pass_rate == 1.0 else 1


if __name__ == "__main__":
    sys.exit(main())
