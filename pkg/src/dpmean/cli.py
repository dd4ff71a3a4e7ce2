"""``dpmean`` command-line tool.

Exit codes: 0 ok, 1 usage, 2 golden-table mismatch, 3 I/O, 4 precondition.
"""

from __future__ import annotations

import argparse
import contextlib
import math
import sys
import warnings

from . import bench
from .exceptions import DPMeanError, ParseError
from .metrics import PrivacyBudget
from .sensitivity import ParticipationPattern
from .series import Banding, Kind
from .streaming import EstimatorConfig, default_bandwidth

EXIT_OK, EXIT_USAGE, EXIT_GOLDEN, EXIT_IO, EXIT_PRECONDITION = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pattern(args) -> ParticipationPattern:
    if (args.k is None) == (args.b is None):
        raise _UsageError("give exactly one of --k and --b")
    if args.k is not None:
        return ParticipationPattern.from_k(args.n, args.k)
    return ParticipationPattern(args.n, args.b)


class _UsageError(Exception):
    pass


def _nu(value: str):
    return value if value == "auto" else float(value)


def _budget(args, xi_default: float) -> PrivacyBudget:
    xi = xi_default if args.xi is None else args.xi
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PrivacyBudget(args.eps, args.delta, xi)


@contextlib.contextmanager
def _output(path: str | None):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as f:
            yield f


def _meta(args, command: str) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    return {"command": command, "config": cfg, "git": bench.git_describe(), "seed": getattr(args, "seed", None)}


def cmd_table2(args) -> int:
    cells = bench.golden_table(args.n)
    with _output(args.out) as out:
        bench.write_csv(out, [c.row() for c in cells], _meta(args, "table2"))
    failed = [c for c in cells if not c.ok]
    for c in failed:
        print(f"golden mismatch: {c.banding.value} {c.kind.value} k={c.k}: "
              f"{c.E_n:.4f} vs {c.golden} (tol {c.tol})", file=sys.stderr)
    return EXIT_GOLDEN if failed else EXIT_OK


def cmd_curve(args) -> int:
    pattern = _pattern(args)
    plan = bench.resolve_plan(Kind(args.kind), Banding(args.banding), pattern, args.p, args.nu)
    base = bench.resolve_plan(Kind(args.base_kind), Banding(args.base_banding), pattern,
                              args.base_p, args.nu)
    rows = bench.curve_rows(plan, base, pattern, args.stride)
    meta = _meta(args, "curve")
    meta.update(plan=plan.label, baseline=base.label)
    with _output(args.out) as out:
        bench.write_csv(out, rows, meta)
    return EXIT_OK


def cmd_simulate(args) -> int:
    # Bernoulli vectors have norm at most sqrt(d)
    budget = _budget(args, math.sqrt(args.d))
    if args.trials < 1:
        raise _UsageError("--trials must be >= 1")
    pattern = _pattern(args)
    stride = max(1, args.stride)
    ts = sorted(set(range(stride, pattern.n + 1, stride)) | {pattern.n})
    if args.estimator == "alg1":
        kind = Kind(args.kind)
        p = args.p if args.p is not None else default_bandwidth(kind, pattern.b)
        nu = None if kind is not Kind.NU_DP_FTRL else (0.5 if args.nu in (None, "auto") else args.nu)
        cfg = EstimatorConfig(budget, pattern, p=p, d=args.d, seed=args.seed, kind=kind, nu=nu,
                              sigma_override=args.sigma)
        res = bench.simulate_alg1(cfg, args.trials, mu=args.mu, data_seed=args.seed, ts=ts)
    else:
        if pattern.n % pattern.b:
            raise _UsageError("withhold-release needs n to be a multiple of b")
        kw = dict(zeta=args.zeta, kc=args.kc, bounded=args.bounded)
        if args.sigma == 0:
            kw.update(noiseless=True, project=False)
        res = bench.simulate_withhold(pattern.b, pattern.n // pattern.b, args.d, budget,
                                      args.trials, mu=args.mu, seed=args.seed, ts=ts, **kw)
    with _output(args.out) as out:
        bench.write_csv(out, res.rows(), _meta(args, "simulate"))
    return EXIT_OK


def cmd_stream(args) -> int:
    budget = _budget(args, 1.0)
    try:
        with open(args.input, newline="") as f:
            data = bench.parse_stream(f)
    except OSError as e:
        print(f"cannot read {args.input}: {e}", file=sys.stderr)
        return EXIT_IO
    if args.estimator == "alg1":
        bench.check_separation(data, args.b, strict=args.strict)
        nu = None if args.nu in (None, "auto") else args.nu
        rows = bench.replay_alg1(data, budget, args.b, Kind(args.kind), args.p, nu,
                                 seed=args.seed, sigma=args.sigma)
    else:
        kw = dict(zeta=args.zeta, kc=args.kc)
        if args.sigma == 0:
            kw.update(noiseless=True, project=False)
        rows = bench.replay_withhold(data, budget, seed=args.seed, **kw)
    with _output(args.out) as out:
        bench.write_csv(out, rows, _meta(args, "stream"))
    return EXIT_OK


def cmd_synth(args) -> int:
    with _output(args.out) as out:
        out.write(bench.synthetic_stream(args.b, args.k, args.d, args.seed))
    return EXIT_OK


def cmd_sens_check(args) -> int:
    checks = bench.sens_check(args.n, args.b_max, args.seeds, args.seed)
    bad = [c for c in checks if not c.ok]
    rows = [{"n": c.n, "b": c.b, "seed": c.seed, "closed_form": c.closed,
             "enumerated": c.enumerated, "ok": c.ok} for c in checks]
    with _output(args.out) as out:
        bench.write_csv(out, rows, _meta(args, "sens-check"))
    print(f"{len(checks) - len(bad)}/{len(checks)} agree", file=sys.stderr)
    return EXIT_PRECONDITION if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpmean", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kinds = [k.value for k in Kind]
    bandings = [b.value for b in Banding]

    def common(p, n_default=8196):
        p.add_argument("--n", type=int, default=n_default, help="stream length")
        p.add_argument("--k", type=int, help="max participations (b = ceil(n/k))")
        p.add_argument("--b", type=int, help="min separation")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output CSV (default stdout)")

    def privacy(p):
        p.add_argument("--eps", type=float, default=1.0)
        p.add_argument("--delta", type=float, default=1e-6)
        p.add_argument("--xi", type=float, help="clip norm (simulate: sqrt(d), stream: 1)")
        p.add_argument("--sigma", type=float, help="override the noise std (0 disables noise)")

    p = sub.add_parser("table2", help="golden error table with diff")
    p.add_argument("--n", type=int, default=bench.TABLE_N)
    p.add_argument("--out")
    p.set_defaults(func=cmd_table2)

    p = sub.add_parser("curve", help="E_t of a plan and its ratio to a baseline",
                       description="Columns: t, E_t, baseline_E_t, ratio = E_t / baseline_E_t.")
    common(p)
    p.add_argument("--kind", choices=kinds, default="dtoep")
    p.add_argument("--banding", choices=bandings, default="none")
    p.add_argument("--p", type=int)
    p.add_argument("--nu", type=_nu, default="auto")
    p.add_argument("--base-kind", choices=kinds, default="dtoep")
    p.add_argument("--base-banding", choices=bandings, default="banded")
    p.add_argument("--base-p", type=int)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("simulate", help="Monte-Carlo error on Bernoulli streams",
                       description="Columns: t, rmse, ramse (root averaged MSE), noise_ramse "
                                   "(against the non-private mean) and their analytic predictions.")
    common(p, n_default=1024)
    privacy(p)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--kind", choices=kinds, default="dtoep")
    p.add_argument("--p", type=int)
    p.add_argument("--nu", type=_nu)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--estimator", choices=["alg1", "withhold-release"], default="alg1")
    p.add_argument("--zeta", type=float, default=0.5)
    p.add_argument("--kc", type=int)
    p.add_argument("--bounded", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stream", help="replay a CSV stream (columns user_id, v1..vd, optional t)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--b", type=int, default=1, help="declared min separation")
    p.add_argument("--seed", type=int, default=0)
    privacy(p)
    p.add_argument("--kind", choices=kinds, default="dtoep")
    p.add_argument("--p", type=int)
    p.add_argument("--nu", type=_nu)
    p.add_argument("--clip-mode", choices=["clip"], default="clip")
    p.add_argument("--strict", action="store_true", help="fail on separation violations")
    p.add_argument("--estimator", choices=["alg1", "withhold-release"], default="alg1")
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--kc", type=int)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("synth", help="write a synthetic round-robin stream CSV")
    p.add_argument("--b", type=int, default=500)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sens-check", help="closed-form sensitivity against enumeration")
    p.add_argument("--n", type=int, default=12, help="largest n (<= 12)")
    p.add_argument("--b-max", type=int, default=4)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sens_check)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"dpmean: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DPMeanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
