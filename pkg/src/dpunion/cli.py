"""Command-line entry point: ``dpunion <command> [options]``.

Every command builds a JSON-compatible document plus an optional table of
rows. ``--format`` picks how it is printed, and ``--output`` sends it to a
file instead of stdout. Exit codes: 0 success, 1 computation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from dpunion import audit, calibration, data, dpne, dpsu

DEFAULT_DELTA_EXP = -10.0


class CommandFailed(Exception):
    """The computation ran but its result is a failure (exit code 1)."""

    def __init__(self, message, out=None):
        super().__init__(message)
        self.out = out


@dataclasses.dataclass
class Output:
    doc: dict
    rows: list = dataclasses.field(default_factory=list)


def _delta(args):
    if getattr(args, "delta", None) is not None:
        return args.delta
    exp = getattr(args, "delta_exp", None)
    return math.exp(DEFAULT_DELTA_EXP if exp is None else exp)


def _seed(args, fallback=0):
    return fallback if args.seed is None else args.seed


def _load_or_generate(args):
    if getattr(args, "input", None):
        if args.text:
            return data.load_text_corpus(args.input, limit=args.limit)
        return data.load_corpus(args.input)
    return data.gen_synthetic(args.kind, args.users, args.vocab, rng_seed=_seed(args))


# ------------------------------------------------------------------ commands

def cmd_calibrate(args):
    delta = _delta(args)
    params = calibration.PrivacyParams(args.eps, delta, levels=args.levels)
    cal = calibration.calibrate(params)
    r1 = calibration.rho1(cal.sigma_star, params.delta_spill, args.delta0)
    pg, zero = calibration.rho_policy_gaussian(args.eps, delta, args.delta0)
    doc = {"epsilon": args.eps, "delta": delta, "delta0": args.delta0, "levels": args.levels,
           "sigma_star": cal.sigma_star, "sigma_per_level": cal.sigma_per_level,
           "rho1": r1, "rho_pg": pg, "rho_zero": zero}
    return Output(doc, [doc])


def cmd_table_b1(args):
    rows = [dataclasses.asdict(r) for r in dpsu.spillover_surcharge_table(
        eps_list=args.eps, delta0_list=args.delta0, delta=_delta(args))]
    return Output({"rows": rows}, rows)


def cmd_dpsu_run(args):
    params = calibration.PrivacyParams(args.eps, _delta(args))
    if args.input:
        corpus = data.load_text_corpus(args.input, args.limit) if args.text else \
            data.load_corpus(args.input)
        items = {uid: set(toks) for uid, toks in corpus.users}
    else:
        items = data.gen_item_sets(n_users=args.users, rng_seed=_seed(args))
    start = time.perf_counter()
    try:
        rel = dpsu.run_policy_gaussian(items, params, args.delta0, policy=args.policy,
                                       gamma=args.gamma, rng_seed=_seed(args),
                                       allow_nonprivate=args.allow_nonprivate)
    except dpsu.NonPrivatePolicyError as exc:
        raise CommandFailed(str(exc)) from None
    doc = {"released": len(rel.released), "benchmark_released": rel.benchmark_size,
           "support_size": rel.support_size, "sigma": rel.sigma,
           "rho": rel.rho, "gamma": rel.gamma, "policy": args.policy, "private": rel.private,
           "users": len(items), "wall_clock": time.perf_counter() - start}
    return Output(doc, [doc])


_DPNE_FLAGS = {"eps": "epsilon", "bounds": "bounds", "max_length": "max_length",
               "fip_tolerance": "fip_tolerance", "ht_discount": "ht_discount",
               "spurious_fraction": "spurious_fraction"}


def _dpne_config(args):
    """Defaults < config file < flags."""
    cfg = {"epsilon": 4.0, "bounds": 100}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        cfg.update(doc.get("config", doc))
    for flag, key in _DPNE_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            cfg[key] = value[0] if isinstance(value, list) and len(value) == 1 else value
    if args.delta is not None or args.delta_exp is not None:
        cfg["delta"] = _delta(args)
    if args.seed is not None:
        cfg["rng_seed"] = args.seed
    if args.noiseless:
        cfg["noiseless"] = True
    if isinstance(cfg["bounds"], list):
        cfg["bounds"] = tuple(cfg["bounds"])
    return dpne.DpneConfig.from_dict(cfg)


def cmd_dpne_run(args):
    config = _dpne_config(args)
    corpus = _load_or_generate(args)
    start = time.perf_counter()
    result = dpne.run_afp_dpne(corpus, config)
    report = result.to_report(wall_clock=time.perf_counter() - start)
    report.extra.update({"users": len(corpus), "total_released": result.total_released})
    if args.emit_ngrams:
        report.extra["released"] = [[" ".join(corpus.decode(g)) for g in sorted(lv)]
                                    for lv in result.released]
    return Output(report.to_dict(), report.levels)


def cmd_counterexample_l1(args):
    trace = dpsu.l1_counterexample_trace()
    rows = [{"user": e["user"], "items": "".join(e["items"]),
             "h1": [round(x, 6) for x in e["h1"]], "h2": [round(x, 6) for x in e["h2"]],
             "diff_norm": e["diff_norm"]} for e in trace.log]
    doc = {"diff": list(trace.diff), "norm": trace.norm, "expands": trace.norm > 1, "trace": rows}
    if trace.norm <= 1:
        raise CommandFailed(f"no expansion: norm {trace.norm:.6f} <= 1", Output(doc, rows))
    return Output(doc, rows)


def cmd_counterexample_adaptive(args):
    res = dpne.adaptive_counterexample_ratio(args.sigma, args.rho, args.delta0)
    doc = dataclasses.asdict(res)
    return Output(doc, [doc])


def cmd_audit(args):
    corpus = _load_or_generate(args)
    config = dpne.DpneConfig(args.eps, args.bounds, max_length=args.max_length,
                             delta=_delta(args), noiseless=args.noiseless)
    res = audit.run_audit(corpus, config, m=args.canaries, runs=args.runs,
                          rng_seed=_seed(args), threads=args.threads)
    rows = [{"run": i, "correct": r.correct, "guesses": r.total_guesses, "p_value": r.p_value}
            for i, r in enumerate(res.runs)]
    doc = {"epsilon": res.epsilon, "correct": res.correct, "total": res.total,
           "fraction": res.fraction, "p_value": res.p_value,
           "verdict": "PASS" if res.passed else "FAIL", "runs": rows}
    return Output(doc, rows)


def cmd_gen_data(args):
    if not args.output:
        raise ValueError("gen-data needs --output")
    corpus = data.gen_synthetic(args.kind, args.users, args.vocab, rng_seed=_seed(args))
    data.save_corpus(corpus, args.output)
    lengths = [len(t) for t in corpus.texts()]
    doc = {"path": args.output, "kind": args.kind, "users": len(corpus), "vocab": len(corpus.vocab),
           "tokens": sum(lengths)}
    return Output(doc, [doc])


def cmd_equiv_test(args):
    configs = dpne.equivalence_configs()
    seed = _seed(args)

    def one(i):
        hist, tau, sigma = configs[i]
        stat, p, dof = dpne.equivalence_test(hist, tau, sigma, args.trials, rng_seed=seed + i)
        return {"config": i, "candidates": len(tau), "statistic": stat, "dof": dof,
                "p_value": p, "passed": p > args.alpha}

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = list(pool.map(one, range(len(configs))))
    doc = {"trials": args.trials, "alpha": args.alpha, "rows": rows,
           "passed": all(r["passed"] for r in rows)}
    if not doc["passed"]:
        raise CommandFailed("equivalence rejected for some configuration", Output(doc, rows))
    return Output(doc, rows)


# ------------------------------------------------------------------- output

def _scalar(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_scalar(x) for x in v) + ")"
    return str(v)


def _is_table(v):
    return isinstance(v, dict) or (isinstance(v, list) and any(isinstance(x, dict) for x in v))


def render(out: Output, fmt):
    if fmt == "json":
        return json.dumps(out.doc, indent=2, default=data._json_default) + "\n"
    if fmt == "csv":
        rows = out.rows or [out.doc]
        buf = io.StringIO()
        fields = list(dict.fromkeys(k for r in rows for k in r))
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v
                             for k, v in r.items()})
        return buf.getvalue()
    lines = [f"{k}: {_scalar(v)}" for k, v in out.doc.items() if not _is_table(v)]
    if out.rows and out.rows != [out.doc]:
        fields = list(dict.fromkeys(k for r in out.rows for k in r))
        lines.append("  ".join(fields))
        lines += ["  ".join(_scalar(r.get(k, "")) for k in fields) for r in out.rows]
    return "\n".join(lines) + "\n"


def _emit(out, args):
    text = render(out, args.format)
    if args.output and args.command != "gen-data":
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------- parser

def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="random seed (default 0)")
    parser.add_argument("--output", default=d(None), help="write the result to this file")
    parser.add_argument("--format", choices=("text", "json", "csv"), default=d("text"))
    parser.add_argument("--threads", type=int, default=d(1), help="worker pool size")


def _privacy_flags(p, eps=1.0):
    p.add_argument("--eps", type=float, default=eps)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--delta-exp", type=float, default=None, help="delta = exp(DELTA_EXP)")


def _corpus_flags(p):
    p.add_argument("--input", help="corpus NDJSON (or plain text with --text)")
    p.add_argument("--text", action="store_true", help="input is one document per line")
    p.add_argument("--limit", type=int, default=None, help="read at most this many documents")
    p.add_argument("--kind", choices=("zipf", "clustered", "heavy_tail"), default="zipf")
    p.add_argument("--users", type=int, default=5000)
    p.add_argument("--vocab", type=int, default=500)


def build_parser():
    parser = argparse.ArgumentParser(prog="dpunion", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="noise scale and thresholds")
    _privacy_flags(p)
    p.add_argument("--delta0", type=int, default=1, help="per-user item bound")
    p.add_argument("--levels", type=int, default=1)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("table-b1", parents=[common], help="spillover surcharge table")
    p.add_argument("--eps", type=float, nargs="+", default=[1.0, 3.0, 5.0, 8.0])
    p.add_argument("--delta0", type=int, nargs="+", default=[10, 100])
    g = p.add_mutually_exclusive_group()
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--delta-exp", type=float, default=None)
    p.set_defaults(func=cmd_table_b1)

    p = sub.add_parser("dpsu", parents=[common], help="private set union")
    dsub = p.add_subparsers(dest="action", required=True)
    p = dsub.add_parser("run", parents=[common])
    _privacy_flags(p, eps=3.0)
    p.add_argument("--delta0", type=int, default=10)
    p.add_argument("--policy", choices=("l1", "l2"), default="l2")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--allow-nonprivate", action="store_true")
    p.add_argument("--input")
    p.add_argument("--text", action="store_true")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--users", type=int, default=20_000, help="synthetic item-set users")
    p.set_defaults(func=cmd_dpsu_run)

    p = sub.add_parser("dpne", parents=[common], help="private n-gram extraction")
    nsub = p.add_subparsers(dest="action", required=True)
    p = nsub.add_parser("run", parents=[common])
    p.add_argument("--config", help="JSON config or a previous report")
    p.add_argument("--eps", type=float, default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--delta-exp", type=float, default=None)
    p.add_argument("--bounds", type=int, nargs="+", default=None,
                   help="per-level contribution bounds (one value applies to every level)")
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--fip-tolerance", type=float, default=None, help="inf disables pruning")
    p.add_argument("--ht-discount", type=float, default=None)
    p.add_argument("--spurious-fraction", type=float, default=None)
    p.add_argument("--noiseless", action="store_true", help="non-private sanity mode")
    p.add_argument("--emit-ngrams", action="store_true", help="include released n-grams")
    _corpus_flags(p)
    p.set_defaults(func=cmd_dpne_run)

    p = sub.add_parser("counterexample", parents=[common], help="policy counterexamples")
    csub = p.add_subparsers(dest="action", required=True)
    p = csub.add_parser("l1-descent", parents=[common])
    p.set_defaults(func=cmd_counterexample_l1)
    p = csub.add_parser("adaptive", parents=[common])
    p.add_argument("--sigma", type=float, default=2.54)
    p.add_argument("--rho", type=float, default=10.0)
    p.add_argument("--delta0", type=int, default=100)
    p.set_defaults(func=cmd_counterexample_adaptive)

    p = sub.add_parser("audit", parents=[common], help="one-run canary audit")
    _privacy_flags(p, eps=4.0)
    p.add_argument("--canaries", type=int, default=200)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--bounds", type=int, default=100)
    p.add_argument("--max-length", type=int, default=6)
    p.add_argument("--noiseless", action="store_true")
    _corpus_flags(p)
    p.set_defaults(func=cmd_audit, users=10_000)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic corpus")
    p.add_argument("--kind", choices=("zipf", "clustered", "heavy_tail"), default="zipf")
    p.add_argument("--users", type=int, default=5000)
    p.add_argument("--vocab", type=int, default=500)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("equiv-test", parents=[common], help="sparse vs dense release test")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_equiv_test)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        out = args.func(args)
    except CommandFailed as exc:
        if exc.out is not None:
            _emit(exc.out, args)
        print(f"dpunion: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"dpunion: error: {exc}", file=sys.stderr)
        return 1
    _emit(out, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
