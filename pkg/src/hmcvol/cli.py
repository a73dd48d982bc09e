"""Command-line entry point: ``hmcvol {sample,volume,verify,bench,plot}``.

Exit codes: 0 success, 1 a check or result failed, 2 usage or IO error.
Every run that writes files also writes ``run-meta.json`` next to them.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cooling import CoolingConfig, PhaseVarianceError, ScheduleError, estimate_volume
from .polytope import (Polytope, PolytopeError, box, cross_polytope, cube, load_polytope,
                       random_polytope, simplex)
from .sampler import ChainConfig, run_chain

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# settings tuned for desk-scale volume runs (see README)
DESK_CHAIN = dict(c=1.0, delta_scale=2.0, n_ode_steps=4, max_step=0.16, n_burnin=30, tol_fp=1e-8)
DESK_COOLING = dict(sigma0_sq=0.1, c_k=1.5)

_BUILTINS = {"cube": cube, "simplex": simplex, "cross": cross_polytope}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def fmt(x: float) -> str:
    """17 significant digits, locale independent."""
    return format(float(x), ".17g")


def resolve_polytope(spec: str) -> Polytope:
    """A JSON file path, or a builtin ``cube:N``, ``simplex:N``, ``cross:N``,
    ``box:L1,..,Ln:U1,..,Un`` or ``random:N:M:SEED``."""
    path = Path(spec)
    if path.exists():
        return load_polytope(path)
    kind, _, rest = spec.partition(":")
    try:
        if kind in _BUILTINS and rest:
            return _BUILTINS[kind](int(rest))
        if kind == "box":
            lo, hi = rest.split(":")
            return box([float(v) for v in lo.split(",")], [float(v) for v in hi.split(",")])
        if kind == "random":
            n, m, seed = (int(v) for v in rest.split(":"))
            return random_polytope(n, m, np.random.default_rng(seed))
    except ValueError as exc:
        raise UsageError(f"bad polytope spec {spec!r}: {exc}") from exc
    raise FileNotFoundError(f"polytope file not found: {spec}")


def resolve_threads(flag: int | None) -> int:
    env = os.environ.get("HMCVOL_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError as exc:
            raise UsageError(f"HMCVOL_THREADS must be an integer, got {env!r}") from exc
    elif flag is not None:
        t = flag
    else:
        t = os.cpu_count() or 1
    if t < 1:
        raise UsageError("thread count must be >= 1")
    return t


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def write_meta(out: Path, args, resolved: dict) -> None:
    meta = {
        "subcommand": args.command,
        "argv": list(args.argv),
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": resolved,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "run-meta.json").write_text(json.dumps(meta, indent=2, default=_jsonable) + "\n",
                                       encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def chain_config(args) -> ChainConfig:
    kw = dict(DESK_CHAIN) if getattr(args, "preset", None) == "desk" else {}
    mapping = {"p": "p", "alpha": "alpha", "c": "c", "delta": "delta_override",
               "delta_scale": "delta_scale", "ode_steps": "n_ode_steps", "max_step": "max_step",
               "n": "n_samples", "burnin": "n_burnin", "thin": "thinning", "tol_fp": "tol_fp",
               "anderson": "anderson", "seed": "seed"}
    for flag, name in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "no_metropolis", False):
        kw["metropolis"] = False
    try:
        return ChainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cooling_config(args) -> CoolingConfig:
    kw = dict(DESK_COOLING) if args.preset == "desk" else {}
    for flag, name in {"epsilon": "epsilon", "c_k": "c_k", "c_sigma0": "c_sigma0",
                       "sigma0_sq": "sigma0_sq", "nu": "nu", "seed": "seed",
                       "max_phases": "max_phases"}.items():
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    try:
        return CoolingConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# sample

def _chain_job(job):
    cfg, P = job
    return run_chain(cfg, P)


def samples_csv(X_by_chain) -> str:
    n = X_by_chain[0].shape[1]
    buf = io.StringIO()
    buf.write(",".join(["chain"] + [f"x{j + 1}" for j in range(n)]) + "\n")
    for k, X in enumerate(X_by_chain):
        for row in X:
            buf.write(str(k) + "," + ",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def cmd_sample(args) -> int:
    P = resolve_polytope(args.polytope)
    cfg = chain_config(args)
    threads = resolve_threads(args.threads)
    if args.chains < 1:
        raise UsageError("--chains must be >= 1")
    out = _out_dir(args)
    jobs = [(replace(cfg, chain_index=k), P) for k in range(args.chains)]
    t0 = time.perf_counter()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    (out / "samples.csv").write_text(samples_csv([X for X, _ in results]), encoding="utf-8",
                                     newline="")
    stats = [s.to_dict() for _, s in results]
    for s in stats:
        s.pop("runtime_s", None)  # keep the file reproducible; timing goes to stdout
    _dump(out / "stats.json", stats if len(stats) > 1 else stats[0])
    write_meta(out, args, {"chain": asdict(cfg), "chains": args.chains, "threads": threads,
                           "polytope": P.to_dict()})
    dt = time.perf_counter() - t0
    for k, (_, s) in enumerate(results):
        print(f"chain {k}: acceptance {s.acceptance_rate:.3f}  min ESS "
              f"{min(s.ess) if s.n_samples >= 2 else float('nan'):.1f}  delta {s.delta:.4g}  "
              f"alpha {s.alpha:g}")
    print(f"runtime {dt:.2f} s; wrote {out / 'samples.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# volume

def cmd_volume(args) -> int:
    P = resolve_polytope(args.polytope)
    ccfg = cooling_config(args)
    chain = chain_config(args)
    out = _out_dir(args)

    def progress(rec):
        if args.verbose:
            print(f"phase {rec.index:3d} alpha {rec.alpha:.4g} k {rec.k} "
                  f"ratio {math.exp(rec.log_ratio):.4g} rel-se {rec.rel_se:.3g}", flush=True)

    try:
        trace = estimate_volume(ccfg, P, chain, progress=progress)
    except (PhaseVarianceError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _dump(out / "trace.json", trace.to_dict())
    write_meta(out, args, {"cooling": asdict(ccfg), "chain": asdict(chain),
                           "polytope": P.to_dict()})
    lo, hi = trace.ci95
    print(f"volume {trace.volume:.6g}  (95% CI {lo:.6g} .. {hi:.6g}; {len(trace.phases)} phases, "
          f"{sum(p.k for p in trace.phases)} samples, {trace.runtime_s:.1f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args) -> int:
    from .verify import (Corpus, CorpusEntry, _sample_points, generate_corpus, hard_failures,
                         reports_to_json, run_suite, summary_table)
    from .polytope import find_interior_point

    threads = resolve_threads(args.threads)
    seed = 0 if args.seed is None else args.seed
    if args.polytope:
        P = resolve_polytope(args.polytope)
        rng = np.random.default_rng(seed)
        corpus = Corpus([CorpusEntry(P, _sample_points(P, find_interior_point(P).x, rng))], seed)
    else:
        corpus = generate_corpus(seed, n_random=args.corpus_size)
    try:
        reports = run_suite(corpus, only=args.only, threads=threads, lewis_tol=args.lewis_tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(summary_table(reports))
    if args.out:
        out = _out_dir(args)
        (out / "report.json").write_text(reports_to_json(reports, indent=1) + "\n",
                                         encoding="utf-8")
        write_meta(out, args, {"corpus_seed": seed, "corpus_size": len(corpus),
                               "only": args.only, "lewis_tol": args.lewis_tol,
                               "threads": threads})
    failed = hard_failures(reports)
    if failed:
        for r in failed[:20]:
            print(f"FAILED {r.check} on {r.polytope} point {r.point}: measured "
                  f"{r.measured:.6g} > bound {r.bound:.6g}", file=sys.stderr)
        if len(failed) > 20:
            print(f"... {len(failed) - 20} more hard failures", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench

def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty grid")
    return vals


def bench_point(n: int, m: int, seed: int, repeat: int, ode_steps: int) -> dict:
    """Per-step cost breakdown at one random polytope of size (n, m)."""
    from . import _kernels
    from .barrier import BarrierParams, default_p, metric
    from .dynamics import PhaseState, integrate

    rng = np.random.default_rng(seed)
    P = random_polytope(n, m, rng)
    params = BarrierParams(P, default_p(m), 1.0)
    x = np.zeros(n)
    A = P.A / (P.A @ x - P.b)[:, None]
    st = metric(params, x)
    v = st.g_chol @ rng.standard_normal(n)
    w0 = np.full(m, n / m)
    timings = {"lewis": [], "metric": [], "factorization": [], "integrator": []}
    fp_iters = steps = 0
    for _ in range(repeat):
        t = time.perf_counter()
        _kernels.lewis_newton(A, params.p, w0, params.lewis_tol, params.lewis_max_iter)
        timings["lewis"].append(time.perf_counter() - t)
        t = time.perf_counter()
        metric(params, x)
        timings["metric"].append(time.perf_counter() - t)
        t = time.perf_counter()
        np.linalg.cholesky(st.g)
        timings["factorization"].append(time.perf_counter() - t)
        t = time.perf_counter()
        res = integrate(params, PhaseState(x, v), 0.1, ode_steps, start_state=st, anderson=3)
        timings["integrator"].append(time.perf_counter() - t)
        fp_iters, steps = res.fixed_point_iters_total, res.steps_taken
    row = {"n": n, "m": m, "seed": seed, "repeat": repeat, "ode_steps": steps,
           "fp_iterations": fp_iters}
    for k, ts in timings.items():
        row[f"{k}_min_s"] = min(ts)
        row[f"{k}_median_s"] = statistics.median(ts)
    return row


def cmd_bench(args) -> int:
    ns, ms = _int_list(args.grid_n), _int_list(args.grid_m)
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    seed = 0 if args.seed is None else args.seed
    bench_point(2, 4, seed, 1, 1)  # compile outside the timed region
    rows = []
    for n in ns:
        for m in ms:
            if m <= n:
                raise UsageError(f"need m > n, got n={n}, m={m}")
            rows.append(bench_point(n, m, seed, args.repeat, args.ode_steps or 4))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in r.items()})
    if args.out:
        out = _out_dir(args)
        (out / "bench.csv").write_text(buf.getvalue(), encoding="utf-8", newline="")
        write_meta(out, args, {"grid_n": ns, "grid_m": ms, "repeat": args.repeat, "seed": seed})
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot

class FormatError(Exception):
    pass


def trace_data(text: str, columns: list[str] | None = None) -> str:
    """Samples CSV -> whitespace-separated ``iteration chain x...`` rows."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty samples file")
    header = rows[0]
    if "chain" not in header:
        raise FormatError("samples file has no 'chain' column")
    cols = columns or [h for h in header if h != "chain"]
    missing = [c for c in cols if c not in header]
    if missing:
        raise FormatError(f"missing column(s): {', '.join(missing)}")
    ci = header.index("chain")
    idx = [header.index(c) for c in cols]
    out = ["# iteration chain " + " ".join(cols)]
    count = {}
    for r in rows[1:]:
        k = r[ci]
        it = count.get(k, 0)
        count[k] = it + 1
        out.append(f"{it} {k} " + " ".join(r[i] for i in idx))
    return "\n".join(out) + "\n"


def schedule_data(trace: dict) -> str:
    if "phases" not in trace:
        raise FormatError("trace has no 'phases'")
    out = ["# phase sigma_sq alpha k log_ratio rel_se"]
    for p in trace["phases"]:
        try:
            out.append(f"{p['index']} {fmt(p['sigma_sq'])} {fmt(p['alpha'])} {p['k']} "
                       f"{fmt(p['log_ratio'])} {fmt(p['rel_se'])}")
        except KeyError as exc:
            raise FormatError(f"phase record missing field {exc}") from exc
    return "\n".join(out) + "\n"


def energy_drift_data(P: Polytope, seed: int, hs=(0.2, 0.1, 0.05, 0.025), trials: int = 20,
                      total_time: float = 0.4) -> tuple[str, float]:
    """Mean ``|H(end) - H(start)|`` against step size over random starts.

    Returns the data file text and the least-squares log-log slope.
    """
    from .barrier import BarrierParams, default_p, metric
    from .dynamics import PhaseState, integrate
    from .polytope import find_interior_point

    rng = np.random.default_rng(seed)
    params = BarrierParams(P, default_p(P.m), 0.0)
    c = find_interior_point(P).x
    starts = []
    for _ in range(trials):
        st = metric(params, c)
        u = np.linalg.solve(st.g_chol.T, rng.standard_normal(P.n))
        x = c + 0.3 * u / max(np.max(np.abs(st.A_x @ u)), 1.0)
        s = metric(params, x)
        starts.append((s, s.g_chol @ rng.standard_normal(P.n)))
    drift = []
    for h in hs:
        k = max(1, int(round(total_time / h)))
        errs = []
        for s, v in starts:
            r = integrate(params, PhaseState(s.x, v), k * h, k, tol_fp=1e-13, max_fp_iter=200,
                          start_state=s)
            if not r.rejected:
                errs.append(abs(r.energy_error))
        drift.append(float(np.mean(errs)) if errs else math.nan)
    slope = float(np.polyfit(np.log(hs), np.log(drift), 1)[0])
    lines = ["# h mean_abs_energy_error"] + [f"{fmt(h)} {fmt(d)}" for h, d in zip(hs, drift)]
    return "\n".join(lines) + f"\n# loglog slope {slope:.3f}\n", slope


def cmd_plot(args) -> int:
    out = _out_dir(args)
    if args.kind == "trace":
        if not args.input:
            raise UsageError("plot trace needs --input samples.csv")
        text = Path(args.input).read_text(encoding="utf-8")
        cols = args.columns.split(",") if args.columns else None
        data = trace_data(text, cols)
        target = out / "trace.dat"
    elif args.kind == "schedule":
        if not args.input:
            raise UsageError("plot schedule needs --input trace.json")
        try:
            trace = json.loads(Path(args.input).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.input}: invalid JSON ({exc})") from exc
        data = schedule_data(trace)
        target = out / "schedule.dat"
    else:
        P = resolve_polytope(args.polytope or "cube:3")
        data, slope = energy_drift_data(P, 0 if args.seed is None else args.seed)
        print(f"energy drift log-log slope {slope:.3f}")
        target = out / "energy_drift.dat"
    target.write_text(data, encoding="utf-8", newline="")
    write_meta(out, args, {"kind": args.kind, "input": args.input})
    print(f"wrote {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _finite_float(text):
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"not a finite number: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hmcvol", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hmcvol {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--polytope", help="JSON file or builtin such as cube:4, simplex:3")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    def chain_flags(p):
        p.add_argument("--preset", choices=["desk"], help="tuned desk-scale settings")
        p.add_argument("--p", type=_finite_float)
        p.add_argument("--alpha", type=_finite_float)
        p.add_argument("--c", type=_finite_float)
        p.add_argument("--delta", type=_finite_float, help="fixed trajectory time")
        p.add_argument("--delta-scale", type=_finite_float)
        p.add_argument("--ode-steps", type=int)
        p.add_argument("--max-step", type=_finite_float)
        p.add_argument("--no-metropolis", action="store_true")
        p.add_argument("--burnin", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--tol-fp", type=_finite_float)
        p.add_argument("--anderson", type=int)

    p = sub.add_parser("sample", help="run RHMC chains")
    common(p)
    chain_flags(p)
    p.add_argument("--n", type=int, default=1000, help="post-burn-in samples per chain")
    p.add_argument("--chains", type=int, default=1)

    p = sub.add_parser("volume", help="Gaussian-cooling volume estimate")
    common(p)
    chain_flags(p)
    p.add_argument("--epsilon", type=_finite_float)
    p.add_argument("--c-k", type=_finite_float)
    p.add_argument("--c-sigma0", type=_finite_float)
    p.add_argument("--sigma0-sq", type=_finite_float)
    p.add_argument("--nu", type=_finite_float)
    p.add_argument("--max-phases", type=int)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("verify", help="numerical inequality checks")
    common(p, out_required=False)
    p.add_argument("--only", action="append", help="restrict to a check family (repeatable)")
    p.add_argument("--corpus-size", type=int, default=50, help="number of random polytopes")
    p.add_argument("--lewis-tol", type=_finite_float, default=1e-12)

    p = sub.add_parser("bench", help="per-step cost breakdown over an (n, m) grid")
    common(p, out_required=False)
    p.add_argument("--grid-n", default="4,8")
    p.add_argument("--grid-m", default="16,64")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--ode-steps", type=int)

    p = sub.add_parser("plot", help="write gnuplot data files")
    common(p)
    p.add_argument("kind", choices=["trace", "schedule", "energy"])
    p.add_argument("--input")
    p.add_argument("--columns", help="comma-separated sample columns for trace data")
    return ap


COMMANDS = {"sample": cmd_sample, "volume": cmd_volume, "verify": cmd_verify,
            "bench": cmd_bench, "plot": cmd_plot}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    args.argv = argv
    if args.command in ("sample", "volume") and not args.polytope:
        print("error: --polytope is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FormatError, PolytopeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
