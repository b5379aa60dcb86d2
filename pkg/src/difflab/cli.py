"""``difflab`` command-line entry point.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage or config
error. Every JSON output is written with sorted keys and no timestamps, so
a rerun with the same config and seed reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from . import _configs, categorical, ctmc, sde, trainer, verify
from ._configs import ConfigError
from .errors import DifflabError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SDE_BLOCK = 1024  # paths per noise stream; fixed so results ignore --jobs


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"difflab: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _check(name, measured, tol, ok=None):
    measured = float(measured)
    passed = bool(measured <= tol) if ok is None else bool(ok)
    return {"name": name, "measured": measured, "tolerance": float(tol), "status": "pass" if passed else "fail"}


def _status(checks):
    return EXIT_OK if all(c["status"] == "pass" for c in checks) else EXIT_FAIL


def _seed(args, cfg):
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


# ------------------------------------------------------------------ verify

def cmd_verify(args):
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    results = []
    for name in names:
        res = verify.run_suite(name, seed=args.seed or 0, jobs=args.jobs)
        results.append(res)
        for c in res["checks"]:
            print(f"[{c['status']}] {name}: {c['name']}")
    if args.json:
        _write(args.json, _dump(results if args.suite == "all" else results[0]))
    bad = sum(c["status"] != "pass" for r in results for c in r["checks"])
    total = sum(len(r["checks"]) for r in results)
    print(f"{total - bad}/{total} checks passed")
    return EXIT_OK if bad == 0 else EXIT_FAIL


# ---------------------------------------------------------------- simulate

def _chi2_checks(name, finals, laws, n, p_floor):
    """Per-coordinate chi-square goodness of fit, Bonferroni over coordinates."""
    checks, emp_out = [], []
    d = len(laws)
    worst = 1.0
    for k, law in enumerate(laws):
        counts = np.bincount(finals[:, k], minlength=len(law)).astype(float)
        emp_out.append((counts / n).tolist())
        keep = law > 0
        if np.any(counts[~keep] > 0):
            worst = 0.0
            continue
        if keep.sum() > 1:
            exp = law[keep] / law[keep].sum() * counts[keep].sum()
            worst = min(worst, float(stats.chisquare(counts[keep], exp).pvalue))
    checks.append(_check(f"{name}: smallest per-coordinate chi-square p-value x {d}",
                         min(1.0, worst * d), p_floor, ok=min(1.0, worst * d) >= p_floor))
    return checks, emp_out


def _traces(finals_events, x0s, horizon, count):
    finals, events = finals_events
    out = []
    for i in range(min(count, len(events))):
        t, k, s = events[i]
        path = ctmc.JumpPath(tuple(int(v) for v in x0s[i]), [(float(a), int(b), int(c)) for a, b, c in zip(t, k, s)],
                             horizon)
        out.append(path.to_jsonl())
    return "".join(out)


def _simulate_discrete(cfg, seed, jobs):
    noise = _configs.noise_of(cfg)
    sch = _configs.schedule_of(cfg)
    n = int(cfg.get("paths", 1000))
    tol = cfg.get("tolerances", {})
    if "steps" in cfg and cfg["steps"] < 1:
        raise ConfigError("steps must be a positive integer")
    if "dims" not in cfg:
        raise ConfigError("discrete simulation needs 'dims'")
    d = int(cfg["dims"])
    summary = {"space": "discrete", "seed": seed, "paths": n, "kernel": noise.to_json(), "schedule": sch.to_json()}
    if cfg["direction"] == "forward":
        if "x0" not in cfg or not isinstance(cfg["x0"], list) or len(cfg["x0"]) != d:
            raise ConfigError("discrete forward simulation needs an integer list 'x0' of length dims")
        x0 = np.asarray(cfg["x0"], dtype=np.int64)
        if np.any(x0 >= noise.size):
            raise ConfigError("x0 symbol outside the alphabet")
        h = float(cfg.get("horizon", 1.0))
        out = ctmc.simulate_batch(ctmc.interpolation_rate(sch, noise), d, x0, h, n, seed, jobs)
        finals = out[0]
        a = float(sch.alpha(h))
        laws = [categorical.forward_marginal(int(v), a, noise) for v in x0]
        checks, emp = _chi2_checks("terminal marginals vs closed form", finals, laws, n, tol.get("p_value", 1e-3))
        if noise.has_mask:
            frac = float(np.mean(finals == noise.mask_index))
            p = float(np.mean([law[noise.mask_index] for law in laws]))
            se = math.sqrt(max(p * (1 - p), 1e-300) / (n * d))
            summary["mask_fraction"] = {"empirical": frac, "expected": p, "se": se}
            checks.append(_check("mask fraction within z SE of 1 - alpha", abs(frac - p) / se, tol.get("z", 3.0)))
        summary.update(horizon=h, x0=x0.tolist(), alpha=a, empirical=emp, expected=[law.tolist() for law in laws])
        trace = _traces(out, [x0] * n, h, int(cfg.get("trace_paths", 10)))
    else:
        if not noise.has_mask or noise.kind != "mask":
            raise ConfigError("discrete reverse simulation supports the masking kernel only")
        margs = cfg.get("marginals")
        if margs is None or len(margs) != d or any(len(m) != noise.K for m in margs):
            raise ConfigError("discrete reverse simulation needs 'marginals': dims lists of K weights")
        margs = [np.asarray(m, float) / np.sum(m) for m in margs]
        finals = np.empty((n, d), dtype=np.int64)
        events = [[] for _ in range(n)]
        start = np.full(d, noise.mask_index)
        for k in range(d):
            # coordinates are independent under a product law; coordinate k uses streams k*n .. k*n+n-1
            f, ev = ctmc.simulate_batch(ctmc.masking_reverse_rate(sch, margs[k]), 1, start[:1], 1.0, n, seed, jobs,
                                        start_index=k * n)
            finals[:, k] = f[:, 0]
            for i, (t, _, s) in enumerate(ev):
                events[i].extend((float(a), k, int(b)) for a, b in zip(t, s))
        left = float(np.mean(finals == noise.mask_index))
        laws = [np.append(m, 0.0) for m in margs]
        keep = np.all(finals != noise.mask_index, axis=1)
        checks, emp = _chi2_checks("unmasked marginals vs data law", finals[keep], laws, int(keep.sum()),
                                   tol.get("p_value", 1e-3))
        expected_left = (1.0 - float(sch.alpha(0.0))) / (1.0 - float(sch.alpha(1.0)))
        summary.update(direction="reverse", still_masked_fraction=left, expected_still_masked=expected_left,
                       empirical=emp, expected=[m.tolist() for m in margs])
        ev_sorted = [sorted(e) for e in events]
        count = int(cfg.get("trace_paths", 10))
        trace = "".join(ctmc.JumpPath(tuple(int(v) for v in start), e, 1.0).to_jsonl() for e in ev_sorted[:count])
    summary["direction"] = cfg["direction"]
    summary["checks"] = checks
    return summary, trace


def _em_blocks(direction, data, sch, x_init, steps, seed, jobs, t_min, trace_paths):
    n = len(x_init)
    blocks = [(lo, min(n, lo + SDE_BLOCK)) for lo in range(0, n, SDE_BLOCK)]

    def run(b):
        lo, hi = blocks[b]
        keep = b == 0 and trace_paths > 0
        return sde.euler_maruyama(direction, data, sch, x_init[lo:hi], steps, seed, t_min=t_min,
                                  keep_path=keep, stream=b + 1)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            paths = list(ex.map(run, range(len(blocks))))
    else:
        paths = [run(b) for b in range(len(blocks))]
    finals = np.concatenate([p.states[-1] for p in paths])
    trace = paths[0].to_csv(max_paths=trace_paths) if trace_paths > 0 else ""
    return finals, trace


def _simulate_continuous(cfg, seed, jobs):
    sch = _configs.schedule_of(cfg, default="log-linear-snr")
    n = int(cfg.get("paths", 20000))
    tol = cfg.get("tolerances", {}).get("ks", 0.02)
    trace_paths = int(cfg.get("trace_paths", 5))
    t_min = float(cfg.get("t_min", sde.T_MIN))
    direction = cfg["direction"]
    steps = int(cfg.get("steps", 2048 if direction == "forward" else 512))
    if steps < 1:
        raise ConfigError("steps must be a positive integer")
    summary = {"space": "continuous", "direction": direction, "seed": seed, "paths": n, "steps": steps,
               "schedule": sch.to_json()}
    if direction == "forward":
        if not isinstance(cfg.get("x0"), (int, float)):
            raise ConfigError("continuous forward simulation needs a numeric 'x0'")
        x0 = float(cfg["x0"])
        data = _configs.mixture_of(cfg["data"]) if "data" in cfg else None
        finals, trace = _em_blocks("forward", data, sch, np.full(n, x0), steps, seed, jobs, t_min, trace_paths)
        a1 = float(sch.alpha(1.0))
        ref = stats.norm(a1 * x0, math.sqrt(1.0 - a1 * a1))
        summary.update(x0=x0, expected={"mean": a1 * x0, "variance": 1.0 - a1 * a1})
    else:
        if "data" not in cfg:
            raise ConfigError("continuous reverse simulation needs a 'data' mixture")
        data = _configs.mixture_of(cfg["data"])
        z = ctmc.path_rng(seed, 0).standard_normal(n)
        finals, trace = _em_blocks("reverse", data, sch, z, steps, seed, jobs, t_min, trace_paths)
        ref = data
        summary.update(t_min=t_min, data=data.to_json())
    ks = float(stats.kstest(finals, ref.cdf).statistic)
    summary["empirical"] = {"mean": float(finals.mean()), "variance": float(finals.var(ddof=1))}
    summary["checks"] = [_check("KS distance to the closed-form law", ks, tol)]
    return summary, trace


def cmd_simulate(args):
    cfg = _configs.load("simulate", args.config)
    seed = _seed(args, cfg)
    if cfg["space"] == "discrete":
        summary, trace = _simulate_discrete(cfg, seed, args.jobs)
    else:
        summary, trace = _simulate_continuous(cfg, seed, args.jobs)
    outs = cfg.get("outputs", {})
    if "trace" in outs:
        _write(outs["trace"], trace)
    _write(args.json or outs.get("summary"), _dump(summary))
    return _status(summary["checks"])


# ------------------------------------------------------------------- train

def cmd_train(args):
    cfg = _configs.load("train", args.config)
    dcfg = _configs.discrete_config(cfg)
    q = _configs.data_law(dcfg, cfg["q_data"])
    seed = _seed(args, cfg)
    model, rep = trainer.train(q, dcfg, epochs=int(cfg.get("epochs", 2000)), lr=float(cfg.get("lr", 1.0)),
                               seed=seed, B=int(cfg.get("bins", trainer.DEFAULT_BINS)),
                               check_elbo=bool(cfg.get("check_elbo", True)))
    tol = cfg.get("tolerances", {}).get("tv", 0.02)
    out = json.loads(rep.to_json())
    out["checks"] = [
        _check("TV(p0_theta, q_data)", rep.final_tv, tol),
        _check("ELBO bound violation (nats)", -rep.min_elbo_gap, 1e-6),
    ]
    outs = cfg.get("outputs", {})
    if "model" in outs:
        _write(outs["model"], model.to_json() + "\n")
    _write(args.json or outs.get("report"), _dump(out))
    return _status(out["checks"])


# -------------------------------------------------------------- likelihood

def cmd_likelihood(args):
    cfg = _configs.load("likelihood", args.config)
    data = _configs.mixture_of(cfg["data"])
    sch = _configs.schedule_of(cfg, default="log-linear-snr")
    steps = int(cfg.get("steps", 512))
    if steps < 1:
        raise ConfigError("steps must be a positive integer")
    pts = cfg["points"]
    if isinstance(pts, dict):
        lo, hi, num = pts["grid"]
        if int(num) != num or num < 1:
            raise ConfigError("grid count must be a positive integer")
        x = np.linspace(lo, hi, int(num))
    else:
        x = np.asarray(pts, dtype=float)
    ll = sde.exact_loglik(data, sch, x, steps)
    exact = data.logpdf(x)
    err = np.abs(ll - exact)
    lines = ["x,loglik,analytic,abs_error"] + [f"{a!r},{b!r},{c!r},{e!r}" for a, b, c, e in
                                                zip(x.tolist(), ll.tolist(), exact.tolist(), err.tolist())]
    outs = cfg.get("outputs", {})
    csv = "\n".join(lines) + "\n"
    tol = cfg.get("tolerances", {}).get("abs_error", 1e-3)
    summary = {"steps": steps, "points": int(len(x)), "max_abs_error": float(err.max()),
               "checks": [_check("max |loglik - analytic|", float(err.max()), tol)]}
    if "csv" in outs:
        _write(outs["csv"], csv)
        _write(args.json or outs.get("summary"), _dump(summary))
    else:
        _write(None, csv)
        if args.json:
            _write(args.json, _dump(summary))
    return _status(summary["checks"])


# ------------------------------------------------------------------ report

def cmd_report(args):
    cfg = _configs.load("report", args.config)
    kind = cfg["kind"]
    if kind == "convergence":
        T_list = tuple(cfg.get("T_list", (64, 128, 256, 512, 1024)))
        rows, _ = verify.masking_convergence(_seed(args, cfg), T_list)
        grows, _ = verify.gaussian_convergence(tuple(cfg.get("T_list", (32, 64, 128, 256, 512))))
        lines = ["series,T,value,gap,ratio"]
        for series, rs in (("masking", rows), ("gaussian", grows)):
            lines += [f"{series},{T},{v!r},{g!r}," + ("" if r is None else repr(float(r))) for T, v, g, r in rs]
        text = "\n".join(lines) + "\n"
    elif kind == "schedule":
        from .schedule import FAMILIES, NoiseSchedule

        t = np.linspace(0.0, 1.0, int(cfg.get("grid", 201)))
        lines = ["family,t,alpha,sigma2,dalpha,jump_clock"]
        for fam in FAMILIES:
            s = NoiseSchedule(fam)
            a, s2, da, jc = s.alpha(t), s.sigma2(t), s.dalpha(t), s.jump_clock(np.minimum(t, 1.0))
            lines += [f"{fam},{ti!r},{float(ai)!r},{float(bi)!r},{float(ci)!r},{float(di)!r}"
                      for ti, ai, bi, ci, di in zip(t.tolist(), a, s2, da, jc)]
        text = "\n".join(lines) + "\n"
    else:
        noise = _configs.noise_of(cfg)
        text = categorical.transition_csv(categorical.interpolation_matrix(float(cfg.get("alpha", 0.5)), noise))
    _write(args.json or cfg.get("outputs", {}).get("csv"), text)
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser():
    p = _Parser(prog="difflab", description="Diffusion processes on continuous and discrete spaces.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--json", default=None, help="write the JSON report/summary to this path")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", parents=[common], help="run property suites")
    v.add_argument("--suite", default="all", choices=("all",) + verify.SUITES)
    for name, helptext in (("simulate", "simulate forward or reverse processes"),
                           ("train", "train the tabular denoiser"),
                           ("likelihood", "exact log-likelihood via the probability-flow ODE"),
                           ("report", "emit plot-ready CSV")):
        c = sub.add_parser(name, parents=[common], help=helptext)
        c.add_argument("--config", required=True, help="JSON config path or builtin:<name>")
    sub.add_parser("configs", help="list bundled configs")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("difflab: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("difflab: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    handlers = {"verify": cmd_verify, "simulate": cmd_simulate, "train": cmd_train,
                "likelihood": cmd_likelihood, "report": cmd_report}
    if args.command == "configs":
        print("\n".join(_configs.BUILTIN_PREFIX + n for n in _configs.builtin_names()))
        return EXIT_OK
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"difflab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DifflabError, ValueError, ArithmeticError, MemoryError) as exc:
        print(f"difflab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
