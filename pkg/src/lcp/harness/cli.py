"""Command line: ``lcp {simulate,tune,predict,oracle-check,bench}``.

The default seed comes from the ``LCP_SEED`` environment variable (0 if
unset); ``--seed`` overrides it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..engine import RULES, CalibrationSet, SplitLCP, split_cp_threshold
from ..localizer import LocalizerSpec
from ..scores import FAMILIES, ScoreConfig, fit_score_model, invert_outputs
from ..tuning import TuneConfig, tune_bandwidth
from .experiments import EIGHT, LocalizerConfig, bench, build_dissimilarity, oracle_check, run_experiment
from .generators import GENERATORS, SyntheticSpec, true_band
from .io import InputError, RunConfig, load_config, read_calibration, read_test, read_training, write_bands, write_json, write_rows

SEED_ENV = "LCP_SEED"
logger = logging.getLogger("lcp")

_NEEDED = {"R": ("mu",), "R-local": ("mu", "rho"), "QR": ("qlo", "qhi"), "QR-local": ("qlo", "qhi", "rho")}


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _bandwidth(text):
    if text == "auto":
        return text
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be a positive number or 'auto'") from None
    if not h > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return h


def _int_list(text):
    try:
        return [int(float(t)) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcp", description="Localized conformal prediction tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"overrides ${SEED_ENV}")
        return sp

    s = seeded(sub.add_parser("simulate", help="run methods on a synthetic generator"))
    s.add_argument("name", choices=GENERATORS)
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--methods", default=",".join(EIGHT), help="comma-separated, e.g. CR,LCR or LCP-randomized:R")
    s.add_argument("--n-train", type=int, default=1000)
    s.add_argument("--n-calib", type=int, default=1000)
    s.add_argument("--n-test", type=int, default=5000)
    s.add_argument("--p", type=int, default=1, help="dimension for prop2")
    s.add_argument("--dissimilarity", default="composite")
    s.add_argument("--h", type=_bandwidth, default="auto")
    s.add_argument("--out", type=Path, default=None, help="output directory (default simulate-NAME)")

    t = seeded(sub.add_parser("tune", help="select a bandwidth from training data"))
    t.add_argument("--train", type=Path, required=True)
    t.add_argument("--n-calib", type=int, required=True)
    t.add_argument("--config", type=Path)
    t.add_argument("--alpha", type=float)
    t.add_argument("--out", type=Path, default=Path("tuning.csv"))

    r = seeded(sub.add_parser("predict", help="calibrate and write per-point bands"))
    r.add_argument("--calib", type=Path, required=True)
    r.add_argument("--test", type=Path, required=True)
    r.add_argument("--train", type=Path, help="training data for score fitting and tuning")
    r.add_argument("--config", type=Path)
    r.add_argument("--alpha", type=float)
    r.add_argument("--rule", choices=RULES + ("cp",))
    r.add_argument("--h", type=_bandwidth)
    r.add_argument("--out", type=Path, default=Path("bands.csv"))

    o = seeded(sub.add_parser("oracle-check", help="fast scan vs brute force on random instances"))
    o.add_argument("--instances", type=int, default=1000)
    o.add_argument("--max-n", type=int, default=50)
    o.add_argument("--randomized", action="store_true", help="also check the randomized rule")

    b = seeded(sub.add_parser("bench", help="scan timing against calibration size"))
    b.add_argument("--n", type=_int_list, default=[1000, 10_000, 100_000])
    b.add_argument("--n-test", type=int, default=20)
    b.add_argument("--out", type=Path, default=None)
    return p


def _config(args, seed):
    """Config file settings plus the effective seed (``--seed`` > config > environment)."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if cfg.family not in FAMILIES:
        raise UsageError(f"unknown score family {cfg.family!r}")
    if args.seed is None and cfg.seed is not None:
        seed = int(cfg.seed)
    return cfg, seed


def _tune_config(cfg: RunConfig, alpha: float, seed: int) -> TuneConfig:
    return TuneConfig(**{"alpha": alpha, "seed": seed, **cfg.tuning})


def cmd_simulate(args, seed):
    spec = SyntheticSpec(args.name, args.n_train, args.n_calib, args.n_test, seed, args.p, args.alpha)
    loc = LocalizerConfig(args.dissimilarity, args.h)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = run_experiment(spec, methods, loc, args.alpha, seed)
    out = args.out or Path(f"simulate-{args.name}")
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", {**report.to_dict(), "localizer": asdict(loc)})
    write_rows(out / "table.csv", report.table())
    tuned = {}
    for label, r in report.results.items():
        if r.tune is not None and id(r.tune) not in tuned:
            tuned[id(r.tune)] = label
            r.tune.to_csv(out / f"tuning-{label}.csv")
    if report.test_X.shape[1] == 1 and args.name != "prop2":
        x = report.test_X[:, 0]
        order = np.argsort(x, kind="stable")
        lo, hi = true_band(args.name, x, args.alpha)
        rows = []
        for i in order:
            row = {"x": x[i], "y": report.test_y[i], "truth_lower": lo[i], "truth_upper": hi[i]}
            for label, r in report.results.items():
                row[f"{label}_lower"], row[f"{label}_upper"] = r.lower[i], r.upper[i]
            rows.append(row)
        write_rows(out / "bands.csv", rows)
    for label, r in report.results.items():
        print(f"{label:>8}  coverage {r.coverage:.4f}  infinite {r.infinite_frac:.4f}  ave.PI {r.ave_pi:.4f}")
    return 0


def cmd_tune(args, seed):
    cfg, seed = _config(args, seed)
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    X, y = read_training(args.train)
    model = fit_score_model(cfg.family, X, y, ScoreConfig(alpha=alpha, seed=seed))
    loc = LocalizerConfig(**{**cfg.localizer, "h": "auto"})
    dis = build_dissimilarity(loc, model, seed)
    report = tune_bandwidth(model.cv_scores, model.train_features, dis, args.n_calib, _tune_config(cfg, alpha, seed), model.cv_scale)
    report.to_csv(args.out)
    flag = " (no feasible bandwidth; smallest infinite fraction used)" if report.infeasible else ""
    print(f"selected h = {report.selected!r}{flag}")
    return 0


def cmd_predict(args, seed):
    cfg, seed = _config(args, seed)
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    rule = args.rule or cfg.rule
    if rule not in RULES + ("cp",):
        raise UsageError(f"unknown rule {rule!r}")
    calib = read_calibration(args.calib)
    Xt, preds = read_test(args.test)
    if Xt.shape[1] != calib.X.shape[1]:
        raise UsageError(f"test has {Xt.shape[1]} features, calibration has {calib.X.shape[1]}")
    loc = LocalizerConfig(**{"dissimilarity": "euclidean" if calib.scored else "composite", **cfg.localizer})
    if args.h is not None:
        loc = LocalizerConfig(**{**asdict(loc), "h": args.h})
    model = None
    if args.train is not None:
        X, y = read_training(args.train)
        model = fit_score_model(cfg.family, X, y, ScoreConfig(alpha=alpha, seed=seed))
    elif not calib.scored:
        raise UsageError("calibration responses need --train to fit the score model (or supply scores in a v column)")
    elif loc.dissimilarity == "composite" or loc.h == "auto":
        raise UsageError("composite dissimilarity and h='auto' need --train")

    if calib.scored:
        scores = calib.values
        if all(c in preds for c in _NEEDED[cfg.family]):
            outputs = {c: preds[c] for c in _NEEDED[cfg.family]}
        else:
            outputs = model.outputs(Xt) if model is not None else None
    else:
        scores = model.score(calib.X, calib.values)
        outputs = model.outputs(Xt)

    if rule == "cp":
        thr = np.full(Xt.shape[0], split_cp_threshold(scores, alpha))
        k_star = alpha_tilde = None
    else:
        h = loc.h
        dis = build_dissimilarity(loc, model, seed)
        if h == "auto":
            report = tune_bandwidth(model.cv_scores, model.train_features, dis, len(scores), _tune_config(cfg, alpha, seed), model.cv_scale)
            h = report.selected
            logger.info("tuned h = %r", h)
        lcp = SplitLCP(LocalizerSpec(dis, float(h)), CalibrationSet.build(scores, calib.X))
        batch = lcp.predict(Xt, alpha, rule=rule, rng=seed)
        thr, k_star, alpha_tilde = batch.threshold, batch.k_star, batch.alpha_tilde

    if outputs is None:
        # score-space band {v : v <= threshold}
        lower, upper = np.full(thr.shape, -np.inf), thr
    else:
        lower, upper = invert_outputs(cfg.family, thr, **outputs)
    write_bands(args.out, lower, upper, thr, k_star, alpha_tilde)
    print(f"wrote {len(thr)} bands to {args.out}; infinite fraction {np.mean(thr == np.inf):.4f}")
    return 0


def cmd_oracle_check(args, seed):
    res = oracle_check(args.instances, args.max_n, seed, args.randomized)
    print(
        f"{res.instances} instances, {res.mismatches} deterministic mismatches, "
        f"{res.randomized_mismatches} randomized mismatches, {res.seconds:.1f}s"
    )
    for rule, i in res.failures[:20]:
        print(f"  mismatch: rule={rule} instance={i}")
    return 0 if res.ok else 1


def cmd_bench(args, seed):
    rows = bench(args.n, args.n_test, seed=seed)
    if args.out is not None:
        write_rows(args.out, rows)
    for r in rows:
        print(
            f"n={r['n']:>7}  weights {r['weights_seconds']:.4f}s  scan {r['scan_seconds'] * 1e3:.3f}ms  "
            f"end-to-end {r['end_to_end_seconds'] * 1e3:.3f}ms per test point"
        )
    for a, b in zip(rows, rows[1:]):
        print(f"scan ratio n={b['n']}/n={a['n']}: {b['scan_seconds'] / a['scan_seconds']:.2f}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "tune": cmd_tune,
    "predict": cmd_predict,
    "oracle-check": cmd_oracle_check,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        seed = args.seed if args.seed is not None else default_seed()
        return COMMANDS[args.command](args, seed)
    except (InputError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
