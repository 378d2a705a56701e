"""Command-line entry point: ``cvqkd-cpe {run,sweep,calibrate,selftest,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace

import numpy as np

from . import harness, metrics
from .core import CPE_METHODS, ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


def parse_snr(text: str) -> tuple:
    """``"10,20,30"`` or an inclusive range ``"10:30:2"``."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1.0)
            start, stop, step = parts
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(float(round(start + i * step, 9)) for i in range(n))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse SNR list {text!r}") from None


def _add_common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--pilot-bw", type=float, dest="pilot_bw", help="pilot band-pass width [Hz]")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable), e.g. ukf.alpha=0.5")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvqkd-cpe", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one repetition at one pilot SNR and print the records")
    _add_common(r)
    r.add_argument("--snr", default="10", help="pilot SNR in dB")
    r.add_argument("--method", choices=CPE_METHODS + ("both",), default=None)
    r.add_argument("--rep", type=int, default=0, help="repetition index")

    s = sub.add_parser("sweep", help="pilot-SNR sweep with repetitions, written as a table")
    _add_common(s)
    s.add_argument("--snr", default="10:30:2", help="list (a,b,c) or inclusive range start:stop:step")
    s.add_argument("--reps", type=int, help="repetitions per SNR (default from config)")
    s.add_argument("--method", choices=CPE_METHODS + ("both",), default=None)
    s.add_argument("--out", required=True, help="output table path")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--parallel", type=int, default=None,
                   help=f"worker processes (default ${harness.PARALLEL_ENV} or 1)")
    s.add_argument("--figures", metavar="DIR", help="also render figures into DIR")

    c = sub.add_parser("calibrate", help="print the shot-noise-unit power scale")
    _add_common(c)

    t = sub.add_parser("selftest", help="run the built-in invariant checks")
    _add_common(t)

    pl = sub.add_parser("plot", help="render figures from a saved table")
    pl.add_argument("table", help="CSV or JSON written by 'sweep'")
    pl.add_argument("--outdir", default=".")
    return p


def load_effective_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = harness.load_config(args.config, cfg)
    pairs = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k] = v
    cfg = harness.apply_overrides(cfg, pairs)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    if getattr(args, "pilot_bw", None) is not None:
        cfg = replace(cfg, pilot_filter_bandwidth_hz=args.pilot_bw)
    if getattr(args, "method", None) is not None:
        cfg = replace(cfg, cpe_method=args.method)
    return cfg


def _cmd_run(args) -> int:
    snrs = parse_snr(args.snr)
    cfg = replace(load_effective_config(args), pilot_snr_db=snrs[0]).validate()
    res = harness.run_single(cfg, args.rep)
    for method, rec in res.records.items():
        out = asdict(rec)
        out["phase_mse_rad2"] = res.phase_mse[method]
        print(json.dumps(out))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_effective_config(args)
    spec = harness.SweepSpec(
        pilot_snr_db_values=parse_snr(args.snr),
        repetitions=args.reps if args.reps is not None else cfg.repetitions,
        base_config=cfg,
        methods=cfg.methods,
    ).validate()
    parallel = args.parallel if args.parallel is not None else harness.default_parallelism()

    def progress(done, total):
        if done % 50 == 0 or done == total:
            logging.getLogger("cvqkd_cpe").info("%d/%d cells", done, total)

    table = harness.run_sweep(spec, parallelism=parallel, progress=progress)
    path = harness.emit_results(table, args.out, args.format)
    print(f"wrote {path}")
    if args.figures:
        from .plotting import render_figures

        for fig in render_figures(table, args.figures):
            print(f"wrote {fig}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = load_effective_config(args).validate()
    print(f"{metrics.snu_calibrate(cfg):.9g}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    cfg = load_effective_config(args)
    report = harness.selftest(cfg, stream=sys.stdout)
    return EXIT_OK if all(r.passed for r in report) else EXIT_SELFTEST


def _cmd_plot(args) -> int:
    from .plotting import render_figures

    for fig in render_figures(harness.read_results(args.table), args.outdir):
        print(f"wrote {fig}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "calibrate": _cmd_calibrate,
            "selftest": _cmd_selftest, "plot": _cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
