"""Experiment orchestration: single runs, pilot-SNR sweeps, persistence, selftest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import channel, cpe, metrics, rx, tx
from .core import (
    CPE_METHODS,
    ComplexFrame,
    ConfigError,
    EstimatorError,
    ExperimentConfig,
    UkfParams,
    derive_seed,
)

log = logging.getLogger(__name__)

PARALLEL_ENV = "CVQKD_CPE_PARALLEL"
CSV_COLUMNS = (
    "pilot_snr_db", "method", "mean_xi_snu", "stderr_xi", "mean_T", "mean_phase_mse_rad2",
    "stderr_phase_mse", "repetitions", "failed", "master_seed", "config_digest",
)
DEFAULT_SNR_GRID = tuple(float(v) for v in range(10, 31, 2))


@dataclass
class RunResult:
    records: dict
    phase_mse: dict


@dataclass(frozen=True)
class SweepSpec:
    pilot_snr_db_values: tuple = DEFAULT_SNR_GRID
    repetitions: int = 310
    base_config: ExperimentConfig = field(default_factory=ExperimentConfig)
    methods: tuple = CPE_METHODS

    def validate(self) -> "SweepSpec":
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.methods:
            raise ConfigError("select at least one method")
        bad = set(self.methods) - set(CPE_METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        self.base_config.validate()
        return self


@dataclass(frozen=True)
class ResultRow:
    pilot_snr_db: float
    method: str
    mean_xi_snu: float
    stderr_xi: float
    mean_T: float
    mean_phase_mse_rad2: float
    stderr_phase_mse: float
    repetitions: int
    failed: int
    master_seed: int
    config_digest: str


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    pooled: list = field(default_factory=list)

    def row(self, snr: float, method: str) -> ResultRow:
        for r in self.rows:
            if r.pilot_snr_db == snr and r.method == method:
                return r
        raise KeyError((snr, method))


def config_digest(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def pilot_amplitude(config: ExperimentConfig) -> float:
    if not config.pilot_enabled:
        return 0.0
    return tx.pilot_amplitude_for_snr(config.pilot_snr_db, metrics.reference_sigma2(config))


def simulate_channel(config: ExperimentConfig, repetition_index: int):
    """Alice's symbols, the true phase trajectory and Bob's raw passband frame."""
    master = config.rng_seed
    symbols = tx.generate_symbols(derive_seed(master, repetition_index, "symbols"),
                                  config.n_symbols, config.modulation_variance_snu,
                                  config.symbol_rate_hz)
    pilot = tx.PilotSpec(config.pilot_frequency_hz, pilot_amplitude(config))
    sent = tx.transmit(symbols, config.sps, config.rrc_rolloff, config.carrier_hz, pilot)
    phase = channel.wiener_phase(derive_seed(master, repetition_index, "phase"),
                                 config.n_samples, config.linewidth_hz, config.sample_rate_hz)
    raw = channel.propagate(sent, phase, config.channel_transmittance,
                            derive_seed(master, repetition_index, "shot"),
                            config.shot_noise_sigma2)
    return symbols, phase, raw


def estimate_phase(raw: ComplexFrame, config: ExperimentConfig, methods: Sequence[str],
                   truth=None) -> dict:
    """Run each requested estimator on the same band-passed pilot.

    ``"ideal"`` returns the true trajectory and needs ``truth``. A UKF that
    aborts is reported as an :class:`EstimatorError` instance in place of
    its estimate.
    """
    out = {}
    pilot_frame = None
    if any(m in CPE_METHODS for m in methods):
        pilot_frame = cpe.bandpass_pilot(raw, config.pilot_frequency_hz,
                                         config.pilot_filter_bandwidth_hz)
    for method in methods:
        if method == "argument":
            out[method] = cpe.argument_cpe(pilot_frame, config.pilot_frequency_hz)
        elif method == "ukf":
            amp = pilot_amplitude(config) * math.sqrt(config.channel_transmittance)
            try:
                out[method] = cpe.ukf_cpe(pilot_frame, config.pilot_frequency_hz,
                                          config.resolved_ukf(), amplitude=amp or None)
            except EstimatorError as exc:
                log.warning("UKF aborted: %s", exc)
                out[method] = exc
        elif method == "ideal":
            out[method] = cpe.PhaseEstimate(truth.theta.copy(), "ideal")
        elif method == "none":
            out[method] = cpe.PhaseEstimate(np.zeros(len(raw)), "none")
        else:
            raise ConfigError(f"unknown method {method!r}")
    return out


def run_single(config: ExperimentConfig, repetition_index: int, methods: Sequence[str] | None = None,
               snu_scale: float | None = None) -> RunResult:
    """One Monte Carlo repetition, every method on the same noise realization.

    ``methods`` defaults to the configured ``cpe_method``; ``"ideal"``
    (compensate with the true phase) and ``"none"`` are accepted as baselines.
    """
    config.validate()
    methods = tuple(methods) if methods is not None else config.methods
    if snu_scale is None:
        snu_scale = metrics.snu_calibrate(config)
    symbols, phase, raw = simulate_channel(config, repetition_index)
    estimates = estimate_phase(raw, config, methods, truth=phase)
    alice = symbols.trim(config.guard_symbols)
    vacuum = metrics.vacuum_level(config)
    guard_samples = config.guard_symbols * config.sps
    filtered = None if config.compensate_before_filter else rx.front_end(raw, config)

    records, mses = {}, {}
    for method in methods:
        est = estimates[method]
        if isinstance(est, Exception):
            nan = float("nan")
            records[method] = metrics.ExcessNoiseRecord(nan, nan, nan, nan, nan, config.pilot_snr_db,
                                                        method, config.rng_seed, repetition_index,
                                                        failed=True)
            mses[method] = nan
            continue
        if filtered is None:
            bob = rx.receive(raw, config, est, snu_scale)
        else:
            bob = rx.back_end(filtered, config, est, snu_scale)
        x, y, z = metrics.second_moments(alice, bob)
        t, xi = metrics.excess_noise(x, y, z, vacuum)
        records[method] = metrics.ExcessNoiseRecord(x, y, z, t, xi, config.pilot_snr_db, method,
                                                    config.rng_seed, repetition_index)
        mses[method] = metrics.phase_mse(phase, est, guard_samples)
    return RunResult(records, mses)


def _sweep_cell(args):
    config, rep, methods, scale = args
    res = run_single(config, rep, methods, scale)
    return [(m, res.records[m], res.phase_mse[m]) for m in methods]


def default_parallelism() -> int:
    try:
        return max(1, int(os.environ.get(PARALLEL_ENV, "1")))
    except ValueError:
        return 1


def _mean_stderr(values):
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(v))
    if len(v) < 2:
        return mean, float("nan")
    return mean, float(np.std(v, ddof=1) / math.sqrt(len(v)))


def run_sweep(spec: SweepSpec, parallelism: int = 1, progress=None) -> ResultTable:
    """Run every (SNR, repetition) cell and reduce per (SNR, method).

    Cells are independent (each derives its own seeds), and the reduction is
    over results sorted by (SNR, method, repetition), so the table does not
    depend on ``parallelism``.
    """
    spec.validate()
    base = spec.base_config
    methods = tuple(spec.methods)
    scale = metrics.snu_calibrate(base)
    digest = config_digest(base)
    tasks = [(replace(base, pilot_snr_db=float(snr)), rep, methods, scale)
             for snr in spec.pilot_snr_db_values for rep in range(spec.repetitions)]

    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_sweep_cell, tasks, chunksize=max(1, len(tasks) // (8 * parallelism))))
    else:
        results = []
        for i, task in enumerate(tasks):
            results.append(_sweep_cell(task))
            if progress is not None:
                progress(i + 1, len(tasks))

    cells = {}
    for (cfg, rep, _, _), out in zip(tasks, results):
        for method, rec, mse in out:
            cells.setdefault((cfg.pilot_snr_db, method), []).append((rep, rec, mse))

    table = ResultTable(config=base.to_dict())
    for snr in spec.pilot_snr_db_values:
        for method in methods:
            entries = sorted(cells[(float(snr), method)], key=lambda e: e[0])
            ok = [(rec, mse) for _, rec, mse in entries if not rec.failed]
            xi_mean, xi_se = _mean_stderr([r.excess_noise_xi for r, _ in ok])
            mse_mean, mse_se = _mean_stderr([m for _, m in ok])
            t_mean, _ = _mean_stderr([r.transmittance_t for r, _ in ok])
            table.rows.append(ResultRow(float(snr), method, xi_mean, xi_se, t_mean, mse_mean, mse_se,
                                        len(ok), len(entries) - len(ok), base.rng_seed, digest))
            # reduction of the moments before forming xi, kept alongside for comparison
            if ok:
                x = float(np.mean([r.x for r, _ in ok]))
                y = float(np.mean([r.y for r, _ in ok]))
                z = float(np.mean([r.z for r, _ in ok]))
                t, xi = metrics.excess_noise(x, y, z, metrics.vacuum_level(base))
                table.pooled.append({"pilot_snr_db": float(snr), "method": method,
                                     "x": x, "y": y, "z": z, "T": t, "xi_snu": xi})
    return table


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.9g}"


def _row_values(row: ResultRow) -> list:
    return [_fmt(getattr(row, c)) for c in CSV_COLUMNS]


def format_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in table.rows:
        w.writerow(_row_values(row))
    return buf.getvalue()


def format_json(table: ResultTable) -> str:
    rows = [{c: json.loads(v) if c not in ("method", "config_digest") and v != "nan" else
             (None if v == "nan" else v)
             for c, v in zip(CSV_COLUMNS, _row_values(row))} for row in table.rows]
    pooled = [{k: (float(_fmt(v)) if isinstance(v, float) else v) for k, v in p.items()}
              for p in table.pooled]
    return json.dumps({"columns": list(CSV_COLUMNS), "rows": rows, "pooled": pooled,
                       "config": table.config}, indent=2, default=repr) + "\n"


def emit_results(table: ResultTable, path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = format_csv(table) if fmt == "csv" else format_json(table)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def _parse_row(values: dict) -> ResultRow:
    kw = {}
    for f in fields(ResultRow):
        v = values[f.name]
        if f.name in ("method", "config_digest"):
            kw[f.name] = v
        elif f.name in ("repetitions", "failed", "master_seed"):
            kw[f.name] = int(v)
        else:
            kw[f.name] = float("nan") if v in (None, "nan") else float(v)
    return ResultRow(**kw)


def read_results(path) -> ResultTable:
    """Parse a table written by :func:`emit_results` (format picked from content)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return ResultTable([_parse_row(r) for r in data["rows"]], data.get("config", {}),
                           data.get("pooled", []))
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    return ResultTable([_parse_row(r) for r in reader])


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw, 0)
        except ValueError:
            value = float(raw)
            if not value.is_integer():
                raise
            return int(value)
    if isinstance(default, float) or default is None:
        if default is None and raw.lower() in ("none", ""):
            return None
        return float(raw)
    return raw


def apply_overrides(config: ExperimentConfig, pairs: dict) -> ExperimentConfig:
    """Apply ``key=value`` strings; ``ukf.<name>`` keys address the UKF params."""
    top, ukf = {}, {}
    cfg_defaults = {f.name: getattr(config, f.name) for f in fields(ExperimentConfig)}
    ukf_defaults = {f.name: getattr(config.ukf, f.name) for f in fields(UkfParams)}
    for key, raw in pairs.items():
        key = key.strip()
        try:
            if key.startswith("ukf."):
                name = key[4:]
                if name not in ukf_defaults:
                    raise ConfigError(f"unknown UKF parameter {name!r}")
                ukf[name] = _coerce(raw, ukf_defaults[name])
            else:
                if key not in cfg_defaults or key == "ukf":
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = _coerce(raw, cfg_defaults[key])
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    cfg = replace(config, **top)
    if ukf:
        cfg = replace(cfg, ukf=replace(cfg.ukf, **ukf))
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a plain-text ``key = value`` file (``#`` starts a comment)."""
    pairs = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v
    return apply_overrides(base or ExperimentConfig(), pairs)


# ---------------------------------------------------------------------------
# selftest


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    detail: str = ""


def _check_unscented(_):
    rng = np.random.default_rng(0)
    p = UkfParams()
    for n in (1, 2):
        mean = rng.normal(size=n)
        a = rng.normal(size=(n, n))
        cov = a @ a.T + 0.1 * np.eye(n)
        pts, wm, wc = cpe.sigma_points(mean, cov, p)
        assert abs(wm.sum() - 1) < 1e-12
        m = wm @ pts
        d = pts - m
        c = (wc[:, None] * d).T @ d
        assert np.allclose(m, mean, atol=1e-12, rtol=0)
        assert np.allclose(c, cov, atol=1e-12, rtol=0)


def _check_isi(_):
    sps = 20
    imp = np.zeros(64 * sps, dtype=complex)
    imp[0] = 1
    frame = ComplexFrame(imp, 1e9)
    h = tx.rrc_filter(frame, 0.001, sps)
    assert abs(h.energy - 1) < 1e-6
    rc = tx.rrc_filter(h, 0.001, sps).samples[::sps]
    assert abs(rc[0] - 1) < 1e-6
    assert np.max(np.abs(rc[1:])) < 1e-3


def _check_wiener(_):
    traj = channel.wiener_phase(11, 10**6 + 1, 2e3, 1e9)
    var = np.var(np.diff(traj.theta))
    expect = 2 * math.pi * 2e3 / 1e9
    assert abs(var / expect - 1) < 0.01, f"step variance {var:.4e} vs {expect:.4e}"


def _check_calibration(config):
    cfg = replace(config, calibration_frames=8)
    scale = metrics.snu_calibrate(cfg)
    assert abs(scale - 1) < 0.01, f"scale {scale}"


def _check_loopback(config):
    cfg = replace(config, linewidth_hz=0.0, shot_noise_sigma2=0.0, pilot_enabled=False,
                  n_symbols=2048, guard_symbols=64)
    rec = run_single(cfg, 0, methods=("ideal",)).records["ideal"]
    assert abs(rec.excess_noise_xi) < 1e-6 and abs(rec.transmittance_t - 1) < 1e-6, rec


def _check_ukf_params(config):
    config.resolved_ukf().validate()


SELFTEST_CHECKS = (
    ("unscented-transform-exactness", _check_unscented),
    ("rrc-nyquist-isi", _check_isi),
    ("wiener-step-variance", _check_wiener),
    ("snu-calibration", _check_calibration),
    ("noiseless-loopback", _check_loopback),
    ("ukf-parameter-validation", _check_ukf_params),
)


def selftest(config: ExperimentConfig | None = None, _ukf_overrides: dict | None = None,
             stream=None) -> list:
    """Run the built-in invariant checks, print one line each, return the results."""
    config = config or ExperimentConfig()
    if _ukf_overrides:
        config = replace(config, ukf=replace(config.ukf, **_ukf_overrides))
    report = []
    for name, check in SELFTEST_CHECKS:
        t0 = time.perf_counter()
        try:
            check(config)
            ok, detail = True, ""
        except Exception as exc:  # report entries, never a crash
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, ok, time.perf_counter() - t0, detail)
        report.append(res)
        if stream is not None:
            line = f"{'PASS' if ok else 'FAIL'}  {name:32s} {res.seconds:8.3f} s"
            print(line + (f"  {detail}" if detail else ""), file=stream)
    return report
