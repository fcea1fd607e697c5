"""Command-line driver: INI-style experiment configs, one verb per experiment,
deterministic CSV/JSON outputs plus a manifest.

Usage::

    qusense <verb> config.ini [-o OUTDIR]

Exit codes: 0 success, 2 configuration error, 3 numerical or compilation failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import codes, model, protocol
from .dynamics import NoiseModel
from .errors import ConfigError, QusenseError

WORKERS_ENV = "QUSENSE_WORKERS"
TOP = "__top__"

# section -> key -> (type, default); None default means optional/absent
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    TOP: {"seed": ("int", 0)},
    "system": {"spin": ("spin", "3/2"), "B_tesla": ("float", 0.35), "D_invcm": ("float", -0.81),
               "E_invcm": ("float", -0.24), "g": ("float", 2.0)},
    "noise": {"t2_us": ("pos", 50.0), "t1_s": ("pos", None)},
    "drive": {"b_ref_mT": ("pos", 10.0), "eta_max": ("pos", 0.05), "b1z_mT": ("pos", 10.0)},
    "protocol": {"bx_uT": ("nonneg", 1.0), "delta_ns": ("pos", 500.0), "t_cycle_ns": ("nonneg", 400.0),
                 "t_m_us": ("nonneg", 1.0), "t_max_s": ("pos", 1.0), "sample_dt_ns": ("pos", None),
                 "trotter_steps": ("count", 1), "qec": ("bool", True), "code_t_free_ns": ("pos", 500.0),
                 "restarts": ("count", 32)},
    "sweep": {"bx_min_uT": ("pos", 0.1), "bx_max_uT": ("pos", 100.0), "bx_count": ("grid", 16),
              "delta_min_ns": ("pos", 50.0), "delta_max_ns": ("pos", 5000.0), "delta_count": ("grid", 12),
              "metric": ("metric", "decay_rate")},
    "output": {"directory": ("str", "out"), "plot": ("bool", False)},
}

VERBS = ("simulate-qubit", "optimize-code", "compile-pulses", "run-protocol", "calibrate", "sensitivity",
         "sweep-delta", "validate-frames", "tables-check")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values[TOP]["seed"])

    @property
    def spin(self) -> Fraction:
        return self.values["system"]["spin"]

    @property
    def is_qubit(self) -> bool:
        return self.spin == Fraction(1, 2)

    def serialize(self) -> str:
        lines = [f"seed = {_fmt(self.values[TOP]['seed'])}", ""]
        for section, keys in SCHEMA.items():
            if section == TOP:
                continue
            lines.append(f"[{section}]")
            for key in keys:
                val = self.values[section][key]
                if val is not None:
                    lines.append(f"{key} = {_fmt(val)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "on" if val else "off"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _convert(kind: str, raw: str, key: str, line: int | None):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError
        if kind in ("int", "count", "grid"):
            val = int(raw)
            if kind == "count" and val < 1:
                raise ConfigError(f"{key} must be >= 1", line)
            if kind == "grid" and val < 2:
                raise ConfigError(f"{key} must be >= 2", line)
            return val
        if kind == "spin":
            val = Fraction(raw)
            if "." in raw and float(raw) == int(float(raw)):
                raise ConfigError(f"spin must be half-integer, got {raw}", line)
            if val.denominator != 2:
                raise ConfigError(f"spin must be half-integer, got {raw}", line)
            return val
        if kind == "metric":
            if raw not in ("decay_rate", "bx_min"):
                raise ConfigError(f"metric must be decay_rate or bx_min, got {raw}", line)
            return raw
        val = float(raw)
        if not math.isfinite(val):
            raise ValueError
        if kind == "pos" and not val > 0:
            raise ConfigError(f"{key} must be positive", line)
        if kind == "nonneg" and val < 0:
            raise ConfigError(f"{key} must be non-negative", line)
        return val
    except ConfigError:
        raise
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"malformed value for {key}: {raw!r}", line) from None


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """(section, key) -> 1-based line number, for error messages."""
    out = {}
    section = TOP
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith(("#", ";")):
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, "")] = i
        elif "=" in s:
            out[(section, s.split("=", 1)[0].strip())] = i
    return out


def parse_config_text(text: str) -> ExperimentConfig:
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{TOP}]\n" + text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], None if line is None else line - 1) from None
    values: dict[str, dict[str, object]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")))
        for key in cp[section]:
            if key not in SCHEMA[section]:
                where = "outside any section" if section == TOP else f"in [{section}]"
                raise ConfigError(f"unknown key {key!r} {where}", lines.get((section, key)))
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            if cp.has_option(section, key):
                values[section][key] = _convert(kind, cp[section][key], key, lines.get((section, key)))
            else:
                values[section][key] = default if not (kind == "spin" and default) else Fraction(default)
    cfg = ExperimentConfig(values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines) -> None:
    sw = cfg["sweep"]
    if not sw["bx_min_uT"] < sw["bx_max_uT"]:
        raise ConfigError("bx_min_uT must be below bx_max_uT", lines.get(("sweep", "bx_min_uT")))
    if not sw["delta_min_ns"] < sw["delta_max_ns"]:
        raise ConfigError("delta_min_ns must be below delta_max_ns", lines.get(("sweep", "delta_min_ns")))
    pr = cfg["protocol"]
    if pr["delta_ns"] * 1e-9 > pr["t_max_s"]:
        raise ConfigError("delta_ns exceeds t_max_s", lines.get(("protocol", "delta_ns")))


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


# --------------------------------------------------------------------------
# building objects from a config


def noise_from(cfg: ExperimentConfig) -> NoiseModel:
    n = cfg["noise"]
    return NoiseModel(t2=n["t2_us"] * 1e-6, t1=n["t1_s"])


def qudit_from(cfg: ExperimentConfig) -> model.QuditModel:
    s = cfg["system"]
    return model.build_qudit_model(cfg.spin, B=s["B_tesla"], g=s["g"], D_invcm=s["D_invcm"], E_invcm=s["E_invcm"])


def qubit_from(cfg: ExperimentConfig) -> model.QubitModel:
    s = cfg["system"]
    return model.build_qubit_model(bz=s["B_tesla"], g=s["g"], b1z=cfg["drive"]["b1z_mT"] * 1e-3)


def logical_system_from(cfg: ExperimentConfig) -> protocol.LogicalSystem:
    pr, dr = cfg["protocol"], cfg["drive"]
    return protocol.build_logical_system(qudit_from(cfg), noise_from(cfg), pr["code_t_free_ns"] * 1e-9,
                                         b_ref=dr["b_ref_mT"] * 1e-3, eta_cap=dr["eta_max"],
                                         restarts=pr["restarts"], seed=cfg.seed)


def protocol_config_from(cfg: ExperimentConfig) -> protocol.ProtocolConfig:
    pr = cfg["protocol"]
    system = qubit_from(cfg) if cfg.is_qubit else logical_system_from(cfg)
    delta = pr["delta_ns"] * 1e-9
    return protocol.ProtocolConfig(
        system, bx=pr["bx_uT"] * 1e-6, noise=noise_from(cfg), delta=delta, t_cycle=pr["t_cycle_ns"] * 1e-9,
        t_m=pr["t_m_us"] * 1e-6, t_max=pr["t_max_s"],
        sample_dt=None if pr["sample_dt_ns"] is None else pr["sample_dt_ns"] * 1e-9,
        qec_enabled=pr["qec"], trotter_dt=delta / pr["trotter_steps"], seed=cfg.seed)


# --------------------------------------------------------------------------
# parallel map


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _crossing_job(args):
    pcfg, b = args
    res = protocol.run_protocol(replace(pcfg, bx=b, stop_after_crossing=True))
    return res.t_cross, res.n_cycles


def _decay_job(args):
    pcfg, dl = args
    return protocol.decay_rate_metric(replace(pcfg, delta=dl))


def ordered_map(fn, jobs):
    """Results in job order; uses a process pool when more than one worker is configured."""
    jobs = list(jobs)
    n = min(worker_count(), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def calibrate_parallel(pcfg: protocol.ProtocolConfig, grid) -> protocol.CalibrationCurve:
    grid = np.asarray(sorted(grid), dtype=float)
    results = ordered_map(_crossing_job, [(pcfg, float(b)) for b in grid])
    missing = [float(b) for b, (t, _) in zip(grid, results) if t is None]
    if missing:
        raise protocol.CalibrationError(f"no crossing before t_max={pcfg.t_max:g}s at B_x={missing}; "
                                        "raise t_max_s or bx_min_uT")
    ts = np.array([r[0] for r in results])
    bad = [(float(grid[i]), float(grid[i + 1])) for i in range(len(ts) - 1) if not ts[i + 1] < ts[i]]
    if bad:
        raise protocol.CalibrationError(f"crossing time not strictly decreasing between B_x pairs {bad}")
    return protocol.CalibrationCurve(grid, ts, protocol._log_derivative(grid, ts), np.array([r[1] for r in results]))


# --------------------------------------------------------------------------
# plotting


def write_svg(path: Path, series, xlabel: str, ylabel: str, loglog: bool = False, title: str = "") -> None:
    """Line chart of [(label, x, y), ...]; matplotlib is imported only when plotting is on."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "qusense"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, x, y in series:
        ax.plot(x, y, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --------------------------------------------------------------------------
# verbs


def _csv(rows, header) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{float(x):.17e}" for x in row))
    return "\n".join(lines) + "\n"


def cmd_simulate_qubit(cfg, out: Path, summary: dict) -> None:
    pcfg = protocol_config_from(_as_qubit(cfg))
    res = protocol.run_qubit_protocol(pcfg)
    (out / "run.csv").write_text(res.to_csv())
    summary["t_cross_s"] = res.t_cross
    if cfg["output"]["plot"]:
        tr = res.trace
        write_svg(out / "run.svg", [("P0", tr.times, tr.populations[:, 0]), ("P1", tr.times, tr.populations[:, 1])],
                  "t (s)", "population")


def _as_qubit(cfg: ExperimentConfig) -> ExperimentConfig:
    values = {s: dict(v) for s, v in cfg.values.items()}
    values["system"]["spin"] = Fraction(1, 2)
    return ExperimentConfig(values)


def _require_qudit(cfg):
    if cfg.is_qubit:
        raise ConfigError("this verb needs a qudit spin (3/2 or larger)")


def cmd_optimize_code(cfg, out: Path, summary: dict) -> None:
    _require_qudit(cfg)
    m = qudit_from(cfg)
    pr = cfg["protocol"]
    code, kraus = codes.build_code(m, replace(noise_from(cfg), t1=None), pr["code_t_free_ns"] * 1e-9,
                                   restarts=pr["restarts"], seed=cfg.seed)
    (out / "code.json").write_text(code.dumps() + "\n")
    rows = [[k] + list(np.real(kraus.diagonals[k])) for k in range(len(kraus))]
    (out / "kraus.csv").write_text(_csv(rows, ["k"] + [f"d{i}" for i in range(m.dim)]))
    summary["kl_residual"] = code.kl_residual
    summary["supports"] = [list(s) for s in code.supports]


def cmd_compile_pulses(cfg, out: Path, summary: dict) -> None:
    _require_qudit(cfg)
    system = logical_system_from(cfg)
    (out / "schedule.json").write_text(system.schedule.dumps() + "\n")
    (out / "code.json").write_text(system.code.dumps() + "\n")
    summary["max_eta"] = system.schedule.max_eta
    summary["logical_rate_per_tesla"] = system.schedule.rate_per_tesla


def cmd_run_protocol(cfg, out: Path, summary: dict) -> None:
    pcfg = protocol_config_from(cfg)
    res = protocol.run_protocol(pcfg)
    (out / "run.csv").write_text(res.to_csv())
    summary["t_cross_s"] = res.t_cross
    summary["n_cycles"] = res.n_cycles
    if cfg["output"]["plot"]:
        tr = res.trace
        write_svg(out / "run.svg", [("P0", tr.times, tr.populations[:, 0]), ("P1", tr.times, tr.populations[:, 1])],
                  "t (s)", "population")


def _bx_grid(cfg):
    sw = cfg["sweep"]
    return protocol.log_grid(sw["bx_min_uT"] * 1e-6, sw["bx_max_uT"] * 1e-6, sw["bx_count"])


def cmd_calibrate(cfg, out: Path, summary: dict) -> protocol.CalibrationCurve:
    pcfg = protocol_config_from(cfg)
    cal = calibrate_parallel(pcfg, _bx_grid(cfg))
    cal.eta_rel = protocol.sensitivity_values(cal, pcfg)
    (out / "calibration.csv").write_text(cal.to_csv())
    summary["loglog_slope"] = cal.loglog_slope()
    if cfg["output"]["plot"]:
        write_svg(out / "calibration.svg", [("t_cross", cal.bx, cal.t_cross)], "B_x (T)", "t_cross (s)", loglog=True)
    return cal


def cmd_sensitivity(cfg, out: Path, summary: dict) -> None:
    pcfg = protocol_config_from(cfg)
    cal = cmd_calibrate(cfg, out, summary)
    sens = protocol.sensitivity_curve(cal, pcfg)
    (out / "calibration.csv").write_text(cal.to_csv())
    summary["bx_min_T"] = sens.bx_min
    summary["eta_min"] = sens.eta_min
    summary["boundary"] = sens.boundary
    summary["eta_loglog_slope"] = sens.loglog_slope()
    if sens.boundary == "lower":
        grid = _bx_grid(cfg)
        summary["crossing_threshold_T"] = protocol.crossing_threshold(pcfg, grid[0] / 1e3, grid[0])
    if cfg["output"]["plot"]:
        write_svg(out / "sensitivity.svg", [("eta_rel", sens.bx, sens.eta_rel)], "B_x (T)", "eta_rel", loglog=True)


def cmd_sweep_delta(cfg, out: Path, summary: dict) -> None:
    _require_qudit(cfg)
    pcfg = protocol_config_from(cfg)
    sw = cfg["sweep"]
    deltas = protocol.log_grid(sw["delta_min_ns"] * 1e-9, sw["delta_max_ns"] * 1e-9, sw["delta_count"])
    if sw["metric"] == "decay_rate":
        vals = np.array(ordered_map(_decay_job, [(pcfg, float(d)) for d in deltas]))
        i = int(np.argmin(vals))
        star = float(deltas[i]) if 0 < i < len(deltas) - 1 else None
        sweep = protocol.DeltaSweep(deltas, vals, star, "decay_rate")
    else:
        grid = _bx_grid(cfg)
        sweep = protocol.delta_sweep(pcfg, deltas, "bx_min", (grid[0], grid[-1]), n_grid=len(grid))
    (out / "delta_sweep.csv").write_text(sweep.to_csv())
    summary["delta_star_s"] = sweep.delta_star
    summary["metric"] = sweep.metric_name
    if cfg["output"]["plot"]:
        write_svg(out / "delta_sweep.svg", [(sweep.metric_name, deltas, sweep.metric)], "delta (s)", sweep.metric_name,
                  loglog=True)


def cmd_validate_frames(cfg, out: Path, summary: dict) -> None:
    q = replace(qubit_from(cfg), bx=cfg["protocol"]["bx_uT"] * 1e-6)
    lab = protocol.lab_rabi_rate(q)
    rot = model.rotating_frame_qubit(q).rabi_rate
    fc = protocol.compare_frames(q)
    (out / "frames.csv").write_text(fc.to_csv())
    summary["alpha"] = q.alpha
    summary["rabi_lab_hz"] = lab / (2 * math.pi)
    summary["rabi_rot_hz"] = rot / (2 * math.pi)
    summary["max_population_deviation"] = fc.max_deviation


def cmd_tables_check(cfg, out: Path, summary: dict) -> None:
    tables = codes.load_reference_tables()
    lines = ["spin,label,row_norm"]
    report = {}
    for S, tab in sorted(tables.items()):
        for label, norm in tab.row_norms().items():
            lines.append(f"{S},{label},{norm:.17e}")
        report[str(S)] = {"kl_residual": tab.kl_diagnostic(),
                          "max_norm_deviation": max(abs(v - 1) for v in tab.row_norms().values()),
                          "note": tab.note}
    (out / "table_norms.csv").write_text("\n".join(lines) + "\n")
    summary["tables"] = report


COMMANDS = {
    "simulate-qubit": cmd_simulate_qubit, "optimize-code": cmd_optimize_code, "compile-pulses": cmd_compile_pulses,
    "run-protocol": cmd_run_protocol, "calibrate": cmd_calibrate, "sensitivity": cmd_sensitivity,
    "sweep-delta": cmd_sweep_delta, "validate-frames": cmd_validate_frames, "tables-check": cmd_tables_check,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(f"{float(x):.17e}")
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_command(verb: str, cfg: ExperimentConfig, outdir: Path | None = None) -> Path:
    """Run ``verb`` and move its outputs into the output directory. Outputs are
    built in a scratch directory so a failure leaves nothing behind."""
    if verb not in COMMANDS:
        raise ConfigError(f"unknown verb {verb!r}; choose from {', '.join(VERBS)}")
    outdir = Path(outdir if outdir is not None else cfg["output"]["directory"])
    outdir.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".qusense-", dir=outdir.parent))
    try:
        summary: dict = {}
        np.random.seed(cfg.seed)  # no stochastic step uses the global stream; fixed for safety
        COMMANDS[verb](cfg, scratch, summary)
        (scratch / "config.ini").write_text(cfg.serialize())
        (scratch / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n")
        manifest = {
            "verb": verb,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
            "files": sorted(p.name for p in scratch.iterdir()),
        }
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        outdir.mkdir(parents=True, exist_ok=True)
        for p in sorted(scratch.iterdir()):
            shutil.move(str(p), outdir / p.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return outdir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qusense", description="QEC-protected qudit magnetometry simulator")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("config", nargs="?", help="INI config file (defaults apply when omitted)")
    parser.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else parse_config_text("")
        out = run_command(args.verb, cfg, Path(args.output) if args.output else None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (QusenseError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
