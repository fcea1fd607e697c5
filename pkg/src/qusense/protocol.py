"""End-to-end sensing runs: the bare-qubit baseline and the QEC-protected logical
Rabi protocol, plus crossing-time extraction, calibration, sensitivity and
QEC-interval sweeps.

The logical protocol is periodic: one period is a drive interval ``delta``
followed by a QEC cycle. Its superoperator is built once and then applied
repeatedly, or raised to a power to jump between recorded samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .codes import CodeSpace, build_code
from .compiler import PulseSchedule, compile_schedule, group_hamiltonians
from .dynamics import (Liouvillian, NoiseModel, RunTrace, check_state, noise_liouvillian, rk4_propagator,
                       stroboscopic_trace, unvec, vec)
from .errors import CalibrationError, InvalidArgument, NumericalFailure
from .model import QubitModel, QuditModel, rotating_frame_qubit

CPTP_TOL = 1e-9
# P_0 - P_1 must fall below -CROSSING_FLOOR to count; an overdamped approach to
# zero can otherwise dip below it by rounding alone
CROSSING_FLOOR = 1e-12


# --------------------------------------------------------------------------
# QEC cycle


def _check_codespace(code: CodeSpace) -> np.ndarray:
    A = code.A
    if np.max(np.abs(A.conj().T @ A - np.eye(A.shape[1]))) > 1e-9 or A.shape[0] != A.shape[1]:
        raise InvalidArgument("invalid codespace: error words are not a complete orthonormal basis")
    return A


def logical_index(code: CodeSpace, l: int, k: int) -> int:
    return l * code.n_errors + k


def build_s_gate(code: CodeSpace) -> np.ndarray:
    """Stabilization gate on qudit (x) ancilla (ancilla dimension d/2), physical basis.

    |l,k>|0> -> |l,k>|k>, |l,k>|k> -> -|l,k>|0> for k >= 1, identity elsewhere.
    """
    A = _check_codespace(code)
    n = code.n_errors
    d = code.dim
    SL = np.eye(d * n, dtype=complex)
    for l in (0, 1):
        for k in range(1, n):
            row = logical_index(code, l, k) * n
            i0, ik = row, row + k
            SL[i0, i0] = SL[ik, ik] = 0
            SL[ik, i0] = 1
            SL[i0, ik] = -1
    A2 = np.kron(A, np.eye(n))
    U = A2 @ SL @ A2.conj().T
    if np.max(np.abs(U.conj().T @ U - np.eye(d * n))) > 1e-10:
        raise InvalidArgument("invalid codespace: S gate is not unitary")
    return U


def build_recovery(code: CodeSpace, k: int) -> np.ndarray:
    """zeta_k: swaps |l,k> and |l,0> for both l (identity for k = 0)."""
    A = _check_codespace(code)
    d = code.dim
    P = np.eye(d, dtype=complex)
    if k:
        for l in (0, 1):
            a, b = logical_index(code, l, 0), logical_index(code, l, k)
            P[[a, b]] = P[[b, a]]
    return A @ P @ A.conj().T


@dataclass(frozen=True)
class QecCycle:
    s_gate: np.ndarray
    recoveries: tuple[np.ndarray, ...]
    ancilla_dim: int
    kraus: tuple[np.ndarray, ...]  # qudit-only Kraus operators of the correction step
    superop: np.ndarray  # full cycle including the dissipative segment
    t_cycle: float

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(rho), rho.shape[0])


def _choi_min_eig(superop: np.ndarray) -> float:
    d = int(round(math.sqrt(superop.shape[0])))
    # Choi with column stacking: reshuffle S[(a,b),(c,e)] -> C[(a,c),(b,e)]
    R = superop.reshape(d, d, d, d, order="F")  # R[a, b, c, e] = <a|L(|c><e|)|b>
    C = R.transpose(0, 2, 1, 3).reshape(d * d, d * d)
    C = (C + C.conj().T) / 2
    return float(np.linalg.eigvalsh(C).min())


def check_cptp(superop: np.ndarray, tol: float = CPTP_TOL) -> None:
    d = int(round(math.sqrt(superop.shape[0])))
    lo = _choi_min_eig(superop)
    if lo < -tol:
        raise NumericalFailure(f"map is not completely positive (Choi eigenvalue {lo:.3g})")
    # trace preservation: vec(I)^T S = vec(I)^T
    tr_row = vec(np.eye(d)).conj() @ superop
    err = np.max(np.abs(tr_row - vec(np.eye(d))))
    if err > tol:
        raise NumericalFailure(f"map is not trace preserving (error {err:.3g})")


def qec_cycle(code: CodeSpace, noise_generator: Liouvillian | None = None, t_cycle: float = 0.0) -> QecCycle:
    """Measurement-averaged QEC channel: dissipation for ``t_cycle``, S gate with
    the ancilla in |0>, ancilla measured, zeta_k applied on outcome k."""
    d, n = code.dim, code.n_errors
    S = build_s_gate(code)
    zetas = tuple(build_recovery(code, k) for k in range(n))
    S4 = S.reshape(d, n, d, n)
    kraus = tuple(zetas[k] @ S4[:, k, :, 0] for k in range(n))
    corr = sum(np.kron(K.conj(), K) for K in kraus)
    if noise_generator is not None and t_cycle > 0:
        corr = corr @ noise_generator.propagator(t_cycle)
    check_cptp(corr)
    return QecCycle(S, zetas, n, kraus, corr, float(t_cycle))


# --------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class LogicalSystem:
    model: QuditModel
    code: CodeSpace
    schedule: PulseSchedule


def build_logical_system(model: QuditModel, noise: NoiseModel, t_free: float = 500e-9, *, b_ref: float = 10e-3,
                         eta_cap: float | None = 0.05, restarts: int = 32, seed: int = 0) -> LogicalSystem:
    """Code optimized against the dephasing channel over ``t_free`` plus its compiled Rabi schedule."""
    code, _ = build_code(model, replace(noise, t1=None), t_free, restarts=restarts, seed=seed)
    schedule = compile_schedule(model, code, b_ref, eta_cap=eta_cap)
    return LogicalSystem(model, code, schedule)


@dataclass(frozen=True)
class ProtocolConfig:
    """One protocol run. ``system`` is a QubitModel or a LogicalSystem; ``bx`` overrides the field."""

    system: QubitModel | LogicalSystem
    bx: float = 1e-6
    noise: NoiseModel | None = field(default_factory=NoiseModel)
    delta: float = 500e-9
    t_cycle: float = 400e-9
    t_m: float = 1e-6
    t_max: float = 1.0
    sample_dt: float | None = None  # None: 1/400 of the nominal Rabi period
    qec_enabled: bool = True
    trotter_dt: float | None = None
    second_order: bool = False
    stop_after_crossing: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("delta", "t_max", "sample_dt"):
            if getattr(self, name) is not None and not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("t_cycle", "t_m"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be non-negative")
        if self.delta > self.t_max:
            raise InvalidArgument("delta must not exceed t_max")
        if self.bx < 0:
            raise InvalidArgument("B_x must be non-negative")

    @property
    def is_qubit(self) -> bool:
        return isinstance(self.system, QubitModel)


@dataclass
class RunResult:
    trace: RunTrace  # populations columns: P_0, P_1
    t_cross: float | None
    n_cycles: int = 0
    readout: np.ndarray | None = None  # (P_0, P_1) after the readout interval

    @property
    def leakage(self) -> np.ndarray:
        return 1 - self.trace.populations[:, 0] - self.trace.populations[:, 1]

    def to_csv(self) -> str:
        lines = ["t_s,p0,p1,leakage,trace"]
        for t, (p0, p1), lk, tr in zip(self.trace.times, self.trace.populations, self.leakage, self.trace.trace):
            lines.append(",".join(f"{x:.17e}" for x in (t, p0, p1, lk, tr)))
        return "\n".join(lines) + "\n"


def crossing_time(trace: RunTrace) -> float | None:
    """First sign change of P_0 - P_1, linearly interpolated."""
    z = trace.populations[:, 0] - trace.populations[:, 1]
    t = trace.times
    for i in range(1, len(z)):
        if z[i - 1] > 0 and z[i] < -CROSSING_FLOOR:
            return float(t[i - 1] + (t[i] - t[i - 1]) * z[i - 1] / (z[i - 1] - z[i]))
    return None


class _Marcher:
    """Repeated application of a one-step superoperator with sparse recording.

    Samples are taken every ``stride`` steps. A crossing found between two
    samples is located to single-step resolution by binary descent over
    precomputed powers M^(2^j), then linearly interpolated inside that step.
    """

    def __init__(self, step: np.ndarray, step_dt: float, proj_rows: np.ndarray):
        self.step = step
        self.dt = step_dt
        self.rows = proj_rows

    def pops(self, v):
        return np.real(self.rows.conj() @ v)

    def _z(self, v):
        p = self.pops(v)
        return p[0] - p[1]

    def run(self, v0, n_max: int, stride: int, stop_after_crossing: bool):
        d = int(round(math.sqrt(len(v0))))
        powers = [self.step]
        while (1 << len(powers)) <= 2 * stride:
            powers.append(powers[-1] @ powers[-1])

        def advance(v, n):
            for j, P in enumerate(powers):
                if n >> j & 1:
                    v = P @ v
            return v

        big = advance(np.eye(len(v0), dtype=complex), stride)
        times, pops, traces, purs = [], [], [], []

        def record(n, v):
            rho = unvec(v, d)
            check_state(rho, where=f"after {n} steps")
            times.append(n * self.dt)
            pops.append(self.pops(v))
            traces.append(np.trace(rho).real)
            purs.append(np.real(np.vdot(v, v)))

        v = v0
        n = 0
        record(0, v)
        t_cross = None
        # last sample with P_0 > P_1; the crossing lies between it and the first clearly negative sample
        v_pos, n_pos = (v, 0) if self._z(v) > 0 else (None, 0)
        while n < n_max:
            jump = min(stride, n_max - n)
            v_new = big @ v if jump == stride else advance(v, jump)
            z = self._z(v_new)
            if t_cross is None and v_pos is not None and z < -CROSSING_FLOOR:
                span = n + jump - n_pos
                # largest m < span with z(n_pos + m) > 0, assuming one crossing in the bracket
                w, m = v_pos, 0
                for j in range(len(powers) - 1, -1, -1):
                    if m + (1 << j) < span:
                        cand = powers[j] @ w
                        if self._z(cand) > 0:
                            w, m = cand, m + (1 << j)
                zw = self._z(w)
                zn = self._z(self.step @ w)
                t_cross = (n_pos + m + zw / (zw - zn)) * self.dt
            n += jump
            v = v_new
            record(n, v)
            if z > 0:
                v_pos, n_pos = v, n
            if t_cross is not None and stop_after_crossing:
                break
        trace = RunTrace(np.array(times), np.array(pops), np.array(traces), np.array(purs))
        return trace, t_cross, n, v


MAX_SAMPLES = 200_000
QUBIT_SUBSTEPS = 16


def nominal_period(config: ProtocolConfig) -> float:
    """Ideal (noise-free) Rabi period at ``config.bx``; inf when B_x = 0."""
    if config.bx == 0:
        return math.inf
    if config.is_qubit:
        return rotating_frame_qubit(replace(config.system, bx=config.bx)).period
    return config.system.schedule.period(config.bx)


def effective_sample_dt(config: ProtocolConfig) -> float:
    if config.sample_dt is not None:
        return config.sample_dt
    dt = min(nominal_period(config) / 400, config.t_max / 100)
    return max(dt, config.t_max / MAX_SAMPLES)


def _stride(config: ProtocolConfig, step_dt: float) -> int:
    return max(1, int(round(effective_sample_dt(config) / step_dt)))


def _proj_rows(projectors) -> np.ndarray:
    return np.array([vec(P.conj().T) for P in projectors])


def run_qubit_protocol(config: ProtocolConfig) -> RunResult:
    """Rotating-frame qubit under dephasing from |0><0|; P_0, P_1 are the s_z populations."""
    if not config.is_qubit:
        raise InvalidArgument("run_qubit_protocol needs a QubitModel system")
    model = replace(config.system, bx=config.bx)
    rot = rotating_frame_qubit(model)
    noise = noise_liouvillian(model, config.noise)
    L = Liouvillian.coherent(rot.hamiltonian) + noise
    sample_dt = effective_sample_dt(config)
    step_dt = sample_dt / QUBIT_SUBSTEPS
    step = L.propagator(step_dt)
    proj = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    marcher = _Marcher(step, step_dt, _proj_rows(proj))
    n_max = int(math.floor(config.t_max / step_dt + 1e-9))
    v0 = vec(np.diag([1.0, 0.0]).astype(complex))
    trace, t_cross, _, v = marcher.run(v0, n_max, QUBIT_SUBSTEPS, config.stop_after_crossing)
    readout = marcher.pops(noise.propagator(config.t_m) @ v) if config.t_m > 0 else marcher.pops(v)
    return RunResult(trace, t_cross, 0, readout)


def delta_evolution(system: LogicalSystem, bx: float, noise: Liouvillian, delta: float,
                    trotter_dt: float | None = None, second_order: bool = False) -> np.ndarray:
    """Superoperator of one drive interval: Trotter steps over the tone groups with
    noise acting throughout. The last step is truncated when ``trotter_dt`` does
    not divide ``delta``."""
    hams = group_hamiltonians(system.schedule, system.model, bx)
    ng = len(hams)
    gens = [Liouvillian.coherent(H) + noise for H in hams]
    if trotter_dt is None or trotter_dt >= delta:
        steps = [delta]
    else:
        n_full = int(math.floor(delta / trotter_dt + 1e-9))
        steps = [trotter_dt] * n_full
        rest = delta - n_full * trotter_dt
        if rest > 1e-12 * delta:
            steps.append(rest)
    cache: dict[float, np.ndarray] = {}

    def step_map(dt):
        if dt not in cache:
            if second_order and ng > 1:
                order = list(range(ng - 1)) + [ng - 1] + list(range(ng - 2, -1, -1))
                durs = [dt / (2 * ng)] * (ng - 1) + [dt / ng] + [dt / (2 * ng)] * (ng - 1)
            else:
                order, durs = list(range(ng)), [dt / ng] * ng
            M = np.eye(gens[0].matrix.shape[0], dtype=complex)
            for g, t in zip(order, durs):
                M = gens[g].propagator(t) @ M
            cache[dt] = M
        return cache[dt]

    out = np.eye(gens[0].matrix.shape[0], dtype=complex)
    for dt in steps:
        out = step_map(dt) @ out
    return out


def logical_cycle_map(config: ProtocolConfig) -> np.ndarray:
    """Superoperator of one protocol period: drive interval, then (optionally) QEC."""
    system = config.system
    noise = noise_liouvillian(system.model, config.noise)
    M = delta_evolution(system, config.bx, noise, config.delta, config.trotter_dt, config.second_order)
    if config.qec_enabled:
        M = qec_cycle(system.code, noise, config.t_cycle).superop @ M
    return M


def run_logical_protocol(config: ProtocolConfig) -> RunResult:
    """Logical Rabi run from |0,0>. Times count drive intervals only (QEC cycles
    are excluded from the time axis and reported through ``n_cycles``)."""
    if config.is_qubit:
        raise InvalidArgument("run_logical_protocol needs a LogicalSystem")
    system = config.system
    code = system.code
    M = logical_cycle_map(config)
    proj = [code.support_projector(0), code.support_projector(1)]
    marcher = _Marcher(M, config.delta, _proj_rows(proj))
    n_max = int(math.floor(config.t_max / config.delta + 1e-9))
    psi = code.word(0, 0)
    v0 = vec(np.outer(psi, psi.conj()))
    trace, t_cross, n_done, v = marcher.run(v0, n_max, _stride(config, config.delta), config.stop_after_crossing)
    n_cycles = int(math.floor(t_cross / config.delta)) if (t_cross is not None and config.qec_enabled) else 0
    noise = noise_liouvillian(system.model, config.noise)
    readout = marcher.pops(noise.propagator(config.t_m) @ v) if config.t_m > 0 else marcher.pops(v)
    return RunResult(trace, t_cross, n_cycles, readout)


def run_protocol(config: ProtocolConfig) -> RunResult:
    return run_qubit_protocol(config) if config.is_qubit else run_logical_protocol(config)


def logical_decay_time(config: ProtocolConfig) -> float:
    """Decay time (drive-time units) of the dominant non-stationary mode of P_0 - P_1.

    The period map is diagonalized; each eigenmode contributes
    (z-row . right vector)(left vector . initial state) to the signal, and the
    mode with the largest contribution among those with |lambda| < 1 sets the
    damping of the logical Rabi oscillation.
    """
    if config.is_qubit:
        model = replace(config.system, bx=config.bx)
        rot = rotating_frame_qubit(model)
        M = (Liouvillian.coherent(rot.hamiltonian) + noise_liouvillian(model, config.noise)).propagator(config.delta)
        z = vec(np.diag([1.0, -1.0]))
        v0 = vec(np.diag([1.0, 0.0]).astype(complex))
    else:
        M = logical_cycle_map(config)
        code = config.system.code
        z = vec(code.support_projector(0) - code.support_projector(1))
        psi = code.word(0, 0)
        v0 = vec(np.outer(psi, psi.conj()))
    lam, R = np.linalg.eig(M)
    weights = np.abs(z.conj() @ R) * np.abs(np.linalg.solve(R, v0))
    moving = np.abs(lam) < 1 - 1e-15
    if not np.any(moving & (weights > 1e-12)):
        return math.inf
    i = int(np.argmax(np.where(moving, weights, -1.0)))
    return -config.delta / math.log(abs(lam[i]))


# --------------------------------------------------------------------------
# calibration and sensitivity


@dataclass
class CalibrationCurve:
    bx: np.ndarray
    t_cross: np.ndarray
    dtdbx: np.ndarray
    n_cycles: np.ndarray
    eta_rel: np.ndarray | None = None

    def loglog_slope(self) -> float:
        return float(np.polyfit(np.log(self.bx), np.log(self.t_cross), 1)[0])

    def to_csv(self) -> str:
        eta = self.eta_rel if self.eta_rel is not None else np.full(len(self.bx), np.nan)
        lines = ["bx_T,t_cross_s,dtdbx,eta_rel"]
        for row in zip(self.bx, self.t_cross, self.dtdbx, eta):
            lines.append(",".join(f"{x:.17e}" for x in row))
        return "\n".join(lines) + "\n"


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if not (0 < lo < hi) or n < 2:
        raise InvalidArgument("log grid needs 0 < lo < hi and at least 2 points")
    return np.geomspace(lo, hi, n)


def _log_derivative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dy/dx from second-order differences of ln y against ln x."""
    slope = np.gradient(np.log(y), np.log(x))
    return slope * y / x


def calibrate(config: ProtocolConfig, bx_grid: Sequence[float], *, min_points: int = 8) -> CalibrationCurve:
    grid = np.asarray(sorted(bx_grid), dtype=float)
    if len(grid) < min_points:
        raise InvalidArgument(f"calibration needs at least {min_points} grid points")
    ratios = np.diff(np.log(grid))
    if np.ptp(ratios) > 1e-6 * max(1.0, abs(ratios.mean())):
        raise InvalidArgument("calibration grid must be log-spaced")
    ts, ncyc = [], []
    missing = []
    for b in grid:
        res = run_protocol(replace(config, bx=float(b), stop_after_crossing=True))
        if res.t_cross is None:
            missing.append(float(b))
        ts.append(res.t_cross if res.t_cross is not None else np.nan)
        ncyc.append(res.n_cycles)
    if missing:
        raise CalibrationError(f"no crossing before t_max={config.t_max:g}s at B_x={missing}; raise t_max or the grid minimum")
    ts = np.array(ts)
    bad = [(float(grid[i]), float(grid[i + 1])) for i in range(len(ts) - 1) if not ts[i + 1] < ts[i]]
    if bad:
        raise CalibrationError(f"crossing time not strictly decreasing between B_x pairs {bad}")
    return CalibrationCurve(grid, ts, _log_derivative(grid, ts), np.array(ncyc))


@dataclass
class SensitivityResult:
    bx: np.ndarray
    eta_rel: np.ndarray
    bx_min: float
    eta_min: float
    boundary: str | None  # None, "lower" or "upper" when the minimum sits on the grid edge

    def loglog_slope(self) -> float:
        return float(np.polyfit(np.log(self.bx), np.log(self.eta_rel), 1)[0])


def sensitivity_values(cal: CalibrationCurve, config: ProtocolConfig) -> np.ndarray:
    t_cycle = config.t_cycle if (not config.is_qubit and config.qec_enabled) else 0.0
    dt_total = cal.t_cross + cal.n_cycles * t_cycle + config.t_m
    return np.sqrt(dt_total) / np.abs(cal.dtdbx)


def sensitivity_curve(cal: CalibrationCurve, config: ProtocolConfig) -> SensitivityResult:
    """eta_rel(B_x) = |dt_cross/dB_x|^-1 sqrt(t_cross + n_cycles t_cycle + t_m) and its minimum."""
    eta = sensitivity_values(cal, config)
    cal.eta_rel = eta
    i = int(np.argmin(eta))
    if 0 < i < len(eta) - 1:
        x = np.log(cal.bx[i - 1:i + 2])
        y = np.log(eta[i - 1:i + 2])
        a, b, c = np.polyfit(x, y, 2)
        if a > 0:
            xm = -b / (2 * a)
            return SensitivityResult(cal.bx, eta, float(np.exp(xm)), float(np.exp(c - b * b / (4 * a))), None)
        return SensitivityResult(cal.bx, eta, float(cal.bx[i]), float(eta[i]), None)
    return SensitivityResult(cal.bx, eta, float(cal.bx[i]), float(eta[i]), "lower" if i == 0 else "upper")


def crossing_threshold(config: ProtocolConfig, lo: float, hi: float, rel_tol: float = 1e-3) -> float:
    """Smallest B_x in [lo, hi] whose run still crosses before t_max (bisection in log B_x)."""
    def crosses(b):
        return run_protocol(replace(config, bx=b, stop_after_crossing=True)).t_cross is not None

    if not crosses(hi):
        raise CalibrationError(f"no crossing even at B_x={hi:g}")
    if crosses(lo):
        return lo
    while hi / lo > 1 + rel_tol:
        mid = math.sqrt(lo * hi)
        if crosses(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class FieldFloor:
    """B_x^min with the sensitivity curve it was taken from."""

    bx_min: float
    sensitivity: SensitivityResult
    calibration: CalibrationCurve
    at_domain_edge: bool


def minimum_detectable_field(config: ProtocolConfig, lo: float, hi: float, n: int = 16) -> FieldFloor:
    """Minimum of eta_rel over the range where the protocol crosses.

    When eta keeps decreasing down to the smallest B_x that still crosses before
    t_max, the minimum is that threshold (located by bisection) and
    ``at_domain_edge`` is set.
    """
    floor = crossing_threshold(config, lo, hi)
    start = floor * 1.05 if floor > lo else lo
    cal = calibrate(config, log_grid(start, hi, n))
    sens = sensitivity_curve(cal, config)
    if sens.boundary == "lower":
        return FieldFloor(floor, sens, cal, True)
    return FieldFloor(sens.bx_min, sens, cal, False)


# --------------------------------------------------------------------------
# QEC interval sweep


@dataclass
class DeltaSweep:
    delta: np.ndarray
    metric: np.ndarray
    delta_star: float | None
    metric_name: str

    def to_csv(self) -> str:
        lines = ["delta_s,metric"]
        for row in zip(self.delta, self.metric):
            lines.append(",".join(f"{x:.17e}" for x in row))
        return "\n".join(lines) + "\n"


def decay_rate_metric(config: ProtocolConfig) -> float:
    """Logical damping rate per unit of drive time, the clock on which the signal accumulates."""
    return 1 / logical_decay_time(config)


def delta_sweep(config: ProtocolConfig, deltas: Sequence[float], metric: str = "decay_rate",
                bx_range: tuple[float, float] | None = None, n_grid: int = 12) -> DeltaSweep:
    """Protocol metric as a function of the QEC interval; smaller is better for both metrics."""
    deltas = np.asarray(sorted(deltas), dtype=float)
    vals = []
    for dl in deltas:
        cfg = replace(config, delta=float(dl))
        if metric == "decay_rate":
            vals.append(decay_rate_metric(cfg))
        elif metric == "bx_min":
            if bx_range is None:
                raise InvalidArgument("bx_min metric needs a B_x range")
            vals.append(minimum_detectable_field(cfg, *bx_range, n=n_grid).bx_min)
        else:
            raise InvalidArgument(f"unknown metric {metric!r}")
    vals = np.array(vals)
    i = int(np.argmin(vals))
    star = float(deltas[i]) if 0 < i < len(deltas) - 1 else None
    return DeltaSweep(deltas, vals, star, metric)


# --------------------------------------------------------------------------
# lab-frame validation of the qubit rotating frame


def lab_period_map(model: QubitModel, noise: NoiseModel | None = None, *, n_steps: int = 256, tol: float = 1e-10) -> np.ndarray:
    """Superoperator over one longitudinal-drive period of the full lab-frame Hamiltonian (RK4)."""
    period = 2 * math.pi / model.omega_z
    diss = (noise_liouvillian(model, noise),) if noise is not None else ()
    return rk4_propagator(model.hamiltonian(), 0.0, period, diss, n_steps=n_steps, tol=tol, max_doublings=8)


def lab_rabi_rate(model: QubitModel) -> float:
    """Rabi angular frequency from the Floquet spectrum of the lab-frame period map.

    The rotating-frame transformation is the identity (up to sign) at whole drive
    periods, so the period map's eigenvalues are exp(+-i Omega_R T).
    """
    period = 2 * math.pi / model.omega_z
    lam = np.linalg.eigvals(lab_period_map(model))
    return float(np.max(np.abs(np.angle(lam)))) / period


@dataclass
class FrameComparison:
    times: np.ndarray
    p0_lab: np.ndarray
    p0_rot: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.p0_lab - self.p0_rot)))

    def to_csv(self) -> str:
        lines = ["t_s,p0_lab,p0_rot"]
        for row in zip(self.times, self.p0_lab, self.p0_rot):
            lines.append(",".join(f"{x:.17e}" for x in row))
        return "\n".join(lines) + "\n"


def compare_frames(model: QubitModel, noise: NoiseModel | None = None, n_samples: int = 200) -> FrameComparison:
    """P_0 over one Rabi period from the lab-frame period map (stroboscopic) and from the rotating frame."""
    rot = rotating_frame_qubit(model)
    drive_period = 2 * math.pi / model.omega_z
    n_periods = int(math.ceil(rot.period / drive_period))
    stride = max(1, n_periods // n_samples)
    M = lab_period_map(model, noise)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    lab = stroboscopic_trace(rho0, M, drive_period, n_periods, stride, projectors=[np.diag([1.0, 0.0])])
    L = Liouvillian.coherent(rot.hamiltonian) + noise_liouvillian(model, noise)
    p_rot = []
    for t in lab.times:
        v = L.propagator(t) @ vec(rho0)
        p_rot.append(np.real(v[0]))
    return FrameComparison(lab.times, lab.populations[:, 0], np.array(p_rot))
