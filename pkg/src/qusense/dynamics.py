"""Liouvillian construction and density-matrix propagation.

Superoperators act on column-stacked density matrices: ``vec(rho)[a + b*d] =
rho[a, b]`` and ``vec(A rho B) = (B^T kron A) vec(rho)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spinops
from .errors import InvalidArgument, ModelConsistencyError, NumericalFailure

TRACE_TOL = 1e-6
POSITIVITY_TOL = 1e-6


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    if d is None:
        d = int(round(math.sqrt(v.size)))
    return np.asarray(v).reshape(d, d, order="F")


def hamiltonian_superop(H: np.ndarray) -> np.ndarray:
    d = H.shape[0]
    eye = np.eye(d)
    return -1j * (np.kron(eye, H) - np.kron(H.T, eye))


def lindblad_superop(L: np.ndarray, rate: float) -> np.ndarray:
    """rate * (L rho L^dag - 1/2 {L^dag L, rho})."""
    d = L.shape[0]
    eye = np.eye(d)
    LdL = L.conj().T @ L
    return rate * (np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))


def conjugation_superop(U: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> U rho U^dag."""
    return np.kron(U.conj(), U)


@dataclass(frozen=True)
class Liouvillian:
    matrix: np.ndarray
    dissipative: bool = False

    @property
    def dim(self) -> int:
        return int(round(math.sqrt(self.matrix.shape[0])))

    def __add__(self, other: "Liouvillian") -> "Liouvillian":
        return Liouvillian(self.matrix + other.matrix, self.dissipative or other.dissipative)

    def propagator(self, t: float) -> np.ndarray:
        return spinops.matrix_exponential(self.matrix * t)

    @classmethod
    def coherent(cls, H: np.ndarray) -> "Liouvillian":
        return cls(hamiltonian_superop(np.asarray(H, dtype=complex)), False)

    @classmethod
    def zero(cls, d: int) -> "Liouvillian":
        return cls(np.zeros((d * d, d * d), dtype=complex), False)


@dataclass(frozen=True)
class NoiseModel:
    """Pure dephasing time ``t2`` (s), optional dephasing weight matrix ``gamma``
    (replaces the default jump-operator model), optional relaxation time ``t1``
    (s) with optional ``alpha2`` (1/s) and Stevens-like operator choice."""

    t2: float = 50e-6
    gamma: np.ndarray | None = None
    t1: float | None = None
    alpha2: float | None = None
    stevens: str = "O21"
    relaxation_rates: np.ndarray | None = None

    def __post_init__(self):
        if not self.t2 > 0:
            raise InvalidArgument("T2 must be positive")
        if self.t1 is not None and not self.t1 > 0:
            raise InvalidArgument("T1 must be positive")


def _sz_diagonal(model) -> np.ndarray:
    if hasattr(model, "sz_diagonal"):
        return np.asarray(model.sz_diagonal, dtype=float)
    return np.array([0.5, -0.5])  # qubit in its s_z eigenbasis


def dephasing_rate_matrix(model, noise: NoiseModel) -> np.ndarray:
    """Decay rate of every coherence rho_ab under the dephasing dissipator."""
    if noise.gamma is not None:
        G = np.asarray(noise.gamma, dtype=float)
        if not np.allclose(G, G.T):
            raise InvalidArgument("dephasing weight matrix must be symmetric")
        dg = np.diag(G)
        return ((dg[:, None] + dg[None, :]) / 2 - G) / noise.t2
    c = _sz_diagonal(model)
    diff = (c[:, None] - c[None, :]) ** 2
    spread = diff.max()
    if spread <= 0:
        raise ModelConsistencyError("all eigenstates share <S_z>; dephasing jump operator is trivial")
    return diff / (spread * noise.t2)


def dephasing_dissipator(model, noise: NoiseModel) -> Liouvillian:
    """Dephasing generated by J = S_z^(D)/dc_max at rate 1/T2 in the
    (2 J rho J - J^2 rho - rho J^2)/T2 convention, which is diagonal in the
    eigenbasis: rho_ab decays at (c_a - c_b)^2 / (dc_max^2 T2)."""
    rates = dephasing_rate_matrix(model, noise)
    return Liouvillian(np.diag(-rates.reshape(-1, order="F")).astype(complex), True)


def stevens_operator(model, name: str = "O21") -> np.ndarray:
    if name == "O21":
        return model.sz_eig @ model.sx_eig + model.sx_eig @ model.sz_eig
    if name == "Sx":
        return model.sx_eig
    if name == "Sz":
        return model.sz_eig
    raise InvalidArgument(f"unknown relaxation operator {name!r}")


def relaxation_rate_matrix(model, noise: NoiseModel) -> np.ndarray:
    """W[b, a] = rate of |a> -> |b> (1/s), nonzero only for E_b < E_a."""
    d = len(model.energies)
    if noise.t1 is None or math.isinf(noise.t1):
        return np.zeros((d, d))
    if noise.relaxation_rates is not None:
        return np.asarray(noise.relaxation_rates, dtype=float)
    O = stevens_operator(model, noise.stevens)
    strength = np.abs(O) ** 2
    E = model.energies
    downhill = E[:, None] < E[None, :]
    strength = np.where(downhill, strength, 0.0)
    if strength.max() <= 1e-24:
        raise ModelConsistencyError("relaxation operator has no downhill matrix elements")
    if noise.alpha2 is not None:
        return noise.alpha2 * strength
    c = _sz_diagonal(model)
    step = np.abs(c[:, None] - c[None, :]) < 1.5
    ref = np.where(step, strength, 0.0).max()
    if ref <= 1e-24:
        ref = strength.max()
    return strength / (ref * noise.t1)


def relaxation_dissipator(model, noise: NoiseModel) -> Liouvillian:
    W = relaxation_rate_matrix(model, noise)
    d = W.shape[0]
    out = np.zeros((d * d, d * d), dtype=complex)
    for b, a in zip(*np.nonzero(W)):
        jump = np.zeros((d, d))
        jump[b, a] = 1.0
        out += lindblad_superop(jump, W[b, a])
    return Liouvillian(out, bool(np.any(W)))


def noise_liouvillian(model, noise: NoiseModel | None) -> Liouvillian:
    d = len(model.energies) if hasattr(model, "energies") else 2
    if noise is None:
        return Liouvillian.zero(d)
    L = dephasing_dissipator(model, noise)
    if noise.t1 is not None:
        L = L + relaxation_dissipator(model, noise)
    return L


# --------------------------------------------------------------------------
# propagation


@dataclass
class RunTrace:
    times: np.ndarray
    populations: np.ndarray  # (n_samples, n_projectors)
    trace: np.ndarray
    purity: np.ndarray
    states: list[np.ndarray] | None = field(default=None, repr=False)


def check_state(rho: np.ndarray, *, trace_tol: float = TRACE_TOL, pos_tol: float = POSITIVITY_TOL, where: str = "") -> None:
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise NumericalFailure(f"trace drift {tr - 1:.3g} {where}".strip())
    herm = (rho + rho.conj().T) / 2
    lo = np.linalg.eigvalsh(herm).min()
    if lo < -pos_tol:
        raise NumericalFailure(f"negative eigenvalue {lo:.3g} {where}".strip())


def _validate_initial(rho0: np.ndarray) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=complex)
    if not spinops.is_hermitian(rho0):
        raise InvalidArgument("initial state must be Hermitian")
    check_state(rho0, trace_tol=1e-10, pos_tol=1e-10, where="in initial state")
    return rho0


def _default_projectors(d: int) -> list[np.ndarray]:
    return [np.outer(np.eye(d)[i], np.eye(d)[i]) for i in range(d)]


class _Recorder:
    def __init__(self, d, projectors, keep_states):
        self.d = d
        self.proj_rows = np.array([vec(P.conj().T) for P in projectors])  # tr(P rho) = vec(P^dag)^* . vec(rho)
        self.keep = keep_states
        self.t, self.p, self.tr, self.pur, self.states = [], [], [], [], []

    def add(self, t, v):
        rho = unvec(v, self.d)
        check_state(rho, where=f"at t={t:.6g}s")
        self.t.append(t)
        self.p.append(np.real(self.proj_rows.conj() @ v))
        self.tr.append(np.trace(rho).real)
        self.pur.append(np.real(np.vdot(v, v)))
        if self.keep:
            self.states.append(rho)

    def trace(self) -> RunTrace:
        return RunTrace(np.array(self.t), np.array(self.p), np.array(self.tr), np.array(self.pur),
                        self.states if self.keep else None)


def propagate_piecewise(rho0: np.ndarray, segments: Sequence[tuple[Liouvillian, float]], sample_dt: float,
                        projectors: Sequence[np.ndarray] | None = None, keep_states: bool = False) -> RunTrace:
    """Exact propagation through constant segments, sampled every ``sample_dt``
    (plus the end of each segment)."""
    rho0 = _validate_initial(rho0)
    d = rho0.shape[0]
    rec = _Recorder(d, projectors or _default_projectors(d), keep_states)
    v = vec(rho0)
    t = 0.0
    rec.add(t, v)
    cache: dict[tuple[int, float], np.ndarray] = {}
    for L, duration in segments:
        if not (math.isfinite(duration) and duration >= 0):
            raise InvalidArgument("segment durations must be finite and non-negative")
        n_full = int(math.floor(duration / sample_dt + 1e-9))
        rest = duration - n_full * sample_dt
        key = (id(L), sample_dt)
        if n_full and key not in cache:
            cache[key] = L.propagator(sample_dt)
        for _ in range(n_full):
            v = cache[key] @ v
            t += sample_dt
            rec.add(t, v)
        if rest > 1e-15 * max(1.0, duration):
            v = L.propagator(rest) @ v
            t += rest
            rec.add(t, v)
    return rec.trace()


def _rk4_map(generator: Callable[[float], np.ndarray], t0: float, t1: float, n: int, X0: np.ndarray) -> np.ndarray:
    h = (t1 - t0) / n
    X = X0
    for i in range(n):
        t = t0 + i * h
        k1 = generator(t) @ X
        k2 = generator(t + h / 2) @ (X + h / 2 * k1)
        k3 = generator(t + h / 2) @ (X + h / 2 * k2)
        k4 = generator(t + h) @ (X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def _generator(H: Callable[[float], np.ndarray], dissipator: np.ndarray | None, d: int):
    eye = np.eye(d)
    D = dissipator if dissipator is not None else 0.0

    def G(t):
        h = H(t)
        return -1j * (np.kron(eye, h) - np.kron(h.T, eye)) + D

    return G


def rk4_propagator(H: Callable[[float], np.ndarray], t0: float, t1: float, dissipators: Sequence[Liouvillian] = (),
                   n_steps: int = 1000, tol: float = 1e-6, max_doublings: int = 6) -> np.ndarray:
    """Superoperator of the time-dependent master equation from t0 to t1 by
    fixed-step RK4, doubling the step count until two successive maps agree
    within ``tol`` (max-abs entry)."""
    d = H(t0).shape[0]
    diss = sum((L.matrix for L in dissipators), np.zeros((d * d, d * d), dtype=complex))
    G = _generator(H, diss, d)
    eye = np.eye(d * d, dtype=complex)
    prev = _rk4_map(G, t0, t1, n_steps, eye)
    for _ in range(max_doublings):
        n_steps *= 2
        cur = _rk4_map(G, t0, t1, n_steps, eye)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise NumericalFailure("RK4 propagator did not converge under step halving")


def integrate_time_dependent(rho0: np.ndarray, H: Callable[[float], np.ndarray], dissipators: Sequence[Liouvillian],
                             t_span: tuple[float, float], sample_dt: float, *, steps_per_sample: int = 64,
                             tol: float = 1e-6, projectors=None, keep_states: bool = False) -> RunTrace:
    """RK4 integration of d rho/dt = -i[H(t), rho] + D rho, sampled every ``sample_dt``.

    The whole run is repeated with half the step; if any sampled population moves
    by more than ``tol`` the step is halved again.
    """
    rho0 = _validate_initial(rho0)
    d = rho0.shape[0]
    diss = sum((L.matrix for L in dissipators), np.zeros((d * d, d * d), dtype=complex))
    G = _generator(H, diss, d)
    t0, t1 = t_span
    n_samples = int(round((t1 - t0) / sample_dt))
    if n_samples < 1:
        raise InvalidArgument("t_span shorter than one sample")

    def run(nsub):
        rec = _Recorder(d, projectors or _default_projectors(d), keep_states)
        v = vec(rho0).reshape(-1, 1)
        rec.add(t0, v[:, 0])
        for i in range(n_samples):
            ta = t0 + i * sample_dt
            v = _rk4_map(G, ta, ta + sample_dt, nsub, v)
            rec.add(ta + sample_dt, v[:, 0])
        return rec.trace()

    coarse = run(steps_per_sample)
    for _ in range(6):
        steps_per_sample *= 2
        fine = run(steps_per_sample)
        if np.max(np.abs(fine.populations - coarse.populations)) < tol:
            return fine
        coarse = fine
    raise NumericalFailure("time-dependent integration did not converge under step halving")


def stroboscopic_trace(rho0: np.ndarray, period_map: np.ndarray, period: float, n_periods: int, stride: int,
                       projectors=None) -> RunTrace:
    """Sample rho(n T) for n = 0, stride, 2 stride, ... using a one-period map."""
    rho0 = _validate_initial(rho0)
    d = rho0.shape[0]
    rec = _Recorder(d, projectors or _default_projectors(d), False)
    step = np.linalg.matrix_power(period_map, stride)
    v = vec(rho0)
    rec.add(0.0, v)
    for i in range(1, n_periods // stride + 1):
        v = step @ v
        rec.add(i * stride * period, v)
    return rec.trace()
