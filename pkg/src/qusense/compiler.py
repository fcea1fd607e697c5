"""Compile logical operations into resonant longitudinal drive schedules.

A logical Rabi rotation is realized by driving the transitions between the two
code supports with one tone each. Tones act in Trotter groups in which no
eigenstate appears twice, so no combination frequency of two simultaneous tones
can hit a gap sharing a level. Amplitudes are chosen so that the time-averaged
effective Hamiltonian is proportional to the logical sigma_x on every error
subspace at once, with a proportionality constant linear in the unknown B_x.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .codes import CodeSpace
from .errors import CompileError, InvalidArgument, ModelConsistencyError
from .model import DriveTone, QuditModel, gmu_b, rotating_frame_qudit
from .spinops import unitary_propagator

ELEMENT_TOL = 1e-8
ETA_LIMIT = 0.1


# --------------------------------------------------------------------------
# transitions and grouping


@dataclass(frozen=True)
class TransitionSets:
    sensing: tuple[tuple[int, int], ...]
    correction: tuple[tuple[int, int], ...]
    supports: tuple[tuple[int, ...], tuple[int, ...]]
    missing: tuple[tuple[int, int], ...] = ()

    @property
    def fully_connected(self) -> bool:
        return not self.missing


def _pair(a: int, b: int) -> tuple[int, int]:
    return (min(a, b), max(a, b))


def enumerate_transitions(code: CodeSpace, model: QuditModel, tol: float = ELEMENT_TOL) -> TransitionSets:
    """Pairs driven during sensing (commutator elements between supports) and
    pairs available for correction pulses (S_z off-diagonal elements within a support)."""
    d = model.dim
    if code.dim != d:
        raise InvalidArgument("code space and model have different dimensions")
    sup0, sup1 = code.supports
    C = model.szD @ model.sx_eig - model.sx_eig @ model.szD
    all_sense = {_pair(a, b) for a in range(d) for b in range(a + 1, d) if abs(C[a, b]) > tol}
    all_corr = {_pair(a, b) for a in range(d) for b in range(a + 1, d) if abs(model.szOD[a, b]) > tol}
    both = sorted(all_sense & all_corr)
    if both:
        raise ModelConsistencyError(f"pairs {both} are both sensing and correction transitions")
    cross = [_pair(a, b) for a in sup0 for b in sup1]
    sensing = tuple(sorted(p for p in cross if p in all_sense))
    missing = tuple(sorted(p for p in cross if p not in all_sense))
    same = [_pair(a, b) for s in (sup0, sup1) for i, a in enumerate(s) for b in s[i + 1:]]
    correction = tuple(sorted(p for p in same if p in all_corr))
    return TransitionSets(sensing, correction, (tuple(sup0), tuple(sup1)), missing)


def require_connectivity(ts: TransitionSets) -> None:
    if not ts.fully_connected:
        raise CompileError(f"insufficient connectivity: no sensing matrix element for pairs {list(ts.missing)}")


def _bipartition(pairs: Sequence[tuple[int, int]]) -> tuple[list[int], list[int]]:
    adj: dict[int, set[int]] = {}
    for a, b in pairs:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    side: dict[int, int] = {}
    for start in sorted(adj):
        if start in side:
            continue
        side[start] = 0
        stack = [start]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in side:
                    side[w] = 1 - side[u]
                    stack.append(w)
                elif side[w] == side[u]:
                    raise CompileError(f"transition graph is not bipartite (odd cycle through {u}, {w})")
    left = sorted(v for v, s in side.items() if s == 0)
    right = sorted(v for v, s in side.items() if s == 1)
    return left, right


def trotter_grouping(pairs: Sequence[tuple[int, int]], supports=None, n_groups: int | None = None) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Partition bipartite transitions into groups of vertex-disjoint pairs.

    Uses the Latin-square schedule: with both sides listed in order, group g
    holds (left[i], right[(i + g) mod n]). Empty groups are dropped.
    """
    pairs = [_pair(*p) for p in pairs]
    if not pairs:
        return ()
    if len(set(pairs)) != len(pairs):
        raise CompileError("duplicate transitions in grouping input")
    if supports is not None:
        left, right = sorted(supports[0]), sorted(supports[1])
    else:
        left, right = _bipartition(pairs)
    n = max(len(left), len(right)) if n_groups is None else n_groups
    pos_l = {v: i for i, v in enumerate(left)}
    pos_r = {v: i for i, v in enumerate(right)}
    groups: list[list[tuple[int, int]]] = [[] for _ in range(max(len(left), len(right)))]
    bad = []
    for a, b in pairs:
        if a in pos_l and b in pos_r:
            i, j = pos_l[a], pos_r[b]
        elif b in pos_l and a in pos_r:
            i, j = pos_l[b], pos_r[a]
        else:
            bad.append((a, b))
            continue
        groups[(j - i) % len(groups)].append((a, b))
    if bad:
        raise CompileError(f"pairs {bad} do not connect the two supports")
    groups = [sorted(g) for g in groups if g]
    if len(groups) > n:
        raise CompileError(f"transitions need {len(groups)} groups, more than the allowed {n}")
    for g in groups:
        used = [v for p in g for v in p]
        if len(used) != len(set(used)):
            raise CompileError(f"group {g} repeats an eigenstate")
    return tuple(tuple(g) for g in groups)


# --------------------------------------------------------------------------
# tone synthesis


@dataclass(frozen=True)
class PulseSchedule:
    groups: tuple[tuple[DriveTone, ...], ...]
    n_steps: int = 1
    theta: float = math.pi
    rate_per_tesla: float = 0.0  # logical Rabi angular rate per tesla of B_x (group time-sharing included)
    max_eta: float = 0.0

    @property
    def tones(self) -> list[DriveTone]:
        return [t for g in self.groups for t in g]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def logical_rate(self, bx: float) -> float:
        return self.rate_per_tesla * bx

    def period(self, bx: float) -> float:
        """Logical Rabi period 2 pi / Omega_L at the given B_x."""
        return 2 * math.pi / self.logical_rate(bx)

    def to_dict(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "theta": self.theta,
            "rate_per_tesla": self.rate_per_tesla,
            "max_eta": self.max_eta,
            "groups": [[{"pair": list(t.pair), "b_T": t.amplitude, "f_GHz": t.omega / (2 * math.pi * 1e9),
                         "omega_rad_s": t.omega, "phase_rad": t.phase} for t in g] for g in self.groups],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "PulseSchedule":
        doc = json.loads(text)
        groups = tuple(tuple(DriveTone(t["b_T"], t.get("omega_rad_s", t["f_GHz"] * 2 * math.pi * 1e9), t["phase_rad"], tuple(t["pair"]))
                             for t in g) for g in doc["groups"])
        return cls(groups, doc["n_steps"], doc["theta"], doc["rate_per_tesla"], doc["max_eta"])


def logical_x_target(code: CodeSpace) -> np.ndarray:
    """Physical matrix of sigma_x^L (x) I_{d/2}: W0 W1^dag + h.c. with W_l the error words of support l."""
    n = code.n_errors
    W0, W1 = code.A[:, :n], code.A[:, n:]
    X = W0 @ W1.conj().T
    return X + X.conj().T


def tone_synthesis(groups, model: QuditModel, code: CodeSpace, b_ref: float, *, n_steps: int = 1,
                   theta: float = math.pi, eta_cap: float | None = None, rel_tol: float = 1e-9) -> PulseSchedule:
    """One tone per transition of ``groups`` so the group-averaged effective
    Hamiltonian equals (Omega_L/2) sigma_x^L (x) I.

    The required element on pair (a, b) is proportional to the target element
    X_ab, so b_j = 2 w_j kappa |X_ab| / ((g muB)^2 |M_j|) for a common kappa.
    kappa is fixed by giving the largest tone the amplitude ``b_ref``. When all
    |X_ab| coincide this reduces to b_ref (w_j/w_ref)(|M_ref|/|M_j|).
    With ``eta_cap`` all amplitudes are scaled down, if needed, so that no tone
    exceeds that eta.
    """
    if b_ref <= 0:
        raise InvalidArgument("b_ref must be positive")
    X = logical_x_target(code)
    gm = gmu_b(model.g)
    xmax = np.max(np.abs(X))
    raw = []  # (group index, pair, upper, lower, omega, |X|/|M|, phase)
    uncovered = []
    for gi, grp in enumerate(groups):
        for a, b in grp:
            if abs(X[a, b]) <= rel_tol * xmax:
                continue
            upper, lower = (a, b) if model.energies[a] > model.energies[b] else (b, a)
            M = model.commutator_element(upper, lower)
            if abs(M) <= ELEMENT_TOL:
                uncovered.append((a, b))
                continue
            omega = model.gap(upper, lower)
            # want -e^{-i phi} M / |M| = X_ul / |X_ul|
            phase = float(-np.angle(-X[upper, lower] / M))
            phase = 0.0 if abs(phase) < 1e-12 else phase
            raw.append((gi, (a, b), upper, lower, omega, abs(X[upper, lower]) / abs(M), phase))
    if uncovered:
        raise CompileError(f"uncoverable pairs (vanishing sensing element): {uncovered}")
    if not raw:
        raise CompileError("no transition carries a logical sigma_x element")
    weights = [2 * r[4] * r[5] / gm**2 for r in raw]  # amplitude per unit kappa
    kappa = b_ref / max(weights)
    eta_of_kappa = max(gm * w / r[4] for r, w in zip(raw, weights))  # largest eta per unit kappa
    if eta_cap is not None and kappa * eta_of_kappa > eta_cap:
        kappa = eta_cap / eta_of_kappa
    out: list[list[DriveTone]] = [[] for _ in groups]
    max_eta = 0.0
    for r, w in zip(raw, weights):
        gi, _, upper, lower, omega, _, phase = r
        amp = kappa * w
        eta = gm * amp / omega
        max_eta = max(max_eta, eta)
        out[gi].append(DriveTone(amp, omega, phase, (upper, lower)))
    if max_eta >= ETA_LIMIT:
        raise CompileError(f"largest tone has eta={max_eta:.3g} >= {ETA_LIMIT}; use a smaller b_ref")
    groups_out = tuple(tuple(g) for g in out if g)
    # effective element per tone is kappa*Bx*X_ab; averaging over groups divides by their number
    rate = 2 * kappa / len(groups_out)
    return PulseSchedule(groups_out, n_steps, theta, rate, max_eta)


def compile_schedule(model: QuditModel, code: CodeSpace, b_ref: float, **kw) -> PulseSchedule:
    ts = enumerate_transitions(code, model)
    require_connectivity(ts)
    groups = trotter_grouping(ts.sensing, code.supports)
    return tone_synthesis(groups, model, code, b_ref, **kw)


# --------------------------------------------------------------------------
# logical Rabi channel


@dataclass(frozen=True)
class SegmentChannel:
    """Sequence of (effective Hamiltonian, duration) segments applied in order."""

    segments: tuple[tuple[np.ndarray, float], ...]
    dim: int

    def unitary(self) -> np.ndarray:
        U = np.eye(self.dim, dtype=complex)
        for H, dt in self.segments:
            U = unitary_propagator(H, dt) @ U
        return U

    def apply(self, rho: np.ndarray) -> np.ndarray:
        U = self.unitary()
        return U @ rho @ U.conj().T


def group_hamiltonians(schedule: PulseSchedule, model: QuditModel, bx: float) -> tuple[np.ndarray, ...]:
    return rotating_frame_qudit(model, [list(g) for g in schedule.groups], bx).group_hamiltonians


def compile_logical_rabi(schedule: PulseSchedule, theta: float, n_steps: int, model: QuditModel,
                         bx: float = 1e-6, second_order: bool = False) -> SegmentChannel:
    """Trotterized channel approximating R_x^L(theta) (x) I at field ``bx``."""
    if n_steps < 1:
        raise InvalidArgument("n_steps must be >= 1")
    d = model.dim
    if theta == 0:
        return SegmentChannel((), d)
    hams = group_hamiltonians(schedule, model, bx)
    total = abs(theta) / schedule.logical_rate(bx)
    sign = 1.0 if theta > 0 else -1.0
    ng = len(hams)
    dt = total / (ng * n_steps)
    segs = []
    for _ in range(n_steps):
        if second_order and ng > 1:
            order = list(range(ng - 1)) + [ng - 1] + list(range(ng - 2, -1, -1))
            durs = [dt / 2] * (ng - 1) + [dt] + [dt / 2] * (ng - 1)
        else:
            order, durs = list(range(ng)), [dt] * ng
        segs.extend((sign * hams[g], t) for g, t in zip(order, durs))
    return SegmentChannel(tuple(segs), d)


def logical_rx(code: CodeSpace, theta: float) -> np.ndarray:
    """Physical R_x^L(theta) (x) I_{d/2}."""
    n = code.n_errors
    rx = np.array([[math.cos(theta / 2), -1j * math.sin(theta / 2)],
                   [-1j * math.sin(theta / 2), math.cos(theta / 2)]])
    return code.from_logical(np.kron(rx, np.eye(n)))


def cardinal_states(code: CodeSpace, k: int = 0) -> list[np.ndarray]:
    s = 1 / math.sqrt(2)
    coeffs = [(1, 0), (0, 1), (s, s), (s, -s), (s, 1j * s), (s, -1j * s)]
    return [code.logical_state(a, b, k) for a, b in coeffs]


def gate_fidelity(channel, ideal: np.ndarray, code: CodeSpace, k: int = 0) -> float:
    """Mean of <psi|U^dag Lambda(|psi><psi|) U|psi> over the six cardinal logical states of subspace k.

    ``channel`` is a SegmentChannel, a unitary matrix, a superoperator (d^2 x d^2)
    or any callable mapping density matrices.
    """
    d = code.dim
    if isinstance(channel, SegmentChannel):
        apply = channel.apply
    elif callable(channel):
        apply = channel
    else:
        M = np.asarray(channel)
        if M.shape == (d, d):
            apply = lambda r: M @ r @ M.conj().T  # noqa: E731
        elif M.shape == (d * d, d * d):
            apply = lambda r: (M @ r.reshape(-1, order="F")).reshape(d, d, order="F")  # noqa: E731
        else:
            raise InvalidArgument(f"channel of shape {M.shape} does not act on dimension {d}")
    total = 0.0
    states = cardinal_states(code, k)
    for psi in states:
        out = apply(np.outer(psi, psi.conj()))
        phi = ideal @ psi
        total += float(np.real(np.vdot(phi, out @ phi)))
    return total / len(states)


def error_subspace_agreement(U: np.ndarray, code: CodeSpace) -> float:
    """Smallest fidelity between the logical 2x2 block of U on subspace k and on k = 0."""
    n = code.n_errors
    L = code.to_logical(U)

    def block(k):
        idx = [k, n + k]
        return L[np.ix_(idx, idx)]

    b0 = block(0)
    worst = 1.0
    for k in range(1, n):
        bk = block(k)
        f = abs(np.trace(b0.conj().T @ bk)) ** 2 / 4
        worst = min(worst, f)
    return worst


# --------------------------------------------------------------------------
# generator synthesis for arbitrary logical unitaries


@dataclass(frozen=True)
class GatePulse:
    pair: tuple[int, int]
    magnitude: float
    phase: float
    omega: float | None


@dataclass(frozen=True)
class SynthesizedGate:
    target: np.ndarray  # logical basis
    generator: np.ndarray  # physical basis, A G A^dag
    pulses: tuple[GatePulse, ...]
    duration: float = 0.0
    phase_corrections: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def physical_unitary(self) -> np.ndarray:
        return unitary_propagator(self.generator, 1.0)


def principal_generator(U: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Hermitian G with exp(-i G) = U and eigenvalues of -G folded into (-pi, pi]."""
    U = np.asarray(U, dtype=complex)
    n = U.shape[0]
    if np.max(np.abs(U.conj().T @ U - np.eye(n))) > 1e-10:
        raise InvalidArgument("target is not unitary")
    # a unitary is normal, so its complex Schur form is diagonal with an orthonormal basis
    T, Z = scipy.linalg.schur(U, output="complex")
    phases = np.angle(np.diag(T))
    near_pi = np.abs(np.abs(phases) - math.pi) < eps
    if np.count_nonzero(near_pi) > 1:
        warnings.warn("eigenvalue -1 is degenerate; branch chosen as +pi for all of them", stacklevel=2)
    phases = np.where(near_pi, math.pi, phases)
    return -(Z * phases) @ Z.conj().T


def synthesize_ft_gate(U_logical: np.ndarray, code: CodeSpace, *, ancilla_dim: int = 1, model: QuditModel | None = None,
                       duration: float = 0.0, tol: float = 1e-12) -> SynthesizedGate:
    """Generator and pulse list for a logical-basis unitary.

    With ``ancilla_dim`` > 1 the unitary acts on qudit (x) ancilla and the basis
    change is A (x) I.
    """
    G = principal_generator(U_logical)
    A = np.kron(code.A, np.eye(ancilla_dim)) if ancilla_dim > 1 else code.A
    P = A @ G @ A.conj().T
    P = (P + P.conj().T) / 2
    target_phys = A @ U_logical @ A.conj().T
    err = np.max(np.abs(unitary_propagator(P, 1.0) - target_phys))
    if err > 1e-10:
        raise CompileError(f"generator exponential misses the target by {err:.3g}")
    pulses = []
    D = P.shape[0]
    for a in range(D):
        for b in range(a + 1, D):
            if abs(P[a, b]) > tol:
                omega = None
                if model is not None:
                    qa, qb = divmod(a, ancilla_dim)[0], divmod(b, ancilla_dim)[0]
                    if divmod(a, ancilla_dim)[1] == divmod(b, ancilla_dim)[1]:
                        omega = abs(model.energies[qa] - model.energies[qb])
                pulses.append(GatePulse((a, b), float(abs(P[a, b])), float(np.angle(P[a, b])), omega))
    return SynthesizedGate(np.asarray(U_logical), P, tuple(pulses), duration, np.real(np.diag(P)).copy())


def qudit_couplings(gate: SynthesizedGate, ancilla_dim: int, tol: float = 1e-12) -> set[tuple[int, int]]:
    """Qudit index pairs (a != b) touched by the generator, with any ancilla indices."""
    P = gate.generator
    D = P.shape[0]
    d = D // ancilla_dim
    R = P.reshape(d, ancilla_dim, d, ancilla_dim)
    mags = np.abs(R).max(axis=(1, 3))
    return {(a, b) for a in range(d) for b in range(a + 1, d) if mags[a, b] > tol}
