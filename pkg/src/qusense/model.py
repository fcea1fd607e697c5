"""Spin Hamiltonians with physical units, eigenframes and rotating-frame reductions.

Internal unit for every energy and frequency is angular frequency (rad/s) with
hbar = 1. Magnetic fields are in tesla. Conversions live in :func:`convert_units`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import spinops
from .errors import InvalidArgument, ModelConsistencyError
from .spinops import EigenSystem

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class UnitSystem:
    bohr_magneton_over_h: float = 13.99624  # GHz/T
    invcm_to_ghz: float = 29.9792458
    mev_to_ghz: float = 241.799


UNITS = UnitSystem()

_HZ_PER = {
    "Hz": 1.0,
    "kHz": 1e3,
    "MHz": 1e6,
    "GHz": 1e9,
    "rad/s": 1 / TWO_PI,
    "cm-1": UNITS.invcm_to_ghz * 1e9,
    "meV": UNITS.mev_to_ghz * 1e9,
}


def convert_units(value: float, src: str, dst: str, g: float = 2.0) -> float:
    """Convert between frequency/energy units, or from a field in tesla to the
    Zeeman splitting g*muB*B expressed in ``dst``."""
    if src == "T":
        hz = value * g * UNITS.bohr_magneton_over_h * 1e9
    elif src in _HZ_PER:
        hz = value * _HZ_PER[src]
    else:
        raise InvalidArgument(f"unknown unit {src!r}")
    if dst == "T":
        return hz / (g * UNITS.bohr_magneton_over_h * 1e9)
    if dst not in _HZ_PER:
        raise InvalidArgument(f"unknown unit {dst!r}")
    return hz / _HZ_PER[dst]


def gmu_b(g: float) -> float:
    """g*muB/hbar in rad s^-1 T^-1."""
    return TWO_PI * g * UNITS.bohr_magneton_over_h * 1e9


# --------------------------------------------------------------------------
# qubit


@dataclass(frozen=True)
class QubitModel:
    """Driven spin-1/2 sensor.

    ``drive_factor`` is the multiplier of ``g muB B1z cos(wz t + phi) s_z``. The
    default of 2 writes the longitudinal drive with a Pauli matrix (``sigma_z =
    2 s_z``), which is the convention under which the resonant Rabi rate is
    exactly ``(g muB)^2 B1z Bx / wz``. With ``drive_factor=1`` the rate is half.
    """

    delta: float
    g: float = 2.0
    b1z: float = 0.01
    omega_z: float | None = None
    phi_z: float = 0.0
    bx: float = 0.0
    b1x: float = 0.0
    omega_x: float = 0.0
    phi_x: float = 0.0
    drive_factor: float = 2.0

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument("qubit gap must be positive")
        if self.omega_z is None:
            object.__setattr__(self, "omega_z", self.delta)
        if not self.omega_z > 0:
            raise InvalidArgument("drive frequency must be positive")
        for name in ("g", "b1z", "bx", "b1x", "phi_z", "phi_x", "omega_x"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgument(f"{name} must be finite")

    @property
    def alpha(self) -> float:
        return gmu_b(self.g) * self.b1z / self.omega_z

    def static_hamiltonian(self) -> np.ndarray:
        ops = spinops.spin_matrices(Fraction(1, 2))
        return self.delta * ops.sz + gmu_b(self.g) * self.bx * ops.sx

    def hamiltonian(self) -> Callable[[float], np.ndarray]:
        """Lab-frame H(t) in rad/s."""
        ops = spinops.spin_matrices(Fraction(1, 2))
        gm = gmu_b(self.g)
        sx, sz = ops.sx, ops.sz
        delta, bx, b1x, wx, px = self.delta, self.bx, self.b1x, self.omega_x, self.phi_x
        zamp = self.drive_factor * gm * self.b1z
        wz, pz = self.omega_z, self.phi_z

        def H(t: float) -> np.ndarray:
            return (delta + zamp * math.cos(wz * t + pz)) * sz + gm * (bx + b1x * math.cos(wx * t + px)) * sx

        return H


def build_qubit_model(delta=None, *, bz: float = 0.35, g: float = 2.0, **kwargs) -> QubitModel:
    """Qubit whose gap defaults to the Zeeman splitting g muB bz."""
    if delta is None:
        delta = gmu_b(g) * bz
    return QubitModel(delta=delta, g=g, **kwargs)


@dataclass(frozen=True)
class RotatingQubit:
    hamiltonian: np.ndarray
    rabi_rate: float
    detuning: float
    alpha: float

    @property
    def period(self) -> float:
        return TWO_PI / self.rabi_rate if self.rabi_rate else math.inf


def rotating_frame_qubit(model: QubitModel) -> RotatingQubit:
    """H_rf = (Delta - wz) s_z - Omega_R s_x with Omega_R = (g muB)^2 B1z Bx / wz
    (scaled by drive_factor/2)."""
    a = model.alpha
    if a >= 1:
        raise InvalidArgument(f"perturbative parameter alpha={a:.3g} must be < 1")
    if a > 0.1:
        raise InvalidArgument(f"alpha={a:.3g} exceeds the supported limit 0.1")
    if a > 0.05:
        warnings.warn(f"alpha={a:.3g} > 0.05: rotating-frame reduction is approximate", stacklevel=2)
    gm = gmu_b(model.g)
    rate = (model.drive_factor / 2) * gm**2 * model.b1z * model.bx / model.omega_z
    ops = spinops.spin_matrices(Fraction(1, 2))
    det = model.delta - model.omega_z
    H = det * ops.sz - rate * ops.sx
    return RotatingQubit(H, abs(rate), det, a)


# --------------------------------------------------------------------------
# qudit


def rescale_parameters(D0: float, E0: float, S) -> tuple[float, float]:
    """Scale spin-3/2 zero-field splittings to spin S by 3/(S(2S-1))."""
    s = float(Fraction(S))
    if s < 1.5 or (2 * s) % 2 != 1:
        raise InvalidArgument("target spin must be half-integer >= 3/2")
    factor = 3.0 / (s * (2 * s - 1))
    return D0 * factor, E0 * factor


@dataclass(frozen=True, eq=False)
class QuditModel:
    S: Fraction
    B: float
    D: float
    E: float
    g: float
    eig: EigenSystem
    sx_eig: np.ndarray
    sy_eig: np.ndarray
    sz_eig: np.ndarray
    szD: np.ndarray
    szOD: np.ndarray
    parity: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(2 * self.S + 1)

    @property
    def energies(self) -> np.ndarray:
        return self.eig.energies

    @property
    def sz_diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.szD))

    def gap(self, mu: int, nu: int) -> float:
        return float(self.energies[mu] - self.energies[nu])

    def commutator_element(self, mu: int, nu: int) -> complex:
        """<mu|[S_z^(D), S_x]|nu> = (c_mu - c_nu) <mu|S_x|nu>."""
        c = self.sz_diagonal
        return complex((c[mu] - c[nu]) * self.sx_eig[mu, nu])

    def parity_blocks(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Eigenstate indices grouped by their Delta m = 2 mixing class.

        The block containing the ground state comes first.
        """
        first = self.parity[0]
        a = tuple(int(i) for i in np.flatnonzero(self.parity == first))
        b = tuple(int(i) for i in np.flatnonzero(self.parity != first))
        return a, b


def qudit_static_hamiltonian(S, B: float, D: float, E: float, g: float) -> np.ndarray:
    ops = spinops.spin_matrices(S)
    return gmu_b(g) * B * ops.sz + D * ops.sz @ ops.sz + E * (ops.sx @ ops.sx - ops.sy @ ops.sy)


def _block_eigensystem(H0: np.ndarray) -> EigenSystem:
    """Eigensystem of a Hamiltonian that only couples m to m +- 2.

    Each parity class of |S, m> is diagonalized on its own, so Kramers-degenerate
    levels at zero field never mix the two classes. Levels are then merged in
    ascending energy order.
    """
    d = H0.shape[0]
    energies, vectors = [], []
    for idx in (np.arange(0, d, 2), np.arange(1, d, 2)):
        if np.max(np.abs(H0[np.ix_(idx, np.setdiff1d(np.arange(d), idx))]), initial=0.0) > 0:
            return spinops.hermitian_eigensystem(H0)
        sub = spinops.hermitian_eigensystem(H0[np.ix_(idx, idx)])
        for e, v in zip(sub.energies, sub.vectors.T):
            full = np.zeros(d, dtype=complex)
            full[idx] = v
            energies.append(e)
            vectors.append(full)
    order = np.argsort(energies, kind="stable")
    return EigenSystem(np.array(energies)[order], np.column_stack(vectors)[:, order])


def build_qudit_model(S=Fraction(3, 2), B: float = 0.35, D: float | None = None, E: float | None = None,
                      g: float = 2.0, *, D_invcm: float = -0.81, E_invcm: float = -0.24,
                      rescale: bool = True, tol: float = 1e-10) -> QuditModel:
    """Build the spin-S qudit. D and E in rad/s override the cm^-1 defaults; when
    they come from the cm^-1 values they are rescaled to spin S if ``rescale``."""
    spin = Fraction(S).limit_denominator(100)
    if spin.denominator != 2:
        raise InvalidArgument("qudit spin must be half-integer")
    if D is None or E is None:
        D0 = TWO_PI * convert_units(D_invcm, "cm-1", "Hz")
        E0 = TWO_PI * convert_units(E_invcm, "cm-1", "Hz")
        if rescale and spin >= Fraction(3, 2):
            D0, E0 = rescale_parameters(D0, E0, spin)
        D = D0 if D is None else D
        E = E0 if E is None else E
    for v in (B, D, E, g):
        if not math.isfinite(v):
            raise InvalidArgument("model parameters must be finite")
    ops = spinops.spin_matrices(spin)
    H0 = qudit_static_hamiltonian(spin, B, D, E, g)
    eig = _block_eigensystem(H0)
    sx_eig = eig.to_eigenbasis(ops.sx)
    sy_eig = eig.to_eigenbasis(ops.sy)
    sz_eig = eig.to_eigenbasis(ops.sz)
    szD, szOD = spinops.split_diagonal(sz_eig)

    # class of each eigenvector: parity of the row index (S - m) carrying its weight
    weights = np.abs(eig.vectors) ** 2
    even = weights[0::2].sum(axis=0)
    parity = (even < 0.5).astype(int)
    purity = np.maximum(even, 1 - even)
    scale = max(1.0, float(spin))
    if np.any(1 - purity > tol) or np.max(np.abs(np.diag(sx_eig))) > tol * scale \
            or np.max(np.abs(np.diag(sy_eig))) > tol * scale:
        raise ModelConsistencyError("eigenstates mix both Delta m = 2 classes; selection rule violated")
    return QuditModel(spin, B, D, E, g, eig, sx_eig, sy_eig, sz_eig, szD, szOD, parity)


# --------------------------------------------------------------------------
# multi-tone rotating frame


@dataclass(frozen=True)
class DriveTone:
    """Longitudinal tone g muB b cos(omega t + phase) S_z resonant with (upper, lower)."""

    amplitude: float
    omega: float
    phase: float
    pair: tuple[int, int]
    axis: str = "z"


@dataclass(frozen=True)
class TransitionEntry:
    upper: int
    lower: int
    gap: float
    commutator: complex
    tone_index: int
    coupling: complex  # <upper|H_eff|lower>

    @property
    def rabi_rate(self) -> float:
        return 2 * abs(self.coupling)


@dataclass(frozen=True)
class EffectiveRabiModel:
    entries: tuple[TransitionEntry, ...]
    group_hamiltonians: tuple[np.ndarray, ...]
    max_eta: float

    @property
    def total(self) -> np.ndarray:
        return sum(self.group_hamiltonians, np.zeros_like(self.group_hamiltonians[0]))


def tone_eta(model: QuditModel, tone: DriveTone) -> float:
    return gmu_b(model.g) * tone.amplitude / tone.omega


def effective_coupling(model: QuditModel, tone: DriveTone, bx: float) -> complex:
    """Resonant element <upper|H_eff|lower> after the multi-rotating frame:
    -(g muB)^2 Bx b / (2 w) e^{-i phi} <upper|[S_z^(D), S_x]|lower>."""
    mu, nu = tone.pair
    gm = gmu_b(model.g)
    return -gm**2 * bx * tone.amplitude / (2 * tone.omega) * np.exp(-1j * tone.phase) * model.commutator_element(mu, nu)


def rotating_frame_qudit(model: QuditModel, tones: Sequence[DriveTone] | Sequence[Sequence[DriveTone]],
                         bx: float, *, resonance_tol: float = 1e-6) -> EffectiveRabiModel:
    """Effective Hamiltonians in the interaction picture of H_d^(0), one per tone group.

    ``tones`` is either a flat list (one group) or a list of groups.
    """
    d = model.dim
    groups = [list(tones)] if (len(tones) == 0 or isinstance(tones[0], DriveTone)) else [list(g) for g in tones]
    entries = []
    hams = []
    max_eta = 0.0
    idx = 0
    for group in groups:
        H = np.zeros((d, d), dtype=complex)
        for tone in group:
            mu, nu = tone.pair
            gap = model.gap(mu, nu)
            if gap <= 0 or abs(tone.omega - gap) > resonance_tol * gap:
                raise InvalidArgument(f"tone at {tone.omega:.6g} rad/s is not resonant with transition {tone.pair}")
            eta = tone_eta(model, tone)
            max_eta = max(max_eta, eta)
            if eta >= 0.3:
                raise InvalidArgument(f"tone {tone.pair}: eta={eta:.3g} far outside the perturbative regime")
            if eta >= 0.1:
                warnings.warn(f"tone {tone.pair}: eta={eta:.3g} >= 0.1", stacklevel=2)
            h = effective_coupling(model, tone, bx)
            H[mu, nu] += h
            H[nu, mu] += np.conj(h)
            entries.append(TransitionEntry(mu, nu, gap, model.commutator_element(mu, nu), idx, h))
            idx += 1
        hams.append(H)
    return EffectiveRabiModel(tuple(entries), tuple(hams), max_eta)


def qudit_lab_hamiltonian(model: QuditModel, tones: Sequence[DriveTone], bx: float) -> Callable[[float], np.ndarray]:
    """Lab-frame H(t) in the eigenbasis of H_d^(0): E + g muB Bx S_x + g muB sum_j b_j cos(w_j t + phi_j) S_z."""
    gm = gmu_b(model.g)
    H0 = np.diag(model.energies).astype(complex) + gm * bx * model.sx_eig
    sz = model.sz_eig
    amps = [(gm * t.amplitude, t.omega, t.phase) for t in tones]

    def H(t: float) -> np.ndarray:
        return H0 + sum(a * math.cos(w * t + p) for a, w, p in amps) * sz

    return H
