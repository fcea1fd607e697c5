"""Dense complex linear algebra kernel: spin matrices, eigensystems, exponentials,
tensor products and partial traces.

Everything here works on plain ``numpy`` arrays. The largest object the package
ever builds is a 32x32 operator (spin-7/2 qudit times a 4-level ancilla), or
its 1024x1024 superoperator, so dense storage is used throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg

from .errors import InvalidArgument, NumericalFailure

HERMITIAN_TOL = 1e-10


def _as_spin(S) -> Fraction:
    twice = Fraction(S).limit_denominator(1000) * 2
    if twice.denominator != 1 or twice < 0 or abs(float(twice) - 2 * float(S)) > 1e-12:
        raise InvalidArgument(f"spin must be a non-negative multiple of 1/2, got {S!r}")
    return twice / 2


@dataclass(frozen=True)
class SpinOperatorSet:
    S: Fraction
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    @property
    def dim(self) -> int:
        return int(2 * self.S + 1)

    @property
    def splus(self) -> np.ndarray:
        return self.sx + 1j * self.sy


def spin_matrices(S) -> SpinOperatorSet:
    """Spin-S matrices in the |S, m> basis ordered m = S, S-1, ..., -S."""
    spin = _as_spin(S)
    s = float(spin)
    d = int(2 * spin + 1)
    m = s - np.arange(d)
    # <m+1|S+|m> = sqrt(S(S+1) - m(m+1)); row index of m+1 is one above m
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    splus = np.diag(ladder, 1).astype(complex)
    sminus = splus.conj().T
    sx = (splus + sminus) / 2
    sy = (splus - sminus) / 2j
    sz = np.diag(m).astype(complex)
    return SpinOperatorSet(spin, sx, sy, sz)


@dataclass(frozen=True)
class EigenSystem:
    """Ascending energies (rad/s) and orthonormal eigenvectors as columns."""

    energies: np.ndarray
    vectors: np.ndarray

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ op @ self.vectors

    def from_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.vectors @ op @ self.vectors.conj().T


def is_hermitian(M: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    M = np.asarray(M)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.max(np.abs(M - M.conj().T), initial=0.0) <= tol * scale


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of every column real positive.

    Ties are resolved towards the lowest row index so the choice is reproducible.
    """
    vectors = np.array(vectors, dtype=complex)
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        mags = np.abs(col)
        i = int(np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0])
        vectors[:, j] = col * (abs(col[i]) / col[i])
    return vectors


def hermitian_eigensystem(H: np.ndarray) -> EigenSystem:
    H = np.asarray(H, dtype=complex)
    if not is_hermitian(H):
        raise InvalidArgument("hermitian_eigensystem requires a Hermitian matrix")
    H = (H + H.conj().T) / 2
    energies, vectors = np.linalg.eigh(H)
    return EigenSystem(energies, fix_phase(vectors))


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument("matrix_exponential requires a square matrix")
    out = scipy.linalg.expm(M)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("matrix exponential overflowed")
    return out


def unitary_propagator(H: np.ndarray, t: float) -> np.ndarray:
    """exp(-iHt) for Hermitian H via its eigendecomposition (exactly unitary)."""
    w, v = np.linalg.eigh((H + H.conj().T) / 2)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def tensor(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kronecker product with the (qudit, ancilla) ordering: A is the first factor."""
    return np.kron(A, B)


def partial_trace(M: np.ndarray, dims: tuple[int, int], keep: int) -> np.ndarray:
    da, db = dims
    M = np.asarray(M)
    if M.shape != (da * db, da * db):
        raise InvalidArgument(f"matrix of shape {M.shape} does not match dims {dims}")
    if keep not in (0, 1):
        raise InvalidArgument("keep must be 0 or 1")
    r = M.reshape(da, db, da, db)
    if keep == 0:
        return np.einsum("ijkj->ik", r)
    return np.einsum("ijil->jl", r)


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def split_diagonal(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (diagonal part, off-diagonal part) of M; they sum to M exactly."""
    diag = np.diag(np.diag(M))
    off = M - diag
    np.fill_diagonal(off, 0.0)
    return diag, off
