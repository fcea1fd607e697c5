"""Dephasing Kraus operators, Knill-Laflamme codeword search and error words."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Sequence

import numpy as np
import scipy.optimize

from .dynamics import NoiseModel, dephasing_dissipator, unvec
from .errors import DataCorruptionError, DegenerateCodeError, InvalidArgument, ModelConsistencyError, OptimizationFailure
from .model import QuditModel
from .spinops import fix_phase


@dataclass(frozen=True)
class KrausSet:
    operators: tuple[np.ndarray, ...]
    t_free: float

    def __len__(self) -> int:
        return len(self.operators)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.operators[k]

    @property
    def diagonals(self) -> np.ndarray:
        return np.array([np.diag(E) for E in self.operators])

    def completeness_error(self) -> float:
        d = self.operators[0].shape[0]
        tot = sum(E.conj().T @ E for E in self.operators)
        return float(np.max(np.abs(tot - np.eye(d))))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(E @ rho @ E.conj().T for E in self.operators)


def choi_matrix(superop: np.ndarray) -> np.ndarray:
    """Choi matrix sum_ij |i><j| (x) Lambda(|i><j|) for a column-stacked superoperator."""
    d = int(round(np.sqrt(superop.shape[0])))
    C = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            Eij = np.zeros((d, d))
            Eij[i, j] = 1
            out = unvec(superop @ Eij.reshape(-1, order="F"), d)
            C += np.kron(Eij, out)
    return C


def kraus_from_choi(C: np.ndarray, d: int, cutoff: float = 1e-14) -> list[np.ndarray]:
    """Kraus operators from the Choi eigendecomposition, by decreasing eigenvalue."""
    w, v = np.linalg.eigh((C + C.conj().T) / 2)
    order = np.argsort(-w, kind="stable")
    out = []
    for idx in order:
        if w[idx] <= cutoff * max(w.max(), 1.0):
            continue
        # |K>> = sum_i |i> (x) K|i>, so the vector reshapes row-major into K^T
        K = np.sqrt(w[idx]) * v[:, idx].reshape(d, d).T
        out.append(K)
    return out


def tomography_kraus(model: QuditModel, noise: NoiseModel, t_free: float) -> KrausSet:
    """Kraus operators of the free-evolution dephasing channel over ``t_free``."""
    d = model.dim
    if t_free == 0:
        return KrausSet((np.eye(d, dtype=complex),), 0.0)
    if noise.t1 is not None:
        raise InvalidArgument("tomography_kraus expects a dephasing-only noise model")
    superop = dephasing_dissipator(model, noise).propagator(t_free)
    ops = kraus_from_choi(choi_matrix(superop), d)
    diag = []
    for K in ops:
        off = K - np.diag(np.diag(K))
        if np.max(np.abs(off)) > 1e-8:
            raise ModelConsistencyError("dephasing channel produced a non-diagonal Kraus operator")
        dg = fix_phase(np.diag(K).reshape(-1, 1))[:, 0]
        diag.append(np.diag(dg))
    return KrausSet(tuple(diag), float(t_free))


# --------------------------------------------------------------------------
# Knill-Laflamme


def kl_residual(codewords: Sequence[np.ndarray], kraus: KrausSet, K: int | None = None) -> float:
    c0, c1 = (np.asarray(c, dtype=complex) for c in codewords)
    K = len(kraus) if K is None else min(K, len(kraus))
    e0 = [E @ c0 for E in kraus.operators[:K]]
    e1 = [E @ c1 for E in kraus.operators[:K]]
    total = 0.0
    for k in range(K):
        for j in range(K):
            total += abs(np.vdot(e0[k], e1[j])) ** 2
            total += abs(np.vdot(e0[k], e0[j]) - np.vdot(e1[k], e1[j])) ** 2
    return float(total)


def kl_offdiagonal(codewords, kraus: KrausSet, K: int | None = None) -> float:
    """Only the <0_L|E_k^dag E_j|1_L> terms of the residual."""
    c0, c1 = (np.asarray(c, dtype=complex) for c in codewords)
    K = len(kraus) if K is None else min(K, len(kraus))
    return float(sum(abs(np.vdot(kraus[k] @ c0, kraus[j] @ c1)) ** 2 for k in range(K) for j in range(K)))


def _sphere(angles: np.ndarray) -> np.ndarray:
    """Hyperspherical angles -> non-negative unit vector of length len(angles)+1."""
    n = len(angles) + 1
    out = np.empty(n)
    s = 1.0
    for i, a in enumerate(angles):
        out[i] = s * np.cos(a)
        s *= np.sin(a)
    out[n - 1] = s
    return np.abs(out)


@dataclass(frozen=True)
class CodeSpace:
    S: Fraction
    supports: tuple[tuple[int, ...], tuple[int, ...]]
    codewords: tuple[np.ndarray, np.ndarray]
    kl_residual: float
    seed: int | None = None
    errorwords: np.ndarray | None = None  # columns |l,k> in (l, k) lexicographic order

    @property
    def dim(self) -> int:
        return int(2 * self.S + 1)

    @property
    def n_errors(self) -> int:
        return self.dim // 2

    @property
    def A(self) -> np.ndarray:
        if self.errorwords is None:
            raise InvalidArgument("error words have not been built")
        return self.errorwords

    def word(self, l: int, k: int) -> np.ndarray:
        return self.A[:, l * self.n_errors + k]

    def logical_state(self, alpha: complex, beta: complex, k: int = 0) -> np.ndarray:
        v = alpha * self.word(0, k) + beta * self.word(1, k)
        return v / np.linalg.norm(v)

    def support_projector(self, l: int) -> np.ndarray:
        P = np.zeros((self.dim, self.dim))
        for i in self.supports[l]:
            P[i, i] = 1
        return P

    def error_projector(self, k: int) -> np.ndarray:
        return sum(np.outer(self.word(l, k), self.word(l, k).conj()) for l in (0, 1))

    def to_logical(self, op: np.ndarray) -> np.ndarray:
        return self.A.conj().T @ op @ self.A

    def from_logical(self, op: np.ndarray) -> np.ndarray:
        return self.A @ op @ self.A.conj().T

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        def cvec(v):
            return [[float(x.real), float(x.imag)] for x in np.asarray(v, dtype=complex)]

        out = {
            "spin": str(self.S),
            "supports": [list(s) for s in self.supports],
            "codewords": [cvec(c) for c in self.codewords],
            "residual": self.kl_residual,
            "seed": self.seed,
        }
        if self.errorwords is not None:
            out["errorwords"] = [cvec(self.errorwords[:, i]) for i in range(self.errorwords.shape[1])]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "CodeSpace":
        def vec(rows):
            return np.array([complex(a, b) for a, b in rows])

        ew = None
        if "errorwords" in doc:
            ew = np.column_stack([vec(c) for c in doc["errorwords"]])
        return cls(Fraction(doc["spin"]), tuple(tuple(s) for s in doc["supports"]),
                   tuple(vec(c) for c in doc["codewords"]), doc["residual"], doc["seed"], ew)

    @classmethod
    def loads(cls, text: str) -> "CodeSpace":
        return cls.from_dict(json.loads(text))


def optimize_codewords(kraus: KrausSet, supports: tuple[Sequence[int], Sequence[int]], K: int | None = None,
                       restarts: int = 32, seed: int = 0, S=None, threshold: float = 1e-6) -> CodeSpace:
    """Multi-start Nelder-Mead search of non-negative unit amplitudes on the two
    supports minimising the Knill-Laflamme residual."""
    d = kraus[0].shape[0]
    sup0, sup1 = (tuple(int(i) for i in s) for s in supports)
    if set(sup0) & set(sup1):
        raise InvalidArgument("logical supports must be disjoint")
    if len(sup0) != len(sup1):
        raise InvalidArgument("logical supports must have equal size")
    K = len(sup0) if K is None else K
    n0, n1 = len(sup0), len(sup1)
    S = Fraction(d - 1, 2) if S is None else Fraction(S)

    def unpack(x):
        c0 = np.zeros(d, dtype=complex)
        c1 = np.zeros(d, dtype=complex)
        c0[list(sup0)] = _sphere(x[: n0 - 1])
        c1[list(sup1)] = _sphere(x[n0 - 1:])
        return c0, c1

    diag = kraus.diagonals[:K]
    if all(np.allclose(E, np.diag(np.diag(E))) for E in kraus.operators[:K]):
        # diagonal Kraus + disjoint supports: only the population-weighted Gram terms survive
        g0 = np.einsum("ki,ji->kji", diag[:, list(sup0)].conj(), diag[:, list(sup0)])
        g1 = np.einsum("ki,ji->kji", diag[:, list(sup1)].conj(), diag[:, list(sup1)])

        def cost(x):
            p0 = _sphere(x[: n0 - 1]) ** 2
            p1 = _sphere(x[n0 - 1:]) ** 2
            return float(np.sum(np.abs(g0 @ p0 - g1 @ p1) ** 2))
    else:
        def cost(x):
            return kl_residual(unpack(x), kraus, K)

    rng = np.random.default_rng(seed)
    best = None
    n_par = n0 + n1 - 2
    for r in range(restarts):
        x0 = rng.uniform(0, np.pi / 2, size=n_par)
        if n_par == 0:
            res_x, res_f = x0, cost(x0)
        else:
            res = scipy.optimize.minimize(cost, x0, method="Nelder-Mead",
                                          options={"xatol": 1e-10, "fatol": 1e-18, "maxiter": 20000 * n_par,
                                                   "maxfev": 40000 * n_par})
            res = scipy.optimize.minimize(cost, res.x, method="Nelder-Mead",
                                          options={"xatol": 1e-12, "fatol": 1e-20, "maxiter": 20000 * n_par,
                                                   "maxfev": 40000 * n_par})
            res_x, res_f = res.x, float(res.fun)
        if best is None or res_f < best[1]:
            best = (res_x, res_f)
    c0, c1 = unpack(best[0])
    resid = kl_residual((c0, c1), kraus, K)
    code = CodeSpace(S, (sup0, sup1), (c0, c1), resid, seed)
    if resid >= threshold:
        raise OptimizationFailure(f"Knill-Laflamme residual {resid:.3g} above {threshold:g}", best=code)
    return code


def build_error_words(code: CodeSpace, kraus: KrausSet, rel_tol: float = 1e-9) -> CodeSpace:
    """Gram-Schmidt of {E_k |l_L>} within each support; fills ``errorwords``."""
    d = code.dim
    n = code.n_errors
    if len(kraus) < n:
        raise DegenerateCodeError(f"need {n} Kraus operators, got {len(kraus)}", len(kraus))
    cols = []
    for l in (0, 1):
        basis: list[np.ndarray] = []
        for k in range(n):
            v = kraus[k] @ code.codewords[l]
            norm0 = np.linalg.norm(v)
            for _ in range(2):
                for b in basis:
                    v = v - np.vdot(b, v) * b
            norm = np.linalg.norm(v)
            if norm0 == 0 or norm <= rel_tol * norm0:
                raise DegenerateCodeError(f"E_{k}|{l}_L> is linearly dependent on lower error words", k)
            basis.append(v / norm)
        cols.extend(basis)
    A = np.column_stack(cols)
    if np.max(np.abs(A.conj().T @ A - np.eye(d))) > 1e-10:
        raise DegenerateCodeError("error words are not orthonormal", n - 1)
    return CodeSpace(code.S, code.supports, code.codewords, code.kl_residual, code.seed, A)


def build_code(model: QuditModel, noise: NoiseModel, t_free: float, *, supports=None, restarts: int = 32,
               seed: int = 0) -> tuple[CodeSpace, KrausSet]:
    """Tomography, codeword optimisation and error words in one call."""
    kraus = tomography_kraus(model, noise, t_free)
    supports = model.parity_blocks() if supports is None else supports
    code = optimize_codewords(kraus, supports, K=model.dim // 2, restarts=restarts, seed=seed, S=model.S)
    return build_error_words(code, kraus), kraus


# --------------------------------------------------------------------------
# bundled reference tables


@dataclass(frozen=True)
class ReferenceTable:
    S: Fraction
    kraus_labels: tuple[str, ...]
    kraus_rows: np.ndarray
    word_labels: tuple[str, ...]
    word_rows: np.ndarray
    note: str = ""

    def word(self, l: int, k: int) -> np.ndarray:
        return self.word_rows[self.word_labels.index(f"{l},{k}")]

    def row_norms(self) -> dict[str, float]:
        return {lab: float(np.linalg.norm(r)) for lab, r in zip(self.word_labels, self.word_rows)}

    def kl_diagnostic(self) -> float:
        """KL residual of the table's |0,0>, |1,0> against its own Kraus rows,
        evaluated on the columns both tables share."""
        n = min(self.kraus_rows.shape[1], self.word_rows.shape[1])
        ops = tuple(np.diag(r[:n]).astype(complex) for r in self.kraus_rows)
        c0, c1 = self.word(0, 0)[:n], self.word(1, 0)[:n]
        K = int(2 * self.S + 1) // 2
        return kl_residual((c0, c1), KrausSet(ops, float("nan")), K)


def load_reference_tables() -> dict[Fraction, ReferenceTable]:
    pkg = resources.files("qusense.data")
    raw = pkg.joinpath("reference_tables.json").read_bytes()
    expected = pkg.joinpath("reference_tables.sha256").read_text().strip()
    if hashlib.sha256(raw).hexdigest() != expected:
        raise DataCorruptionError("reference_tables.json checksum mismatch")
    doc = json.loads(raw)
    out = {}
    for key, kr in doc["kraus"].items():
        cw = doc["codewords"][key]
        out[Fraction(key)] = ReferenceTable(
            Fraction(key),
            tuple(r[0] for r in kr["rows"]), np.array([r[1] for r in kr["rows"]], dtype=float),
            tuple(r[0] for r in cw["rows"]), np.array([r[1] for r in cw["rows"]], dtype=float),
            kr.get("note", ""))
    return out
