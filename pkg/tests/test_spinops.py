import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qusense import spinops
from qusense.errors import InvalidArgument
from qusense.model import build_qudit_model, qudit_static_hamiltonian

SPINS = [Fraction(n, 2) for n in range(1, 8)]


@pytest.mark.parametrize("S", SPINS)
def test_spin_algebra(S):
    ops = spinops.spin_matrices(S)
    s = float(S)
    d = ops.dim
    assert d == 2 * S + 1
    for a, b, c in ((ops.sx, ops.sy, ops.sz), (ops.sy, ops.sz, ops.sx), (ops.sz, ops.sx, ops.sy)):
        assert np.allclose(spinops.commutator(a, b), 1j * c, atol=1e-12)
    casimir = ops.sx @ ops.sx + ops.sy @ ops.sy + ops.sz @ ops.sz
    assert np.allclose(casimir, s * (s + 1) * np.eye(d), atol=1e-12)
    for M in (ops.sx, ops.sy, ops.sz):
        assert spinops.is_hermitian(M, 1e-12)
    assert np.allclose(np.diag(ops.sz).real, s - np.arange(d))


def test_non_half_integer_spin_rejected():
    with pytest.raises(InvalidArgument):
        spinops.spin_matrices(Fraction(1, 3))


def test_eigensystem_sorts_and_fixes_phase():
    es = spinops.hermitian_eigensystem(np.diag([1.0, 3.0, 2.0]))
    assert np.allclose(es.energies, [1, 2, 3])
    assert np.allclose(np.abs(es.vectors), np.eye(3)[:, [0, 2, 1]])
    es = spinops.hermitian_eigensystem(np.array([[0, 1], [1, 0]]))
    assert np.allclose(es.energies, [-1, 1])
    for j in range(2):
        col = es.vectors[:, j]
        i = int(np.argmax(np.abs(col)))
        assert abs(col[i].imag) < 1e-15 and col[i].real > 0
    assert np.allclose(np.abs(es.vectors), 1 / math.sqrt(2))


def test_eigensystem_rejects_non_hermitian():
    with pytest.raises(InvalidArgument):
        spinops.hermitian_eigensystem(np.array([[0, 1], [0, 0]]))


def test_qudit_energies_match_characteristic_polynomial():
    m = build_qudit_model(Fraction(3, 2))
    H = qudit_static_hamiltonian(m.S, m.B, m.D, m.E, m.g)
    roots = np.sort(np.roots(np.poly(H / 1e10)).real) * 1e10
    assert np.allclose(m.energies, roots, rtol=1e-9, atol=0)


def test_exponential_examples():
    assert np.allclose(spinops.matrix_exponential(np.zeros((3, 3))), np.eye(3))
    th = 0.7
    sz = np.diag([1.0, -1.0])
    assert np.allclose(spinops.matrix_exponential(-1j * th * sz / 2), np.diag([np.exp(-0.5j * th), np.exp(0.5j * th)]))


def _taylor(M, n=80):
    out = np.eye(M.shape[0], dtype=complex)
    term = np.eye(M.shape[0], dtype=complex)
    for k in range(1, n):
        term = term @ M / k
        out = out + term
    return out


def test_exponential_matches_series():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    M = (X - X.conj().T) / 2
    U = spinops.matrix_exponential(M)
    assert np.max(np.abs(U.conj().T @ U - np.eye(8))) < 1e-11
    assert np.max(np.abs(U - _taylor(M))) < 1e-9


def test_exponential_rejects_non_square():
    with pytest.raises(InvalidArgument):
        spinops.matrix_exponential(np.zeros((2, 3)))


def test_tensor_and_partial_trace():
    assert np.array_equal(spinops.tensor(np.eye(2), np.eye(2)), np.eye(4))
    A = np.array([[1, 2], [3, 4]], dtype=complex)
    B = np.array([[0, 1j, 0], [-1j, 2, 0], [0, 0, 5]])
    assert not np.allclose(spinops.tensor(A, B), spinops.tensor(B, A))
    ev = lambda M: np.sort_complex(np.linalg.eigvals(M))  # noqa: E731
    assert np.allclose(ev(spinops.tensor(A, B)), ev(spinops.tensor(B, A)))
    assert np.allclose(spinops.partial_trace(spinops.tensor(A, B), (2, 3), 0), A * np.trace(B))
    assert np.allclose(spinops.partial_trace(spinops.tensor(A, B), (2, 3), 1), B * np.trace(A))
    with pytest.raises(InvalidArgument):
        spinops.partial_trace(np.eye(5), (2, 3), 0)


def test_split_diagonal_is_exact():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    D, O = spinops.split_diagonal(M)
    assert np.array_equal(D + O, M)
    assert np.all(np.diag(O) == 0)


hermitian = st.integers(2, 8).flatmap(
    lambda n: st.lists(st.floats(-5, 5, allow_nan=False), min_size=2 * n * n, max_size=2 * n * n).map(
        lambda xs: _herm(np.array(xs), n)))


def _herm(xs, n):
    X = xs[: n * n].reshape(n, n) + 1j * xs[n * n:].reshape(n, n)
    return (X + X.conj().T) / 2


@settings(max_examples=50, deadline=None)
@given(hermitian, st.floats(-3, 3))
def test_propagator_unitary(H, t):
    U = spinops.matrix_exponential(-1j * H * t)
    assert np.max(np.abs(U.conj().T @ U - np.eye(H.shape[0]))) < 1e-11
    assert np.allclose(U, spinops.unitary_propagator(H, t), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_partial_trace_preserves_trace(da, db, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(da * db, da * db)) + 1j * rng.normal(size=(da * db, da * db))
    for keep in (0, 1):
        assert abs(np.trace(spinops.partial_trace(M, (da, db), keep)) - np.trace(M)) < 1e-12 * max(1, np.abs(M).sum())
