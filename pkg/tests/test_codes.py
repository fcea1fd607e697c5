import hashlib
import json
import math
import shutil
from fractions import Fraction
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qusense import codes
from qusense.codes import (CodeSpace, KrausSet, build_code, build_error_words, kl_offdiagonal, kl_residual,
                           load_reference_tables, optimize_codewords, tomography_kraus)
from qusense.dynamics import NoiseModel, dephasing_dissipator, unvec, vec
from qusense.errors import DataCorruptionError, DegenerateCodeError, InvalidArgument, OptimizationFailure
from qusense.model import build_qudit_model

SPINS = (Fraction(3, 2), Fraction(5, 2), Fraction(7, 2))
NOISE = NoiseModel(t2=50e-6)


def test_tomography_zero_time_is_identity():
    k = tomography_kraus(build_qudit_model(Fraction(3, 2)), NOISE, 0.0)
    assert len(k) == 1 and np.array_equal(k[0], np.eye(4))


def test_tomography_spin_half_reproduces_decay():
    m = build_qudit_model(Fraction(1, 2))
    k = tomography_kraus(m, NOISE, 50e-6)
    assert len(k) == 2
    assert all(np.count_nonzero(E - np.diag(np.diag(E))) == 0 for E in k.operators)
    out = k.apply(np.full((2, 2), 0.5))
    assert out[0, 1] == pytest.approx(0.5 * math.exp(-1), rel=1e-10)


@pytest.mark.parametrize("S", SPINS)
def test_tomography_kraus_properties(S):
    m = build_qudit_model(S)
    k = tomography_kraus(m, NOISE, 500e-9)
    assert k.completeness_error() < 1e-8
    assert np.all(np.abs(k.diagonals[0]) >= 0.99)
    superop = dephasing_dissipator(m, NOISE).propagator(500e-9)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(m.dim, m.dim)) + 1j * rng.normal(size=(m.dim, m.dim))
    rho = X @ X.conj().T
    assert np.allclose(k.apply(rho), unvec(superop @ vec(rho)), atol=1e-10 * np.abs(rho).max())


def test_tomography_rejects_relaxation():
    with pytest.raises(InvalidArgument):
        tomography_kraus(build_qudit_model(Fraction(3, 2)), NoiseModel(t1=1.0), 1e-6)


def test_kl_residual_trivial_cases():
    ident = KrausSet((np.eye(4, dtype=complex),), 0.0)
    c0 = np.array([1, 0, 0, 1]) / math.sqrt(2)
    c1 = np.array([0, 1, 1, 0]) / math.sqrt(2)
    assert kl_residual((c0, c1), ident) == 0.0
    k = tomography_kraus(build_qudit_model(Fraction(3, 2)), NOISE, 500e-9)
    assert kl_offdiagonal((c0, c1), k) == 0.0


def test_single_error_optimization_is_exact():
    k = tomography_kraus(build_qudit_model(Fraction(5, 2)), NOISE, 500e-9)
    code = optimize_codewords(k, ((0, 3, 4), (1, 2, 5)), K=1, restarts=2)
    assert code.kl_residual < 1e-12


def test_optimization_failure_reports_best():
    k = tomography_kraus(build_qudit_model(Fraction(3, 2)), NOISE, 5e-6)
    with pytest.raises(OptimizationFailure) as info:
        optimize_codewords(k, ((0,), (1,)), K=2, restarts=1)
    assert info.value.best.kl_residual > 1e-6


def test_supports_must_be_disjoint():
    k = tomography_kraus(build_qudit_model(Fraction(3, 2)), NOISE, 500e-9)
    with pytest.raises(InvalidArgument):
        optimize_codewords(k, ((0, 1), (1, 2)))


def test_optimization_is_deterministic():
    m = build_qudit_model(Fraction(3, 2))
    a, _ = build_code(m, NOISE, 500e-9, restarts=4, seed=7)
    b, _ = build_code(m, NOISE, 500e-9, restarts=4, seed=7)
    assert a.dumps() == b.dumps()
    assert all(np.array_equal(x, y) for x, y in zip(a.codewords, b.codewords))


@pytest.mark.parametrize("S", SPINS)
def test_error_words(S, systems):
    code = systems(S).code
    d, n = code.dim, code.n_errors
    A = code.A
    assert A.shape == (d, d)
    assert np.max(np.abs(A.conj().T @ A - np.eye(d))) < 1e-10
    for l in (0, 1):
        assert abs(np.vdot(code.word(l, 0), code.codewords[l])) > 0.999
        assert set(np.flatnonzero(np.abs(code.word(l, 0)) > 1e-12)) <= set(code.supports[l])
    projectors = [sum(np.outer(code.word(l, k), code.word(l, k).conj()) for l in (0, 1)) for k in range(n)]
    for i, P in enumerate(projectors):
        assert np.allclose(P @ P, P, atol=1e-10)
        for Q in projectors[i + 1:]:
            assert np.max(np.abs(P @ Q)) < 1e-10
    assert np.allclose(sum(projectors), np.eye(d), atol=1e-10)


def test_five_halves_has_six_error_words(systems):
    assert systems(Fraction(5, 2)).code.A.shape[1] == 6


def test_degenerate_kraus_detected():
    c0 = np.array([1, 0, 0, 1]) / math.sqrt(2)
    c1 = np.array([0, 1, 1, 0]) / math.sqrt(2)
    code = CodeSpace(Fraction(3, 2), ((0, 3), (1, 2)), (c0, c1), 0.0)
    k = KrausSet((np.eye(4, dtype=complex) * 0.9, np.eye(4, dtype=complex) * 0.1), 1.0)
    with pytest.raises(DegenerateCodeError) as info:
        build_error_words(code, k)
    assert info.value.k == 1


def test_code_round_trip(systems):
    code = systems(Fraction(7, 2)).code
    back = CodeSpace.loads(code.dumps())
    assert back.dumps() == code.dumps()
    assert all(np.array_equal(x, y) for x, y in zip(back.codewords, code.codewords))
    assert np.array_equal(back.A, code.A)


def test_reference_tables():
    t = load_reference_tables()
    assert set(t) == set(SPINS)
    assert t[Fraction(7, 2)].kraus_rows[1][0] == -2.9842e-2
    assert t[Fraction(3, 2)].word(1, 0)[0] == 9.2188e-1
    norms = [v for tab in t.values() for v in tab.row_norms().values()]
    assert all(n > 0 for n in norms)
    assert math.isfinite(t[Fraction(3, 2)].kl_diagnostic())


def test_reference_table_checksum(tmp_path, monkeypatch):
    src = resources.files("qusense.data")
    for name in ("reference_tables.json", "reference_tables.sha256"):
        shutil.copy(src.joinpath(name), tmp_path / name)
    raw = (tmp_path / "reference_tables.json").read_bytes()
    (tmp_path / "reference_tables.json").write_bytes(raw.replace(b"0.92188", b"0.92189"))
    monkeypatch.setattr(codes.resources, "files", lambda pkg: tmp_path)
    with pytest.raises(DataCorruptionError):
        load_reference_tables()


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SPINS), st.integers(0, 2**31))
def test_disjoint_supports_have_no_offdiagonal_kl(S, seed):
    m = build_qudit_model(S)
    k = tomography_kraus(m, NOISE, 500e-9)
    rng = np.random.default_rng(seed)
    c = []
    for sup in m.parity_blocks():
        v = np.zeros(m.dim, dtype=complex)
        v[list(sup)] = rng.normal(size=len(sup)) + 1j * rng.normal(size=len(sup))
        c.append(v / np.linalg.norm(v))
    assert kl_offdiagonal(c, k) == 0.0
    assert kl_residual(c, k) >= 0.0
