import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from scarscope.evolve import (EvolutionError, choose_method, diagonalize,
                              diagonalize_sectors, expectation, krylov_series, propagate_krylov, propagate_spectral,
                              spectral_series)
from scarscope.hilbert import PERIODIC, build_basis, full_basis, neel_state, zero_state
from scarscope.operators import build_pxp, build_rydberg
from scarscope.hilbert import StateVector


@pytest.fixture(scope="module")
def pxp10():
    b = build_basis(10)
    H = build_pxp(b)
    return H, diagonalize(H), sla.expm(-1j * 0.7 * H.toarray())


def test_spectral_matches_expm(pxp10):
    H, d, U = pxp10
    psi = neel_state(H.basis)
    out = propagate_spectral(d, psi, 0.7)
    assert isinstance(out, StateVector)
    np.testing.assert_allclose(out.amplitudes, U @ psi.amplitudes, atol=1e-12)


def test_krylov_matches_expm(pxp10):
    H, _, U = pxp10
    psi = neel_state(H.basis).amplitudes
    np.testing.assert_allclose(propagate_krylov(H, psi, 0.7), U @ psi, atol=1e-11)


def test_krylov_block_columns(pxp10):
    H, _, U = pxp10
    rng = np.random.default_rng(1)
    blk = rng.normal(size=(H.dim, 3)) + 1j * rng.normal(size=(H.dim, 3))
    np.testing.assert_allclose(propagate_krylov(H, blk, 0.7), U @ blk, atol=1e-10)


def test_krylov_backward_and_zero(pxp10):
    H, _, U = pxp10
    psi = zero_state(H.basis).amplitudes
    fwd = propagate_krylov(H, psi, 0.7)
    np.testing.assert_allclose(propagate_krylov(H, fwd, -0.7), psi, atol=1e-11)
    np.testing.assert_array_equal(propagate_krylov(H, psi, 0.0), psi)


def test_series_agree(pxp10):
    H, d, _ = pxp10
    psi = neel_state(H.basis)
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(krylov_series(H, psi, t), spectral_series(d, psi, t),
                               atol=1e-10)


def test_energy_conservation(pxp10):
    H, d, _ = pxp10
    psi = neel_state(H.basis)
    e0 = expectation(H, psi)
    for t in (1.0, 10.0, 33.3):
        assert abs(expectation(H, propagate_spectral(d, psi, t)) - e0) < 1e-12


def test_small_krylov_space_subdivides():
    # a tight tolerance with a tiny subspace forces the step-halving path
    H = build_rydberg(6, 2.0, 0.0, 12.0, 0.0)
    psi = np.zeros(64, dtype=complex)
    psi[0] = 1
    ref = sla.expm(-1j * 0.5 * H.toarray()) @ psi
    out = propagate_krylov(H, psi, 0.5, dt=0.5, m=4, tol=1e-10)
    np.testing.assert_allclose(out, ref, atol=1e-8)


def test_nonconvergence_raises():
    H = build_rydberg(6, 2.0, 0.0, 1e6, 0.0)
    psi = np.ones(64, dtype=complex) / 8
    with pytest.raises(EvolutionError) as err:
        propagate_krylov(H, psi, 1.0, dt=1.0, m=2, tol=1e-30)
    assert "tau" in err.value.diagnostics


def test_bad_arguments(pxp10):
    H, _, _ = pxp10
    psi = neel_state(H.basis)
    with pytest.raises(ValueError):
        propagate_krylov(H, psi, 1.0, dt=0)
    with pytest.raises(ValueError):
        choose_method(H, "magic")
    assert choose_method(H) == "spectral"


def test_basis_mismatch(pxp10):
    H, d, _ = pxp10
    with pytest.raises(ValueError):
        propagate_spectral(d, neel_state(build_basis(10, PERIODIC)), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-8, 8), st.integers(0, 2 ** 31 - 1))
def test_unitarity_and_group_law(t, seed):
    b = build_basis(8)
    H = build_pxp(b)
    d = diagonalize(H)
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    psi /= np.linalg.norm(psi)
    a = propagate_krylov(H, psi, t)
    assert abs(np.linalg.norm(a) - 1) < 1e-12
    np.testing.assert_allclose(propagate_spectral(d, a, -t), psi, atol=1e-10)


@pytest.mark.parametrize("L,boundary", [(10, "open"), (11, "open"), (10, PERIODIC)])
def test_sector_decomposition_matches_dense(L, boundary):
    H = build_pxp(build_basis(L, boundary))
    d, s = diagonalize(H), diagonalize_sectors(H)
    assert s.chiral
    np.testing.assert_allclose(s.energies, d.energies, atol=1e-12)
    psi = neel_state(H.basis) if boundary == "open" or L % 2 == 0 else zero_state(H.basis)
    np.testing.assert_allclose(propagate_spectral(s, psi, 2.7).amplitudes,
                               propagate_spectral(d, psi, 2.7).amplitudes, atol=1e-12)
    # projector onto each eigenvalue agrees, whatever basis a multiplet has
    rng = np.random.default_rng(L)
    v = rng.normal(size=H.dim)
    np.testing.assert_allclose(np.abs(s.coefficients(v)) ** 2 @ s.energies,
                               v @ H.matrix @ v, atol=1e-10)
    np.testing.assert_allclose(s.synthesize(s.coefficients(v)), v, atol=1e-12)


def test_sector_decomposition_full_space():
    H = build_rydberg(7, 2.0, 0.38, 12.0, 0.19)
    s = diagonalize_sectors(H)
    assert not s.chiral
    np.testing.assert_allclose(s.energies, diagonalize(H).energies, atol=1e-12)
    H = H.matrix @ sp.diags(np.arange(128.0))
    from scarscope.operators import SparseOperator
    with pytest.raises(ValueError):
        diagonalize_sectors(SparseOperator(H + H.T, full_basis(7), label="lopsided"))
