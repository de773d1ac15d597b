import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarscope.evolve import diagonalize, diagonalize_sectors
from scarscope.hilbert import (BasisError, StateVector, build_basis, full_basis, neel_state,
                               product_state, zero_state)
from scarscope.operators import build_pxp
from scarscope.scars import (ScarDiagnostics, classify_scars, dense_half_chain_entropy,
                             eigen_overlaps, eigenstate, half_chain_entropies,
                             half_chain_entropy, scar_band_eigenstates, scar_diagnostics,
                             sector_scar_diagnostics, thermal_eigenstate,
                             thermal_entropy_median)


@pytest.fixture(scope="module")
def pxp12():
    b = build_basis(12)
    H = build_pxp(b)
    return b, H, diagonalize(H)


def test_entropy_examples():
    b = full_basis(4)
    assert half_chain_entropy(product_state(b, 0b0101)) == 0.0
    amps = np.zeros(16, complex)
    amps[[0b1010, 0b0101]] = 1 / np.sqrt(2)
    cat = StateVector(amps, b)
    assert abs(half_chain_entropy(cat) - 1.0) < 1e-14
    assert abs(dense_half_chain_entropy(cat) - 1.0) < 1e-14
    assert half_chain_entropy(neel_state(build_basis(10))) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 11), st.integers(0, 2 ** 31 - 1))
def test_scatter_layout_matches_dense_reshaping(L, seed):
    b = build_basis(L)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    psi = StateVector(v / np.linalg.norm(v), b)
    assert abs(half_chain_entropy(psi) - dense_half_chain_entropy(psi)) < 1e-10


def test_batched_entropies(pxp12):
    b, _, d = pxp12
    ent = half_chain_entropies(d.vectors[:, :40], b)
    for n in (0, 17, 39):
        assert abs(ent[n] - dense_half_chain_entropy(eigenstate(d, n))) < 1e-10


def test_overlaps_complete(pxp12):
    b, H, d = pxp12
    for ref in (neel_state(b), zero_state(b)):
        assert abs(eigen_overlaps(d, ref).sum() - 1) < 1e-12
    with pytest.raises(BasisError):
        eigen_overlaps(d, neel_state(build_basis(12, "periodic")))


def test_sector_routes_agree():
    # two independent diagonalisations: eigh per mirror sector, SVD of the chiral block
    b = build_basis(14)
    H = build_pxp(b)
    a = sector_scar_diagnostics(H, neel_state(b))
    c = scar_diagnostics(diagonalize_sectors(H), neel_state(b))
    assert len(a) == len(c)
    np.testing.assert_allclose(a.energies, c.energies, atol=1e-10)
    np.testing.assert_allclose(a.overlaps, c.overlaps, atol=1e-12)
    np.testing.assert_array_equal(a.multiplicity, c.multiplicity)
    single = a.multiplicity == 1
    np.testing.assert_allclose(a.entropies[single], c.entropies[single], atol=1e-8)
    assert abs(a.overlaps.sum() - 1) < 1e-12


def test_dense_and_sector_diagnostics_agree(pxp12):
    b, H, d = pxp12
    a = scar_diagnostics(d, neel_state(b))
    c = sector_scar_diagnostics(H, neel_state(b))
    np.testing.assert_allclose(a.overlaps, c.overlaps, atol=1e-12)
    single = a.multiplicity == 1
    np.testing.assert_allclose(a.entropies[single], c.entropies[single], atol=1e-8)


def test_multiplets_are_merged(pxp12):
    b, _, d = pxp12
    diag = scar_diagnostics(d, neel_state(b))
    assert diag.multiplicity.sum() == b.dim
    assert np.all(np.diff(diag.energies) > 1e-8)
    # zero modes of the chiral PXP spectrum form one row
    zero = np.argmin(np.abs(diag.energies))
    assert diag.multiplicity[zero] > 1


def test_flags_invariant_under_eigenvector_phases(pxp12):
    b, _, d = pxp12
    ref = neel_state(b)
    base = scar_diagnostics(d, ref)
    classify_scars(base)
    rng = np.random.default_rng(1)
    d2 = type(d)(d.energies, d.vectors * np.exp(2j * np.pi * rng.random(b.dim)), d.basis)
    other = scar_diagnostics(d2, ref)
    classify_scars(other)
    np.testing.assert_array_equal(base.scar_flag, other.scar_flag)


def test_single_nonzero_overlap():
    n = 50
    o = np.zeros(n)
    o[20] = 1.0
    diag = ScarDiagnostics(np.linspace(-1, 1, n), o, np.zeros(n), np.ones(n, int))
    flags = classify_scars(diag)
    assert flags.sum() == 1 and flags[20]


def test_few_flags_warn(caplog):
    rng = np.random.default_rng(0)
    o = rng.random(100) * 1e-3
    o[40] = 0.5
    diag = ScarDiagnostics(np.linspace(-3, 3, 100), o, np.zeros(100), np.ones(100, int))
    with caplog.at_level(logging.WARNING):
        classify_scars(diag)
    assert diag.status == "warning" and diag.n_scars == 1
    assert "unreliable" in caplog.text


def test_scalar_floor_and_rung_filter():
    e = np.linspace(-5, 5, 201)
    o = np.full(201, 1e-4)
    towers = [20, 60, 100, 140, 180]
    o[towers] = 0.1
    o[[61, 99]] = 0.05        # companions sharing a rung
    diag = ScarDiagnostics(e, o, np.zeros(201), np.ones(201, int))
    assert classify_scars(diag).sum() == 7
    flags = classify_scars(diag, rung_halfwidth=0.5)
    np.testing.assert_array_equal(np.flatnonzero(flags), towers)
    assert classify_scars(diag, overlap_floor=0.07).sum() == 5
    assert diag.meta["floor_rule"] == "scalar"


def test_thermal_states_more_entangled_than_scar_band():
    L = 16
    b = build_basis(L)
    d = diagonalize_sectors(build_pxp(b))
    ref = neel_state(b)
    band = scar_band_eigenstates(d, ref)
    assert len(band) == L + 1
    k = thermal_eigenstate(d, ref, energy=0.0, exclude=band)
    assert abs(d.energies[k]) < 0.1
    s_thermal = half_chain_entropy(eigenstate(d, k))
    # the exact zero mode in the band is one of the degenerate OBC outliers
    regular = [n for n in band if abs(d.energies[n]) > 1e-8]
    assert len(regular) == L
    assert all(half_chain_entropy(eigenstate(d, n)) < s_thermal for n in regular)


def test_thermal_median_excludes_flags():
    n = 60
    ent = np.full(n, 4.0)
    ent[30] = 0.5
    o = np.full(n, 1e-3)
    o[30] = 0.5
    diag = ScarDiagnostics(np.linspace(-1, 1, n), o, ent, np.ones(n, int))
    classify_scars(diag)
    assert thermal_entropy_median(diag, 30) == 4.0
