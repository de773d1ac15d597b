import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from scarscope import tensornet as tn
from scarscope.evolve import diagonalize
from scarscope.hilbert import build_basis, full_basis, neel_config, neel_state
from scarscope.operators import build_pxp, build_rydberg, local_operator
from scarscope.scramble import holevo_series, otoc_series, site_rdms


def random_state(L, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
    return v / np.linalg.norm(v)


def test_dense_roundtrip_and_canonical_form():
    v = random_state(8, 0)
    mps = tn.mps_from_dense(v, 8)
    np.testing.assert_allclose(tn.mps_to_dense(mps), v, atol=1e-13)
    tn.canonicalize(mps, 3)
    assert tn.isometry_defects(mps).max() < 1e-13
    assert abs(tn.norm(mps) - 1) < 1e-13
    np.testing.assert_allclose(tn.mps_to_dense(mps), v, atol=1e-13)


def test_product_state_bits():
    mps = tn.mps_from_product("10100", 5)
    dense = tn.mps_to_dense(mps)
    assert dense[0b10100] == 1 and np.count_nonzero(dense) == 1
    assert np.allclose(tn.mps_to_dense(tn.mps_from_product([1, 0, 1, 0, 0])), np.eye(32)[0b00101])
    with pytest.raises(tn.TensorNetError):
        tn.mps_from_product(5)


def test_overlap_matches_dense():
    a, b = random_state(7, 1), random_state(7, 2)
    assert abs(tn.overlap(tn.mps_from_dense(a, 7), tn.mps_from_dense(b, 7)) - np.vdot(a, b)) < 1e-13


def test_model_dense_matches_exact_builders():
    L = 8
    b = build_basis(L)
    H = tn.model_dense(tn.pxp_model(L))
    np.testing.assert_allclose(H[np.ix_(b.states, b.states)], build_pxp(b).toarray(), atol=1e-14)
    R = tn.model_dense(tn.rydberg_model(L, 2.0, 0.38, 12.0, 0.19))
    np.testing.assert_allclose(R, build_rydberg(L, 2.0, 0.38, 12.0, 0.19).toarray(), atol=1e-13)


def test_trotter_layers_sum_to_time():
    for order in (2, 4):
        lay = tn.trotter_layers(7, 0.05, order)
        for fam in range(3):
            assert abs(sum(t for f, t in lay if f == fam) - 0.35) < 1e-12
        assert all(a[0] != b[0] for a, b in zip(lay, lay[1:]))
    with pytest.raises(tn.TensorNetError):
        tn.trotter_layers(1, 0.1, 3)


@pytest.fixture(scope="module")
def pxp8():
    L = 8
    b = build_basis(L)
    H = build_pxp(b)
    return L, b, H, diagonalize(H), tn.pxp_model(L)


def test_tebd_against_exact(pxp8):
    L, b, H, d, m = pxp8
    exact = sla.expm(-1j * 4.0 * H.toarray()) @ neel_state(b).amplitudes
    errs = []
    for dt in (0.1, 0.05):
        res = tn.tebd_evolve(tn.mps_from_product(neel_config(L), L), m, 4.0, dt=dt)
        v = tn.mps_to_dense(res.mps)[b.states]
        errs.append(1 - abs(np.vdot(exact, v)) ** 2)
        assert res.meta["blockade_violation"] < 1e-12
    # halving dt cuts the second-order error by about 4 in amplitude terms
    assert errs[1] < errs[0] / 8
    res4 = tn.tebd_evolve(tn.mps_from_product(neel_config(L), L), m, 4.0, dt=0.05, order=4)
    v = tn.mps_to_dense(res4.mps)[b.states]
    assert 1 - abs(np.vdot(exact, v)) ** 2 < 1e-10


def test_tebd_step_bounds(pxp8):
    L, _, _, _, m = pxp8
    psi = tn.mps_from_product(neel_config(L), L)
    with pytest.raises(tn.TensorNetError):
        tn.tebd_evolve(psi, m, 1.0, dt=0.2)


def test_blockade_monitor_trips():
    # Rydberg dynamics without interactions leaves the blockade subspace
    m = tn.rydberg_model(6, 2.0, 0.0, 0.0, 0.0)
    pxp_like = tn.ChainModel("pxp", 6, m.terms, m.params)
    with pytest.raises(tn.TensorNetError):
        tn.tebd_evolve(tn.mps_from_product(0, 6), pxp_like, 1.0)


def test_single_site_rdms_exact():
    L = 10
    v = random_state(L, 3)
    mps = tn.mps_from_dense(v, L)
    rd = tn.single_site_rdms(mps)
    ref = site_rdms(v, full_basis(L), range(1, L + 1))
    np.testing.assert_allclose(rd, ref, atol=1e-12)
    np.testing.assert_allclose(tn.mps_single_site_rdm(mps, 4), ref[3], atol=1e-12)


def test_energy_expectation(pxp8):
    L, b, H, _, m = pxp8
    v = random_state(L, 4)
    e = np.vdot(v, tn.model_dense(m) @ v).real
    assert abs(tn.energy(tn.mps_from_dense(v, L), m) - e) < 1e-12


def test_operator_mpo_dense():
    M = tn.local_pauli_mpo(4, 2, "y")
    ref = local_operator(full_basis(4), 2, "y").toarray()
    np.testing.assert_allclose(tn.mpo_to_dense(M), ref, atol=1e-15)


def test_heisenberg_matches_dense(pxp8):
    L, _, _, _, m = pxp8
    Hd = tn.model_dense(m)
    U = sla.expm(-1j * 0.8 * Hd)
    V = tn.local_pauli_mpo(L, 3, "z", 256)
    tn.heisenberg_evolve(V, m, 0.8, dt=0.025, order=4)
    Z = local_operator(full_basis(L), 3, "z").toarray()
    np.testing.assert_allclose(tn.mpo_to_dense(V), U.conj().T @ Z @ U, atol=1e-7)
    assert V.mps.tensors[0].dtype == np.float64      # Hermitian operators stay real


def test_mirror_and_conjugate(pxp8):
    L, _, _, _, m = pxp8
    V = tn.local_pauli_mpo(L, 2, "x", 256)
    tn.heisenberg_evolve(V, m, 0.6, dt=0.05, order=4)
    D = tn.mpo_to_dense(V)
    rev = np.array([int(format(x, f"0{L}b")[::-1], 2) for x in range(1 << L)])
    np.testing.assert_allclose(tn.mpo_to_dense(tn.mirror_mpo(V)), D[np.ix_(rev, rev)], atol=1e-14)
    np.testing.assert_allclose(tn.mpo_to_dense(tn.conjugate_mpo(V)), D.conj(), atol=1e-14)
    # real H: conj(V(t)) = V(-t)
    back = tn.local_pauli_mpo(L, 2, "x", 256)
    tn.heisenberg_evolve(back, m, -0.6, dt=0.05, order=4)
    np.testing.assert_allclose(tn.mpo_to_dense(back), D.conj(), atol=1e-7)


def test_apply_mpo(pxp8):
    L = 7
    v = random_state(L, 5)
    M = tn.local_pauli_mpo(L, 4, "x")
    out, lost = tn.apply_mpo(M, tn.mps_from_dense(v, L), 64)
    np.testing.assert_allclose(tn.mps_to_dense(out), tn.mpo_to_dense(M) @ v, atol=1e-12)
    assert lost < 1e-20


def test_mpo_otoc_against_ed(pxp8):
    L, b, H, d, m = pxp8
    times = np.arange(0, 4.01, 0.5)
    ed = otoc_series(H, neel_state(b), 4, range(1, L + 1), "z", "z", times, decomp=d)
    f = tn.otoc_mpo_timesplit(m, neel_config(L), 4, range(1, L + 1), "z", "z", times,
                              chi_max=128, dt=0.05, order=4)
    assert np.abs(f.values - ed.values).max() < 1e-5
    assert not f.flags.any()
    assert f.meta["evolved_operators"] == 4


def test_mpo_otoc_offdiagonal_full_space():
    L = 6
    H = build_rydberg(L, 2.0, 0.2, 3.0, 0.1)
    m = tn.rydberg_model(L, 2.0, 0.2, 3.0, 0.1)
    from scarscope.hilbert import product_state
    psi = product_state(H.basis, neel_config(L))
    times = np.arange(0, 3.01, 0.5)
    ed = otoc_series(H, psi, 2, range(1, L + 1), "y", "x", times)
    f = tn.otoc_mpo_timesplit(m, neel_config(L), 2, range(1, L + 1), "y", "x", times,
                              chi_max=64, dt=0.025, order=4)
    assert np.abs(f.values - ed.values).max() < 1e-5


def test_otoc_grid_must_fit_steps(pxp8):
    L, _, _, _, m = pxp8
    with pytest.raises(tn.TensorNetError):
        tn.otoc_mpo_timesplit(m, neel_config(L), 4, [5], times=[0, 0.13], dt=0.05)


def test_holevo_tebd_against_ed(pxp8):
    L, b, H, d, m = pxp8
    times = np.arange(0, 6.01, 0.5)
    ed = holevo_series(H, neel_state(b), 3, range(1, L + 1), times, decomp=d)
    h = tn.holevo_tebd(m, neel_config(L), 3, range(1, L + 1), times, order=4)
    assert np.abs(h.values - ed.values).max() < 1e-6
    with pytest.raises(tn.TensorNetError):
        tn.holevo_tebd(m, neel_config(L), 2, [1], times)


def test_truncation_reports_discarded_weight():
    v = random_state(10, 6)
    mps = tn.mps_from_dense(v, 10)
    mps.chi_max = 4
    m = tn.rydberg_model(10, 1.0, 0.0, 0.0, 0.0)
    res = tn.tebd_evolve(mps, m, 0.1, dt=0.05, monitor=False)
    assert max(res.mps.bonds()) <= 4
    assert res.meta["discarded_weight"] > 0
    assert not res.meta["converged"]


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 9), st.integers(0, 2 ** 31 - 1))
def test_canonical_isometries(L, seed):
    mps = tn.mps_from_dense(random_state(L, seed), L)
    c = seed % L
    tn.canonicalize(mps, c)
    assert tn.isometry_defects(mps).max() < 1e-12
    rd = tn.single_site_rdms(mps)
    assert np.allclose(np.trace(rd, axis1=1, axis2=2), 1.0)
