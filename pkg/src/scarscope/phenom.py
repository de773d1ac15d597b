"""Phenomenological scar model: Dicke tower, revivals, early OTOC growth."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .evolve import diagonalize, propagate_spectral, spectral_series
from .hilbert import StateVector, full_basis
from .operators import local_operator
from .scramble import otoc_series

FIT_LOW = 1e-8
FIT_HIGH = 1e-2
POST_FRONT = 0.5

# columns: |-x>, |+x> written in the (down, up) z basis
_X_TO_Z = np.array([[1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(2.0)


class PhenomError(ValueError):
    pass


@dataclass
class DickeTower:
    L: int
    states: np.ndarray          # (2**L, L+1), column k has m_x = k - L/2
    m_x: np.ndarray

    def vector(self, k):
        return StateVector(self.states[:, k], full_basis(self.L))


def _popcount(n, L):
    x = np.arange(n, dtype=np.int64)
    c = np.zeros(n, dtype=np.int64)
    for b in range(L):
        c += (x >> b) & 1
    return c


def _x_to_z(vec, L):
    t = vec.reshape((2,) * L)
    for ax in range(L):
        t = np.moveaxis(np.tensordot(_X_TO_Z, t, axes=([1], [ax])), 0, ax)
    return t.reshape(-1)


def dicke_tower(L):
    """The L+1 permutation-symmetric states with definite total S^x."""
    if not 1 <= L <= 14:
        raise PhenomError("Dicke tower limited to L <= 14")
    n = 1 << L
    plus = _popcount(n, L)      # bit 1 in the x-label means +x
    cols = []
    for k in range(L + 1):
        v = (plus == k).astype(float) / np.sqrt(comb(L, k, exact=True))
        cols.append(_x_to_z(v, L))
    states = np.stack(cols, axis=1).astype(np.complex128)
    return DickeTower(L, states, np.arange(L + 1) - L / 2.0)


def total_spin(L, axis):
    """Total S^axis = (1/2) sum sigma^axis as a sparse matrix."""
    b = full_basis(L)
    return 0.5 * sum(local_operator(b, s, axis).matrix for s in range(1, L + 1))


@dataclass
class TowerReport:
    residuals: np.ndarray
    m_x: np.ndarray
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.all(self.residuals <= self.tol))

    @property
    def max_residual(self):
        return float(np.max(self.residuals))


def verify_scar_tower(H, tower, omega, tol=1e-8):
    """Residuals ||H v - m_x Omega v|| for every tower state."""
    if H.basis.L != tower.L:
        raise PhenomError("tower and Hamiltonian disagree on L")
    hv = H.matrix @ tower.states
    res = np.linalg.norm(hv - tower.states * (tower.m_x * omega)[None, :], axis=0)
    return TowerReport(res, tower.m_x.copy(), tol)


def tower_census(H, tower, decomp=None, floor=0.5):
    """Scar census using the weight of each eigenstate in the Dicke subspace.

    The weight sum_m |<D_m|E_n>|^2 is 1 on tower states and round-off
    elsewhere, so a scalar floor separates them cleanly. Returns
    ScarDiagnostics with flags set (entropies across the half-chain cut).
    """
    from .scars import ScarDiagnostics, classify_scars, half_chain_entropies, merge_multiplets
    decomp = decomp if decomp is not None else diagonalize(H)
    c = decomp.coefficients(tower.states)
    weight = np.sum(np.abs(c) ** 2, axis=1)
    ent = half_chain_entropies(decomp.vectors, decomp.basis)
    e, o, s, m = merge_multiplets(decomp.energies, weight, ent, 1e-8)
    diag = ScarDiagnostics(e, o, s, m, meta=dict(overlap="dicke-subspace weight"))
    classify_scars(diag, overlap_floor=floor)
    return diag


def all_up(L):
    b = full_basis(L)
    amp = np.zeros(b.dim, dtype=np.complex128)
    amp[-1] = 1.0
    return StateVector(amp, b)


def revival_fidelity(H, psi=None, times=None, decomp=None):
    """|<psi|psi(t)>|^2 under exact propagation (default psi = all up)."""
    if H.basis.L > 12:
        raise PhenomError("revival_fidelity limited to L <= 12")
    psi = all_up(H.basis.L) if psi is None else psi
    decomp = decomp if decomp is not None else diagonalize(H)
    series = spectral_series(decomp, psi.amplitudes, np.asarray(times, dtype=float))
    return np.abs(psi.amplitudes.conj() @ series) ** 2


def xz_otoc(H, r, times, decomp=None):
    """F(r, t) with W = sigma^x_1, V = sigma^z_r and psi = all up."""
    L = H.basis.L
    if not 2 <= r <= L:
        raise PhenomError(f"r must lie in 2..{L}")
    return otoc_series(H, all_up(L), 1, r, "x", "z", times, decomp=decomp)


def special_time_identity(H, r, n, omega, decomp=None):
    """Both sides of F(r, nT/2) = (-1)^n <phi|sigma^z_r|phi>, T = 2 pi / Omega.

    |phi(t)> = e^{-iH't} sigma^x_1 |all up>.
    """
    t = n * np.pi / omega
    decomp = decomp if decomp is not None else diagonalize(H)
    F = xz_otoc(H, r, [t], decomp=decomp).values[0, 0]
    basis = H.basis
    phi = propagate_spectral(decomp, local_operator(basis, 1, "x").matrix @ all_up(basis.L).amplitudes, t)
    z = local_operator(basis, r, "z").matrix
    rhs = (-1) ** n * np.vdot(phi, z @ phi)
    return complex(F), complex(rhs)


@dataclass
class EarlyGrowth:
    r: int
    J: float
    a: float
    slope: float
    slope_intercept: float
    times: np.ndarray
    deviation: np.ndarray
    window: np.ndarray
    rms_log_residual: float
    leading_power_ok: bool
    meta: dict = field(default_factory=dict)


def early_growth_check(H, r, times, J=1.0, fit_window=None, decomp=None,
                       band=(FIT_LOW, FIT_HIGH)):
    """Fit 1 - Re F(r, t) to (a J t / r)^r on the pre-front window.

    ``fit_window`` is an optional (t_min, t_max) interval; by default the fit
    uses every time with band[0] <= 1 - Re F <= band[1]. Returns the fitted
    constant a, the free log-log slope over the window and whether that slope
    is at least r - 0.5.
    """
    if r < 4:
        raise PhenomError("early-growth check needs r >= 4")
    times = np.asarray(times, dtype=float)
    f = xz_otoc(H, r, times, decomp=decomp)
    dev = 1.0 - np.real(f.values[0])
    if fit_window is not None:
        lo, hi = fit_window
        sel = (times >= lo) & (times <= hi) & (times > 0)
        if np.any(dev[sel] > POST_FRONT):
            raise PhenomError("fit window reaches past the wavefront (1 - F > 0.5)")
        sel &= dev > 0
    else:
        sel = (dev >= band[0]) & (dev <= band[1]) & (times > 0)
        # keep only the initial stretch: stop at the first point above the band
        first_out = np.flatnonzero((dev > band[1]) & (times > 0))
        if len(first_out):
            sel &= times < times[first_out[0]]
    if sel.sum() < 3:
        raise PhenomError(f"only {int(sel.sum())} points inside the fit window")
    lt, ld = np.log(times[sel]), np.log(dev[sel])
    slope, icpt = np.polyfit(lt, ld, 1)
    # fixed power r: log dev = r log(a J / r) + r log t
    log_ajr = np.mean(ld - r * lt) / r
    a = float(np.exp(log_ajr) * r / J)
    resid = ld - r * (lt + log_ajr)
    # power at least r: the deviation is no larger than the power-r law
    # allows at small t
    within = bool(slope >= r - 0.5)
    return EarlyGrowth(r, J, a, float(slope), float(icpt), times, dev, sel,
                       float(np.sqrt(np.mean(resid ** 2))), within,
                       meta=dict(band=list(band), fit_window=fit_window))
