"""OTOCs, squared commutators, single-site entropies and Holevo fields."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evolve import (KRYLOV_DIM, KRYLOV_DT, KRYLOV_TOL, _amplitudes, choose_method,
                     decompose, diagonalize, krylov_series, propagate_krylov, spectral_series)
from .hilbert import neel_config, product_state
from .operators import build_rydberg, local_operator, particle_hole_diagonal

NEG_EIG_TOL = 1e-10
UNDEFINED_NORM = 1e-12
BACKWARD_DT = 0.5
CHUNK = 48


class ScrambleError(ValueError):
    """Invalid scrambling request."""


@dataclass
class ScramblingField:
    """Values indexed (site, time) with run metadata."""

    kind: str
    sites: list
    times: np.ndarray
    values: np.ndarray
    flags: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = [int(s) for s in self.sites]
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.flags is None:
            self.flags = np.zeros(self.values.shape, dtype=bool)
        if self.values.shape != (len(self.sites), len(self.times)):
            raise ScrambleError("values shape does not match sites x times")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ScrambleError("times must be strictly increasing")

    def row(self, site):
        return self.values[self.sites.index(int(site))]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def default_threads():
    try:
        return max(1, int(os.environ.get("SCARSCOPE_THREADS", "1")))
    except ValueError:
        return 1


def _as_sites(j):
    if np.isscalar(j):
        return [int(j)]
    return [int(s) for s in j]


def _chunks(n, size):
    return [slice(a, min(n, a + size)) for a in range(0, n, size)]


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def otoc_series(H, psi, i, j, W_axis="z", V_axis="z", times=None, *,
                method="auto", decomp=None, threads=None, backward_dt=BACKWARD_DT,
                krylov_dt=KRYLOV_DT, krylov_dim=KRYLOV_DIM, tol=KRYLOV_TOL):
    """F_ij(t) = <psi| W_i^+ V_j^+(t) W_i V_j(t) |psi> on a time grid.

    Evaluated as the overlap <psi2(t)|psi1(t)> with
    psi1 = W e^{iHt} V e^{-iHt} psi and psi2 = e^{iHt} V e^{-iHt} W psi.
    ``j`` may be one site or a list of sites. Points where an operator
    annihilates the propagated state are flagged as undefined.
    """
    basis = H.basis
    times = np.asarray(times, dtype=float)
    sites = _as_sites(j)
    amps = _amplitudes(psi, basis)
    if abs(np.linalg.norm(amps) - 1) > 1e-8:
        raise ScrambleError("initial state must be normalised")
    threads = threads or default_threads()
    W = local_operator(basis, i, W_axis).matrix
    Vs = [local_operator(basis, s, V_axis).matrix for s in sites]
    w_psi = W @ amps
    # psi an eigenvector of W (e.g. sigma^z on a product state): the second
    # branch is s * the first, halving the work
    s_eig = None
    for s in (1.0, -1.0):
        if np.linalg.norm(w_psi - s * amps) < 1e-12:
            s_eig = s
    method = choose_method(H, method) if decomp is None else "spectral"

    values = np.zeros((len(sites), len(times)), dtype=np.complex128)
    flags = np.zeros(values.shape, dtype=bool)
    if np.linalg.norm(w_psi) < UNDEFINED_NORM:
        flags[:] = True
    else:
        if method == "spectral":
            decomp = decomp if decomp is not None else decompose(H)
            engine = _SpectralOTOC(decomp, amps, w_psi, s_eig, W, Vs)
        else:
            engine = _KrylovOTOC(H, amps, w_psi, s_eig, W, Vs, times, backward_dt,
                                 krylov_dt, krylov_dim, tol)
        parts = _map(lambda sl: (sl, engine(times, sl)), _chunks(len(times), CHUNK), threads)
        for sl, (vals, flg) in parts:
            values[:, sl] = vals
            flags[:, sl] = flg
    meta = dict(model=H.label, basis=basis.tag, i=int(i), W=W_axis, V=V_axis,
                method=method, eigen_shortcut=s_eig is not None)
    if method == "krylov":
        meta.update(krylov_dt=krylov_dt, krylov_dim=krylov_dim, krylov_tol=tol,
                    backward_dt=backward_dt)
    return ScramblingField("otoc", sites, times, values, flags, meta)


class _SpectralOTOC:
    def __init__(self, decomp, amps, w_psi, s_eig, W, Vs):
        self.d = decomp
        self.amps, self.w_psi, self.s = amps, w_psi, s_eig
        self.W, self.Vs = W, Vs

    def _branch(self, start, tt):
        """Stack of e^{iHt} V_j e^{-iHt} start over (site, time), shape (n, S, T)."""
        d, E = self.d, self.d.energies
        c = d.coefficients(start)
        phi = d.synthesize(np.exp(-1j * np.outer(E, tt)) * c[:, None])
        stack = np.concatenate([V @ phi for V in self.Vs], axis=1)
        norms = np.linalg.norm(stack, axis=0)
        y = d.coefficients(stack)
        back = np.tile(np.exp(1j * np.outer(E, tt)), (1, len(self.Vs)))
        out = d.synthesize(back * y)
        return out.reshape(len(E), len(self.Vs), len(tt)), norms.reshape(len(self.Vs), len(tt))

    def __call__(self, times, sl):
        tt = times[sl]
        b1, n1 = self._branch(self.amps, tt)
        if self.s is not None:
            wb = np.stack([self.W @ b1[:, k, :] for k in range(b1.shape[1])], axis=1)
            vals = self.s * np.einsum("nst,nst->st", b1.conj(), wb)
            flags = n1 < UNDEFINED_NORM
        else:
            b2, n2 = self._branch(self.w_psi, tt)
            wb = np.stack([self.W @ b1[:, k, :] for k in range(b1.shape[1])], axis=1)
            vals = np.einsum("nst,nst->st", b2.conj(), wb)
            flags = (n1 < UNDEFINED_NORM) | (n2 < UNDEFINED_NORM)
        vals = np.where(flags, 0.0, vals)
        return vals, flags


class _KrylovOTOC:
    def __init__(self, H, amps, w_psi, s_eig, W, Vs, times, backward_dt, dt, m, tol):
        self.H, self.W, self.Vs, self.s = H, W, Vs, s_eig
        self.kw = dict(dt=backward_dt, m=m, tol=tol)
        self.phi = krylov_series(H, amps, times, dt=dt, m=m, tol=tol)
        self.phi_w = None if s_eig is not None else krylov_series(H, w_psi, times, dt=dt, m=m, tol=tol)

    def _back(self, phi_t, t):
        block = np.stack([V @ phi_t for V in self.Vs], axis=1)
        norms = np.linalg.norm(block, axis=0)
        return propagate_krylov(self.H, block, -t, **self.kw), norms

    def __call__(self, times, sl):
        idx = range(sl.start, sl.stop)
        vals = np.zeros((len(self.Vs), len(idx)), dtype=np.complex128)
        flags = np.zeros(vals.shape, dtype=bool)
        for col, k in enumerate(idx):
            t = times[k]
            b1, n1 = self._back(self.phi[:, k], t)
            wb = self.W @ b1
            if self.s is not None:
                vals[:, col] = self.s * np.einsum("ns,ns->s", b1.conj(), wb)
                flags[:, col] = n1 < UNDEFINED_NORM
            else:
                b2, n2 = self._back(self.phi_w[:, k], t)
                vals[:, col] = np.einsum("ns,ns->s", b2.conj(), wb)
                flags[:, col] = (n1 < UNDEFINED_NORM) | (n2 < UNDEFINED_NORM)
        vals = np.where(flags, 0.0, vals)
        return vals, flags


def squared_commutator(field):
    """C = 2 (1 - Re F), elementwise."""
    if field.kind != "otoc":
        raise ScrambleError("squared commutator needs an OTOC field")
    return 2.0 * (1.0 - np.real(field.values))


def direct_squared_commutator(H, psi, i, j, W_axis, V_axis, t, decomp=None):
    """|| [W_i, V_j(t)] psi ||^2 with dense matrices (small systems)."""
    basis = H.basis
    decomp = decomp if decomp is not None else diagonalize(H)
    U, E = decomp.vectors, decomp.energies
    Ut = (U * np.exp(-1j * E * t)) @ U.conj().T
    W = local_operator(basis, i, W_axis).toarray()
    V = local_operator(basis, j, V_axis).toarray()
    Vt = Ut.conj().T @ V @ Ut
    comm = W @ Vt - Vt @ W
    amps = _amplitudes(psi, basis)
    return float(np.linalg.norm(comm @ amps) ** 2)


# -- reduced density matrices and entropies ---------------------------------

def _site_pairs(basis, site):
    bit = site - 1
    states = basis.states
    up = np.flatnonzero((states >> bit) & 1)
    partner = basis.index(states[up] ^ (np.int64(1) << bit))
    return up, partner


def site_rdms(amps, basis, sites):
    """Single-site density matrices for columns of ``amps``.

    Returns an array of shape (len(sites), ncols, 2, 2) in the (down, up)
    ordering. Works directly on constrained amplitudes: flipping an up spin
    down is always blockade-legal, so every up configuration has a partner.
    """
    a = np.asarray(amps)
    squeeze = a.ndim == 1
    a = a.reshape(a.shape[0], -1)
    out = np.zeros((len(sites), a.shape[1], 2, 2), dtype=np.complex128)
    total = np.einsum("nk,nk->k", a.conj(), a).real
    for n, site in enumerate(sites):
        up, partner = _site_pairs(basis, site)
        p_up = np.einsum("nk,nk->k", a[up].conj(), a[up]).real
        off = np.einsum("nk,nk->k", a[partner], a[up].conj())
        out[n, :, 0, 0] = total - p_up
        out[n, :, 1, 1] = p_up
        out[n, :, 0, 1] = off
        out[n, :, 1, 0] = off.conj()
    return out[:, 0] if squeeze else out


def reduced_density(psi, j):
    """2x2 reduced density matrix of site ``j`` (1-indexed)."""
    return site_rdms(psi.amplitudes, psi.basis, [j])[0]


def _entropy_from_eigs(lam):
    lam = np.clip(np.real(lam), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0, -lam * np.log2(np.where(lam > 0, lam, 1.0)), 0.0)
    return terms.sum(axis=-1)


def von_neumann_entropy(rho):
    """-tr(rho log2 rho) in bits."""
    rho = np.asarray(rho)
    tr = np.trace(rho).real
    if abs(tr - 1) > 1e-6:
        raise ScrambleError(f"density matrix trace {tr:.8g} differs from 1")
    lam = np.linalg.eigvalsh(rho)
    if lam.min() < -NEG_EIG_TOL:
        raise ScrambleError(f"density matrix has negative eigenvalue {lam.min():.3g}")
    return float(_entropy_from_eigs(lam))


def _qubit_entropies(rhos):
    """Vectorised entropy of (..., 2, 2) Hermitian unit-trace matrices."""
    a = rhos[..., 0, 0].real
    d = rhos[..., 1, 1].real
    b = np.abs(rhos[..., 0, 1])
    tr = a + d
    disc = np.sqrt((a - d) ** 2 + 4 * b * b)
    lam = np.stack([(tr - disc) / 2, (tr + disc) / 2], axis=-1)
    if lam.min(initial=0.0) < -NEG_EIG_TOL:
        raise ScrambleError("negative eigenvalue in reduced density matrix")
    return _entropy_from_eigs(lam)


def holevo_from_rdms(rho, rho_p):
    """chi = S((rho + rho')/2) - (S(rho) + S(rho'))/2, any broadcast shape."""
    mix = _qubit_entropies((rho + rho_p) / 2)
    return mix - 0.5 * (_qubit_entropies(rho) + _qubit_entropies(rho_p))


def holevo_series(H, psi, encode_site, probe_sites, times, *, method="auto",
                  decomp=None, krylov_dt=KRYLOV_DT, krylov_dim=KRYLOV_DIM,
                  tol=KRYLOV_TOL):
    """Holevo information of the bit encoded by sigma^x at ``encode_site``."""
    basis = H.basis
    amps = _amplitudes(psi, basis)
    flipped = local_operator(basis, encode_site, "x").matrix @ amps
    if abs(np.linalg.norm(flipped) - 1) > 1e-10:
        raise ScrambleError(f"sigma^x at site {encode_site} is not a legal flip of this state")
    times = np.asarray(times, dtype=float)
    sites = _as_sites(probe_sites)
    method = choose_method(H, method) if decomp is None else "spectral"
    if method == "spectral":
        decomp = decomp if decomp is not None else decompose(H)
        evolve = lambda a: spectral_series(decomp, a, times)  # noqa: E731
    else:
        evolve = lambda a: krylov_series(H, a, times, dt=krylov_dt, m=krylov_dim, tol=tol)  # noqa: E731
    s1 = evolve(amps)
    s2 = evolve(flipped)
    r1 = site_rdms(s1, basis, sites)
    r2 = site_rdms(s2, basis, sites)
    chi = holevo_from_rdms(r1, r2)
    meta = dict(model=H.label, basis=basis.tag, encode_site=int(encode_site),
                method=method, entropy_base=2)
    return ScramblingField("holevo", sites, times, np.clip(chi, 0.0, None), None, meta)


# -- Rydberg measurement protocol --------------------------------------------

@dataclass(frozen=True)
class RydbergParams:
    L: int
    omega: float = 2.0
    delta: float = 0.0
    u1: float = 12.0
    u2: float = 0.0


def _initial_config(L, state):
    if state == "z2":
        return neel_config(L)
    if state == "zero":
        return 0
    raise ScrambleError(f"protocol needs a z2 or zero initial state, got {state!r}")


def rydberg_zz_protocol(params, state, i, j, times, *, decomp=None):
    """ZZ-OTOC via (-1)^{<n_i>+1} <Psi_j(t)| sigma^z_i |Psi_j(t)>.

    |Psi_j(t)> = e^{-iH_- t} sigma^z_j e^{-iH_+ t} |psi>, and the backward
    evolution uses e^{-iH_- t} = Pz e^{-iH_+ t} Pz with Pz = prod sigma^z.
    """
    L = params.L
    Hp = build_rydberg(L, params.omega, params.delta, params.u1, params.u2, +1)
    decomp = decomp if decomp is not None else decompose(Hp)
    basis = Hp.basis
    config = _initial_config(L, state)
    psi = product_state(basis, config).amplitudes
    n_i = (config >> (i - 1)) & 1
    sign = (-1.0) ** (n_i + 1)
    pz = particle_hole_diagonal(basis)
    zi = local_operator(basis, i, "z").matrix.diagonal().real
    sites = _as_sites(j)
    times = np.asarray(times, dtype=float)
    E = decomp.energies
    values = np.zeros((len(sites), len(times)), dtype=np.complex128)
    for sl in _chunks(len(times), CHUNK):
        tt = times[sl]
        fwd = spectral_series(decomp, psi, tt)
        for n, s in enumerate(sites):
            zj = local_operator(basis, s, "z").matrix.diagonal().real
            mid = (pz * zj)[:, None] * fwd
            back = decomp.synthesize(np.exp(-1j * np.outer(E, tt)) * decomp.coefficients(mid))
            big = pz[:, None] * back
            values[n, sl] = sign * np.einsum("nt,nt->t", big.conj(), zi[:, None] * big)
    meta = dict(model="rydberg", L=L, omega=params.omega, delta=params.delta,
                u1=params.u1, u2=params.u2, state=state, i=int(i), W="z", V="z",
                method="protocol")
    return ScramblingField("otoc", sites, times, values, None, meta)


def rydberg_direct_otoc(params, state, i, j, times, *, decomp=None, decomp_minus=None):
    """Four-operator ZZ echo <psi| W V~^+ W V~ |psi>, V~ = e^{-iH_- t} V_j e^{-iH_+ t}.

    Both propagators come from their own diagonalisations (H_- is built with
    the negative Rabi sign, no particle-hole trick), and no eigenstate
    shortcut is taken, so this is an independent route to the protocol value.
    """
    L = params.L
    Hp = build_rydberg(L, params.omega, params.delta, params.u1, params.u2, +1)
    Hm = build_rydberg(L, params.omega, params.delta, params.u1, params.u2, -1)
    dp = decomp if decomp is not None else decompose(Hp)
    dm = decomp_minus if decomp_minus is not None else decompose(Hm)
    basis = Hp.basis
    psi = product_state(basis, _initial_config(L, state)).amplitudes
    W = local_operator(basis, i, "z").matrix
    w_psi = W @ psi
    sites = _as_sites(j)
    times = np.asarray(times, dtype=float)
    values = np.zeros((len(sites), len(times)), dtype=np.complex128)
    for sl in _chunks(len(times), CHUNK):
        tt = times[sl]
        f1 = spectral_series(dp, psi, tt)
        f2 = spectral_series(dp, w_psi, tt)
        for n, s in enumerate(sites):
            V = local_operator(basis, s, "z").matrix
            a = _backward_minus(dm, V @ f1, tt)          # V~ psi
            b = _backward_minus(dm, V @ f2, tt)          # V~ W psi
            values[n, sl] = np.einsum("nt,nt->t", b.conj(), W @ a)
    meta = dict(model="rydberg", L=L, omega=params.omega, delta=params.delta,
                u1=params.u1, u2=params.u2, state=state, i=int(i), W="z", V="z",
                method="direct-echo")
    return ScramblingField("otoc", sites, times, values, None, meta)


def _backward_minus(dm, block, tt):
    # column k propagated by e^{-iH_- t_k}
    return dm.synthesize(np.exp(-1j * np.outer(dm.energies, tt)) * dm.coefficients(block))


def rydberg_ideal_otoc(params, state, i, j, times, *, decomp=None):
    """ZZ-OTOC under H_+ with exact time reversal e^{+iH_+ t}.

    Equals the protocol value only when H_- = -H_+; the difference measures
    the error of the particle-hole echo for the given parameters.
    """
    Hp = build_rydberg(params.L, params.omega, params.delta, params.u1, params.u2, +1)
    decomp = decomp if decomp is not None else decompose(Hp)
    psi = product_state(Hp.basis, _initial_config(params.L, state))
    f = otoc_series(Hp, psi, i, j, "z", "z", times, decomp=decomp)
    f.meta.update(state=state, omega=params.omega, delta=params.delta,
                  u1=params.u1, u2=params.u2, method="ideal")
    return f
