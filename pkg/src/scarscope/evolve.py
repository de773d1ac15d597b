"""Exact and Krylov time propagation, eigendecompositions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.blas import zgemv as _zgemv

from .hilbert import BasisError, StateVector, inversion_sectors

log = logging.getLogger(__name__)

KRYLOV_DIM = 30
KRYLOV_DT = 0.05
KRYLOV_TOL = 1e-12
SPECTRAL_MAX_DIM = 4000
MAX_SUBDIVISIONS = 12


class EvolutionError(RuntimeError):
    """Propagation failed to converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class EigenDecomposition:
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    basis: object = field(repr=False)

    @property
    def basis_tag(self):
        return self.basis.tag

    @property
    def dim(self):
        return len(self.energies)

    def coefficients(self, psi):
        """Eigenbasis amplitudes <E_n|psi> (columns of a block independently)."""
        amps = _amplitudes(psi, self.basis)
        return _real_left_matmul(self.vectors.conj().T, amps)

    def synthesize(self, c):
        """Inverse of :meth:`coefficients`."""
        return _real_left_matmul(self.vectors, c)

    def vector(self, n):
        return self.vectors[:, n]


class SectorDecomposition:
    """Eigensystem assembled from the mirror sectors of H.

    Each sector is held separately, so no dense matrix of the full dimension
    ever exists. When H also anticommutes with the up-count parity (PXP), a
    sector is [[0, B], [B^T, 0]] in the (even, odd) split and the SVD
    B = X S Y^T gives the eigenpairs +-s with vectors (x, +-y)/sqrt2; unpaired
    columns of X or Y are zero modes.

    Energies are sorted; the interface matches :class:`EigenDecomposition`
    apart from the missing dense ``vectors``.
    """

    def __init__(self, basis, blocks):
        self.basis = basis
        self.blocks = blocks
        e = np.concatenate([b["energies"] for b in blocks])
        self.order = np.argsort(e, kind="stable")
        self.energies = e[self.order]
        self.chiral = all(b["kind"] == "chiral" for b in blocks)

    @property
    def basis_tag(self):
        return self.basis.tag

    @property
    def dim(self):
        return len(self.energies)

    def coefficients(self, psi):
        amps = _amplitudes(psi, self.basis)
        flat = amps.reshape(amps.shape[0], -1)
        parts = []
        for b in self.blocks:
            if b["kind"] == "chiral":
                p = _real_left_matmul(b["X"].T, b["Qe"].T @ flat)
                q = _real_left_matmul(b["Y"].T, b["Qo"].T @ flat)
                r = b["rank"]
                parts += [(p[:r] + q[:r]) / np.sqrt(2), (p[:r] - q[:r]) / np.sqrt(2),
                          p[r:], q[r:]]
            else:
                parts.append(_real_left_matmul(b["U"].T, b["Q"].T @ flat))
        c = np.concatenate(parts)[self.order]
        return c.reshape(amps.shape)

    def synthesize(self, c):
        c = np.asarray(c)
        flat = c.reshape(c.shape[0], -1)
        full = np.empty_like(flat, dtype=np.complex128)
        full[self.order] = flat
        out = np.zeros((self.basis.dim, flat.shape[1]), dtype=np.complex128)
        k = 0
        for b in self.blocks:
            if b["kind"] == "chiral":
                r, ne, no = b["rank"], b["X"].shape[0], b["Y"].shape[0]
                plus, minus = full[k:k + r], full[k + r:k + 2 * r]
                k += 2 * r
                p = np.concatenate([(plus + minus) / np.sqrt(2), full[k:k + ne - r]])
                k += ne - r
                q = np.concatenate([(plus - minus) / np.sqrt(2), full[k:k + no - r]])
                k += no - r
                out += b["Qe"] @ _real_left_matmul(b["X"], p)
                out += b["Qo"] @ _real_left_matmul(b["Y"], q)
            else:
                n = b["U"].shape[0]
                out += b["Q"] @ _real_left_matmul(b["U"], full[k:k + n])
                k += n
        return out.reshape((self.basis.dim,) + c.shape[1:])

    def vector(self, n):
        e = np.zeros(self.dim)
        e[n] = 1.0
        return self.synthesize(e)


def _amplitudes(psi, basis):
    if isinstance(psi, StateVector):
        if psi.basis_tag != basis.tag:
            raise BasisError(f"basis mismatch: {psi.basis_tag} vs {basis.tag}")
        return psi.amplitudes
    return np.asarray(psi, dtype=np.complex128)


def diagonalize(H, tol=1e-10):
    """Full spectrum of a Hermitian SparseOperator (dense solver)."""
    defect = H.hermiticity_defect()
    if defect > tol:
        raise ValueError(f"operator is not Hermitian (defect {defect:.3g})")
    dense = H.toarray()
    if H.is_real:
        dense = dense.real
    energies, vectors = sla.eigh(dense, overwrite_a=True, check_finite=False)
    return EigenDecomposition(energies, vectors, H.basis)


def diagonalize_sectors(H, tol=1e-10):
    """Full spectrum through the mirror sectors (and the chiral split if H allows).

    Raises ValueError if H does not commute with the mirror.
    """
    defect = H.hermiticity_defect()
    if defect > tol:
        raise ValueError(f"operator is not Hermitian (defect {defect:.3g})")
    if not H.is_real:
        raise ValueError("sector solver needs a real Hamiltonian")
    M = H.matrix.real.tocsr()
    split = inversion_sectors(H.basis, split_count=True)
    blocks, seen = [], 0.0
    for parity in (1, -1):
        Qe, Qo = split[(parity, 0)], split[(parity, 1)]
        Q = sp.hstack([Qe, Qo]).tocsr()
        seen += (Q.T @ M @ Q).power(2).sum()
        ee, oo = (Qe.T @ M @ Qe), (Qo.T @ M @ Qo)
        if _maxabs(ee) < tol and _maxabs(oo) < tol:
            B = (Qe.T @ M @ Qo).toarray()
            try:
                X, S, Yt = sla.svd(B, full_matrices=True, overwrite_a=True,
                                   check_finite=False, lapack_driver="gesdd")
            except np.linalg.LinAlgError:
                B = (Qe.T @ M @ Qo).toarray()
                X, S, Yt = sla.svd(B, full_matrices=True, lapack_driver="gesvd")
            del B
            ne, no = X.shape[0], Yt.shape[0]
            r = len(S)
            e = np.concatenate([S, -S, np.zeros(ne - r), np.zeros(no - r)])
            blocks.append(dict(kind="chiral", Qe=Qe, Qo=Qo, X=X, Y=np.ascontiguousarray(Yt.T),
                               rank=r, energies=e))
        else:
            w, v = sla.eigh((Q.T @ M @ Q).toarray(), overwrite_a=True, check_finite=False)
            blocks.append(dict(kind="sector", Q=Q, U=v, energies=w))
    # the sector blocks must carry all of H
    if abs(seen - M.power(2).sum()) > tol * max(1.0, seen):
        raise ValueError("operator does not commute with the mirror")
    return SectorDecomposition(H.basis, blocks)


def decompose(H):
    """Dense eigensystem for small H, mirror sectors above SPECTRAL_MAX_DIM."""
    if H.dim <= SPECTRAL_MAX_DIM or not H.is_real:
        return diagonalize(H)
    try:
        return diagonalize_sectors(H)
    except (ValueError, BasisError):
        log.info("no usable mirror symmetry; dense solve at dim %d", H.dim)
        return diagonalize(H)


def _maxabs(m):
    return float(abs(m).max()) if m.nnz else 0.0


def propagate_spectral(decomp, psi, t):
    """e^{-iHt} psi through the eigenbasis."""
    c = decomp.coefficients(psi)
    out = decomp.synthesize(np.exp(-1j * decomp.energies * t) * c)
    if isinstance(psi, StateVector):
        return StateVector(out, psi.basis)
    return out


def spectral_series(decomp, psi, times):
    """Columns e^{-iHt_k} psi for every t_k, as an (dim, len(times)) array."""
    c = decomp.coefficients(psi)
    phases = np.exp(-1j * np.outer(decomp.energies, np.asarray(times))) * c[:, None]
    return decomp.synthesize(phases)


def _real_left_matmul(a, b):
    # real @ complex as one real GEMM on the interleaved (re, im) view;
    # strided .real/.imag views fall off the BLAS fast path
    if np.isrealobj(a):
        b = np.ascontiguousarray(b, dtype=np.complex128)
        shape = b.shape
        b2 = b.reshape(shape[0], -1)
        out = (a @ b2.view(np.float64)).view(np.complex128)
        return out.reshape((a.shape[0],) + shape[1:])
    return a @ b


def _tridiag_exp(alpha, beta, tau):
    """exp(-i tau T) e_1 for the real symmetric tridiagonal (alpha, beta)."""
    k = len(alpha)
    if k == 1:
        return np.array([np.exp(-1j * tau * alpha[0])])
    w, v = sla.eigh_tridiagonal(alpha, beta, check_finite=False)
    return v @ (np.exp(-1j * tau * w) * v[0].conj())


def _lanczos_step(matvec, block, tau, m, tol):
    """One Krylov exponential step for every column of ``block``.

    Returns the propagated block and the largest local error estimate, or
    ``None`` if the Krylov space was exhausted before convergence.
    """
    n, ncol = block.shape
    norms = np.linalg.norm(block, axis=0)
    live = norms > 0
    # basis stored per column, (ncol, m + 1, n), so that projections are GEMMs
    Q = np.zeros((ncol, m + 1, n), dtype=np.complex128)
    Q[live, 0] = (block[:, live] / norms[live]).T
    alphas, betas = [], []
    done = ~live
    coeffs = [None] * ncol
    err = np.zeros(ncol)
    for j in range(m):
        qj = np.ascontiguousarray(Q[:, j].T)
        w = matvec(qj)
        a = np.real(np.einsum("ij,ij->j", qj.conj(), w))
        wt = np.ascontiguousarray(w.T)
        # full reorthogonalisation (twice) keeps the small problem faithful;
        # zgemv with trans=2 applies Q^H without materialising a conjugate
        for col in range(ncol):
            basis = Q[col, :j + 1].T                                # (n, j+1), F-order
            for _ in range(2):
                c = _zgemv(1.0, basis, wt[col], trans=2)
                wt[col] = _zgemv(-1.0, basis, c, beta=1.0, y=wt[col])
        b = np.linalg.norm(wt, axis=1)
        alphas.append(a)
        betas.append(b)
        k = j + 1
        check = k >= 3 and (k % 2 == 1 or k == m)
        breakdown = b < 1e-13 * np.maximum(1.0, np.abs(a))
        if check or np.any(breakdown & ~done):
            A = np.array(alphas)
            B = np.array(betas)
            for col in np.flatnonzero(~done):
                y = _tridiag_exp(A[:, col], B[:-1, col], tau)
                e = abs(B[-1, col] * y[-1])
                err[col] = e
                if breakdown[col] or e < tol:
                    coeffs[col] = y
                    err[col] = 0.0 if breakdown[col] else e
                    done[col] = True
        if np.all(done):
            break
        safe = np.where(b > 0, b, 1.0)
        Q[:, j + 1] = wt / safe[:, None]
    if not np.all(done):
        return None, float(np.max(err))
    out = np.zeros_like(block)
    for col in np.flatnonzero(live):
        y = coeffs[col]
        out[:, col] = norms[col] * (y @ Q[col, :len(y)])
    return out, float(np.max(err))


def propagate_krylov(H, psi, t, dt=KRYLOV_DT, m=KRYLOV_DIM, tol=KRYLOV_TOL,
                     renormalize=True):
    """Approximate e^{-iHt} psi by repeated Lanczos exponential steps.

    ``psi`` may be a StateVector, a vector, or a (dim, k) block whose
    columns are propagated independently. Steps whose local error estimate
    exceeds ``tol`` are subdivided; column norms are restored after each
    step when ``renormalize`` is set.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if m < 2:
        raise ValueError("Krylov dimension must be at least 2")
    amps = _amplitudes(psi, H.basis)
    block = amps.reshape(amps.shape[0], -1).astype(np.complex128, copy=True)
    mat = H.matrix
    matvec = mat.__matmul__
    if t == 0 or mat.nnz == 0:
        out = block
    else:
        target_norms = np.linalg.norm(block, axis=0)
        nsteps = max(1, int(np.ceil(abs(t) / dt - 1e-9)))
        tau = t / nsteps
        out = block
        for _ in range(nsteps):
            out = _subdivided_step(matvec, out, tau, m, tol)
            if renormalize:
                cur = np.linalg.norm(out, axis=0)
                scale = np.where(cur > 0, target_norms / np.where(cur > 0, cur, 1.0), 0.0)
                out = out * scale
    out = out.reshape(amps.shape)
    if isinstance(psi, StateVector):
        return StateVector(out, psi.basis)
    return out


def _subdivided_step(matvec, block, tau, m, tol, depth=0):
    res, err = _lanczos_step(matvec, block, tau, m, tol)
    if res is not None:
        return res
    if depth >= MAX_SUBDIVISIONS:
        raise EvolutionError("Krylov step failed to converge",
                             tau=tau, error_estimate=err, krylov_dim=m, tol=tol)
    half = _subdivided_step(matvec, block, tau / 2, m, tol, depth + 1)
    return _subdivided_step(matvec, half, tau / 2, m, tol, depth + 1)


def krylov_series(H, psi, times, dt=KRYLOV_DT, m=KRYLOV_DIM, tol=KRYLOV_TOL):
    """States on an increasing time grid by incremental Krylov stepping."""
    times = np.asarray(times, dtype=float)
    amps = _amplitudes(psi, H.basis)
    out = np.empty((len(amps), len(times)), dtype=np.complex128)
    cur, tcur = amps.copy(), 0.0
    for k, t in enumerate(times):
        if t != tcur:
            cur = propagate_krylov(H, cur, t - tcur, dt=dt, m=m, tol=tol)
            tcur = t
        out[:, k] = cur
    return out


def choose_method(H, method="auto"):
    if method == "auto":
        return "spectral" if H.dim <= SPECTRAL_MAX_DIM else "krylov"
    if method not in ("spectral", "krylov"):
        raise ValueError(f"unknown propagation method {method!r}")
    return method


def expectation(H, psi):
    amps = _amplitudes(psi, H.basis)
    return float(np.real(np.vdot(amps, H.matrix @ amps)))
