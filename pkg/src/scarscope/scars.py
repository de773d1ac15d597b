"""Scarred-eigenstate diagnostics: Z2 overlaps, half-chain entropies, flags."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .evolve import _amplitudes
from .hilbert import BasisError, StateVector, embed, inversion_sectors

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-8
FLOOR_FACTOR = 10.0
ZERO_OVERLAP = 1e-14


@dataclass
class ScarDiagnostics:
    """Per-eigenstate records. Degenerate multiplets are merged into one row."""

    energies: np.ndarray
    overlaps: np.ndarray
    entropies: np.ndarray
    multiplicity: np.ndarray
    scar_flag: np.ndarray = None
    floor: np.ndarray = None
    status: str = "unclassified"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.energies)

    @property
    def n_scars(self):
        return int(np.sum(self.scar_flag)) if self.scar_flag is not None else 0

    def records(self):
        flags = self.scar_flag if self.scar_flag is not None else np.zeros(len(self), bool)
        return [dict(energy=float(e), overlap=float(o), half_chain_entropy=float(s),
                     multiplicity=int(m), scar_flag=bool(f))
                for e, o, s, m, f in zip(self.energies, self.overlaps, self.entropies,
                                         self.multiplicity, flags)]


def eigen_overlaps(decomp, ref):
    """|<ref|E_n>|^2 for every eigenvector."""
    if isinstance(ref, StateVector) and ref.basis_tag != decomp.basis_tag:
        raise BasisError(f"basis mismatch: {ref.basis_tag} vs {decomp.basis_tag}")
    return np.abs(decomp.coefficients(ref)) ** 2


def degenerate_groups(energies, tol=DEGENERACY_TOL):
    """Consecutive runs of (sorted) energies closer than ``tol``."""
    e = np.asarray(energies)
    breaks = np.flatnonzero(np.diff(e) > tol) + 1
    return np.split(np.arange(len(e)), breaks)


# -- half-chain entanglement ---------------------------------------------------

class _SchmidtLayout:
    """Scatter map of basis states into a (left, right) matrix at a cut.

    Only patterns that occur in the basis are kept, so constrained states give
    a small matrix instead of the 2**(L/2) x 2**(L/2) tensor reshaping. The
    singular values are identical because the dropped rows and columns are zero.
    """

    def __init__(self, basis, cut=None):
        L = basis.L
        self.cut = L // 2 if cut is None else int(cut)
        states = basis.states
        left = states & ((np.int64(1) << self.cut) - 1)
        right = states >> self.cut
        self.lu, self.row = np.unique(left, return_inverse=True)
        self.ru, self.col = np.unique(right, return_inverse=True)
        self.shape = (len(self.lu), len(self.ru))

    def matrices(self, amps):
        a = np.asarray(amps).reshape(len(self.row), -1)
        out = np.zeros((a.shape[1],) + self.shape, dtype=a.dtype)
        out[:, self.row, self.col] = a.T
        return out


def _entropy_bits(p):
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)))


def half_chain_entropy(state, basis=None, cut=None):
    """Entanglement entropy (bits) across the floor(L/2) | rest cut."""
    basis = state.basis if basis is None else basis
    amps = _amplitudes(state, basis)
    s = np.linalg.svd(_SchmidtLayout(basis, cut).matrices(amps)[0], compute_uv=False)
    p = s ** 2
    return _entropy_bits(p / p.sum())


def half_chain_entropies(vectors, basis, cut=None, batch=256):
    """Entropies for every column of ``vectors``."""
    layout = _SchmidtLayout(basis, cut)
    n = vectors.shape[1]
    out = np.empty(n)
    for a in range(0, n, batch):
        mats = layout.matrices(vectors[:, a:a + batch])
        s = np.linalg.svd(mats, compute_uv=False)
        p = s ** 2
        p /= p.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[a:a + batch] = -np.sum(np.where(p > 1e-300, p * np.log2(np.where(p > 0, p, 1)), 0), axis=1)
    return out


def dense_half_chain_entropy(state, cut=None):
    """Oracle: embed into 2**L and SVD the full (2**cut, 2**(L-cut)) reshaping."""
    L = state.basis.L
    cut = L // 2 if cut is None else cut
    psi = embed(state)
    # index = left + 2**cut * right, so C-order reshape puts right first
    m = psi.reshape(1 << (L - cut), 1 << cut)
    p = np.linalg.svd(m, compute_uv=False) ** 2
    return _entropy_bits(p / p.sum())


# -- diagnostics ---------------------------------------------------------------

def merge_multiplets(energies, overlaps, entropies, tol):
    groups = degenerate_groups(energies, tol)
    e = np.array([energies[g].mean() for g in groups])
    o = np.array([overlaps[g].sum() for g in groups])
    # entropy of a multiplet is gauge dependent; report the smallest member
    s = np.array([entropies[g].min() for g in groups])
    m = np.array([len(g) for g in groups])
    return e, o, s, m


def scar_diagnostics(decomp, ref, entropies=True, tol=DEGENERACY_TOL):
    """Overlaps with ``ref`` and half-chain entropies, multiplets merged."""
    ov = eigen_overlaps(decomp, ref)
    if not entropies:
        ent = np.full(decomp.dim, np.nan)
    elif hasattr(decomp, "vectors"):
        ent = half_chain_entropies(decomp.vectors, decomp.basis)
    else:
        # sector decompositions: rebuild eigenvectors a batch at a time
        ent = np.empty(decomp.dim)
        for a in range(0, decomp.dim, 256):
            eye = np.zeros((decomp.dim, min(256, decomp.dim - a)))
            eye[a + np.arange(eye.shape[1]), np.arange(eye.shape[1])] = 1.0
            ent[a:a + eye.shape[1]] = half_chain_entropies(decomp.synthesize(eye), decomp.basis)
    e, o, s, m = merge_multiplets(decomp.energies, ov, ent, tol)
    return ScarDiagnostics(e, o, s, m, meta=dict(basis=decomp.basis_tag, tol=tol))


def sector_scar_diagnostics(H, ref, tol=DEGENERACY_TOL):
    """Like :func:`scar_diagnostics`, diagonalising the two inversion sectors.

    Each sector is about half the dimension, so the dense solves cost a quarter
    of a full one and only one sector's eigenvectors are held at a time. This
    is what makes L = 20 practical on a laptop.
    """
    basis = H.basis
    ref_amps = _amplitudes(ref, basis)
    layout = _SchmidtLayout(basis)
    energies, overlaps, ents = [], [], []
    for parity, Q in inversion_sectors(basis).items():
        block = (Q.T @ H.matrix @ Q).toarray()
        if np.isrealobj(block) or not np.any(block.imag):
            block = np.real(block)
        w, v = sla.eigh(block, overwrite_a=True, check_finite=False)
        del block
        c = Q.T @ ref_amps
        energies.append(w)
        overlaps.append(np.abs(v.T @ c) ** 2)
        chunk = np.empty(len(w))
        for a in range(0, len(w), 256):
            full = Q @ v[:, a:a + 256]
            mats = layout.matrices(full)
            p = np.linalg.svd(mats, compute_uv=False) ** 2
            p /= p.sum(axis=1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                chunk[a:a + 256] = -np.sum(np.where(p > 1e-300, p * np.log2(np.where(p > 0, p, 1)), 0), axis=1)
        ents.append(chunk)
        del v
        log.info("inversion sector %+d: dim %d", parity, len(w))
    e = np.concatenate(energies)
    order = np.argsort(e, kind="stable")
    e, o, s, m = merge_multiplets(e[order], np.concatenate(overlaps)[order],
                        np.concatenate(ents)[order], tol)
    return ScarDiagnostics(e, o, s, m, meta=dict(basis=basis.tag, tol=tol,
                                                 method="inversion-sectors"))


def _window_floor(overlaps, energies, halfwidth, factor):
    """factor x median nonzero overlap among rank-neighbours in energy.

    The row itself is left out, so a lone nonzero overlap is measured against
    its neighbours rather than against itself.
    """
    n = len(overlaps)
    floor = np.empty(n)
    k = halfwidth
    for a in range(n):
        lo = max(0, min(a - k, n - 2 * k - 1))
        hi = min(n, lo + 2 * k + 1)
        win = np.delete(overlaps[lo:hi], a - lo)
        win = win[win > ZERO_OVERLAP]
        floor[a] = factor * np.median(win) if len(win) else ZERO_OVERLAP
    return floor


def classify_scars(diag, overlap_floor=None, factor=FLOOR_FACTOR, halfwidth=None,
                   rung_halfwidth=None):
    """Flag rows whose overlap exceeds the local floor.

    The default floor is ``factor`` times the median nonzero overlap among the
    ``halfwidth`` rows on either side in energy order (the row itself excluded). Zero-overlap rows
    (other symmetry sectors) are left out of the median. A scalar
    ``overlap_floor`` replaces the local rule. Fewer than 3 flagged rows sets
    ``status = "warning"``.

    ``rung_halfwidth`` (energy units, off by default) additionally keeps only
    rows holding the largest overlap within that distance in energy, i.e. at
    most one state per tower rung when set to about half the rung spacing.
    """
    o = np.asarray(diag.overlaps)
    if overlap_floor is not None:
        floor = np.full(len(o), float(overlap_floor))
    else:
        hw = halfwidth if halfwidth is not None else max(10, len(o) // 40)
        floor = _window_floor(o, diag.energies, hw, factor)
    flags = o > floor
    if rung_halfwidth is not None:
        e = np.asarray(diag.energies)
        lo = np.searchsorted(e, e - rung_halfwidth, side="left")
        hi = np.searchsorted(e, e + rung_halfwidth, side="right")
        flags &= np.array([o[k] >= o[a:b].max() for k, (a, b) in enumerate(zip(lo, hi))])
    diag.scar_flag = flags
    diag.floor = floor
    diag.status = "ok" if flags.sum() >= 3 else "warning"
    if diag.status == "warning":
        log.warning("only %d states above the overlap floor; classification unreliable",
                    int(flags.sum()))
    diag.meta.update(floor_factor=factor, floor_rule="scalar" if overlap_floor is not None
                     else "local-median", rung_halfwidth=rung_halfwidth)
    return flags


def thermal_entropy_median(diag, center, halfwidth=None):
    """Median entropy of unflagged rows near row ``center`` in energy order."""
    n = len(diag)
    k = halfwidth if halfwidth is not None else max(10, n // 40)
    lo, hi = max(0, center - k), min(n, center + k + 1)
    sel = np.arange(lo, hi)
    sel = sel[~diag.scar_flag[sel]]
    return float(np.median(diag.entropies[sel])) if len(sel) else float("nan")


def eigenstate(decomp, index):
    """Eigenvector ``index`` (ascending energy) as a StateVector."""
    return StateVector(np.asarray(decomp.vector(index), dtype=np.complex128), decomp.basis)


def scar_band_eigenstates(decomp, ref, count=None):
    """Indices of the eigenstates with the largest overlaps, by energy."""
    ov = eigen_overlaps(decomp, ref)
    count = decomp.basis.L + 1 if count is None else count
    return np.sort(np.argsort(ov)[::-1][:count])


def thermal_eigenstate(decomp, ref, energy=0.0, exclude=None):
    """Index of an eigenstate near ``energy`` with a bulk-typical overlap.

    Picks the state closest to ``energy`` whose overlap is within a factor
    of 3 of the median in its neighbourhood and which is not degenerate.
    """
    ov = eigen_overlaps(decomp, ref)
    e = decomp.energies
    exclude = set() if exclude is None else set(int(x) for x in exclude)
    med = np.median(ov[ov > ZERO_OVERLAP])
    for k in np.argsort(np.abs(e - energy), kind="stable"):
        if k in exclude:
            continue
        if k > 0 and e[k] - e[k - 1] < 1e-6:
            continue
        if k + 1 < len(e) and e[k + 1] - e[k] < 1e-6:
            continue
        if ZERO_OVERLAP < ov[k] and med / 3 <= ov[k] <= 3 * med:
            return int(k)
    raise ValueError("no thermal eigenstate found")
