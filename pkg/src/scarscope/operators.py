"""Sparse Hamiltonians and local operators on constrained or full bases."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hilbert import (OPEN, PERIODIC, BasisError, ConstrainedBasis, FullBasis,
                      full_basis, is_legal)

AXES = ("x", "y", "z")


class OperatorError(ValueError):
    """Invalid operator request."""


@dataclass
class SparseOperator:
    """A CSR matrix tied to the basis it acts on."""

    matrix: sp.csr_matrix
    basis: object = field(repr=False)
    hermitian: bool = True
    label: str = ""

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        if self.matrix.shape != (self.basis.dim, self.basis.dim):
            raise OperatorError(f"shape {self.matrix.shape} does not match basis dim {self.basis.dim}")

    @property
    def dim(self):
        return self.basis.dim

    @property
    def basis_tag(self):
        return self.basis.tag

    @property
    def is_real(self):
        return not np.iscomplexobj(self.matrix.data) or not np.any(self.matrix.data.imag)

    def toarray(self):
        return self.matrix.toarray()

    def hermiticity_defect(self):
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def norm_estimate(self):
        """Max absolute row sum, an upper bound on the spectral norm."""
        return float(abs(self.matrix).sum(axis=1).max()) if self.matrix.nnz else 0.0

    def __matmul__(self, other):
        return self.matrix @ other


def _site_bit(basis, site):
    if not 1 <= site <= basis.L:
        raise OperatorError(f"site {site} outside 1..{basis.L}")
    return site - 1


def _flip_matrix(basis, bit, phase=None):
    """Matrix flipping ``bit``, restricted to targets inside the basis."""
    states = basis.states
    targets = states ^ (np.int64(1) << bit)
    cols = np.arange(basis.dim)
    rows = basis.index(targets)
    keep = rows >= 0
    vals = np.ones(basis.dim, dtype=np.complex128) if phase is None else phase
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(basis.dim, basis.dim))


def local_operator(basis, site, axis, projected=True):
    """Single-site operator ``axis`` in {x, y, z, n, p} at 1-indexed ``site``.

    On a constrained basis only the blockade-projected version exists:
    amplitude flowing to illegal configurations is dropped. ``n`` is the
    Rydberg number operator and ``p`` the ground-state projector.
    """
    if basis.constrained and not projected:
        raise OperatorError("unprojected operators need the full basis")
    bit = _site_bit(basis, site)
    b = (basis.states >> bit) & 1
    if axis == "z":
        m = sp.diags((2 * b - 1).astype(np.complex128), format="csr")
    elif axis == "n":
        m = sp.diags(b.astype(np.complex128), format="csr")
    elif axis == "p":
        m = sp.diags((1 - b).astype(np.complex128), format="csr")
    elif axis == "x":
        m = _flip_matrix(basis, bit)
    elif axis == "y":
        # sigma^y |0> = -i|1>, sigma^y |1> = i|0> (bit 1 = up)
        m = _flip_matrix(basis, bit, phase=1j * (2 * b - 1).astype(np.complex128))
    else:
        raise OperatorError(f"unknown axis {axis!r}")
    return SparseOperator(m, basis, hermitian=True, label=f"{axis}{site}")


def particle_hole_diagonal(basis):
    """Diagonal of prod_j sigma^z_j."""
    pop = np.zeros(basis.dim, dtype=np.int64)
    states = basis.states
    for bit in range(basis.L):
        pop += (states >> bit) & 1
    return np.where((basis.L - pop) % 2 == 0, 1.0, -1.0)


def build_pxp(basis):
    """PXP Hamiltonian; OBC includes the X_1 P_2 and P_{L-1} X_L edge terms.

    Every single spin flip that stays inside the constrained space has unit
    amplitude, which is exactly the projector structure of the model.
    """
    if not isinstance(basis, ConstrainedBasis):
        raise OperatorError("build_pxp needs a ConstrainedBasis")
    m = sp.csr_matrix((basis.dim, basis.dim), dtype=np.float64)
    for bit in range(basis.L):
        m = m + _flip_matrix(basis, bit).real
    m.sum_duplicates()
    return SparseOperator(m.tocsr(), basis, label=f"pxp:{basis.boundary}")


def _number_counts(states, L):
    return [(states >> bit) & 1 for bit in range(L)]


def build_rydberg(L, omega, delta, u1, u2, sign=+1):
    """Rydberg chain H_+/- on the full 2**L space (open chain).

    ``sign`` multiplies only the Rabi term.
    """
    if sign in ("+", "plus"):
        sign = 1
    elif sign in ("-", "minus"):
        sign = -1
    if sign not in (1, -1):
        raise OperatorError(f"sign must be +1 or -1, got {sign!r}")
    if L > 24:
        raise OperatorError("full-space Rydberg model limited to L <= 24")
    basis = full_basis(L)
    states = basis.states
    n = _number_counts(states, L)
    diag = np.zeros(basis.dim)
    for j in range(L):
        diag -= delta * n[j]
        if j + 1 < L:
            diag += u1 * n[j] * n[j + 1]
        if j + 2 < L:
            diag += u2 * n[j] * n[j + 2]
    m = sp.diags(diag, format="csr")
    if omega:
        for bit in range(L):
            m = m + (sign * omega / 2.0) * _flip_matrix(basis, bit).real
    return SparseOperator(sp.csr_matrix(m), basis,
                          label=f"rydberg{'+' if sign > 0 else '-'}")


def pauli_string(basis, ops, coeff=1.0):
    """Sparse matrix of ``coeff * prod_site sigma^axis_site`` on a full basis."""
    if basis.constrained:
        raise OperatorError("pauli_string acts on the full space")
    states = basis.states
    flip = np.int64(0)
    phase = np.full(basis.dim, complex(coeff))
    # operators applied right to left: rightmost factor acts first
    for site, axis in ops:
        bit = _site_bit(basis, site)
        b = (states >> bit) & 1
        if axis == "z":
            phase = phase * (2 * b - 1)
        elif axis == "x":
            pass
        elif axis == "y":
            phase = phase * (1j * (2 * b - 1))
        else:
            raise OperatorError(f"unknown axis {axis!r}")
        if axis in "xy":
            if flip >> bit & 1:
                raise OperatorError("repeated site in pauli_string")
            flip |= np.int64(1) << bit
    rows = states ^ flip
    return sp.csr_matrix((phase, (rows, states)), shape=(basis.dim, basis.dim))


@dataclass
class PhenomCouplings:
    """Random J^{mu nu}_{i,i+3}; ``table[i-1, mu, nu]`` for i = 1..L-3."""

    L: int
    J: float
    seed: int
    table: np.ndarray

    def mean_abs(self):
        return float(np.mean(np.abs(self.table)))


def sample_couplings(L, J=1.0, seed=0):
    """i.i.d. uniform couplings on [-sqrt(3) J, sqrt(3) J]."""
    if L < 4:
        raise OperatorError("phenomenological couplings need L >= 4")
    rng = np.random.default_rng(seed)
    width = np.sqrt(3.0) * J
    table = rng.uniform(-width, width, size=(L - 3, 3, 3))
    return PhenomCouplings(L, float(J), seed, table)


def singlet_projector(basis, a, b):
    """(1 - sigma_a . sigma_b) / 4 on the full space."""
    eye = sp.identity(basis.dim, dtype=np.complex128, format="csr")
    dots = sum(pauli_string(basis, [(a, ax), (b, ax)]) for ax in AXES)
    return (eye - dots) / 4.0


def build_phenom(L, omega, couplings):
    """H' = (omega/2) sum_i sigma^x_i + sum_i R_{i,i+3} P_{i+1,i+2} (open chain)."""
    if couplings.L != L:
        raise OperatorError("coupling table built for a different L")
    if L > 14:
        raise OperatorError("phenomenological model limited to L <= 14")
    basis = full_basis(L)
    h = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for site in range(1, L + 1):
        h = h + (omega / 2.0) * pauli_string(basis, [(site, "x")])
    for i in range(1, L - 2):
        r = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
        for mu, amu in enumerate(AXES):
            for nu, anu in enumerate(AXES):
                jval = couplings.table[i - 1, mu, nu]
                if jval:
                    r = r + pauli_string(basis, [(i, amu), (i + 3, anu)], jval)
        h = h + r @ singlet_projector(basis, i + 1, i + 2)
    h.sum_duplicates()
    h.eliminate_zeros()
    return SparseOperator(h.tocsr(), basis, label="phenom")


def free_rabi(L, omega):
    """(omega/2) sum_i sigma^x_i on the full space."""
    basis = full_basis(L)
    m = sum(pauli_string(basis, [(s, "x")]) for s in range(1, L + 1)) * (omega / 2.0)
    return SparseOperator(sp.csr_matrix(m), basis, label="rabi")


__all__ = [
    "SparseOperator", "PhenomCouplings", "OperatorError", "local_operator",
    "build_pxp", "build_rydberg", "build_phenom", "sample_couplings",
    "pauli_string", "singlet_projector", "particle_hole_diagonal", "free_rabi",
    "OPEN", "PERIODIC", "BasisError", "FullBasis", "is_legal",
]
