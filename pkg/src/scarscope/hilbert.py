"""Rydberg-blockaded spin-chain bases.

Configurations are stored as integers with site 1 in the least significant
bit and bit value 1 meaning spin up (Rydberg excited). String inputs are read
as ordinary binary literals, so the leftmost character is site L; use
:func:`ket_label` for a site-ordered rendering (site 1 first).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

MAX_EXACT_L = 31
OPEN = "open"
PERIODIC = "periodic"


class BasisError(ValueError):
    """Raised for invalid basis parameters or configurations."""


def _legal_chain(L):
    # Ascending enumeration via the Fibonacci recurrence: strings of length n
    # are those of length n-1 (top bit 0) followed by 2**(n-1) + strings of
    # length n-2 (top bits 10). The second block is larger than the first.
    prev2 = np.array([0], dtype=np.int64)          # n = 0
    prev1 = np.array([0, 1], dtype=np.int64)       # n = 1
    if L == 0:
        return prev2
    for n in range(2, L + 1):
        cur = np.concatenate([prev1, prev2 + (np.int64(1) << (n - 1))])
        prev2, prev1 = prev1, cur
    return prev1


def is_legal(configs, L, boundary=OPEN):
    """Vectorised blockade test for integer configurations."""
    c = np.asarray(configs, dtype=np.int64)
    ok = (c & (c >> 1)) == 0
    if boundary == PERIODIC:
        # L == 1 makes the site its own neighbour
        ok &= ~(((c & 1) == 1) & (((c >> (L - 1)) & 1) == 1))
    return ok


@dataclass(frozen=True)
class ConstrainedBasis:
    """Blockade-legal configurations of an L-site chain, ascending order."""

    L: int
    boundary: str
    states: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return len(self.states)

    @property
    def tag(self):
        return f"constrained:L={self.L}:{self.boundary}"

    @property
    def constrained(self):
        return True

    def index(self, configs):
        """Ordinals of ``configs`` (array-friendly); -1 where absent."""
        c = np.asarray(configs, dtype=np.int64)
        pos = np.searchsorted(self.states, c)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.states[pos] == c, pos, -1)

    @property
    def index_of(self):
        return {int(s): k for k, s in enumerate(self.states)}


@dataclass(frozen=True)
class FullBasis:
    """The unconstrained 2**L computational basis."""

    L: int

    @property
    def dim(self):
        return 1 << self.L

    @property
    def states(self):
        return np.arange(self.dim, dtype=np.int64)

    @property
    def tag(self):
        return f"full:L={self.L}"

    @property
    def boundary(self):
        return OPEN

    @property
    def constrained(self):
        return False

    def index(self, configs):
        c = np.asarray(configs, dtype=np.int64)
        return np.where((c >= 0) & (c < self.dim), c, -1)


def build_basis(L, boundary=OPEN):
    """Enumerate the constrained Hilbert space.

    Parameters
    ----------
    L : int
        Number of sites, ``1 <= L <= 31``.
    boundary : {"open", "periodic"}
        For periodic chains sites L and 1 are also neighbours.
    """
    if not isinstance(L, (int, np.integer)) or not 1 <= L <= MAX_EXACT_L:
        raise BasisError(f"L must be an integer in [1, {MAX_EXACT_L}], got {L!r}")
    if boundary not in (OPEN, PERIODIC):
        raise BasisError(f"unknown boundary {boundary!r}")
    states = _legal_chain(int(L))
    if boundary == PERIODIC:
        states = states[is_legal(states, L, PERIODIC)]
    states = np.ascontiguousarray(states)
    states.setflags(write=False)
    return ConstrainedBasis(int(L), boundary, states)


def full_basis(L):
    if not 1 <= L <= 30:
        raise BasisError(f"full space limited to L <= 30, got {L}")
    return FullBasis(int(L))


def parse_config(config, L):
    """Turn an int or binary-literal string into an integer configuration."""
    if isinstance(config, str):
        s = config.strip()
        if len(s) != L or set(s) - {"0", "1"}:
            raise BasisError(f"configuration {config!r} is not a {L}-bit pattern")
        return int(s, 2)
    c = int(config)
    if c < 0 or c >> L:
        raise BasisError(f"configuration {config!r} does not fit in {L} bits")
    return c


def state_index(basis, config):
    """Ordinal of ``config`` in ``basis`` or ``None`` if blockade-illegal."""
    c = parse_config(config, basis.L)
    k = int(basis.index(c))
    return None if k < 0 else k


def ket_label(config, L):
    """Site-ordered label, e.g. Z2 at L=4 -> '1010'."""
    return "".join("1" if (int(config) >> s) & 1 else "0" for s in range(L))


def neel_config(L):
    """Up spins on odd (1-indexed) sites."""
    return sum(1 << s for s in range(0, L, 2))


def anti_neel_config(L):
    return ((1 << L) - 1) ^ neel_config(L)


def fibonacci(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def lucas(n):
    a, b = 2, 1
    for _ in range(n):
        a, b = b, a + b
    return a


@dataclass
class StateVector:
    """Complex amplitudes over a basis."""

    amplitudes: np.ndarray
    basis: object = field(repr=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.basis.dim,):
            raise BasisError(
                f"amplitude length {self.amplitudes.shape} does not match dim {self.basis.dim}")

    @property
    def basis_tag(self):
        return self.basis.tag

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self):
        return StateVector(self.amplitudes / self.norm, self.basis)

    def overlap(self, other):
        """<self|other>"""
        check_same_basis(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def copy(self):
        return StateVector(self.amplitudes.copy(), self.basis)


def check_same_basis(a, b):
    if a.basis_tag != b.basis_tag:
        raise BasisError(f"basis mismatch: {a.basis_tag} vs {b.basis_tag}")


def product_state(basis, config):
    c = parse_config(config, basis.L)
    k = int(basis.index(c))
    if k < 0:
        raise BasisError(f"configuration {ket_label(c, basis.L)} is not in {basis.tag}")
    amp = np.zeros(basis.dim, dtype=np.complex128)
    amp[k] = 1.0
    return StateVector(amp, basis)


def neel_state(basis):
    """|Z2> with up spins on odd sites (site L is up for odd L)."""
    return product_state(basis, neel_config(basis.L))


def zero_state(basis):
    """All spins down."""
    return product_state(basis, 0)


def embed(state):
    """Scatter a constrained-basis state into the full 2**L tensor space."""
    basis = state.basis
    amps = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    if not basis.constrained:
        return amps
    out = np.zeros(1 << basis.L, dtype=np.complex128)
    out[basis.states] = amps
    return out


def popcount(configs):
    configs = np.asarray(configs, dtype=np.int64)
    out = np.zeros(configs.shape, dtype=np.int64)
    for bit in range(63):
        if not np.any(configs >> bit):
            break
        out += (configs >> bit) & 1
    return out


def inversion_permutation(basis):
    """Ordinal of the mirror image (site j -> L+1-j) of every basis state."""
    L = basis.L
    states = basis.states
    rev = np.zeros_like(states)
    for bit in range(L):
        rev |= ((states >> bit) & 1) << (L - 1 - bit)
    perm = basis.index(rev)
    if np.any(perm < 0):
        raise BasisError("basis is not closed under spatial inversion")
    return perm


def inversion_sectors(basis, split_count=False):
    """Real isometries onto the mirror-even (+1) and mirror-odd (-1) sectors.

    Columns are the symmetric / antisymmetric combinations of a state and its
    mirror image (self-mirrored states only enter the even sector). With
    ``split_count`` each sector is further divided by the parity of the
    number of up spins, which the mirror preserves; keys become
    ``(mirror, count_parity)`` with count_parity 0 (even) or 1 (odd).
    """
    perm = inversion_permutation(basis)
    n = basis.dim
    idx = np.arange(n)
    fixed = idx[perm == idx]
    pairs = idx[idx < perm]
    count = popcount(basis.states) & 1 if split_count else np.zeros(n, dtype=np.int64)
    out = {}
    for parity in (1, -1):
        for cp in ((0, 1) if split_count else (0,)):
            f = fixed[count[fixed] == cp] if parity == 1 else fixed[:0]
            pr = pairs[count[pairs] == cp]
            h = np.full(len(pr), 1 / np.sqrt(2))
            c = len(f) + np.arange(len(pr))
            rows = np.concatenate([f, pr, perm[pr]])
            cols = np.concatenate([np.arange(len(f)), c, c])
            vals = np.concatenate([np.ones(len(f)), h, parity * h])
            Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(f) + len(pr)))
            out[(parity, cp) if split_count else parity] = Q
    return out
