"""Matrix product states and operators: TEBD, single-site RDMs, Holevo and
time-split MPO OTOCs on the full spin-1/2 chain.

Site tensors have shape (left bond, physical, right bond). Physical index 0
is spin down and 1 is spin up, matching the bit convention of the exact
code. Operators are handled as vectorised MPS with physical dimension 4
holding Pauli coefficients: O = sum_p c_p P_p with P = (1, X, Y, Z). The
Heisenberg map is real orthogonal in this basis, so Hermitian operators
evolve with real tensors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .hilbert import parse_config
from .scramble import ScramblingField, holevo_from_rdms

log = logging.getLogger(__name__)

CHI_STATE = 100
CHI_OTOC = 300
CUTOFF = 1e-10
TEBD_DT = 0.05
STEP_WARN = 1e-4
SATURATION_WARN = 1e-3
BLOCKADE_TOL = 1e-8

_I2 = np.eye(2, dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_Y = np.array([[0, 1j], [-1j, 0]], dtype=np.complex128)   # (down, up) ordering
_Z = np.diag([-1.0, 1.0]).astype(np.complex128)
_N = np.diag([0.0, 1.0]).astype(np.complex128)
_P = np.diag([1.0, 0.0]).astype(np.complex128)
PAULI = {"x": _X, "y": _Y, "z": _Z, "n": _N, "p": _P}
_BASIS4 = np.stack([_I2, _X, _Y, _Z])                       # (4, out, in)
_TIME_REVERSAL = np.array([1.0, 1.0, -1.0, 1.0])            # P_p^* = eta_p P_p


class TensorNetError(RuntimeError):
    pass


# -- containers ------------------------------------------------------------------

@dataclass
class MatrixProductState:
    tensors: list
    center: int = 0
    chi_max: int = CHI_STATE
    cutoff: float = CUTOFF
    discarded: float = 0.0
    max_step_discarded: float = 0.0

    @property
    def L(self):
        return len(self.tensors)

    @property
    def d(self):
        return self.tensors[0].shape[1]

    def bonds(self):
        return [A.shape[2] for A in self.tensors[:-1]]

    def copy(self):
        return MatrixProductState([A.copy() for A in self.tensors], self.center,
                                  self.chi_max, self.cutoff, self.discarded,
                                  self.max_step_discarded)


@dataclass
class MatrixProductOperator:
    """Operator stored as an MPS of Pauli coefficients (physical index p)."""

    mps: MatrixProductState

    @property
    def L(self):
        return self.mps.L

    def site_tensor(self, k):
        """Site tensor in the matrix form (left, out, in, right)."""
        A = self.mps.tensors[k]
        return np.tensordot(A, _BASIS4, axes=([1], [0])).transpose(0, 2, 3, 1)

    def copy(self):
        return MatrixProductOperator(self.mps.copy())

    def bonds(self):
        return self.mps.bonds()


def mps_from_product(bits, L=None, chi_max=CHI_STATE, cutoff=CUTOFF):
    """Bond-1 MPS of a computational configuration (site 1 = lowest bit)."""
    if isinstance(bits, str):
        L = len(bits) if L is None else L
        config = parse_config(bits, L)
    elif isinstance(bits, (list, tuple, np.ndarray)):
        L = len(bits)
        config = sum(int(b) << k for k, b in enumerate(bits))
    else:
        if L is None:
            raise TensorNetError("integer configurations need L")
        config = int(bits)
    tensors = []
    for k in range(L):
        A = np.zeros((1, 2, 1), dtype=np.complex128)
        A[0, (config >> k) & 1, 0] = 1.0
        tensors.append(A)
    return MatrixProductState(tensors, 0, chi_max, cutoff)


def mps_from_dense(vec, L, chi_max=None, cutoff=0.0):
    """Exact MPS of a 2**L vector (site 1 = lowest bit) by successive SVDs."""
    psi = np.asarray(vec, dtype=np.complex128).reshape((2,) * L)
    psi = psi.transpose(tuple(range(L - 1, -1, -1)))     # axes now site 1..L
    tensors = []
    rest = psi.reshape(1, -1)
    for k in range(L - 1):
        dl = rest.shape[0]
        m = rest.reshape(dl * 2, -1)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = max(1, int(np.sum(s > 1e-15 * s[0])))
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        tensors.append(u.reshape(dl, 2, keep))
        rest = s[:, None] * vh
    tensors.append(rest.reshape(rest.shape[0], 2, 1))
    return MatrixProductState(tensors, L - 1, chi_max or 1 << L, cutoff)


def mps_to_dense(mps):
    """Contract to a 2**L vector (site 1 = lowest bit)."""
    out = mps.tensors[0]
    for A in mps.tensors[1:]:
        out = np.tensordot(out, A, axes=([-1], [0]))
    out = out.reshape(out.shape[1:-1])
    L = mps.L
    return out.transpose(tuple(range(L - 1, -1, -1))).reshape(-1)


def _pauli_coefficients(op):
    c = np.einsum("pio,oi->p", _BASIS4, np.asarray(op, dtype=np.complex128)) / 2.0
    return c.real if np.allclose(c.imag, 0.0, atol=1e-15) else c


def operator_mpo(L, site_ops):
    """Product operator as a bond-1 MPO; ``site_ops`` maps 1-indexed site -> 2x2."""
    tensors = [_pauli_coefficients(site_ops.get(k, _I2)).reshape(1, 4, 1)
               for k in range(1, L + 1)]
    return MatrixProductOperator(MatrixProductState(tensors, 0, CHI_OTOC, CUTOFF))


def mirror_mpo(mpo):
    """Spatially inverted copy (site k -> L + 1 - k)."""
    m = mpo.mps
    tensors = [A.transpose(2, 1, 0) for A in reversed(m.tensors)]
    return MatrixProductOperator(MatrixProductState(
        tensors, m.L - 1 - m.center, m.chi_max, m.cutoff, m.discarded,
        m.max_step_discarded))


def conjugate_mpo(mpo):
    """Complex conjugate in the computational basis."""
    out = mpo.copy()
    out.mps.tensors = [A.conj() * _TIME_REVERSAL[None, :, None] for A in out.mps.tensors]
    return out


def local_pauli_mpo(L, site, axis, chi_max=CHI_OTOC, cutoff=CUTOFF):
    mpo = operator_mpo(L, {site: PAULI[axis]})
    mpo.mps.chi_max, mpo.mps.cutoff = chi_max, cutoff
    return mpo


def mpo_to_dense(mpo):
    """Dense 2**L x 2**L matrix (small L only)."""
    L = mpo.L
    out = mpo.site_tensor(0)
    for k in range(1, L):
        out = np.tensordot(out, mpo.site_tensor(k), axes=([-1], [0]))
    out = out.reshape(out.shape[1:-1])           # (o1, i1, o2, i2, ...)
    outs = [2 * k for k in range(L)][::-1]
    ins = [2 * k + 1 for k in range(L)][::-1]
    return out.transpose(outs + ins).reshape(1 << L, 1 << L)


# -- canonical form -------------------------------------------------------------

def _shift_right(mps, k):
    A = mps.tensors[k]
    dl, d, dr = A.shape
    q, r = np.linalg.qr(A.reshape(dl * d, dr))
    mps.tensors[k] = q.reshape(dl, d, -1)
    mps.tensors[k + 1] = np.tensordot(r, mps.tensors[k + 1], axes=([1], [0]))


def _shift_left(mps, k):
    A = mps.tensors[k]
    dl, d, dr = A.shape
    q, r = np.linalg.qr(A.reshape(dl, d * dr).T)
    mps.tensors[k] = q.T.reshape(-1, d, dr)
    mps.tensors[k - 1] = np.tensordot(mps.tensors[k - 1], r.T, axes=([2], [0]))


def move_center(mps, k):
    """Move the orthogonality centre to site index ``k`` (0-based)."""
    while mps.center < k:
        _shift_right(mps, mps.center)
        mps.center += 1
    while mps.center > k:
        _shift_left(mps, mps.center)
        mps.center -= 1
    return mps


def canonicalize(mps, center=0):
    """Bring every tensor into mixed canonical form about ``center``."""
    for k in range(mps.L - 1):
        _shift_right(mps, k)
    mps.center = mps.L - 1
    return move_center(mps, center)


def isometry_defects(mps):
    """Max deviation from left (right) isometry of tensors left (right) of centre."""
    out = []
    for k, A in enumerate(mps.tensors):
        dl, d, dr = A.shape
        if k < mps.center:
            m = A.reshape(dl * d, dr)
            out.append(np.abs(m.conj().T @ m - np.eye(dr)).max())
        elif k > mps.center:
            m = A.reshape(dl, d * dr)
            out.append(np.abs(m @ m.conj().T - np.eye(dl)).max())
        else:
            out.append(0.0)
    return np.array(out)


def norm(mps):
    return float(np.linalg.norm(mps.tensors[mps.center]))


def overlap(a, b):
    """<a|b> for MPS of equal length."""
    env = np.ones((1, 1), dtype=np.complex128)
    for A, B in zip(a.tensors, b.tensors):
        env = np.tensordot(env, B, axes=([1], [0]))                 # (a, s, b')
        env = np.tensordot(A.conj(), env, axes=([0, 1], [0, 1]))   # (a', b')
    return complex(env[0, 0])


# -- truncated splits -----------------------------------------------------------

def _svd(m):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        return sla.svd(m, full_matrices=False, lapack_driver="gesvd")


def _truncate(s, chi_max, cutoff):
    total = float(np.sum(s ** 2))
    if total == 0:
        return 1, 0.0
    keep = int(np.sum(s > cutoff * s[0]))
    keep = max(1, min(keep, chi_max))
    return keep, float(np.sum(s[keep:] ** 2) / total)


def _split3(theta, chi_max, cutoff, to_right):
    """Re-split a (Dl, d, d, d, Dr) block into three tensors with two SVDs."""
    dl, d, _, _, dr = theta.shape
    nrm = np.linalg.norm(theta)
    lost = 0.0
    if to_right:
        u, s, vh = _svd(theta.reshape(dl * d, d * d * dr))
        k1, w1 = _truncate(s, chi_max, cutoff)
        A1 = u[:, :k1].reshape(dl, d, k1)
        rest = (s[:k1, None] * vh[:k1]).reshape(k1 * d, d * dr)
        u, s, vh = _svd(rest)
        k2, w2 = _truncate(s, chi_max, cutoff)
        A2 = u[:, :k2].reshape(k1, d, k2)
        A3 = (s[:k2, None] * vh[:k2]).reshape(k2, d, dr)
        A3 *= nrm / max(np.linalg.norm(A3), 1e-300)
        lost = w1 + w2
    else:
        u, s, vh = _svd(theta.reshape(dl * d * d, d * dr))
        k2, w2 = _truncate(s, chi_max, cutoff)
        A3 = vh[:k2].reshape(k2, d, dr)
        rest = (u[:, :k2] * s[:k2]).reshape(dl * d, d * k2)
        u, s, vh = _svd(rest)
        k1, w1 = _truncate(s, chi_max, cutoff)
        A2 = vh[:k1].reshape(k1, d, k2)
        A1 = (u[:, :k1] * s[:k1]).reshape(dl, d, k1)
        A1 *= nrm / max(np.linalg.norm(A1), 1e-300)
        lost = w1 + w2
    return A1, A2, A3, lost


def _merge3(mps, s):
    t = np.tensordot(mps.tensors[s], mps.tensors[s + 1], axes=([2], [0]))
    return np.tensordot(t, mps.tensors[s + 2], axes=([3], [0]))


# -- local Hamiltonians and gates ------------------------------------------------

def _kron3(a, b, c):
    # site s is the lowest bit: kron order is (s+2, s+1, s)
    return np.kron(c, np.kron(b, a))


@dataclass(frozen=True)
class ChainModel:
    """A chain Hamiltonian written as a sum of three-site terms h_s on (s, s+1, s+2)."""

    name: str
    L: int
    terms: tuple           # 8x8 matrices, index s-1 for s = 1..L-2
    params: dict = field(default_factory=dict, hash=False, compare=False)


def pxp_model(L):
    """PXP with open-boundary edge terms folded into the first and last gates."""
    if L < 3:
        raise TensorNetError("three-site gates need L >= 3")
    terms = []
    for s in range(1, L - 1):
        h = _kron3(_P, _X, _P)
        if s == 1:
            h = h + _kron3(_X, _P, _I2)
        if s == L - 2:
            h = h + _kron3(_I2, _P, _X)
        terms.append(h)
    return ChainModel("pxp", L, tuple(terms), dict(boundary="open", mirror=True, real=True))


def rydberg_model(L, omega, delta, u1, u2, sign=+1):
    """H_+/- as three-site terms; single-site and U1 pieces ride on the left site."""
    if L < 3:
        raise TensorNetError("three-site gates need L >= 3")
    sign = 1 if sign in (1, "+", "plus") else -1
    one = sign * omega / 2.0 * _X - delta * _N
    terms = []
    for s in range(1, L - 1):
        h = _kron3(one, _I2, _I2) + u1 * _kron3(_N, _N, _I2) + u2 * _kron3(_N, _I2, _N)
        if s == L - 2:
            h = h + _kron3(_I2, one, _I2) + _kron3(_I2, _I2, one) + u1 * _kron3(_I2, _N, _N)
        terms.append(h)
    return ChainModel("rydberg", L, tuple(terms),
                      dict(omega=omega, delta=delta, u1=u1, u2=u2, sign=sign,
                           mirror=True, real=True))


def model_dense(model):
    """Dense 2**L Hamiltonian assembled from the three-site terms (oracle)."""
    L = model.L
    dim = 1 << L
    H = np.zeros((dim, dim), dtype=np.complex128)
    for s, h in enumerate(model.terms, start=1):
        left = 1 << (s - 1)
        right = 1 << (L - s - 2)
        H += np.kron(np.eye(right), np.kron(h, np.eye(left)))
    return H


def _gate6(h, tau):
    g = sla.expm(-1j * tau * h)
    return g.reshape(2, 2, 2, 2, 2, 2).transpose(2, 1, 0, 5, 4, 3)


_S4_A = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_S4_B = 1.0 - 2.0 * _S4_A


def trotter_layers(nsteps, dt, order=2):
    """(family, tau) layers for ``nsteps`` Trotter steps, adjacent layers merged.

    Family f holds the gates with (s - 1) % 3 == f. Order 2 is the symmetric
    splitting f0 f1 f2 f1 f0; order 4 composes it with Suzuki's triple jump.
    """
    def s2(h):
        return [(0, h / 2), (1, h / 2), (2, h), (1, h / 2), (0, h / 2)]

    if order == 2:
        one = s2(dt)
    elif order == 4:
        one = s2(_S4_A * dt) + s2(_S4_B * dt) + s2(_S4_A * dt)
    else:
        raise TensorNetError("Trotter order must be 2 or 4")
    merged = []
    for fam, tau in one * nsteps:
        if merged and merged[-1][0] == fam:
            merged[-1] = (fam, merged[-1][1] + tau)
        else:
            merged.append((fam, tau))
    return merged


_STRINGS3 = np.array([_kron3(a, b, c) for a in _BASIS4 for b in _BASIS4
                      for c in _BASIS4])                    # index (a, b, c) = (s, s+1, s+2)


def _heisenberg_gate6(h, tau):
    """Real 64x64 map of Pauli coefficients under O -> U^dag O U, U = e^{-i tau h}."""
    U = sla.expm(-1j * tau * h)
    R = np.einsum("pij,jk,qkl,li->pq", _STRINGS3, U.conj().T, _STRINGS3, U,
                  optimize=True).real / 8.0
    return R.reshape((4,) * 6)


class _GateCache:
    def __init__(self, model, superop=False):
        self.model = model
        self.superop = superop
        self.cache = {}

    def __call__(self, s, tau):
        key = (s, round(tau, 15))
        g = self.cache.get(key)
        if g is None:
            h = self.model.terms[s - 1]
            g = _heisenberg_gate6(h, tau) if self.superop else _gate6(h, tau)
            self.cache[key] = g
        return g


def _apply_gate_state(theta, g):
    return np.einsum("abcxyz,lxyzr->labcr", g, theta, optimize=True)


# the Pauli-basis superoperator acts exactly like a d=4 state gate
_apply_gate_operator = _apply_gate_state


def _sweep_layer(mps, gates, fam, tau, apply, step_log):
    L = mps.L
    sites = [s for s in range(1, L - 1) if (s - 1) % 3 == fam]
    if not sites:
        return
    # alternate sweep direction to keep centre moves short
    to_right = mps.center <= (L - 1) // 2
    order = sites if to_right else sites[::-1]
    for s in order:
        k = s - 1
        if to_right:
            move_center(mps, k)
        else:
            move_center(mps, k + 2)
        theta = apply(_merge3(mps, k), gates(s, tau))
        A1, A2, A3, lost = _split3(theta, mps.chi_max, mps.cutoff, to_right)
        mps.tensors[k:k + 3] = [A1, A2, A3]
        mps.center = k + 2 if to_right else k
        step_log.append(lost)


def _evolve(mps, model, t, dt, order, superop=False, gates=None):
    if t == 0:
        return 0.0
    if dt <= 0 or dt > 0.1 + 1e-12:
        raise TensorNetError("Trotter step must satisfy 0 < dt <= 0.1")
    nsteps = max(1, int(np.ceil(abs(t) / dt - 1e-9)))
    tau = t / nsteps
    gates = gates or _GateCache(model, superop)
    apply = _apply_gate_operator if superop else _apply_gate_state
    step_log = []
    for fam, h in trotter_layers(nsteps, tau, order):
        _sweep_layer(mps, gates, fam, h, apply, step_log)
    per_step = float(np.sum(step_log)) / nsteps
    mps.discarded += float(np.sum(step_log))
    mps.max_step_discarded = max(mps.max_step_discarded, per_step)
    return per_step


# -- local expectation values ---------------------------------------------------

def single_site_rdms(mps, sites=None):
    """Exact single-site density matrices, one left-to-right centre sweep.

    Returned in the (down, up) ordering, shape (len(sites), 2, 2).
    """
    L = mps.L
    sites = list(range(1, L + 1)) if sites is None else [int(s) for s in sites]
    want = set(sites)
    out = {}
    move_center(mps, 0)
    nrm2 = np.linalg.norm(mps.tensors[0]) ** 2
    for k in range(L):
        move_center(mps, k)
        if k + 1 in want:
            A = mps.tensors[k]
            rho = np.einsum("asb,atb->st", A, A.conj())
            out[k + 1] = rho / nrm2
    return np.array([out[s] for s in sites])


def mps_single_site_rdm(mps, j):
    """2x2 reduced density matrix at 1-indexed site ``j``."""
    move_center(mps, j - 1)
    A = mps.tensors[j - 1]
    rho = np.einsum("asb,atb->st", A, A.conj())
    return rho / np.trace(rho).real


def local3_expectations(mps, mats):
    """<h_s> for three-site matrices ``mats[s-1]`` acting on (s, s+1, s+2)."""
    vals = []
    nrm2 = norm(mps) ** 2
    for s, h in enumerate(mats, start=1):
        move_center(mps, s - 1)
        theta = _merge3(mps, s - 1)
        g = h.reshape(2, 2, 2, 2, 2, 2).transpose(2, 1, 0, 5, 4, 3)
        ht = _apply_gate_state(theta, g)
        vals.append(np.vdot(theta, ht).real / nrm2)
    return np.array(vals)


def energy(mps, model):
    return float(np.sum(local3_expectations(mps, model.terms)))


def blockade_violation(mps):
    """sum_j <n_j n_{j+1}>, an upper bound on the weight outside the constrained space."""
    L = mps.L
    mats = [_kron3(_N, _N, _I2) for _ in range(L - 2)]
    mats[-1] = mats[-1] + _kron3(_I2, _N, _N)
    return float(np.sum(local3_expectations(mps, mats)))


# -- TEBD ------------------------------------------------------------------------

@dataclass
class TEBDResult:
    mps: MatrixProductState
    meta: dict


def tebd_evolve(psi, model, t, dt=TEBD_DT, chi_max=None, cutoff=None, order=2,
                monitor=None):
    """Evolve an MPS by e^{-iHt} with three-site gates.

    Returns a new MPS; ``psi`` is left untouched. Metadata records the
    discarded weight, the Trotter order and, for PXP, the blockade monitor.
    """
    mps = psi.copy()
    if chi_max is not None:
        mps.chi_max = int(chi_max)
    if cutoff is not None:
        mps.cutoff = float(cutoff)
    if model.L != mps.L:
        raise TensorNetError("model and state sizes differ")
    per_step = _evolve(mps, model, t, dt, order)
    meta = _run_meta(mps, model, dt, order)
    monitor = model.name == "pxp" if monitor is None else monitor
    if monitor:
        v = blockade_violation(mps)
        meta["blockade_violation"] = v
        if v > BLOCKADE_TOL:
            raise TensorNetError(f"blockade violated: weight {v:.3g}")
    meta["last_step_discarded"] = per_step
    mps.center = mps.center
    return TEBDResult(mps, meta)


def _run_meta(mps, model, dt, order):
    meta = dict(model=model.name, L=model.L, dt=dt, trotter_order=order,
                chi_max=mps.chi_max, cutoff=mps.cutoff,
                discarded_weight=mps.discarded,
                max_step_discarded=mps.max_step_discarded,
                max_bond=max(mps.bonds()) if mps.L > 1 else 1)
    meta["converged"] = mps.max_step_discarded <= STEP_WARN
    if not meta["converged"]:
        log.warning("TEBD discarded weight per step %.3g exceeds %.1g",
                    mps.max_step_discarded, STEP_WARN)
    return meta


def _grid_steps(times, dt):
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise TensorNetError("times must be increasing and non-negative")
    return times


def holevo_tebd(model, bits, encode_site, probe_sites, times, dt=TEBD_DT,
                chi_max=CHI_STATE, cutoff=CUTOFF, order=2):
    """Holevo field from two TEBD branches (psi and sigma^x_encode psi)."""
    L = model.L
    config = bits if isinstance(bits, (int, np.integer)) else parse_config(bits, L)
    flipped = config ^ (1 << (encode_site - 1))
    if model.name == "pxp":
        for c in (config, flipped):
            if c & (c >> 1):
                raise TensorNetError(f"sigma^x at site {encode_site} is not a legal flip")
    times = _grid_steps(times, dt)
    sites = [int(s) for s in probe_sites]
    branches = [mps_from_product(config, L, chi_max, cutoff),
                mps_from_product(flipped, L, chi_max, cutoff)]
    gates = _GateCache(model)
    rdms = np.zeros((2, len(sites), len(times), 2, 2), dtype=np.complex128)
    blockade = 0.0
    tcur = 0.0
    for k, t in enumerate(times):
        for b, mps in enumerate(branches):
            _evolve(mps, model, t - tcur, dt, order, gates=gates)
            rdms[b, :, k] = single_site_rdms(mps, sites)
            if model.name == "pxp":
                blockade = max(blockade, blockade_violation(mps))
        tcur = t
    chi = np.clip(holevo_from_rdms(rdms[0], rdms[1]), 0.0, None)
    meta = dict(_run_meta(branches[0], model, dt, order), encode_site=int(encode_site),
                method="tebd", entropy_base=2,
                discarded_weight_branches=[m.discarded for m in branches])
    meta["converged"] = all(m.max_step_discarded <= STEP_WARN for m in branches)
    if model.name == "pxp":
        meta["blockade_violation"] = blockade
    return ScramblingField("holevo", sites, times, chi, None, meta)


# -- MPO application and the time-split OTOC -------------------------------------

def apply_mpo(mpo, psi, chi_max, cutoff=CUTOFF):
    """Zip-up application of a vectorised MPO to an MPS, then a compression sweep.

    Returns (new MPS, discarded weight).
    """
    move_center(psi, 0)
    L = psi.L
    C = np.ones((1, 1, 1), dtype=np.complex128)       # (new, psi, op)
    out = []
    lost = 0.0
    for k in range(L):
        A = psi.tensors[k]
        M = mpo.site_tensor(k)                          # (ol, out, in, or)
        T = np.tensordot(C, A, axes=([1], [0]))         # n o s q
        T = np.tensordot(T, M, axes=([1, 2], [0, 2]))   # n q x r
        n, q, x, r = T.shape
        T = T.transpose(0, 2, 1, 3)
        if k == L - 1:
            out.append(T.reshape(n, x, 1))
            break
        u, s, vh = _svd(T.reshape(n * x, q * r))
        keep, w = _truncate(s, 2 * chi_max, cutoff * 1e-2)
        lost += w
        out.append(u[:, :keep].reshape(n, x, keep))
        C = (s[:keep, None] * vh[:keep]).reshape(keep, q, r)
    res = MatrixProductState(out, L - 1, chi_max, cutoff)
    # right-to-left compression to the target bond dimension
    for k in range(L - 1, 0, -1):
        A = res.tensors[k]
        dl, d, dr = A.shape
        u, s, vh = _svd(A.reshape(dl, d * dr))
        keep, w = _truncate(s, chi_max, cutoff)
        lost += w
        res.tensors[k] = vh[:keep].reshape(keep, d, dr)
        res.tensors[k - 1] = np.tensordot(res.tensors[k - 1], u[:, :keep] * s[:keep], axes=([2], [0]))
    res.center = 0
    return res, lost


def heisenberg_evolve(mpo, model, tau, dt=TEBD_DT, order=2, gates=None):
    """O -> e^{iH tau} O e^{-iH tau} in place; negative tau runs backwards."""
    return _evolve(mpo.mps, model, tau, dt, order, superop=True, gates=gates)


def otoc_mpo_timesplit(model, bits, i, j, W_axis="z", V_axis="z", times=None,
                       chi_max=CHI_OTOC, dt=TEBD_DT, cutoff=CUTOFF, order=2,
                       state_chi=None):
    """F_ij(t) = <psi(t/2)| W^+(-t/2) V^+(t/2) W(-t/2) V(t/2) |psi(t/2)>.

    The state and the two Heisenberg operators are each evolved for t/2 only.
    Every t/2 must be a multiple of ``dt``. Points where the operator bond
    saturates with discarded weight above 1e-3 are flagged.
    """
    L = model.L
    config = bits if isinstance(bits, (int, np.integer)) else parse_config(bits, L)
    times = _grid_steps(times, dt)
    sites = [int(j)] if np.isscalar(j) else [int(s) for s in j]
    half = times / 2
    nsteps = np.rint(half / dt)
    if np.any(np.abs(nsteps * dt - half) > 1e-9):
        raise TensorNetError("every t/2 must be a multiple of dt")
    psi = mps_from_product(config, L, state_chi or chi_max, cutoff)
    mirror = bool(model.params.get("mirror"))
    real = bool(model.params.get("real"))

    def rep(axis, s):
        return (axis, min(s, L + 1 - s)) if mirror else (axis, s)

    # forward-evolved operators, shared between mirror-image sites; W(-t/2)
    # follows from W(+t/2) by complex conjugation when H is real
    keys = {rep(V_axis, s) for s in sites}
    if real:
        keys.add(rep(W_axis, i))
    ops = {k: local_pauli_mpo(L, k[1], k[0], chi_max, cutoff) for k in sorted(keys)}
    W_back = None if real else local_pauli_mpo(L, i, W_axis, chi_max, cutoff)
    w_sign = -1.0 if W_axis == "y" else 1.0

    def current(axis, s):
        k = rep(axis, s)
        return ops[k] if k[1] == s else mirror_mpo(ops[k])

    fwd = _GateCache(model, superop=True)
    sgates = _GateCache(model)
    values = np.zeros((len(sites), len(times)), dtype=np.complex128)
    flags = np.zeros(values.shape, dtype=bool)
    lost = np.zeros(values.shape)
    tcur = 0.0
    for k, th in enumerate(half):
        step = th - tcur
        if step:
            _evolve(psi, model, step, dt, order, gates=sgates)
            for op in ops.values():
                heisenberg_evolve(op, model, step, dt, order, gates=fwd)
            if W_back is not None:
                heisenberg_evolve(W_back, model, -step, dt, order, gates=fwd)
        tcur = th
        if real:
            W = conjugate_mpo(current(W_axis, i))
            if w_sign < 0:
                W.mps.tensors[0] = -W.mps.tensors[0]
        else:
            W = W_back
        w_psi, l1 = apply_mpo(W, psi, chi_max, cutoff)
        for n, s in enumerate(sites):
            V = current(V_axis, s)
            v_psi, l2 = apply_mpo(V, psi, chi_max, cutoff)
            ket, l3 = apply_mpo(W, v_psi, chi_max, cutoff)
            bra, l4 = apply_mpo(V, w_psi, chi_max, cutoff)
            values[n, k] = overlap(bra, ket)
            lost[n, k] = l1 + l2 + l3 + l4 + W.mps.max_step_discarded + V.mps.max_step_discarded
            saturated = max(max(W.bonds()), max(V.bonds())) >= chi_max
            flags[n, k] = saturated and lost[n, k] > SATURATION_WARN
    all_ops = list(ops.values()) + ([W_back] if W_back is not None else [])
    meta = dict(model=model.name, L=L, i=int(i), W=W_axis, V=V_axis, method="mpo-timesplit",
                dt=dt, trotter_order=order, chi_max=chi_max, cutoff=cutoff,
                max_operator_bond=max(max(op.bonds()) for op in all_ops),
                max_discarded=float(lost.max()) if lost.size else 0.0,
                operator_discarded=[op.mps.discarded for op in all_ops],
                evolved_operators=len(all_ops))
    return ScramblingField("otoc", sites, times, values, flags, meta)
