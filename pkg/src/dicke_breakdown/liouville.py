"""Lindblad master equation for N spins and a truncated oscillator.

Permutation-invariant density matrices are block diagonal in the total
spin j, rho = sum_j rho_j (x) 1_{d_N(j)}, where d_N(j) counts the
equivalent irreducible copies.  Only the (2j+1)(n_max+1)-dimensional blocks
rho_j are stored.  Collective terms act inside a block; the local
spontaneous-emission jumps couple block j to j and j +- 1 with
coefficients obtained from spin-1/2 Clebsch-Gordan coefficients.

:func:`brute_force_generator` builds the same dynamics on the full
2^N (n_max+1)-dimensional space and serves as the reference for small N.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _kernels as _k
from .integrate import dopri5, rk4_fixed
from .model import ModelParams, validate_params

__all__ = [
    "DickeBlock",
    "DickeBasis",
    "DensityState",
    "DickeGenerator",
    "BruteForceGenerator",
    "Observables",
    "DensityTrajectory",
    "BreakdownReport",
    "TraceDriftError",
    "build_dicke_basis",
    "dicke_degeneracy",
    "build_generator",
    "brute_force_generator",
    "ground_state",
    "dressed_ground_state",
    "hamiltonian_block",
    "observables",
    "evolve_density",
    "detect_breakdown",
    "symmetric_embedding",
    "embed_state",
    "project_state",
    "write_snapshot_csv",
    "write_fock_csv",
]


class TraceDriftError(RuntimeError):
    """The propagated state lost normalization beyond tolerance."""


# ---------------------------------------------------------------------------
# Dicke basis
# ---------------------------------------------------------------------------


def dicke_degeneracy(n_spins: int, j: float) -> int:
    """Number of copies of total spin ``j`` among ``n_spins`` spins-1/2,
    ``N! (2j+1) / ((N/2 - j)! (N/2 + j + 1)!)``."""
    if n_spins == 0:
        return 1 if j == 0 else 0
    a = n_spins / 2 - j
    if a < 0 or abs(a - round(a)) > 1e-9:
        return 0
    a = int(round(a))
    b = int(round(n_spins / 2 + j + 1))
    two_j_plus_1 = int(round(2 * j + 1))
    return math.factorial(n_spins) * two_j_plus_1 // (math.factorial(a) * math.factorial(b))


def _j_values(n_spins: int) -> list[float]:
    return [n_spins / 2 - k for k in range(n_spins // 2 + 1)]


@dataclass(frozen=True)
class DickeBlock:
    j: float
    dim: int
    degeneracy: int

    def m_values(self) -> np.ndarray:
        # index k <-> m = j - k
        return self.j - np.arange(self.dim)


@dataclass(frozen=True)
class DickeBasis:
    """Total-spin blocks of ``n_spins`` spins, largest j first."""

    n_spins: int
    blocks: tuple

    @property
    def element_count(self) -> int:
        return sum(b.dim**2 for b in self.blocks)

    def index(self, j: float, m: float, mp: float) -> int:
        """Flat position of the spin matrix element (j, m, m')."""
        offset = 0
        for b in self.blocks:
            if abs(b.j - j) < 1e-9:
                k, kp = int(round(b.j - m)), int(round(b.j - mp))
                if not (0 <= k < b.dim and 0 <= kp < b.dim):
                    raise IndexError(f"m, m' out of range for j={j}")
                return offset + k * b.dim + kp
            offset += b.dim**2
        raise IndexError(f"j={j} not in basis")

    def elements(self):
        """All (j, m, m') triples in flat-index order."""
        for b in self.blocks:
            ms = b.m_values()
            for m in ms:
                for mp in ms:
                    yield (b.j, float(m), float(mp))

    def block_of(self, j: float) -> int:
        for i, b in enumerate(self.blocks):
            if abs(b.j - j) < 1e-9:
                return i
        raise KeyError(j)


def build_dicke_basis(n_spins: int) -> DickeBasis:
    if int(n_spins) != n_spins or n_spins < 1:
        raise ValueError("n_spins must be a positive integer")
    blocks = tuple(
        DickeBlock(j=j, dim=int(round(2 * j + 1)), degeneracy=dicke_degeneracy(n_spins, j))
        for j in _j_values(n_spins)
    )
    return DickeBasis(n_spins=int(n_spins), blocks=blocks)


# ---------------------------------------------------------------------------
# Density states
# ---------------------------------------------------------------------------


@dataclass
class DensityState:
    """Block-diagonal density matrix.

    ``blocks[i]`` is the ``(D_i, D_i)`` matrix of spin block
    ``basis.blocks[i]`` with ``D_i = (2j+1)(n_max+1)``; row index
    ``k*(n_max+1) + n`` pairs spin projection ``m = j - k`` with Fock
    number ``n``.  The physical state carries each block ``degeneracy``
    times.
    """

    basis: DickeBasis
    n_max: int
    blocks: list
    time: float = 0.0

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    def coefficient(self, j, m, mp, n, n_p) -> complex:
        i = self.basis.block_of(j)
        b = self.basis.blocks[i]
        k, kp = int(round(b.j - m)), int(round(b.j - mp))
        return complex(self.blocks[i][k * self.n_fock + n, kp * self.n_fock + n_p])

    def trace(self) -> float:
        return float(sum(b.degeneracy * np.trace(x).real for b, x in zip(self.basis.blocks, self.blocks)))

    def hermiticity_error(self) -> float:
        return max(float(np.max(np.abs(x - x.conj().T))) for x in self.blocks)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.blocks])

    @classmethod
    def from_vector(cls, basis, n_max, vec, time=0.0) -> "DensityState":
        blocks, offset = [], 0
        for b in basis.blocks:
            D = b.dim * (n_max + 1)
            blocks.append(vec[offset: offset + D * D].reshape(D, D).copy())
            offset += D * D
        return cls(basis, n_max, blocks, time)

    def copy(self) -> "DensityState":
        return DensityState(self.basis, self.n_max, [x.copy() for x in self.blocks], self.time)


def _empty_blocks(basis: DickeBasis, n_max: int) -> list:
    return [np.zeros((b.dim * (n_max + 1),) * 2, dtype=complex) for b in basis.blocks]


def ground_state(basis: DickeBasis, n_max: int) -> DensityState:
    """All spins down, oscillator in vacuum."""
    blocks = _empty_blocks(basis, n_max)
    top = basis.blocks[0]
    k = top.dim - 1  # m = -N/2
    idx = k * (n_max + 1)
    blocks[0][idx, idx] = 1.0
    return DensityState(basis, n_max, blocks)


def hamiltonian_block(p: ModelParams, j: float, n_max: int) -> sp.csr_matrix:
    """``omega0 J_z + omega a^dag a + 2 g J_x (a + a^dag)`` on spin-j block."""
    jz, jp = _spin_ops(j)
    a, num = _fock_ops(n_max)
    eyeS = sp.identity(jz.shape[0], format="csr")
    eyeF = sp.identity(n_max + 1, format="csr")
    jx = (jp + jp.T) / 2
    return (p.omega0 * sp.kron(jz, eyeF) + p.omega * sp.kron(eyeS, num)
            + 2 * p.g * sp.kron(jx, a + a.T)).tocsr()


def dressed_ground_state(basis: DickeBasis, p: ModelParams, n_max: int) -> DensityState:
    """Lowest eigenstate of the Hamiltonian in the symmetric block."""
    H = hamiltonian_block(p, basis.blocks[0].j, n_max).toarray()
    _, vecs = np.linalg.eigh(H)
    psi = vecs[:, 0]
    blocks = _empty_blocks(basis, n_max)
    blocks[0] = np.outer(psi, psi.conj()).astype(complex)
    return DensityState(basis, n_max, blocks)


def product_state(basis: DickeBasis, n_max: int, m: float, fock: int = 0) -> DensityState:
    """Symmetric Dicke state |N/2, m> with Fock state |fock>."""
    blocks = _empty_blocks(basis, n_max)
    top = basis.blocks[0]
    k = int(round(top.j - m))
    idx = k * (n_max + 1) + fock
    blocks[0][idx, idx] = 1.0
    return DensityState(basis, n_max, blocks)


def maximally_mixed_spin_state(basis: DickeBasis, n_max: int, fock: int = 0) -> DensityState:
    """Identity / 2^N on the spins times the Fock state ``|fock>``."""
    blocks = _empty_blocks(basis, n_max)
    scale = 2.0 ** (-basis.n_spins)
    for x, b in zip(blocks, basis.blocks):
        for k in range(b.dim):
            idx = k * (n_max + 1) + fock
            x[idx, idx] = scale
    return DensityState(basis, n_max, blocks)


def random_symmetric_state(basis: DickeBasis, n_max: int, rng, fock_support: Optional[int] = None) -> DensityState:
    """Random positive, unit-trace permutation-invariant state."""
    nF = n_max + 1
    support = nF if fock_support is None else min(nF, fock_support)
    blocks = []
    for b in basis.blocks:
        D = b.dim * nF
        X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
        mask = (np.arange(D) % nF) < support
        X = X * mask[:, None]
        blocks.append(X @ X.conj().T)
    state = DensityState(basis, n_max, blocks)
    tr = state.trace()
    state.blocks = [x / tr for x in blocks]
    return state


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _spin_ops(j: float):
    """J_z, J_+ in the |j, m = j - k> ordering."""
    dim = int(round(2 * j + 1))
    m = j - np.arange(dim)
    jz = sp.diags(m)
    # <m+1| J+ |m> = sqrt((j-m)(j+m+1)); row k-1, column k
    up = np.sqrt((j - m[1:]) * (j + m[1:] + 1))
    jp = sp.diags(up, 1, shape=(dim, dim))
    return jz.tocsr(), jp.tocsr()


def _fock_ops(n_max: int):
    nF = n_max + 1
    a = sp.diags(np.sqrt(np.arange(1, nF)), 1, shape=(nF, nF)).tocsr()
    num = sp.diags(np.arange(nF, dtype=float)).tocsr()
    return a, num


def _cg_up(j: float, jp: float, m: float) -> float:
    """<jp, m-1/2; 1/2, +1/2 | j, m>."""
    if abs(m - 0.5) > jp + 1e-9 or abs(m) > j + 1e-9:
        return 0.0
    if abs(j - (jp + 0.5)) < 1e-9:
        return math.sqrt((jp + m + 0.5) / (2 * jp + 1))
    if abs(j - (jp - 0.5)) < 1e-9:
        return -math.sqrt((jp - m + 0.5) / (2 * jp + 1))
    return 0.0


def _cg_down(j: float, jp: float, m: float) -> float:
    """<jp, m+1/2; 1/2, -1/2 | j, m>."""
    if abs(m + 0.5) > jp + 1e-9 or abs(m) > j + 1e-9:
        return 0.0
    if abs(j - (jp + 0.5)) < 1e-9:
        return math.sqrt((jp - m + 0.5) / (2 * jp + 1))
    if abs(j - (jp - 0.5)) < 1e-9:
        return math.sqrt((jp + m + 0.5) / (2 * jp + 1))
    return 0.0


@lru_cache(maxsize=None)
def local_emission_terms(n_spins: int):
    """Block couplings of ``sum_i sigma_-^(i) rho sigma_+^(i)``.

    Returns a tuple of ``(J, j, weight, U)``: block j feeds block J through
    ``weight * U rho_j U^T`` with ``U`` a dense ``(2J+1, 2j+1)`` matrix.
    The weight is ``N d_{N-1}(j') / d_N(J)`` for the intermediate
    (N-1)-spin total spin j'.
    """
    N = n_spins
    js = _j_values(N)
    terms = []
    for J in js:
        dJ = dicke_degeneracy(N, J)
        dimJ = int(round(2 * J + 1))
        for jprime in (J - 0.5, J + 0.5):
            if jprime < 0 or jprime > (N - 1) / 2 + 1e-9:
                continue
            d_prev = dicke_degeneracy(N - 1, jprime)
            if d_prev == 0:
                continue
            weight = N * d_prev / dJ
            for j in (jprime - 0.5, jprime + 0.5):
                if j < 0 or not any(abs(j - x) < 1e-9 for x in js):
                    continue
                dimj = int(round(2 * j + 1))
                U = np.zeros((dimJ, dimj))
                for K in range(dimJ):
                    M = J - K
                    m_src = M + 1
                    k_src = int(round(j - m_src))
                    if not 0 <= k_src < dimj:
                        continue
                    U[K, k_src] = _cg_up(j, jprime, m_src) * _cg_down(J, jprime, M)
                if np.any(U):
                    terms.append((J, j, weight, U))
    return tuple(terms)


class DickeGenerator:
    """Lindblad generator on the block-diagonal Dicke representation.

    Implements ``-i[H, rho] + gamma sum_i D[sigma_-^(i)] rho + kappa D[a] rho``
    with ``H = omega0 J_z + omega a^dag a + 2 g (a + a^dag) J_x``.

    Blocks are handled as ``(2j+1, n_max+1, 2j+1, n_max+1)`` tensors and
    every term is a shifted-slice update, so nothing of superoperator size
    is ever formed.  :meth:`apply_blocks` accepts ``t`` and ``frame``:
    in the ``"interaction"`` frame the free oscillator rotation
    ``omega a^dag a`` is removed and ``a`` carries the phase
    ``exp(-i omega t)``.  Diagonal-in-n observables are the same in both
    frames.
    """

    def __init__(self, p: ModelParams, basis: DickeBasis, n_max: int):
        validate_params(p)
        if basis.n_spins != p.n_spins:
            raise ValueError("basis does not match n_spins")
        if int(n_max) != n_max or n_max < 1:
            raise ValueError("n_max must be an integer >= 1")
        self.params = p
        self.basis = basis
        self.n_max = int(n_max)
        nF = self.n_max + 1
        N = p.n_spins
        n = np.arange(nF, dtype=float)
        self._sqrt_all = np.sqrt(n)  # <n-1|a|n> = sqrt(n)
        self._energy = []  # frame-free diagonal of H_eff
        self._jx = []  # <k|J_x|k+1>
        self.sizes = []
        for b in basis.blocks:
            m = b.m_values()
            e = p.omega0 * m[:, None] - 0.5j * (p.kappa * n[None, :] + p.gamma * (N / 2 + m[:, None]))
            self._energy.append(e)
            self._jx.append(np.ascontiguousarray(0.5 * np.sqrt((b.j - m[1:]) * (b.j + m[1:] + 1))))
            self.sizes.append(b.dim * nF)
        self._n = n
        # (destination block, source block, offset, weights over destination m)
        self._jumps = [[] for _ in basis.blocks]
        for J, j, weight, U in local_emission_terms(N):
            dst, src = basis.block_of(J), basis.block_of(j)
            rows = np.flatnonzero(np.any(U != 0, axis=1))
            shift = int(round(j - J - 1))
            coef = U[rows, rows + shift]
            self._jumps[dst].append((src, rows[0], rows[-1] + 1, shift, weight, coef))
        self._offsets = np.concatenate([[0], np.cumsum([D * D for D in self.sizes])])

    @property
    def dim(self) -> int:
        """Number of stored complex coefficients."""
        return int(self._offsets[-1])

    def apply_blocks(self, blocks: Sequence[np.ndarray], hermitian: bool = False,
                     t: float = 0.0, frame: str = "lab", parity_only: bool = False) -> list:
        """Return ``L(rho)`` block by block.

        ``hermitian`` is accepted for API symmetry; the fused stencil costs
        the same either way.  ``parity_only=True`` assumes ``rho`` has no
        elements connecting states of different excitation parity
        (``m + N/2 + n`` mod 2), a property the dynamics preserves; those
        elements are then neither read nor produced.
        """
        if frame not in ("lab", "interaction"):
            raise ValueError(f"unknown frame {frame!r}")
        p = self.params
        nF = self.n_max + 1
        phase = 1.0 + 0j if frame == "lab" else np.exp(-1j * p.omega * t)
        views = [
            np.ascontiguousarray(x).reshape(b.dim, nF, b.dim, nF)
            for b, x in zip(self.basis.blocks, blocks)
        ]
        out = []
        for i, (b, rho4) in enumerate(zip(self.basis.blocks, views)):
            e = self._energy[i]
            if frame == "lab":
                e = e + p.omega * self._n[None, :]
            r4 = np.zeros_like(rho4, dtype=complex) if parity_only else np.empty_like(rho4, dtype=complex)
            _k.coherent_part(rho4.astype(complex, copy=False), r4, e, self._jx[i],
                             self._sqrt_all, 2.0 * p.g, complex(phase), float(p.kappa),
                             bool(parity_only))
            if p.gamma:
                for src, lo, hi, shift, weight, coef in self._jumps[i]:
                    _k.add_jump(r4, views[src].astype(complex, copy=False), lo, hi, shift,
                                (p.gamma * weight) * np.outer(coef, coef))
            out.append(r4.reshape(self.sizes[i], self.sizes[i]))
        return out

    def apply(self, state: DensityState) -> DensityState:
        return DensityState(self.basis, self.n_max, self.apply_blocks(state.blocks), state.time)

    def block_views(self, vec):
        return [
            vec[self._offsets[i]: self._offsets[i + 1]].reshape(D, D)
            for i, D in enumerate(self.sizes)
        ]

    def apply_vector(self, vec: np.ndarray, hermitian: bool = False,
                     t: float = 0.0, frame: str = "lab", parity_only: bool = False) -> np.ndarray:
        out = np.empty_like(vec)
        blocks = self.apply_blocks(self.block_views(vec), hermitian, t, frame, parity_only)
        for i, x in enumerate(blocks):
            out[self._offsets[i]: self._offsets[i + 1]] = x.ravel()
        return out

    def mean_number_rate(self, state: DensityState) -> float:
        """Exact d<n>/dt at ``state``."""
        nF = self.n_max + 1
        d = self.apply_blocks(state.blocks)
        return float(sum(
            b.degeneracy * np.sum(np.tile(self._n, b.dim) * np.diagonal(x)).real
            for b, x in zip(self.basis.blocks, d)
        ))


def parity_mismatch(state: DensityState) -> float:
    """Largest element connecting different excitation parities."""
    nF = state.n_fock
    worst = 0.0
    for b, x in zip(state.basis.blocks, state.blocks):
        par = (np.arange(b.dim)[:, None] + np.arange(nF)[None, :]).ravel() % 2
        odd = par[:, None] != par[None, :]
        if odd.any():
            worst = max(worst, float(np.max(np.abs(x[odd]))))
    return worst


def to_frame(state: DensityState, omega: float, t: float, sign: int) -> DensityState:
    """Multiply coherences by ``exp(sign * i omega (n - n') t)``.

    ``sign=-1`` maps interaction-frame blocks to the lab frame.
    """
    nF = state.n_fock
    n = np.arange(nF)
    ph = np.exp(sign * 1j * omega * t * (n[:, None] - n[None, :]))
    blocks = []
    for b, x in zip(state.basis.blocks, state.blocks):
        blocks.append((x.reshape(b.dim, nF, b.dim, nF) * ph[None, :, None, :]).reshape(x.shape))
    return DensityState(state.basis, state.n_max, blocks, state.time)


def build_generator(p: ModelParams, basis: DickeBasis, n_max: int) -> DickeGenerator:
    return DickeGenerator(p, basis, n_max)


class BruteForceGenerator:
    """Literal tensor-product Lindblad generator (spins first, then Fock).

    Spin basis per site: index 0 = up, 1 = down.
    """

    def __init__(self, p: ModelParams, n_max: int):
        validate_params(p)
        if p.n_spins > 4:
            raise ValueError("brute-force generator limited to n_spins <= 4")
        if int(n_max) != n_max or n_max < 1:
            raise ValueError("n_max must be an integer >= 1")
        self.params = p
        self.n_max = int(n_max)
        N, nF = p.n_spins, self.n_max + 1
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sz = np.diag([1.0, -1.0]).astype(complex)
        sm = np.array([[0, 0], [1, 0]], dtype=complex)
        a = np.diag(np.sqrt(np.arange(1, nF)), 1).astype(complex)
        eyeF = np.eye(nF)

        def site(op, k):
            mats = [np.eye(2)] * N
            mats[k] = op
            out = mats[0]
            for m in mats[1:]:
                out = np.kron(out, m)
            return np.kron(out, eyeF)

        A = np.kron(np.eye(2**N), a)
        self.a = A
        self.sigma_x = [site(sx, k) for k in range(N)]
        self.sigma_z = [site(sz, k) for k in range(N)]
        self.sigma_m = [site(sm, k) for k in range(N)]
        self.H = (
            p.omega0 / 2 * sum(self.sigma_z)
            + p.omega * A.conj().T @ A
            + p.g * (A + A.conj().T) @ sum(self.sigma_x)
        )
        self.jumps = [math.sqrt(p.gamma) * s for s in self.sigma_m] + [math.sqrt(p.kappa) * A]
        self.hilbert_dim = 2**N * nF

    @property
    def dim(self) -> int:
        """Dimension of the superoperator, (2^N (n_max+1))^2."""
        return self.hilbert_dim**2

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.H @ rho - rho @ self.H)
        for L in self.jumps:
            LdL = L.conj().T @ L
            out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
        return out

    def superoperator(self) -> sp.csr_matrix:
        """Row-major vectorized superoperator: vec(L rho) = S vec(rho)."""
        D = self.hilbert_dim
        eye = sp.identity(D, format="csr")
        H = sp.csr_matrix(self.H)

        def left(X):
            return sp.kron(X, eye)

        def right(X):
            return sp.kron(eye, X.T)

        S = -1j * (left(H) - right(H))
        for L in self.jumps:
            Ls = sp.csr_matrix(L)
            LdL = Ls.conj().T @ Ls
            S = S + sp.kron(Ls, Ls.conj()) - 0.5 * (left(LdL) + right(LdL))
        return S.tocsr()


def brute_force_generator(p: ModelParams, n_max: int) -> BruteForceGenerator:
    return BruteForceGenerator(p, n_max)


# ---------------------------------------------------------------------------
# Symmetric embedding (validation oracle)
# ---------------------------------------------------------------------------


def _collective_full(N):
    sz = np.diag([0.5, -0.5])
    sp_ = np.array([[0.0, 1.0], [0.0, 0.0]])
    def total(op):
        acc = np.zeros((2**N, 2**N))
        for k in range(N):
            mats = [np.eye(2)] * N
            mats[k] = op
            out = mats[0]
            for m in mats[1:]:
                out = np.kron(out, m)
            acc += out
        return acc
    return total(sz), total(sp_)


@lru_cache(maxsize=None)
def symmetric_embedding(n_spins: int):
    """Orthonormal vectors |j, m, alpha> in the 2^N spin space.

    Returns ``{j: [V_alpha, ...]}`` with each ``V_alpha`` of shape
    ``(2^N, 2j+1)`` and columns ordered m = j, j-1, ..., -j.  Built from
    the kernel of J_+ on the J_z = j eigenspace, independent of the
    Clebsch-Gordan construction used by :class:`DickeGenerator`.
    """
    N = n_spins
    Jz, Jp = _collective_full(N)
    Jm = Jp.T
    mz = np.diag(Jz)
    out = {}
    for j in _j_values(N):
        sel = np.flatnonzero(np.abs(mz - j) < 1e-9)
        above = np.flatnonzero(np.abs(mz - (j + 1)) < 1e-9)
        if above.size:
            K = scipy.linalg.null_space(Jp[np.ix_(above, sel)])
        else:
            K = np.eye(sel.size)
        vecs = []
        for col in K.T:
            hw = np.zeros(2**N)
            hw[sel] = col
            V = np.zeros((2**N, int(round(2 * j + 1))))
            V[:, 0] = hw
            m = j
            for k in range(1, V.shape[1]):
                V[:, k] = Jm @ V[:, k - 1] / math.sqrt((j + m) * (j - m + 1))
                m -= 1
            vecs.append(V)
        out[j] = vecs
    return out


def embed_state(state: DensityState) -> np.ndarray:
    """Full 2^N (n_max+1) density matrix of a block state."""
    N = state.basis.n_spins
    emb = symmetric_embedding(N)
    eyeF = np.eye(state.n_fock)
    D = 2**N * state.n_fock
    rho = np.zeros((D, D), dtype=complex)
    for b, x in zip(state.basis.blocks, state.blocks):
        for V in emb[b.j]:
            W = np.kron(V, eyeF)
            rho += W @ x @ W.T
    return rho


def project_state(rho: np.ndarray, basis: DickeBasis, n_max: int) -> DensityState:
    """Block representation of a permutation-invariant full matrix."""
    emb = symmetric_embedding(basis.n_spins)
    eyeF = np.eye(n_max + 1)
    blocks = []
    for b in basis.blocks:
        acc = 0
        for V in emb[b.j]:
            W = np.kron(V, eyeF)
            acc = acc + W.T @ rho @ W
        blocks.append(acc / b.degeneracy)
    return DensityState(basis, n_max, blocks)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


@dataclass
class Observables:
    """Expectation values of a state.

    ``sz`` is the per-spin polarization; ``szsz`` and ``sxsx`` are
    correlators between two different spins (NaN for a single spin).
    """

    sz: float
    n: float
    fock_distribution: np.ndarray
    sxsx: float
    szsz: float
    trace: float


def observables(state: DensityState) -> Observables:
    basis, nF = state.basis, state.n_fock
    N = basis.n_spins
    jz_mean = jz2 = jx2 = 0.0
    fock = np.zeros(nF)
    for b, x in zip(basis.blocks, state.blocks):
        diag = np.diagonal(x).real.reshape(b.dim, nF)
        m = b.m_values()
        w = b.degeneracy
        fock += w * diag.sum(axis=0)
        pm = diag.sum(axis=1)
        jz_mean += w * float(pm @ m)
        jz2 += w * float(pm @ m**2)
        # <J_x^2> = tr_F of the spin-reduced block
        red = np.einsum("knln->kl", x.reshape(b.dim, nF, b.dim, nF))
        jz, jp = _spin_ops(b.j)
        jx = ((jp + jp.T) / 2).toarray()
        jx2 += w * float(np.trace(jx @ jx @ red).real)
    n_mean = float(fock @ np.arange(nF))
    if N > 1:
        szsz = (4 * jz2 - N) / (N * (N - 1))
        sxsx = (4 * jx2 - N) / (N * (N - 1))
    else:
        szsz = sxsx = math.nan
    return Observables(
        sz=2 * jz_mean / N, n=n_mean, fock_distribution=fock,
        sxsx=sxsx, szsz=szsz, trace=state.trace(),
    )


def full_observables(rho: np.ndarray, gen: BruteForceGenerator) -> Observables:
    """Same record computed on a full tensor-product density matrix."""
    N = gen.params.n_spins
    nF = gen.n_max + 1
    ev = lambda O: float(np.trace(rho @ O).real)
    sz = sum(ev(s) for s in gen.sigma_z) / N
    n = ev(gen.a.conj().T @ gen.a)
    fock = np.diagonal(rho).real.reshape(2**N, nF).sum(axis=0)
    if N > 1:
        pairs = [(i, k) for i in range(N) for k in range(N) if i != k]
        szsz = sum(ev(gen.sigma_z[i] @ gen.sigma_z[k]) for i, k in pairs) / len(pairs)
        sxsx = sum(ev(gen.sigma_x[i] @ gen.sigma_x[k]) for i, k in pairs) / len(pairs)
    else:
        szsz = sxsx = math.nan
    return Observables(sz, n, fock, sxsx, szsz, float(np.trace(rho).real))


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


@dataclass
class DensityTrajectory:
    times: np.ndarray
    records: list  # Observables per sample
    states: Optional[list]
    max_trace_drift: float
    max_hermiticity_error: float
    nfev: int = 0

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def evolve_density(
    rho0: DensityState,
    p: ModelParams,
    t_final: float,
    tol: float = 1e-8,
    *,
    sample_times: Optional[Sequence[float]] = None,
    method: str = "dopri5",
    dt: Optional[float] = None,
    keep_states: bool = True,
    generator: Optional[DickeGenerator] = None,
    max_trace_drift: float = 1e-6,
    frame: str = "interaction",
) -> DensityTrajectory:
    """Propagate ``d rho/dt = L rho`` from ``rho0``.

    Snapshots are taken at ``sample_times`` (default: 0 and ``t_final``).
    Trace and Hermiticity drift are measured at every snapshot and
    reported; nothing is renormalized.  ``method="rk4"`` runs fixed steps
    of size ``dt``.

    By default the equations are integrated in the frame rotating with
    ``omega a^dag a``, which removes the fastest free phases from the
    step-size limit; returned states are always in the lab frame.

    Raises
    ------
    TraceDriftError
        If ``|tr rho - 1|`` exceeds ``max_trace_drift`` at a snapshot.
    """
    validate_params(p)
    if t_final <= 0 or tol <= 0:
        raise ValueError("t_final and tol must be positive")
    gen = generator or DickeGenerator(p, rho0.basis, rho0.n_max)
    if gen.params != p or gen.n_max != rho0.n_max:
        raise ValueError("generator does not match parameters or cutoff")
    if sample_times is None:
        sample_times = [0.0, float(t_final)]
    samples = sorted(set(float(t) + rho0.time for t in sample_times if 0 <= t <= t_final))

    drift = herm = 0.0
    times, records, states = [], [], []

    if frame not in ("lab", "interaction"):
        raise ValueError(f"unknown frame {frame!r}")
    t0 = rho0.time
    y0 = rho0 if frame == "lab" else to_frame(rho0, p.omega, t0, +1)

    # parity-diagonal states (e.g. the ground state) stay so exactly
    parity_only = parity_mismatch(rho0) == 0.0

    def f(t, y):
        return gen.apply_vector(y, hermitian=True, t=t, frame=frame, parity_only=parity_only)

    span = (rho0.time, rho0.time + float(t_final))
    if method == "dopri5":
        sol = dopri5(f, span, y0.to_vector(), rtol=tol, atol=tol, t_eval=samples)
    elif method == "rk4":
        if dt is None:
            raise ValueError("rk4 needs dt")
        sol = rk4_fixed(f, span, y0.to_vector(), dt=dt, t_eval=samples)
    else:
        raise ValueError(f"unknown method {method!r}")

    for t, y in zip(sol.t, sol.y):
        st = DensityState.from_vector(rho0.basis, rho0.n_max, y, time=t)
        # every reported observable is diagonal in n, hence frame independent
        obs = observables(st)
        if keep_states and frame == "interaction":
            st = to_frame(st, p.omega, t, -1)
        drift = max(drift, abs(obs.trace - 1.0))
        herm = max(herm, st.hermiticity_error())
        if abs(obs.trace - 1.0) > max_trace_drift:
            raise TraceDriftError(f"trace drifted to {obs.trace!r} at t={t:g}")
        times.append(t)
        records.append(obs)
        if keep_states:
            states.append(st)
    return DensityTrajectory(
        times=np.array(times), records=records,
        states=states if keep_states else None,
        max_trace_drift=drift, max_hermiticity_error=herm, nfev=sol.nfev,
    )


# ---------------------------------------------------------------------------
# Breakdown detection
# ---------------------------------------------------------------------------


@dataclass
class BreakdownReport:
    """Cutoff study of one parameter point.

    ``cutoff_converged`` is False when more than ``1e-3`` probability sits in
    the top tenth of Fock levels at any cutoff; ``classification`` is
    reported regardless.
    """

    cutoffs: list
    n_final: list
    top_bin_mass: list
    growth_rate: float
    classification: str
    cutoff_converged: bool
    sz_final: list = field(default_factory=list)


def top_bin_mass(fock: np.ndarray) -> float:
    nF = fock.size
    k = max(1, int(math.ceil(0.1 * nF)))
    return float(np.clip(fock[-k:].sum(), 0.0, 1.0))


def late_growth_rate(times: np.ndarray, n: np.ndarray, fraction: float = 0.1) -> float:
    """Least-squares slope of ``n(t)`` over the last ``fraction`` of the run."""
    t_end = times[-1]
    sel = times >= t_end - fraction * (t_end - times[0])
    if sel.sum() < 2:
        sel = slice(-2, None)
    return float(np.polyfit(times[sel], n[sel], 1)[0])


def classify_cutoff_study(n_final, growth_rate) -> str:
    lo, hi = n_final[-2], n_final[-1]
    rel = (hi - lo) / max(abs(lo), 1e-12)
    if rel > 0.20 and growth_rate > 1e-3:
        return "breakdown"
    if abs(rel) <= 0.02 and growth_rate < 1e-4:
        return "steady"
    return "inconclusive"


def detect_breakdown(
    p: ModelParams,
    cutoffs: Sequence[int],
    t_final: float,
    tol: float = 1e-6,
    n_samples: int = 41,
) -> BreakdownReport:
    """Classify ``p`` as steady or breakdown from the cutoff dependence.

    Each cutoff starts from the ground product state.  Breakdown: ``<n>``
    at ``t_final`` grows by more than 20% between the two largest cutoffs
    and the late-time heating rate at the largest cutoff exceeds 1e-3.
    Steady: the two agree within 2% and the heating rate is below 1e-4.
    Anything else is inconclusive.
    """
    cutoffs = [int(c) for c in cutoffs]
    if len(cutoffs) < 2 or any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ValueError("need at least two strictly increasing cutoffs")
    basis = build_dicke_basis(p.n_spins)
    # dense sampling over the final tenth feeds the growth-rate fit
    late = np.linspace(0.9 * t_final, t_final, n_samples)
    samples = sorted(set([0.0] + late.tolist()))
    n_final, tops, szs = [], [], []
    growth = math.nan
    for c in cutoffs:
        traj = evolve_density(ground_state(basis, c), p, t_final, tol,
                              sample_times=samples, keep_states=False)
        n_series = traj.series("n")
        n_final.append(float(n_series[-1]))
        szs.append(float(traj.records[-1].sz))
        tops.append(top_bin_mass(traj.records[-1].fock_distribution))
        growth = late_growth_rate(traj.times, n_series)
    return BreakdownReport(
        cutoffs=cutoffs, n_final=n_final, top_bin_mass=tops,
        growth_rate=growth, classification=classify_cutoff_study(n_final, growth),
        cutoff_converged=all(t <= 1e-3 for t in tops), sz_final=szs,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".15g")


def write_snapshot_csv(traj: DensityTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema=1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "sz", "n", "szsz", "sxsx"))
        for t, r in zip(traj.times, traj.records):
            w.writerow([_fmt(t), _fmt(r.sz), _fmt(r.n), _fmt(r.szsz), _fmt(r.sxsx)])


def write_fock_csv(traj: DensityTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema=1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "n", "prob"))
        for t, r in zip(traj.times, traj.records):
            for k, prob in enumerate(r.fock_distribution):
                w.writerow([_fmt(t), k, _fmt(prob)])
