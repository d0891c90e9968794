"""Quantum states over ordered subsystem lists, with measurement and Schmidt tools.

All values are immutable after construction and every operation is a pure
function; sampling takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    ATOL,
    as_matrix,
    embed_operator,
    is_binary_observable,
    op_partial_trace,
    permute_subsystems_vector,
)

NORM_TOL = 1e-12


@dataclass(frozen=True)
class StateVector:
    """Pure state over an ordered list of subsystem dimensions."""

    dims: tuple[int, ...]
    amplitudes: np.ndarray = field(repr=False)

    def __init__(self, dims, amplitudes):
        dims = tuple(int(d) for d in dims)
        amp = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if int(np.prod(dims)) != amp.size:
            raise ValueError(f"dims {dims} do not match amplitude length {amp.size}")
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state vector norm {norm} deviates from 1 beyond {NORM_TOL}")
        amp = amp.copy()
        amp.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density(self) -> "DensityMatrix":
        return DensityMatrix(self.dims, np.outer(self.amplitudes, self.amplitudes.conj()))

    def conj(self) -> "StateVector":
        return StateVector(self.dims, self.amplitudes.conj())

    def permute(self, order) -> "StateVector":
        return StateVector([self.dims[o] for o in order],
                           permute_subsystems_vector(self.amplitudes, self.dims, order))

    def apply(self, op: np.ndarray, targets=None) -> "StateVector":
        """Apply an operator that preserves this state's norm (e.g. a unitary)."""
        full = as_matrix(op) if targets is None else embed_operator(op, self.dims, targets)
        return StateVector(self.dims, full @ self.amplitudes)


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state over an ordered list of subsystem dimensions."""

    dims: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)

    def __init__(self, dims, matrix, tol: float = NORM_TOL):
        dims = tuple(int(d) for d in dims)
        mat = as_matrix(matrix)
        d = int(np.prod(dims))
        if mat.shape != (d, d):
            raise ValueError(f"dims {dims} do not match matrix shape {mat.shape}")
        if np.abs(mat - mat.conj().T).max() > tol:
            raise ValueError("density matrix is not Hermitian within tolerance")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > tol:
            raise ValueError(f"density matrix trace {tr} deviates from 1 beyond {tol}")
        if np.linalg.eigvalsh((mat + mat.conj().T) / 2).min() < -tol:
            raise ValueError("density matrix has negative eigenvalues beyond tolerance")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def density(self) -> "DensityMatrix":
        return self


def basis_state(dims, index) -> StateVector:
    """Computational basis state; ``index`` is one value per subsystem."""
    dims = tuple(int(d) for d in dims)
    amp = np.zeros(int(np.prod(dims)), dtype=complex)
    flat = 0
    for d, i in zip(dims, index):
        if not 0 <= i < d:
            raise ValueError(f"basis index {i} out of range for dimension {d}")
        flat = flat * d + i
    amp[flat] = 1.0
    return StateVector(dims, amp)


def epr_pair() -> StateVector:
    """The two-qubit maximally entangled state (|00> + |11>)/sqrt(2)."""
    amp = np.zeros(4, dtype=complex)
    amp[0] = amp[3] = 1 / np.sqrt(2)
    return StateVector((2, 2), amp)


def product_state(*parts: StateVector) -> StateVector:
    dims: list[int] = []
    amp = np.array([1.0], dtype=complex)
    for p in parts:
        dims.extend(p.dims)
        amp = np.kron(amp, p.amplitudes)
    return StateVector(dims, amp)


def expectation(state: StateVector | DensityMatrix, m: np.ndarray,
                tol: float = ATOL) -> float:
    """tr(rho M) for Hermitian M; errors if the imaginary residue is non-negligible."""
    m = as_matrix(m)
    if m.shape != (state.dim, state.dim):
        raise ValueError(f"operator shape {m.shape} does not match state dimension {state.dim}")
    if isinstance(state, StateVector):
        val = np.vdot(state.amplitudes, m @ state.amplitudes)
    else:
        val = np.trace(state.matrix @ m)
    if abs(val.imag) > tol:
        raise ValueError(f"expectation has imaginary residue {val.imag}; operator not Hermitian?")
    return float(val.real)


def partial_trace(state: DensityMatrix | StateVector, keep) -> DensityMatrix:
    """Reduced state on the kept subsystems (order preserved)."""
    dm = state.density()
    keep = sorted(set(int(k) for k in keep))
    reduced = op_partial_trace(dm.matrix, dm.dims, keep)
    return DensityMatrix([dm.dims[k] for k in keep], reduced)


@dataclass(frozen=True)
class SchmidtDecomposition:
    """Schmidt data of a pure state across a bipartition.

    ``coefficients`` are nonincreasing and positive; ``left_basis`` /
    ``right_basis`` hold the orthonormal Schmidt vectors as columns, over the
    left/right subsystem groups in their original internal order.
    """

    coefficients: np.ndarray
    left_basis: np.ndarray
    right_basis: np.ndarray
    left: tuple[int, ...]
    right: tuple[int, ...]
    dims: tuple[int, ...]

    def reconstruct(self) -> StateVector:
        """Reassemble sum_j c_j |l_j>|r_j> in the original subsystem order."""
        mat = (self.left_basis * self.coefficients) @ self.right_basis.T
        order = list(self.left) + list(self.right)
        inverse = np.argsort(order)
        dims_lr = [self.dims[i] for i in order]
        vec = permute_subsystems_vector(mat.reshape(-1), dims_lr, list(inverse))
        return StateVector(self.dims, vec)


def schmidt(state: StateVector, left, tol: float = 1e-12) -> SchmidtDecomposition:
    """Schmidt decomposition across the cut (left subsystems | the rest).

    Coefficients below ``tol`` times the largest singular value are dropped.
    """
    left = [int(i) for i in left]
    n = len(state.dims)
    if not left or len(left) == n:
        raise ValueError("cut must leave both sides of the bipartition nonempty")
    if len(set(left)) != len(left) or any(i < 0 or i >= n for i in left):
        raise ValueError(f"invalid cut {left}")
    right = [i for i in range(n) if i not in left]
    order = left + right
    d_l = int(np.prod([state.dims[i] for i in left]))
    mat = permute_subsystems_vector(state.amplitudes, state.dims, order).reshape(d_l, -1)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    keep = s > tol * s[0]
    return SchmidtDecomposition(
        coefficients=s[keep],
        left_basis=u[:, keep],
        right_basis=vh[keep, :].T,
        left=tuple(left),
        right=tuple(right),
        dims=state.dims,
    )


def support_projector(state: StateVector, side, tol: float = 1e-12) -> np.ndarray:
    """Orthogonal projector onto the span of the state's Schmidt vectors on ``side``."""
    sd = schmidt(state, side, tol=tol)
    basis = sd.left_basis
    return basis @ basis.conj().T


def purify(dm: DensityMatrix, tol: float = 1e-12) -> StateVector:
    """Purification with the auxiliary register appended as the last subsystem.

    Rank-1 inputs come back as a plain state vector (no auxiliary subsystem).
    """
    w, v = np.linalg.eigh(dm.matrix)
    keep = w > tol
    rank = int(keep.sum())
    if rank == 0:
        raise ValueError("cannot purify a zero matrix")
    cols = v[:, keep] * np.sqrt(np.clip(w[keep], 0.0, None))
    if rank == 1:
        return StateVector(dm.dims, cols[:, 0])
    return StateVector(dm.dims + (rank,), cols.reshape(dm.dim * rank))


def measure(state: StateVector | DensityMatrix, m: np.ndarray,
            rng: np.random.Generator, tol: float = ATOL):
    """Projective readout of a binary observable.

    Returns ``(outcome, post_state)`` with outcome +1/-1 sampled from
    tr(rho (I +/- M)/2) and the renormalized projected state.  Deterministic
    given the generator state.
    """
    m = as_matrix(m)
    if not is_binary_observable(m, tol):
        raise ValueError("measure requires a binary (Hermitian and unitary) observable")
    eye = np.eye(state.dim)
    proj_plus = (eye + m) / 2
    proj_minus = (eye - m) / 2
    if isinstance(state, StateVector):
        p_plus = float(np.vdot(state.amplitudes, proj_plus @ state.amplitudes).real)
        p_minus = float(np.vdot(state.amplitudes, proj_minus @ state.amplitudes).real)
    else:
        p_plus = float(np.trace(state.matrix @ proj_plus).real)
        p_minus = float(np.trace(state.matrix @ proj_minus).real)
    if abs(p_plus + p_minus - 1.0) > 1e-9:
        raise ValueError(f"outcome probabilities sum to {p_plus + p_minus}, not 1")
    outcome = 1 if rng.random() < p_plus else -1
    proj = proj_plus if outcome == 1 else proj_minus
    p = p_plus if outcome == 1 else p_minus
    if isinstance(state, StateVector):
        post = StateVector(state.dims, proj @ state.amplitudes / np.sqrt(p))
    else:
        post = DensityMatrix(state.dims, proj @ state.matrix @ proj / p)
    return outcome, post
