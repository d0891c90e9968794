"""Dense complex linear algebra helpers shared by every other module.

Conventions used across the package:

- Subsystems are ordered party-major (all of Alice's registers before all of
  Bob's).  Basis indices are big-endian: the first subsystem is the most
  significant factor of a flattened index.
- ``tensor(A, B)`` puts A's indices major, so the left factor belongs to the
  lower party index.
- The default algebraic tolerance is 1e-10.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

ATOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)

PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def as_matrix(m) -> np.ndarray:
    """Coerce input to a 2-d complex ndarray."""
    arr = np.asarray(m, dtype=complex)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got array of ndim {arr.ndim}")
    return arr


def is_hermitian(m, tol: float = ATOL) -> bool:
    m = as_matrix(m)
    return m.shape[0] == m.shape[1] and np.abs(m - m.conj().T).max() <= tol


def is_unitary(m, tol: float = ATOL) -> bool:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        return False
    return np.abs(m @ m.conj().T - np.eye(m.shape[0])).max() <= tol


def is_psd(m, tol: float = ATOL) -> bool:
    m = as_matrix(m)
    if not is_hermitian(m, tol):
        return False
    return np.linalg.eigvalsh((m + m.conj().T) / 2).min() >= -tol


def is_binary_observable(m, tol: float = ATOL) -> bool:
    """Hermitian and unitary: eigenvalues are exactly +/-1."""
    return is_hermitian(m, tol) and is_unitary(m, tol)


def tensor(a, b) -> np.ndarray:
    """Kronecker product with the left factor's indices major."""
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(*factors) -> np.ndarray:
    out = np.array([[1.0]], dtype=complex)
    for f in factors:
        out = np.kron(out, as_matrix(f))
    return out


def dagger(m) -> np.ndarray:
    return as_matrix(m).conj().T


def _check_dims(dims: Sequence[int], size: int, what: str) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"{what}: dimensions must be positive, got {dims}")
    if int(np.prod(dims)) != size:
        raise ValueError(f"{what}: dims {dims} do not match size {size}")
    return dims


def permute_subsystems_vector(vec: np.ndarray, dims: Sequence[int],
                              order: Sequence[int]) -> np.ndarray:
    """Reorder subsystems of a state vector; ``order[i]`` is the old index now at slot i."""
    vec = np.asarray(vec, dtype=complex).reshape(-1)
    dims = _check_dims(dims, vec.size, "permute_subsystems_vector")
    order = list(order)
    if sorted(order) != list(range(len(dims))):
        raise ValueError(f"order {order} is not a permutation of {len(dims)} subsystems")
    return vec.reshape(dims).transpose(order).reshape(-1)


def permute_subsystems_matrix(mat: np.ndarray, dims: Sequence[int],
                              order: Sequence[int]) -> np.ndarray:
    """Reorder subsystems of an operator (rows and columns together)."""
    mat = as_matrix(mat)
    dims = _check_dims(dims, mat.shape[0], "permute_subsystems_matrix")
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("operator must be square")
    order = list(order)
    if sorted(order) != list(range(len(dims))):
        raise ValueError(f"order {order} is not a permutation of {len(dims)} subsystems")
    n = len(dims)
    t = mat.reshape(dims + dims)
    t = t.transpose(order + [n + o for o in order])
    return t.reshape(mat.shape)


def embed_operator(op: np.ndarray, dims: Sequence[int],
                   targets: Sequence[int]) -> np.ndarray:
    """Embed ``op`` acting on the ``targets`` subsystems (in that order), identity elsewhere."""
    op = as_matrix(op)
    dims = tuple(int(d) for d in dims)
    targets = list(targets)
    n = len(dims)
    if len(set(targets)) != len(targets) or any(t < 0 or t >= n for t in targets):
        raise ValueError(f"invalid target subsystems {targets} for {n} subsystems")
    d_t = int(np.prod([dims[t] for t in targets])) if targets else 1
    if op.shape != (d_t, d_t):
        raise ValueError(f"operator shape {op.shape} does not match target dims")
    rest = [i for i in range(n) if i not in targets]
    d_r = int(np.prod([dims[i] for i in rest])) if rest else 1
    big = np.kron(op, np.eye(d_r, dtype=complex))
    order = targets + rest          # subsystem order of `big`
    inverse = np.argsort(order)     # send it back to the natural order
    dims_big = [dims[i] for i in order]
    return permute_subsystems_matrix(big, dims_big, list(inverse))


def controlled_gate(op: np.ndarray, dims: Sequence[int], control: int,
                    targets: Sequence[int]) -> np.ndarray:
    """|0><0|_c (x) I + |1><1|_c (x) op, for a qubit control subsystem."""
    if dims[control] != 2:
        raise ValueError("control subsystem must be a qubit")
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    return (embed_operator(p0, dims, [control])
            + embed_operator(np.kron(p1, as_matrix(op)), dims, [control] + list(targets)))


def op_partial_trace(mat: np.ndarray, dims: Sequence[int],
                     keep: Sequence[int]) -> np.ndarray:
    """Partial trace of an operator, keeping the listed subsystems (order preserved)."""
    mat = as_matrix(mat)
    dims = _check_dims(dims, mat.shape[0], "op_partial_trace")
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid subsystem index in keep={keep}")
    rest = [i for i in range(n) if i not in keep]
    order = keep + rest
    t = mat.reshape(dims + dims).transpose(order + [n + o for o in order])
    d_k = int(np.prod([dims[i] for i in keep])) if keep else 1
    d_r = int(np.prod([dims[i] for i in rest])) if rest else 1
    t = t.reshape(d_k, d_r, d_k, d_r)
    return np.einsum("arbr->ab", t)


def herm_expm(h: np.ndarray, t: float, tol: float = ATOL) -> np.ndarray:
    """exp(-i h t) for Hermitian h, via spectral decomposition."""
    h = as_matrix(h)
    if not is_hermitian(h, tol):
        raise ValueError("herm_expm requires a Hermitian matrix")
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def pauli_decompose(mat: np.ndarray, qubit: int,
                    dims: Sequence[int]) -> dict[str, np.ndarray]:
    """Split an operator as sum_P P_qubit (x) M_P over the single-qubit Paulis.

    The blocks M_P act on the remaining subsystems (original order preserved) and
    are recovered by the trace inner product on the qubit factor.
    """
    mat = as_matrix(mat)
    dims = _check_dims(dims, mat.shape[0], "pauli_decompose")
    if dims[qubit] != 2:
        raise ValueError(f"subsystem {qubit} has dimension {dims[qubit]}, not a qubit")
    n = len(dims)
    rest = [i for i in range(n) if i != qubit]
    order = [qubit] + rest
    t = mat.reshape(dims + dims).transpose(order + [n + o for o in order])
    d_r = int(np.prod([dims[i] for i in rest])) if rest else 1
    t = t.reshape(2, d_r, 2, d_r)
    return {name: 0.5 * np.einsum("ac,cras->rs", p, t) for name, p in PAULIS.items()}


def pauli_recompose(blocks: dict[str, np.ndarray], qubit: int,
                    dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`pauli_decompose`."""
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    rest = [i for i in range(n) if i != qubit]
    out = np.zeros((int(np.prod(dims)), int(np.prod(dims))), dtype=complex)
    for name, p in PAULIS.items():
        block = as_matrix(blocks[name])
        out += embed_operator(np.kron(p, block), dims, [qubit] + rest)
    return out


def random_complex_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian complex matrix scaled to O(1) spectral norm."""
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return m / np.sqrt(2 * dim)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    m = random_complex_matrix(dim, rng)
    return (m + m.conj().T) / 2


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix."""
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_psd(dim: int, rng: np.random.Generator) -> np.ndarray:
    m = random_complex_matrix(dim, rng)
    return m @ m.conj().T
