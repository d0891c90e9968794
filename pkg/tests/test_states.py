import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conjsim.family import SimParams, sim_state
from conjsim.linalg import X, Y, Z, tensor
from conjsim.states import (
    DensityMatrix,
    StateVector,
    basis_state,
    epr_pair,
    expectation,
    measure,
    partial_trace,
    product_state,
    purify,
    schmidt,
    support_projector,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_pure(dims, rng) -> StateVector:
    d = int(np.prod(dims))
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return StateVector(dims, v / np.linalg.norm(v))


def test_state_vector_validation():
    with pytest.raises(ValueError):
        StateVector([2], [1.0, 1.0])        # not normalized
    with pytest.raises(ValueError):
        StateVector([2, 2], [1.0, 0.0])     # wrong length


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix([2], np.array([[0.5, 0.5], [0.4, 0.5]]))   # not Hermitian
    with pytest.raises(ValueError):
        DensityMatrix([2], np.diag([0.9, 0.9]))                  # trace != 1
    with pytest.raises(ValueError):
        DensityMatrix([2], np.diag([1.5, -0.5]))                 # negative eigenvalue


def test_expectation_epr_values():
    phi = epr_pair()
    assert expectation(phi, tensor(X, X)) == pytest.approx(1.0, abs=1e-12)
    assert expectation(phi, tensor(X, Z)) == pytest.approx(0.0, abs=1e-12)
    assert expectation(phi, tensor(Y, Y)) == pytest.approx(-1.0, abs=1e-12)
    assert expectation(phi, tensor(Z, Z)) == pytest.approx(1.0, abs=1e-12)


def test_expectation_rejects_non_hermitian_residue():
    plus = StateVector([2], np.array([1, 1]) / np.sqrt(2))
    with pytest.raises(ValueError):
        expectation(plus, np.array([[0, 1j], [0, 0]]))
    with pytest.raises(ValueError):
        expectation(epr_pair(), np.eye(2))   # dimension mismatch


def test_partial_trace_epr_is_maximally_mixed():
    for keep in ([0], [1]):
        rho = partial_trace(epr_pair(), keep)
        np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-14)


def test_partial_trace_keep_all_is_identity_operation():
    rho = epr_pair().density()
    np.testing.assert_allclose(partial_trace(rho, [0, 1]).matrix, rho.matrix)


def test_partial_trace_of_product_factors():
    rng = np.random.default_rng(7)
    a = random_pure([2], rng).density()
    b = random_pure([3], rng).density()
    joint = DensityMatrix([2, 3], np.kron(a.matrix, b.matrix))
    np.testing.assert_allclose(partial_trace(joint, [0]).matrix, a.matrix, atol=1e-12)


def test_partial_trace_of_reference_branch_sim_state():
    psi = random_pure([2], np.random.default_rng(11))
    rho = sim_state(psi, SimParams(1.0, 0.0))
    reduced = partial_trace(rho, [1])
    np.testing.assert_allclose(reduced.matrix,
                               np.outer(psi.amplitudes, psi.amplitudes.conj()), atol=1e-12)


def test_partial_trace_flag_of_epr_sim_state():
    phi = epr_pair()
    rho = sim_state(phi, SimParams(1.0, 0.0))     # dims (flag, 2, 2)
    reduced = partial_trace(rho, [1, 2])
    np.testing.assert_allclose(reduced.matrix,
                               np.outer(phi.amplitudes, phi.amplitudes.conj()), atol=1e-12)


def test_partial_trace_invalid_index():
    with pytest.raises(ValueError):
        partial_trace(epr_pair(), [2])


def test_schmidt_epr_coefficients():
    sd = schmidt(epr_pair(), [0])
    np.testing.assert_allclose(sd.coefficients, [1 / np.sqrt(2)] * 2, atol=1e-12)


def test_schmidt_product_state():
    sd = schmidt(basis_state([2, 2], [0, 0]), [0])
    np.testing.assert_allclose(sd.coefficients, [1.0], atol=1e-14)


def test_schmidt_rejects_empty_cut():
    with pytest.raises(ValueError):
        schmidt(epr_pair(), [])
    with pytest.raises(ValueError):
        schmidt(epr_pair(), [0, 1])


@given(seeds)
@settings(max_examples=100, deadline=None)
def test_schmidt_roundtrip_random_bipartite(seed):
    rng = np.random.default_rng(seed)
    state = random_pure([2, 3], rng)
    sd = schmidt(state, [0])
    assert np.isclose(np.sum(sd.coefficients**2), 1.0, atol=1e-10)
    r = len(sd.coefficients)
    np.testing.assert_allclose(sd.left_basis.conj().T @ sd.left_basis, np.eye(r), atol=1e-10)
    np.testing.assert_allclose(sd.right_basis.conj().T @ sd.right_basis, np.eye(r), atol=1e-10)
    np.testing.assert_allclose(sd.reconstruct().amplitudes, state.amplitudes, atol=1e-10)


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_schmidt_roundtrip_odd_cut(seed):
    rng = np.random.default_rng(seed)
    state = random_pure([2, 2, 2], rng)
    sd = schmidt(state, [1])      # non-contiguous bipartition
    np.testing.assert_allclose(sd.reconstruct().amplitudes, state.amplitudes, atol=1e-10)


def test_support_projector_full_rank_and_product():
    np.testing.assert_allclose(support_projector(epr_pair(), [0]), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(support_projector(basis_state([2, 2], [0, 0]), [0]),
                               np.diag([1.0, 0.0]), atol=1e-12)


def test_support_projector_excludes_empty_flag_branch():
    # reference-branch family member: the flag-1 sector never appears, so the
    # Schmidt rank oracle on (flag+data | rest) sees only flag-0 vectors
    from conjsim.family import multiparty_sim_state
    from conjsim.states import purify

    rho = multiparty_sim_state(epr_pair(), 2, SimParams(1.0, 0.0))
    psi = purify(rho)
    proj = support_projector(psi, [0, 1])
    # projector on (flag_A, data_A): flag-1 block must vanish
    np.testing.assert_allclose(proj[2:, 2:], np.zeros((2, 2)), atol=1e-12)
    np.testing.assert_allclose(proj[:2, :2], np.eye(2), atol=1e-12)


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_support_projector_properties(seed):
    rng = np.random.default_rng(seed)
    state = random_pure([3, 2], rng)
    p = support_projector(state, [0])
    np.testing.assert_allclose(p @ p, p, atol=1e-10)
    np.testing.assert_allclose(p, p.conj().T, atol=1e-10)
    killed = np.kron(np.eye(3) - p, np.eye(2)) @ state.amplitudes
    assert np.linalg.norm(killed) <= 1e-9


def test_purify_roundtrip():
    rng = np.random.default_rng(5)
    mix = 0.25 * random_pure([2, 2], rng).density().matrix \
        + 0.75 * random_pure([2, 2], rng).density().matrix
    dm = DensityMatrix([2, 2], mix)
    pure = purify(dm)
    assert pure.dims[:2] == (2, 2)
    back = partial_trace(pure, [0, 1])
    np.testing.assert_allclose(back.matrix, dm.matrix, atol=1e-10)


def test_purify_rank_one_returns_vector_without_aux():
    psi = epr_pair()
    pure = purify(psi.density())
    assert pure.dims == psi.dims
    overlap = abs(np.vdot(pure.amplitudes, psi.amplitudes))
    assert overlap == pytest.approx(1.0, abs=1e-12)


def test_measure_eigenstate_is_deterministic():
    rng = np.random.default_rng(0)
    outcome, post = measure(basis_state([2], [0]), Z, rng)
    assert outcome == 1
    np.testing.assert_allclose(post.amplitudes, [1, 0], atol=1e-14)


def test_measure_unbiased_on_plus_minus():
    rng = np.random.default_rng(42)
    outcomes = [measure(basis_state([2], [0]), X, rng)[0] for _ in range(2000)]
    assert abs(np.mean(outcomes)) < 4 / np.sqrt(2000)


def test_measure_requires_binary_observable():
    with pytest.raises(ValueError):
        measure(basis_state([2], [0]), np.diag([1.0, 2.0]), np.random.default_rng(0))


def test_measure_deterministic_given_seed():
    def run(seed):
        rng = np.random.default_rng(seed)
        return [measure(epr_pair(), tensor(X, np.eye(2)), rng)[0] for _ in range(50)]

    assert run(123) == run(123)
    assert run(123) != run(124)


def test_measure_frequencies_match_expectation_oracle():
    # 1e5 seeded samples of X on the first EPR qubit: mean within 4 sigma of 0
    n = 100_000
    rng = np.random.default_rng(2024)
    op = tensor(X, np.eye(2))
    phi = epr_pair()
    total = sum(measure(phi, op, rng)[0] for _ in range(n))
    mean = total / n
    assert abs(mean - expectation(phi, op)) < 4 / np.sqrt(n)


def test_measure_post_state_collapses():
    rng = np.random.default_rng(9)
    outcome, post = measure(epr_pair(), tensor(Z, np.eye(2)), rng)
    target = basis_state([2, 2], [0, 0]) if outcome == 1 else basis_state([2, 2], [1, 1])
    assert abs(np.vdot(post.amplitudes, target.amplitudes)) == pytest.approx(1.0, abs=1e-12)


def test_product_state_dims():
    s = product_state(basis_state([2], [1]), epr_pair())
    assert s.dims == (2, 2, 2)
    assert expectation(s, tensor(Z, np.eye(4))) == pytest.approx(-1.0)
