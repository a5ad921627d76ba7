import numpy as np
import pytest
from hypothesis import given, strategies as st

from dslab import numerics
from dslab.errors import CutError, DomainError, SymmetryError


def herm(seed, n, real=False):
    return numerics.random_hermitian(np.random.default_rng(seed), n, real)


def test_eigh_trivial_cases():
    w, V = numerics.eigh(np.eye(3))
    assert np.allclose(w, [1, 1, 1])
    w, _ = numerics.eigh(np.diag([5.0, -2.0, 0.0]))
    assert np.array_equal(w, [-2.0, 0.0, 5.0])


@pytest.mark.parametrize("seed", range(5))
def test_eigh_against_characteristic_polynomial(seed):
    H = herm(seed, 6)
    roots = np.sort(np.roots(np.poly(H)).real)
    w, _ = numerics.eigh(H)
    assert np.allclose(w, roots, atol=1e-8)


@given(st.integers(0, 10**6), st.integers(1, 8))
def test_eigenpair_residual_and_orthonormality(seed, n):
    H = herm(seed, n)
    w, V = numerics.eigh(H)
    assert np.all(np.diff(w) >= 0)
    res = np.linalg.norm(H @ V - V * w, axis=0)
    assert np.all(res <= 1e-9 * (1 + np.abs(w)))
    assert np.max(np.abs(V.conj().T @ V - np.eye(n))) < 1e-10


def test_symmetry_violation_is_reported():
    H = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(SymmetryError) as exc:
        numerics.eigh(H)
    assert exc.value.asymmetry == pytest.approx(2.0)


def test_tiny_asymmetry_is_symmetrised():
    H = np.array([[1.0, 1.0 + 1e-14], [1.0, 2.0]])
    out = numerics.hermitian(H)
    assert numerics.asymmetry(out) == 0.0


def test_svd_trivial_cases():
    s, _, _ = numerics.svd(np.zeros((2, 3)))
    assert np.array_equal(s, [0.0, 0.0])
    s, _, _ = numerics.svd(np.diag([1.0, 3.0]))
    assert np.allclose(s, [3.0, 1.0])


@pytest.mark.parametrize("seed", range(4))
def test_svd_squares_match_gram_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    s, U, Vh = numerics.svd(A)
    gram = np.sort(np.linalg.eigvalsh(A.conj().T @ A))[::-1]
    assert np.allclose(s**2, gram, atol=1e-8)
    assert np.linalg.norm(U[:, :8] * s @ Vh - A) <= 1e-9 * np.linalg.norm(A, 2)


def test_min_singular_value():
    assert numerics.min_singular_value(np.eye(4)) == pytest.approx(1.0)
    assert numerics.min_singular_value(np.diag([2.0, 0.1])) == pytest.approx(0.1)
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 5)) + 3 * np.eye(5)
    assert numerics.min_singular_value(A) == pytest.approx(1 / np.linalg.norm(np.linalg.inv(A), 2), rel=1e-9)


def test_bounded_transform_on_diagonal():
    out = numerics.apply_function(np.diag([0.0, 1.0]), numerics.bounded_transform)
    assert np.allclose(out, np.diag([0.0, 1 / np.sqrt(2)]))


def test_identity_function_returns_input(rng):
    H = numerics.random_hermitian(rng, 5)
    assert np.allclose(numerics.apply_function(H, lambda x: x), H, atol=1e-12)


def test_odd_normalizing_function_maps_eigenvalues(rng):
    H = numerics.random_hermitian(rng, 4)
    chi = np.tanh
    C = numerics.apply_function(H, chi)
    assert np.allclose(np.sort(np.linalg.eigvalsh(C @ C)), np.sort(chi(np.linalg.eigvalsh(H)) ** 2))
    assert np.max(np.abs(C @ H - H @ C)) < 1e-9 * np.linalg.norm(H, 2)


def test_domain_violation_names_eigenvalue():
    with pytest.raises(DomainError) as exc:
        numerics.apply_function(np.diag([0.0, 2.0]), np.log)
    assert exc.value.eigenvalue == 0.0


@given(st.integers(0, 10**6))
def test_functional_calculus_composes(seed):
    H = herm(seed, 4)
    g = lambda x: x**2 - 1  # noqa: E731
    f = lambda x: 2 * x**3 + x  # noqa: E731
    lhs = numerics.apply_function(H, lambda x: f(g(x)))
    rhs = numerics.apply_function(numerics.apply_function(H, g), f)
    assert np.max(np.abs(lhs - rhs)) < 1e-8 * max(1.0, np.abs(lhs).max())


def test_spectral_projection_examples():
    P = numerics.spectral_projection(np.diag([-2.0, 0.5, 3.0]), (-1, 1))
    assert np.allclose(P, np.diag([0.0, 1.0, 0.0]))
    P = numerics.spectral_projection(np.diag([-2.0, 0.5, 3.0]), (-10, 10))
    assert np.allclose(P, np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_projection_rank_counts_nonnegative_eigenvalues(seed):
    H = herm(seed, 5)
    w = np.linalg.eigvalsh(H)
    P = numerics.spectral_projection(H, (0.0, w[-1] + 1))
    assert np.allclose(P @ P, P) and numerics.asymmetry(P) < 1e-12
    assert round(np.trace(P).real) == np.count_nonzero(w >= 0)


@given(st.integers(0, 10**6))
def test_disjoint_projections_are_orthogonal(seed):
    H = herm(seed, 5)
    try:
        P = numerics.spectral_projection(H, (-10, 0.05))
        Q = numerics.spectral_projection(H, (0.15, 10))
    except CutError:
        return
    assert np.max(np.abs(P @ Q)) < 1e-9


def test_cut_through_eigenvalue_is_rejected():
    with pytest.raises(CutError):
        numerics.spectral_projection(np.diag([1.0, 3.0]), (-1, 1))


def test_inertia():
    assert numerics.inertia(np.diag([-1.0, 0.0, 2.0])) == (1, 2)


def test_kernel_threshold_finds_gap():
    s = np.array([2.0, 1.0, 0.5, 1e-11])
    tau, k, ratio = numerics.kernel_threshold(s, (4, 4), 1e-3 * 2.0)
    assert k == 1 and 1e-11 < tau < 0.5 and ratio == pytest.approx(0.5 / 1e-11)


def test_kernel_threshold_without_small_values():
    s = np.array([2.0, 1.0, 0.5])
    tau, k, ratio = numerics.kernel_threshold(s, (3, 3), 2e-3)
    assert k == 0 and ratio > 1e12
