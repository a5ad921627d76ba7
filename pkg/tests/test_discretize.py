import numpy as np
import pytest

from dslab.discretize import assemble_dirac_schrodinger, build_parametrix, difference_matrix, partition_functions
from dslab.errors import BoundaryMismatchError, PreconditionError, UngappedEndError
from dslab.family import Grid1D, PotentialFamily, attach_cylinder_ends, build_family, make_constant_ends
from dslab.index import prepare


def test_upwind_dirichlet_stencil_written_out():
    f = PotentialFamily(Grid1D.line(0, 2, 1.0), np.zeros((3, 1, 1)))
    op = assemble_dirac_schrodinger(f, "upwind", "dirichlet")
    assert np.array_equal(op.T, [[-1, 1, 0], [0, -1, 1], [0, 0, -1]])


def test_wilson_is_backward_difference():
    D = difference_matrix(5, 0.5, "wilson", periodic=False)
    B = (np.eye(5) - np.eye(5, k=-1)) / 0.5
    assert np.allclose(D[1:], B[1:])


@pytest.mark.parametrize("c", [1.0, -0.7, 2.5])
def test_circle_constant_matches_circulant_closed_form(c):
    N = 40
    g = Grid1D.circle(N)
    f = PotentialFamily(g, np.full((N, 1, 1), c))
    op = assemble_dirac_schrodinger(f)
    theta = 2 * np.pi * np.arange(N) / N
    modes = (np.exp(1j * theta) - 1) / g.spacing + c
    got = np.linalg.eigvals(op.T)
    assert np.allclose(np.sort_complex(got), np.sort_complex(modes), atol=1e-10)
    s = np.linalg.svd(op.T, compute_uv=False)
    assert np.allclose(np.sort(s), np.sort(np.abs(modes)), atol=1e-10)
    assert s.min() >= abs(c) - 1e-12


def test_tanh_diagonal_blocks(tanh8):
    op = assemble_dirac_schrodinger(tanh8, "upwind", "dirichlet")
    assert np.allclose(np.diag(op.T), tanh8.matrices[:, 0, 0] - 1 / tanh8.grid.spacing)
    cyl = assemble_dirac_schrodinger(make_constant_ends(tanh8))
    # row i >= 1 sits on column i (node 0 is compressed to its admissible subspace)
    f = make_constant_ends(tanh8)
    assert np.allclose(np.diag(cyl.T[1:, 1:]), f.matrices[1:-1, 0, 0] - 1 / f.grid.spacing)


def test_boundary_mismatch(tanh8):
    with pytest.raises(BoundaryMismatchError):
        assemble_dirac_schrodinger(tanh8, boundary="periodic")
    circ = build_family({"name": "pauli-rotation"}, Grid1D.circle(16))
    with pytest.raises(BoundaryMismatchError):
        assemble_dirac_schrodinger(circ, boundary="dirichlet")


def test_product_block_pairs_singular_values(tanh8):
    op = assemble_dirac_schrodinger(make_constant_ends(tanh8))
    P = op.product_block
    assert np.array_equal(P, P.conj().T)
    m, p = op.T.shape
    s = np.linalg.svd(op.T, compute_uv=False)
    expect = np.sort(np.concatenate([s, s, np.zeros(abs(p - m))]))
    assert np.allclose(np.sort(np.abs(np.linalg.eigvalsh(P))), expect, atol=1e-8)
    assert np.array_equal(op.T_adj, op.T.conj().T)


def test_zero_potential_on_circle_is_normal_with_constant_kernel():
    n, N = 2, 24
    op = assemble_dirac_schrodinger(PotentialFamily(Grid1D.circle(N), np.zeros((N, n, n))))
    T = op.T
    assert np.allclose(T @ T.T, T.T @ T)
    s = np.linalg.svd(T, compute_uv=False)
    assert np.count_nonzero(s < 1e-10) == n


def test_cylinder_restriction_reproduces_interior(tanh8):
    f = make_constant_ends(tanh8)
    c = attach_cylinder_ends(f, 2.0)
    k, N = 20, f.size
    big = assemble_dirac_schrodinger(c, boundary="dirichlet").T
    small = assemble_dirac_schrodinger(f, boundary="dirichlet").T
    assert np.array_equal(big[k:k + N - 1, k:k + N], small[:N - 1])


def test_block_operator_is_direct_sum():
    f = make_constant_ends(build_family({"name": "block-random", "sizes": [1, 2], "seed": 4},
                                        Grid1D.line(-6, 6, 0.2)))
    op = assemble_dirac_schrodinger(f)
    assert op.off_block_max() == 0.0
    mono = np.sort(np.linalg.svd(op.T, compute_uv=False))
    parts = [np.linalg.svd(op.block_operator(b), compute_uv=False) for b in range(2)]
    assert np.allclose(mono, np.sort(np.concatenate(parts)), atol=1e-9)


def test_cylinder_kernel_matches_transfer_recursion(tanh8):
    f = make_constant_ends(tanh8)
    op = assemble_dirac_schrodinger(f)
    _, s, Vh = np.linalg.svd(op.T)
    assert op.T.shape[1] - op.T.shape[0] == 1
    v = Vh[-1].conj()
    # ψ_{j+1} = (1 - h S_j) ψ_j with ψ_0 = U u, u the compressed coordinate
    h, S = f.grid.spacing, f.matrices[:, 0, 0]
    U = op.end_dims["left_basis"][0, 0]
    psi = U * np.cumprod(np.concatenate([[1.0], 1 - h * S[:-1]]))
    ref = np.concatenate([[1.0], psi[1:]])
    ref /= np.linalg.norm(ref)
    assert abs(abs(np.vdot(ref, v)) - 1) < 1e-10


def test_constant_end_has_gap_close_to_c():
    f = build_family({"name": "constant", "compact": [0, 0]}, Grid1D.line(-5, 5, 0.05))
    s = np.linalg.svd(assemble_dirac_schrodinger(f).T, compute_uv=False)
    assert abs(s.min() - 1.0) < 0.05


def test_cylinder_guards():
    g = Grid1D.line(-2, 2, 0.5)
    with pytest.raises(UngappedEndError):
        assemble_dirac_schrodinger(PotentialFamily(g, np.zeros((g.size, 1, 1))))
    with pytest.raises(PreconditionError):
        assemble_dirac_schrodinger(PotentialFamily(g, np.full((g.size, 1, 1), 10.0)))


def test_parametrix_exact_for_constant_family():
    f = build_family({"name": "constant", "C": [[1.0, 0.2], [0.2, -1.0]]}, Grid1D.line(-4, 4, 0.1))
    op = assemble_dirac_schrodinger(f)
    b = build_parametrix(op, f)
    assert b.single_patch
    assert np.allclose(b.Q, np.linalg.inv(op.T), atol=1e-10)
    assert b.right_norm <= 1e-10 and b.left_norm <= 1e-10


def test_parametrix_residual_rank_and_support(tanh8):
    f = prepare(tanh8, 0.1, 4.0)
    op = assemble_dirac_schrodinger(f)
    b = build_parametrix(op, f)
    s = np.linalg.svd(b.residual_right, compute_uv=False)
    assert np.count_nonzero(s > 1e-8 * s[0]) == b.residual_rank
    assert b.residual_rank <= b.interface_cells * 1 * 2 == b.rank_bound
    assert b.off_support_max < 1e-8
    assert np.isfinite(b.right_norm) and np.isfinite(b.left_norm)


def test_ramped_partition_is_a_partition_of_unity(tanh8):
    f = prepare(tanh8, 0.1, 2.0)
    chi = partition_functions(f, ramp=1.0)
    assert np.allclose((chi**2).sum(axis=0), 1.0)
    assert len(np.unique(chi[1])) > 2
    b = build_parametrix(assemble_dirac_schrodinger(f), f, ramp=1.0)
    assert np.isfinite(b.right_norm) and b.off_support_max < 1e-8
