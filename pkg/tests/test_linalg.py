import numpy as np
import pytest

from modalalign import linalg
from modalalign.errors import (
    ContractError,
    DegenerateBatchError,
    NotPSDError,
    ShapeError,
)


def random_psd(rng, d, rank=None):
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank))
    return g @ g.T


class TestBasicOps:
    def test_multiply_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(linalg.matmul(np.eye(2), m), m)

    def test_multiply_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            linalg.matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_frobenius_345(self):
        assert linalg.frobenius_norm(np.array([[3.0, 4.0]])) == 5.0

    def test_transpose_involution(self):
        m = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(linalg.transpose(linalg.transpose(m)), m)

    def test_add_and_scale(self):
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0, -1.0]])
        assert np.array_equal(linalg.add(a, b), np.array([[4.0, 1.0]]))
        assert np.array_equal(linalg.scale(a, 2.0), np.array([[2.0, 4.0]]))
        with pytest.raises(ShapeError):
            linalg.add(a, np.zeros((2, 2)))

    def test_frobenius_squared_matches_double_loop(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(4, 5))
        acc = 0.0
        for i in range(4):
            for j in range(5):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(linalg.frobenius_norm(a - b) ** 2 - acc) < 1e-12


class TestCovariance:
    def test_identical_rows_zero(self):
        m = np.tile([1.0, 2.0], (3, 1))
        assert np.array_equal(linalg.covariance(m), np.zeros((2, 2)))

    def test_hand_case(self):
        # Oracle: two-pass mean-centered covariance.
        m = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        centered = m - m.mean(axis=0)
        expected = centered.T @ centered / 2.0
        got = linalg.covariance(m)
        np.testing.assert_allclose(got, expected, atol=1e-15)
        np.testing.assert_allclose(got, [[1 / 3, -1 / 6], [-1 / 6, 1 / 3]], atol=1e-15)

    def test_single_row_rejected(self):
        with pytest.raises(DegenerateBatchError):
            linalg.covariance(np.array([[1.0, 2.0]]))

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = rng.normal(size=(6, 4))
            shift = rng.normal(size=4)
            c0 = linalg.covariance(m)
            c1 = linalg.covariance(m + shift)
            assert np.max(np.abs(c0 - c1)) < 1e-12

    def test_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = rng.integers(2, 10)
            d = rng.integers(1, 7)
            c = linalg.covariance(rng.normal(size=(n, d)))
            assert np.linalg.eigvalsh(c).min() >= -1e-12


class TestSymEig:
    def test_diagonal(self):
        dec = linalg.sym_eig(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(dec.eigenvalues, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(dec.eigenvectors), np.eye(2), atol=1e-12)

    def test_two_by_two_hand(self):
        # Characteristic polynomial of [[2,1],[1,2]]: (2-x)^2 - 1 -> x in {3, 1}.
        dec = linalg.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(dec.eigenvalues, [3.0, 1.0], atol=1e-12)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(6, 6))
        a = (a + a.T) / 2.0
        dec = linalg.sym_eig(a)
        recon = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
        assert np.linalg.norm(recon - a) <= 1e-10 * np.linalg.norm(a)

    def test_orthonormal_vectors(self):
        rng = np.random.default_rng(5)
        for d in (2, 5, 12):
            a = rng.normal(size=(d, d))
            a = a + a.T
            dec = linalg.sym_eig(a)
            gram = dec.eigenvectors.T @ dec.eigenvectors
            assert np.max(np.abs(gram - np.eye(d))) < 1e-10

    def test_matches_numpy_eigh(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            d = int(rng.integers(2, 9))
            a = rng.normal(size=(d, d))
            a = a + a.T
            dec = linalg.sym_eig(a)
            ref = np.linalg.eigvalsh(a)[::-1]
            np.testing.assert_allclose(dec.eigenvalues, ref, atol=1e-10)

    def test_trace_identity(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(8, 8))
        a = a + a.T
        dec = linalg.sym_eig(a)
        assert abs(dec.eigenvalues.sum() - np.trace(a)) <= 1e-10 * abs(np.trace(a))

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            linalg.sym_eig(np.zeros((2, 3)))

    def test_zero_matrix(self):
        dec = linalg.sym_eig(np.zeros((3, 3)))
        assert np.array_equal(dec.eigenvalues, np.zeros(3))


class TestPsdSqrtPinv:
    def test_identity(self):
        np.testing.assert_allclose(linalg.psd_sqrt_pinv(np.eye(3)), np.eye(3), atol=1e-12)

    def test_pseudoinverse_zeroes_null_space(self):
        got = linalg.psd_sqrt_pinv(np.diag([4.0, 0.0]), rank_tol=1e-10)
        np.testing.assert_allclose(got, np.diag([0.5, 0.0]), atol=1e-12)

    def test_projector_identity(self):
        # X C X should be the orthogonal projector onto range(C); oracle via eigh.
        rng = np.random.default_rng(8)
        for rank in (2, 4):
            c = random_psd(rng, 5, rank=rank)
            x = linalg.psd_sqrt_pinv(c)
            lam, u = np.linalg.eigh(c)
            keep = lam > 1e-10 * lam.max()
            projector = u[:, keep] @ u[:, keep].T
            assert np.linalg.norm(x @ c @ x - projector) < 1e-9

    def test_not_psd_rejected(self):
        with pytest.raises(NotPSDError):
            linalg.psd_sqrt_pinv(np.diag([1.0, -0.5]))

    def test_sqrt_truncated(self):
        rng = np.random.default_rng(9)
        c = random_psd(rng, 4)
        root = linalg.psd_sqrt_truncated(c, rank=4)
        np.testing.assert_allclose(root @ root, c, atol=1e-9)


def test_numerical_rank():
    lam = np.array([2.0, 1.0, 1e-14, 0.0])
    assert linalg.numerical_rank(lam) == 2
    assert linalg.numerical_rank(np.zeros(3)) == 0
