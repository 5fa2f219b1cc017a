import numpy as np
import pytest

from modalalign import alignment, linalg
from modalalign.alignment import (
    AlignmentDirective,
    AlignmentSpec,
    DirectiveKind,
    optimal_map,
    parse_alignment_spec,
    private_loss,
    private_loss_grad,
    render_alignment_spec,
    shared_loss,
    shared_loss_grad,
)
from modalalign.errors import DegenerateBatchError, ShapeError, SpecParseError
from modalalign.numdiff import central_difference, max_rel_err


def random_psd(rng, d, rank=None):
    g = rng.normal(size=(d, d if rank is None else rank))
    return g @ g.T


class TestSharedLoss:
    def test_identical_covariances_zero(self):
        rng = np.random.default_rng(0)
        c = random_psd(rng, 3)
        assert shared_loss(c, c) == 0.0

    def test_hand_value(self):
        assert shared_loss(np.eye(2), np.zeros((2, 2)), d=2) == pytest.approx(0.125, abs=1e-15)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(1)
        c_a, c_v = random_psd(rng, 4), random_psd(rng, 4)
        assert shared_loss(c_a, c_v) == shared_loss(c_v, c_a)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            d = int(rng.integers(1, 6))
            c = random_psd(rng, d)
            assert shared_loss(c, c) == 0.0
            assert shared_loss(c, random_psd(rng, d)) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            shared_loss(np.eye(2), np.eye(3))
        with pytest.raises(ShapeError):
            shared_loss(np.eye(2), np.eye(2), d=3)


class TestSharedLossGrad:
    def test_equal_batches_zero(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(5, 3))
        g_a, g_v = shared_loss_grad(m, m)
        assert np.array_equal(g_a, np.zeros_like(m))
        assert np.array_equal(g_v, np.zeros_like(m))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n_a = int(rng.integers(2, 9))
            n_v = int(rng.integers(2, 9))
            d = int(rng.integers(1, 7))
            m_a = rng.normal(size=(n_a, d))
            m_v = rng.normal(size=(n_v, d))
            g_a, g_v = shared_loss_grad(m_a, m_v)

            def loss_a(x):
                return shared_loss(linalg.covariance(x), linalg.covariance(m_v))

            def loss_v(x):
                return shared_loss(linalg.covariance(m_a), linalg.covariance(x))

            assert max_rel_err(g_a, central_difference(loss_a, m_a)) < 1e-5
            assert max_rel_err(g_v, central_difference(loss_v, m_v)) < 1e-5

    def test_translation_leaves_other_gradient_unchanged(self):
        rng = np.random.default_rng(5)
        m_a = rng.normal(size=(4, 3))
        m_v = rng.normal(size=(6, 3))
        _, g_v = shared_loss_grad(m_a, m_v)
        _, g_v_shifted = shared_loss_grad(m_a + rng.normal(size=3), m_v)
        np.testing.assert_allclose(g_v, g_v_shifted, atol=1e-12)

    def test_swap_consistency(self):
        rng = np.random.default_rng(6)
        m_a = rng.normal(size=(5, 2))
        m_v = rng.normal(size=(4, 2))
        g_a, g_v = shared_loss_grad(m_a, m_v)
        g_v_swapped, g_a_swapped = shared_loss_grad(m_v, m_a)
        np.testing.assert_allclose(g_a, g_a_swapped, atol=1e-14)
        np.testing.assert_allclose(g_v, g_v_swapped, atol=1e-14)

    def test_single_row_rejected(self):
        with pytest.raises(DegenerateBatchError):
            shared_loss_grad(np.zeros((1, 2)), np.zeros((3, 2)))


class TestPrivateLoss:
    def test_equal_covariances(self):
        c = np.eye(3)
        assert private_loss(c, c) == 0.0

    def test_negated_below_cap(self):
        assert private_loss(np.eye(2), np.zeros((2, 2)), cap=1.0) == pytest.approx(-0.125)

    def test_saturation(self):
        # theta = 2 * x^2 / 16 = 5.0 at x = sqrt(40).
        c_a = np.eye(2) * np.sqrt(40.0)
        theta = shared_loss(c_a, np.zeros((2, 2)))
        assert theta == pytest.approx(5.0)
        assert private_loss(c_a, np.zeros((2, 2)), cap=1.0) == -1.0

    def test_saturated_gradient_is_zero(self):
        rng = np.random.default_rng(7)
        m_a = rng.normal(size=(4, 2)) * 10.0
        m_v = rng.normal(size=(4, 2))
        assert shared_loss(linalg.covariance(m_a), linalg.covariance(m_v)) > 1.0
        g_a, g_v = private_loss_grad(m_a, m_v, cap=1.0)
        assert not g_a.any() and not g_v.any()

    def test_gradient_below_cap_matches_fd(self):
        rng = np.random.default_rng(8)
        m_a = rng.normal(size=(5, 3)) * 0.3
        m_v = rng.normal(size=(4, 3)) * 0.3
        g_a, _ = private_loss_grad(m_a, m_v, cap=100.0)

        def loss(x):
            return private_loss(linalg.covariance(x), linalg.covariance(m_v), cap=100.0)

        assert max_rel_err(g_a, central_difference(loss, m_a)) < 1e-5


class TestOptimalMap:
    def test_identity_pair(self):
        res = optimal_map(np.eye(3), np.eye(3))
        np.testing.assert_allclose(res.achieved, np.eye(3), atol=1e-10)
        assert res.residual < 1e-10
        assert res.effective_rank == 3

    def test_full_rank_recovery(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            c_a = random_psd(rng, 5) + 0.1 * np.eye(5)
            c_v = random_psd(rng, 5) + 0.1 * np.eye(5)
            res = optimal_map(c_a, c_v)
            assert res.residual <= 1e-8 * np.linalg.norm(c_v)
            assert res.effective_rank == 5

    def test_rank_deficient_drops_tail_spectrum(self):
        # Oracle: eigendecomposition of c_v via numpy.
        rng = np.random.default_rng(10)
        c_a = random_psd(rng, 4, rank=1)
        c_v = random_psd(rng, 4, rank=2)
        res = optimal_map(c_a, c_v)
        lam = np.sort(np.linalg.eigvalsh(c_v))[::-1]
        assert res.effective_rank == 1
        assert res.residual**2 == pytest.approx(lam[1] ** 2, rel=1e-8)

    def test_residual_consistency(self):
        rng = np.random.default_rng(11)
        c_a = random_psd(rng, 4, rank=2)
        c_v = random_psd(rng, 4)
        res = optimal_map(c_a, c_v)
        assert res.residual == pytest.approx(np.linalg.norm(res.achieved - c_v), abs=1e-10)

    def test_never_worse_than_identity_map(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            d = int(rng.integers(2, 6))
            rank_a = int(rng.integers(1, d + 1))
            c_a = random_psd(rng, d, rank=rank_a)
            c_v = random_psd(rng, d)
            res = optimal_map(c_a, c_v)
            assert res.residual <= np.linalg.norm(c_a - c_v) + 1e-9


class TestDirectiveParsing:
    def test_single_shared(self):
        spec = parse_alignment_spec("V-A")
        assert spec.directives == (
            AlignmentDirective(DirectiveKind.SHARED, ("V", "A")),
        )

    def test_chained(self):
        spec = parse_alignment_spec("T-V/T+A")
        assert spec.directives == (
            AlignmentDirective(DirectiveKind.SHARED, ("T", "V")),
            AlignmentDirective(DirectiveKind.PRIVATE, ("T", "A")),
        )

    def test_empty_disables(self):
        spec = parse_alignment_spec("")
        assert not spec and len(spec) == 0

    def test_unknown_modality_position(self):
        with pytest.raises(SpecParseError) as exc:
            parse_alignment_spec("X-A")
        assert exc.value.position == 0

    def test_same_modality_rejected(self):
        with pytest.raises(SpecParseError) as exc:
            parse_alignment_spec("A-A")
        assert exc.value.position == 2

    def test_duplicate_rejected(self):
        with pytest.raises(SpecParseError) as exc:
            parse_alignment_spec("V-A/A-V")
        assert exc.value.position == 4

    def test_same_pair_different_kind_allowed(self):
        assert len(parse_alignment_spec("V-A/V+A")) == 2

    def test_bad_operator(self):
        with pytest.raises(SpecParseError) as exc:
            parse_alignment_spec("V*A")
        assert exc.value.position == 1

    def test_trailing_garbage(self):
        with pytest.raises(SpecParseError):
            parse_alignment_spec("V-A/")
        with pytest.raises(SpecParseError):
            parse_alignment_spec("V-A,T-A")

    def test_round_trip(self):
        rng = np.random.default_rng(13)
        letters = ("T", "A", "V")
        for _ in range(50):
            n = int(rng.integers(1, 5))
            directives = []
            seen = set()
            while len(directives) < n:
                a, b = rng.choice(letters, size=2, replace=False)
                kind = DirectiveKind.SHARED if rng.random() < 0.5 else DirectiveKind.PRIVATE
                d = AlignmentDirective(kind, (str(a), str(b)))
                if d.key() in seen:
                    continue
                seen.add(d.key())
                directives.append(d)
            spec = AlignmentSpec(tuple(directives))
            assert parse_alignment_spec(render_alignment_spec(spec)) == spec
