"""Lifting operator tests against brute-force oracles."""
import numpy as np
import pytest

from msdwi.lifting import (
    LiftedMatrix,
    lift,
    lowrank_project,
    phase_support_vector,
    support_points,
    svt,
    unlift,
)
from msdwi.operators import dft_centered


def brute_force_lift(ktilde, radius):
    """Loop reimplementation of the block layout, kept deliberately dumb.

    Centered coordinates: S+(e,f) = K(x_e - p_f), S-(e,f) = K(-x_e - p_f);
    a coordinate is valid when both reads stay on the grid for every
    support point, and columns run row-major over that rectangle.
    """
    N, M = ktilde.shape
    pts = sorted(
        (p, q)
        for p in range(-radius, radius + 1)
        for q in range(-radius, radius + 1)
        if p * p + q * q <= radius * radius
    )
    cN, cM = N // 2, M // 2
    lo_x, hi_x = -(N // 2), N - 1 - N // 2
    lo_y, hi_y = -(M // 2), M - 1 - M // 2

    def on_grid(x, y):
        return lo_x <= x <= hi_x and lo_y <= y <= hi_y

    valid = [
        (x, y)
        for x in range(lo_x, hi_x + 1)
        for y in range(lo_y, hi_y + 1)
        if all(on_grid(x - p, y - q) and on_grid(-x - p, -y - q) for p, q in pts)
    ]
    n_r = len(pts)
    L = np.zeros((2 * n_r, 2 * len(valid)))
    for f, (p, q) in enumerate(pts):
        for e, (x, y) in enumerate(valid):
            sp = ktilde[x - p + cN, y - q + cM]
            sm = ktilde[-x - p + cN, -y - q + cM]
            L[f, e] = (sp - sm).real
            L[f, len(valid) + e] = -(sp + sm).imag
            L[n_r + f, e] = (sp - sm).imag
            L[n_r + f, len(valid) + e] = (sp + sm).real
    return L, pts, valid


class TestSupportPoints:
    def test_radius_one_lexicographic(self):
        region = support_points(1)
        want = [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]
        assert [tuple(p) for p in region.points] == want
        assert region.size == 5

    def test_radius_two_disk(self):
        region = support_points(2)
        assert region.size == 13
        assert all(p * p + q * q <= 4 for p, q in region.points)

    def test_radius_zero(self):
        assert support_points(0).size == 1

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            support_points(-1)
        with pytest.raises(ValueError):
            support_points(1.5)


class TestLift:
    def test_matches_brute_force(self, rng):
        ktilde = rng.standard_normal((7, 7)) + 1j * rng.standard_normal((7, 7))
        got = lift(ktilde, support_points(1))
        want, pts, valid = brute_force_lift(ktilde, 1)
        assert got.matrix.shape == (2 * len(pts), 2 * len(valid))
        np.testing.assert_allclose(got.matrix, want, atol=1e-13)

    def test_matches_brute_force_radius_two_rect(self, rng):
        ktilde = rng.standard_normal((9, 11)) + 1j * rng.standard_normal((9, 11))
        got = lift(ktilde, support_points(2))
        want, _, _ = brute_force_lift(ktilde, 2)
        np.testing.assert_allclose(got.matrix, want, atol=1e-13)

    def test_rejects_non_2d(self, rng):
        with pytest.raises(ValueError):
            lift(np.zeros((2, 4, 4), dtype=complex), support_points(1))

    def test_rejects_radius_swallowing_grid(self):
        with pytest.raises(ValueError):
            lift(np.zeros((3, 3), dtype=complex), support_points(2))


class TestUnlift:
    def test_inverts_lift_exactly(self, rng):
        ktilde = rng.standard_normal((12, 10)) + 1j * rng.standard_normal((12, 10))
        for radius in (1, 2):
            back = unlift(lift(ktilde, support_points(radius)))
            assert np.max(np.abs(back - ktilde)) <= 1e-12

    def test_preserves_uncovered_border(self, rng):
        # cells the sliding window never reads ride through bit-exact
        ktilde = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        lifted = lift(ktilde, support_points(2))
        uncovered = lifted.leftover != 0
        assert np.any(uncovered)
        back = unlift(lifted)
        np.testing.assert_array_equal(back[uncovered], ktilde[uncovered])
        np.testing.assert_allclose(back, ktilde, atol=1e-12)

    def test_raw_mode_is_the_transpose(self, rng):
        # real inner products: <L x, Y> == <x, L^T Y> for the real-linear map
        region = support_points(1)
        for _ in range(20):
            x = rng.standard_normal((7, 8)) + 1j * rng.standard_normal((7, 8))
            fwd = lift(x, region)
            Y = rng.standard_normal(fwd.matrix.shape)
            lhs = float(np.sum(fwd.matrix * Y))
            back = unlift(LiftedMatrix(Y, 1, (7, 8), np.zeros((7, 8), complex)),
                          normalize=False)
            rhs = float(np.sum(x.real * back.real + x.imag * back.imag))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_raw_mode_drops_leftover(self, rng):
        ktilde = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        lifted = lift(ktilde, support_points(2))
        raw = unlift(lifted, normalize=False)
        uncovered = lifted.leftover != 0
        assert np.all(raw[uncovered] == 0)

    def test_shape_mismatch_rejected(self):
        bad = LiftedMatrix(np.zeros((4, 4)), 1, (7, 7), np.zeros((7, 7), complex))
        with pytest.raises(ValueError):
            unlift(bad)


class TestSVT:
    def test_matches_dense_oracle(self, rng):
        for _ in range(10):
            A = rng.standard_normal((20, 30))
            u, s, vt = np.linalg.svd(A, full_matrices=False)
            shrunk = s.copy()
            shrunk[4:] = np.maximum(shrunk[4:] - 0.5, 0.0)
            np.testing.assert_allclose(svt(A, 4, 0.5), (u * shrunk) @ vt, atol=1e-10)

    def test_gram_route_agrees_with_oracle(self, rng):
        # wide enough to take the eigendecomposition path
        A = rng.standard_normal((8, 64))
        u, s, vt = np.linalg.svd(A, full_matrices=False)
        shrunk = np.maximum(s - 1.0, 0.0)
        shrunk[:2] = s[:2]
        np.testing.assert_allclose(svt(A, 2, 1.0), (u * shrunk) @ vt, atol=1e-10)

    def test_diagonal_example(self):
        A = np.diag([5.0, 3.0, 1.0])
        got = np.sort(np.linalg.svd(svt(A, 1, 2.0), compute_uv=False))[::-1]
        np.testing.assert_allclose(got, [5.0, 1.0, 0.0], atol=1e-12)

    def test_zero_threshold_full_keep_is_identity(self, rng):
        A = rng.standard_normal((6, 9))
        np.testing.assert_allclose(svt(A, 6, 0.0), A, atol=1e-12)

    def test_non_expansive_without_kept_values(self, rng):
        A = rng.standard_normal((12, 12))
        assert np.linalg.norm(svt(A, 0, 0.7)) <= np.linalg.norm(A) + 1e-12

    def test_validates_arguments(self):
        A = np.zeros((3, 3))
        with pytest.raises(ValueError):
            svt(A, -1, 0.1)
        with pytest.raises(ValueError):
            svt(A, 1, -0.1)
        with pytest.raises(ValueError):
            svt(np.zeros(3), 1, 0.1)


class TestAnnihilation:
    def test_constant_phase_image_is_rank_deficient(self, rng):
        m = rng.uniform(0.2, 1.0, (24, 24))
        phase = np.exp(0.55j)
        lifted = lift(dft_centered(phase * m), support_points(2))
        s = np.linalg.svd(lifted.matrix, compute_uv=False)
        assert s[-1] <= 1e-10 * s[0]

    def test_support_vector_annihilates(self, rng):
        m = rng.uniform(0.2, 1.0, (24, 24))
        x = np.arange(24)[:, None]
        y = np.arange(24)[None, :]
        phase = np.exp(1j * (0.3 + 2 * np.pi * (x - y) / 24))
        lifted = lift(dft_centered(phase * m), support_points(2))
        v = phase_support_vector(dft_centered(phase), support_points(2))
        v = v / np.linalg.norm(v)
        s0 = np.linalg.svd(lifted.matrix, compute_uv=False)[0]
        assert np.linalg.norm(v @ lifted.matrix) <= 1e-10 * s0

    def test_support_vector_shape_and_placement(self):
        spec = np.zeros((9, 9), dtype=complex)
        spec[4, 4] = 2.0 + 0.5j  # DC
        spec[3, 4] = 1.0 - 1.0j  # offset (-1, 0); negated read -> (+1, 0)
        region = support_points(1)
        v = phase_support_vector(spec, region)
        assert v.shape == (10,)
        idx = [tuple(p) for p in region.points]
        assert v[idx.index((0, 0))] == 2.0
        assert v[idx.index((1, 0))] == 1.0
        assert v[5 + idx.index((1, 0))] == -1.0

    def test_radius_too_large_rejected(self):
        with pytest.raises(ValueError):
            phase_support_vector(np.zeros((3, 3), dtype=complex), support_points(2))


class TestLowRankProject:
    def test_identity_when_nothing_thresholded(self, rng):
        img = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        out = lowrank_project(img, support_points(2), 26, 0.0)
        assert np.max(np.abs(out - img)) <= 1e-12

    def test_constant_phase_image_is_untouched(self, rng):
        # rank 13 sits inside the default kept subspace
        m = rng.uniform(0.2, 1.0, (32, 32))
        img = m * np.exp(0.8j)
        out = lowrank_project(img, support_points(2), 20, 0.6)
        assert np.max(np.abs(out - img)) <= 1e-8 * np.max(np.abs(img))

    def test_linear_phase_image_needs_one_more_kept_value(self, rng):
        # a one-bin spectral shift raises the lifted rank to 21
        m = rng.uniform(0.2, 1.0, (32, 32))
        x = np.arange(32)[:, None]
        img = m * np.exp(2j * np.pi * x / 32)
        out = lowrank_project(img, support_points(2), 21, 0.6)
        assert np.max(np.abs(out - img)) <= 1e-8 * np.max(np.abs(img))
        moved = lowrank_project(img, support_points(2), 20, 0.6)
        assert np.max(np.abs(moved - img)) > 1e-6 * np.max(np.abs(img))

    def test_zero_image_stays_zero(self):
        out = lowrank_project(np.zeros((16, 16), dtype=complex),
                              support_points(2), 20, 0.6)
        assert np.all(out == 0)

    def test_reduces_out_of_support_energy(self, rng):
        # a wild random phase is not in the model set; projecting must shed
        # lifted tail energy rather than return the input
        img = np.exp(1j * rng.uniform(-np.pi, np.pi, (24, 24)))
        out = lowrank_project(img, support_points(2), 5, 0.5)
        region = support_points(2)
        s_in = np.linalg.svd(lift(dft_centered(img), region).matrix,
                             compute_uv=False)
        s_out = np.linalg.svd(lift(dft_centered(out), region).matrix,
                              compute_uv=False)
        assert s_out[5:].sum() < s_in[5:].sum()
