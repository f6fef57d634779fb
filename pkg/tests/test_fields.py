import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geostereo.errors import ContractError, DegenerateInputError
from geostereo.fields import (
    DisparityMap,
    FeatureMap,
    GradientField,
    OcclusionMap,
    guidance_edges,
    integrate_gradients,
    make_disparity_map,
    rgbxy_guidance,
    spatial_gradient,
    spatial_gradient_backward,
)


def dense(values):
    values = np.asarray(values, dtype=float)
    return DisparityMap(values, np.ones(values.shape, bool))


class TestSpatialGradient:
    def test_linear_field_exact(self):
        ys, xs = np.mgrid[0:8, 0:8].astype(float)
        g = spatial_gradient(dense(2 * xs + 3 * ys + 10))
        assert np.all(g.valid)
        np.testing.assert_array_equal(g.dx, 2.0)
        np.testing.assert_array_equal(g.dy, 3.0)

    def test_constant_field_zero_everywhere(self):
        g = spatial_gradient(dense(np.full((5, 6), 7.0)))
        np.testing.assert_array_equal(g.dx, 0.0)
        np.testing.assert_array_equal(g.dy, 0.0)

    def test_quadratic_row_stencils(self):
        row = np.arange(5, dtype=float) ** 2
        g = spatial_gradient(dense(np.vstack([row, row])))
        assert g.dx[0, 2] == 4.0  # (9 - 1) / 2
        assert g.dx[0, 0] == 1.0  # one-sided 1 - 0
        assert g.dx[0, 4] == 7.0  # 16 - 9

    @pytest.mark.parametrize("shape", [(1, 5), (5, 1), (1, 1)])
    def test_degenerate(self, shape):
        with pytest.raises(DegenerateInputError):
            spatial_gradient(dense(np.zeros(shape)))

    def test_invalid_pixel_invalidates_stencil(self):
        vals = np.arange(25, dtype=float).reshape(5, 5)
        valid = np.ones((5, 5), bool)
        valid[2, 2] = False
        vals[2, 2] = np.inf
        g = spatial_gradient(DisparityMap(vals, valid))
        expected = np.ones((5, 5), bool)
        expected[2, 1:4] = False
        expected[1:4, 2] = False
        np.testing.assert_array_equal(g.valid, expected)
        assert np.all(np.isfinite(g.dx)) and np.all(np.isfinite(g.dy))
        assert g.dx[2, 1] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (6, 7), elements=st.floats(0, 50)),
        arrays(np.float64, (6, 7), elements=st.floats(0, 50)),
        st.floats(-3, 3),
        st.floats(-3, 3),
    )
    def test_linearity(self, d1, d2, a, b):
        g1, g2 = spatial_gradient(dense(d1)), spatial_gradient(dense(d2))
        # a*d1 + b*d2 may be negative, so go through the raw stencil on a shifted copy
        shift = 1000.0
        g12 = spatial_gradient(dense(a * d1 + b * d2 + shift))
        np.testing.assert_allclose(g12.dx, a * g1.dx + b * g2.dx, atol=1e-9)
        np.testing.assert_allclose(g12.dy, a * g1.dy + b * g2.dy, atol=1e-9)

    def test_backward_is_adjoint(self, rng):
        vals = rng.uniform(0, 10, (7, 9))
        valid = rng.random((7, 9)) > 0.2
        d = DisparityMap(vals, valid)
        ux, uy = rng.normal(size=(2, 7, 9))
        z = rng.normal(size=(7, 9))
        # <G z, u> == <z, G^T u> for the masked linear operator
        zmap = DisparityMap(np.abs(z), valid)
        gz = spatial_gradient(zmap)
        lhs = np.sum(gz.dx * ux) + np.sum(gz.dy * uy)
        rhs = np.sum(zmap.filled * spatial_gradient_backward(ux, uy, d))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestGuidance:
    def test_xy_grid_2x2(self):
        f = rgbxy_guidance(FeatureMap(np.zeros((3, 2, 2))), xy_scale=1.0)
        np.testing.assert_array_equal(f.values[3], [[0, 1], [0, 1]])
        np.testing.assert_array_equal(f.values[4], [[0, 0], [1, 1]])

    def test_far_corner_scaled(self):
        f = rgbxy_guidance(FeatureMap(np.zeros((3, 4, 6))), xy_scale=0.1)
        assert f.values[3, -1, -1] == pytest.approx(0.1)
        assert f.values[4, -1, -1] == pytest.approx(0.1)

    def test_constant_colour_differences_only_xy(self):
        img = np.full((3, 5, 5), 0.3)
        f = rgbxy_guidance(FeatureMap(img)).values
        diff = f[:, 1, 3] - f[:, 4, 0]
        np.testing.assert_array_equal(diff[:3], 0.0)
        assert np.any(diff[3:] != 0)

    def test_rgb_copied_and_uint8_normalised(self):
        img = np.zeros((3, 2, 3), np.uint8)
        img[0] = 255
        f = rgbxy_guidance(img)
        np.testing.assert_array_equal(f.values[0], 1.0)
        assert f.channels == 5

    def test_translation_covariance(self):
        f = rgbxy_guidance(FeatureMap(np.zeros((3, 4, 9))), xy_scale=0.5).values
        s = 3
        np.testing.assert_allclose(f[3, :, s:] - f[3, :, :-s], s * 0.5 / 8)

    @pytest.mark.parametrize("channels", [1, 4])
    def test_wrong_channel_count(self, channels):
        with pytest.raises(ContractError):
            rgbxy_guidance(FeatureMap(np.zeros((channels, 2, 2))))

    def test_edges_flag_both_sides_of_colour_step(self):
        img = np.zeros((3, 4, 6))
        img[:, :, 3:] = 1.0
        edge = guidance_edges(rgbxy_guidance(FeatureMap(img)))
        np.testing.assert_array_equal(edge.any(axis=0), [False, False, True, True, False, False])


class TestMakeDisparityMap:
    def test_all_valid(self):
        assert make_disparity_map([[1.0, 2.0], [0.0, 3.5]]).valid.all()

    def test_infinity_invalid(self):
        d = make_disparity_map([[1.0, np.inf]])
        np.testing.assert_array_equal(d.valid, [[True, False]])

    def test_marker_invalid(self):
        d = make_disparity_map([[0.0, 5.0]], invalid_marker=0.0)
        np.testing.assert_array_equal(d.valid, [[False, True]])

    def test_ragged_rejected(self):
        with pytest.raises(ContractError):
            make_disparity_map([[1.0, 2.0], [3.0]])

    def test_invariants_enforced(self):
        with pytest.raises(ContractError):
            DisparityMap(np.array([[-1.0]]), np.array([[True]]))
        with pytest.raises(ContractError):
            OcclusionMap(np.array([[0.5]]), hard=True)
        with pytest.raises(ContractError):
            GradientField(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2), bool))


def test_integrate_gradients_recovers_plane():
    ys, xs = np.mgrid[0:10, 0:12].astype(float)
    truth = 0.3 * xs - 0.2 * ys + 5
    g = spatial_gradient(dense(truth))
    out = integrate_gradients(g, dense(np.full(truth.shape, truth.mean())), anchor_weight=1e-9)
    np.testing.assert_allclose(out, truth, atol=1e-6)
