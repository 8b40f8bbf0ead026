import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcgs2d.core import Gaussian2D, GaussianSet, Raster, eval_density
from dcgs2d.grad import PARAM_GROUPS, fd_oracle, positional_gradients
from dcgs2d.render import loss, render


def one(*gl):
    return GaussianSet.from_gaussians(list(gl))


class TestRender:
    def test_empty_set_is_black(self):
        out = render(GaussianSet.empty(), (7, 5))
        assert out.image.data.shape == (5, 7, 1) and not out.image.data.any()

    def test_peak_pixel(self):
        out = render(one(Gaussian2D((4, 3), (1.5, 1), 0.3)), (9, 7))
        assert out.image.data[3, 4, 0] == 1.0

    def test_linearity_of_duplicates(self):
        g = Gaussian2D((4.3, 3.6), (2, 1), 0.7, (0.8,), 0.5)
        half = render(one(g, g), (10, 8)).image.data
        whole = render(one(Gaussian2D(g.mu, g.scales, g.theta, g.intensity, 1.0)), (10, 8)).image.data
        np.testing.assert_allclose(half, whole, rtol=0, atol=1e-15)

    def test_matches_pixelwise_sum(self, rng):
        gl = [Gaussian2D(rng.uniform(0, 12, 2), rng.uniform(0.5, 3, 2), rng.uniform(0, 3), (rng.uniform(),),
                         rng.uniform(0.1, 1)) for _ in range(4)]
        img = render(one(*gl), (12, 10)).image.data[:, :, 0]
        brute = np.zeros((10, 12))
        for g in gl:
            for y in range(10):
                for x in range(12):
                    d = eval_density(g, (x, y))
                    if -2 * math.log(d) <= 9.0:
                        brute[y, x] += g.opacity * g.intensity[0] * d
        np.testing.assert_allclose(img, brute, rtol=1e-12, atol=1e-15)

    def test_color_channels(self):
        out = render(one(Gaussian2D((2, 2), (1, 1), 0, (1.0, 0.5, 0.0), 1.0)), (5, 5))
        assert out.image.data[2, 2].tolist() == [1.0, 0.5, 0.0]


class TestLoss:
    def test_identity(self):
        r = Raster(np.random.default_rng(0).uniform(size=(4, 4)))
        assert loss(r, r)[0] == 0.0

    def test_single_pixel(self):
        a = np.zeros((3, 3))
        b = a.copy()
        b[1, 2] = 0.5
        total, per = loss(Raster(a), Raster(b))
        assert total == 0.25 and per.data[1, 2, 0] == 0.25

    def test_zeros_vs_ones(self):
        assert loss(Raster(np.zeros((2, 2))), Raster(np.ones((2, 2))))[0] == 4.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss(Raster(np.zeros((2, 2))), Raster(np.zeros((2, 3))))


class TestGradients:
    def test_zero_residual(self):
        gs = one(Gaussian2D((5, 5), (2, 1), 0.4))
        out = render(gs, (11, 11))
        gb = positional_gradients(out, out.image, gs)
        assert not gb.g.any()
        for k in PARAM_GROUPS:
            assert not gb.params[k].any()

    def test_symmetric_cancellation(self):
        gs = one(Gaussian2D((5, 5), (1.5, 1.5)))
        out = render(gs, (11, 11))
        t = out.image.data.copy()
        t[5, 3, 0] += 1.0
        t[5, 7, 0] += 1.0
        gb = positional_gradients(out, Raster(t), gs)
        np.testing.assert_allclose(gb.g.sum(axis=0), 0.0, atol=1e-15)
        assert np.abs(gb.g).sum() > 0.1
        np.testing.assert_allclose(gb.params.mu[0], 0.0, atol=1e-15)

    def test_single_pixel_direction(self):
        g = Gaussian2D((5, 5), (2.0, 1.0), 0.6)
        gs = one(g)
        out = render(gs, (11, 11))
        for sign in (+1, -1):
            t = out.image.data.copy()
            t[7, 6, 0] -= sign * 0.3  # residual r = image - target = sign * 0.3
            gb = positional_gradients(out, Raster(t), gs)
            nz = np.abs(gb.g).sum(axis=1) > 0
            assert nz.sum() == 1
            v = gb.g[nz][0]
            d = np.array([6.0, 7.0]) - np.asarray(g.mu)
            ref = np.linalg.solve(g.covariance(), d)
            cross = v[0] * ref[1] - v[1] * ref[0]
            assert abs(cross) < 1e-12 * np.linalg.norm(v) * np.linalg.norm(ref)
            assert np.sign(v @ ref) == sign

    def test_per_pixel_sums_to_mu_gradient(self, rng):
        gl = [Gaussian2D(rng.uniform(2, 10, 2), rng.uniform(0.7, 3, 2), rng.uniform(0, 3)) for _ in range(3)]
        gs = one(*gl)
        t = Raster(rng.uniform(size=(12, 12)))
        gb = positional_gradients(render(gs, (12, 12)), t, gs)
        for i in range(3):
            _, g = gb.entry(i)
            np.testing.assert_allclose(g.sum(axis=0), gb.params.mu[i], rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        gl = [Gaussian2D(rng.uniform(1, 7, 2), rng.uniform(0.6, 2.5, 2), rng.uniform(0, math.pi),
                         (rng.uniform(0.2, 1),), rng.uniform(0.2, 1)) for _ in range(3)]
        gs = one(*gl)
        target = Raster(rng.uniform(size=(8, 8)))
        grads = positional_gradients(render(gs, (8, 8)), target, gs).params
        for group in PARAM_GROUPS:
            for i in range(3):
                for k in ((0, 1) if group in ("mu", "scales") else (0,)):
                    fd = fd_oracle(gs, target, (group, i, k), h=1e-4)
                    a = grads[group][i] if grads[group].ndim == 1 else grads[group][i, k]
                    assert abs(a - fd) / max(1.0, abs(fd)) < 1e-4, (group, i, k, a, fd)

    def test_fd_zero_residual(self):
        gs = one(Gaussian2D((3, 3), (1.2, 0.8), 0.3))
        target = render(gs, (7, 7)).image
        assert abs(fd_oracle(gs, target, ("mu", 0, 0))) < 1e-8

    def test_empty_footprint_opacity_gradient(self):
        gs = one(Gaussian2D((3, 3), (1, 1)), Gaussian2D((200, 200), (1, 1)))
        target = Raster(np.ones((7, 7)))
        grads = positional_gradients(render(gs, (7, 7)), target, gs).params
        assert grads.opacity[1] == 0.0
        assert fd_oracle(gs, target, ("opacity", 1, 0)) == 0.0

    @given(st.floats(0.5, 6.0), st.floats(0.5, 6.0), st.floats(0, math.pi), st.floats(-2, 2), st.floats(-2, 2))
    def test_translation_equivariance(self, s1, s2, th, dx, dy):
        """Moving primitive and target together leaves the mu gradient unchanged (interior case)."""
        def grad_at(ox, oy):
            gs = one(Gaussian2D((20 + ox, 20 + oy), (s1, s2), th, (0.7,), 0.9))
            tgs = one(Gaussian2D((20.5 + ox, 19.5 + oy), (s2, s1), th, (0.8,), 0.6))
            target = render(tgs, (64, 64)).image
            return positional_gradients(render(gs, (64, 64)), target, gs).params.mu[0]
        np.testing.assert_allclose(grad_at(0, 0), grad_at(round(dx) + 0.0, round(dy) + 0.0), rtol=1e-9, atol=1e-12)
