import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldif.decoder import init_decoder
from ldif.model import (MAX_ANGLE, MAX_RADIUS, ElementParams, LdifModel, activate, activate_rows,
                        element_transform, eval_gaussian, eval_ldif, eval_ldif_batch,
                        euler_rotation, inverse_activate_rows)

from . import oracle


def random_model(seed, n=3, m=4, h=5, sym_count=0, zero_output=False, std=0.4):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n, 10))
    raw[:, 1:4] = rng.uniform(-0.6, 0.6, (n, 3))
    theta = activate_rows(raw)
    w = init_decoder(m, h, rng, std=std, zero_output=zero_output)
    return LdifModel(theta, rng.normal(size=(n, m)), w, sym_count, 0)


def sif_sum(model, x):
    total = np.zeros(len(x))
    for i, el in enumerate(model.elements):
        total += eval_gaussian(x, el)
        if i < model.sym_count:
            s = np.ones(3)
            s[model.sym_axis] = -1
            total += eval_gaussian(x * s, el)
    return total


class TestActivate:
    def test_scale_is_negative_abs(self):
        assert activate(2.0, np.zeros(3), np.zeros(3), np.zeros(3)).scale_c == -2.0

    def test_zero_radius_input_gives_half_max(self):
        assert np.allclose(activate(0, np.zeros(3), np.zeros(3), np.zeros(3)).radii_r, 0.075)

    def test_angles_saturate(self):
        e = activate(0, np.zeros(3), np.zeros(3), [10, 0, -10]).euler_e
        assert np.allclose(e, [np.pi / 4, 0, -np.pi / 4])

    def test_center_is_halved(self):
        assert np.allclose(activate(0, [1, 2, 3], np.zeros(3), np.zeros(3)).center_p, [0.5, 1, 1.5])

    @given(arrays(np.float64, (5, 10), elements=st.floats(-1e3, 1e3)))
    def test_output_always_in_range(self, raw):
        th = activate_rows(raw)
        assert np.all(th[:, 0] <= 0)
        assert np.all((th[:, 4:7] >= 0) & (th[:, 4:7] <= MAX_RADIUS))
        assert np.all(np.abs(th[:, 7:10]) <= MAX_ANGLE)

    def test_inverse_activation_round_trip(self):
        rng = np.random.default_rng(1)
        theta = activate_rows(rng.normal(size=(6, 10)))
        assert np.allclose(activate_rows(inverse_activate_rows(theta)), theta, atol=1e-12)


class TestTransform:
    def test_identity_element(self):
        t = element_transform(ElementParams(-1, np.zeros(3), np.ones(3), np.zeros(3)))
        assert np.allclose(t.matrix, np.hstack([np.eye(3), np.zeros((3, 1))]))

    def test_scale_then_translate(self):
        t = element_transform(ElementParams(-1, [1, 0, 0], [2, 1, 1], np.zeros(3)))
        assert np.allclose(t.apply([3.0, 0, 0]), [1, 0, 0])

    def test_z_rotation(self):
        t = element_transform(ElementParams(-1, np.zeros(3), np.ones(3), [0, 0, np.pi / 4]))
        h = np.sqrt(2) / 2
        assert np.allclose(t.apply([1.0, 0, 0]), [h, -h, 0], atol=1e-15)

    def test_degenerate_radius_rejected(self):
        with pytest.raises(ValueError):
            element_transform(ElementParams(-1, np.zeros(3), [0.1, 0.0, 0.1], np.zeros(3)))

    @given(arrays(np.float64, 10, elements=st.floats(-5, 5)),
           arrays(np.float64, 3, elements=st.floats(-10, 10)))
    def test_inverse_round_trip(self, raw, x):
        th = activate_rows(raw)[0]
        el = ElementParams(th[0], th[1:4], np.maximum(th[4:7], 1e-3), th[7:10])
        t = element_transform(el)
        back = t.inverse(t.apply(x))
        assert np.allclose(back, x, rtol=1e-12, atol=1e-12 * (1 + np.abs(x).max()))

    def test_rotation_matches_written_out_matrix(self):
        e = np.random.default_rng(2).uniform(-1, 1, (50, 3))
        assert np.allclose(euler_rotation(e), oracle.rot_zyx(e), atol=1e-15)

    def test_rotation_derivatives(self):
        e = np.array([0.3, -0.2, 0.5])
        _, dr = euler_rotation(e, with_derivatives=True)
        h = 1e-6
        for k in range(3):
            step = np.zeros(3)
            step[k] = h
            fd = (euler_rotation(e + step) - euler_rotation(e - step)) / (2 * h)
            assert np.allclose(dr[k], fd, atol=1e-9)


class TestGaussian:
    el = ElementParams(-1, [1, 0, 0], [2, 1, 1], np.zeros(3))

    def test_center_value(self):
        assert eval_gaussian(self.el.center_p, self.el) == -1.0

    def test_unit_local_distance(self):
        assert eval_gaussian([3.0, 0, 0], self.el) == pytest.approx(-np.exp(-0.5), abs=1e-15)

    def test_far_tail(self):
        # local distance 6 along x: world offset 12
        assert eval_gaussian([13.0, 0, 0], self.el) == pytest.approx(-np.exp(-18), rel=1e-12)
        assert eval_gaussian([13.0, 0, 0], self.el) == pytest.approx(-1.523e-8, rel=1e-3)

    @given(arrays(np.float64, 3, elements=st.floats(-3, 3)))
    def test_value_between_scale_and_zero(self, x):
        g = eval_gaussian(x, self.el)
        assert -1.0 <= g <= 0.0


class TestEvalLdif:
    def test_zero_output_layer_gives_sif(self):
        model = random_model(3, sym_count=2, zero_output=True)
        x = np.random.default_rng(4).uniform(-1, 1, (500, 3))
        assert np.array_equal(eval_ldif_batch(x, model), eval_ldif_batch(x, model))
        assert np.allclose(eval_ldif_batch(x, model), sif_sum(model, x), rtol=0, atol=1e-15)

    def test_single_element_is_gaussian(self):
        model = random_model(5, n=1, zero_output=True)
        x = np.array([0.1, -0.2, 0.05])
        assert eval_ldif(x, model) == pytest.approx(eval_gaussian(x, model.elements[0]), abs=1e-16)

    def test_matches_direct_oracle(self):
        from ldif.grad import Layout, ParameterVector
        rng = np.random.default_rng(6)
        n, m, h = 3, 4, 5
        raw = rng.normal(size=(n, 10))
        w = init_decoder(m, h, rng, std=0.5, zero_output=False)
        pv = ParameterVector.pack(raw, rng.normal(size=(n, m)), w, Layout(n, m, h, 2, 1))
        x = rng.uniform(-0.5, 0.5, (200, 3))
        ref = oracle.field(pv.values[None], n, m, h, 2, 1, x)[0]
        assert np.allclose(eval_ldif_batch(x, pv.to_model()), ref, rtol=1e-12, atol=1e-14)

    def test_symmetric_element_equals_explicit_mirror_pair(self):
        # f must not depend on the sign of the local x coordinate for the explicit
        # mirror pair to coincide, so the input layer ignores that coordinate
        rng = np.random.default_rng(7)
        w = init_decoder(4, 6, rng, std=0.5, zero_output=False)
        w_in = w.w_in.copy()
        w_in[:, 0] = 0
        w = type(w)(w_in, *[getattr(w, k) for k in ("b_in", "gamma_w", "gamma_b", "beta_w", "beta_b",
                                                   "res_w", "res_b", "w_out", "b_out")])
        z = rng.normal(size=4)
        e = np.array([0.3, -0.2, 0.4])
        r = np.array([0.1, 0.07, 0.12])
        a = LdifModel(np.concatenate([[-1.0], [0.2, 0, 0], r, e])[None], z[None], w, 1, 0)
        # mirroring across x = 0: S R S = Rz(-e3) Ry(-e2) Rx(e1)
        e_m = e * np.array([1, -1, -1])
        b = LdifModel(np.array([np.concatenate([[-1.0], [0.2, 0, 0], r, e]),
                                np.concatenate([[-1.0], [-0.2, 0, 0], r, e_m])]),
                      np.stack([z, z]), w, 0, 0)
        x = rng.uniform(-0.5, 0.5, (1000, 3))
        assert np.allclose(eval_ldif_batch(x, a), eval_ldif_batch(x, b), rtol=0, atol=1e-12)

    def test_fully_symmetric_model_is_reflection_invariant(self):
        model = random_model(8, n=4, sym_count=4)
        x = np.random.default_rng(9).uniform(-1, 1, (1000, 3))
        sx = x * [-1, 1, 1]
        assert np.allclose(eval_ldif_batch(x, model), eval_ldif_batch(sx, model), rtol=0, atol=1e-9)

    def test_batch_chunking_is_elementwise(self):
        model = random_model(10, sym_count=1)
        x = np.random.default_rng(11).uniform(-1, 1, (37, 3))
        whole = eval_ldif_batch(x, model, chunk=4096)
        assert np.allclose(eval_ldif_batch(x, model, chunk=5), whole, rtol=1e-15, atol=0)
        assert eval_ldif(x[3], model) == pytest.approx(whole[3], rel=1e-15)

    def test_invariants_enforced(self):
        model = random_model(12)
        with pytest.raises(ValueError):
            LdifModel(model.theta, model.latents, model.decoder, sym_count=4)
        with pytest.raises(ValueError):
            LdifModel(model.theta, model.latents[:, :2], model.decoder)
