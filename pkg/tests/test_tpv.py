import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpvocc.errors import DataError
from tpvocc.oracles import finite_diff, oracle_conv2d, oracle_lti, oracle_matmul
from tpvocc.tpv import (Conv2dParams, conv2d, conv2d_backward, extract_tpv,
                        init_conv, lti_backward, lti_interact,
                        spatial_to_channel, tpv_matmul)


def identity_params(c, dtype=np.float64):
    return Conv2dParams(weights=np.eye(c, dtype=dtype)[:, :, None, None],
                        bias=np.zeros(c, dtype=dtype))


def rand_params(rng, c_in, c_out, k, dtype=np.float64):
    return init_conv(c_in, c_out, k, rng, dtype)


class TestConv2d:
    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 5, 4))
        np.testing.assert_array_equal(conv2d(x, identity_params(3)), x)

    def test_constant_field_interior(self):
        c_in, c = 2, 3.0
        x = np.full((c_in, 6, 6), c)
        p = Conv2dParams(weights=np.ones((1, c_in, 3, 3)),
                         bias=np.array([0.25]))
        out = conv2d(x, p)
        assert out[0, 3, 3] == pytest.approx(9 * c * c_in + 0.25)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 5, 5))
        p = rand_params(rng, 3, 4, 3)
        np.testing.assert_allclose(
            conv2d(x, p), oracle_conv2d(x, p.weights, p.bias), atol=1e-6)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(DataError):
            conv2d(rng.normal(size=(2, 4, 4)), rand_params(rng, 3, 3, 1))

    def test_unsupported_kernel_rejected(self):
        for k in (2, 5):
            with pytest.raises(DataError):
                Conv2dParams(weights=np.zeros((1, 1, k, k)),
                             bias=np.zeros(1))

    def test_float32_stays_float32(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 4)).astype(np.float32)
        p = rand_params(rng, 2, 2, 3, dtype=np.float32)
        assert conv2d(x, p).dtype == np.float32


class TestConv2dBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 4, 4))
        p = rand_params(rng, 2, 3, 3)
        gx, gw, gb = conv2d_backward(x, p, np.zeros((3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_identity_passthrough(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4, 5))
        up = rng.normal(size=(3, 4, 5))
        gx, _, _ = conv2d_backward(x, identity_params(3), up)
        np.testing.assert_array_equal(gx, up)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            x = rng.normal(size=(2, 4, 4))
            p = rand_params(rng, 2, 3, 3)
            up = rng.normal(size=(3, 4, 4))
            gx, gw, gb = conv2d_backward(x, p, up)
            fd_x = finite_diff(lambda v: float((conv2d(v, p) * up).sum()), x)
            fd_w = finite_diff(
                lambda w: float((conv2d(x, Conv2dParams(w, p.bias)) * up).sum()),
                p.weights)
            fd_b = finite_diff(
                lambda b: float((conv2d(x, Conv2dParams(p.weights, b)) * up).sum()),
                p.bias)
            for a, n in ((gx, fd_x), (gw, fd_w), (gb, fd_b)):
                denom = max(np.abs(n).max(), 1e-12)
                assert np.abs(a - n).max() / denom <= 1e-4

    def test_upstream_shape_rejected(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 4, 4))
        with pytest.raises(DataError):
            conv2d_backward(x, rand_params(rng, 2, 3, 3), np.zeros((3, 5, 4)))


class TestSpatialToChannel:
    def test_shapes(self):
        occ = np.zeros((2, 3, 4))
        assert spatial_to_channel(occ, "Z").shape == (4, 2, 3)
        assert spatial_to_channel(occ, "X").shape == (2, 3, 4)
        assert spatial_to_channel(occ, "Y").shape == (3, 2, 4)

    def test_index_map(self):
        occ = np.zeros((4, 5, 6))
        occ[1, 2, 3] = 7.0
        assert spatial_to_channel(occ, "Z")[3, 1, 2] == 7.0
        assert spatial_to_channel(occ, "Y")[2, 1, 3] == 7.0

    def test_inverse_roundtrip_bitexact(self):
        rng = np.random.default_rng(8)
        occ = rng.normal(size=(3, 4, 5))
        z = spatial_to_channel(occ, "Z")
        np.testing.assert_array_equal(z.transpose(1, 2, 0), occ)
        y = spatial_to_channel(occ, "Y")
        np.testing.assert_array_equal(y.transpose(1, 0, 2), occ)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_value_multiset_preserved(self, seed):
        rng = np.random.default_rng(seed)
        occ = rng.normal(size=(3, 2, 4))
        for axis in ("Z", "X", "Y"):
            out = spatial_to_channel(occ, axis)
            np.testing.assert_array_equal(np.sort(out.ravel()),
                                          np.sort(occ.ravel()))

    def test_unknown_axis(self):
        with pytest.raises(DataError):
            spatial_to_channel(np.zeros((2, 2, 2)), "Q")


class TestExtractTpv:
    def test_zero_occupancy(self):
        rng = np.random.default_rng(9)
        occ = np.zeros((8, 6, 4))
        ps = (rand_params(rng, 4, 5, 3), rand_params(rng, 8, 5, 3),
              rand_params(rng, 6, 5, 3))
        for e in extract_tpv(occ, *ps):
            assert not e.any()

    def test_shapes(self):
        rng = np.random.default_rng(10)
        occ = rng.normal(size=(8, 6, 4))
        e_bev, e_fv, e_sv = extract_tpv(
            occ, rand_params(rng, 4, 5, 3), rand_params(rng, 8, 5, 3),
            rand_params(rng, 6, 5, 3))
        assert e_bev.shape == (5, 8, 6)
        assert e_fv.shape == (5, 6, 4)
        assert e_sv.shape == (5, 8, 4)

    def test_equals_manual_composition(self):
        rng = np.random.default_rng(11)
        occ = rng.normal(size=(8, 6, 4))
        ps = (rand_params(rng, 4, 5, 3), rand_params(rng, 8, 5, 3),
              rand_params(rng, 6, 5, 3))
        e_bev, e_fv, e_sv = extract_tpv(occ, *ps)
        np.testing.assert_array_equal(
            e_bev, conv2d(spatial_to_channel(occ, "Z"), ps[0]))
        np.testing.assert_array_equal(
            e_fv, conv2d(spatial_to_channel(occ, "X"), ps[1]))
        np.testing.assert_array_equal(
            e_sv, conv2d(spatial_to_channel(occ, "Y"), ps[2]))

    def test_channel_count_mismatch(self):
        rng = np.random.default_rng(12)
        occ = np.zeros((8, 6, 4))
        with pytest.raises(DataError):
            extract_tpv(occ, rand_params(rng, 3, 5, 3),
                        rand_params(rng, 8, 5, 3), rand_params(rng, 6, 5, 3))


class TestTpvMatmul:
    def test_hand_case(self):
        lhs = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        rhs = np.array([[[5.0, 6.0], [7.0, 8.0]]])
        want = oracle_matmul(lhs, rhs)
        np.testing.assert_array_equal(want[0], [[19.0, 22.0], [43.0, 50.0]])
        np.testing.assert_array_equal(tpv_matmul(lhs, rhs), want)
        want_mean = oracle_matmul(lhs, rhs, mean_over_vanished=True)
        np.testing.assert_array_equal(want_mean[0],
                                      [[9.5, 11.0], [21.5, 25.0]])
        np.testing.assert_array_equal(
            tpv_matmul(lhs, rhs, mean_over_vanished=True), want_mean)

    def test_identity_rhs(self):
        rng = np.random.default_rng(13)
        lhs = rng.normal(size=(3, 4, 5))
        eye = np.broadcast_to(np.eye(5), (3, 5, 5)).copy()
        np.testing.assert_array_equal(tpv_matmul(lhs, eye), lhs)

    def test_zero_operand(self):
        rng = np.random.default_rng(14)
        lhs = np.zeros((2, 3, 4))
        rhs = rng.normal(size=(2, 4, 5))
        assert not tpv_matmul(lhs, rhs).any()

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(15)
        lhs = rng.normal(size=(3, 4, 6))
        rhs = rng.normal(size=(3, 6, 5))
        np.testing.assert_allclose(tpv_matmul(lhs, rhs),
                                   oracle_matmul(lhs, rhs), atol=1e-12)

    def test_channel_independence_bitexact(self):
        rng = np.random.default_rng(16)
        lhs = rng.normal(size=(4, 3, 6))
        rhs = rng.normal(size=(4, 6, 5))
        batched = tpv_matmul(lhs, rhs)
        stacked = np.stack([
            tpv_matmul(lhs[c:c + 1], rhs[c:c + 1])[0] for c in range(4)])
        np.testing.assert_array_equal(batched, stacked)

    def test_mean_flag_exactness(self):
        rng = np.random.default_rng(17)
        lhs = rng.normal(size=(2, 3, 7))
        rhs = rng.normal(size=(2, 7, 4))
        plain = tpv_matmul(lhs, rhs)
        mean = tpv_matmul(lhs, rhs, mean_over_vanished=True)
        np.testing.assert_array_equal(mean, plain / 7)

    def test_inner_dim_mismatch(self):
        with pytest.raises(DataError):
            tpv_matmul(np.zeros((2, 3, 4)), np.zeros((2, 5, 6)))


def rand_embeddings(rng, c, nx, ny, nz, dtype=np.float64):
    return (rng.normal(size=(c, nx, ny)).astype(dtype),
            rng.normal(size=(c, ny, nz)).astype(dtype),
            rng.normal(size=(c, nx, nz)).astype(dtype))


class TestLtiInteract:
    def test_all_zero(self):
        rng = np.random.default_rng(18)
        convs = [rand_params(rng, 3, 3, 3) for _ in range(4)]
        out = lti_interact(np.zeros((3, 4, 5)), np.zeros((3, 5, 2)),
                           np.zeros((3, 4, 2)), convs, True)
        assert not out.any()

    def test_hand_integer_case_vs_scalar_oracle(self):
        # tiny integer embeddings, identity 1x1 convs: the oracle walks the
        # interaction equations step by step in scalar loops
        nx = ny = nz = 2
        e_bev = np.arange(1, 5, dtype=np.float64).reshape(1, nx, ny)
        e_fv = np.arange(5, 9, dtype=np.float64).reshape(1, ny, nz)
        e_sv = np.arange(-2, 2, dtype=np.float64).reshape(1, nx, nz)
        eye = identity_params(1)
        convs = [eye] * 4
        for mean in (False, True):
            out = lti_interact(e_bev, e_fv, e_sv, convs, mean)
            ref = oracle_lti(e_bev, e_fv, e_sv,
                             [(eye.weights, eye.bias)] * 4, mean)
            np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_matches_scalar_oracle_random(self):
        rng = np.random.default_rng(19)
        for k in (1, 3):
            e = rand_embeddings(rng, 3, 8, 6, 4)
            convs = [rand_params(rng, 3, 3, k) for _ in range(4)]
            out = lti_interact(*e, convs, True)
            ref = oracle_lti(*e, [(p.weights, p.bias) for p in convs], True)
            assert np.abs(out - ref).max() <= 1e-9

    def test_output_shape(self):
        rng = np.random.default_rng(20)
        e = rand_embeddings(rng, 5, 8, 6, 4)
        convs = [rand_params(rng, 5, 5, 3) for _ in range(4)]
        assert lti_interact(*e, convs, True).shape == (5, 8, 6)

    def test_collapse_identity_bitexact(self):
        rng = np.random.default_rng(21)
        c, nx, ny, nz = 3, 5, 4, 2
        e_bev = rng.normal(size=(c, nx, ny))
        convs = [identity_params(c)] * 4
        out = lti_interact(e_bev, np.zeros((c, ny, nz)),
                           np.zeros((c, nx, nz)), convs, True)
        np.testing.assert_array_equal(out, e_bev)

    def test_shape_inconsistency_rejected(self):
        rng = np.random.default_rng(22)
        e_bev, e_fv, e_sv = rand_embeddings(rng, 3, 8, 6, 4)
        convs = [rand_params(rng, 3, 3, 1) for _ in range(4)]
        with pytest.raises(DataError):
            lti_interact(e_bev, e_fv, e_sv[:, :7], convs, True)

    def test_two_layer_stacks(self):
        rng = np.random.default_rng(23)
        e = rand_embeddings(rng, 3, 6, 5, 4)
        stacks = [(rand_params(rng, 3, 3, 3), rand_params(rng, 3, 3, 3))
                  for _ in range(4)]
        out = lti_interact(*e, stacks, True)
        ref = oracle_lti(*e, [[(p.weights, p.bias) for p in s]
                              for s in stacks], True)
        assert np.abs(out - ref).max() <= 1e-9


class TestLtiBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(24)
        e = rand_embeddings(rng, 2, 4, 3, 2)
        convs = [rand_params(rng, 2, 2, 3) for _ in range(4)]
        gb, gf, gs, cg = lti_backward(*e, convs, np.zeros((2, 4, 3)), True)
        assert not gb.any() and not gf.any() and not gs.any()
        for site in cg:
            for gw, gbias in site:
                assert not gw.any() and not gbias.any()

    def test_linear_path_reduces_to_upstream(self):
        rng = np.random.default_rng(25)
        c, nx, ny, nz = 3, 4, 5, 2
        e_bev = rng.normal(size=(c, nx, ny))
        up = rng.normal(size=(c, nx, ny))
        convs = [identity_params(c)] * 4
        gb, gf, gs, _ = lti_backward(e_bev, np.zeros((c, ny, nz)),
                                     np.zeros((c, nx, nz)), convs, up, True)
        np.testing.assert_array_equal(gb, up)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(26)
        for mean in (True, False):
            e_bev, e_fv, e_sv = rand_embeddings(rng, 2, 4, 3, 2)
            convs = [rand_params(rng, 2, 2, 3) for _ in range(4)]
            up = rng.normal(size=(2, 4, 3))
            gb, gf, gs, cg = lti_backward(e_bev, e_fv, e_sv, convs, up, mean)

            checks = [
                (gb, e_bev, lambda v: lti_interact(v, e_fv, e_sv, convs, mean)),
                (gf, e_fv, lambda v: lti_interact(e_bev, v, e_sv, convs, mean)),
                (gs, e_sv, lambda v: lti_interact(e_bev, e_fv, v, convs, mean)),
            ]
            for i in range(4):
                def fw(w, i=i):
                    cs = list(convs)
                    cs[i] = Conv2dParams(w, convs[i].bias)
                    return lti_interact(e_bev, e_fv, e_sv, cs, mean)
                checks.append((cg[i][0][0], convs[i].weights, fw))
            for analytic, point, f in checks:
                numeric = finite_diff(
                    lambda v: float((f(v) * up).sum()), point)
                denom = max(np.abs(numeric).max(), 1e-12)
                assert np.abs(analytic - numeric).max() / denom <= 1e-4
