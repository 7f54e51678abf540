import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sparsemos.sparse.coords import CoordIndex, decode, encode, offset_key, unique_coords
from sparsemos.sparse.kernel import (
    KernelSpec,
    build_kernel_map,
    output_coords,
    transpose_map,
)
from sparsemos.sparse.ops import (
    ConvParams,
    NormState,
    batchnorm_forward,
    conv_backward,
    conv_forward,
    relu_forward,
    softmax_forward,
)
from sparsemos.sparse.serialize import WeightFormatError, load_weights, save_weights

coord_arrays = st.integers(0, 2**31 - 1).map(
    lambda s: np.random.default_rng(s).integers(-2000, 2000, size=(30, 4))
)


class TestCoords:
    @settings(max_examples=40, deadline=None)
    @given(coord_arrays)
    def test_encode_round_trip(self, c):
        np.testing.assert_array_equal(decode(encode(c)), c)

    @settings(max_examples=40, deadline=None)
    @given(coord_arrays)
    def test_key_order_is_lexicographic(self, c):
        by_key = c[np.argsort(encode(c), kind="stable")]
        by_lex = c[np.lexsort(c.T[::-1])]
        np.testing.assert_array_equal(by_key, by_lex)

    @settings(max_examples=40, deadline=None)
    @given(coord_arrays, st.tuples(*[st.integers(-3, 3)] * 4))
    def test_offset_key_is_additive(self, c, d):
        np.testing.assert_array_equal(encode(c + np.array(d)), encode(c) + offset_key(np.array(d)))

    def test_out_of_range_rejected(self):
        with pytest.raises(OverflowError):
            encode(np.array([[0, 0, 0, 2**15]]))

    def test_unique_and_inverse(self):
        c = np.array([[1, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]])
        u, inv = unique_coords(c)
        np.testing.assert_array_equal(u, [[0, 0, 0, 0], [1, 0, 0, 0]])
        np.testing.assert_array_equal(u[inv], c)

    def test_index_lookup(self):
        c = np.array([[0, 1, 2, 3], [5, 5, 5, 5]])
        idx = CoordIndex(c)
        np.testing.assert_array_equal(idx.lookup(np.array([[5, 5, 5, 5], [9, 9, 9, 9], [0, 1, 2, 3]])), [1, -1, 0])

    def test_index_rejects_duplicates(self):
        with pytest.raises(ValueError):
            CoordIndex(np.zeros((2, 4), dtype=np.int64))


class TestKernelSpec:
    def test_offset_counts(self):
        assert KernelSpec(size=(3, 3, 3, 3)).num_offsets == 81
        assert KernelSpec(size=(3, 3, 3, 3), shape="hypercross").num_offsets == 9
        assert KernelSpec(size=(1, 3, 5, 3), shape="hypercross").num_offsets == 1 + 0 + 2 + 4 + 2

    @pytest.mark.parametrize("shape", ["hypercube", "hypercross"])
    @pytest.mark.parametrize("size", [(3, 3, 3, 3), (1, 3, 3, 3), (3, 1, 5, 1)])
    def test_offsets_match_enumeration(self, shape, size):
        spec = KernelSpec(size=size, shape=shape)
        np.testing.assert_array_equal(spec.offsets(), np.array(oracles.offsets_bruteforce(size, shape)))
        assert spec.offsets().shape[0] == spec.num_offsets

    @pytest.mark.parametrize("bad", [dict(size=(2, 3, 3, 3)), dict(size=(0, 1, 1, 1)), dict(stride=(0, 1, 1, 1))])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            KernelSpec(**bad)

    def test_dict_round_trip(self):
        spec = KernelSpec(size=(3, 3, 3, 3), stride=(1, 2, 2, 2), shape="hypercross")
        assert KernelSpec.from_dict(spec.to_dict()) == spec


class TestOutputCoords:
    def test_stride_one_identity(self):
        c = np.array([[0, 1, 2, 3], [4, 5, 6, 7]])
        np.testing.assert_array_equal(output_coords(c, KernelSpec()), c)

    def test_two_sites_merge(self):
        spec = KernelSpec(stride=(1, 2, 2, 2))
        np.testing.assert_array_equal(output_coords(np.array([[0, 0, 0, 0], [0, 1, 1, 1]]), spec), [[0, 0, 0, 0]])

    def test_two_sites_stay_apart(self):
        spec = KernelSpec(stride=(1, 2, 2, 2))
        out = output_coords(np.array([[0, 0, 0, 0], [0, 2, 0, 0]]), spec)
        np.testing.assert_array_equal(out, [[0, 0, 0, 0], [0, 1, 0, 0]])

    def test_negative_coords_floor(self):
        spec = KernelSpec(stride=(1, 2, 2, 2))
        np.testing.assert_array_equal(output_coords(np.array([[0, -1, 0, 0]]), spec), [[0, -1, 0, 0]])

    def test_transposed_requires_target(self):
        with pytest.raises(ValueError):
            output_coords(np.zeros((1, 4)), KernelSpec(stride=(1, 2, 2, 2)), transposed=True)

    def test_transposed_validates_target(self):
        spec = KernelSpec(stride=(1, 2, 2, 2))
        coarse = np.array([[0, 0, 0, 0]])
        ok = np.array([[0, 1, 1, 0]])
        np.testing.assert_array_equal(output_coords(coarse, spec, transposed=True, target=ok), ok)
        with pytest.raises(ValueError):
            output_coords(coarse, spec, transposed=True, target=np.array([[0, 4, 0, 0]]))


class TestKernelMap:
    def test_single_site_size_one(self):
        c = np.zeros((1, 4), dtype=np.int64)
        km = build_kernel_map(c, c, KernelSpec(size=(1, 1, 1, 1)))
        assert km.triples() == {(0, 0, 0)}

    def test_hand_enumeration(self):
        c = np.array([[0, 0, 0, 0], [0, 0, 0, 1]])
        spec = KernelSpec()
        km = build_kernel_map(c, c, spec)
        offs = [tuple(o) for o in spec.offsets()]
        per = {offs[k]: list(zip(ii.tolist(), oo.tolist())) for k, (ii, oo) in enumerate(km.pairs) if len(ii)}
        assert sorted(per[(0, 0, 0, 0)]) == [(0, 0), (1, 1)]
        assert per[(0, 0, 0, 1)] == [(1, 0)]
        assert per[(0, 0, 0, -1)] == [(0, 1)]
        assert km.num_pairs == 4

    def test_empty_inputs(self):
        e = np.zeros((0, 4), dtype=np.int64)
        km = build_kernel_map(e, e, KernelSpec())
        assert km.num_pairs == 0

    @pytest.mark.parametrize("shape", ["hypercube", "hypercross"])
    @pytest.mark.parametrize("stride", [(1, 1, 1, 1), (1, 2, 2, 2), (2, 2, 2, 2)])
    def test_matches_bruteforce(self, shape, stride):
        rng = np.random.default_rng(hash((shape, stride)) % 2**32)
        for _ in range(3):
            spec = KernelSpec(stride=stride, shape=shape)
            c = oracles.random_sparse_coords(rng, (4, 6, 6, 5), int(rng.integers(1, 200)))
            out = output_coords(c, spec)
            km = build_kernel_map(c, out, spec)
            offs = oracles.offsets_bruteforce(spec.size, shape)
            assert km.triples() == oracles.kernel_map_bruteforce(c, out, offs, stride)

    def test_no_duplicate_triples(self):
        rng = np.random.default_rng(7)
        c = oracles.random_sparse_coords(rng, (3, 5, 5, 5), 150)
        km = build_kernel_map(c, c, KernelSpec())
        assert len(km.triples()) == km.num_pairs

    def test_transpose_consistency(self):
        rng = np.random.default_rng(8)
        spec = KernelSpec(stride=(1, 2, 2, 2))
        fine = oracles.random_sparse_coords(rng, (3, 6, 6, 6), 120)
        coarse = output_coords(fine, spec)
        direct = build_kernel_map(coarse, fine, spec, transposed=True)
        swapped = transpose_map(build_kernel_map(fine, coarse, spec))
        assert direct.triples() == swapped.triples()
        offs = oracles.offsets_bruteforce(spec.size, "hypercube")
        assert direct.triples() == oracles.kernel_map_bruteforce(coarse, fine, offs, spec.stride, transposed=True)


def _conv_case(rng, spec, c_in, c_out, dtype=np.float64):
    c = oracles.random_sparse_coords(rng, (5, 5, 5, 3), int(rng.integers(5, 60)))
    out = output_coords(c, spec)
    km = build_kernel_map(c, out, spec)
    x = rng.standard_normal((c.shape[0], c_in)).astype(dtype)
    p = ConvParams(rng.standard_normal((spec.num_offsets, c_in, c_out)).astype(dtype), rng.standard_normal(c_out).astype(dtype))
    return c, out, km, x, p


class TestConvForward:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        c = oracles.random_sparse_coords(rng, (3, 4, 4, 4), 20)
        spec = KernelSpec(size=(1, 1, 1, 1))
        km = build_kernel_map(c, c, spec)
        x = rng.standard_normal((20, 3))
        np.testing.assert_array_equal(conv_forward(x, km, ConvParams(np.eye(3)[None])), x)

    def test_zero_weights_give_bias(self):
        rng = np.random.default_rng(1)
        c, out, km, x, _ = _conv_case(rng, KernelSpec(), 2, 3)
        b = np.array([1.0, -2.0, 0.5])
        y = conv_forward(x, km, ConvParams(np.zeros((81, 2, 3)), b))
        np.testing.assert_array_equal(y, np.tile(b, (out.shape[0], 1)))

    def test_isolated_site_gets_bias_only(self):
        c = np.array([[0, 0, 0, 0], [0, 9, 9, 9]])
        spec = KernelSpec(size=(1, 3, 3, 3))
        km = build_kernel_map(c, c, spec)
        w = np.zeros((spec.num_offsets, 1, 1))
        w[:, 0, 0] = 1.0
        center = [tuple(o) for o in spec.offsets()].index((0, 0, 0, 0))
        w[center] = 0.0
        y = conv_forward(np.ones((2, 1)), km, ConvParams(w, np.array([0.25])))
        np.testing.assert_array_equal(y, [[0.25], [0.25]])

    def test_shape_mismatch(self):
        rng = np.random.default_rng(2)
        _, _, km, x, p = _conv_case(rng, KernelSpec(), 2, 3)
        with pytest.raises(ValueError):
            conv_forward(x[:, :1], km, p)
        with pytest.raises(ValueError):
            conv_forward(x, km, ConvParams(p.weights[:5], p.bias))

    @pytest.mark.parametrize("shape", ["hypercube", "hypercross"])
    @pytest.mark.parametrize("stride", [(1, 1, 1, 1), (1, 2, 2, 2)])
    def test_dense_oracle(self, shape, stride):
        rng = np.random.default_rng(3)
        spec = KernelSpec(stride=stride, shape=shape)
        c, out, km, x, p = _conv_case(rng, spec, 3, 2)
        ref = oracles.dense_conv(c, x, out, p.weights, spec.offsets(), spec.size, stride, p.bias)
        np.testing.assert_allclose(conv_forward(x, km, p), ref, rtol=1e-10, atol=1e-10)

    def test_transposed_dense_oracle(self):
        rng = np.random.default_rng(4)
        spec = KernelSpec(stride=(1, 2, 2, 2))
        fine = oracles.random_sparse_coords(rng, (3, 6, 6, 6), 50)
        coarse = output_coords(fine, spec)
        km = build_kernel_map(coarse, fine, spec, transposed=True)
        x = rng.standard_normal((coarse.shape[0], 2))
        w = rng.standard_normal((81, 2, 3))
        ref = oracles.dense_conv(coarse, x, fine, w, spec.offsets(), spec.size, spec.stride, transposed=True)
        np.testing.assert_allclose(conv_forward(x, km, ConvParams(w)), ref, rtol=1e-10, atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        _, _, km, x, p = _conv_case(rng, KernelSpec(), 3, 2)
        p = ConvParams(p.weights)
        y = rng.standard_normal(x.shape)
        lhs = conv_forward(2.5 * x - 1.5 * y, km, p)
        rhs = 2.5 * conv_forward(x, km, p) - 1.5 * conv_forward(y, km, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_site_permutation_invariance(self):
        rng = np.random.default_rng(6)
        spec = KernelSpec()
        c, _, km, x, p = _conv_case(rng, spec, 2, 2)
        perm = rng.permutation(c.shape[0])
        km_p = build_kernel_map(c[perm], c[perm], spec)
        np.testing.assert_allclose(conv_forward(x[perm], km_p, p), conv_forward(x, km, p)[perm], atol=1e-12)


class TestConvBackward:
    def test_zero_grad_output(self):
        rng = np.random.default_rng(0)
        _, out, km, x, p = _conv_case(rng, KernelSpec(), 2, 3)
        g = conv_backward(np.zeros((out.shape[0], 3)), x, km, p)
        assert not g.grad_weights.any() and not g.grad_input.any() and not g.grad_bias.any()

    def test_identity_kernel_passes_gradient(self):
        rng = np.random.default_rng(1)
        c = oracles.random_sparse_coords(rng, (3, 4, 4, 4), 15)
        km = build_kernel_map(c, c, KernelSpec(size=(1, 1, 1, 1)))
        dy = rng.standard_normal((15, 2))
        g = conv_backward(dy, rng.standard_normal((15, 2)), km, ConvParams(np.eye(2)[None]))
        np.testing.assert_array_equal(g.grad_input, dy)

    def test_bad_grad_shape(self):
        rng = np.random.default_rng(2)
        _, out, km, x, p = _conv_case(rng, KernelSpec(), 2, 3)
        with pytest.raises(ValueError):
            conv_backward(np.zeros((out.shape[0], 2)), x, km, p)


class TestNormAndActivations:
    def test_single_site_train_gives_beta(self):
        st_ = NormState(np.array([2.0]), np.array([0.7]), np.zeros(1), np.ones(1))
        y, _ = batchnorm_forward(np.array([[3.3]]), st_, train=True)
        np.testing.assert_allclose(y, [[0.7]])

    def test_prenormalized_passthrough(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((500, 3))
        x = (x - x.mean(0)) / x.std(0)
        st_ = NormState(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3))
        y, _ = batchnorm_forward(x, st_, train=True)
        np.testing.assert_allclose(y, x, rtol=1e-5, atol=1e-8)
        # eval mode with unit running stats is the identity up to eps
        y_eval, _ = batchnorm_forward(x, NormState(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3)), train=False)
        np.testing.assert_allclose(y_eval, x, rtol=1e-5, atol=1e-8)

    def test_running_stats_update(self):
        x = np.array([[1.0], [3.0]])
        st_ = NormState(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))
        batchnorm_forward(x, st_, train=True)
        np.testing.assert_allclose(st_.running_mean, [0.2])
        np.testing.assert_allclose(st_.running_var, [0.9 + 0.1 * 2.0])

    def test_zero_sites_train_errors(self):
        st_ = NormState(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))
        with pytest.raises(FloatingPointError):
            batchnorm_forward(np.zeros((0, 1)), st_, train=True)

    def test_relu(self):
        np.testing.assert_array_equal(relu_forward(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_softmax(self):
        np.testing.assert_array_equal(softmax_forward(np.zeros((1, 2))), [[0.5, 0.5]])
        s = softmax_forward(np.random.default_rng(0).standard_normal((100, 2)) * 50)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
        assert np.isfinite(softmax_forward(np.array([[1000.0, -1000.0]]))).all()


class TestWeightContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"b": rng.standard_normal((3, 2)).astype(np.float32), "a": rng.standard_normal(4), "n": np.arange(3)}
        save_weights(tmp_path / "w.smw", tensors, {"note": "x"})
        back, meta = load_weights(tmp_path / "w.smw")
        assert meta == {"note": "x"}
        for k, v in tensors.items():
            assert back[k].dtype == v.dtype
            np.testing.assert_array_equal(back[k], v)

    def test_deterministic_bytes(self, tmp_path):
        t = {"x": np.ones((2, 2), np.float32), "y": np.zeros(3)}
        save_weights(tmp_path / "1.smw", t)
        save_weights(tmp_path / "2.smw", dict(reversed(list(t.items()))))
        assert (tmp_path / "1.smw").read_bytes() == (tmp_path / "2.smw").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "w.smw").write_bytes(b"nope" + bytes(20))
        with pytest.raises(WeightFormatError):
            load_weights(tmp_path / "w.smw")

    def test_truncated(self, tmp_path):
        save_weights(tmp_path / "w.smw", {"x": np.ones(100)})
        data = (tmp_path / "w.smw").read_bytes()
        (tmp_path / "w.smw").write_bytes(data[:-8])
        with pytest.raises(WeightFormatError):
            load_weights(tmp_path / "w.smw")

    def test_offset_order_version_checked(self, tmp_path, monkeypatch):
        import sparsemos.sparse.serialize as ser

        save_weights(tmp_path / "w.smw", {"x": np.ones(1)})
        monkeypatch.setattr(ser, "OFFSET_ORDER_VERSION", 99)
        with pytest.raises(WeightFormatError, match="offset ordering"):
            ser.load_weights(tmp_path / "w.smw")
