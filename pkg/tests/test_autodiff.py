import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotfill import autodiff as ad


def grad_of(build, params, step=1e-5):
    return ad.check_gradients(build, params, step=step)


class TestForwardValues:
    # Frozen oracles: every expected number below was computed by hand or
    # with a plain numpy expression independent of the graph code.

    def test_matmul_value(self):
        a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
        b = ad.constant([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_allclose(ad.matmul(a, b).value, [[19.0, 22.0], [43.0, 50.0]])

    def test_matmul_transpose_flags(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(5, 4))
        got = ad.matmul(ad.constant(a), ad.constant(b), transpose_b=True).value
        np.testing.assert_allclose(got, a @ b.T)
        c = rng.normal(size=(3, 5))
        got = ad.matmul(ad.constant(a), ad.constant(c), transpose_a=True).value
        np.testing.assert_allclose(got, a.T @ c)
        got = ad.matmul(ad.constant(a), ad.constant(np.ascontiguousarray(c.T)),
                        transpose_a=True, transpose_b=True).value
        np.testing.assert_allclose(got, a.T @ c)

    def test_scalar_shapes(self):
        s = ad.constant(2.5)
        assert s.value.shape == (1, 1)
        assert ad.sum_all(s).value[0, 0] == 2.5

    def test_logsumexp_value(self):
        x = ad.constant([[0.0, np.log(3.0)]])
        out = ad.logsumexp(x, axis=1)
        assert out.value.shape == (1, 1)
        np.testing.assert_allclose(out.value[0, 0], np.log(4.0), rtol=0, atol=1e-12)

    def test_logsumexp_overflow_safe(self):
        x = ad.constant([[1.0e4, 1.0e4]])
        out = ad.logsumexp(x, axis=1)
        np.testing.assert_allclose(out.value[0, 0], 1.0e4 + np.log(2.0), rtol=1e-12)

    def test_sigmoid_tails(self):
        x = ad.constant([[-800.0, 0.0, 800.0]])
        out = ad.sigmoid(x).value
        np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-12)

    def test_tanh_value(self):
        out = ad.tanh(ad.constant([[0.5]])).value
        np.testing.assert_allclose(out[0, 0], 0.46211715726000974, atol=1e-15)

    def test_concat_and_slice_roundtrip(self):
        a = ad.constant([[1.0, 2.0]])
        b = ad.constant([[3.0, 4.0, 5.0]])
        cat = ad.concat([a, b], axis=1)
        np.testing.assert_allclose(cat.value, [[1, 2, 3, 4, 5]])
        back = ad.slice_axis(cat, 1, 2, 5)
        np.testing.assert_allclose(back.value, b.value)

    def test_lookup_rows(self):
        table = ad.constant(np.arange(12.0).reshape(4, 3))
        out = ad.lookup(table, [2, 0, 2])
        np.testing.assert_allclose(out.value, [[6, 7, 8], [0, 1, 2], [6, 7, 8]])


class TestGradients:
    # Every primitive checked against the central-difference oracle.

    def test_matmul_all_flag_combinations(self):
        rng = np.random.default_rng(7)
        for ta in (False, True):
            for tb in (False, True):
                a_shape = (4, 3) if ta else (3, 4)
                b_shape = (2, 4) if tb else (4, 2)
                params = {"a": rng.normal(size=a_shape), "b": rng.normal(size=b_shape)}

                def build(leaves, ta=ta, tb=tb):
                    prod = ad.matmul(leaves["a"], leaves["b"], transpose_a=ta, transpose_b=tb)
                    return ad.sum_all(ad.tanh(prod))

                errs = grad_of(build, params)
                assert max(errs.values()) < 1e-7, (ta, tb, errs)

    def test_elementwise_chain(self):
        rng = np.random.default_rng(1)
        params = {"x": rng.normal(size=(2, 3)), "y": rng.normal(size=(2, 3))}

        def build(leaves):
            z = ad.mul(ad.tanh(leaves["x"]), ad.sigmoid(leaves["y"]))
            return ad.sum_all(ad.exp(ad.scale(z, 0.5)))

        errs = grad_of(build, params)
        assert max(errs.values()) < 1e-7

    def test_log_gradient(self):
        params = {"x": np.array([[0.5, 1.5], [2.0, 3.0]])}

        def build(leaves):
            return ad.sum_all(ad.log(leaves["x"]))

        errs = grad_of(build, params)
        assert errs["x"] < 1e-8

    def test_logsumexp_gradient_both_axes(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4)) * 3
        params = {"x": x}
        for axis in (0, 1):

            def build(leaves, axis=axis):
                return ad.sum_all(ad.logsumexp(leaves["x"], axis=axis))

            # finite differences carry ~1e-7 truncation noise at this scale
            errs = grad_of(build, params)
            assert errs["x"] < 1e-6
            # exact oracle: the gradient is the softmax along the axis
            leaf = ad.constant(x)
            g = ad.backward(ad.sum_all(ad.logsumexp(leaf, axis=axis)), {"x": leaf})["x"]
            m = x.max(axis=axis, keepdims=True)
            soft = np.exp(x - m) / np.exp(x - m).sum(axis=axis, keepdims=True)
            np.testing.assert_allclose(g, soft, atol=1e-14)

    def test_concat_gradient_splits(self):
        # d(sum(concat)) w.r.t. each part is all-ones of the part's shape.
        a = ad.constant(np.zeros((2, 2)))
        b = ad.constant(np.zeros((2, 3)))
        loss = ad.sum_all(ad.concat([a, b], axis=1))
        grads = ad.backward(loss, {"a": a, "b": b})
        np.testing.assert_array_equal(grads["a"], np.ones((2, 2)))
        np.testing.assert_array_equal(grads["b"], np.ones((2, 3)))

    def test_lookup_scatter_adds_repeated_rows(self):
        table = ad.constant(np.zeros((4, 2)))
        out = ad.lookup(table, [1, 1, 3])
        grads = ad.backward(ad.sum_all(out), {"t": table})
        np.testing.assert_array_equal(grads["t"], [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_lookup_gradient_numeric(self):
        rng = np.random.default_rng(3)
        params = {"t": rng.normal(size=(5, 3))}

        def build(leaves):
            rows = ad.lookup(leaves["t"], [4, 0, 4, 2])
            return ad.sum_all(ad.tanh(rows))

        errs = grad_of(build, params)
        assert errs["t"] < 1e-7

    def test_slice_and_sum_axis_gradient(self):
        rng = np.random.default_rng(4)
        params = {"x": rng.normal(size=(4, 5))}

        def build(leaves):
            middle = ad.slice_axis(leaves["x"], 0, 1, 3)
            col = ad.sum_axis(middle, axis=1)
            return ad.sum_all(ad.mul(col, col))

        errs = grad_of(build, params)
        assert errs["x"] < 1e-7

    def test_reused_node_accumulates(self):
        # x appears twice: d(sum(x*x))/dx = 2x.
        x = ad.constant([[1.0, -2.0], [3.0, 0.5]])
        grads = ad.backward(ad.sum_all(ad.mul(x, x)), {"x": x})
        np.testing.assert_allclose(grads["x"], 2 * x.value)

    def test_unreachable_leaf_gets_zeros(self):
        x = ad.constant([[1.0]])
        unused = ad.constant(np.ones((2, 2)))
        grads = ad.backward(ad.sum_all(x), {"x": x, "unused": unused})
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_deep_chain_no_recursion_limit(self):
        x = ad.constant([[0.01]])
        node = x
        for _ in range(5000):
            node = ad.add(node, x)
        grads = ad.backward(node, {"x": x})
        np.testing.assert_allclose(grads["x"], [[5001.0]])


class TestDeterminism:
    def test_same_seed_same_gradients(self):
        def run():
            rng = np.random.default_rng(11)
            params = {"w": rng.normal(size=(3, 3)), "b": rng.normal(size=(1, 3))}
            leaves = {k: ad.constant(v) for k, v in params.items()}
            h = ad.tanh(ad.add(ad.matmul(ad.constant(np.ones((2, 3))), leaves["w"]),
                               ad.matmul(ad.constant(np.ones((2, 1))), leaves["b"])))
            return ad.backward(ad.sum_all(h), leaves)

        g1, g2 = run(), run()
        for k in g1:
            np.testing.assert_array_equal(g1[k], g2[k])


class TestErrorContracts:
    def test_shape_mismatch_names_both_shapes(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((2, 2)))
        with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.add(a, b)

    def test_matmul_inner_dim_mismatch(self):
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    def test_non_2d_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.constant(np.ones((2, 2, 2)))

    def test_nan_input_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            ad.constant([[np.nan]])

    def test_overflowing_exp_rejected(self):
        with pytest.raises(ad.NonFiniteError, match="exp"):
            ad.exp(ad.constant([[1.0e4]]))

    def test_log_nonpositive_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            ad.log(ad.constant([[0.0]]))

    def test_backward_requires_scalar(self):
        x = ad.constant(np.ones((2, 2)))
        with pytest.raises(ad.ShapeError, match="scalar"):
            ad.backward(x, {"x": x})

    def test_lookup_out_of_range(self):
        with pytest.raises(ad.ShapeError, match="out of range"):
            ad.lookup(ad.constant(np.ones((3, 2))), [3])

    def test_slice_out_of_range(self):
        with pytest.raises(ad.ShapeError):
            ad.slice_axis(ad.constant(np.ones((3, 2))), 1, 1, 5)

    def test_concat_mismatched_other_axis(self):
        with pytest.raises(ad.ShapeError):
            ad.concat([ad.constant(np.ones((2, 2))), ad.constant(np.ones((3, 2)))], axis=1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 5))
def test_composite_graph_matches_finite_differences(seed, rows, cols):
    # Property: for any small random affine+nonlinearity+logsumexp graph the
    # analytic gradient agrees with central differences.
    rng = np.random.default_rng(seed)
    params = {
        "w": rng.normal(size=(cols, rows)),
        "x": rng.normal(size=(rows, cols)),
    }

    def build(leaves):
        prod = ad.matmul(leaves["x"], leaves["w"])  # [rows, rows]
        squashed = ad.tanh(prod)
        return ad.sum_all(ad.logsumexp(ad.mul(squashed, squashed), axis=1))

    errs = grad_of(build, params)
    assert max(errs.values()) < 1e-6
