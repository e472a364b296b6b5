import numpy as np
import pytest

import bundlecraft.numerics as nm
from bundlecraft.errors import DegenerateVectorError, GraphError, NonFiniteError, ShapeError

from conftest import numeric_grad, rel_err

F64 = np.float64


def scalar_of(node):
    return node.item()


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 2))
        out = nm.matmul(nm.constant(np.eye(2), F64), nm.constant(m, F64))
        np.testing.assert_array_equal(out.value, m)

    def test_hand_arithmetic(self):
        out = nm.matmul(nm.constant([[1.0, 2.0]], F64), nm.constant([[3.0], [4.0]], F64))
        assert out.value.tolist() == [[11.0]]

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nm.matmul(nm.constant(np.zeros((2, 3)), F64), nm.constant(np.zeros((2, 3)), F64))

    def test_gradient_matches_finite_differences(self, rng):
        a = nm.parameter(rng.normal(size=(3, 4)), F64)
        b_val = rng.normal(size=(4, 2))

        loss = nm.sum_all(nm.matmul(a, nm.constant(b_val, F64)))
        nm.backward(loss)

        def f():
            return nm.sum_all(nm.matmul(nm.constant(a.value, F64), nm.constant(b_val, F64))).item()

        num = numeric_grad(f, a.value, h=1e-5)
        assert rel_err(a.adjoint, num) < 1e-6


class TestSoftmaxRows:
    def test_uniform_on_constant_row(self):
        out = nm.softmax_rows(nm.constant([[0.0, 0.0, 0.0]], F64))
        np.testing.assert_allclose(out.value, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_analytic_two_logits(self):
        out = nm.softmax_rows(nm.constant([[np.log(2.0), 0.0]], F64))
        np.testing.assert_allclose(out.value, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_rows_sum_to_one_extreme_inputs(self, rng):
        x = rng.uniform(-50, 50, size=(40, 7))
        out = nm.softmax_rows(nm.constant(x, F64))
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)

    def test_jvp_matches_finite_differences(self, rng):
        x = nm.parameter(rng.normal(size=(3, 5)), F64)
        w = rng.normal(size=(3, 5))

        loss = nm.sum_all(nm.mul(nm.softmax_rows(x), nm.constant(w, F64)))
        nm.backward(loss)

        def f():
            p = nm.softmax_rows(nm.constant(x.value, F64))
            return nm.sum_all(nm.mul(p, nm.constant(w, F64))).item()

        num = numeric_grad(f, x.value, h=1e-6)
        assert rel_err(x.adjoint, num) < 1e-6


class TestMeanRows:
    def test_single_row_unchanged(self, rng):
        row = rng.normal(size=(1, 6))
        out = nm.mean_rows(nm.constant(row, F64))
        np.testing.assert_array_equal(out.value, row)

    def test_hand_arithmetic(self):
        out = nm.mean_rows(nm.constant([[1.0, 3.0], [3.0, 1.0]], F64))
        assert out.value.tolist() == [[2.0, 2.0]]

    def test_zero_rows_error(self):
        with pytest.raises(ShapeError):
            nm.mean_rows(nm.constant(np.zeros((0, 3)), F64))

    def test_backward_distributes_evenly(self, rng):
        x = nm.parameter(rng.normal(size=(4, 3)), F64)
        w = rng.normal(size=(1, 3))
        loss = nm.sum_all(nm.mul(nm.mean_rows(x), nm.constant(w, F64)))
        nm.backward(loss)

        def f():
            m = nm.mean_rows(nm.constant(x.value, F64))
            return nm.sum_all(nm.mul(m, nm.constant(w, F64))).item()

        num = numeric_grad(f, x.value)
        assert rel_err(x.adjoint, num) < 1e-6
        # every row receives g / rows
        np.testing.assert_allclose(x.adjoint, np.tile(w / 4, (4, 1)))


class TestCosine:
    def test_self_similarity_is_one(self, rng):
        v = rng.normal(size=(1, 8))
        out = nm.cosine(nm.constant(v, F64), nm.constant(v, F64))
        assert abs(out.item() - 1.0) < 1e-12

    def test_orthogonal(self):
        out = nm.cosine(nm.constant([[1.0, 0.0]], F64), nm.constant([[0.0, 1.0]], F64))
        assert abs(out.item()) < 1e-15

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVectorError):
            nm.cosine(nm.constant([[0.0, 0.0]], F64), nm.constant([[1.0, 0.0]], F64))

    def test_range(self, rng):
        for _ in range(50):
            a = rng.normal(size=(1, 5))
            b = rng.normal(size=(1, 5))
            val = nm.cosine(nm.constant(a, F64), nm.constant(b, F64)).item()
            assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        a = nm.parameter(rng.normal(size=(1, 6)), F64)
        b_val = rng.normal(size=(1, 6))
        loss = nm.cosine(a, nm.constant(b_val, F64))
        nm.backward(loss)

        def f():
            return nm.cosine(nm.constant(a.value, F64), nm.constant(b_val, F64)).item()

        num = numeric_grad(f, a.value)
        assert rel_err(a.adjoint, num) < 1e-6


class TestBackwardContract:
    def test_sum_gives_ones(self, rng):
        w = nm.parameter(rng.normal(size=(3, 4)), F64)
        loss = nm.sum_all(w)
        nm.backward(loss)
        np.testing.assert_array_equal(w.adjoint, np.ones((3, 4)))

    def test_null_loss_gives_zeros(self, rng):
        w = nm.parameter(rng.normal(size=(3, 4)), F64)
        loss = nm.smul(nm.sum_all(w), 0.0)
        nm.backward(loss)
        np.testing.assert_array_equal(w.adjoint, np.zeros((3, 4)))

    def test_non_scalar_root_rejected(self, rng):
        w = nm.parameter(rng.normal(size=(3, 4)), F64)
        with pytest.raises(GraphError):
            nm.backward(nm.smul(w, 2.0))

    def test_repeated_backward_rejected(self, rng):
        w = nm.parameter(rng.normal(size=(2, 2)), F64)
        loss = nm.sum_all(w)
        nm.backward(loss)
        with pytest.raises(GraphError):
            nm.backward(loss)

    def test_fanout_adjoints_sum(self, rng):
        w = nm.parameter(rng.normal(size=(2, 2)), F64)
        loss = nm.sum_all(nm.add(w, w))
        nm.backward(loss)
        np.testing.assert_array_equal(w.adjoint, 2 * np.ones((2, 2)))


class TestHardErrors:
    def test_nan_input_rejected(self):
        with pytest.raises(NonFiniteError):
            nm.constant([[np.nan]], F64)

    def test_overflow_is_hard_error(self):
        big = nm.constant(np.full((1, 1), 1e308), F64)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            nm.mul(big, big)

    def test_mixed_dtypes_rejected(self):
        with pytest.raises(ShapeError):
            nm.add(nm.constant([[1.0]], np.float32), nm.constant([[1.0]], np.float64))


def test_graph_evaluation_deterministic(rng):
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(4, 4))

    def build():
        a = nm.constant(x, F64)
        b = nm.constant(w, F64)
        out = nm.mean_rows(nm.softmax_rows(nm.matmul(a, b)))
        return out.value.tobytes()

    assert build() == build()


# every differentiable op, analytic vs central finite differences, 64-bit
def _op_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    sq = rng.normal(size=(4, 4))
    w = rng.normal(size=(3, 1))
    m2 = rng.normal(size=(4, 2))
    return [
        ("add", lambda p: nm.sum_all(nm.mul(nm.add(p, nm.constant(b, F64)), nm.constant(b, F64))), a),
        ("sub", lambda p: nm.sum_all(nm.mul(nm.sub(p, nm.constant(b, F64)), nm.constant(b, F64))), a),
        ("mul", lambda p: nm.sum_all(nm.mul(p, nm.constant(b, F64))), a),
        ("smul", lambda p: nm.sum_all(nm.smul(p, 2.7)), a),
        ("sdiv", lambda p: nm.sum_all(nm.sdiv(p, 3.1)), a),
        ("matmul", lambda p: nm.sum_all(nm.matmul(p, nm.constant(m2, F64))), a),
        ("transpose", lambda p: nm.sum_all(nm.mul(nm.transpose(p), nm.constant(b.T.copy(), F64))), a),
        ("softmax", lambda p: nm.sum_all(nm.mul(nm.softmax_rows(p), nm.constant(b, F64))), a),
        ("log_softmax", lambda p: nm.sum_all(nm.mul(nm.log_softmax_rows(p), nm.constant(b, F64))), a),
        ("mean_rows", lambda p: nm.sum_all(nm.mul(nm.mean_rows(p), nm.constant(b[:1], F64))), a),
        ("rowsum", lambda p: nm.sum_all(nm.mul(nm.rowsum(p), nm.constant(w, F64))), a),
        ("mean_all", lambda p: nm.mean_all(nm.mul(p, p)), a),
        ("normalize", lambda p: nm.sum_all(nm.mul(nm.normalize_rows(p), nm.constant(b, F64))), a),
        ("hconcat", lambda p: nm.sum_all(nm.mul(nm.hconcat([p, p]), nm.constant(np.hstack([b, b]), F64))), a),
        ("vconcat", lambda p: nm.sum_all(nm.mul(nm.vconcat([p, p]), nm.constant(np.vstack([b, b]), F64))), a),
        ("take_rows", lambda p: nm.sum_all(nm.take_rows(p, [0, 2, 2])), a),
        ("take_col", lambda p: nm.sum_all(nm.mul(nm.take_col(p, 1), nm.constant(w, F64))), a),
        ("take_diag", lambda p: nm.sum_all(nm.take_diag(p)), sq),
        ("bmul_col", lambda p: nm.sum_all(nm.bmul_col(nm.take_col(p, 0), nm.constant(b, F64))), a),
    ]


def test_all_ops_gradcheck_many_draws():
    checked = 0
    for draw in range(6):
        rng = np.random.default_rng(1000 + draw)
        for name, expr, x0 in _op_cases(rng):
            p = nm.parameter(x0.copy(), F64)
            loss = expr(p)
            nm.backward(loss)
            analytic = p.adjoint.copy()

            def f(p=p, expr=expr):
                frozen = nm.constant(p.value, F64)
                frozen.requires_grad = False
                return expr(frozen).item()

            num = numeric_grad(f, p.value)
            assert rel_err(analytic, num) < 1e-4, f"{name} draw {draw}"
            checked += 1
    assert checked >= 100
