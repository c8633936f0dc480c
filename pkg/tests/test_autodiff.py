import numpy as np
import pytest

from icilab import autodiff as ad
from icilab.errors import NonFiniteError, ShapeError

from oracles import check_gradients


def test_forward_square():
    x = ad.tensor(3.0)
    y = ad.mul(x, x)
    assert float(ad.forward(y)) == 9.0


def test_backward_square():
    x = ad.tensor(3.0)
    y = ad.mul(x, x)
    ad.backward(y)
    assert float(x.grad) == 6.0


def test_identity_matmul():
    v = ad.tensor([[1.0, 2.0]])
    eye = ad.tensor(np.eye(2))
    out = ad.matmul(v, eye)
    np.testing.assert_array_equal(ad.forward(out), [[1.0, 2.0]])


def test_zero_weight_net_gives_zero_logits():
    x = ad.tensor(np.random.default_rng(0).normal(size=(5, 3)))
    w1, b1 = ad.tensor(np.zeros((3, 4))), ad.tensor(np.zeros(4))
    w2, b2 = ad.tensor(np.zeros((4, 2))), ad.tensor(np.zeros(2))
    h = ad.elu(ad.add(ad.matmul(x, w1), b1))
    logits = ad.add(ad.matmul(h, w2), b2)
    np.testing.assert_array_equal(ad.forward(logits), np.zeros((5, 2)))


def test_gradient_fanout_accumulates():
    # f = x*x + 3x has gradient 2x + 3
    x = ad.tensor(2.0)
    f = ad.add(ad.mul(x, x), ad.mul(x, ad.tensor(3.0)))
    ad.backward(f)
    assert float(x.grad) == pytest.approx(7.0)


def test_backward_sum_of_terms_is_sum_of_gradients():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4,)), rng.normal(size=(4,))
    ta, tb = ad.tensor(a), ad.tensor(b)
    ad.backward(ad.add(ad.reduce_sum(ad.mul(ta, ta)), ad.reduce_sum(ad.mul(tb, tb))))
    ga1, gb1 = ta.grad.copy(), tb.grad.copy()

    ta2, tb2 = ad.tensor(a), ad.tensor(b)
    ad.backward(ad.reduce_sum(ad.mul(ta2, ta2)))
    ad.backward(ad.reduce_sum(ad.mul(tb2, tb2)))
    np.testing.assert_array_equal(ga1, ta2.grad)
    np.testing.assert_array_equal(gb1, tb2.grad)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 4))
    targets = rng.integers(0, 4, size=6)
    node = ad.tensor(logits)
    ad.backward(ad.cross_entropy(node, targets))
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    onehot = np.eye(4)[targets]
    np.testing.assert_allclose(node.grad, (p - onehot) / 6, atol=1e-12)
    # independent check against central finite differences
    err = check_gradients(lambda ls: ad.cross_entropy(ls[0], targets), [logits.copy()])
    assert err < 1e-4


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(8, 5)) * 10
    p = ad.forward(ad.softmax(ad.tensor(z)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_entropy_uniform_two_classes():
    h = ad.forward(ad.entropy(ad.tensor([[0.5, 0.5]])))
    assert float(h[0]) == pytest.approx(np.log(2.0), abs=1e-12)


def test_entropy_bounds():
    rng = np.random.default_rng(4)
    for k in (2, 3, 7):
        z = rng.normal(size=(20, k)) * 3
        p = ad.softmax(ad.tensor(z))
        h = ad.forward(ad.entropy(p))
        assert np.all(h >= -1e-12)
        assert np.all(h <= np.log(k) + 1e-12)


def test_elu_limits():
    out = ad.forward(ad.elu(ad.tensor([0.0, -745.0, 2.0])))
    assert out[0] == 0.0
    assert out[1] == pytest.approx(-1.0, abs=1e-12)
    assert out[2] == 2.0


def test_stop_gradient_blocks():
    x = ad.tensor(3.0)
    y = ad.mul(ad.stop_gradient(x), ad.tensor(5.0))
    ad.backward(y)
    assert x.grad is None or float(x.grad) == 0.0


def test_stop_gradient_passes_value():
    x = ad.tensor([1.0, 2.0])
    np.testing.assert_array_equal(ad.forward(ad.stop_gradient(x)), [1.0, 2.0])


def test_shape_mismatch_is_structured():
    with pytest.raises(ShapeError) as exc:
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 2))))
    assert exc.value.op == "matmul"
    assert (2, 3) in exc.value.shapes and (4, 2) in exc.value.shapes


def test_leaf_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        ad.tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        ad.tensor([np.inf])


def test_log_rejects_non_positive():
    with pytest.raises(NonFiniteError):
        ad.log(ad.tensor([1.0, 0.0]))


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 4))
    f1 = ad.forward(ad.softmax(ad.elu(ad.matmul(ad.tensor(x), ad.tensor(x)))))
    f2 = ad.forward(ad.softmax(ad.elu(ad.matmul(ad.tensor(x), ad.tensor(x)))))
    np.testing.assert_array_equal(f1, f2)


@pytest.mark.parametrize("seed", range(6))
def test_primitive_gradients_against_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=(5,))
    t = rng.integers(0, 5, size=3)

    def build(leaves):
        lx, lw, lb = leaves
        h = ad.elu(ad.add(ad.matmul(lx, lw), lb))
        p = ad.softmax(h)
        ent = ad.reduce_mean(ad.entropy(p))
        ce = ad.cross_entropy(h, t)
        m = ad.reduce_mean(ad.mul(h, h))
        lg = ad.reduce_sum(ad.log(ad.exp(ad.reduce_mean(h, axis=0))))
        mx = ad.reduce_sum(ad.max_last(h))
        ab = ad.reduce_mean(ad.absolute(h))
        total = ad.add(ad.add(ad.add(ent, ce), ad.add(m, lg)), ad.add(mx, ab))
        return ad.add(total, ad.neg(ad.reduce_mean(ad.relu(lx))))

    assert check_gradients(build, [x, w, b]) < 1e-4


def test_concat_and_gather_gradients():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 2))
    b = rng.normal(size=(4, 3))
    idx = np.array([2, 0, 0, 3, 1])

    def build(leaves):
        cat = ad.concat(leaves, axis=1)
        rows = ad.gather_rows(cat, idx)
        return ad.reduce_sum(ad.mul(rows, rows))

    assert check_gradients(build, [a, b]) < 1e-4


def test_mse_matches_fd():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert check_gradients(lambda ls: ad.mse(ls[0], ls[1]), [a, b]) < 1e-4
    zero = ad.forward(ad.mse(ad.tensor(a), ad.tensor(a)))
    assert float(zero) == 0.0


class TestAdam:
    def test_zero_gradient_is_noop_with_time_advancing(self):
        store = ad.ParameterStore()
        p = store.add("w", np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        store.adam_step(0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert store._t["w"] == 1

    def test_missing_gradient_treated_as_zero(self):
        store = ad.ParameterStore()
        p = store.add("w", np.array([3.0]))
        store.adam_step(0.1)
        np.testing.assert_array_equal(p.data, [3.0])

    def test_first_step_magnitude_is_learning_rate(self):
        # step 1 with constant gradient g: m_hat = g, v_hat = g^2,
        # update = lr * g / (|g| + eps) ~ lr * sign(g)
        store = ad.ParameterStore()
        p = store.add("w", np.array([0.0]))
        p.grad = np.array([2.5])
        store.adam_step(0.001)
        assert float(p.data[0]) == pytest.approx(-0.001, rel=1e-6)

    def test_hand_computed_two_steps(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g1, g2 = 0.3, -0.7
        m = v = 0.0
        x = 1.0
        for t, g in ((1, g1), (2, g2)):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        store = ad.ParameterStore()
        p = store.add("w", np.array([1.0]))
        p.grad = np.array([g1])
        store.adam_step(lr)
        p.grad = np.array([g2])
        store.adam_step(lr)
        assert float(p.data[0]) == pytest.approx(x, rel=1e-12)

    def test_bit_identical_across_identical_stores(self):
        def run():
            rng = np.random.default_rng(11)
            store = ad.ParameterStore()
            p = store.add("w", rng.normal(size=(4, 3)))
            for k in range(5):
                p.grad = np.full((4, 3), 0.1 * (k + 1))
                store.adam_step(0.01)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_non_finite_gradient_names_parameter(self):
        store = ad.ParameterStore()
        p = store.add("theta", np.array([1.0]))
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteError, match="theta"):
            store.adam_step(0.1)

    def test_grads_cleared_after_step(self):
        store = ad.ParameterStore()
        p = store.add("w", np.array([1.0]))
        p.grad = np.array([1.0])
        store.adam_step(0.1)
        assert p.grad is None

    def test_duplicate_name_rejected(self):
        store = ad.ParameterStore()
        store.add("w", np.array([1.0]))
        with pytest.raises(ValueError):
            store.add("w", np.array([2.0]))
