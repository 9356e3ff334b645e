import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stvsa import tensor as T
from stvsa.errors import ContractError, DomainError, ShapeError, UnsupportedOpError
from stvsa.tensor import Tensor


def fd_grad(f, x: np.ndarray, step=1e-4):
    """Central finite differences of scalar f at x (x is perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


def check_op(build, *shapes, seed=0, tol=1e-4, positive=False):
    """Analytic vs finite-difference gradient of sum(w * op(inputs))."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.2 if positive else -2, 2, size=s) for s in shapes]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    w = rng.uniform(-1, 1, size=out.shape)
    loss = T.tsum(out * Tensor(w))
    T.backward(loss)
    for a, t in zip(arrays, tensors):
        num = fd_grad(lambda: float(np.sum(w * build(*[Tensor(x) for x in arrays]).data)), a)
        assert rel_err(t.grad, num) < tol, build


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_dot(self):
        assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_matches_fd(self):
        check_op(lambda a, b: T.matmul(a, b), (4, 3), (3, 2))

    def test_batched_with_shared_weight(self):
        check_op(lambda a, b: T.matmul(a, b), (2, 4, 3), (3, 2))

    def test_batched_both(self):
        check_op(lambda a, b: T.matmul(a, b), (2, 3, 4, 3), (2, 3, 3, 2))


class TestElementwise:
    def test_leaky_relu_values(self):
        assert T.leaky_relu(Tensor(-1.0), 0.2).item() == pytest.approx(-0.2)
        assert T.leaky_relu(Tensor(3.0), 0.2).item() == 3.0

    def test_leaky_relu_negative_slope(self):
        x = Tensor(-5.0, requires_grad=True)
        T.backward(T.leaky_relu(x, 0.2))
        assert x.grad == pytest.approx(0.2)

    def test_dispatch(self):
        assert T.elementwise("leaky_relu", Tensor(-1.0), alpha=0.2).item() == pytest.approx(-0.2)
        assert T.elementwise("add", Tensor(1.0), Tensor(2.0)).item() == 3.0

    @pytest.mark.parametrize("op", [T.log, T.sqrt])
    def test_domain(self, op):
        with pytest.raises(DomainError):
            op(Tensor([-1.0]))

    def test_broadcast_restricted(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(3))
        assert (Tensor(np.ones((2, 3))) + Tensor(2.0)).shape == (2, 3)


# every registered op, finite differences at step 1e-4, 1e-4 relative
OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (3, 4)], False),
    "add_scalar": (lambda a, b: a + b, [(3, 4), ()], False),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)], False),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)], False),
    "mul_scalar": (lambda a, b: a * b, [(), (3, 4)], False),
    "div": (lambda a, b: a / b, [(3, 4), (3, 4)], True),
    "neg": (lambda a: -a, [(3, 4)], False),
    "pow": (lambda a: a ** 3, [(3, 4)], False),
    "exp": (T.exp, [(3, 4)], False),
    "log": (T.log, [(3, 4)], True),
    "sqrt": (T.sqrt, [(3, 4)], True),
    "leaky_relu": (lambda a: T.leaky_relu(a, 0.2), [(3, 4)], False),
    "tanh": (T.tanh, [(3, 4)], False),
    "clamp": (lambda a: T.clamp(a, -1.0, 1.0), [(3, 4)], False),
    "reshape": (lambda a: T.reshape(a, (4, 3)), [(3, 4)], False),
    "permute": (lambda a: T.permute(a, (2, 0, 1)), [(2, 3, 4)], False),
    "broadcast_to": (lambda a: T.broadcast_to(a, (5, 3, 4)), [(1, 4)], False),
    "sum_to": (lambda a: T.sum_to(a, (1, 4)), [(3, 4)], False),
    "getitem": (lambda a: a[:, 1:3], [(3, 4)], False),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(3, 2), (3, 4)], False),
    "sum_axis": (lambda a: T.tsum(a, axis=1), [(3, 4)], False),
    "mean": (lambda a: T.mean(a, axis=0, keepdims=True), [(3, 4)], False),
    "l2_norm": (lambda a: T.l2_norm(a, axis=1), [(3, 4)], False),
    "softmax": (lambda a: T.softmax(a, axis=-1), [(3, 4)], False),
    "log_softmax": (lambda a: T.log_softmax(a, axis=-1), [(3, 4)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_matches_finite_differences(name):
    build, shapes, positive = OPS[name]
    check_op(build, *shapes, positive=positive)


class TestReduce:
    def test_l2(self):
        assert T.reduce("l2_norm", Tensor([3.0, 4.0])).item() == 5.0

    def test_mean(self):
        assert T.reduce("mean", Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_l2_grad(self):
        v = Tensor([3.0, 4.0], requires_grad=True)
        T.backward(T.l2_norm(v))
        np.testing.assert_allclose(v.grad, [0.6, 0.8])

    def test_empty(self):
        with pytest.raises(DomainError):
            T.reduce("sum", Tensor(np.zeros(0)))

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.reduce("sum", Tensor(np.ones(3)), axis=1)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_stable(self):
        out = T.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-9)

    def test_values(self):
        # oracle: exp(x) / sum(exp(x)) evaluated directly
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(expected, [0.09003, 0.24473, 0.66524], atol=1e-5)
        np.testing.assert_allclose(T.softmax(Tensor(x)).data, expected, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_simplex(self, xs):
        out = T.softmax(Tensor(xs)).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-9


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        T.backward(x * x)
        assert x.grad == 6.0

    def test_linearity(self):
        rng = np.random.default_rng(1)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        v = rng.normal(size=(4, 1))
        T.backward(T.tsum(T.matmul(w, Tensor(v))))
        np.testing.assert_allclose(w.grad, np.outer(np.ones(3), v[:, 0]))

    def test_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(x * 2.0)

    def test_detached_never_accumulates(self):
        x = Tensor(np.ones(3), requires_grad=True)
        d = x.detach()
        T.backward(T.tsum(x * 2.0 + d))
        assert d.grad is None and not d.requires_grad

    def test_deep_mlp_matches_fd(self):
        rng = np.random.default_rng(2)
        ws = [rng.normal(scale=0.6, size=(4, 4)) for _ in range(10)]
        x = rng.normal(size=(3, 4))

        def f(params):
            h = Tensor(x)
            for w in params:
                h = T.leaky_relu(T.matmul(h, w), 0.2)
            return T.tsum(h * h)

        params = [Tensor(w, requires_grad=True) for w in ws]
        T.backward(f(params))
        for w, p in zip(ws, params):
            num = fd_grad(lambda: f([Tensor(a) for a in ws]).item(), w)
            assert rel_err(p.grad, num) < 1e-4

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(5, 5))
        grads = []
        for _ in range(2):
            p = Tensor(w, requires_grad=True)
            T.backward(T.tsum(T.softmax(T.matmul(p, p)) * T.exp(p)))
            grads.append(p.grad)
        assert np.array_equal(grads[0], grads[1])


class TestDoubleBackward:
    def test_linear_critic_penalty(self):
        w = Tensor([[3.0]], requires_grad=True)
        x = Tensor([[0.7]], requires_grad=True)
        g = T.grad_of_grad(T.tsum(T.matmul(x, w)), x)
        penalty = (T.l2_norm(g) - 1.0) ** 2
        T.backward(penalty)
        assert penalty.item() == pytest.approx(4.0)
        assert w.grad[0, 0] == pytest.approx(4.0)

    def test_half_squared_norm_hessian_identity(self):
        x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        g = T.grad_of_grad(0.5 * T.tsum(x * x), x)
        np.testing.assert_allclose(g.data, x.data)
        x.grad = None
        T.backward(T.tsum(g))
        np.testing.assert_allclose(x.grad, np.ones(3))

    def test_quadratic_form(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=(4, 4))
        a = m + m.T
        x = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        q = 0.5 * T.tsum(T.matmul(T.matmul(x, Tensor(a)), T.swap_last(x)))
        g = T.grad_of_grad(q, x)
        np.testing.assert_allclose(g.data, x.data @ a, atol=1e-12)

    def test_mlp_gradient_penalty_matches_fd(self):
        rng = np.random.default_rng(5)
        w1, b1 = rng.normal(size=(3, 6)), rng.normal(size=(1, 6))
        w2 = rng.normal(size=(6, 1))
        xhat = rng.normal(size=(5, 3))
        lam = 10.0

        def penalty(w1t, b1t, w2t):
            x = Tensor(xhat, requires_grad=True)
            h = T.leaky_relu(T.matmul(x, w1t) + T.broadcast_to(b1t, (5, 6)), 0.2)
            d = T.matmul(h, w2t)
            g = T.grad_of_grad(T.tsum(d), x)
            return lam * T.mean((T.l2_norm(g, axis=1) - 1.0) ** 2)

        params = [Tensor(a, requires_grad=True) for a in (w1, b1, w2)]
        T.backward(penalty(*params))
        for arr, p in zip((w1, b1, w2), params):
            num = fd_grad(lambda: penalty(*[Tensor(a) for a in (w1, b1, w2)]).item(), arr)
            # the bias only moves the LeakyReLU kink, so its penalty gradient is exactly 0
            analytic = p.grad if p.grad is not None else np.zeros_like(arr)
            assert np.max(np.abs(analytic - num)) <= 1e-3 * max(np.max(np.abs(num)), 1.0)

    def test_unsupported_op_named(self):
        x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        with pytest.raises(UnsupportedOpError, match="softmax"):
            T.grad_of_grad(T.tsum(T.softmax(x) * Tensor([[1.0, 2.0]])), x)
