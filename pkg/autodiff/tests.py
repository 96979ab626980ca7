import numpy as np
from django.test import SimpleTestCase

from autodiff import ops
from autodiff.checks import grad_check
from autodiff.params import ParamStore, adam_step, rmsprop_step
from autodiff.tensor import Graph, Tensor, backward
from facesculpt.exceptions import (
    MissingGradientError,
    NonScalarLossError,
    ShapeMismatchError,
)


def _away_from_zero(rng, shape, margin=0.2):
    x = rng.uniform(-1.0, 1.0, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


class PrimitiveTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_relu_value_and_mask(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        out = ops.relu(x)
        np.testing.assert_array_equal(out.value, [0.0, 2.0])
        ops.sum(out).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_cosine_similarity_of_vector_with_itself(self):
        v = self.rng.normal(size=5)
        self.assertAlmostEqual(ops.cosine_similarity(Tensor(v), Tensor(v)).item(), 1.0, places=12)

    def test_shape_mismatch_raises(self):
        with self.assertRaises(ShapeMismatchError):
            ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
        with self.assertRaises(ShapeMismatchError):
            ops.affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))

    def test_primitive_gradients_match_finite_differences(self):
        w = self.rng.normal(size=(4, 3))
        b = self.rng.normal(size=4)
        other = self.rng.normal(size=(5, 3))
        labels = np.array([0, 3, 1, 2, 3])
        cases = {
            "affine": lambda x: ops.sum(ops.affine(x, Tensor(w), Tensor(b))),
            "relu": lambda x: ops.sum(ops.relu(x)),
            "sigmoid": lambda x: ops.sum(ops.sigmoid(x)),
            "log_sigmoid": lambda x: ops.sum(ops.log_sigmoid(x)),
            "concat": lambda x: ops.sum(ops.square(ops.concat([x, Tensor(other)], axis=1))),
            "mean": lambda x: ops.mean(ops.square(x)),
            "l1": lambda x: ops.l1_distance(x, Tensor(other)),
            "sq_l2": lambda x: ops.sq_l2_distance(x, Tensor(other)),
            "cosine": lambda x: ops.sum(ops.cosine_similarity(x, Tensor(other))),
            "cross_entropy": lambda x: ops.softmax_cross_entropy(ops.affine(x, Tensor(w), Tensor(b)), labels),
            "cosine_cost": lambda x: ops.sum(ops.square(ops.cosine_cost(x, Tensor(other)))),
            "normalize_columns": lambda x: ops.sum(ops.square(ops.normalize_columns(ops.exp(x)))),
            "row_norms": lambda x: ops.sum(ops.row_norms(x)),
        }
        for _ in range(20):
            x = _away_from_zero(self.rng, (5, 3))
            for name, f in cases.items():
                with self.subTest(primitive=name):
                    self.assertLess(grad_check(f, x), 1e-6)


class BackwardTests(SimpleTestCase):
    def test_loss_equal_to_parameter(self):
        p = Tensor(np.array(3.0), requires_grad=True)
        backward(p)
        self.assertEqual(float(p.grad), 1.0)

    def test_half_squared_norm_gradient_is_identity(self):
        value = np.array([1.0, -2.0, 0.5])
        p = Tensor(value, requires_grad=True)
        ops.scale(ops.sum(ops.square(p)), 0.5).backward()
        np.testing.assert_allclose(p.grad, value)

    def test_non_scalar_loss_rejected(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(NonScalarLossError):
            backward(ops.square(p))

    def test_graph_visits_each_node_once(self):
        p = Tensor(np.ones(3), requires_grad=True)
        shared = ops.square(p)
        loss = ops.sum(ops.add(shared, shared))
        graph = Graph(loss)
        self.assertEqual(len({id(node) for node in graph.order}), len(graph))
        graph.run_backward()
        np.testing.assert_allclose(p.grad, 4.0 * np.ones(3))

    def test_three_layer_mlp_gradient(self):
        rng = np.random.default_rng(3)
        layers = [(rng.normal(size=(6, 4)), rng.normal(size=6)), (rng.normal(size=(5, 6)), rng.normal(size=5))]
        head = rng.normal(size=(1, 5))
        target = rng.normal(size=(3, 1))

        def loss(x):
            h = x
            for w, b in layers:
                h = ops.sigmoid(ops.affine(h, Tensor(w), Tensor(b)))
            out = ops.affine(h, Tensor(head), Tensor(np.zeros(1)))
            return ops.sq_l2_distance(out, Tensor(target))

        self.assertLess(grad_check(loss, rng.normal(size=(3, 4))), 1e-6)

    def test_gradient_linearity(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 3))
        other = Tensor(rng.normal(size=(4, 3)))

        def grad_of(fn):
            leaf = Tensor(x.copy(), requires_grad=True)
            fn(leaf).backward()
            return leaf.grad

        f = lambda t: ops.sum(ops.sigmoid(t))  # noqa: E731
        g = lambda t: ops.sq_l2_distance(t, other)  # noqa: E731
        combined = grad_of(lambda t: ops.add(ops.scale(f(t), 2.5), ops.scale(g(t), -0.75)))
        np.testing.assert_allclose(combined, 2.5 * grad_of(f) - 0.75 * grad_of(g), atol=1e-10)

    def test_repeat_runs_are_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(5)
            p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
            ops.mean(ops.relu(ops.matmul(p, p))).backward()
            return p.grad

        self.assertTrue(np.array_equal(run(), run()))


class GradCheckTests(SimpleTestCase):
    def test_constant_function(self):
        self.assertEqual(grad_check(lambda x: Tensor(np.array(4.0)), np.ones(3)), 0.0)

    def test_linear_function(self):
        coeffs = Tensor(np.array([1.0, -2.0, 3.0]))
        self.assertLess(grad_check(lambda x: ops.sum(ops.mul(x, coeffs)), np.ones(3)), 1e-9)

    def test_reports_the_worst_element(self):
        # relu has zero slope at the origin; central differences see 0.5.
        coeffs = Tensor(np.array([100.0] * 9 + [1.0]))
        x = np.array([1.0] * 9 + [0.0])
        error = grad_check(lambda t: ops.add(ops.sum(ops.mul(t, coeffs)), ops.sum(ops.relu(t))), x)
        self.assertAlmostEqual(error, 0.5 / 2.5, delta=1e-6)


class OptimizerTests(SimpleTestCase):
    def _store(self, value):
        store = ParamStore()
        store.add("x", np.asarray(value, dtype=float))
        return store

    def test_adam_zero_gradient_keeps_parameters(self):
        store = self._store([1.0, 2.0])
        store["x"].grad = np.zeros(2)
        adam_step(store, lr=0.1)
        np.testing.assert_array_equal(store["x"].value, [1.0, 2.0])
        self.assertEqual(store.step, 1)

    def test_adam_first_step_moves_by_learning_rate(self):
        store = self._store([0.0, 0.0, 0.0])
        store["x"].grad = np.array([0.3, -5.0, 1e-3])
        adam_step(store, lr=0.01)
        np.testing.assert_allclose(store["x"].value, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_adam_missing_gradient(self):
        with self.assertRaises(MissingGradientError):
            adam_step(self._store([1.0]), lr=0.1)

    def test_adam_converges_on_quadratic_bowl(self):
        target = np.array([0.5, -0.25, 0.1])
        store = self._store([0.0, 0.0, 0.0])
        for _ in range(200):
            store.zero_grad()
            ops.sum(ops.square(ops.sub(store["x"], Tensor(target)))).backward()
            adam_step(store, lr=0.05)
        np.testing.assert_allclose(store["x"].value, target, atol=1e-3)

    def test_rmsprop_zero_gradient_keeps_parameters(self):
        store = self._store([1.0])
        store["x"].grad = np.zeros(1)
        rmsprop_step(store, lr=0.1)
        np.testing.assert_array_equal(store["x"].value, [1.0])

    def test_rmsprop_saturates_to_learning_rate(self):
        store = self._store([0.0, 0.0])
        previous = store["x"].value.copy()
        for _ in range(2000):
            store["x"].grad = np.array([2.0, -0.5])
            rmsprop_step(store, lr=1e-3)
            step = store["x"].value - previous
            previous = store["x"].value.copy()
        np.testing.assert_allclose(step, [-1e-3, 1e-3], rtol=1e-3)

    def test_rmsprop_converges_on_quadratic_bowl(self):
        target = np.array([0.3, -0.2])
        store = self._store([0.0, 0.0])
        for i in range(500):
            store.zero_grad()
            ops.sum(ops.square(ops.sub(store["x"], Tensor(target)))).backward()
            rmsprop_step(store, lr=2e-3 if i < 400 else 1e-4)
        np.testing.assert_allclose(store["x"].value, target, atol=1e-3)

    def test_checkpoint_round_trip(self):
        import tempfile
        from pathlib import Path

        store = self._store([1.0, 2.0])
        store["x"].grad = np.array([0.5, -0.5])
        adam_step(store, lr=0.1)
        with tempfile.TemporaryDirectory() as tmp:
            store.save(Path(tmp) / "ckpt")
            loaded, manifest = ParamStore.load(Path(tmp) / "ckpt")
        np.testing.assert_array_equal(loaded["x"].value, store["x"].value)
        np.testing.assert_array_equal(loaded.state["x"]["adam_m"], store.state["x"]["adam_m"])
        self.assertEqual(loaded.step, 1)
        self.assertEqual(manifest["hyper"]["adam"]["lr"], 0.1)
