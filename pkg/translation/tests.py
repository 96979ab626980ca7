import tempfile

import numpy as np
import pytest
from django.test import SimpleTestCase

from autodiff.checks import grad_check
from facesculpt.exceptions import FaceSculptError, InsufficientSamplesError
from landmarks.models import ClusterModel, LandmarkSet
from landmarks.statistics import compute_fid, fit_kmeans, fit_pca
from translation import losses
from translation.networks import LAYER_COUNTS, TranslationModel
from translation.training import (
    TrainConfig,
    train_autoencoder,
    train_classifier,
    train_translation,
    translate,
    translate_coeffs,
    translation_fid,
)

COEFF_DIM = 4


def small_model(seed=0, coeff_dim=COEFF_DIM, hidden=2 * COEFF_DIM, n_classes=3):
    return TranslationModel.build(seed=seed, coeff_dim=coeff_dim, style_dim=2, hidden=hidden, n_classes=n_classes)


def set_identity(model, name, gain=1.0, coordinate=None):
    """Make network ``name`` pass its first ``coeff_dim`` inputs through ReLU pairs unchanged."""
    net = model.networks[name]
    store = model.store
    d = model.coeff_dim
    for i in range(net.n_layers):
        fan_out, fan_in = store[f"{name}.{i}.weight"].shape
        weight = np.zeros((fan_out, fan_in))
        if i == 0:
            weight[:d, :d] = np.eye(d)
            weight[d : 2 * d, :d] = -np.eye(d)
        elif i < net.n_layers - 1:
            weight[:] = np.eye(fan_out)
        else:
            rows = min(fan_out, d)
            weight[:rows, :rows] = np.eye(rows)
            weight[:rows, d : d + rows] = -np.eye(rows)
            if coordinate is not None:
                weight[:] = 0.0
                weight[0, coordinate] = 1.0
                weight[0, d + coordinate] = -1.0
        store[f"{name}.{i}.weight"].value = gain * weight if i == net.n_layers - 1 else weight
        store[f"{name}.{i}.bias"].value = np.zeros(fan_out)


def numpy_forward(model, name, x):
    net = model.networks[name]
    h = np.asarray(x, dtype=float)
    for i in range(net.n_layers):
        h = h @ model.store[f"{name}.{i}.weight"].value.T + model.store[f"{name}.{i}.bias"].value
        if i < net.n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def with_param(model, name, fn):
    def evaluate(tensor):
        saved = model.store.params[name]
        model.store.params[name] = tensor
        try:
            return fn()
        finally:
            model.store.params[name] = saved

    return evaluate


class ArchitectureTests(SimpleTestCase):
    def test_layer_counts_and_code_sizes(self):
        model = TranslationModel.build(seed=0, hidden=16)
        for name, layers in LAYER_COUNTS.items():
            self.assertEqual(model.networks[name].n_layers, layers)
        self.assertEqual(model.networks["E_Y_S"].n_layers, 16)
        self.assertEqual(model.networks["E_X"].dims[-1], model.networks["E_Y_C"].dims[-1])
        self.assertEqual(model.networks["G_Y"].dims[0], 40)
        self.assertEqual(model.networks["E_Y_S"].dims[-1], 16)
        self.assertEqual(model.networks["CL"].dims[-1], 25)
        self.assertEqual(model.networks["D_Y"].dims[-1], 1)
        self.assertEqual(model.hidden, 16)

    def test_save_and_load(self):
        model = small_model()
        with tempfile.TemporaryDirectory() as tmp:
            model.save(tmp)
            loaded = TranslationModel.load(tmp)
        x = np.random.default_rng(0).normal(size=(5, COEFF_DIM))
        np.testing.assert_array_equal(loaded.encode_x(x).value, model.encode_x(x).value)
        self.assertEqual(loaded.architecture(), model.architecture())


class ReconstructionLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.batch = self.rng.normal(size=(6, COEFF_DIM))

    def test_recon_x_identity(self):
        model = small_model()
        set_identity(model, "E_X")
        set_identity(model, "G_X")
        self.assertAlmostEqual(losses.loss_recon_x(model, self.batch).item(), 0.0, places=12)

    def test_recon_x_constant_offset(self):
        model = small_model()
        set_identity(model, "E_X")
        set_identity(model, "G_X")
        model.store["G_X.7.bias"].value = np.full(COEFF_DIM, -0.3)
        self.assertAlmostEqual(losses.loss_recon_x(model, self.batch).item(), 0.3, places=12)

    def test_recon_x_matches_numpy_forward(self):
        model = small_model(seed=5)
        expected = np.mean(np.abs(numpy_forward(model, "G_X", numpy_forward(model, "E_X", self.batch)) - self.batch))
        self.assertAlmostEqual(losses.loss_recon_x(model, self.batch).item(), expected, delta=1e-10)

    def test_recon_y_identity_and_offset(self):
        model = small_model()
        set_identity(model, "E_Y_C")
        set_identity(model, "G_Y")
        self.assertAlmostEqual(losses.loss_recon_y(model, self.batch).item(), 0.0, places=12)
        model.store["G_Y.7.bias"].value = np.full(COEFF_DIM, 0.25)
        self.assertAlmostEqual(losses.loss_recon_y(model, self.batch).item(), 0.25, places=12)

    def test_recon_y_matches_numpy_forward(self):
        model = small_model(seed=6)
        style = numpy_forward(model, "E_Y_S", self.batch)[:, :2]
        content = numpy_forward(model, "E_Y_C", self.batch)
        out = numpy_forward(model, "G_Y", np.hstack([content, style]))
        self.assertAlmostEqual(
            losses.loss_recon_y(model, self.batch).item(), np.mean(np.abs(out - self.batch)), delta=1e-10
        )


class AdversarialLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.content = self.rng.normal(size=(5, COEFF_DIM))
        self.style = self.rng.normal(size=(5, 2))
        self.real = self.rng.normal(size=(5, COEFF_DIM))

    def test_undecided_discriminator(self):
        model = small_model()
        model.store["D_Y.3.weight"].value = np.zeros_like(model.store["D_Y.3.weight"].value)
        generator, discriminator = losses.loss_adv(model, self.content, self.style, self.real)
        self.assertAlmostEqual(generator.item(), np.log(2.0), places=6)
        self.assertAlmostEqual(discriminator.item(), 2.0 * np.log(2.0), places=6)

    def test_confident_discriminator(self):
        model = small_model()
        set_identity(model, "D_Y", gain=1000.0, coordinate=0)
        real = np.abs(self.real) + 1.0
        fake = -np.abs(self.real) - 1.0
        self.assertLess(losses.discriminator_loss(model, real, fake).item(), 1e-12)

    def test_generator_gradient(self):
        model = small_model(seed=3)
        name = "G_Y.7.weight"
        f = with_param(model, name, lambda: losses.loss_adv(model, self.content, self.style, self.real)[0])
        self.assertLess(grad_check(f, model.store[name].value), 1e-5)


class ClassAndCodeLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.generated = self.rng.normal(size=(6, COEFF_DIM))

    def test_class_loss_confident(self):
        model = small_model()
        model.store["CL.3.weight"].value = np.zeros_like(model.store["CL.3.weight"].value)
        model.store["CL.3.bias"].value = np.array([0.0, 80.0, 0.0])
        self.assertLess(losses.loss_class(model, self.generated, np.ones(6, dtype=int)).item(), 1e-12)

    def test_class_loss_uniform(self):
        model = TranslationModel.build(seed=0, hidden=8)
        model.store["CL.3.weight"].value = np.zeros_like(model.store["CL.3.weight"].value)
        batch = self.rng.normal(size=(4, 32))
        self.assertAlmostEqual(losses.loss_class(model, batch, [0, 5, 24, 3]).item(), np.log(25.0), places=10)

    def test_class_loss_matches_direct_cross_entropy(self):
        model = small_model(seed=4)
        labels = np.array([0, 1, 2, 1, 0, 2])
        logits = numpy_forward(model, "CL", self.generated)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        expected = -np.mean(log_probs[np.arange(6), labels])
        self.assertAlmostEqual(losses.loss_class(model, self.generated, labels).item(), expected, delta=1e-10)

    def test_recon_c(self):
        model = small_model()
        set_identity(model, "E_Y_C")
        self.assertAlmostEqual(losses.loss_recon_c(model, self.generated, self.generated).item(), 0.0, places=12)
        offset = np.array([0.1, -0.2, 0.3, 0.0])
        self.assertAlmostEqual(
            losses.loss_recon_c(model, self.generated, self.generated - offset).item(),
            np.sum(offset**2),
            places=12,
        )
        model = small_model(seed=8)
        codes = self.rng.normal(size=(6, COEFF_DIM))
        expected = np.mean(np.sum((numpy_forward(model, "E_Y_C", self.generated) - codes) ** 2, axis=1))
        self.assertAlmostEqual(losses.loss_recon_c(model, self.generated, codes).item(), expected, delta=1e-10)

    def test_recon_s(self):
        model = small_model()
        model.store["E_Y_S.15.weight"].value = np.zeros_like(model.store["E_Y_S.15.weight"].value)
        model.store["E_Y_S.15.bias"].value = np.array([0.5, -1.0, 0.0, 0.0])
        target = np.tile([0.5, -1.0], (6, 1))
        self.assertAlmostEqual(losses.loss_recon_s(model, self.generated, target).item(), 0.0, places=12)
        shifted = target - np.array([0.3, 0.4])
        self.assertAlmostEqual(losses.loss_recon_s(model, self.generated, shifted).item(), 0.25, places=12)
        model = small_model(seed=9)
        expected = np.mean(np.sum((numpy_forward(model, "E_Y_S", self.generated)[:, :2] - target) ** 2, axis=1))
        self.assertAlmostEqual(losses.loss_recon_s(model, self.generated, target).item(), expected, delta=1e-10)

    def test_kl(self):
        zeros = np.zeros((3, 2))
        self.assertEqual(losses.loss_kl(zeros, zeros).item(), 0.0)
        m = np.array([[0.3, -1.2]])
        self.assertAlmostEqual(losses.loss_kl(m, np.zeros((1, 2))).item(), 0.5 * np.sum(m**2), places=12)
        mean = self.rng.normal(size=(5, 2))
        log_var = self.rng.normal(size=(5, 2))
        expected = 0.5 * np.sum(mean**2 + np.exp(log_var) - log_var - 1.0) / 5
        self.assertAlmostEqual(losses.loss_kl(mean, log_var).item(), expected, delta=1e-10)


class ObjectiveTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.model = small_model(seed=11)
        self.batch_x = self.rng.normal(size=(5, COEFF_DIM))
        self.batch_y = self.rng.normal(size=(5, COEFF_DIM))
        self.labels = np.array([0, 1, 2, 0, 1])
        self.noise = self.rng.normal(size=(5, 2))
        self.cfg = TrainConfig(lambda_recon_y=1.3, lambda_recon_c=0.5, lambda_kl=0.7, lambda_adv=2.0)

    def test_total_is_weighted_sum_of_terms(self):
        total, terms, generated = losses.translation_objective(
            self.model, self.batch_x, self.batch_y, self.labels, self.noise, self.cfg
        )
        expected = sum(getattr(self.cfg, losses.TERM_WEIGHTS[name]) * t.item() for name, t in terms.items())
        self.assertAlmostEqual(total.item(), expected, delta=1e-10)
        self.assertAlmostEqual(
            terms["recon_y"].item(), losses.loss_recon_y(self.model, self.batch_y, self.noise).item(), delta=1e-12
        )
        self.assertAlmostEqual(
            terms["class"].item(), losses.loss_class(self.model, generated, self.labels).item(), delta=1e-12
        )

    def test_every_term_passes_gradient_check(self):
        checked = {
            "recon_y": "E_Y_C.0.weight",
            "recon_c": "G_Y.7.weight",
            "kl": "E_Y_S.15.bias",
            "recon_s": "G_Y.0.bias",
            "adv": "G_Y.7.bias",
            "class": "G_Y.7.bias",
        }
        for term, name in checked.items():
            with self.subTest(term=term):
                f = with_param(
                    self.model,
                    name,
                    lambda term=term: losses.translation_objective(
                        self.model, self.batch_x, self.batch_y, self.labels, self.noise, self.cfg
                    )[1][term],
                )
                self.assertLess(grad_check(f, self.model.store[name].value), 1e-5)


def toy_corpus(rng, n, dim=COEFF_DIM):
    basis = rng.normal(size=(2, dim))
    normal = rng.normal(size=(n, 2)) @ basis * 0.5
    modes = np.where(rng.random(n) < 0.5, 1.5, -1.5)
    art = rng.normal(size=(n, 2)) @ basis * 0.5
    art[:, 0] += modes
    return normal, art


class TrainingTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.normal, self.art = toy_corpus(self.rng, 80)

    def test_zero_epochs_keeps_initialisation(self):
        model = small_model(seed=2)
        before = model.store.values()
        train_autoencoder(model, self.normal, TrainConfig(epochs=0))
        for name, value in before.items():
            np.testing.assert_array_equal(model.store[name].value, value)
        self.assertIn("E_X", model.frozen)

    def test_autoencoder_is_deterministic(self):
        first, second = small_model(seed=2), small_model(seed=2)
        cfg = TrainConfig(epochs=2, batch_size=16, seed=3)
        train_autoencoder(first, self.normal, cfg)
        train_autoencoder(second, self.normal, cfg)
        for name in first.store.names():
            self.assertTrue(np.array_equal(first.store[name].value, second.store[name].value))

    def test_dropped_tail_is_logged(self):
        with self.assertLogs("translation.training", level="WARNING") as logs:
            train_autoencoder(small_model(), self.normal, TrainConfig(epochs=1, batch_size=30))
        self.assertEqual(len(logs.output), 1)
        self.assertIn("stage=autoencoder samples=80 batch_size=30 dropped_per_epoch=20", logs.output[0])

    def test_empty_dataset(self):
        with self.assertRaises(InsufficientSamplesError):
            train_autoencoder(small_model(), np.zeros((0, COEFF_DIM)), TrainConfig(epochs=1))

    def test_translation_requires_frozen_autoencoder(self):
        model = small_model()
        cluster = ClusterModel(np.array([[1.5, 0, 0, 0], [-1.5, 0, 0, 0], [0, 5.0, 0, 0]]))
        with self.assertRaises(FaceSculptError):
            train_translation(model, self.normal, self.art, cluster, TrainConfig(epochs=1))

    def test_stage_two_leaves_frozen_networks_untouched(self):
        model = small_model(seed=7)
        cfg = TrainConfig(epochs=1, classifier_epochs=1, batch_size=16, seed=1)
        train_autoencoder(model, self.normal, cfg)
        cluster = fit_kmeans(self.art, k=3, seed=0)
        train_classifier(model, self.art, cluster.assign_many(self.art), cfg)
        frozen = model.store.values(model.param_names("E_X", "G_X", "CL"))
        generator = model.store.values(model.param_names("G_Y"))
        history = train_translation(model, self.normal, self.art, cluster, TrainConfig(epochs=2, batch_size=16))
        for name, value in frozen.items():
            self.assertTrue(np.array_equal(model.store[name].value, value), name)
        self.assertFalse(all(np.array_equal(model.store[n].value, v) for n, v in generator.items()))
        self.assertEqual(len(history), 2)
        self.assertEqual(
            set(history[0]), {"epoch", "recon_y", "recon_c", "kl", "recon_s", "adv", "class", "total", "disc"}
        )

    @pytest.mark.slow
    def test_autoencoder_reduces_reconstruction_error(self):
        normal, _ = toy_corpus(self.rng, 500)
        model = TranslationModel.build(seed=0, coeff_dim=COEFF_DIM, style_dim=2, hidden=32, n_classes=2)
        history = train_autoencoder(model, normal, TrainConfig(epochs=60, seed=0))
        self.assertLess(history[-1]["recon_x"], 0.5 * history[0]["recon_x"])

    @pytest.mark.slow
    def test_classifier_agrees_with_exemplar_style_on_held_out_pairs(self):
        normal, art = toy_corpus(self.rng, 600)
        cluster = fit_kmeans(art[:400], k=2, seed=0)
        model = TranslationModel.build(seed=0, coeff_dim=COEFF_DIM, style_dim=2, hidden=32, n_classes=2)
        cfg = TrainConfig(lr=0.001, batch_size=50, epochs=150, classifier_epochs=80, seed=0)
        train_autoencoder(model, normal[:400], cfg)
        train_classifier(model, art[:400], cluster.assign_many(art[:400]), cfg)
        train_translation(model, normal[:400], art[:400], cluster, cfg)
        translated = translate_coeffs(model, normal[400:], art[400:])
        predicted = np.argmax(model.classify(translated).value, axis=1)
        agreement = np.mean(predicted == cluster.assign_many(art[400:]))
        self.assertGreaterEqual(agreement, 0.9)

    @pytest.mark.slow
    def test_reconstruction_falls_without_adversarial_and_class_terms(self):
        normal, art = toy_corpus(self.rng, 400)
        cluster = fit_kmeans(art, k=2, seed=0)
        model = TranslationModel.build(seed=0, coeff_dim=COEFF_DIM, style_dim=2, hidden=32, n_classes=2)
        cfg = TrainConfig(lambda_adv=0.0, lambda_class=0.0, lr=0.001, batch_size=50, epochs=60, seed=0)
        train_autoencoder(model, normal, TrainConfig(epochs=20, batch_size=50, seed=0))
        train_classifier(model, art, cluster.assign_many(art), TrainConfig(classifier_epochs=1, batch_size=50))
        history = train_translation(model, normal, art, cluster, cfg)
        totals = [np.mean([row["total"] for row in history[i : i + 10]]) for i in range(0, 60, 10)]
        recon = [np.mean([row["recon_y"] for row in history[i : i + 10]]) for i in range(0, 60, 10)]
        for earlier, later in zip(totals, totals[1:]):
            self.assertLessEqual(later, earlier * 1.01)
        self.assertLess(recon[-1], recon[0])


class TranslateTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(5)
        samples = [LandmarkSet(rng.normal(size=(68, 2)) * 0.1 + rng.normal(size=(68, 2))) for _ in range(40)]
        self.pca = fit_pca(samples)
        self.model = TranslationModel.build(seed=1, hidden=16, n_classes=3)
        self.l_x, self.l_y = samples[0], samples[1]

    def test_scale_zero_returns_input(self):
        out = translate(self.model, self.pca, self.l_x, self.l_y, scale=0.0)
        np.testing.assert_array_equal(out.points, self.l_x.points)

    def test_scale_interpolates(self):
        full = translate(self.model, self.pca, self.l_x, self.l_y, scale=1.0)
        coeffs = self.model.decode_y(
            self.model.encode_x(self.pca.project(self.l_x)[None]),
            self.model.encode_style_y(self.pca.project(self.l_y)[None])[0],
        ).value[0]
        np.testing.assert_allclose(full.points, self.pca.reconstruct(coeffs).points, atol=1e-10)
        half = translate(self.model, self.pca, self.l_x, self.l_y, scale=0.3)
        low = np.minimum(self.l_x.points, full.points) - 1e-12
        high = np.maximum(self.l_x.points, full.points) + 1e-12
        self.assertTrue(np.all((half.points >= low) & (half.points <= high)))

    def test_inference_is_deterministic(self):
        first = translate(self.model, self.pca, self.l_x, self.l_y)
        second = translate(self.model, self.pca, self.l_x, self.l_y)
        np.testing.assert_array_equal(first.points, second.points)

    def test_scale_out_of_range(self):
        with self.assertRaises(FaceSculptError):
            translate(self.model, self.pca, self.l_x, self.l_y, scale=1.5)


class TranslationFidTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        samples = [LandmarkSet(rng.normal(size=(68, 2)) * 0.1 + rng.normal(size=(68, 2))) for _ in range(40)]
        self.pca = fit_pca(samples, n_components=COEFF_DIM)
        self.normal, self.art = samples[:20], samples[20:]
        self.model = small_model(seed=3)

    def test_matches_fid_of_translations_with_drawn_exemplars(self):
        fid = translation_fid(self.model, self.pca, self.normal, self.art, seed=9)
        art = self.pca.project_many(self.art)
        exemplars = art[np.random.default_rng(9).integers(art.shape[0], size=len(self.normal))]
        translated = translate_coeffs(self.model, self.pca.project_many(self.normal), exemplars)
        self.assertAlmostEqual(fid, compute_fid(translated, art), places=10)
        self.assertTrue(np.isfinite(fid))

    def test_fixed_seed_is_reproducible(self):
        first = translation_fid(self.model, self.pca, self.normal, self.art, seed=2)
        second = translation_fid(self.model, self.pca, self.normal, self.art, seed=2)
        self.assertEqual(first, second)
