import copy
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, override_settings

from facesculpt.exceptions import ConfigValidationError
from landmarks.alignment import align_corpus, align_to_average
from landmarks.io import landmark_files, read_landmarks, write_landmark_dir, write_landmarks
from pipeline.assets import (
    EXAGGERATION_MODES,
    exaggerate,
    generate_assets,
    landmark_corpora,
    template_landmarks,
    toy_face_mesh,
)
from pipeline.runner import Statistics, fit_statistics, int_seed, seed_streams
from pipeline.serializers import apply_overrides, load_config, validate_config
from pipeline.tasks import stylize_portrait
from translation.networks import TranslationModel
from translation.training import translation_fid

TINY_STATS = {"pca_components": 8, "clusters": 2, "kmeans_max_iter": 50, "average_face_passes": 3}


def touch_inputs(directory):
    """Empty stand-ins for every required path; validation only checks existence."""
    directory = Path(directory)
    for name in ("mesh.obj", "texture.png", "style.png", "exemplar.csv"):
        (directory / name).write_text("")
    for name in ("normal", "art"):
        (directory / name).mkdir()
    return {
        "mesh": "mesh.obj",
        "texture": "texture.png",
        "style_image": "style.png",
        "exemplar_landmarks": "exemplar.csv",
        "normal_dir": "normal",
        "art_dir": "art",
        "output_dir": "out",
    }


class ConfigTests(SimpleTestCase):
    def test_shipped_defaults_match_published_constants(self):
        config = load_config()
        train, deform, style, render = config["train"], config["deform"], config["style"], config["render"]
        shipped = {
            "pca_components": config["stats"]["pca_components"],
            "clusters": config["stats"]["clusters"],
            "lambdas": (
                train["lambda_recon_y"],
                train["lambda_recon_c"],
                train["lambda_kl"],
                train["lambda_recon_s"],
                train["lambda_adv"],
                train["lambda_class"],
            ),
            "learning_rates": (train["lr"], deform["lr"], style["lr"]),
            "batch_size": train["batch_size"],
            "alpha": deform["alpha"],
            "beta": style["beta"],
            "texture_iterations": style["iterations"],
            "view_ranges": (render["azimuth_range"], render["elevation_range"]),
        }
        self.assertEqual(
            shipped,
            {
                "pca_components": 32,
                "clusters": 25,
                "lambdas": (1.0, 0.5, 1.0, 1.0, 1.0, 1.0),
                "learning_rates": (0.0005, 0.01, 0.002),
                "batch_size": 68,
                "alpha": 1e7,
                "beta": 1.0,
                "texture_iterations": 600,
                "view_ranges": (30.0, 20.0),
            },
        )

    def test_validation_reports_every_violation(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = {
                "paths": {"mesh": "missing.obj", "texture": "missing.png", "output_dir": "out"},
                "stats": {"clusters": 0},
                "deform": {"lr": 0},
                "extractor": {"mode": "vgg"},
                "style": {"beta": -1.0},
                "translate": {"scale": 1.5},
            }
            with self.assertRaises(ConfigValidationError) as ctx:
                validate_config(data, base_dir=tmp)
        errors = ctx.exception.details
        self.assertEqual(ctx.exception.code, "invalid_config")
        for key in (
            "paths.mesh",
            "paths.texture",
            "paths.style_image",
            "paths.exemplar_landmarks",
            "stats.clusters",
            "deform.lr",
            "extractor.mode",
            "style.beta",
            "translate.scale",
        ):
            self.assertIn(key, errors)
        self.assertTrue(all(isinstance(message, str) for messages in errors.values() for message in messages))

    def test_training_source_is_required(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = touch_inputs(tmp)
            del paths["normal_dir"]
            with self.assertRaises(ConfigValidationError) as ctx:
                validate_config({"paths": paths}, base_dir=tmp)
        self.assertIn("paths.non_field_errors", ctx.exception.details)

    def test_external_extractor_needs_a_feature_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = touch_inputs(tmp)
            with self.assertRaises(ConfigValidationError) as ctx:
                validate_config({"paths": paths, "extractor": {"mode": "external"}}, base_dir=tmp)
        self.assertIn("extractor.path", ctx.exception.details)

    def test_omitted_sections_take_stage_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = validate_config({"paths": touch_inputs(tmp)}, base_dir=tmp)
            self.assertEqual(config["paths"]["mesh"], str(Path(tmp) / "mesh.obj"))
        self.assertEqual(config["deform"]["alpha"], 1e7)
        self.assertEqual(config["translate"]["scale"], 1.0)
        self.assertEqual(config["render"]["texture_size"], 256)
        self.assertIsNone(config["paths"]["stats_dir"])

    def test_texture_size_follows_settings(self):
        face_sculpt = copy.deepcopy(settings.FACE_SCULPT)
        face_sculpt["RENDER"]["TEXTURE_SIZE"] = 128
        with override_settings(FACE_SCULPT=face_sculpt):
            self.assertEqual(load_config()["render"]["texture_size"], 128)

    def test_flags_override_the_document(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp).resolve()
            document = {
                "paths": touch_inputs(tmp),
                "seed": 3,
                "translate": {"scale": 0.2},
                "style": {"beta": 0.5, "iterations": 7},
            }
            path = tmp / "config.json"
            path.write_text(json.dumps(document))
            config = load_config(path, seed=9, beta=2.0, out=tmp / "elsewhere")
            self.assertEqual(config["paths"]["output_dir"], str(tmp / "elsewhere"))
            self.assertEqual(config["paths"]["texture"], str(tmp / "texture.png"))
        self.assertEqual(config["seed"], 9)
        self.assertEqual(config["style"]["beta"], 2.0)
        self.assertEqual(config["style"]["iterations"], 7)
        self.assertEqual(config["translate"]["scale"], 0.2)

    def test_overrides_leave_the_document_untouched(self):
        document = {"style": {"beta": 0.5}}
        overridden = apply_overrides(document, beta=1.5, scale=0.0)
        self.assertEqual(document, {"style": {"beta": 0.5}})
        self.assertEqual(overridden["style"]["beta"], 1.5)
        self.assertEqual(overridden["translate"]["scale"], 0.0)

    def test_unreadable_config_is_reported(self):
        with tempfile.TemporaryDirectory() as tmp:
            broken = Path(tmp) / "config.json"
            broken.write_text("{not json")
            with self.assertRaises(ConfigValidationError) as ctx:
                load_config(broken)
            self.assertIn("config", ctx.exception.details)
            with self.assertRaises(ConfigValidationError):
                load_config(Path(tmp) / "missing.json")

    def test_seed_streams_are_distinct_and_reproducible(self):
        first, second = seed_streams(5), seed_streams(5)
        states = [first[name].generate_state(2).tolist() for name in ("stats", "train", "style")]
        self.assertEqual(states, [second[name].generate_state(2).tolist() for name in ("stats", "train", "style")])
        self.assertEqual(len({tuple(state) for state in states}), 3)


class AssetTests(SimpleTestCase):
    def test_toy_mesh_has_landmark_vertices_first(self):
        mesh = toy_face_mesh()
        self.assertTrue(900 <= mesh.n_vertices <= 1030)
        np.testing.assert_array_equal(mesh.landmark_ids, np.arange(68))
        np.testing.assert_allclose(mesh.vertices[:68, :2], template_landmarks().points * [1.0, -1.0])
        self.assertTrue(np.all((mesh.uvs >= 0.0) & (mesh.uvs <= 1.0)))
        self.assertEqual(np.unique(mesh.faces).size, mesh.n_vertices)

    def test_corpora_shapes_and_modes(self):
        normal, art, modes = landmark_corpora(5, 7, np.random.default_rng(0), image_size=64)
        self.assertEqual(len(normal), 5)
        self.assertEqual(len(art), 7)
        self.assertTrue(set(modes.tolist()) <= set(range(len(EXAGGERATION_MODES))))
        for face in normal + art:
            self.assertEqual(face.points.shape, (68, 2))

    def test_exaggeration_modes(self):
        points = template_landmarks().points
        eyes = exaggerate(points, 0, 1.0)
        self.assertGreater(np.ptp(eyes[36:42, 0]), np.ptp(points[36:42, 0]))
        mouth = exaggerate(points, 1, 1.0)
        self.assertGreater(np.ptp(mouth[48:60, 0]), np.ptp(points[48:60, 0]))
        np.testing.assert_allclose(exaggerate(points, 1, 0.0), points, atol=1e-15)
        with self.assertRaises(ValueError):
            exaggerate(points, 2, 1.0)

    def test_generated_pack_is_a_valid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = generate_assets(tmp, n_normal=12, n_art=12, image_size=32, texture_size=16)
            config = load_config(paths["config"])
            self.assertEqual(len(landmark_files(config["paths"]["normal_dir"])), 12)
            self.assertEqual(len(read_landmarks(paths["portrait_landmarks"]).points), 68)
        self.assertEqual(config["stats"]["clusters"], len(EXAGGERATION_MODES))
        self.assertEqual(config["render"]["image_size"], 32)
        self.assertEqual(config["render"]["texture_size"], 16)


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        self.normal, self.art, _ = landmark_corpora(40, 40, np.random.default_rng(3), image_size=64)
        write_landmark_dir(self.normal, self.tmp / "normal", prefix="normal")
        write_landmark_dir(self.art, self.tmp / "art", prefix="art")

    def call(self, *args, **options):
        stdout, stderr = StringIO(), StringIO()
        call_command(*args, stdout=stdout, stderr=stderr, **options)
        return stdout.getvalue()

    def failing_call(self, *args, **options):
        stderr = StringIO()
        with self.assertRaises(SystemExit) as ctx:
            call_command(*args, stdout=StringIO(), stderr=stderr, **options)
        self.assertEqual(ctx.exception.code, 2)
        return json.loads(stderr.getvalue())

    def pretrained(self):
        stats = fit_statistics(self.normal, self.art, TINY_STATS, seed=0)
        model = TranslationModel.build(seed=0, coeff_dim=8, style_dim=4, hidden=16, n_classes=2)
        return stats, stats.save(self.tmp / "stats"), model.save(self.tmp / "model")

    def test_evaluate_fid_of_identical_corpora_is_zero(self):
        output = self.call("evaluate_fid", str(self.tmp / "normal"), str(self.tmp / "normal"), components=8)
        self.assertEqual(output.strip(), "0.0")

    def test_evaluate_fid_separates_normal_from_art(self):
        output = self.call("evaluate_fid", str(self.tmp / "normal"), str(self.tmp / "art"), components=8)
        self.assertGreater(float(output), 0.0)

    def test_evaluate_fid_with_model_translates_the_first_corpus(self):
        stats, stats_dir, model_dir = self.pretrained()
        args = ("evaluate_fid", str(self.tmp / "normal"), str(self.tmp / "art"))
        output = self.call(*args, stats=str(stats_dir), model=str(model_dir), seed=5)
        expected = translation_fid(
            TranslationModel.load(model_dir),
            stats.pca,
            align_corpus(self.normal, stats.average),
            align_corpus(self.art, stats.average),
            int_seed(seed_streams(5)["stats"]),
        )
        self.assertAlmostEqual(float(output), max(expected, 0.0), places=5)
        self.assertEqual(self.call(*args, stats=str(stats_dir), model=str(model_dir), seed=5), output)

    def test_evaluate_fid_model_needs_stats(self):
        _, _, model_dir = self.pretrained()
        with self.assertRaises(CommandError):
            self.call("evaluate_fid", str(self.tmp / "normal"), str(self.tmp / "art"), model=str(model_dir))

    def test_translate_at_scale_zero_returns_aligned_input(self):
        stats, stats_dir, model_dir = self.pretrained()
        portrait = write_landmarks(self.normal[0], self.tmp / "portrait.csv")
        exemplar = write_landmarks(self.art[0], self.tmp / "exemplar.csv")
        self.call(
            "translate",
            str(portrait),
            str(exemplar),
            stats=str(stats_dir),
            model=str(model_dir),
            scale=0.0,
            out=str(self.tmp / "aligned.csv"),
            image_out=str(self.tmp / "image.csv"),
        )
        expected, _ = align_to_average(self.normal[0], stats.average)
        np.testing.assert_array_equal(read_landmarks(self.tmp / "aligned.csv").points, expected.points)
        np.testing.assert_allclose(read_landmarks(self.tmp / "image.csv").points, self.normal[0].points, atol=1e-8)

    def test_fit_stats_writes_a_loadable_bundle(self):
        report = json.loads(
            self.call(
                "fit_stats",
                str(self.tmp / "normal"),
                str(self.tmp / "art"),
                out=str(self.tmp / "stats"),
                components=8,
                clusters=2,
            )
        )
        stats = Statistics.load(self.tmp / "stats")
        self.assertEqual(stats.pca.n_components, 8)
        self.assertEqual(sum(report["cluster_sizes"]), 40)
        rms = np.sqrt(np.mean(np.sum(stats.average.points**2, axis=1)))
        self.assertAlmostEqual(rms, 1.0, places=12)

    def test_prepare_landmarks_aligns_every_corpus(self):
        self.call("prepare_landmarks", str(self.tmp / "normal"), str(self.tmp / "art"), out=str(self.tmp / "prep"))
        average = read_landmarks(self.tmp / "prep" / "average.csv")
        np.testing.assert_allclose(average.points.mean(axis=0), 0.0, atol=1e-12)
        self.assertEqual(len(landmark_files(self.tmp / "prep" / "aligned" / "art")), 40)
        first = read_landmarks(landmark_files(self.tmp / "prep" / "aligned" / "normal")[0])
        np.testing.assert_allclose(first.anchors(), average.anchors(), atol=1e-9)

    def test_invalid_stage_config_exits_with_a_report(self):
        config = self.tmp / "bad.json"
        config.write_text(json.dumps({"stats": {"clusters": 0, "pca_components": 0}}))
        report = self.failing_call(
            "fit_stats", str(self.tmp / "normal"), str(self.tmp / "art"), out=str(self.tmp / "s"), config=str(config)
        )
        self.assertEqual(report["error"], "invalid_config")
        self.assertEqual(set(report["details"]), {"stats.clusters", "stats.pca_components"})

    def test_domain_errors_exit_with_status_two(self):
        report = self.failing_call(
            "deform", str(self.tmp / "missing.obj"), str(self.tmp / "l.csv"), out=str(self.tmp / "m.obj")
        )
        self.assertEqual(report["error"], "obj_parse_error")

    def test_task_reports_invalid_documents(self):
        result = stylize_portrait.apply(args=[{"paths": {}}], kwargs={"base_dir": str(self.tmp)}).get()
        self.assertEqual(result["error"], "invalid_config")
        self.assertIn("paths.mesh", result["details"])


class PipelineSmokeTests(SimpleTestCase):
    """The whole chain on the generated asset pack at toy sizes."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        paths = generate_assets(self.tmp / "assets", n_normal=40, n_art=40, image_size=32, texture_size=16)
        config = json.loads(paths["config"].read_text())
        config["stats"].update(pca_components=8, clusters=2)
        config["train"].update(epochs=2, classifier_epochs=2, hidden_width=16, batch_size=16)
        config["deform"]["iterations"] = 20
        config["render"].update(image_size=32, contact_sheet_views=4)
        config["extractor"]["k_max"] = 64
        config["style"]["iterations"] = 3
        paths["config"].write_text(json.dumps(config))
        self.config = paths["config"]

    def run_pipeline(self, config, out):
        stdout = StringIO()
        call_command("pipeline", config=str(config), out=str(out), stdout=stdout)
        return json.loads(stdout.getvalue())

    def test_pipeline_writes_artifacts_and_reproduces_them(self):
        first = self.run_pipeline(self.config, self.tmp / "run1")
        second = self.run_pipeline(self.config, self.tmp / "run2")

        out = self.tmp / "run1"
        for name in ("mesh.obj", "texture.png", "contact_sheet.png", "landmarks.csv", "energy.csv", "timings.json"):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(len(list((out / "views").glob("*.png"))), 4)
        self.assertEqual(
            set(first["timings"]), {"statistics", "training", "landmark_translation", "deformation", "texture_transfer"}
        )
        self.assertLessEqual(first["deform_energy"]["final"], first["deform_energy"]["initial"])
        for name in ("mesh.obj", "texture.png", "landmarks.csv", "style_trace.csv", "contact_sheet.png"):
            self.assertEqual((out / name).read_bytes(), (self.tmp / "run2" / name).read_bytes(), name)
        self.assertEqual(first["style_loss"], second["style_loss"])
