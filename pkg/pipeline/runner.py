"""Stage orchestration for the command line and the Celery worker.

Every stage takes validated config sections (see :mod:`pipeline.serializers`)
and returns plain objects; :func:`run_pipeline` chains them and writes the
artifacts.
"""

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deformation.solver import DeformConfig, run_deformation
from facesculpt.exceptions import FaceSculptError
from landmarks.alignment import align_corpus, align_to_average, average_face, normalize_landmarks
from landmarks.io import read_landmark_dir, read_landmarks, write_landmarks
from landmarks.models import ClusterModel, LandmarkSet, PcaModel
from landmarks.statistics import fit_kmeans, fit_pca
from meshes.models import Projection
from meshes.obj import load_obj, save_obj
from meshes.projection import project_points
from rendering.images import read_image, write_image
from rendering.views import contact_sheet, render_views, view_grid
from stylization.features import ExtractorSpec
from stylization.optimizer import StyleConfig, optimize_texture
from translation.networks import TranslationModel
from translation.training import TrainConfig, train_autoencoder, train_classifier, train_translation, translate

logger = logging.getLogger(__name__)

STREAMS = ("stats", "train", "style")


def seed_streams(seed):
    """Independent child seed sequences for every stochastic stage."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return dict(zip(STREAMS, children))


def int_seed(sequence):
    return int(sequence.generate_state(1)[0])


class Timings(dict):
    """Wall-clock seconds per stage, in the order the stages ran."""

    @contextmanager
    def stage(self, name):
        started = time.perf_counter()
        try:
            yield
        finally:
            self[name] = time.perf_counter() - started
            logger.info("stage_done stage=%s seconds=%.3f", name, self[name])

    def save(self, path):
        Path(path).write_text(json.dumps(self, indent=2))
        return path


# Stage configs from validated sections


def train_config(section, seed):
    return TrainConfig(
        lambda_recon_y=section["lambda_recon_y"],
        lambda_recon_c=section["lambda_recon_c"],
        lambda_kl=section["lambda_kl"],
        lambda_recon_s=section["lambda_recon_s"],
        lambda_adv=section["lambda_adv"],
        lambda_class=section["lambda_class"],
        lr=section["lr"],
        batch_size=section["batch_size"],
        epochs=section["epochs"],
        classifier_epochs=section["classifier_epochs"],
        seed=seed,
    )


def deform_config(section):
    return DeformConfig(
        alpha=section["alpha"],
        lr=section["lr"],
        iterations=section["iterations"],
        grad_tol=section["grad_tol"],
        divergence_patience=section["divergence_patience"],
        plateau_patience=section["plateau_patience"],
        lr_decay=section["lr_decay"],
        min_lr=section["min_lr"],
    )


def extractor_spec(section, seed=0):
    return ExtractorSpec(
        mode=section["mode"], levels=section["levels"], k_max=section["k_max"], seed=seed, path=section.get("path")
    )


def style_config(section, render, seed):
    return StyleConfig(
        mode=section["mode"],
        beta=section["beta"],
        iterations=section["iterations"],
        lr=section["lr"],
        decay=section["rmsprop_decay"],
        seed=seed,
        image_size=render["image_size"],
        background=render["background"],
        azimuth_range=render["azimuth_range"],
        elevation_range=render["elevation_range"],
    )


# Landmark statistics


@dataclass
class Statistics:
    """The normalized average face, the PCA model and the style clusters."""

    average: LandmarkSet
    pca: PcaModel
    clusters: ClusterModel

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_landmarks(self.average, directory / "average.csv")
        self.pca.save(directory / "pca")
        self.clusters.save(directory / "clusters")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        return cls(
            read_landmarks(directory / "average.csv"),
            PcaModel.load(directory / "pca"),
            ClusterModel.load(directory / "clusters"),
        )

    def coefficients(self, samples):
        return self.pca.project_many(align_corpus(samples, self.average))


def fit_average(samples, passes=3):
    return normalize_landmarks(average_face(samples, passes=passes))


def fit_statistics(normal, art, section, seed=0):
    """Average face from the normal corpus, PCA over both aligned corpora, clusters of the art faces."""
    average = fit_average(normal, section["average_face_passes"])
    aligned_normal = align_corpus(normal, average)
    aligned_art = align_corpus(art, average)
    pca = fit_pca(aligned_normal + aligned_art, section["pca_components"])
    clusters = fit_kmeans(
        pca.project_many(aligned_art), k=section["clusters"], seed=seed, max_iter=section["kmeans_max_iter"]
    )
    return Statistics(average, pca, clusters)


def train_model(normal, art, stats, section, seed=0):
    """Autoencoder, classifier and translation branch, trained in that order."""
    cfg = train_config(section, seed)
    coeffs_x = stats.coefficients(normal)
    coeffs_y = stats.coefficients(art)
    model = TranslationModel.build(
        seed=seed,
        coeff_dim=stats.pca.n_components,
        style_dim=section["style_dim"],
        hidden=section["hidden_width"],
        n_classes=stats.clusters.k,
        dtype=section["dtype"],
    )
    history = {"autoencoder": train_autoencoder(model, coeffs_x, cfg)}
    history["classifier_accuracy"] = train_classifier(model, coeffs_y, stats.clusters.assign_many(coeffs_y), cfg)
    history["translation"] = train_translation(model, coeffs_x, coeffs_y, stats.clusters, cfg)
    return model, history


def translate_landmarks(model, stats, l_x, l_y, scale=1.0):
    """Translated landmarks in the aligned frame and mapped back onto ``l_x``'s image frame."""
    aligned_x, transform = align_to_average(l_x, stats.average)
    aligned_y, _ = align_to_average(l_y, stats.average)
    aligned_z = translate(model, stats.pca, aligned_x, aligned_y, scale)
    image_z = LandmarkSet(transform.inverse().apply(aligned_z.points))
    return aligned_z, image_z


# The whole chain


def _portrait_landmarks(paths, mesh, proj):
    if paths.get("portrait_landmarks"):
        return read_landmarks(paths["portrait_landmarks"])
    xy, _ = project_points(mesh.vertices[mesh.landmark_ids], proj)
    return LandmarkSet(xy)


def load_projection(path, mesh, image_size):
    """The camera stored at ``path``, or an orthographic one framing ``mesh``."""
    if path:
        return Projection.load(path)
    return Projection.orthographic(0.4 * image_size, offset=(image_size / 2.0,) * 2, image_size=image_size).centered_on(
        mesh
    )


def _statistics_and_model(config, streams, timings):
    paths = config["paths"]
    if paths.get("stats_dir") and paths.get("model_dir"):
        return Statistics.load(paths["stats_dir"]), TranslationModel.load(paths["model_dir"])
    normal = read_landmark_dir(paths["normal_dir"])
    art = read_landmark_dir(paths["art_dir"])
    with timings.stage("statistics"):
        stats = fit_statistics(normal, art, config["stats"], int_seed(streams["stats"]))
    with timings.stage("training"):
        model, _ = train_model(normal, art, stats, config["train"], int_seed(streams["train"]))
    return stats, model


def render_gallery(mesh, texture, proj, render, directory):
    """``views/*.png`` and ``contact_sheet.png`` from an evenly spread set of views."""
    directory = Path(directory)
    views = view_grid(render["contact_sheet_views"], render["azimuth_range"], render["elevation_range"])
    rendered = render_views(mesh, texture, proj, views, render["image_size"], render["background"])
    written = []
    for i, ((azimuth, elevation), view) in enumerate(zip(views, rendered)):
        name = f"view_{i:02d}_az{azimuth:+06.1f}_el{elevation:+06.1f}.png"
        written.append(write_image(view.image, directory / "views" / name))
    sheet = write_image(contact_sheet([view.image for view in rendered]), directory / "contact_sheet.png")
    return written, sheet


def run_pipeline(config):
    """translate → deform → stylize on a validated config; returns the artifact report."""
    paths = config["paths"]
    out = Path(paths["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    streams = seed_streams(config["seed"])
    timings = Timings()
    render = config["render"]

    mesh = load_obj(paths["mesh"])
    if mesh.landmark_ids.size == 0:
        raise FaceSculptError(f"{paths['mesh']} has no landmark sidecar", details={"path": paths["mesh"]})
    proj = load_projection(paths.get("projection"), mesh, render["image_size"])
    texture = read_image(paths["texture"], size=render.get("texture_size"))
    style_image = read_image(paths["style_image"])
    l_x = _portrait_landmarks(paths, mesh, proj)
    l_y = read_landmarks(paths["exemplar_landmarks"])

    stats, model = _statistics_and_model(config, streams, timings)
    with timings.stage("landmark_translation"):
        aligned_z, l_z = translate_landmarks(model, stats, l_x, l_y, config["translate"]["scale"])
    write_landmarks(aligned_z, out / "landmarks_aligned.csv")
    write_landmarks(l_z, out / "landmarks.csv")

    with timings.stage("deformation"):
        result = run_deformation(mesh, l_z, proj, deform_config(config["deform"]), energy_log=out / "energy.csv")
    mesh_z = mesh.with_vertices(result.vertices)
    save_obj(mesh_z, out / "mesh.obj")

    with timings.stage("texture_transfer"):
        styled = optimize_texture(
            mesh_z,
            texture,
            style_image,
            proj,
            extractor_spec(config["extractor"]),
            style_config(config["style"], render, int_seed(streams["style"])),
            rng=np.random.default_rng(streams["style"]),
            trace_path=out / "style_trace.csv",
        )
    write_image(styled.texture, out / "texture.png")

    views, sheet = render_gallery(mesh_z, styled.texture, proj, render, out)
    timings.save(out / "timings.json")
    report = {
        "mesh": str(out / "mesh.obj"),
        "texture": str(out / "texture.png"),
        "landmarks": str(out / "landmarks.csv"),
        "contact_sheet": str(sheet),
        "views": [str(path) for path in views],
        "timings": dict(timings),
        "deform_energy": {"initial": result.initial_energy, "final": result.final_energy},
        "style_loss": {"initial": styled.initial_loss, "final": styled.final_loss},
    }
    logger.info("pipeline_done out=%s views=%d", out, len(views))
    return report
