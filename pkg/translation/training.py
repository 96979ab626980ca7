import logging
from dataclasses import asdict, dataclass

import numpy as np

from autodiff import ops
from autodiff.params import adam_step
from facesculpt.exceptions import FaceSculptError, InsufficientSamplesError
from landmarks.models import LandmarkSet
from landmarks.statistics import compute_fid
from translation.losses import discriminator_loss, loss_recon_x, translation_objective

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lambda_recon_y: float = 1.0
    lambda_recon_c: float = 0.5
    lambda_kl: float = 1.0
    lambda_recon_s: float = 1.0
    lambda_adv: float = 1.0
    lambda_class: float = 1.0
    lr: float = 0.0005
    batch_size: int = 68
    epochs: int = 800
    classifier_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_recon_y", "lambda_recon_c", "lambda_kl", "lambda_recon_s", "lambda_adv", "lambda_class"):
            if getattr(self, name) < 0:
                raise FaceSculptError(f"{name} must be non-negative")

    def as_dict(self):
        return asdict(self)


def _warn_dropped_tail(n, batch_size, stage):
    dropped = n % batch_size if n > batch_size else 0
    if dropped:
        logger.warning(
            "batch_tail_dropped stage=%s samples=%d batch_size=%d dropped_per_epoch=%d", stage, n, batch_size, dropped
        )


def _batches(n, batch_size, rng):
    """Shuffled full batches; the ``n % batch_size`` samples left over sit out the epoch."""
    order = rng.permutation(n)
    if n <= batch_size:
        return [order]
    return [order[i : i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def _as_data(model, data, label):
    data = np.asarray(data, dtype=model.dtype)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InsufficientSamplesError(f"{label} training set is empty", details={"set": label})
    return data


def train_autoencoder(model, data_x, cfg):
    """Fit E_X and G_X on normal-face coefficients with the L1 reconstruction loss, then freeze them."""
    data_x = _as_data(model, data_x, "normal")
    rng = np.random.default_rng(cfg.seed)
    _warn_dropped_tail(data_x.shape[0], cfg.batch_size, "autoencoder")
    names = model.trainable("E_X", "G_X")
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for index in _batches(data_x.shape[0], cfg.batch_size, rng):
            model.store.zero_grad(names)
            loss = loss_recon_x(model, data_x[index])
            loss.backward()
            adam_step(model.store, cfg.lr, names=names)
            model.store.check_finite()
            losses.append(loss.item())
        history.append({"epoch": epoch, "recon_x": float(np.mean(losses))})
        logger.info("autoencoder epoch=%d recon_x=%.6f", epoch, history[-1]["recon_x"])
    model.freeze("E_X", "G_X")
    return history


def train_classifier(model, data_y, labels, cfg):
    """Pre-train CL on art-domain coefficients and their style-class labels, then freeze it."""
    data_y = _as_data(model, data_y, "art")
    labels = np.asarray(labels, dtype=np.int64)
    _warn_dropped_tail(data_y.shape[0], cfg.batch_size, "classifier")
    rng = np.random.default_rng(cfg.seed + 1)
    names = model.trainable("CL")
    for epoch in range(cfg.classifier_epochs):
        losses = []
        for index in _batches(data_y.shape[0], cfg.batch_size, rng):
            model.store.zero_grad(names)
            loss = ops.softmax_cross_entropy(model.classify(data_y[index]), labels[index])
            loss.backward()
            adam_step(model.store, cfg.lr, names=names)
            losses.append(loss.item())
        logger.debug("classifier epoch=%d cross_entropy=%.6f", epoch, float(np.mean(losses)))
    accuracy = float(np.mean(np.argmax(model.classify(data_y).value, axis=1) == labels))
    logger.info("classifier_trained accuracy=%.4f epochs=%d", accuracy, cfg.classifier_epochs)
    model.freeze("CL")
    return accuracy


def train_translation(model, data_x, data_y, cluster, cfg):
    """Train the translation branch with the frozen autoencoder and classifier.

    Each step updates D_Y once on a detached generated batch, then E_Y^C,
    E_Y^S and G_Y once on the weighted objective.
    """
    for network in ("E_X", "G_X", "CL"):
        if network not in model.frozen:
            raise FaceSculptError(f"{network} must be trained and frozen before the translation branch")
    data_x = _as_data(model, data_x, "normal")
    data_y = _as_data(model, data_y, "art")
    labels_y = cluster.assign_many(data_y)
    _warn_dropped_tail(data_y.shape[0], cfg.batch_size, "translation")
    rng = np.random.default_rng(cfg.seed + 2)
    generator_names = model.trainable("E_Y_C", "E_Y_S", "G_Y")
    discriminator_names = model.trainable("D_Y")
    history = []
    for epoch in range(cfg.epochs):
        sums = {}
        batches = _batches(data_y.shape[0], cfg.batch_size, rng)
        for index in batches:
            batch_y = data_y[index]
            batch_x = data_x[rng.choice(data_x.shape[0], size=len(index), replace=len(index) > data_x.shape[0])]
            noise = rng.standard_normal((len(index), model.style_dim)).astype(model.dtype)

            # Generator update.
            model.store.zero_grad()
            total, terms, generated = translation_objective(model, batch_x, batch_y, labels_y[index], noise, cfg)
            total.backward()
            adam_step(model.store, cfg.lr, names=generator_names)

            # Discriminator update on the batch the generator just produced.
            model.store.zero_grad()
            d_loss = discriminator_loss(model, batch_y, generated.detach())
            d_loss.backward()
            adam_step(model.store, cfg.lr, names=discriminator_names)
            model.store.zero_grad()
            model.store.check_finite()

            for name, term in terms.items():
                sums[name] = sums.get(name, 0.0) + term.item()
            sums["total"] = sums.get("total", 0.0) + total.item()
            sums["disc"] = sums.get("disc", 0.0) + d_loss.item()
        record = {name: value / len(batches) for name, value in sums.items()}
        record["epoch"] = epoch
        history.append(record)
        logger.info(
            "translation epoch=%d %s",
            epoch,
            " ".join(f"{k}={v:.6f}" for k, v in record.items() if k != "epoch"),
        )
    return history


def translate_coeffs(model, content_coeffs, style_coeffs):
    """Translated coefficients for batches of content and exemplar coefficients."""
    content = model.encode_x(np.atleast_2d(content_coeffs))
    style_mean, _ = model.encode_style_y(np.atleast_2d(style_coeffs))
    return model.decode_y(content, style_mean).value.astype(np.float64)


def translate(model, pca, l_x, l_y, scale=1.0):
    """Landmarks of ``l_x`` carrying the geometry style of exemplar ``l_y``.

    Both inputs are aligned. ``scale`` interpolates between the input (0) and
    the full translation (1).
    """
    if not 0.0 <= scale <= 1.0:
        raise FaceSculptError(f"Deformation scale must lie in [0, 1], got {scale}")
    coeffs = translate_coeffs(model, pca.project(l_x), pca.project(l_y))[0]
    translated = pca.reconstruct(coeffs).points
    return LandmarkSet((1.0 - scale) * l_x.points + scale * translated)


def translation_fid(model, pca, normal_samples, art_samples, seed=0):
    """FID between translations of ``normal_samples`` (random art exemplars) and the art corpus."""
    rng = np.random.default_rng(seed)
    content = pca.project_many(normal_samples)
    art = pca.project_many(art_samples)
    exemplars = art[rng.integers(art.shape[0], size=content.shape[0])]
    translated = translate_coeffs(model, content, exemplars)
    fid = compute_fid(translated, art)
    logger.info("translation_fid samples=%d fid=%.6f", content.shape[0], fid)
    return fid
