"""Texture stylization loops.

``multiview`` renders the deformed mesh from one random camera per
iteration; the content render uses the same geometry with the original
texture. ``flat`` treats the texture map itself as the image.
"""

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from autodiff import ops
from autodiff.params import ParamStore, rmsprop_step
from facesculpt.exceptions import FaceSculptError, NonFiniteError
from rendering.rasterizer import check_texture, rasterize, texture_footprint
from rendering.views import sample_view
from stylization.features import ExtractorSpec, FeatureStack, HypercolumnOperator, extract_hypercolumns
from stylization.losses import texture_loss

logger = logging.getLogger(__name__)

STYLE_MODES = ("multiview", "flat")
TRACE_COLUMNS = ["iteration", "style", "content", "total"]


@dataclass
class StyleConfig:
    mode: str = "multiview"
    beta: float = 1.0
    iterations: int = 600
    lr: float = 0.002
    decay: float = 0.99
    k_max: int = None
    seed: int = 0
    image_size: int = None
    background: float = 0.5
    azimuth_range: float = None
    elevation_range: float = None

    def __post_init__(self):
        if self.mode not in STYLE_MODES:
            raise FaceSculptError(f"Unknown style mode {self.mode!r}; expected one of {STYLE_MODES}")
        if self.beta < 0:
            raise FaceSculptError("beta must be non-negative")
        if self.lr <= 0:
            raise FaceSculptError("lr must be positive")
        if self.iterations < 0:
            raise FaceSculptError("iterations must be non-negative")
        if self.k_max is not None and self.k_max < 64:
            raise FaceSculptError("k_max must be at least 64")

    def as_dict(self):
        return asdict(self)

    def extractor(self, spec):
        if self.k_max is None or self.k_max == spec.k_max:
            return spec
        return ExtractorSpec(spec.mode, spec.levels, self.k_max, spec.seed, spec.path)


@dataclass
class StyleResult:
    texture: np.ndarray
    trace: list

    @property
    def initial_loss(self):
        return self.trace[0]["total"] if self.trace else float("nan")

    @property
    def final_loss(self):
        return self.trace[-1]["total"] if self.trace else float("nan")


def write_trace(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(trace, columns=TRACE_COLUMNS).to_csv(path, index=False, float_format="%.17g")
    return path


def style_features(y, spec, rng):
    """Every hypercolumn of the style image, or the external stack."""
    if spec.mode == "external":
        return extract_hypercolumns(y, spec, rng)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3 or y.shape[-1] != 3 or y.shape[0] * y.shape[1] == 0:
        raise FaceSculptError(f"Style image must be a non-empty H x W x 3 array, got {y.shape}")
    return HypercolumnOperator(y.shape[:2], spec.levels).stack(y.reshape(-1, 3))


def _subsample(stack, k, rng):
    if stack.k <= k:
        return stack
    rows = np.sort(rng.choice(stack.k, size=k, replace=False))
    return FeatureStack(stack.vectors[rows], stack.pixel_coords[rows], stack.image_size)


def _initial_texture(t_x):
    t_x = check_texture(t_x)
    if t_x.min() < 0.0 or t_x.max() > 1.0:
        raise FaceSculptError("Initial texture values must lie in [0, 1]")
    return t_x


def _optimize(t_x, y, spec, cfg, rng, images, label, trace_path):
    """Shared RMSprop loop; ``images(texture, rng)`` returns ``(I_z tensor, I_c array)``."""
    spec = cfg.extractor(spec)
    th, tw, _ = t_x.shape
    store = ParamStore(dtype="float64")
    texture = store.add("texture", t_x.reshape(-1, 3))
    style_all = style_features(y, spec, rng)
    started = time.perf_counter()

    trace = []
    for iteration in range(cfg.iterations):
        store.zero_grad()
        try:
            image_z, image_c = images(texture, rng)
            style_stack = _subsample(style_all, spec.k_max, rng)
            total, style, content = texture_loss(image_z, image_c, style_stack, spec, cfg.beta, rng)
            total.backward()
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"Texture loss became non-finite at iteration {iteration}: {exc.message}",
                details={"iteration": iteration, "stage": label, "cause": exc.details},
            ) from exc
        trace.append(
            {"iteration": iteration, "style": style.item(), "content": content.item(), "total": total.item()}
        )
        rmsprop_step(store, cfg.lr, decay=cfg.decay)
        texture.value = np.clip(texture.value, 0.0, 1.0)
        if iteration % 50 == 0:
            logger.debug(
                "%s iteration=%d total=%.6g style=%.6g content=%.6g",
                label,
                iteration,
                trace[-1]["total"],
                trace[-1]["style"],
                trace[-1]["content"],
            )

    result = StyleResult(texture.value.reshape(th, tw, 3).copy(), trace)
    logger.info(
        "%s_done iterations=%d start=%.6g final=%.6g seconds=%.3f",
        label,
        len(trace),
        result.initial_loss,
        result.final_loss,
        time.perf_counter() - started,
    )
    if trace_path is not None:
        write_trace(trace, trace_path)
    return result


def optimize_texture(mesh_z, t_x, y, proj, spec=None, cfg=None, rng=None, trace_path=None):
    """Stylize ``t_x`` so renders of ``mesh_z`` carry the style of ``y``.

    Returns a :class:`StyleResult`; ``cfg.mode == "flat"`` hands off to
    :func:`stylize_flat_texture` and ignores the mesh.
    """
    spec = spec or ExtractorSpec()
    cfg = cfg or StyleConfig()
    if cfg.mode == "flat":
        return stylize_flat_texture(t_x, y, spec, cfg, rng, trace_path)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    t_x = _initial_texture(t_x)
    content_flat = t_x.reshape(-1, 3)
    size = proj.image_size if cfg.image_size is None else int(cfg.image_size)

    def images(texture, rng):
        view = proj.with_view(*sample_view(rng, cfg.azimuth_range, cfg.elevation_range))
        raster = rasterize(mesh_z, view, size)
        sampling = texture_footprint(raster, t_x.shape[:2]).sampling_matrix
        background = np.where(raster.covered.reshape(-1, 1), 0.0, cfg.background) * np.ones((1, 3))
        image_c = (sampling @ content_flat + background).reshape(size, size, 3)
        image_z = ops.add(ops.linear_map(sampling, texture), background)
        return image_z, image_c

    return _optimize(t_x, y, spec, cfg, rng, images, "stylize", trace_path)


def stylize_flat_texture(t_x, y, spec=None, cfg=None, rng=None, trace_path=None):
    """Image style transfer applied straight to the texture map, with no renderer."""
    spec = spec or ExtractorSpec()
    cfg = cfg or StyleConfig(mode="flat")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    t_x = _initial_texture(t_x)

    def images(texture, rng):
        return texture, t_x

    return _optimize(t_x, y, spec, cfg, rng, images, "stylize_flat", trace_path)
