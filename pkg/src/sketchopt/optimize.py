"""The synthesis loop: render -> augment -> score -> pull back -> Adam -> clamp.

Runs the full text-to-drawing iteration with any ScoringBackend, plus the
pixel-optimization baseline (same loop, parameters are the raw pixels) and
a CLIP-free closed-loop reconstruction driver (MSE objective against a
target image) used to validate rasterizer + pullback + optimizer together.

Randomness is split into independent streams (init / augmentation /
backend) from the one root seed, so toggling augmentation never perturbs
the initial scene and equal seeds reproduce runs bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .augment import AugmentConfig, augment_batch, augment_batch_pullback, sample_augmentations
from .errors import ConfigError, ContractError, NumericError, TransportError
from .objective import PromptSet, ScoreReport, ScoringBackend, compile_prompts
from .prng import split_streams
from .raster import RasterConfig, pullback_from_state, render, render_with_state
from .scene import (
    DEFAULT_WIDTH_BOUNDS,
    GROUP_COLOR,
    GROUP_POINTS,
    GROUP_WIDTH,
    CanvasConfig,
    Scene,
    clamp_params,
    init_scene,
    params_to_scene,
    scene_to_params,
)

# Adam step magnitudes per parameter group. Points move in normalized
# canvas units: the default is half a pixel per iteration at the default
# 224-wide canvas. Width steps are in pixels, colors in [0,1] units.
DEFAULT_LR_POINTS = 0.5 / 224
DEFAULT_LR_WIDTH = 0.1
DEFAULT_LR_COLOR = 0.02

_SCORE_ATTEMPTS = 3


@dataclass
class RunConfig:
    iterations: int = 250
    n_strokes: int = 256
    n_augments: int = 8
    seed: int = 0
    mode: str = "strokes"  # "strokes" | "pixels"
    augment_enabled: bool = True
    lr_points: float = DEFAULT_LR_POINTS
    lr_width: float = DEFAULT_LR_WIDTH
    lr_color: float = DEFAULT_LR_COLOR
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    snapshot_every: int = 0  # 0 disables periodic snapshots
    prompts: PromptSet | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)
    canvas: CanvasConfig = field(default_factory=CanvasConfig)
    width_bounds: tuple[float, float] = DEFAULT_WIDTH_BOUNDS

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.n_strokes < 1:
            raise ConfigError(f"n_strokes must be >= 1, got {self.n_strokes}")
        if self.n_augments < 1:
            raise ConfigError(f"n_augments must be >= 1, got {self.n_augments}")
        if self.mode not in ("strokes", "pixels"):
            raise ConfigError(f"mode must be 'strokes' or 'pixels', got {self.mode!r}")
        if self.width_bounds[0] > self.width_bounds[1]:
            raise ConfigError(f"invalid width bounds {self.width_bounds}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: np.ndarray  # per-scalar learning rate
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(lr: np.ndarray, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    lr = np.asarray(lr, dtype=np.float64)
    return AdamState(np.zeros_like(lr), np.zeros_like(lr), 0, lr, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient at Adam step {state.t + 1}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


@dataclass
class Snapshot:
    iteration: int
    scene: Scene | None  # strokes mode
    image: np.ndarray | None  # pixels mode


@dataclass
class RunArtifacts:
    losses: list[float]  # summed over copies, one per iteration
    losses_per_copy: list[float]
    prompt_labels: list[str]
    prompt_cosines: np.ndarray  # (iterations, n_prompts) mean cosine per copy
    snapshots: list[Snapshot]
    final_scene: Scene | None
    final_image: np.ndarray
    initial_scene: Scene | None
    iter_seconds: list[float]
    mode: str
    aborted: bool = False


def _lr_vector(layout, config: RunConfig) -> np.ndarray:
    lr = np.empty(layout.size, dtype=np.float64)
    lr[layout.group_mask(GROUP_POINTS)] = config.lr_points
    lr[layout.group_mask(GROUP_WIDTH)] = config.lr_width
    lr[layout.group_mask(GROUP_COLOR)] = config.lr_color
    return lr


def _score_with_retry(backend: ScoringBackend, batch, compiled, partial: Callable[[], RunArtifacts]):
    last: TransportError | None = None
    for _ in range(_SCORE_ATTEMPTS):
        try:
            return backend.score_images(batch, compiled)
        except TransportError as exc:
            last = exc
    err = TransportError(f"scoring failed after {_SCORE_ATTEMPTS} attempts: {last}")
    err.partial_artifacts = partial()
    raise err


def _record(report: ScoreReport, losses, per_copy, cosines, iteration):
    if not np.isfinite(report.loss):
        raise NumericError(f"non-finite loss {report.loss} at iteration {iteration}")
    losses.append(report.loss)
    per_copy.append(report.loss_per_copy)
    cosines.append([c for _, c in report.per_prompt])


def run_synthesis(config: RunConfig, backend: ScoringBackend) -> RunArtifacts:
    """Run the stroke-optimization loop for config.iterations steps."""
    if config.mode == "pixels":
        return run_pixel_optimization(config, backend)
    streams = split_streams(config.seed)
    scene0 = init_scene(config.n_strokes, config.canvas, streams.init)
    params, layout = scene_to_params(scene0)
    state = init_adam(_lr_vector(layout, config), config.adam_beta1, config.adam_beta2, config.adam_eps)
    compiled = compile_prompts(backend, config.prompts) if config.prompts is not None else None

    aug_cfg = replace(config.augment, n_copies=config.n_augments)
    h, w = config.canvas.height_px, config.canvas.width_px
    losses: list[float] = []
    per_copy: list[float] = []
    cosines: list[list[float]] = []
    snapshots: list[Snapshot] = []
    iter_seconds: list[float] = []
    labels = compiled.labels if compiled is not None else []

    def partial() -> RunArtifacts:
        return _artifacts(losses, per_copy, labels, cosines, snapshots, scene=params_to_scene(params, layout),
                          image=render(params_to_scene(params, layout), config.raster),
                          initial=scene0, seconds=iter_seconds, mode="strokes", aborted=True)

    for i in range(config.iterations):
        t0 = time.perf_counter()
        scene = params_to_scene(params, layout)
        img, raster_state = render_with_state(scene, config.raster, keep_state=True)

        if config.augment_enabled:
            homographies = sample_augmentations(aug_cfg, (h, w), streams.augment)
            copies = augment_batch(img, homographies, aug_cfg)
            batch = np.stack(copies)
        else:
            homographies = None
            batch = img[None]

        report, d_batch = _score_with_retry(backend, batch, compiled, partial)
        if config.snapshot_every and i % config.snapshot_every == 0:
            snapshots.append(Snapshot(i, scene.copy(), None))
        _record(report, losses, per_copy, cosines, i)

        if config.augment_enabled:
            d_img = augment_batch_pullback(img, homographies, aug_cfg, list(d_batch))
        else:
            d_img = d_batch[0]
        grads = pullback_from_state(scene, config.raster, raster_state, d_img)
        params, state = adam_step(params, grads, state)
        params = clamp_params(params, layout, *config.width_bounds)
        iter_seconds.append(time.perf_counter() - t0)

    final_scene = params_to_scene(params, layout)
    return _artifacts(losses, per_copy, labels, cosines, snapshots, scene=final_scene,
                      image=render(final_scene, config.raster), initial=scene0,
                      seconds=iter_seconds, mode="strokes")


def run_pixel_optimization(config: RunConfig, backend: ScoringBackend) -> RunArtifacts:
    """Same loop with the parameter vector = the raw pixel image."""
    streams = split_streams(config.seed)
    h, w = config.canvas.height_px, config.canvas.width_px
    params = streams.init.uniform(0.0, 1.0, size=h * w * 3)
    lr = np.full(params.shape, config.lr_color)
    state = init_adam(lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    compiled = compile_prompts(backend, config.prompts) if config.prompts is not None else None

    aug_cfg = replace(config.augment, n_copies=config.n_augments)
    losses: list[float] = []
    per_copy: list[float] = []
    cosines: list[list[float]] = []
    snapshots: list[Snapshot] = []
    iter_seconds: list[float] = []
    labels = compiled.labels if compiled is not None else []

    def partial() -> RunArtifacts:
        return _artifacts(losses, per_copy, labels, cosines, snapshots, scene=None,
                          image=params.reshape(h, w, 3).copy(), initial=None,
                          seconds=iter_seconds, mode="pixels", aborted=True)

    for i in range(config.iterations):
        t0 = time.perf_counter()
        img = params.reshape(h, w, 3)
        if config.augment_enabled:
            homographies = sample_augmentations(aug_cfg, (h, w), streams.augment)
            batch = np.stack(augment_batch(img, homographies, aug_cfg))
        else:
            homographies = None
            batch = img[None]

        report, d_batch = _score_with_retry(backend, batch, compiled, partial)
        if config.snapshot_every and i % config.snapshot_every == 0:
            snapshots.append(Snapshot(i, None, img.copy()))
        _record(report, losses, per_copy, cosines, i)

        if config.augment_enabled:
            d_img = augment_batch_pullback(img, homographies, aug_cfg, list(d_batch))
        else:
            d_img = d_batch[0]
        params, state = adam_step(params, d_img.reshape(-1), state)
        np.clip(params, 0.0, 1.0, out=params)
        iter_seconds.append(time.perf_counter() - t0)

    return _artifacts(losses, per_copy, labels, cosines, snapshots, scene=None,
                      image=params.reshape(h, w, 3).copy(), initial=None,
                      seconds=iter_seconds, mode="pixels")


def reconstruct_scene(target: np.ndarray, config: RunConfig) -> RunArtifacts:
    """Fit fresh strokes to a target image: MSE objective, augmentation off."""
    from .objective import PixelTargetObjective

    target = np.asarray(target, dtype=np.float64)
    h, w = config.canvas.height_px, config.canvas.width_px
    if target.shape != (h, w, 3):
        raise ContractError(f"target shape {target.shape} != canvas ({h}, {w}, 3)")
    cfg = replace(config, mode="strokes", augment_enabled=False, prompts=None)
    return run_synthesis(cfg, PixelTargetObjective(target))


def _artifacts(losses, per_copy, labels, cosines, snapshots, scene, image, initial,
               seconds, mode, aborted=False) -> RunArtifacts:
    cos_arr = np.array(cosines, dtype=np.float64) if cosines else np.zeros((0, len(labels)))
    return RunArtifacts(
        losses=list(losses),
        losses_per_copy=list(per_copy),
        prompt_labels=list(labels),
        prompt_cosines=cos_arr,
        snapshots=list(snapshots),
        final_scene=scene,
        final_image=image,
        initial_scene=initial,
        iter_seconds=list(seconds),
        mode=mode,
        aborted=aborted,
    )
