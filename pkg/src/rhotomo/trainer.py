"""Self-supervised fitting of a neural attenuation field to projections."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import NumericalError, ValidationError
from .field import AdamState, FieldConfig, FieldModel, adam_step, field_backward, field_forward
from .geometry import Ray, ScanGeometry, clip_rays, pixel_rays, view_rays
from .projector import ProjectionSet
from .volume import PRIOR_MODES, Volume, sample_prior

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainingDiverged",
    "RayBatch",
    "make_ray_batch",
    "render_rays",
    "render_ray",
    "render_backward",
    "render_views",
    "train",
    "extract_volume",
    "learning_rate",
]

log = logging.getLogger(__name__)

PRIOR_SOURCES = ("fdk", "cgls", "none")


@dataclass
class TrainConfig:
    max_steps: int
    batch_rays: int = 1024
    samples_per_ray: int = 192
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    lr_switch_fraction: float = 0.5
    prior_mode: str = "nearest"
    prior_source: str = "fdk"
    seed: int = 0
    eval_every: int = 0
    eval_samples: int | None = None

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValidationError("max_steps must be >= 0")
        if self.batch_rays < 1 or self.samples_per_ray < 1:
            raise ValidationError("batch_rays and samples_per_ray must be >= 1")
        if not (self.lr_initial > 0 and self.lr_final > 0):
            raise ValidationError("learning rates must be > 0")
        if not 0.0 <= self.lr_switch_fraction <= 1.0:
            raise ValidationError("lr_switch_fraction must lie in [0, 1]")
        if self.prior_mode not in PRIOR_MODES:
            raise ValidationError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.prior_source not in PRIOR_SOURCES:
            raise ValidationError(f"prior_source must be one of {PRIOR_SOURCES}")
        if self.eval_every < 0:
            raise ValidationError("eval_every must be >= 0")


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    evals: list[tuple[int, float, float]] = field(default_factory=list)
    miss_rate: float = 0.0

    def smoothed_loss(self, window: int = 100) -> np.ndarray:
        """Trailing moving average of the per-step loss."""
        x = np.asarray(self.losses, float)
        if x.size == 0:
            return x
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, x.size + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)


class TrainingDiverged(NumericalError):
    def __init__(self, step: int, model: FieldModel, log: TrainLog):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.model = model
        self.log = log


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    targets: np.ndarray
    miss_rate: float = 0.0


def learning_rate(step: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial if step < cfg.lr_switch_fraction * cfg.max_steps else cfg.lr_final


def make_ray_batch(proj: ProjectionSet, cfg: TrainConfig, rng, max_rounds: int = 1000) -> RayBatch:
    """Draw ``batch_rays`` (view, pixel) pairs uniformly with replacement.

    A ray that misses the volume has its pixel redrawn within the same view,
    so every view keeps probability ``1 / n_views``. ``RayBatch.targets``
    holds the measured line integrals.
    """
    geom = proj.geom
    if geom.n_views == 0:
        raise ValidationError("projection set is empty")
    n = cfg.batch_rays
    views = np.empty(n, np.int64)
    rows = np.empty(n, np.int64)
    cols = np.empty(n, np.int64)
    views[:] = rng.integers(0, geom.n_views, n)
    todo = np.arange(n)
    draws = 0
    for _ in range(max_rounds):
        k = len(todo)
        rows[todo] = rng.integers(0, geom.det_rows, k)
        cols[todo] = rng.integers(0, geom.det_cols, k)
        draws += k
        o, d = pixel_rays(geom, views[todo], rows[todo], cols[todo])
        _, _, hit = clip_rays(o, d, geom)
        todo = todo[~hit]
        if len(todo) == 0:
            break
    else:
        raise ValidationError("no detector ray intersects the volume")
    o, d = pixel_rays(geom, views, rows, cols)
    tn, tf, _ = clip_rays(o, d, geom)
    targets = np.asarray(proj.images[views, rows, cols], np.float64)
    return RayBatch(o, d, tn, tf, targets, 1.0 - n / draws)


def _normalise(points, geom: ScanGeometry):
    half = geom.half_extent
    return (points + half) / (2.0 * half)


def _sample_t(t_near, t_far, m, rng, stratified):
    dt = (t_far - t_near) / m
    offsets = rng.random((len(t_near), m)) if stratified else np.full((len(t_near), m), 0.5)
    t = t_near[:, None] + (np.arange(m)[None, :] + offsets) * dt[:, None]
    return t, dt


def render_rays(origins, directions, t_near, t_far, model: FieldModel, prior: Volume | None,
                geom: ScanGeometry, m: int, prior_mode: str = "nearest", rng=None):
    """Predicted line integrals ``sum_j field(p_j, rho0_j) * dt`` for a ray bundle.

    Stratified sampling when ``rng`` is given, bin midpoints otherwise.
    Returns ``(predictions, cache)`` for :func:`render_backward`.
    """
    t, dt = _sample_t(np.asarray(t_near, float), np.asarray(t_far, float), m, rng, rng is not None)
    pts = origins[:, None, :] + t[..., None] * directions[:, None, :]
    pts = pts.reshape(-1, 3)
    if prior is not None:
        rho0 = sample_prior(prior, pts, prior_mode)
    else:
        rho0 = np.zeros(len(pts))
    rho, fcache = field_forward(_normalise(pts, geom), rho0, model)
    rho = rho.reshape(-1, m)
    pred = rho.sum(axis=1, dtype=np.float64) * dt
    if not np.all(np.isfinite(pred)):
        raise NumericalError("non-finite rendered projection")
    return pred, {"field": fcache, "dt": dt, "m": m}


def render_backward(grad_pred, cache, model: FieldModel):
    g = (np.asarray(grad_pred, float) * cache["dt"])[:, None]
    g_rho = np.broadcast_to(g, (len(g), cache["m"])).reshape(-1)
    return field_backward(g_rho, cache["field"], model)


def render_ray(ray: Ray, model: FieldModel, prior: Volume | None, geom: ScanGeometry,
               cfg: TrainConfig, rng=None) -> float:
    """Single-ray convenience wrapper around :func:`render_rays`."""
    if ray.t_near is None:
        raise ValidationError("ray has no t limits; clip it to the volume first")
    prior = prior if cfg.prior_source != "none" else None
    pred, _ = render_rays(
        ray.origin[None], ray.direction[None], np.array([ray.t_near]), np.array([ray.t_far]),
        model, prior, geom, cfg.samples_per_ray, cfg.prior_mode, rng,
    )
    return float(pred[0])


def render_views(model: FieldModel, prior: Volume | None, geom: ScanGeometry, m: int,
                 prior_mode: str = "nearest", chunk: int = 4096) -> np.ndarray:
    """Deterministic (midpoint) rendering of every view in ``geom``."""
    out = np.zeros((geom.n_views, geom.det_rows, geom.det_cols))
    for v in range(geom.n_views):
        o, d = view_rays(geom, [v])
        o = o.reshape(-1, 3)
        d = d.reshape(-1, 3)
        tn, tf, hit = clip_rays(o, d, geom)
        flat = np.zeros(len(o))
        idx = np.flatnonzero(hit)
        for s in range(0, len(idx), chunk):
            sel = idx[s:s + chunk]
            flat[sel], _ = render_rays(o[sel], d[sel], tn[sel], tf[sel], model, prior, geom, m, prior_mode)
        out[v] = flat.reshape(geom.det_rows, geom.det_cols)
    return out


def extract_volume(model: FieldModel, prior: Volume | None, geom: ScanGeometry,
                   prior_mode: str = "nearest", chunk: int = 65536) -> Volume:
    """Evaluate the field at every voxel centre of ``geom``'s volume grid."""
    grid = Volume.zeros(geom.vol_dims, geom.vol_spacing)
    pts = grid.voxel_centers().reshape(-1, 3)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        rho0 = sample_prior(prior, p, prior_mode) if prior is not None else np.zeros(len(p))
        out[s:s + chunk], _ = field_forward(_normalise(p, geom), rho0, model)
    return Volume(out.reshape(geom.vol_dims), geom.vol_spacing)


def _evaluate(model, prior, proj_test, cfg):
    m = cfg.eval_samples or cfg.samples_per_ray
    rendered = render_views(model, prior, proj_test.geom, m, cfg.prior_mode)
    ps, ss = [], []
    for view, ref in zip(rendered, proj_test.images):
        rng_ = metrics.data_range_of(ref) or 1.0
        ps.append(metrics.psnr(view, ref, rng_))
        ss.append(metrics.ssim(view, ref, rng_))
    return float(np.mean(ps)), float(np.mean(ss))


def train(proj_train: ProjectionSet, prior: Volume | None, cfg: TrainConfig,
          field_config: FieldConfig | None = None, proj_test: ProjectionSet | None = None,
          model: FieldModel | None = None):
    """Fit a field to ``proj_train`` by Adam on the per-batch mean squared error.

    The prior volume is only read. Returns ``(model, TrainLog)``; with
    ``max_steps == 0`` the freshly initialised model is returned unchanged.
    """
    if cfg.prior_source == "none":
        prior = None
    elif prior is None:
        raise ValidationError(f"prior_source={cfg.prior_source!r} requires a prior volume")
    elif prior.dims != proj_train.geom.vol_dims:
        raise ValidationError("prior volume dims do not match the scan geometry")
    init_seq, batch_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if model is None:
        model = FieldModel.init(field_config or FieldConfig(), np.random.default_rng(init_seq))
    rng = np.random.default_rng(batch_seq)
    state = AdamState()
    geom = proj_train.geom
    trace = TrainLog()
    misses = []
    last_good = model.copy()
    for step in range(cfg.max_steps):
        t0 = time.perf_counter()
        lr = learning_rate(step, cfg)
        batch = make_ray_batch(proj_train, cfg, rng)
        misses.append(batch.miss_rate)
        try:
            pred, cache = render_rays(batch.origins, batch.directions, batch.t_near, batch.t_far,
                                      model, prior, geom, cfg.samples_per_ray, cfg.prior_mode, rng)
        except NumericalError:
            raise TrainingDiverged(step, last_good, trace) from None
        resid = pred - batch.targets
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise TrainingDiverged(step, last_good, trace)
        grads = render_backward(2.0 * resid / len(resid), cache, model)
        last_good = model.copy()
        adam_step(model, grads, state, lr)
        trace.steps.append(step)
        trace.losses.append(loss)
        trace.lrs.append(lr)
        trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if proj_test is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            p, s = _evaluate(model, prior, proj_test, cfg)
            trace.evals.append((step, p, s))
            log.info("step %d loss %.6g eval psnr %.3f ssim %.4f", step, loss, p, s)
    trace.miss_rate = float(np.mean(misses)) if misses else 0.0
    return model, trace
