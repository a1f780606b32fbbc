"""The optimization loop: camera sampling, loss assembly, Adam updates on the
Gaussian parameters, densification/pruning, checkpointing, and CSV logging.

Per-iteration order (fixed):
  1. sample a random viewpoint and rasterize it (with distortion stats);
  2. SDS gradient on that render, conditioned on the closest prior view;
  3. rasterize every prior viewpoint; reconstruction + mask losses;
  4. opacity entropy on the cloud;
  5. depth-distortion + normal-alignment losses on the sampled view;
  6. apply the uncertainty weights to the SDS/reconstruction gradients;
  7. backpropagate all gradient images, sum per-parameter gradients;
  8. one Adam step on the raw parameters (quaternions re-normalized);
  9. update the uncertainty weights, then densify/prune on schedule.

Runs are deterministic for a fixed seed (everything is single-threaded).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import balancer as bal
from .balancer import LossWeights
from .losses import (
    LossBreakdown,
    SdsConfig,
    depth_distortion_loss,
    mask_loss,
    normal_alignment_loss,
    opacity_loss,
    reconstruction_loss,
    sds_gradient,
)
from .priors import PriorViewSet, SdsPrior
from .rasterizer import ParamGrads, quat_to_rotmat, rasterize, rasterize_backward
from .scene import GaussianCloud, Viewpoint, init_cloud, load_cloud, save_cloud

LOG_COLUMNS = (
    "iter", "sds", "reconstruction", "mask", "opacity", "depth", "normal",
    "w_sds", "w_rec", "total", "gauss_count",
)


class NumericFailure(RuntimeError):
    """Raised when the total loss goes non-finite (CLI exit code 4)."""


@dataclass
class TrainConfig:
    iterations: int = 500
    resolution: int = 256
    background: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    # loss coefficients
    lambda_sds: float = 1.0
    lambda_rgb: float = 10000.0
    lambda_a: float = 1000.0
    lambda_opacity: float = 0.1
    lambda_normal: float = 0.05
    lambda_depth: float = 100.0

    # toggles (ablations)
    balancing: bool = True
    rough_enabled: bool = True
    fine_enabled: bool = True
    multiview: bool = True
    dist_l2: bool = False

    # SDS schedule
    t_min: float = 0.02
    t_max: float = 0.98
    t_upper_final: float = 0.5

    # per-parameter Adam learning rates
    lr_position: float = 1.6e-3
    lr_position_final: float = 1.6e-4
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_color: float = 1.25e-2
    lr_opacity: float = 5e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_lr: float = 1e-2

    # initialization
    init_count: int = 5000
    init_radius: float = 0.5

    # densification / pruning
    densify_start: int = 100
    densify_stop: int = 300
    densify_interval: int = 100
    densify_grad_threshold: float = 0.6
    densify_scale_percent: float = 0.01   # of scene extent; split above, clone below
    split_scale_shrink: float = 1.6
    prune_opacity: float = 0.01

    # camera sampling
    camera_radius: float = 2.0
    fov_y_deg: float = 30.0
    elevation_range: tuple = (-30.0, 30.0)

    checkpoint_interval: int = 100

    def sds_config(self) -> SdsConfig:
        return SdsConfig(
            t_min=self.t_min, t_max=self.t_max, t_upper_final=self.t_upper_final,
            lambda_sds=self.lambda_sds,
        )

    def to_json(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        d["elevation_range"] = list(self.elevation_range)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("background", "elevation_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def sample_viewpoint(rng: np.random.Generator, cfg: TrainConfig) -> Viewpoint:
    elevation = float(rng.uniform(cfg.elevation_range[0], cfg.elevation_range[1]))
    azimuth = float(rng.uniform(0.0, 360.0))
    return Viewpoint(elevation, azimuth, cfg.camera_radius, cfg.fov_y_deg)


def position_lr(cfg: TrainConfig, iteration: int) -> float:
    frac = iteration / max(cfg.iterations, 1)
    return cfg.lr_position * (cfg.lr_position_final / cfg.lr_position) ** frac


def adam_step(cloud: GaussianCloud, grads: ParamGrads, cfg: TrainConfig, iteration: int) -> None:
    """One Adam update per parameter group; quaternions re-normalized after."""
    lrs = {
        "positions": position_lr(cfg, iteration),
        "rotations": cfg.lr_rotation,
        "log_scales": cfg.lr_scale,
        "colors_raw": cfg.lr_color,
        "opacities_raw": cfg.lr_opacity,
    }
    cloud.adam_step += 1
    k = cloud.adam_step
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    bc1 = 1.0 - b1**k
    bc2 = 1.0 - b2**k
    for name, lr in lrs.items():
        g = getattr(grads, name)
        m = cloud.adam_m[name]
        v = cloud.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = -lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        param = getattr(cloud, name).astype(np.float64) + update
        setattr(cloud, name, param.astype(np.float32))
    cloud.normalize_rotations()


@dataclass
class StepResult:
    breakdown: LossBreakdown
    viewpoint: Viewpoint
    omega_sds: float = 0.0     # weights applied this iteration (pre-update)
    omega_rec: float = 0.0


def train_step(
    cloud: GaussianCloud,
    priors: PriorViewSet,
    prior: SdsPrior,
    weights: LossWeights,
    cfg: TrainConfig,
    iteration: int,
    rng: np.random.Generator,
) -> StepResult:
    n = len(cloud)
    res = cfg.resolution
    bg = cfg.background
    total_grads = ParamGrads.zeros(n)
    breakdown = LossBreakdown()

    # 1-2: random view, SDS
    p = sample_viewpoint(rng, cfg)
    render_p = rasterize(cloud, p, res, res, background=bg,
                         with_distortion=True, dist_l2=cfg.dist_l2)
    iter_frac = iteration / max(cfg.iterations - 1, 1)
    grad_rgb_p = np.zeros_like(render_p.rgb)
    if cfg.rough_enabled and cfg.lambda_sds > 0.0:
        l_sds, grad_rgb_p = sds_gradient(
            render_p, prior, priors, p, rng, cfg.sds_config(), iter_frac
        )
        breakdown.sds = l_sds

    # 3: prior views, reconstruction + mask
    prior_renders = []
    rec_grads, mask_grads = [], []
    if cfg.fine_enabled and (cfg.lambda_rgb > 0.0 or cfg.lambda_a > 0.0):
        prior_renders = [
            rasterize(cloud, vp, res, res, background=bg) for vp in priors.viewpoints
        ]
        breakdown.reconstruction, rec_grads = reconstruction_loss(
            prior_renders, priors, cfg.lambda_rgb, background=bg
        )
        breakdown.mask, mask_grads = mask_loss(prior_renders, priors, cfg.lambda_a)

    # 4: opacity entropy
    opacity_grad = np.zeros(n)
    if cfg.lambda_opacity > 0.0:
        breakdown.opacity, opacity_grad = opacity_loss(cloud, cfg.lambda_opacity)

    # 5: surface regularizers on the sampled view
    dist_coeff = 0.0
    grad_normal_p = np.zeros_like(render_p.normal)
    if cfg.lambda_depth > 0.0:
        breakdown.depth_distortion, dist_coeff = depth_distortion_loss(render_p, cfg.lambda_depth)
    if cfg.lambda_normal > 0.0:
        breakdown.normal_alignment, grad_normal_p = normal_alignment_loss(render_p, cfg.lambda_normal)

    # 6: uncertainty weighting (gradient scales and weighted values)
    sds_scale = bal.sds_gradient_scale(weights) if cfg.balancing else 1.0
    rec_scale = bal.reconstruction_gradient_scale(weights) if cfg.balancing else 1.0
    if cfg.balancing:
        breakdown.rough_weighted = bal.weighted_rough(breakdown.sds, weights)
        breakdown.fine_weighted = bal.weighted_fine(breakdown.reconstruction, breakdown.mask, weights)
    else:
        breakdown.rough_weighted = breakdown.sds
        breakdown.fine_weighted = breakdown.reconstruction + breakdown.mask
    breakdown.finalize()
    if not math.isfinite(breakdown.total):
        raise NumericFailure(f"non-finite total loss at iteration {iteration}: {breakdown}")

    # 7: backward through every render
    total_grads.add_(
        rasterize_backward(
            render_p,
            grad_rgb=sds_scale * grad_rgb_p,
            grad_normal=grad_normal_p,
            dist_coeff=dist_coeff,
            accumulate_stats=True,
        )
    )
    for i, render_i in enumerate(prior_renders):
        total_grads.add_(
            rasterize_backward(
                render_i,
                grad_rgb=rec_scale * rec_grads[i],
                grad_alpha=mask_grads[i],
                accumulate_stats=True,
            )
        )
    total_grads.opacities_raw += opacity_grad

    # 8: parameter update
    adam_step(cloud, total_grads, cfg, iteration)
    for name in ("positions", "rotations", "log_scales", "colors_raw", "opacities_raw"):
        if not np.all(np.isfinite(getattr(cloud, name))):
            raise NumericFailure(f"non-finite {name} after update at iteration {iteration}")

    # 9: weight update
    omega_sds_used, omega_rec_used = weights.omega_sds, weights.omega_rec
    if cfg.balancing:
        bal.update_weights(weights, breakdown.sds, breakdown.reconstruction, cfg.weight_lr)

    return StepResult(breakdown=breakdown, viewpoint=p,
                      omega_sds=omega_sds_used, omega_rec=omega_rec_used)


def densify_and_prune(cloud: GaussianCloud, cfg: TrainConfig, iteration: int) -> GaussianCloud:
    """Clone small / split large Gaussians with high mean positional gradient;
    prune near-transparent ones; reset the stats."""
    mean_grad = cloud.grad_accum / np.maximum(cloud.grad_count, 1)
    high = mean_grad > cfg.densify_grad_threshold
    scales = cloud.scales()
    scene_extent = cfg.camera_radius
    big = scales.max(axis=1) > cfg.densify_scale_percent * scene_extent
    split = high & big
    clone = high & ~big

    keep = ~split
    parts = {name: [getattr(cloud, name)[keep]] for name in
             ("positions", "rotations", "log_scales", "colors_raw", "opacities_raw")}
    m_parts = {k: [cloud.adam_m[k][keep]] for k in cloud.adam_m}
    v_parts = {k: [cloud.adam_v[k][keep]] for k in cloud.adam_v}

    def append_rows(idx, positions, log_scales):
        for name in parts:
            if name == "positions":
                parts[name].append(positions.astype(np.float32))
            elif name == "log_scales":
                parts[name].append(log_scales.astype(np.float32))
            else:
                parts[name].append(getattr(cloud, name)[idx])
        for k in m_parts:
            m_parts[k].append(cloud.adam_m[k][idx])
            v_parts[k].append(cloud.adam_v[k][idx])

    if clone.any():
        idx = np.nonzero(clone)[0]
        append_rows(idx, cloud.positions[idx].astype(np.float64),
                    cloud.log_scales[idx].astype(np.float64))

    if split.any():
        idx = np.nonzero(split)[0]
        q = cloud.rotations[idx].astype(np.float64)
        qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        R = quat_to_rotmat(qn)
        s = scales[idx]
        k_max = np.argmax(s, axis=1)
        axis = R[np.arange(len(idx)), :, k_max]
        sigma_max = s[np.arange(len(idx)), k_max]
        offset = axis * sigma_max[:, None]
        child_ls = cloud.log_scales[idx].astype(np.float64) - math.log(cfg.split_scale_shrink)
        base = cloud.positions[idx].astype(np.float64)
        for sign in (1.0, -1.0):
            append_rows(idx, base + sign * offset, child_ls)

    new_cloud = GaussianCloud(
        positions=np.concatenate(parts["positions"]),
        rotations=np.concatenate(parts["rotations"]),
        log_scales=np.concatenate(parts["log_scales"]),
        colors_raw=np.concatenate(parts["colors_raw"]),
        opacities_raw=np.concatenate(parts["opacities_raw"]),
        adam_m={k: np.concatenate(m_parts[k]) for k in m_parts},
        adam_v={k: np.concatenate(v_parts[k]) for k in v_parts},
        adam_step=cloud.adam_step,
    )

    alive = new_cloud.opacities() >= cfg.prune_opacity
    if not alive.any():
        raise NumericFailure(f"pruning removed every Gaussian at iteration {iteration}")
    if not alive.all():
        new_cloud = GaussianCloud(
            positions=new_cloud.positions[alive],
            rotations=new_cloud.rotations[alive],
            log_scales=new_cloud.log_scales[alive],
            colors_raw=new_cloud.colors_raw[alive],
            opacities_raw=new_cloud.opacities_raw[alive],
            adam_m={k: new_cloud.adam_m[k][alive] for k in new_cloud.adam_m},
            adam_v={k: new_cloud.adam_v[k][alive] for k in new_cloud.adam_v},
            adam_step=new_cloud.adam_step,
        )
    return new_cloud


def _densify_due(cfg: TrainConfig, iteration: int) -> bool:
    it = iteration + 1   # schedule is 1-based: first window ends at densify_start
    return (
        cfg.densify_interval > 0
        and cfg.densify_start <= it <= cfg.densify_stop
        and it % cfg.densify_interval == 0
    )


# run orchestration --------------------------------------------------------


@dataclass
class RunResult:
    cloud: GaussianCloud
    weights: LossWeights
    rows: list
    run_dir: Path


def _rng_state_to_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _rng_from_json(state: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state)
    return rng


def save_checkpoint(path_base: Path, cloud: GaussianCloud, weights: LossWeights,
                    rng: np.random.Generator, iteration: int) -> None:
    save_cloud(cloud, f"{path_base}.ply")
    state = {f"m_{k}": v for k, v in cloud.adam_m.items()}
    state.update({f"v_{k}": v for k, v in cloud.adam_v.items()})
    np.savez(
        f"{path_base}.state.npz",
        adam_step=np.int64(cloud.adam_step),
        grad_accum=cloud.grad_accum,
        grad_count=cloud.grad_count,
        iteration=np.int64(iteration),
        weights_json=json.dumps(weights.state_dict()),
        rng_json=_rng_state_to_json(rng),
        **state,
    )


def load_checkpoint(path_base: Path):
    cloud = load_cloud(f"{path_base}.ply")
    data = np.load(f"{path_base}.state.npz")
    cloud.adam_m = {k[2:]: data[k] for k in data.files if k.startswith("m_")}
    cloud.adam_v = {k[2:]: data[k] for k in data.files if k.startswith("v_")}
    cloud.adam_step = int(data["adam_step"])
    cloud.grad_accum = data["grad_accum"]
    cloud.grad_count = data["grad_count"]
    weights = LossWeights.from_state_dict(json.loads(str(data["weights_json"])))
    rng = _rng_from_json(str(data["rng_json"]))
    iteration = int(data["iteration"])
    return cloud, weights, rng, iteration


def run(
    cfg: TrainConfig,
    priors: PriorViewSet,
    prior: SdsPrior,
    run_dir,
    cloud: GaussianCloud | None = None,
    resume_from: int | None = None,
    debug_renders: bool = True,
) -> RunResult:
    """Execute the full optimization, writing config.json, log.csv,
    checkpoints, weights.json, and final.ply into the run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as f:
        json.dump(cfg.to_json(), f, indent=2, sort_keys=True)

    if not cfg.multiview and len(priors) > 1:
        priors = PriorViewSet(
            viewpoints=priors.viewpoints[:1],
            images=priors.images[:1],
            source_tag=priors.source_tag + "[front-only]",
        )

    if resume_from is not None:
        cloud, weights, rng, start_iter = load_checkpoint(run_dir / f"ckpt_{resume_from}")
        rows = _read_log_rows(run_dir / "log.csv", upto=start_iter)
    else:
        if cloud is None:
            cloud = init_cloud(cfg.init_count, cfg.seed, cfg.init_radius)
        weights = LossWeights()
        rng = np.random.default_rng(cfg.seed)
        start_iter = 0
        rows = []

    omega_trace = [(r["iter"], r["w_sds"], r["w_rec"]) for r in rows]

    log_path = run_dir / "log.csv"
    mode = "w" if start_iter == 0 else "r+"
    with open(log_path, mode, newline="") as logf:
        if start_iter == 0:
            writer = csv.writer(logf)
            writer.writerow(LOG_COLUMNS)
        else:
            # truncate any rows past the checkpoint
            _truncate_log(logf, start_iter)
            writer = csv.writer(logf)

        for iteration in range(start_iter, cfg.iterations):
            step = train_step(cloud, priors, prior, weights, cfg, iteration, rng)
            b = step.breakdown
            row = [
                iteration, b.sds, b.reconstruction, b.mask, b.opacity,
                b.depth_distortion, b.normal_alignment,
                step.omega_sds, step.omega_rec, b.total, len(cloud),
            ]
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
            rows.append(dict(zip(LOG_COLUMNS, row)))
            omega_trace.append((iteration, step.omega_sds, step.omega_rec))

            if _densify_due(cfg, iteration):
                cloud = densify_and_prune(cloud, cfg, iteration)
                cloud.grad_accum[:] = 0.0
                cloud.grad_count[:] = 0

            done = iteration + 1
            if cfg.checkpoint_interval > 0 and done % cfg.checkpoint_interval == 0:
                save_checkpoint(run_dir / f"ckpt_{done}", cloud, weights, rng, done)
                if debug_renders:
                    _dump_debug_renders(cloud, cfg, run_dir / "renders", done)

    save_cloud(cloud, run_dir / "final.ply")
    with open(run_dir / "weights.json", "w") as f:
        json.dump(
            {
                "iterations": [i for i, _, _ in omega_trace],
                "omega_sds": [a for _, a, _ in omega_trace],
                "omega_rec": [b for _, _, b in omega_trace],
            },
            f,
        )
    return RunResult(cloud=cloud, weights=weights, rows=rows, run_dir=run_dir)


def _read_log_rows(path: Path, upto: int) -> list:
    rows = []
    if not path.exists():
        return rows
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            it = int(row["iter"])
            if it < upto:
                parsed = {"iter": it, "gauss_count": int(row["gauss_count"])}
                parsed.update({k: float(row[k]) for k in LOG_COLUMNS if k not in parsed})
                rows.append(parsed)
    return rows


def _truncate_log(logf, upto: int) -> None:
    logf.seek(0)
    lines = logf.readlines()
    logf.seek(0)
    logf.truncate()
    kept = [lines[0]] if lines else []
    for line in lines[1:]:
        try:
            if int(line.split(",", 1)[0]) < upto:
                kept.append(line)
        except ValueError:
            continue
    logf.writelines(kept)
    logf.flush()


def _dump_debug_renders(cloud: GaussianCloud, cfg: TrainConfig, renders_dir: Path,
                        iteration: int) -> None:
    from .priors import save_rgb
    from PIL import Image

    renders_dir.mkdir(parents=True, exist_ok=True)
    vp = Viewpoint(0.0, 0.0, cfg.camera_radius, cfg.fov_y_deg)
    out = rasterize(cloud, vp, cfg.resolution, cfg.resolution, background=cfg.background)
    save_rgb(out.rgb, renders_dir / f"rgb_{iteration:04d}.png")
    save_rgb(np.repeat(out.alpha[..., None], 3, axis=-1), renders_dir / f"alpha_{iteration:04d}.png")
    save_rgb(out.normal * 0.5 + 0.5, renders_dir / f"normal_{iteration:04d}.png")
    d = out.depth
    fg = out.alpha > 0.5
    if fg.any():
        lo, hi = d[fg].min(), d[fg].max()
        dn = np.where(fg, (d - lo) / max(hi - lo, 1e-6), 0.0)
    else:
        dn = np.zeros_like(d)
    u16 = np.clip(np.round(dn * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(u16, mode="I;16").save(renders_dir / f"depth_{iteration:04d}.png")
