"""Command-line surface.

Commands: generate (full pipeline), render, mesh, eval, ablate, plotdata.
Config precedence is defaults < JSON config file < CLI flags, and every run
directory gets the resolved config plus a manifest sufficient to reproduce
the run with in-process providers.

Exit codes: 0 success, 2 usage error, 3 provider/service error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .meshing import (
    MeshExtractionError,
    bake_texture,
    default_bake_indices,
    extract_mesh,
    export_obj,
    import_obj,
)
from .metrics import evaluate_views, evaluation_ring
from .optimizer import NumericFailure, TrainConfig, run
from .priors import (
    DEFAULT_PRIOR_ANGLES,
    FilePriorProvider,
    OraclePrior,
    PriorServiceError,
    RemotePrior,
    load_prior_set,
    load_rgba,
    save_prior_set,
    save_rgb,
)
from .rasterizer import rasterize
from .scene import Viewpoint, load_cloud, save_cloud
from .synthetic import REFERENCE_SCENES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROVIDER = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _require_free(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _resolve_config(args) -> TrainConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            base = json.load(f)
    cfg = TrainConfig.from_json(base) if base else TrainConfig()
    for flag, attr in (
        ("iterations", "iterations"),
        ("resolution", "resolution"),
        ("seed", "seed"),
        ("init_count", "init_count"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, attr, v)
    for kv in getattr(args, "set", None) or []:
        key, _, value = kv.partition("=")
        if not hasattr(cfg, key):
            raise UsageError(f"unknown config key '{key}'")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            setattr(cfg, key, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(cfg, key, int(value))
        elif isinstance(current, float):
            setattr(cfg, key, float(value))
        elif isinstance(current, tuple):
            setattr(cfg, key, tuple(float(x) for x in value.split(",")))
        else:
            setattr(cfg, key, value)
    return cfg


def _default_viewpoints(cfg: TrainConfig):
    return [
        Viewpoint(e, a, cfg.camera_radius, cfg.fov_y_deg) for e, a in DEFAULT_PRIOR_ANGLES
    ]


def _build_provider(args, cfg: TrainConfig, run_dir: Path):
    """Returns (priors, prior, provider_manifest)."""
    chosen = [bool(getattr(args, "views", None)), bool(getattr(args, "input", None)),
              bool(getattr(args, "oracle", None))]
    if sum(chosen) > 1:
        raise UsageError("--views, --input, and --oracle are mutually exclusive")
    service = getattr(args, "service", None) or os.environ.get("PRIOR_SERVICE_URL")

    if getattr(args, "oracle", None):
        name = args.oracle
        if name.endswith(".ply"):
            reference = load_cloud(name)
        elif name in REFERENCE_SCENES:
            reference = REFERENCE_SCENES[name]()
        else:
            raise UsageError(
                f"unknown oracle scene '{name}' (choose from {sorted(REFERENCE_SCENES)} or a .ply)"
            )
        prior = OraclePrior(reference, resolution=cfg.resolution, background=cfg.background)
        priors = prior.generate_views(viewpoints=_default_viewpoints(cfg))
        return priors, prior, {"kind": "oracle", "scene": name}

    if getattr(args, "views", None):
        provider = FilePriorProvider(
            args.views, resolution=cfg.resolution, fov_y_deg=cfg.fov_y_deg,
            radius=cfg.camera_radius,
        )
        if service:
            prior = RemotePrior(service, seed=cfg.seed, default_radius=cfg.camera_radius,
                                fov_y_deg=cfg.fov_y_deg)
            return provider.view_set, prior, {"kind": "file+remote", "manifest": str(args.views),
                                              "service": service}
        cfg.rough_enabled = False   # no noise predictor without a service
        return provider.view_set, provider, {"kind": "file", "manifest": str(args.views)}

    if getattr(args, "input", None):
        if not service:
            raise UsageError(
                "--input needs a prior service; pass --service URL or set PRIOR_SERVICE_URL"
            )
        prior = RemotePrior(service, seed=cfg.seed, default_radius=cfg.camera_radius,
                            fov_y_deg=cfg.fov_y_deg)
        image = load_rgba(args.input)
        priors = prior.generate_views(image, _default_viewpoints(cfg), seed=cfg.seed)
        save_prior_set(priors, run_dir / "priors")
        return priors, prior, {"kind": "remote", "input": str(args.input), "service": service}

    raise UsageError("choose a prior source: --views MANIFEST, --input IMAGE, or --oracle SCENE")


def _write_manifest(run_dir: Path, command: str, args_dict: dict, cfg: TrainConfig,
                    provider: dict, artifacts: dict) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "args": args_dict,
        "config": cfg.to_json(),
        "provider": provider,
        "seed": cfg.seed,
        "artifacts": artifacts,
    }
    with open(run_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


ABLATION_PRESETS = {
    "no_balancing": {"balancing": False},
    "no_rough": {"rough_enabled": False},
    "no_fine": {"fine_enabled": False},
    "no_opacity": {"lambda_opacity": 0.0},
    "no_depth_normal": {"lambda_depth": 0.0, "lambda_normal": 0.0},
    "no_multiview": {"multiview": False},
}


def cmd_generate(args) -> int:
    run_dir = Path(args.out)
    if run_dir.exists() and any(run_dir.iterdir()) and not args.force:
        raise UsageError(f"{run_dir} is not empty; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)

    cfg = _resolve_config(args)
    preset = {}
    if getattr(args, "preset", None):
        preset = ABLATION_PRESETS[args.preset]
        for k, v in preset.items():
            setattr(cfg, k, v)

    priors, prior, provider_manifest = _build_provider(args, cfg, run_dir)
    result = run(cfg, priors, prior, run_dir)

    artifacts = {"final_cloud": "final.ply", "log": "log.csv", "weights": "weights.json"}
    if not args.skip_mesh:
        mesh = extract_mesh(result.cloud, grid_resolution=args.mesh_resolution,
                            iso_threshold=args.iso)
        mesh = bake_texture(mesh, priors, steps=args.bake_steps,
                            background=cfg.background)
        export_obj(mesh, run_dir / "mesh.obj")
        with open(run_dir / "mesh_stats.json", "w") as f:
            json.dump(
                {
                    "vertices": mesh.num_vertices,
                    "triangles": mesh.num_triangles,
                    "bake_view_psnr_db": mesh.bake_report.get("view_psnr", []),
                    "bake_views": mesh.bake_report.get("views", []),
                },
                f, indent=2,
            )
        artifacts.update({"mesh": "mesh.obj", "mesh_stats": "mesh_stats.json"})

    _write_manifest(run_dir, "generate", {k: str(v) for k, v in vars(args).items()},
                    cfg, provider_manifest, artifacts)
    print(f"run complete: {run_dir} ({len(result.cloud)} Gaussians)")
    return EXIT_OK


def cmd_render(args) -> int:
    out = Path(args.out)
    _require_free(out, args.force)
    cloud = load_cloud(args.cloud)
    vp = Viewpoint(args.elevation, args.azimuth, args.radius, args.fov)
    render = rasterize(cloud, vp, args.width, args.height,
                       background=(1.0, 1.0, 1.0))
    save_rgb(render.rgb, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_mesh(args) -> int:
    out = Path(args.out)
    _require_free(out, args.force)
    cloud = load_cloud(args.cloud)
    mesh = extract_mesh(cloud, grid_resolution=args.resolution, iso_threshold=args.iso)
    if args.bake_views:
        priors = load_prior_set(args.bake_views)
        mesh = bake_texture(mesh, priors, steps=args.bake_steps)
    export_obj(mesh, out)
    print(f"wrote {out} ({mesh.num_triangles} triangles)")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    _require_free(out, args.force)
    if bool(args.mesh) == bool(args.cloud):
        raise UsageError("pass exactly one of --mesh or --cloud")
    gt = load_prior_set(args.gt)
    rep = import_obj(args.mesh) if args.mesh else load_cloud(args.cloud)
    report = evaluate_views(rep, gt)
    report.write(out, out.with_suffix(".csv"))
    print(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.preset not in ABLATION_PRESETS:
        raise UsageError(f"unknown preset '{args.preset}' (choose from {sorted(ABLATION_PRESETS)})")
    rc = cmd_generate(args)
    if rc == EXIT_OK:
        run_dir = Path(args.out)
        with open(run_dir / "log.csv") as f:
            rows = list(csv.DictReader(f))
        summary = {
            "preset": args.preset,
            "overrides": ABLATION_PRESETS[args.preset],
            "final_gauss_count": int(rows[-1]["gauss_count"]) if rows else 0,
        }
        with open(run_dir / "ablate_summary.json", "w") as f:
            json.dump(summary, f, indent=2)
    return rc


def cmd_plotdata(args) -> int:
    out = Path(args.out)
    _require_free(out, args.force)
    log_path = Path(args.run) / "log.csv"
    if not log_path.exists():
        raise UsageError(f"{log_path} not found; is {args.run} a run directory?")
    with open(log_path) as f:
        rows = list(csv.DictReader(f))
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["iter", "sds", "reconstruction", "mask", "opacity", "depth", "normal",
             "rough_weighted", "fine_weighted", "w_sds", "w_rec", "total", "gauss_count"]
        )
        for r in rows:
            w_sds = float(r["w_sds"])
            w_rec = float(r["w_rec"])
            rough = float(np.exp(-w_sds)) * float(r["sds"]) + w_sds
            fine = float(np.exp(-w_rec)) * float(r["reconstruction"]) + w_rec + float(r["mask"])
            writer.writerow(
                [r["iter"], r["sds"], r["reconstruction"], r["mask"], r["opacity"],
                 r["depth"], r["normal"], f"{rough:.10g}", f"{fine:.10g}",
                 r["w_sds"], r["w_rec"], r["total"], r["gauss_count"]]
            )
    print(f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


def _add_generate_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--views", help="prior-set manifest JSON (file provider)")
    p.add_argument("--input", help="front-view RGBA image (remote provider)")
    p.add_argument("--oracle", help="synthetic reference: cube, blobs, or a .ply")
    p.add_argument("--service", help="prior service URL (or PRIOR_SERVICE_URL)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-count", dest="init_count", type=int)
    p.add_argument("--skip-mesh", action="store_true")
    p.add_argument("--mesh-resolution", type=int, default=128)
    p.add_argument("--iso", type=float, default=1.0)
    p.add_argument("--bake-steps", type=int, default=50)
    p.add_argument("--force", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatopt",
        description="Multi-view Gaussian splatting optimizer producing textured meshes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="full pipeline: priors -> optimize -> mesh")
    _add_generate_flags(g)
    g.set_defaults(func=cmd_generate, preset=None)

    r = sub.add_parser("render", help="single-view render of a cloud")
    r.add_argument("--cloud", required=True)
    r.add_argument("--elevation", type=float, default=0.0)
    r.add_argument("--azimuth", type=float, default=0.0)
    r.add_argument("--radius", type=float, default=2.0)
    r.add_argument("--fov", type=float, default=30.0)
    r.add_argument("--width", type=int, default=256)
    r.add_argument("--height", type=int, default=256)
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_render)

    m = sub.add_parser("mesh", help="extract (and optionally bake) a mesh from a cloud")
    m.add_argument("--cloud", required=True)
    m.add_argument("--resolution", type=int, default=128)
    m.add_argument("--iso", type=float, default=1.0)
    m.add_argument("--bake-views", help="prior manifest to bake texture from")
    m.add_argument("--bake-steps", type=int, default=50)
    m.add_argument("--out", required=True)
    m.add_argument("--force", action="store_true")
    m.set_defaults(func=cmd_mesh)

    e = sub.add_parser("eval", help="PSNR/SSIM against ground-truth views")
    e.add_argument("--mesh")
    e.add_argument("--cloud")
    e.add_argument("--gt", required=True, help="ground-truth view manifest")
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="generate with one component disabled")
    a.add_argument("--preset", required=True, choices=sorted(ABLATION_PRESETS))
    _add_generate_flags(a)
    a.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plotdata", help="loss/weight traces from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PriorServiceError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except MeshExtractionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
