"""Command-line pipeline driver.

Subcommands: comap, enhance, train-proximity, eval-loss, optimize-demo, synth.
All parameters live in a JSON config (--config) which individual flags
override; every run writes a report.json embedding the fully resolved config,
CSV files for tabular results, and PNG figures alongside. Logs go to standard
error as key=value lines; files on disk are the machine interface.

Exit codes: 0 success, 2 input/validation error, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import enhance as enh
from . import figures, proximity, scene_io, synth
from .config import RunConfig
from .covismap import build_covis_map, refine_covis_map, scene_covis_score
from .errors import CovisError, EmptyInput, InputError, MissingFile
from .proximity import GaussianSet


def log(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()), file=sys.stderr, flush=True)


def _parallel_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _write_report(out_dir: Path, payload: dict) -> None:
    with open(out_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg: RunConfig, *names) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise InputError(f"--{name.replace('_', '-')} is required for this command")


def _out_dir(cfg: RunConfig) -> Path:
    _require(cfg, "out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(cfg: RunConfig) -> int:
    return cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)


def _load_scene(cfg: RunConfig) -> scene_io.SceneBundle:
    _require(cfg, "scene")
    return scene_io.load_scene(cfg.scene, corr_dir=cfg.corr, depth_dir=cfg.depth)


def _build_maps(bundle, cfg: RunConfig):
    """Unrefined covisibility maps for every view, in view order."""
    by_src = {}
    for cset in bundle.correspondences:
        by_src.setdefault(cset.src_view, []).append(cset)

    def _one(view):
        return build_covis_map(
            view,
            by_src.get(view.view_id, []),
            n_views=len(bundle.views),
            min_conf=cfg.min_conf,
        )

    return _parallel_map(_one, bundle.views, _threads(cfg))


def _load_maps(cfg: RunConfig, views, refined: bool):
    _require(cfg, "maps")
    maps = []
    for view in views:
        path = scene_io.covis_path(cfg.maps, view.view_id, refined=refined)
        if not path.is_file():
            raise MissingFile(f"missing covisibility map {path}")
        maps.append(scene_io.read_covis_map_image(path))
    return maps


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_comap(cfg: RunConfig) -> int:
    bundle = _load_scene(cfg)
    out = _out_dir(cfg)
    raw_maps = _build_maps(bundle, cfg)
    refined = [refine_covis_map(m, cfg.kernel_radius) for m in raw_maps]
    score = scene_covis_score(refined)
    for raw, ref in zip(raw_maps, refined):
        scene_io.write_covis_map_image(raw, scene_io.covis_path(out, raw.view_id))
        scene_io.write_covis_map_image(
            ref, scene_io.covis_path(out, ref.view_id, refined=True)
        )
    with open(out / "covis_means.csv", "w") as fh:
        fh.write("view_id,mean\n")
        for m, mean in zip(refined, score.per_view_means):
            fh.write(f"{m.view_id},{mean:.17g}\n")
    figures.save_covis_figure(refined, score, out / "covis_score.png")
    _write_report(
        out,
        {
            "command": "comap",
            "config": cfg.resolved(),
            "S": score.S,
            "per_view_means": {
                str(m.view_id): float(mean)
                for m, mean in zip(refined, score.per_view_means)
            },
            "n_views": len(bundle.views),
        },
    )
    log(cmd="comap", S=f"{score.S:.6f}", views=len(bundle.views))
    return 0


def cmd_enhance(cfg: RunConfig) -> int:
    bundle = _load_scene(cfg)
    out = _out_dir(cfg)
    maps = _build_maps(bundle, cfg)
    result = enh.enhance_scene(
        bundle,
        maps,
        gate_px=cfg.gate_px,
        epsilon=cfg.epsilon,
        dedup_radius=cfg.dedup_radius,
        stride=cfg.stride,
        include_offset=cfg.include_offset,
    )
    for note in result.warnings:
        log(cmd="enhance", warning=f"\"{note}\"")
    scene_io.write_ply(result.merged, out / "merged.ply")
    for vid, mono in sorted(result.mono_scaled.items()):
        scene_io.write_ply(mono, out / f"mono_scaled_{vid:04d}.ply")
    scene_io.write_ply(result.final, out / "final.ply")
    stats = result.stats()
    figures.save_stage_sizes_figure(stats, out / "stage_sizes.png")
    _write_report(
        out, {"command": "enhance", "config": cfg.resolved(), "stats": stats}
    )
    log(
        cmd="enhance",
        merged=stats["n_merged"],
        low=stats["n_merged_low"],
        final=stats["n_final"],
    )
    return 0


def cmd_train_proximity(cfg: RunConfig) -> int:
    _require(cfg, "cloud")
    out = _out_dir(cfg)
    cloud = scene_io.read_ply(cfg.cloud)
    if len(cloud) == 0:
        raise EmptyInput(f"{cfg.cloud} holds no points")
    ts = proximity.make_training_set(
        cloud, ratio=cfg.ratio, r_neg=cfg.r_neg, seed=cfg.seed
    )
    model = proximity.train_classifier(ts, iters=cfg.iters, lr=cfg.lr, seed=cfg.seed)
    proximity.save_model(model, out / "model.cmpx")
    with open(out / "training_curve.csv", "w") as fh:
        fh.write("iteration,loss\n")
        for i, loss in enumerate(model.loss_curve):
            fh.write(f"{i},{loss:.17g}\n")
    figures.save_curve_figure(
        np.arange(len(model.loss_curve)),
        model.loss_curve,
        "iteration",
        "binary cross-entropy",
        "classifier training",
        out / "training_curve.png",
        logy=True,
    )
    _write_report(
        out,
        {
            "command": "train-proximity",
            "config": cfg.resolved(),
            "n_positives": len(ts.positives),
            "n_negatives": len(ts.negatives),
            "normalization": {"center": list(ts.center), "scale": ts.scale},
            "initial_loss": float(model.loss_curve[0]),
            "final_loss": float(model.loss_curve[-1]),
        },
    )
    log(
        cmd="train-proximity",
        iters=cfg.iters,
        final_loss=f"{model.loss_curve[-1]:.6g}",
    )
    return 0


def cmd_eval_loss(cfg: RunConfig) -> int:
    _require(cfg, "model", "gaussians")
    if cfg.view_id is None:
        raise InputError("--view-id is required for this command")
    bundle = _load_scene(cfg)
    out = _out_dir(cfg)
    model = proximity.load_model(cfg.model)
    maps = _load_maps(cfg, bundle.views, refined=True)
    score = scene_covis_score(maps)
    view = bundle.view_by_id(cfg.view_id)
    cmap = maps[[v.view_id for v in bundle.views].index(cfg.view_id)]
    cloud = scene_io.read_ply(cfg.gaussians)
    if len(cloud) == 0:
        raise EmptyInput(f"{cfg.gaussians} holds no points")
    gaussians = GaussianSet(positions=cloud.positions)
    result = proximity.proximity_loss(model, gaussians, view, cmap, score)
    contributions = result.contributions()
    with open(out / "per_gaussian.csv", "w") as fh:
        fh.write("index,chi,weight,s,contribution\n")
        for i in range(len(gaussians)):
            fh.write(
                f"{i},{int(result.chi[i])},{result.weights[i]:.17g},"
                f"{result.scores[i]:.17g},{contributions[i]:.17g}\n"
            )
    figures.save_loss_eval_figure(result, out / "loss_eval.png")
    _write_report(
        out,
        {
            "command": "eval-loss",
            "config": cfg.resolved(),
            "loss": result.total,
            "S": score.S,
            "w_out": proximity.weight_out(score),
            "n_gaussians": len(gaussians),
            "n_in_frustum": int(result.chi.sum()),
        },
    )
    print(f"{result.total:.17g}")
    log(cmd="eval-loss", loss=f"{result.total:.6g}", view=cfg.view_id)
    return 0


def cmd_optimize_demo(cfg: RunConfig) -> int:
    _require(cfg, "model", "scene")
    bundle = _load_scene(cfg)
    out = _out_dir(cfg)
    model = proximity.load_model(cfg.model)
    maps = _load_maps(cfg, bundle.views, refined=True)
    score = scene_covis_score(maps)
    gt_dir = Path(cfg.scene) / "gt"
    gt = synth.read_ground_truth(gt_dir)

    rng = np.random.default_rng(cfg.seed)
    lo = model.center - model.scale
    hi = model.center + model.scale
    positions = rng.uniform(lo, hi, size=(cfg.n_points, 3))

    distances = [float(np.mean(synth.scene_distance(gt.surfaces, positions)))]
    snapshots = {0: positions.copy()}

    def on_step(step, pos):
        distances.append(float(np.mean(synth.scene_distance(gt.surfaces, pos))))
        if step % cfg.snapshot_every == 0 or step == cfg.steps:
            snapshots[step] = pos.copy()

    final_pos = proximity.descend_positions(
        model,
        bundle.views,
        maps,
        score,
        positions,
        steps=cfg.steps,
        step_size=cfg.step_size,
        on_step=on_step,
    )
    for step in sorted(snapshots):
        cloud = proximity.classification_cloud(
            _as_cloud(snapshots[step]),
            proximity.classify_cloud(model, _as_cloud(snapshots[step]))[0],
        )
        scene_io.write_ply(cloud, out / f"step_{step:04d}.ply")
    with open(out / "convergence.csv", "w") as fh:
        fh.write("step,mean_distance\n")
        for i, d in enumerate(distances):
            fh.write(f"{i},{d:.17g}\n")
    figures.save_curve_figure(
        np.arange(len(distances)),
        distances,
        "step",
        "mean distance to surface",
        "proximity-loss descent",
        out / "convergence.png",
    )
    _write_report(
        out,
        {
            "command": "optimize-demo",
            "config": cfg.resolved(),
            "initial_mean_distance": distances[0],
            "final_mean_distance": distances[-1],
            "reduction": 1.0 - distances[-1] / distances[0] if distances[0] else 0.0,
        },
    )
    log(
        cmd="optimize-demo",
        steps=cfg.steps,
        initial=f"{distances[0]:.6g}",
        final=f"{distances[-1]:.6g}",
    )
    return 0


def _as_cloud(positions):
    from .cloud import SOURCE_MONO, PointCloud

    return PointCloud.build(positions, source=SOURCE_MONO)


def cmd_synth(cfg: RunConfig, noise_px: float, dropout: float, seed_flag) -> int:
    _require(cfg, "spec")
    out = _out_dir(cfg)
    spec = synth.SceneSpec.from_json(cfg.spec)
    if seed_flag is not None:
        spec.seed = int(seed_flag)
    bundle, gt = synth.generate_scene(spec)
    scene_io.write_colmap_reconstruction(bundle.views, bundle.colmap_points, out)
    for vid, depth in sorted(bundle.depth_maps.items()):
        scene_io.write_depth_map(depth, scene_io.depth_path(out, vid))
    csets = synth.oracle_correspondences(
        bundle, gt, noise_px=noise_px, dropout=dropout, seed=spec.seed
    )
    n_matches = 0
    for cset in csets:
        if len(cset) == 0:
            continue  # the line-per-match format cannot express an empty pair
        scene_io.write_correspondences(
            cset, scene_io.correspondence_path(out, cset.src_view, cset.dst_view)
        )
        n_matches += len(cset)
    synth.write_ground_truth(gt, out / "gt")
    with open(out / "scene_spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_report(
        out,
        {
            "command": "synth",
            "config": cfg.resolved(),
            "spec": spec.to_dict(),
            "noise_px": noise_px,
            "dropout": dropout,
            "n_views": len(bundle.views),
            "n_colmap_points": len(bundle.colmap_points),
            "n_matches": n_matches,
        },
    )
    log(cmd="synth", views=len(bundle.views), matches=n_matches)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--scene", help="directory with a text reconstruction")
    parser.add_argument("--corr", help="correspondence directory (default: scene)")
    parser.add_argument("--depth", help="depth-map directory (default: scene)")
    parser.add_argument("--maps", help="directory with covisibility PGMs")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--threads", type=int, help="worker threads per stage")
    parser.add_argument("--gate-px", type=float, dest="gate_px",
                        help="triangulation reprojection gate, pixels")
    parser.add_argument("--epsilon", type=float,
                        help="merge distance threshold, meters (default: auto)")
    parser.add_argument("--lambda", type=float, dest="lam",
                        help="photometric blend weight in [0, 1]")
    parser.add_argument("--kernel-radius", type=int, dest="kernel_radius",
                        help="morphological refinement radius, pixels")
    parser.add_argument("--min-conf", type=float, dest="min_conf",
                        help="minimum match confidence")
    parser.add_argument("--stride", type=int, help="depth unprojection stride, pixels")


_CONFIG_KEYS = (
    "scene", "corr", "depth", "maps", "out", "model", "cloud", "gaussians",
    "spec", "view_id", "gate_px", "epsilon", "dedup_radius", "kernel_radius",
    "stride", "min_conf", "ratio", "r_neg", "iters", "lr", "seed",
    "include_offset", "lam", "steps", "n_points", "step_size",
    "snapshot_every", "threads",
)


def _config_from_args(args) -> RunConfig:
    overrides = {
        key: getattr(args, key) for key in _CONFIG_KEYS if hasattr(args, key)
    }
    return RunConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covis",
        description="Covisibility maps, point-cloud enhancement, and "
        "proximity-weighted supervision for sparse multi-view scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("comap", help="build covisibility maps and the scene score")
    _add_common(p)

    p = sub.add_parser("enhance", help="enhance the initial point cloud")
    _add_common(p)
    p.add_argument("--dedup-radius", type=float, dest="dedup_radius",
                   help="final-cloud dedup radius, meters (default: epsilon)")
    p.add_argument("--no-offset", dest="include_offset", action="store_false",
                   default=None, help="fit scale without the offset term")

    p = sub.add_parser("train-proximity", help="train the proximity classifier")
    _add_common(p)
    p.add_argument("--cloud", help="PLY with the enhanced cloud (positives)")
    p.add_argument("--ratio", type=float, help="negatives per positive")
    p.add_argument("--r-neg", type=float, dest="r_neg",
                   help="minimum negative distance, meters (default: auto)")
    p.add_argument("--iters", type=int, help="training iterations")
    p.add_argument("--lr", type=float, help="learning rate")

    p = sub.add_parser("eval-loss", help="evaluate the weighted proximity loss")
    _add_common(p)
    p.add_argument("--model", help="trained classifier file")
    p.add_argument("--gaussians", help="PLY with Gaussian positions")
    p.add_argument("--view-id", type=int, dest="view_id", help="view to weight against")

    p = sub.add_parser("optimize-demo", help="descend positions under the loss alone")
    _add_common(p)
    p.add_argument("--model", help="trained classifier file")
    p.add_argument("--steps", type=int, help="descent steps")
    p.add_argument("--n-points", type=int, dest="n_points", help="points to optimize")
    p.add_argument("--step-size", type=float, dest="step_size",
                   help="step length in normalized coordinates")
    p.add_argument("--snapshot-every", type=int, dest="snapshot_every",
                   help="PLY snapshot interval, steps")

    p = sub.add_parser("synth", help="generate a ground-truthed synthetic scene")
    _add_common(p)
    p.add_argument("--spec", help="scene description JSON")
    p.add_argument("--noise-px", type=float, default=0.0, dest="noise_px",
                   help="correspondence noise std, pixels")
    p.add_argument("--dropout", type=float, default=0.0,
                   help="fraction of matches to drop")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "comap":
            return cmd_comap(cfg)
        if args.command == "enhance":
            return cmd_enhance(cfg)
        if args.command == "train-proximity":
            return cmd_train_proximity(cfg)
        if args.command == "eval-loss":
            return cmd_eval_loss(cfg)
        if args.command == "optimize-demo":
            return cmd_optimize_demo(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args.noise_px, args.dropout, args.seed)
        raise InputError(f"unknown command {args.command}")
    except CovisError as exc:
        log(error=type(exc).__name__, detail=f"\"{exc}\"")
        return exc.exit_code
    except OSError as exc:
        log(error="OSError", detail=f"\"{exc}\"")
        return 4


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
