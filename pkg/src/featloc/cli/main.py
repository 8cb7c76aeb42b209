"""Command-line pipeline driver.

Subcommands: make-toy, train-nerf, render, train-dfnet, finetune-dm, refine,
eval, plot. Every stage takes ``--config <file>`` plus repeatable
``--override key=value``; stages communicate through checkpoints and data
tables inside ``output_dir``. Failures exit nonzero with a single
machine-parsable ``error: <code>: <detail>`` line on stderr; artifacts are
written atomically (temp file + rename) and each run holds a lock on its
experiment directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch
from filelock import FileLock, Timeout

from ..checkpoint import load_nerf, load_posenet, save_nerf, save_posenet
from ..data import load_scene, make_toy_scene, save_toy_scene, write_image
from ..geometry import pose_error, save_pose_file
from ..hist_nerf import (
    EncodingConfig,
    HistNerfModel,
    NerfConfig,
    NerfSchedule,
    RenderSettings,
    embed_histogram,
    psnr,
    render_image,
    train_nerf,
)
from ..matching import MatchConfig, finetune_unlabeled, loss_landscape, refine_single
from ..posenet import (
    PoseNetConfig,
    PoseNetSchedule,
    PoseRegressor,
    predict_poses,
    train_posenet,
)
from ..report import MetricsReport
from ..viewsynth import ViewSynthConfig
from .config import ConfigError, load_config, require

torch.set_num_threads(1)

SUBCOMMANDS = ("train-nerf", "render", "train-dfnet", "finetune-dm",
               "refine", "eval", "plot", "make-toy")

NERF_CKPT = "nerf.ckpt"
POSENET_CKPT = "posenet.ckpt"
POSENET_DM_CKPT = "posenet_dm.ckpt"


class CliError(Exception):
    """Stage failure with a stable machine-parsable code."""

    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors even for usage problems
        raise CliError("usage", message)


def _atomic_bytes_writer(path: Path, write_fn):
    path.parent.mkdir(parents=True, exist_ok=True)
    # the temp name keeps the final suffix so format-by-extension writers work
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    write_fn(tmp)
    os.replace(tmp, path)


def _write_text(path: Path, text: str):
    _atomic_bytes_writer(path, lambda tmp: tmp.write_text(text))


def _write_json(path: Path, payload):
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


@contextmanager
def _owned_directory(directory: Path):
    """One running process per experiment directory."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(directory / ".featloc.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise CliError("locked",
                       f"directory is in use by another run: {directory}")
    try:
        yield
    finally:
        lock.release()


def _dataset(cfg):
    scene_dir = Path(require(cfg, "scene_dir"))
    if not scene_dir.exists():
        raise CliError("missing-file", f"scene_dir not found: {scene_dir}")
    return load_scene(scene_dir)


def _out_dir(cfg) -> Path:
    return Path(require(cfg, "output_dir"))


def _nerf_config(cfg, dataset) -> NerfConfig:
    scale = cfg["nerf.position_scale"]
    if scale == 0.0:
        scale = 1.0 / dataset.scene_bounds[1]
    return NerfConfig(
        mlp_width=cfg["nerf.mlp_width"], base_depth=cfg["nerf.base_depth"],
        head_depth=cfg["nerf.head_depth"],
        encoding=EncodingConfig(cfg["nerf.n_freqs_position"],
                                cfg["nerf.n_freqs_direction"]),
        position_scale=scale)


def _render_settings(cfg, dataset) -> RenderSettings:
    near, far = dataset.scene_bounds
    return RenderSettings(near=near, far=far, n_coarse=cfg["nerf.n_coarse"],
                          n_fine=cfg["nerf.n_fine"],
                          ray_chunk=cfg["nerf.ray_chunk"])


def _load_nerf_stage(cfg, dataset) -> HistNerfModel:
    path = _out_dir(cfg) / NERF_CKPT
    if not path.exists():
        raise CliError("missing-file",
                       f"{path} not found (run train-nerf first)")
    model = load_nerf(path, expected_config=_nerf_config(cfg, dataset))
    model.eval()
    return model


def _pose_checkpoint_path(cfg) -> Path:
    choice = cfg["pose_checkpoint"]
    out = _out_dir(cfg)
    if choice == "auto":
        path = out / POSENET_DM_CKPT
        return path if path.exists() else out / POSENET_CKPT
    if choice in ("posenet", "posenet_dm"):
        return out / f"{choice}.ckpt"
    raise ConfigError(f"pose_checkpoint must be auto, posenet or posenet_dm, "
                      f"got {choice!r}")


def _posenet_config(cfg) -> PoseNetConfig:
    return PoseNetConfig(
        widths=cfg["dfnet.widths"],
        feature_kernels=cfg["dfnet.feature_kernels"],
        feature_channels=cfg["dfnet.feature_channels"],
        feature_taps=cfg["dfnet.feature_taps"],
        input_short_side=cfg["dfnet.input_short_side"],
        fc_dim=cfg["dfnet.fc_dim"])


def _load_posenet_stage(cfg) -> PoseRegressor:
    path = _pose_checkpoint_path(cfg)
    if not path.exists():
        raise CliError("missing-file",
                       f"{path} not found (run train-dfnet first)")
    model = load_posenet(path, expected_config=_posenet_config(cfg))
    model.eval()
    return model


def _match_config(cfg) -> MatchConfig:
    return MatchConfig(learning_rate=cfg["dm.learning_rate"],
                       batch_size=cfg["dm.batch_size"],
                       feature_levels=cfg["dm.feature_levels"],
                       max_steps=cfg["dm.max_steps"],
                       early_stop_patience=cfg["dm.early_stop_patience"],
                       loss_reduction=cfg["dm.loss_reduction"],
                       render_short_side=cfg["dm.render_short_side"])


def _find_frame(dataset, name: str):
    for split in (dataset.val, dataset.unlabeled, dataset.train):
        for frame in split:
            if frame.name == name:
                return frame
    raise CliError("missing-frame", f"no frame named {name!r} in the dataset")


# ----------------------------------------------------------------- stages


def stage_make_toy(cfg) -> int:
    scene_dir = Path(require(cfg, "scene_dir"))
    with _owned_directory(scene_dir):
        scene, dataset, truth = make_toy_scene(
            seed=cfg["seed"], n_blobs=cfg["toy.n_blobs"],
            n_train=cfg["toy.n_train"], n_val=cfg["toy.n_val"],
            image_size=cfg["toy.image_size"],
            exposure_split=cfg["toy.exposure_split"],
            n_unlabeled=cfg["toy.n_unlabeled"], n_quad=cfg["toy.n_quad"])
        save_toy_scene(scene, dataset, truth, scene_dir)
    print(f"make-toy\tseed={cfg['seed']}\ttrain={len(dataset.train)}\t"
          f"val={len(dataset.val)}\tunlabeled={len(dataset.unlabeled)}\t"
          f"dir={scene_dir}")
    return 0


def stage_train_nerf(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        schedule = NerfSchedule(
            epochs=cfg["nerf.epochs"], lr=cfg["nerf.lr"],
            lr_decay=cfg["nerf.lr_decay"], ray_batch=cfg["nerf.ray_batch"],
            rays_per_epoch=cfg["nerf.rays_per_epoch"] or None,
            n_coarse=cfg["nerf.n_coarse"], n_fine=cfg["nerf.n_fine"],
            lambda_u=cfg["nerf.lambda_u"], seed=cfg["seed"],
            use_histogram=cfg["nerf.use_histogram"])
        torch.manual_seed(cfg["seed"])
        model = HistNerfModel(_nerf_config(cfg, dataset))
        model, metrics = train_nerf(dataset, model, schedule)
        for row in metrics:
            print(f"train-nerf\tepoch={row['epoch']}\tloss={row['loss']:.6f}"
                  f"\tpsnr_holdout={row['psnr_holdout']:.3f}")
        _atomic_bytes_writer(out / NERF_CKPT,
                             lambda tmp: save_nerf(tmp, model))
        _write_json(out / "nerf_metrics.json", metrics)
    print(f"train-nerf\tdone\tcheckpoint={out / NERF_CKPT}\t"
          f"psnr_holdout={metrics[-1]['psnr_holdout']:.3f}")
    return 0


def stage_render(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        model = _load_nerf_stage(cfg, dataset)
        settings = _render_settings(cfg, dataset)
        split = cfg["nerf.render_split"]
        frames = {"train": dataset.train, "val": dataset.val,
                  "unlabeled": dataset.unlabeled}.get(split)
        if frames is None:
            raise ConfigError(f"nerf.render_split must be train, val or "
                              f"unlabeled, got {split!r}")
        frames = [f for f in frames if f.pose is not None]
        if not frames:
            raise CliError("missing-frame", f"split {split!r} has no posed "
                           f"frames to render")
        frames = frames[:cfg["nerf.render_count"]]
        rows = []
        for frame in frames:
            intr = frame.intrinsics
            if cfg["nerf.render_short_side"]:
                intr = intr.scaled_to_short_side(cfg["nerf.render_short_side"])
            embedding = embed_histogram(frame.histogram, model)
            result = render_image(model, frame.pose, intr, embedding,
                                  settings, mode=cfg["nerf.render_mode"])
            rendered = result.rgb_composite \
                if cfg["nerf.render_mode"] == "composite" else result.rgb_static
            stem = frame.name.replace("/", "-")
            _atomic_bytes_writer(out / "renders" / f"{stem}.ppm",
                                 lambda tmp, img=rendered: write_image(tmp, img))
            value = float("nan")
            if rendered.shape == frame.image.shape:
                value = psnr(rendered, frame.image)
            rows.append((frame.name, value))
            print(f"render\tframe={frame.name}\tpsnr={value:.3f}")
        _write_text(out / "renders" / "psnr.csv",
                    "name,psnr\n" + "".join(f"{n},{v:.6f}\n"
                                            for n, v in rows))
    print(f"render\tdone\tcount={len(rows)}\tdir={out / 'renders'}")
    return 0


def stage_train_dfnet(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        nerf_model = _load_nerf_stage(cfg, dataset)
        schedule = PoseNetSchedule(
            epochs=cfg["dfnet.epochs"], lr=cfg["dfnet.lr"],
            batch_size=cfg["dfnet.batch_size"], margin=cfg["dfnet.margin"],
            feature_levels=cfg["dfnet.feature_levels"],
            feature_mode=cfg["dfnet.feature_mode"], seed=cfg["seed"],
            patience=cfg["dfnet.patience"],
            plateau_decay=cfg["dfnet.plateau_decay"],
            plateau_window=cfg["dfnet.plateau_window"],
            render_short_side=cfg["dfnet.render_short_side"],
            restore_best=cfg["dfnet.restore_best"])
        rvs = None
        if cfg["rvs.enabled"]:
            rvs = ViewSynthConfig(
                t_psi=cfg["rvs.t_psi"], r_phi_deg=cfg["rvs.r_phi_deg"],
                d_max=cfg["rvs.d_max"], refresh_every=cfg["rvs.refresh_every"],
                pool_multiplier=cfg["rvs.pool_multiplier"],
                max_attempts=cfg["rvs.max_attempts"],
                render_short_side=cfg["rvs.render_short_side"])
        torch.manual_seed(cfg["seed"])
        model = PoseRegressor(_posenet_config(cfg))
        model, metrics = train_posenet(dataset, nerf_model, model, schedule,
                                       _render_settings(cfg, dataset), rvs)
        for row in metrics:
            print(f"train-dfnet\tepoch={row['epoch']}\tloss={row['loss']:.5f}"
                  f"\tval_t={row['val_translation']:.5f}"
                  f"\tval_r={row['val_rotation']:.4f}")
        _atomic_bytes_writer(out / POSENET_CKPT,
                             lambda tmp: save_posenet(tmp, model))
        _write_json(out / "dfnet_metrics.json", metrics)
    print(f"train-dfnet\tdone\tcheckpoint={out / POSENET_CKPT}")
    return 0


def stage_finetune_dm(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        if not dataset.unlabeled:
            raise CliError("missing-frame",
                           "finetune-dm needs an unlabeled/ split")
        nerf_model = _load_nerf_stage(cfg, dataset)
        path = out / POSENET_CKPT
        if not path.exists():
            raise CliError("missing-file",
                           f"{path} not found (run train-dfnet first)")
        model = load_posenet(path, expected_config=_posenet_config(cfg))
        torch.manual_seed(cfg["seed"])
        model, log = finetune_unlabeled(model, nerf_model, dataset.unlabeled,
                                        _match_config(cfg),
                                        _render_settings(cfg, dataset))
        for row in log:
            print(f"finetune-dm\tstep={row['step']}\tloss={row['loss']:.5f}"
                  f"\tgrad_norm={row['grad_norm']:.6f}")
        _atomic_bytes_writer(out / POSENET_DM_CKPT,
                             lambda tmp: save_posenet(tmp, model))
        _write_json(out / "dm_log.json", log)
    print(f"finetune-dm\tdone\tcheckpoint={out / POSENET_DM_CKPT}")
    return 0


def stage_refine(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        nerf_model = _load_nerf_stage(cfg, dataset)
        model = _load_posenet_stage(cfg)
        frame = _find_frame(dataset, cfg["dm.refine_frame"])
        trajectory = refine_single(model, nerf_model, frame.image,
                                   frame.intrinsics, _match_config(cfg),
                                   cfg["dm.refine_steps"],
                                   _render_settings(cfg, dataset))
        refine_dir = out / "refine"
        for step, pose in enumerate(trajectory):
            _atomic_bytes_writer(
                refine_dir / f"step-{step:06d}.pose.txt",
                lambda tmp, p=pose: save_pose_file(tmp, p))
            if frame.pose is not None:
                err = pose_error(pose, frame.pose)
                print(f"refine\tstep={step}\tt_err={err.translation_error:.5f}"
                      f"\tr_err={err.rotation_error:.4f}")
            else:
                print(f"refine\tstep={step}")
    print(f"refine\tdone\tframe={frame.name}\tsteps={len(trajectory) - 1}\t"
          f"dir={refine_dir}")
    return 0


def stage_eval(cfg) -> int:
    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        if not dataset.val:
            raise CliError("missing-frame", "eval needs a val/ split")
        model = _load_posenet_stage(cfg)
        poses = predict_poses(model, [f.image for f in dataset.val])
        errors = [pose_error(p, f.pose) for p, f in zip(poses, dataset.val)]
        psnr_stats = {}
        count = cfg["eval_psnr_frames"]
        if count > 0 and (out / NERF_CKPT).exists():
            nerf_model = _load_nerf_stage(cfg, dataset)
            settings = _render_settings(cfg, dataset)
            values = []
            for frame in dataset.val[:count]:
                embedding = embed_histogram(frame.histogram, nerf_model)
                rendered = render_image(nerf_model, frame.pose,
                                        frame.intrinsics, embedding,
                                        settings).rgb_composite
                values.append(psnr(rendered, frame.image))
            psnr_stats = {"mean": float(np.mean(values)),
                          "min": float(np.min(values)),
                          "count": len(values)}
        report = MetricsReport.from_errors([f.name for f in dataset.val],
                                           errors, psnr=psnr_stats)
        _write_text(out / "metrics_report.json", report.to_json() + "\n")
        lines = []
        for frame, pose, err in zip(dataset.val, poses, errors):
            lines.append(json.dumps({
                "name": frame.name,
                "translation_error": err.translation_error,
                "rotation_error": err.rotation_error,
                "pose": pose.matrix().tolist(),
            }, sort_keys=True))
        _write_text(out / "frames.jsonl", "\n".join(lines) + "\n")
    print("eval summary")
    print(f"  frames:             {len(errors)}")
    print(f"  median translation: {report.median_translation:.6f}")
    print(f"  median rotation:    {report.median_rotation:.4f} deg")
    if psnr_stats:
        print(f"  psnr mean/min:      {psnr_stats['mean']:.3f} / "
              f"{psnr_stats['min']:.3f} ({psnr_stats['count']} frames)")
    print(f"  report:             {out / 'metrics_report.json'}")
    return 0


def stage_plot(cfg) -> int:
    from . import plots

    dataset = _dataset(cfg)
    out = _out_dir(cfg)
    with _owned_directory(out):
        artifacts = []
        nerf_model = _load_nerf_stage(cfg, dataset)
        model = _load_posenet_stage(cfg)
        settings = _render_settings(cfg, dataset)

        poses = predict_poses(model, [f.image for f in dataset.val])
        errors = [pose_error(p, f.pose) for p, f in zip(poses, dataset.val)]
        artifacts += plots.trajectory_plot(out, dataset.val, poses, errors,
                                           _write_text, _atomic_bytes_writer)

        offsets = [(dt, dr) for dt in cfg["dm.landscape_translations"]
                   for dr in cfg["dm.landscape_rotations_deg"]]
        rows = []
        for frame in dataset.val[:cfg["dm.landscape_frames"]]:
            rows.extend(loss_landscape(model, nerf_model, frame, offsets,
                                       _match_config(cfg), settings,
                                       seed=cfg["seed"]))
        artifacts += plots.landscape_plot(out, rows, _write_text,
                                          _atomic_bytes_writer)

        curves = {}
        for stem in ("nerf_metrics", "dfnet_metrics"):
            path = out / f"{stem}.json"
            if path.exists():
                curves[stem] = json.loads(path.read_text())
        artifacts += plots.training_curves(out, curves, _write_text,
                                           _atomic_bytes_writer)
    for path in artifacts:
        print(f"plot\twrote\t{path}")
    return 0


STAGES = {
    "make-toy": stage_make_toy,
    "train-nerf": stage_train_nerf,
    "render": stage_render,
    "train-dfnet": stage_train_dfnet,
    "finetune-dm": stage_finetune_dm,
    "refine": stage_refine,
    "eval": stage_eval,
    "plot": stage_plot,
}


def main(argv=None) -> int:
    parser = _Parser(prog="featloc",
                     description="camera relocalization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        stage = sub.add_parser(name)
        stage.add_argument("--config", required=True)
        stage.add_argument("--override", action="append", default=[],
                           metavar="KEY=VALUE")
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, tuple(args.override))
        return STAGES[args.command](cfg)
    except CliError as exc:
        _fail(exc.code, str(exc))
    except ConfigError as exc:
        _fail("config", str(exc))
    except FileNotFoundError as exc:
        _fail("missing-file", str(exc))
    except ValueError as exc:
        _fail("bad-value", str(exc))
    return 2


def _fail(code: str, detail: str):
    flat = " ".join(str(detail).split())
    print(f"error: {code}: {flat}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
