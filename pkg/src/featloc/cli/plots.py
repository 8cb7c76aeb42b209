"""Figure and table rendering for the ``plot`` subcommand.

Each helper writes matplotlib figures to files (headless Agg backend) next to
a CSV holding the plotted numbers, and returns the written paths.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _save_figure(atomic_writer, path: Path, fig):
    atomic_writer(path, lambda tmp: fig.savefig(tmp, dpi=120))
    plt.close(fig)


def trajectory_plot(out: Path, frames, poses, errors, write_text,
                    atomic_writer) -> list:
    """Top-down view of ground-truth vs predicted camera positions."""
    rows = ["name,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z,"
            "translation_error,rotation_error"]
    gt = np.array([f.pose.translation for f in frames])
    pred = np.array([p.translation for p in poses])
    rot_err = np.array([e.rotation_error for e in errors])
    for f, p, e in zip(frames, poses, errors):
        g, q = f.pose.translation, p.translation
        rows.append(f"{f.name},{g[0]:.6f},{g[1]:.6f},{g[2]:.6f},"
                    f"{q[0]:.6f},{q[1]:.6f},{q[2]:.6f},"
                    f"{e.translation_error:.6f},{e.rotation_error:.6f}")
    csv_path = out / "trajectory.csv"
    write_text(csv_path, "\n".join(rows) + "\n")

    fig, ax = plt.subplots(figsize=(6, 6))
    for g, q in zip(gt, pred):
        ax.plot([g[0], q[0]], [g[1], q[1]], color="0.8", lw=0.8, zorder=1)
    ax.scatter(gt[:, 0], gt[:, 1], c="tab:green", s=18, label="ground truth",
               zorder=2)
    sc = ax.scatter(pred[:, 0], pred[:, 1], c=rot_err, cmap="viridis", s=18,
                    label="predicted", zorder=3)
    fig.colorbar(sc, ax=ax, label="rotation error (deg)")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("camera positions (top-down)")
    ax.legend()
    ax.set_aspect("equal")
    png_path = out / "trajectory.png"
    _save_figure(atomic_writer, png_path, fig)
    return [csv_path, png_path]


def landscape_plot(out: Path, rows, write_text, atomic_writer) -> list:
    """Direct-matching loss versus pose offset, as scatter plus table."""
    lines = ["delta_t,delta_r_deg,dm_loss"]
    for dt, dr, value in rows:
        lines.append(f"{dt:.6f},{dr:.6f},{value:.6f}")
    csv_path = out / "loss_landscape.csv"
    write_text(csv_path, "\n".join(lines) + "\n")

    data = np.array([[dt, dr, v] for dt, dr, v in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    sc = ax.scatter(data[:, 0], data[:, 2], c=data[:, 1], cmap="plasma", s=20)
    fig.colorbar(sc, ax=ax, label="rotation offset (deg)")
    ax.set_xlabel("translation offset")
    ax.set_ylabel("dm loss")
    ax.set_title("feature-matching loss landscape")
    png_path = out / "loss_landscape.png"
    _save_figure(atomic_writer, png_path, fig)
    return [csv_path, png_path]


def training_curves(out: Path, curves: dict, write_text,
                    atomic_writer) -> list:
    """Loss / validation curves from the saved per-epoch training logs."""
    written = []
    for stem, metrics in curves.items():
        if not metrics:
            continue
        keys = [k for k, v in metrics[0].items()
                if k != "epoch" and isinstance(v, (int, float))
                and not isinstance(v, bool)]
        lines = ["epoch," + ",".join(keys)]
        for row in metrics:
            cells = ["" if row[k] is None else f"{row[k]:.6f}" for k in keys]
            lines.append(f"{row['epoch']}," + ",".join(cells))
        csv_path = out / f"{stem}_curve.csv"
        write_text(csv_path, "\n".join(lines) + "\n")
        written.append(csv_path)

        epochs = [row["epoch"] for row in metrics]
        plot_keys = [k for k in keys if k not in ("lr", "seconds")]
        fig, axes = plt.subplots(1, len(plot_keys),
                                 figsize=(4 * len(plot_keys), 3.2),
                                 squeeze=False)
        for ax, key in zip(axes[0], plot_keys):
            values = [row[key] for row in metrics]
            ax.plot(epochs, values)
            ax.set_xlabel("epoch")
            ax.set_title(key)
        fig.suptitle(stem.replace("_", " "))
        fig.tight_layout()
        png_path = out / f"{stem}_curve.png"
        _save_figure(atomic_writer, png_path, fig)
        written.append(png_path)
    return written
