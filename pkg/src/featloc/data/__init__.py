from .dataset import (
    Frame,
    MissingPose,
    SceneDataset,
    auto_spacing,
    load_scene,
    make_frame,
    save_scene,
    subsample_training,
)
from .histogram import LuminanceHistogram, compute_luminance_histogram, luma
from .images import UnreadableImage, quantize16, read_image, write_image
from .toy import (
    Blob,
    ToyScene,
    apply_exposure,
    load_toy_scene,
    make_toy_scene,
    oracle_render,
    save_toy_scene,
)

__all__ = [
    "Frame", "MissingPose", "SceneDataset", "auto_spacing", "load_scene",
    "make_frame", "save_scene", "subsample_training", "LuminanceHistogram",
    "compute_luminance_histogram", "luma", "UnreadableImage", "quantize16",
    "read_image", "write_image", "Blob", "ToyScene", "apply_exposure",
    "load_toy_scene", "make_toy_scene", "oracle_render", "save_toy_scene",
]
