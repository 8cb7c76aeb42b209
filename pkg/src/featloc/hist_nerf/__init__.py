from .encoding import EncodingConfig, directional_encode, positional_encode, sinusoidal_encode
from .model import (
    BinCountMismatch,
    FieldOutputs,
    HistNerfModel,
    HistogramEmbedding,
    NerfConfig,
    embed_histogram,
    query_field,
)
from .render import (
    NonMonotonicDepths,
    RenderOutput,
    RenderSettings,
    composite,
    composite_dual,
    psnr,
    render_image,
    render_rays,
    sample_pdf,
)
from .train import NerfSchedule, nerf_loss, train_nerf

__all__ = [
    "EncodingConfig", "directional_encode", "positional_encode", "sinusoidal_encode",
    "BinCountMismatch", "FieldOutputs", "HistNerfModel", "HistogramEmbedding",
    "NerfConfig", "embed_histogram", "query_field", "NonMonotonicDepths",
    "RenderOutput", "RenderSettings", "composite", "composite_dual", "psnr",
    "render_image", "render_rays", "sample_pdf", "NerfSchedule", "nerf_loss",
    "train_nerf",
]
