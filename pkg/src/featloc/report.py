"""Evaluation reports: per-frame pose errors, median metrics, PSNR stats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .geometry import PoseError


class EmptyList(ValueError):
    """Median metrics need at least one error entry."""


def _lower_median(values: list) -> float:
    """The ceil(n/2)-th order statistic (1-indexed) of the ascending sort.

    For odd n this is the usual median; for even n the lower of the two
    middle values, which keeps the statistic an actual sample value and
    makes cross-run comparisons exact.
    """
    n = len(values)
    return sorted(values)[(n + 1) // 2 - 1]


def median_metrics(errors: list) -> tuple:
    """(median translation, median rotation) over PoseErrors, each component
    taken independently with the lower-median convention."""
    if not errors:
        raise EmptyList("no pose errors to summarize")
    return (_lower_median([e.translation_error for e in errors]),
            _lower_median([e.rotation_error for e in errors]))


@dataclass(frozen=True)
class MetricsReport:
    """Per-frame pose errors plus the derived medians and renderer PSNR
    statistics. Medians must equal what median_metrics recomputes from the
    per-frame list."""

    frames: list  # rows: {"name", "translation_error", "rotation_error"}
    median_translation: float
    median_rotation: float
    psnr: dict = field(default_factory=dict)

    def __post_init__(self):
        errors = [PoseError(r["translation_error"], r["rotation_error"])
                  for r in self.frames]
        med_t, med_r = median_metrics(errors)
        if med_t != self.median_translation or med_r != self.median_rotation:
            raise ValueError("medians do not match the per-frame list")

    @staticmethod
    def from_errors(names: list, errors: list, psnr: dict = None) -> "MetricsReport":
        frames = [{"name": n, "translation_error": e.translation_error,
                   "rotation_error": e.rotation_error}
                  for n, e in zip(names, errors)]
        med_t, med_r = median_metrics(errors)
        return MetricsReport(frames=frames, median_translation=med_t,
                             median_rotation=med_r, psnr=psnr or {})

    def to_json(self) -> str:
        payload = {
            "frames": self.frames,
            "median_translation": self.median_translation,
            "median_rotation": self.median_rotation,
            "psnr": self.psnr,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        payload = json.loads(text)
        return MetricsReport(frames=payload["frames"],
                             median_translation=payload["median_translation"],
                             median_rotation=payload["median_rotation"],
                             psnr=payload.get("psnr", {}))
