"""Sinusoidal positional encoding for field inputs."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class EncodingConfig:
    """Frequency counts for position/direction encodings."""

    n_freqs_position: int = 10
    n_freqs_direction: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.n_freqs_position < 1 or self.n_freqs_direction < 1:
            raise ValueError("frequency counts must be at least 1")

    def position_dim(self, k: int = 3) -> int:
        return k * ((1 if self.include_input else 0) + 2 * self.n_freqs_position)

    def direction_dim(self, k: int = 3) -> int:
        return k * ((1 if self.include_input else 0) + 2 * self.n_freqs_direction)


def sinusoidal_encode(x: torch.Tensor, n_freqs: int, include_input: bool = True) -> torch.Tensor:
    """Concatenate (optionally) x with [sin(2^i x), cos(2^i x)], i < n_freqs.

    Applied elementwise over the last axis; output width is
    last_dim * (include_input + 2 * n_freqs).
    """
    parts = [x] if include_input else []
    for i in range(n_freqs):
        scaled = (2.0**i) * x
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)


def positional_encode(x: torch.Tensor, cfg: EncodingConfig) -> torch.Tensor:
    return sinusoidal_encode(x, cfg.n_freqs_position, cfg.include_input)


def directional_encode(d: torch.Tensor, cfg: EncodingConfig) -> torch.Tensor:
    return sinusoidal_encode(d, cfg.n_freqs_direction, cfg.include_input)
