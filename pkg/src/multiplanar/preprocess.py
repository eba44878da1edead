"""Outlier-robust, channel-wise intensity scaling.

Per channel, voxels at or below the 1st percentile are background. The
remaining voxels give a median and inter-quartile range, and every voxel of
the channel is mapped to ``(x - median) / iqr``. Percentiles use linear
interpolation between order statistics (numpy's default "linear" method).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateIntensityError
from .volume import Volume

log = logging.getLogger(__name__)

MIN_IQR = 1e-12


@dataclass(frozen=True)
class ChannelScale:
    background_threshold: float
    median: float
    iqr: float
    foreground_voxels: int
    fallback_used: bool = False


@dataclass(frozen=True)
class ScaleReport:
    channels: tuple[ChannelScale, ...]

    def to_dict(self) -> dict:
        return {"channels": [asdict(c) for c in self.channels]}


def background_mask(channel: np.ndarray) -> np.ndarray:
    """True where intensity <= the channel's 1st percentile."""
    return channel <= np.percentile(channel, 1.0)


def channel_stats(values: np.ndarray, foreground: np.ndarray) -> tuple[float, float, float]:
    """(1st percentile of all values, median of foreground, IQR of foreground)."""
    threshold = float(np.percentile(values, 1.0))
    fg = values[foreground]
    if fg.size == 0:
        return threshold, float("nan"), 0.0
    p25, median, p75 = np.percentile(fg, [25.0, 50.0, 75.0])
    return threshold, float(median), float(p75 - p25)


def robust_scale(
    volume: Volume,
    *,
    fallback: bool = False,
    foreground: np.ndarray | None = None,
) -> tuple[Volume, ScaleReport]:
    """Scale each channel by its foreground median and IQR.

    ``foreground`` optionally fixes the (X, Y, Z) or (X, Y, Z, C) mask instead
    of deriving it from the 1st percentile. With ``fallback`` a degenerate IQR
    is replaced by 1.0 with a warning instead of raising.
    """
    data = volume.data
    if foreground is not None:
        foreground = np.asarray(foreground, dtype=bool)
        if foreground.ndim == 3:
            foreground = np.broadcast_to(foreground[..., None], data.shape)
    out = np.empty_like(data)
    stats = []
    for c in range(volume.channels):
        values = data[..., c]
        mask = ~background_mask(values) if foreground is None else foreground[..., c]
        threshold, median, iqr = channel_stats(values, mask)
        used_fallback = False
        if not iqr >= MIN_IQR:
            if not fallback:
                raise DegenerateIntensityError(
                    f"channel {c}: foreground IQR {iqr:g} is degenerate "
                    f"({int(mask.sum())} foreground voxels)"
                )
            log.warning("channel %d: degenerate IQR %g, dividing by 1.0", c, iqr)
            if not np.isfinite(median):
                median = float(np.median(values))
            iqr, used_fallback = 1.0, True
        out[..., c] = (values - median) / iqr
        stats.append(ChannelScale(threshold, median, iqr, int(mask.sum()), used_fallback))
    # one fill value serves all channels
    fill = float(np.percentile(out, 1.0))
    return volume.with_data(out, background_fill=fill), ScaleReport(tuple(stats))
