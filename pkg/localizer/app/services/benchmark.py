"""Host latency measurement for single-sample inference."""

from __future__ import annotations

import logging
import time

import numpy as np
from pydantic import BaseModel
from threadpoolctl import threadpool_limits

from app.errors import ConfigError, EmptyInputError
from app.services.model import Localizer, as_image_batch

logger = logging.getLogger(__name__)

MIN_REPETITIONS = 30


class LatencyStats(BaseModel):
    repetitions: int
    median_us: float
    p95_us: float
    mean_us: float
    min_us: float


def latency_bench(
    localizer: Localizer,
    images: np.ndarray,
    repetitions: int = 100,
    *,
    warmup: int = 10,
) -> LatencyStats:
    """
    Time predict_proba on one image at a time, cycling through images.

    BLAS is pinned to a single thread so precisions are compared on equal terms.
    Host numbers say nothing about phone latency; only ratios are meaningful.
    """
    if repetitions < MIN_REPETITIONS:
        raise ConfigError(f"latency_bench needs at least {MIN_REPETITIONS} repetitions, got {repetitions}")
    batch = as_image_batch(images, localizer.side)
    if len(batch) == 0:
        raise EmptyInputError("latency_bench needs at least one image")
    samples = [batch[i:i + 1] for i in range(len(batch))]

    timings = np.empty(repetitions, dtype=np.float64)
    with threadpool_limits(limits=1):
        for i in range(warmup):
            localizer.predict_proba(samples[i % len(samples)])
        for i in range(repetitions):
            sample = samples[i % len(samples)]
            start = time.perf_counter_ns()
            localizer.predict_proba(sample)
            timings[i] = (time.perf_counter_ns() - start) / 1_000.0

    stats = LatencyStats(
        repetitions=repetitions,
        median_us=float(np.median(timings)),
        p95_us=float(np.percentile(timings, 95)),
        mean_us=float(timings.mean()),
        min_us=float(timings.min()),
    )
    logger.info("Latency over %d runs: median %.1f us, p95 %.1f us", repetitions, stats.median_us, stats.p95_us)
    return stats
