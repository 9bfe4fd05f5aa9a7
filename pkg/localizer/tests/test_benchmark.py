import numpy as np
import pytest

from app.errors import ConfigError, EmptyInputError
from app.services.benchmark import MIN_REPETITIONS, latency_bench
from app.services.model import TrainConfig, build_model
from app.services.quantization import quantize_f16, quantize_int8
from builders import FixedLocalizer, synthetic_grid


def _images(count: int = 8, side: int = 23) -> np.ndarray:
    return np.random.default_rng(0).uniform(size=(count, side, side, 1)).astype(np.float32)


def test_latency_bench_times_single_samples() -> None:
    localizer = FixedLocalizer(synthetic_grid(3), side=4)
    images = np.zeros((5, 4, 4, 1), dtype=np.float32)
    stats = latency_bench(localizer, images, repetitions=MIN_REPETITIONS, warmup=2)
    assert stats.repetitions == 30
    assert len(localizer.calls) == 32
    assert set(localizer.calls) == {(1, 4, 4, 1)}
    assert 0 <= stats.min_us <= stats.median_us <= stats.p95_us


def test_latency_bench_rejects_too_few_repetitions_and_no_images() -> None:
    localizer = FixedLocalizer(synthetic_grid(3), side=4)
    with pytest.raises(ConfigError):
        latency_bench(localizer, np.zeros((1, 4, 4, 1)), repetitions=29)
    with pytest.raises(EmptyInputError):
        latency_bench(localizer, np.zeros((0, 4, 4, 1)))


def test_quantized_models_are_not_slower_than_float32() -> None:
    model = build_model(23, synthetic_grid(823), TrainConfig())
    images = _images()
    int8, f16 = quantize_int8(model), quantize_f16(model)
    f32_median = latency_bench(model, images, repetitions=300, warmup=20).median_us
    assert latency_bench(int8, images, repetitions=300, warmup=20).median_us <= f32_median
    assert latency_bench(f16, images, repetitions=300, warmup=20).median_us <= f32_median


def test_fewer_classes_are_not_slower() -> None:
    images = _images()
    small = build_model(23, synthetic_grid(2), TrainConfig())
    large = build_model(23, synthetic_grid(823), TrainConfig())
    small_median = latency_bench(small, images, repetitions=300, warmup=20).median_us
    assert small_median <= latency_bench(large, images, repetitions=300, warmup=20).median_us
