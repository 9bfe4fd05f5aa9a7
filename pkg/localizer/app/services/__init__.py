"""Pipeline stages: datasets, gridding, model, training, quantization, storage and evaluation."""
