"""The three reference models with seeded random weights."""
from __future__ import annotations

from .ir import Attention, Conv1D, Dense, Flatten, MaxPool1D, ModelIR, random_weights


def mlp_packet(seed: int = 0) -> ModelIR:
    """Per-packet MLP 6-12-6-3-2 (benign / malicious)."""
    layers = [Dense(6, 12, "relu", "fc1"), Dense(12, 6, "relu", "fc2"),
              Dense(6, 3, "relu", "fc3"), Dense(3, 2, "none", "fc4")]
    return ModelIR("usecase1", (1, 6), layers, random_weights(layers, seed), input_scale=1 / 16)


def cnn_flow(seed: int = 0, classes: int = 162) -> ModelIR:
    """1D-CNN over a flow's first 20 inter-arrival intervals."""
    layers = [
        Conv1D(3, 1, 32, 1, 1, "relu", "conv1"), MaxPool1D(2, True, "pool1"),
        Conv1D(3, 32, 32, 1, 1, "relu", "conv2"), MaxPool1D(2, True, "pool2"),
        Conv1D(3, 32, 32, 1, 1, "relu", "conv3"), MaxPool1D(2, True, "pool3"),
        Flatten("flat"), Dense(96, 128, "relu", "fc"), Dense(128, classes, "none", "out"),
    ]
    return ModelIR("usecase2", (20, 1), layers, random_weights(layers, seed), input_scale=1 / 16)


def transformer_flow(seed: int = 0) -> ModelIR:
    """Single-head attention over 15 payload rows of 16 bytes, then a 64-128-64 MLP."""
    layers = [Attention(15, 16, 64, "attn"), Dense(64, 128, "gelu", "mlp1"),
              Dense(128, 64, "none", "mlp2")]
    return ModelIR("usecase3", (15, 16), layers, random_weights(layers, seed), input_scale=1 / 128)


BUILDERS = {"usecase1": mlp_packet, "usecase2": cnn_flow, "usecase3": transformer_flow}
