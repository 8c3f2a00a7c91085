"""Shared helpers: tiny model factories and an instrumented MAC counter.

The counter is the independent route for checking the closed-form ACs
formulas: it walks the per-timestep dataflow and tallies multiply-accumulate
slots for every matrix product the masked forward pass would execute.
"""

import numpy as np

from spikeprune import ModelConfig, RandomStream, init_model


def tiny_config(**overrides) -> ModelConfig:
    """1-layer model small enough for finite-difference sweeps."""
    kwargs = dict(num_layers=1, hidden_size=8, num_heads=2,
                  intermediate_size=6, seq_len=4, vocab_size=8,
                  num_classes=2, t_conv=10)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def tiny_model(seed: int = 0, **overrides):
    cfg = tiny_config(**overrides)
    return init_model(cfg, RandomStream(seed))


def token_batch(config: ModelConfig, batch: int, stream: RandomStream):
    """Random token rows with the reserved zero slot at position 0."""
    tokens = np.zeros((batch, config.seq_len), dtype=np.int64)
    tokens[:, 1:] = stream.integers(config.vocab_size - 1,
                                    (batch, config.seq_len - 1)) + 1
    labels = stream.integers(config.num_classes, (batch,))
    return tokens, labels


class MacCounter:
    """Tallies multiply-accumulate slots of declared matrix products."""

    def __init__(self):
        self.total = 0

    def matmul(self, rows: int, inner: int, cols: int) -> None:
        self.total += rows * inner * cols


def brute_force_acs(config: ModelConfig, head_keep, neuron_keep, plan) -> int:
    """Walk the masked forward pass timestep by timestep, counting MACs.

    head_keep/neuron_keep are per-layer kept-unit counts. Pruned heads and
    neurons execute nothing; the query projection runs once per attention
    timestep. Mirrors the dataflow, not the cost formulas.
    """
    n = config.seq_len
    d = config.hidden_size
    hd = config.head_dim
    counter = MacCounter()
    for l in range(config.num_layers):
        h = int(head_keep[l])
        dn = int(neuron_keep[l])
        for _ in range(plan.get(l, "key")):
            for _ in range(h):
                counter.matmul(n, d, hd)
        for _ in range(plan.get(l, "value")):
            for _ in range(h):
                counter.matmul(n, d, hd)
        for _ in range(plan.get(l, "attn")):
            for _ in range(h):
                counter.matmul(n, d, hd)      # query projection
                counter.matmul(n, hd, n)      # scores
                counter.matmul(n, n, hd)      # context
        for _ in range(plan.get(l, "fc")):
            counter.matmul(n, h * hd, d)
        for _ in range(plan.get(l, "inter")):
            counter.matmul(n, d, dn)
        for _ in range(plan.get(l, "output")):
            counter.matmul(n, dn, d)
    return counter.total
