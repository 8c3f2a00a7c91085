"""Accumulation-operation (ACs) cost model and the normalized #C metric.

Costs count multiply-accumulate slots in the matrix products of one forward
pass, scaled by each sublayer's timestep budget. Per-head costs multiply by
the active head count, the feed-forward part by active intermediate
neurons, so the total is a function of (masks, plan) that pruning can push
below a budget. Embedding lookup and the classifier are outside the masks'
reach and are excluded.

Counts are computed in exact integer arithmetic when unit counts are
integers; fractional (or autodiff) unit counts flow through the same
formulas, which is how the trainer gets a differentiable cost penalty.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import InvalidInputError
from .model import SUBLAYERS, MaskSet, ModelConfig
from .engine import TimestepPlan

__all__ = [
    "LayerAcs",
    "AcsReport",
    "acs_total",
    "acs_value",
    "acs_baseline",
    "per_sublayer_acs",
    "unit_costs",
    "normalized_c",
]


@dataclasses.dataclass
class LayerAcs:
    acs_qkv: float
    acs_attn: float
    acs_fc: float
    acs_neurons: float

    @property
    def total(self):
        return self.acs_qkv + self.acs_attn + self.acs_fc + self.acs_neurons


@dataclasses.dataclass
class AcsReport:
    layers: list
    total: float
    baseline: float
    ratio: float
    normalized_c: float = None

    def to_dict(self) -> dict:
        return {
            "layers": [dataclasses.asdict(l) for l in self.layers],
            "total": self.total,
            "baseline": self.baseline,
            "ratio": self.ratio,
            "normalized_c": self.normalized_c,
        }


def _layer_parts(config: ModelConfig, h, n, t: dict):
    """The four Appendix-style cost groups for one layer.

    h and n are active head / neuron counts; they may be numbers or graph
    variables. t maps sublayer name to its timestep count; the query
    projection runs inside the attention sublayer, so its timesteps equal
    t["attn"].
    """
    seq = config.seq_len
    d = config.hidden_size
    hd = config.head_dim
    ndh = seq * d * hd
    qkv = h * (ndh * (t["attn"] + t["key"] + t["value"]))
    attn = h * (2 * seq * seq * hd * t["attn"])
    fc = h * (ndh * t["fc"])
    neurons = n * (seq * d * (t["inter"] + t["output"]))
    return qkv, attn, fc, neurons


def _plan_row(plan: TimestepPlan, layer: int) -> dict:
    return {name: int(plan.steps[layer, j]) for j, name in enumerate(SUBLAYERS)}


def acs_value(config: ModelConfig, head_counts, neuron_counts, plan: TimestepPlan):
    """Total ACs M for given per-layer active unit counts (may be fractional)."""
    if len(head_counts) != config.num_layers or len(neuron_counts) != config.num_layers:
        raise InvalidInputError("unit counts must have one entry per layer")
    total = 0
    for l in range(config.num_layers):
        parts = _layer_parts(config, head_counts[l], neuron_counts[l], _plan_row(plan, l))
        for p in parts:
            total = total + p
    return total


def acs_baseline(config: ModelConfig) -> int:
    """M(1, 1, T_conv): every unit active, every sublayer at T_conv."""
    plan = TimestepPlan.uniform(config.num_layers, config.t_conv)
    return acs_value(config, [config.num_heads] * config.num_layers,
                     [config.intermediate_size] * config.num_layers, plan)


def acs_total(config: ModelConfig, masks: MaskSet, plan: TimestepPlan) -> AcsReport:
    """Full cost report for binary masks under a timestep plan."""
    if plan.num_layers != config.num_layers:
        raise InvalidInputError("plan layer count does not match config")
    heads, neurons = masks.active_counts()
    if len(heads) != config.num_layers:
        raise InvalidInputError("mask layer count does not match config")
    layers = []
    total = 0
    for l in range(config.num_layers):
        qkv, attn, fc, neu = _layer_parts(config, heads[l], neurons[l], _plan_row(plan, l))
        layers.append(LayerAcs(qkv, attn, fc, neu))
        total += qkv + attn + fc + neu
    baseline = acs_baseline(config)
    return AcsReport(layers, total, baseline, total / baseline)


def per_sublayer_acs(config: ModelConfig, masks: MaskSet, plan: TimestepPlan) -> list:
    """ACs attributed to each sublayer, in trace order (L0.key, L0.value, ...).

    The attention sublayer's share includes the query projection, which
    runs on its timesteps. Sums to acs_total().total exactly.
    """
    heads, neurons = masks.active_counts()
    seq, d, hd = config.seq_len, config.hidden_size, config.head_dim
    ndh = seq * d * hd
    out = []
    for l in range(config.num_layers):
        h, n = heads[l], neurons[l]
        t = _plan_row(plan, l)
        out.append((f"L{l}.key", h * ndh * t["key"]))
        out.append((f"L{l}.value", h * ndh * t["value"]))
        out.append((f"L{l}.attn", h * (ndh + 2 * seq * seq * hd) * t["attn"]))
        out.append((f"L{l}.fc", h * ndh * t["fc"]))
        out.append((f"L{l}.inter", n * seq * d * t["inter"]))
        out.append((f"L{l}.output", n * seq * d * t["output"]))
    return out


def unit_costs(config: ModelConfig, plan: TimestepPlan):
    """Marginal ACs of one head / one neuron per layer under `plan`.

    Returns (head_costs, neuron_costs) as int64 arrays of length num_layers.
    """
    seq, d, hd = config.seq_len, config.hidden_size, config.head_dim
    ndh = seq * d * hd
    heads = np.empty(config.num_layers, dtype=np.int64)
    neurons = np.empty(config.num_layers, dtype=np.int64)
    for l in range(config.num_layers):
        t = _plan_row(plan, l)
        heads[l] = (ndh * (t["attn"] + t["key"] + t["value"] + t["fc"])
                    + 2 * seq * seq * hd * t["attn"])
        neurons[l] = seq * d * (t["inter"] + t["output"])
    return heads, neurons


def _mean_asr(entry) -> float:
    conv = getattr(entry, "converged", entry)
    return float(np.mean(np.asarray(conv, dtype=np.float64)))


def normalized_c(traces, layer_acs) -> float:
    """Activity-weighted fraction of operations relative to a dense pass.

    traces: per-sublayer AsrTrace objects (or plain rate arrays/scalars);
    layer_acs: matching per-sublayer ACs counts. The first sublayer (fed by
    the encoder input) and the last (nothing downstream) are excluded from
    the numerator: sum_{l=2}^{S-1} a_l * acs_{l+1} / sum_l acs_l in 1-based
    indexing.
    """
    acs = [float(a[1]) if isinstance(a, tuple) else float(a) for a in layer_acs]
    a_means = [_mean_asr(t) for t in traces]
    if len(acs) != len(a_means):
        raise InvalidInputError("traces and ACs lists must have equal length")
    s = len(acs)
    if s < 3:
        raise InvalidInputError("normalized_c needs at least 3 sublayers")
    denom = sum(acs)
    if denom <= 0:
        raise InvalidInputError("total ACs must be positive")
    num = sum(a_means[i] * acs[i + 1] for i in range(1, s - 1))
    return num / denom
