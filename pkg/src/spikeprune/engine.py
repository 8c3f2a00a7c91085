"""Spike dynamics and the steady-state rate proxy.

Three views of the same network:

* `run_unrolled`: every sublayer advances together for T timesteps. Linear
  projections are driven by the previous stage's spikes at the current
  step; the nonlinear stages (attention softmax, layer norm) read running
  average spike rates, so their inputs settle as T grows and the averaged
  rates converge to the rate proxy's fixed point.
* `run_sequential`: sublayers are processed one at a time, each for its own
  budget from a TimestepPlan. The input to each stage is a fresh Bernoulli
  spike train regenerated from the previous stage's converged rates, which
  is what makes per-sublayer timestep budgets independent knobs.
* `rate_proxy_forward` / `proxy_graph`: one differentiable pass where each
  LIF sublayer is replaced by rate = clip(current / v_th, 0, 1). Training
  and importance estimation differentiate this graph.

Rates and spikes are float64 arrays shaped (batch, seq, units).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError
from .model import SUBLAYERS, MaskSet, SpikingModel
from .numerics import RandomStream, bernoulli_matrix

__all__ = [
    "LN_EPS",
    "LifState",
    "TimestepPlan",
    "AsrTrace",
    "lif_step",
    "run_unrolled",
    "run_sequential",
    "rate_proxy_forward",
    "proxy_graph",
    "build_param_vars",
]

# Shared by the simulator and the proxy; they must normalize identically.
LN_EPS = 1e-5


@dataclasses.dataclass
class LifState:
    """Membrane potentials and the previous step's spikes, same shape."""

    membrane: np.ndarray
    spikes: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(np.zeros(shape), np.zeros(shape))


def lif_step(state: LifState, input_current: np.ndarray, v_th, leak: float):
    """One integrate-and-fire update with subtractive reset.

    u' = leak * u + I - s_prev * v_th, spike where u' - v_th >= 0 (so a
    membrane exactly at threshold fires). Returns (new_state, spikes).
    """
    u = leak * state.membrane + input_current - state.spikes * v_th
    spikes = (u - v_th >= 0.0).astype(np.float64)
    return LifState(u, spikes), spikes


class TimestepPlan:
    """Per-sublayer timestep budgets: integer array (num_layers, 6).

    Columns follow SUBLAYERS order. Every entry is at least 1.
    """

    def __init__(self, steps):
        arr = np.asarray(steps)
        if arr.ndim != 2 or arr.shape[1] != len(SUBLAYERS):
            raise InvalidInputError(
                f"plan must be (layers, {len(SUBLAYERS)}), got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise InvalidInputError("plan entries must be integers")
        if arr.min() < 1:
            raise InvalidInputError("plan entries must be >= 1")
        self.steps = arr.astype(np.int64)

    @classmethod
    def uniform(cls, num_layers: int, t: int) -> "TimestepPlan":
        return cls(np.full((num_layers, len(SUBLAYERS)), int(t), dtype=np.int64))

    def get(self, layer: int, name: str) -> int:
        return int(self.steps[layer, SUBLAYERS.index(name)])

    @property
    def num_layers(self) -> int:
        return self.steps.shape[0]

    def mean_timesteps(self) -> float:
        return float(self.steps.mean())

    def max_timesteps(self) -> int:
        return int(self.steps.max())

    def flat(self) -> np.ndarray:
        """Budgets in trace order: L0.key, L0.value, ..., L1.key, ..."""
        return self.steps.ravel()

    def copy(self) -> "TimestepPlan":
        return TimestepPlan(self.steps.copy())

    def __eq__(self, other):
        return isinstance(other, TimestepPlan) and np.array_equal(self.steps, other.steps)


@dataclasses.dataclass
class AsrTrace:
    """Running average spike rate of one sublayer, batch-averaged.

    asr[t] is the per-unit cumulative rate after t+1 timesteps, flattened
    over (seq, units); `converged` is the final row.
    """

    name: str
    asr: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.asr[-1]


def _input_currents(model: SpikingModel, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] != model.config.seq_len:
        raise InvalidInputError(
            f"tokens must be (batch, {model.config.seq_len}), got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= model.config.vocab_size:
        raise InvalidInputError("token ids out of vocabulary range")
    emb = model.embedding[tokens]
    if model.input_scale <= 0.0:
        return np.zeros_like(emb)
    return emb / model.input_scale


def _check_masks(model: SpikingModel, masks: MaskSet) -> None:
    masks.validate_for(model)


def _split_heads(x: np.ndarray, kh: int, hd: int) -> np.ndarray:
    b, n = x.shape[0], x.shape[1]
    return x.reshape(b, n, kh, hd).swapaxes(1, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, kh, n, hd = x.shape
    return x.swapaxes(1, 2).reshape(b, n, kh * hd)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _layernorm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + LN_EPS) * scale + shift


def _attention_current(layer, a_in, a_k, a_v, head_mask, head_dim):
    """Per-head softmax attention over rate-domain K/V; queries are analog."""
    q = a_in @ layer.w_q + layer.b_q
    kh = layer.num_heads(head_dim)
    qh = _split_heads(q, kh, head_dim)
    kh_ = _split_heads(a_k, kh, head_dim)
    vh = _split_heads(a_v, kh, head_dim)
    scores = _softmax(qh @ kh_.swapaxes(-1, -2) / np.sqrt(head_dim))
    ctx = scores @ vh
    ctx = ctx * head_mask.reshape(1, kh, 1, 1)
    return _merge_heads(ctx)


def run_unrolled(model: SpikingModel, masks: MaskSet, tokens, timesteps: int,
                 record_traces: bool = True):
    """Simulate all sublayers jointly for `timesteps` steps.

    Returns (logits, traces): logits read the converged rate of the final
    layer's first token; traces hold one AsrTrace per sublayer in
    layer-major SUBLAYERS order (empty list when record_traces is False).
    """
    if timesteps < 1:
        raise InvalidInputError("timesteps must be >= 1")
    _check_masks(model, masks)
    cfg = model.config
    cur_in = _input_currents(model, tokens)
    b, n = cur_in.shape[0], cur_in.shape[1]
    hd = cfg.head_dim

    state_in = LifState.zeros(cur_in.shape)
    sum_in = np.zeros_like(cur_in)
    states = []
    sums = []
    for layer in model.layers:
        dk = layer.w_k.shape[1]
        shapes = [(b, n, dk), (b, n, dk), (b, n, dk),
                  (b, n, cfg.hidden_size), (b, n, layer.num_neurons()),
                  (b, n, cfg.hidden_size)]
        states.append([LifState.zeros(s) for s in shapes])
        sums.append([np.zeros(s) for s in shapes])

    rows = [[] for _ in range(len(model.layers) * len(SUBLAYERS))] if record_traces else None
    a_out_last = None
    for t in range(1, timesteps + 1):
        state_in, s_in = lif_step(state_in, cur_in, 1.0, cfg.leak)
        sum_in += s_in
        x_s = s_in
        x_a = sum_in / t
        for li, layer in enumerate(model.layers):
            st = states[li]
            sm = sums[li]
            vth = layer.vth
            st[0], s_k = lif_step(st[0], x_s @ layer.w_k + layer.b_k, vth[0], cfg.leak)
            sm[0] += s_k
            st[1], s_v = lif_step(st[1], x_s @ layer.w_v + layer.b_v, vth[1], cfg.leak)
            sm[1] += s_v
            a_k = sm[0] / t
            a_v = sm[1] / t
            i_attn = _attention_current(layer, x_a, a_k, a_v, masks.heads[li], hd)
            st[2], s_att = lif_step(st[2], i_attn, vth[2], cfg.leak)
            sm[2] += s_att
            a_att = sm[2] / t
            pre4 = a_att @ layer.w_o + layer.b_o + x_a
            st[3], s_4 = lif_step(st[3], _layernorm(pre4, layer.ln1_scale, layer.ln1_shift),
                                  vth[3], cfg.leak)
            sm[3] += s_4
            a_4 = sm[3] / t
            st[4], s_5 = lif_step(st[4], s_4 @ layer.w_inter + layer.b_inter,
                                  vth[4], cfg.leak)
            sm[4] += s_5 * masks.neurons[li]
            a_5 = sm[4] / t
            pre6 = a_5 @ layer.w_out + layer.b_out + a_4
            st[5], s_6 = lif_step(st[5], _layernorm(pre6, layer.ln2_scale, layer.ln2_shift),
                                  vth[5], cfg.leak)
            sm[5] += s_6
            a_6 = sm[5] / t
            if record_traces:
                for j in range(len(SUBLAYERS)):
                    rows[li * len(SUBLAYERS) + j].append(
                        (sm[j] / t).mean(axis=0).ravel())
            x_s = s_6
            x_a = a_6
        a_out_last = x_a

    logits = a_out_last[:, 0, :] @ model.cls_w + model.cls_b
    traces = []
    if record_traces:
        for li in range(len(model.layers)):
            for j, name in enumerate(SUBLAYERS):
                traces.append(AsrTrace(f"L{li}.{name}",
                                       np.asarray(rows[li * len(SUBLAYERS) + j])))
    return logits, traces


def _regen(rates: np.ndarray, t: int, streams) -> np.ndarray:
    """Fresh Bernoulli spike trains, one substream per sample: (B, t, ...)."""
    b = rates.shape[0]
    out = np.empty((b, t) + rates.shape[1:])
    flat = rates.reshape(b, -1)
    for i in range(b):
        out[i] = bernoulli_matrix(flat[i], t, streams[i]).reshape((t,) + rates.shape[1:])
    return out


def run_sequential(model: SpikingModel, masks: MaskSet, plan: TimestepPlan,
                   tokens, stream: RandomStream, record_traces: bool = False):
    """Simulate sublayer by sublayer under a per-sublayer timestep plan.

    Each linear stage consumes a Bernoulli spike train regenerated from the
    previous stage's converged rates (clipped rates are valid probabilities
    by construction); attention and the norm stages read averaged rates.
    Sample i draws from stream.derive(i), so results do not depend on batch
    splitting as long as sample indices are stable.

    Returns (logits, traces); traces are per-sublayer cumulative rates of
    length equal to that sublayer's own budget.
    """
    _check_masks(model, masks)
    cfg = model.config
    if plan.num_layers != cfg.num_layers:
        raise InvalidInputError("plan layer count does not match model")
    cur_in = _input_currents(model, tokens)
    b = cur_in.shape[0]
    hd = cfg.head_dim
    streams = [stream.derive(i) for i in range(b)]
    a_x = np.clip(cur_in, 0.0, 1.0)
    traces = []

    def lif_run(current_fn, t, vth, shape, trace_name):
        """Drive one LIF population for t steps; returns averaged rates."""
        st = LifState.zeros(shape)
        total = np.zeros(shape)
        rows = []
        for tau in range(1, t + 1):
            st, s = lif_step(st, current_fn(tau), vth, cfg.leak)
            total += s
            if record_traces:
                rows.append((total / tau).mean(axis=0).ravel())
        if record_traces:
            traces.append(AsrTrace(trace_name, np.asarray(rows)))
        return total / t

    for li, layer in enumerate(model.layers):
        vth = layer.vth
        t_k = plan.get(li, "key")
        s_in = _regen(a_x, t_k, streams)
        a_k = lif_run(lambda tau: s_in[:, tau - 1] @ layer.w_k + layer.b_k,
                      t_k, vth[0], (b, cfg.seq_len, layer.w_k.shape[1]), f"L{li}.key")
        t_v = plan.get(li, "value")
        s_in = _regen(a_x, t_v, streams)
        a_v = lif_run(lambda tau: s_in[:, tau - 1] @ layer.w_v + layer.b_v,
                      t_v, vth[1], (b, cfg.seq_len, layer.w_v.shape[1]), f"L{li}.value")

        i_attn = _attention_current(layer, a_x, a_k, a_v, masks.heads[li], hd)
        a_att = lif_run(lambda tau: i_attn, plan.get(li, "attn"), vth[2],
                        i_attn.shape, f"L{li}.attn")

        t_fc = plan.get(li, "fc")
        s_att = _regen(a_att, t_fc, streams)
        run_mean = np.cumsum(s_att, axis=1) / np.arange(1, t_fc + 1).reshape(1, -1, 1, 1)
        a_4 = lif_run(lambda tau: _layernorm(
                          run_mean[:, tau - 1] @ layer.w_o + layer.b_o + a_x,
                          layer.ln1_scale, layer.ln1_shift),
                      t_fc, vth[3], (b, cfg.seq_len, cfg.hidden_size), f"L{li}.fc")

        t_i = plan.get(li, "inter")
        s_4 = _regen(a_4, t_i, streams)
        st = LifState.zeros((b, cfg.seq_len, layer.num_neurons()))
        total = np.zeros_like(st.membrane)
        rows = []
        for tau in range(1, t_i + 1):
            st, s = lif_step(st, s_4[:, tau - 1] @ layer.w_inter + layer.b_inter,
                             vth[4], cfg.leak)
            total += s * masks.neurons[li]
            if record_traces:
                rows.append((total / tau).mean(axis=0).ravel())
        if record_traces:
            traces.append(AsrTrace(f"L{li}.inter", np.asarray(rows)))
        a_5 = total / t_i

        t_o = plan.get(li, "output")
        s_5 = _regen(a_5, t_o, streams)
        run_mean = np.cumsum(s_5, axis=1) / np.arange(1, t_o + 1).reshape(1, -1, 1, 1)
        a_x = lif_run(lambda tau: _layernorm(
                          run_mean[:, tau - 1] @ layer.w_out + layer.b_out + a_4,
                          layer.ln2_scale, layer.ln2_shift),
                      t_o, vth[5], (b, cfg.seq_len, cfg.hidden_size), f"L{li}.output")

    logits = a_x[:, 0, :] @ model.cls_w + model.cls_b
    return logits, traces


# --- differentiable rate proxy -----------------------------------------------


_PARAM_FIELDS = ("w_k", "b_k", "w_v", "b_v", "w_q", "b_q", "w_o", "b_o",
                 "w_inter", "b_inter", "w_out", "b_out",
                 "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift", "vth")


def build_param_vars(model: SpikingModel) -> dict:
    """Graph leaves for every trainable array, keyed by stable names."""
    params = {"embedding": ad.Var(model.embedding),
              "cls_w": ad.Var(model.cls_w), "cls_b": ad.Var(model.cls_b)}
    for i, layer in enumerate(model.layers):
        for f in _PARAM_FIELDS:
            params[f"L{i}.{f}"] = ad.Var(getattr(layer, f))
    return params


def _ln_graph(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = ad.square(xc).mean(axis=-1, keepdims=True)
    return xc / ad.sqrt(var + LN_EPS) * scale + shift


def proxy_graph(params: dict, config, input_scale: float, tokens: np.ndarray,
                head_masks, neuron_masks, stage_noise=None):
    """Steady-state rate forward pass as an autodiff graph.

    head_masks/neuron_masks are per-layer Vars (or arrays) multiplying the
    per-head attention outputs before spike conversion and the intermediate
    activations after it. Returns (logits, rates, layer_outputs): rates is
    a list of (name, Var) per sublayer in trace order, layer_outputs the
    final rate Var of each encoder layer.

    stage_noise, when given, is called as (layer_idx, sublayer_name,
    rate_array) after each spiking stage and may return an additive
    perturbation of the same shape (or None). The perturbation enters the
    graph as a constant, so gradients pass through it unchanged; it exists
    to expose finite-timestep sampling error to training.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    hd = config.head_dim
    factor = 1.0 / input_scale if input_scale > 0.0 else 0.0
    a = ad.clip01(ad.gather_rows(params["embedding"], tokens) * factor)
    rates = []
    layer_outputs = []
    b, n = tokens.shape

    def noised(var, layer_idx, name):
        if stage_noise is None:
            return var
        delta = stage_noise(layer_idx, name, var.value)
        if delta is None:
            return var
        return var + ad.Var(delta)

    for i in range(len(head_masks)):
        w_k, b_k = params[f"L{i}.w_k"], params[f"L{i}.b_k"]
        vth = params[f"L{i}.vth"]
        kh = w_k.shape[1] // hd
        hm = head_masks[i] if isinstance(head_masks[i], ad.Var) else ad.Var(head_masks[i])
        nm = (neuron_masks[i] if isinstance(neuron_masks[i], ad.Var)
              else ad.Var(neuron_masks[i]))

        a_k = noised(ad.clip01((a @ w_k + b_k) / vth[0]), i, "key")
        a_v = noised(ad.clip01((a @ params[f"L{i}.w_v"] + params[f"L{i}.b_v"])
                               / vth[1]), i, "value")
        q = a @ params[f"L{i}.w_q"] + params[f"L{i}.b_q"]
        qh = q.reshape(b, n, kh, hd).swapaxes(1, 2)
        kh_ = a_k.reshape(b, n, kh, hd).swapaxes(1, 2)
        vh = a_v.reshape(b, n, kh, hd).swapaxes(1, 2)
        scores = ad.softmax(qh @ kh_.swapaxes(2, 3) * (1.0 / np.sqrt(hd)), axis=-1)
        ctx = (scores @ vh) * hm.reshape(1, kh, 1, 1)
        ctx = ctx.swapaxes(1, 2).reshape(b, n, kh * hd)
        a_att = noised(ad.clip01(ctx / vth[2]), i, "attn")

        pre4 = a_att @ params[f"L{i}.w_o"] + params[f"L{i}.b_o"] + a
        ln1 = _ln_graph(pre4, params[f"L{i}.ln1_scale"], params[f"L{i}.ln1_shift"])
        a_4 = noised(ad.clip01(ln1 / vth[3]), i, "fc")

        inter = noised(ad.clip01((a_4 @ params[f"L{i}.w_inter"]
                                  + params[f"L{i}.b_inter"]) / vth[4]), i, "inter")
        a_5 = inter * nm

        pre6 = a_5 @ params[f"L{i}.w_out"] + params[f"L{i}.b_out"] + a_4
        ln2 = _ln_graph(pre6, params[f"L{i}.ln2_scale"], params[f"L{i}.ln2_shift"])
        a_6 = noised(ad.clip01(ln2 / vth[5]), i, "output")

        rates.extend([(f"L{i}.key", a_k), (f"L{i}.value", a_v),
                      (f"L{i}.attn", a_att), (f"L{i}.fc", a_4),
                      (f"L{i}.inter", a_5), (f"L{i}.output", a_6)])
        layer_outputs.append(a_6)
        a = a_6

    logits = a[:, 0, :] @ params["cls_w"] + params["cls_b"]
    return logits, rates, layer_outputs


def cross_entropy(logits, labels) -> "ad.Var":
    """Mean negative log-likelihood; logits may be a Var or an array."""
    if not isinstance(logits, ad.Var):
        logits = ad.Var(logits)
    labels = np.asarray(labels)
    lse = ad.logsumexp(logits, axis=-1)
    picked = ad.take_labels(logits, labels)
    return (lse - picked).mean()


def rate_proxy_forward(model: SpikingModel, masks: MaskSet, tokens):
    """Value-level rate forward: returns (logits, {sublayer name: rates}).

    Rates are (batch, seq, units) arrays; the converged unrolled simulation
    approaches them as timesteps grow.
    """
    _check_masks(model, masks)
    params = build_param_vars(model)
    logits, rates, _ = proxy_graph(params, model.config, model.input_scale,
                                   tokens, masks.heads, masks.neurons)
    return logits.value, {name: var.value for name, var in rates}
