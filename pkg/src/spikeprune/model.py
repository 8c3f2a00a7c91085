"""Model state: configuration, weights, masks, and checkpoint files.

A model is a token embedding, a stack of encoder layers, and a linear
classifier head. Each encoder layer owns six spiking sublayers in a fixed
order (key, value, attn, fc, inter, output); the simulator and the rate
proxy in `engine` both read the weights defined here.

Pruning state lives outside the weights: a MaskSet holds binary head and
neuron masks (plus optional relaxed values used while mask variables are
being trained), and masks can be folded into the weights structurally with
`apply_masks`, which slices the corresponding rows and columns.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .errors import CheckpointError, InvalidInputError
from .numerics import RandomStream

__all__ = [
    "SUBLAYERS",
    "ModelConfig",
    "LayerParams",
    "SpikingModel",
    "MaskSet",
    "init_model",
    "apply_masks",
    "binarize_weights",
    "save_checkpoint",
    "load_checkpoint",
]

# Sublayer order inside one encoder layer. Everything indexed per sublayer
# (thresholds, timestep plans, cost breakdowns, traces) uses this order.
SUBLAYERS = ("key", "value", "attn", "fc", "inter", "output")

FORMAT_TAG = "spikeprune/v1"


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture plus the simulation/pruning constants tied to it.

    head_dim is derived (hidden_size // num_heads) and never set directly.
    leak is the membrane decay per timestep; 1.0 keeps full memory.
    """

    num_layers: int
    hidden_size: int
    num_heads: int
    intermediate_size: int
    seq_len: int
    vocab_size: int
    num_classes: int = 2
    leak: float = 1.0
    t_conv: int = 100
    variance_threshold: float = 0.99999
    pca_base: float = 1.02
    initial_vth: float = 1.0
    head_dim: int = dataclasses.field(init=False)

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "num_heads",
                     "intermediate_size", "seq_len", "vocab_size",
                     "num_classes"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {v!r}")
        if self.hidden_size % self.num_heads != 0:
            raise InvalidInputError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if not (0.0 <= self.leak <= 1.0):
            raise InvalidInputError("leak must lie in [0, 1]")
        if not isinstance(self.t_conv, int) or self.t_conv < 1:
            raise InvalidInputError("t_conv must be a positive integer")
        if not (0.0 < self.variance_threshold <= 1.0):
            raise InvalidInputError("variance_threshold must be in (0, 1]")
        if self.pca_base < 1.0:
            raise InvalidInputError("pca_base must be >= 1")
        if self.initial_vth <= 0.0:
            raise InvalidInputError("initial_vth must be positive")
        object.__setattr__(self, "head_dim", self.hidden_size // self.num_heads)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("head_dim")
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "config") -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls) if f.init}
        unknown = set(d) - fields
        if unknown:
            raise CheckpointError(f"{path}: unknown keys {sorted(unknown)}")
        missing = {"num_layers", "hidden_size", "num_heads", "intermediate_size",
                   "seq_len", "vocab_size"} - set(d)
        if missing:
            raise CheckpointError(f"{path}: missing keys {sorted(missing)}")
        try:
            return cls(**d)
        except InvalidInputError as e:
            raise CheckpointError(f"{path}: {e}") from e


@dataclasses.dataclass
class LayerParams:
    """Weights of one encoder layer.

    Projection shapes follow the kept unit counts, so a structurally pruned
    layer simply has narrower matrices. vth holds one threshold per sublayer
    in SUBLAYERS order.
    """

    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_q: np.ndarray
    b_q: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_inter: np.ndarray
    b_inter: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    vth: np.ndarray

    def num_heads(self, head_dim: int) -> int:
        return self.w_k.shape[1] // head_dim

    def num_neurons(self) -> int:
        return self.w_inter.shape[1]

    def copy(self) -> "LayerParams":
        return LayerParams(**{f.name: getattr(self, f.name).copy()
                              for f in dataclasses.fields(self)})


@dataclasses.dataclass
class SpikingModel:
    config: ModelConfig
    embedding: np.ndarray
    layers: list
    cls_w: np.ndarray
    cls_b: np.ndarray
    # Fixed input-current scale captured at init (max |embedding| then);
    # kept constant afterwards so encoding does not drift as weights train.
    input_scale: float

    def copy(self) -> "SpikingModel":
        return SpikingModel(self.config, self.embedding.copy(),
                            [l.copy() for l in self.layers],
                            self.cls_w.copy(), self.cls_b.copy(),
                            self.input_scale)

    def head_counts(self) -> list:
        return [l.num_heads(self.config.head_dim) for l in self.layers]

    def neuron_counts(self) -> list:
        return [l.num_neurons() for l in self.layers]


class MaskSet:
    """Binary head and neuron masks per layer, with optional relaxed values.

    heads[l] has one 0/1 entry per head of layer l, neurons[l] one per
    intermediate neuron. relaxed_heads/relaxed_neurons, when present, hold
    the sigmoid-relaxed values in (0, 1) that mask training maintains; the
    binary masks are their 0.5 thresholding.
    """

    def __init__(self, heads, neurons, relaxed_heads=None, relaxed_neurons=None):
        self.heads = [np.asarray(h, dtype=np.float64) for h in heads]
        self.neurons = [np.asarray(n, dtype=np.float64) for n in neurons]
        self.relaxed_heads = (None if relaxed_heads is None
                              else [np.asarray(h, dtype=np.float64) for h in relaxed_heads])
        self.relaxed_neurons = (None if relaxed_neurons is None
                                else [np.asarray(n, dtype=np.float64) for n in relaxed_neurons])
        for name, groups in (("heads", self.heads), ("neurons", self.neurons)):
            for l, m in enumerate(groups):
                if m.ndim != 1 or m.size == 0:
                    raise InvalidInputError(f"{name}[{l}] must be a non-empty vector")
                if not np.all((m == 0.0) | (m == 1.0)):
                    raise InvalidInputError(f"{name}[{l}] must be binary")
        for name, groups in (("relaxed_heads", self.relaxed_heads),
                             ("relaxed_neurons", self.relaxed_neurons)):
            if groups is None:
                continue
            for l, m in enumerate(groups):
                if not np.all((m >= 0.0) & (m <= 1.0)):
                    raise InvalidInputError(f"{name}[{l}] must lie in [0, 1]")

    @classmethod
    def all_ones(cls, model: SpikingModel) -> "MaskSet":
        return cls([np.ones(h) for h in model.head_counts()],
                   [np.ones(n) for n in model.neuron_counts()])

    def copy(self) -> "MaskSet":
        return MaskSet([h.copy() for h in self.heads],
                       [n.copy() for n in self.neurons],
                       None if self.relaxed_heads is None
                       else [h.copy() for h in self.relaxed_heads],
                       None if self.relaxed_neurons is None
                       else [n.copy() for n in self.relaxed_neurons])

    def validate_for(self, model: SpikingModel) -> None:
        heads = model.head_counts()
        neurons = model.neuron_counts()
        if len(self.heads) != len(heads) or len(self.neurons) != len(neurons):
            raise InvalidInputError("mask layer count does not match model")
        for l, (m, n_units) in enumerate(zip(self.heads, heads)):
            if m.size != n_units:
                raise InvalidInputError(
                    f"heads[{l}] has {m.size} entries, layer has {n_units} heads")
        for l, (m, n_units) in enumerate(zip(self.neurons, neurons)):
            if m.size != n_units:
                raise InvalidInputError(
                    f"neurons[{l}] has {m.size} entries, layer has {n_units} neurons")

    def harden(self) -> "MaskSet":
        """Binary masks from the relaxed values (>= 0.5 survives)."""
        if self.relaxed_heads is None or self.relaxed_neurons is None:
            return self.copy()
        return MaskSet([(h >= 0.5).astype(np.float64) for h in self.relaxed_heads],
                       [(n >= 0.5).astype(np.float64) for n in self.relaxed_neurons],
                       [h.copy() for h in self.relaxed_heads],
                       [n.copy() for n in self.relaxed_neurons])

    def active_counts(self) -> tuple:
        return ([int(h.sum()) for h in self.heads],
                [int(n.sum()) for n in self.neurons])


def _draw(stream: RandomStream, rows: int, cols: int, scale: float) -> np.ndarray:
    return (stream.uniform((rows, cols)) * 2.0 - 1.0) * scale


def init_model(config: ModelConfig, stream: RandomStream) -> SpikingModel:
    """Fresh model with scaled-uniform weights and zero biases.

    Weight entries are U(-s, s) with s = 1/sqrt(fan_in). Thresholds start
    at config.initial_vth for every sublayer. The norm affines start at
    scale vth/4, shift vth/2: the firing nonlinearity only passes gradient
    for inputs in (0, vth), and a zero-mean unit-variance normalized signal
    would leave nearly every unit dead or saturated, so the affine is
    initialized to center that window instead. Draw order is fixed
    (embedding, layers in order, classifier), so a given seed always
    produces bitwise the same model.
    """
    d = config.hidden_size
    dn = config.intermediate_size
    s_d = 1.0 / np.sqrt(d)
    vth0 = float(config.initial_vth)
    emb = _draw(stream, config.vocab_size, d, s_d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(LayerParams(
            w_k=_draw(stream, d, d, s_d), b_k=np.zeros(d),
            w_v=_draw(stream, d, d, s_d), b_v=np.zeros(d),
            w_q=_draw(stream, d, d, s_d), b_q=np.zeros(d),
            w_o=_draw(stream, d, d, s_d), b_o=np.zeros(d),
            w_inter=_draw(stream, d, dn, s_d), b_inter=np.zeros(dn),
            w_out=_draw(stream, dn, d, 1.0 / np.sqrt(dn)), b_out=np.zeros(d),
            ln1_scale=np.full(d, vth0 / 4), ln1_shift=np.full(d, vth0 / 2),
            ln2_scale=np.full(d, vth0 / 4), ln2_shift=np.full(d, vth0 / 2),
            vth=np.full(len(SUBLAYERS), vth0),
        ))
    cls_w = _draw(stream, d, config.num_classes, s_d)
    cls_b = np.zeros(config.num_classes)
    scale = float(np.abs(emb).max())
    return SpikingModel(config, emb, layers, cls_w, cls_b, scale)


def apply_masks(model: SpikingModel, masks: MaskSet) -> SpikingModel:
    """Fold binary masks into the weights by deleting pruned rows/columns.

    The sliced model computes exactly what the masked model computes; a
    pruned head loses its K/V/Q columns and its W_O rows, a pruned neuron
    its W_inter column and W_out row. Mask lengths must match the model's
    current unit counts, so all-ones masks are a no-op and the call is
    idempotent. Removing every head or every neuron of a layer is refused.
    """
    masks.validate_for(model)
    out = model.copy()
    hd = model.config.head_dim
    for l, layer in enumerate(out.layers):
        hm = masks.heads[l].astype(bool)
        nm = masks.neurons[l].astype(bool)
        if not hm.any():
            raise InvalidInputError(f"masks remove every head of layer {l}")
        if not nm.any():
            raise InvalidInputError(f"masks remove every neuron of layer {l}")
        col = np.repeat(hm, hd)
        layer.w_k = layer.w_k[:, col]
        layer.b_k = layer.b_k[col]
        layer.w_v = layer.w_v[:, col]
        layer.b_v = layer.b_v[col]
        layer.w_q = layer.w_q[:, col]
        layer.b_q = layer.b_q[col]
        layer.w_o = layer.w_o[col, :]
        layer.w_inter = layer.w_inter[:, nm]
        layer.b_inter = layer.b_inter[nm]
        layer.w_out = layer.w_out[nm, :]
    return out


def binarize_weights(model: SpikingModel) -> SpikingModel:
    """Binary-weight variant: each projection matrix becomes alpha * sign(W).

    alpha is the matrix's mean absolute value. Embedding, classifier,
    biases, thresholds and norm parameters stay full precision.
    """
    out = model.copy()
    for layer in out.layers:
        for name in ("w_k", "w_v", "w_q", "w_o", "w_inter", "w_out"):
            w = getattr(layer, name)
            alpha = float(np.abs(w).mean())
            setattr(layer, name, alpha * np.sign(w))
    return out


# --- checkpoint files --------------------------------------------------------


def _plan_to_dict(plan) -> dict:
    return {name: [int(v) for v in plan.steps[:, i]]
            for i, name in enumerate(SUBLAYERS)}


def save_checkpoint(path: str, model: SpikingModel, masks: MaskSet, plan) -> None:
    """Write model + masks + timestep plan as one JSON file.

    Floats are serialized as shortest round-tripping decimals, so a
    save/load cycle reproduces every array bit for bit.
    """
    masks.validate_for(model)
    doc = {
        "format": FORMAT_TAG,
        "config": model.config.to_dict(),
        "input_scale": model.input_scale,
        "embedding": model.embedding.tolist(),
        "layers": [],
        "classifier": {"weight": model.cls_w.tolist(), "bias": model.cls_b.tolist()},
        "masks": {
            "heads": [h.tolist() for h in masks.heads],
            "neurons": [n.tolist() for n in masks.neurons],
            "relaxed_heads": (None if masks.relaxed_heads is None
                              else [h.tolist() for h in masks.relaxed_heads]),
            "relaxed_neurons": (None if masks.relaxed_neurons is None
                                else [n.tolist() for n in masks.relaxed_neurons]),
        },
        "timestep_plan": _plan_to_dict(plan),
    }
    for layer in model.layers:
        doc["layers"].append({
            "WK": layer.w_k.tolist(), "WV": layer.w_v.tolist(),
            "WQ": layer.w_q.tolist(), "WO": layer.w_o.tolist(),
            "Winter": layer.w_inter.tolist(), "Wout": layer.w_out.tolist(),
            "biases": {"k": layer.b_k.tolist(), "v": layer.b_v.tolist(),
                       "q": layer.b_q.tolist(), "o": layer.b_o.tolist(),
                       "inter": layer.b_inter.tolist(), "out": layer.b_out.tolist()},
            "ln": {"scale1": layer.ln1_scale.tolist(), "shift1": layer.ln1_shift.tolist(),
                   "scale2": layer.ln2_scale.tolist(), "shift2": layer.ln2_shift.tolist()},
            "vth": layer.vth.tolist(),
        })
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    os.replace(tmp, path)


def _need(doc: dict, key: str, path: str):
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: expected an object")
    if key not in doc:
        raise CheckpointError(f"{path}.{key}: missing")
    return doc[key]


def _arr(value, shape: tuple, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: not numeric ({e})") from e
    if arr.shape != shape:
        raise CheckpointError(f"{path}: shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"{path}: non-finite entries")
    return arr


def load_checkpoint(path: str, expected_config: ModelConfig = None):
    """Read a checkpoint; returns (model, masks, plan).

    Malformed files raise CheckpointError naming the offending key path.
    When expected_config is given, the stored architecture must match it
    field for field.
    """
    from .engine import TimestepPlan

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: invalid JSON at line {e.lineno}") from e
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint: top level must be an object")
    tag = _need(doc, "format", "checkpoint")
    if tag != FORMAT_TAG:
        raise CheckpointError(f"checkpoint.format: {tag!r} is not {FORMAT_TAG!r}")
    config = ModelConfig.from_dict(_need(doc, "config", "checkpoint"), "config")
    if expected_config is not None and config != expected_config:
        diffs = [f.name for f in dataclasses.fields(ModelConfig)
                 if f.init and getattr(config, f.name) != getattr(expected_config, f.name)]
        raise CheckpointError(f"config mismatch in fields {diffs}")

    d, hd = config.hidden_size, config.head_dim
    scale = _need(doc, "input_scale", "checkpoint")
    if not isinstance(scale, (int, float)) or not np.isfinite(scale) or scale < 0:
        raise CheckpointError("input_scale: must be a finite non-negative number")
    emb = _arr(_need(doc, "embedding", "checkpoint"), (config.vocab_size, d), "embedding")

    raw_layers = _need(doc, "layers", "checkpoint")
    if not isinstance(raw_layers, list) or len(raw_layers) != config.num_layers:
        raise CheckpointError(f"layers: expected {config.num_layers} entries")
    layers = []
    for i, rl in enumerate(raw_layers):
        p = f"layers[{i}]"
        wk_raw = _need(rl, "WK", p)
        try:
            cols = len(wk_raw[0])
        except (TypeError, IndexError) as e:
            raise CheckpointError(f"{p}.WK: not a matrix") from e
        if cols % hd != 0 or cols // hd < 1 or cols // hd > config.num_heads:
            raise CheckpointError(
                f"{p}.WK: {cols} columns is not 1..{config.num_heads} heads of width {hd}")
        kh = cols // hd
        winter_raw = _need(rl, "Winter", p)
        try:
            kn = len(winter_raw[0])
        except (TypeError, IndexError) as e:
            raise CheckpointError(f"{p}.Winter: not a matrix") from e
        if kn < 1 or kn > config.intermediate_size:
            raise CheckpointError(
                f"{p}.Winter: {kn} columns, expected 1..{config.intermediate_size}")
        biases = _need(rl, "biases", p)
        ln = _need(rl, "ln", p)
        layers.append(LayerParams(
            w_k=_arr(wk_raw, (d, kh * hd), f"{p}.WK"),
            b_k=_arr(_need(biases, "k", f"{p}.biases"), (kh * hd,), f"{p}.biases.k"),
            w_v=_arr(_need(rl, "WV", p), (d, kh * hd), f"{p}.WV"),
            b_v=_arr(_need(biases, "v", f"{p}.biases"), (kh * hd,), f"{p}.biases.v"),
            w_q=_arr(_need(rl, "WQ", p), (d, kh * hd), f"{p}.WQ"),
            b_q=_arr(_need(biases, "q", f"{p}.biases"), (kh * hd,), f"{p}.biases.q"),
            w_o=_arr(_need(rl, "WO", p), (kh * hd, d), f"{p}.WO"),
            b_o=_arr(_need(biases, "o", f"{p}.biases"), (d,), f"{p}.biases.o"),
            w_inter=_arr(winter_raw, (d, kn), f"{p}.Winter"),
            b_inter=_arr(_need(biases, "inter", f"{p}.biases"), (kn,), f"{p}.biases.inter"),
            w_out=_arr(_need(rl, "Wout", p), (kn, d), f"{p}.Wout"),
            b_out=_arr(_need(biases, "out", f"{p}.biases"), (d,), f"{p}.biases.out"),
            ln1_scale=_arr(_need(ln, "scale1", f"{p}.ln"), (d,), f"{p}.ln.scale1"),
            ln1_shift=_arr(_need(ln, "shift1", f"{p}.ln"), (d,), f"{p}.ln.shift1"),
            ln2_scale=_arr(_need(ln, "scale2", f"{p}.ln"), (d,), f"{p}.ln.scale2"),
            ln2_shift=_arr(_need(ln, "shift2", f"{p}.ln"), (d,), f"{p}.ln.shift2"),
            vth=_arr(_need(rl, "vth", p), (len(SUBLAYERS),), f"{p}.vth"),
        ))
        if np.any(layers[-1].vth <= 0.0):
            raise CheckpointError(f"{p}.vth: thresholds must be positive")

    cls = _need(doc, "classifier", "checkpoint")
    cls_w = _arr(_need(cls, "weight", "classifier"), (d, config.num_classes),
                 "classifier.weight")
    cls_b = _arr(_need(cls, "bias", "classifier"), (config.num_classes,),
                 "classifier.bias")
    model = SpikingModel(config, emb, layers, cls_w, cls_b, float(scale))

    raw_masks = _need(doc, "masks", "checkpoint")
    def mask_group(key, counts, optional=False):
        vals = _need(raw_masks, key, "masks")
        if vals is None and optional:
            return None
        if not isinstance(vals, list) or len(vals) != len(counts):
            raise CheckpointError(f"masks.{key}: expected {len(counts)} layer entries")
        return [_arr(v, (c,), f"masks.{key}[{i}]")
                for i, (v, c) in enumerate(zip(vals, counts))]
    hc, nc = model.head_counts(), model.neuron_counts()
    try:
        masks = MaskSet(mask_group("heads", hc), mask_group("neurons", nc),
                        mask_group("relaxed_heads", hc, optional=True),
                        mask_group("relaxed_neurons", nc, optional=True))
    except InvalidInputError as e:
        raise CheckpointError(f"masks: {e}") from e

    raw_plan = _need(doc, "timestep_plan", "checkpoint")
    cols = []
    for name in SUBLAYERS:
        vals = _need(raw_plan, name, "timestep_plan")
        if not isinstance(vals, list) or len(vals) != config.num_layers:
            raise CheckpointError(
                f"timestep_plan.{name}: expected {config.num_layers} entries")
        for j, v in enumerate(vals):
            if not isinstance(v, int) or v < 1:
                raise CheckpointError(
                    f"timestep_plan.{name}[{j}]: must be a positive integer")
        cols.append(vals)
    plan = TimestepPlan(np.array(cols, dtype=np.int64).T)
    return model, masks, plan
