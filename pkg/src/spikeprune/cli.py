"""Command-line pipeline over checkpoints: train, prune, retrain, eval, report.

Every command is deterministic for a given --seed: model init, synthetic
data, batch order, and the sequential simulator's spike draws all come from
counter-based streams, and output files (JSON checkpoints, CSV histories,
eval reports) are written with stable key order and repr-exact floats, so
reruns produce byte-identical files.

Exit codes: 0 success, 1 runtime failure (bad checkpoint, infeasible
budget, diverged training, I/O), 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import RunConfig, resolve_config
from .cost import acs_total, normalized_c, per_sublayer_acs
from .data import Dataset, gen_keyword_task, load_jsonl
from .engine import TimestepPlan, rate_proxy_forward, run_sequential, run_unrolled
from .errors import InvalidInputError, SpikePruneError
from .importance import asr_factors, combine, fisher_diagonal
from .model import MaskSet, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .numerics import RandomStream
from .spatial import refine_masks, select_masks
from .temporal import allocate_timesteps, layer_importance, scale_plan
from .trainer import evaluate_proxy, train

HISTORY_COLUMNS = ("epoch", "loss", "accuracy", "acs_ratio", "normalized_c",
                   "mean_timesteps")

# stream lanes off the master seed, so commands sharing a seed share data
_LANE_INIT = 0
_LANE_TRAIN = 1
_LANE_TEST = 2
_LANE_CALIB = 3
_LANE_EVAL = 4


def _write_history_csv(path: str, history: list) -> None:
    cols = list(HISTORY_COLUMNS)
    if history:
        cols += [k for k in history[0] if k not in HISTORY_COLUMNS]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in history:
            writer.writerow([row[c] for c in cols])


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _gen_dataset(mcfg: ModelConfig, count: int, stream: RandomStream) -> Dataset:
    return gen_keyword_task(mcfg.vocab_size, mcfg.seq_len, count, stream)


def _dataset_arg(spec: str, mcfg: ModelConfig, stream: RandomStream) -> Dataset:
    """A dataset argument is either a JSONL path or a synthetic example count."""
    if os.path.exists(spec):
        return load_jsonl(spec, mcfg.seq_len, mcfg.vocab_size, mcfg.num_classes)
    try:
        count = int(spec)
    except ValueError:
        raise InvalidInputError(
            f"{spec!r} is neither a file nor an example count") from None
    if count < 1:
        raise InvalidInputError("example count must be positive")
    return _gen_dataset(mcfg, count, stream)


def _batches(dataset: Dataset, size: int):
    return [(dataset.tokens[i:i + size], dataset.labels[i:i + size])
            for i in range(0, len(dataset), size)]


def _print_history(history: list) -> None:
    for row in history:
        print(f"epoch {row['epoch']}: loss={row['loss']:.4f} "
              f"accuracy={row['accuracy']:.4f} acs_ratio={row['acs_ratio']:.4f} "
              f"mean_timesteps={row['mean_timesteps']:.2f}")


def _importance_scores(model, masks, calib: Dataset, batch_size: int):
    fisher = fisher_diagonal(model, _batches(calib, batch_size))
    _, traces = run_unrolled(model, masks, calib.tokens, model.config.t_conv)
    asr = asr_factors(traces, model.config)
    return combine(fisher, asr)


def _group_asr(rates: dict, num_layers: int) -> dict:
    groups = {"key_value": ("key", "value"), "attn": ("attn",), "fc": ("fc",),
              "inter_output": ("inter", "output")}
    out = {}
    for label, names in groups.items():
        vals = [rates[f"L{i}.{n}"].mean() for i in range(num_layers) for n in names]
        out[label] = float(np.mean(vals))
    return out


def _proxy_normalized_c(model, masks, plan, tokens) -> float:
    _, rates = rate_proxy_forward(model, masks, tokens)
    acs_list = per_sublayer_acs(model.config, masks, plan)
    return normalized_c([r.mean() for r in rates.values()],
                        [v for _, v in acs_list])


def _unrolled_group_stats(model, masks, plan, tokens):
    """Converged simulated rates: (per-group means, normalized #C)."""
    _, traces = run_unrolled(model, masks, tokens, model.config.t_conv)
    conv = {tr.name: tr.converged for tr in traces}
    acs_list = per_sublayer_acs(model.config, masks, plan)
    nc = normalized_c([float(conv[name].mean()) for name, _ in acs_list],
                      [v for _, v in acs_list])
    return _group_asr(conv, model.config.num_layers), nc


def _seq_accuracy(model, masks, plan, data: Dataset, stream: RandomStream,
                  batch: int = 50) -> float:
    hits = 0
    for i in range(0, len(data), batch):
        logits, _ = run_sequential(model, masks, plan, data.tokens[i:i + batch],
                                   stream.derive(i))
        hits += int((logits.argmax(axis=1) == data.labels[i:i + batch]).sum())
    return hits / len(data)


def cmd_train(args) -> int:
    cfg = resolve_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    mcfg = cfg.model_config()
    master = RandomStream(seed)
    model = init_model(mcfg, master.derive(_LANE_INIT))
    if args.data:
        train_data = load_jsonl(args.data, mcfg.seq_len, mcfg.vocab_size,
                                mcfg.num_classes)
    else:
        train_data = _gen_dataset(mcfg, cfg.train_examples, master.derive(_LANE_TRAIN))
    if args.test_data:
        test_data = load_jsonl(args.test_data, mcfg.seq_len, mcfg.vocab_size,
                               mcfg.num_classes)
    else:
        test_data = _gen_dataset(mcfg, cfg.test_examples, master.derive(_LANE_TEST))

    masks = MaskSet.all_ones(model)
    plan = TimestepPlan.uniform(mcfg.num_layers, mcfg.t_conv)
    overrides = {"seed": seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.eta is not None:
        overrides["eta"] = args.eta
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    tcfg = cfg.train_config(**overrides)
    model, masks, plan, history = train(model, masks, plan, train_data, tcfg,
                                        eval_data=test_data)
    save_checkpoint(args.out, model, masks, plan)
    if args.history:
        _write_history_csv(args.history, history)
    _print_history(history)
    final = history[-1]["accuracy"] if history else float("nan")
    print(f"saved {args.out} (test accuracy {final:.4f})")
    return 0


def cmd_prune_spatial(args) -> int:
    model, masks, plan = load_checkpoint(args.checkpoint)
    master = RandomStream(args.seed)
    calib = _dataset_arg(args.calib, model.config, master.derive(_LANE_CALIB))
    scores = _importance_scores(model, masks, calib, args.batch)
    t_uniform = model.config.t_conv
    selected = select_masks(scores, model.config, t_uniform, args.constraint)
    refined = refine_masks(selected, scores, model.config, args.constraint)
    save_checkpoint(args.out, model, refined, plan)
    report = acs_total(model.config, refined, plan)
    heads, neurons = refined.active_counts()
    print(f"acs_ratio={report.ratio:.6f} budget={args.constraint}")
    for i, (h, n) in enumerate(zip(heads, neurons)):
        print(f"layer {i}: heads {h}/{model.config.num_heads} "
              f"neurons {n}/{model.config.intermediate_size}")
    print(f"saved {args.out}")
    return 0


def _base_arg(value: str) -> float:
    try:
        base = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid base {value!r}") from None
    if base <= 1.0:
        raise argparse.ArgumentTypeError("base must be greater than 1")
    return base


def _rho_arg(value: str) -> float:
    try:
        rho = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rho {value!r}") from None
    if not (0 < rho <= 1):
        raise argparse.ArgumentTypeError("rho must be in (0, 1]")
    return rho


def cmd_prune_temporal(args) -> int:
    model, masks, plan = load_checkpoint(args.checkpoint)
    cfg = model.config
    base = args.base if args.base is not None else cfg.pca_base
    if base <= 1.0:
        raise InvalidInputError(
            "checkpoint pca_base must be greater than 1; pass --base")
    variance = args.variance if args.variance is not None else cfg.variance_threshold
    master = RandomStream(args.seed)
    calib = _dataset_arg(args.calib, cfg, master.derive(_LANE_CALIB))
    _, traces = run_unrolled(model, masks, calib.tokens, cfg.t_conv)
    c = layer_importance(traces, variance)
    new_plan = allocate_timesteps(c, base, cfg.t_conv)
    if args.rho < 1.0:
        new_plan = scale_plan(new_plan, args.rho)
    save_checkpoint(args.out, model, masks, new_plan)
    names = [f"L{l}.{n}" for l in range(cfg.num_layers) for n in
             ("key", "value", "attn", "fc", "inter", "output")]
    for name, ci, ti in zip(names, c, new_plan.flat()):
        print(f"{name}: c={int(ci)} t={int(ti)}")
    print(f"mean timesteps: {plan.mean_timesteps():.2f} -> "
          f"{new_plan.mean_timesteps():.2f} (max {new_plan.max_timesteps()})")
    print(f"saved {args.out}")
    return 0


def cmd_retrain(args) -> int:
    model, masks, plan = load_checkpoint(args.checkpoint)
    cfg = resolve_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    mcfg = model.config
    master = RandomStream(seed)
    if args.data:
        train_data = load_jsonl(args.data, mcfg.seq_len, mcfg.vocab_size,
                                mcfg.num_classes)
    else:
        train_data = _gen_dataset(mcfg, cfg.train_examples, master.derive(_LANE_TRAIN))
    if args.test_data:
        test_data = load_jsonl(args.test_data, mcfg.seq_len, mcfg.vocab_size,
                               mcfg.num_classes)
    else:
        test_data = _gen_dataset(mcfg, cfg.test_examples, master.derive(_LANE_TEST))
    overrides = {"seed": seed, "adaptive_vth": not args.fixed_vth}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.penalty_epochs is not None:
        overrides["penalty_epochs"] = args.penalty_epochs
    if args.eta is not None:
        overrides["eta"] = args.eta
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    tcfg = cfg.train_config(**overrides)
    model, masks, plan, history = train(model, masks, plan, train_data, tcfg,
                                        eval_data=test_data)
    save_checkpoint(args.out, model, masks, plan)
    if args.history:
        _write_history_csv(args.history, history)
    _print_history(history)
    final = history[-1]["accuracy"] if history else float("nan")
    print(f"saved {args.out} (test accuracy {final:.4f})")
    return 0


def cmd_eval(args) -> int:
    model, masks, plan = load_checkpoint(args.checkpoint)
    cfg = model.config
    master = RandomStream(args.seed)
    data = _dataset_arg(args.data, cfg, master.derive(_LANE_TEST))
    hits = 0
    sums = None
    names = None
    for chunk_idx, start in enumerate(range(0, len(data), args.batch)):
        tokens = data.tokens[start:start + args.batch]
        labels = data.labels[start:start + args.batch]
        stream = master.derive(_LANE_EVAL).derive(chunk_idx)
        logits, traces = run_sequential(model, masks, plan, tokens, stream,
                                        record_traces=True)
        hits += int((logits.argmax(axis=1) == labels).sum())
        if sums is None:
            names = [t.name for t in traces]
            sums = np.zeros(len(traces))
        sums += np.array([t.converged.mean() for t in traces]) * len(labels)
    a_means = sums / len(data)
    acs_list = per_sublayer_acs(cfg, masks, plan)
    if names != [n for n, _ in acs_list]:
        raise InvalidInputError("trace order does not match cost order")
    result = {
        "accuracy": hits / len(data),
        "acs_ratio": acs_total(cfg, masks, plan).ratio,
        "normalized_c": normalized_c(list(a_means), [v for _, v in acs_list]),
        "mean_timesteps": plan.mean_timesteps(),
        "examples": len(data),
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def cmd_report(args) -> int:
    model, masks, plan = load_checkpoint(args.checkpoint)
    cfg = model.config
    master = RandomStream(args.seed)
    calib = _dataset_arg(args.calib, cfg, master.derive(_LANE_CALIB))
    os.makedirs(args.out_dir, exist_ok=True)

    # rate-convergence curves: mean cumulative firing rate per encoder layer
    _, traces = run_unrolled(model, masks, calib.tokens, cfg.t_conv)
    per_layer = len(traces) // cfg.num_layers
    curve_path = os.path.join(args.out_dir, "asr_layers.csv")
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep"] + [f"layer_{i}" for i in range(cfg.num_layers)])
        for t in range(cfg.t_conv):
            row = [t + 1]
            for i in range(cfg.num_layers):
                chunk = traces[i * per_layer:(i + 1) * per_layer]
                row.append(float(np.mean([tr.asr[t].mean() for tr in chunk])))
            writer.writerow(row)

    # accuracy and cost across spatial budgets, from one set of scores
    scores = _importance_scores(model, masks, calib, args.batch)
    sweep_path = os.path.join(args.out_dir, "constraint_sweep.csv")
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["constraint", "acs_ratio", "accuracy"])
        for constraint in [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]:
            swept = refine_masks(
                select_masks(scores, cfg, cfg.t_conv, constraint),
                scores, cfg, constraint)
            ratio = acs_total(cfg, swept, plan).ratio
            acc = evaluate_proxy(model, swept, calib, args.batch)
            writer.writerow([constraint, ratio, acc])

    heads, neurons = masks.active_counts()
    report = acs_total(cfg, masks, plan)
    payload = {
        "config": cfg.to_dict(),
        "active_heads": heads,
        "active_neurons": neurons,
        "timestep_plan": {name: plan.steps[:, i].tolist()
                          for i, name in enumerate(
                              ("key", "value", "attn", "fc", "inter", "output"))},
        "acs_total": report.total,
        "acs_ratio": report.ratio,
        "normalized_c": _proxy_normalized_c(model, masks, plan, calib.tokens),
        "mean_timesteps": plan.mean_timesteps(),
        "proxy_accuracy": evaluate_proxy(model, masks, calib, args.batch),
    }
    _write_json(os.path.join(args.out_dir, "report.json"), payload)
    print(f"wrote {curve_path}, {sweep_path}, report.json")
    return 0


def _ablate_activity(cfg: RunConfig, seed: int, epochs) -> dict:
    mcfg = cfg.model_config()
    results = {}
    for label, eta in (("with_activity", cfg.eta), ("without_activity", 0.0)):
        master = RandomStream(seed)
        model = init_model(mcfg, master.derive(_LANE_INIT))
        train_data = _gen_dataset(mcfg, cfg.train_examples, master.derive(_LANE_TRAIN))
        test_data = _gen_dataset(mcfg, cfg.test_examples, master.derive(_LANE_TEST))
        tcfg = cfg.train_config(seed=seed, eta=eta,
                                **({"epochs": epochs} if epochs else {}))
        masks = MaskSet.all_ones(model)
        plan = TimestepPlan.uniform(mcfg.num_layers, mcfg.t_conv)
        model, masks, plan, history = train(model, masks, plan, train_data, tcfg,
                                            eval_data=test_data)
        groups, nc = _unrolled_group_stats(model, masks, plan,
                                           test_data.tokens[:64])
        results[label] = {
            "eta": eta,
            "accuracy": history[-1]["accuracy"],
            "group_asr": groups,
            "normalized_c": nc,
        }
    with_a = results["with_activity"]
    without = results["without_activity"]
    lower = [g for g in with_a["group_asr"]
             if with_a["group_asr"][g] < without["group_asr"][g]]
    results["asr_lower_groups"] = sorted(lower)
    results["normalized_c_lower"] = bool(
        with_a["normalized_c"] < without["normalized_c"])
    return results


def _ablate_adaptive_vth(cfg: RunConfig, seed: int, epochs) -> dict:
    mcfg = cfg.model_config()
    master = RandomStream(seed)
    model = init_model(mcfg, master.derive(_LANE_INIT))
    train_data = _gen_dataset(mcfg, cfg.train_examples, master.derive(_LANE_TRAIN))
    test_data = _gen_dataset(mcfg, cfg.test_examples, master.derive(_LANE_TEST))
    eval_lane = master.derive(_LANE_EVAL)
    masks = MaskSet.all_ones(model)
    plan = TimestepPlan.uniform(mcfg.num_layers, mcfg.t_conv)
    tcfg = cfg.train_config(seed=seed, **({"epochs": epochs} if epochs else {}))
    model, masks, plan, _ = train(model, masks, plan, train_data, tcfg,
                                  eval_data=test_data)
    base_acc = _seq_accuracy(model, masks, plan, test_data, eval_lane.derive(0))
    short = scale_plan(plan, cfg.rho if cfg.rho < 1 else 0.25)
    scaled_acc = _seq_accuracy(model, masks, short, test_data, eval_lane.derive(1))
    # retraining at a shortened plan runs against sampling noise; a gentler
    # step keeps the threshold updates from oscillating
    retrain_lr = min(cfg.learning_rate, 0.01)
    results = {"baseline_accuracy": base_acc,
               "scaled_accuracy": scaled_acc,
               "scaled_mean_timesteps": short.mean_timesteps(),
               "retrain_learning_rate": retrain_lr}
    lost = base_acc - scaled_acc
    for lane, (label, adaptive) in enumerate(
            (("adaptive_vth", True), ("fixed_vth", False)), start=2):
        rcfg = cfg.train_config(seed=seed + 1, adaptive_vth=adaptive,
                                learning_rate=retrain_lr,
                                **({"epochs": epochs} if epochs else {}))
        m, k, p, _ = train(model, masks, short, train_data, rcfg,
                           eval_data=test_data)
        acc = _seq_accuracy(m, k, p, test_data, eval_lane.derive(lane))
        results[label] = {
            "accuracy": acc,
            "recovered": acc - scaled_acc,
            "recovered_at_least_half": bool(acc - scaled_acc >= 0.5 * lost),
        }
    return results


def _ablate_joint(cfg: RunConfig, seed: int, epochs) -> dict:
    mcfg = cfg.model_config()
    master = RandomStream(seed)
    model0 = init_model(mcfg, master.derive(_LANE_INIT))
    train_data = _gen_dataset(mcfg, cfg.train_examples, master.derive(_LANE_TRAIN))
    test_data = _gen_dataset(mcfg, cfg.test_examples, master.derive(_LANE_TEST))
    plan = TimestepPlan.uniform(mcfg.num_layers, mcfg.t_conv)
    n_epochs = epochs if epochs else cfg.epochs
    results = {}

    # two-stage: train, importance-prune to the budget, recover
    tcfg = cfg.train_config(seed=seed, epochs=n_epochs)
    model, masks, _, _ = train(model0, MaskSet.all_ones(model0), plan,
                               train_data, tcfg, eval_data=test_data)
    calib = Dataset(train_data.tokens[:cfg.train_batch * 4],
                    train_data.labels[:cfg.train_batch * 4])
    scores = _importance_scores(model, masks, calib, cfg.train_batch)
    pruned = refine_masks(
        select_masks(scores, mcfg, mcfg.t_conv, cfg.acs_constraint),
        scores, mcfg, cfg.acs_constraint)
    rcfg = cfg.train_config(seed=seed + 1, epochs=max(1, n_epochs // 2))
    model_a, masks_a, _, _ = train(model, pruned, plan, train_data, rcfg,
                                   eval_data=test_data)
    results["two_stage"] = {
        "accuracy": evaluate_proxy(model_a, masks_a, test_data, cfg.test_batch),
        "acs_ratio": acs_total(mcfg, masks_a, plan).ratio,
    }

    # joint: soft masks trained with the cost penalty from the start
    heads = [np.ones(mcfg.num_heads) for _ in range(mcfg.num_layers)]
    neurons = [np.ones(mcfg.intermediate_size) for _ in range(mcfg.num_layers)]
    soft = MaskSet([h.copy() for h in heads], [n.copy() for n in neurons],
                   [0.7 * h for h in heads], [0.7 * n for n in neurons])
    jcfg = cfg.train_config(seed=seed, epochs=n_epochs,
                            penalty_epochs=max(1, n_epochs // 2))
    model_b, masks_b, _, _ = train(model0, soft, plan, train_data, jcfg,
                                   eval_data=test_data)
    results["joint"] = {
        "accuracy": evaluate_proxy(model_b, masks_b, test_data, cfg.test_batch),
        "acs_ratio": acs_total(mcfg, masks_b, plan).ratio,
    }
    return results


def cmd_ablate(args) -> int:
    cfg = resolve_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    runners = {"activity": _ablate_activity,
               "adaptive-vth": _ablate_adaptive_vth,
               "joint": _ablate_joint}
    results = runners[args.study](cfg, seed, args.epochs)
    results["study"] = args.study
    results["seed"] = seed
    text = json.dumps(results, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikeprune",
        description="Build, prune, and evaluate spiking transformer encoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--config", required=True, help="config file or preset name")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None,
                   help="override the config learning rate")
    p.add_argument("--eta", type=float, default=None,
                   help="override the activity-loss weight")
    p.add_argument("--data", default=None, help="training JSONL (default: synthetic)")
    p.add_argument("--test-data", default=None)
    p.add_argument("--history", default=None, help="write per-epoch metrics CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune-spatial", help="mask heads and neurons to a budget")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--constraint", type=float, default=0.6,
                   help="ACs budget as a fraction of the dense cost")
    p.add_argument("--calib", default="256",
                   help="calibration JSONL path or synthetic example count")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prune_spatial)

    p = sub.add_parser("prune-temporal", help="allocate per-sublayer timesteps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base", type=_base_arg, default=None,
                   help="allocation base, must be > 1 (default: checkpoint value)")
    p.add_argument("--variance", type=float, default=None,
                   help="explained-variance threshold (default: checkpoint value)")
    p.add_argument("--rho", type=_rho_arg, default=1.0,
                   help="extra uniform timestep scaling in (0, 1]")
    p.add_argument("--calib", default="256")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prune_temporal)

    p = sub.add_parser("retrain", help="continue training a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--penalty-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None,
                   help="override the config learning rate")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--fixed-vth", action="store_true",
                   help="freeze thresholds instead of training them")
    p.add_argument("--data", default=None)
    p.add_argument("--test-data", default=None)
    p.add_argument("--history", default=None)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("eval", help="run the event-driven simulator on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="500",
                   help="test JSONL path or synthetic example count")
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="also write the JSON result here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="write rate curves, budget sweep, and summary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--calib", default="256")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablate", help="paired comparison studies")
    p.add_argument("--study", required=True,
                   choices=["activity", "adaptive-vth", "joint"])
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None,
                   help="override epochs for quicker studies")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpikePruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
