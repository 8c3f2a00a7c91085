"""End-to-end command tests, all in-process through cli.main."""

import json
import re

import numpy as np
import pytest

from spikeprune import (RandomStream, gen_keyword_task, load_checkpoint,
                        save_jsonl)
from spikeprune import cli

# small enough to train in well under a second, large enough that the
# spatial floor (1 head + 1 neuron per layer) sits below the sweep budgets
FAST_CFG = """\
num_layers = 1
hidden_size = 8
num_heads = 4
intermediate_size = 16
seq_len = 4
vocab_size = 8
t_conv = 10
epochs = 1
learning_rate = 0.05
train_batch = 16
test_batch = 32
train_examples = 48
test_examples = 24
pca_interval = 0
eta = 0.001
lambda = 5e-9
"""


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.cfg"
    cfg.write_text(FAST_CFG)
    base = root / "base.json"
    assert cli.main(["train", "--config", str(cfg), "--out", str(base)]) == 0
    spatial = root / "spatial.json"
    assert cli.main(["prune-spatial", "--checkpoint", str(base),
                     "--out", str(spatial), "--constraint", "0.6",
                     "--calib", "64"]) == 0
    temporal = root / "temporal.json"
    assert cli.main(["prune-temporal", "--checkpoint", str(spatial),
                     "--out", str(temporal), "--base", "1.3",
                     "--calib", "64"]) == 0
    return {"root": root, "cfg": str(cfg), "base": str(base),
            "spatial": str(spatial), "temporal": str(temporal)}


class TestTrain:
    def test_writes_checkpoint_and_history(self, ws, tmp_path, capsys):
        out = tmp_path / "m.json"
        hist = tmp_path / "h.csv"
        rc = cli.main(["train", "--config", ws["cfg"], "--out", str(out),
                       "--history", str(hist)])
        assert rc == 0
        txt = capsys.readouterr().out
        assert "epoch 0:" in txt and f"saved {out}" in txt
        model, masks, plan = load_checkpoint(str(out))
        assert model.config.hidden_size == 8
        assert plan.max_timesteps() == 10
        header = hist.read_text().splitlines()[0]
        assert header.startswith("epoch,loss,accuracy,acs_ratio,"
                                 "normalized_c,mean_timesteps")
        assert "asr_layer_0" in header
        assert len(hist.read_text().splitlines()) == 2

    def test_rerun_is_byte_identical(self, ws, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert cli.main(["train", "--config", ws["cfg"], "--out", str(a)]) == 0
        assert cli.main(["train", "--config", ws["cfg"], "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_jsonl_data_accepted(self, ws, tmp_path, capsys):
        data = gen_keyword_task(8, 4, 32, RandomStream(1))
        test = gen_keyword_task(8, 4, 16, RandomStream(2))
        dpath = tmp_path / "train.jsonl"
        tpath = tmp_path / "test.jsonl"
        save_jsonl(str(dpath), data)
        save_jsonl(str(tpath), test)
        out = tmp_path / "m.json"
        rc = cli.main(["train", "--config", ws["cfg"], "--out", str(out),
                       "--data", str(dpath), "--test-data", str(tpath)])
        assert rc == 0
        assert "test accuracy" in capsys.readouterr().out

    def test_unknown_config_fails(self, tmp_path, capsys):
        rc = cli.main(["train", "--config", "no_such_preset",
                       "--out", str(tmp_path / "x.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestPruneSpatial:
    def test_respects_budget_and_reports_ratio(self, ws, capsys):
        model, masks, plan = load_checkpoint(ws["spatial"])
        from spikeprune import acs_total
        ratio = acs_total(model.config, masks, plan).ratio
        assert ratio <= 0.6 * (1 + 1e-12)
        heads, neurons = masks.active_counts()
        assert heads[0] >= 1 and neurons[0] >= 1
        assert heads[0] < 4 or neurons[0] < 16

    def test_constraint_one_keeps_everything(self, ws, tmp_path, capsys):
        out = tmp_path / "full.json"
        rc = cli.main(["prune-spatial", "--checkpoint", ws["base"],
                       "--out", str(out), "--constraint", "1.0",
                       "--calib", "32"])
        assert rc == 0
        _, masks, _ = load_checkpoint(str(out))
        assert all((h == 1).all() for h in masks.heads)
        assert all((n == 1).all() for n in masks.neurons)

    def test_infeasible_budget_exits_1(self, ws, tmp_path, capsys):
        rc = cli.main(["prune-spatial", "--checkpoint", ws["base"],
                       "--out", str(tmp_path / "x.json"),
                       "--constraint", "0.01", "--calib", "32"])
        assert rc == 1
        assert "infeasible" in capsys.readouterr().err

    def test_missing_checkpoint_exits_1(self, tmp_path, capsys):
        rc = cli.main(["prune-spatial", "--checkpoint",
                       str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "x.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestPruneTemporal:
    def test_lists_complexity_and_budget_per_sublayer(self, ws, tmp_path, capsys):
        out = tmp_path / "t.json"
        rc = cli.main(["prune-temporal", "--checkpoint", ws["spatial"],
                       "--out", str(out), "--base", "1.3", "--calib", "64"])
        assert rc == 0
        txt = capsys.readouterr().out
        rows = re.findall(r"(L\d+\.\w+): c=(\d+) t=(\d+)", txt)
        assert [r[0] for r in rows] == [f"L0.{n}" for n in
                                        ("key", "value", "attn", "fc",
                                         "inter", "output")]
        assert "mean timesteps" in txt
        _, _, plan = load_checkpoint(str(out))
        assert [int(r[2]) for r in rows] == plan.flat().tolist()
        assert plan.max_timesteps() <= 10
        assert plan.steps.min() >= 1

    def test_rho_scales_the_plan(self, ws, tmp_path):
        out = tmp_path / "r.json"
        rc = cli.main(["prune-temporal", "--checkpoint", ws["spatial"],
                       "--out", str(out), "--base", "1.3", "--calib", "64",
                       "--rho", "0.5"])
        assert rc == 0
        _, _, full = load_checkpoint(ws["temporal"])
        _, _, halved = load_checkpoint(str(out))
        expect = np.maximum(1, np.floor(0.5 * full.steps)).astype(np.int64)
        assert np.array_equal(halved.steps, expect)

    @pytest.mark.parametrize("flag,value", [
        ("--base", "1.0"), ("--base", "0.9"), ("--base", "x"),
        ("--rho", "0"), ("--rho", "1.5"), ("--rho", "y"),
    ])
    def test_bad_flag_values_are_usage_errors(self, ws, tmp_path, flag, value):
        with pytest.raises(SystemExit) as exc:
            cli.main(["prune-temporal", "--checkpoint", ws["spatial"],
                      "--out", str(tmp_path / "x.json"), flag, value])
        assert exc.value.code == 2


class TestRetrain:
    def test_recovers_on_pruned_checkpoint(self, ws, tmp_path, capsys):
        out = tmp_path / "rt.json"
        rc = cli.main(["retrain", "--checkpoint", ws["temporal"],
                       "--config", ws["cfg"], "--out", str(out),
                       "--epochs", "1", "--lr", "0.01"])
        assert rc == 0
        assert "test accuracy" in capsys.readouterr().out
        model, masks, plan = load_checkpoint(str(out))
        base_model, _, _ = load_checkpoint(ws["temporal"])
        assert not np.array_equal(model.embedding, base_model.embedding)
        assert plan.steps.tolist() == load_checkpoint(ws["temporal"])[2].steps.tolist()

    def test_fixed_vth_freezes_thresholds(self, ws, tmp_path):
        out = tmp_path / "fv.json"
        rc = cli.main(["retrain", "--checkpoint", ws["temporal"],
                       "--config", ws["cfg"], "--out", str(out),
                       "--epochs", "1", "--lr", "0.01", "--fixed-vth"])
        assert rc == 0
        model, _, _ = load_checkpoint(str(out))
        before, _, _ = load_checkpoint(ws["temporal"])
        assert np.array_equal(model.layers[0].vth, before.layers[0].vth)


class TestEval:
    def test_deterministic_json_result(self, ws, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        args = ["eval", "--checkpoint", ws["temporal"], "--data", "40",
                "--batch", "16"]
        assert cli.main(args + ["--out", str(a)]) == 0
        printed = capsys.readouterr().out
        assert cli.main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        result = json.loads(a.read_text())
        assert set(result) == {"accuracy", "acs_ratio", "normalized_c",
                               "mean_timesteps", "examples"}
        assert 0.0 <= result["accuracy"] <= 1.0
        assert result["examples"] == 40
        assert json.loads(printed) == result

    def test_jsonl_input(self, ws, tmp_path):
        data = gen_keyword_task(8, 4, 20, RandomStream(4))
        path = tmp_path / "d.jsonl"
        save_jsonl(str(path), data)
        rc = cli.main(["eval", "--checkpoint", ws["temporal"],
                       "--data", str(path), "--batch", "8"])
        assert rc == 0

    def test_bad_count_exits_1(self, ws, capsys):
        rc = cli.main(["eval", "--checkpoint", ws["temporal"], "--data", "0"])
        assert rc == 1
        assert "positive" in capsys.readouterr().err


class TestReport:
    def test_writes_curves_sweep_and_summary(self, ws, tmp_path, capsys):
        out_dir = tmp_path / "report"
        rc = cli.main(["report", "--checkpoint", ws["spatial"],
                       "--out-dir", str(out_dir), "--calib", "48",
                       "--batch", "16"])
        assert rc == 0
        curves = (out_dir / "asr_layers.csv").read_text().splitlines()
        assert curves[0] == "timestep,layer_0"
        assert len(curves) == 11      # header + t_conv rows
        sweep = (out_dir / "constraint_sweep.csv").read_text().splitlines()
        assert sweep[0] == "constraint,acs_ratio,accuracy"
        assert len(sweep) == 9        # header + 8 budgets
        for line in sweep[1:]:
            constraint, ratio, acc = map(float, line.split(","))
            assert ratio <= constraint * (1 + 1e-12)
            assert 0.0 <= acc <= 1.0
        summary = json.loads((out_dir / "report.json").read_text())
        assert {"config", "active_heads", "active_neurons", "timestep_plan",
                "acs_total", "acs_ratio", "normalized_c", "mean_timesteps",
                "proxy_accuracy"} <= set(summary)
        assert summary["timestep_plan"]["key"] == [10]


class TestAblate:
    def test_activity_study(self, ws, tmp_path, capsys):
        out = tmp_path / "act.json"
        rc = cli.main(["ablate", "--study", "activity", "--config", ws["cfg"],
                       "--epochs", "1", "--out", str(out)])
        assert rc == 0
        result = json.loads(out.read_text())
        assert result["study"] == "activity"
        for side in ("with_activity", "without_activity"):
            assert set(result[side]) == {"eta", "accuracy", "group_asr",
                                         "normalized_c"}
            assert set(result[side]["group_asr"]) == {"key_value", "attn",
                                                      "fc", "inter_output"}
        assert isinstance(result["asr_lower_groups"], list)
        assert isinstance(result["normalized_c_lower"], bool)

    def test_adaptive_vth_study(self, ws, tmp_path, capsys):
        out = tmp_path / "vth.json"
        rc = cli.main(["ablate", "--study", "adaptive-vth",
                       "--config", ws["cfg"], "--epochs", "1",
                       "--out", str(out)])
        assert rc == 0
        result = json.loads(out.read_text())
        assert result["scaled_mean_timesteps"] < 10
        for side in ("adaptive_vth", "fixed_vth"):
            assert set(result[side]) == {"accuracy", "recovered",
                                         "recovered_at_least_half"}

    def test_joint_study(self, ws, tmp_path, capsys):
        out = tmp_path / "joint.json"
        rc = cli.main(["ablate", "--study", "joint", "--config", ws["cfg"],
                       "--epochs", "1", "--out", str(out)])
        assert rc == 0
        result = json.loads(out.read_text())
        for side in ("two_stage", "joint"):
            assert set(result[side]) == {"accuracy", "acs_ratio"}
            assert 0.0 <= result[side]["accuracy"] <= 1.0

    def test_unknown_study_is_usage_error(self, ws):
        with pytest.raises(SystemExit) as exc:
            cli.main(["ablate", "--study", "bogus", "--config", ws["cfg"]])
        assert exc.value.code == 2


class TestUsage:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2
