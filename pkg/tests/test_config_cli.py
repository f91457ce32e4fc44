import os

import numpy as np
import pytest

from weakseg.cli import run
from weakseg.config import (
    ConfigError,
    ExperimentConfig,
    emit_config,
    parse_config,
    parse_config_text,
)

TINY_CONFIG = """
[data]
topology = globular
image_side = 16
radius_lo = 3.0
radius_hi = 5.0
noise_std = 0.02
illum_amplitude = 0.05
n_train = 4
n_test = 2
seed = 5
target_ratio = 0.03

[net]
unet_depth = 2
base_channels = 4
disc_layers = 2

[train]
epochs = 2
eval_every = 1

[output]
dir = runs
"""


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CONFIG)
    return str(p)


@pytest.fixture()
def dataset_dir(tmp_path, config_path):
    out = str(tmp_path / "data")
    assert run(["gen-data", "--config", config_path, "--out", out]) == 0
    return out


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            p = os.path.join(dirpath, name)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


class TestConfigParsing:
    def test_defaults_from_empty_text(self):
        cfg = parse_config_text("")
        assert cfg.image_side == 64
        assert cfg.variant == "partial_ce"

    def test_values_applied(self):
        cfg = parse_config_text(TINY_CONFIG)
        assert cfg.image_side == 16
        assert cfg.n_train == 4
        assert cfg.data_seed == 5
        assert cfg.unet_depth == 2

    def test_unknown_key_names_file_line_key(self):
        text = "[data]\nimage_side = 64\nwibble = 3\n"
        with pytest.raises(ConfigError, match=r"foo\.cfg:3.*wibble"):
            parse_config_text(text, origin="foo.cfg")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match=r":1.*wrong"):
            parse_config_text("[wrong]\n")

    def test_bad_value_type_rejected(self):
        with pytest.raises(ConfigError, match=r":2.*image_side"):
            parse_config_text("[data]\nimage_side = wide\n")

    def test_key_before_section_rejected(self):
        with pytest.raises(ConfigError, match="before any"):
            parse_config_text("image_side = 64\n")

    def test_semantic_validation(self):
        with pytest.raises(ConfigError, match="radius"):
            parse_config_text("[data]\nradius_lo = 40.0\nradius_hi = 50.0\n")
        with pytest.raises(ConfigError, match="variant"):
            parse_config_text("[train]\nvariant = nonsense\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# leading\n\n[data]\n# inner\nimage_side = 32\n")
        assert cfg.image_side == 32

    def test_roundtrip_through_canonical_emitter(self):
        cfg = parse_config_text(TINY_CONFIG)
        emitted = emit_config(cfg)
        again = parse_config_text(emitted)
        assert again == cfg
        assert emit_config(again) == emitted

    def test_roundtrip_of_defaults(self):
        cfg = ExperimentConfig()
        assert parse_config_text(emit_config(cfg)) == cfg

    def test_lambda_a_absent_means_variant_default(self):
        cfg = parse_config_text(TINY_CONFIG)
        assert cfg.lambda_a is None
        assert cfg.train_config("accl_paired").effective_lambda_a() == 5e-2
        cfg2 = parse_config_text(TINY_CONFIG + "\n[train]\nlambda_a = 0.25\n")
        assert cfg2.train_config("accl_paired").effective_lambda_a() == 0.25


class TestGenData:
    def test_layout_and_manifest(self, dataset_dir):
        assert os.path.isdir(os.path.join(dataset_dir, "train"))
        assert os.path.isdir(os.path.join(dataset_dir, "test"))
        manifest = open(os.path.join(dataset_dir, "manifest.txt")).read()
        assert "train_ids=0,1,2,3" in manifest
        assert "achieved_ratio=" in manifest

    def test_byte_identical_rerun(self, tmp_path, config_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert run(["gen-data", "--config", config_path, "--out", a]) == 0
        assert run(["gen-data", "--config", config_path, "--out", b]) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_seed_flag_overrides(self, tmp_path, config_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        run(["gen-data", "--config", config_path, "--out", a, "--seed", "9"])
        run(["gen-data", "--config", config_path, "--out", b])
        assert tree_bytes(a) != tree_bytes(b)

    def test_missing_config_exits_2_without_output(self, tmp_path):
        out = str(tmp_path / "never")
        assert run(["gen-data", "--config", str(tmp_path / "no.cfg"),
                    "--out", out]) == 2
        assert not os.path.exists(out)

    def test_bad_config_exits_2_without_output(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[data]\nwibble = 1\n")
        out = str(tmp_path / "never")
        assert run(["gen-data", "--config", str(bad), "--out", out]) == 2
        assert not os.path.exists(out)


class TestTrainEval:
    def test_train_writes_metrics_and_checkpoint(self, tmp_path, config_path, dataset_dir):
        out = str(tmp_path / "run")
        assert run(["train", "--config", config_path, "--data", dataset_dir,
                    "--variant", "partial_ce", "--out", out]) == 0
        metrics = open(os.path.join(out, "metrics.csv")).read().strip().split("\n")
        assert metrics[0] == "epoch,g_loss,d_loss,dice,soft_size,lr,seconds"
        assert len(metrics) == 1 + 2  # header + epochs
        assert os.path.exists(os.path.join(out, "model.ckpt"))

    def test_adversarial_train_runs(self, tmp_path, config_path, dataset_dir):
        out = str(tmp_path / "run_adv")
        assert run(["train", "--config", config_path, "--data", dataset_dir,
                    "--variant", "accl_paired", "--out", out]) == 0
        rows = open(os.path.join(out, "metrics.csv")).read().strip().split("\n")[1:]
        assert all(row.split(",")[2] != "" for row in rows)  # d_loss populated

    def test_eval_on_trained_model(self, tmp_path, config_path, dataset_dir):
        out = str(tmp_path / "run")
        run(["train", "--config", config_path, "--data", dataset_dir,
             "--variant", "partial_ce", "--out", out])
        csv_path = str(tmp_path / "eval.csv")
        assert run(["eval", "--model", os.path.join(out, "model.ckpt"),
                    "--data", dataset_dir, "--out", csv_path]) == 0
        lines = open(csv_path).read().strip().split("\n")
        assert lines[0] == "sample_id,dice,pred_area,gt_area,expansion_ratio"
        assert len(lines) == 1 + 2  # n_test samples

    def test_unknown_variant_exits_2(self, tmp_path, config_path, dataset_dir):
        code = run(["train", "--config", config_path, "--data", dataset_dir,
                    "--variant", "bogus", "--out", str(tmp_path / "x")])
        assert code == 2


class TestSweepCompare:
    def test_sweep_emits_one_row_per_weight(self, tmp_path, config_path, dataset_dir):
        out = str(tmp_path / "sweep")
        assert run(["sweep", "--config", config_path, "--data", dataset_dir,
                    "--variant", "accl_partial",
                    "--lambda-a", "3.0e-4,6.0e-4,1.0e-3,2.0e-3",
                    "--out", out]) == 0
        lines = open(os.path.join(out, "sweep.csv")).read().strip().split("\n")
        assert lines[0] == "lambda_a,mean_dice,mean_soft_size"
        assert len(lines) == 1 + 4
        assert [float(l.split(",")[0]) for l in lines[1:]] == \
            [3.0e-4, 6.0e-4, 1.0e-3, 2.0e-3]

    def test_compare_summary_and_determinism(self, tmp_path, config_path, dataset_dir):
        out1, out2 = str(tmp_path / "c1"), str(tmp_path / "c2")
        argv = ["compare", "--data", dataset_dir, "--variants",
                "partial_ce,fs_ce", "--seeds", "1,2", "--config", config_path]
        assert run(argv + ["--out", out1]) == 0
        assert run(argv + ["--out", out2]) == 0
        summary = open(os.path.join(out1, "compare.csv")).read().strip().split("\n")
        assert summary[0] == "variant,mean_dice,std_dice,mean_expansion"
        assert len(summary) == 3
        t1, t2 = tree_bytes(out1), tree_bytes(out2)
        assert t1.keys() == t2.keys()
        for name in t1:
            if name.endswith("metrics.csv"):
                # identical except the wall-clock column
                rows1 = t1[name].decode().strip().split("\n")
                rows2 = t2[name].decode().strip().split("\n")
                strip = lambda rows: [r.rsplit(",", 1)[0] for r in rows]
                assert strip(rows1) == strip(rows2)
            else:
                assert t1[name] == t2[name], name

    def test_bad_seed_list_exits_2(self, tmp_path, config_path, dataset_dir):
        assert run(["compare", "--data", dataset_dir, "--variants", "fs_ce",
                    "--seeds", "one,two", "--config", config_path,
                    "--out", str(tmp_path / "x")]) == 2


class TestGradcheckCommand:
    def test_exit_zero_and_report(self, capsys):
        assert run(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "conv2d" in out
        assert "generator_objective_composed" in out
        assert "FAIL" not in out


class TestArgparseBehavior:
    def test_no_command_exits_2(self):
        assert run([]) == 2

    def test_unknown_command_exits_2(self):
        assert run(["frobnicate"]) == 2
