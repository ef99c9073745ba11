import json

import numpy as np
import pytest

from samdce.cli import main
from samdce.config import ConfigError, RunConfig, dump_config, load_config, parse_config_text
from samdce.data import SynthConfig, generate_dataset, read_dataset, write_dataset
from samdce.metrics import MetricsReport


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps) == (5e-4, 0.01, 0.9, 0.999, 1e-8)
        assert (cfg.lambda1, cfg.lambda2, cfg.batch_size) == (0.2, 0.8, 4)
        assert cfg.alpha_init == 0.0 and cfg.beta_init == 0.0

    def test_overrides_and_int_to_float(self):
        cfg = parse_config_text("learning_rate = 1\nenable_icc = false\nfinetune = 'full'\n")
        assert cfg.learning_rate == 1.0 and isinstance(cfg.learning_rate, float)
        assert cfg.enable_icc is False and cfg.finetune == "full"

    def test_roundtrip(self):
        cfg = RunConfig(seed=7, num_classes=8, lambda1=0.5)
        assert parse_config_text(dump_config(cfg)) == cfg
        syn = SynthConfig(class_weights=(1, 2, 3, 4, 5, 6, 7, 8), master_seed=3)
        assert parse_config_text(dump_config(syn), SynthConfig) == syn

    @pytest.mark.parametrize(
        "text,match",
        [
            ("bogus = 1", "unknown"),
            ("epochs = 1.5", "integer"),
            ("enable_mcc = 1", "true/false"),
            ("finetune = 'half'", "finetune"),
            ("[section]\nx = 1", "flat"),
            ("epochs = ", "malformed"),
            ("lambda1 = 0\nlambda2 = 0", "lambda"),
            ("image_size = 60", "divisible"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_load_file(self, tmp_path):
        (tmp_path / "c.toml").write_text("seed = 4\n")
        assert load_config(tmp_path / "c.toml").seed == 4


TINY_CONFIG = """
image_size = 16
patch_size = 4
d_model = 8
encoder_depth = 1
encoder_heads = 2
d_ff = 16
decoder_depth = 1
decoder_heads = 2
upscale = 2
hyper_dim = 4
icc_heads = 2
lora_rank = 2
num_classes = 3
epochs = 2
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "run.toml").write_text(TINY_CONFIG)
    (tmp_path / "data.toml").write_text("image_size = 16\nnum_classes = 3\n")
    return tmp_path


def test_cli_end_to_end(workspace, capsys):
    w = workspace
    assert main(["gen-data", "--config", str(w / "data.toml"), "--out", str(w / "d.segb"), "--count", "12"]) == 0
    assert len(read_dataset(w / "d.segb")) == 12
    assert main(["train", "--config", str(w / "run.toml"), "--data", str(w / "d.segb"), "--out-ckpt", str(w / "m.ckpt")]) == 0
    assert main(["eval", "--ckpt", str(w / "m.ckpt"), "--data", str(w / "d.segb"), "--report", str(w / "r.csv")]) == 0
    report = MetricsReport.from_csv(w / "r.csv")
    assert len(report.dice) == 4
    capsys.readouterr()
    assert main(["similarity", "--ckpt", str(w / "m.ckpt"), "--data", str(w / "d.segb")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["configuration"] == "MCC+ICC" and -1 <= out["mean_pairwise_cosine_similarity"] <= 1


def test_cli_resume_matches_uninterrupted(workspace):
    w = workspace
    main(["gen-data", "--config", str(w / "data.toml"), "--out", str(w / "d.segb"), "--count", "8"])
    main(["train", "--config", str(w / "run.toml"), "--data", str(w / "d.segb"), "--out-ckpt", str(w / "full.ckpt")])
    (w / "one.toml").write_text(TINY_CONFIG.replace("epochs = 2", "epochs = 1"))
    main(["train", "--config", str(w / "one.toml"), "--data", str(w / "d.segb"), "--out-ckpt", str(w / "half.ckpt")])
    main(["train", "--config", str(w / "run.toml"), "--data", str(w / "d.segb"), "--out-ckpt", str(w / "resumed.ckpt"), "--resume", str(w / "half.ckpt")])
    assert (w / "full.ckpt").read_bytes() == (w / "resumed.ckpt").read_bytes()


def test_cli_ablate(workspace):
    w = workspace
    (w / "run.toml").write_text(TINY_CONFIG.replace("epochs = 2", "epochs = 1"))
    main(["gen-data", "--config", str(w / "data.toml"), "--out", str(w / "d.segb"), "--count", "8"])
    code = main(["ablate", "--config", str(w / "run.toml"), "--data", str(w / "d.segb"), "--out", str(w / "abl"), "--seeds", "0"])
    assert code == 0
    rows = (w / "abl.csv").read_text().splitlines()
    assert rows[0].startswith("config,mcc,icc,median_mean_dice,median_token_similarity")
    assert [r.split(",")[0] for r in rows[1:]] == ["None", "MCC", "ICC", "MCC+ICC"]
    assert (w / "abl.svg").read_text().lstrip().startswith("<?xml")


def test_cli_gradcheck_single_module(capsys):
    assert main(["gradcheck", "--module", "lora"]) == 0
    assert "lora" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv,kind",
    [
        (["eval", "--ckpt", "/nonexistent.ckpt", "--data", "x", "--report", "r"], "file_not_found"),
        (["gradcheck", "--module", "nope"], "unknown_module"),
    ],
)
def test_cli_structured_errors(argv, kind, capsys):
    code = main(argv)
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == kind and err["message"]


def test_cli_bad_dataset_reports_offset(tmp_path, capsys):
    (tmp_path / "bad.segb").write_bytes(b"NOPE\x01\x00")
    (tmp_path / "c.ckpt").write_bytes(b"")
    code = main(["train", "--data", str(tmp_path / "bad.segb"), "--out-ckpt", str(tmp_path / "o.ckpt")])
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert code != 0 and err["error"] == "dataset" and err["offset"] == 0


def test_cli_bad_config(tmp_path, capsys):
    (tmp_path / "c.toml").write_text("epochs = 'many'\n")
    code = main(["train", "--config", str(tmp_path / "c.toml"), "--data", "x", "--out-ckpt", "y"])
    assert code != 0 and json.loads(capsys.readouterr().err)["error"] == "config"


def test_cli_usage_error():
    assert main(["train"]) == 2
