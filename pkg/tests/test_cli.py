import numpy as np
import pytest
import yaml

from declip import config as config_mod
from declip.cli import main
from declip.evalkit import PSNR_CAP, read_report_table
from declip.imagecore import read_image, write_png
from declip.trainer import MetricsLog, load_checkpoint


def _files(d):
    return sorted(p.name for p in d.iterdir())


class TestConfig:
    def test_defaults_documented(self):
        cfg = config_mod.ToolConfig()
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (0.81, 0.095, 0.095)
        assert cfg.crop_size == 224 and cfg.clip_mode == "stretch"
        assert cfg.train().disc_lr == pytest.approx(1e-4)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("crop_sise: 64\n")
        with pytest.raises(config_mod.ConfigError, match="crop_sise"):
            config_mod.load_config(path)

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"steps": 5, "alpha": 1.0}))
        cfg = config_mod.load_config(path, dict([config_mod.parse_override("steps=7")]))
        assert cfg.steps == 7 and cfg.alpha == 1.0

    def test_cli_unknown_key_exit_status(self, tmp_path, capsys):
        assert main(["synth", str(tmp_path), "--set", "bogus=1"]) == 2
        assert "bogus" in capsys.readouterr().err


class TestSynth:
    def test_outputs_and_determinism(self, tmp_path, image_dir):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["synth", str(image_dir), "--out", str(out1), "--seed", "3"]) == 0
        assert main(["synth", str(image_dir), "--out", str(out2), "--seed", "3"]) == 0
        names = _files(out1)
        assert names == _files(out2)
        assert len([n for n in names if n.endswith("_clipped.png")]) == 6
        for name in names:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_empty_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["synth", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture
def train_args(tmp_path, image_dir, vgg_weights_path):
    return ["--set", f"source_dir={image_dir}", "--set", "crop_size=32",
            "--set", "batch_size=2", "--set", f"vgg_weights={vgg_weights_path}",
            "--set", "checkpoint_every=2"]


class TestTrain:
    def test_zero_steps(self, tmp_path, train_args):
        out = tmp_path / "run"
        assert main(["train", "--out", str(out), "--set", "steps=0", *train_args]) == 0
        ckpt = load_checkpoint(out / "checkpoints" / "ckpt_00000000.pt")
        assert ckpt["step"] == 0
        assert ckpt["tool_config"]["crop_size"] == 32
        assert (out / "config.yaml").exists()

    def test_missing_weights(self, tmp_path, image_dir, capsys):
        code = main(["train", "--out", str(tmp_path / "r"), "--set", f"source_dir={image_dir}",
                     "--set", "crop_size=32", "--set", "batch_size=2"])
        assert code == 2
        assert "vgg_weights" in capsys.readouterr().err

    def test_resume_equals_uninterrupted(self, tmp_path, train_args):
        full, split = tmp_path / "full", tmp_path / "split"
        assert main(["train", "--out", str(full), "--set", "steps=4", *train_args]) == 0
        assert main(["train", "--out", str(split), "--set", "steps=2", *train_args]) == 0
        # restarting without --resume must not clobber existing checkpoints
        assert main(["train", "--out", str(split), "--set", "steps=4", *train_args]) == 2
        assert main(["train", "--resume", "--out", str(split), "--set", "steps=4",
                     *train_args]) == 0
        a = MetricsLog(full / "checkpoints" / "metrics.txt").read()
        b = MetricsLog(split / "checkpoints" / "metrics.txt").read()
        assert a == b and len(a) == 4


@pytest.fixture
def identity_ckpt(tmp_path, train_args):
    out = tmp_path / "init"
    assert main(["train", "--out", str(out), "--set", "steps=0", *train_args]) == 0
    return out / "checkpoints" / "ckpt_00000000.pt"


class TestDeclip:
    def test_identity_checkpoint(self, tmp_path, identity_ckpt, rng):
        src = tmp_path / "in"
        write_png(src / "odd.png", rng.random((25, 31, 3)))
        write_png(src / "even.png", rng.random((16, 24, 3)))
        out = tmp_path / "restored"
        assert main(["declip", "--checkpoint", str(identity_ckpt), "--out", str(out),
                     str(src)]) == 0
        assert _files(out) == ["even.png", "odd.png"]
        for name in ("odd.png", "even.png"):
            np.testing.assert_array_equal(read_image(out / name), read_image(src / name))

    def test_bad_checkpoint(self, tmp_path, image_dir):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"junk")
        assert main(["declip", "--checkpoint", str(bad), "--out", str(tmp_path / "o"),
                     str(image_dir)]) == 2


class TestEval:
    def test_oracle_and_rows(self, tmp_path, image_dir):
        out = tmp_path / "ev"
        args = ["eval", "--baseline", "oracle", "--out", str(out),
                "--set", f"source_dir={image_dir}", "--set", "crop_size=32"]
        assert main(args) == 0
        table = read_report_table(out / "eval_report.txt")
        assert len(table) == 6 + 1
        for name, row in table.items():
            assert row["psnr_clipped_region"] == PSNR_CAP
        first = (out / "eval_report.txt").read_bytes()
        assert main(args) == 0
        assert (out / "eval_report.txt").read_bytes() == first

    def test_checkpoint_matches_identity_baseline(self, tmp_path, image_dir, identity_ckpt):
        common = ["--set", f"source_dir={image_dir}", "--set", "crop_size=32"]
        assert main(["eval", "--checkpoint", str(identity_ckpt), "--out",
                     str(tmp_path / "a"), *common]) == 0
        assert main(["eval", "--baseline", "identity", "--out", str(tmp_path / "b"), *common]) == 0
        a = read_report_table(tmp_path / "a" / "eval_report.txt")
        b = read_report_table(tmp_path / "b" / "eval_report.txt")
        for name in a:
            for col in a[name]:
                assert a[name][col] == pytest.approx(b[name][col], abs=1e-4)


class TestStudy:
    def test_build_and_tally(self, tmp_path, rng, capsys):
        dirs = {k: tmp_path / k for k in ("gt", "a", "b")}
        for i in range(40):
            for d in dirs.values():
                write_png(d / f"im{i:02d}.png", rng.random((8, 10, 3)))
        out = tmp_path / "study"
        assert main(["study", "build", "--gt", str(dirs["gt"]), "--a", str(dirs["a"]),
                     "--b", str(dirs["b"]), "--names", "declip", "other",
                     "--out", str(out), "--set", "study_pad=4"]) == 0
        montage = read_image(out / "trial_0000.png")
        assert montage.shape == (8, 3 * 10 + 2 * 4, 3)
        key_lines = (out / "answer_key.txt").read_text().splitlines()[1:]
        assert len(key_lines) == 40
        responses = []
        for n, line in enumerate(key_lines):
            trial_id, _image, left, _right, _seed = line.split()
            want = "declip" if n < 33 else "other"
            responses.append(f"{trial_id} {'left' if left == want else 'right'}")
        (out / "responses.txt").write_text("\n".join(responses) + "\n")
        capsys.readouterr()
        assert main(["study", "tally", "--key", str(out / "answer_key.txt"),
                     "--responses", str(out / "responses.txt")]) == 0
        assert "declip 33/40 82.5%" in capsys.readouterr().out

    def test_unmatched_response(self, tmp_path):
        (tmp_path / "key.txt").write_text("trial_id image left right seed\n0 x A B 0\n")
        (tmp_path / "resp.txt").write_text("7 left\n")
        assert main(["study", "tally", "--key", str(tmp_path / "key.txt"),
                     "--responses", str(tmp_path / "resp.txt")]) == 2
