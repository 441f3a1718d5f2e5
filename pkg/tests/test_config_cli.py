import csv
import os

import numpy as np
import pytest

from lmtgp import cli, data, mean_teacher as mt, network
from lmtgp.config import RunConfig, format_config, parse_config, parse_config_text
from lmtgp.errors import ParseError, ValidationError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class TestParseConfig:
    def test_empty_defaults(self):
        cfg = parse_config_text("", env={})
        assert (cfg.lr, cfg.epochs, cfg.basis_size) == (1e-3, 600, 16)
        assert cfg.zeta == (1.0, 0.8, 0.6, 0.4)
        assert (cfg.lambda1, cfg.lambda2, cfg.omega1_final, cfg.omega2_final) == (0.4, 0.6, 0.2, 0.01)
        assert (cfg.beta1, cfg.beta2, cfg.eps, cfg.eta) == (0.9, 0.999, 1e-8, 0.99)

    def test_eta_out_of_range(self):
        with pytest.raises(ValidationError) as exc:
            parse_config_text("eta = 1.5", env={})
        assert exc.value.key == "eta"

    def test_unknown_key(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_config_text("seed = 1\nunknown_key = 3\n", env={})

    def test_duplicate_and_syntax(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_config_text("seed = 1\nseed = 2", env={})
        with pytest.raises(ParseError, match="line 1"):
            parse_config_text("just words", env={})
        with pytest.raises(ParseError):
            parse_config_text("epochs = many", env={})

    def test_zero_noise(self):
        with pytest.raises(ValidationError, match="noise_variance"):
            parse_config_text("noise_variance = 0", env={})

    def test_basis_vs_batch(self):
        with pytest.raises(ValidationError, match="batch_labeled"):
            parse_config_text("basis_size = 8\nbatch_labeled = 4", env={})

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError, match="nowhere.txt"):
            parse_config_text(f"manifest = {tmp_path / 'nowhere.txt'}", env={})

    def test_env_seed(self):
        assert parse_config_text("seed = 3", env={"LMTGP_SEED": "11"}).seed == 11
        with pytest.raises(ValidationError):
            parse_config_text("", env={"LMTGP_SEED": "x"})

    def test_comments_and_bools(self):
        cfg = parse_config_text("# c\n\nuse_full_gpr_loss = yes  # inline\n", env={})
        assert cfg.use_full_gpr_loss is True

    def test_format_roundtrip(self):
        cfg = parse_config_text("lr = 0.0005\nepochs = 7\nout_dir = x/y", env={})
        assert parse_config_text(format_config(cfg), env={}) == cfg

    def test_shipped_configs(self):
        desk = parse_config(os.path.join(ROOT, "configs", "desk.cfg"), env={})
        assert (desk.patch_size, desk.synthetic_labeled, desk.synthetic_unlabeled) == (32, 8, 8)
        assert (desk.basis_size, desk.epochs, desk.latent_dim) == (8, 200, 64)
        text = open(os.path.join(ROOT, "configs", "full.cfg")).read()
        full = parse_config_text(text.replace("manifest =", "# manifest ="), env={})
        assert (full.patch_size, full.basis_size, full.epochs) == (256, 16, 600)

    def test_train_config(self):
        tc = parse_config_text("basis_size = 4\nbatch_labeled = 4\neta = 0.9", env={}).train_config()
        assert tc.gp_config.basis_size == 4 and tc.ema_momentum == 0.9


def write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return str(path)


class TestCli:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["bogus"])
        assert exc.value.code == 1

    def test_gpr_demo(self, tmp_path, capsys):
        assert cli.main(["gpr-demo", "--config", write_cfg(tmp_path / "c.cfg")]) == 0
        out = capsys.readouterr().out
        assert "basis indices" in out and "max oracle residual" in out
        assert out.index("seed = 0") < out.index("basis indices")

    def test_gpr_demo_insufficient(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", basis_size=8, batch_labeled=8, gpr_demo_candidates=4)
        assert cli.main(["gpr-demo", "--config", cfg]) == 3
        assert "need at least 8 candidates" in capsys.readouterr().err

    def test_gpr_demo_zero_noise(self, tmp_path):
        assert cli.main(["gpr-demo", "--config", write_cfg(tmp_path / "c.cfg", noise_variance=0)]) == 2

    def test_train_missing_manifest(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", manifest=tmp_path / "missing.txt")
        assert cli.main(["train", "--config", cfg]) == 2
        assert "missing.txt" in capsys.readouterr().err

    def test_train_enhance_eval(self, tmp_path, capsys):
        out = tmp_path / "run"
        cfg = write_cfg(tmp_path / "c.cfg", synthetic_labeled=2, synthetic_unlabeled=2,
                        synthetic_image_size=16, patch_size=16, latent_dim=8, basis_size=2,
                        batch_labeled=2, batch_unlabeled=2, epochs=2, checkpoint_interval=1,
                        out_dir=out)
        assert cli.main(["train", "--config", cfg]) == 0
        with open(out / "report.csv") as fh:
            assert len(list(csv.reader(fh))) == 3
        assert (out / "config.cfg").exists()
        assert parse_config(out / "config.cfg", env={}) == parse_config(cfg, env={})

        src = tmp_path / "in"
        src.mkdir()
        img = np.random.default_rng(0).integers(0, 256, (30, 33, 3)) / 255.0
        data.save_image(img, src / "a.ppm")
        data.save_image(img[:9, :20], src / "b.png")
        (src / "notes.txt").write_text("not an image")
        dst = tmp_path / "out"
        ckpt = out / "ckpt_epoch0002.lmtgp"
        assert cli.main(["enhance", "--checkpoint", str(ckpt), "--in", str(src), "--out", str(dst)]) == 0
        enhanced = data.load_image(dst / "a.ppm")
        assert enhanced.shape == (30, 33, 3)
        assert data.load_image(dst / "b.png").shape == (9, 20, 3)
        assert not (dst / "notes.txt").exists()
        first = (dst / "a.ppm").read_bytes()
        assert cli.main(["enhance", "--checkpoint", str(out / "latest"), "--in", str(src),
                         "--out", str(dst)]) == 0
        assert (dst / "a.ppm").read_bytes() == first

        weights = mt.split_checkpoint(network.load_checkpoint(ckpt))
        expected = data.to_uint8(cli.enhance_image(weights, img))
        np.testing.assert_array_equal(data.to_uint8(enhanced), expected)

        (tmp_path / "pairs.txt").write_text("out/a.ppm in/a.ppm\nin/a.ppm in/a.ppm\n")
        csv_path = tmp_path / "m.csv"
        assert cli.main(["eval", "--manifest", str(tmp_path / "pairs.txt"), "--out", str(csv_path)]) == 0
        rows = list(csv.reader(open(csv_path)))
        assert rows[0] == ["filename", "psnr", "ssim"] and rows[-1][0] == "mean"
        assert float(rows[2][1]) == 300.0

    def test_enhance_all_fail(self, tmp_path):
        w = network.init_weights(0, 8)
        network.save_checkpoint(tmp_path / "w.lmtgp", w)
        src = tmp_path / "in"
        src.mkdir()
        (src / "x.txt").write_text("no")
        assert cli.main(["enhance", "--checkpoint", str(tmp_path / "w.lmtgp"), "--in", str(src),
                         "--out", str(tmp_path / "o")]) == 3

    def test_enhance_empty_dir(self, tmp_path, caplog):
        network.save_checkpoint(tmp_path / "w.lmtgp", network.init_weights(0, 8))
        (tmp_path / "in").mkdir()
        code = cli.main(["enhance", "--checkpoint", str(tmp_path / "w.lmtgp"),
                         "--in", str(tmp_path / "in"), "--out", str(tmp_path / "o")])
        assert code == 0
        assert os.listdir(tmp_path / "o") == []
        assert "no input images" in caplog.text

    def test_eval_identical_and_offset(self, tmp_path):
        gt = np.full((16, 16, 3), 100 / 255.0)
        data.save_image(gt, tmp_path / "gt.ppm")
        data.save_image(gt + 10 / 255.0, tmp_path / "off.ppm")
        (tmp_path / "same.txt").write_text("gt.ppm gt.ppm\n")
        (tmp_path / "off.txt").write_text("off.ppm gt.ppm\n")
        assert cli.main(["eval", "--manifest", str(tmp_path / "same.txt"), "--out", str(tmp_path / "s.csv")]) == 0
        mean = list(csv.reader(open(tmp_path / "s.csv")))[-1]
        assert (float(mean[1]), float(mean[2])) == (300.0, 1.0)
        assert cli.main(["eval", "--manifest", str(tmp_path / "off.txt"), "--out", str(tmp_path / "o.csv")]) == 0
        mean = list(csv.reader(open(tmp_path / "o.csv")))[-1]
        assert float(mean[1]) == pytest.approx(-10 * np.log10((10 / 255.0) ** 2), abs=1e-5)
        c1 = 0.01 ** 2
        lum = (2 * (100 / 255) * (110 / 255) + c1) / ((100 / 255) ** 2 + (110 / 255) ** 2 + c1)
        assert float(mean[2]) == pytest.approx(lum, abs=1e-5)

    def test_eval_missing_file(self, tmp_path, capsys):
        (tmp_path / "m.txt").write_text("a.ppm b.ppm\n")
        assert cli.main(["eval", "--manifest", str(tmp_path / "m.txt"), "--out", str(tmp_path / "x.csv")]) == 3
        assert "a.ppm" in capsys.readouterr().err
