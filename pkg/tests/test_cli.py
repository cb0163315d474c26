import sys

import numpy as np
import pytest

from oudefend.cli import main
from oudefend.data import load_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Dataset + tiny trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.bin"
    cfg = root / "tiny.ini"
    ckpt = root / "model.ckpt"
    cfg.write_text(
        "# tiny desk profile\n"
        "[backbone]\n"
        "widths = 4,4,8,8\n"
        "insert_after = conv4\n"
        "\n"
        "[oudefend]\n"
        "reduce_ratio = 4\n"
        "\n"
        "[train]\n"
        "epochs = 1\n"
        "batch_size = 4\n"
        "lr = 0.05\n"
    )
    assert main(["gen-data", "--out", str(data), "--num-train", "8",
                 "--num-test", "8", "--seed", "0"]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt),
                 "--config", str(cfg), "--mode", "clean", "--seed", "1"]) == 0
    return {"root": root, "data": data, "cfg": cfg, "ckpt": ckpt}


class TestGenData:
    def test_writes_loadable_file(self, workspace):
        train, test = load_dataset(workspace["data"])
        assert len(train) == 8 and len(test) == 8
        assert train.pixels.shape[1:] == (3, 8, 32, 32)

    def test_deterministic_given_seed(self, workspace, tmp_path):
        out = tmp_path / "again.bin"
        assert main(["gen-data", "--out", str(out), "--num-train", "8",
                     "--num-test", "8", "--seed", "0"]) == 0
        assert out.read_bytes() == workspace["data"].read_bytes()


class TestTrainEval:
    def test_eval_clean_prints_metric(self, workspace, capsys):
        rc = main(["eval", "--checkpoint", str(workspace["ckpt"]),
                   "--data", str(workspace["data"]), "--attack", "none"])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("clean_acc=")
        float(out.strip().split("=")[1])

    def test_eval_attacked_prints_robust(self, workspace, capsys):
        rc = main(["eval", "--checkpoint", str(workspace["ckpt"]),
                   "--data", str(workspace["data"]),
                   "--attack", "pgd_linf", "--eps", "4/255", "--alpha", "1/255", "--steps", "2"])
        assert rc == 0
        assert capsys.readouterr().out.startswith("robust_acc=")

    def test_train_writes_report(self, workspace, tmp_path, capsys):
        report = tmp_path / "report.tsv"
        ckpt = tmp_path / "m.ckpt"
        rc = main(["train", "--data", str(workspace["data"]), "--out", str(ckpt),
                   "--config", str(workspace["cfg"]), "--report", str(report), "--seed", "2"])
        assert rc == 0
        lines = report.read_text().strip().split("\n")
        assert lines[0].startswith("epoch\ttrain_loss\tclean_acc")
        assert len(lines) == 2  # header + one epoch

    def test_adversarial_training_runs(self, workspace, tmp_path):
        ckpt = tmp_path / "adv.ckpt"
        rc = main(["train", "--data", str(workspace["data"]), "--out", str(ckpt),
                   "--config", str(workspace["cfg"]), "--mode", "adversarial",
                   "--attack", "pgd_linf", "--eps", "8/255", "--alpha", "2/255",
                   "--steps", "2", "--seed", "3"])
        assert rc == 0 and ckpt.exists()


class TestAttackCommand:
    def test_constraint_report_and_exit_code(self, workspace, capsys):
        rc = main(["attack", "--checkpoint", str(workspace["ckpt"]),
                   "--data", str(workspace["data"]), "--limit", "4",
                   "--attack", "pgd_linf", "--eps", "4/255", "--alpha", "1/255", "--steps", "5"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "pgd_linf.linf_ball" in out and "PASS" in out

    def test_every_attack_certifies(self, workspace, capsys):
        for name in ("pgd_l2", "multav", "roa", "framing", "spa"):
            rc = main(["attack", "--checkpoint", str(workspace["ckpt"]),
                       "--data", str(workspace["data"]), "--limit", "4",
                       "--attack", name, "--steps", "2"])
            assert rc == 0, f"{name}: {capsys.readouterr().out}"


class TestGradCheck:
    def test_exits_zero_on_pass(self, capsys):
        rc = main(["grad-check", "--trials", "20", "--seed", "0"])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out


class TestExportFeatures:
    def test_file_counts_and_magics(self, workspace, tmp_path):
        out_dir = tmp_path / "maps"
        rc = main(["export-features", "--checkpoint", str(workspace["ckpt"]),
                   "--data", str(workspace["data"]), "--stage", "conv2",
                   "--sample", "0", "--out-dir", str(out_dir),
                   "--attack", "framing", "--width", "2", "--steps", "2"])
        assert rc == 0
        pgms = sorted(out_dir.glob("*.pgm"))
        ppms = sorted(out_dir.glob("*.ppm"))
        assert len(pgms) == 8 + 1  # one per frame plus the grid
        assert len(ppms) == 8 + 1
        assert pgms[0].read_bytes().startswith(b"P5\n")
        assert ppms[0].read_bytes().startswith(b"P6\n")

    def test_framing_perturbs_border_only(self, workspace, tmp_path):
        clean_dir = tmp_path / "clean"
        adv_dir = tmp_path / "adv"
        for d, extra in ((clean_dir, []), (adv_dir, ["--attack", "framing", "--width", "2", "--steps", "2"])):
            assert main(["export-features", "--checkpoint", str(workspace["ckpt"]),
                         "--data", str(workspace["data"]), "--stage", "conv2",
                         "--sample", "1", "--out-dir", str(d)] + extra) == 0

        def read_ppm(path):
            raw = path.read_bytes()
            header_end = raw.index(b"255\n") + 4
            return np.frombuffer(raw[header_end:], dtype=np.uint8).reshape(32, 32, 3)

        clean = read_ppm(clean_dir / "input_f00.ppm").astype(int)
        adv = read_ppm(adv_dir / "input_f00.ppm").astype(int)
        diff = np.abs(clean - adv).sum(axis=2)
        assert diff[2:-2, 2:-2].max() == 0
        assert diff.max() > 0

    def test_unknown_stage_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["export-features", "--checkpoint", str(workspace["ckpt"]),
                  "--data", str(workspace["data"]), "--stage", "conv9",
                  "--out-dir", str(tmp_path / "x")])
        assert exc.value.code == 1


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--nonsense"])
        assert exc.value.code == 1

    def test_missing_file_is_runtime_error(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "absent.ckpt"),
                   "--data", str(tmp_path / "absent.bin"), "--attack", "none"])
        assert rc == 2

    def test_module_entry_point(self, workspace):
        import subprocess
        proc = subprocess.run([sys.executable, "-m", "oudefend.cli",
                               "grad-check", "--trials", "3"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "PASS" in proc.stdout
