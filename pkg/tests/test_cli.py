import csv
import subprocess
import sys
import time

import numpy as np
import pytest

from seco.cli import main

SMALL_GEN = """\
gen.num_classes = 3
gen.sequences_per_class = 6
gen.eval_per_class = 2
gen.frames = 6
gen.raw_dim = 8
"""

SMALL_TRAIN = """\
train.epochs = 2
train.batch_size = 4
train.backbone_widths = 8
train.head_hidden = 6
train.embed_dim = 4
train.queue_capacity = 30
probe.iterations = 50
probe.order_samples = 100
"""


@pytest.fixture
def small(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("# tiny run\n" + SMALL_GEN + SMALL_TRAIN)
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "train.bin"),
                 "--eval-out", str(tmp_path / "eval.bin")]) == 0
    return tmp_path, cfg


def header(path):
    return np.frombuffer(path.read_bytes()[4:20], "<u4").tolist()


class TestGenData:
    def test_default_header(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "d.bin")]) == 0
        assert header(tmp_path / "d.bin") == [1, 300, 16, 64]
        assert "wrote 300 sequences" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL_GEN)
        for name in ("a.bin", "b.bin"):
            assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_split(self, small):
        tmp, _ = small
        assert header(tmp / "train.bin") == [1, 12, 6, 8]
        assert header(tmp / "eval.bin") == [1, 6, 6, 8]

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("gen.bogus = 3\n")
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d.bin")]) == 2
        assert "gen.bogus" in capsys.readouterr().err

    def test_bad_value(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("gen.frames = 2\n")
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d.bin")]) == 2

    def test_missing_config(self, tmp_path, capsys):
        assert main(["gen-data", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "d.bin")]) == 1
        assert "none.cfg" in capsys.readouterr().err

    def test_prints_resolved_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("train.lr0 = 0.2\n")
        main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d.bin")])
        out = capsys.readouterr().out
        assert out.index("train.lr0 = 0.2") < out.index("wrote")
        assert "gen.num_classes = 10" in out and "train.loss_weights = 1,1,1" in out


class TestTrain:
    def run(self, tmp, cfg, extra="", name="run"):
        c = tmp / f"{name}.cfg"
        c.write_text(cfg.read_text() + extra)
        code = main(["train", "--config", str(c), "--data", str(tmp / "train.bin"), "--out-dir", str(tmp / name)])
        return code, tmp / name

    def test_outputs(self, small):
        code, out = self.run(*small)
        assert code == 0
        rows = list(csv.DictReader((out / "metrics.csv").open()))
        assert [int(r["epoch"]) for r in rows] == [1, 2]
        assert (out / "checkpoint.bin").read_bytes()[:4] == b"SECK"

    def test_epochs_zero(self, small):
        code, out = self.run(*small, "train.epochs = 0\n")
        assert code == 0
        assert (out / "metrics.csv").read_text() == "epoch,lr,inter,intra,temporal,total\n"

    def test_inter_only_total_equals_inter(self, small):
        code, out = self.run(*small, "train.loss_weights = 1,0,0\n")
        assert code == 0
        for r in csv.DictReader((out / "metrics.csv").open()):
            assert r["total"] == r["inter"]
            assert float(r["intra"]) > 0 and float(r["temporal"]) > 0

    def test_deterministic(self, small):
        tmp, cfg = small
        _, a = self.run(tmp, cfg, name="a")
        _, b = self.run(tmp, cfg, name="b")
        for f in ("metrics.csv", "checkpoint.bin"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_divergence_exit_code(self, small):
        code, _ = self.run(*small, "train.lr0 = 1e300\n")
        assert code == 3

    def test_missing_data(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "gone.bin"), "--out-dir", str(tmp_path / "o")]) == 1
        assert "gone.bin" in capsys.readouterr().err

    def test_corrupt_data(self, small):
        tmp, cfg = small
        blob = bytearray((tmp / "train.bin").read_bytes())
        blob[:4] = b"NOPE"
        (tmp / "train.bin").write_bytes(bytes(blob))
        assert self.run(tmp, cfg)[0] == 2


class TestProbe:
    def test_report(self, small, capsys):
        tmp, cfg = small
        main(["train", "--config", str(cfg), "--data", str(tmp / "train.bin"), "--out-dir", str(tmp / "r")])
        capsys.readouterr()
        code = main(["probe", "--config", str(cfg), "--checkpoint", str(tmp / "r" / "checkpoint.bin"),
                     "--train-data", str(tmp / "train.bin"), "--eval-data", str(tmp / "eval.bin"),
                     "--out", str(tmp / "report.csv")])
        assert code == 0
        lines = (tmp / "report.csv").read_text().splitlines()
        assert lines[0] == "metric,value"
        assert [l.split(",")[0] for l in lines[1:]] == ["top1", "acc_c0", "acc_c1", "acc_c2", "order_acc"]
        assert all(len(l.split(",")[1].split(".")[1]) == 6 for l in lines[1:])
        assert lines[1] in capsys.readouterr().out

    def test_missing_checkpoint(self, small, capsys):
        tmp, cfg = small
        code = main(["probe", "--checkpoint", str(tmp / "nothing.bin"), "--train-data", str(tmp / "train.bin"),
                     "--eval-data", str(tmp / "eval.bin")])
        assert code == 1
        assert "nothing.bin" in capsys.readouterr().err

    def test_architecture_mismatch(self, small, capsys):
        tmp, cfg = small
        main(["train", "--config", str(cfg), "--data", str(tmp / "train.bin"), "--out-dir", str(tmp / "r")])
        other = tmp / "other.cfg"
        other.write_text(cfg.read_text().replace("train.head_hidden = 6", "train.head_hidden = 7"))
        code = main(["probe", "--config", str(other), "--checkpoint", str(tmp / "r" / "checkpoint.bin"),
                     "--train-data", str(tmp / "train.bin"), "--eval-data", str(tmp / "eval.bin")])
        assert code == 2
        assert "(8, 7)" in capsys.readouterr().err

    def test_data_width_mismatch(self, small, tmp_path):
        tmp, cfg = small
        main(["train", "--config", str(cfg), "--data", str(tmp / "train.bin"), "--out-dir", str(tmp / "r")])
        wide = tmp / "wide.cfg"
        wide.write_text(SMALL_GEN.replace("gen.raw_dim = 8", "gen.raw_dim = 9"))
        main(["gen-data", "--config", str(wide), "--out", str(tmp / "w.bin")])
        code = main(["probe", "--checkpoint", str(tmp / "r" / "checkpoint.bin"), "--train-data", str(tmp / "w.bin"),
                     "--eval-data", str(tmp / "w.bin")])
        assert code == 2


class TestGradcheck:
    def test_passes_fast(self, capsys):
        t0 = time.perf_counter()
        assert main(["gradcheck", "--points", "100"]) == 0
        assert time.perf_counter() - t0 < 60
        out = capsys.readouterr().out
        assert "gradcheck PASSED" in out
        assert sum(1 for l in out.splitlines() if l.rstrip().endswith("PASS")) >= 6

    def test_injected_fault_fails(self, capsys):
        assert main(["gradcheck", "--points", "5", "--inject-fault", "dot"]) == 2
        out = capsys.readouterr().out
        assert "gradcheck FAILED" in out and "FAIL" in out

    def test_env_fault_via_subprocess(self, tmp_path):
        import os

        env = dict(os.environ, SECO_INJECT_FAULT="l2_normalize")
        proc = subprocess.run([sys.executable, "-m", "seco.cli", "gradcheck", "--points", "3"],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 2
        assert "FAILED" in proc.stdout
