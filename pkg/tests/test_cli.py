import json

import numpy as np
import pytest

from modeforge.cli import main, write_metrics
from modeforge.data import gen_fleet, load_iq, save_iq


@pytest.fixture(scope="module")
def fleet_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "fleet.rfiq"
    save_iq(gen_fleet(3, 20, 64, 20.0, 4), path)
    return path


TINY = ["--epochs", "2", "--d-model", "8", "--d-ff", "8", "--d-state", "2", "--batch-size", "16"]


class TestGenData:
    def test_writes_file(self, tmp_path, capsys):
        out = tmp_path / "f.rfiq"
        assert main(["gen-data", "--devices", "2", "--frames-per-device", "10",
                     "--frame-len", "64", "--out", str(out)]) == 0
        ds = load_iq(out)
        assert len(ds) == 20 and ds.n_classes == 2
        assert "wrote 20 frames" in capsys.readouterr().out

    def test_seed_env_fallback(self, tmp_path, monkeypatch):
        args = ["gen-data", "--devices", "2", "--frames-per-device", "10", "--frame-len", "64"]
        main(args + ["--out", str(tmp_path / "a.rfiq"), "--seed", "7"])
        monkeypatch.setenv("MODEFORGE_SEED", "7")
        main(args + ["--out", str(tmp_path / "b.rfiq")])
        assert (tmp_path / "a.rfiq").read_bytes() == (tmp_path / "b.rfiq").read_bytes()

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MODEFORGE_SEED", "abc")
        assert main(["gen-data", "--out", str(tmp_path / "x.rfiq")]) == 1


class TestValidation:
    def test_unknown_flag(self, capsys):
        assert main(["gen-data", "--out", "x", "--bogus"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and err.count("\n") == 1

    def test_missing_file(self, tmp_path, capsys):
        assert main(["decompose", "--in", str(tmp_path / "nope"), "--k", "3",
                     "--out", str(tmp_path / "o")]) == 1
        assert "file not found" in capsys.readouterr().err

    def test_range_check(self, capsys):
        assert main(["gen-data", "--devices", "1", "--out", "x"]) == 1
        assert "--devices 1" in capsys.readouterr().err

    def test_k_range(self, fleet_file, tmp_path):
        assert main(["decompose", "--in", str(fleet_file), "--k", "9", "--out", str(tmp_path / "o")]) == 1

    def test_malformed_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{oops")
        assert main(["gen-data", "--out", "x", "--config", str(cfg)]) == 1
        assert "malformed JSON" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nope": 1}))
        assert main(["gen-data", "--out", "x", "--config", str(cfg)]) == 1
        assert "unknown option 'nope'" in capsys.readouterr().err

    def test_bad_file_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.rfiq"
        bad.write_bytes(b"NOPE" + bytes(20))
        assert main(["decompose", "--in", str(bad), "--k", "2", "--out", str(tmp_path / "o")]) == 1

    def test_runtime_failure_exit_2(self, tmp_path):
        # valid flags, but 3 devices x 20 frames cannot hold out 3 illegal devices
        path = tmp_path / "f.rfiq"
        save_iq(gen_fleet(3, 20, 64, 20.0, 4), path)
        assert main(["train", "--data", str(path), "--n-illegal", "3",
                     "--out", str(tmp_path / "m.ckpt")] + TINY) == 2


class TestConfigOverride:
    def test_config_wins(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"devices": 3, "frames-per-device": 10, "frame_len": 64}))
        out = tmp_path / "f.rfiq"
        assert main(["gen-data", "--devices", "2", "--out", str(out), "--config", str(cfg)]) == 0
        assert load_iq(out).n_classes == 3


class TestDecompose:
    @pytest.mark.parametrize("k", [1, 3])
    def test_table_centers(self, fleet_file, tmp_path, capsys, k):
        out = tmp_path / "m.rfiq"
        assert main(["decompose", "--in", str(fleet_file), "--k", str(k), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        err = float(text.split("max reconstruction error")[1])
        assert err <= 1e-12
        ds = load_iq(out)
        assert ds.channels == 2 * k and ds.layout == "vmd"

    def test_optimized_centers(self, fleet_file, tmp_path):
        out = tmp_path / "m.rfiq"
        assert main(["decompose", "--in", str(fleet_file), "--k", "2", "--centers", "optimized",
                     "--out", str(out)]) == 0
        assert len(load_iq(out).centers) == 2

    def test_rejects_decomposed_input(self, fleet_file, tmp_path):
        once = tmp_path / "m.rfiq"
        main(["decompose", "--in", str(fleet_file), "--k", "2", "--out", str(once)])
        assert main(["decompose", "--in", str(once), "--k", "2", "--out", str(tmp_path / "x")]) == 1


@pytest.fixture(scope="module")
def run(fleet_file, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    ckpt = d / "model.ckpt"
    assert main(["train", "--mode", "mlfe", "--data", str(fleet_file), "--vmd-k", "2",
                 "--n-illegal", "1", "--out", str(ckpt)] + TINY) == 0
    return d, ckpt


class TestTrainEval:
    def test_checkpoint_and_metrics(self, run):
        d, ckpt = run
        assert ckpt.is_file() and (d / "model.ckpt.json").is_file()
        m = json.loads((d / "metrics.json").read_text())
        assert m["training"]["epochs"] == 2

    def test_eval_closed(self, run, fleet_file, capsys):
        d, ckpt = run
        assert main(["eval-closed", "--model", str(ckpt), "--data", str(fleet_file)]) == 0
        m = json.loads((d / "metrics.json").read_text())
        assert 0 <= m["closed_set"]["accuracy"] <= 1 and "training" in m
        assert "accuracy" in capsys.readouterr().out
        assert (d / "confusion.csv").read_text().startswith("truth\\pred")

    def test_eval_open(self, run, fleet_file, tmp_path):
        _, ckpt = run
        assert main(["eval-open", "--model", str(ckpt), "--data", str(fleet_file),
                     "--temperatures", "1", "2", "--thresholds", "0.5", "0.9",
                     "--out-dir", str(tmp_path)]) == 0
        assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 5
        m = json.loads((tmp_path / "metrics.json").read_text())
        assert m["open_set"]["n_illegal"] == 20
        assert "illegal" in (tmp_path / "confusion.csv").read_text()

    def test_deterministic_metrics(self, fleet_file, tmp_path):
        texts = []
        for name in ("a", "b"):
            ckpt = tmp_path / name / "model.ckpt"
            assert main(["train", "--data", str(fleet_file), "--vmd-k", "0", "--seed", "3",
                         "--out", str(ckpt)] + TINY) == 0
            texts.append((ckpt.parent / "metrics.json").read_text())
        assert texts[0] == texts[1]

    def test_mapping_mismatch(self, run, tmp_path):
        _, ckpt = run
        other = tmp_path / "o.rfiq"
        save_iq(gen_fleet(4, 20, 64, 20.0, 4), other)
        assert main(["eval-closed", "--model", str(ckpt), "--data", str(other)]) in (1, 2)


class TestBench:
    def test_csv(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        assert main(["bench", "--frames", "100", "--frame-len", "128", "--k-min", "2",
                     "--k-max", "3", "--warmup", "1", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 3
        assert "speedup" in capsys.readouterr().out

    def test_too_few_frames(self, tmp_path):
        assert main(["bench", "--frames", "50", "--out", str(tmp_path / "b.csv")]) == 1


def test_metrics_rounding(tmp_path):
    write_metrics(tmp_path / "m.json", {"x": 1 / 3, "y": [np.float64(2 / 3)]})
    m = json.loads((tmp_path / "m.json").read_text())
    assert m == {"x": 0.333333333333, "y": [0.666666666667]}
