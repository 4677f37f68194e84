import json
import re

import pytest

from paretorec.checkpoint import load_checkpoint
from paretorec.cli import build_parser, main
from paretorec.data import load_dataset
from paretorec.model import ModelConfig, init_params

SMALL_MODEL = ["--d-model", "8", "--layers", "1", "--max-len", "10", "--batch", "64"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--sessions", "300", "--items", "30", "--seed", "4", "--out", str(root)]) == 0
    assert main(["prepare", "--input", str(root / "events.csv"), "--out", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(prepared):
    out = prepared / "model"
    argv = ["train", "--train", prepared / "data/train.json", "--epochs", "2", "--lr", "1e-2",
            "--lambda", "0.5", "--beta", "0.5", "0.5", "--seed", "7", "--out", out, *SMALL_MODEL]
    assert main([str(a) for a in argv]) == 0
    return out


class TestHelp:
    def test_top_level(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "synth" in capsys.readouterr().out

    @pytest.mark.parametrize("command", ["synth", "prepare", "train", "front", "hv", "recall"])
    def test_every_flag_shows_its_default(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        sub = build_parser()._subparsers._group_actions[0].choices[command]
        text = capsys.readouterr().out
        for action in sub._actions:
            if action.option_strings and action.dest != "help" and not action.required:
                assert action.option_strings[-1] in text
        assert text.count("(default:") >= sum(
            1 for a in sub._actions if a.option_strings and a.dest != "help" and not a.required
        )


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["front", "--bogus"])
        assert exc.value.code == 1

    def test_missing_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1


class TestPrepare:
    def test_summary_matches_recount(self, prepared):
        summary = json.loads((prepared / "data/summary.json").read_text())
        for split in ("train", "test"):
            ds = load_dataset(prepared / f"data/{split}.json")
            assert summary[split] == {
                "sessions": len(ds.sessions),
                "click_events": sum(len(s) for s in ds.sessions),
                # an ordered item clicked twice is still one order
                "order_events": sum(len({i for i, o in s.steps if o}) for s in ds.sessions),
                "items": ds.n_items,
            }

    def test_jsonl_and_determinism(self, tmp_path, capsys):
        assert run(["synth", "--sessions", "200", "--items", "20", "--format", "jsonl", "--out", tmp_path], capsys)[0] == 0
        outputs = []
        for name in ("a", "b"):
            code, _, _ = run(["prepare", "--input", tmp_path / "events.jsonl", "--format", "jsonl",
                              "--out", tmp_path / name], capsys)
            assert code == 0
            outputs.append([(tmp_path / name / f).read_bytes() for f in ("train.json", "test.json", "summary.json")])
        assert outputs[0] == outputs[1]

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(["prepare", "--input", tmp_path / "nope.csv", "--out", tmp_path / "out"], capsys)
        assert code == 2 and "not found" in err
        assert not (tmp_path / "out").exists()

    def test_malformed_input(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("s,i,1,click\ns,i,x,click\n")
        code, _, err = run(["prepare", "--input", tmp_path / "bad.csv", "--out", tmp_path / "out"], capsys)
        assert code == 2 and "line 2" in err
        assert not (tmp_path / "out").exists()

    def test_boundary_out_of_range(self, prepared, tmp_path, capsys):
        code, _, _ = run(["prepare", "--input", prepared / "events.csv", "--boundary", "0", "--out", tmp_path], capsys)
        assert code == 2


class TestTrain:
    def test_outputs(self, trained):
        log = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
        assert {r["epoch"] for r in log} == {1, 2}
        params, opt, cfg = load_checkpoint(trained / "checkpoint.bin")
        assert cfg.lam == 0.5 and cfg.seed == 7 and opt.step == len(log)

    def test_deterministic(self, prepared, trained, tmp_path):
        argv = ["train", "--train", prepared / "data/train.json", "--epochs", "2", "--lr", "1e-2",
                "--lambda", "0.5", "--beta", "0.5", "0.5", "--seed", "7", "--out", tmp_path, *SMALL_MODEL]
        assert main([str(a) for a in argv]) == 0
        assert (tmp_path / "checkpoint.bin").read_bytes() == (trained / "checkpoint.bin").read_bytes()

    def test_zero_lr_keeps_initialization(self, prepared, tmp_path):
        argv = ["train", "--train", prepared / "data/train.json", "--epochs", "1", "--lr", "0",
                "--seed", "3", "--out", tmp_path, *SMALL_MODEL]
        assert main([str(a) for a in argv]) == 0
        params, _, _ = load_checkpoint(tmp_path / "checkpoint.bin")
        init = init_params(ModelConfig(vocab_size=params.config.vocab_size, d_model=8, n_layers=1,
                                       n_heads=2, max_len=10, seed=3))
        assert params.fingerprint() == init.fingerprint()

    def test_default_flags_make_progress(self, tmp_path, capsys):
        assert run(["synth", "--sessions", "3000", "--out", tmp_path], capsys)[0] == 0
        assert run(["prepare", "--input", tmp_path / "events.csv", "--out", tmp_path], capsys)[0] == 0
        code, out, _ = run(["train", "--train", tmp_path / "train.json", "--epochs", "2", "--out", tmp_path / "m"], capsys)
        assert code == 0
        totals = [float(v) for v in re.findall(r"total=([0-9.]+)", out)]
        assert len(totals) == 2 and totals[1] < totals[0]

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, _ = run(["train", "--train", tmp_path / "missing.json", "--out", tmp_path / "m"], capsys)
        assert code == 2

    def test_invalid_hyperparameter(self, prepared, tmp_path, capsys):
        code, _, _ = run(["train", "--train", prepared / "data/train.json", "--batch", "0", "--out", tmp_path], capsys)
        assert code == 1

    def test_config_file_with_flag_override(self, prepared, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"epochs": 1, "lr": 0.0, "seed": 9, "d_model": 8, "layers": 1, "max_len": 10}))
        code, _, _ = run(["--config", cfg, "train", "--train", prepared / "data/train.json",
                          "--seed", "5", "--out", tmp_path / "m"], capsys)
        assert code == 0
        params, opt, tc = load_checkpoint(tmp_path / "m/checkpoint.bin")
        assert tc.seed == 5 and tc.epochs == 1 and tc.learning_rate == 0.0
        assert params.config.d_model == 8

    def test_lambda_sweep(self, prepared, tmp_path, capsys):
        code, out, _ = run(["train", "--train", prepared / "data/train.json", "--test", prepared / "data/test.json",
                            "--epochs", "1", "--lambda-sweep", "0,0.5", "--negatives", "8", "--grid", "3",
                            "--out", tmp_path, *SMALL_MODEL], capsys)
        assert code == 0
        rows = (tmp_path / "hv_summary.csv").read_text().splitlines()
        assert rows[0] == "lambda,hv,spread" and [r.split(",")[0] for r in rows[1:]] == ["0", "0.5"]
        assert (tmp_path / "lambda_0.5/checkpoint.bin").exists()
        assert len((tmp_path / "lambda_0/front.csv").read_text().splitlines()) == 4


class TestFront:
    def test_defaults(self, prepared, trained, tmp_path, capsys):
        code, _, _ = run(["front", "--checkpoint", trained / "checkpoint.bin", "--test", prepared / "data/test.json",
                          "--negatives", "16", "--out", tmp_path], capsys)
        assert code == 0
        lines = (tmp_path / "front.csv").read_text().splitlines()
        assert lines[0] == "pi_o,l_c,l_o" and len(lines) == 27
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert set(metrics) == {"hv", "reference", "nadir", "recall_at_20", "grid_size"}
        # without --ref the nadir of the front is the reference
        assert metrics["reference"] == metrics["nadir"] and metrics["grid_size"] == 26

    def test_endpoints_and_ref_echo(self, prepared, trained, tmp_path, capsys):
        code, _, _ = run(["front", "--checkpoint", trained / "checkpoint.bin", "--test", prepared / "data/test.json",
                          "--grid", "2", "--clamp", "0", "--ref", "3.86", "1.12", "--out", tmp_path], capsys)
        assert code == 0
        rows = (tmp_path / "front.csv").read_text().splitlines()[1:]
        assert [float(r.split(",")[0]) for r in rows] == [0.0, 1.0]
        assert json.loads((tmp_path / "metrics.json").read_text())["reference"] == [3.86, 1.12]

    def test_identical_reruns(self, prepared, trained, tmp_path, capsys):
        for name in ("a", "b"):
            run(["front", "--checkpoint", trained / "checkpoint.bin", "--test", prepared / "data/test.json",
                 "--grid", "5", "--out", tmp_path / name], capsys)
        for f in ("front.csv", "metrics.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_bad_grid_is_evaluation_error(self, prepared, trained, tmp_path, capsys):
        code, _, _ = run(["front", "--checkpoint", trained / "checkpoint.bin", "--test", prepared / "data/test.json",
                          "--grid", "1", "--out", tmp_path], capsys)
        assert code == 4

    def test_missing_checkpoint(self, prepared, tmp_path, capsys):
        code, _, _ = run(["front", "--checkpoint", tmp_path / "none.bin", "--test", prepared / "data/test.json",
                          "--out", tmp_path], capsys)
        assert code == 4


class TestHvAndRecall:
    def test_hv_of_csv(self, tmp_path, capsys):
        (tmp_path / "f.csv").write_text("pi_o,l_c,l_o\n0.1,1,3\n0.9,2,1\n")
        code, out, _ = run(["hv", "--front", tmp_path / "f.csv", "--ref", "4", "4"], capsys)
        assert code == 0 and json.loads(out) == {"hv": 7.0, "reference": [4.0, 4.0], "nadir": [2.0, 3.0]}

    def test_hv_benchmark_reference(self, tmp_path, capsys):
        (tmp_path / "f.csv").write_text("pi_o,l_c,l_o\n0.5,3,1\n")
        code, out, _ = run(["hv", "--front", tmp_path / "f.csv", "--dataset-ref", "diginetica"], capsys)
        assert code == 0 and json.loads(out)["reference"] == [3.86, 1.12]

    def test_hv_missing_file(self, tmp_path, capsys):
        assert run(["hv", "--front", tmp_path / "none.csv"], capsys)[0] == 4

    def test_recall(self, prepared, trained, capsys):
        code, out, _ = run(["recall", "--checkpoint", trained / "checkpoint.bin",
                            "--test", prepared / "data/test.json", "--k", "30"], capsys)
        assert code == 0
        payload = json.loads(out)
        assert payload["recall_at_30"] == 1.0 and payload["pi"] == [1.0, 0.0]

    def test_threads_flag(self, prepared, trained, capsys):
        code, _, _ = run(["--threads", "1", "recall", "--checkpoint", trained / "checkpoint.bin",
                          "--test", prepared / "data/test.json"], capsys)
        assert code == 0
