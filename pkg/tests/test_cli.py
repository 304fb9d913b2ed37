import json

import pytest

from core.cli import int_list
from main import build_parser, main


def test_int_list():
    assert int_list("2,2") == [2, 2]
    assert int_list("4 8") == [4, 8]


def test_every_app_mounts_its_commands():
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    for name in ("gen", "run", "summarize", "construct", "pieces", "lower-bound", "embed-check",
                 "train-regression", "train-ot", "sinkhorn-eval", "init-diagnostics"):
        assert name in commands, name


def test_construct_prints_certificate(capsys):
    assert main(["construct", "quadratic", "--widths", "2,2"]) == 0
    cert = json.loads(capsys.readouterr().out)
    assert cert["pass"] is True
    assert cert["claimed_bound"] == 0.0078125


def test_construct_without_widths_is_a_contract_violation():
    assert main(["construct", "quadratic"]) == 2


def test_lower_bound(capsys):
    assert main(["lower-bound", "--k", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["floor"] == pytest.approx(1.0 / 32.0)


def test_random_pieces(capsys):
    assert main(["pieces", "--seeds", "5"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 5


def test_gen_and_sinkhorn_eval(tmp_path, capsys):
    out = tmp_path / "moons.csv"
    assert main(["gen", "halfmoon", "--n", "30", "--seed", "1", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 60
    header = out.read_text().splitlines()[0]
    assert header == "role,x1,x2"

    src = tmp_path / "a.csv"
    src.write_text("x1,x2\n0,0\n1,1\n")
    assert main(["sinkhorn-eval", str(src), str(src), "--eps", "0.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["divergence"] == 0.0


def test_train_regression_command(tmp_path, capsys):
    argv = ["train-regression", "--d", "2", "--n", "100", "--n-test", "50", "--width", "4", "--depth", "2",
            "--epochs", "2", "--batch-size", "50", "--seeds", "0", "--output", str(tmp_path)]
    assert main(argv) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["metrics"]["test_mse"]["n"] == 1
    assert (tmp_path / "regression" / "summary.json").exists()


def test_run_and_summarize(tmp_path, capsys):
    config = tmp_path / "pieces.json"
    config.write_text(json.dumps({"task": "pieces", "name": "p", "model": {"arch": "icnn", "width": 3, "depth": 2,
                                                                           "gate": {"kind": "relu"}}}))
    assert main(["run", str(config), "--seeds", "0,1", "--output", str(tmp_path)]) == 0
    capsys.readouterr()
    out = tmp_path / "table.csv"
    assert main(["summarize", str(tmp_path / "p"), "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)[0]["seeds"] == 2
    assert out.exists()


def test_errors_map_to_exit_codes(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 4
    assert main(["sinkhorn-eval", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 4
    with pytest.raises(SystemExit):
        main(["construct", "cubic"])


def test_train_ot_defaults_to_cosine_learning_rate():
    args = build_parser().parse_args(["train-ot"])
    assert args.lr == 1e-2
    assert args.constant_lr is False
