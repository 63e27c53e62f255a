import csv
import hashlib
import json

import numpy as np
import pytest

from ncla import model as M
from ncla.cli import main
from ncla.graph import SbmSpec, generate_sbm, load_graph, write_graph
from ncla.io import read_embeddings


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def pack(tmp_path):
    g = generate_sbm(SbmSpec(2, 15, 0.4, 0.03, feature_dim=5, feature_signal=0.5, seed=2))
    return write_graph(g, tmp_path / "pack")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_sbm_and_pack_info(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-sbm", "--out", tmp_path / "p", "--nodes-per-block", 20, "--seed", 4)
    assert code == 0
    code, out, _ = run(capsys, "pack-info", tmp_path / "p")
    info = json.loads(out)
    assert code == 0 and info["N"] == 40 and info["class_counts"] == [20, 20]
    assert load_graph(tmp_path / "p") == generate_sbm(SbmSpec(2, 20, seed=4))


def test_train_outputs_and_echo(pack, tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--graph", pack, "--views", 3, "--dim", 4, "--epochs", 3, "--out", out)
    assert code == 0
    for name in ("checkpoint.json", "optimizer_state.json", "train_report.json",
                 "embeddings.bin", "embeddings.json", "resolved_config.json"):
        assert (out / name).is_file()
    cfg = json.loads((out / "resolved_config.json").read_text())
    assert cfg["train"]["n_views"] == 3 and cfg["train"]["tau"] == 1.0
    H, meta = read_embeddings(out / "embeddings.bin")
    assert H.shape == (30, 12)
    assert meta["source_checkpoint_sha256"] == sha(out / "checkpoint.json")
    assert len(json.loads((out / "train_report.json").read_text())["loss_trace"]) == 3


def test_preset_mirrors_cora_row(tmp_path, capsys, pack):
    out = tmp_path / "cora"
    code, _, _ = run(capsys, "train", "--preset", "cora", "--graph", pack, "--epochs", 1, "--out", out)
    assert code == 0
    t = json.loads((out / "resolved_config.json").read_text())["train"]
    assert (t["n_views"], t["out_dim"], t["tau"], t["learning_rate"], t["weight_decay"]) == (4, 32, 1.0, 1e-2, 1e-4)
    from importlib import resources
    import configparser
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(resources.files("ncla.presets").joinpath("cora.ini").read_text())
    assert cp["train"]["epochs"] == "2000"


def test_config_file_and_flag_override(pack, tmp_path, capsys):
    ini = tmp_path / "exp.ini"
    ini.write_text(f"[data]\ngraph = {pack}\n[train]\nn_views = 3\nout_dim = 2\nepochs = 2\ntau = 0.5\n")
    out = tmp_path / "o"
    assert run(capsys, "train", "--config", ini, "--tau", 2.0, "--out", out)[0] == 0
    t = json.loads((out / "resolved_config.json").read_text())["train"]
    assert t["n_views"] == 3 and t["tau"] == 2.0


def test_unknown_config_key_is_error(pack, tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[train]\nbogus = 1\n")
    code, _, err = run(capsys, "train", "--config", ini, "--graph", pack, "--out", tmp_path / "o")
    assert code != 0
    assert json.loads(err)["error"] == "CliError"
    assert (tmp_path / "o" / "error.json").is_file()


def test_zero_lr_single_epoch_equals_untrained_forward(pack, tmp_path, capsys):
    out = tmp_path / "o"
    run(capsys, "train", "--graph", pack, "--epochs", 1, "--lr", 0, "--wd", 0, "--views", 2, "--dim", 3,
        "--seed", 6, "--out", out)
    H, _ = read_embeddings(out / "embeddings.bin")
    g = load_graph(pack)
    _, emb = M.forward(g, M.init_params(g.num_features, 3, 2, 6))
    assert np.array_equal(H, emb.concatenated)


def test_train_rerun_byte_identical(pack, tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "train", "--graph", pack, "--epochs", 4, "--dim", 3, "--out", tmp_path / name)
    assert sha(tmp_path / "a" / "embeddings.bin") == sha(tmp_path / "b" / "embeddings.bin")
    assert sha(tmp_path / "a" / "checkpoint.json") == sha(tmp_path / "b" / "checkpoint.json")


def test_resume(pack, tmp_path, capsys):
    run(capsys, "train", "--graph", pack, "--epochs", 6, "--dim", 3, "--out", tmp_path / "full")
    run(capsys, "train", "--graph", pack, "--epochs", 3, "--dim", 3, "--out", tmp_path / "h1")
    run(capsys, "train", "--graph", pack, "--epochs", 3, "--dim", 3, "--out", tmp_path / "h2",
        "--resume", tmp_path / "h1" / "checkpoint.json",
        "--optimizer-state", tmp_path / "h1" / "optimizer_state.json")
    assert sha(tmp_path / "full" / "embeddings.bin") == sha(tmp_path / "h2" / "embeddings.bin")


def test_evaluate_one_hot(pack, tmp_path, capsys):
    from ncla.io import write_embeddings
    g = load_graph(pack)
    write_embeddings(tmp_path / "oh.bin", np.eye(2)[g.labels])
    code, out, _ = run(capsys, "evaluate", "--graph", pack, "--embeddings", tmp_path / "oh.bin",
                       "--labels-per-class", 2, "--n-splits", 4, "--out", tmp_path / "ev")
    assert code == 0 and json.loads(out)["mean"] == 1.0
    rows = list(csv.DictReader(open(tmp_path / "ev" / "results.csv")))
    assert len(rows) == 4
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["mean"] == 1.0 and summary["config"]["split"]["labels_per_class"] == 2


def test_evaluate_missing_labels(pack, tmp_path, capsys):
    (pack / "labels.csv").unlink()
    from ncla.io import write_embeddings
    write_embeddings(tmp_path / "e.bin", np.zeros((30, 2)))
    code, _, err = run(capsys, "evaluate", "--graph", pack, "--embeddings", tmp_path / "e.bin",
                       "--out", tmp_path / "ev")
    assert code != 0 and "labels" in json.loads(err)["message"]


def test_train_then_evaluate_beats_untrained(tmp_path, capsys):
    """End-to-end through files on the acceptance SBM (one seed)."""
    run(capsys, "train", "--preset", "sbm", "--out", tmp_path / "t")
    run(capsys, "train", "--preset", "sbm", "--epochs", 1, "--lr", 0, "--out", tmp_path / "u")
    means = []
    for arm in ("t", "u"):
        code, out, _ = run(capsys, "evaluate", "--preset", "sbm", "--embeddings", tmp_path / arm / "embeddings.bin",
                           "--out", tmp_path / f"ev_{arm}")
        assert code == 0
        means.append(json.loads(out)["mean"])
    assert means[0] > means[1]


def test_ablate_table_shape(pack, tmp_path, capsys):
    code, out, _ = run(capsys, "ablate", "--graph", pack, "--epochs", 3, "--dim", 3, "--n-splits", 2,
                       "--out", tmp_path / "ab")
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "ab" / "ablation.csv")))
    assert rows[0][0] == "Variants"
    assert [r[0] for r in rows[1:]] == ["NCL", "INFONCE", "NT_XENT", "NCL_NO_POS2", "NCL_NO_POS3"]
    echo = json.loads((tmp_path / "ab" / "resolved_config.json").read_text())
    assert echo["eval"]["split"]["labels_per_class"] == 1


def test_ablate_single_variant_equals_train_evaluate(pack, tmp_path, capsys):
    run(capsys, "ablate", "--graph", pack, "--epochs", 3, "--dim", 3, "--n-splits", 3,
        "--variants", "INFONCE", "--out", tmp_path / "ab")
    runs = list(csv.DictReader(open(tmp_path / "ab" / "ablation_runs.csv")))
    run(capsys, "train", "--graph", pack, "--epochs", 3, "--dim", 3, "--variant", "INFONCE", "--out", tmp_path / "t")
    _, out, _ = run(capsys, "evaluate", "--graph", pack, "--embeddings", tmp_path / "t" / "embeddings.bin",
                    "--labels-per-class", 1, "--n-splits", 3, "--out", tmp_path / "e")
    assert float(runs[0]["mean_accuracy"]) == json.loads(out)["mean"]


def test_sweep(pack, tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--graph", pack, "--axis", "tau", "--values", 0.5, 1, 5,
                     "--epochs", 2, "--dim", 3, "--n-splits", 2, "--labels-per-class", 2, "--out", tmp_path / "sw")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert [float(r["value"]) for r in rows] == [0.5, 1.0, 5.0]


def test_sweep_single_value_equals_single_run(pack, tmp_path, capsys):
    run(capsys, "sweep", "--graph", pack, "--axis", "K", "--values", 3, "--epochs", 2, "--dim", 3,
        "--n-splits", 2, "--labels-per-class", 2, "--out", tmp_path / "sw")
    row = next(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    run(capsys, "train", "--graph", pack, "--views", 3, "--epochs", 2, "--dim", 3, "--out", tmp_path / "t")
    _, out, _ = run(capsys, "evaluate", "--graph", pack, "--embeddings", tmp_path / "t" / "embeddings.bin",
                    "--labels-per-class", 2, "--n-splits", 2, "--out", tmp_path / "e")
    assert float(row["mean_accuracy"]) == json.loads(out)["mean"]


def test_sweep_empty_values(pack, tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--graph", pack, "--axis", "K", "--out", tmp_path / "sw")
    assert code != 0 and json.loads(err)["error"] == "CliError"


def test_gradcheck_command(tmp_path, capsys):
    code, out, _ = run(capsys, "gradcheck", "--path", 6, "--views", 2, "--dim", 4, "--out", tmp_path / "gc")
    assert code == 0 and json.loads(out)["passed"]
    code, out, _ = run(capsys, "gradcheck", "--path", 1)
    assert code == 0
    code, out, _ = run(capsys, "gradcheck", "--path", 6, "--perturb", 1e-3)
    assert code == 1 and not json.loads(out)["passed"]
