"""End-to-end runs of every subcommand on a small generated benchmark."""

import pandas as pd
import pytest
import yaml

from archscope.cli import main, write_csv
from archscope.dataio import load_dataset
from archscope.hw_embedding import EmbeddingKind, load_registry
from archscope.predictor import load_checkpoint

FAST_TRAIN = {"epochs": 3, "hidden_width": 16, "batch_size": 16, "transfer_epochs": 2}


def _config(directory, name, **values):
    path = directory / f"{name}.yaml"
    path.write_text(yaml.safe_dump(values, sort_keys=False), encoding="utf-8")
    return path


def _read(path):
    return pd.read_csv(path, comment="#")


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    cfg = _config(
        root, "gen",
        command="gen-synthetic",
        output=str(data / "mini.jsonl"),
        schema_output=str(data / "mini.schema.yaml"),
        synthetic={"n_archs": 150, "n_devices": 4, "n_proxies": 5, "latent_dim": 8, "seed": 0,
                   "space_id": "mini", "node_count": 5, "device_rho": 0.6},
        pair={"target_rho": 0.8, "space_id": "mini_b", "node_count": 4, "seed": 1,
              "output": str(data / "mini_b.jsonl"), "schema_output": str(data / "mini_b.schema.yaml")},
    )
    assert main(["gen-synthetic", "--config", str(cfg)]) == 0
    return {
        "root": root,
        "a": str(data / "mini.jsonl"), "a_schema": str(data / "mini.schema.yaml"),
        "b": str(data / "mini_b.jsonl"), "b_schema": str(data / "mini_b.schema.yaml"),
    }


# ============================================================================
# GEN-SYNTHETIC
# ============================================================================

def test_generated_files(bench):
    first = pd.read_json(bench["a"], lines=True)
    second = pd.read_json(bench["b"], lines=True)
    assert len(first) == len(second) == 150
    assert first["arch_id"].iloc[0] == "mini-00000"
    schema = yaml.safe_load(open(bench["b_schema"], encoding="utf-8"))
    assert schema["space_id"] == "mini_b" and schema["node_count"] == 4


def test_conflicting_loading_recipes(tmp_path):
    cfg = _config(tmp_path, "gen", command="gen-synthetic", output=str(tmp_path / "x.jsonl"),
                  synthetic={"n_archs": 20, "n_devices": 2, "latent_dim": 4, "device_rho": 0.5,
                             "anchor_rhos": [0.5]})
    assert main(["gen-synthetic", "--config", str(cfg)]) == 2
    assert not (tmp_path / "x.jsonl").exists()


# ============================================================================
# PIPELINES
# ============================================================================

def _train_cfg(bench, directory):
    return _config(directory, "train", command="train", dataset=bench["a"], schema=bench["a_schema"],
                   modes=["ZCP", "Vec"], budgets=[20, 40], seeds=[0], eval_count=50, plots=False,
                   train=FAST_TRAIN)


def test_train_is_reproducible(bench, tmp_path, capsys):
    cfg = _train_cfg(bench, tmp_path)
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "one")]) == 0
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "two")]) == 0
    first = (tmp_path / "one" / "train_rho.csv").read_bytes()
    assert first == (tmp_path / "two" / "train_rho.csv").read_bytes()
    assert first.startswith(b"# config_hash=")
    rows = _read(tmp_path / "one" / "train_rho.csv")
    assert len(rows) == 4
    assert set(rows["mode"]) == {"ZCP", "Vec"}
    assert "[OK] Saved" in capsys.readouterr().out


def test_worker_count_does_not_change_output(bench, tmp_path):
    cfg = _train_cfg(bench, tmp_path)
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "serial"), "--workers", "1"]) == 0
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "pool"), "--workers", "2"]) == 0
    serial = (tmp_path / "serial" / "train_rho.csv").read_bytes()
    assert serial == (tmp_path / "pool" / "train_rho.csv").read_bytes()


def test_seed_override(bench, tmp_path):
    cfg = _train_cfg(bench, tmp_path)
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path), "--seeds", "3", "4"]) == 0
    assert sorted(set(_read(tmp_path / "train_rho.csv")["seed"])) == [3, 4]


def test_eval_reports(bench, tmp_path, capsys):
    cfg = _config(tmp_path, "eval", command="eval", dataset=bench["a"], out_dir=str(tmp_path / "out"),
                  test_devices=["dev3"], thresholds=[1.0, 0.3], bucket=True)
    assert main(["eval", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    matrix = pd.read_csv(out / "device_correlation.csv", comment="#", index_col=0)
    assert list(matrix.index) == ["dev0", "dev1", "dev2", "dev3"]
    assert (out / "device_correlation_bucketed.csv").exists()
    assert (out / "proxy_correlation.csv").exists()
    assert len(_read(out / "proxy_target.csv")) == 5 + 4
    closest = _read(out / "closest_train.csv")
    assert closest["device"].tolist() == ["dev3"]
    splits = _read(out / "adversarial_splits.csv")
    assert splits.loc[splits["threshold"] == 1.0, "n_train"].tolist() == [3]
    assert splits.loc[splits["threshold"] == 0.3, "n_train"].tolist() == [0]
    assert "[WARN]" in capsys.readouterr().out


def test_search(bench, tmp_path):
    cfg = _config(tmp_path, "search", command="search", dataset=bench["a"], out_dir=str(tmp_path),
                  modes=["ZCP"], budget=20, batch=10, seeds=[0, 1], train=FAST_TRAIN)
    assert main(["search", "--config", str(cfg)]) == 0
    trace = _read(tmp_path / "search_trace.csv")
    assert len(trace) == 4
    assert trace["samples"].tolist() == [10, 20, 10, 20]
    assert len(_read(tmp_path / "search_efficiency.csv")) == 2


def test_transfer_device(bench, tmp_path):
    cfg = _config(tmp_path, "td", command="transfer-device", dataset=bench["a"], out_dir=str(tmp_path),
                  test_devices=["dev3"], pretrain_budgets=[60], adapt_budget=12, modes=["ZCP"],
                  embeddings=["Table", "Index"], train=FAST_TRAIN, save_models=True)
    assert main(["transfer-device", "--config", str(cfg)]) == 0
    rows = _read(tmp_path / "transfer_device.csv")
    assert sorted(rows["embedding"]) == ["Index", "Table"]
    table = rows[rows["embedding"] == "Table"].iloc[0]
    assert table["donor"] in {"dev0", "dev1", "dev2"}
    assert table["total_measurements"] == 60 * 3 + 12
    assert set(rows["closest_train"]) <= {"dev0", "dev1", "dev2"}
    assert (tmp_path / "transfer_device_summary.csv").exists()

    dataset = load_dataset(bench["a"], bench["a_schema"])
    model = load_checkpoint(tmp_path / "models" / "ZCP_Table_t1_b60_s0.json", dataset)
    assert model.embedding.device_ids == ("dev0", "dev1", "dev2")
    assert model.provenance["devices"] == ["dev0", "dev1", "dev2"]
    registry = load_registry(tmp_path / "models" / "ZCP_Index_t1_b60_s0_registry.yaml")
    assert registry["kind"] is EmbeddingKind.INDEX
    assert registry["device_ids"] == ["dev0", "dev1", "dev2"]


def test_transfer_space(bench, tmp_path):
    cfg = _config(tmp_path, "ts", command="transfer-space", datasets=[bench["a"], bench["b"]],
                  schemas=[bench["a_schema"], bench["b_schema"]], out_dir=str(tmp_path), mode="ZCP",
                  source_fraction=0.5, budgets=[8], train=FAST_TRAIN)
    assert main(["transfer-space", "--config", str(cfg)]) == 0
    rows = _read(tmp_path / "transfer_space.csv")
    assert sorted(zip(rows["source"], rows["target"])) == [("mini", "mini_b"), ("mini_b", "mini")]


def test_ablate_proxies(bench, tmp_path):
    cfg = _config(tmp_path, "ab", command="ablate-proxies", dataset=bench["a"], out_dir=str(tmp_path),
                  budget=60, removals=[0, 2], train=FAST_TRAIN)
    assert main(["ablate-proxies", "--config", str(cfg)]) == 0
    rows = _read(tmp_path / "proxy_ablation.csv")
    assert rows["removed"].tolist() == ["none", "good", "bad"]


# ============================================================================
# FAILURES
# ============================================================================

def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path, "bad", command="train", dataset="x.jsonl", modes=["ZCP"], budgets=[8], colour="red")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "[ERROR]" in capsys.readouterr().out


def test_empty_budget_list_exit_code(bench, tmp_path, capsys):
    cfg = _config(tmp_path, "ts", command="transfer-space", datasets=[bench["a"], bench["b"]], mode="ZCP",
                  budgets=[], out_dir=str(tmp_path))
    assert main(["transfer-space", "--config", str(cfg)]) == 2
    assert "must not be empty" in capsys.readouterr().out
    assert not (tmp_path / "transfer_space.csv").exists()


def test_config_for_another_command(bench, tmp_path):
    assert main(["search", "--config", str(_train_cfg(bench, tmp_path))]) == 2


def test_missing_dataset(tmp_path, capsys):
    cfg = _config(tmp_path, "train", command="train", dataset=str(tmp_path / "absent.jsonl"), modes=["ZCP"],
                  budgets=[8], out_dir=str(tmp_path))
    assert main(["train", "--config", str(cfg)]) == 1
    assert "[ERROR]" in capsys.readouterr().out


def test_write_csv_header(tmp_path):
    path = write_csv(pd.DataFrame({"a": [1, 2]}), tmp_path / "nested" / "t.csv", {"command": "eval"})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# config_hash=") and "command=eval" in lines[0]
    assert lines[1:] == ["a", "1", "2"]
