import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mabsrec.cli import main

SMALL_CONFIG = dict(
    batch_size=64,
    max_seq_len=8,
    embed_dim=8,
    n_heads=2,
    n_transformer_layers=1,
    n_graph_layers=2,
    dropout_rate=0.0,
    graph_dropout_rate=0.0,
    max_epochs=2,
    seed=5,
)


def write_events_csv(path: Path, n_users=12, n_items=19, seq_len=7, seed=3):
    rng = np.random.default_rng(seed)
    lines = ["user_id,item_id,timestamp,categories"]
    for u in range(n_users):
        for j in range(seq_len):
            item = rng.integers(1, n_items + 1)
            cat = rng.integers(0, 4)
            lines.append(f"u{u},i{item},{j},c{cat}")
    path.write_text("\n".join(lines) + "\n")


def write_ratings_csv(path: Path, movies_path: Path):
    lines = ["userId,movieId,rating,timestamp"]
    rng = np.random.default_rng(1)
    for u in range(8):
        seq_len = 60 if u == 0 else 7  # user 0 exceeds the ml20m length cap
        for j in range(seq_len):
            m = rng.integers(1, 16)
            lines.append(f"{u},{m},4.0,{j}")
    path.write_text("\n".join(lines) + "\n")
    movie_lines = ["movieId,title,genres"]
    for m in range(1, 16):
        movie_lines.append(f"{m},Title {m},Drama|Comedy")
    movies_path.write_text("\n".join(movie_lines) + "\n")


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "events.csv"
    write_events_csv(data)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(SMALL_CONFIG) + "\n")
    return tmp_path, data, cfg_path


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestPrepare:
    def test_stats_block(self, runner, workspace):
        tmp, data, cfg = workspace
        out = tmp / "art"
        result = run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg),
                                 "--out", str(out)])
        assert "users:" in result.output
        assert "items:" in result.output
        assert "interactions:" in result.output
        assert "density:" in result.output
        assert (out / "items.tsv").exists()
        assert (out / "splits.jsonl").exists()
        assert (out / "partitions.txt").exists()
        for view in ("popular", "subjective", "debiased"):
            assert (out / f"graph_{view}.txt").exists()

    def test_rerun_is_byte_identical(self, runner, workspace):
        tmp, data, cfg = workspace
        out_a, out_b = tmp / "a", tmp / "b"
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(out_a)])
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(out_b)])
        files = sorted(p.name for p in out_a.iterdir())
        assert files == sorted(p.name for p in out_b.iterdir())
        for name in files:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_ml20m_length_cap_removes_long_user(self, runner, tmp_path):
        data = tmp_path / "ratings.csv"
        movies = tmp_path / "movies.csv"
        write_ratings_csv(data, movies)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({**SMALL_CONFIG, "max_keep": 50}) + "\n")
        result = run_ok(runner, [
            "prepare", "--data", str(data), "--format", "movielens_ratings",
            "--movies", str(movies), "--config", str(cfg), "--out", str(tmp_path / "art"),
        ])
        stats = {line.split(":")[0]: line.split(":")[1].strip()
                 for line in result.output.splitlines() if ":" in line}
        assert stats["users"] == "7"
        assert stats["removed_users"] == "1"

    def test_bad_file_fails_cleanly(self, runner, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,valid,header\n")
        result = runner.invoke(main, ["prepare", "--data", str(bad),
                                      "--out", str(tmp_path / "o")])
        assert result.exit_code == 1
        assert "ERROR" in result.stderr


class TestTrain:
    @pytest.fixture
    def prepared_dir(self, runner, workspace):
        tmp, data, cfg = workspace
        out = tmp / "art"
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(out)])
        return tmp, out, cfg

    def test_writes_checkpoint_log_and_config_echo(self, runner, prepared_dir):
        tmp, art, cfg = prepared_dir
        run_dir = tmp / "run"
        result = run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg),
                                 "--out", str(run_dir)])
        assert "best epoch" in result.output
        assert (run_dir / "checkpoint.bin").exists()
        log_lines = (run_dir / "train_log.jsonl").read_text().splitlines()
        assert 1 <= len(log_lines) <= SMALL_CONFIG["max_epochs"]
        rec = json.loads(log_lines[0])
        assert set(rec) == {"epoch", "train_loss", "val_recall10", "val_ndcg10", "wall_ms"}
        echo = json.loads((run_dir / "train_config.json").read_text())
        assert echo["embed_dim"] == 8
        assert echo["seed"] == 5
        assert "vocab_hash" in echo

    def test_preset_values_in_config_echo(self, runner, prepared_dir):
        tmp, art, cfg = prepared_dir
        # presets supply dataset defaults; the config file overrides sizes so
        # the tiny corpus still trains quickly
        run_dir = tmp / "run_beauty"
        run_ok(runner, ["train", "--artifacts", str(art), "--preset", "beauty",
                        "--config", str(cfg), "--out", str(run_dir), "--seed", "1"])
        echo = json.loads((run_dir / "train_config.json").read_text())
        assert echo["seed"] == 1  # CLI flag beats the file
        assert echo["embed_dim"] == 8  # file overrides the preset
        assert echo["batch_size"] == 64

    def test_preset_defaults_without_file(self, runner, tmp_path):
        from mabsrec.config import preset_config

        beauty = preset_config("beauty")
        assert (beauty.dropout_rate, beauty.n_transformer_layers, beauty.n_heads) == (0.4, 2, 1)
        assert (beauty.n_graph_layers, beauty.graph_dropout_rate) == (2, 0.4)
        ml = preset_config("ml20m")
        assert (ml.dropout_rate, ml.n_transformer_layers, ml.n_heads) == (0.1, 4, 8)
        assert (ml.n_graph_layers, ml.graph_dropout_rate, ml.max_keep) == (4, 0.3, 50)
        sports = preset_config("sports")
        assert sports.graph_dropout_rate == 0.5
        for cfg in (beauty, ml, sports):
            assert (cfg.batch_size, cfg.learning_rate, cfg.max_seq_len) == (512, 0.001, 50)

    def test_ablation_recorded(self, runner, prepared_dir):
        tmp, art, cfg = prepared_dir
        run_dir = tmp / "run_woG"
        result = run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg),
                                 "--ablation", "wo_G", "--out", str(run_dir)])
        assert "ablation: wo_G" in result.output
        echo = json.loads((run_dir / "train_config.json").read_text())
        assert echo["ablation"] == "wo_G"

    def test_rerun_checkpoint_bitwise_identical(self, runner, prepared_dir):
        tmp, art, cfg = prepared_dir
        a, b = tmp / "ra", tmp / "rb"
        run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg), "--out", str(a)])
        run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg), "--out", str(b)])
        assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
        strip = lambda p: [
            {k: v for k, v in json.loads(line).items() if k != "wall_ms"}
            for line in (p / "train_log.jsonl").read_text().splitlines()
        ]
        assert strip(a) == strip(b)


class TestEval:
    @pytest.fixture
    def trained(self, runner, workspace):
        tmp, data, cfg = workspace
        art, run_dir = tmp / "art", tmp / "run"
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(art)])
        run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg),
                        "--out", str(run_dir)])
        return tmp, art, run_dir

    def test_reports_written(self, runner, trained):
        tmp, art, run_dir = trained
        out = tmp / "eval"
        result = run_ok(runner, ["eval", "--artifacts", str(art), "--checkpoint", str(run_dir),
                                 "--out", str(out)])
        assert "recall@10:" in result.output
        report = json.loads((out / "report.json").read_text())
        assert report["split"] == "test"
        for m in ("recall@1", "recall@5", "recall@10", "ndcg@5", "ndcg@10"):
            assert 0.0 <= report["metrics"][m] <= 1.0
        assert (out / "report.txt").exists()
        assert (out / "report.csv").exists()

    def test_buckets_produce_sub_reports(self, runner, trained):
        tmp, art, run_dir = trained
        out = tmp / "eval_b"
        run_ok(runner, ["eval", "--artifacts", str(art), "--checkpoint", str(run_dir),
                        "--buckets", "5,10,20,50", "--out", str(out)])
        report = json.loads((out / "report.json").read_text())
        assert len(report["buckets"]) == 4
        assert sum(b["n_users"] for b in report["buckets"].values()) == report["n_users"]

    def test_vocab_hash_mismatch_names_both_hashes(self, runner, trained, tmp_path):
        tmp, art, run_dir = trained
        other_data = tmp_path / "other.csv"
        write_events_csv(other_data, n_users=10, n_items=25, seed=9)
        other_art = tmp_path / "other_art"
        cfg = tmp / "config.json"
        run_ok(runner, ["prepare", "--data", str(other_data), "--config", str(cfg),
                        "--out", str(other_art)])
        result = runner.invoke(main, ["eval", "--artifacts", str(other_art),
                                      "--checkpoint", str(run_dir),
                                      "--out", str(tmp_path / "ev")])
        assert result.exit_code == 1
        payload = json.loads(result.stderr.split("ERROR ", 1)[1])
        assert payload["error"] == "vocabulary mismatch between checkpoint and artifacts"
        assert payload["checkpoint_hash"] != payload["artifacts_hash"]
        assert len(payload["artifacts_hash"]) == 16

    def test_valid_split(self, runner, trained):
        tmp, art, run_dir = trained
        out = tmp / "eval_v"
        run_ok(runner, ["eval", "--artifacts", str(art), "--checkpoint", str(run_dir),
                        "--split", "valid", "--out", str(out)])
        report = json.loads((out / "report.json").read_text())
        assert report["split"] == "valid"


class TestAblate:
    def test_table_shape_and_rerun_identical(self, runner, workspace):
        tmp, data, cfg = workspace
        art = tmp / "art"
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(art)])
        out_a, out_b = tmp / "abl_a", tmp / "abl_b"
        result = run_ok(runner, ["ablate", "--artifacts", str(art), "--config", str(cfg),
                                 "--out", str(out_a)])
        table = (out_a / "ablation.tsv").read_text()
        lines = table.strip().split("\n")
        assert lines[0] == "variant\tndcg@5\tndcg@10"
        variants = [line.split("\t")[0] for line in lines[1:]]
        assert variants == ["full", "wo_G", "wo_A", "wo_D"]
        for line in lines[1:]:
            _, n5, n10 = line.split("\t")
            assert 0.0 <= float(n5) <= 1.0
            assert 0.0 <= float(n10) <= 1.0
            assert float(n5) <= float(n10) + 1e-9
        assert table in result.output
        run_ok(runner, ["ablate", "--artifacts", str(art), "--config", str(cfg),
                        "--out", str(out_b)])
        assert (out_b / "ablation.tsv").read_text() == table


class TestConfigReplay:
    def test_config_echo_reproduces_training(self, runner, workspace):
        tmp, data, cfg = workspace
        art = tmp / "art"
        run_ok(runner, ["prepare", "--data", str(data), "--config", str(cfg), "--out", str(art)])
        first = tmp / "first"
        run_ok(runner, ["train", "--artifacts", str(art), "--config", str(cfg),
                        "--out", str(first)])
        echo = json.loads((first / "train_config.json").read_text())
        echo.pop("vocab_hash")
        replay_cfg = tmp / "replay.json"
        replay_cfg.write_text(json.dumps(echo) + "\n")
        second = tmp / "second"
        run_ok(runner, ["train", "--artifacts", str(art), "--config", str(replay_cfg),
                        "--out", str(second)])
        assert (first / "checkpoint.bin").read_bytes() == (second / "checkpoint.bin").read_bytes()
