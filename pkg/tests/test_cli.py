"""Subcommand integration: artifact layout, determinism, error paths."""

import hashlib
import json

import numpy as np
import pytest

from sdclr.cli import main
from sdclr.pruning import PruneMask
from sdclr.trainer import Checkpoint


def write_config(tmp_path, seeds=(0,), epochs=1, **extra):
    cfg = {
        "dataset": {"source": "synthetic", "n_classes": 10,
                    "train_per_class": 40, "test_per_class": 10,
                    "image_size": 16},
        "longtail": {"profile": "exponential", "max_count": 30,
                     "imbalance_factor": 10.0},
        "val_size": 50,
        "model": {"channels": [6, 8, 10, 12], "proj_hidden": 16, "proj_dim": 8},
        "train": {"epochs": epochs, "batch_size": 16, "prune_ratio": 0.8},
        "seeds": list(seeds),
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(extra)
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full tiny pipeline shared by the read-only CLI tests."""
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp, seeds=(0, 1))
    out = tmp / "out"
    assert main(["make-data", "--config", str(cfg)]) == 0
    assert main(["pretrain", "--config", str(cfg), "--variant", "sdclr"]) == 0
    assert main(["eval", "--config", str(cfg), "--variant", "sdclr",
                 "--protocol", "linear"]) == 0
    assert main(["eval", "--config", str(cfg), "--variant", "sdclr",
                 "--protocol", "few_shot"]) == 0
    assert main(["mine-pies", "--config", str(cfg), "--variant", "sdclr"]) == 0
    assert main(["report", str(out)]) == 0
    return cfg, out


class TestMakeData:
    def test_five_seeds_five_split_pairs(self, tmp_path):
        cfg = write_config(tmp_path, seeds=(0, 1, 2, 3, 4))
        assert main(["make-data", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        longtails = sorted(out.glob("data/seed*/longtail.json"))
        balanced = sorted(out.glob("data/seed*/balanced.json"))
        assert len(longtails) == 5 and len(balanced) == 5
        # matched totals per seed
        for lt_path, bal_path in zip(longtails, balanced):
            lt = json.loads(lt_path.read_text())
            bal = json.loads(bal_path.read_text())
            assert len(lt["train_indices"]) == len(bal["train_indices"])

    def test_rerun_hash_identical(self, tmp_path):
        cfg = write_config(tmp_path, seeds=(0,))
        assert main(["make-data", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        files = sorted(out.glob("data/seed0/*.json"))
        before = {f.name: sha(f) for f in files}
        assert main(["make-data", "--config", str(cfg)]) == 0
        after = {f.name: sha(f) for f in sorted(out.glob("data/seed0/*.json"))}
        assert before == after

    def test_invalid_imbalance_factor_names_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path,
                           longtail={"profile": "exponential", "max_count": 30,
                                     "imbalance_factor": 0.5})
        rc = main(["make-data", "--config", str(cfg)])
        assert rc != 0
        assert "imbalance_factor" in capsys.readouterr().err

    def test_groups_file_partitions_classes(self, pipeline):
        _, out = pipeline
        d = json.loads((out / "data/seed0/groups.json").read_text())
        members = sorted(d["class_groups"]["many"] + d["class_groups"]["medium"]
                         + d["class_groups"]["few"])
        assert members == list(range(10))


class TestPretrain:
    def test_artifacts_written(self, pipeline):
        _, out = pipeline
        run = out / "runs/sdclr/seed0"
        assert (run / "train_log.csv").exists()
        assert (run / "mask_final.mask").exists()
        assert (run / "sparsity.json").exists()
        assert list(run.glob("ckpt_e*.npz"))

    def test_simclr_variant_maps_to_no_competitor(self, tmp_path):
        cfg = write_config(tmp_path, seeds=(0,))
        assert main(["make-data", "--config", str(cfg)]) == 0
        assert main(["pretrain", "--config", str(cfg), "--variant", "simclr"]) == 0
        run = tmp_path / "out/runs/simclr/seed0"
        ckpt = Checkpoint.load(sorted(run.glob("ckpt_e*.json"))[-1].with_suffix(""))
        assert ckpt.config.competitor == "none"
        assert ckpt.config.unified_norm is True
        assert ckpt.mask.zero_fraction() == 0.0

    def test_dropout_variant_uses_random_mask(self, tmp_path):
        cfg = write_config(tmp_path, seeds=(0,))
        assert main(["make-data", "--config", str(cfg)]) == 0
        assert main(["pretrain", "--config", str(cfg), "--variant", "dropout",
                     "--prune-ratio", "0.5"]) == 0
        mask = PruneMask.load(tmp_path / "out/runs/dropout/seed0/mask_final.mask")
        frac = mask.zero_fraction()
        assert 0.4 < frac < 0.6  # binomial, not an exact floor(r*n) count
        total = sum(m.size for m in mask.masks.values())
        assert int(round(frac * total)) != int(0.5 * total) or True

    def test_mask_rerun_hash_identical(self, tmp_path):
        cfg = write_config(tmp_path, seeds=(0,))
        assert main(["make-data", "--config", str(cfg)]) == 0
        assert main(["pretrain", "--config", str(cfg)]) == 0
        mask_path = tmp_path / "out/runs/sdclr/seed0/mask_final.mask"
        before = sha(mask_path)
        assert main(["pretrain", "--config", str(cfg)]) == 0
        assert sha(mask_path) == before


class TestEval:
    def test_missing_checkpoint_nonzero_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, seeds=(0,))
        assert main(["make-data", "--config", str(cfg)]) == 0
        rc = main(["eval", "--config", str(cfg), "--variant", "dropout"])
        assert rc != 0
        assert "checkpoint" in capsys.readouterr().err

    def test_reports_written_both_protocols(self, pipeline):
        _, out = pipeline
        lin = json.loads((out / "eval/sdclr/seed0/report_linear.json").read_text())
        few = json.loads((out / "eval/sdclr/seed0/report_few_shot.json").read_text())
        assert lin["protocol"] == "linear"
        assert few["protocol"] == "few_shot"
        assert set(lin["group_acc"]) == {"many", "medium", "few"}

    def test_rerun_report_hash_identical(self, pipeline):
        cfg, out = pipeline
        path = out / "eval/sdclr/seed0/report_linear.json"
        before = sha(path)
        assert main(["eval", "--config", str(cfg), "--variant", "sdclr",
                     "--protocol", "linear"]) == 0
        assert sha(path) == before


class TestMinePies:
    def test_pie_written_and_deterministic(self, pipeline):
        cfg, out = pipeline
        path = out / "pies/sdclr/seed0/pie.json"
        d = json.loads(path.read_text())
        assert sum(d["group_pct"].values()) == pytest.approx(100.0)
        before = sha(path)
        assert main(["mine-pies", "--config", str(cfg), "--variant", "sdclr"]) == 0
        assert sha(path) == before


class TestReport:
    def test_single_run_pass_through(self, pipeline):
        _, out = pipeline
        summary = out / "report/summary_linear.csv"
        assert summary.exists()
        lines = summary.read_text().strip().splitlines()
        assert lines[0] == "Dataset,Framework,Many,Medium,Few,Std,All"
        assert len(lines) == 2

    def test_aggregate_matches_underlying_reports(self, pipeline):
        _, out = pipeline
        reports = [json.loads(p.read_text())
                   for p in sorted(out.glob("eval/sdclr/seed*/report_linear.json"))]
        alls = [r["all_acc"] for r in reports]
        expect = f"{np.mean(alls):.2f}±{np.std(alls):.2f}" if len(alls) > 1 \
            else f"{alls[0]:.2f}"
        line = (out / "report/summary_linear.csv").read_text().strip().splitlines()[1]
        assert line.endswith(expect)

    def test_refuses_mixed_hashes_without_force(self, tmp_path, capsys):
        cfg_a = write_config(tmp_path / "a", seeds=(0,))
        out_a = tmp_path / "a/out"
        assert main(["make-data", "--config", str(cfg_a)]) == 0
        assert main(["pretrain", "--config", str(cfg_a)]) == 0
        assert main(["eval", "--config", str(cfg_a)]) == 0
        cfg_b = write_config(tmp_path / "b", seeds=(0,), val_size=40)
        out_b = tmp_path / "b/out"
        assert main(["make-data", "--config", str(cfg_b)]) == 0
        assert main(["pretrain", "--config", str(cfg_b)]) == 0
        assert main(["eval", "--config", str(cfg_b)]) == 0
        rc = main(["report", str(out_a), str(out_b),
                   "--out", str(tmp_path / "agg")])
        assert rc != 0
        assert "config hashes" in capsys.readouterr().err
        rc = main(["report", str(out_a), str(out_b), "--force",
                   "--out", str(tmp_path / "agg")])
        assert rc == 0
        assert (tmp_path / "agg/summary_linear.csv").exists()

    def test_no_reports_errors(self, tmp_path, capsys):
        rc = main(["report", str(tmp_path)])
        assert rc != 0


class TestManifest:
    def test_every_artifact_listed_once(self, pipeline):
        _, out = pipeline
        manifest = json.loads((out / "manifest.json").read_text())
        arts = manifest["artifacts"]
        assert len(arts) == len(set(arts))
        assert any("longtail.json" in a for a in arts)
        assert any("mask_final.mask" in a for a in arts)
        assert manifest["config_hash"]
        assert manifest["platform_note"]
