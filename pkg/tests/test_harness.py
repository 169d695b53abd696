"""Experiment harness checks on a small 3-class world: config schema,
single-run pipeline artifacts, sweep table assembly, manifests, and
reproducibility of whole report trees.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mclab.composer import DecisionPolicy
from mclab.corrector import load_ensemble
from mclab.harness import (
    ConfigError,
    ExperimentConfig,
    StageError,
    config_sha256,
    default_config_dict,
    load_sweep,
    normalize_config,
    run_single,
    run_sweep,
)
import mclab.harness as harness_mod


def mini_doc(out_dir: str, name: str = "mini", seed: int = 11) -> dict:
    return {
        "name": name,
        "seed": seed,
        "output_dir": out_dir,
        "dataset": {
            "n_total": 600,
            "profile": {
                "proportions": [0.5, 0.3, 0.2],
                "names": ["A", "B", "C"],
                "close_pair": [0, 2],
                "close_distance": 6.0,
            },
        },
        "model": {"conv_channels": [2, 4, 8], "n_classes": 3},
        "train": {"max_epochs": 15, "patience": 5, "batch_size": 32,
                  "dropout_p": 0.1, "learning_rate": 0.05},
        "gbdt": {"n_rounds": 20, "max_depth": 3},
    }


def mini_config(out_dir: str, **kwargs) -> ExperimentConfig:
    return normalize_config(mini_doc(out_dir, **kwargs))


def tree_files(root: Path) -> list[Path]:
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def assert_trees_identical(a: Path, b: Path, skip: tuple[str, ...] = ()) -> None:
    fa, fb = tree_files(a), tree_files(b)
    assert fa == fb
    for rel in fa:
        if rel.name in skip:
            continue
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), str(rel)


class TestNormalizeConfig:
    def test_empty_document_gives_full_defaults(self):
        cfg = normalize_config({})
        assert cfg == ExperimentConfig(name="sweep_seed0")
        assert cfg.model.n_classes == 7
        assert len(cfg.dataset.profile.proportions) == 7
        assert cfg.dataset.n_total == 7000

    def test_normalization_is_idempotent(self, tmp_path):
        cfg = mini_config(str(tmp_path))
        assert normalize_config(cfg.to_dict()) == cfg

    def test_default_dict_round_trips(self):
        assert normalize_config(default_config_dict()).to_dict() == default_config_dict()

    def test_manifest_document_is_accepted(self, tmp_path):
        cfg = mini_config(str(tmp_path))
        assert normalize_config({"config": cfg.to_dict()}) == cfg

    @pytest.mark.parametrize(
        "patch,path",
        [
            ({"policy": {"tau": 1.5}}, "policy.tau"),
            ({"policy": {"kind": "vote"}}, "policy.kind"),
            ({"policy": {"as_new_class": 1}}, "policy.as_new_class"),
            ({"seed": -1}, "seed"),
            ({"split": {"fractions": [0.5, 0.5]}}, "split.fractions"),
            ({"split": {"fractions": [0.8, 0.1, 0.2]}}, "split.fractions"),
            ({"split": {"stratified": 1}}, "split.stratified"),
            ({"dataset": {"source": "database"}}, "dataset.source"),
            ({"dataset": {"source": "file"}}, "dataset.path"),
            ({"dataset": {"profile": {"proportions": [0.5, -0.5, 1.0]}}},
             "dataset.profile.proportions"),
            ({"dataset": {"profile": {"names": ["only", "two"]}}},
             "dataset.profile.names"),
            ({"excluded_class": 9}, "excluded_class"),
            ({"model": {"n_classes": 4}}, "model.n_classes"),
            ({"gbdt": {"n_rounds": 0}}, "gbdt"),
            ({"train": {"learning_rate": -0.5}}, "train"),
            ({"mystery": 1}, "mystery"),
            ({"dataset": {"profile": {"shape": "round"}}}, "dataset.profile.shape"),
        ],
    )
    def test_rejections_name_the_field(self, tmp_path, patch, path):
        doc = mini_doc(str(tmp_path))
        for key, value in patch.items():
            if isinstance(value, dict):
                sub = doc.setdefault(key, {})
                for k2, v2 in value.items():
                    if isinstance(v2, dict):
                        sub.setdefault(k2, {}).update(v2)
                    else:
                        sub[k2] = v2
            else:
                doc[key] = value
        with pytest.raises(ConfigError) as err:
            normalize_config(doc)
        assert err.value.path == path

    def test_null_seeds_mean_derived(self, tmp_path):
        doc = mini_doc(str(tmp_path))
        doc["split"] = {"seed": None}
        doc["train"]["seed"] = None
        doc["gbdt"]["seed"] = None
        cfg = normalize_config(doc)
        assert cfg.split.seed is None
        assert cfg.train_seed is None and cfg.gbdt_seed is None

    def test_config_digest_tracks_content(self, tmp_path):
        a = mini_config(str(tmp_path))
        b = mini_config(str(tmp_path))
        assert config_sha256(a) == config_sha256(b)
        assert config_sha256(replace(a, seed=12)) != config_sha256(a)


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("single")
    cfg = mini_config(str(out / "runs"))
    result = run_single(cfg, excluded=1)
    return cfg, result


class TestRunSingle:
    def test_persists_all_artifacts(self, single_run):
        _, result = single_run
        run_dir = Path(result.run_dir)
        assert run_dir.name == "excl_1"
        for name in ("model.bin", "corrector.txt", "preds.csv", "metrics.csv",
                     "history.csv"):
            assert (run_dir / name).is_file(), name

    def test_excluded_class_is_blind_for_base_but_recovered(self, single_run):
        _, result = single_run
        m = result.report.per_class[1]
        assert m.tpr_base <= 0.05
        assert m.gain is not None and m.gain > 0

    def test_corrector_saw_all_classes(self, single_run):
        _, result = single_run
        ens = load_ensemble(Path(result.run_dir) / "corrector.txt")
        assert ens.n_classes == 3
        assert len(ens.loss_curve) == 21

    def test_metrics_file_matches_in_memory_report(self, single_run):
        from mclab.metrics import report_to_csv

        _, result = single_run
        on_disk = (Path(result.run_dir) / "metrics.csv").read_text()
        assert on_disk == report_to_csv(result.report)

    def test_history_file_has_epoch_rows(self, single_run):
        _, result = single_run
        lines = (Path(result.run_dir) / "history.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,")
        assert len(lines) >= 2

    def test_rerun_is_byte_identical(self, single_run, tmp_path):
        cfg, result = single_run
        cfg2 = replace(cfg, output_dir=str(tmp_path / "runs"))
        again = run_single(cfg2, excluded=1)
        assert_trees_identical(
            Path(result.run_dir), Path(again.run_dir)
        )

    def test_unreachable_tau_leaves_base_untouched(self, single_run, tmp_path):
        cfg, _ = single_run
        off = replace(
            cfg,
            output_dir=str(tmp_path / "runs"),
            policy=DecisionPolicy(kind="excluded_only", tau=2.0),
        )
        result = run_single(off, excluded=1, persist=False)
        for m in result.report.per_class:
            assert m.tpr_corrected == m.tpr_base
            assert m.retention in (None, 1.0)

    def test_base_only_stops_after_training(self, single_run, tmp_path):
        cfg, _ = single_run
        cfg2 = replace(cfg, output_dir=str(tmp_path / "runs"))
        result = run_single(cfg2, excluded=None, base_only=True)
        assert result.report is None
        run_dir = Path(result.run_dir)
        assert (run_dir / "model.bin").is_file()
        assert (run_dir / "history.csv").is_file()
        assert not (run_dir / "preds.csv").exists()

    def test_errors_carry_their_stage(self, tmp_path):
        doc = mini_doc(str(tmp_path))
        doc["dataset"]["profile"]["dim"] = 32  # model expects 64 inputs
        cfg = normalize_config(doc)
        with pytest.raises(StageError) as err:
            run_single(cfg, excluded=0, persist=False)
        assert err.value.stage == "data"

        good = mini_config(str(tmp_path))
        with pytest.raises(StageError) as err:
            run_single(good, excluded=7, persist=False)
        assert err.value.stage == "exclude"


@pytest.fixture(scope="module")
def mini_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = mini_config(str(out / "runs"), name="sweepA")
    sweep = run_sweep(cfg, jobs=1)
    return cfg, sweep


class TestSweep:
    def test_layout(self, mini_sweep):
        _, sweep = mini_sweep
        root = sweep.root
        assert sorted(p.name for p in root.iterdir() if p.is_dir()) == [
            "excl_0", "excl_1", "excl_2", "excl_none",
        ]
        for tag in ("table3", "table4", "table5"):
            assert (root / f"{tag}.csv").is_file()
            assert (root / f"{tag}.txt").is_file()
        assert (root / "manifest.json").is_file()
        assert set(sweep.runs) == {0, 1, 2}

    def test_diagonal_is_the_excluded_class_row(self, mini_sweep):
        _, sweep = mini_sweep
        lines = (sweep.root / "table3.csv").read_text().splitlines()
        ret_rows = [l.split(",") for l in lines if l.startswith("retention,")]
        for c in range(3):
            want = sweep.runs[c].report.per_class[c].retention
            cell = ret_rows[c][2 + c]
            if want is None:
                assert cell == ""
            else:
                assert cell == f"{want:.6f}"

    def test_emitted_harm_complements_retention(self, mini_sweep):
        _, sweep = mini_sweep
        lines = (sweep.root / "table3.csv").read_text().splitlines()
        ret = [l.split(",")[2:] for l in lines if l.startswith("retention,")][:3]
        harm = [l.split(",")[2:] for l in lines if l.startswith("harm,")][:3]
        checked = 0
        for i in range(3):
            for c in range(3):
                if ret[i][c] == "":
                    assert harm[i][c] == ""
                    continue
                assert abs(float(ret[i][c]) + float(harm[i][c]) - 1.0) <= 1e-6
                checked += 1
        assert checked > 0

    def test_table3_has_average_rows(self, mini_sweep):
        _, sweep = mini_sweep
        lines = (sweep.root / "table3.csv").read_text().splitlines()
        assert sum(l.split(",")[1] == "Average" for l in lines) == 2
        text = (sweep.root / "table3.txt").read_text()
        assert "Average" in text
        # the diagonal marker shows up in table5, whose diagonal is always a
        # defined accuracy; table3's diagonal may be blank (undefined retention)
        assert "*" in (sweep.root / "table5.txt").read_text()

    def test_table4_gain_column(self, mini_sweep):
        _, sweep = mini_sweep
        lines = (sweep.root / "table4.csv").read_text().splitlines()
        assert lines[0] == "corrector,delta_fpr_macro,gain_excluded"
        for c in range(3):
            cells = lines[1 + c].split(",")
            assert cells[0] == str(c + 1)
            want = sweep.runs[c].report.per_class[c].gain
            assert cells[2] == ("" if want is None else f"{want:.6f}")

    def test_table5_power_is_diagonal_over_baseline(self, mini_sweep):
        _, sweep = mini_sweep
        lines = (sweep.root / "table5.csv").read_text().splitlines()
        assert lines[0].endswith(",power")
        for i in range(3):
            cells = lines[1 + i].split(",")
            base = sweep.baseline.report.per_class[i].tpr_base
            assert cells[1] == f"{base:.6f}"
            diag = sweep.runs[i].report.per_class[i].tpr_corrected
            if base and diag is not None:
                assert cells[-1] == f"{diag / base:.6f}"

    def test_manifest_checksums_and_replay(self, mini_sweep):
        cfg, sweep = mini_sweep
        manifest = json.loads((sweep.root / "manifest.json").read_text())
        assert manifest["artifact"] == "mclab-sweep v1"
        assert manifest["master_seed"] == cfg.seed
        assert normalize_config(manifest["config"]) == cfg
        assert manifest["config_sha256"] == config_sha256(cfg)
        assert set(manifest["runs"]) == {"excl_none", "excl_0", "excl_1", "excl_2"}
        for run_tag, files in manifest["runs"].items():
            for name, digest in files.items():
                blob = (sweep.root / run_tag / name).read_bytes()
                assert hashlib.sha256(blob).hexdigest() == digest
        for name, digest in manifest["tables"].items():
            blob = (sweep.root / name).read_bytes()
            assert hashlib.sha256(blob).hexdigest() == digest

    def test_reload_reproduces_reports(self, mini_sweep):
        _, sweep = mini_sweep
        loaded = load_sweep(sweep.root)
        for c in range(3):
            a = sweep.runs[c].report
            b = loaded.runs[c].report
            for ma, mb in zip(a.per_class, b.per_class):
                assert ma == mb
            assert a.aggregate == b.aggregate

    def test_reload_needs_manifest(self, tmp_path):
        with pytest.raises(StageError, match="manifest"):
            load_sweep(tmp_path)

    def test_sweep_is_byte_reproducible(self, mini_sweep, tmp_path):
        cfg, sweep = mini_sweep
        aside = tmp_path / "first"
        shutil.copytree(sweep.root, aside)
        run_sweep(cfg, jobs=1)  # overwrite in place with the same config
        assert_trees_identical(aside, sweep.root)

    def test_parallel_sweep_matches_serial(self, mini_sweep, tmp_path):
        cfg, sweep = mini_sweep
        par_cfg = replace(cfg, output_dir=str(tmp_path / "runs"))
        par = run_sweep(par_cfg, jobs=2)
        # configs differ only in output_dir, so compare everything except the
        # manifest and then its run/table checksum sections explicitly
        assert_trees_identical(sweep.root, par.root, skip=("manifest.json",))
        a = json.loads((sweep.root / "manifest.json").read_text())
        b = json.loads((par.root / "manifest.json").read_text())
        assert a["runs"] == b["runs"]
        assert a["tables"] == b["tables"]

    def test_failed_run_keeps_earlier_artifacts(self, tmp_path, monkeypatch):
        cfg = mini_config(str(tmp_path / "runs"), name="partial")
        real = harness_mod.run_single

        def flaky(config, excluded="config", **kwargs):
            if excluded == 2:
                raise StageError("corrector", "synthetic failure")
            return real(config, excluded=excluded, **kwargs)

        monkeypatch.setattr(harness_mod, "run_single", flaky)
        with pytest.raises(StageError, match="corrector"):
            run_sweep(cfg, jobs=1)
        root = tmp_path / "runs" / "partial"
        for tag in ("excl_none", "excl_0", "excl_1"):
            assert (root / tag / "history.csv").is_file(), tag
        assert not (root / "table3.csv").exists()
