import json

import numpy as np
import pytest

from catdisc.checkpoint import load_checkpoint, save_checkpoint
from catdisc.data import ScenarioConfig, read_emb1, read_manifest
from catdisc.heads import PaHyperparams
from catdisc.pipeline import (ConfigError, RunConfig, SplitKnobs, SyntheticSource,
                              load_model, run_pipeline, tuned_synthetic_config)
from catdisc.pseudo import ApConfig


def fast_config(tmp_path, seed=0, **overrides):
    cfg = RunConfig(
        synthetic=SyntheticSource(5, 30, 8, 10.0, seed=seed),
        scenario=ScenarioConfig(old_class_fraction=0.8, old_sample_carryover=0.2,
                                step_class_fractions=(0.2,), validation_fraction=0.2,
                                seed=seed),
        head=PaHyperparams(d_emb=16, epochs=15, lr_model=1e-2, delta=0.8, lr_decay_every=10),
        ap=ApConfig(preference=-16.0),
        split=SplitKnobs(epsilon="midrange", epochs=10, lr=1e-2),
        seed=seed, out_dir=str(tmp_path / "run"))
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        arrays = {"a": np.arange(6, dtype=np.float64).reshape(2, 3),
                  "b": np.array([1.5])}
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {"step": 3}, arrays)
        meta, back = load_checkpoint(path)
        assert meta == {"step": 3}
        assert np.array_equal(back["a"], arrays["a"])
        assert np.array_equal(back["b"], arrays["b"])

    def test_float32_rounding_is_idempotent(self, tmp_path):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 4))
        path = tmp_path / "y.ckpt"
        save_checkpoint(path, {}, {"a": a})
        _, first = load_checkpoint(path)
        save_checkpoint(path, {}, first)
        _, second = load_checkpoint(path)
        assert np.array_equal(first["a"], second["a"])

    def test_header_layout(self, tmp_path):
        path = tmp_path / "z.ckpt"
        save_checkpoint(path, {"k": 1}, {"a": np.zeros(2)})
        raw = path.read_bytes()
        n = int.from_bytes(raw[:4], "little")
        header = json.loads(raw[4:4 + n])
        assert header["meta"] == {"k": 1}
        assert header["arrays"] == [{"name": "a", "shape": [2]}]
        assert len(raw) == 4 + n + 8


class TestRunConfig:
    def test_from_json_round_trip(self, tmp_path):
        cfg = fast_config(tmp_path)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = RunConfig.from_json(path)
        assert back.to_dict() == cfg.to_dict()

    def test_missing_source_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"seed": 1})

    def test_missing_dataset_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"dataset_path": str(tmp_path / "nope.emb1")})

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"synthetic": {}, "bogus_knob": 1})

    def test_unreadable_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.from_json(p)


class TestRunPipeline:
    def test_artifacts_written(self, tmp_path):
        cfg = fast_config(tmp_path)
        reports = run_pipeline(cfg)
        out = tmp_path / "run"
        for name in ["manifest.json", "step0_train.emb1", "step0_val.emb1",
                     "step1_train.emb1", "step1_val.emb1", "step0.ckpt", "step1.ckpt",
                     "report_step0.json", "report_step1.json", "split_step1.csv",
                     "cluster_step1.json", "pseudo_step1.json",
                     "run_summary.json", "metrics_table.csv"]:
            assert (out / name).exists(), name
        assert len(reports) == 2

    def test_incremental_train_file_is_unlabeled(self, tmp_path):
        cfg = fast_config(tmp_path)
        run_pipeline(cfg)
        assert read_emb1(tmp_path / "run" / "step0_train.emb1").labels is not None
        assert read_emb1(tmp_path / "run" / "step1_train.emb1").labels is None

    def test_manifest_contents(self, tmp_path):
        cfg = fast_config(tmp_path)
        run_pipeline(cfg)
        doc = read_manifest(tmp_path / "run" / "manifest.json")
        assert [s["index"] for s in doc["steps"]] == [0, 1]
        assert doc["steps"][0]["labeled"] and not doc["steps"][1]["labeled"]
        assert sorted(doc["class_map"].values()) == list(range(5))

    def test_metrics_table_layout(self, tmp_path):
        cfg = fast_config(tmp_path)
        run_pipeline(cfg)
        lines = (tmp_path / "run" / "metrics_table.csv").read_text().strip().splitlines()
        assert lines[0] == "step,M_all,M_o,M_n,M_f,M_d"
        assert len(lines) == 3

    def test_byte_identical_reports_across_runs(self, tmp_path):
        cfg1 = fast_config(tmp_path / "a", seed=3)
        cfg2 = fast_config(tmp_path / "b", seed=3)
        run_pipeline(cfg1)
        run_pipeline(cfg2)
        for name in ["report_step0.json", "report_step1.json", "run_summary.json",
                     "metrics_table.csv", "split_step1.csv"]:
            b1 = (tmp_path / "a" / "run" / name).read_bytes()
            b2 = (tmp_path / "b" / "run" / name).read_bytes()
            assert b1 == b2, name

    def test_seed_changes_the_run(self, tmp_path):
        r1 = run_pipeline(fast_config(tmp_path / "a", seed=0))
        r2 = run_pipeline(fast_config(tmp_path / "b", seed=1))
        s1 = json.dumps([r.to_dict() for r in r1])
        s2 = json.dumps([r.to_dict() for r in r2])
        assert s1 != s2

    def test_resume_reuses_finished_steps(self, tmp_path):
        cfg = fast_config(tmp_path, seed=2)
        first = run_pipeline(cfg)
        summary = (tmp_path / "run" / "run_summary.json").read_bytes()
        resumed = run_pipeline(cfg, resume=True)
        assert (tmp_path / "run" / "run_summary.json").read_bytes() == summary
        assert [r.to_dict() for r in first] == [r.to_dict() for r in resumed]

    def test_resume_after_partial_run(self, tmp_path):
        cfg = fast_config(tmp_path, seed=2)
        run_pipeline(cfg)
        full = (tmp_path / "run" / "run_summary.json").read_bytes()
        # drop the final step's artifacts: resume must redo only that stage
        (tmp_path / "run" / "step1.ckpt").unlink()
        (tmp_path / "run" / "report_step1.json").unlink()
        run_pipeline(cfg, resume=True)
        assert (tmp_path / "run" / "run_summary.json").read_bytes() == full

    def test_checkpoint_loads_as_model(self, tmp_path):
        cfg = fast_config(tmp_path)
        run_pipeline(cfg)
        head, bank, ex, meta = load_model(tmp_path / "run" / "step1.ckpt")
        assert head.d_in == 8 and head.d_emb == 16
        assert meta["step"] == 1
        assert len(bank.class_ids) >= 4
        assert ex is not None and len(ex.class_ids) == len(bank.class_ids)

    def test_replay_and_distill_can_be_disabled(self, tmp_path):
        cfg = fast_config(tmp_path, replay_enabled=False, distill_enabled=False)
        reports = run_pipeline(cfg)
        assert len(reports) == 2

    def test_three_step_scenario(self, tmp_path):
        cfg = fast_config(tmp_path)
        cfg.synthetic = SyntheticSource(10, 20, 8, 10.0, seed=0)
        cfg.scenario = ScenarioConfig(old_class_fraction=0.8, old_sample_carryover=0.2,
                                      step_class_fractions=(0.1, 0.1),
                                      validation_fraction=0.2, seed=0)
        reports = run_pipeline(cfg)
        assert [r.step_index for r in reports] == [0, 1, 2]
        novel = [r.m_new for r in reports[1:] if r.m_new is not None]
        assert reports[-1].m_d == pytest.approx(float(np.mean(novel)))


class TestTunedConfig:
    def test_defaults_describe_the_13_class_benchmark(self):
        cfg = tuned_synthetic_config(seed=4, out_dir="x")
        assert cfg.synthetic.n_classes == 13
        assert cfg.scenario.old_class_fraction == pytest.approx(10 / 13)
        assert cfg.seed == 4 and cfg.out_dir == "x"

    def test_overrides(self):
        cfg = tuned_synthetic_config(separation=4.0, old_sample_carryover=0.0,
                                     replay_enabled=False)
        assert cfg.synthetic.separation == 4.0
        assert cfg.scenario.old_sample_carryover == 0.0
        assert not cfg.replay_enabled
