"""
Integration tests for the training harness: short runs on a 20-step pendulum.
"""

import numpy as np
import pytest

from app.runner import (
    TrainingRun,
    build_agent,
    build_env_spec,
    compare_runs,
    evaluate,
    evaluate_checkpoint,
    parse_labeled_runs,
    parse_seeds,
    recovered,
    run_finetune,
    run_sweep,
    run_training,
)
from app.schemas import RunConfig
from core.checkpoint import Checkpoint, encode_checkpoint, load_checkpoint
from core.errors import IncompatibleCheckpointError, InvalidArgumentError, NonFiniteUpdateError
from core.rng import make_streams
from utils.logging import load_metrics

ENV = {"name": "pendulum", "horizon": 20}
SMALL_STREAM = {"hidden_width": 8}
SMALL_BATCH = {"hidden_width": 8, "buffer_size": 200, "batch_size": 8, "learning_starts": 10}


def stream_config(algo="sdac", **kwargs):
    base = dict(algo=algo, env=ENV, total_steps=60, eval_every=20, eval_episodes=2,
                checkpoint_every=30, **{algo: SMALL_STREAM})
    return RunConfig(**{**base, **kwargs})


def td3_config(**kwargs):
    base = dict(algo="td3_norm", env=ENV, total_steps=40, eval_every=20, eval_episodes=2,
                checkpoint_every=0, td3=SMALL_BATCH)
    return RunConfig(**{**base, **kwargs})


def without_config(cp):
    """Checkpoint bytes minus the stored run configuration (which names the resume path)."""
    run = {k: v for k, v in cp.run.items() if k != "config"}
    return encode_checkpoint(Checkpoint(cp.algo, cp.env_hash, cp.step, cp.agent, cp.rng, run))


class TestTraining:
    """Test the training loop, metrics and checkpoints."""

    def test_zero_steps(self, tmp_path):
        """Only the initial evaluation and a final checkpoint at step 0."""
        result = run_training(stream_config(total_steps=0), tmp_path)
        assert result.checkpoint.step == 0
        assert (tmp_path / "final.ckpt").exists() and (tmp_path / "config.json").exists()
        evals = load_metrics(tmp_path, "eval")
        assert evals["step"].tolist() == [0]

    def test_metrics_schedule(self, tmp_path):
        run_training(stream_config(), tmp_path)
        assert load_metrics(tmp_path, "eval")["step"].tolist() == [0, 20, 40, 60]
        episodes = load_metrics(tmp_path, "episode")
        assert episodes["step"].tolist() == [20, 40, 60]
        assert episodes["episode_length"].tolist() == [20, 20, 20]
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "learning_curve.png").stat().st_size > 0
        assert (tmp_path / "step_00000030.ckpt").exists() and (tmp_path / "step_00000060.ckpt").exists()

    def test_eval_records_diagnostics(self, tmp_path):
        run_training(stream_config(), tmp_path)
        evals = load_metrics(tmp_path, "eval")
        assert {"critic_l2_norm", "actor_l2_norm", "sigma_r", "eta_eff_mean", "eta_eff_min"} <= set(evals.columns)
        assert "wall_time" not in evals.columns
        assert (evals["eta_eff_min"].dropna() <= 1.0).all()

    def test_wall_time_opt_in(self, tmp_path):
        run_training(stream_config(total_steps=0, include_wall_time=True), tmp_path)
        assert "wall_time" in load_metrics(tmp_path, "eval").columns

    def test_same_seed_same_bytes(self, tmp_path):
        a = run_training(stream_config(), tmp_path / "a")
        b = run_training(stream_config(), tmp_path / "b")
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = run_training(stream_config(seed=0), tmp_path / "a")
        b = run_training(stream_config(seed=1), tmp_path / "b")
        assert not np.array_equal(a.checkpoint.agent["nets"]["critic"], b.checkpoint.agent["nets"]["critic"])

    @pytest.mark.parametrize("algo", ["sdac", "s2ac", "stream_ac"])
    def test_resume_matches_uninterrupted_run(self, tmp_path, algo):
        """Stopping at step 30 and resuming gives the state of a run that never stopped."""
        full = run_training(stream_config(algo), tmp_path / "full")
        resumed_cfg = stream_config(algo, resume_from=str(tmp_path / "full" / "step_00000030.ckpt"))
        resumed = run_training(resumed_cfg, tmp_path / "resumed")
        assert resumed.checkpoint.step == 60
        assert without_config(resumed.checkpoint) == without_config(full.checkpoint)
        assert load_metrics(tmp_path / "resumed", "eval")["step"].tolist() == [40, 60]

    def test_resume_rejects_other_env(self, tmp_path):
        run_training(stream_config(total_steps=0), tmp_path / "a")
        cfg = stream_config(env={**ENV, "perturbation": {"mass": 1.5}}, resume_from=str(tmp_path / "a" / "final.ckpt"))
        with pytest.raises(IncompatibleCheckpointError, match="different environment"):
            run_training(cfg, tmp_path / "b")

    def test_resume_rejects_other_algo(self, tmp_path):
        run_training(stream_config(total_steps=0), tmp_path / "a")
        cfg = stream_config("s2ac", resume_from=str(tmp_path / "a" / "final.ckpt"))
        with pytest.raises(IncompatibleCheckpointError, match="sdac run"):
            run_training(cfg, tmp_path / "b")

    def test_batch_run(self, tmp_path):
        result = run_training(td3_config(), tmp_path)
        optim = result.checkpoint.agent["optim"]
        assert optim["env_steps"] == 40
        assert optim["critic_updates"] == 31
        assert optim["buffer"]["size"] == 40

    def test_non_finite_update_writes_diagnostic(self, tmp_path, monkeypatch):
        run = TrainingRun(stream_config(), tmp_path)
        run.start()

        def explode(transition, rng):
            raise NonFiniteUpdateError("Non-finite TD error", {"quantity": "TD error"})

        monkeypatch.setattr(run.agent, "observe", explode)
        with pytest.raises(NonFiniteUpdateError):
            run.run()
        cp = load_checkpoint(tmp_path / "diagnostic.ckpt")
        assert cp.run["diagnostics"]["quantity"] == "TD error"


class TestEvaluation:
    """Test the read-only evaluation protocol."""

    def test_evaluation_is_read_only_and_repeatable(self):
        cfg = stream_config()
        spec = build_env_spec(cfg.env)
        agent = build_agent(cfg, spec, make_streams(0))
        before = agent.state_dict()
        first = evaluate(agent, spec, episodes=2, seed=3)
        second = evaluate(agent, spec, episodes=2, seed=3)
        assert first == second
        assert encode_checkpoint(Checkpoint("sdac", "h", 0, before)) == \
            encode_checkpoint(Checkpoint("sdac", "h", 0, agent.state_dict()))

    def test_evaluate_checkpoint_matches_last_eval(self, tmp_path):
        result = run_training(stream_config(), tmp_path)
        last = load_metrics(tmp_path, "eval").iloc[-1]
        mean, std = evaluate_checkpoint(result.checkpoint_path, episodes=2)
        assert abs(mean - last["eval_return_mean"]) < 1e-9
        assert abs(std - last["eval_return_std"]) < 1e-9


class TestFinetune:
    """Test the batch -> streaming handoff run."""

    def finetune_config(self, source, **kwargs):
        return RunConfig(**{
            "algo": "sdac",
            "env": {**ENV, "perturbation": {"actuator_gain": 0.8, "actuator_limit": 0.7}},
            "total_steps": 40, "eval_every": 20, "eval_episodes": 2, "checkpoint_every": 0,
            "finetune": {"resume_from": str(source), "resume_as": "sdac", "q_warmup_steps": 10},
            **kwargs,
        })

    def test_finetune_logs_baseline(self, tmp_path):
        source = run_training(td3_config(), tmp_path / "td3")
        result = run_finetune(self.finetune_config(source.checkpoint_path), tmp_path / "ft")
        assert result.checkpoint.algo == "sdac"
        baseline = load_metrics(tmp_path / "ft", "baseline")
        evals = load_metrics(tmp_path / "ft", "eval")
        assert baseline["step"].tolist() == [0]
        assert baseline["eval_return_mean"].iloc[0] == evals["eval_return_mean"].iloc[0]
        assert evals["step"].tolist() == [0, 20, 40]
        assert (tmp_path / "ft" / "learning_curve.png").stat().st_size > 0

    def test_finetune_keeps_actor_during_warmup(self, tmp_path):
        source = run_training(td3_config(), tmp_path / "td3")
        result = run_finetune(self.finetune_config(source.checkpoint_path, total_steps=10), tmp_path / "ft")
        assert np.array_equal(result.checkpoint.agent["nets"]["actor"], source.checkpoint.agent["nets"]["actor"])
        assert result.checkpoint.agent["optim"]["warmup_remaining"] == 0

    def test_finetune_resume(self, tmp_path):
        source = run_training(td3_config(), tmp_path / "td3")
        cfg = self.finetune_config(source.checkpoint_path, checkpoint_every=20)
        full = run_finetune(cfg, tmp_path / "ft")
        resumed_cfg = self.finetune_config(source.checkpoint_path, checkpoint_every=20,
                                           resume_from=str(tmp_path / "ft" / "step_00000020.ckpt"))
        resumed = run_finetune(resumed_cfg, tmp_path / "ft2")
        assert without_config(resumed.checkpoint) == without_config(full.checkpoint)

    def test_plain_source_rejected(self, tmp_path):
        source = run_training(td3_config(td3={**SMALL_BATCH, "architecture": "plain"}), tmp_path / "td3")
        with pytest.raises(IncompatibleCheckpointError, match="layernorm"):
            run_finetune(self.finetune_config(source.checkpoint_path), tmp_path / "ft")

    def test_requires_source(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="finetune.resume_from"):
            run_finetune(stream_config(), tmp_path)


class TestSweep:
    """Test multi-seed sweeps."""

    def test_parse_seeds(self):
        assert parse_seeds("0..3") == [0, 1, 2, 3]
        assert parse_seeds("1,5, 9") == [1, 5, 9]
        with pytest.raises(InvalidArgumentError):
            parse_seeds("4..2")

    def test_sweep_summary(self, tmp_path):
        summary = run_sweep(stream_config(total_steps=40), [0, 1], tmp_path, workers=1)
        assert summary["step"].tolist() == [0, 20, 40]
        assert summary["n_seeds"].tolist() == [2, 2, 2]
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "curves.png").stat().st_size > 0
        assert (tmp_path / "seed_0" / "final.ckpt").exists() and (tmp_path / "seed_1" / "final.ckpt").exists()
        per_seed = [load_metrics(tmp_path / f"seed_{s}", "eval")["eval_return_mean"].iloc[-1] for s in (0, 1)]
        assert abs(summary["return_mean"].iloc[-1] - np.mean(per_seed)) < 1e-9
        assert abs(summary["return_std"].iloc[-1] - np.std(per_seed)) < 1e-9


class TestCompare:
    """Test side-by-side comparison of finished runs."""

    def test_parse_labeled_runs(self, tmp_path):
        runs = parse_labeled_runs([f"adam={tmp_path / 'a'}", str(tmp_path / "sgdc_seed0")])
        assert runs == {"adam": tmp_path / "a", "sgdc_seed0": tmp_path / "sgdc_seed0"}
        with pytest.raises(InvalidArgumentError, match="Duplicate"):
            parse_labeled_runs(["x=a", "x=b"])
        with pytest.raises(InvalidArgumentError):
            parse_labeled_runs([])

    def test_recovered_scales_by_magnitude(self):
        assert recovered(-164.9, -150.0)
        assert not recovered(-165.1, -150.0)
        assert recovered(-100.0, -150.0)
        assert recovered(9.1, 10.0) and not recovered(8.9, 10.0)

    def test_compare_runs(self, tmp_path):
        train = run_training(stream_config(), tmp_path / "sdac")
        ft = RunConfig(algo="sdac", env={**ENV, "perturbation": {"actuator_gain": 0.8}}, total_steps=20,
                       eval_every=20, eval_episodes=2, checkpoint_every=0,
                       finetune={"resume_from": str(run_training(td3_config(), tmp_path / "td3").checkpoint_path),
                                 "resume_as": "sdac", "q_warmup_steps": 10})
        run_finetune(ft, tmp_path / "ft")

        table = compare_runs({"ft": tmp_path / "ft", "sdac": train.run_dir}, tmp_path / "cmp", last=2)
        assert table["label"].tolist() == ["ft", "sdac"]
        sdac_evals = load_metrics(tmp_path / "sdac", "eval")
        assert abs(table["final_return"].iloc[1] - sdac_evals["eval_return_mean"].iloc[-2:].mean()) < 1e-9
        assert table["baseline"].iloc[0] == load_metrics(tmp_path / "ft", "baseline")["eval_return_mean"].iloc[0]
        assert np.isnan(table["baseline"].iloc[1])
        assert table["critic_l2_norm"].iloc[1] == sdac_evals["critic_l2_norm"].iloc[-1]
        assert (tmp_path / "cmp" / "returns.png").stat().st_size > 0
        assert (tmp_path / "cmp" / "critic_norms.png").stat().st_size > 0

    def test_compare_rejects_non_run(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="Not a run directory"):
            compare_runs({"x": tmp_path}, tmp_path / "cmp")
