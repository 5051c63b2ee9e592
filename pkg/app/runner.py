"""
Training, evaluation, finetuning and seed-sweep harness.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.agent import Agent
from core.batch import SACNorm, TD3Norm
from core.checkpoint import Checkpoint, env_hash, load_checkpoint, require_env, save_checkpoint
from core.envs import EnvSpec, get_spec, make_env, perturb
from core.errors import IncompatibleCheckpointError, InvalidArgumentError, NonFiniteUpdateError
from core.handoff import FinetuneSettings, build_finetune_agent, handoff_batch_to_stream, hidden_shape
from core.rng import get_rng_state, make_stream, make_streams, set_rng_state
from core.streaming import S2AC, SDAC, StreamAC
from utils.logging import MetricsLogger, load_metrics
from utils.plots import (
    final_returns,
    plot_critic_norms,
    plot_finetune_curves,
    plot_learning_curve,
    plot_seed_curves,
    save_figure,
)

from .config import CONFIG_DUMP, dump_config
from .schemas import EnvConfig, MetricsRecord, RunConfig

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = "final.ckpt"
DIAGNOSTIC_CHECKPOINT = "diagnostic.ckpt"
SUMMARY_FILE = "summary.csv"
CURVES_FILE = "curves.png"
LEARNING_CURVE_FILE = "learning_curve.png"
RETURNS_FIGURE = "returns.png"
NORMS_FIGURE = "critic_norms.png"


def build_env_spec(env_cfg: EnvConfig) -> EnvSpec:
    spec = get_spec(env_cfg.name, env_cfg.horizon)
    return perturb(spec, env_cfg.perturbation) if env_cfg.perturbation else spec


def finetune_settings(cfg: RunConfig) -> FinetuneSettings:
    block = cfg.finetune.model_dump(exclude={"resume_from", "resume_as"})
    return FinetuneSettings(gamma=cfg.gamma, **block)


def build_agent(cfg: RunConfig, spec: EnvSpec, streams: Dict[str, np.random.Generator],
                shape: Optional[Dict[str, Any]] = None) -> Agent:
    """
    Construct the configured agent with freshly initialized weights.

    Args:
        cfg: Run configuration
        spec: Task (fixes state/action sizes)
        streams: Seeded random streams; "init" initializes weights, "buffer" drives replay sampling
        shape: Hidden width / LayerNorm flag of a finetuning agent (taken from its checkpoint)

    Returns:
        Agent ready for its first episode
    """
    sd, ad = spec.state_dim, spec.action_dim
    init = streams["init"]
    if cfg.is_finetune:
        return build_finetune_agent(cfg.algo, sd, ad, finetune_settings(cfg), init, **(shape or {}))
    if cfg.algo == "stream_ac":
        return StreamAC(sd, ad, init, gamma=cfg.gamma, **cfg.stream_ac.model_dump())
    if cfg.algo == "s2ac":
        return S2AC(sd, ad, init, gamma=cfg.gamma, **cfg.s2ac.model_dump())
    if cfg.algo == "sdac":
        return SDAC(sd, ad, init, gamma=cfg.gamma, **cfg.sdac.model_dump())
    if cfg.algo == "sac_norm":
        return SACNorm(sd, ad, init, streams["buffer"], gamma=cfg.gamma,
                       critic_optimizer=cfg.critic_optimizer, **cfg.sac.model_dump())
    return TD3Norm(sd, ad, init, streams["buffer"], gamma=cfg.gamma,
                   critic_optimizer=cfg.critic_optimizer, **cfg.td3.model_dump())


def current_alpha(agent: Agent) -> Optional[float]:
    if isinstance(agent, S2AC):
        return agent.alpha(agent.reward_scaler.sigma)
    if isinstance(agent, SACNorm):
        return agent.alpha
    return None


def evaluate(agent: Agent, spec: EnvSpec, episodes: int = 10, seed: int = 0) -> Tuple[float, float]:
    """
    Evaluate the noiseless policy.

    Uses the mean action for stochastic policies, never updates the agent's
    normalizer, and draws the same episode seeds for a given `seed`.

    Args:
        agent: Agent to evaluate
        spec: Task
        episodes: Number of episodes
        seed: Master seed of the evaluation episodes

    Returns:
        (mean, std) of raw undiscounted episode returns
    """
    seeds = make_stream(seed, "eval").integers(0, 2**31 - 1, size=episodes)
    env = make_env(spec)
    returns: List[float] = []
    for episode_seed in seeds:
        raw_s = env.reset(seed=int(episode_seed))
        total = 0.0
        done = False
        while not done:
            action = agent.act_eval(agent.normalize_eval(raw_s))
            result = env.step(np.clip(action, -1.0, 1.0))
            total += result.r
            done = result.terminated or result.truncated
            raw_s = result.s_next
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


@dataclass
class RunResult:
    run_dir: Path
    checkpoint: Checkpoint
    checkpoint_path: Path


class TrainingRun:
    """
    One training run: agent, environment, seeded streams, metrics and checkpoints.

    All mutable run state lives here so a checkpoint can capture it and a
    resumed run continues exactly where the interrupted one stopped.
    """

    def __init__(self, cfg: RunConfig, run_dir: Union[str, Path], agent: Optional[Agent] = None,
                 spec: Optional[EnvSpec] = None, shape: Optional[Dict[str, Any]] = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.spec = spec if spec is not None else build_env_spec(cfg.env)
        self.streams = make_streams(cfg.seed)
        self.agent = agent if agent is not None else build_agent(cfg, self.spec, self.streams, shape)
        if self.agent.state_dim != self.spec.state_dim or self.agent.action_dim != self.spec.action_dim:
            raise IncompatibleCheckpointError(
                f"Agent dimensions ({self.agent.state_dim}, {self.agent.action_dim}) do not match "
                f"task {self.spec.name} ({self.spec.state_dim}, {self.spec.action_dim})"
            )
        self.env = make_env(self.spec)
        self.env.rng = self.streams["env"]
        self.step = 0
        self.episode = 0
        self.episode_return = 0.0
        self.episode_length = 0
        self.raw_s: Optional[np.ndarray] = None
        self.s: Optional[np.ndarray] = None
        self.eta_stats: Dict[str, Any] = {"sum": 0.0, "count": 0, "min": None}
        self.metrics: Optional[MetricsLogger] = None
        self._started = time.perf_counter()

    # -- lifecycle --------------------------------------------------------

    def start(self, baseline: bool = False) -> None:
        """Fresh run: log the initial-policy evaluation and open the first episode."""
        self.metrics = MetricsLogger(self.run_dir)
        dump_config(self.cfg, self.run_dir)
        logger.info("Starting %s on %s, seed %d, %d steps -> %s",
                    self.cfg.algo, self.spec.name, self.cfg.seed, self.cfg.total_steps, self.run_dir)
        kinds = ("baseline", "eval") if baseline else ("eval",)
        self.log_eval(kinds)
        self._begin_episode()

    @classmethod
    def from_checkpoint(cls, cfg: RunConfig, cp: Checkpoint, run_dir: Union[str, Path]) -> "TrainingRun":
        """Rebuild a run from one of its own checkpoints."""
        if cp.algo != cfg.algo:
            raise IncompatibleCheckpointError(f"Checkpoint holds a {cp.algo} run, config asks for {cfg.algo}")
        shape = hidden_shape(cp.agent["architecture"]) if cfg.is_finetune else None
        run = cls(cfg, run_dir, shape=shape)
        require_env(cp, run.spec)
        if "episode" not in cp.run:
            raise IncompatibleCheckpointError("Checkpoint carries no run state to resume from")
        run.agent.load_state_dict(cp.agent)
        for name, state in cp.rng.items():
            set_rng_state(run.streams[name], state)
        run.env.set_state(cp.run["env"])
        episode = cp.run["episode"]
        run.raw_s = np.asarray(episode["raw_s"], dtype=np.float64)
        run.s = np.asarray(episode["s"], dtype=np.float64)
        run.episode_return = float(episode["return"])
        run.episode_length = int(episode["length"])
        run.episode = int(episode["index"])
        run.eta_stats = dict(cp.run["eta"])
        run.step = cp.step
        run.metrics = MetricsLogger(run.run_dir, resume_step=cp.step)
        dump_config(cfg, run.run_dir)
        logger.info("Resuming %s at step %d -> %s", cfg.algo, cp.step, run.run_dir)
        return run

    def run(self) -> RunResult:
        """Train until total_steps, then write the final checkpoint, the CSV export and the learning curve."""
        try:
            while self.step < self.cfg.total_steps:
                self._train_step()
                if self.step % self.cfg.eval_every == 0:
                    self.log_eval(("eval",))
                if self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                    save_checkpoint(self.checkpoint(), self.run_dir / f"step_{self.step:08d}.ckpt")
        except NonFiniteUpdateError as err:
            cp = self.checkpoint()
            cp.run["diagnostics"] = dict(err.diagnostics, message=str(err), step=self.step)
            path = save_checkpoint(cp, self.run_dir / DIAGNOSTIC_CHECKPOINT)
            logger.error("Non-finite update at step %d (%s); diagnostic checkpoint %s", self.step, err, path)
            raise

        cp = self.checkpoint()
        path = save_checkpoint(cp, self.run_dir / FINAL_CHECKPOINT)
        self.metrics.export_csv()
        self.plot_curve()
        logger.info("Finished %s after %d steps and %d episodes", self.cfg.algo, self.step, self.episode)
        return RunResult(self.run_dir, cp, path)

    def plot_curve(self) -> None:
        """Write the evaluation curve, with the pre-finetuning return as a dashed baseline when recorded."""
        before = load_metrics(self.run_dir, "baseline")
        baseline = float(before["eval_return_mean"].iloc[0]) if len(before) else None
        fig = plot_learning_curve(load_metrics(self.run_dir, "eval"), label=self.cfg.algo, baseline=baseline)
        save_figure(fig, self.run_dir / LEARNING_CURVE_FILE)

    # -- stepping ---------------------------------------------------------

    def _begin_episode(self) -> None:
        self.raw_s = self.env.reset()
        self.s = self.agent.begin_episode(self.raw_s)
        self.episode_return = 0.0
        self.episode_length = 0

    def _train_step(self) -> None:
        rng = self.streams["policy"]
        action = self.agent.act(self.s, rng)
        result = self.env.step(np.clip(action.action, -1.0, 1.0))
        transition = self.agent.make_transition(self.raw_s, self.s, action, result)
        diagnostics = self.agent.observe(transition, rng)
        self.step += 1

        eta = diagnostics.get("eta_eff")
        if eta is not None:
            self.eta_stats["sum"] += eta
            self.eta_stats["count"] += 1
            low = self.eta_stats["min"]
            self.eta_stats["min"] = eta if low is None else min(low, eta)

        self.episode_return += result.r
        self.episode_length += 1
        if result.terminated or result.truncated:
            self.episode += 1
            logger.debug("Episode %d ended at step %d: return %.2f", self.episode, self.step, self.episode_return)
            self._log({
                "kind": "episode",
                "step": self.step,
                "episode_return": self.episode_return,
                "episode_length": self.episode_length,
                "sigma_r": self.agent.reward_scaler.sigma,
            })
            self._begin_episode()
        else:
            self.raw_s, self.s = result.s_next, transition.s_next

    # -- records ----------------------------------------------------------

    def log_eval(self, kinds: Sequence[str]) -> Tuple[float, float]:
        mean, std = evaluate(self.agent, self.spec, self.cfg.eval_episodes, self.cfg.seed)
        record: Dict[str, Any] = {
            "step": self.step,
            "eval_return_mean": mean,
            "eval_return_std": std,
            "sigma_r": self.agent.reward_scaler.sigma,
            "alpha": current_alpha(self.agent),
            **self.agent.norms(),
        }
        if self.eta_stats["count"]:
            record["eta_eff_mean"] = self.eta_stats["sum"] / self.eta_stats["count"]
            record["eta_eff_min"] = self.eta_stats["min"]
        self.eta_stats = {"sum": 0.0, "count": 0, "min": None}
        for kind in kinds:
            self._log({"kind": kind, **record})
        logger.info("Step %d: eval return %.2f +/- %.2f", self.step, mean, std)
        return mean, std

    def _log(self, record: Dict[str, Any]) -> None:
        if self.cfg.include_wall_time:
            record["wall_time"] = time.perf_counter() - self._started
        self.metrics.log(MetricsRecord(**record).model_dump(exclude_none=True))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            algo=self.agent.algo,
            env_hash=env_hash(self.spec),
            step=self.step,
            agent=self.agent.state_dict(),
            rng={name: get_rng_state(rng) for name, rng in self.streams.items()},
            run={
                "config": self.cfg.model_dump(mode="json"),
                "env": self.env.get_state(),
                "episode": {
                    "raw_s": np.asarray(self.raw_s, dtype=np.float64),
                    "s": np.asarray(self.s, dtype=np.float64),
                    "return": self.episode_return,
                    "length": self.episode_length,
                    "index": self.episode,
                },
                "eta": dict(self.eta_stats),
            },
        )


def default_run_dir(cfg: RunConfig) -> Path:
    return Path("runs") / f"{cfg.algo}_{cfg.env.name}_seed{cfg.seed}"


def run_training(cfg: RunConfig, run_dir: Optional[Union[str, Path]] = None,
                 agent: Optional[Agent] = None) -> RunResult:
    """
    Train from scratch, or continue from cfg.resume_from.

    Args:
        cfg: Run configuration
        run_dir: Output directory (runs/<algo>_<env>_seed<N> by default)
        agent: Pre-built agent to train instead of a fresh one

    Returns:
        RunResult with the final checkpoint
    """
    run_dir = Path(run_dir) if run_dir is not None else default_run_dir(cfg)
    if cfg.resume_from:
        run = TrainingRun.from_checkpoint(cfg, load_checkpoint(cfg.resume_from), run_dir)
    else:
        run = TrainingRun(cfg, run_dir, agent=agent)
        run.start()
    return run.run()


def run_finetune(cfg: RunConfig, run_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """
    Hand a batch checkpoint to a streaming agent and keep training on cfg.env.

    The evaluation of the handed-off agent before any update is logged as a
    "baseline" record in addition to the step-0 "eval" record.
    """
    if not cfg.is_finetune or cfg.finetune.resume_from is None:
        raise InvalidArgumentError("Finetuning needs finetune.resume_from and finetune.resume_as")
    if cfg.resume_from:
        return run_training(cfg, run_dir)

    run_dir = Path(run_dir) if run_dir is not None else default_run_dir(cfg)
    source = load_checkpoint(cfg.finetune.resume_from)
    spec = build_env_spec(cfg.env)
    agent = handoff_batch_to_stream(source, cfg.finetune.resume_as, finetune_settings(cfg),
                                    make_stream(cfg.seed, "init"))
    run = TrainingRun(cfg, run_dir, agent=agent, spec=spec)
    run.start(baseline=True)
    return run.run()


def evaluate_checkpoint(path: Union[str, Path], episodes: int = 10,
                        seed: Optional[int] = None) -> Tuple[float, float]:
    """Evaluate the agent stored in a run checkpoint on the task it was trained on."""
    cp = load_checkpoint(path)
    if "config" not in cp.run:
        raise IncompatibleCheckpointError("Checkpoint carries no run configuration")
    cfg = RunConfig.model_validate(cp.run["config"])
    spec = build_env_spec(cfg.env)
    require_env(cp, spec)
    shape = hidden_shape(cp.agent["architecture"]) if cfg.is_finetune else None
    agent = build_agent(cfg, spec, make_streams(cfg.seed), shape)
    agent.load_state_dict(cp.agent)
    return evaluate(agent, spec, episodes, cfg.seed if seed is None else seed)


# -- seed sweeps ----------------------------------------------------------

def parse_seeds(text: str) -> List[int]:
    """"0..4" -> [0, 1, 2, 3, 4]; "1,5,9" -> [1, 5, 9]."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(part) for part in text.split("..", 1))
        if hi < lo:
            raise InvalidArgumentError(f"Empty seed range '{text}'")
        return list(range(lo, hi + 1))
    seeds = [int(part) for part in text.split(",") if part.strip()]
    if not seeds:
        raise InvalidArgumentError("No seeds given")
    return seeds


def _sweep_worker(job: Tuple[Dict[str, Any], str]) -> str:
    data, run_dir = job
    cfg = RunConfig.model_validate(data)
    if cfg.is_finetune:
        run_finetune(cfg, run_dir)
    else:
        run_training(cfg, run_dir)
    return run_dir


def summarize_sweep(run_dirs: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Aggregate evaluation curves across seeds.

    Returns one row per evaluation step with the mean of the per-seed means,
    their population std and the number of seeds that reached the step.
    """
    frames = [load_metrics(d, "eval").assign(run=str(d)) for d in run_dirs]
    evals = pd.concat(frames, ignore_index=True)
    summary = evals.groupby("step").agg(
        return_mean=("eval_return_mean", "mean"),
        return_std=("eval_return_mean", lambda x: float(np.std(x))),
        critic_l2_norm=("critic_l2_norm", "mean"),
        n_seeds=("run", "count"),
    )
    return summary.reset_index()


def run_sweep(cfg: RunConfig, seeds: Sequence[int], out_root: Union[str, Path],
              workers: Optional[int] = None) -> pd.DataFrame:
    """
    Run one independent process per seed and write summary.csv and curves.png.

    Args:
        cfg: Base configuration; its seed is replaced per run
        seeds: Seeds to run
        out_root: Parent directory; each run writes to out_root/seed_<N>
        workers: Process count (1 runs inline)

    Returns:
        Sweep summary DataFrame
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.model_copy(update={"seed": seed}).model_dump(mode="json"), str(out_root / f"seed_{seed}"))
            for seed in seeds]
    logger.info("Sweep of %d seeds (%s) with %s workers -> %s", len(jobs), cfg.algo, workers or "auto", out_root)
    if workers == 1:
        run_dirs = [_sweep_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            run_dirs = list(pool.map(_sweep_worker, jobs))

    summary = summarize_sweep(run_dirs)
    summary.to_csv(out_root / SUMMARY_FILE, index=False)
    save_figure(plot_seed_curves(summary, label=cfg.algo), out_root / CURVES_FILE)
    final = summary.iloc[-1]
    if not math.isnan(final["return_mean"]):
        logger.info("Sweep final step %d: return %.2f +/- %.2f over %d seeds",
                    final["step"], final["return_mean"], final["return_std"], final["n_seeds"])
    return summary


def parse_labeled_runs(specs: Sequence[str]) -> Dict[str, Path]:
    """Parse "label=run_dir" entries; a bare directory is labeled by its name."""
    runs: Dict[str, Path] = {}
    for spec in specs:
        label, sep, path = spec.partition("=")
        if not sep:
            label, path = Path(spec).name, spec
        if label in runs:
            raise InvalidArgumentError(f"Duplicate run label '{label}'")
        runs[label] = Path(path)
    if not runs:
        raise InvalidArgumentError("No runs given")
    return runs


def compare_runs(runs: Dict[str, Union[str, Path]], out_dir: Union[str, Path], last: int = 1) -> pd.DataFrame:
    """
    Put finished runs side by side, e.g. Adam vs SGDC pretraining of one seed.

    Writes returns.png (learning curves, with the pre-finetuning return dashed
    where one was recorded) and critic_norms.png into out_dir.

    Args:
        runs: Label -> run directory
        out_dir: Where the figures go
        last: Number of trailing evaluations averaged into final_return

    Returns:
        One row per run: label, final_return, baseline (return before
        finetuning, NaN for plain training runs) and final critic_l2_norm
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves: Dict[str, pd.DataFrame] = {}
    baselines: Dict[str, float] = {}
    rows = []
    for label, run_dir in runs.items():
        if not (Path(run_dir) / CONFIG_DUMP).exists():
            raise FileNotFoundError(f"Not a run directory: {run_dir}")
        evals = load_metrics(run_dir, "eval")
        before = load_metrics(run_dir, "baseline")
        baseline = float(before["eval_return_mean"].iloc[0]) if len(before) else math.nan
        if not math.isnan(baseline):
            baselines[label] = baseline
        curves[label] = evals
        final = final_returns(evals, last)
        rows.append({
            "label": label,
            "final_return": final,
            "baseline": baseline,
            "critic_l2_norm": float(evals["critic_l2_norm"].iloc[-1]),
        })

    perturbation = _perturbation_lines(next(iter(runs.values())))
    save_figure(plot_finetune_curves(curves, baselines, perturbation), out_dir / RETURNS_FIGURE)
    save_figure(plot_critic_norms(curves), out_dir / NORMS_FIGURE)
    logger.info("Compared %d runs -> %s", len(rows), out_dir)
    return pd.DataFrame(rows)


def recovered(final_return: float, reference: float, fraction: float = 0.9) -> bool:
    """
    Whether a return recovers to `fraction` of a reference return.

    Returns are negative costs on the swing-up tasks, so the reference is
    scaled by its magnitude: 90% recovery of -150 means at least -165.
    """
    return final_return >= reference - (1.0 - fraction) * abs(reference)


def _perturbation_lines(run_dir: Union[str, Path]) -> List[str]:
    cfg = RunConfig.model_validate_json((Path(run_dir) / CONFIG_DUMP).read_text())
    return [f"{name} x{value:g}" for name, value in sorted(cfg.env.perturbation.items())]
