"""
Pydantic schemas for run configuration and metrics records.

Defaults reproduce the published hyperparameter tables; every field can be
set from a TOML file, an environment variable or the command line.
"""

from typing import Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Algo = Literal["stream_ac", "s2ac", "sdac", "sac_norm", "td3_norm"]
StreamTarget = Literal["sdac", "s2ac"]
CriticOptimizerName = Literal["adam", "sgdc", "obgd"]

STREAMING_ALGOS = ("stream_ac", "s2ac", "sdac")
BATCH_ALGOS = ("sac_norm", "td3_norm")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvConfig(StrictModel):
    name: Literal["pendulum", "cartpole"] = Field("pendulum", description="Task name")
    horizon: Optional[int] = Field(None, gt=0, description="Steps per episode (task default when unset)")
    perturbation: Dict[str, float] = Field(default_factory=dict,
                                           description="Physics parameter -> multiplier")

    @field_validator('perturbation')
    def validate_multipliers(cls, v):
        for key, mult in v.items():
            if mult <= 0:
                raise ValueError(f"Multiplier for '{key}' must be positive")
        return v


class _StreamingCritic(StrictModel):
    lam: float = Field(0.8, ge=0, lt=1, description="Trace decay")
    critic_lr: float = Field(1.0, gt=0, description="ObGD step size")
    critic_kappa: float = Field(2.0, gt=0, description="ObGD overshoot scale")
    hidden_width: int = Field(128, gt=0)
    sparsity: float = Field(0.9, ge=0, lt=1, description="Sparse init fraction")
    ln_affine: bool = False


class StreamACConfig(_StreamingCritic):
    actor_lr: float = Field(1.0, gt=0)
    actor_kappa: float = Field(3.0, gt=0)
    entropy_coeff: float = Field(0.01, ge=0, description="Entropy regularization tau")
    entropy_mode: Literal["additive", "traced"] = "additive"


class S2ACConfig(_StreamingCritic):
    actor_lr: float = Field(3e-4, gt=0, description="Adam learning rate")
    alpha0: float = Field(0.01, ge=0, description="Base entropy coefficient")
    adaptive_alpha: bool = Field(True, description="Divide alpha0 by sigma_r")
    q_warmup_steps: int = Field(0, ge=0)


class SDACConfig(_StreamingCritic):
    actor_lr: float = Field(3e-4, gt=0, description="Adam learning rate")
    exploration_noise: float = Field(0.2, ge=0)
    target_noise: float = Field(0.2, ge=0)
    q_warmup_steps: int = Field(0, ge=0)


class _BatchCommon(StrictModel):
    buffer_size: int = Field(1_000_000, gt=0)
    batch_size: int = Field(256, gt=0)
    tau: float = Field(0.005, ge=0, le=1, description="Polyak coefficient")
    policy_frequency: int = Field(2, gt=0)
    critic_lr: float = Field(3e-4, gt=0, description="Critic Adam learning rate")
    actor_lr: float = Field(3e-4, gt=0)
    sgdc_lr: float = Field(0.5, gt=0, description="Critic SGDC learning rate")
    sgdc_clip: float = Field(1.0, gt=0, description="SGDC clipping parameter h")
    architecture: Literal["stream", "plain"] = "stream"
    hidden_width: int = Field(128, gt=0)
    ln_affine: bool = False


class SACConfig(_BatchCommon):
    learning_starts: int = Field(5_000, ge=0)
    alpha_init: float = Field(1.0, gt=0)
    autotune: bool = True
    alpha_lr: float = Field(3e-4, gt=0)
    target_entropy: Optional[float] = Field(None, description="Defaults to -action_dim")


class TD3Config(_BatchCommon):
    learning_starts: int = Field(25_000, ge=0)
    exploration_noise: float = Field(0.1, ge=0)
    target_noise: float = Field(0.2, ge=0)
    noise_clip: float = Field(0.5, ge=0)


class FinetuneConfig(StrictModel):
    resume_from: Optional[str] = Field(None, description="Batch checkpoint to hand off")
    resume_as: Optional[StreamTarget] = None
    actor_lr: float = Field(3e-4 / 256, gt=0)
    q_warmup_steps: int = Field(5_000, ge=0)
    exploration_noise: float = Field(0.1, ge=0)
    target_noise: float = Field(0.1, ge=0)
    critic_lr: float = Field(1.0, gt=0)
    critic_kappa: float = Field(2.0, gt=0)
    lam: float = Field(0.8, ge=0, lt=1)
    alpha0: float = Field(0.01, ge=0)
    adaptive_alpha: bool = True


class RunConfig(StrictModel):
    algo: Algo = "sdac"
    env: EnvConfig = Field(default_factory=EnvConfig)
    total_steps: int = Field(100_000, ge=0)
    seed: int = Field(0, ge=0)
    eval_every: int = Field(10_000, gt=0)
    eval_episodes: int = Field(10, gt=0)
    gamma: float = Field(0.99, description="Discount factor")
    critic_optimizer: Optional[CriticOptimizerName] = Field(
        None, description="obgd for streaming agents, adam or sgdc for batch agents")
    checkpoint_every: int = Field(100_000, ge=0, description="0 keeps only the final checkpoint")
    resume_from: Optional[str] = Field(None, description="Run checkpoint to continue from")
    include_wall_time: bool = False
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    stream_ac: StreamACConfig = Field(default_factory=StreamACConfig)
    s2ac: S2ACConfig = Field(default_factory=S2ACConfig)
    sdac: SDACConfig = Field(default_factory=SDACConfig)
    sac: SACConfig = Field(default_factory=SACConfig)
    td3: TD3Config = Field(default_factory=TD3Config)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)

    @field_validator('gamma')
    def validate_gamma(cls, v):
        if not 0 <= v < 1:
            raise ValueError('gamma must be in [0, 1)')
        return v

    @model_validator(mode='after')
    def validate_optimizer(self):
        streaming = self.algo in STREAMING_ALGOS
        if self.critic_optimizer is None:
            self.critic_optimizer = "obgd" if streaming else "adam"
        if streaming and self.critic_optimizer != "obgd":
            raise ValueError(f"{self.algo} trains its critic with obgd, not {self.critic_optimizer}")
        if not streaming and self.critic_optimizer == "obgd":
            raise ValueError(f"{self.algo} critics use adam or sgdc, not obgd")
        if self.finetune.resume_as is not None and self.finetune.resume_as != self.algo:
            raise ValueError(
                f"Finetuning as {self.finetune.resume_as} requires algo = '{self.finetune.resume_as}'"
            )
        return self

    @property
    def is_finetune(self) -> bool:
        return self.finetune.resume_as is not None


class MetricsRecord(StrictModel):
    kind: Literal["eval", "episode", "baseline"]
    step: int = Field(..., ge=0)
    eval_return_mean: Optional[float] = None
    eval_return_std: Optional[float] = None
    episode_return: Optional[float] = None
    episode_length: Optional[int] = None
    critic_l2_norm: Optional[float] = None
    actor_l2_norm: Optional[float] = None
    sigma_r: Optional[float] = None
    alpha: Optional[float] = None
    eta_eff_mean: Optional[float] = None
    eta_eff_min: Optional[float] = None
    wall_time: Optional[float] = None
