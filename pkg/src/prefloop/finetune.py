"""Reward mixing for policy fine-tuning: the adaptive-scale combined reward,
the KL-anchored ablation objective, and the reward-engineering baseline shaper.

The combined reward is r_task + alpha * c * rm_score(window), where c tracks
the running magnitude of the mean task reward so the model term stays
proportionate across tasks.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .oracle import reward_engineering_penalty
from .policy import GaussianPolicy, PpoConfig, PpoTrainer, StepBatch, snapshot_checkpoint
from .reward_model import RewardModel


@dataclass
class CombineConfig:
    alpha: float = 0.2
    adaptive_c: bool = True
    c_floor: float = 1e-6
    ema_decay: float = 0.99
    fixed_c: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigurationError("ema_decay must lie in (0, 1)")
        if self.c_floor <= 0:
            raise ConfigurationError("c_floor must be positive")


@dataclass
class KlAblationConfig:
    beta: float = 20.0

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")


class RunningScale:
    """Exponential moving average of the mean task reward; c = max(floor, |ema|)."""

    def __init__(self, ema_decay: float = 0.99, c_floor: float = 1e-6):
        self.ema_decay = ema_decay
        self.c_floor = c_floor
        self.ema = None

    @property
    def c(self) -> float:
        if self.ema is None:
            return self.c_floor
        return max(self.c_floor, abs(self.ema))

    def update(self, rewards) -> float:
        batch_mean = float(np.mean(rewards))
        if self.ema is None:
            self.ema = batch_mean
        else:
            self.ema = self.ema_decay * self.ema + (1.0 - self.ema_decay) * batch_mean
        return self.c


def running_scale_update(scale: RunningScale, rewards) -> float:
    return scale.update(rewards)


def combined_reward(r_task: float, window, model: RewardModel,
                    alpha: float, c: float) -> float:
    """r_task + alpha * c * rm_score(window); window is the latest M frames."""
    return float(r_task) + alpha * c * model.score(np.asarray(window))


def kl_objective_reward(window, logp_current: float, logp_reference: float,
                        model: RewardModel, beta: float) -> float:
    """rm_score(window) - beta * (log pi(a|s) - log pi_ref(a|s)).

    The task reward is deliberately absent from this objective.
    """
    return (model.score(np.asarray(window))
            - beta * (float(logp_current) - float(logp_reference)))


class CombinedRewardShaper:
    """Training reward r_task + alpha * c * rm_score; c updated once per
    rollout batch from the raw task rewards."""
    wants_window = True

    def __init__(self, model: RewardModel, config: CombineConfig):
        self.model = model
        self.config = config
        self.scale = RunningScale(config.ema_decay, config.c_floor)
        self.window_size = model.window_size

    def current_c(self) -> float:
        if self.config.adaptive_c:
            return self.scale.c
        return self.config.fixed_c

    def shape(self, batch: StepBatch) -> np.ndarray:
        scores = self.model.score_batch(batch.windows)
        return batch.task_reward + self.config.alpha * self.current_c() * scores

    def on_rollout_end(self, task_rewards: np.ndarray) -> None:
        self.scale.update(task_rewards)


class KlObjectiveShaper:
    """Ablation objective: rm_score - beta * log(pi/pi_ref). Never reads the
    task reward."""
    wants_window = True

    def __init__(self, model: RewardModel, config: KlAblationConfig,
                 reference_policy: GaussianPolicy):
        self.model = model
        self.beta = config.beta
        self.reference = reference_policy.copy()
        self.window_size = model.window_size

    def shape(self, batch: StepBatch) -> np.ndarray:
        scores = self.model.score_batch(batch.windows)
        logp_ref = self.reference.log_prob(batch.obs, batch.u)
        return scores - self.beta * (batch.logp - logp_ref)

    def on_rollout_end(self, task_rewards: np.ndarray) -> None:
        pass


class RewardEngineeringShaper:
    """Baseline: task reward minus torque/energy penalties whose coefficients
    ride on the running task-reward magnitude.

    action_scale: units for the torque proxy. 1.0 feeds raw radian deltas
    (bounded by 0.1); 1/ACTION_BOUND feeds normalized actions so the penalty
    is visible against a task reward of order one.
    """
    wants_window = False
    window_size = 0

    def __init__(self, c5_coef: float = 0.01, c6_coef: float = 0.02,
                 ema_decay: float = 0.99, action_scale: float = 1.0):
        self.c5_coef = c5_coef
        self.c6_coef = c6_coef
        self.scale = RunningScale(ema_decay)
        self.action_scale = action_scale

    def shape(self, batch: StepBatch) -> np.ndarray:
        r_scale = self.scale.c
        c5 = self.c5_coef * r_scale
        c6 = self.c6_coef * r_scale
        dq = (batch.q_after - batch.q_before) * self.action_scale
        acts = batch.a_rad * self.action_scale
        penalties = np.array([
            reward_engineering_penalty(a, d, c5, c6)
            for a, d in zip(acts, dq)])
        return batch.task_reward - penalties

    def on_rollout_end(self, task_rewards: np.ndarray) -> None:
        self.scale.update(task_rewards)


def finetune_policy(checkpoint, env_spec, model: RewardModel,
                    config: CombineConfig, ppo_config: PpoConfig, updates: int,
                    seed: int, pipeline_iteration: int = 0,
                    diversity_members=(), shaper=None):
    """PPO fine-tuning of one checkpoint against the combined reward; the
    reward model stays frozen. Returns the fine-tuned checkpoint."""
    if shaper is None:
        shaper = CombinedRewardShaper(model, config)
    trainer = PpoTrainer(env_spec, ppo_config, seed, reward_shaper=shaper,
                         diversity_members=diversity_members,
                         init_checkpoint=checkpoint)
    trainer.episodes_trained = checkpoint.episodes_trained
    trainer.train(updates)
    ckpt_id = f"{checkpoint.checkpoint_id}-ft{pipeline_iteration}"
    return snapshot_checkpoint(trainer, ckpt_id, pipeline_iteration)
