"""Gaussian-policy PPO with GAE, entropy bonus, and a diversity loss that
pushes new policies away from a frozen set of earlier ones.

Policies act in normalized units u; the environment receives
ACTION_BOUND * clip(u, -1, 1) radians. Log-probabilities are always of the
unclipped u under the diagonal Gaussian.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from threadpoolctl import ThreadpoolController

from . import nn
from .envs import (ACTION_BOUND, JOINT_LIMIT, N_JOINTS, EnvSpec, PlanarArmEnv,
                   VectorArmEnvs, obs_dim)
from .errors import DimensionError, PipelineError, TrainingError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

# The policy/value nets are tiny; one BLAS thread beats the threading overhead.
_BLAS = ThreadpoolController()


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.96
    gae_lambda: float = 0.95
    lr: float = 3e-4
    minibatches: int = 4
    opt_epochs: int = 5
    rollout_len: int = 8
    ent_coef: float = 0.0
    max_grad_norm: float = 1.0
    diversity_coef: float = 0.1
    desired_kl: float = 0.016
    adaptive_lr: bool = True
    num_envs: int = 16
    hidden: tuple = (64, 64)
    init_noise_std: float = 0.8


class GaussianPolicy:
    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64),
                 init_noise_std: float = 0.8, rng=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.mean_net = nn.Mlp([obs_dim, *hidden, act_dim], "tanh", "identity", rng=rng)
        self.log_std = np.full(act_dim, math.log(init_noise_std))

    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def clamp_log_std(self):
        self.log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        m = self.mean_net.forward(obs)
        if not np.all(np.isfinite(m)):
            raise TrainingError("policy mean produced non-finite output")
        return m

    def act(self, obs: np.ndarray, rng, deterministic: bool = False):
        """Sample u ~ N(mean, diag(std^2)); returns (u, log_prob)."""
        m = self.mean(obs)
        if deterministic:
            return m, self.log_prob_given_mean(m, m)
        u = m + self.std() * rng.standard_normal(m.shape)
        return u, self.log_prob_given_mean(u, m)

    def log_prob(self, obs: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.log_prob_given_mean(u, self.mean(obs))

    def log_prob_given_mean(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        std = self.std()
        z = (u - m) / std
        return -0.5 * np.sum(z * z + 2.0 * np.log(std) + LOG_2PI, axis=-1)

    def entropy(self) -> float:
        """Per-sample differential entropy of the action distribution."""
        return float(np.sum(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
                            + 0.5 * (LOG_2PI + 1.0)))

    def parameters(self):
        return self.mean_net.parameters() + [self.log_std]

    def set_parameters(self, params):
        self.mean_net.set_parameters(params[:-1])
        self.log_std = np.asarray(params[-1], dtype=np.float64)

    def copy(self) -> "GaussianPolicy":
        dup = GaussianPolicy.__new__(GaussianPolicy)
        dup.obs_dim = self.obs_dim
        dup.act_dim = self.act_dim
        dup.mean_net = self.mean_net.copy()
        dup.log_std = self.log_std.copy()
        return dup


def gae_advantages(rewards, values, dones, gamma: float, lam: float):
    """GAE(gamma, lam) over one sequence. `values` must carry the bootstrap
    value of the state after the last step (length T+1). Advantages are raw;
    the trainer normalizes before the policy loss."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    if dones.shape[0] != t_len or values.shape[0] != t_len + 1:
        raise DimensionError(
            f"need len(rewards)==len(dones)=={t_len} and len(values)=={t_len + 1},"
            f" got {dones.shape[0]} and {values.shape[0]}")
    adv = np.zeros(t_len)
    running = 0.0
    for t in range(t_len - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * mask - values[t]
        running = delta + gamma * lam * mask * running
        adv[t] = running
    return adv, adv + values[:-1]


def ppo_loss_and_grads(policy: GaussianPolicy, obs, actions_u, old_log_probs,
                       advantages, clip_eps: float, ent_coef: float):
    """Clipped-surrogate loss, stats, and analytic gradients.

    Returns (loss, stats, grads) where grads aligns with policy.parameters().
    """
    obs = np.asarray(obs, dtype=np.float64)
    u = np.asarray(actions_u, dtype=np.float64)
    old_lp = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    b = obs.shape[0]
    if not (u.shape[0] == old_lp.shape[0] == adv.shape[0] == b):
        raise DimensionError("batch size mismatch in ppo loss inputs")
    m = policy.mean(obs)
    std = policy.std()
    new_lp = policy.log_prob_given_mean(u, m)
    log_ratio = new_lp - old_lp
    ratio = np.exp(log_ratio)
    if not np.all(np.isfinite(ratio)):
        raise TrainingError("non-finite probability ratio in ppo loss")
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = ratio * adv
    surr_clipped = clipped * adv
    per_sample = np.minimum(surr, surr_clipped)
    entropy = policy.entropy()
    loss = -float(np.mean(per_sample)) - ent_coef * entropy

    # Gradient flows only through samples where the unclipped branch is active.
    unclipped = surr <= surr_clipped
    g_logp = -(ratio * adv * unclipped) / b
    z = (u - m) / std
    d_mean = g_logp[:, None] * (z / std)       # d new_lp / d mean = (u - m) / std^2
    mean_grads, _ = policy.mean_net.backward(obs, d_mean)
    d_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - ent_coef
    grads = mean_grads + [d_log_std]

    approx_kl = float(np.mean(ratio - 1.0 - log_ratio))
    stats = {
        "mean_ratio": float(np.mean(ratio)),
        "approx_kl": approx_kl,
        "clip_fraction": float(np.mean(~unclipped)),
        "entropy": entropy,
    }
    return loss, stats, grads


def diversity_loss(policy: GaussianPolicy, obs, members, noise):
    """Mean of -1/(1 + log pi_i(u|s)) over frozen members, u reparameterized
    from the current policy. Returns 0 on an empty member set."""
    loss, _ = diversity_loss_and_grads(policy, obs, members, noise)
    return loss


DIVERSITY_DENOM_EPS = 1e-3
# Gradient factor 1/denom^2 saturates at this denominator width: the raw pole
# reaches 1/eps^2 = 1e6, and one such sample eats the whole global-norm clip
# budget, starving the task gradient.
DIVERSITY_GRAD_WIDTH = 0.25


def diversity_loss_and_grads(policy: GaussianPolicy, obs, members, noise):
    obs = np.asarray(obs, dtype=np.float64)
    zero = [np.zeros_like(p) for p in policy.parameters()]
    if len(members) == 0:
        return 0.0, zero
    noise = np.asarray(noise, dtype=np.float64)
    m = policy.mean(obs)
    std = policy.std()
    if noise.shape != m.shape:
        raise DimensionError(f"noise shape {noise.shape} != mean shape {m.shape}")
    u = m + std * noise
    b = obs.shape[0]
    n_mem = len(members)
    total = 0.0
    d_u = np.zeros_like(u)
    for member in members:
        mi = member.mean(obs)
        stdi = member.std()
        zi = (u - mi) / stdi
        li = -0.5 * np.sum(zi * zi + 2.0 * np.log(stdi) + LOG_2PI, axis=-1)
        denom = 1.0 + li
        small = np.abs(denom) < DIVERSITY_DENOM_EPS
        sign = np.where(denom >= 0.0, 1.0, -1.0)
        denom_safe = np.where(small, sign * DIVERSITY_DENOM_EPS, denom)
        total += float(np.sum(-1.0 / denom_safe))
        # d(-1/denom)/d li is 1/denom^2 away from the pole; saturated so one
        # near-pole sample cannot dominate the minibatch gradient.
        g_li = np.where(small, 0.0,
                        1.0 / np.maximum(denom_safe * denom_safe,
                                         DIVERSITY_GRAD_WIDTH ** 2)) / (b * n_mem)
        d_u += g_li[:, None] * (-zi / stdi)
    loss = total / (b * n_mem)
    mean_grads, _ = policy.mean_net.backward(obs, d_u)
    d_log_std = np.sum(d_u * (std * noise), axis=0)
    return loss, mean_grads + [d_log_std]


def adapt_lr(lr: float, kl: float, desired_kl: float) -> float:
    if kl > 2.0 * desired_kl:
        lr = lr / 2.0
    elif kl < desired_kl / 2.0:
        lr = lr * 1.5
    return float(np.clip(lr, 1e-6, 1e-2))


# --- rollout machinery -------------------------------------------------------

@dataclass
class StepBatch:
    """One vectorized timestep handed to a reward shaper."""
    obs: np.ndarray
    u: np.ndarray
    a_norm: np.ndarray
    a_rad: np.ndarray
    q_before: np.ndarray
    q_after: np.ndarray
    task_reward: np.ndarray
    logp: np.ndarray
    windows: np.ndarray = None


class TaskRewardShaper:
    """Identity: train on the raw task reward."""
    wants_window = False
    window_size = 0

    def shape(self, batch: StepBatch) -> np.ndarray:
        return batch.task_reward

    def on_rollout_end(self, task_rewards: np.ndarray) -> None:
        pass


@dataclass
class PolicyCheckpoint:
    task_id: str
    seed: int
    episodes_trained: int
    pipeline_iteration: int
    checkpoint_id: str
    success_rate: float
    obs_dim: int
    act_dim: int
    hidden: tuple
    mean_net: dict
    log_std: dict
    value_net: dict

    def build_policy(self) -> GaussianPolicy:
        policy = GaussianPolicy.__new__(GaussianPolicy)
        policy.obs_dim = self.obs_dim
        policy.act_dim = self.act_dim
        policy.mean_net = nn.mlp_from_dict(self.mean_net)
        policy.log_std = nn.decode_array(self.log_std)
        return policy

    def build_value_net(self) -> nn.Mlp:
        return nn.mlp_from_dict(self.value_net)

    def to_file(self, path) -> None:
        meta = {"task_id": self.task_id, "seed": self.seed,
                "episodes_trained": self.episodes_trained,
                "pipeline_iteration": self.pipeline_iteration,
                "checkpoint_id": self.checkpoint_id,
                "success_rate": self.success_rate,
                "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": list(self.hidden)}
        nn.save_container(path, "policy-checkpoint", {
            "meta": meta, "mean_net": self.mean_net, "log_std": self.log_std,
            "value_net": self.value_net})

    @staticmethod
    def from_file(path) -> "PolicyCheckpoint":
        doc = nn.load_container(path, "policy-checkpoint")
        meta = doc["meta"]
        return PolicyCheckpoint(
            task_id=meta["task_id"], seed=meta["seed"],
            episodes_trained=meta["episodes_trained"],
            pipeline_iteration=meta["pipeline_iteration"],
            checkpoint_id=meta["checkpoint_id"],
            success_rate=meta["success_rate"], obs_dim=meta["obs_dim"],
            act_dim=meta["act_dim"], hidden=tuple(meta["hidden"]),
            mean_net=doc["mean_net"], log_std=doc["log_std"],
            value_net=doc["value_net"])


def snapshot_checkpoint(trainer: "PpoTrainer", checkpoint_id: str,
                        pipeline_iteration: int, success_rate: float = -1.0
                        ) -> PolicyCheckpoint:
    return PolicyCheckpoint(
        task_id=trainer.env_spec.task_id, seed=trainer.seed,
        episodes_trained=trainer.episodes_trained,
        pipeline_iteration=pipeline_iteration, checkpoint_id=checkpoint_id,
        success_rate=success_rate, obs_dim=trainer.policy.obs_dim,
        act_dim=trainer.policy.act_dim, hidden=tuple(trainer.config.hidden),
        mean_net=nn.mlp_to_dict(trainer.policy.mean_net),
        log_std=nn.encode_array(trainer.policy.log_std),
        value_net=nn.mlp_to_dict(trainer.value_net))


class PpoTrainer:
    """On-policy trainer for one task. Rollouts fan across num_envs copies;
    updates are standard clipped PPO plus an optional diversity term against
    frozen set members."""

    def __init__(self, env_spec: EnvSpec, config: PpoConfig, seed: int,
                 reward_shaper=None, diversity_members=(), init_checkpoint=None):
        self.env_spec = env_spec
        self.config = config
        self.seed = seed
        root = np.random.SeedSequence(seed)
        net_ss, sample_ss, env_ss = root.spawn(3)
        self.rng = np.random.default_rng(sample_ss)
        self._env_seed_stream = np.random.default_rng(env_ss)
        d_obs = obs_dim(env_spec)
        net_rng = np.random.default_rng(net_ss)
        if init_checkpoint is not None:
            self.policy = init_checkpoint.build_policy()
            self.value_net = init_checkpoint.build_value_net()
            if self.policy.obs_dim != d_obs:
                raise DimensionError(
                    f"checkpoint obs dim {self.policy.obs_dim} != env obs dim {d_obs}")
        else:
            self.policy = GaussianPolicy(d_obs, N_JOINTS, config.hidden,
                                         config.init_noise_std, rng=net_rng)
            self.value_net = nn.Mlp([d_obs, *config.hidden, 1], "tanh", "identity",
                                    rng=net_rng)
        self.shaper = reward_shaper if reward_shaper is not None else TaskRewardShaper()
        self.members = list(diversity_members)
        self.lr = config.lr
        self.policy_opt = nn.adam_init(self.policy.parameters(), lr=self.lr)
        self.value_opt = nn.adam_init(self.value_net.parameters(), lr=self.lr)
        self.vec = VectorArmEnvs(env_spec, config.num_envs, self._env_seed_stream)
        self.obs = self.vec.obs()
        self._frames = [[] for _ in range(config.num_envs)]
        self.episodes_trained = 0
        self.updates_done = 0
        self._recent_success = deque(maxlen=50)

    def _window(self, env_idx: int) -> np.ndarray:
        m = self.shaper.window_size
        frames = self._frames[env_idx]
        pad = [frames[0]] * max(0, m - len(frames))
        recent = pad + frames[-m:]
        return np.concatenate(recent)

    def collect_rollout(self):
        cfg = self.config
        n_env = cfg.num_envs
        t_len = cfg.rollout_len
        obs_buf = np.zeros((t_len, n_env, self.policy.obs_dim))
        u_buf = np.zeros((t_len, n_env, N_JOINTS))
        logp_buf = np.zeros((t_len, n_env))
        rew_buf = np.zeros((t_len, n_env))
        task_rew_buf = np.zeros((t_len, n_env))
        done_buf = np.zeros((t_len, n_env))
        val_buf = np.zeros((t_len + 1, n_env))
        for t in range(t_len):
            obs = self.obs
            u, logp = self.policy.act(obs, self.rng)
            a_norm = np.clip(u, -1.0, 1.0)
            a_rad = ACTION_BOUND * a_norm
            val_buf[t] = self.value_net.forward(obs)[:, 0]
            task_r, dones, succ, q_before, q_after, _ = self.vec.step(a_rad)
            windows = None
            if self.shaper.wants_window:
                q_before_norm = q_before / JOINT_LIMIT
                for i in range(n_env):
                    self._frames[i].append(
                        np.concatenate([q_before_norm[i], a_norm[i]]))
                windows = np.stack([self._window(i) for i in range(n_env)])
            batch = StepBatch(obs=obs, u=u, a_norm=a_norm, a_rad=a_rad,
                              q_before=q_before, q_after=q_after,
                              task_reward=task_r, logp=logp, windows=windows)
            shaped = np.asarray(self.shaper.shape(batch), dtype=np.float64)
            for i in np.nonzero(dones)[0]:
                self.episodes_trained += 1
                self._recent_success.append(bool(succ[i]))
                self._frames[i] = []
            obs_buf[t] = obs
            u_buf[t] = u
            logp_buf[t] = logp
            rew_buf[t] = shaped
            task_rew_buf[t] = task_r
            done_buf[t] = dones
            self.obs = self.vec.obs()
        val_buf[t_len] = self.value_net.forward(self.obs)[:, 0]
        self.shaper.on_rollout_end(task_rew_buf.reshape(-1))
        return obs_buf, u_buf, logp_buf, rew_buf, done_buf, val_buf, task_rew_buf

    def update(self) -> dict:
        cfg = self.config
        obs_buf, u_buf, logp_buf, rew_buf, done_buf, val_buf, task_rew_buf = \
            self.collect_rollout()
        t_len, n_env = rew_buf.shape
        # gae_advantages, vectorized across env columns (same recursion).
        adv = np.zeros((t_len, n_env))
        running = np.zeros(n_env)
        for t in range(t_len - 1, -1, -1):
            mask = 1.0 - done_buf[t]
            delta = rew_buf[t] + cfg.gamma * val_buf[t + 1] * mask - val_buf[t]
            running = delta + cfg.gamma * cfg.gae_lambda * mask * running
            adv[t] = running.copy()
        ret = adv + val_buf[:-1]
        flat = t_len * n_env
        obs = obs_buf.reshape(flat, -1)
        u = u_buf.reshape(flat, -1)
        old_logp = logp_buf.reshape(flat)
        adv = adv.reshape(flat)
        ret = ret.reshape(flat)
        adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)

        kls = []
        losses = []
        mb_size = flat // cfg.minibatches
        with _BLAS.limit(limits=1):
            return self._optimize(obs, u, old_logp, adv_n, ret, kls, losses,
                                  mb_size, rew_buf, task_rew_buf)

    def _optimize(self, obs, u, old_logp, adv_n, ret, kls, losses, mb_size,
                  rew_buf, task_rew_buf) -> dict:
        cfg = self.config
        flat = obs.shape[0]
        for _ in range(cfg.opt_epochs):
            perm = self.rng.permutation(flat)
            epoch_kls = []
            for k in range(cfg.minibatches):
                idx = perm[k * mb_size:(k + 1) * mb_size]
                loss, stats, grads = ppo_loss_and_grads(
                    self.policy, obs[idx], u[idx], old_logp[idx], adv_n[idx],
                    cfg.clip_eps, cfg.ent_coef)
                if cfg.diversity_coef != 0.0 and self.members:
                    noise = self.rng.standard_normal((len(idx), N_JOINTS))
                    dloss, dgrads = diversity_loss_and_grads(
                        self.policy, obs[idx], self.members, noise)
                    loss += cfg.diversity_coef * dloss
                    grads = [g + cfg.diversity_coef * dg
                             for g, dg in zip(grads, dgrads)]
                grads, _ = nn.clip_by_global_norm(grads, cfg.max_grad_norm)
                new_params = nn.adam_step(self.policy_opt, self.policy.parameters(), grads)
                self.policy.set_parameters(new_params)
                self.policy.clamp_log_std()

                v = self.value_net.forward(obs[idx])
                v_err = v[:, 0] - ret[idx]
                v_loss = 0.5 * float(np.mean(v_err * v_err))
                v_grads, _ = self.value_net.backward(
                    obs[idx], (v_err / len(idx))[:, None])
                v_grads, _ = nn.clip_by_global_norm(v_grads, cfg.max_grad_norm)
                new_v = nn.adam_step(self.value_opt, self.value_net.parameters(), v_grads)
                self.value_net.set_parameters(new_v)

                epoch_kls.append(stats["approx_kl"])
                losses.append(loss + v_loss)
            epoch_kl = float(np.mean(epoch_kls))
            kls.append(epoch_kl)
            if cfg.adaptive_lr:
                self.lr = adapt_lr(self.lr, epoch_kl, cfg.desired_kl)
                self.policy_opt.lr = self.lr
                self.value_opt.lr = self.lr
        self.updates_done += 1
        return {
            "update": self.updates_done,
            "mean_reward": float(rew_buf.mean()),
            "mean_task_reward": float(task_rew_buf.mean()),
            "approx_kl": float(np.mean(kls)),
            "loss": float(np.mean(losses)),
            "lr": self.lr,
            "recent_success": (float(np.mean(self._recent_success))
                               if self._recent_success else 0.0),
            "episodes": self.episodes_trained,
            "std": float(np.mean(self.policy.std())),
        }

    def train(self, n_updates: int):
        stats = None
        for _ in range(n_updates):
            stats = self.update()
        return stats


def evaluate_success(policy: GaussianPolicy, env_spec: EnvSpec, episodes: int,
                     seed: int, deterministic: bool = True) -> float:
    """Fraction of evaluation episodes whose success predicate holds."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    env = PlanarArmEnv(env_spec)
    wins = 0
    for ep in range(episodes):
        obs = env.reset(int(rng.integers(0, 2 ** 31 - 1)))
        done = False
        while not done:
            u, _ = policy.act(obs[None, :], rng, deterministic=deterministic)
            tr = env.step(ACTION_BOUND * np.clip(u[0], -1.0, 1.0))
            obs = tr.obs
            done = tr.done
        wins += tr.success
    return wins / episodes


def train_diverse_set(env_spec: EnvSpec, n_policies: int, config: PpoConfig,
                      seed: int, updates: int, shaper_factory=None,
                      init_checkpoints=None, checkpoint_interval=None,
                      success_filter: float = 0.5, eval_episodes: int = 20,
                      pipeline_iteration: int = 0):
    """Sequentially trains n_policies with the diversity loss against the
    frozen final parameters of the earlier ones. Returns (kept, finals) where
    kept holds only checkpoints whose evaluated success rate passes the
    filter and finals holds every policy's final checkpoint (unfiltered).
    Raises PipelineError when nothing passes the filter."""
    members = []
    kept = []
    finals = []
    root = np.random.SeedSequence(seed)
    policy_seeds = root.spawn(n_policies)
    eval_seed = int(np.random.default_rng(root.spawn(1)[0]).integers(0, 2 ** 31 - 1))
    for i in range(n_policies):
        p_seed = int(np.random.default_rng(policy_seeds[i]).integers(0, 2 ** 31 - 1))
        shaper = shaper_factory() if shaper_factory is not None else None
        init = init_checkpoints[i] if init_checkpoints else None
        trainer = PpoTrainer(env_spec, config, p_seed, reward_shaper=shaper,
                             diversity_members=members, init_checkpoint=init)
        snapshots = []
        interval = checkpoint_interval or updates
        done_updates = 0
        while done_updates < updates:
            chunk = min(interval, updates - done_updates)
            trainer.train(chunk)
            done_updates += chunk
            snapshots.append((done_updates, snapshot_checkpoint(
                trainer, f"{env_spec.task_id}-i{pipeline_iteration}-p{i}"
                         f"-u{done_updates}-s{p_seed}",
                pipeline_iteration)))
        members.append(trainer.policy.copy())
        for done_updates, ckpt in snapshots:
            rate = evaluate_success(ckpt.build_policy(), env_spec, eval_episodes,
                                    eval_seed + done_updates)
            ckpt.success_rate = rate
            if done_updates == updates:
                finals.append(ckpt)
            if rate >= success_filter:
                kept.append(ckpt)
    if not kept:
        raise PipelineError(
            f"no checkpoint passed success filter {success_filter} on task"
            f" {env_spec.task_id}")
    return kept, finals
