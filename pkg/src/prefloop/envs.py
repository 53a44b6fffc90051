"""Kinematic 3-link planar-arm tasks with dense rewards and success predicates.

Four tasks share the embodiment (3 joints, delta-angle actions clamped to
+/-0.1 rad, joint limits +/-2.8 rad): REACH3 (static target), PUSH3 (push a
block to a goal), TRACE3 (visit waypoints in order), REACH_MOVING3 (track a
moving target; reserved as the unseen task). Dynamics are purely kinematic and
fully determined by (seed, action sequence).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError

N_JOINTS = 3
LINK_LENGTH = 1.0
JOINT_LIMIT = 2.8
ACTION_BOUND = 0.1
CONTACT_RADIUS = 0.25

TASK_IDS = ("REACH3", "PUSH3", "TRACE3", "REACH_MOVING3")

# REACH_MOVING3 target motion: circular drift, half a revolution per episode.
MOVING_OMEGA = 2.0 * math.pi / 240.0


@dataclass
class EnvSpec:
    task_id: str
    horizon: int = 120
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 1.0
    c4: float = -0.01
    alpha_balance: float = 1.0
    success_threshold: float = 0.05
    capture_radius: float = 0.15
    pocket_radius: float = 0.15
    n_waypoints: int = 3

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise ConfigurationError(f"unknown task_id {self.task_id!r}, valid: {TASK_IDS}")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        for name in ("c0", "c1", "c2", "c3", "c4", "alpha_balance", "success_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")


def make_env_spec(task_id: str, **overrides) -> EnvSpec:
    """Per-task default coefficients; keyword overrides win."""
    defaults = {
        "REACH3": dict(c3=1.0, success_threshold=0.05),
        "REACH_MOVING3": dict(c3=1.0, success_threshold=0.08),
        "PUSH3": dict(c1=0.25, c3=1.0, success_threshold=0.05),
        "TRACE3": dict(c0=0.25, c3=1.0),
    }
    if task_id not in defaults:
        raise ConfigurationError(f"unknown task_id {task_id!r}, valid: {TASK_IDS}")
    kw = defaults[task_id]
    kw.update(overrides)
    return EnvSpec(task_id=task_id, **kw)


@dataclass
class ArmState:
    q: np.ndarray
    q_prev: np.ndarray
    object_state: np.ndarray
    step_index: int


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    task_reward: float
    done: bool
    success: bool
    q_before: np.ndarray = None
    object_state_before: np.ndarray = None


def fk_positions(q) -> np.ndarray:
    """Joint positions of the chain, shape (4, 2): base, elbow1, elbow2, end-effector."""
    q = np.asarray(q, dtype=np.float64)
    cum = np.cumsum(q)
    pts = np.zeros((N_JOINTS + 1, 2))
    pts[1:, 0] = LINK_LENGTH * np.cumsum(np.cos(cum))
    pts[1:, 1] = LINK_LENGTH * np.cumsum(np.sin(cum))
    return pts


def end_effector(q) -> np.ndarray:
    return fk_batch(np.asarray(q, dtype=np.float64)[None, :])[0]


def ee_jacobian(q) -> np.ndarray:
    """d end_effector / d q, shape (2, 3)."""
    return jacobian_batch(np.asarray(q, dtype=np.float64)[None, :])[0]


def build_obs(spec: EnvSpec, state: ArmState) -> np.ndarray:
    return build_obs_batch(spec, state.q[None, :], state.object_state[None, :])[0]


def obs_dim(spec: EnvSpec) -> int:
    return {"REACH3": 12, "REACH_MOVING3": 12, "PUSH3": 11, "TRACE3": 11}[spec.task_id]


def reward_batch(spec: EnvSpec, ee: np.ndarray, obj: np.ndarray,
                 a_eff: np.ndarray) -> np.ndarray:
    """Dense per-task reward of the post-action state, vectorized over envs."""
    penalty = spec.c4 * np.sum(a_eff * a_eff, axis=1)
    if spec.task_id in ("REACH3", "REACH_MOVING3"):
        d_t = np.linalg.norm(ee - obj[:, :2], axis=1)
        return np.exp(-0.2 * spec.alpha_balance * d_t) + penalty
    if spec.task_id == "PUSH3":
        d_bg = np.linalg.norm(obj[:, :2] - obj[:, 2:4], axis=1)
        d_eb = np.linalg.norm(ee - obj[:, :2], axis=1)
        return (spec.c3 * np.exp(-0.2 * spec.alpha_balance * d_bg)
                + spec.c1 * np.exp(-0.2 * d_eb) + penalty)
    if spec.task_id == "TRACE3":
        d_w = np.linalg.norm(ee - obj[:, :2], axis=1)
        return (np.exp(-0.2 * spec.alpha_balance * d_w)
                + spec.c0 * obj[:, 3] + penalty)
    raise ConfigurationError(f"unknown task_id {spec.task_id!r}")


def task_reward(spec: EnvSpec, state: ArmState, action) -> float:
    """Dense reward of the post-action state; `action` is the applied delta (rad)."""
    a = np.asarray(action, dtype=np.float64)[None, :]
    ee = fk_batch(state.q[None, :])
    return float(reward_batch(spec, ee, state.object_state[None, :], a)[0])


def reward_bound(spec: EnvSpec) -> float:
    """Per-step bound: 1 + |c0| + |c1| + |c4| * 3 * ACTION_BOUND**2.

    The |c1| term covers PUSH3's hand-to-block shaping; it is zero for the
    other tasks.
    """
    return (1.0 + abs(spec.c0) + abs(spec.c1)
            + abs(spec.c4) * N_JOINTS * ACTION_BOUND ** 2)


class PlanarArmEnv:
    """One episode at a time; reset(seed) then step(action) until done."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._state = None
        self._done = True
        self._waypoints = None
        self._moving = None  # (center, radius, phase)
        self._dist_history = None
        self._captured_before_last = 0

    @property
    def state(self) -> ArmState:
        return self._state

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        q0 = rng.uniform(-0.5 * JOINT_LIMIT, 0.5 * JOINT_LIMIT, size=N_JOINTS)
        spec = self.spec
        if spec.task_id == "REACH3":
            obj = self._sample_point(rng, 0.5, 2.5, angle_limit=2.0)
        elif spec.task_id == "REACH_MOVING3":
            center = self._sample_point(rng, 1.0, 1.8)
            radius = rng.uniform(0.2, 0.4)
            phase = rng.uniform(-math.pi, math.pi)
            self._moving = (center, radius, phase)
            obj = self._moving_target(0)
        elif spec.task_id == "PUSH3":
            # Block spawns near the arm's starting end-effector with the goal
            # along the ee-to-block ray, so pushing through the block is
            # progress; contact and credit are both learnable at desk scale.
            ee0 = end_effector(q0)
            radial = math.atan2(ee0[1], ee0[0])
            block = None
            for _ in range(20):
                # Offset biased away from the base so the push is outward-ish,
                # keeping the workspace uncramped.
                angle = radial + rng.uniform(-1.9, 1.9)
                cand = ee0 + rng.uniform(0.3, 0.5) * np.array(
                    [math.cos(angle), math.sin(angle)])
                if 0.8 <= np.linalg.norm(cand) <= 2.0:
                    block = cand
                    break
            if block is None:
                block = ee0 * max(0.8 / max(np.linalg.norm(ee0), 1e-9), 1.0)
            push_dir = block - ee0
            n = np.linalg.norm(push_dir)
            push_dir = push_dir / n if n > 1e-9 else np.array([1.0, 0.0])
            goal = None
            for _ in range(20):
                psi = rng.uniform(-0.3, 0.3)
                rot = np.array([[math.cos(psi), -math.sin(psi)],
                                [math.sin(psi), math.cos(psi)]])
                cand = block + rng.uniform(0.3, 0.55) * (rot @ push_dir)
                if 0.6 <= np.linalg.norm(cand) <= 2.2:
                    goal = cand
                    break
            if goal is None:
                goal = block + 0.4 * push_dir
            obj = np.concatenate([block, goal])
        elif spec.task_id == "TRACE3":
            # Chained waypoints starting near the arm's initial end-effector:
            # a traceable path rather than disconnected teleport targets.
            wps = []
            anchor = end_effector(q0)
            heading = rng.uniform(-math.pi, math.pi)
            for _ in range(spec.n_waypoints):
                cand = None
                for _ in range(20):
                    heading_k = heading + rng.uniform(-0.9, 0.9)
                    step = rng.uniform(0.45, 0.8)
                    trial = anchor + step * np.array(
                        [math.cos(heading_k), math.sin(heading_k)])
                    if 0.6 <= np.linalg.norm(trial) <= 2.2:
                        cand = trial
                        heading = heading_k
                        break
                if cand is None:
                    pull = -anchor / max(np.linalg.norm(anchor), 1e-9)
                    cand = anchor + 0.6 * pull
                    heading = math.atan2(pull[1], pull[0])
                wps.append(cand)
                anchor = cand
            self._waypoints = np.array(wps)
            obj = np.array([wps[0][0], wps[0][1], 0.0, 0.0])
        else:
            raise ConfigurationError(f"unknown task_id {spec.task_id!r}")
        self._state = ArmState(q=q0, q_prev=q0.copy(), object_state=obj, step_index=0)
        self._done = False
        self._dist_history = []
        self._captured_before_last = 0
        return build_obs(spec, self._state)

    @staticmethod
    def _sample_point(rng, r_min, r_max, angle_limit=math.pi) -> np.ndarray:
        r = rng.uniform(r_min, r_max)
        theta = rng.uniform(-angle_limit, angle_limit)
        return np.array([r * math.cos(theta), r * math.sin(theta)])

    def _moving_target(self, step) -> np.ndarray:
        center, radius, phase = self._moving
        angle = phase + MOVING_OMEGA * step
        return center + radius * np.array([math.cos(angle), math.sin(angle)])

    def _pre_action_distance(self, state: ArmState) -> float:
        ee = end_effector(state.q)
        if self.spec.task_id in ("REACH3", "REACH_MOVING3"):
            return float(np.linalg.norm(ee - state.object_state[:2]))
        if self.spec.task_id == "PUSH3":
            return float(np.linalg.norm(state.object_state[:2] - state.object_state[2:4]))
        return float(np.linalg.norm(ee - state.object_state[:2]))

    def step(self, action) -> Transition:
        if self._done:
            raise UsageError("step() called after episode end; reset() first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (N_JOINTS,):
            raise ConfigurationError(f"action must have shape ({N_JOINTS},), got {a.shape}")
        spec = self.spec
        state = self._state
        self._dist_history.append(self._pre_action_distance(state))
        q_before = state.q.copy()
        obj_before = state.object_state.copy()
        if spec.task_id == "TRACE3":
            self._captured_before_last = int(state.object_state[2])

        a_eff = np.clip(a, -ACTION_BOUND, ACTION_BOUND)
        q_new = np.clip(state.q + a_eff, -JOINT_LIMIT, JOINT_LIMIT)
        ee_new = end_effector(q_new)
        step_index = state.step_index + 1

        if spec.task_id == "REACH3":
            obj = state.object_state
        elif spec.task_id == "REACH_MOVING3":
            obj = self._moving_target(step_index)
        elif spec.task_id == "PUSH3":
            block = state.object_state[:2].copy()
            goal = state.object_state[2:4]
            # The goal is a shallow pocket: a block pushed inside it settles
            # centered and no longer moves.
            if np.linalg.norm(block - goal) > 1e-12:
                v = block - ee_new
                d = float(np.linalg.norm(v))
                if d < CONTACT_RADIUS:
                    if d < 1e-9:
                        motion = ee_new - end_effector(state.q)
                        n = float(np.linalg.norm(motion))
                        v = motion / n if n > 1e-12 else np.array([1.0, 0.0])
                        d = 1.0
                    block = ee_new + v / d * CONTACT_RADIUS
                if np.linalg.norm(block - goal) < spec.pocket_radius:
                    block = goal.copy()
            obj = np.concatenate([block, state.object_state[2:4]])
        elif spec.task_id == "TRACE3":
            captured = int(state.object_state[2])
            captured_now = 0.0
            if captured < spec.n_waypoints:
                wp = self._waypoints[captured]
                if np.linalg.norm(ee_new - wp) < spec.capture_radius:
                    captured += 1
                    captured_now = 1.0
            wp = self._waypoints[min(captured, spec.n_waypoints - 1)]
            obj = np.array([wp[0], wp[1], float(captured), captured_now])
        else:
            raise ConfigurationError(f"unknown task_id {spec.task_id!r}")

        new_state = ArmState(q=q_new, q_prev=state.q, object_state=obj,
                             step_index=step_index)
        reward = task_reward(spec, new_state, a_eff)
        done = step_index >= spec.horizon
        success = self._episode_success() if done else False
        self._state = new_state
        self._done = done
        return Transition(obs=build_obs(spec, new_state), action=a_eff,
                          task_reward=reward, done=done, success=success,
                          q_before=q_before, object_state_before=obj_before)

    def _episode_success(self) -> bool:
        """Predicate over pre-action frames only, so it is recomputable from a
        recorded trajectory."""
        spec = self.spec
        if spec.task_id == "REACH3" or spec.task_id == "PUSH3":
            return self._dist_history[-1] < spec.success_threshold
        if spec.task_id == "REACH_MOVING3":
            tail = self._dist_history[-10:]
            return len(tail) == 10 and all(d < spec.success_threshold for d in tail)
        if spec.task_id == "TRACE3":
            return self._captured_before_last >= spec.n_waypoints
        raise ConfigurationError(f"unknown task_id {spec.task_id!r}")


def success_eval(spec: EnvSpec, frames_q, frames_obj) -> bool:
    """Recompute the per-task success predicate from recorded pre-action frames.

    frames_q: (H, 3) joint angles in radians; frames_obj: (H, d) object states.
    """
    frames_q = np.asarray(frames_q, dtype=np.float64)
    frames_obj = np.asarray(frames_obj, dtype=np.float64)
    if spec.task_id == "REACH3":
        d = np.linalg.norm(end_effector(frames_q[-1]) - frames_obj[-1, :2])
        return bool(d < spec.success_threshold)
    if spec.task_id == "PUSH3":
        d = np.linalg.norm(frames_obj[-1, :2] - frames_obj[-1, 2:4])
        return bool(d < spec.success_threshold)
    if spec.task_id == "REACH_MOVING3":
        if frames_q.shape[0] < 10:
            return False
        for q, obj in zip(frames_q[-10:], frames_obj[-10:]):
            if np.linalg.norm(end_effector(q) - obj[:2]) >= spec.success_threshold:
                return False
        return True
    if spec.task_id == "TRACE3":
        return bool(frames_obj[-1, 2] >= spec.n_waypoints)
    raise ConfigurationError(f"unknown task_id {spec.task_id!r}")


def _dls_step(q, goal, gain: float = 2.0) -> np.ndarray:
    """Damped-least-squares delta toward `goal`, joint-limit aware, bounded."""
    err = goal - end_effector(q)
    jac = ee_jacobian(q)
    damp = 0.05 * np.eye(2)
    a = jac.T @ np.linalg.solve(jac @ jac.T + damp, gain * err)
    # Joints pinned at a limit contribute nothing in the blocked direction;
    # mask them and re-solve so the remaining joints take over.
    blocked = ((q >= JOINT_LIMIT - 1e-9) & (a > 0)) | ((q <= -JOINT_LIMIT + 1e-9) & (a < 0))
    if blocked.any() and not blocked.all():
        jm = jac.copy()
        jm[:, blocked] = 0.0
        a = jm.T @ np.linalg.solve(jm @ jm.T + damp, gain * err)
        jac = jm
    # Null-space pull away from joint limits; leaves the end-effector motion intact.
    pull = -0.5 * np.sign(q) * np.maximum(0.0, np.abs(q) - 0.75 * JOINT_LIMIT)
    pinv = jac.T @ np.linalg.inv(jac @ jac.T + damp)
    a = a + pull - pinv @ (jac @ pull)
    peak = float(np.max(np.abs(a)))
    if peak > ACTION_BOUND:
        a = a * (ACTION_BOUND / peak)
    return a


def fk_batch(q: np.ndarray) -> np.ndarray:
    """End-effector positions for a batch of joint vectors, shape (E, 2)."""
    cum = np.cumsum(q, axis=1)
    return np.stack([LINK_LENGTH * np.sum(np.cos(cum), axis=1),
                     LINK_LENGTH * np.sum(np.sin(cum), axis=1)], axis=1)


def jacobian_batch(q: np.ndarray) -> np.ndarray:
    """Batched end-effector Jacobians, shape (E, 2, 3)."""
    cum = np.cumsum(q, axis=1)
    s = np.sin(cum)
    c = np.cos(cum)
    # J[:, 0, i] = -L * sum_{k>=i} sin(cum_k); J[:, 1, i] = L * sum_{k>=i} cos(cum_k)
    rev_s = np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
    rev_c = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]
    return np.stack([-LINK_LENGTH * rev_s, LINK_LENGTH * rev_c], axis=1)


def build_obs_batch(spec: EnvSpec, q: np.ndarray, obj: np.ndarray) -> np.ndarray:
    """Vectorized build_obs over (E, 3) joint and (E, d) object arrays."""
    q_norm = q / JOINT_LIMIT
    ee = fk_batch(q)
    jac = jacobian_batch(q)
    if spec.task_id in ("REACH3", "REACH_MOVING3"):
        target = obj[:, :2]
        err = target - ee
        jt = np.einsum("eij,ei->ej", jac, err) / 3.0
        return np.concatenate([q_norm, ee, target, err, jt], axis=1)
    if spec.task_id == "PUSH3":
        block = obj[:, :2]
        goal = obj[:, 2:4]
        push = goal - block
        n = np.linalg.norm(push, axis=1, keepdims=True)
        push_dir = np.where(n > 1e-9, push / np.maximum(n, 1e-12),
                            np.array([1.0, 0.0]))
        behind = block - push_dir * CONTACT_RADIUS
        jt = np.einsum("eij,ei->ej", jac, behind - ee) / 3.0
        return np.concatenate([q_norm, block - ee, push, jt, n], axis=1)
    if spec.task_id == "TRACE3":
        wp = obj[:, :2]
        remaining = (1.0 - obj[:, 2] / spec.n_waypoints)[:, None]
        err = wp - ee
        jt = np.einsum("eij,ei->ej", jac, err) / 3.0
        return np.concatenate([q_norm, ee, err, jt, remaining], axis=1)
    raise ConfigurationError(f"unknown task_id {spec.task_id!r}")


class VectorArmEnvs:
    """Batched copy of PlanarArmEnv semantics over E environments.

    The hot path (step) is fully vectorized; resets reuse the scalar env's
    sampling code per environment so (seed, action sequence) trajectories are
    bit-identical to PlanarArmEnv's.
    """

    def __init__(self, spec: EnvSpec, n_envs: int, seed_stream):
        self.spec = spec
        self.n_envs = n_envs
        self._seed_stream = seed_stream
        self._probe = [PlanarArmEnv(spec) for _ in range(n_envs)]
        self.q = np.zeros((n_envs, N_JOINTS))
        obj_dim = {"REACH3": 2, "REACH_MOVING3": 2, "PUSH3": 4, "TRACE3": 4}[spec.task_id]
        self.obj = np.zeros((n_envs, obj_dim))
        self.step_idx = np.zeros(n_envs, dtype=np.int64)
        self._last_pre_dist = np.full(n_envs, np.inf)
        self._below_streak = np.zeros(n_envs, dtype=np.int64)
        self._captured_pre = np.zeros(n_envs, dtype=np.int64)
        for i in range(n_envs):
            self._reset_one(i)

    def _next_seed(self) -> int:
        return int(self._seed_stream.integers(0, 2 ** 31 - 1))

    def _reset_one(self, i: int) -> None:
        env = self._probe[i]
        env.reset(self._next_seed())
        self.q[i] = env.state.q
        self.obj[i] = env.state.object_state
        self.step_idx[i] = 0
        self._last_pre_dist[i] = np.inf
        self._below_streak[i] = 0
        self._captured_pre[i] = 0

    def obs(self) -> np.ndarray:
        return build_obs_batch(self.spec, self.q, self.obj)

    def step(self, actions: np.ndarray):
        """Applies one action per env; auto-resets finished envs afterwards.

        Returns (rewards, dones, successes, q_before, q_after, obj_before).
        Post-reset observations come from obs().
        """
        spec = self.spec
        e = self.n_envs
        a_eff = np.clip(actions, -ACTION_BOUND, ACTION_BOUND)
        q_before = self.q.copy()
        obj_before = self.obj.copy()
        ee_before = fk_batch(self.q)

        # Pre-action bookkeeping for the success predicates.
        if spec.task_id in ("REACH3", "REACH_MOVING3", "TRACE3"):
            pre_dist = np.linalg.norm(ee_before - self.obj[:, :2], axis=1)
        else:
            pre_dist = np.linalg.norm(self.obj[:, :2] - self.obj[:, 2:4], axis=1)
        self._last_pre_dist = pre_dist
        below = pre_dist < spec.success_threshold
        self._below_streak = np.where(below, self._below_streak + 1, 0)
        if spec.task_id == "TRACE3":
            self._captured_pre = self.obj[:, 2].astype(np.int64)

        q_new = np.clip(self.q + a_eff, -JOINT_LIMIT, JOINT_LIMIT)
        ee_new = fk_batch(q_new)
        self.step_idx += 1

        if spec.task_id == "REACH_MOVING3":
            for i in range(e):
                self.obj[i] = self._probe[i]._moving_target(int(self.step_idx[i]))
        elif spec.task_id == "PUSH3":
            block = self.obj[:, :2]
            goal = self.obj[:, 2:4]
            settled = np.linalg.norm(block - goal, axis=1) <= 1e-12
            v = block - ee_new
            d = np.linalg.norm(v, axis=1)
            touching = (d < CONTACT_RADIUS) & ~settled
            if np.any(touching):
                motion = ee_new - ee_before
                mnorm = np.linalg.norm(motion, axis=1, keepdims=True)
                fallback = np.where(mnorm > 1e-12, motion / np.maximum(mnorm, 1e-12),
                                    np.array([1.0, 0.0]))
                unit = np.where((d > 1e-9)[:, None],
                                v / np.maximum(d, 1e-12)[:, None], fallback)
                pushed = ee_new + unit * CONTACT_RADIUS
                new_block = np.where(touching[:, None], pushed, block)
                captured = (np.linalg.norm(new_block - goal, axis=1)
                            < spec.pocket_radius) & ~settled
                new_block = np.where(captured[:, None], goal, new_block)
                self.obj[:, :2] = new_block
        elif spec.task_id == "TRACE3":
            captured = self.obj[:, 2].astype(np.int64)
            captured_now = np.zeros(e)
            active = captured < spec.n_waypoints
            for i in np.nonzero(active)[0]:
                wp = self._probe[i]._waypoints[captured[i]]
                if np.linalg.norm(ee_new[i] - wp) < spec.capture_radius:
                    captured[i] += 1
                    captured_now[i] = 1.0
            for i in range(e):
                wp = self._probe[i]._waypoints[min(captured[i], spec.n_waypoints - 1)]
                self.obj[i, 0] = wp[0]
                self.obj[i, 1] = wp[1]
            self.obj[:, 2] = captured
            self.obj[:, 3] = captured_now
        self.q = q_new

        rewards = reward_batch(spec, ee_new, self.obj, a_eff)
        dones = self.step_idx >= spec.horizon
        successes = np.zeros(e, dtype=bool)
        if np.any(dones):
            successes = self._success_batch() & dones
            for i in np.nonzero(dones)[0]:
                self._reset_one(i)
        return rewards, dones.astype(np.float64), successes, q_before, self.q.copy(), obj_before

    def _success_batch(self) -> np.ndarray:
        spec = self.spec
        if spec.task_id in ("REACH3", "PUSH3"):
            return self._last_pre_dist < spec.success_threshold
        if spec.task_id == "REACH_MOVING3":
            return self._below_streak >= 10
        return self._captured_pre >= spec.n_waypoints


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def analytic_ik(target, q_now) -> np.ndarray:
    """Joint-limit-feasible pose whose end-effector lands on `target`.

    Treats links 1-2 as a two-link arm reaching a wrist point one link short of
    the target along a chosen approach direction; sweeps approach offsets and
    both elbow branches, returning the feasible solution closest to q_now.
    Returns None when no in-limit solution exists.
    """
    target = np.asarray(target, dtype=np.float64)
    q_now = np.asarray(q_now, dtype=np.float64)
    phi0 = math.atan2(target[1], target[0])
    best = None
    best_cost = math.inf
    for off in (0.0, 0.3, -0.3, 0.6, -0.6, 0.9, -0.9, 1.2, -1.2, 1.5, -1.5):
        phi = phi0 + off
        wrist = target - LINK_LENGTH * np.array([math.cos(phi), math.sin(phi)])
        d = float(np.linalg.norm(wrist))
        if d > 2.0 * LINK_LENGTH + 1e-12:
            continue
        psi = math.atan2(wrist[1], wrist[0]) if d > 1e-9 else phi
        alpha = math.acos(min(1.0, max(-1.0, d / (2.0 * LINK_LENGTH))))
        for sign in (1.0, -1.0):
            base = _wrap_angle(psi + sign * alpha)
            elbow = _wrap_angle(-2.0 * sign * alpha)
            q3 = _wrap_angle(phi - base - elbow)
            cand = np.array([base, elbow, q3])
            if np.any(np.abs(cand) > JOINT_LIMIT):
                continue
            cost = float(np.max(np.abs(cand - q_now)))
            if cost < best_cost:
                best_cost = cost
                best = cand
    return best


class ScriptedController:
    """Deterministic goal-seeking controller used as a feasibility oracle and
    for synthetic trajectory generation. Tracks an analytic IK pose in joint
    space; falls back to damped least squares when no in-limit pose exists."""

    def _goal(self, env: PlanarArmEnv):
        state = env.state
        spec = env.spec
        if spec.task_id in ("REACH3", "REACH_MOVING3", "TRACE3"):
            return state.object_state[:2]
        if spec.task_id == "PUSH3":
            ee = end_effector(state.q)
            block = state.object_state[:2]
            target = state.object_state[2:4]
            if np.linalg.norm(block - target) < 0.5 * spec.success_threshold:
                return None
            push_dir = target - block
            n = np.linalg.norm(push_dir)
            push_dir = push_dir / n if n > 1e-9 else np.array([1.0, 0.0])
            behind = block - push_dir * (CONTACT_RADIUS + 0.05)
            if np.linalg.norm(ee - behind) > 0.1:
                return behind
            # Press slightly into the contact circle: the block yields forward.
            return block - push_dir * (CONTACT_RADIUS - 0.03)
        raise ConfigurationError(f"unknown task_id {spec.task_id!r}")

    def act(self, env: PlanarArmEnv) -> np.ndarray:
        q = env.state.q
        goal = self._goal(env)
        if goal is None:
            return np.zeros(N_JOINTS)
        pose = analytic_ik(goal, q)
        if pose is None:
            return _dls_step(q, goal)
        return np.clip(pose - q, -ACTION_BOUND, ACTION_BOUND)


def scripted_action(env: PlanarArmEnv) -> np.ndarray:
    """Single stateless goal-seeking step (no stall recovery)."""
    ctrl = ScriptedController()
    return ctrl.act(env)
