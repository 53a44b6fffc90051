"""Pipeline configuration: a single TOML file drives every stage.

Two built-in profiles: "desk" (the default; sized for a laptop run) and
"paper" (the published hyperparameters, far heavier). The desk profile keeps
per-module defaults except where noted in each dataclass.
"""

import copy
import os
from dataclasses import dataclass, field, asdict

import toml as toml_writer
import tomli

from .envs import TASK_IDS
from .errors import ConfigurationError
from .finetune import CombineConfig, KlAblationConfig
from .oracle import OracleConfig
from .policy import PpoConfig
from .reward_model import RmTrainConfig

LABELER_MODES = ("oracle", "human")
OUT_DIR_ENV_VAR = "PREFLOOP_OUT"


@dataclass
class PipelineConfig:
    train_tasks: list = field(default_factory=lambda: ["REACH3", "PUSH3", "TRACE3"])
    unseen_tasks: list = field(default_factory=lambda: ["REACH_MOVING3"])
    seed: int = 0
    out_dir: str = "runs/desk"
    labeler: str = "oracle"
    iterations: int = 3
    n_policies: int = 3
    base_updates: int = 300
    finetune_updates: int = 100
    checkpoint_interval: int = 150
    trajectories_per_checkpoint: int = 5
    prefs_per_task: int = 200
    success_filter: float = 0.5
    eval_episodes: int = 20
    eval_pairs: int = 300
    unseen_seeds: int = 5
    window_size: int = 8
    alpha_balance: float = 12.0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    rm: RmTrainConfig = field(default_factory=RmTrainConfig)
    combine: CombineConfig = field(default_factory=CombineConfig)
    kl_ablation: KlAblationConfig = field(default_factory=KlAblationConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self):
        overlap = set(self.train_tasks) & set(self.unseen_tasks)
        if overlap:
            raise ConfigurationError(f"tasks {sorted(overlap)} are both train and unseen")
        for task in list(self.train_tasks) + list(self.unseen_tasks):
            if task not in TASK_IDS:
                raise ConfigurationError(f"unknown task {task!r}, valid: {TASK_IDS}")
        if self.labeler not in LABELER_MODES:
            raise ConfigurationError(f"labeler must be one of {LABELER_MODES}")
        if self.rm.window_size != self.window_size:
            self.rm.window_size = self.window_size


_SECTION_TYPES = {
    "ppo": PpoConfig,
    "rm": RmTrainConfig,
    "combine": CombineConfig,
    "kl_ablation": KlAblationConfig,
    "oracle": OracleConfig,
}


def desk_profile(**overrides) -> PipelineConfig:
    """Laptop-sized defaults; PPO tuned for small-batch on-policy updates
    (more parallel envs, a looser KL target for the lr controller)."""
    cfg = PipelineConfig(**overrides)
    cfg.ppo.num_envs = 192
    cfg.ppo.desired_kl = 0.03
    cfg.rm.epochs = 1200
    return cfg


def paper_profile(**overrides) -> PipelineConfig:
    """Published hyperparameters (PPO table and RM training appendix)."""
    cfg = PipelineConfig(**overrides)
    cfg.iterations = 4
    cfg.n_policies = 10
    cfg.base_updates = 20000
    cfg.finetune_updates = 5000
    cfg.prefs_per_task = 1000
    cfg.ppo = PpoConfig(hidden=(1024, 1024, 512))
    cfg.rm = RmTrainConfig(batch_size=4096, epochs=50000,
                           window_size=cfg.window_size)
    return cfg


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def config_to_dict(cfg: PipelineConfig) -> dict:
    doc = {}
    for key, value in asdict(cfg).items():
        if key in _SECTION_TYPES:
            doc[key] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in value.items()}
        else:
            doc[key] = list(value) if isinstance(value, tuple) else value
    return doc


def config_from_dict(doc: dict) -> PipelineConfig:
    doc = copy.deepcopy(doc)
    profile = doc.pop("profile", "desk")
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    kwargs = {}
    for key, section_type in _SECTION_TYPES.items():
        if key in doc:
            section = doc.pop(key)
            if not isinstance(section, dict):
                raise ConfigurationError(f"[{key}] must be a table")
            unknown = set(section) - set(section_type.__dataclass_fields__)
            if unknown:
                raise ConfigurationError(f"[{key}] has unknown keys {sorted(unknown)}")
            if "hidden" in section:
                section["hidden"] = tuple(section["hidden"])
            kwargs[key] = section_type(**section)
    unknown = set(doc) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    base = PROFILES[profile]()
    for key, value in doc.items():
        setattr(base, key, value)
    for key, value in kwargs.items():
        setattr(base, key, value)
    base.__post_init__()
    return base


def serialize_config(cfg: PipelineConfig) -> str:
    return toml_writer.dumps(config_to_dict(cfg))


def parse_config(text: str) -> PipelineConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}") from exc
    return config_from_dict(doc)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def save_config(cfg: PipelineConfig, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def resolve_out_dir(cli_value, cfg: PipelineConfig) -> str:
    """CLI flag beats the env var beats the config file."""
    if cli_value:
        return cli_value
    env_value = os.environ.get(OUT_DIR_ENV_VAR)
    if env_value:
        return env_value
    return cfg.out_dir
