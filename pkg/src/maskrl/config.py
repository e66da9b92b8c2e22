"""Run configuration: a strict key = value file format (one table level),
presets, dotted-key overrides, and full-default echoing.

Unknown keys are hard errors so a typo can never silently fall back to a
default value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentConfig, LossWeights
from .envs import EnvConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSettings:
    seed: int = 0
    out_dir: str = ""
    total_frames: int = 60_000
    timestamps: bool = False
    preset: str = "desk"


@dataclass
class RunConfig:
    env: EnvConfig
    agent: AgentConfig
    run: RunSettings

    def as_dict(self) -> dict:
        d = {
            "env": dataclasses.asdict(self.env),
            "agent": dataclasses.asdict(self.agent),
            "run": dataclasses.asdict(self.run),
        }
        return d


PRESETS = {
    # paper-scale values throughout (84px, big latent and batch)
    "paper": {
        "env": dict(image_size=84, frame_stack=3, action_repeat=2, episode_length=100),
        "agent": dict(batch_size=256, latent_dim=4096, replay_capacity=250_000,
                      std_duration=500_000, eval_every=10_000, seed_frames=4000,
                      exploration_steps=2000),
        "run": dict(total_frames=1_000_000),
    },
    # desk-scale: small images and latent, short schedules, frequent evals
    "desk": {
        "env": dict(image_size=64, frame_stack=3, action_repeat=2, episode_length=100),
        "agent": dict(batch_size=64, latent_dim=1024, replay_capacity=50_000,
                      std_duration=50_000, eval_every=2500, seed_frames=4000,
                      exploration_steps=2000),
        "run": dict(total_frames=60_000),
    },
}

# loss coefficients live flat in the [agent] section of config files
_AGENT_LOSS_KEYS = {"c1", "c2", "kl"}


def _parse_value(raw: str, path: str, lineno: int):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(
            f"{path}:{lineno}: cannot parse value {raw!r} "
            "(expected a quoted string, number, or true/false)") from None


def parse_config_file(path) -> dict:
    """Parse `key = value` lines under [section] headers."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    sections: dict[str, dict] = {}
    current = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current not in ("env", "agent", "run"):
                raise ConfigError(f"{path}:{lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {stripped!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        sections[current][key] = (_parse_value(raw, str(path), lineno), lineno)
    return sections


def _valid_keys(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def build_run_config(file_sections: dict | None = None, preset: str = "desk",
                     overrides: list[str] | None = None,
                     seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Preset defaults, then file values, then --set overrides, then flags."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (available: {sorted(PRESETS)})")
    values = {"env": dict(PRESETS[preset]["env"]),
              "agent": dict(PRESETS[preset]["agent"]),
              "run": dict(PRESETS[preset]["run"], preset=preset)}

    valid = {"env": _valid_keys(EnvConfig),
             "agent": (_valid_keys(AgentConfig) - {"loss_weights"}) | _AGENT_LOSS_KEYS,
             "run": _valid_keys(RunSettings)}

    def apply(section: str, key: str, value, where: str):
        if section not in valid:
            raise ConfigError(f"{where}: unknown section {section!r}")
        if key not in valid[section]:
            raise ConfigError(f"{where}: unknown key '{section}.{key}'")
        values[section][key] = value

    for section, kvs in (file_sections or {}).items():
        for key, (value, lineno) in kvs.items():
            apply(section, key, value, f"line {lineno}")

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        dotted, _, raw = item.partition("=")
        if "." not in dotted:
            raise ConfigError(f"--set {item!r}: key must be section.key")
        section, _, key = dotted.strip().partition(".")
        apply(section, key.strip(), _parse_value(raw, "--set", 0), f"--set {item}")

    if seed is not None:
        values["run"]["seed"] = seed
    if out_dir is not None:
        values["run"]["out_dir"] = out_dir

    agent_vals = dict(values["agent"])
    loss = LossWeights(c1=agent_vals.pop("c1", LossWeights.c1),
                       c2=agent_vals.pop("c2", LossWeights.c2),
                       kl=agent_vals.pop("kl", LossWeights.kl))
    run_vals = dict(values["run"])
    env_vals = dict(values["env"])
    env_vals.setdefault("seed", values["run"].get("seed", 0))
    try:
        env_cfg = EnvConfig(**env_vals).validate()
        agent_cfg = AgentConfig(loss_weights=loss,
                                seed=values["run"].get("seed", 0),
                                **agent_vals).validate()
        run_cfg = RunSettings(**run_vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(env=env_cfg, agent=agent_cfg, run=run_cfg)


def config_from_dicts(agent_dict: dict, env_dict: dict) -> tuple[AgentConfig, EnvConfig]:
    """Rebuild configs from a checkpoint's manifest dictionaries."""
    ad = dict(agent_dict)
    lw = ad.pop("loss_weights", {})
    agent = AgentConfig(loss_weights=LossWeights(**lw), **ad).validate()
    env = EnvConfig(**env_dict).validate()
    return agent, env
