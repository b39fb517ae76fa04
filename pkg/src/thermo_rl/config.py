"""Flat ``key=value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

from .engine import (CANONICAL_ACTIONS, IRREVERSIBLE_ACTIONS, NO_ADIABATIC_ACTIONS,
                     NO_ISOTHERMAL_ACTIONS, Action, ConfigError, EngineConfig, UsageError)
from .evolve import EvoConfig
from .ppo import PpoConfig

ACTION_PRESETS = {
    "canonical": CANONICAL_ACTIONS,
    "irreversible": IRREVERSIBLE_ACTIONS,
    "no_adiabatic": NO_ADIABATIC_ACTIONS,
    "no_isothermal": NO_ISOTHERMAL_ACTIONS,
}


class Mode(str, enum.Enum):
    EVOLVE = "evolve"
    PPO = "ppo"
    ROLLOUT = "rollout"
    ORACLE = "oracle"
    FIT = "fit"


@dataclass(frozen=True)
class RunConfig:
    mode: Mode
    engine: EngineConfig = field(default_factory=EngineConfig)
    evo: EvoConfig = field(default_factory=EvoConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    output_dir: Path = Path("runs")
    seed: Optional[int] = None

    def canonical_text(self) -> str:
        """Every resolved key in sorted order; the basis of the config hash."""
        return "".join(f"{k}={v}\n" for k, v in sorted(resolved_values(self).items()))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


# Keys in the file namespace and which section they configure.
_ENGINE_KEYS = [f.name for f in fields(EngineConfig)]
_EVO_KEYS = [f.name for f in fields(EvoConfig) if f.name != "seed"]
_PPO_KEYS = [f.name for f in fields(PpoConfig) if f.name != "seed"]
_RUN_KEYS = ["output_dir", "seed"]
VALID_KEYS = sorted(set(_ENGINE_KEYS) | set(_EVO_KEYS) | set(_PPO_KEYS) | set(_RUN_KEYS))

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def parse_set(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_actions(text: str) -> tuple[Action, ...]:
    key = text.strip().lower()
    if key in ACTION_PRESETS:
        return ACTION_PRESETS[key]
    return tuple(Action.parse(part) for part in text.split(",") if part.strip())


def _convert(key: str, text: str, default):
    try:
        if key == "action_set":
            return _parse_actions(text)
        if key == "output_dir":
            return Path(text)
        if text.lower() in ("none", "null", ""):
            return None
        if isinstance(default, bool):
            if text.lower() not in _BOOL:
                raise ValueError(f"expected a boolean, got {text!r}")
            return _BOOL[text.lower()]
        if isinstance(default, enum.Enum):
            return type(default)(text.lower())
        if isinstance(default, int) or key in ("seed", "K_max"):
            value = float(text)
            if value != int(value):
                raise ValueError(f"expected an integer, got {text!r}")
            return int(value)
        if isinstance(default, str):
            return text
        return float(text)
    except (ValueError, ConfigError) as exc:
        raise UsageError(f"bad value for {key}: {exc}") from None


def build(mode: Union[Mode, str], pairs: dict[str, str]) -> RunConfig:
    """Assemble a :class:`RunConfig` from string pairs; unknown keys are a usage error."""
    unknown = sorted(set(pairs) - set(VALID_KEYS))
    if unknown:
        raise UsageError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(VALID_KEYS)}")
    mode = Mode(mode)
    defaults = {"engine": EngineConfig(), "evo": EvoConfig(), "ppo": PpoConfig()}
    sections: dict[str, dict] = {"engine": {}, "evo": {}, "ppo": {}}
    run: dict = {}
    for key, text in pairs.items():
        if key in _RUN_KEYS:
            run[key] = _convert(key, text, 0 if key == "seed" else None)
            continue
        for name, keys in (("engine", _ENGINE_KEYS), ("evo", _EVO_KEYS), ("ppo", _PPO_KEYS)):
            if key in keys:
                sections[name][key] = _convert(key, text, getattr(defaults[name], key))
    if mode is Mode.PPO:
        if sections["engine"].get("budgets_enabled") is False:
            raise UsageError("ppo trains the budgeted engine; budgets_enabled cannot be false")
        sections["engine"]["budgets_enabled"] = True
    seed = run.get("seed")
    if seed is not None:
        sections["evo"]["seed"] = seed
        sections["ppo"]["seed"] = seed
    try:
        engine = EngineConfig(**sections["engine"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return RunConfig(
        mode=mode,
        engine=engine,
        evo=replace(defaults["evo"], **sections["evo"]),
        ppo=replace(defaults["ppo"], **sections["ppo"]),
        output_dir=run.get("output_dir", Path("runs")),
        seed=seed,
    )


def load(mode: Union[Mode, str], path: Optional[Union[str, Path]] = None,
         overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Config file, then ``--set`` overrides, then an explicit ``--seed``."""
    pairs: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        pairs.update(parse_pairs(text, str(path)))
    pairs.update(parse_set(overrides))
    if seed is not None:
        pairs["seed"] = str(seed)
    return build(mode, pairs)


def resolved_values(run: RunConfig) -> dict[str, str]:
    """Every configurable key with its effective value as text."""
    out = {}
    for key in _ENGINE_KEYS:
        v = getattr(run.engine, key)
        out[key] = ",".join(a.label for a in v) if key == "action_set" else _text(v)
    if run.mode is Mode.EVOLVE:
        out.update({k: _text(getattr(run.evo, k)) for k in _EVO_KEYS})
    if run.mode is Mode.PPO:
        out.update({k: _text(getattr(run.ppo, k)) for k in _PPO_KEYS})
    out["seed"] = _text(run.seed)
    return out


def _text(v) -> str:
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v)
    return str(v)
